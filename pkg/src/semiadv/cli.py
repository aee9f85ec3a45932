"""Command-line entry point: ``semiadv {train-target,attack,sweep,report,print-config}``."""

import argparse
import json
import logging
import os
import sys
import threading
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from semiadv import config as cfgmod
from semiadv.data import load_dataset
from semiadv.evaluate import CellError, ExperimentReport, prepare_substitute, render_tables, run_cell
from semiadv.nn import checkpoint
from semiadv.target import accuracy, train_target

log = logging.getLogger("semiadv")

RESULTS = "results.jsonl"
TIMINGS = "timings.tsv"


class Writer:
    """Serialises every append to the results and timings files."""

    def __init__(self, out_dir):
        self.results = os.path.join(out_dir, RESULTS)
        self.timings = os.path.join(out_dir, TIMINGS)
        self.lock = threading.Lock()

    def write(self, report):
        with self.lock:
            with open(self.results, "a") as f:
                f.write(json.dumps(report.to_record(), sort_keys=True) + "\n")
            with open(self.timings, "a") as f:
                f.write(f"{report.key}\t{report.wall_time:.3f}\n")


def read_results(path):
    records = []
    if os.path.exists(path):
        with open(path) as f:
            for line in f:
                if line.strip():
                    records.append(json.loads(line))
    return records


def _dataset(cfg, seed):
    return load_dataset(cfg.dataset_path, cfg.dataset_format, seed=seed,
                        eval_fraction=cfg.eval_fraction, num_classes=cfg.num_classes)


def _target(cfg, ds, seed, out_dir):
    """Train the seed's target once and checkpoint it; reuse the checkpoint on reruns."""
    path = os.path.join(out_dir, "targets", f"seed{seed}.npz")
    if os.path.exists(path):
        model = checkpoint.load(path)
        for p in model.parameters():
            p.requires_grad = False
        return model, accuracy(model, ds.evaluation.inputs, ds.evaluation.labels)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    return train_target(ds, cfg.target_arch, cfg.target_config(seed), checkpoint_path=path)


def _cells(cfg, budget, seed):
    return [(budget, alg, mode, seed) for alg in cfg.algorithms for mode in cfg.modes]


def _key(budget, alg, mode, seed):
    return f"{budget}/{alg}/{mode}/{seed}"


def run_unit(cfg, ds, target, clean_acc, budget, seed, todo, writer, out_dir):
    """One (seed, budget): train the substitute once, then run each pending attack cell."""
    tag = f"{budget}_{seed}"
    audit = os.path.join(out_dir, "audit", f"{tag}.log")
    metrics_path = os.path.join(out_dir, "metrics", f"{tag}.tsv")
    ok = True
    try:
        with open(metrics_path, "w") as metrics:
            prepared = prepare_substitute(ds, cfg.target_arch, cfg.substitute_arch, budget, seed, target,
                                          clean_acc, cfg.train_config(seed), audit_path=audit,
                                          metrics_log=metrics)
    except Exception as e:  # noqa: BLE001 - recorded per cell
        for b, alg, mode, s in todo:
            rep = ExperimentReport(ds.name, cfg.target_arch, cfg.substitute_arch, b, alg, mode, s,
                                   status="error", error=f"cell {_key(b, alg, mode, s)}: {type(e).__name__}: {e}")
            writer.write(rep)
            log.error(rep.error)
        return False
    for b, alg, mode, s in todo:
        try:
            rep = run_cell(ds, cfg.target_arch, cfg.substitute_arch, b, alg, mode, s,
                           attack_config=cfg.attack_config(s), eval_limit=cfg.eval_limit, prepared=prepared)
        except CellError as e:
            rep, ok = e.report, False
            log.error(str(e))
        writer.write(rep)
        log.info("%s asr=%s similarity=%s", rep.key, rep.asr, rep.similarity)
    return ok


def run(cfg):
    """Run the configured sweep; returns True only if every cell succeeded."""
    out_dir = cfg.output_dir
    for sub in ("audit", "metrics", "targets"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    with open(os.path.join(out_dir, "config.txt"), "w") as f:
        f.write(cfg.dump())
    writer = Writer(out_dir)
    done = {r["key"] for r in read_results(writer.results) if r.get("status") == "ok"}

    ok = True
    units = []
    for seed in cfg.seeds:
        pending = {b: [c for c in _cells(cfg, b, seed) if _key(*c) not in done] for b in cfg.query_budgets}
        if not any(pending.values()):
            continue
        try:
            ds = _dataset(cfg, seed)
            target, clean_acc = _target(cfg, ds, seed, out_dir)
        except Exception as e:  # noqa: BLE001
            log.error("seed %d: %s: %s", seed, type(e).__name__, e)
            for cells in pending.values():
                for b, alg, mode, s in cells:
                    writer.write(ExperimentReport(cfg.dataset_format, cfg.target_arch, cfg.substitute_arch,
                                                  b, alg, mode, s, status="error",
                                                  error=f"seed setup: {type(e).__name__}: {e}"))
            ok = False
            continue
        units += [(ds, target, clean_acc, b, seed, cells) for b, cells in pending.items() if cells]

    with ThreadPoolExecutor(max_workers=cfg.parallelism) as pool:
        futures = [pool.submit(run_unit, cfg, ds, t, acc, b, s, cells, writer, out_dir)
                   for ds, t, acc, b, s, cells in units]
        ok = all([f.result() for f in futures]) and ok
    return ok


def _add_config_args(p):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--print-config", action="store_true", help="print the resolved configuration and exit")
    for key, (_, doc) in cfgmod.KEYS.items():
        p.add_argument("--" + key.replace("_", "-"), dest=key, metavar="VALUE", help=doc)


def _resolve(args):
    overrides = {k: cfgmod.parse_value(k, v) for k, v in vars(args).items()
                 if k in cfgmod.KEYS and v is not None}
    return cfgmod.resolve(args.config, overrides)


def cmd_train_target(cfg, args):
    for seed in cfg.seeds:
        ds = _dataset(cfg, seed)
        model, acc = _target(cfg, ds, seed, cfg.output_dir)
        print(f"seed {seed}: {cfg.target_arch} target, clean accuracy {acc:.4f}, "
              f"checkpoint {os.path.join(cfg.output_dir, 'targets', f'seed{seed}.npz')}")
    return 0


def cmd_attack(cfg, args):
    for name in ("seeds", "query_budgets", "algorithms", "modes"):
        if len(getattr(cfg, name)) != 1:
            raise cfgmod.ConfigError(f"attack runs a single cell; give exactly one value for {name} "
                                     f"(got {getattr(cfg, name)}) or use sweep")
    return cmd_sweep(cfg, args)


def cmd_sweep(cfg, args):
    ok = run(cfg)
    records = [ExperimentReport.from_record(r) for r in read_results(os.path.join(cfg.output_dir, RESULTS))]
    print(render_tables(records), end="")
    return 0 if ok else 1


def plot_rows(records):
    """Columnar medians over seeds: one row per (budget, mode, algorithm)."""
    groups = {}
    for r in records:
        if r["status"] == "ok":
            groups.setdefault((r["query_number"], r["mode"], r["algorithm"]), []).append(r)
    rows = [("query_number", "mode", "algorithm", "asr", "similarity", "substitute_accuracy", "seeds")]
    for (b, mode, alg), rs in sorted(groups.items()):
        med = [float(np.median([x[k] for x in rs])) for k in ("asr", "similarity", "substitute_accuracy")]
        rows.append((b, mode, alg, *(f"{v:.6f}" for v in med), len(rs)))
    return rows


def cmd_report(args):
    path = args.results
    if os.path.isdir(path):
        path = os.path.join(path, RESULTS)
    if not os.path.exists(path):
        raise cfgmod.ConfigError(f"no results file at {path}")
    records = read_results(path)
    print(render_tables([ExperimentReport.from_record(r) for r in records]), end="")
    failed = [r for r in records if r["status"] != "ok"]
    if failed:
        print(f"{len(failed)} failed cells, first: {failed[0]['error']}")
    if args.plot_data:
        with open(args.plot_data, "w") as f:
            for row in plot_rows(records):
                f.write("\t".join(str(v) for v in row) + "\n")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="semiadv", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help in (("train-target", "train and checkpoint the target for each seed"),
                       ("attack", "run a single experiment cell"),
                       ("sweep", "run every (budget, algorithm, mode, seed) cell"),
                       ("print-config", "print the resolved configuration")):
        p = sub.add_parser(name, help=help)
        _add_config_args(p)
        if name == "print-config":
            p.add_argument("--reference", action="store_true", help="print the markdown key reference instead")
    p = sub.add_parser("report", help="render tables from a results file")
    p.add_argument("results", help="results.jsonl or the output directory holding it")
    p.add_argument("--plot-data", help="also write median columns as tab-separated text")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "report":
            return cmd_report(args)
        if args.command == "print-config" and args.reference:
            print(cfgmod.reference(), end="")
            return 0
        cfg = _resolve(args)
        if args.command == "print-config" or args.print_config:
            print(cfg.dump(), end="")
            return 0
        handler = {"train-target": cmd_train_target, "attack": cmd_attack, "sweep": cmd_sweep}[args.command]
        return handler(cfg, args)
    except cfgmod.ConfigError as e:
        print(f"semiadv: config error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"semiadv: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
