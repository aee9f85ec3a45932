"""
Metrics and experiment cells.

A cell is one (target arch, substitute arch, query budget, attack, mode, seed)
combination: train or reuse the target, spend exactly the budget on the
initial labeled pool, train the substitute, attack the evaluation split on
the substitute and score the transfers against the target.
"""

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from semiadv.attack import AttackConfig, attack_batch, with_mode
from semiadv.errors import ContractError
from semiadv.nn import build
from semiadv.oracle import EvaluationOracle, Oracle, build_initial_pool
from semiadv.semisup import TrainConfig, train_substitute
from semiadv.target import TargetConfig, accuracy, train_target

SCHEMA_VERSION = 1

# offsets keep the target init, substitute init and pool draw on distinct streams
SUBSTITUTE_SEED_OFFSET = 1000
POOL_SEED_OFFSET = 2000


def _labels(model, x):
    if isinstance(model, EvaluationOracle):
        return model.labels(x)
    return model.predict(np.asarray(x, dtype=np.float64))


def target_classes(labels, num_classes):
    return [(int(y) + 1) % num_classes for y in labels]


def asr(target, results, mode, clean_inputs=None):
    """Attack success rate of ``results`` against ``target``.

    Untargeted: fraction whose adversarial label differs from the true label,
    counted only over samples the target gets right in clean form when
    ``clean_inputs`` is given. Targeted: fraction that land on the target class.
    """
    results = [r for r in results if r.error is None]
    if not results:
        raise ContractError("no attack results to score")
    adv = _labels(target, np.stack([r.x_adv for r in results]))
    truth = np.array([r.true_label for r in results])
    if mode == "targeted":
        goal = np.array([r.target_label for r in results])
        return float(np.mean(adv == goal))
    eligible = np.ones(len(results), dtype=bool)
    if clean_inputs is not None:
        eligible = _labels(target, clean_inputs) == truth
        if len(clean_inputs) != len(results):
            raise ContractError("clean_inputs must align with results")
    if not eligible.any():
        raise ContractError("no eligible samples: the target misclassifies every clean input")
    return float(np.mean(adv[eligible] != truth[eligible]))


def similarity(target, substitute, inputs):
    """Label agreement between substitute and target on ``inputs``."""
    if len(inputs) == 0:
        raise ContractError("similarity needs a non-empty test set")
    return float(np.mean(_labels(target, inputs) == _labels(substitute, inputs)))


@dataclass
class ExperimentReport:
    dataset: str
    target_arch: str
    substitute_arch: str
    query_number: int
    algorithm: str
    mode: str
    seed: int
    asr: float | None = None
    asr_all: float | None = None
    similarity: float | None = None
    substitute_accuracy: float | None = None
    clean_accuracy_target: float | None = None
    eligible: int | None = None
    queries_used: int | None = None
    status: str = "ok"
    error: str | None = None
    wall_time: float = field(default=0.0, compare=False)

    @property
    def key(self):
        return f"{self.query_number}/{self.algorithm}/{self.mode}/{self.seed}"

    def to_record(self):
        """The reproducible part of the report; wall time is kept out."""
        rec = {"schema_version": SCHEMA_VERSION, "key": self.key}
        rec.update({k: v for k, v in asdict(self).items() if k != "wall_time"})
        return rec

    @classmethod
    def from_record(cls, rec):
        rec = {k: v for k, v in rec.items() if k not in ("schema_version", "key")}
        return cls(**rec)


class CellError(RuntimeError):
    """A failure inside one experiment cell; ``report`` carries the cell's identity."""

    def __init__(self, message, report):
        super().__init__(message)
        report.status = "error"
        report.error = message
        self.report = report


@dataclass
class PreparedSubstitute:
    substitute: object
    oracle: Oracle
    target: object
    clean_accuracy: float


def prepare_substitute(dataset, target_arch, substitute_arch, query_number, seed, target=None,
                       clean_accuracy=None, train_config=None, target_config=None,
                       audit_path=None, metrics_log=None):
    """Everything in a cell up to (not including) the attack: target, oracle, pool, substitute."""
    pool = dataset.attacker.samples()
    if query_number > len(pool):
        raise ContractError(f"query number {query_number} exceeds attacker pool of {len(pool)}")
    if target is None:
        target, clean_accuracy = train_target(dataset, target_arch, target_config or TargetConfig(seed=seed))
    if clean_accuracy is None:
        clean_accuracy = accuracy(target, dataset.evaluation.inputs, dataset.evaluation.labels)
    oracle = Oracle(target, query_number)
    d0, d1 = build_initial_pool(oracle, pool, query_number, seed + POOL_SEED_OFFSET)
    substitute = build(substitute_arch, dataset.input_shape, dataset.num_classes,
                       seed=seed + SUBSTITUTE_SEED_OFFSET)
    train_substitute(d0, d1, train_config or TrainConfig(seed=seed), substitute, metrics_log=metrics_log)
    if oracle.budget_used != query_number:
        raise ContractError(f"oracle ledger shows {oracle.budget_used} queries, expected {query_number}")
    if audit_path is not None:
        oracle.export_ledger(audit_path)
    return PreparedSubstitute(substitute, oracle, target, float(clean_accuracy))


def run_cell(dataset, target_arch, substitute_arch, query_number, attack_alg, mode, seed,
             target=None, clean_accuracy=None, train_config=None, target_config=None,
             attack_config=None, eval_limit=None, audit_path=None, metrics_log=None, prepared=None):
    """Run one experiment cell and return its :class:`ExperimentReport`.

    Pass a trained ``target`` to reuse it across cells; otherwise one is trained
    from ``target_config``. ``prepared`` (from :func:`prepare_substitute`, same
    budget and seed) skips substitute training.
    """
    started = time.perf_counter()
    report = ExperimentReport(dataset.name, target_arch, substitute_arch, int(query_number),
                              attack_alg, mode, int(seed))
    try:
        if prepared is None:
            prepared = prepare_substitute(dataset, target_arch, substitute_arch, query_number, seed,
                                          target, clean_accuracy, train_config, target_config,
                                          audit_path, metrics_log)
        target, substitute = prepared.target, prepared.substitute
        if prepared.oracle.budget_used != query_number:
            raise ContractError(f"prepared substitute spent {prepared.oracle.budget_used} queries, "
                                f"cell expects {query_number}")

        ev = dataset.evaluation
        n = len(ev) if eval_limit is None else min(eval_limit, len(ev))
        xs, ys, ids = ev.inputs[:n], ev.labels[:n], ev.ids[:n]
        ac = with_mode(attack_config or AttackConfig(seed=seed), mode)
        targets = target_classes(ys, dataset.num_classes) if mode == "targeted" else None
        results = attack_batch(substitute, list(zip(ids.tolist(), xs, ys.tolist())), ac, attack_alg,
                               targets=targets)
        failed = [r for r in results if r.error is not None]
        if failed:
            raise RuntimeError(f"{len(failed)} samples failed, first: {failed[0].error}")

        scorer = EvaluationOracle(target)
        report.asr = asr(scorer, results, mode, clean_inputs=xs if mode == "untargeted" else None)
        report.asr_all = asr(scorer, results, mode)
        report.eligible = int(np.sum(scorer.labels(xs) == ys)) if mode == "untargeted" else n
        report.similarity = similarity(scorer, substitute, ev.inputs)
        report.substitute_accuracy = accuracy(substitute, ev.inputs, ev.labels)
        report.clean_accuracy_target = prepared.clean_accuracy
        report.queries_used = prepared.oracle.budget_used
    except Exception as e:
        raise CellError(f"cell {report.key}: {type(e).__name__}: {e}", report) from e
    report.wall_time = time.perf_counter() - started
    return report


def _fmt(v):
    return "  -   " if v is None else f"{100 * v:6.2f}"


def render_tables(reports):
    """Text summaries shaped like the ASR-by-budget, attack comparison and similarity tables."""
    reports = [r for r in reports if r.status == "ok"]
    if not reports:
        return "no successful cells\n"

    def median(vals):
        vals = [v for v in vals if v is not None]
        return float(np.median(vals)) if vals else None

    budgets = sorted({r.query_number for r in reports})
    columns = sorted({(r.mode, r.algorithm) for r in reports})
    out = ["ASR (%) by query number, median over seeds"]
    out.append("queries | " + " | ".join(f"{m[:5]}/{a:>4}" for m, a in columns))
    for b in budgets:
        row = [median([r.asr for r in reports if r.query_number == b and (r.mode, r.algorithm) == c])
               for c in columns]
        out.append(f"{b:7d} | " + " | ".join(f"{_fmt(v):>10}" for v in row))
    out.append("")
    out.append("Substitute similarity (%) by query number: agreement with target / test accuracy")
    for b in budgets:
        sel = [r for r in reports if r.query_number == b]
        out.append(f"{b:7d} | {_fmt(median([r.similarity for r in sel]))} | "
                   f"{_fmt(median([r.substitute_accuracy for r in sel]))}")
    return "\n".join(out) + "\n"
