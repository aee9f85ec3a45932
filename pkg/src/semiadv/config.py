"""
Run configuration: a flat ``key = value`` file plus command-line overrides.

Precedence, lowest first: built-in defaults, the config file, the
``SEMIADV_OUTPUT_DIR`` environment variable (output directory only), then
command-line flags. Every key is listed in :data:`KEYS` with its type and
a one-line description; :func:`reference` renders them as a markdown page.
"""

import dataclasses
import os
from dataclasses import dataclass, field

from semiadv.attack import ALGORITHMS, AttackConfig
from semiadv.errors import ContractError
from semiadv.semisup import TrainConfig
from semiadv.target import TargetConfig

OUTPUT_ENV = "SEMIADV_OUTPUT_DIR"
ARCHS = ("mlp", "cnn")
MODES = ("untargeted", "targeted")


class ConfigError(ContractError):
    pass


def _sub_fields(cls, prefix):
    return {f"{prefix}_{f.name}": f for f in dataclasses.fields(cls) if f.name != "seed"}


TRAIN_KEYS = _sub_fields(TrainConfig, "train")
TARGET_KEYS = _sub_fields(TargetConfig, "target")
ATTACK_KEYS = _sub_fields(AttackConfig, "attack")
ATTACK_KEYS.pop("attack_mode")  # swept through ``modes``


@dataclass
class RunConfig:
    dataset_path: str | None = None
    dataset_format: str = "synthetic:blobs"
    eval_fraction: float = 0.2
    num_classes: int | None = None
    target_arch: str = "mlp"
    substitute_arch: str = "mlp"
    output_dir: str = "runs"
    seeds: list = field(default_factory=lambda: [0])
    query_budgets: list = field(default_factory=lambda: [50, 100, 200, 400])
    algorithms: list = field(default_factory=lambda: list(ALGORITHMS))
    modes: list = field(default_factory=lambda: ["untargeted"])
    eval_limit: int | None = None
    parallelism: int = 1
    train: dict = field(default_factory=dict)
    target: dict = field(default_factory=dict)
    attack: dict = field(default_factory=dict)

    def train_config(self, seed):
        return TrainConfig(seed=seed, **self.train)

    def target_config(self, seed):
        return TargetConfig(seed=seed, **self.target)

    def attack_config(self, seed):
        return AttackConfig(seed=seed, **self.attack)

    def flat(self):
        """Every key with its resolved value, defaults included."""
        out = {}
        for name in TOP_KEYS:
            out[name] = getattr(self, name)
        for keys, cfg in ((TRAIN_KEYS, self.train_config(0)), (TARGET_KEYS, self.target_config(0)),
                          (ATTACK_KEYS, self.attack_config(0))):
            for key, f in keys.items():
                out[key] = getattr(cfg, f.name)
        return out

    def dump(self):
        return "".join(f"{k} = {format_value(v)}\n" for k, v in self.flat().items())

    def validate(self):
        if self.dataset_format in ("idx", "csv"):
            if not self.dataset_path:
                raise ConfigError(f"dataset_format {self.dataset_format} needs dataset_path")
            for part in self.dataset_path.split(","):
                if not os.path.exists(part):
                    raise ConfigError(f"dataset_path {part!r} does not exist")
        elif not self.dataset_format.startswith("synthetic:"):
            raise ConfigError(f"dataset_format must be idx, csv or synthetic:..., got {self.dataset_format!r}")
        for name in ("target_arch", "substitute_arch"):
            if getattr(self, name) not in ARCHS:
                raise ConfigError(f"{name} must be one of {ARCHS}, got {getattr(self, name)!r}")
        for name in ("seeds", "query_budgets", "algorithms", "modes"):
            if not getattr(self, name):
                raise ConfigError(f"{name} must not be empty")
        if any(b < 0 for b in self.query_budgets):
            raise ConfigError("query_budgets must be non-negative")
        if bad := [a for a in self.algorithms if a not in ALGORITHMS]:
            raise ConfigError(f"unknown algorithms {bad}; choose from {ALGORITHMS}")
        if bad := [m for m in self.modes if m not in MODES]:
            raise ConfigError(f"unknown modes {bad}; choose from {MODES}")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if not 0 <= self.eval_fraction < 1:
            raise ConfigError("eval_fraction must lie in [0, 1)")
        try:
            self.train_config(0), self.target_config(0), self.attack_config(0)
        except ContractError as e:
            raise ConfigError(str(e)) from None
        return self


# key -> (parser, description)
def _int_list(s):
    return [int(v) for v in _split(s)]


def _str_list(s):
    return _split(s)


def _split(s):
    return [v.strip() for v in s.split(",") if v.strip()]


def _opt(parse):
    return lambda s: None if s.strip().lower() in ("none", "") else parse(s)


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


TOP_KEYS = {
    "dataset_path": (_opt(str), "idx directory, 'images,labels' pair or csv file; unused for synthetic data"),
    "dataset_format": (str, "idx, csv or synthetic:blobs[:k=v,...]"),
    "eval_fraction": (float, "share of the data held out for evaluation before halving the rest"),
    "num_classes": (_opt(int), "class count K; inferred from the labels when none"),
    "target_arch": (str, "target architecture: mlp or cnn"),
    "substitute_arch": (str, "substitute architecture: mlp or cnn"),
    "output_dir": (str, f"where results, audit logs and checkpoints go; ${OUTPUT_ENV} overrides the file"),
    "seeds": (_int_list, "comma-separated run seeds; each seed re-splits the data and retrains the target"),
    "query_budgets": (_int_list, "comma-separated oracle budgets, one substitute per budget and seed"),
    "algorithms": (_str_list, f"comma-separated attacks from {', '.join(ALGORITHMS)}"),
    "modes": (_str_list, "comma-separated attack modes: untargeted, targeted"),
    "eval_limit": (_opt(int), "attack only the first N evaluation samples; none means all"),
    "parallelism": (int, "(seed, budget) units run concurrently"),
}

_SUB_DOCS = {
    "train_epochs": "substitute training epochs",
    "train_iterations_per_epoch": "optimizer steps per substitute epoch",
    "train_batch_size": "labeled (and unlabeled) batch size B",
    "train_temperature": "sharpening temperature T",
    "train_augmentations": "augmented views N averaged per unlabeled label guess",
    "train_learning_rate": "Adam learning rate",
    "train_beta_param": "Beta(a, a) parameter for mixup",
    "train_unlabeled_weight": "weight on the unlabeled squared-error term after ramp-up",
    "train_rampup_fraction": "share of training over which the unlabeled weight ramps linearly from 0",
    "train_ema_decay": "parameter EMA decay; none disables it",
    "target_epochs": "target training epochs",
    "target_batch_size": "target minibatch size",
    "target_learning_rate": "target SGD learning rate",
    "target_momentum": "target SGD momentum",
    "target_weight_decay": "target L2 weight decay",
    "target_cosine": "cosine-anneal the target learning rate",
    "target_width": "hidden width override for the target; none keeps the builder default",
    "attack_epsilon": "L-infinity radius",
    "attack_step_rate": "signed-gradient step size",
    "attack_max_iterations": "iterations for bim, pgd and ipgd",
    "attack_max_decays": "ipgd step-decay retries per sample",
    "attack_decay_rate": "geometric step-decay factor",
    "attack_init_noise_scale": "half-width of the uniform random start for pgd and ipgd",
    "attack_penalty": "optional squared-L2 penalty on the perturbation; 0 keeps the hard constraint only",
}


def _parser_for(f):
    t = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    base = {"int": int, "float": float, "bool": _bool, "str": str}
    if "None" in t:
        return _opt(base[t.split("|")[0].strip()])
    return base[t]


KEYS = dict(TOP_KEYS)
for _group in (TRAIN_KEYS, TARGET_KEYS, ATTACK_KEYS):
    for _key, _f in _group.items():
        KEYS[_key] = (_parser_for(_f), _SUB_DOCS[_key])


def format_value(v):
    if v is None:
        return "none"
    if isinstance(v, (list, tuple)):
        return ",".join(str(x) for x in v)
    return str(v).lower() if isinstance(v, bool) else str(v)


def parse_value(key, text):
    if key not in KEYS:
        raise ConfigError(f"unknown key {key!r}")
    try:
        return KEYS[key][0](text)
    except (ValueError, KeyError) as e:
        raise ConfigError(f"{key}: cannot parse {text!r} ({e})") from None


def read_file(path):
    """Parse a flat config file into ``{key: value}``; errors name the line."""
    values = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, text = line.partition("=")
            key = key.strip()
            if not sep or not key:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            try:
                values[key] = parse_value(key, text.strip())
            except ConfigError as e:
                raise ConfigError(f"{path}:{lineno}: {e}") from None
    return values


def from_values(values):
    cfg = RunConfig()
    for key, value in values.items():
        if key in TOP_KEYS:
            setattr(cfg, key, value)
        elif key in TRAIN_KEYS:
            cfg.train[TRAIN_KEYS[key].name] = value
        elif key in TARGET_KEYS:
            cfg.target[TARGET_KEYS[key].name] = value
        elif key in ATTACK_KEYS:
            cfg.attack[ATTACK_KEYS[key].name] = value
        else:
            raise ConfigError(f"unknown key {key!r}")
    return cfg


def resolve(path=None, overrides=None, env=None):
    """Defaults, then file, then environment, then ``overrides`` (already parsed)."""
    env = os.environ if env is None else env
    values = read_file(path) if path else {}
    if env.get(OUTPUT_ENV):
        values["output_dir"] = env[OUTPUT_ENV]
    values.update(overrides or {})
    return from_values(values).validate()


def reference():
    lines = ["# Configuration reference", "",
             "Flat `key = value` file; `#` starts a comment. Lists are comma-separated, "
             "`none` clears an optional value. Every key is also a command-line flag "
             "(`--key-name value`) and flags win over the file.", "",
             "| key | default | description |", "|---|---|---|"]
    defaults = RunConfig().flat()
    for key, (_, doc) in KEYS.items():
        lines.append(f"| `{key}` | `{format_value(defaults[key])}` | {doc} |")
    return "\n".join(lines) + "\n"
