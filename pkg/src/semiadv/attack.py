"""
White-box L-infinity attacks run against the local substitute.

All four algorithms share one signed-gradient loop. FGSM is a single full-size
step from the clean input; BIM iterates smaller steps; PGD adds a uniform
random start; IPGD additionally retries a step with a decayed step rate
whenever the unprojected candidate leaves the epsilon box around the (noised)
starting point, up to ``max_decays`` retries per run. Every iterate is
projected back into the epsilon box around the clean input and into [0, 1].

Untargeted attacks ascend the cross-entropy of the true label; targeted
attacks descend the cross-entropy of the target label. An optional
``penalty`` subtracts ``penalty * ||x_adv - x||^2`` from the ascended
objective (off by default: the hard box constraint does the work).
"""

from dataclasses import dataclass, field, replace

import numpy as np

from semiadv.errors import ContractError
from semiadv.nn import Tensor, cross_entropy, no_grad, one_hot

ALGORITHMS = ("fgsm", "bim", "pgd", "ipgd")


@dataclass(frozen=True)
class AttackConfig:
    # step = eps/2, start noise = eps/6, three retries: the ratios picked by the attack-strength scan
    epsilon: float = 0.3
    step_rate: float = 0.15
    max_iterations: int = 10
    max_decays: int = 3
    decay_rate: float = 0.9
    init_noise_scale: float = 0.05
    mode: str = "untargeted"
    penalty: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epsilon < 0 or self.step_rate <= 0:
            raise ContractError("epsilon must be >= 0 and step_rate > 0")
        if self.max_iterations < 0 or self.max_decays < 0 or self.init_noise_scale < 0:
            raise ContractError("max_iterations, max_decays and init_noise_scale must be >= 0")
        if not 0 < self.decay_rate <= 1:
            raise ContractError(f"decay_rate must lie in (0, 1], got {self.decay_rate}")
        if self.mode not in ("untargeted", "targeted"):
            raise ContractError(f"mode must be 'untargeted' or 'targeted', got {self.mode!r}")


@dataclass
class AdversarialResult:
    x_adv: np.ndarray
    id: int
    true_label: int
    target_label: int | None
    substitute_pred: int
    iterations: int
    decays: int
    linf: float
    error: str | None = None
    trace: list | None = field(default=None, repr=False)


def project(x_adv, x, epsilon):
    """Clip into the epsilon box around ``x``, then into [0, 1]."""
    x_adv, x = np.asarray(x_adv, dtype=np.float64), np.asarray(x, dtype=np.float64)
    if x_adv.shape != x.shape:
        raise ContractError(f"project: shapes differ, {x_adv.shape} vs {x.shape}")
    return np.clip(np.clip(x_adv, x - epsilon, x + epsilon), 0.0, 1.0)


def objective_gradient(model, x_adv, x, label, targeted, penalty=0.0):
    """Value and input-gradient of the objective the attack ascends."""
    xt = Tensor(np.array(x_adv[None], dtype=np.float64), requires_grad=True)
    ce = cross_entropy(model(xt), one_hot([label], model.num_classes))
    obj = -ce if targeted else ce
    if penalty:
        delta = xt - x[None]
        obj = obj - penalty * (delta * delta).sum()
    obj.backward()
    return obj.item(), xt.grad[0]


def decay(step_rate, i, rate):
    # i is 0-based; the exponent starts at 1 so the first retry already shrinks the step
    return step_rate * rate ** (i + 1)


def _check_labels(model, y, target, targeted):
    K = model.num_classes
    if not 0 <= y < K:
        raise ContractError(f"label {y} outside [0, {K})")
    if targeted:
        if target is None or not 0 <= target < K:
            raise ContractError(f"targeted mode needs a target class in [0, {K}), got {target}")
        if target == y:
            raise ContractError("target class must differ from the true label")


def _result(model, x, x_adv, id, y, target, iterations, decays, trace):
    with no_grad():
        pred = int(model(x_adv[None]).data.argmax())
    return AdversarialResult(x_adv, id, int(y), target, pred, iterations, decays,
                             float(np.max(np.abs(x_adv - x))) if x.size else 0.0, trace=trace)


def _iterate(model, x, y, config, target, start, max_decays, id, trace):
    targeted = config.mode == "targeted"
    label = target if targeted else y
    x_cur, alpha, d, i = start, config.step_rate, 0, 0
    while i < config.max_iterations:
        value, g = objective_gradient(model, x_cur, x, label, targeted, config.penalty)
        raw = x_cur + alpha * np.sign(g)
        if d < max_decays and np.max(np.abs(raw - start)) > config.epsilon:
            alpha = decay(alpha, i, config.decay_rate)
            d += 1
            if trace is not None:
                trace.append({"event": "decay", "iteration": i, "loss": value, "step": alpha})
            continue
        x_cur = project(raw, x, config.epsilon)
        if trace is not None:
            trace.append({"event": "step", "iteration": i, "loss": value, "step": alpha})
        i += 1
    return _result(model, x, x_cur, id, y, target, i, d, trace)


def fgsm(model, x, y, epsilon, mode="untargeted", target=None, id=0, penalty=0.0):
    x = np.asarray(x, dtype=np.float64)
    targeted = mode == "targeted"
    _check_labels(model, y, target, targeted)
    _, g = objective_gradient(model, x, x, target if targeted else y, targeted, penalty)
    x_adv = project(x + epsilon * np.sign(g), x, epsilon)
    return _result(model, x, x_adv, id, y, target, 1, 0, None)


def bim(model, x, y, config, target=None, id=0, trace=None):
    x = np.asarray(x, dtype=np.float64)
    _check_labels(model, y, target, config.mode == "targeted")
    return _iterate(model, x, y, config, target, x.copy(), 0, id, trace)


def _random_start(x, config, id):
    rng = np.random.default_rng([config.seed, id])
    s = config.init_noise_scale
    return project(x + rng.uniform(-s, s, x.shape), x, config.epsilon)


def pgd(model, x, y, config, target=None, id=0, trace=None):
    """BIM from a uniform random start. The start is seeded by ``(config.seed, id)``."""
    x = np.asarray(x, dtype=np.float64)
    _check_labels(model, y, target, config.mode == "targeted")
    return _iterate(model, x, y, config, target, _random_start(x, config, id), 0, id, trace)


def ipgd(model, x, y, config, target=None, id=0, trace=None):
    """PGD whose overshooting steps are retried with a decayed step rate.

    A candidate overshoots when it lies more than epsilon (L-infinity) from
    the noised start. The iteration counter does not advance on a retry, and
    at most ``config.max_decays`` retries happen per run.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_labels(model, y, target, config.mode == "targeted")
    return _iterate(model, x, y, config, target, _random_start(x, config, id),
                    config.max_decays, id, trace)


def run_attack(algorithm, model, x, y, config, target=None, id=0, trace=None):
    if algorithm == "fgsm":
        return fgsm(model, x, y, config.epsilon, config.mode, target, id, config.penalty)
    if algorithm == "bim":
        return bim(model, x, y, config, target, id, trace)
    if algorithm == "pgd":
        return pgd(model, x, y, config, target, id, trace)
    if algorithm == "ipgd":
        return ipgd(model, x, y, config, target, id, trace)
    raise ContractError(f"unknown attack {algorithm!r}; choose from {ALGORITHMS}")


def attack_batch(model, samples, config, algorithm, targets=None, trace=False):
    """Attack each ``(id, x, y)`` sample independently, preserving order.

    A failing sample yields a result with ``error`` set (and ``x_adv`` equal
    to the clean input) instead of aborting the batch.
    """
    if algorithm not in ALGORITHMS:
        raise ContractError(f"unknown attack {algorithm!r}; choose from {ALGORITHMS}")
    results = []
    for k, (id, x, y) in enumerate(samples):
        target = targets[k] if targets is not None else None
        try:
            results.append(run_attack(algorithm, model, x, int(y), config, target, id,
                                      [] if trace else None))
        except Exception as e:  # noqa: BLE001 - recorded per sample
            x = np.asarray(x, dtype=np.float64)
            results.append(AdversarialResult(x.copy(), id, int(y), target, -1, 0, 0, 0.0,
                                             error=f"{type(e).__name__}: {e}"))
    return results


def with_mode(config, mode):
    return replace(config, mode=mode)
