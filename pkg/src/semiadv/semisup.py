"""
Substitute-model training from a small oracle-labeled pool plus unlabeled data.

One iteration draws a labeled batch X and an unlabeled batch U, augments X
once and U ``N`` times, guesses soft labels for U by averaging the
substitute's predictions over its augmentations and sharpening the average,
then mixes every augmented point with a partner drawn from the shuffled union
of both sets. The labeled half is fit with cross-entropy and the unlabeled
half with a squared-L2 consistency term.

Random draws within one iteration happen in a fixed order so a run can be
replayed draw by draw: labeled indices, unlabeled indices, labeled
augmentation, the ``N`` unlabeled augmentations, the shuffle permutation,
then one Beta draw per mixed pair (labeled pairs first).
"""

from dataclasses import dataclass, field

import numpy as np

from semiadv.errors import ContractError
from semiadv.nn import Adam, ParamEMA, Tensor, cross_entropy, mse, no_grad, one_hot


@dataclass
class TrainConfig:
    epochs: int = 20
    iterations_per_epoch: int = 256
    batch_size: int = 64
    temperature: float = 0.5
    augmentations: int = 2
    learning_rate: float = 0.004
    beta_param: float = 0.75
    unlabeled_weight: float = 75.0
    rampup_fraction: float = 0.25
    ema_decay: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.iterations_per_epoch < 1 or self.batch_size < 1:
            raise ContractError("epochs must be >= 0; iterations_per_epoch and batch_size >= 1")
        if self.temperature <= 0:
            raise ContractError(f"temperature must be positive, got {self.temperature}")
        if self.augmentations < 1:
            raise ContractError(f"augmentations must be >= 1, got {self.augmentations}")
        if self.unlabeled_weight < 0:
            raise ContractError(f"unlabeled_weight must be >= 0, got {self.unlabeled_weight}")
        if self.learning_rate <= 0 or self.beta_param <= 0:
            raise ContractError("learning_rate and beta_param must be positive")
        if self.ema_decay is not None and not 0 < self.ema_decay < 1:
            raise ContractError(f"ema_decay must lie in (0, 1), got {self.ema_decay}")


@dataclass
class Augmenter:
    """Input perturbations used for consistency training.

    ``kind="vector"`` adds Gaussian jitter; ``kind="image"`` does a random
    crop out of a zero-padded copy, an optional horizontal flip and a little
    additive noise. Output is always clipped back into [0, 1].
    """

    kind: str = "vector"
    noise: float = 0.05
    pad: int = 2
    flip_prob: float = 0.0

    @classmethod
    def identity(cls):
        return cls(kind="identity")

    @classmethod
    def for_input_shape(cls, input_shape):
        return cls(kind="image", noise=0.02) if len(input_shape) == 3 else cls()

    def __call__(self, x, rng):
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "identity":
            return x.copy()
        if self.kind == "vector":
            return np.clip(x + rng.normal(0.0, self.noise, x.shape), 0.0, 1.0)
        if self.kind == "image":
            return self._image(x, rng)
        raise ContractError(f"unknown augmentation kind {self.kind!r}")

    def _image(self, x, rng):
        B, _, H, W = x.shape
        p = self.pad
        padded = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        offsets = rng.integers(0, 2 * p + 1, size=(B, 2))
        flips = rng.random(B) < self.flip_prob
        out = np.empty_like(x)
        for b in range(B):
            dy, dx = offsets[b]
            crop = padded[b, :, dy:dy + H, dx:dx + W]
            out[b] = crop[:, :, ::-1] if flips[b] else crop
        if self.noise:
            out = out + rng.normal(0.0, self.noise, out.shape)
        return np.clip(out, 0.0, 1.0)


@dataclass
class SemiBatch:
    labeled_x: np.ndarray
    labeled_p: np.ndarray
    unlabeled_x: np.ndarray
    unlabeled_p: np.ndarray
    permutation: np.ndarray = field(default=None, repr=False)
    etas: np.ndarray = field(default=None, repr=False)

    def __len__(self):
        return len(self.labeled_x) + len(self.unlabeled_x)


def sharpen(p, temperature):
    """Temperature sharpening of probability vectors (rows of ``p``)."""
    p = np.asarray(p, dtype=np.float64)
    if temperature <= 0:
        raise ContractError(f"temperature must be positive, got {temperature}")
    if np.any(p < 0):
        raise ContractError("sharpen: negative probability")
    powered = p ** (1.0 / temperature)
    total = powered.sum(axis=-1, keepdims=True)
    if np.any(total == 0):
        raise ContractError("sharpen: all-zero distribution")
    return powered / total


def guess_label(model, x, augmenter, n, rng, return_views=False):
    """Average the model's softmax over ``n`` augmentations of each row of ``x``."""
    if n < 1:
        raise ContractError(f"need at least one augmentation, got {n}")
    views = [augmenter(x, rng) for _ in range(n)]
    with no_grad():
        avg = sum(model(v).softmax().data for v in views) / n
    return (avg, views) if return_views else avg


def _zeta(eta):
    return np.maximum(eta, 1.0 - eta)


def mixup_pair(a, b, eta):
    """Mix ``a = (x, p)`` towards ``b``; the weight on ``a`` is never below 0.5."""
    (x, p), (xh, ph) = a, b
    zeta = max(eta, 1.0 - eta)
    x, xh, p, ph = (np.asarray(v, dtype=np.float64) for v in (x, xh, p, ph))
    return zeta * x + (1 - zeta) * xh, zeta * p + (1 - zeta) * ph


def mixup(x, p, xh, ph, eta):
    """Row-wise :func:`mixup_pair` with one ``eta`` per row."""
    zeta = _zeta(np.asarray(eta, dtype=np.float64))
    zx = zeta.reshape((-1,) + (1,) * (x.ndim - 1))
    zp = zeta[:, None]
    return zx * x + (1 - zx) * xh, zp * p + (1 - zp) * ph


def build_semibatch(model, x, y, u, config, augmenter, rng, num_classes, etas=None):
    """Assemble one mixed batch from labeled rows ``x`` (labels ``y``) and unlabeled rows ``u``.

    ``etas`` overrides the Beta draws (one per mixed pair, labeled pairs first).
    """
    if len(x) == 0:
        raise ContractError("labeled batch is empty")
    xl = augmenter(x, rng)
    ql = one_hot(y, num_classes)
    if len(u):
        guess, views = guess_label(model, u, augmenter, config.augmentations, rng, return_views=True)
        pu = sharpen(guess, config.temperature)
        xu = np.concatenate(views)
        pu = np.tile(pu, (config.augmentations, 1))
    else:
        xu = np.zeros((0,) + xl.shape[1:])
        pu = np.zeros((0, num_classes))

    all_x = np.concatenate([xl, xu])
    all_p = np.concatenate([ql, pu])
    perm = rng.permutation(len(all_x))
    sx, sp = all_x[perm], all_p[perm]
    if etas is None:
        etas = rng.beta(config.beta_param, config.beta_param, size=len(all_x))
    etas = np.asarray(etas, dtype=np.float64)
    if etas.shape != (len(all_x),):
        raise ContractError(f"expected {len(all_x)} mixing weights, got {etas.shape}")
    n0 = len(xl)
    mx_l, mp_l = mixup(xl, ql, sx[:n0], sp[:n0], etas[:n0])
    mx_u, mp_u = mixup(xu, pu, sx[n0:], sp[n0:], etas[n0:])
    return SemiBatch(mx_l, mp_l, mx_u, mp_u, permutation=perm, etas=etas)


def semi_loss_terms(model, batch):
    l_label = cross_entropy(model(batch.labeled_x), batch.labeled_p)
    if len(batch.unlabeled_x):
        l_unlabel = mse(model(batch.unlabeled_x).softmax(), batch.unlabeled_p)
    else:
        l_unlabel = Tensor(0.0)
    return l_label, l_unlabel


def semi_loss(model, batch, unlabeled_weight):
    l_label, l_unlabel = semi_loss_terms(model, batch)
    return l_label + unlabeled_weight * l_unlabel


def _sample(n, size, rng):
    return rng.choice(n, size=size, replace=n < size)


def rampup(step, total, fraction):
    if fraction <= 0 or total <= 0:
        return 1.0
    return min(1.0, step / (fraction * total))


def train_substitute(d0, d1, config, model, augmenter=None, metrics_log=None, trace=None):
    """Fit ``model`` in place on labeled pool ``d0`` and unlabeled pool ``d1``.

    ``d0`` holds :class:`~semiadv.oracle.LabeledSample` items and ``d1`` holds
    ``(id, x)`` pairs. Returns the trained model (the EMA weights when
    ``config.ema_decay`` is set). ``metrics_log`` receives one tab-separated
    line per iteration; ``trace`` collects ``(permutation, etas)`` per iteration.
    """
    if len(d0) < 1:
        raise ContractError("labeled pool is empty")
    x0 = np.stack([s.x for s in d0]).astype(np.float64)
    y0 = np.array([s.y for s in d0], dtype=int)
    x1 = np.stack([x for _, x in d1]).astype(np.float64) if len(d1) else None
    augmenter = augmenter or Augmenter.for_input_shape(model.input_shape)
    rng = np.random.default_rng(config.seed)
    opt = Adam(model.parameters(), lr=config.learning_rate)
    ema = ParamEMA(model, config.ema_decay) if config.ema_decay else None
    total = config.epochs * config.iterations_per_epoch
    K = model.num_classes

    step = 0
    for _ in range(config.epochs):
        for _ in range(config.iterations_per_epoch):
            xi = _sample(len(x0), config.batch_size, rng)
            ui = _sample(len(x1), config.batch_size, rng) if x1 is not None else None
            u = x1[ui] if ui is not None else np.zeros((0,) + x0.shape[1:])
            batch = build_semibatch(model, x0[xi], y0[xi], u, config, augmenter, rng, K)
            if trace is not None:
                trace.append((batch.permutation, batch.etas))
            weight = config.unlabeled_weight * rampup(step, total, config.rampup_fraction)
            l_label, l_unlabel = semi_loss_terms(model, batch)
            loss = l_label + weight * l_unlabel
            opt.zero_grad()
            loss.backward()
            opt.step()
            if ema is not None:
                ema.update(model)
            if metrics_log is not None:
                metrics_log.write(f"{step}\t{l_label.item():.6g}\t{l_unlabel.item():.6g}\t"
                                  f"{loss.item():.6g}\t{weight:.6g}\n")
            step += 1
    if ema is not None:
        ema.copy_to(model)
    return model
