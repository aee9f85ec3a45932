"""Independent oracles shared by the test modules."""

import numpy as np

from semiadv.nn import Tensor

FD_STEP = 1e-4
FD_RTOL = 1e-4


def numeric_grad(f, x, h=FD_STEP):
    """Central finite differences of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = x[i]
        x[i] = orig + h
        fp = f(x)
        x[i] = orig - h
        fm = f(x)
        x[i] = orig
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def check_grad(build_loss, x):
    """Compare autograd and finite differences for ``build_loss(Tensor) -> scalar Tensor``."""
    t = Tensor(np.array(x, dtype=np.float64), requires_grad=True)
    build_loss(t).backward()
    numeric = numeric_grad(lambda v: build_loss(Tensor(v)).item(), x)
    return rel_error(t.grad, numeric)


def separated(rng, shape, gap=1e-2):
    """Random values at least ``gap`` apart and ``gap/2`` from zero, keeping relu
    kinks and max-pool ties out of finite-difference reach."""
    n = int(np.prod(shape))
    vals = (np.arange(n) - n // 2 + 0.5) * gap
    return rng.permutation(vals).reshape(shape)


def sample_simplex(rng, n, k):
    return rng.dirichlet(np.ones(k), size=n)


def entropy(p):
    p = np.asarray(p)
    with np.errstate(divide="ignore", invalid="ignore"):
        return -np.sum(np.where(p > 0, p * np.log(p), 0.0), axis=-1)


# "criterion N: PASS|FAIL ..." lines, printed in the terminal summary
ACCEPTANCE = []
