import math

import numpy as np

from semiadv.errors import ContractError


class Optimizer:
    """Base class. ``cosine_t_max`` switches on cosine annealing of the
    learning rate over that many steps (off by default)."""

    kind = "base"

    def __init__(self, params, lr, weight_decay=0.0, cosine_t_max=None, lr_min=0.0):
        if lr <= 0:
            raise ContractError(f"learning rate must be positive, got {lr}")
        if weight_decay < 0:
            raise ContractError(f"weight decay must be non-negative, got {weight_decay}")
        self.params = list(params)
        self.base_lr = lr
        self.lr = lr
        self.weight_decay = weight_decay
        self.cosine_t_max = cosine_t_max
        self.lr_min = lr_min
        self.steps = 0

    def _grads(self):
        grads = []
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise ContractError(f"optimizer step before backward: parameter {i} has no gradient")
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            grads.append(g)
        return grads

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        grads = self._grads()
        self._update(grads)
        self.steps += 1
        if self.cosine_t_max:
            t = min(self.steps, self.cosine_t_max)
            self.lr = self.lr_min + 0.5 * (self.base_lr - self.lr_min) * (
                1 + math.cos(math.pi * t / self.cosine_t_max))

    def _update(self, grads):
        raise NotImplementedError


class SGD(Optimizer):
    kind = "sgd"

    def __init__(self, params, lr, momentum=0.0, **kw):
        super().__init__(params, lr, **kw)
        self.momentum = momentum
        self.velocity = [np.zeros_like(p.data) for p in self.params]

    def _update(self, grads):
        for i, (p, g) in enumerate(zip(self.params, grads)):
            if self.momentum:
                self.velocity[i] = self.momentum * self.velocity[i] + g
                g = self.velocity[i]
            p.data = p.data - self.lr * g


class Adam(Optimizer):
    kind = "adam"

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8, **kw):
        super().__init__(params, lr, **kw)
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def _update(self, grads):
        t = self.steps + 1
        c1 = 1 - self.beta1 ** t
        c2 = 1 - self.beta2 ** t
        for i, (p, g) in enumerate(zip(self.params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * g * g
            p.data = p.data - self.lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps)


def optimizer_step(opt, model=None):
    """Apply one update to the parameters ``opt`` was built over and return the model."""
    opt.step()
    return model


class ParamEMA:
    """Exponential moving average of a model's parameters."""

    def __init__(self, model, decay):
        if not 0 < decay < 1:
            raise ContractError(f"EMA decay must lie in (0, 1), got {decay}")
        self.decay = decay
        self.shadow = model.state_dict()

    def update(self, model):
        for k, v in model.state_dict().items():
            self.shadow[k] = self.decay * self.shadow[k] + (1 - self.decay) * v

    def copy_to(self, model):
        model.load_state_dict(self.shadow)
