"""Training the black-box target model that the oracle will wrap."""

from dataclasses import dataclass

import numpy as np

from semiadv.errors import ContractError
from semiadv.nn import SGD, build, cross_entropy, one_hot
from semiadv.nn import checkpoint


@dataclass
class TargetConfig:
    epochs: int = 20
    batch_size: int = 64
    learning_rate: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    cosine: bool = True
    width: int | None = None
    seed: int = 0


def fit_supervised(model, x, y, config):
    """Minibatch SGD with momentum on hard labels, cosine-annealed over the whole run."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=int)
    if len(x) == 0:
        raise ContractError("target training split is empty")
    rng = np.random.default_rng(config.seed)
    steps = config.epochs * -(-len(x) // config.batch_size)
    opt = SGD(model.parameters(), lr=config.learning_rate, momentum=config.momentum,
              weight_decay=config.weight_decay,
              cosine_t_max=steps if config.cosine and steps else None)
    targets = one_hot(y, model.num_classes)
    for _ in range(config.epochs):
        order = rng.permutation(len(x))
        for start in range(0, len(x), config.batch_size):
            idx = order[start:start + config.batch_size]
            loss = cross_entropy(model(x[idx]), targets[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    return model


def accuracy(model, x, y):
    return float(np.mean(model.predict(x) == np.asarray(y))) if len(y) else float("nan")


def train_target(dataset, arch, config, checkpoint_path=None):
    """Train, freeze and optionally checkpoint a target model.

    Returns ``(model, clean_accuracy)`` with accuracy on the evaluation split.
    """
    model = build(arch, dataset.input_shape, dataset.num_classes, seed=config.seed, width=config.width)
    split = dataset.target_train
    fit_supervised(model, split.inputs, split.labels, config)
    for p in model.parameters():
        p.requires_grad = False
    if checkpoint_path is not None:
        checkpoint.save(model, checkpoint_path)
    return model, accuracy(model, dataset.evaluation.inputs, dataset.evaluation.labels)
