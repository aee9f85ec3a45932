"""
Label-only, budget-enforced access to a frozen target model.

The attacker never sees the target's scores or gradients: :meth:`Oracle.query_label`
returns a single class index, charges one unit of budget, and refuses to answer
for a sample identity it has already seen. Every answered query is kept in an
append-only ledger that tests and the CLI can export for auditing.
"""

import threading
from dataclasses import dataclass

import numpy as np

from semiadv.errors import BudgetExhausted, ContractError, RepeatedQuery


@dataclass(frozen=True)
class LabeledSample:
    id: int
    x: np.ndarray
    y: int


@dataclass(frozen=True)
class LedgerEntry:
    id: int
    counter: int
    label: int


class Oracle:
    def __init__(self, target_model, budget_total):
        if budget_total < 0:
            raise ContractError(f"budget must be non-negative, got {budget_total}")
        self._model = target_model.copy()  # frozen private copy
        self.num_classes = target_model.num_classes
        self.budget_total = int(budget_total)
        self._ledger = []
        self._queried = set()
        self._lock = threading.Lock()

    @property
    def budget_used(self):
        return len(self._ledger)

    @property
    def budget_remaining(self):
        return self.budget_total - self.budget_used

    @property
    def queried_ids(self):
        return frozenset(self._queried)

    @property
    def ledger(self):
        return tuple(self._ledger)

    def query_label(self, id, x):
        x = np.asarray(x, dtype=np.float64)
        with self._lock:
            if id in self._queried:
                raise RepeatedQuery(f"sample {id!r} was already queried")
            if self.budget_used >= self.budget_total:
                raise BudgetExhausted(f"query budget of {self.budget_total} exhausted")
            label = int(self._model.predict(x[None])[0])
            self._queried.add(id)
            self._ledger.append(LedgerEntry(id, len(self._ledger), label))
        return label

    def export_ledger(self, path=None):
        lines = [f"{e.id}\t{e.counter}\t{e.label}" for e in self._ledger]
        text = "".join(line + "\n" for line in lines)
        if path is not None:
            with open(path, "w") as f:
                f.write(text)
        return text


def read_ledger(path):
    out = []
    with open(path) as f:
        for line in f:
            if line.strip():
                sid, counter, label = line.split("\t")
                out.append(LedgerEntry(int(sid), int(counter), int(label)))
    return out


class EvaluationOracle:
    """Unmetered label access used only to score finished adversarial examples.

    Kept as a distinct type so reports can say which numbers came from the
    metered attack oracle and which from evaluation.
    """

    metered = False

    def __init__(self, target_model):
        self._model = target_model
        self.num_classes = target_model.num_classes

    def labels(self, x):
        return self._model.predict(np.asarray(x, dtype=np.float64))


def build_initial_pool(oracle, data, n, seed):
    """Pick ``n`` samples uniformly at random, label them through the oracle,
    and return ``(D0, D1)``: the labeled pool and the untouched remainder.

    ``data`` is a list of ``(id, x)`` pairs.
    """
    data = list(data)
    if n < 0 or n > len(data):
        raise ContractError(f"pool size {n} outside [0, {len(data)}]")
    if n > oracle.budget_remaining:
        raise BudgetExhausted(f"pool size {n} exceeds remaining budget {oracle.budget_remaining}")
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(len(data), size=n, replace=False)) if n else np.array([], dtype=int)
    picked = set(chosen.tolist())
    d0 = [LabeledSample(data[i][0], data[i][1], oracle.query_label(data[i][0], data[i][1]))
          for i in chosen]
    d1 = [data[i] for i in range(len(data)) if i not in picked]
    return d0, d1
