import numpy as np
import pytest

import semiadv.evaluate as ev_mod
from semiadv.attack import AdversarialResult, AttackConfig
from semiadv.data import load_dataset
from semiadv.errors import ContractError
from semiadv.evaluate import (CellError, ExperimentReport, asr, prepare_substitute, render_tables,
                              run_cell, similarity, target_classes)
from semiadv.nn import Dense, Model, build
from semiadv.oracle import EvaluationOracle
from semiadv.semisup import TrainConfig
from semiadv.target import TargetConfig


def identity_model(k=4):
    model = Model([Dense(k, k)], (k,), k)
    model.layers[0].weight.data = np.eye(k)
    return model


def constant_model(k, cls, dim=None):
    dim = dim or k
    model = Model([Dense(dim, k)], (dim,), k)
    model.layers[0].weight.data = np.zeros((dim, k))
    model.layers[0].bias.data = np.eye(k)[cls]
    return model


def results_for(x_adv, y, target_label=None):
    return [AdversarialResult(xa, i, int(yi), None if target_label is None else target_label[i], -1, 0, 0, 0.0)
            for i, (xa, yi) in enumerate(zip(x_adv, y))]


# attack success rate

def test_identity_attack_scores_zero():
    x = np.eye(4)
    assert asr(identity_model(), results_for(x, [0, 1, 2, 3]), "untargeted", clean_inputs=x) == 0.0


def test_forced_misclassification_scores_one():
    x = np.eye(4)[1:]
    adv = np.tile(np.eye(4)[0], (3, 1))
    assert asr(identity_model(), results_for(adv, [1, 2, 3]), "untargeted", clean_inputs=x) == 1.0


def test_hand_counted_batch_of_ten():
    k = 4
    y = np.array([0, 1, 2, 3, 0, 1, 2, 3, 0, 1])
    flips = np.array([1, 1, 0, 1, 0, 1, 1, 0, 1, 0], dtype=bool)
    adv_labels = np.where(flips, (y + 1) % k, y)
    res = results_for(np.eye(k)[adv_labels], y)
    assert asr(identity_model(), res, "untargeted", clean_inputs=np.eye(k)[y]) == pytest.approx(0.6)


def test_untargeted_counts_only_clean_correct_samples():
    y = [0, 1, 2, 3]
    clean = np.eye(4)[[0, 1, 0, 0]]  # last two are misclassified in clean form
    adv = np.eye(4)[[1, 1, 2, 3]]
    res = results_for(adv, y)
    model = identity_model()
    assert asr(model, res, "untargeted", clean_inputs=clean) == 0.5
    assert asr(model, res, "untargeted") == 0.25
    with pytest.raises(ContractError):
        asr(model, res[2:], "untargeted", clean_inputs=clean[2:])


def test_targeted_success_means_landing_on_target():
    y = [0, 1, 2]
    goals = target_classes(y, 4)
    assert goals == [1, 2, 3]
    adv = np.eye(4)[[1, 3, 3]]
    assert asr(identity_model(), results_for(adv, y, goals), "targeted") == pytest.approx(2 / 3)


def test_failed_samples_are_not_scored():
    res = results_for(np.eye(4)[[1]], [0])
    res[0].error = "boom"
    with pytest.raises(ContractError):
        asr(identity_model(), res, "untargeted")


# similarity

def test_similarity_of_copy_is_one():
    model = build("mlp", (5,), 3, seed=1)
    x = np.random.default_rng(0).random((40, 5))
    assert similarity(model, model.copy(), x) == 1.0


def test_constant_substitute_matches_class_frequency():
    x = np.eye(3)[np.arange(30) % 3]
    target = identity_model(3)
    for cls in range(3):
        expected = np.mean(target.predict(x) == cls)
        assert similarity(target, constant_model(3, cls), x) == pytest.approx(expected)
        assert expected == pytest.approx(1 / 3)


def test_disjoint_predictors_score_zero():
    x = np.random.default_rng(0).random((10, 3))
    assert similarity(constant_model(3, 0), constant_model(3, 2), x) == 0.0


def test_similarity_is_logit_scale_invariant():
    target = build("mlp", (5,), 3, seed=1)
    sub = build("mlp", (5,), 3, seed=2)
    x = np.random.default_rng(0).random((50, 5))
    base = similarity(target, sub, x)
    scaled = sub.copy()
    last = scaled.layers[-1]
    last.weight.data = last.weight.data * 7.5
    last.bias.data = last.bias.data * 7.5
    assert similarity(target, scaled, x) == base


def test_similarity_needs_inputs():
    with pytest.raises(ContractError):
        similarity(identity_model(), identity_model(), np.zeros((0, 4)))


def test_evaluation_oracle_scores_like_model():
    model = build("mlp", (5,), 3, seed=1)
    x = np.random.default_rng(0).random((20, 5))
    assert similarity(EvaluationOracle(model), build("mlp", (5,), 3, seed=3), x) == \
        similarity(model, build("mlp", (5,), 3, seed=3), x)


# cells

SMALL = "synthetic:blobs:n=150,dim=8"


@pytest.fixture(scope="module")
def small():
    ds = load_dataset(None, SMALL, seed=0)
    kw = dict(train_config=TrainConfig(epochs=1, iterations_per_epoch=8, batch_size=16),
              target_config=TargetConfig(epochs=5), eval_limit=10,
              attack_config=AttackConfig(epsilon=0.1, step_rate=0.05, max_iterations=3))
    return ds, kw


def test_cell_is_deterministic(small):
    ds, kw = small
    a = run_cell(ds, "mlp", "mlp", 20, "ipgd", "untargeted", 0, **kw)
    b = run_cell(ds, "mlp", "mlp", 20, "ipgd", "untargeted", 0, **kw)
    assert a.to_record() == b.to_record()
    assert a.queries_used == 20 and a.status == "ok"
    assert 0 <= a.asr <= 1 and 0 <= a.similarity <= 1


def test_full_pool_budget_degenerates_to_supervised(small, monkeypatch):
    ds, kw = small
    seen = {}
    real = ev_mod.train_substitute

    def spy(d0, d1, *args, **kwargs):
        seen["d0"], seen["d1"] = len(d0), len(d1)
        return real(d0, d1, *args, **kwargs)

    monkeypatch.setattr(ev_mod, "train_substitute", spy)
    rep = run_cell(ds, "mlp", "mlp", len(ds.attacker), "fgsm", "targeted", 1, **kw)
    assert seen == {"d0": len(ds.attacker), "d1": 0}
    assert rep.queries_used == len(ds.attacker)


def test_budget_beyond_pool_is_rejected(small):
    ds, kw = small
    with pytest.raises(CellError, match="exceeds attacker pool"):
        run_cell(ds, "mlp", "mlp", len(ds.attacker) + 1, "pgd", "untargeted", 0, **kw)


def test_label_leak_audit(small, monkeypatch, tmp_path):
    """The substitute pipeline's only labels are oracle answers; the unlabeled pool has none."""
    ds, kw = small
    captured = {}
    real = ev_mod.train_substitute

    def spy(d0, d1, *args, **kwargs):
        captured["d0"], captured["d1"] = d0, d1
        return real(d0, d1, *args, **kwargs)

    monkeypatch.setattr(ev_mod, "train_substitute", spy)
    prep = prepare_substitute(ds, "mlp", "mlp", 15, 0, train_config=kw["train_config"],
                              target_config=kw["target_config"], audit_path=tmp_path / "audit.log")
    ledger = {e.id: e.label for e in prep.oracle.ledger}
    assert {s.id: s.y for s in captured["d0"]} == ledger
    assert len(ledger) == 15 == prep.oracle.budget_used
    assert all(len(item) == 2 for item in captured["d1"])
    assert not ({i for i, _ in captured["d1"]} & set(ledger))
    # the oracle answers with the target's labels, not ground truth
    truth = dict(zip(ds.attacker.ids.tolist(), prep.target.predict(ds.attacker.inputs).tolist()))
    assert all(truth[i] == y for i, y in ledger.items())
    assert len((tmp_path / "audit.log").read_text().splitlines()) == 15


def test_report_record_round_trip():
    rep = ExperimentReport("d", "mlp", "cnn", 50, "pgd", "untargeted", 2, asr=0.5, wall_time=3.2)
    rec = rep.to_record()
    assert rec["schema_version"] == 1 and rec["key"] == "50/pgd/untargeted/2"
    assert "wall_time" not in rec
    assert ExperimentReport.from_record(rec) == rep


def test_tables_use_medians():
    reps = [ExperimentReport("d", "mlp", "mlp", 50, "ipgd", "untargeted", s, asr=a, similarity=0.8,
                             substitute_accuracy=0.7) for s, a in enumerate([0.1, 0.5, 0.3])]
    text = render_tables(reps)
    assert "30.00" in text and "80.00" in text and "70.00" in text
    assert render_tables([]) == "no successful cells\n"
