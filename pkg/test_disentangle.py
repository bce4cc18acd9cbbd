"""### Tests de l'estimateur CLUB et de la perte de désintrication"""

from __future__ import annotations

import numpy as np
import pytest

from disentangle import (
    ClubEstimator,
    DisentangleEstimators,
    club_estimate,
    club_fit_step,
    disentangle_loss,
    estimate_mutual_information,
    fit_estimators,
    pair_stacks,
)
from numcore import Tensor, backward, check_gradients, frozen


def test_moyenne_auxiliaire_vers_la_moyenne_du_lot():
    rng = np.random.default_rng(0)
    xs = rng.normal(size=(512, 2))
    ys = rng.normal(3.0, 0.5, size=(512, 1))
    est = ClubEstimator(2, 1, np.random.default_rng(1), hidden=16, lr=0.01)
    for _ in range(400):
        club_fit_step(est, xs, ys)
    mu, _ = est(Tensor(xs))
    assert abs(float(mu.data.mean()) - float(ys.mean())) < 0.1


def test_variance_nulle_fait_baisser_log_variance():
    rng = np.random.default_rng(2)
    xs = rng.normal(size=(128, 1))
    ys = np.zeros((128, 1))
    est = ClubEstimator(1, 1, np.random.default_rng(3), hidden=8, lr=0.01)
    initial = float(est(Tensor(xs))[1].data.mean())
    for _ in range(300):
        club_fit_step(est, xs, ys)
    assert float(est(Tensor(xs))[1].data.mean()) < initial - 1.0


def test_pas_deterministe():
    rng = np.random.default_rng(4)
    xs, ys = rng.normal(size=(32, 2)), rng.normal(size=(32, 2))
    first = ClubEstimator(2, 2, np.random.default_rng(5), hidden=8)
    second = ClubEstimator(2, 2, np.random.default_rng(5), hidden=8)
    assert club_fit_step(first, xs, ys) == club_fit_step(second, xs, ys)
    np.testing.assert_array_equal(first.mu_head.weight.data, second.mu_head.weight.data)


def test_variables_independantes():
    rng = np.random.default_rng(6)
    xs, ys = rng.normal(size=(4096, 1)), rng.normal(size=(4096, 1))
    value = estimate_mutual_information(xs, ys, np.random.default_rng(7), steps=300, hidden=16, lr=0.01)
    assert abs(value) < 0.05


def test_gaussiennes_correlees_majorees():
    values = []
    for seed in range(5):
        rng = np.random.default_rng(8 + seed)
        xs = rng.normal(size=(4096, 1))
        ys = 0.9 * xs + np.sqrt(1.0 - 0.81) * rng.normal(size=(4096, 1))
        estimator_rng = np.random.default_rng(100 + seed)
        values.append(estimate_mutual_information(xs, ys, estimator_rng, steps=600, hidden=16, lr=0.01))
    assert sum(value >= 1.06 for value in values) >= 4, values


def test_dependance_totale_croit_avec_l_ajustement():
    rng = np.random.default_rng(10)
    xs = rng.normal(size=(1024, 1))
    short = estimate_mutual_information(xs, xs, np.random.default_rng(11), steps=20, hidden=16, lr=0.01)
    long = estimate_mutual_information(xs, xs, np.random.default_rng(11), steps=300, hidden=16, lr=0.01)
    assert long > short


def test_regroupement_des_paires():
    reps = [[Tensor(np.ones(3)) for _ in range(3)], [Tensor(np.ones(3)) for _ in range(2)]]
    stacks = pair_stacks(reps)
    assert stacks["static_dynamic"][0].shape == (3, 3)
    assert stacks["dynamic_dynamic"][0].shape == (1, 3)
    assert pair_stacks([[Tensor(np.ones(3))]]) == {}


def test_representation_unique():
    estimators = DisentangleEstimators(3, np.random.default_rng(0), hidden=8)
    terms = disentangle_loss([[Tensor(np.ones(3))]], estimators)
    assert terms.total.item() == 0.0


def _batch(rng, n_studies, duplicated):
    batch = []
    for _ in range(n_studies):
        static = rng.normal(size=4)
        dynamic = static.copy() if duplicated else rng.normal(size=4)
        batch.append([Tensor(static), Tensor(dynamic)])
    return batch


def test_paires_dupliquees_strictement_positives():
    estimators = DisentangleEstimators(4, np.random.default_rng(1), hidden=16, lr=0.01)
    batch = _batch(np.random.default_rng(2), 256, duplicated=True)
    for _ in range(200):
        fit_estimators(batch, estimators)
    assert disentangle_loss(batch, estimators).static_dynamic.item() > 0.5


def test_paires_independantes_proches_de_zero():
    estimators = DisentangleEstimators(4, np.random.default_rng(3), hidden=8, lr=0.01)
    batch = _batch(np.random.default_rng(4), 4096, duplicated=False)
    for _ in range(200):
        fit_estimators(batch, estimators)
    assert abs(disentangle_loss(batch, estimators).total.item()) < 0.1


def test_deux_echelles_de_temps():
    rng = np.random.default_rng(5)
    estimators = DisentangleEstimators(4, np.random.default_rng(6), hidden=8)
    batch = [[Tensor(rng.normal(size=4), requires_grad=True) for _ in range(3)] for _ in range(8)]

    fit_estimators(batch, estimators)
    assert all(rep.grad is None for reps in batch for rep in reps)

    before = {name: None if p.grad is None else p.grad.copy() for name, p in estimators.named_parameters()}
    backward(disentangle_loss(batch, estimators).total)
    assert any(np.any(rep.grad) for reps in batch for rep in reps)
    for name, param in estimators.named_parameters():
        if before[name] is None:
            assert param.grad is None
        else:
            np.testing.assert_array_equal(param.grad, before[name])
    assert all(param.requires_grad for param in estimators.parameters())


def test_types_de_paires_inconnus():
    estimators = DisentangleEstimators(2, np.random.default_rng(0), hidden=4)
    with pytest.raises(KeyError):
        estimators.by_kind("static_static")


def test_forme_fermee_contre_paires_explicites():
    rng = np.random.default_rng(12)
    xs, ys = rng.normal(size=(16, 2)), rng.normal(size=(16, 3))
    est = ClubEstimator(2, 3, np.random.default_rng(13), hidden=8)
    mu, log_var = (t.data for t in est(Tensor(xs)))
    inv = 0.5 * np.exp(-log_var)
    positive = -np.sum((ys - mu) ** 2 * inv, axis=1).mean()
    negative = -np.mean([np.sum((ys[j] - mu[i]) ** 2 * inv[i]) for i in range(16) for j in range(16)])
    assert club_estimate(est, xs, ys).item() == pytest.approx(positive - negative, rel=1e-5)


@pytest.mark.parametrize("seed", range(20))
def test_gradient_de_l_estimation_vers_les_representations(seed):
    rng = np.random.default_rng(seed)
    est = ClubEstimator(3, 2, np.random.default_rng(seed + 50), hidden=8)
    xs, ys = rng.normal(size=(6, 3)), rng.normal(size=(6, 2))
    with frozen(est):
        report = check_gradients(lambda y: club_estimate(est, xs, y), Tensor(ys))
        assert report.passed, report.max_rel_error
