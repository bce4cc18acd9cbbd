"""### Tests de l'objectif composite et de la boucle d'entraînement"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from agnostic import AgnosticTerms, agnostic_loss, consistency_loss
from backbone import TokenGrid
from configuration import config_from_dict
from disentangle import DisentangleEstimators, DisentangleTerms, disentangle_loss
from dynamic import SpecificTerms, ranking_loss, specific_loss
from model import TardisModel, load_checkpoint
from numcore import AdamW, Tensor, backward, check_gradients
from phantom import gen_dataset, load_manifest, rasterize_study, sample_phases
from trainer import (
    LOG_NAME,
    LossBreakdown,
    SegTerms,
    TrainingFault,
    batch_objective,
    batch_step,
    composite_loss,
    cosine_lr,
    modality_dropout,
    seg_loss,
    train,
    training_summary,
)

PETITE_CONFIG = {
    "phantom": {"image_size": 16, "organ_semi_axes": [4.0, 6.0], "tumor_radius": [1.0, 3.0], "n_studies": 8},
    "train": {
        "channels": 8,
        "latent_channels": 4,
        "dictionary_size": 16,
        "club_hidden": 8,
        "epochs": 2,
        "batch_size": 2,
    },
}


def _config(**train):
    payload = {key: dict(value) for key, value in PETITE_CONFIG.items()}
    payload["train"].update(train)
    return config_from_dict(payload)


def _study(config, pattern, seed=0, lesion_class="hyper"):
    phantom = replace(config.phantom, missing_patterns={pattern: 1.0})
    return sample_phases(rasterize_study(seed, phantom, lesion_class=lesion_class), seed + 1, phantom)


def _terms(agn=0.0, spe=0.0, de=0.0, seg=0.0):
    zero = Tensor(0.0)
    return (
        AgnosticTerms(Tensor(agn), zero, zero),
        SpecificTerms(Tensor(spe), zero, zero),
        Tensor(de),
        SegTerms(Tensor(seg), zero),
    )


def test_somme_composite():
    assert composite_loss(*_terms()).total == 0.0
    breakdown = composite_loss(*_terms(1.0, 2.0, 3.0, 4.0))
    assert breakdown.total == pytest.approx(10.0)
    assert breakdown.agn + breakdown.spe + breakdown.de + breakdown.seg == pytest.approx(breakdown.total, abs=1e-6)


def test_terme_non_fini_nomme():
    agn, spe, de, seg = _terms()
    spe = SpecificTerms(Tensor(0.0), Tensor(float("nan")), Tensor(0.0))
    with pytest.raises(TrainingFault, match="spe_reconstruction"):
        composite_loss(agn, spe, de, seg)


def test_decomposition_de_la_desintrication():
    agn, spe, _, seg = _terms()
    de = DisentangleTerms(Tensor(0.2), Tensor(0.4), Tensor(0.3))
    breakdown = composite_loss(agn, spe, de, seg)
    assert breakdown.de_static_dynamic == pytest.approx(0.2)
    assert breakdown.de == pytest.approx(0.3)
    assert set(breakdown.as_row()) == set(LossBreakdown.columns())


def test_entropie_croisee_uniforme():
    mask = np.zeros((4, 4), dtype=np.int64)
    mask[:, 2:] = 1
    terms = seg_loss(Tensor(np.zeros((3, 4, 4))), mask)
    assert terms.ce.item() == pytest.approx(math.log(3.0), rel=1e-6)


def test_logits_satures_vers_la_verite():
    mask = np.zeros((4, 4), dtype=np.int64)
    mask[1:3, 1:3] = 2
    logits = np.stack([(mask == c) * 40.0 for c in range(3)])
    assert seg_loss(Tensor(logits), mask).total.item() < 1e-4


def test_tumeur_disjointe():
    mask = np.zeros((4, 4), dtype=np.int64)
    mask[:, 2:] = 2
    wrong = np.where(mask == 2, 0, 2)
    logits = np.stack([(wrong == c) * 40.0 for c in range(3)])
    dice = seg_loss(Tensor(logits), mask).dice.item()
    assert dice == pytest.approx(1.0, abs=1e-4)


def test_etiquettes_invalides():
    with pytest.raises(ValueError):
        seg_loss(Tensor(np.zeros((3, 2, 2))), np.full((2, 2), 3))
    with pytest.raises(ValueError):
        seg_loss(Tensor(np.zeros((3, 2, 2))), np.zeros((2, 2), dtype=np.float64))
    with pytest.raises(ValueError):
        seg_loss(Tensor(np.zeros((3, 2, 2))), np.zeros((3, 3), dtype=np.int64))


@pytest.mark.parametrize("seed", range(20))
def test_gradient_segmentation(seed):
    rng = np.random.default_rng(seed)
    mask = rng.integers(0, 3, size=(4, 4))
    report = check_gradients(lambda x: seg_loss(x, mask).total, Tensor(rng.normal(size=(3, 4, 4))))
    assert report.passed, report.max_rel_error


def test_abandon_de_modalites():
    config = _config()
    study = _study(config, "NAVD")
    assert modality_dropout(study, 0.0, np.random.default_rng(0)).labels == study.labels

    rng = np.random.default_rng(1)
    assert all(len(modality_dropout(study, 0.99, rng).phases) >= 1 for _ in range(500))

    counts = [len(modality_dropout(study, 0.2, rng).phases) for _ in range(20000)]
    assert np.mean(counts) == pytest.approx(4 * 0.8 + 0.2**4, abs=0.03)
    with pytest.raises(ValueError):
        modality_dropout(study, 1.0, rng)


def test_taux_cosinus():
    assert cosine_lr(0, 10, 0.01, 1e-4) == pytest.approx(0.01)
    assert cosine_lr(9, 10, 0.01, 1e-4) == pytest.approx(1e-4)
    assert cosine_lr(0, 1, 0.01, 1e-4) == 0.01
    rates = [cosine_lr(epoch, 10, 0.01, 1e-4) for epoch in range(10)]
    assert rates == sorted(rates, reverse=True)


def test_lot_de_copies_identiques():
    config = _config()
    model = TardisModel(config)
    study = _study(config, "V")
    single = batch_objective(model, [study], config.train).breakdown
    double = batch_objective(model, [study, study], config.train).breakdown
    assert double.total == pytest.approx(single.total, rel=1e-5)
    assert double.seg == pytest.approx(single.seg, rel=1e-5)


def test_normalisation_invariante_a_la_duplication_d_une_phase():
    rng = np.random.default_rng(5)
    phase = rng.normal(size=(1, 4, 6))
    for copies in (2, 4):
        grid = TokenGrid(Tensor(np.repeat(phase, copies, axis=0)), (2, 3))
        assert consistency_loss(grid).item() == 0.0

    estimators = DisentangleEstimators(4, rng, hidden=8)
    static, dynamic = Tensor(rng.normal(size=4)), Tensor(rng.normal(size=4))
    once = disentangle_loss([[static, dynamic, dynamic]], estimators)
    twice = disentangle_loss([[static, dynamic, dynamic, dynamic, dynamic]], estimators)
    assert twice.static_dynamic.item() == pytest.approx(once.static_dynamic.item(), rel=1e-5, abs=1e-6)
    assert twice.dynamic_dynamic.item() == pytest.approx(once.dynamic_dynamic.item(), rel=1e-5, abs=1e-6)
    assert twice.total.item() == pytest.approx(once.total.item(), rel=1e-5, abs=1e-6)

    for taus in ([0.3, 0.85], [0.0, 0.3, 0.55, 0.85]):
        assert ranking_loss(taus, margin=0.05).item() == 0.0


def test_gradient_du_lot_moyenne_des_etudes():
    config = _config()
    model = TardisModel(config)
    studies = [_study(config, "NA", seed=0), _study(config, "VD", seed=3)]
    param = model.backbone.enc1.weight

    def gradient(batch):
        model.zero_grad()
        backward(batch_objective(model, batch, config.train, use_disentangle=False).breakdown.objective)
        return param.grad.copy()

    expected = (gradient(studies[:1]) + gradient(studies[1:])) / 2.0
    assert_allclose(gradient(studies), expected, rtol=1e-4, atol=1e-6)


def test_aucun_terme_sans_gradient():
    config = _config()
    cfg = config.train
    model = TardisModel(config)
    batch = [_study(config, "NAV", seed=0), _study(config, "AVD", seed=4)]

    def components():
        outs = [model.forward(study) for study in batch]
        return {
            "agn": [agnostic_loss(o.x_s, o.quantized.tokens, cfg.beta, o.quantized.codes).total for o in outs],
            "spe": [specific_loss(o.x_d, o.x_hat_d, o.posterior, o.taus, cfg.lam, cfg.margin).total for o in outs],
            "seg": [seg_loss(o.logits, study.seg_mask).total for o, study in zip(outs, batch)],
        }

    for name in ("agn", "spe", "seg"):
        model.zero_grad()
        terms = components()[name]
        backward(terms[0] + terms[1])
        norm = sum(float(np.sum(p.grad**2)) for p in model.network_parameters() if p.grad is not None)
        assert norm > 0.0, name

    model.zero_grad()
    result = batch_objective(model, batch, cfg)
    backward(disentangle_loss(result.pooled_reps, model.estimators).total)
    assert any(p.grad is not None and np.any(p.grad) for p in model.network_parameters())
    breakdown = result.breakdown
    assert breakdown.total == pytest.approx(breakdown.agn + breakdown.spe + breakdown.de + breakdown.seg, rel=1e-5)


def _dataset(tmp_path, config):
    return load_manifest(gen_dataset(config.phantom, 0, tmp_path / "donnees").root)


def test_zero_epoque_checkpoint_initial(tmp_path):
    config = _config(epochs=0)
    result = train(_dataset(tmp_path, config), config, tmp_path / "essai")
    restored, header = load_checkpoint(result.checkpoint)
    reference = TardisModel(config)
    for (name, a), (_, b) in zip(reference.named_parameters(), restored.named_parameters()):
        assert_allclose(a.data, b.data, err_msg=name)
    assert header["epochs_completed"] == 0
    assert training_summary(result.history) == {"epochs": 0}


def test_entrainement_reproductible(tmp_path):
    config = _config()
    manifest = _dataset(tmp_path, config)
    first = train(manifest, config, tmp_path / "un")
    second = train(manifest, config, tmp_path / "deux")
    assert first.checkpoint.read_bytes() == second.checkpoint.read_bytes()
    assert first.log.read_bytes() == second.log.read_bytes()

    history = pd.read_csv(first.log)
    assert list(history["epoch"]) == [1, 2]
    for column in ("total", "agn", "spe", "de", "seg", "val_dice", "lr", "mi_static_dynamic"):
        assert column in history.columns
    components = history[["agn", "spe", "de", "seg"]].sum(axis=1)
    assert_allclose(history["total"], components, rtol=1e-5)
    assert history["lr"].iloc[0] == pytest.approx(config.train.lr)
    assert (tmp_path / "un" / LOG_NAME).exists()

    summary = training_summary(first.history)
    assert summary["epochs"] == 2
    other = train(manifest, config, tmp_path / "trois", seed=1)
    assert other.checkpoint.read_bytes() != first.checkpoint.read_bytes()


def test_pas_d_optimisation():
    config = _config()
    model = TardisModel(config)
    optimizer = AdamW(model.network_parameters(), lr=config.train.lr)
    batch = [_study(config, "NAV", seed=0), _study(config, "VD", seed=2)]
    weight = model.backbone.enc1.weight.data.copy()
    estimator = model.estimators.static_dynamic.mu_head.weight.data.copy()
    clock = model.clock.tau_for("V")

    result = batch_step(model, optimizer, batch, config.train, np.random.default_rng(0))
    assert np.isfinite(result.breakdown.total)
    assert not np.allclose(model.backbone.enc1.weight.data, weight)
    assert not np.allclose(model.estimators.static_dynamic.mu_head.weight.data, estimator)
    assert model.clock.tau_for("V") != clock
