"""### Tests du réseau complet et des checkpoints"""

from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose

from configuration import config_from_dict
from model import CHECKPOINT_FORMAT, TardisModel, load_checkpoint, save_checkpoint
from phantom import rasterize_study, sample_phases
from tardfile import ContainerError, write_checkpoint, write_volume

PETITE_CONFIG = {
    "phantom": {"image_size": 16, "organ_semi_axes": [4.0, 6.0], "tumor_radius": [1.0, 3.0], "n_studies": 6},
    "train": {"channels": 8, "latent_channels": 4, "dictionary_size": 16, "club_hidden": 8, "epochs": 1},
}


def _config(**train):
    payload = {key: dict(value) for key, value in PETITE_CONFIG.items()}
    payload["train"].update(train)
    return config_from_dict(payload)


def _study(config, pattern, seed=0):
    phantom = replace(config.phantom, missing_patterns={pattern: 1.0})
    return sample_phases(rasterize_study(seed, phantom, lesion_class="hyper"), seed + 1, phantom)


def test_passe_avant_formes_et_completion():
    config = _config()
    model = TardisModel(config)
    study = _study(config, "AV")
    out = model.forward(study, rng=np.random.default_rng(0))
    assert out.logits.shape == (3, 16, 16)
    assert out.labels == ("A", "V")
    assert out.filled_labels == ("N", "D")
    assert out.weights.count == 5
    assert set(out.dynamic_by_label()) == {"N", "A", "V", "D"}
    assert out.taus.shape == (2,)


def test_sans_completion():
    config = _config()
    model = TardisModel(config)
    out = model.forward(_study(config, "V"), dynamic_fill="none")
    assert out.filled is None
    assert out.weights.count == 2


def test_completion_par_zeros():
    config = _config()
    out = TardisModel(config).forward(_study(config, "NA"), dynamic_fill="zero")
    assert out.filled_labels == ("V", "D")
    assert not np.any(out.filled.tokens.data)


def test_prediction_deterministe_et_tirages():
    config = _config()
    model = TardisModel(config)
    study = _study(config, "A")
    first = model.predict(study)
    second = model.predict(study)
    assert_allclose(first.logits, second.logits)
    assert first.mask.shape == (16, 16)
    assert set(np.unique(first.mask)) <= {0, 1, 2}
    assert_allclose(first.probabilities.sum(axis=0), np.ones((16, 16)), atol=1e-5)
    assert 0.0 < first.regressed_taus["A"] < 1.0

    sampled = model.predict(study, n_samples=3, noise_seed=1)
    again = model.predict(study, n_samples=3, noise_seed=1)
    assert_allclose(sampled.logits, again.logits)
    assert not np.allclose(sampled.dynamic["N"], first.dynamic["N"])


def test_meme_graine_meme_reseau():
    config = _config()
    first, second = TardisModel(config, seed=3), TardisModel(config, seed=3)
    for (name, a), (_, b) in zip(first.named_parameters(), second.named_parameters()):
        assert_allclose(a.data, b.data, err_msg=name)
    other = TardisModel(config, seed=4)
    assert not np.allclose(other.backbone.enc1.weight.data, first.backbone.enc1.weight.data)


def test_parametres_du_reseau_sans_estimateurs():
    model = TardisModel(_config())
    network = {id(p) for p in model.network_parameters()}
    estimators = {id(p) for p in model.estimators.parameters()}
    assert network and not network & estimators
    assert len(network) + len(estimators) == len(model.parameters())


def test_checkpoint_aller_retour(tmp_path):
    config = _config()
    model = TardisModel(config, seed=5)
    model.clock.update(["A"], [0.9])
    study = _study(config, "NAV")
    path = tmp_path / "model.tard"
    save_checkpoint(model, path, dataset_hash="abc")

    restored, header = load_checkpoint(path)
    assert header["format"] == CHECKPOINT_FORMAT
    assert header["seed"] == 5
    assert header["dataset_hash"] == "abc"
    assert header["topology"]["channels"] == 8
    assert restored.clock.tau_for("A") == pytest.approx(model.clock.tau_for("A"), abs=1e-6)
    assert_allclose(restored.dictionary.usage_counts, model.dictionary.usage_counts)

    copy = tmp_path / "copie.tard"
    save_checkpoint(restored, copy, dataset_hash="abc")
    assert copy.read_bytes() == path.read_bytes()
    assert_allclose(restored.predict(study).logits, model.predict(study).logits, atol=1e-6)


def test_checkpoint_etranger(tmp_path):
    volume = tmp_path / "volume.tard"
    write_volume(volume, np.ones((2, 2)))
    with pytest.raises(ContainerError):
        load_checkpoint(volume)
    other = tmp_path / "autre.tard"
    write_checkpoint(other, {}, {"format": "autre"})
    with pytest.raises(ValueError):
        load_checkpoint(other)
