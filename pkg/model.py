"""### Réseau complet et checkpoints

`TardisModel` enchaîne les chemins : encodeur partagé, quantification de
l'anatomie, régression de τ et HCVAE, complétion des phases absentes,
assemblage adaptatif puis décodage de la segmentation.

Les estimateurs CLUB font partie du checkpoint mais sont exclus de
`network_parameters()` : ils ont leur propre optimiseur.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from agnostic import DictionaryState, QuantizeResult, mean_anatomy, quantize
from assembly import AssemblyScorer, AssemblyWeights, compute_weights, fuse
from backbone import Backbone, TokenGrid
from configuration import PHASE_LABELS, TardisConfig, config_from_dict, config_hash, config_to_dict
from disentangle import DisentangleEstimators
from dynamic import (
    HCVAE,
    Condition,
    GaussianPosterior,
    PhaseClock,
    TauRegressor,
    regress_tau,
    sample_prior_dynamic,
)
from numcore import Module, Parameter, Tensor, mean, softmax
from phantom import StudyRecord, normalize_intensity
from tardfile import read_checkpoint, write_checkpoint

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "tardis-checkpoint"
CHECKPOINT_VERSION = 1
CLOCK_KEY = "clock.taus"
USAGE_KEY = "dictionary.usage_counts"


@dataclass
class StudyForward:
    """Intermédiaires d'une passe avant sur une étude."""

    labels: Tuple[str, ...]
    x_s: TokenGrid
    quantized: QuantizeResult
    anatomy: Tensor
    x_d: TokenGrid
    taus: Tensor
    posterior: GaussianPosterior
    x_hat_d: TokenGrid
    filled_labels: Tuple[str, ...]
    filled: Optional[TokenGrid]
    weights: AssemblyWeights
    logits: Tensor

    def dynamic_by_label(self) -> Dict[str, Tensor]:
        reps = {label: self.x_hat_d.modality(i) for i, label in enumerate(self.labels)}
        if self.filled is not None:
            reps.update({label: self.filled.modality(i) for i, label in enumerate(self.filled_labels)})
        return reps


@dataclass
class Prediction:
    study_id: str
    labels: Tuple[str, ...]
    logits: np.ndarray = field(repr=False)
    mask: np.ndarray = field(repr=False)
    regressed_taus: Dict[str, float]
    anatomy: np.ndarray = field(repr=False)
    dynamic: Dict[str, np.ndarray] = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    filled_labels: Tuple[str, ...] = ()
    spatial: Tuple[int, int] = (1, 1)

    @property
    def representation_labels(self) -> Tuple[str, ...]:
        """Lignes de `alpha` : statique (S), phases acquises, phases complétées."""

        return ("S", *self.labels, *self.filled_labels)

    @property
    def probabilities(self) -> np.ndarray:
        shifted = self.logits - self.logits.max(axis=0, keepdims=True)
        exp = np.exp(shifted)
        return exp / exp.sum(axis=0, keepdims=True)


class TardisModel(Module):
    def __init__(self, config: TardisConfig, seed: Optional[int] = None) -> None:
        train = config.train
        self.config = config
        self.seed = train.seed if seed is None else int(seed)
        rng = np.random.default_rng(self.seed)

        self.backbone = Backbone(rng, channels=train.channels, image_size=config.phantom.image_size)
        self.dictionary = DictionaryState(train.dictionary_size, train.channels, rng)
        self.regressor = TauRegressor(train.channels, rng)
        self.hcvae = HCVAE(train.channels, train.latent_channels, rng)
        self.scorer = AssemblyScorer(train.channels, rng)
        self.estimators = DisentangleEstimators(train.channels, rng, hidden=train.club_hidden, lr=train.club_lr)
        self.clock = PhaseClock(config.phantom.nominal_taus, momentum=train.clock_momentum)

        logger.info(
            "Réseau initialisé (graine %d) : %d paramètres, %d pour les estimateurs CLUB.",
            self.seed,
            self.parameter_count(),
            self.estimators.parameter_count(),
        )

    def network_parameters(self) -> List[Parameter]:
        return [param for name, param in self.named_parameters() if not name.startswith("estimators.")]

    def images(self, study: StudyRecord) -> List[np.ndarray]:
        window = self.config.phantom.intensity_window
        return [normalize_intensity(phase.image, window) for phase in study.phases]

    def forward(
        self,
        study: StudyRecord,
        rng: Optional[np.random.Generator] = None,
        dynamic_fill: Optional[str] = None,
        n_samples: int = 0,
        noise_seed: Optional[int] = None,
    ) -> StudyForward:
        """Passe avant complète.

        Avec `rng`, le postérieur est échantillonné et les phases absentes
        sont tirées du prior (mode entraînement). Sans `rng`, μ est utilisé
        et le prior est décodé en z = 0, sauf si `n_samples` > 0.
        """

        fill = self.config.train.dynamic_fill if dynamic_fill is None else dynamic_fill
        labels = study.labels
        features, first_block = self.backbone.encode_features(self.images(study))
        x_s, x_d = self.backbone.project_split(features)
        x_s.modality_taus = x_d.modality_taus = tuple(study.taus)
        quantized = quantize(x_s, self.dictionary)
        anatomy = mean_anatomy(quantized.tokens)

        taus = regress_tau(x_d, self.regressor)
        cond = Condition(anatomy, taus.data, x_d.spatial)
        noise = None
        if rng is not None:
            noise = rng.standard_normal((x_d.n_modalities, self.hcvae.latent_channels, x_d.positions))
        posterior = self.hcvae.encode(x_d, cond, noise)
        x_hat_d = self.hcvae.decode(posterior.z, cond)

        absent = tuple(label for label in PHASE_LABELS if label not in labels)
        filled: Optional[TokenGrid] = None
        if absent and fill != "none":
            absent_cond = Condition(anatomy, [self.clock.tau_for(label) for label in absent], x_d.spatial)
            if fill == "zero":
                filled = TokenGrid(Tensor(np.zeros((len(absent), x_d.channels, x_d.positions))), x_d.spatial)
            elif rng is not None:
                filled = sample_prior_dynamic(
                    self.hcvae, absent_cond, noise_seed=int(rng.integers(2**32)), deterministic=False
                )
            else:
                filled = sample_prior_dynamic(
                    self.hcvae,
                    absent_cond,
                    noise_seed=noise_seed,
                    deterministic=n_samples == 0,
                    n_samples=max(n_samples, 1),
                )
        filled_labels = absent if filled is not None else ()

        reps = [anatomy] + [x_hat_d.modality(i) for i in range(x_hat_d.n_modalities)]
        if filled is not None:
            reps += [filled.modality(i) for i in range(filled.n_modalities)]
        weights = compute_weights(reps, self.scorer)
        fused = fuse(reps, weights, x_d.spatial)
        skip = mean(first_block, axis=0, keepdims=True)
        logits = self.backbone.decode_segmentation(fused, skip)

        return StudyForward(
            labels=labels,
            x_s=x_s,
            quantized=quantized,
            anatomy=anatomy,
            x_d=x_d,
            taus=taus,
            posterior=posterior,
            x_hat_d=x_hat_d,
            filled_labels=filled_labels,
            filled=filled,
            weights=weights,
            logits=logits,
        )

    def predict(
        self,
        study: StudyRecord,
        dynamic_fill: Optional[str] = None,
        n_samples: int = 0,
        noise_seed: Optional[int] = None,
    ) -> Prediction:
        out = self.forward(study, rng=None, dynamic_fill=dynamic_fill, n_samples=n_samples, noise_seed=noise_seed)
        logits = out.logits.numpy()
        return Prediction(
            study_id=study.id,
            labels=out.labels,
            logits=logits,
            mask=np.argmax(softmax(out.logits, axis=0).data, axis=0).astype(np.int64),
            regressed_taus={label: float(tau) for label, tau in zip(out.labels, out.taus.data)},
            anatomy=out.anatomy.numpy(),
            dynamic={label: rep.numpy() for label, rep in out.dynamic_by_label().items()},
            alpha=out.weights.alpha.numpy(),
            filled_labels=tuple(out.filled_labels),
            spatial=tuple(out.x_d.spatial),
        )

    # -- checkpoints -------------------------------------------------------

    def tensors(self) -> Dict[str, np.ndarray]:
        tensors = self.state_dict()
        tensors[USAGE_KEY] = self.dictionary.usage_counts.astype(np.float32)
        tensors[CLOCK_KEY] = self.clock.to_array()
        return tensors

    def load_tensors(self, tensors: Dict[str, np.ndarray]) -> None:
        self.load_state_dict(tensors)
        if USAGE_KEY in tensors:
            self.dictionary.usage_counts = np.asarray(tensors[USAGE_KEY]).astype(np.int64)
        if CLOCK_KEY in tensors:
            self.clock.load_array(tensors[CLOCK_KEY])


def save_checkpoint(
    model: TardisModel,
    path: Path | str,
    dataset_hash: str = "",
    extra: Optional[Dict] = None,
) -> int:
    header = {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "seed": model.seed,
        "config": config_to_dict(model.config),
        "config_hash": config_hash(model.config),
        "dataset_hash": dataset_hash,
        "topology": {
            "channels": model.config.train.channels,
            "latent_channels": model.config.train.latent_channels,
            "dictionary_size": model.config.train.dictionary_size,
            "image_size": model.config.phantom.image_size,
            "parameters": model.parameter_count(),
        },
    }
    header.update(extra or {})
    written = write_checkpoint(path, model.tensors(), header)
    logger.info("Checkpoint écrit : %s (%d octets).", path, written)
    return written


def load_checkpoint(path: Path | str) -> Tuple[TardisModel, Dict]:
    tensors, header = read_checkpoint(path)
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} n'est pas un checkpoint de ce projet.")
    config = config_from_dict(header["config"])
    model = TardisModel(config, seed=header.get("seed"))
    model.load_tensors(tensors)
    return model, header
