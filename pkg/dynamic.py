"""### Chemin spécifique à la modalité

## Contenu
- `TauRegressor` : régression d'un temps relatif τ ∈ (0, 1) par phase,
  à partir des jetons dynamiques moyennés sur les positions.
- `ranking_loss` : contrainte d'ordre (marge) entre les τ des phases rangées
  dans l'ordre d'acquisition.
- `HCVAE` : autoencodeur variationnel conditionnel hémodynamique. Le
  postérieur et le décodeur voient, à chaque position, le jeton dynamique,
  le jeton d'anatomie moyenne X̂_s et τ.
- `PhaseClock` : moyenne glissante des τ régressés par étiquette de phase,
  utilisée pour les phases absentes à l'inférence.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from backbone import TokenGrid
from configuration import PHASE_LABELS
from numcore import (
    Linear,
    Module,
    ShapeError,
    Tensor,
    as_tensor,
    clip,
    concat,
    exp,
    gaussian_sample,
    mean,
    mse,
    relu,
    sigmoid,
    sum_,
)

logger = logging.getLogger(__name__)

LOG_VAR_BOUNDS = (-10.0, 10.0)


@dataclass
class Condition:
    """Condition c_i = (anatomie moyenne, τ_i) partagée par toutes les positions."""

    anatomy: Tensor
    taus: np.ndarray
    spatial: Tuple[int, int]

    def __post_init__(self) -> None:
        self.taus = np.asarray(self.taus, dtype=np.float64).reshape(-1)
        if self.anatomy.ndim != 2:
            raise ShapeError(f"Anatomie (C, K) attendue, forme reçue {self.anatomy.shape}.")
        if self.anatomy.shape[1] != self.spatial[0] * self.spatial[1]:
            raise ShapeError(f"Anatomie à {self.anatomy.shape[1]} positions pour une grille {self.spatial}.")
        if self.taus.size == 0:
            raise ValueError("Condition sans τ : au moins une modalité est requise.")
        if np.any(self.taus < 0.0) or np.any(self.taus > 1.0):
            raise ValueError(f"τ hors de [0, 1] : {self.taus.tolist()}.")

    @property
    def n_modalities(self) -> int:
        return int(self.taus.size)


@dataclass
class GaussianPosterior:
    mu: Tensor
    log_var: Tensor
    z: Tensor
    noise: np.ndarray = field(repr=False)


class TauRegressor(Module):
    """Moyenne sur K, puis C → C/2 → 1 et sigmoïde."""

    def __init__(self, channels: int, rng: np.random.Generator) -> None:
        self.hidden = Linear(channels, max(channels // 2, 1), rng)
        self.output = Linear(max(channels // 2, 1), 1, rng)

    def __call__(self, x_d: TokenGrid) -> Tensor:
        pooled = mean(x_d.tokens, axis=2)
        return sigmoid(self.output(relu(self.hidden(pooled)))).reshape(x_d.n_modalities)


def regress_tau(x_d: TokenGrid, regressor: TauRegressor) -> Tensor:
    """τ (N,) pour chaque modalité, strictement dans (0, 1)."""

    return regressor(x_d)


def ranking_loss(taus, margin: float) -> Tensor:
    """(1/|P|) Σ_{j>i} max(0, τ_i − τ_j + m), τ rangés dans l'ordre d'acquisition."""

    if margin <= 0:
        raise ValueError(f"La marge doit être strictement positive, reçu {margin}.")
    taus = as_tensor(taus)
    n = taus.size
    if n < 2:
        return Tensor(0.0)
    column = taus.reshape(n, 1)
    row = taus.reshape(1, n)
    upper = np.triu(np.ones((n, n)), k=1)
    hinge = relu(column - row + margin) * Tensor(upper)
    return sum_(hinge) / float(upper.sum())


def reparameterize(mu: Tensor, log_var: Tensor, eps: np.ndarray) -> Tensor:
    if tuple(mu.shape) != tuple(log_var.shape) or tuple(mu.shape) != tuple(np.shape(eps)):
        raise ShapeError(f"Formes différentes : μ {mu.shape}, log σ² {log_var.shape}, ε {np.shape(eps)}.")
    return gaussian_sample(mu, log_var, eps)


def kl_standard_normal(mu: Tensor, log_var: Tensor) -> Tensor:
    """KL(𝒩(μ, σ²) ‖ 𝒩(0, I)), moyenne sur les éléments."""

    mu, log_var = as_tensor(mu), as_tensor(log_var)
    return mean((mu * mu + exp(log_var) - 1.0 - log_var) * 0.5)


class HCVAE(Module):
    """Postérieur q(z | x_d, c) et décodeur p(x_d | z, c), appliqués position par position."""

    def __init__(
        self,
        channels: int,
        latent_channels: int,
        rng: np.random.Generator,
        hidden: int = 64,
    ) -> None:
        self.channels = channels
        self.latent_channels = latent_channels
        self.enc_hidden = Linear(2 * channels + 1, hidden, rng)
        self.enc_mu = Linear(hidden, latent_channels, rng)
        self.enc_log_var = Linear(hidden, latent_channels, rng)
        self.dec_hidden = Linear(latent_channels + channels + 1, hidden, rng)
        self.dec_out = Linear(hidden, channels, rng)

    def _condition_rows(self, cond: Condition, positions: int) -> Tuple[Tensor, Tensor]:
        if cond.anatomy.shape[0] != self.channels:
            raise ShapeError(f"Anatomie à {cond.anatomy.shape[0]} canaux au lieu de {self.channels}.")
        anatomy_rows = cond.anatomy.transpose(1, 0)
        tiled = concat([anatomy_rows] * cond.n_modalities, axis=0)
        tau_column = Tensor(np.repeat(cond.taus, positions)[:, None])
        return tiled, tau_column

    @staticmethod
    def _rows(tokens: Tensor) -> Tensor:
        n, c, k = tokens.shape
        return tokens.transpose(0, 2, 1).reshape(n * k, c)

    @staticmethod
    def _grid(rows: Tensor, n: int, k: int) -> Tensor:
        return rows.reshape(n, k, rows.shape[1]).transpose(0, 2, 1)

    def encode(self, x_d: TokenGrid, cond: Condition, noise: Optional[np.ndarray] = None) -> GaussianPosterior:
        n, c, k = x_d.tokens.shape
        if c != self.channels or n != cond.n_modalities or k != cond.anatomy.shape[1]:
            raise ShapeError(
                f"Jetons dynamiques {x_d.tokens.shape} incompatibles avec la condition "
                f"({cond.n_modalities} τ, anatomie {cond.anatomy.shape})."
            )
        anatomy_rows, tau_column = self._condition_rows(cond, k)
        hidden = relu(self.enc_hidden(concat([self._rows(x_d.tokens), anatomy_rows, tau_column], axis=1)))
        mu = self._grid(self.enc_mu(hidden), n, k)
        log_var = self._grid(clip(self.enc_log_var(hidden), *LOG_VAR_BOUNDS), n, k)
        if noise is None:
            noise = np.zeros(mu.shape)
        return GaussianPosterior(mu, log_var, reparameterize(mu, log_var, noise), np.asarray(noise))

    def decode(self, z: Tensor, cond: Condition) -> TokenGrid:
        n, cz, k = z.shape
        if cz != self.latent_channels or n != cond.n_modalities or k != cond.anatomy.shape[1]:
            raise ShapeError(f"Latent {z.shape} incompatible avec C_z = {self.latent_channels}.")
        anatomy_rows, tau_column = self._condition_rows(cond, k)
        hidden = relu(self.dec_hidden(concat([self._rows(z), anatomy_rows, tau_column], axis=1)))
        return TokenGrid(self._grid(self.dec_out(hidden), n, k), cond.spatial, tuple(cond.taus.tolist()))


def hcvae_encode(
    hcvae: HCVAE, x_d: TokenGrid, cond: Condition, noise: Optional[np.ndarray] = None
) -> GaussianPosterior:
    return hcvae.encode(x_d, cond, noise)


def hcvae_decode(hcvae: HCVAE, z: Tensor, cond: Condition) -> TokenGrid:
    return hcvae.decode(z, cond)


@dataclass
class SpecificTerms:
    """Termes du chemin spécifique ; `kl` est déjà multiplié par λ."""

    ranking: Tensor
    reconstruction: Tensor
    kl: Tensor

    @property
    def total(self) -> Tensor:
        return self.ranking + self.reconstruction + self.kl


def specific_loss(
    x_d: TokenGrid,
    x_hat_d: TokenGrid,
    posterior: GaussianPosterior,
    taus,
    lam: float = 1.0,
    margin: float = 0.05,
    use_ranking: bool = True,
) -> SpecificTerms:
    if x_d.tokens.shape != x_hat_d.tokens.shape:
        raise ShapeError(f"Reconstruction {x_hat_d.tokens.shape} au lieu de {x_d.tokens.shape}.")
    return SpecificTerms(
        ranking=ranking_loss(taus, margin) if use_ranking else Tensor(0.0),
        reconstruction=mse(x_hat_d.tokens, x_d.tokens),
        kl=kl_standard_normal(posterior.mu, posterior.log_var) * lam,
    )


def sample_prior_dynamic(
    hcvae: HCVAE,
    cond: Condition,
    noise_seed: Optional[int] = None,
    deterministic: bool = True,
    n_samples: int = 1,
) -> TokenGrid:
    """Décoder z ~ 𝒩(0, I) (z = 0 en mode déterministe) sous la condition donnée.

    En mode stochastique, `n_samples` tirages sont décodés puis moyennés.
    """

    shape = (cond.n_modalities, hcvae.latent_channels, cond.anatomy.shape[1])
    if deterministic:
        return hcvae.decode(Tensor(np.zeros(shape)), cond)
    if n_samples < 1:
        raise ValueError(f"n_samples doit valoir au moins 1, reçu {n_samples}.")
    rng = np.random.default_rng(noise_seed)
    decoded = [hcvae.decode(Tensor(rng.standard_normal(shape)), cond).tokens for _ in range(n_samples)]
    total = decoded[0]
    for tokens in decoded[1:]:
        total = total + tokens
    return TokenGrid(total / float(n_samples), cond.spatial, tuple(cond.taus.tolist()))


class PhaseClock:
    """τ de référence par étiquette de phase, suivi par moyenne glissante."""

    def __init__(self, nominal: Mapping[str, float], momentum: float = 0.9) -> None:
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum doit appartenir à [0, 1), reçu {momentum}.")
        missing = [label for label in PHASE_LABELS if label not in nominal]
        if missing:
            raise KeyError(f"τ nominal absent pour : {', '.join(missing)}.")
        self.momentum = momentum
        self.taus: Dict[str, float] = {label: float(nominal[label]) for label in PHASE_LABELS}

    def update(self, labels: Sequence[str], regressed: Sequence[float]) -> None:
        for label, tau in zip(labels, regressed):
            self.taus[label] = self.momentum * self.taus[label] + (1.0 - self.momentum) * float(tau)

    def tau_for(self, label: str) -> float:
        try:
            return self.taus[label]
        except KeyError:
            raise KeyError(f"Étiquette de phase inconnue : {label}.") from None

    def to_array(self) -> np.ndarray:
        return np.array([self.taus[label] for label in PHASE_LABELS], dtype=np.float32)

    def load_array(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if values.size != len(PHASE_LABELS):
            raise ShapeError(f"Horloge de phase : {values.size} valeurs au lieu de {len(PHASE_LABELS)}.")
        self.taus = {label: float(v) for label, v in zip(PHASE_LABELS, values)}
        logger.debug("Horloge de phase chargée : %s", self.taus)
