"""### Désintrication par borne supérieure contrastive (CLUB)

Un réseau auxiliaire q(y | x) (gaussienne diagonale) est ajusté par
maximum de vraisemblance. La borne s'obtient en comparant la
vraisemblance des paires appariées à celle de toutes les paires croisées
du lot ; la moyenne sur les paires croisées se calcule en forme close à
partir des deux premiers moments de y.

Les représentations sont moyennées sur les positions avant estimation.
Deux estimateurs sont entretenus : anatomie ↔ dynamique et dynamique ↔
dynamique. Les paires de toutes les études du lot sont regroupées par type.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from numcore import (
    AdamW,
    Linear,
    Module,
    ShapeError,
    Tensor,
    as_tensor,
    backward,
    clip,
    exp,
    frozen,
    mean,
    relu,
    stack,
    sum_,
)

logger = logging.getLogger(__name__)

LOG_VAR_BOUNDS = (-10.0, 10.0)
PAIR_KINDS = ("static_dynamic", "dynamic_dynamic")


class ClubEstimator(Module):
    """Réseau variationnel : deux couches cachées, têtes μ et log σ²."""

    def __init__(
        self,
        x_dim: int,
        y_dim: int,
        rng: np.random.Generator,
        hidden: int = 64,
        lr: float = 1e-3,
    ) -> None:
        self.x_dim = x_dim
        self.y_dim = y_dim
        self.layer1 = Linear(x_dim, hidden, rng)
        self.layer2 = Linear(hidden, hidden, rng)
        self.mu_head = Linear(hidden, y_dim, rng)
        self.log_var_head = Linear(hidden, y_dim, rng)
        self.optimizer = AdamW(self.parameters(), lr=lr, weight_decay=0.0)

    def __call__(self, xs: Tensor) -> Tuple[Tensor, Tensor]:
        if xs.ndim != 2 or xs.shape[1] != self.x_dim:
            raise ShapeError(f"Entrée (B, {self.x_dim}) attendue, forme reçue {xs.shape}.")
        hidden = relu(self.layer2(relu(self.layer1(xs))))
        return self.mu_head(hidden), clip(self.log_var_head(hidden), *LOG_VAR_BOUNDS)


def _paired(xs, ys) -> Tuple[Tensor, Tensor]:
    xs, ys = as_tensor(xs), as_tensor(ys)
    if xs.ndim == 1:
        xs = xs.reshape(xs.shape[0], 1)
    if ys.ndim == 1:
        ys = ys.reshape(ys.shape[0], 1)
    if xs.shape[0] != ys.shape[0]:
        raise ShapeError(f"Lots de tailles différentes : {xs.shape[0]} et {ys.shape[0]}.")
    return xs, ys


def log_likelihood(est: ClubEstimator, xs, ys) -> Tensor:
    """Moyenne sur le lot de log q(y_i | x_i)."""

    xs, ys = _paired(xs, ys)
    mu, log_var = est(xs)
    diff = ys - mu
    per_dim = (log_var + diff * diff * exp(log_var * -1.0) + float(np.log(2.0 * np.pi))) * -0.5
    return mean(sum_(per_dim, axis=1))


def club_fit_step(est: ClubEstimator, xs, ys) -> float:
    """Un pas de montée sur la vraisemblance ; renvoie la vraisemblance moyenne avant le pas."""

    xs, ys = _paired(Tensor(as_tensor(xs).data), Tensor(as_tensor(ys).data))
    est.optimizer.zero_grad()
    likelihood = log_likelihood(est, xs, ys)
    backward(likelihood * -1.0)
    est.optimizer.step()
    return likelihood.item()


def club_estimate(est: ClubEstimator, xs, ys) -> Tensor:
    """mean_i log q(y_i|x_i) − mean_{i,j} log q(y_j|x_i).

    Les termes constants et les log σ² se compensent ; le second terme
    utilise E_j[y_j] et E_j[y_j²].
    """

    xs, ys = _paired(xs, ys)
    mu, log_var = est(xs)
    precision = exp(log_var * -1.0) * 0.5
    y_mean = mean(ys, axis=0, keepdims=True)
    y_square = mean(ys * ys, axis=0, keepdims=True)
    positive = (ys - mu) * (ys - mu)
    negative = y_square - mu * y_mean * 2.0 + mu * mu
    return mean(sum_((negative - positive) * precision, axis=1))


class DisentangleEstimators(Module):
    def __init__(self, channels: int, rng: np.random.Generator, hidden: int = 64, lr: float = 1e-3) -> None:
        self.static_dynamic = ClubEstimator(channels, channels, rng, hidden=hidden, lr=lr)
        self.dynamic_dynamic = ClubEstimator(channels, channels, rng, hidden=hidden, lr=lr)

    def by_kind(self, kind: str) -> ClubEstimator:
        if kind not in PAIR_KINDS:
            raise KeyError(f"Type de paire inconnu : {kind}.")
        return getattr(self, kind)


def pair_stacks(batch_reps: Sequence[Sequence[Tensor]]) -> Dict[str, Tuple[Tensor, Tensor]]:
    """Regrouper par type les paires non ordonnées de représentations moyennées (C,).

    Chaque élément de `batch_reps` est la liste [anatomie, dyn_1, ..., dyn_N]
    d'une étude ; la première représentation d'une paire sert de x.
    """

    grouped: Dict[str, List[Tuple[Tensor, Tensor]]] = {kind: [] for kind in PAIR_KINDS}
    for reps in batch_reps:
        for i, j in itertools.combinations(range(len(reps)), 2):
            kind = "static_dynamic" if i == 0 else "dynamic_dynamic"
            grouped[kind].append((reps[i], reps[j]))
    return {
        kind: (stack([x for x, _ in pairs]), stack([y for _, y in pairs]))
        for kind, pairs in grouped.items()
        if pairs
    }


@dataclass
class DisentangleTerms:
    static_dynamic: Tensor
    dynamic_dynamic: Tensor
    total: Tensor


def disentangle_loss(batch_reps: Sequence[Sequence[Tensor]], estimators: DisentangleEstimators) -> DisentangleTerms:
    """Moyenne des estimations CLUB des types de paires présents ; 0 sans paire.

    Les estimateurs sont gelés : le gradient n'atteint que les représentations.
    """

    estimates: Dict[str, Tensor] = {kind: Tensor(0.0) for kind in PAIR_KINDS}
    stacks = pair_stacks(batch_reps)
    for kind, (xs, ys) in stacks.items():
        estimator = estimators.by_kind(kind)
        with frozen(estimator):
            estimates[kind] = club_estimate(estimator, xs, ys)
    if not stacks:
        total = Tensor(0.0)
    else:
        total = estimates[next(iter(stacks))]
        for kind in list(stacks)[1:]:
            total = total + estimates[kind]
        total = total / float(len(stacks))
    return DisentangleTerms(estimates["static_dynamic"], estimates["dynamic_dynamic"], total)


def fit_estimators(batch_reps: Sequence[Sequence[Tensor]], estimators: DisentangleEstimators) -> Dict[str, float]:
    """Un pas d'ajustement par type de paire, sur des représentations détachées."""

    likelihoods: Dict[str, float] = {}
    for kind, (xs, ys) in pair_stacks(batch_reps).items():
        likelihoods[kind] = club_fit_step(estimators.by_kind(kind), xs.data, ys.data)
    return likelihoods


def estimate_mutual_information(
    xs: np.ndarray,
    ys: np.ndarray,
    rng: np.random.Generator,
    steps: int = 300,
    hidden: int = 64,
    lr: float = 1e-3,
) -> float:
    """Ajuster un estimateur neuf puis renvoyer la borne CLUB sur tout l'échantillon."""

    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    xs = xs.reshape(len(xs), -1)
    ys = ys.reshape(len(ys), -1)
    est = ClubEstimator(xs.shape[1], ys.shape[1], rng, hidden=hidden, lr=lr)
    for _ in range(steps):
        club_fit_step(est, xs, ys)
    with frozen(est):
        value = club_estimate(est, xs, ys).item()
    logger.debug("Estimation CLUB après %d pas : %.4f", steps, value)
    return value
