"""### Chemin agnostique à la modalité

Les jetons statiques de chaque phase sont quantifiés sur un dictionnaire
d'intégration appris (plus proche voisin euclidien, égalités tranchées vers
l'indice le plus bas). Le gradient traverse la quantification par
estimateur direct (straight-through). Une perte de cohérence rapproche les
représentations quantifiées des différentes phases d'une même étude, et leur
moyenne forme l'anatomie X̂_s.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from backbone import TokenGrid
from numcore import Module, Parameter, ShapeError, Tensor, matmul, mean, mse, stop_gradient, straight_through

logger = logging.getLogger(__name__)


class DictionaryState(Module):
    """Dictionnaire M×C et compteurs d'utilisation depuis la dernière remise à zéro."""

    def __init__(self, size: int, channels: int, rng: np.random.Generator) -> None:
        bound = 1.0 / np.sqrt(channels)
        self.entries = Parameter(rng.uniform(-bound, bound, size=(size, channels)).astype(np.float32))
        self.usage_counts = np.zeros(size, dtype=np.int64)

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def channels(self) -> int:
        return self.entries.shape[1]

    def reset_usage(self) -> None:
        self.usage_counts = np.zeros(self.size, dtype=np.int64)


@dataclass
class QuantizeResult:
    """Sortie de la quantification.

    `tokens` porte le gradient vers les jetons de l'encodeur (straight-through),
    `codes` porte le gradient vers les entrées du dictionnaire.
    """

    tokens: TokenGrid
    codes: TokenGrid
    indices: np.ndarray


def nearest_indices(flat_tokens: np.ndarray, entries: np.ndarray) -> np.ndarray:
    """Indice de l'entrée la plus proche pour chaque ligne (premier minimum)."""

    tokens64 = np.asarray(flat_tokens, dtype=np.float64)
    entries64 = np.asarray(entries, dtype=np.float64)
    distances = np.sum((tokens64[:, None, :] - entries64[None, :, :]) ** 2, axis=-1)
    return np.argmin(distances, axis=1)


def quantize(x_s: TokenGrid, dictionary: DictionaryState) -> QuantizeResult:
    n, c, k = x_s.tokens.shape
    if c != dictionary.channels:
        raise ShapeError(f"Jetons à {c} canaux pour un dictionnaire à {dictionary.channels} canaux.")

    flat = x_s.tokens.data.transpose(0, 2, 1).reshape(n * k, c)
    indices = nearest_indices(flat, dictionary.entries.data)
    np.add.at(dictionary.usage_counts, indices, 1)

    one_hot = np.zeros((n * k, dictionary.size), dtype=np.float32)
    one_hot[np.arange(n * k), indices] = 1.0
    gathered = matmul(Tensor(one_hot), dictionary.entries)
    codes = gathered.reshape(n, k, c).transpose(0, 2, 1)
    return QuantizeResult(
        tokens=TokenGrid(straight_through(x_s.tokens, codes), x_s.spatial, x_s.modality_taus),
        codes=TokenGrid(codes, x_s.spatial, x_s.modality_taus),
        indices=indices.reshape(n, k),
    )


def consistency_loss(x_hat_s: TokenGrid) -> Tensor:
    """Moyenne, sur les paires non ordonnées de modalités, de l'écart quadratique moyen."""

    n = x_hat_s.n_modalities
    if n < 2:
        return Tensor(0.0)
    pair_terms = [
        mse(x_hat_s.modality(i), x_hat_s.modality(j)) for i, j in itertools.combinations(range(n), 2)
    ]
    total = pair_terms[0]
    for term in pair_terms[1:]:
        total = total + term
    return total / float(len(pair_terms))


def mean_anatomy(x_hat_s: TokenGrid) -> Tensor:
    """Anatomie moyenne (C, K) sur l'axe des modalités."""

    return mean(x_hat_s.tokens, axis=0)


@dataclass
class AgnosticTerms:
    consistency: Tensor
    codebook: Tensor
    commitment: Tensor

    @property
    def total(self) -> Tensor:
        return self.consistency + self.codebook + self.commitment


def agnostic_loss(
    x_s: TokenGrid,
    x_hat_s: TokenGrid,
    beta: float = 0.25,
    codes: Optional[TokenGrid] = None,
) -> AgnosticTerms:
    """Cohérence + ‖sg[x̂_s] − x_s‖² + β·‖x̂_s − sg[x_s]‖² (moyennes).

    `x_hat_s` alimente la cohérence ; `codes` (par défaut `x_hat_s`) fournit
    les valeurs du dictionnaire pour les deux termes de quantification.
    """

    if x_s.tokens.shape != x_hat_s.tokens.shape:
        raise ShapeError(f"Formes différentes : {x_s.tokens.shape} et {x_hat_s.tokens.shape}.")
    dictionary_side = (codes or x_hat_s).tokens
    return AgnosticTerms(
        consistency=consistency_loss(x_hat_s),
        codebook=mse(stop_gradient(dictionary_side), x_s.tokens),
        commitment=mse(dictionary_side, stop_gradient(x_s.tokens)) * beta,
    )


def reseed_dead_codes(dictionary: DictionaryState, token_pool: np.ndarray, rng: np.random.Generator) -> int:
    """Remplacer les entrées inutilisées depuis la remise à zéro par des jetons tirés au hasard."""

    dead = np.flatnonzero(dictionary.usage_counts == 0)
    if dead.size == 0 or token_pool.size == 0:
        return 0
    picks = rng.integers(0, token_pool.shape[0], size=dead.size)
    entries = dictionary.entries.data.copy()
    entries[dead] = token_pool[picks]
    dictionary.entries.data = entries.astype(np.float32)
    logger.info("%d entrées mortes du dictionnaire réinitialisées.", dead.size)
    return int(dead.size)


def usage_histogram(dictionary: DictionaryState) -> Dict:
    counts = dictionary.usage_counts
    return {
        "size": dictionary.size,
        "total": int(counts.sum()),
        "used_entries": int(np.count_nonzero(counts)),
        "counts": counts.tolist(),
    }


def write_usage_histogram(dictionary: DictionaryState, path: Path | str) -> Path:
    path = Path(path)
    path.write_text(json.dumps(usage_histogram(dictionary), indent=2) + "\n", encoding="utf-8")
    return path
