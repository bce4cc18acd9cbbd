"""### Assemblage adaptatif

Un petit réseau partagé note chaque représentation (anatomie puis une
représentation dynamique par phase) à chaque position ; un softmax sur l'axe
des représentations donne les poids α, et la fusion est la somme pondérée.
La sortie garde la même forme quel que soit le nombre de phases.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

from numcore import Linear, Module, ShapeError, Tensor, relu, softmax, stack, sum_
from tardfile import write_volume


@dataclass
class AssemblyWeights:
    """α de forme (N+1, K) ; chaque colonne est un point du simplexe."""

    alpha: Tensor

    @property
    def count(self) -> int:
        return self.alpha.shape[0]


class AssemblyScorer(Module):
    def __init__(self, channels: int, rng: np.random.Generator) -> None:
        self.hidden = Linear(channels, max(channels // 2, 1), rng)
        self.output = Linear(max(channels // 2, 1), 1, rng)

    def __call__(self, rows: Tensor) -> Tensor:
        return self.output(relu(self.hidden(rows)))


def _stacked(reps: Sequence[Tensor]) -> Tensor:
    if not reps:
        raise ValueError("Assemblage impossible : liste de représentations vide.")
    shapes = {tuple(rep.shape) for rep in reps}
    if len(shapes) != 1 or len(next(iter(shapes))) != 2:
        raise ShapeError(f"Représentations (C, K) de même forme attendues, reçu {sorted(shapes)}.")
    return stack(list(reps), axis=0)


def compute_weights(reps: Sequence[Tensor], scorer: AssemblyScorer) -> AssemblyWeights:
    stacked = _stacked(reps)
    m, c, k = stacked.shape
    rows = stacked.transpose(0, 2, 1).reshape(m * k, c)
    scores = scorer(rows).reshape(m, k)
    return AssemblyWeights(softmax(scores, axis=0))


def fuse(
    reps: Sequence[Tensor],
    weights: AssemblyWeights,
    spatial: Optional[Tuple[int, int]] = None,
) -> Tensor:
    """Σ_m α_m(p)·X̂_m(p) ; forme (1, C, K), ou (1, C, H', W') si `spatial` est donné."""

    stacked = _stacked(reps)
    m, c, k = stacked.shape
    if weights.alpha.shape != (m, k):
        raise ShapeError(f"{m} représentations pour des poids de forme {weights.alpha.shape}.")
    fused = sum_(stacked * weights.alpha.reshape(m, 1, k), axis=0)
    if spatial is None:
        return fused.reshape(1, c, k)
    height, width = spatial
    return fused.reshape(1, c, height, width)


def export_weight_maps(weights: AssemblyWeights, spatial: Tuple[int, int], path: Path | str) -> Path:
    """Écrire les cartes α (N+1, H', W') dans un volume TARD."""

    height, width = spatial
    path = Path(path)
    write_volume(path, weights.alpha.data.reshape(weights.count, height, width))
    return path
