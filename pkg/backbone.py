"""### Encodeur partagé, projecteurs et décodeur de segmentation

Toutes les phases d'une étude passent par le même encodeur convolutif
(trois blocs de pas 2 : 48 → 24 → 12 → 6). Deux projecteurs 1×1 séparent
ensuite la carte de caractéristiques en une grille de jetons statiques et une
grille de jetons dynamiques, aplaties en N×C×K (K = H'·W'). Le décodeur
remonte à la résolution d'origine par convolutions transposées, avec une
seule connexion de saut depuis le premier bloc de l'encodeur.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from numcore import (
    Conv2d,
    ConvTranspose2d,
    Module,
    ShapeError,
    Tensor,
    concat,
    relu,
)

logger = logging.getLogger(__name__)

N_SEG_CLASSES = 3
MAX_MODALITIES = 4


@dataclass
class TokenGrid:
    """Jetons aplatis (N, C, K) et dimensions spatiales (H', W')."""

    tokens: Tensor
    spatial: Tuple[int, int]
    modality_taus: Optional[Tuple[float, ...]] = None

    def __post_init__(self) -> None:
        if self.tokens.ndim != 3:
            raise ShapeError(f"TokenGrid attend des jetons (N, C, K), forme reçue {self.tokens.shape}.")
        height, width = self.spatial
        if self.tokens.shape[2] != height * width:
            raise ShapeError(f"K = {self.tokens.shape[2]} différent de H'·W' = {height * width}.")
        if self.tokens.shape[0] < 1:
            raise ShapeError("TokenGrid vide : au moins une modalité est requise.")

    @property
    def n_modalities(self) -> int:
        return self.tokens.shape[0]

    @property
    def channels(self) -> int:
        return self.tokens.shape[1]

    @property
    def positions(self) -> int:
        return self.tokens.shape[2]

    def modality(self, index: int) -> Tensor:
        return self.tokens[index]

    def unflatten(self) -> Tensor:
        height, width = self.spatial
        return self.tokens.reshape(self.n_modalities, self.channels, height, width)

    @classmethod
    def from_maps(cls, maps: Tensor, taus: Optional[Sequence[float]] = None) -> "TokenGrid":
        n, c, height, width = maps.shape
        return cls(
            maps.reshape(n, c, height * width),
            (height, width),
            tuple(taus) if taus is not None else None,
        )


def stack_images(images: Sequence[np.ndarray]) -> np.ndarray:
    """Empiler des images (1, H, W) ou (H, W) en un tableau (N, 1, H, W)."""

    if not 1 <= len(images) <= MAX_MODALITIES:
        raise ShapeError(f"De 1 à {MAX_MODALITIES} modalités attendues, {len(images)} reçues.")
    arrays = [np.asarray(image, dtype=np.float32) for image in images]
    shapes = {array.shape[-2:] for array in arrays}
    if len(shapes) != 1 or any(array.size != int(np.prod(array.shape[-2:])) for array in arrays):
        raise ShapeError(f"Images de formes incohérentes : {[array.shape for array in arrays]}.")
    height, width = shapes.pop()
    return np.stack([array.reshape(1, height, width) for array in arrays])


class Backbone(Module):
    """Encodeur partagé, paire de projecteurs et décodeur de segmentation."""

    def __init__(self, rng: np.random.Generator, channels: int = 32, image_size: int = 48) -> None:
        if image_size % 8:
            raise ShapeError(f"La taille d'image doit être multiple de 8, reçu {image_size}.")
        first, second = max(channels // 4, 1), max(channels // 2, 1)
        self.channels = channels
        self.image_size = image_size
        self.latent_size = image_size // 8
        self.skip_channels = first

        self.enc1 = Conv2d(1, first, 3, rng, stride=2, padding=1)
        self.enc2 = Conv2d(first, second, 3, rng, stride=2, padding=1)
        self.enc3 = Conv2d(second, channels, 3, rng, stride=2, padding=1)
        self.static_projector = Conv2d(channels, channels, 1, rng)
        self.dynamic_projector = Conv2d(channels, channels, 1, rng)

        self.up1 = ConvTranspose2d(channels, second, 3, rng)
        self.up2 = ConvTranspose2d(second, first, 3, rng)
        self.merge = Conv2d(2 * first, first, 3, rng, padding=1)
        self.up3 = ConvTranspose2d(first, first, 3, rng)
        self.head = Conv2d(first, N_SEG_CLASSES, 1, rng)

        logger.debug("Backbone : %d paramètres.", self.parameter_count())

    def encode_features(self, images: Sequence[np.ndarray]) -> Tuple[Tensor, Tensor]:
        """Caractéristiques (N, C, H', W') et sortie du premier bloc (N, C/4, H/2, W/2)."""

        batch = stack_images(images)
        if batch.shape[-1] != self.image_size or batch.shape[-2] != self.image_size:
            raise ShapeError(f"Images {batch.shape[-2:]} au lieu de {self.image_size}×{self.image_size}.")
        first = relu(self.enc1(Tensor(batch)))
        second = relu(self.enc2(first))
        features = relu(self.enc3(second))
        return features, first

    def encode(self, images: Sequence[np.ndarray]) -> Tensor:
        features, _ = self.encode_features(images)
        return features

    def project_split(self, features: Tensor) -> Tuple[TokenGrid, TokenGrid]:
        """Projeter vers les jetons statiques X_s et dynamiques X_d (même entrée, poids distincts)."""

        return (
            TokenGrid.from_maps(self.static_projector(features)),
            TokenGrid.from_maps(self.dynamic_projector(features)),
        )

    def decode_segmentation(self, fused: Tensor, skip: Optional[Tensor] = None) -> Tensor:
        """Logits (3, H, W) à partir de la représentation fusionnée (1, C, H', W')."""

        expected = (1, self.channels, self.latent_size, self.latent_size)
        if tuple(fused.shape) != expected:
            raise ShapeError(f"Représentation fusionnée {fused.shape} au lieu de {expected}.")
        half = self.image_size // 2
        if skip is None:
            skip = Tensor(np.zeros((1, self.skip_channels, half, half), dtype=np.float32))
        elif tuple(skip.shape) != (1, self.skip_channels, half, half):
            raise ShapeError(f"Connexion de saut {skip.shape} incompatible.")

        up = relu(self.up1(fused))
        up = relu(self.up2(up))
        up = relu(self.merge(concat([up, skip], axis=1)))
        up = relu(self.up3(up))
        logits = self.head(up)
        return logits.reshape(N_SEG_CLASSES, self.image_size, self.image_size)
