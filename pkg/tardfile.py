"""### Conteneur binaire "TARD"

Format commun aux volumes du jeu de données, aux cartes de poids
d'assemblage et aux checkpoints.

- Volume : `b"TARD"`, u16 version (=1), u32 rang, u32 dimensions, charge
  utile float32 little-endian en ordre ligne par ligne.
- Checkpoint : `b"TARD"`, u16 version, u16 type (=2), u32 longueur de
  l'en-tête JSON, en-tête JSON UTF-8 (clés triées), u32 nombre de tenseurs,
  puis pour chaque tenseur : u32 longueur du nom, nom UTF-8, u32 rang,
  u32 dimensions, charge utile float32.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Dict, Tuple

import numpy as np

MAGIC = b"TARD"
VERSION = 1
CHECKPOINT_KIND = 2


class ContainerError(ValueError):
    """Fichier TARD illisible (magie, version ou longueur incohérente)."""


def _encode_array(array: np.ndarray) -> bytes:
    values = np.ascontiguousarray(array, dtype="<f4")
    header = struct.pack("<I", values.ndim) + struct.pack(f"<{values.ndim}I", *values.shape)
    return header + values.tobytes(order="C")


class _Reader:
    def __init__(self, payload: bytes, path: Path) -> None:
        self.payload = payload
        self.path = path
        self.offset = 0

    def take(self, count: int) -> bytes:
        end = self.offset + count
        if end > len(self.payload):
            raise ContainerError(f"Fichier tronqué : {self.path} (octet {self.offset}, {count} attendus).")
        chunk = self.payload[self.offset : end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self) -> np.ndarray:
        (rank,) = self.unpack("<I")
        dims = self.unpack(f"<{rank}I") if rank else ()
        count = int(np.prod(dims)) if dims else 1
        raw = self.take(4 * count)
        return np.frombuffer(raw, dtype="<f4").reshape(dims).astype(np.float32)

    def check_magic(self) -> int:
        if self.take(4) != MAGIC:
            raise ContainerError(f"Signature TARD absente : {self.path}.")
        (version,) = self.unpack("<H")
        if version != VERSION:
            raise ContainerError(f"Version {version} non prise en charge : {self.path}.")
        return version


def _read_bytes(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as exc:
        raise OSError(f"Lecture impossible : {path} ({exc.strerror}).") from exc


def _write_bytes(path: Path, payload: bytes) -> int:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(payload)
    except OSError as exc:
        raise OSError(f"Écriture impossible : {path} ({exc.strerror}).") from exc
    return len(payload)


def write_volume(path: Path | str, array: np.ndarray) -> int:
    """Écrire un volume ; renvoie le nombre d'octets écrits."""

    payload = MAGIC + struct.pack("<H", VERSION) + _encode_array(np.asarray(array))
    return _write_bytes(Path(path), payload)


def read_volume(path: Path | str) -> np.ndarray:
    path = Path(path)
    reader = _Reader(_read_bytes(path), path)
    reader.check_magic()
    array = reader.array()
    if reader.offset != len(reader.payload):
        raise ContainerError(f"Octets excédentaires après le volume : {path}.")
    return array


def write_checkpoint(path: Path | str, tensors: Dict[str, np.ndarray], header: Dict) -> int:
    """Écrire des tenseurs nommés et un en-tête JSON (sortie déterministe)."""

    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [
        MAGIC,
        struct.pack("<HH", VERSION, CHECKPOINT_KIND),
        struct.pack("<I", len(header_bytes)),
        header_bytes,
        struct.pack("<I", len(tensors)),
    ]
    for name, array in tensors.items():
        encoded_name = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded_name)) + encoded_name)
        parts.append(_encode_array(np.asarray(array)))
    return _write_bytes(Path(path), b"".join(parts))


def read_checkpoint(path: Path | str) -> Tuple[Dict[str, np.ndarray], Dict]:
    path = Path(path)
    reader = _Reader(_read_bytes(path), path)
    reader.check_magic()
    (kind,) = reader.unpack("<H")
    if kind != CHECKPOINT_KIND:
        raise ContainerError(f"Le fichier n'est pas un checkpoint (type {kind}) : {path}.")
    (header_length,) = reader.unpack("<I")
    try:
        header = json.loads(reader.take(header_length).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ContainerError(f"En-tête JSON invalide : {path}.") from exc

    (count,) = reader.unpack("<I")
    tensors: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_length,) = reader.unpack("<I")
        name = reader.take(name_length).decode("utf-8")
        tensors[name] = reader.array()
    return tensors, header
