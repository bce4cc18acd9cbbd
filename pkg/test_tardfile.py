"""### Tests du conteneur binaire TARD"""

from __future__ import annotations

import struct

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from tardfile import MAGIC, ContainerError, read_checkpoint, read_volume, write_checkpoint, write_volume


def test_volume_disposition_octets(tmp_path):
    array = np.arange(6, dtype=np.float32).reshape(2, 3)
    path = tmp_path / "v.tard"
    size = write_volume(path, array)
    raw = path.read_bytes()
    assert size == len(raw) == 4 + 2 + 4 + 8 + 24
    assert raw[:4] == MAGIC
    assert struct.unpack("<H", raw[4:6]) == (1,)
    assert struct.unpack("<III", raw[6:18]) == (2, 2, 3)
    assert_array_equal(read_volume(path), array)


def test_volume_tronque(tmp_path):
    path = tmp_path / "v.tard"
    write_volume(path, np.ones((4, 4)))
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(ContainerError):
        read_volume(path)


def test_volume_mauvaise_signature(tmp_path):
    path = tmp_path / "v.tard"
    path.write_bytes(b"NOPE" + b"\x00" * 20)
    with pytest.raises(ContainerError):
        read_volume(path)


def test_volume_octets_excedentaires(tmp_path):
    path = tmp_path / "v.tard"
    write_volume(path, np.ones(3))
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(ContainerError):
        read_volume(path)


def test_checkpoint_deterministe_et_ordre(tmp_path):
    tensors = {"b": np.ones((2, 2)), "a": np.zeros(3)}
    header = {"seed": 7, "config": {"z": 1, "a": 2}}
    first, second = tmp_path / "1.tard", tmp_path / "2.tard"
    write_checkpoint(first, tensors, header)
    write_checkpoint(second, tensors, dict(reversed(list(header.items()))))
    assert first.read_bytes() == second.read_bytes()

    loaded, loaded_header = read_checkpoint(first)
    assert list(loaded) == ["b", "a"]
    assert loaded_header == header
    assert loaded["b"].dtype == np.float32


def test_checkpoint_refuse_un_volume(tmp_path):
    path = tmp_path / "v.tard"
    write_volume(path, np.ones((1, 2, 2)))
    with pytest.raises(ContainerError):
        read_checkpoint(path)


def test_lecture_fichier_absent(tmp_path):
    with pytest.raises(OSError):
        read_volume(tmp_path / "absent.tard")
