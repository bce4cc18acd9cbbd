"""### Suite d'invariants embarquée

Vérifications rapides, sans Pytest, lancées par `tardis selftest` :
softmax, quantification contre recherche exhaustive, estimateur direct,
KL analytique, Dice et AUC contre oracles, contrôles de gradient et
conteneur TARD.
"""

from __future__ import annotations

import logging
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Tuple

import numpy as np

from agnostic import consistency_loss, nearest_indices
from backbone import TokenGrid
from dynamic import kl_standard_normal, ranking_loss
from evaluation import auc_score, dice_score
from numcore import Tensor, backward, check_gradients, conv2d, matmul, mse, softmax, straight_through, sum_
from tardfile import read_checkpoint, read_volume, write_checkpoint, write_volume
from trainer import seg_loss

logger = logging.getLogger(__name__)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class SelftestReport:
    results: List[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(result.passed for result in self.results)

    def lines(self) -> List[str]:
        return [f"[{'ok' if r.passed else 'ÉCHEC'}] {r.name} {r.detail}".rstrip() for r in self.results]


def _softmax(rng: np.random.Generator) -> Tuple[bool, str]:
    logits = Tensor(rng.normal(0.0, 50.0, size=(8, 5)) + 1000.0)
    probs = softmax(logits, axis=1).data
    ok = bool(np.all(np.isfinite(probs)) and np.allclose(probs.sum(axis=1), 1.0, atol=1e-6))
    return ok, ""


def _quantization(rng: np.random.Generator) -> Tuple[bool, str]:
    mismatches = 0
    for _ in range(200):
        entries = rng.normal(size=(16, 4))
        token = rng.normal(size=(1, 4))
        brute = min(range(16), key=lambda i: (float(np.sum((token[0] - entries[i]) ** 2)), i))
        mismatches += int(nearest_indices(token, entries)[0] != brute)
    return mismatches == 0, f"{mismatches} désaccords"


def _straight_through(rng: np.random.Generator) -> Tuple[bool, str]:
    x = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    codes = Tensor(rng.normal(size=(2, 3)))
    quantized = straight_through(x, codes)
    weights = Tensor(rng.normal(size=(2, 3)))
    backward(sum_(quantized * weights))
    return bool(np.array_equal(x.grad, weights.data) and np.array_equal(quantized.data, codes.data)), ""


def _kl() -> Tuple[bool, str]:
    value = kl_standard_normal(Tensor([1.0]), Tensor([0.0])).item()
    return abs(value - 0.5) < 1e-6, f"KL = {value:.8f}"


def _dice_auc(rng: np.random.Generator) -> Tuple[bool, str]:
    failures = 0
    for _ in range(200):
        pred = rng.integers(0, 3, size=(5, 5))
        true = rng.integers(0, 3, size=(5, 5))
        p_set = {tuple(i) for i in np.argwhere(pred == 2)}
        t_set = {tuple(i) for i in np.argwhere(true == 2)}
        expected = 1.0 if not p_set and not t_set else 2 * len(p_set & t_set) / (len(p_set) + len(t_set))
        failures += int(abs(dice_score(pred, true, 2) - expected) > 1e-12)

        scores = rng.integers(0, 5, size=8).astype(float)
        labels = np.array([0, 1] + list(rng.integers(0, 2, size=6)))
        positives, negatives = scores[labels == 1], scores[labels == 0]
        pairs = [(a, b) for a in positives for b in negatives]
        brute = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a, b in pairs) / len(pairs)
        failures += int(abs(auc_score(scores, labels) - brute) > 1e-12)
    example = auc_score([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1])
    return failures == 0 and abs(example - 0.75) < 1e-12, f"{failures} écarts, AUC exemple {example:.4f}"


def _gradients(rng: np.random.Generator) -> Tuple[bool, str]:
    target = Tensor(rng.normal(size=(3, 4)))
    weight = Tensor(rng.normal(size=(2, 1, 3, 3)))
    mask = rng.integers(0, 3, size=(4, 4))
    other = Tensor(rng.normal(size=(1, 4, 6)))
    checks: List[Tuple[str, Callable[[Tensor], Tensor], np.ndarray]] = [
        ("mse", lambda x: mse(x, target), rng.normal(size=(3, 4))),
        ("kl", lambda x: kl_standard_normal(x, x * 0.5), rng.normal(size=(5,))),
        ("classement", lambda x: ranking_loss(x, 0.1), np.array([0.6, 0.2, 0.9])),
        ("conv2d", lambda x: sum_(conv2d(x, weight, padding=1) ** 2), rng.normal(size=(1, 1, 5, 5))),
        ("segmentation", lambda x: seg_loss(x, mask).total, rng.normal(size=(3, 4, 4))),
        (
            "cohérence",
            lambda x: consistency_loss(TokenGrid(x.reshape(2, 4, 3), (1, 3))) + mse(x.reshape(1, 4, 6), other),
            rng.normal(size=(24,)),
        ),
        ("matmul", lambda x: sum_(matmul(x, target) ** 2), rng.normal(size=(2, 3))),
    ]
    worst, failed = 0.0, []
    for name, fn, value in checks:
        report = check_gradients(fn, Tensor(value))
        worst = max(worst, report.max_rel_error)
        if not report.passed:
            failed.append(name)
    return not failed, f"erreur relative max {worst:.2e}" + (f", échecs : {', '.join(failed)}" if failed else "")


def _container(rng: np.random.Generator) -> Tuple[bool, str]:
    array = rng.normal(size=(2, 3, 4)).astype(np.float32)
    with tempfile.TemporaryDirectory() as tmp:
        volume = Path(tmp) / "volume.tard"
        checkpoint = Path(tmp) / "checkpoint.tard"
        write_volume(volume, array)
        write_checkpoint(checkpoint, {"a": array, "b": array[0]}, {"version": 1})
        tensors, header = read_checkpoint(checkpoint)
        ok = np.array_equal(read_volume(volume), array) and np.array_equal(tensors["b"], array[0])
    return bool(ok and header == {"version": 1}), ""


def run_selftest(seed: int = 0) -> SelftestReport:
    rng = np.random.default_rng(seed)
    report = SelftestReport()
    checks = [
        ("softmax stable", lambda: _softmax(rng)),
        ("quantification exhaustive", lambda: _quantization(rng)),
        ("estimateur direct", lambda: _straight_through(rng)),
        ("KL analytique", _kl),
        ("Dice et AUC", lambda: _dice_auc(rng)),
        ("contrôles de gradient", lambda: _gradients(rng)),
        ("conteneur TARD", lambda: _container(rng)),
    ]
    for name, check in checks:
        try:
            passed, detail = check()
        except Exception as exc:  # noqa: BLE001
            passed, detail = False, f"{type(exc).__name__} : {exc}"
        report.results.append(CheckResult(name, passed, detail))
        logger.debug("Selftest %s : %s %s", name, passed, detail)
    return report

