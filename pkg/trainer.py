"""### Objectif composite et boucle d'entraînement

La perte d'une étude est L_Agn + L_Spe + L_Seg ; L_DE est estimée sur
le lot entier (paires de représentations regroupées). Chaque terme
combinatoire est une moyenne sur ses propres paires ou modalités, si bien
que le facteur de normalisation par la longueur de séquence vaut 1 et que
la perte du lot est la moyenne des études.

Chaque pas principal est suivi d'un pas d'ajustement des estimateurs
CLUB sur les représentations détachées.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from agnostic import AgnosticTerms, agnostic_loss, reseed_dead_codes, write_usage_histogram
from configuration import TardisConfig, TrainConfig
from disentangle import DisentangleTerms, disentangle_loss, fit_estimators
from dynamic import SpecificTerms, specific_loss
from evaluation import mean_dice
from model import TardisModel, save_checkpoint
from numcore import AdamW, Tensor, backward, clip_grad_norm, log_softmax, mean, softmax, sum_
from phantom import DatasetManifest, StudyRecord, load_studies

logger = logging.getLogger(__name__)

LOG_NAME = "train_log.csv"
CHECKPOINT_NAME = "model.tard"
USAGE_NAME = "dictionary_usage.json"
DICE_EPS = 1e-6


class TrainingFault(RuntimeError):
    """Terme de perte non fini ou erreur pendant un pas d'entraînement."""


@dataclass
class SegTerms:
    dice: Tensor
    ce: Tensor

    @property
    def total(self) -> Tensor:
        return self.dice + self.ce


@dataclass
class LossBreakdown:
    """Décomposition de la perte ; `total` = agn + spe + de + seg."""

    agn_consistency: float = 0.0
    agn_codebook: float = 0.0
    agn_commitment: float = 0.0
    agn: float = 0.0
    spe_ranking: float = 0.0
    spe_reconstruction: float = 0.0
    spe_kl: float = 0.0
    spe: float = 0.0
    de_static_dynamic: float = 0.0
    de_dynamic_dynamic: float = 0.0
    de: float = 0.0
    seg_dice: float = 0.0
    seg_ce: float = 0.0
    seg: float = 0.0
    total: float = 0.0
    objective: Optional[Tensor] = field(default=None, repr=False, compare=False)

    def as_row(self) -> Dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "objective"}

    @classmethod
    def columns(cls) -> List[str]:
        return [f.name for f in fields(cls) if f.name != "objective"]


def _check_finite(name: str, value: Tensor) -> float:
    scalar = float(np.asarray(value.data).reshape(-1)[0]) if value.size == 1 else float("nan")
    if not math.isfinite(scalar):
        raise TrainingFault(f"Terme de perte non fini : {name} = {scalar}.")
    return scalar


def composite_loss(
    agn: AgnosticTerms,
    spe: SpecificTerms,
    de,
    seg: SegTerms,
) -> LossBreakdown:
    """Somme à poids unitaires ; `de` est un `DisentangleTerms` ou un tenseur scalaire."""

    if isinstance(de, DisentangleTerms):
        de_parts = {"de_static_dynamic": de.static_dynamic, "de_dynamic_dynamic": de.dynamic_dynamic}
        de_total = de.total
    else:
        de_total = de if isinstance(de, Tensor) else Tensor(de)
        de_parts = {}

    named = {
        "agn_consistency": agn.consistency,
        "agn_codebook": agn.codebook,
        "agn_commitment": agn.commitment,
        "spe_ranking": spe.ranking,
        "spe_reconstruction": spe.reconstruction,
        "spe_kl": spe.kl,
        **de_parts,
        "seg_dice": seg.dice,
        "seg_ce": seg.ce,
    }
    values = {name: _check_finite(name, term) for name, term in named.items()}
    values["de"] = _check_finite("de", de_total)

    agn_total, spe_total, seg_total = agn.total, spe.total, seg.total
    objective = agn_total + spe_total + de_total + seg_total
    values.update(
        agn=_check_finite("agn", agn_total),
        spe=_check_finite("spe", spe_total),
        seg=_check_finite("seg", seg_total),
        total=_check_finite("total", objective),
    )
    return LossBreakdown(**values, objective=objective)


def seg_loss(logits: Tensor, mask: np.ndarray) -> SegTerms:
    """Dice souple (1 − moyenne sur les classes présentes) + entropie croisée moyenne."""

    n_classes, height, width = logits.shape
    mask = np.asarray(mask)
    if mask.shape != (height, width):
        raise ValueError(f"Masque {mask.shape} pour des logits {logits.shape}.")
    if mask.min() < 0 or mask.max() >= n_classes or not np.issubdtype(mask.dtype, np.integer):
        raise ValueError(f"Étiquettes de masque invalides : valeurs entières dans [0, {n_classes}) attendues.")

    one_hot = np.stack([(mask == c) for c in range(n_classes)]).astype(np.float64)
    present = one_hot.reshape(n_classes, -1).sum(axis=1) > 0
    probabilities = softmax(logits, axis=0)
    target = Tensor(one_hot)
    overlap = sum_((probabilities * target).reshape(n_classes, height * width), axis=1)
    mass = sum_(probabilities.reshape(n_classes, height * width), axis=1)
    mass = mass + Tensor(one_hot.reshape(n_classes, -1).sum(axis=1))
    per_class = (overlap * 2.0) / (mass + DICE_EPS)
    dice = 1.0 - sum_(per_class * Tensor(present.astype(np.float64))) / float(present.sum())
    ce = mean(sum_(log_softmax(logits, axis=0) * target, axis=0)) * -1.0
    return SegTerms(dice=dice, ce=ce)


def modality_dropout(study: StudyRecord, rate: float, rng: np.random.Generator) -> StudyRecord:
    """Retirer chaque phase avec probabilité `rate` ; au moins une phase est conservée."""

    if not 0.0 <= rate < 1.0:
        raise ValueError(f"Taux d'abandon hors de [0, 1) : {rate}.")
    keep = rng.random(len(study.phases)) >= rate
    if not keep.any():
        keep[int(rng.integers(len(study.phases)))] = True
    return replace(study, phases=tuple(phase for phase, kept in zip(study.phases, keep) if kept))


def _mean_terms(terms: Sequence, cls):
    averaged = {}
    for f in fields(cls):
        total = getattr(terms[0], f.name)
        for item in terms[1:]:
            total = total + getattr(item, f.name)
        averaged[f.name] = total / float(len(terms))
    return cls(**averaged)


@dataclass
class BatchResult:
    breakdown: LossBreakdown
    pooled_reps: List[List[Tensor]] = field(repr=False)
    regressed: List[Tuple[Tuple[str, ...], np.ndarray]] = field(repr=False)
    static_tokens: np.ndarray = field(repr=False)


def batch_objective(
    model: TardisModel,
    batch: Sequence[StudyRecord],
    cfg: TrainConfig,
    rng: Optional[np.random.Generator] = None,
    use_disentangle: Optional[bool] = None,
) -> BatchResult:
    """Perte du lot sans pas d'optimisation ; `rng=None` rend la passe déterministe."""

    if not batch:
        raise ValueError("Lot vide.")
    use_disentangle = cfg.use_disentangle if use_disentangle is None else use_disentangle

    agn_terms, spe_terms, seg_terms = [], [], []
    pooled_reps, regressed, static_tokens = [], [], []
    for study in batch:
        out = model.forward(study, rng=rng)
        agn_terms.append(agnostic_loss(out.x_s, out.quantized.tokens, cfg.beta, codes=out.quantized.codes))
        spe_terms.append(
            specific_loss(out.x_d, out.x_hat_d, out.posterior, out.taus, cfg.lam, cfg.margin, cfg.use_ranking)
        )
        seg_terms.append(seg_loss(out.logits, study.seg_mask))
        pooled_reps.append(
            [mean(out.anatomy, axis=1)] + [mean(out.x_hat_d.modality(i), axis=1) for i in range(len(out.labels))]
        )
        regressed.append((out.labels, out.taus.data.copy()))
        static_tokens.append(out.x_s.tokens.data.transpose(0, 2, 1).reshape(-1, out.x_s.channels))

    de = disentangle_loss(pooled_reps, model.estimators) if use_disentangle else Tensor(0.0)
    breakdown = composite_loss(
        _mean_terms(agn_terms, AgnosticTerms),
        _mean_terms(spe_terms, SpecificTerms),
        de,
        _mean_terms(seg_terms, SegTerms),
    )
    return BatchResult(breakdown, pooled_reps, regressed, np.concatenate(static_tokens))


def batch_step(
    model: TardisModel,
    optimizer: AdamW,
    batch: Sequence[StudyRecord],
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> BatchResult:
    """Un pas d'optimisation du réseau puis un pas des estimateurs CLUB."""

    optimizer.zero_grad()
    model.estimators.zero_grad()
    result = batch_objective(model, batch, cfg, rng=rng)
    backward(result.breakdown.objective)
    clip_grad_norm(optimizer.params, cfg.grad_clip)
    optimizer.step()

    if cfg.use_disentangle:
        fit_estimators(result.pooled_reps, model.estimators)
    for labels, taus in result.regressed:
        model.clock.update(labels, taus)
    return result


def cosine_lr(epoch: int, epochs: int, lr: float, lr_min: float) -> float:
    """Taux de l'époque `epoch` (à partir de 0), décroissance cosinus vers `lr_min`."""

    if epochs <= 1:
        return lr
    return lr_min + 0.5 * (lr - lr_min) * (1.0 + math.cos(math.pi * epoch / (epochs - 1)))


@dataclass
class TrainResult:
    checkpoint: Path
    log: Path
    usage: Path
    history: pd.DataFrame = field(repr=False)
    model: TardisModel = field(repr=False)


def _epoch_row(epoch: int, breakdowns: List[LossBreakdown], lr: float, val_dice: float, reseeded: int) -> Dict:
    row: Dict = {"epoch": epoch}
    frame = pd.DataFrame([b.as_row() for b in breakdowns], columns=LossBreakdown.columns())
    row.update(frame.mean().to_dict())
    row["mi_static_dynamic"] = row["de_static_dynamic"]
    row["mi_dynamic_dynamic"] = row["de_dynamic_dynamic"]
    row["val_dice"] = val_dice
    row["lr"] = lr
    row["dead_codes_reseeded"] = reseeded
    return row


def train(
    manifest: DatasetManifest,
    config: TardisConfig,
    out_dir: Path | str,
    seed: Optional[int] = None,
) -> TrainResult:
    """Entraîner sur la partition `train` et écrire checkpoint, journal CSV et histogramme."""

    cfg = config.train if seed is None else replace(config.train, seed=int(seed))
    config = replace(config, train=cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    model = TardisModel(config)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    studies = load_studies(manifest, "train")
    validation = load_studies(manifest, "val")
    if not studies and cfg.epochs:
        raise ValueError(f"Aucune étude d'entraînement dans {manifest.root}.")
    optimizer = AdamW(model.network_parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    logger.info("Entraînement : %d études, %d époques, lots de %d.", len(studies), cfg.epochs, cfg.batch_size)

    rows = []
    for epoch in range(cfg.epochs):
        optimizer.lr = cosine_lr(epoch, cfg.epochs, cfg.lr, cfg.lr_min)
        model.dictionary.reset_usage()
        order = rng.permutation(len(studies))
        breakdowns, pools = [], []
        for step, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = [modality_dropout(studies[i], cfg.dropout, rng) for i in order[start : start + cfg.batch_size]]
            try:
                result = batch_step(model, optimizer, batch, cfg, rng)
            except TrainingFault as exc:
                raise TrainingFault(f"Époque {epoch + 1}, pas {step + 1} : {exc}") from exc
            breakdowns.append(result.breakdown)
            pools.append(result.static_tokens)

        reseeded = 0
        if cfg.reseed_dead_codes:
            reseeded = reseed_dead_codes(model.dictionary, np.concatenate(pools), rng)
        training_usage = model.dictionary.usage_counts.copy()
        val_dice = mean_dice(model, validation)
        model.dictionary.usage_counts = training_usage
        rows.append(_epoch_row(epoch + 1, breakdowns, optimizer.lr, val_dice, reseeded))
        logger.info(
            "Époque %d/%d : total %.4f (agn %.4f, spe %.4f, de %.4f, seg %.4f), Dice val %.4f.",
            epoch + 1,
            cfg.epochs,
            rows[-1]["total"],
            rows[-1]["agn"],
            rows[-1]["spe"],
            rows[-1]["de"],
            rows[-1]["seg"],
            val_dice,
        )

    columns = [
        "epoch",
        *LossBreakdown.columns(),
        "mi_static_dynamic",
        "mi_dynamic_dynamic",
        "val_dice",
        "lr",
        "dead_codes_reseeded",
    ]
    history = pd.DataFrame(rows, columns=columns)
    log_path = out_dir / LOG_NAME
    log_path.write_text(history.to_csv(index=False, float_format="%.8g", lineterminator="\n"), encoding="utf-8")
    checkpoint_path = out_dir / CHECKPOINT_NAME
    save_checkpoint(
        model,
        checkpoint_path,
        dataset_hash=manifest.dataset_hash,
        extra={"epochs_completed": cfg.epochs, "lr_schedule": "cosine"},
    )
    usage_path = write_usage_histogram(model.dictionary, out_dir / USAGE_NAME)
    logger.info("Journal d'entraînement : %s", log_path)
    return TrainResult(checkpoint_path, log_path, usage_path, history, model)


def training_summary(history: pd.DataFrame) -> Dict:
    """Première et dernière valeurs des colonnes principales du journal."""

    if history.empty:
        return {"epochs": 0}
    first, last = history.iloc[0], history.iloc[-1]
    keys = ("total", "agn", "spe", "de", "seg", "val_dice")
    return {
        "epochs": int(last["epoch"]),
        "first": {key: float(first[key]) for key in keys},
        "last": {key: float(last[key]) for key in keys},
    }

