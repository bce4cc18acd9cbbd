"""### Métriques, balayages de modalités et export latent

## Métriques
- Dice par classe, 1 par convention quand prédiction et vérité sont vides.
- AUC par statistique de Mann-Whitney (rangs moyens pour les ex æquo).

## Balayage
Chaque sous-ensemble non vide de phases est évalué en restreignant les
études aux phases du sous-ensemble (une phase non acquise reste absente).
Un sous-ensemble dont une phase n'est acquise dans aucune étude reçoit
le statut `n/a`. Les représentations dynamiques manquantes sont
générées par le prior. Le rapport contient une ligne par sous-ensemble,
une ligne `Average` et, à part, la moyenne par taille de sous-ensemble.

## Dépendances
- scipy : rangs moyens, filtre moyen 3×3, softmax, corrélation de Spearman.
- scikit-learn : sonde logistique de sous-type, sonde ridge pour τ,
  silhouette.
- pandas : tables du rapport et de l'export latent.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.ndimage import uniform_filter
from scipy.special import softmax
from scipy.stats import rankdata, spearmanr
from sklearn.linear_model import LogisticRegression, Ridge
from sklearn.metrics import r2_score, silhouette_score
from sklearn.model_selection import KFold, cross_val_predict
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from assembly import AssemblyWeights, export_weight_maps
from configuration import PHASE_LABELS
from disentangle import estimate_mutual_information
from model import Prediction, TardisModel
from numcore import Tensor
from phantom import StudyRecord

logger = logging.getLogger(__name__)

REPORT_FORMAT = "tardis-sweep"
REPORT_VERSION = 1
TUMOR_CLASS = 2
ALL_SUBSETS: Tuple[str, ...] = tuple(
    "".join(combo) for size in range(1, len(PHASE_LABELS) + 1) for combo in itertools.combinations(PHASE_LABELS, size)
)
METRIC_COLUMNS = ("dice", "dice_organ", "dice_tumor", "screening_auc", "subtype_auc")


class UndefinedMetricError(ValueError):
    """Métrique non définie sur l'entrée (par exemple une seule classe pour l'AUC)."""


# ---------------------------------------------------------------------------
# Métriques
# ---------------------------------------------------------------------------


def dice_score(pred_mask: np.ndarray, true_mask: np.ndarray, class_id: int) -> float:
    pred_mask = np.asarray(pred_mask)
    true_mask = np.asarray(true_mask)
    if pred_mask.shape != true_mask.shape:
        raise ValueError(f"Masques de formes différentes : {pred_mask.shape} et {true_mask.shape}.")
    predicted = pred_mask == class_id
    truth = true_mask == class_id
    total = int(predicted.sum()) + int(truth.sum())
    if total == 0:
        logger.debug("Dice de la classe %d : masques vides, valeur 1 par convention.", class_id)
        return 1.0
    return 2.0 * int(np.logical_and(predicted, truth).sum()) / total


def segmentation_dice(pred_mask: np.ndarray, true_mask: np.ndarray) -> Dict[str, float]:
    organ = dice_score(pred_mask, true_mask, 1)
    tumor = dice_score(pred_mask, true_mask, TUMOR_CLASS)
    return {"dice": (organ + tumor) / 2.0, "dice_organ": organ, "dice_tumor": tumor}


def auc_score(scores: Sequence[float], labels: Sequence[int]) -> float:
    """U de Mann-Whitney normalisé, rangs moyens pour les ex æquo."""

    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError(f"{scores.size} scores pour {labels.size} étiquettes.")
    if not set(np.unique(labels)) <= {0, 1}:
        raise ValueError("Les étiquettes de l'AUC doivent être binaires (0 ou 1).")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC non définie : une seule classe est présente.")
    ranks = rankdata(scores, method="average")
    u_statistic = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_statistic / (n_pos * n_neg))


def _auc_or_nan(scores: Sequence[float], labels: Sequence[int]) -> float:
    try:
        return auc_score(scores, labels)
    except UndefinedMetricError:
        return float("nan")


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------


def tumor_probability(logits: np.ndarray) -> np.ndarray:
    return softmax(np.asarray(logits, dtype=np.float64), axis=0)[TUMOR_CLASS]


def screening_score(logits: np.ndarray) -> float:
    """Maximum de la probabilité tumorale lissée par un filtre moyen 3×3."""

    return float(uniform_filter(tumor_probability(logits), size=3, mode="nearest").max())


def subtype_features(prediction: Prediction) -> np.ndarray:
    """Représentations dynamiques pondérées par la probabilité tumorale, par phase N/A/V/D.

    Une phase sans représentation contribue un vecteur nul.
    """

    channels, positions = prediction.anatomy.shape
    side = int(round(np.sqrt(positions)))
    probability = tumor_probability(prediction.logits)
    block = probability.shape[0] // side
    pooled = probability[: side * block, : side * block].reshape(side, block, side, block).mean(axis=(1, 3))
    weights = pooled.reshape(positions)
    if weights.sum() < 1e-8:
        weights = np.full(positions, 1.0 / positions)
    else:
        weights = weights / weights.sum()
    parts = [
        prediction.dynamic[label] @ weights if label in prediction.dynamic else np.zeros(channels)
        for label in PHASE_LABELS
    ]
    return np.concatenate(parts).astype(np.float64)


@dataclass
class SubtypeProbe:
    """Sonde logistique hyper (1) contre hypo (0) sur `subtype_features`."""

    pipeline: object

    def score(self, features: np.ndarray) -> float:
        return float(self.pipeline.predict_proba(np.asarray(features).reshape(1, -1))[0, 1])


def fit_subtype_probe(features: np.ndarray, labels: Sequence[int]) -> Optional[SubtypeProbe]:
    labels = np.asarray(labels)
    if len(np.unique(labels)) < 2:
        logger.warning("Sonde de sous-type non ajustée : une seule classe dans l'échantillon.")
        return None
    pipeline = make_pipeline(StandardScaler(), LogisticRegression(max_iter=1000))
    pipeline.fit(np.asarray(features), labels)
    return SubtypeProbe(pipeline)


def fit_probe_on_studies(model: TardisModel, studies: Sequence[StudyRecord]) -> Optional[SubtypeProbe]:
    tumorous = [study for study in studies if study.lesion_class != "none"]
    if not tumorous:
        return None
    features = np.stack([subtype_features(model.predict(study)) for study in tumorous])
    labels = [int(study.lesion_class == "hyper") for study in tumorous]
    return fit_subtype_probe(features, labels)


@dataclass
class ClassificationScores:
    screening: float
    subtype: Optional[float]


def classify_from_masks(
    logits: np.ndarray,
    features: Optional[np.ndarray] = None,
    probe: Optional[SubtypeProbe] = None,
) -> ClassificationScores:
    subtype = probe.score(features) if probe is not None and features is not None else None
    return ClassificationScores(screening_score(logits), subtype)


# ---------------------------------------------------------------------------
# Balayage
# ---------------------------------------------------------------------------


def parse_subset(text: str) -> str:
    """« N,A,V », « nav » ou « NAV » → « NAV » (ordre N, A, V, D)."""

    letters = [part for part in text.replace(",", "").replace(" ", "").upper()]
    if not letters or not set(letters) <= set(PHASE_LABELS) or len(set(letters)) != len(letters):
        raise ValueError(f"Sous-ensemble de phases invalide : « {text} ».")
    return "".join(label for label in PHASE_LABELS if label in letters)


@dataclass
class SweepReport:
    table: pd.DataFrame
    by_size: pd.DataFrame
    metadata: Dict = field(default_factory=dict)

    def comment_line(self) -> str:
        details = " ".join(f"{key}={value}" for key, value in sorted(self.metadata.items()))
        return f"# {REPORT_FORMAT} format_version={REPORT_VERSION} {details}".rstrip()

    def to_csv_text(self) -> str:
        return self.comment_line() + "\n" + self.table.to_csv(index=False, float_format="%.6f", lineterminator="\n")

    def to_text(self) -> str:
        return self.table.to_string(index=False, float_format=lambda value: f"{value:.4f}") + "\n"


def _row(subset: str, predictions: List[Tuple[StudyRecord, Prediction]], probe: Optional[SubtypeProbe]) -> Dict:
    row = {"subset": subset, "n_phases": len(subset), "n_studies": len(predictions)}
    if not predictions:
        row.update({column: float("nan") for column in METRIC_COLUMNS})
        row["status"] = "n/a"
        return row

    dices = pd.DataFrame([segmentation_dice(pred.mask, study.seg_mask) for study, pred in predictions])
    row.update(dices.mean().to_dict())
    scores = [
        classify_from_masks(pred.logits, subtype_features(pred) if probe is not None else None, probe)
        for _, pred in predictions
    ]
    row["screening_auc"] = _auc_or_nan(
        [score.screening for score in scores],
        [int(study.lesion_class != "none") for study, _ in predictions],
    )
    tumorous = [
        (study, score) for (study, _), score in zip(predictions, scores) if study.lesion_class != "none"
    ]
    if probe is not None and tumorous:
        row["subtype_auc"] = _auc_or_nan(
            [score.subtype for _, score in tumorous],
            [int(study.lesion_class == "hyper") for study, _ in tumorous],
        )
    else:
        row["subtype_auc"] = float("nan")
    row["status"] = "ok"
    return row


def sweep_eval(
    model: TardisModel,
    studies: Sequence[StudyRecord],
    subsets: Optional[Sequence[str]] = None,
    probe: Optional[SubtypeProbe] = None,
    n_samples: int = 0,
    noise_seed: int = 0,
    dynamic_fill: Optional[str] = None,
    metadata: Optional[Dict] = None,
) -> SweepReport:
    """Évaluer chaque sous-ensemble de phases ; tous les sous-ensembles non vides par défaut."""

    subsets = [parse_subset(subset) for subset in (subsets or ALL_SUBSETS)]
    if not subsets:
        raise ValueError("Aucun sous-ensemble de phases à évaluer.")

    acquired = {label for study in studies for label in study.labels}
    rows = []
    for subset in subsets:
        predictions = []
        missing = [label for label in subset if label not in acquired]
        for position, study in enumerate(studies if not missing else ()):
            restricted = study.restricted_to(subset)
            if not restricted.phases:
                continue
            predictions.append(
                (
                    restricted,
                    model.predict(
                        restricted,
                        dynamic_fill=dynamic_fill,
                        n_samples=n_samples,
                        noise_seed=noise_seed + position,
                    ),
                )
            )
        row = _row(subset, predictions, probe)
        if missing:
            logger.warning("Sous-ensemble %s : phase(s) %s absente(s) de toutes les études.", subset, "".join(missing))
        elif row["status"] == "n/a":
            logger.warning("Sous-ensemble %s : aucune étude ne contient ces phases.", subset)
        else:
            logger.info("Sous-ensemble %-4s : Dice %.4f sur %d études.", subset, row["dice"], row["n_studies"])
        rows.append(row)

    table = pd.DataFrame(rows)
    evaluated = table[table["status"] == "ok"]
    average = {"subset": "Average", "status": "ok"}
    for column in ("n_phases", "n_studies") + METRIC_COLUMNS:
        average[column] = float(evaluated[column].mean()) if len(evaluated) else float("nan")
    table = pd.concat([table, pd.DataFrame([average])], ignore_index=True)
    table = table[["subset", "n_phases", "n_studies", *METRIC_COLUMNS, "status"]]

    by_size = (
        evaluated.groupby("n_phases")[list(METRIC_COLUMNS)].mean().reset_index()
        if len(evaluated)
        else pd.DataFrame(columns=["n_phases", *METRIC_COLUMNS])
    )
    details = {"dice_empty": 1, "prior": "stochastic" if n_samples else "deterministic"}
    details.update(metadata or {})
    return SweepReport(table=table, by_size=by_size, metadata=details)


def write_sweep_report(report: SweepReport, out_dir: Path | str) -> Dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "csv": out_dir / "sweep.csv",
        "text": out_dir / "sweep.txt",
        "by_size": out_dir / "sweep_by_size.csv",
    }
    paths["csv"].write_text(report.to_csv_text(), encoding="utf-8")
    paths["text"].write_text(report.to_text(), encoding="utf-8")
    paths["by_size"].write_text(
        report.by_size.to_csv(index=False, float_format="%.6f", lineterminator="\n"), encoding="utf-8"
    )
    for path in paths.values():
        logger.info("Rapport écrit : %s", path)
    return paths


def read_sweep_report(path: Path | str) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def mean_dice(model: TardisModel, studies: Sequence[StudyRecord]) -> float:
    """Dice moyen (organe et tumeur) avec toutes les phases acquises."""

    if not studies:
        return float("nan")
    values = [segmentation_dice(model.predict(study).mask, study.seg_mask)["dice"] for study in studies]
    return float(np.mean(values))


# ---------------------------------------------------------------------------
# Export latent
# ---------------------------------------------------------------------------


@dataclass
class LatentExport:
    frame: pd.DataFrame
    summary: Dict

    @property
    def feature_columns(self) -> List[str]:
        return feature_columns(self.frame)


def latent_frame(model: TardisModel, studies: Sequence[StudyRecord]) -> pd.DataFrame:
    """Une ligne statique et une ligne par phase acquise, vecteurs moyennés sur les positions."""

    records = []
    for study in studies:
        prediction = model.predict(study, dynamic_fill="none")
        base = {"study_id": study.id, "split": study.split, "lesion_class": study.lesion_class}
        records.append(
            {
                **base,
                "kind": "static",
                "label": "",
                "tau_actual": np.nan,
                "tau_regressed": np.nan,
                **_feature_record(prediction.anatomy),
            }
        )
        for index, phase in enumerate(study.phases):
            records.append(
                {
                    **base,
                    "kind": f"dynamic-{index + 1}",
                    "label": phase.label,
                    "tau_actual": phase.tau_actual,
                    "tau_regressed": prediction.regressed_taus[phase.label],
                    **_feature_record(prediction.dynamic[phase.label]),
                }
            )
    return pd.DataFrame(records)


def _feature_record(representation: np.ndarray) -> Dict[str, float]:
    return {f"f{i:03d}": float(value) for i, value in enumerate(representation.mean(axis=1))}


def feature_columns(frame: pd.DataFrame) -> List[str]:
    return [column for column in frame.columns if column[:1] == "f" and column[1:].isdigit()]


def _probe_r2(features: np.ndarray, target: np.ndarray) -> float:
    if len(target) < 4:
        return float("nan")
    folds = KFold(n_splits=min(5, len(target)), shuffle=False)
    predicted = cross_val_predict(Ridge(alpha=1.0), features, target, cv=folds)
    return float(r2_score(target, predicted))


def latent_summary(frame: pd.DataFrame, rng: np.random.Generator, club_steps: int = 300) -> Dict:
    features = feature_columns(frame)
    is_static = (frame["kind"] == "static").to_numpy()
    vectors = frame[features].to_numpy(dtype=np.float64)
    kinds = np.where(is_static, "static", "dynamic")

    summary: Dict = {"rows": int(len(frame)), "studies": int(frame["study_id"].nunique())}
    if len(set(kinds)) == 2 and len(frame) > 2:
        summary["silhouette"] = float(silhouette_score(vectors, kinds))
    else:
        summary["silhouette"] = float("nan")

    dynamic = frame[~is_static]
    static_by_study = frame[is_static].set_index("study_id")[features]
    static_rows = static_by_study.loc[dynamic["study_id"]].to_numpy(dtype=np.float64)
    target = dynamic["tau_actual"].to_numpy(dtype=np.float64)
    summary["r2_tau_dynamic"] = _probe_r2(dynamic[features].to_numpy(dtype=np.float64), target)
    summary["r2_tau_static"] = _probe_r2(static_rows, target)

    correlations = []
    for _, group in dynamic.groupby("study_id", sort=False):
        if len(group) >= 2 and group["tau_actual"].nunique() > 1:
            correlations.append(spearmanr(group["tau_regressed"], group["tau_actual"]).correlation)
    correlations = [value for value in correlations if np.isfinite(value)]
    summary["spearman_tau"] = float(np.mean(correlations)) if correlations else float("nan")

    if len(target) >= 2:
        summary["club_static_tau"] = estimate_mutual_information(static_rows, target, rng, steps=club_steps)
    else:
        summary["club_static_tau"] = float("nan")
    return summary


def export_latents(
    model: TardisModel,
    studies: Sequence[StudyRecord],
    out_path: Path | str,
    seed: int = 0,
    club_steps: int = 300,
) -> LatentExport:
    """Écrire le CSV des vecteurs latents et la synthèse JSON voisine (`<nom>.summary.json`)."""

    out_path = Path(out_path)
    frame = latent_frame(model, studies)
    summary = latent_summary(frame, np.random.default_rng(seed), club_steps=club_steps)
    try:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        csv_text = frame.to_csv(index=False, float_format="%.6f", lineterminator="\n")
        out_path.write_text(csv_text + f"# summary {json.dumps(summary, sort_keys=True)}\n", encoding="utf-8")
        summary_path = out_path.with_suffix(".summary.json")
        summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise OSError(f"Écriture impossible : {out_path} ({exc.strerror}).") from exc
    logger.info("Export latent : %d lignes, silhouette %.4f.", len(frame), summary["silhouette"])
    return LatentExport(frame, summary)


def read_latents(path: Path | str) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def write_weight_maps(model: TardisModel, studies: Sequence[StudyRecord], out_dir: Path | str) -> Path:
    """Cartes d'assemblage α de chaque étude (`<id>_alpha.tard`) et index JSON des lignes."""

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index = {}
    for study in studies:
        prediction = model.predict(study)
        weights = AssemblyWeights(Tensor(prediction.alpha))
        export_weight_maps(weights, prediction.spatial, out_dir / f"{study.id}_alpha.tard")
        index[study.id] = list(prediction.representation_labels)
    index_path = out_dir / "alpha_index.json"
    index_path.write_text(json.dumps(index, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("Cartes d'assemblage écrites pour %d études dans %s.", len(index), out_dir)
    return index_path
