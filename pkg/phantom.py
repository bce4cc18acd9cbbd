"""### Fantômes hémodynamiques synthétiques

Chaque étude est une coupe 48×48 (fond, organe elliptique, tumeur discoïde)
dont chaque pixel suit une courbe temps-atténuation décomposée en une
densité statique et une somme de gaussiennes de rehaussement :

    H(p, τ) = H_s(p) + Σ_g a_g · exp(-(τ - c_g)² / (2 w_g²))

Les phases acquises (N, A, V, D) échantillonnent cette courbe à un temps
normalisé τ légèrement décalé de sa valeur nominale, puis reçoivent un bruit
gaussien de pixel. La vérité terrain (masque, classe de lésion, paramètres
des tissus) est donc connue exactement.

## Fichiers produits par `gen_dataset`
- `volumes/<id>_<phase>.tard` et `volumes/<id>_mask.tard` (conteneur TARD) ;
- `manifest.jsonl` : un objet JSON par étude ;
- `dataset.json` : graine, empreinte de configuration et empreinte du jeu.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from configuration import LESION_CLASSES, PHASE_LABELS, ConfigError, PhantomConfig, config_hash
from tardfile import ContainerError, read_volume, write_volume

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
MANIFEST_NAME = "manifest.jsonl"
HEADER_NAME = "dataset.json"
FORMAT_VERSION = 1


class TACRangeError(ValueError):
    """Temps normalisé hors de [0, 1]."""


@dataclass(frozen=True)
class TACParams:
    """Densité statique et composantes gaussiennes (amplitude, centre, largeur)."""

    static_hu: float
    gaussians: Tuple[Tuple[float, float, float], ...] = ()

    def __post_init__(self) -> None:
        for _, _, width in self.gaussians:
            if width <= 0:
                raise ValueError(f"Largeur de gaussienne non positive : {width}.")

    def to_dict(self) -> Dict:
        return {"static_hu": self.static_hu, "gaussians": [list(g) for g in self.gaussians]}

    @classmethod
    def from_dict(cls, payload: Dict) -> "TACParams":
        return cls(
            static_hu=float(payload["static_hu"]),
            gaussians=tuple(tuple(float(v) for v in g) for g in payload["gaussians"]),
        )


def _check_tau(tau: float) -> None:
    if not 0.0 <= tau <= 1.0:
        raise TACRangeError(f"τ doit appartenir à [0, 1], reçu {tau}.")


def dynamic_component(params: TACParams, tau: float) -> float:
    _check_tau(tau)
    return float(
        sum(
            amplitude * math.exp(-((tau - center) ** 2) / (2.0 * width**2))
            for amplitude, center, width in params.gaussians
        )
    )


def eval_tac(params: TACParams, tau: float) -> float:
    """Valeur de la courbe temps-atténuation au temps normalisé `tau`."""

    return params.static_hu + dynamic_component(params, tau)


def peak_amplitude(params: Optional[TACParams]) -> float:
    if params is None or not params.gaussians:
        return 0.0
    return max(amplitude for amplitude, _, _ in params.gaussians)


@dataclass(frozen=True)
class TissueMap:
    """Carte des tissus (0 fond, 1 organe, 2 tumeur) et paramètres de chacun."""

    labels: np.ndarray
    params: Tuple[Optional[TACParams], ...]

    def static_image(self) -> np.ndarray:
        image = np.zeros(self.labels.shape, dtype=np.float64)
        for tissue, params in enumerate(self.params):
            if params is not None:
                image[self.labels == tissue] = params.static_hu
        return image

    def render(self, tau: float) -> np.ndarray:
        """Image sans bruit au temps `tau`."""

        image = np.zeros(self.labels.shape, dtype=np.float64)
        for tissue, params in enumerate(self.params):
            if params is not None:
                image[self.labels == tissue] = eval_tac(params, tau)
        return image

    def dynamic_image(self, tau: float) -> np.ndarray:
        return self.render(tau) - self.static_image()


@dataclass(frozen=True)
class PhaseVolume:
    label: str
    tau_nominal: float
    tau_actual: float
    image: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class StudyRecord:
    """Une étude synthétique : phases acquises, masque, classe et tissus."""

    id: str
    lesion_class: str
    seg_mask: np.ndarray = field(repr=False)
    tissue_map: Optional[TissueMap] = field(default=None, repr=False)
    phases: Tuple[PhaseVolume, ...] = ()
    split: str = "train"

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(phase.label for phase in self.phases)

    @property
    def taus(self) -> Tuple[float, ...]:
        return tuple(phase.tau_actual for phase in self.phases)

    def with_phases(self, phases: Sequence[PhaseVolume]) -> "StudyRecord":
        return replace(self, phases=tuple(sorted(phases, key=lambda phase: phase.tau_actual)))

    def restricted_to(self, labels: Sequence[str]) -> "StudyRecord":
        wanted = set(labels)
        return replace(self, phases=tuple(phase for phase in self.phases if phase.label in wanted))

    def validate(self) -> "StudyRecord":
        if not 1 <= len(self.phases) <= len(PHASE_LABELS):
            raise ValueError(f"Étude {self.id} : {len(self.phases)} phases (1 à 4 attendues).")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError(f"Étude {self.id} : étiquette de phase dupliquée.")
        if not set(np.unique(self.seg_mask)) <= {0, 1, 2}:
            raise ValueError(f"Étude {self.id} : valeurs de masque hors de {{0, 1, 2}}.")
        return self


def normalize_intensity(image: np.ndarray, window: Tuple[float, float] = (-100.0, 200.0)) -> np.ndarray:
    """Application affine de la fenêtre d'intensité vers [0, 1], écrêtée."""

    low, high = window
    return np.clip((np.asarray(image, dtype=np.float64) - low) / (high - low), 0.0, 1.0).astype(np.float32)


def _uniform(rng: np.random.Generator, bounds: Tuple[float, float]) -> float:
    return float(rng.uniform(bounds[0], bounds[1]))


def rasterize_study(
    layout_seed: int,
    cfg: PhantomConfig,
    lesion_class: Optional[str] = None,
    study_id: Optional[str] = None,
) -> StudyRecord:
    """Tirer la géométrie et les tissus d'une étude (sans phases), fonction de la graine."""

    cfg.validate()
    rng = np.random.default_rng(layout_seed)
    classes = list(LESION_CLASSES)
    probs = np.array([cfg.class_probs.get(name, 0.0) for name in classes])
    drawn_class = classes[int(rng.choice(len(classes), p=probs / probs.sum()))]
    lesion_class = lesion_class or drawn_class
    if lesion_class not in LESION_CLASSES:
        raise ValueError(f"Classe de lésion inconnue : {lesion_class}.")

    size = cfg.image_size
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    center_y = size / 2.0 + rng.uniform(-3.0, 3.0)
    center_x = size / 2.0 + rng.uniform(-3.0, 3.0)
    axis_x = _uniform(rng, cfg.organ_semi_axes)
    axis_y = _uniform(rng, cfg.organ_semi_axes)
    organ = ((xx - center_x) / axis_x) ** 2 + ((yy - center_y) / axis_y) ** 2 <= 1.0

    mask = np.zeros((size, size), dtype=np.int64)
    mask[organ] = 1

    radius = _uniform(rng, cfg.tumor_radius)
    angle = rng.uniform(0.0, 2.0 * math.pi)
    reach = rng.uniform(0.0, 1.0)
    tumor_y = center_y + (axis_y - radius) * reach * math.sin(angle)
    tumor_x = center_x + (axis_x - radius) * reach * math.cos(angle)

    background = TACParams(_uniform(rng, cfg.background_static))
    organ_params = TACParams(
        _uniform(rng, cfg.organ_static),
        ((_uniform(rng, cfg.organ_amplitude), cfg.organ_center, cfg.organ_width),),
    )
    tumor_static = _uniform(rng, cfg.tumor_static)
    hypo = (_uniform(rng, cfg.hypo_amplitude), cfg.hypo_center, cfg.hypo_width)
    hyper = (_uniform(rng, cfg.hyper_amplitude), cfg.hyper_center, cfg.hyper_width)

    tumor_params: Optional[TACParams] = None
    if lesion_class != "none":
        tumor = ((xx - tumor_x) ** 2 + (yy - tumor_y) ** 2 <= radius**2) & organ
        mask[tumor] = 2
        tumor_params = TACParams(tumor_static, (hypo if lesion_class == "hypo" else hyper,))

    tissue = TissueMap(labels=mask.copy(), params=(background, organ_params, tumor_params))
    return StudyRecord(
        id=study_id or f"etude_{layout_seed}",
        lesion_class=lesion_class,
        seg_mask=mask,
        tissue_map=tissue,
    )


def _pattern_table(cfg: PhantomConfig) -> Tuple[List[str], np.ndarray]:
    patterns = sorted(cfg.missing_patterns)
    for pattern in patterns:
        if not pattern:
            raise ConfigError("Table des motifs : sous-ensemble vide interdit.")
    probs = np.array([cfg.missing_patterns[p] for p in patterns], dtype=np.float64)
    return patterns, probs / probs.sum()


def sample_phases(study: StudyRecord, protocol_seed: int, cfg: PhantomConfig) -> StudyRecord:
    """Tirer le sous-ensemble de phases acquises, leurs temps réels et leurs images."""

    if study.tissue_map is None:
        raise ValueError(f"Étude {study.id} : carte des tissus absente.")
    patterns, probs = _pattern_table(cfg)
    rng = np.random.default_rng(protocol_seed)
    chosen = set(patterns[int(rng.choice(len(patterns), p=probs))])

    phases: List[PhaseVolume] = []
    for label in PHASE_LABELS:
        offset = rng.uniform(-cfg.jitter, cfg.jitter)
        noise = rng.normal(0.0, 1.0, size=study.seg_mask.shape)
        if label not in chosen:
            continue
        nominal = cfg.nominal_taus[label]
        actual = float(np.clip(nominal + offset, 0.0, 1.0))
        image = study.tissue_map.render(actual) + cfg.noise_sigma * noise
        phases.append(PhaseVolume(label, nominal, actual, image[None].astype(np.float32)))

    return study.with_phases(phases).validate()


def split_counts(n_studies: int, split: Sequence[float]) -> Tuple[int, int, int]:
    n_train = int(math.floor(n_studies * split[0] + 1e-9))
    n_val = int(math.floor(n_studies * split[1] + 1e-9))
    return n_train, n_val, n_studies - n_train - n_val


def study_seeds(seed: int, n_studies: int) -> List[Tuple[int, int]]:
    """Graines (géométrie, protocole) indépendantes par étude."""

    children = np.random.SeedSequence(seed).spawn(n_studies)
    return [tuple(int(v) for v in child.generate_state(2)) for child in children]


@dataclass
class DatasetManifest:
    root: Path
    entries: List[Dict]
    seed: int
    config_hash: str
    dataset_hash: str

    @property
    def ids(self) -> List[str]:
        return [entry["id"] for entry in self.entries]

    def split(self, name: str) -> List[Dict]:
        return [entry for entry in self.entries if entry["split"] == name]


def gen_dataset(cfg: PhantomConfig, seed: int, out_dir: Path | str) -> DatasetManifest:
    """Générer et écrire le jeu de fantômes ; reproductible à partir de (cfg, seed)."""

    cfg.validate()
    root = Path(out_dir)
    n_train, n_val, _ = split_counts(cfg.n_studies, cfg.split)
    entries: List[Dict] = []

    for index, (layout_seed, protocol_seed) in enumerate(study_seeds(seed, cfg.n_studies)):
        study_id = f"etude_{index:04d}"
        split = "train" if index < n_train else "val" if index < n_train + n_val else "test"
        study = sample_phases(rasterize_study(layout_seed, cfg, study_id=study_id), protocol_seed, cfg)

        files: Dict[str, str] = {}
        byte_lengths: Dict[str, int] = {}
        for phase in study.phases:
            relative = f"volumes/{study_id}_{phase.label}.tard"
            byte_lengths[phase.label] = write_volume(root / relative, phase.image)
            files[phase.label] = relative
        relative = f"volumes/{study_id}_mask.tard"
        byte_lengths["mask"] = write_volume(root / relative, study.seg_mask.astype(np.float32))
        files["mask"] = relative

        entries.append(
            {
                "id": study_id,
                "split": split,
                "lesion_class": study.lesion_class,
                "phases": list(study.labels),
                "tau_nominal": [phase.tau_nominal for phase in study.phases],
                "tau_actual": [phase.tau_actual for phase in study.phases],
                "files": files,
                "byte_lengths": byte_lengths,
                "tissue": [p.to_dict() if p is not None else None for p in study.tissue_map.params],
            }
        )

    manifest_text = "".join(json.dumps(entry, sort_keys=True) + "\n" for entry in entries)
    try:
        (root / MANIFEST_NAME).write_text(manifest_text, encoding="utf-8")
    except OSError as exc:
        raise OSError(f"Écriture impossible : {root / MANIFEST_NAME} ({exc.strerror}).") from exc

    digest = _dataset_digest(root, entries, manifest_text)
    header = {
        "format_version": FORMAT_VERSION,
        "seed": seed,
        "config_hash": config_hash(cfg),
        "n_studies": cfg.n_studies,
        "dataset_hash": digest,
    }
    (root / HEADER_NAME).write_text(json.dumps(header, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    logger.info("Jeu de fantômes écrit dans %s (%d études, empreinte %s).", root, len(entries), digest[:12])
    return DatasetManifest(root, entries, seed, header["config_hash"], digest)


def _dataset_digest(root: Path, entries: Sequence[Dict], manifest_text: str) -> str:
    digest = hashlib.sha256(manifest_text.encode("utf-8"))
    for entry in entries:
        for key in sorted(entry["files"]):
            digest.update((root / entry["files"][key]).read_bytes())
    return digest.hexdigest()


def load_manifest(root: Path | str) -> DatasetManifest:
    """Relire le manifeste et vérifier la présence et la longueur de chaque fichier."""

    root = Path(root)
    try:
        header = json.loads((root / HEADER_NAME).read_text(encoding="utf-8"))
        lines = (root / MANIFEST_NAME).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise OSError(f"Jeu de données illisible : {root} ({exc.strerror}).") from exc

    entries = [json.loads(line) for line in lines if line.strip()]
    for entry in entries:
        for key, relative in entry["files"].items():
            path = root / relative
            if not path.exists():
                raise FileNotFoundError(f"Fichier référencé absent : {path}.")
            if path.stat().st_size != entry["byte_lengths"][key]:
                raise ContainerError(f"Longueur inattendue pour {path}.")

    return DatasetManifest(root, entries, int(header["seed"]), header["config_hash"], header["dataset_hash"])


def load_study(manifest: DatasetManifest, entry: Dict) -> StudyRecord:
    mask = read_volume(manifest.root / entry["files"]["mask"]).astype(np.int64)
    phases = [
        PhaseVolume(label, float(nominal), float(actual), read_volume(manifest.root / entry["files"][label]))
        for label, nominal, actual in zip(entry["phases"], entry["tau_nominal"], entry["tau_actual"])
    ]
    tissue = TissueMap(
        labels=mask.copy(),
        params=tuple(TACParams.from_dict(p) if p is not None else None for p in entry["tissue"]),
    )
    return StudyRecord(
        id=entry["id"],
        lesion_class=entry["lesion_class"],
        seg_mask=mask,
        tissue_map=tissue,
        split=entry["split"],
    ).with_phases(phases).validate()


def load_studies(manifest: DatasetManifest, split: Optional[str] = None) -> List[StudyRecord]:
    entries = manifest.entries if split is None else manifest.split(split)
    return [load_study(manifest, entry) for entry in entries]
