"""### Configuration JSON du projet

Un seul document JSON à trois sections (`phantom`, `train`, `evaluation`).
Le fichier par défaut est `configurations/defaut.json` ; chaque section
correspond à une dataclass dont les valeurs par défaut reprennent les
constantes de conception (fantômes 48×48, dictionnaire de 512 entrées,
β = 0,25, abandon de modalités 20 %, lot de 4, taux initial 0,01).

La validation suit celle des dictionnaires JSON importés dans l'application :
objet attendu, clés connues, types contrôlés, message explicite sinon.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, Optional, Tuple

APP_DIR = Path(__file__).parent
DEFAULT_CONFIG_PATH = APP_DIR / "configurations" / "defaut.json"

PHASE_LABELS: Tuple[str, ...] = ("N", "A", "V", "D")
LESION_CLASSES: Tuple[str, ...] = ("none", "hypo", "hyper")
DYNAMIC_FILLS: Tuple[str, ...] = ("prior", "zero", "none")


class ConfigError(ValueError):
    """Configuration invalide (structure, type ou domaine de valeur)."""


def _default_missing_patterns() -> Dict[str, float]:
    return {
        "NAVD": 0.40,
        "NAV": 0.15,
        "NV": 0.10,
        "AV": 0.08,
        "NVD": 0.07,
        "V": 0.06,
        "N": 0.05,
        "NA": 0.05,
        "A": 0.04,
    }


@dataclass(frozen=True)
class PhantomConfig:
    """Géométrie, courbes de rehaussement et protocole d'acquisition des fantômes."""

    image_size: int = 48
    n_studies: int = 200
    class_probs: Dict[str, float] = field(
        default_factory=lambda: {"none": 0.3, "hypo": 0.35, "hyper": 0.35}
    )
    background_static: Tuple[float, float] = (-60.0, -40.0)
    organ_static: Tuple[float, float] = (30.0, 50.0)
    tumor_static: Tuple[float, float] = (25.0, 55.0)
    organ_amplitude: Tuple[float, float] = (40.0, 60.0)
    organ_center: float = 0.55
    organ_width: float = 0.15
    hypo_amplitude: Tuple[float, float] = (10.0, 30.0)
    hypo_center: float = 0.55
    hypo_width: float = 0.15
    hyper_amplitude: Tuple[float, float] = (80.0, 120.0)
    hyper_center: float = 0.30
    hyper_width: float = 0.10
    organ_semi_axes: Tuple[float, float] = (10.0, 18.0)
    tumor_radius: Tuple[float, float] = (3.0, 7.0)
    nominal_taus: Dict[str, float] = field(
        default_factory=lambda: {"N": 0.00, "A": 0.30, "V": 0.55, "D": 0.85}
    )
    jitter: float = 0.05
    noise_sigma: float = 5.0
    missing_patterns: Dict[str, float] = field(default_factory=_default_missing_patterns)
    split: Tuple[float, float, float] = (0.7, 0.15, 0.15)
    intensity_window: Tuple[float, float] = (-100.0, 200.0)

    def validate(self) -> None:
        if self.image_size < 16:
            raise ConfigError("phantom.image_size doit valoir au moins 16.")
        if self.n_studies < 1:
            raise ConfigError("phantom.n_studies doit être positif.")
        _check_distribution("phantom.class_probs", self.class_probs, LESION_CLASSES)
        if set(self.nominal_taus) != set(PHASE_LABELS):
            raise ConfigError("phantom.nominal_taus doit définir exactement N, A, V et D.")
        if any(not 0.0 <= tau <= 1.0 for tau in self.nominal_taus.values()):
            raise ConfigError("phantom.nominal_taus : valeurs attendues dans [0, 1].")
        for name in ("organ_width", "hypo_width", "hyper_width"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"phantom.{name} doit être strictement positif.")
        for name in ("organ_center", "hypo_center", "hyper_center"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"phantom.{name} doit appartenir à [0, 1].")
        for name in (
            "background_static",
            "organ_static",
            "tumor_static",
            "organ_amplitude",
            "hypo_amplitude",
            "hyper_amplitude",
            "organ_semi_axes",
            "tumor_radius",
            "intensity_window",
        ):
            low, high = getattr(self, name)
            if low > high:
                raise ConfigError(f"phantom.{name} : borne basse supérieure à la borne haute.")
        if self.tumor_radius[0] <= 0:
            raise ConfigError("phantom.tumor_radius doit être strictement positif.")
        if self.tumor_radius[1] > self.organ_semi_axes[0]:
            raise ConfigError(
                "phantom.tumor_radius dépasse le plus petit demi-axe possible de l'organe "
                f"({self.tumor_radius[1]} > {self.organ_semi_axes[0]})."
            )
        if self.organ_semi_axes[1] >= self.image_size / 2:
            raise ConfigError("phantom.organ_semi_axes dépasse la moitié de l'image.")
        if self.jitter < 0 or self.noise_sigma < 0:
            raise ConfigError("phantom.jitter et phantom.noise_sigma doivent être positifs.")
        if not self.missing_patterns:
            raise ConfigError("phantom.missing_patterns est vide.")
        for pattern in self.missing_patterns:
            labels = list(pattern)
            if not labels:
                raise ConfigError("phantom.missing_patterns contient un sous-ensemble vide.")
            if len(set(labels)) != len(labels) or not set(labels) <= set(PHASE_LABELS):
                raise ConfigError(f"phantom.missing_patterns : motif invalide « {pattern} ».")
        _check_distribution("phantom.missing_patterns", self.missing_patterns, None)
        if any(share < 0 for share in self.split) or abs(sum(self.split) - 1.0) > 1e-6:
            raise ConfigError("phantom.split doit contenir trois parts positives de somme 1.")


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparamètres d'optimisation, recopiés dans l'en-tête du checkpoint."""

    lr: float = 0.01
    lr_min: float = 1e-4
    weight_decay: float = 0.01
    batch_size: int = 4
    epochs: int = 60
    beta: float = 0.25
    lam: float = 1.0
    margin: float = 0.05
    dropout: float = 0.2
    dictionary_size: int = 512
    channels: int = 32
    latent_channels: int = 16
    grad_clip: float = 5.0
    club_hidden: int = 64
    club_lr: float = 1e-3
    clock_momentum: float = 0.9
    reseed_dead_codes: bool = True
    use_ranking: bool = True
    use_disentangle: bool = True
    dynamic_fill: str = "prior"
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("train.dropout doit appartenir à [0, 1).")
        if self.batch_size < 1:
            raise ConfigError("train.batch_size doit valoir au moins 1.")
        if self.epochs < 0:
            raise ConfigError("train.epochs ne peut pas être négatif.")
        if self.margin <= 0:
            raise ConfigError("train.margin doit être strictement positive.")
        if self.lr <= 0 or self.lr_min < 0 or self.lr_min > self.lr:
            raise ConfigError("train.lr et train.lr_min incohérents.")
        if self.dictionary_size < 2:
            raise ConfigError("train.dictionary_size doit valoir au moins 2.")
        if self.channels < 4 or self.channels % 2:
            raise ConfigError("train.channels doit être pair et au moins égal à 4.")
        if self.latent_channels < 1:
            raise ConfigError("train.latent_channels doit être positif.")
        if not 0.0 <= self.clock_momentum < 1.0:
            raise ConfigError("train.clock_momentum doit appartenir à [0, 1).")
        if self.dynamic_fill not in DYNAMIC_FILLS:
            raise ConfigError(
                f"train.dynamic_fill doit valoir {', '.join(DYNAMIC_FILLS)} (reçu « {self.dynamic_fill} »)."
            )


@dataclass(frozen=True)
class EvalConfig:
    """Options des balayages de sous-ensembles de modalités."""

    subsets: Tuple[str, ...] = ()
    stochastic_samples: int = 0
    split: str = "test"

    def validate(self) -> None:
        for subset in self.subsets:
            if not subset or not set(subset) <= set(PHASE_LABELS) or len(set(subset)) != len(subset):
                raise ConfigError(f"evaluation.subsets : sous-ensemble invalide « {subset} ».")
        if self.stochastic_samples < 0:
            raise ConfigError("evaluation.stochastic_samples ne peut pas être négatif.")
        if self.split not in ("train", "val", "test"):
            raise ConfigError("evaluation.split doit valoir train, val ou test.")


@dataclass(frozen=True)
class TardisConfig:
    phantom: PhantomConfig = field(default_factory=PhantomConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> "TardisConfig":
        self.phantom.validate()
        self.train.validate()
        self.evaluation.validate()
        return self


def _check_distribution(name: str, table: Dict[str, float], allowed) -> None:
    if not table:
        raise ConfigError(f"{name} est vide.")
    if allowed is not None and not set(table) <= set(allowed):
        raise ConfigError(f"{name} : clés autorisées {', '.join(allowed)}.")
    if any(value < 0 for value in table.values()):
        raise ConfigError(f"{name} : probabilités négatives.")
    if abs(sum(table.values()) - 1.0) > 1e-6:
        raise ConfigError(f"{name} : la somme des probabilités doit valoir 1.")


def _coerce(section: str, key: str, value, default):
    """Convertir une valeur JSON vers le type de la valeur par défaut."""

    label = f"{section}.{key}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{label} doit être un booléen.")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{label} doit être un entier.")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{label} doit être un nombre.")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{label} doit être une chaîne.")
        return value
    if isinstance(default, dict):
        if not isinstance(value, dict) or not all(
            isinstance(k, str) and isinstance(v, (int, float)) and not isinstance(v, bool)
            for k, v in value.items()
        ):
            raise ConfigError(f"{label} doit être un objet {{clé: nombre}}.")
        return {k: float(v) for k, v in value.items()}
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{label} doit être une liste.")
        if key == "subsets":
            if not all(isinstance(item, str) for item in value):
                raise ConfigError(f"{label} doit contenir des chaînes.")
            return tuple(value)
        if len(value) != len(default) or not all(
            isinstance(item, (int, float)) and not isinstance(item, bool) for item in value
        ):
            raise ConfigError(f"{label} doit contenir {len(default)} nombres.")
        return tuple(float(item) for item in value)
    raise ConfigError(f"{label} : type non pris en charge.")


def _build_section(section: str, payload: object, default):
    if not isinstance(payload, dict):
        raise ConfigError(f"La section « {section} » doit être un objet JSON.")
    known = {f.name for f in fields(default)}
    unknown = sorted(set(payload) - known)
    if unknown:
        raise ConfigError(f"Clés inconnues dans « {section} » : {', '.join(unknown)}.")
    values = {key: _coerce(section, key, payload[key], getattr(default, key)) for key in payload}
    return replace(default, **values)


def config_from_dict(payload: object) -> TardisConfig:
    if not isinstance(payload, dict):
        raise ConfigError("Le fichier de configuration doit contenir un objet JSON.")
    unknown = sorted(set(payload) - {"phantom", "train", "evaluation"})
    if unknown:
        raise ConfigError(f"Sections inconnues : {', '.join(unknown)}.")
    config = TardisConfig(
        phantom=_build_section("phantom", payload.get("phantom", {}), PhantomConfig()),
        train=_build_section("train", payload.get("train", {}), TrainConfig()),
        evaluation=_build_section("evaluation", payload.get("evaluation", {}), EvalConfig()),
    )
    return config.validate()


def config_to_dict(config) -> Dict:
    """Sérialiser une configuration (ou une section) en dictionnaire JSON."""

    def _jsonable(value):
        if isinstance(value, tuple):
            return [_jsonable(item) for item in value]
        if isinstance(value, dict):
            return {key: _jsonable(item) for key, item in value.items()}
        return value

    return _jsonable(asdict(config))


def config_hash(config) -> str:
    canonical = json.dumps(config_to_dict(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def load_config(path: Optional[Path | str] = None) -> TardisConfig:
    """Charger et valider la configuration ; valeurs par défaut si `path` vaut None."""

    if path is None:
        return TardisConfig().validate()

    path = Path(path)
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise OSError(f"Lecture impossible : {path} ({exc.strerror}).") from exc
    except UnicodeDecodeError as exc:
        raise ConfigError(f"Impossible de décoder {path} en UTF-8.") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} n'est pas un JSON valide (ligne {exc.lineno}).") from exc

    return config_from_dict(payload)
