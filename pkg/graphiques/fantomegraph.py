"""Graphiques pour l'onglet Fantôme."""

from __future__ import annotations

from typing import Dict, Optional, Sequence

import altair as alt
import numpy as np
import pandas as pd

from phantom import TACParams, eval_tac

TISSUE_NAMES = ("fond", "organe", "tumeur")


def image_frame(images: Dict[str, np.ndarray]) -> pd.DataFrame:
    """Passer des images (H, W) ou (1, H, W) par phase au format long x, y, valeur, phase."""

    frames = []
    for label, image in images.items():
        plane = np.asarray(image).reshape(np.asarray(image).shape[-2:])
        rows, cols = np.indices(plane.shape)
        frames.append(
            pd.DataFrame(
                {"x": cols.ravel(), "y": rows.ravel(), "valeur": plane.ravel().astype(float), "phase": label}
            )
        )
    return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=["x", "y", "valeur", "phase"])


def build_phase_chart(frame: pd.DataFrame, title: str = "Phases acquises") -> alt.FacetChart:
    return (
        alt.Chart(frame)
        .mark_rect()
        .encode(
            x=alt.X("x:O", axis=None),
            y=alt.Y("y:O", axis=None),
            color=alt.Color("valeur:Q", scale=alt.Scale(scheme="greys"), title="HU"),
            tooltip=[
                alt.Tooltip("phase:N", title="Phase"),
                alt.Tooltip("valeur:Q", title="HU", format=".1f"),
            ],
        )
        .properties(width=160, height=160)
        .facet(column=alt.Column("phase:N", title=None))
        .properties(title=title)
    )


def tac_frame(params: Sequence[Optional[TACParams]], points: int = 101) -> pd.DataFrame:
    """Courbes temps-atténuation de chaque tissu sur [0, 1]."""

    taus = np.linspace(0.0, 1.0, points)
    records = []
    for name, tissue in zip(TISSUE_NAMES, params):
        if tissue is None:
            continue
        records.extend({"tau": float(tau), "hu": eval_tac(tissue, float(tau)), "tissu": name} for tau in taus)
    return pd.DataFrame(records, columns=["tau", "hu", "tissu"])


def build_tac_chart(frame: pd.DataFrame) -> alt.Chart:
    return (
        alt.Chart(frame)
        .mark_line()
        .encode(
            x=alt.X("tau:Q", title="τ"),
            y=alt.Y("hu:Q", title="HU"),
            color=alt.Color("tissu:N", title="Tissu"),
            tooltip=[
                alt.Tooltip("tissu:N", title="Tissu"),
                alt.Tooltip("tau:Q", title="τ", format=".2f"),
                alt.Tooltip("hu:Q", title="HU", format=".1f"),
            ],
        )
        .properties(title="Courbes temps-atténuation")
    )
