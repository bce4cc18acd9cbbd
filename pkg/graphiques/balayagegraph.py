"""Graphiques pour l'onglet Balayage."""

from __future__ import annotations

import altair as alt
import pandas as pd


def build_sweep_chart(table: pd.DataFrame, metric: str = "dice") -> alt.Chart:
    """Barres du score `metric` par sous-ensemble de phases (ligne Average exclue)."""

    rows = table[(table["subset"] != "Average") & (table["status"] == "ok")]
    return (
        alt.Chart(rows)
        .mark_bar()
        .encode(
            x=alt.X("subset:N", title="Sous-ensemble", sort=list(rows["subset"])),
            y=alt.Y(f"{metric}:Q", title=metric),
            color=alt.Color("n_phases:O", title="Phases"),
            tooltip=[
                alt.Tooltip("subset:N", title="Sous-ensemble"),
                alt.Tooltip(f"{metric}:Q", title=metric, format=".4f"),
                alt.Tooltip("n_studies:Q", title="Études"),
            ],
        )
        .properties(title=f"{metric} par sous-ensemble de phases")
    )


def build_size_chart(by_size: pd.DataFrame, metric: str = "dice") -> alt.Chart:
    return (
        alt.Chart(by_size)
        .mark_line(point=True)
        .encode(
            x=alt.X("n_phases:O", title="Nombre de phases"),
            y=alt.Y(f"{metric}:Q", title=metric, scale=alt.Scale(zero=False)),
            tooltip=[alt.Tooltip(f"{metric}:Q", title=metric, format=".4f")],
        )
        .properties(title="Moyenne par taille de sous-ensemble")
    )
