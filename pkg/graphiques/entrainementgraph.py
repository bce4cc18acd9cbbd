"""Graphiques pour l'onglet Entraînement."""

from __future__ import annotations

from typing import Sequence

import altair as alt
import pandas as pd

LOSS_COLUMNS = ("total", "agn", "spe", "de", "seg")


def long_history(history: pd.DataFrame, columns: Sequence[str] = LOSS_COLUMNS) -> pd.DataFrame:
    present = [column for column in columns if column in history.columns]
    if "epoch" not in history.columns or not present:
        return pd.DataFrame(columns=["epoch", "terme", "valeur"])
    return history.melt(id_vars="epoch", value_vars=present, var_name="terme", value_name="valeur")


def build_history_chart(long_frame: pd.DataFrame, title: str = "Pertes par époque") -> alt.Chart:
    return (
        alt.Chart(long_frame)
        .mark_line(point=True)
        .encode(
            x=alt.X("epoch:Q", title="Époque"),
            y=alt.Y("valeur:Q", title="Valeur"),
            color=alt.Color("terme:N", title="Terme"),
            tooltip=[
                alt.Tooltip("epoch:Q", title="Époque"),
                alt.Tooltip("terme:N", title="Terme"),
                alt.Tooltip("valeur:Q", title="Valeur", format=".4f"),
            ],
        )
        .properties(title=title)
    )
