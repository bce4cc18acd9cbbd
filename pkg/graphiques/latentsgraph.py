"""Graphiques pour l'onglet Latents.

Les vecteurs exportés sont projetés sur leurs deux premières composantes
principales (scikit-learn) avant affichage.
"""

from __future__ import annotations

import altair as alt
import numpy as np
import pandas as pd
from sklearn.decomposition import PCA

from evaluation import feature_columns


def project_latents(frame: pd.DataFrame) -> pd.DataFrame:
    features = feature_columns(frame)
    if len(frame) < 2 or not features:
        raise ValueError("Projection impossible : au moins deux lignes et une colonne de caractéristiques.")
    components = PCA(n_components=2, random_state=0).fit_transform(frame[features].to_numpy(dtype=np.float64))
    projected = frame[["study_id", "kind", "label", "tau_actual"]].copy()
    projected["label"] = projected["label"].fillna("-").replace("", "-")
    projected["famille"] = np.where(frame["kind"] == "static", "statique", "dynamique")
    projected["pc1"] = components[:, 0]
    projected["pc2"] = components[:, 1]
    return projected


def build_latent_chart(projected: pd.DataFrame) -> alt.Chart:
    return (
        alt.Chart(projected)
        .mark_circle(size=40, opacity=0.7)
        .encode(
            x=alt.X("pc1:Q", title="Composante 1"),
            y=alt.Y("pc2:Q", title="Composante 2"),
            color=alt.Color("famille:N", title="Représentation"),
            shape=alt.Shape("label:N", title="Phase"),
            tooltip=[
                alt.Tooltip("study_id:N", title="Étude"),
                alt.Tooltip("kind:N", title="Type"),
                alt.Tooltip("tau_actual:Q", title="τ", format=".3f"),
            ],
        )
        .properties(title="Représentations statiques et dynamiques")
    )
