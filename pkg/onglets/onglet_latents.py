"""# Onglet Latents

Synthèse de l'export latent (silhouette, sondes τ, Spearman, CLUB) et
nuage des deux premières composantes principales.
"""
from __future__ import annotations

import json
from pathlib import Path

import pandas as pd
import streamlit as st

from evaluation import read_latents
from graphiques.latentsgraph import build_latent_chart, project_latents


def rendu_latents(tab, run_dir: Path) -> None:
    latents_path = run_dir / "latents.csv"
    if not latents_path.exists():
        st.info(f"Aucun export latent dans {run_dir}.")
        return

    summary_path = latents_path.with_suffix(".summary.json")
    if summary_path.exists():
        summary = json.loads(summary_path.read_text(encoding="utf-8"))
        st.table(pd.DataFrame([summary]).T.rename(columns={0: "valeur"}))

    frame = read_latents(latents_path)
    try:
        projected = project_latents(frame)
    except ValueError as exc:
        st.warning(str(exc))
        return
    st.altair_chart(build_latent_chart(projected), use_container_width=True)
