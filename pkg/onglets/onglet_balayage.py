"""# Onglet Balayage

Rapport de balayage des sous-ensembles de phases (`sweep.csv`) et sa
moyenne par taille de sous-ensemble.
"""
from __future__ import annotations

from pathlib import Path

import pandas as pd
import streamlit as st

from evaluation import METRIC_COLUMNS, read_sweep_report
from graphiques.balayagegraph import build_size_chart, build_sweep_chart


def rendu_balayage(tab, run_dir: Path) -> None:
    report_path = run_dir / "sweep.csv"
    if not report_path.exists():
        st.info(f"Aucun rapport de balayage dans {run_dir}.")
        return

    table = read_sweep_report(report_path)
    metric = st.selectbox("Métrique", METRIC_COLUMNS, index=0)
    st.altair_chart(build_sweep_chart(table, metric), use_container_width=True)

    by_size_path = run_dir / "sweep_by_size.csv"
    if by_size_path.exists():
        st.altair_chart(build_size_chart(pd.read_csv(by_size_path), metric), use_container_width=True)

    st.dataframe(table, use_container_width=True)
    st.download_button(
        label="Télécharger le rapport CSV",
        data=report_path.read_text(encoding="utf-8"),
        file_name="sweep.csv",
        mime="text/csv",
    )
