"""# Onglet Entraînement

Lecture du journal `train_log.csv` d'un répertoire d'essai : pertes,
estimations CLUB, Dice de validation et taux d'apprentissage par époque.
"""
from __future__ import annotations

from pathlib import Path

import pandas as pd
import streamlit as st

from graphiques.entrainementgraph import build_history_chart, long_history
from trainer import LOG_NAME


def rendu_entrainement(tab, run_dir: Path) -> None:
    log_path = run_dir / LOG_NAME
    if not log_path.exists():
        st.info(f"Aucun journal d'entraînement dans {run_dir}.")
        return

    history = pd.read_csv(log_path)
    if history.empty:
        st.info("Le journal ne contient aucune époque.")
        return

    st.altair_chart(build_history_chart(long_history(history)), use_container_width=True)
    st.altair_chart(
        build_history_chart(
            long_history(history, ("mi_static_dynamic", "mi_dynamic_dynamic")), title="Estimations CLUB"
        ),
        use_container_width=True,
    )
    st.altair_chart(
        build_history_chart(long_history(history, ("val_dice", "lr")), title="Validation et taux"),
        use_container_width=True,
    )
    st.dataframe(history, use_container_width=True)
