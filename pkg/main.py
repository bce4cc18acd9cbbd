"""### Tableau de bord Streamlit

Ce fichier gère l'interface d'inspection : choix de la configuration et du
répertoire d'essai, puis assemblage des onglets. L'entraînement et les
balayages se lancent depuis `cli.py` ; l'interface ne fait que relire
leurs sorties.
"""
from __future__ import annotations

import sys
from pathlib import Path

import streamlit as st

APP_DIR = Path(__file__).parent
if str(APP_DIR) not in sys.path:
    sys.path.insert(0, str(APP_DIR))

from configuration import ConfigError, DEFAULT_CONFIG_PATH, load_config  # noqa: E402
from onglets import rendu_balayage, rendu_entrainement, rendu_fantome, rendu_latents  # noqa: E402

APP_VERSION = "0.1.0"


def main() -> None:
    st.set_page_config(page_title="TARDis", layout="wide")
    st.title("TARDis : phases de scanner incomplètes")
    st.markdown(
        "Inspection des fantômes synthétiques, des journaux d'entraînement, des balayages "
        "de sous-ensembles de phases et des représentations latentes. Les essais sont "
        "produits par `python cli.py train` puis `python cli.py eval sweep` et "
        "`python cli.py export-latents` dans un même répertoire."
    )
    st.caption(f"Version {APP_VERSION}")
    st.markdown("---")

    config_path = st.text_input("Fichier de configuration", value=str(DEFAULT_CONFIG_PATH))
    run_dir = Path(st.text_input("Répertoire d'essai", value="essai"))

    try:
        config = load_config(config_path)
    except (ConfigError, OSError) as exc:
        st.error(str(exc))
        return

    tabs = st.tabs(["Fantôme", "Entraînement", "Balayage", "Latents"])

    with tabs[0]:
        rendu_fantome(tabs[0], config)

    with tabs[1]:
        rendu_entrainement(tabs[1], run_dir)

    with tabs[2]:
        rendu_balayage(tabs[2], run_dir)

    with tabs[3]:
        rendu_latents(tabs[3], run_dir)


if __name__ == "__main__":
    main()
