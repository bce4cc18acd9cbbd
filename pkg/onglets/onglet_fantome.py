"""# Onglet Fantôme

Aperçu d'une étude synthétique : les quatre phases rendues pour une graine
et une classe de lésion, le masque et les courbes temps-atténuation des
tissus.

## Dépendances
- `phantom.py` : géométrie, tissus et rendu des phases.
- `graphiques/fantomegraph.py` : graphiques Altair.
- Bibliothèque `streamlit` pour l'interface.
"""
from __future__ import annotations

from dataclasses import replace

import streamlit as st

from configuration import LESION_CLASSES, PHASE_LABELS, TardisConfig
from graphiques.fantomegraph import build_phase_chart, build_tac_chart, image_frame, tac_frame
from phantom import rasterize_study, sample_phases


def rendu_fantome(tab, config: TardisConfig) -> None:
    st.write(
        "Chaque étude est rendue à partir d'une carte des tissus (fond, organe, tumeur) "
        "et de leurs courbes temps-atténuation. Toutes les phases sont affichées ici, "
        "indépendamment de la table des motifs d'acquisition."
    )
    col_seed, col_class = st.columns(2)
    seed = int(col_seed.number_input("Graine de géométrie", min_value=0, value=0, step=1))
    lesion_class = col_class.selectbox("Classe de lésion", LESION_CLASSES, index=1)

    cfg = replace(config.phantom, missing_patterns={"".join(PHASE_LABELS): 1.0})
    study = rasterize_study(seed, cfg, lesion_class=lesion_class, study_id=f"apercu_{seed}")
    study = sample_phases(study, seed + 1, cfg)

    images = {f"{phase.label} (τ={phase.tau_actual:.2f})": phase.image for phase in study.phases}
    images["masque"] = study.seg_mask * 100.0
    st.altair_chart(build_phase_chart(image_frame(images)), use_container_width=False)
    st.altair_chart(build_tac_chart(tac_frame(study.tissue_map.params)), use_container_width=True)
