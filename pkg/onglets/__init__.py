"""# Onglets du tableau de bord

Chaque fonction `rendu_*` reçoit un onglet de `st.tabs`. Seul l'onglet
Fantôme calcule quelque chose ; les trois autres relisent un répertoire
d'essai produit par `cli.py` et n'y écrivent jamais.

- `rendu_fantome` : rend une étude pour une graine et une classe de lésion.
- `rendu_entrainement` : courbes de `train_log.csv` par époque.
- `rendu_balayage` : `sweep.csv`, moyenne par nombre de phases.
- `rendu_latents` : projection de `latents.csv` et résumé JSON associé.
"""
from .onglet_balayage import rendu_balayage
from .onglet_entrainement import rendu_entrainement
from .onglet_fantome import rendu_fantome
from .onglet_latents import rendu_latents

__all__ = [
    "rendu_balayage",
    "rendu_entrainement",
    "rendu_fantome",
    "rendu_latents",
]
