"""### Tests des constructeurs de graphiques Altair"""

from __future__ import annotations

import altair as alt
import numpy as np
import pandas as pd
import pytest

from graphiques.balayagegraph import build_size_chart, build_sweep_chart
from graphiques.entrainementgraph import build_history_chart, long_history
from graphiques.fantomegraph import build_phase_chart, build_tac_chart, image_frame, tac_frame
from graphiques.latentsgraph import build_latent_chart, project_latents
from phantom import TACParams


def test_balayage():
    table = pd.DataFrame(
        {
            "subset": ["N", "NA", "Average"],
            "n_phases": [1, 2, 1.5],
            "n_studies": [3, 3, 3.0],
            "dice": [0.5, 0.7, 0.6],
            "status": ["ok", "ok", "ok"],
        }
    )
    chart = build_sweep_chart(table)
    assert isinstance(chart, alt.Chart)
    assert list(chart.data["subset"]) == ["N", "NA"]
    assert isinstance(build_size_chart(pd.DataFrame({"n_phases": [1, 2], "dice": [0.5, 0.7]})), alt.Chart)


def test_historique_long():
    history = pd.DataFrame({"epoch": [1, 2], "total": [3.0, 2.0], "agn": [1.0, 0.5], "lr": [0.1, 0.05]})
    frame = long_history(history)
    assert len(frame) == 4
    assert set(frame["terme"]) == {"total", "agn"}
    assert isinstance(build_history_chart(frame), alt.Chart)
    assert long_history(pd.DataFrame({"lr": [0.1]})).empty


def test_images_et_courbes():
    frame = image_frame({"N": np.zeros((4, 4)), "A": np.ones((1, 4, 4))})
    assert len(frame) == 32
    assert set(frame["phase"]) == {"N", "A"}
    assert isinstance(build_phase_chart(frame), alt.FacetChart)

    curves = tac_frame([TACParams(-50.0), None, TACParams(40.0, ((60.0, 0.5, 0.1),))], points=11)
    assert len(curves) == 22
    assert set(curves["tissu"]) == {"fond", "tumeur"}
    assert curves["hu"].max() == pytest.approx(100.0)
    assert isinstance(build_tac_chart(curves), alt.Chart)


def test_projection_des_latents():
    rng = np.random.default_rng(0)
    frame = pd.DataFrame(
        {
            "study_id": ["a", "a", "b", "b"],
            "kind": ["static", "dynamic-1", "static", "dynamic-1"],
            "label": ["", "A", "", "V"],
            "tau_actual": [np.nan, 0.3, np.nan, 0.6],
            "f000": rng.normal(size=4),
            "f001": rng.normal(size=4),
            "f002": rng.normal(size=4),
        }
    )
    projected = project_latents(frame)
    assert list(projected["famille"]) == ["statique", "dynamique", "statique", "dynamique"]
    assert projected["label"].iloc[0] == "-"
    assert isinstance(build_latent_chart(projected), alt.Chart)
    with pytest.raises(ValueError):
        project_latents(frame.iloc[:1])
