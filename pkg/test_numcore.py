"""### Tests du moteur de gradient (numcore)

Softmax stabilisé, rétropropagation, convolutions contre différences finies,
optimiseur et modules.
"""

from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose

from numcore import (
    AdamW,
    Conv2d,
    ConvTranspose2d,
    Linear,
    Module,
    Parameter,
    ShapeError,
    Tensor,
    backward,
    check_gradients,
    clip_grad_norm,
    concat,
    conv2d,
    conv_transpose2d,
    frozen,
    log_softmax,
    matmul,
    mean,
    mse,
    softmax,
    stop_gradient,
    straight_through,
    sum_,
    trace,
)


def test_softmax_exemple_simple():
    probs = softmax(Tensor([np.log(1.0), np.log(3.0)])).data
    assert_allclose(probs, [0.25, 0.75], atol=1e-6)


def test_softmax_stable_pour_grands_logits():
    probs = softmax(Tensor([[1000.0, 1000.0, 999.0]]), axis=1).data
    assert np.all(np.isfinite(probs))
    assert_allclose(probs.sum(axis=1), [1.0], atol=1e-6)


def test_softmax_axe_invalide():
    with pytest.raises(ShapeError):
        softmax(Tensor(np.zeros((2, 3))), axis=2)


def test_log_softmax_coherent_avec_softmax():
    logits = Tensor([[0.3, -1.2, 2.0]])
    assert_allclose(np.exp(log_softmax(logits, axis=1).data), softmax(logits, axis=1).data, atol=1e-6)


def test_backward_exige_un_scalaire():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ShapeError):
        backward(x * 2.0)


def test_backward_accumule_les_chemins_multiples():
    x = Tensor([2.0], requires_grad=True)
    y = x * x + x * 3.0
    backward(sum_(y))
    assert_allclose(x.grad, [7.0])


def test_stop_gradient_coupe_le_graphe():
    x = Tensor([1.0, 2.0], requires_grad=True)
    out = sum_(stop_gradient(x) * x)
    backward(out)
    assert_allclose(x.grad, [1.0, 2.0])


def test_estimateur_direct_valeur_exacte():
    x = Tensor(np.float32([0.1, 0.7, -0.3]), requires_grad=True)
    codes = Tensor(np.float32([1.0 / 3.0, 2.0 / 7.0, -5.0]))
    out = straight_through(x, codes)
    np.testing.assert_array_equal(out.data, codes.data)
    backward(sum_(out * Tensor([1.0, 2.0, 3.0])))
    assert_allclose(x.grad, [1.0, 2.0, 3.0])
    assert codes.grad is None
    with pytest.raises(ShapeError):
        straight_through(x, Tensor(np.zeros(2)))


def test_trace_ordre_topologique():
    a = Tensor([1.0], requires_grad=True)
    b = a * 2.0
    c = b + a
    graph = trace(c)
    positions = {id(t): i for i, t in enumerate(graph.tensors)}
    assert positions[id(a)] < positions[id(b)] < positions[id(c)]


def test_mean_axe_et_concat():
    x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    out = mean(concat([x, x], axis=0), axis=0)
    assert out.shape == (3,)
    backward(sum_(out))
    assert_allclose(x.grad, np.full((2, 3), 0.5))


@pytest.mark.parametrize("stride,padding", [(1, 1), (2, 1), (1, 0)])
def test_conv2d_gradient_entree(stride, padding):
    rng = np.random.default_rng(3)
    weight = Tensor(rng.normal(size=(2, 3, 3, 3)))
    report = check_gradients(
        lambda x: sum_(conv2d(x, weight, stride=stride, padding=padding) ** 2),
        Tensor(rng.normal(size=(1, 3, 5, 5))),
    )
    assert report.passed, report.max_rel_error


def test_conv2d_gradient_poids():
    rng = np.random.default_rng(4)
    x = Tensor(rng.normal(size=(2, 1, 4, 4)))
    report = check_gradients(
        lambda w: sum_(conv2d(x, w, padding=1) ** 2),
        Tensor(rng.normal(size=(2, 1, 3, 3))),
    )
    assert report.passed, report.max_rel_error


def test_conv_transpose2d_double_la_taille_et_gradient():
    rng = np.random.default_rng(5)
    weight = Tensor(rng.normal(size=(2, 1, 3, 3)))
    x = Tensor(rng.normal(size=(1, 2, 3, 3)))
    out = conv_transpose2d(x, weight, stride=2, padding=1, output_padding=1)
    assert out.shape == (1, 1, 6, 6)
    report = check_gradients(
        lambda v: sum_(conv_transpose2d(v, weight, stride=2, padding=1, output_padding=1) ** 2),
        x,
    )
    assert report.passed, report.max_rel_error


def test_check_gradients_rejette_eps_hors_domaine():
    with pytest.raises(ValueError):
        check_gradients(lambda x: sum_(x), Tensor([1.0]), eps=0.1)


def test_check_gradients_signale_stop_gradient():
    report = check_gradients(lambda x: sum_(stop_gradient(x) * 1.0) + sum_(x * 0.0), Tensor([1.0, 2.0]))
    assert not report.passed


class _Pile(Module):
    def __init__(self, rng):
        self.first = Linear(3, 4, rng)
        self.blocks = [Conv2d(1, 2, 3, rng, padding=1), ConvTranspose2d(2, 1, 3, rng)]
        self.scale = Parameter(np.ones(1))


def test_module_parcourt_attributs_et_listes():
    module = _Pile(np.random.default_rng(0))
    names = [name for name, _ in module.named_parameters()]
    assert names[:2] == ["first.weight", "first.bias"]
    assert "blocks.0.weight" in names and "blocks.1.bias" in names
    assert names[-1] == "scale"
    assert module.parameter_count() == sum(p.size for p in module.parameters())


def test_state_dict_aller_retour_et_forme_invalide():
    source = _Pile(np.random.default_rng(0))
    target = _Pile(np.random.default_rng(1))
    target.load_state_dict(source.state_dict())
    assert_allclose(target.first.weight.data, source.first.weight.data)

    state = source.state_dict()
    state["scale"] = np.ones(2)
    with pytest.raises(ShapeError):
        target.load_state_dict(state)
    del state["scale"]
    with pytest.raises(KeyError):
        target.load_state_dict(state)


def test_frozen_coupe_puis_retablit_le_gradient():
    module = _Pile(np.random.default_rng(0))
    with frozen(module):
        assert not any(p.requires_grad for p in module.parameters())
    assert all(p.requires_grad for p in module.parameters())


def test_adamw_reduit_une_perte_quadratique():
    target = Tensor([3.0, -2.0])
    param = Parameter(np.zeros(2))
    optimizer = AdamW([param], lr=0.1, weight_decay=0.0)
    first = mse(param, target).item()
    for _ in range(200):
        optimizer.zero_grad()
        backward(mse(param, target))
        optimizer.step()
    assert mse(param, target).item() < first * 0.01


def test_clip_grad_norm():
    param = Parameter(np.zeros(2))
    param.grad = np.array([3.0, 4.0], dtype=np.float32)
    norm = clip_grad_norm([param], 1.0)
    assert norm == pytest.approx(5.0)
    assert_allclose(np.linalg.norm(param.grad), 1.0, rtol=1e-5)


def test_gel_fige_a_la_construction_du_graphe():
    module = _Pile(np.random.default_rng(0))
    x = Tensor(np.ones((1, 3)), requires_grad=True)
    with frozen(module):
        out = sum_(module.first(x))
    backward(out)
    assert module.first.weight.grad is None
    assert x.grad is not None


def test_matmul_exemples_et_formes():
    assert_allclose(matmul(Tensor([[1.0, 0.0], [0.0, 1.0]]), Tensor([[3.0], [4.0]])).data, [[3.0], [4.0]])
    assert_allclose(matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]])).data, [[11.0]])
    with pytest.raises(ShapeError, match=r"\(1, 2\).*\(3, 1\)"):
        matmul(Tensor([[1.0, 2.0]]), Tensor([[1.0], [2.0], [3.0]]))
