from collections import OrderedDict

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from subtask_induction import numerics as nx
from subtask_induction.model import build_model, is_maskable
from subtask_induction.sparsify import (BinaryMask, MaskState, SparsifyConfig, binarize, discover,
                                        discover_one, effective_params, init_mask, l0_penalty,
                                        schedule_beta, subnet_stats)


def state(logits, beta=1.0, lam=0.0):
    return MaskState(OrderedDict((k, np.asarray(v, dtype=np.float32)) for k, v in logits.items()),
                     beta, lam, SparsifyConfig())


def test_config_validation():
    with pytest.raises(ValueError):
        SparsifyConfig(beta_start=100, beta_final=1)
    with pytest.raises(ValueError):
        SparsifyConfig(epochs=0)
    assert SparsifyConfig(lambdas=1e-7).lambdas == (1e-7,)


def test_init_mask_covers_maskable_groups_only(tiny_config):
    p = build_model(tiny_config, 0)
    m = init_mask(p, SparsifyConfig())
    assert set(m.logits) == {k for k in p if is_maskable(k)}
    assert not {"tok_embed", "pos_embed", "unembed"} & set(m.logits)
    assert m.beta == 1.0
    for k, s in m.soft().items():
        assert s.shape == p[k].shape
        np.testing.assert_allclose(s, 0.47502, atol=1e-5)
    assert binarize(m).kept == 0
    with pytest.raises(ValueError):
        init_mask(p, SparsifyConfig(), filter=lambda name: False)


def test_effective_params_limits():
    theta = {"w": np.array([1.5, -2.0], dtype=np.float32), "e": np.ones(2, np.float32)}
    out = effective_params(theta, state({"w": [100.0, 100.0]}, beta=100.0))
    np.testing.assert_allclose(out["w"], theta["w"], atol=1e-6)
    assert out["e"] is theta["e"]
    np.testing.assert_allclose(effective_params(theta, state({"w": [0.0, 0.0]}))["w"], 0.5 * theta["w"])
    np.testing.assert_allclose(effective_params(theta, state({"w": [-0.1, -0.1]}))["w"],
                               0.47502 * theta["w"], rtol=1e-4)


@given(arrays(np.float64, (6,), elements=st.floats(-50, 50)), st.floats(1, 100),
       arrays(np.float64, (6,), elements=st.floats(-5, 5)))
def test_soft_mask_bounds(s, beta, theta):
    st_ = state({"w": s}, beta=beta)
    gate = st_.soft()["w"]
    assert np.all((gate >= 0) & (gate <= 1))
    eff = effective_params({"w": theta.astype(np.float32)}, st_)["w"]
    assert np.all(np.abs(eff) <= np.abs(theta.astype(np.float32)) + 1e-7)


def test_beta_schedule():
    c = SparsifyConfig(epochs=50)
    assert schedule_beta(0, c) == 1.0
    assert abs(schedule_beta(50, c) - 100.0) <= 1e-6
    assert schedule_beta(25, c) == pytest.approx(10.0, rel=1e-12)
    ratios = [schedule_beta(e + 1, c) / schedule_beta(e, c) for e in range(50)]
    assert max(ratios) - min(ratios) < 1e-9
    for bad in (-1, 51):
        with pytest.raises(ValueError):
            schedule_beta(bad, c)


def test_l0_penalty_values():
    assert float(l0_penalty(state({"w": [1.0, 2.0]}, lam=0.0)).data) == 0.0
    assert float(l0_penalty(state({"w": [0.0]}, lam=0.3)).data) == pytest.approx(0.15)
    assert float(l0_penalty(state({"w": np.full(10, -10.0)}, beta=100.0, lam=1.0)).data) < 1e-30


def test_l0_penalty_gradient():
    s = np.array([-0.3, 0.2, 0.05])
    leaf = {"w": nx.Tensor(s, requires_grad=True)}
    st_ = state({"w": s}, beta=2.0, lam=0.7)
    nx.backward(l0_penalty(st_, leaf))
    sig = 1 / (1 + np.exp(-2 * s))
    np.testing.assert_allclose(leaf["w"].grad, 0.7 * 2 * sig * (1 - sig), rtol=1e-10)


def test_binarize_strict():
    assert binarize(state({"w": [-0.1, 0.0, 0.3]})).masks["w"].tolist() == [False, False, True]


def test_subnet_stats():
    full = BinaryMask(OrderedDict([("h0.attn.qkv.weight", np.ones((2, 3))),
                                   ("h1.mlp.in.weight", np.zeros((4,)))]))
    s = subnet_stats(full)
    assert s["kept"] == 6 and s["total"] == 10 and s["density"] == 0.6
    assert s["layers"]["h0"]["fraction"] == 1.0 and s["layers"]["h1"]["fraction"] == 0.0
    assert subnet_stats(BinaryMask(OrderedDict(w=np.zeros(3))))["density"] == 0.0
    assert BinaryMask(OrderedDict(w=np.ones(3))).density == 1.0


def test_discovery_never_touches_theta(tiny_config, tiny_tokens):
    p = build_model(tiny_config, 0)
    snap = {k: v.copy() for k, v in p.items()}
    cfg = SparsifyConfig(epochs=3, lr=0.05, batch_size=25, lambdas=(1e-4,))
    res = discover(p, tiny_config, tiny_tokens, tiny_tokens[:40], cfg, seed=0)
    assert all(np.array_equal(p[k].view(np.uint32), snap[k].view(np.uint32)) for k in p)
    assert 0 <= res.eval_acc <= 1 and 0 <= res.density <= 1
    assert len(res.history) == 3 and res.candidates[0]["lambda"] == 1e-4
    assert set(res.mask.masks) == {k for k in p if is_maskable(k)}


def test_larger_penalty_is_sparser(tiny_config, tiny_tokens):
    p = build_model(tiny_config, 0)
    kw = dict(epochs=6, lr=0.05, batch_size=25)
    dens = {}
    for lam in (1e-8, 1e-6, 1e-1):
        dens[lam] = discover_one(p, tiny_config, tiny_tokens, tiny_tokens, SparsifyConfig(**kw),
                                 lam, seed=3).density
    assert dens[1e-6] <= dens[1e-8] + 0.02
    assert dens[1e-1] < dens[1e-8]


def test_grid_selection_prefers_accuracy_then_sparsity(tiny_config, tiny_tokens):
    p = build_model(tiny_config, 0)
    cfg = SparsifyConfig(epochs=2, lr=0.05, batch_size=50, lambdas=(1e-8, 1e-8))
    res = discover(p, tiny_config, tiny_tokens, tiny_tokens, cfg, seed=1)
    best = max(res.candidates, key=lambda c: (c["eval_acc"], -c["density"]))
    assert (res.eval_acc, res.density) == (best["eval_acc"], best["density"])
