import math

import numpy as np
import pytest

from subtask_induction.model import (ModelConfig, answer_accuracy, build_model, forward,
                                     is_maskable, n_params, param_shapes, predict_answers,
                                     sequence_loss)
from subtask_induction.training import TrainConfig, train


def logits(*args):
    return forward(*args).data


def closed_form_count(L, d, f, V, T=4):
    embeddings = V * d + T * d
    block = (2 * d) + (d * 3 * d + 3 * d) + (d * d + d) + (2 * d) + (d * f + f) + (f * d + d)
    return embeddings + L * block + 2 * d + V * d


@pytest.mark.parametrize("layers", [2, 4, 6, 8, 10, 12])
def test_parameter_count(layers):
    cfg = ModelConfig(n_layers=layers, vocab_size=101)
    expected = closed_form_count(layers, 128, 512, 101)
    assert n_params(build_model(cfg, 0)) == expected
    assert sum(math.prod(s) for s in param_shapes(cfg).values()) == expected


def test_two_layer_desk_count():
    assert n_params(build_model(ModelConfig(), 0)) == 423_168  # 2 * 12928 + 512 + 2 * 198272 + 256


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(d_model=130, n_heads=4)
    with pytest.raises(ValueError):
        ModelConfig(seq_len=5)
    assert ModelConfig.from_dict(ModelConfig().to_dict()) == ModelConfig()


def test_build_is_deterministic(tiny_config):
    a, b, c = build_model(tiny_config, 3), build_model(tiny_config, 3), build_model(tiny_config, 4)
    assert all(np.array_equal(a[k], b[k]) for k in a)
    assert not all(np.array_equal(a[k], c[k]) for k in a if k.endswith("weight"))
    assert list(a) == list(param_shapes(tiny_config))


def test_biases_zero_gains_one(tiny_config):
    p = build_model(tiny_config, 0)
    for k, v in p.items():
        if k.endswith(".bias"):
            assert not v.any()
        if k.endswith(".gain"):
            assert np.all(v == 1)


def test_zero_init_gives_zero_logits():
    cfg = ModelConfig(n_layers=2, n_heads=2, d_model=8, d_ff=16, vocab_size=11, init_std=0.0)
    p = build_model(cfg, 0)
    assert all(not v.any() for k, v in p.items() if k.endswith("weight") or "embed" in k)
    out = logits(p, [1, 2, 10, 3], cfg)
    assert out.shape == (4, 11)
    assert not out.any()


def test_unembed_permutation(tiny_config):
    p = build_model(tiny_config, 1)
    perm = np.random.default_rng(0).permutation(11)
    q = dict(p, unembed=p["unembed"][perm])
    tok = np.array([[1, 2, 10, 3], [4, 4, 10, 2]])
    np.testing.assert_allclose(logits(q, tok, tiny_config), logits(p, tok, tiny_config)[..., perm],
                               rtol=1e-6, atol=1e-6)


def test_causality(tiny_config):
    p = build_model(tiny_config, 2)
    rng = np.random.default_rng(1)
    for _ in range(20):
        tok = rng.integers(0, 11, size=4)
        base = logits(p, tok, tiny_config)
        for k in range(3):
            changed = tok.copy()
            changed[k + 1:] = rng.integers(0, 11, size=3 - k)
            np.testing.assert_array_equal(logits(p, changed, tiny_config)[:k + 1], base[:k + 1])


def test_override_with_stored_params_is_identical(tiny_config):
    p = build_model(tiny_config, 2)
    tok = np.array([[1, 2, 10, 3], [5, 6, 10, 2]])
    override = {k: v for k, v in p.items() if is_maskable(k)}
    assert np.array_equal(logits(p, tok, tiny_config, override), logits(p, tok, tiny_config))


def test_maskable_groups(tiny_config):
    names = [k for k in param_shapes(tiny_config) if is_maskable(k)]
    assert names == ["h0.attn.qkv.weight", "h0.attn.qkv.bias", "h0.attn.out.weight",
                     "h0.attn.out.bias", "h0.mlp.in.weight", "h0.mlp.in.bias",
                     "h0.mlp.out.weight", "h0.mlp.out.bias"]


def test_out_of_range_token(tiny_config):
    p = build_model(tiny_config, 0)
    with pytest.raises(IndexError):
        logits(p, [0, 11, 10, 0], tiny_config)


def test_untrained_loss_near_log_v():
    cfg = ModelConfig(n_layers=1, n_heads=2, d_model=8, d_ff=16, vocab_size=11, init_std=1e-4)
    p = build_model(cfg, 0)
    loss = sequence_loss(p, np.array([[1, 2, 10, 3]] * 3), cfg)
    assert float(loss.data) == pytest.approx(math.log(11), rel=1e-3)


def test_loss_mean_invariance(tiny_config):
    p = build_model(tiny_config, 0)
    row = np.array([[3, 4, 10, 5]])
    one = float(sequence_loss(p, row, tiny_config).data)
    many = float(sequence_loss(p, np.repeat(row, 7, axis=0), tiny_config).data)
    assert many == pytest.approx(one, rel=1e-6)


def test_empty_batch_rejected(tiny_config):
    p = build_model(tiny_config, 0)
    with pytest.raises(ValueError):
        sequence_loss(p, np.zeros((0, 4), dtype=int), tiny_config)
    with pytest.raises(ValueError):
        answer_accuracy(p, np.zeros((0, 4), dtype=int), tiny_config)


def test_constant_predictor_accuracy_is_answer_frequency(tiny_config, tiny_tokens):
    p = build_model(tiny_config, 0)
    p["unembed"][:] = 0
    p["unembed"][0, 0] = 1.0
    p["ln_f.bias"][:] = 1.0
    p["ln_f.gain"][:] = 0.0  # hidden state is all ones, so logit 0 wins
    assert np.all(predict_answers(p, tiny_tokens, tiny_config) == 0)
    counting = np.mean(tiny_tokens[:, 3] == 0)
    assert answer_accuracy(p, tiny_tokens, tiny_config) == counting


def test_loss_decreases_early(tiny_config, tiny_tokens):
    p = build_model(tiny_config, 0)
    res = train(p, tiny_config, tiny_tokens, None, TrainConfig(epochs=5, lr=3e-3, batch_size=16),
                seed=0)
    losses = [h["train_loss"] for h in res.history]
    upticks = sum(b > a for a, b in zip(losses, losses[1:]))
    assert upticks <= 1 and losses[-1] < losses[0]
