"""Self-checks run by ``subtask-induction verify``.

Each check returns ``(name, passed, detail)``.  None of them trains a model
for more than a few steps, so the whole suite finishes in well under a
minute.
"""

from __future__ import annotations

import itertools
from collections import OrderedDict
from typing import Callable

import numpy as np

from . import numerics as nx
from .model import ModelConfig, build_model, is_maskable
from .sparsify import BinaryMask, MaskState, SparsifyConfig, binarize, schedule_beta
from .tasks import TaskSpec, eval_task, gen_ambiguous_core
from .training import TrainConfig, train
from .transfer import sample_complement_subnet, transplant

FD_STEP = 1e-3
FD_RTOL = 1e-3
FD_FLOOR = 1e-6


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Norm-wise relative error with an absolute floor on the denominator."""
    num = float(np.linalg.norm(np.ravel(a) - np.ravel(b)))
    den = max(float(np.linalg.norm(np.ravel(a))), float(np.linalg.norm(np.ravel(b))), FD_FLOOR)
    return num / den


def finite_difference(f: Callable[[], float], x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central differences of scalar ``f`` with respect to ``x`` (modified in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        fp = f()
        flat[i] = old - step
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * step)
    return g


def check_op_gradient(build: Callable[[list], nx.Tensor], inputs: list[np.ndarray]) -> float:
    """Max relative error between backward() and central differences over inputs."""
    xs = [np.array(v, dtype=np.float64) for v in inputs]
    leaves = [nx.Tensor(v, requires_grad=True) for v in xs]
    out = build(leaves)
    nx.backward(out)
    worst = 0.0
    for leaf, v in zip(leaves, xs):
        def f():
            return float(build([nx.Tensor(x) for x in xs]).data)
        num = finite_difference(f, v)
        an = leaf.grad if leaf.grad is not None else np.zeros_like(v)
        worst = max(worst, relative_error(an, num))
    return worst


def _random_op_cases(rng: np.random.Generator, n: int):
    """Yield (label, builder, inputs) covering every differentiable op."""
    for i in range(n):
        kind = i % 9
        w = rng.normal(size=5)  # random projection turns outputs into a scalar
        if kind == 0:
            a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
            yield "matmul", lambda t: nx.sum_all(nx.matmul(t[0], t[1])), [a, b]
        elif kind == 1:
            x, W, bb = rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 5)), rng.normal(size=5)
            yield "linear", lambda t, w=w: nx.sum_all(nx.mul(nx.linear(t[0], t[1], t[2]), w)), [x, W, bb]
        elif kind == 2:
            x, g_, b_ = rng.normal(size=(3, 5)), rng.normal(size=5), rng.normal(size=5)
            yield "layer_norm", lambda t, w=w: nx.sum_all(nx.mul(nx.layer_norm(t[0], t[1], t[2]), w)), [x, g_, b_]
        elif kind == 3:
            x = rng.normal(size=(4, 5))
            yield "gelu", lambda t, w=w: nx.sum_all(nx.mul(nx.gelu(t[0]), w)), [x]
        elif kind == 4:
            x = rng.normal(size=(4, 5))
            yield "sigmoid", lambda t, w=w: nx.sum_all(nx.mul(nx.sigmoid(t[0]), w)), [x]
        elif kind == 5:
            z = rng.normal(size=(3, 6))
            tgt = rng.integers(0, 6, size=3)
            yield "softmax_cross_entropy", lambda t, tgt=tgt: nx.softmax_cross_entropy(t[0], tgt), [z]
        elif kind == 6:
            qkv = rng.normal(size=(2, 4, 12))
            proj = rng.normal(size=(2, 4, 4))
            yield "causal_attention", lambda t, p=proj: nx.sum_all(nx.mul(nx.causal_attention(t[0], 2), p)), [qkv]
        elif kind == 7:
            table = rng.normal(size=(6, 3))
            ids = rng.integers(0, 6, size=(2, 4))
            proj = rng.normal(size=(2, 4, 3))
            yield "embedding_lookup", lambda t, ids=ids, p=proj: nx.sum_all(nx.mul(nx.embedding_lookup(t[0], ids), p)), [table]
        else:
            a, b = rng.normal(size=(3, 5)), rng.normal(size=5)
            yield "add_mul", lambda t, w=w: nx.sum_all(nx.mul(nx.add(t[0], t[1]), nx.mul(t[0], w))), [a, b]


def gradient_suite(n_cases: int = 108, seed: int = 0) -> tuple[bool, str]:
    rng = nx.seeded_rng(seed)
    worst, worst_label = 0.0, ""
    for label, build, inputs in _random_op_cases(rng, n_cases):
        err = check_op_gradient(build, inputs)
        if err > worst:
            worst, worst_label = err, label
    return worst <= FD_RTOL, f"{n_cases} cases, worst rel. err {worst:.2e} ({worst_label})"


def tiny_config() -> ModelConfig:
    return ModelConfig(n_layers=1, n_heads=2, d_model=8, d_ff=16, vocab_size=11, init_std=0.3)


def mixture_identity() -> tuple[bool, str]:
    cfg = tiny_config()
    orig = build_model(cfg, 1)
    fresh = build_model(cfg, 2)
    rng = nx.seeded_rng(3)
    mask = BinaryMask(OrderedDict((k, rng.random(v.shape) < 0.3)
                                  for k, v in orig.items() if is_maskable(k)))
    mixed = transplant(orig, mask, cfg, reinit_seed=2, freeze=True, unmasked="reinit")
    ok = True
    for k, v in mixed.params.items():
        if k in mask.masks:
            g = mask.masks[k]
            ok &= np.array_equal(v[g], orig[k][g]) and np.array_equal(v[~g], fresh[k][~g])
            ok &= np.array_equal(mixed.trainable[k], ~g)
        else:
            ok &= np.array_equal(v, fresh[k])
    return bool(ok), f"{sum(m.size for m in mask.masks.values())} masked entries checked"


def frozen_bit_exact(epochs: int = 3) -> tuple[bool, str]:
    cfg = tiny_config()
    orig = build_model(cfg, 1)
    rng = nx.seeded_rng(4)
    mask = BinaryMask(OrderedDict((k, rng.random(v.shape) < 0.5)
                                  for k, v in orig.items() if is_maskable(k)))
    mixed = transplant(orig, mask, cfg, reinit_seed=5, freeze=True)
    before = {k: mixed.params[k][m].copy() for k, m in mask.masks.items()}
    toks = np.array([[a, b, 10, (a * b) % 7] for a in range(10) for b in range(10)])
    train(mixed.params, cfg, toks, None, TrainConfig(epochs=epochs, lr=1e-2, batch_size=16),
          seed=0, trainable=mixed.trainable, check_every_epoch=True)
    same = all(np.array_equal(mixed.params[k][m].view(np.uint32), before[k].view(np.uint32))
               for k, m in mask.masks.items())
    return same, f"{epochs} epochs, {sum(int(m.sum()) for m in mask.masks.values())} frozen entries"


def beta_endpoints() -> tuple[bool, str]:
    c = SparsifyConfig()
    b0, bn = schedule_beta(0, c), schedule_beta(c.epochs, c)
    return abs(b0 - 1.0) <= 1e-6 and abs(bn - 100.0) <= 1e-6, f"beta(0)={b0}, beta(n)={bn}"


def binarize_tie() -> tuple[bool, str]:
    st = MaskState(OrderedDict(w=np.array([-0.1, 0.0, 0.3], dtype=np.float32)), 1.0, 0.0,
                   SparsifyConfig())
    got = binarize(st).masks["w"].astype(int).tolist()
    return got == [0, 0, 1], f"s=[-0.1, 0, 0.3] -> {got}"


def complement_counts() -> tuple[bool, str]:
    rng = nx.seeded_rng(6)
    ref = BinaryMask(OrderedDict((f"g{i}", rng.random((20, 7)) < 0.2) for i in range(4)))
    comp = sample_complement_subnet(ref, 7)
    counts = ref.counts() == comp.counts()
    overlap = sum(int((ref.masks[k] & comp.masks[k]).sum()) for k in ref.masks)
    return counts and overlap == 0, f"counts equal={counts}, overlap={overlap}"


def ambiguous_core(input_max: int = 100, modulus: int = 7) -> tuple[bool, str]:
    target = TaskSpec.parse("a^2+ab", modulus, input_max)
    core = gen_ambiguous_core(target)
    ok = True
    for expr in ("2a^2", "2b^2", "a^2+b^2"):
        alt = TaskSpec.parse(expr, modulus, input_max)
        ok &= np.array_equal(core.answers, core.with_spec(alt).answers)
    return bool(ok), f"{len(core)} diagonal rows vs 2a^2, 2b^2, a^2+b^2"


def brute_force_task(input_max: int = 100) -> tuple[bool, str]:
    ok = True
    for expr in ("a+ab", "a^2+ab", "a^2-b^2", "a^3+ab", "a^2+ab+b^2"):
        spec = TaskSpec.parse(expr, 7, input_max)
        a, b = np.meshgrid(np.arange(input_max), np.arange(input_max), indexing="ij")
        vec = eval_task(spec, a.ravel(), b.ravel())
        brute = [sum(c * x ** i * y ** j for c, i, j in spec.terms) % 7
                 for x, y in itertools.product(range(input_max), repeat=2)]
        ok &= vec.tolist() == brute
    return bool(ok), f"5 tasks x {input_max ** 2} pairs"


def determinism() -> tuple[bool, str]:
    cfg = tiny_config()
    toks = np.array([[a, b, 10, (a + a * b) % 7] for a in range(10) for b in range(10)])

    def run():
        p = build_model(cfg, 11)
        return [h["train_loss"] for h in train(p, cfg, toks, toks[:20],
                                               TrainConfig(epochs=2, lr=1e-2, batch_size=16),
                                               seed=3).history]

    a, b = run(), run()
    return a == b, f"loss sequences {a} vs {b}"


CHECKS = OrderedDict([
    ("gradient checks", gradient_suite),
    ("mixture identity", mixture_identity),
    ("frozen weights bit-exact", frozen_bit_exact),
    ("beta schedule endpoints", beta_endpoints),
    ("binarize s>0 with tie", binarize_tie),
    ("complement counts and overlap", complement_counts),
    ("ambiguous core consistency", ambiguous_core),
    ("task vs brute force", brute_force_task),
    ("determinism", determinism),
])


def run_all(print_fn=print) -> bool:
    ok = True
    for name, fn in CHECKS.items():
        passed, detail = fn()
        ok &= passed
        print_fn(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
    return ok
