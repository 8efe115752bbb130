import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from subtask_induction.tasks import (TaskSpec, concat, decode, encode, eval_task, gen_ambiguous_core,
                                     gen_disambiguation, gen_train, load_dataset, regenerate,
                                     save_dataset, standard_tasks)

EXPRS = ["a+ab", "a^2+b^2", "a^2+ab", "a^2+ab+b^2", "a^3+ab", "a^2-b^2", "ab", "a", "a^2", "a+b"]


def brute(expr_terms, a, b, p):
    return sum(c * a ** i * b ** j for c, i, j in expr_terms) % p


def test_spec_examples():
    assert eval_task(TaskSpec.parse("a+ab"), 3, 4) == 1
    assert eval_task(TaskSpec.parse("a^2+ab"), 5, 2) == 0
    assert eval_task(TaskSpec.parse("a^2-b^2"), 1, 2) == 4


def test_parse_and_format():
    assert TaskSpec.parse("a^2 - b^2").terms == ((1, 2, 0), (-1, 0, 2))
    assert TaskSpec.parse("2a^2").terms == ((2, 2, 0),)
    assert TaskSpec.parse("a+ab").expr == "a+ab"
    for e in EXPRS:
        assert TaskSpec.parse(TaskSpec.parse(e).expr) == TaskSpec.parse(e)
    for bad in ("", "a+", "c", "a**2"):
        with pytest.raises(ValueError):
            TaskSpec.parse(bad)


@pytest.mark.parametrize("expr", EXPRS)
def test_eval_matches_brute_force_exhaustively(expr):
    spec = TaskSpec.parse(expr, 7, 100)
    a, b = np.meshgrid(np.arange(100), np.arange(100), indexing="ij")
    got = eval_task(spec, a.ravel(), b.ravel())
    want = [brute(spec.terms, x, y, 7) for x, y in itertools.product(range(100), repeat=2)]
    assert got.tolist() == want
    assert got.min() >= 0 and got.max() < 7


@given(st.integers(0, 999), st.integers(0, 999), st.sampled_from(EXPRS))
def test_scalar_and_vector_paths_agree(a, b, expr):
    spec = TaskSpec.parse(expr, 7, 1000)
    assert eval_task(spec, a, b) == int(eval_task(spec, np.array([a]), np.array([b]))[0])
    assert eval_task(spec, a, b) == brute(spec.terms, a, b, 7)


def test_gen_train_size_and_distinct():
    spec = TaskSpec.parse("a+ab")
    ds = gen_train(spec, 0.2, seed=0, coverage=False)
    assert len(ds) == 2000 and len(ds.pair_set()) == 2000
    assert len(gen_train(spec, 1.0, seed=0, coverage=False)) == 10_000
    with pytest.raises(ValueError):
        gen_train(spec, 10_001, seed=0)


def test_gen_train_coverage_repair():
    spec = TaskSpec.parse("a+ab")
    ds = gen_train(spec, 20, seed=1, coverage=True)
    assert set(ds.pairs.reshape(-1)) == set(range(100))
    tail = ds.pairs[20:]
    assert np.all(tail[:, 0] == tail[:, 1])
    assert len(ds.pair_set()) == len(ds)


def test_generation_deterministic():
    spec = TaskSpec.parse("a+ab")
    assert np.array_equal(gen_train(spec, 0.3, 5).pairs, gen_train(spec, 0.3, 5).pairs)
    assert not np.array_equal(gen_train(spec, 0.3, 5).pairs, gen_train(spec, 0.3, 6).pairs)


def test_disambiguation_respects_exclusion():
    spec = TaskSpec.parse("a^2+ab")
    core = gen_ambiguous_core(spec)
    ev = gen_disambiguation(spec, 1000, 3, core, split="eval")
    tr = gen_disambiguation(spec, 500, 4, [core, ev])
    assert not (ev.pair_set() & core.pair_set())
    assert not (tr.pair_set() & (ev.pair_set() | core.pair_set()))
    assert len(gen_disambiguation(spec, 0, 1)) == 0
    with pytest.raises(ValueError):
        gen_disambiguation(spec, 10_000, 1, core)


def test_ambiguous_core():
    t2 = TaskSpec.parse("a^2+ab", 7, 100)
    core = gen_ambiguous_core(t2)
    assert len(core) == 100
    assert core.tokens[3].tolist() == [3, 3, 100, 4]
    assert len(gen_ambiguous_core(TaskSpec.parse("a^2+ab", 7, 1000))) == 1000
    for alt in ("2a^2", "2b^2", "a^2+b^2"):
        assert np.array_equal(core.answers, core.with_spec(TaskSpec.parse(alt, 7, 100)).answers)
    # off the diagonal the candidates disagree, so the core really is ambiguous
    off = np.array([[1, 2], [3, 5]])
    assert not np.array_equal(eval_task(t2, off[:, 0], off[:, 1]),
                              eval_task(TaskSpec.parse("2a^2"), off[:, 0], off[:, 1]))


def test_encode_decode():
    assert encode(3, 4, 1, 100) == [3, 4, 100, 1]
    for a, b, c in [(0, 0, 0), (99, 5, 6), (7, 99, 3)]:
        assert decode(encode(a, b, c, 100), 100) == (a, b, c)
    with pytest.raises(ValueError):
        encode(100, 0, 0, 100)
    with pytest.raises(ValueError):
        decode([1, 2, 3, 4], 100)


def test_dataset_file_roundtrip(tmp_path):
    spec = TaskSpec.parse("a^2-b^2")
    core = gen_ambiguous_core(spec)
    ds = concat(core, gen_disambiguation(spec, 50, 9, core))
    path = tmp_path / "d.csv"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert np.array_equal(back.tokens, ds.tokens) and back.spec == spec
    assert np.array_equal(regenerate(ds.recipe).tokens, ds.tokens)
    text = path.read_text().splitlines()
    text[5] = "1,2,100,0"
    path.write_text("\n".join(text) + "\n")
    with pytest.raises(ValueError):
        load_dataset(path)


def test_standard_tasks_cover_battery():
    t = standard_tasks()
    for e in ("a+ab", "a^2+b^2", "a^2+ab", "a^2+ab+b^2", "a^3+ab", "a^2-b^2"):
        assert e in t
    assert t["T1"].sep_id == 100 and t["T1"].vocab_size == 101
