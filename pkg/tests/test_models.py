import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from duodec.core import Distribution
from duodec.models import (
    InvalidModel,
    ModelSpec,
    ParseError,
    deterministic_chain,
    dump_model,
    forward,
    forward_scored,
    load_model,
    noisy_chain,
    parse_model,
    perturbed,
    random_model,
    save_model,
)

from conftest import table_model


def test_forward_order0_ignores_context():
    m = table_model(2, {(): [0.7, 0.3]})
    for ctx in ([], [0], [1, 1, 0]):
        assert forward(m, ctx).tolist() == [0.7, 0.3]


def test_forward_direct_lookup():
    m = table_model(2, {(): [0.5, 0.5], (1,): [0.1, 0.9]})
    assert forward(m, [0, 1]).tolist() == [0.1, 0.9]


def test_forward_uniform_is_temperature_fixed_point():
    m = table_model(2, {(): [0.5, 0.5]}, temperature=0.5)
    assert forward(m, []).tolist() == [0.5, 0.5]


def test_forward_backs_off_to_shorter_context():
    m = table_model(3, {(): [0.2, 0.3, 0.5], (1,): [1, 0, 0], (0, 1): [0, 1, 0]}, order=2)
    assert forward(m, [0, 1]).tolist() == [0, 1, 0]
    assert forward(m, [2, 1]).tolist() == [1, 0, 0]
    assert forward(m, [1, 2]).tolist() == [0.2, 0.3, 0.5]
    assert forward(m, []).tolist() == [0.2, 0.3, 0.5]


def test_temperature_sharpens_and_flattens():
    m = table_model(2, {(): [0.8, 0.2]})
    sharp = forward(m.with_temperature(0.5), []).probs
    np.testing.assert_allclose(sharp, np.array([0.64, 0.04]) / 0.68)
    flat = forward(m.with_temperature(1e6), []).probs
    np.testing.assert_allclose(flat, [0.5, 0.5], atol=1e-6)
    assert forward(m.with_temperature(0.01), []).argmax() == 0


def test_forward_is_pure():
    m = random_model(np.random.default_rng(0), 4, order=2)
    assert forward(m, [1, 2]) == forward(m, [1, 2])


def test_forward_scored_single_candidate():
    m = random_model(np.random.default_rng(1), 3, order=1)
    assert forward_scored(m, [2], [0]) == [forward(m, [2])]


def test_forward_scored_context_free():
    m = table_model(3, {(): [0.2, 0.3, 0.5]})
    assert [d.tolist() for d in forward_scored(m, [1], [0, 2, 1])] == [[0.2, 0.3, 0.5]] * 3


def test_forward_scored_hand_traced():
    m = table_model(2, {(): [0.5, 0.5], (0,): [0.9, 0.1], (1,): [0.2, 0.8]})
    out = forward_scored(m, [0], [1, 1])
    assert [d.tolist() for d in out] == [[0.9, 0.1], [0.2, 0.8]]


def test_forward_scored_needs_candidates():
    with pytest.raises(ValueError):
        forward_scored(table_model(2, {(): [0.5, 0.5]}), [0], [])


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    vocab=st.integers(2, 6),
    order=st.integers(0, 3),
    data=st.data(),
)
def test_forward_scored_matches_repeated_forward(seed, vocab, order, data):
    m = random_model(np.random.default_rng(seed), vocab, order)
    ctx = data.draw(st.lists(st.integers(0, vocab - 1), max_size=5))
    cands = data.draw(st.lists(st.integers(0, vocab - 1), min_size=1, max_size=8))
    scored = forward_scored(m, ctx, cands)
    for t in range(len(cands)):
        assert scored[t] == forward(m, ctx + cands[:t])


def test_load_minimal_file(tmp_path):
    path = tmp_path / "m.model"
    path.write_text("vocab 2\ndefault : 0.7 0.3\n")
    m = load_model(path)
    assert m.order == 0 and m.vocab_size == 2
    assert forward(m, [1]).tolist() == [0.7, 0.3]


def test_load_row_not_normalized(tmp_path):
    path = tmp_path / "m.model"
    path.write_text("vocab 2\ndefault : 0.6 0.3\n")
    with pytest.raises(InvalidModel):
        load_model(path)


def test_load_missing_default(tmp_path):
    path = tmp_path / "m.model"
    path.write_text("vocab 2\norder 1\nctx 0 : 0.5 0.5\n")
    with pytest.raises(InvalidModel):
        load_model(path)


@pytest.mark.parametrize(
    "text, exc",
    [
        ("order 1\ndefault : 0.5 0.5\n", ParseError),
        ("vocab 2\ndefault : 0.5 x\n", ParseError),
        ("vocab 2\nfoo : 0.5 0.5\n", ParseError),
        ("vocab 2\nvocab\n", ParseError),
        ("vocab two\ndefault : 0.5 0.5\n", ParseError),
        ("vocab 2\ndefault : 0.5 0.5\ndefault : 0.5 0.5\n", ParseError),
        ("vocab 2\ndefault : 0.5 0.25 0.25\n", InvalidModel),
        ("vocab 2\norder 1\nctx 5 : 0.5 0.5\ndefault : 0.5 0.5\n", InvalidModel),
        ("vocab 2\norder 1\nctx 0,1 : 0.5 0.5\ndefault : 0.5 0.5\n", InvalidModel),
        ("vocab 2\ndefault : 1.5 -0.5\n", InvalidModel),
        ("vocab 1\ndefault : 1.0\n", InvalidModel),
    ],
)
def test_parse_errors(text, exc):
    with pytest.raises(exc):
        parse_model(text)


def test_comments_and_full_format():
    text = """# toy
vocab 3
order 2
temperature 1.0
ctx 0 : 0.9 0.05 0.05   # after a 0
ctx 2,1 : 0.2 0.3 0.5
default : 0.4 0.4 0.2
"""
    m = parse_model(text)
    assert forward(m, [2, 1]).tolist() == [0.2, 0.3, 0.5]
    assert forward(m, [1, 0]).tolist() == [0.9, 0.05, 0.05]


def test_missing_file_raises():
    with pytest.raises(FileNotFoundError):
        load_model("/nonexistent/model.txt")


def test_dump_round_trip(tmp_path):
    m = random_model(np.random.default_rng(5), 5, order=2)
    save_model(m, tmp_path / "m.model")
    back = load_model(tmp_path / "m.model")
    assert back.table == m.table and back.order == m.order


def test_temperature_round_trip():
    m = parse_model("vocab 2\ntemperature 0.5\ndefault : 0.8 0.2\n")
    assert parse_model(dump_model(m)).temperature == 0.5


def test_generators_produce_valid_models():
    rng = np.random.default_rng(9)
    t = random_model(rng, 6, order=2)
    d = perturbed(rng, t, mix=0.4)
    assert d.vocab_size == 6 and set(d.table) == set(t.table)
    chain = deterministic_chain(4, step=3)
    assert forward(chain, [2]).tolist() == [0, 1, 0, 0]
    nc = noisy_chain(rng, 5, 0.9)
    assert forward(nc, [4])[0] == pytest.approx(0.9)
    with pytest.raises(ValueError):
        noisy_chain(rng, 5, 1.0)


def test_model_invariants():
    with pytest.raises(InvalidModel):
        ModelSpec(3, 0, {(): Distribution([0.5, 0.5])})
    with pytest.raises(InvalidModel):
        ModelSpec(2, 0, {(): Distribution([0.5, 0.5])}, temperature=0.0)
