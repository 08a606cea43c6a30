import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from duodec.drafting import draft_dynamic, extend_greedy
from duodec.models import deterministic_chain, forward, random_model

from conftest import table_model

# order-1 models over vocab 4: the context ends in 3, so the first-position row
# is ctx(3); the top-1 token is 0, so the second-position row is ctx(0)


def _two_step_model(first_row, second_row):
    return table_model(
        4,
        {(): [0.25] * 4, (3,): first_row, (0,): second_row, (1,): [0.25] * 4, (2,): [0.25] * 4},
    )


def test_threshold_blocks_branches():
    m = _two_step_model([0.5, 0.3, 0.15, 0.05], [0.05, 0.8, 0.1, 0.05])
    b = draft_dynamic(m, [3], budget=8, max_sequences=8)
    assert b.theta == pytest.approx(0.40)
    assert b.s == 1
    assert b.sequences[0].tokens[:2] == (0, 1)
    assert len(b.sequences[0]) == 8


def test_threshold_admits_rank_two():
    m = _two_step_model([0.5, 0.3, 0.15, 0.05], [0.5, 0.2, 0.2, 0.1])
    b = draft_dynamic(m, [3], budget=8, max_sequences=8)
    assert b.theta == pytest.approx(0.25)
    assert b.s == 2
    assert b.first_tokens == [0, 1]
    assert [len(s) for s in b.sequences] == [4, 4]


def test_one_hot_draft_gives_single_sequence():
    m = deterministic_chain(5)
    b = draft_dynamic(m, [2], budget=7, max_sequences=8)
    assert b.s == 1
    assert b.sequences[0].tokens == (3, 4, 0, 1, 2, 3, 4)


def test_remainder_goes_to_top_sequence():
    m = _two_step_model([0.3, 0.3, 0.3, 0.1], [0.4, 0.2, 0.2, 0.2])
    b = draft_dynamic(m, [3], budget=10, max_sequences=8)
    # theta = 0.3 * 0.4 = 0.12; ranks 2 and 3 (0.3 each) pass, 0.1 does not
    assert b.first_tokens == [0, 1, 2]
    assert [len(s) for s in b.sequences] == [4, 3, 3]


def test_branch_count_capped_by_max_sequences_and_budget():
    m = _two_step_model([0.3, 0.3, 0.3, 0.1], [0.4, 0.2, 0.2, 0.2])
    assert draft_dynamic(m, [3], budget=12, max_sequences=8).s == 3
    assert draft_dynamic(m, [3], budget=12, max_sequences=2).s == 2
    # budget 3 leaves room for two sequences at most: the top one keeps two tokens
    b = draft_dynamic(m, [3], budget=3, max_sequences=8)
    assert b.s == 2 and [len(s) for s in b.sequences] == [2, 1]
    assert draft_dynamic(m, [3], budget=2, max_sequences=8).s == 1


def test_budget_below_two_rejected():
    with pytest.raises(ValueError):
        draft_dynamic(deterministic_chain(3), [0], budget=1)


def test_extend_greedy_zero_length():
    assert extend_greedy(deterministic_chain(3), [0], 0) == ([], [])


def test_extend_greedy_context_free():
    m = table_model(2, {(): [0.7, 0.3]})
    tokens, dists = extend_greedy(m, [1], 3)
    assert tokens == [0, 0, 0]
    assert [d.tolist() for d in dists] == [[0.7, 0.3]] * 3


def test_extend_greedy_hand_traced():
    m = table_model(2, {(): [0.5, 0.5], (0,): [0.1, 0.9], (1,): [0.8, 0.2]})
    tokens, dists = extend_greedy(m, [1, 0], 2)
    assert tokens == [1, 0]
    assert [d.tolist() for d in dists] == [[0.1, 0.9], [0.8, 0.2]]


def test_extend_greedy_negative_length():
    with pytest.raises(ValueError):
        extend_greedy(deterministic_chain(3), [0], -1)


bundle_cases = dict(
    seed=st.integers(0, 2**32 - 1),
    vocab=st.integers(2, 8),
    order=st.integers(0, 2),
    concentration=st.sampled_from([0.1, 0.5, 2.0, 20.0]),
    budget=st.integers(2, 24),
    s_max=st.integers(1, 8),
    ctx=st.lists(st.integers(0, 1), max_size=3),
)


@settings(max_examples=200, deadline=None)
@given(**bundle_cases)
def test_bundle_properties(seed, vocab, order, concentration, budget, s_max, ctx):
    m = random_model(np.random.default_rng(seed), vocab, order, concentration)
    b = draft_dynamic(m, ctx, budget, s_max)
    first = forward(m, ctx)

    # budget exhaustion
    assert b.budget_used == budget == sum(len(s) for s in b.sequences)
    assert 1 <= b.s <= min(s_max, budget)
    lengths = [len(s) for s in b.sequences]
    assert lengths[0] == budget - (b.s - 1) * (budget // b.s)
    assert all(n == budget // b.s for n in lengths[1:])

    # theta admission rule
    top = b.sequences[0]
    assert top.tokens[0] == first.argmax()
    assert b.theta == first[top.tokens[0]] * top.dists[1][top.tokens[1]]
    assert all(s.first_token_prob > b.theta for s in b.sequences[1:])
    ranked = first.ranked()
    assert b.first_tokens == ranked[: b.s]
    if b.s < min(s_max, budget - 1) and b.s < vocab:
        assert not first[ranked[b.s]] > b.theta  # the scan stopped on a failure

    # ordering: descending first-token probability, ties by ascending id
    keys = [(-s.first_token_prob, s.tokens[0]) for s in b.sequences]
    assert keys == sorted(keys)

    # every continuation is greedy and records the full draft distribution
    for s in b.sequences:
        full = list(ctx) + [s.tokens[0]]
        for tok, dist in zip(s.tokens[1:], s.dists[1:]):
            assert dist == forward(m, full)
            assert tok == dist.argmax()
            full.append(tok)
        assert s.dists[0] == first


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), vocab=st.integers(2, 8), budget=st.integers(2, 16))
def test_single_sequence_cap_is_static_greedy(seed, vocab, budget):
    m = random_model(np.random.default_rng(seed), vocab, 1, 0.3)
    b = draft_dynamic(m, [0], budget, max_sequences=1)
    tokens, _ = extend_greedy(m, [0], budget)
    assert b.s == 1 and list(b.sequences[0].tokens) == tokens
