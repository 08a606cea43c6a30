import numpy as np
import pytest

from duodec.core import (
    Distribution,
    DraftBundle,
    DraftSequence,
    GenerationState,
    InvalidDistribution,
    RandomStream,
    ZeroMass,
    mix_seed,
    normalize,
)


def test_normalize_single_support():
    assert normalize([0, 0.5]).tolist() == [0.0, 1.0]


def test_normalize_symmetric():
    assert normalize([0.2, 0.2]).tolist() == [0.5, 0.5]


def test_normalize_zero_mass():
    with pytest.raises(ZeroMass):
        normalize([0, 0])


def test_normalize_below_threshold_is_zero_mass():
    with pytest.raises(ZeroMass):
        normalize([1e-13, 0.0])


def test_normalize_rejects_negative():
    with pytest.raises(InvalidDistribution):
        normalize([0.5, -0.1])


@pytest.mark.parametrize(
    "probs",
    [[0.5, 0.6], [1.1, -0.1], [np.nan, 1.0], [], [[0.5, 0.5]]],
)
def test_distribution_rejects_invalid(probs):
    with pytest.raises(InvalidDistribution):
        Distribution(probs)


def test_distribution_sum_tolerance():
    Distribution([0.5, 0.5 + 5e-10])
    with pytest.raises(InvalidDistribution):
        Distribution([0.5, 0.5 + 5e-9])


def test_distribution_is_immutable():
    d = Distribution([0.25, 0.75])
    with pytest.raises(ValueError):
        d.probs[0] = 1.0


def test_argmax_and_ranking_break_ties_by_id():
    d = Distribution([0.3, 0.1, 0.3, 0.3])
    assert d.argmax() == 0
    assert d.ranked() == [0, 2, 3, 1]


def test_sample_inverse_cdf():
    d = Distribution([0.25, 0.0, 0.75])
    assert d.sample(0.0) == 0
    assert d.sample(0.2499) == 0
    assert d.sample(0.25) == 2
    assert d.sample(0.9999999) == 2


def test_sample_never_returns_zero_probability_token():
    d = Distribution([0.5, 0.5, 0.0])
    assert d.sample(np.nextafter(1.0, 0.0)) == 1


def test_point_mass_is_cached():
    assert Distribution.point_mass(3, 1) is Distribution.point_mass(3, 1)
    assert Distribution.point_mass(3, 1).tolist() == [0.0, 1.0, 0.0]


def test_draft_sequence_first_token_prob_and_proposals():
    q = Distribution([0.6, 0.4])
    seq = DraftSequence((1, 0), (q, q))
    assert seq.first_token_prob == 0.4
    assert seq.proposal(0).tolist() == [0.0, 1.0]
    sampled = DraftSequence((1, 0), (q, q), sampled=True)
    assert sampled.proposal(1) is q


def test_draft_sequence_invariants():
    q = Distribution([1.0, 0.0])
    with pytest.raises(ValueError):
        DraftSequence((1,), (q,))
    with pytest.raises(ValueError):
        DraftSequence((), ())
    with pytest.raises(ValueError):
        DraftSequence((0, 0), (q,))


def test_draft_sequence_tail():
    q = Distribution([0.5, 0.5])
    seq = DraftSequence((0, 1, 1), (q, q, q))
    assert seq.tail(1).tokens == (1, 1)
    assert seq.tail(1) is seq.tail(1)
    assert seq.tail(3) is None


def _bundle(first, theta, budget=None):
    q = Distribution([0.5, 0.3, 0.2])
    seqs = tuple(DraftSequence((t, 0), (q, q)) for t in first)
    return DraftBundle(seqs, q, theta, budget if budget is not None else 2 * len(first))


def test_bundle_invariants():
    b = _bundle([0, 1], 0.25)
    assert b.s == 2 and b.first_tokens == [0, 1]
    with pytest.raises(ValueError):
        _bundle([0, 0], 0.25)
    with pytest.raises(ValueError):
        _bundle([0, 1], 0.3)  # branch 0.3 does not beat theta
    with pytest.raises(ValueError):
        _bundle([0], 1.5)
    with pytest.raises(ValueError):
        _bundle([0], 0.1, budget=5)


def test_splitmix_reference_vectors():
    # published SplitMix64 outputs for seed 1234567
    assert [mix_seed(1234567, i) for i in range(3)] == [
        6457827717110365317,
        3203168211198807973,
        9817491932198370423,
    ]


def test_random_stream_reproducible_and_batched():
    a, b = RandomStream(42), RandomStream(42)
    first = [a.uniform() for _ in range(5)] + a.uniforms(5)
    assert first == b.uniforms(3) + [b.uniform() for _ in range(7)]
    assert a.counter == 10


def test_random_stream_range_and_mean():
    draws = np.array(RandomStream(7).uniforms(200_000))
    assert draws.min() >= 0.0 and draws.max() < 1.0
    assert abs(draws.mean() - 0.5) < 0.005
    assert RandomStream(7).uniforms(10) != RandomStream(8).uniforms(10)


def test_generation_state_context():
    q = Distribution([0.5, 0.5])
    st = GenerationState([0, 1], RandomStream(0), RandomStream(1), prompt_len=1)
    assert st.n == 2 and st.generated == [1]
    assert st.context() == [0, 1]
    st.unverified = DraftSequence((1, 0), (q, q))
    assert st.context() == [0, 1, 1, 0]
    assert st.n == 2
