"""Uncertainty-driven multi-sequence drafting on the draft model."""

from __future__ import annotations

from typing import Sequence

from .core import DraftBundle, DraftSequence, Distribution, Token
from .models import ModelSpec, forward

DEFAULT_MAX_SEQUENCES = 8


def extend_greedy(draft_model: ModelSpec, context: Sequence[Token], length: int) -> tuple[list[Token], list[Distribution]]:
    """Append the argmax token ``length`` times, keeping the full distribution at each step."""
    if length < 0:
        raise ValueError(f"length must be >= 0, got {length}")
    seq = list(context)
    tokens: list[Token] = []
    dists: list[Distribution] = []
    for _ in range(length):
        dist = forward(draft_model, seq)
        tok = dist.argmax()
        tokens.append(tok)
        dists.append(dist)
        seq.append(tok)
    return tokens, dists


def draft_dynamic(
    draft_model: ModelSpec,
    context: Sequence[Token],
    budget: int,
    max_sequences: int = DEFAULT_MAX_SEQUENCES,
) -> DraftBundle:
    """Spend ``budget`` draft tokens over one or more greedy sequences.

    The top-1 first token and its greedy successor set the threshold
    ``theta = p11 * p21``; every other first-position candidate whose draft
    probability beats ``theta`` opens its own sequence. The budget is split
    evenly with the remainder going to the top-1 sequence.
    """
    if budget < 2:
        raise ValueError(f"budget must be >= 2 to define the threshold, got {budget}")
    if max_sequences < 1:
        raise ValueError(f"max_sequences must be >= 1, got {max_sequences}")

    ctx = list(context)
    first_dist = forward(draft_model, ctx)
    top = first_dist.argmax()
    second_dist = forward(draft_model, ctx + [top])
    second = second_dist.argmax()
    theta = first_dist[top] * second_dist[second]

    # s = budget would leave the top sequence a single token, whose threshold
    # could then no longer be p11 * p21; keep it at length >= 2
    cap = min(max_sequences, budget - 1)
    branches: list[Token] = []
    for tok in first_dist.ranked()[1:]:
        if len(branches) + 1 >= cap or not first_dist[tok] > theta:
            break
        branches.append(tok)

    s = 1 + len(branches)
    per_seq = budget // s
    top_len = per_seq + (budget - s * per_seq)

    rest, rest_dists = extend_greedy(draft_model, ctx + [top, second], top_len - 2)
    sequences = [
        DraftSequence(
            tokens=(top, second, *rest),
            dists=(first_dist, second_dist, *rest_dists),
        )
    ]
    for tok in branches:
        more, more_dists = extend_greedy(draft_model, ctx + [tok], per_seq - 1)
        sequences.append(DraftSequence(tokens=(tok, *more), dists=(first_dist, *more_dists)))

    return DraftBundle(
        sequences=tuple(sequences),
        first_dist=first_dist,
        theta=theta,
        budget_used=sum(len(seq) for seq in sequences),
    )
