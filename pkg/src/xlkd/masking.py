"""Masking plans for the two masked objectives.

Token-level masking corrupts positions on both sides of a concatenated pair
(15% selection, 80/10/10 mask/random/keep). Word-level masking selects whole
source-side words, applies one corruption kind to all subtokens of a selected
word, and records each word's first subtoken position as its head.
"""

from __future__ import annotations

import random
from collections.abc import Sequence
from dataclasses import dataclass, field

from .seeding import stream
from .tokenization import MASK_ID, ConcatenatedPair, Vocabulary

MASK_TOKEN, RANDOM_TOKEN, KEEP = "mask_token", "random_token", "keep"
KINDS = (MASK_TOKEN, RANDOM_TOKEN, KEEP)


class MaskingError(ValueError):
    """Unusable masking inputs."""


@dataclass(frozen=True)
class MaskPlan:
    """Positions selected for corruption, the kind applied at each, the
    original token ids, and (word-level only) word-head positions."""

    positions: tuple[int, ...]
    kinds: tuple[str, ...]
    original_ids: tuple[int, ...]
    word_heads: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not (len(self.positions) == len(self.kinds) == len(self.original_ids)):
            raise MaskingError("plan field lengths differ")
        if any(k not in KINDS for k in self.kinds):
            raise MaskingError("unknown mask kind")


def _draw_kind(rng: random.Random, mask_prob: float, random_prob: float) -> str:
    u = rng.random()
    if u < mask_prob:
        return MASK_TOKEN
    if u < mask_prob + random_prob:
        return RANDOM_TOKEN
    return KEEP


def _random_id(rng: random.Random, vocab: Vocabulary) -> int:
    # Replacements never draw specials.
    return rng.randrange(5, len(vocab))


def _corrupt(ids: list[int], pos: int, kind: str, rng: random.Random, vocab: Vocabulary) -> None:
    if kind == MASK_TOKEN:
        ids[pos] = MASK_ID
    elif kind == RANDOM_TOKEN:
        ids[pos] = _random_id(rng, vocab)


def apply_tlm_mask(
    pair: ConcatenatedPair,
    vocab: Vocabulary,
    rate: float = 0.15,
    seed: int = 0,
    at_least_one: bool = True,
    mask_prob: float = 0.8,
    random_prob: float = 0.1,
) -> tuple[list[int], MaskPlan]:
    """Independent per-position masking over both source and target spans.

    Returns the corrupted id list and the plan. Specials are never selected.
    With at_least_one (default) an empty draw falls back to one uniformly
    chosen position.
    """
    if not 0.0 <= rate <= 1.0:
        raise MaskingError("rate must be in [0, 1]")
    if len(vocab) <= 5:
        raise MaskingError("vocabulary has no non-special tokens to draw from")
    rng = stream(seed, "tlm")
    candidates = [
        p
        for span in (pair.source_span, pair.target_span)
        for p in range(span[0], span[1])
    ]
    selected = [p for p in candidates if rng.random() < rate]
    if not selected and at_least_one and candidates:
        selected = [candidates[rng.randrange(len(candidates))]]
    ids = list(pair.ids)
    kinds = []
    for pos in selected:
        kind = _draw_kind(rng, mask_prob, random_prob)
        kinds.append(kind)
        _corrupt(ids, pos, kind, rng, vocab)
    plan = MaskPlan(
        positions=tuple(selected),
        kinds=tuple(kinds),
        original_ids=tuple(pair.ids[p] for p in selected),
    )
    return ids, plan


def apply_xwcl_mask(
    pair: ConcatenatedPair,
    vocab: Vocabulary,
    source_word_index: Sequence[int],
    rate: float = 0.15,
    seed: int = 0,
    at_least_one: bool = True,
    mask_prob: float = 0.8,
    random_prob: float = 0.1,
) -> tuple[list[int], MaskPlan]:
    """Whole-word masking restricted to the source span.

    source_word_index gives the word ordinal of each source-span token (length
    must equal the span). All subtokens of a selected word receive the same
    kind; random replacements are drawn per subtoken. word_heads holds the
    first subtoken position of each selected word, in word order.
    """
    if not 0.0 <= rate <= 1.0:
        raise MaskingError("rate must be in [0, 1]")
    lo, hi = pair.source_span
    if len(source_word_index) != hi - lo:
        raise MaskingError("source_word_index length does not match the source span")
    if len(vocab) <= 5:
        raise MaskingError("vocabulary has no non-special tokens to draw from")

    word_positions: dict[int, list[int]] = {}
    for offset, w in enumerate(source_word_index):
        word_positions.setdefault(w, []).append(lo + offset)
    words = sorted(word_positions)

    rng = stream(seed, "xwcl")
    selected_words = [w for w in words if rng.random() < rate]
    if not selected_words and at_least_one:
        selected_words = [words[rng.randrange(len(words))]]

    ids = list(pair.ids)
    positions: list[int] = []
    kinds: list[str] = []
    heads: list[int] = []
    for w in selected_words:
        kind = _draw_kind(rng, mask_prob, random_prob)
        heads.append(word_positions[w][0])
        for pos in word_positions[w]:
            positions.append(pos)
            kinds.append(kind)
            _corrupt(ids, pos, kind, rng, vocab)
    plan = MaskPlan(
        positions=tuple(positions),
        kinds=tuple(kinds),
        original_ids=tuple(pair.ids[p] for p in positions),
        word_heads=tuple(heads),
    )
    return ids, plan
