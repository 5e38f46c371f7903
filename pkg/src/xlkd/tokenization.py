"""Whitespace word tokenizer with an optional fixed-size character-chunk
subword mode, vocabulary management, pair encoding, and word alignment.

Id space: [PAD]=0, [CLS]=1, [SEP]=2, [MASK]=3, [UNK]=4, then corpus tokens by
descending frequency with lexicographic tie-break.
"""

from __future__ import annotations

from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass

PAD, CLS, SEP, MASK, UNK = "[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"
SPECIAL_TOKENS = (PAD, CLS, SEP, MASK, UNK)


class TokenizationError(ValueError):
    """Unusable text or sequences for the tokenizer."""


class AlignmentError(ValueError):
    """Source word structure differs between the two tokenizations."""


@dataclass(frozen=True)
class Vocabulary:
    """Immutable token table; chunk_size enables fixed-size subword mode."""

    tokens: tuple[str, ...]
    chunk_size: int | None = None

    def __post_init__(self) -> None:
        if tuple(self.tokens[:5]) != SPECIAL_TOKENS:
            raise TokenizationError("vocabulary must start with the five special tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise TokenizationError("duplicate tokens in vocabulary")
        if self.chunk_size is not None and self.chunk_size < 1:
            raise TokenizationError("chunk_size must be >= 1")
        object.__setattr__(self, "_id_of", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self._id_of.get(token, UNK_ID)

    @property
    def special_ids(self) -> tuple[int, ...]:
        return (0, 1, 2, 3, 4)


PAD_ID, CLS_ID, SEP_ID, MASK_ID, UNK_ID = 0, 1, 2, 3, 4


@dataclass(frozen=True)
class TokenSequence:
    """Token ids plus, per position, the ordinal of the word it came from.

    word_index is -1 at special-token positions.
    """

    ids: tuple[int, ...]
    word_index: tuple[int, ...]

    def __post_init__(self) -> None:
        if len(self.ids) != len(self.word_index):
            raise TokenizationError("ids and word_index lengths differ")

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class ConcatenatedPair:
    """[CLS] source [SEP] target [SEP] with half-open token spans per side."""

    ids: tuple[int, ...]
    source_span: tuple[int, int]
    target_span: tuple[int, int]


@dataclass(frozen=True)
class WordAlignment:
    """(student_position, teacher_position) of each word's first subtoken."""

    pairs: tuple[tuple[int, int], ...]


def _pieces(word: str, chunk_size: int | None) -> list[str]:
    if chunk_size is None:
        return [word]
    return [word[i : i + chunk_size] for i in range(0, len(word), chunk_size)]


def build_vocab(texts: Iterable[str], max_size: int, chunk_size: int | None = None) -> Vocabulary:
    """Count (sub)tokens over texts and keep the max_size most frequent.

    Ties in frequency break lexicographically. max_size counts the five
    specials, so at most max_size - 5 corpus tokens survive.
    """
    if max_size < 6:
        raise TokenizationError("max_size must leave room for at least one corpus token")
    counts: Counter[str] = Counter()
    for text in texts:
        for word in text.split():
            counts.update(_pieces(word, chunk_size))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [tok for tok, _ in ranked[: max_size - 5]]
    return Vocabulary(tokens=SPECIAL_TOKENS + tuple(kept), chunk_size=chunk_size)


def tokenize(vocab: Vocabulary, text: str) -> TokenSequence:
    """Split on whitespace (then into chunks in subword mode); OOV -> [UNK]."""
    words = text.split()
    if not words:
        raise TokenizationError("empty or whitespace-only text")
    ids: list[int] = []
    word_index: list[int] = []
    for w, word in enumerate(words):
        for piece in _pieces(word, vocab.chunk_size):
            ids.append(vocab.id_of(piece))
            word_index.append(w)
    return TokenSequence(ids=tuple(ids), word_index=tuple(word_index))


def detokenize(vocab: Vocabulary, seq: TokenSequence) -> str:
    """Inverse of tokenize for in-vocabulary text: join pieces per word."""
    words: list[str] = []
    for tid, w in zip(seq.ids, seq.word_index):
        if w < 0:
            continue
        piece = vocab.tokens[tid]
        if w == len(words) - 1:
            words[-1] += piece
        else:
            words.append(piece)
    return " ".join(words)


def encode_pair(
    vocab: Vocabulary,
    source: TokenSequence,
    target: TokenSequence,
    max_len: int = 128,
) -> ConcatenatedPair:
    """[CLS] src [SEP] tgt [SEP]; error when the result exceeds max_len."""
    total = len(source) + len(target) + 3
    if total > max_len:
        raise TokenizationError(f"encoded pair length {total} exceeds max_len {max_len}")
    if len(source) == 0 or len(target) == 0:
        raise TokenizationError("empty side")
    ids = (CLS_ID,) + source.ids + (SEP_ID,) + target.ids + (SEP_ID,)
    a = len(source)
    return ConcatenatedPair(
        ids=ids,
        source_span=(1, 1 + a),
        target_span=(2 + a, 2 + a + len(target)),
    )


def encode_single(vocab: Vocabulary, seq: TokenSequence, max_len: int = 128) -> TokenSequence:
    """[CLS] tokens [SEP] as a model input; specials carry word_index -1."""
    total = len(seq) + 2
    if total > max_len:
        raise TokenizationError(f"encoded length {total} exceeds max_len {max_len}")
    return TokenSequence(
        ids=(CLS_ID,) + seq.ids + (SEP_ID,),
        word_index=(-1,) + seq.word_index + (-1,),
    )


def concat_word_index(source: TokenSequence, target: TokenSequence) -> tuple[int, ...]:
    """word_index aligned with encode_pair ids: source ordinals, then target
    ordinals offset by the source word count; -1 at specials."""
    n_src_words = max(source.word_index) + 1
    return (
        (-1,)
        + source.word_index
        + (-1,)
        + tuple(w + n_src_words for w in target.word_index)
        + (-1,)
    )


def align_words(student_seq: TokenSequence, teacher_seq: TokenSequence) -> WordAlignment:
    """Pair the first subtoken position of word k on each side, for every k.

    Both sequences tokenize the same source text (possibly with specials and
    different subword granularity). Raises AlignmentError when word counts
    differ.
    """

    def heads(seq: TokenSequence) -> dict[int, int]:
        h: dict[int, int] = {}
        for pos, w in enumerate(seq.word_index):
            if w >= 0 and w not in h:
                h[w] = pos
        return h

    sh, th = heads(student_seq), heads(teacher_seq)
    if sorted(sh) != sorted(th):
        raise AlignmentError(f"word counts differ: {len(sh)} vs {len(th)}")
    return WordAlignment(pairs=tuple((sh[w], th[w]) for w in sorted(sh)))


def save_vocab(vocab: Vocabulary, path: str) -> None:
    """One token per line; line number is the id."""
    with open(path, "w", encoding="utf-8") as fh:
        for tok in vocab.tokens:
            fh.write(tok + "\n")


def load_vocab(path: str, chunk_size: int | None = None) -> Vocabulary:
    with open(path, encoding="utf-8") as fh:
        tokens = tuple(line.rstrip("\n") for line in fh)
    return Vocabulary(tokens=tokens, chunk_size=chunk_size)
