"""Parallel corpora: loading, filtering, pruning, synthesis, and batch planning.

A corpus is a list of ParallelPair per language. Synthetic corpora are drawn
from a seeded Markov chain over an integer token vocabulary; each language is
a token-level bijection of the shared source stream, optionally with local
reordering, so cross-lingual alignment is exact and known.
"""

from __future__ import annotations

from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, replace

from .seeding import stream

LanguageId = str


class CorpusError(ValueError):
    """Malformed or unusable corpus data."""


@dataclass(frozen=True)
class ParallelPair:
    """One sentence pair: source text, target text, target language id."""

    source: str
    target: str
    lang: LanguageId

    def __post_init__(self) -> None:
        if not self.source.strip() or not self.target.strip():
            raise CorpusError("empty side in parallel pair")
        if not self.lang:
            raise CorpusError("empty language id")


@dataclass(frozen=True)
class BatchPlan:
    """Epoch-level batch schedule: each batch is a tuple of (lang, index)."""

    batches: tuple[tuple[tuple[LanguageId, int], ...], ...]
    batch_size: int
    seed: int


@dataclass(frozen=True)
class GeneratorConfig:
    """Synthetic parallel corpus settings.

    The source sentence stream depends only on (seed, lengths, pair_count,
    vocab_size, branching); lang picks the target-side token bijection and
    reordering, so corpora generated for different langs from one config are
    line-aligned translations of the same source sentences.
    """

    lang: LanguageId
    pair_count: int
    vocab_size: int
    min_len: int = 10
    max_len: int = 24
    seed: int = 0
    branching: int = 4
    identity: bool = False
    reorder_window: int = 0
    bijection_seed: int = 0

    def __post_init__(self) -> None:
        if self.vocab_size < 2:
            raise CorpusError("generator vocabulary size must be >= 2")
        if self.min_len < 1 or self.min_len > self.max_len:
            raise CorpusError("bad sentence length range")
        if self.pair_count < 0:
            raise CorpusError("pair_count must be >= 0")
        if self.branching < 1 or self.branching > self.vocab_size:
            raise CorpusError("branching must be in [1, vocab_size]")
        if self.reorder_window == 1 or self.reorder_window < 0:
            raise CorpusError("reorder_window must be 0 or >= 2")


def load_parallel_tsv(path: str, lang: LanguageId) -> list[ParallelPair]:
    """Read source<TAB>target lines into pairs; reject malformed lines."""
    pairs: list[ParallelPair] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 2:
                raise CorpusError(f"{path}:{line_no}: expected 2 tab-separated columns, got {len(cols)}")
            src, tgt = cols
            if not src.strip() or not tgt.strip():
                raise CorpusError(f"{path}:{line_no}: empty column")
            pairs.append(ParallelPair(src, tgt, lang))
    return pairs


def filter_by_length(
    pairs: Sequence[ParallelPair],
    tokenizer: Callable[[str], Sequence[object]],
    min_tokens: int = 10,
    max_tokens: int = 128,
) -> list[ParallelPair]:
    """Keep pairs whose source and target token counts both lie in [min, max].

    tokenizer maps text to its token sequence (str.split for word counting).
    """
    if min_tokens < 1 or min_tokens > max_tokens:
        raise CorpusError("bad filter bounds")
    kept = []
    for p in pairs:
        ns, nt = len(tokenizer(p.source)), len(tokenizer(p.target))
        if min_tokens <= ns <= max_tokens and min_tokens <= nt <= max_tokens:
            kept.append(p)
    return kept


def prune(pairs: Sequence[ParallelPair], cap: int, seed: int) -> list[ParallelPair]:
    """Uniform random subset of size cap (corpus order preserved); no-op if already small."""
    if cap < 0:
        raise CorpusError("cap must be >= 0")
    if len(pairs) <= cap:
        return list(pairs)
    idx = stream(seed, "prune").sample(range(len(pairs)), cap)
    return [pairs[i] for i in sorted(idx)]


def _successors(vocab_size: int, branching: int, seed: int) -> list[list[int]]:
    # Fixed per-token successor sets define the chain; entropy ln(branching).
    return [
        stream(seed, "chain", t).sample(range(vocab_size), branching)
        for t in range(vocab_size)
    ]


def source_token(i: int) -> str:
    return f"w{i:04d}"


def target_token(lang: LanguageId, i: int) -> str:
    return f"{lang}_{i:04d}"


def language_bijection(cfg: GeneratorConfig) -> dict[str, str]:
    """Token-level source->target mapping for cfg.lang.

    Identity mode maps every source token to itself; otherwise each source
    token maps to a language-prefixed form under a seeded permutation. The
    per-language namespaces keep the alignment problems independent: with a
    shared token inventory, two different permutations would only admit the
    collapsed solution where every embedding is identical.
    """
    if cfg.identity:
        return {source_token(i): source_token(i) for i in range(cfg.vocab_size)}
    perm = list(range(cfg.vocab_size))
    stream(cfg.bijection_seed, "bijection", cfg.lang).shuffle(perm)
    return {source_token(i): target_token(cfg.lang, perm[i]) for i in range(cfg.vocab_size)}


def _reorder(tokens: list[str], window: int) -> list[str]:
    # Deterministic local reordering: reverse consecutive windows.
    if window < 2:
        return tokens
    out = []
    for start in range(0, len(tokens), window):
        out.extend(reversed(tokens[start : start + window]))
    return out


def generate_synthetic_parallel(
    cfg: GeneratorConfig,
    mapping: Mapping[str, str] | None = None,
    min_tokens: int = 10,
    max_tokens: int = 128,
) -> list[ParallelPair]:
    """Draw pair_count sentence pairs from the seeded chain.

    mapping overrides the derived bijection (used by tests to pin exact
    translations). Raises if the configured length range falls outside the
    [min_tokens, max_tokens] corpus filter so generated data never gets
    filtered away downstream.
    """
    if cfg.min_len < min_tokens or cfg.max_len > max_tokens:
        raise CorpusError(
            f"generator lengths [{cfg.min_len}, {cfg.max_len}] outside filter [{min_tokens}, {max_tokens}]"
        )
    succ = _successors(cfg.vocab_size, cfg.branching, cfg.seed)
    biject = dict(mapping) if mapping is not None else language_bijection(cfg)
    rng = stream(cfg.seed, "sentences")
    pairs = []
    for _ in range(cfg.pair_count):
        length = rng.randint(cfg.min_len, cfg.max_len)
        tok = rng.randrange(cfg.vocab_size)
        sent = [tok]
        for _ in range(length - 1):
            tok = succ[tok][rng.randrange(cfg.branching)]
            sent.append(tok)
        src_tokens = [source_token(t) for t in sent]
        tgt_tokens = _reorder([biject[t] for t in src_tokens], cfg.reorder_window)
        pairs.append(ParallelPair(" ".join(src_tokens), " ".join(tgt_tokens), cfg.lang))
    return pairs


def generate_language_family(
    cfg: GeneratorConfig, langs: Sequence[LanguageId]
) -> dict[LanguageId, list[ParallelPair]]:
    """Same source stream rendered into each language (line-aligned corpora)."""
    return {lang: generate_synthetic_parallel(replace(cfg, lang=lang)) for lang in langs}


def plan_balanced_batches(
    datasets: Mapping[LanguageId, Sequence[ParallelPair]],
    batch_size: int,
    seed: int,
) -> BatchPlan:
    """Schedule full batches with per-language quotas.

    Each batch takes batch_size // L pairs from every language; the remainder
    slots rotate across languages round-robin from a seeded starting offset.
    Languages draw from independent seeded shuffles of their own indices and
    reshuffle on exhaustion, so smaller languages wrap around. The plan covers
    ceil(largest dataset * L / batch_size) batches, all exactly full.
    """
    langs = sorted(datasets.keys())
    if not langs:
        raise CorpusError("no datasets")
    if batch_size < len(langs):
        raise CorpusError(f"batch_size {batch_size} < language count {len(langs)}")
    for lang in langs:
        if len(datasets[lang]) == 0:
            raise CorpusError(f"empty dataset for language {lang!r}")

    base = batch_size // len(langs)
    remainder = batch_size % len(langs)
    n_max = max(len(datasets[lang]) for lang in langs)
    num_batches = -(-n_max * len(langs) // batch_size)  # ceil

    class _Cycle:
        def __init__(self, lang: LanguageId, n: int) -> None:
            self.lang, self.n, self.pos, self.cycle = lang, n, 0, 0
            self.order = list(range(n))
            self._shuffle()

        def _shuffle(self) -> None:
            stream(seed, "shuffle", self.lang, self.cycle).shuffle(self.order)

        def take(self, k: int) -> list[tuple[LanguageId, int]]:
            out = []
            for _ in range(k):
                if self.pos == self.n:
                    self.pos, self.cycle = 0, self.cycle + 1
                    self._shuffle()
                out.append((self.lang, self.order[self.pos]))
                self.pos += 1
            return out

    cycles = {lang: _Cycle(lang, len(datasets[lang])) for lang in langs}
    rotation = stream(seed, "rotation").randrange(len(langs))
    batches = []
    for b in range(num_batches):
        batch: list[tuple[LanguageId, int]] = []
        for i, lang in enumerate(langs):
            extra = 1 if (i - rotation - b) % len(langs) < remainder else 0
            batch.extend(cycles[lang].take(base + extra))
        batches.append(tuple(batch))
    return BatchPlan(batches=tuple(batches), batch_size=batch_size, seed=seed)
