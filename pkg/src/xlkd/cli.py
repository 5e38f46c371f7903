"""Command-line pipeline: prepare, pretrain-teacher, train, eval, viz.

Configuration comes from an INI file plus a few overriding flags. Every
command validates the full configuration before touching the output
directory, takes an exclusive lock file inside it while running, and writes
plain TSV artifacts next to the checkpoints.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import os
import sys
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .checkpoint import (
    CheckpointError,
    CheckpointMismatchError,
    load_encoder,
    read_header,
    save_encoder,
)
from .corpus import (
    CorpusError,
    GeneratorConfig,
    LanguageId,
    ParallelPair,
    filter_by_length,
    generate_synthetic_parallel,
    load_parallel_tsv,
    prune,
)
from .evaluation import (
    EmbeddingSet,
    EvaluationError,
    cluster_stats,
    embed_sentences,
    export_embeddings,
    project_2d,
    retrieval_accuracy,
)
from .masking import MaskingError
from .model import (
    EncoderConfig,
    ModelConfigError,
    build_bundle,
    init_encoder,
    pretrain_teacher,
)
from .objectives import Objective, ObjectiveConfig, ObjectiveError
from .seeding import seed_int, stream
from .tokenization import (
    TokenizationError,
    build_vocab,
    load_vocab,
    save_vocab,
)
from .trainer import (
    NonFiniteGradientError,
    NonFiniteLossError,
    TrainConfig,
    TrainerError,
    load_checkpoint,
    lr_at_step,
    train,
)

logger = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Bad configuration file, flag, or combination."""


@dataclass(frozen=True)
class DataSettings:
    synthetic: bool = True
    languages: tuple[LanguageId, ...] = ("syn1", "syn2")
    tsv_paths: dict[LanguageId, str] = field(default_factory=dict)
    train_pairs_per_language: int = 400
    heldout_pairs_per_language: int = 100
    generator_vocab_size: int = 300
    min_sentence_words: int = 10
    max_sentence_words: int = 24
    branching: int = 4
    identity: bool = False
    reorder_window: int = 0
    min_tokens: int = 10
    max_tokens: int = 128
    prune_cap: int = 1_000_000


@dataclass(frozen=True)
class EncoderSettings:
    layers: int = 4
    hidden_dim: int = 64
    heads: int = 4
    ffn_dim: int = 256
    dropout: float = 0.1
    max_len: int = 128
    vocab_max_size: int = 1000
    chunk_size: int | None = None


@dataclass(frozen=True)
class PretrainSettings:
    steps: int = 300
    batch_size: int = 16
    peak_lr: float = 1e-3
    mask_rate: float = 0.15


@dataclass(frozen=True)
class RunConfig:
    """Everything the five commands need, resolved from INI plus flags."""

    seed: int = 0
    out_dir: Path = Path("runs/default")
    data: DataSettings = DataSettings()
    teacher: EncoderSettings = EncoderSettings()
    student: EncoderSettings = EncoderSettings()
    head_mid_dim: int = 64
    head_out_dim: int = 32
    pretrain: PretrainSettings = PretrainSettings()
    train: TrainConfig = TrainConfig()
    viz_sentences: int = 20


_SCHEMA: dict[str, dict[str, str]] = {
    "run": {"seed": "int", "out_dir": "str"},
    "data": {
        "synthetic": "bool",
        "languages": "csv",
        "train_pairs_per_language": "int",
        "heldout_pairs_per_language": "int",
        "generator_vocab_size": "int",
        "min_sentence_words": "int",
        "max_sentence_words": "int",
        "branching": "int",
        "identity": "bool",
        "reorder_window": "int",
        "min_tokens": "int",
        "max_tokens": "int",
        "prune_cap": "int",
    },
    "teacher": {
        "layers": "int", "hidden_dim": "int", "heads": "int", "ffn_dim": "int",
        "dropout": "float", "max_len": "int", "vocab_max_size": "int",
    },
    "student": {
        "layers": "int", "hidden_dim": "int", "heads": "int", "ffn_dim": "int",
        "dropout": "float", "max_len": "int", "vocab_max_size": "int",
        "chunk_size": "optint",
    },
    "heads": {"mid_dim": "int", "out_dim": "int"},
    "pretrain": {"steps": "int", "batch_size": "int", "peak_lr": "float", "mask_rate": "float"},
    "train": {
        "epochs": "int", "batch_size": "int", "peak_lr": "float",
        "weight_decay": "float", "warmup_frac": "float", "grad_clip": "float",
        "mask_rate": "float",
    },
    "objectives": {
        "tau_xwcl": "float", "tau_struca": "float", "alpha": "float", "disable": "csv",
    },
    "eval": {"sentences": "int"},
}


def _convert(section: str, key: str, raw: str, kind: str) -> object:
    try:
        if kind == "int":
            return int(raw)
        if kind == "optint":
            return int(raw) if raw.strip() else None
        if kind == "float":
            return float(raw)
        if kind == "bool":
            lowered = raw.strip().lower()
            if lowered in ("true", "yes", "on", "1"):
                return True
            if lowered in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if kind == "csv":
            return tuple(part.strip() for part in raw.split(",") if part.strip())
        return raw.strip()
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {kind}") from exc


def load_config(path: str | None) -> RunConfig:
    """Parse and validate an INI file; unknown sections or keys are errors."""
    values: dict[str, dict[str, object]] = {s: {} for s in _SCHEMA}
    tsv_paths: dict[str, str] = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            read = parser.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config file {path}: {exc}") from exc
        if not read:
            raise CorpusError(f"config file not found: {path}")
        for section in parser.sections():
            if section not in _SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if section == "data" and key.startswith("tsv."):
                    tsv_paths[key[len("tsv.") :]] = raw.strip()
                    continue
                if key not in _SCHEMA[section]:
                    raise ConfigError(f"unknown config key [{section}] {key}")
                values[section][key] = _convert(section, key, raw, _SCHEMA[section][key])

    def sect(name: str) -> dict[str, object]:
        return values[name]

    data = DataSettings(tsv_paths=tsv_paths, **sect("data"))
    teacher = EncoderSettings(**sect("teacher"))
    student = EncoderSettings(**sect("student"))
    obj_kwargs = dict(sect("objectives"))
    disabled = obj_kwargs.pop("disable", ())
    try:
        objectives = ObjectiveConfig(**obj_kwargs).disable(*disabled)
    except ValueError as exc:
        raise ConfigError(f"[objectives]: {exc}") from exc
    train_kwargs = dict(sect("train"))
    try:
        train_cfg = TrainConfig(
            seed=int(sect("run").get("seed", 0)),
            max_len=student.max_len,
            objectives=objectives,
            **train_kwargs,
        )
    except (TrainerError, ObjectiveError) as exc:
        raise ConfigError(f"[train]: {exc}") from exc
    heads = sect("heads")
    return RunConfig(
        seed=int(sect("run").get("seed", 0)),
        out_dir=Path(str(sect("run").get("out_dir", "runs/default"))),
        data=data,
        teacher=teacher,
        student=student,
        head_mid_dim=int(heads.get("mid_dim", 64)),
        head_out_dim=int(heads.get("out_dim", 32)),
        pretrain=PretrainSettings(**sect("pretrain")),
        train=train_cfg,
        viz_sentences=int(sect("eval").get("sentences", 20)),
    )


def validate_config(config: RunConfig) -> None:
    d = config.data
    if not d.languages:
        raise ConfigError("[data] languages must name at least one language")
    if len(set(d.languages)) != len(d.languages):
        raise ConfigError("[data] languages contains duplicates")
    if "src" in d.languages:
        raise ConfigError("[data] language id 'src' is reserved for the source side")
    if d.synthetic:
        if d.min_sentence_words < d.min_tokens or d.max_sentence_words > d.max_tokens:
            raise ConfigError(
                "[data] generator sentence lengths fall outside the length filter"
            )
        if d.train_pairs_per_language < 1 or d.heldout_pairs_per_language < 0:
            raise ConfigError("[data] pair counts out of range")
    else:
        missing = [lang for lang in d.languages if lang not in d.tsv_paths]
        if missing:
            raise ConfigError(f"[data] tsv.<lang> path missing for {missing}")
    if d.min_tokens < 1 or d.min_tokens > d.max_tokens:
        raise ConfigError("[data] bad length filter bounds")
    if config.teacher.hidden_dim != config.student.hidden_dim:
        raise ConfigError("teacher and student hidden_dim must match")
    if config.train.batch_size < len(d.languages):
        raise ConfigError("[train] batch_size smaller than the language count")
    if config.teacher.chunk_size is not None:
        raise ConfigError("[teacher] subword mode is a student-side option")


@contextmanager
def out_dir_lock(out_dir: Path):
    """Exclusive advisory lock; a second command on the same out dir fails."""
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / ".lock"
    try:
        fh = open(lock, "x", encoding="utf-8")
    except FileExistsError:
        raise ConfigError(
            f"{lock} exists; another command is using this out dir (delete it if stale)"
        ) from None
    try:
        fh.write(f"{os.getpid()}\n")
        fh.close()
        yield
    finally:
        lock.unlink(missing_ok=True)


def _data_dir(config: RunConfig) -> Path:
    return config.out_dir / "data"


def _train_path(config: RunConfig, lang: LanguageId) -> Path:
    return _data_dir(config) / f"{lang}.train.tsv"


def _heldout_path(config: RunConfig, lang: LanguageId) -> Path:
    return _data_dir(config) / f"{lang}.heldout.tsv"


def _write_pairs(path: Path, pairs: list[ParallelPair]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(f"{p.source}\t{p.target}\n")


def cmd_prepare(config: RunConfig) -> int:
    """Generate or load corpora, filter, prune, and write per-language TSVs
    plus a manifest of counts."""
    d = config.data
    data_dir = _data_dir(config)
    with out_dir_lock(config.out_dir):
        data_dir.mkdir(parents=True, exist_ok=True)
        manifest_rows = []
        for lang in d.languages:
            if d.synthetic:
                gen = GeneratorConfig(
                    lang=lang,
                    pair_count=d.train_pairs_per_language + d.heldout_pairs_per_language,
                    vocab_size=d.generator_vocab_size,
                    min_len=d.min_sentence_words,
                    max_len=d.max_sentence_words,
                    seed=config.seed,
                    branching=d.branching,
                    identity=d.identity,
                    reorder_window=d.reorder_window,
                    bijection_seed=config.seed,
                )
                raw = generate_synthetic_parallel(gen, min_tokens=d.min_tokens, max_tokens=d.max_tokens)
                heldout = raw[d.train_pairs_per_language :]
                raw = raw[: d.train_pairs_per_language]
            else:
                raw = load_parallel_tsv(d.tsv_paths[lang], lang)
                n_held = min(d.heldout_pairs_per_language, max(len(raw) - 1, 0))
                heldout = raw[len(raw) - n_held :]
                raw = raw[: len(raw) - n_held]
            filtered = filter_by_length(raw, str.split, d.min_tokens, d.max_tokens)
            kept = prune(filtered, d.prune_cap, seed_int(config.seed, "prune", lang))
            heldout_kept = filter_by_length(heldout, str.split, d.min_tokens, d.max_tokens)
            if not kept:
                raise CorpusError(f"language {lang!r}: no pairs survived filtering")
            _write_pairs(_train_path(config, lang), kept)
            _write_pairs(_heldout_path(config, lang), heldout_kept)
            manifest_rows.append((lang, len(raw), len(filtered), len(kept), len(heldout_kept)))
        with open(data_dir / "manifest.tsv", "w", encoding="utf-8") as fh:
            fh.write("lang\traw\tfiltered\ttrain\theldout\n")
            for row in manifest_rows:
                fh.write("\t".join(str(x) for x in row) + "\n")
    for lang, raw_n, filt_n, train_n, held_n in manifest_rows:
        print(f"prepare {lang}: raw={raw_n} filtered={filt_n} train={train_n} heldout={held_n}")
    return 0


def _load_prepared(config: RunConfig, split: str) -> dict[LanguageId, list[ParallelPair]]:
    out: dict[LanguageId, list[ParallelPair]] = {}
    for lang in config.data.languages:
        path = _train_path(config, lang) if split == "train" else _heldout_path(config, lang)
        if not path.exists():
            raise CorpusError(f"missing prepared data {path}; run prepare first")
        out[lang] = load_parallel_tsv(str(path), lang)
    return out


def _teacher_texts(datasets: dict[LanguageId, list[ParallelPair]]) -> list[str]:
    seen: dict[str, None] = {}
    for pairs in datasets.values():
        for p in pairs:
            seen.setdefault(p.source, None)
    return list(seen)


def cmd_pretrain_teacher(config: RunConfig) -> int:
    """Build the teacher vocabulary, pretrain with masked-token prediction on
    the source sides, and save the frozen encoder checkpoint."""
    datasets = _load_prepared(config, "train")
    texts = _teacher_texts(datasets)
    with out_dir_lock(config.out_dir):
        vocab = build_vocab(texts, config.teacher.vocab_max_size)
        save_vocab(vocab, str(config.out_dir / "teacher.vocab"))
        enc_config = EncoderConfig(
            vocab_size=len(vocab),
            layers=config.teacher.layers,
            hidden_dim=config.teacher.hidden_dim,
            heads=config.teacher.heads,
            ffn_dim=config.teacher.ffn_dim,
            max_len=config.teacher.max_len,
            dropout=config.teacher.dropout,
            seed=seed_int(config.seed, "teacher"),
        )
        encoder, history = pretrain_teacher(
            texts,
            vocab,
            enc_config,
            steps=config.pretrain.steps,
            batch_size=config.pretrain.batch_size,
            peak_lr=config.pretrain.peak_lr,
            mask_rate=config.pretrain.mask_rate,
            seed=seed_int(config.seed, "pretrain"),
        )
        save_encoder(encoder, config.out_dir / "teacher.ckpt")
        sched = TrainConfig(peak_lr=config.pretrain.peak_lr, seed=config.seed)
        with open(config.out_dir / "pretrain_log.tsv", "w", encoding="utf-8") as fh:
            fh.write("step\tmlm\tlr\n")
            for step, loss in enumerate(history):
                fh.write(f"{step}\t{loss:.6f}\t{lr_at_step(step, len(history), sched):.8g}\n")
    print(
        f"pretrain-teacher: vocab={len(vocab)} steps={len(history)} "
        f"mlm_first={history[0]:.4f} mlm_last={history[-1]:.4f}"
    )
    return 0


def cmd_train(config: RunConfig) -> int:
    """Distill the frozen teacher into the student over the prepared corpora."""
    teacher_vocab_path = config.out_dir / "teacher.vocab"
    teacher_ckpt_path = config.out_dir / "teacher.ckpt"
    for p in (teacher_vocab_path, teacher_ckpt_path):
        if not p.exists():
            raise CorpusError(f"missing {p}; run pretrain-teacher first")
    datasets = _load_prepared(config, "train")
    with out_dir_lock(config.out_dir):
        teacher_vocab = load_vocab(str(teacher_vocab_path))
        teacher = load_encoder(
            teacher_ckpt_path, expect={"encoder.vocab_size": len(teacher_vocab)}
        )
        texts = [t for pairs in datasets.values() for p in pairs for t in (p.source, p.target)]
        student_vocab = build_vocab(
            texts, config.student.vocab_max_size, chunk_size=config.student.chunk_size
        )
        save_vocab(student_vocab, str(config.out_dir / "student.vocab"))
        student_config = EncoderConfig(
            vocab_size=len(student_vocab),
            layers=config.student.layers,
            hidden_dim=config.student.hidden_dim,
            heads=config.student.heads,
            ffn_dim=config.student.ffn_dim,
            max_len=config.student.max_len,
            dropout=config.student.dropout,
            seed=seed_int(config.seed, "student"),
        )
        bundle = build_bundle(
            teacher,
            student_config,
            head_mid_dim=config.head_mid_dim,
            head_out_dim=config.head_out_dim,
            seed=seed_int(config.seed, "heads"),
        )
        state = train(
            bundle,
            datasets,
            student_vocab,
            teacher_vocab,
            config.train,
            out_dir=config.out_dir / "train",
        )
    last = state.history[-1]
    print(
        f"train: steps={state.step} skipped={state.skipped} "
        f"total={last.total:.4f} tlm={last.tlm:.4f} xwcl={last.xwcl:.4f} "
        f"senta={last.senta:.4f} struca={last.struca:.4f}"
    )
    return 0


def _default_checkpoint(config: RunConfig) -> Path:
    best = config.out_dir / "train" / "best.ckpt"
    if best.exists():
        return best
    raise CorpusError(f"no checkpoint at {best}; run train or pass one explicitly")


def _load_any_checkpoint(config: RunConfig, path: Path):
    """Returns (encoder, vocab) for either checkpoint kind."""
    if not path.exists():
        raise CorpusError(f"checkpoint not found: {path}")
    kind = read_header(path).get("kind")
    if kind == "encoder":
        vocab_path = config.out_dir / "teacher.vocab"
        if not vocab_path.exists():
            raise CorpusError(f"missing {vocab_path} for a teacher checkpoint")
        vocab = load_vocab(str(vocab_path))
        return load_encoder(path, expect={"encoder.vocab_size": len(vocab)}), vocab
    bundle, _, _ = load_checkpoint(path)
    vocab_path = config.out_dir / "student.vocab"
    if not vocab_path.exists():
        raise CorpusError(f"missing {vocab_path} for a student checkpoint")
    vocab = load_vocab(str(vocab_path), chunk_size=config.student.chunk_size)
    if len(vocab) != bundle.student_encoder.config.vocab_size:
        raise CheckpointMismatchError(
            f"student vocab size {len(vocab)} != checkpoint vocab size "
            f"{bundle.student_encoder.config.vocab_size}"
        )
    return bundle.student_encoder, vocab


def cmd_eval(config: RunConfig, checkpoint: Path | None = None, baseline: bool = False) -> int:
    """Held-out retrieval and cluster geometry per language.

    A bundle checkpoint evaluates the student on source-target pairs; an
    encoder checkpoint evaluates that encoder on source-source copies (a
    self-retrieval sanity check). --baseline adds rows for a freshly
    initialized student with the same seeds.
    """
    heldout = _load_prepared(config, "heldout")
    ckpt = checkpoint if checkpoint is not None else _default_checkpoint(config)
    encoder, vocab = _load_any_checkpoint(config, ckpt)
    teacher_mode = read_header(ckpt).get("kind") == "encoder"

    models: list[tuple[str, object, object]] = [("trained", encoder, vocab)]
    if baseline:
        if teacher_mode:
            raise ConfigError("--baseline applies to student checkpoints only")
        student_vocab = load_vocab(
            str(config.out_dir / "student.vocab"), chunk_size=config.student.chunk_size
        )
        student_config = EncoderConfig(
            vocab_size=len(student_vocab),
            layers=config.student.layers,
            hidden_dim=config.student.hidden_dim,
            heads=config.student.heads,
            ffn_dim=config.student.ffn_dim,
            max_len=config.student.max_len,
            dropout=config.student.dropout,
            seed=seed_int(config.seed, "student"),
        )
        models.append(("untrained", init_encoder(student_config), student_vocab))

    rows = []
    for model_name, enc, vc in models:
        for lang in config.data.languages:
            pairs = heldout[lang]
            if len(pairs) < 2:
                raise CorpusError(f"language {lang!r}: need at least two held-out pairs")
            sources = [p.source for p in pairs]
            targets = sources if teacher_mode else [p.target for p in pairs]
            src_set = embed_sentences(enc, sources, vc, [(str(i), "src") for i in range(len(pairs))])
            tgt_set = embed_sentences(enc, targets, vc, [(str(i), lang) for i in range(len(pairs))])
            fwd, bwd = retrieval_accuracy(src_set, tgt_set)
            combined = EmbeddingSet(
                matrix=np.concatenate([src_set.matrix, tgt_set.matrix]),
                labels=src_set.labels + tgt_set.labels,
            )
            intra, inter, ratio = cluster_stats(combined)
            rows.append((model_name, lang, len(pairs), fwd, bwd, intra, inter, ratio))

    with out_dir_lock(config.out_dir):
        with open(config.out_dir / "eval_report.tsv", "w", encoding="utf-8") as fh:
            fh.write("model\tlang\tpairs\tp_at_1_src2tgt\tp_at_1_tgt2src\tintra\tinter\tratio\n")
            for r in rows:
                fh.write(
                    f"{r[0]}\t{r[1]}\t{r[2]}\t{r[3]:.4f}\t{r[4]:.4f}\t{r[5]:.6f}\t{r[6]:.6f}\t{r[7]:.6f}\n"
                )
    for r in rows:
        print(
            f"eval {r[0]} {r[1]}: pairs={r[2]} p@1 {r[3]:.3f}/{r[4]:.3f} "
            f"intra={r[5]:.4f} inter={r[6]:.4f} ratio={r[7]:.4f}"
        )
    return 0


def cmd_viz(config: RunConfig, checkpoint: Path | None = None, sentences: int | None = None) -> int:
    """Project a multi-way parallel sample to 2D and export coordinates.

    Held-out files must be line-aligned across languages (the synthetic
    generator guarantees this); each selected line becomes one group holding
    the source sentence and its translation in every language.
    """
    n = sentences if sentences is not None else config.viz_sentences
    if n < 2:
        raise ConfigError("viz needs at least two sentences")
    heldout = _load_prepared(config, "heldout")
    counts = {lang: len(pairs) for lang, pairs in heldout.items()}
    available = min(counts.values())
    if available < n:
        raise CorpusError(f"viz wants {n} sentences but only {available} held-out lines exist")
    ckpt = checkpoint if checkpoint is not None else _default_checkpoint(config)
    encoder, vocab = _load_any_checkpoint(config, ckpt)
    picked = sorted(stream(config.seed, "viz").sample(range(available), n))
    first_lang = config.data.languages[0]
    texts: list[str] = []
    labels: list[tuple[str, str]] = []
    for i in picked:
        texts.append(heldout[first_lang][i].source)
        labels.append((str(i), "src"))
        for lang in config.data.languages:
            texts.append(heldout[lang][i].target)
            labels.append((str(i), lang))
    embedded = embed_sentences(encoder, texts, vocab, labels)
    coords = project_2d(embedded)
    with out_dir_lock(config.out_dir):
        export_embeddings(embedded, config.out_dir / "viz_coords.tsv", coordinates=coords)
    print(f"viz: wrote {coords.shape[0]} coordinate rows to {config.out_dir / 'viz_coords.tsv'}")
    return 0


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse default exits 2; keep 1 for usage errors
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="xlkd", description="Multilingual distillation desk kit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", type=str, default=None, help="INI configuration file")
        p.add_argument("--seed", type=int, default=None, help="override [run] seed")
        p.add_argument("--out", type=str, default=None, help="override [run] out_dir")

    common(sub.add_parser("prepare", help="generate or load, filter, prune corpora"))
    common(sub.add_parser("pretrain-teacher", help="masked-token pretraining for the teacher"))
    p_train = sub.add_parser("train", help="joint distillation training")
    common(p_train)
    p_train.add_argument(
        "--disable",
        action="append",
        default=[],
        choices=[o.value for o in Objective],
        help="disable one objective (repeatable)",
    )
    p_train.add_argument("--epochs", type=int, default=None)
    p_train.add_argument("--batch-size", type=int, default=None)
    p_eval = sub.add_parser("eval", help="held-out retrieval and cluster stats")
    common(p_eval)
    p_eval.add_argument("--checkpoint", type=str, default=None)
    p_eval.add_argument("--baseline", action="store_true", help="also evaluate an untrained student")
    p_viz = sub.add_parser("viz", help="2D projection of a multi-way sample")
    common(p_viz)
    p_viz.add_argument("--checkpoint", type=str, default=None)
    p_viz.add_argument("--sentences", type=int, default=None)
    return parser


def _apply_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    if args.seed is not None:
        config = replace(config, seed=args.seed, train=replace(config.train, seed=args.seed))
    if args.out is not None:
        config = replace(config, out_dir=Path(args.out))
    if getattr(args, "epochs", None) is not None:
        config = replace(config, train=replace(config.train, epochs=args.epochs))
    if getattr(args, "batch_size", None) is not None:
        config = replace(config, train=replace(config.train, batch_size=args.batch_size))
    disable = getattr(args, "disable", [])
    if disable:
        config = replace(
            config,
            train=replace(config.train, objectives=config.train.objectives.disable(*disable)),
        )
    return config


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    torch.set_num_threads(1)
    try:
        args = build_parser().parse_args(argv)
        config = _apply_overrides(load_config(args.config), args)
        validate_config(config)
        if args.command == "prepare":
            return cmd_prepare(config)
        if args.command == "pretrain-teacher":
            return cmd_pretrain_teacher(config)
        if args.command == "train":
            return cmd_train(config)
        if args.command == "eval":
            ckpt = Path(args.checkpoint) if args.checkpoint else None
            return cmd_eval(config, checkpoint=ckpt, baseline=args.baseline)
        if args.command == "viz":
            ckpt = Path(args.checkpoint) if args.checkpoint else None
            return cmd_viz(config, checkpoint=ckpt, sentences=args.sentences)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, CheckpointMismatchError, TrainerError, ObjectiveError, MaskingError, ModelConfigError) as exc:
        logger.error("configuration error: %s", exc)
        return 1
    except (CorpusError, TokenizationError, CheckpointError, EvaluationError, FileNotFoundError) as exc:
        logger.error("data error: %s", exc)
        return 2
    except (NonFiniteLossError, NonFiniteGradientError) as exc:
        logger.error("numeric failure: %s", exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())
