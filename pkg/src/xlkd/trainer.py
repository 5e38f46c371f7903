"""Joint distillation training: schedule, optimizer, loop, checkpoints, and
finite-difference gradient verification.

Each batch is seen through three views. The token-masked view drives TLM, the
word-masked view drives XWCL against a clean teacher pass over the source,
and a clean target-side view drives SentA and StrucA against the same teacher
pass. All per-step randomness is derived from (seed, purpose, step), so a run
resumed from a checkpoint replays exactly.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import torch
from torch import Tensor

from .checkpoint import (
    CheckpointError,
    _load_module_params,
    _module_from_config,
    _read_payload,
    _tensor_entries,
    _write,
    check_expected,
    read_header,
)
from .corpus import LanguageId, ParallelPair, plan_balanced_batches
from .masking import MaskPlan, apply_tlm_mask, apply_xwcl_mask
from .model import ModelBundle, all_named_parameters, trainable_parameters
from .objectives import (
    LossBreakdown,
    Objective,
    ObjectiveConfig,
    ObjectiveError,
    senta_loss,
    struca_loss,
    tlm_loss,
    total_loss,
    xwcl_loss,
)
from .seeding import seed_int, stream
from .tokenization import (
    PAD_ID,
    ConcatenatedPair,
    TokenizationError,
    Vocabulary,
    WordAlignment,
    align_words,
    encode_pair,
    encode_single,
    tokenize,
)

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "tlm", "xwcl", "senta", "struca", "total", "lr")


class TrainerError(ValueError):
    """Unusable training configuration or inputs."""


class NonFiniteLossError(ArithmeticError):
    """A loss became NaN or infinite."""


class NonFiniteGradientError(ArithmeticError):
    """A gradient became NaN or infinite."""


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings. Desk-scale peak_lr default is 1e-3; a
    paper-scale fine-tuning run would use 2e-5 with batch 256 for 15 epochs."""

    peak_lr: float = 1e-3
    weight_decay: float = 0.01
    warmup_frac: float = 0.1
    batch_size: int = 16
    epochs: int = 5
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 1.0
    mask_rate: float = 0.15
    max_len: int = 128
    objectives: ObjectiveConfig = ObjectiveConfig()

    def __post_init__(self) -> None:
        if self.peak_lr <= 0:
            raise TrainerError("peak_lr must be positive")
        if not 0.0 < self.warmup_frac < 1.0:
            raise TrainerError("warmup_frac must be in (0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise TrainerError("batch_size and epochs must be >= 1")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise TrainerError("betas must be in [0, 1)")
        if self.eps <= 0 or self.weight_decay < 0 or self.grad_clip < 0:
            raise TrainerError("eps must be positive; weight_decay and grad_clip non-negative")
        if not 0.0 <= self.mask_rate <= 1.0:
            raise TrainerError("mask_rate must be in [0, 1]")


@dataclass
class TrainingState:
    """Optimizer moments, update counter, and the per-step loss history."""

    step: int = 0
    m: dict[str, Tensor] = field(default_factory=dict)
    v: dict[str, Tensor] = field(default_factory=dict)
    history: list[LossBreakdown] = field(default_factory=list)
    best_total: float | None = None
    skipped: int = 0


def lr_at_step(step: int, total_steps: int, config: TrainConfig) -> float:
    """Linear warmup over warmup_frac of total_steps, then linear decay to 0.

    Defined on [0, total_steps] with lr(0) = lr(total_steps) = 0 and the peak
    exactly at the warmup boundary.
    """
    if total_steps < 1:
        raise TrainerError("total_steps must be >= 1")
    if step < 0 or step > total_steps:
        raise TrainerError(f"step {step} outside [0, {total_steps}]")
    warmup = config.warmup_frac * total_steps
    if step <= warmup:
        return config.peak_lr * step / warmup
    return config.peak_lr * (total_steps - step) / (total_steps - warmup)


def adamw_step(
    named_params: Sequence[tuple[str, Tensor]],
    grads: Sequence[Tensor],
    state: TrainingState,
    lr: float,
    config: TrainConfig,
) -> None:
    """One decoupled-weight-decay Adam update, in place.

    Decay multiplies parameters by (1 - lr * weight_decay) before the moment
    update, matching the reference decoupled formulation. Moments are keyed
    by parameter name in the state.
    """
    if len(named_params) != len(grads):
        raise TrainerError("one gradient per parameter required")
    t = state.step + 1
    bc1 = 1.0 - config.beta1**t
    bc2 = 1.0 - config.beta2**t
    with torch.no_grad():
        for (name, p), g in zip(named_params, grads):
            if g is None:
                g = torch.zeros_like(p)
            m = state.m.get(name)
            if m is None:
                m = state.m[name] = torch.zeros_like(p)
            v = state.v.get(name)
            if v is None:
                v = state.v[name] = torch.zeros_like(p)
            if config.weight_decay:
                p.mul_(1.0 - lr * config.weight_decay)
            m.mul_(config.beta1).add_(g, alpha=1.0 - config.beta1)
            v.mul_(config.beta2).addcmul_(g, g, value=1.0 - config.beta2)
            denom = (v / bc2).sqrt_().add_(config.eps)
            p.addcdiv_(m / bc1, denom, value=-lr)
    state.step = t


def clip_gradients(grads: Sequence[Tensor], max_norm: float) -> float:
    """Scale all gradients by a common factor so the global L2 norm is at
    most max_norm; returns the pre-clip norm. max_norm 0 disables clipping."""
    total = torch.sqrt(sum((g.double() ** 2).sum() for g in grads))
    norm = float(total)
    if not math.isfinite(norm):
        raise NonFiniteGradientError(f"gradient norm is {norm}")
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        with torch.no_grad():
            for g in grads:
                g.mul_(scale)
    return norm


@dataclass(frozen=True)
class _EncodedPair:
    concat: ConcatenatedPair
    source_word_index: tuple[int, ...]
    teacher_ids: tuple[int, ...]
    target_ids: tuple[int, ...]
    alignment: WordAlignment


def encode_for_training(
    pair: ParallelPair,
    student_vocab: Vocabulary,
    teacher_vocab: Vocabulary,
    max_len: int = 128,
) -> _EncodedPair:
    """All token views of one pair: the student concat, the clean teacher
    source, the clean student target, and the word alignment whose positions
    are valid both in the teacher input and in the student concat."""
    src_student = tokenize(student_vocab, pair.source)
    tgt_student = tokenize(student_vocab, pair.target)
    src_teacher = tokenize(teacher_vocab, pair.source)
    concat = encode_pair(student_vocab, src_student, tgt_student, max_len=max_len)
    teacher_seq = encode_single(teacher_vocab, src_teacher, max_len=max_len)
    student_src_seq = encode_single(student_vocab, src_student, max_len=max_len)
    alignment = align_words(student_src_seq, teacher_seq)
    target_seq = encode_single(student_vocab, tgt_student, max_len=max_len)
    return _EncodedPair(
        concat=concat,
        source_word_index=src_student.word_index,
        teacher_ids=teacher_seq.ids,
        target_ids=target_seq.ids,
        alignment=alignment,
    )


def pad_batch(seqs: Sequence[Sequence[int]]) -> tuple[Tensor, Tensor]:
    """Right-pad with [PAD]; returns ids [B, L] and a real-token mask."""
    width = max(len(s) for s in seqs)
    ids = torch.full((len(seqs), width), PAD_ID, dtype=torch.long)
    mask = torch.zeros(len(seqs), width, dtype=torch.bool)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = torch.tensor(list(s), dtype=torch.long)
        mask[i, : len(s)] = True
    return ids, mask


def tlm_loss_from_batch(
    encoder: "torch.nn.Module",
    pairs: Sequence[ConcatenatedPair],
    vocab: Vocabulary,
    rate: float,
    seed_parts: tuple[Any, ...],
) -> Tensor:
    """Mask a batch of concatenated pairs, forward, and take the mean
    cross-entropy over every masked position in the batch."""
    masked, plans = [], []
    for i, pair in enumerate(pairs):
        ids, plan = apply_tlm_mask(pair, vocab, rate=rate, seed=seed_int(*seed_parts, i))
        masked.append(ids)
        plans.append(plan)
    ids, mask = pad_batch(masked)
    hidden = encoder(ids, mask)
    logits = encoder.lm_logits(hidden)
    rows = torch.tensor([i for i, p in enumerate(plans) for _ in p.positions], dtype=torch.long)
    cols = torch.tensor([pos for p in plans for pos in p.positions], dtype=torch.long)
    merged = MaskPlan(
        positions=tuple(range(len(cols))),
        kinds=tuple(k for p in plans for k in p.kinds),
        original_ids=tuple(t for p in plans for t in p.original_ids),
    )
    return tlm_loss(logits[rows, cols], merged)


def _batch_losses(
    bundle: ModelBundle,
    encoded: Sequence[_EncodedPair],
    student_vocab: Vocabulary,
    config: TrainConfig,
    step: int,
) -> dict[Objective, Tensor]:
    """Compute the enabled objective losses for one batch of encoded pairs."""
    obj = config.objectives
    enabled = obj.enabled
    parts: dict[Objective, Tensor] = {}
    need_teacher = bool(enabled & {Objective.XWCL, Objective.SENTA, Objective.STRUCA})

    teacher_hidden = None
    if need_teacher:
        t_ids, t_mask = pad_batch([e.teacher_ids for e in encoded])
        with torch.no_grad():
            teacher_hidden = bundle.teacher_encoder(t_ids, t_mask)

    if Objective.TLM in enabled:
        parts[Objective.TLM] = tlm_loss_from_batch(
            bundle.student_encoder,
            [e.concat for e in encoded],
            student_vocab,
            config.mask_rate,
            seed_parts=(config.seed, "mask-tlm", step),
        )

    if Objective.XWCL in enabled:
        masked, plans = [], []
        for i, e in enumerate(encoded):
            ids, plan = apply_xwcl_mask(
                e.concat, student_vocab, e.source_word_index, rate=config.mask_rate,
                seed=seed_int(config.seed, "mask-xwcl", step, i),
            )
            masked.append(ids)
            plans.append(plan)
        ids, mask = pad_batch(masked)
        hidden = bundle.student_encoder(ids, mask)
        per_sample = [
            xwcl_loss(
                hidden[i, : len(masked[i])],
                teacher_hidden[i, : len(encoded[i].teacher_ids)],
                encoded[i].alignment,
                plans[i],
                tau=obj.tau_xwcl,
                aggregate_sum=obj.xwcl_sum,
            )
            for i in range(len(encoded))
        ]
        parts[Objective.XWCL] = torch.stack(per_sample).mean()

    if enabled & {Objective.SENTA, Objective.STRUCA}:
        ids, mask = pad_batch([e.target_ids for e in encoded])
        student_cls = bundle.student_encoder(ids, mask)[:, 0]
        teacher_cls = teacher_hidden[:, 0]
        if Objective.SENTA in enabled:
            parts[Objective.SENTA] = senta_loss(
                student_cls, teacher_cls,
                bundle.student_senta_head, bundle.student_senta_pred,
                bundle.teacher_senta_head,
            )
        if Objective.STRUCA in enabled:
            z_student = bundle.student_struca_pred(bundle.student_struca_head(student_cls))
            z_teacher = bundle.teacher_struca_head(teacher_cls)
            parts[Objective.STRUCA] = struca_loss(
                z_student, z_teacher, tau=obj.tau_struca
            )
    return parts


def train(
    bundle: ModelBundle,
    datasets: Mapping[LanguageId, Sequence[ParallelPair]],
    student_vocab: Vocabulary,
    teacher_vocab: Vocabulary,
    config: TrainConfig,
    out_dir: str | Path | None = None,
    state: TrainingState | None = None,
) -> TrainingState:
    """Run the joint objective over balanced batches for config.epochs.

    Resume by passing the state from a loaded checkpoint: the loop continues
    at state.step and replays the identical batch, masking, and dropout
    streams. Writes an append-only TSV log and per-epoch plus best-by-total
    checkpoints when out_dir is given.
    """
    state = state if state is not None else TrainingState()

    encoded: dict[LanguageId, list[_EncodedPair | None]] = {}
    for lang, pairs in datasets.items():
        if len(pairs) == 0:
            raise TrainerError(f"empty dataset for language {lang!r}")
        rows: list[_EncodedPair | None] = []
        for p in pairs:
            try:
                rows.append(encode_for_training(p, student_vocab, teacher_vocab, config.max_len))
            except TokenizationError:
                rows.append(None)
                state.skipped += 1
        if all(r is None for r in rows):
            raise TrainerError(f"every pair in language {lang!r} exceeds max_len {config.max_len}")
        encoded[lang] = rows
    if state.skipped:
        logger.warning("skipped %d over-length pairs", state.skipped)

    plan0 = plan_balanced_batches(datasets, config.batch_size, seed_int(config.seed, "plan", 0))
    batches_per_epoch = len(plan0.batches)
    total_steps = batches_per_epoch * config.epochs
    if state.step >= total_steps:
        return state

    params = trainable_parameters(bundle)
    out_path = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
        log_file = out_path / "train_log.tsv"
        fresh = not log_file.exists() or state.step == 0
        log_fh = open(log_file, "w" if fresh else "a", encoding="utf-8")
        if fresh:
            log_fh.write("\t".join(LOG_COLUMNS) + "\n")

    plans_cache: dict[int, Any] = {0: plan0}

    def plan_for(epoch: int):
        if epoch not in plans_cache:
            plans_cache.clear()
            plans_cache[epoch] = plan_balanced_batches(
                datasets, config.batch_size, seed_int(config.seed, "plan", epoch)
            )
        return plans_cache[epoch]

    bundle.train()
    epoch_total = 0.0
    epoch_count = 0
    try:
        while state.step < total_steps:
            step = state.step
            epoch = step // batches_per_epoch
            batch_idx = step % batches_per_epoch
            batch = plan_for(epoch).batches[batch_idx]
            rows = [encoded[lang][i] for lang, i in batch]
            rows = [r for r in rows if r is not None]
            if not rows:
                raise TrainerError(f"step {step}: every pair in the batch was over-length")

            torch.manual_seed(seed_int(config.seed, "dropout", step))
            parts = _batch_losses(bundle, rows, student_vocab, config, step)
            breakdown = total_loss(parts, config.objectives)
            lr = lr_at_step(step, total_steps, config)

            total = breakdown.total
            if isinstance(total, Tensor):
                if not bool(torch.isfinite(total)):
                    raise NonFiniteLossError(
                        f"step {step}: total loss is {float(total)} ({breakdown.detached()})"
                    )
                if total.requires_grad:
                    grads = torch.autograd.grad(total, [p for _, p in params], allow_unused=True)
                    grads = [
                        g if g is not None else torch.zeros_like(p)
                        for g, (_, p) in zip(grads, params)
                    ]
                    clip_gradients(grads, config.grad_clip)
                    adamw_step(params, grads, state, lr, config)
                else:
                    state.step += 1
            else:
                state.step += 1

            scalar = breakdown.detached()
            state.history.append(scalar)
            epoch_total += scalar.total
            epoch_count += 1
            if log_fh is not None:
                log_fh.write(
                    "\t".join(
                        [str(step)]
                        + [f"{v:.6f}" for v in (scalar.tlm, scalar.xwcl, scalar.senta, scalar.struca, scalar.total)]
                        + [f"{lr:.8g}"]
                    )
                    + "\n"
                )
                log_fh.flush()

            end_of_epoch = (step + 1) % batches_per_epoch == 0
            if end_of_epoch and out_path is not None:
                mean_total = epoch_total / max(epoch_count, 1)
                save_checkpoint(bundle, state, out_path / f"epoch-{epoch:03d}.ckpt", config)
                if state.best_total is None or mean_total < state.best_total:
                    state.best_total = mean_total
                    save_checkpoint(bundle, state, out_path / "best.ckpt", config)
                epoch_total, epoch_count = 0.0, 0
    finally:
        if log_fh is not None:
            log_fh.close()
    return state


def grad_check(
    loss_fn: Callable[[], Tensor],
    named_params: Sequence[tuple[str, Tensor]],
    probe_count: int = 10,
    fd_step: float = 1e-5,
    seed: int = 0,
) -> float:
    """Compare autograd gradients against central finite differences.

    loss_fn must be deterministic (eval mode, fixed inputs) and is re-run
    twice per probe with one scalar parameter entry displaced by +-fd_step.
    Returns the worst relative error over probe_count random entries. Use
    double precision for headroom.
    """
    params = [p for _, p in named_params]
    if not params:
        raise TrainerError("no parameters to probe")
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    rng = stream(seed, "gradcheck")
    worst = 0.0
    for _ in range(probe_count):
        pi = rng.randrange(len(params))
        flat = params[pi].data.reshape(-1)
        idx = rng.randrange(flat.numel())
        analytic = 0.0 if grads[pi] is None else float(grads[pi].reshape(-1)[idx])
        orig = float(flat[idx])
        with torch.no_grad():
            flat[idx] = orig + fd_step
            up = float(loss_fn())
            flat[idx] = orig - fd_step
            down = float(loss_fn())
            flat[idx] = orig
        fd = (up - down) / (2.0 * fd_step)
        err = abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-5)
        worst = max(worst, err)
    return worst


def _state_entries(state: TrainingState) -> list[tuple[str, Tensor]]:
    entries = [(f"opt_m.{n}", t) for n, t in sorted(state.m.items())]
    entries += [(f"opt_v.{n}", t) for n, t in sorted(state.v.items())]
    hist = torch.tensor(
        [[b.tlm, b.xwcl, b.senta, b.struca, b.total] for b in state.history],
        dtype=torch.float32,
    ).reshape(len(state.history), 5)
    entries.append(("loss_history", hist))
    return entries


def _train_config_dict(config: TrainConfig) -> dict[str, Any]:
    d = dataclasses.asdict(config)
    d["objectives"]["enabled"] = sorted(o.value for o in config.objectives.enabled)
    return d


def _train_config_from_dict(d: dict[str, Any]) -> TrainConfig:
    obj = dict(d["objectives"])
    obj["enabled"] = frozenset(Objective(v) for v in obj["enabled"])
    return TrainConfig(**{**d, "objectives": ObjectiveConfig(**obj)})


def save_checkpoint(
    bundle: ModelBundle,
    state: TrainingState,
    path: str | Path,
    config: TrainConfig | None = None,
) -> None:
    """Full training snapshot: every bundle parameter, optimizer moments,
    loss history, counters, and the configs needed to rebuild the bundle."""
    named = all_named_parameters(bundle) + _state_entries(state)
    manifest, arrays = _tensor_entries(named)
    header = {
        "format": 1,
        "kind": "bundle",
        "modules": {name: dataclasses.asdict(mod.config) for name, mod in bundle.all_modules().items()},
        "freeze_teacher_heads": bundle.freeze_teacher_heads,
        "train": _train_config_dict(config) if config is not None else None,
        "state": {
            "step": state.step,
            "best_total": state.best_total,
            "skipped": state.skipped,
            "history_len": len(state.history),
        },
        "manifest": manifest,
    }
    _write(path, header, arrays)


def load_checkpoint(
    path: str | Path,
    expect: Mapping[str, Any] | None = None,
) -> tuple[ModelBundle, TrainingState, TrainConfig | None]:
    """Rebuild the bundle and state saved by save_checkpoint.

    expect maps dotted config paths to required values and turns silent
    config drift into CheckpointMismatchError.
    """
    header = read_header(path)
    if header.get("kind") != "bundle":
        raise CheckpointError(f"{path}: kind {header.get('kind')!r}, expected 'bundle'")
    if expect:
        check_expected(header, expect)
    modules = {
        name: _module_from_config(name, cfg) for name, cfg in header["modules"].items()
    }
    bundle = ModelBundle(
        teacher_encoder=modules["teacher_encoder"],
        teacher_senta_head=modules["teacher_senta_head"],
        teacher_struca_head=modules["teacher_struca_head"],
        student_encoder=modules["student_encoder"],
        student_senta_head=modules["student_senta_head"],
        student_senta_pred=modules["student_senta_pred"],
        student_struca_head=modules["student_struca_head"],
        student_struca_pred=modules["student_struca_pred"],
        freeze_teacher_heads=header["freeze_teacher_heads"],
    )
    tensors = _read_payload(path, header)
    for name, module in bundle.all_modules().items():
        _load_module_params(module, name, tensors)
    bundle.teacher_encoder.requires_grad_(False).eval()

    info = header["state"]
    state = TrainingState(step=info["step"], best_total=info["best_total"], skipped=info["skipped"])
    for key, t in tensors.items():
        if key.startswith("opt_m."):
            state.m[key[len("opt_m.") :]] = t
        elif key.startswith("opt_v."):
            state.v[key[len("opt_v.") :]] = t
    hist = tensors["loss_history"]
    if hist.shape[0] != info["history_len"]:
        raise CheckpointError(f"{path}: loss history length mismatch")
    state.history = [
        LossBreakdown(tlm=float(r[0]), xwcl=float(r[1]), senta=float(r[2]), struca=float(r[3]), total=float(r[4]))
        for r in hist
    ]
    train_cfg = _train_config_from_dict(header["train"]) if header["train"] else None
    return bundle, state, train_cfg
