"""Compact transformer encoders and projection heads.

Post-norm blocks, learned positional embeddings, seeded truncated-normal init
(sigma 0.02). The LM head ties the input embedding matrix and owns only an
output bias. A ModelBundle wires a frozen teacher (encoder plus two projection
heads) to a trainable student (encoder, two projection heads, two prediction
heads); teacher and student hidden sizes must match because word-level
contrast takes dot products between the two hidden spaces.
"""

from __future__ import annotations

import hashlib
import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import TYPE_CHECKING

import torch
from torch import Tensor, nn

from .seeding import seed_int
from .tokenization import PAD_ID

if TYPE_CHECKING:
    from .tokenization import Vocabulary


class ModelConfigError(ValueError):
    """Inconsistent model configuration."""


@dataclass(frozen=True)
class EncoderConfig:
    """Desk-scale defaults; a paper-scale encoder would use 12 layers,
    768 hidden, 12 heads, 3072 ffn."""

    vocab_size: int
    layers: int = 4
    hidden_dim: int = 64
    heads: int = 4
    ffn_dim: int = 256
    max_len: int = 128
    dropout: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.vocab_size < 6:
            raise ModelConfigError("vocab_size must cover the five specials")
        if self.layers < 1 or self.hidden_dim < 1 or self.ffn_dim < 1:
            raise ModelConfigError("layers, hidden_dim, ffn_dim must be >= 1")
        if self.hidden_dim % self.heads != 0:
            raise ModelConfigError("hidden_dim must be divisible by heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ModelConfigError("dropout must be in [0, 1)")
        if self.max_len < 3:
            raise ModelConfigError("max_len must fit [CLS] token [SEP]")


@dataclass(frozen=True)
class HeadConfig:
    in_dim: int
    mid_dim: int = 64
    out_dim: int = 32
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.in_dim, self.mid_dim, self.out_dim) < 1:
            raise ModelConfigError("head dims must be >= 1")


def _init_module(module: nn.Module, generator: torch.Generator) -> None:
    # Truncated normal (sigma 0.02, cut at 2 sigma) for weight matrices and
    # embeddings, zeros for biases, identity for layer norms.
    for m in module.modules():
        if isinstance(m, nn.Linear):
            nn.init.trunc_normal_(m.weight, std=0.02, a=-0.04, b=0.04, generator=generator)
            if m.bias is not None:
                nn.init.zeros_(m.bias)
        elif isinstance(m, nn.Embedding):
            nn.init.trunc_normal_(m.weight, std=0.02, a=-0.04, b=0.04, generator=generator)
            if m.padding_idx is not None:
                with torch.no_grad():
                    m.weight[m.padding_idx].zero_()
        elif isinstance(m, nn.LayerNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


class SelfAttention(nn.Module):
    def __init__(self, config: EncoderConfig) -> None:
        super().__init__()
        self.heads = config.heads
        self.head_dim = config.hidden_dim // config.heads
        self.q = nn.Linear(config.hidden_dim, config.hidden_dim)
        self.k = nn.Linear(config.hidden_dim, config.hidden_dim)
        self.v = nn.Linear(config.hidden_dim, config.hidden_dim)
        self.out = nn.Linear(config.hidden_dim, config.hidden_dim)
        self.drop = nn.Dropout(config.dropout)

    def forward(self, x: Tensor, key_mask: Tensor) -> Tensor:
        b, t, h = x.shape

        def split(t_: Tensor) -> Tensor:
            return t_.view(b, t, self.heads, self.head_dim).transpose(1, 2)

        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        # Key-side masking only; every row attends to at least [CLS].
        scores = scores.masked_fill(~key_mask[:, None, None, :], float("-inf"))
        attn = self.drop(torch.softmax(scores, dim=-1))
        ctx = (attn @ v).transpose(1, 2).reshape(b, t, h)
        return self.out(ctx)


class EncoderBlock(nn.Module):
    def __init__(self, config: EncoderConfig) -> None:
        super().__init__()
        self.attn = SelfAttention(config)
        self.norm1 = nn.LayerNorm(config.hidden_dim)
        self.ffn = nn.Sequential(
            nn.Linear(config.hidden_dim, config.ffn_dim),
            nn.GELU(),
            nn.Linear(config.ffn_dim, config.hidden_dim),
        )
        self.norm2 = nn.LayerNorm(config.hidden_dim)
        self.drop = nn.Dropout(config.dropout)

    def forward(self, x: Tensor, key_mask: Tensor) -> Tensor:
        x = self.norm1(x + self.drop(self.attn(x, key_mask)))
        x = self.norm2(x + self.drop(self.ffn(x)))
        return x


class Encoder(nn.Module):
    """Token + learned position embeddings, post-norm blocks, tied LM head."""

    def __init__(self, config: EncoderConfig) -> None:
        super().__init__()
        self.config = config
        self.token_emb = nn.Embedding(config.vocab_size, config.hidden_dim, padding_idx=PAD_ID)
        self.pos_emb = nn.Embedding(config.max_len, config.hidden_dim)
        self.emb_norm = nn.LayerNorm(config.hidden_dim)
        self.emb_drop = nn.Dropout(config.dropout)
        self.blocks = nn.ModuleList(EncoderBlock(config) for _ in range(config.layers))
        self.lm_bias = nn.Parameter(torch.zeros(config.vocab_size))
        gen = torch.Generator().manual_seed(seed_int(config.seed, "encoder"))
        _init_module(self, gen)

    def forward(self, ids: Tensor, key_mask: Tensor | None = None) -> Tensor:
        """ids [B, T] int64 -> hidden states [B, T, H].

        key_mask marks real tokens; None means all positions are real.
        """
        if ids.dim() != 2:
            raise ModelConfigError("ids must be [batch, seq]")
        b, t = ids.shape
        if t > self.config.max_len:
            raise ModelConfigError(f"sequence length {t} exceeds max_len {self.config.max_len}")
        if int(ids.max()) >= self.config.vocab_size or int(ids.min()) < 0:
            raise ModelConfigError("token id out of range")
        if key_mask is None:
            key_mask = torch.ones(b, t, dtype=torch.bool, device=ids.device)
        pos = torch.arange(t, device=ids.device)
        x = self.token_emb(ids) + self.pos_emb(pos)[None, :, :]
        x = self.emb_drop(self.emb_norm(x))
        for block in self.blocks:
            x = block(x, key_mask)
        return x

    def lm_logits(self, hidden: Tensor) -> Tensor:
        """Tied-embedding language-model logits over the vocabulary."""
        return hidden @ self.token_emb.weight.t() + self.lm_bias


class ProjectionHead(nn.Module):
    """Two-layer MLP with GELU; shape [*, in] -> [*, out]."""

    def __init__(self, config: HeadConfig) -> None:
        super().__init__()
        self.config = config
        self.net = nn.Sequential(
            nn.Linear(config.in_dim, config.mid_dim),
            nn.GELU(),
            nn.Linear(config.mid_dim, config.out_dim),
        )
        gen = torch.Generator().manual_seed(seed_int(config.seed, "head"))
        _init_module(self, gen)

    def forward(self, x: Tensor) -> Tensor:
        return self.net(x)


def init_encoder(config: EncoderConfig) -> Encoder:
    """Fresh encoder; identical config and seed give bit-identical weights."""
    return Encoder(config)


def init_head(config: HeadConfig) -> ProjectionHead:
    return ProjectionHead(config)


def encode(encoder: Encoder, ids: Sequence[int], train_mode: bool = False) -> Tensor:
    """Single-sequence convenience wrapper: ids -> [T, H] hidden states."""
    was_training = encoder.training
    encoder.train(train_mode)
    try:
        batch = torch.tensor([list(ids)], dtype=torch.long)
        out = encoder(batch)[0]
    finally:
        encoder.train(was_training)
    return out


@dataclass
class ModelBundle:
    """Frozen teacher plus trainable student with their heads.

    Teacher components stay in eval mode with requires_grad False. Student
    components flip between train and eval via train()/eval(). When
    freeze_teacher_heads is False the two teacher heads join the trainable
    set (the teacher encoder never does).
    """

    teacher_encoder: Encoder
    teacher_senta_head: ProjectionHead
    teacher_struca_head: ProjectionHead
    student_encoder: Encoder
    student_senta_head: ProjectionHead
    student_senta_pred: ProjectionHead
    student_struca_head: ProjectionHead
    student_struca_pred: ProjectionHead
    freeze_teacher_heads: bool = True

    def __post_init__(self) -> None:
        th = self.teacher_encoder.config.hidden_dim
        sh = self.student_encoder.config.hidden_dim
        if th != sh:
            raise ModelConfigError(
                f"teacher hidden_dim {th} != student hidden_dim {sh}; word-level contrast needs one space"
            )
        for head, dim in self._head_in_dims():
            if head.config.in_dim != dim:
                raise ModelConfigError("head in_dim does not match its encoder or upstream head")
        self.teacher_encoder.requires_grad_(False).eval()
        for head in (self.teacher_senta_head, self.teacher_struca_head):
            head.requires_grad_(not self.freeze_teacher_heads)
            head.eval()

    def _head_in_dims(self) -> list[tuple[ProjectionHead, int]]:
        h = self.student_encoder.config.hidden_dim
        return [
            (self.teacher_senta_head, h),
            (self.teacher_struca_head, h),
            (self.student_senta_head, h),
            (self.student_struca_head, h),
            (self.student_senta_pred, self.student_senta_head.config.out_dim),
            (self.student_struca_pred, self.student_struca_head.config.out_dim),
        ]

    def student_modules(self) -> dict[str, nn.Module]:
        return {
            "student_encoder": self.student_encoder,
            "student_senta_head": self.student_senta_head,
            "student_senta_pred": self.student_senta_pred,
            "student_struca_head": self.student_struca_head,
            "student_struca_pred": self.student_struca_pred,
        }

    def teacher_modules(self) -> dict[str, nn.Module]:
        return {
            "teacher_encoder": self.teacher_encoder,
            "teacher_senta_head": self.teacher_senta_head,
            "teacher_struca_head": self.teacher_struca_head,
        }

    def all_modules(self) -> dict[str, nn.Module]:
        return {**self.teacher_modules(), **self.student_modules()}

    def train(self) -> None:
        for m in self.student_modules().values():
            m.train()

    def eval(self) -> None:
        for m in self.student_modules().values():
            m.eval()

    def double(self) -> "ModelBundle":
        for m in self.all_modules().values():
            m.double()
        return self


def trainable_parameters(bundle: ModelBundle) -> list[tuple[str, nn.Parameter]]:
    """Ordered (name, parameter) list of everything the optimizer updates.

    Student encoder and heads always; teacher heads only when unfrozen; the
    teacher encoder never.
    """
    named: list[tuple[str, nn.Parameter]] = []
    for mod_name, module in bundle.student_modules().items():
        named.extend((f"{mod_name}.{n}", p) for n, p in module.named_parameters())
    if not bundle.freeze_teacher_heads:
        for mod_name in ("teacher_senta_head", "teacher_struca_head"):
            module = bundle.all_modules()[mod_name]
            named.extend((f"{mod_name}.{n}", p) for n, p in module.named_parameters())
    return named


def all_named_parameters(bundle: ModelBundle) -> list[tuple[str, nn.Parameter]]:
    named: list[tuple[str, nn.Parameter]] = []
    for mod_name, module in bundle.all_modules().items():
        named.extend((f"{mod_name}.{n}", p) for n, p in module.named_parameters())
    return named


def parameter_checksum(named: Sequence[tuple[str, nn.Parameter]]) -> str:
    """sha256 over names, shapes, and float32 little-endian payloads."""
    digest = hashlib.sha256()
    for name, p in named:
        digest.update(name.encode())
        digest.update(str(tuple(p.shape)).encode())
        arr = p.detach().to(torch.float32).contiguous().numpy()
        digest.update(arr.astype("<f4", copy=False).tobytes())
    return digest.hexdigest()


def pretrain_teacher(
    texts: Sequence[str],
    vocab: "Vocabulary",
    config: EncoderConfig,
    steps: int,
    batch_size: int = 16,
    peak_lr: float = 1e-3,
    mask_rate: float = 0.15,
    seed: int = 0,
) -> tuple[Encoder, list[float]]:
    """Masked-language-model pretraining on monolingual text; returns the
    frozen encoder and the per-step loss history.

    Batches are sampled with replacement from the usable (in-length) texts;
    over-length texts are skipped with a warning. Optimization mirrors the
    distillation trainer: AdamW, linear warmup and decay, gradient clipping.
    """
    from .masking import apply_tlm_mask
    from .tokenization import ConcatenatedPair, TokenizationError, encode_single, tokenize
    from .trainer import (
        TrainConfig,
        TrainerError,
        TrainingState,
        adamw_step,
        clip_gradients,
        lr_at_step,
        tlm_loss_from_batch,
    )

    if steps < 1:
        raise TrainerError("steps must be >= 1")
    encoder = init_encoder(config)
    pseudo_pairs: list[ConcatenatedPair] = []
    skipped = 0
    for text in texts:
        try:
            seq = encode_single(vocab, tokenize(vocab, text), max_len=config.max_len)
        except TokenizationError:
            skipped += 1
            continue
        n = len(seq.ids)
        pseudo_pairs.append(
            ConcatenatedPair(ids=seq.ids, source_span=(1, n - 1), target_span=(n - 1, n - 1))
        )
    if skipped:
        logging.getLogger(__name__).warning("pretrain: skipped %d over-length texts", skipped)
    if not pseudo_pairs:
        raise TrainerError("no usable pretraining texts")

    opt = TrainConfig(peak_lr=peak_lr, batch_size=batch_size, seed=seed, mask_rate=mask_rate)
    state = TrainingState()
    named = [(f"encoder.{n}", p) for n, p in encoder.named_parameters()]
    history: list[float] = []
    encoder.train()
    for step in range(steps):
        torch.manual_seed(seed_int(seed, "pretrain-dropout", step))
        rng_batch = torch.Generator().manual_seed(seed_int(seed, "pretrain-batch", step))
        idx = torch.randint(len(pseudo_pairs), (batch_size,), generator=rng_batch).tolist()
        loss = tlm_loss_from_batch(
            encoder, [pseudo_pairs[i] for i in idx], vocab, mask_rate,
            seed_parts=(seed, "pretrain-mask", step),
        )
        grads = torch.autograd.grad(loss, [p for _, p in named], allow_unused=True)
        grads = [g if g is not None else torch.zeros_like(p) for g, (_, p) in zip(grads, named)]
        clip_gradients(grads, opt.grad_clip)
        adamw_step(named, grads, state, lr_at_step(step, steps, opt), opt)
        history.append(float(loss.detach()))
    encoder.requires_grad_(False).eval()
    return encoder, history


def build_bundle(
    teacher_encoder: Encoder,
    student_config: EncoderConfig,
    head_mid_dim: int = 64,
    head_out_dim: int = 32,
    seed: int = 0,
    freeze_teacher_heads: bool = True,
) -> ModelBundle:
    """Assemble a bundle around an existing (typically pretrained) teacher."""
    h = teacher_encoder.config.hidden_dim

    def head(tag: str, in_dim: int) -> ProjectionHead:
        return init_head(
            HeadConfig(in_dim=in_dim, mid_dim=head_mid_dim, out_dim=head_out_dim, seed=seed_int(seed, tag))
        )

    return ModelBundle(
        teacher_encoder=teacher_encoder,
        teacher_senta_head=head("t_senta", h),
        teacher_struca_head=head("t_struca", h),
        student_encoder=init_encoder(student_config),
        student_senta_head=head("s_senta", h),
        student_senta_pred=head("s_senta_pred", head_out_dim),
        student_struca_head=head("s_struca", h),
        student_struca_pred=head("s_struca_pred", head_out_dim),
        freeze_teacher_heads=freeze_teacher_heads,
    )
