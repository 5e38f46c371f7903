"""The four distillation objectives and their weighted combination.

TLM: masked-token cross-entropy over a concatenated pair (both sides).
XWCL: infoNCE between masked student word heads and the frozen teacher's
word states, temperature-scaled dot products, negatives drawn from all other
words of the same source sentence.
SentA: mean squared distance between the L2-normalized student prediction and
the L2-normalized teacher projection of the two [CLS] states.
StrucA: KL divergence between row-softmax similarity structures of the
teacher projections and the student predictions across a batch.
"""

from __future__ import annotations

import logging
from collections.abc import Mapping
from dataclasses import dataclass, replace
from enum import Enum

import torch
import torch.nn.functional as F
from torch import Tensor

from .masking import MaskPlan
from .model import ProjectionHead
from .tokenization import WordAlignment

logger = logging.getLogger(__name__)


class Objective(str, Enum):
    TLM = "TLM"
    XWCL = "XWCL"
    SENTA = "SentA"
    STRUCA = "StrucA"


ALL_OBJECTIVES = frozenset(Objective)


def _as_objective(name: "str | Objective") -> "Objective":
    try:
        return Objective(name)
    except ValueError:
        known = ", ".join(sorted(o.value for o in Objective))
        raise ObjectiveError(f"unknown objective {name!r}; known: {known}") from None


class ObjectiveError(ValueError):
    """Objective inputs that cannot produce a loss."""


@dataclass(frozen=True)
class ObjectiveConfig:
    """Temperatures, structure weight, enabled set, and equation variants.

    xwcl_sum switches the per-sentence aggregation from mean to sum over
    masked words; struca_cross_entropy drops the teacher-entropy term from
    the KL (the value torch's KLDivLoss would add back).
    """

    tau_xwcl: float = 0.1
    tau_struca: float = 0.1
    alpha: float = 1.0
    enabled: frozenset[Objective] = ALL_OBJECTIVES
    xwcl_sum: bool = False
    struca_cross_entropy: bool = False

    def __post_init__(self) -> None:
        if self.tau_xwcl <= 0 or self.tau_struca <= 0:
            raise ObjectiveError("temperatures must be positive")
        if self.alpha < 0:
            raise ObjectiveError("alpha must be >= 0")
        object.__setattr__(self, "enabled", frozenset(_as_objective(o) for o in self.enabled))
        if not self.enabled:
            raise ObjectiveError("at least one objective must stay enabled")

    def disable(self, *names: str | Objective) -> "ObjectiveConfig":
        return replace(self, enabled=self.enabled - {_as_objective(n) for n in names})


@dataclass(frozen=True)
class LossBreakdown:
    """Per-objective values plus the weighted total; disabled entries are 0."""

    tlm: object
    xwcl: object
    senta: object
    struca: object
    total: object

    def detached(self) -> "LossBreakdown":
        def to_float(x: object) -> float:
            return float(x.detach()) if isinstance(x, Tensor) else float(x)

        return LossBreakdown(*[to_float(getattr(self, f)) for f in ("tlm", "xwcl", "senta", "struca", "total")])


def l2_normalize(v: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize the last dimension to unit length; reject near-zero rows."""
    norms = torch.linalg.vector_norm(v, dim=-1, keepdim=True)
    if bool((norms <= eps).any()):
        raise ObjectiveError("cannot normalize a near-zero vector")
    return v / norms


def tlm_loss(logits: Tensor, plan: MaskPlan) -> Tensor:
    """Mean cross-entropy of the original ids at the masked positions.

    logits holds one row per masked position, already gathered in plan order.
    An empty plan contributes zero (and logs a warning).
    """
    if len(plan.positions) == 0:
        logger.warning("tlm_loss called with an empty mask plan; contributing 0")
        return torch.zeros((), dtype=logits.dtype if logits.numel() else torch.float32)
    if logits.shape[0] != len(plan.positions):
        raise ObjectiveError("one logits row per masked position required")
    targets = torch.tensor(plan.original_ids, dtype=torch.long, device=logits.device)
    return F.cross_entropy(logits, targets)


def xwcl_loss(
    student_hidden: Tensor,
    teacher_hidden: Tensor,
    alignment: WordAlignment,
    plan: MaskPlan,
    tau: float = 0.1,
    aggregate_sum: bool = False,
) -> Tensor:
    """infoNCE over one sentence's masked words.

    student_hidden [Ts, H] comes from the masked concatenated input;
    teacher_hidden [Tt, H] from the clean source. For each masked word head,
    the positive is that word's teacher state and the candidate set is every
    aligned word state of the sentence. Similarity is the raw dot product
    scaled by 1/tau; log-softmax keeps large scores finite.
    """
    if tau <= 0:
        raise ObjectiveError("tau must be positive")
    if len(plan.word_heads) == 0:
        raise ObjectiveError("no masked words in plan")
    if len(alignment.pairs) == 0:
        raise ObjectiveError("empty alignment")
    student_pos = {s: i for i, (s, _) in enumerate(alignment.pairs)}
    teacher_idx = torch.tensor([t for _, t in alignment.pairs], dtype=torch.long)
    candidates = teacher_hidden[teacher_idx]  # [W, H]
    try:
        targets = torch.tensor([student_pos[h] for h in plan.word_heads], dtype=torch.long)
    except KeyError as exc:
        raise ObjectiveError(f"mask head at position {exc.args[0]} is not an aligned word head") from exc
    queries = student_hidden[torch.tensor(plan.word_heads, dtype=torch.long)]  # [M, H]
    logits = queries @ candidates.t() / tau
    per_word = -F.log_softmax(logits, dim=-1).gather(1, targets[:, None]).squeeze(1)
    return per_word.sum() if aggregate_sum else per_word.mean()


def senta_loss(
    student_cls: Tensor,
    teacher_cls: Tensor,
    student_head: ProjectionHead,
    student_pred: ProjectionHead,
    teacher_head: ProjectionHead,
) -> Tensor:
    """Squared distance between unit-length student prediction and teacher
    projection of the [CLS] states; sum over dims, mean over the batch."""
    if student_cls.shape[0] != teacher_cls.shape[0]:
        raise ObjectiveError("batch sizes differ")
    q = l2_normalize(student_pred(student_head(student_cls)))
    # Gradient flow into the teacher head is governed by its requires_grad
    # flags; frozen heads build no graph here.
    z = l2_normalize(teacher_head(teacher_cls))
    return ((q - z) ** 2).sum(dim=-1).mean()


def struca_loss(
    student_vectors: Tensor,
    teacher_vectors: Tensor,
    tau: float = 0.1,
    cross_entropy_only: bool = False,
) -> Tensor:
    """Relational KL between the two batch similarity structures.

    Rows are L2-normalized, pairwise similarity matrices are row-softmaxed at
    temperature tau, and KL(teacher row || student row) is summed over rows.
    Diagonals stay in. A single-row batch yields exactly zero.
    """
    if tau <= 0:
        raise ObjectiveError("tau must be positive")
    if student_vectors.shape != teacher_vectors.shape:
        raise ObjectiveError("shape mismatch")
    if student_vectors.dim() != 2:
        raise ObjectiveError("expected [batch, dim] inputs")
    zs = l2_normalize(student_vectors)
    zt = l2_normalize(teacher_vectors)
    log_p = F.log_softmax(zt @ zt.t() / tau, dim=1)
    p = log_p.exp()
    log_q = F.log_softmax(zs @ zs.t() / tau, dim=1)
    if cross_entropy_only:
        return -(p * log_q).sum()
    return (p * (log_p - log_q)).sum()


def total_loss(parts: Mapping[Objective, object], config: ObjectiveConfig) -> LossBreakdown:
    """Weighted sum over the enabled objectives.

    parts must supply exactly the enabled objectives. Values may be tensors
    (training) or floats (reporting); disabled slots are zero and the total
    applies alpha to the structural term.
    """
    supplied = {Objective(k) for k in parts}
    if supplied != config.enabled:
        raise ObjectiveError(f"parts {sorted(o.value for o in supplied)} != enabled {sorted(o.value for o in config.enabled)}")

    def part(o: Objective) -> object:
        return parts[o] if o in config.enabled else 0.0

    tlm, xwcl, senta, struca = (part(o) for o in (Objective.TLM, Objective.XWCL, Objective.SENTA, Objective.STRUCA))
    total = tlm + xwcl + senta + config.alpha * struca
    return LossBreakdown(tlm=tlm, xwcl=xwcl, senta=senta, struca=struca, total=total)
