"""Two-stream training objective.

    L_u = CE(y_u, y) + beta(t) * KL_u + lam * HSIC(sg(f_b), f_u)
    L_b = CE(y_b, y) + beta(t) * KL_b - lam * HSIC(f_b, sg(f_u))
    L   = alpha * L_u + (1 - alpha) * L_b

The stop-gradient sits on the features: f_b is detached in L_u and f_u in L_b,
which blocks the whole opposite encoder since the feature is its only path.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import torch
import torch.nn.functional as F

from app.core.exceptions import TrainingDivergedError
from app.models.streams import StreamOutput
from app.schemas import InputTransformMode, LossBreakdown, LossWeights
from app.services.hsic import hsic_biased

logger = logging.getLogger(__name__)

SIMPLEX_TOLERANCE = 1e-6
NAN = float("nan")


@dataclass
class StreamLossTerms:
    ce: torch.Tensor
    scene: torch.Tensor
    ind: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> Dict[str, float]:
        return {"ce": self.ce.item(), "scene": self.scene.item(), "ind": self.ind.item(), "total": self.total.item()}


def beta_schedule(epoch: int, weights: LossWeights) -> float:
    """beta(t) = u(t - t0) * beta, switched on when epoch t0 is reached."""
    if epoch < 0:
        raise ValueError(f"epoch must be non-negative, got {epoch}")
    return weights.beta if epoch >= weights.t0 else 0.0


def scene_kl(scene_logits: torch.Tensor, soft_label: torch.Tensor) -> torch.Tensor:
    """KL(soft_label || softmax(scene_logits)), averaged over the batch."""
    if scene_logits.dim() == 1:
        scene_logits = scene_logits.unsqueeze(0)
    soft_label = torch.as_tensor(soft_label, dtype=scene_logits.dtype, device=scene_logits.device)
    if soft_label.dim() == 1:
        soft_label = soft_label.unsqueeze(0)
    if soft_label.shape != scene_logits.shape:
        raise ValueError(f"soft label shape {tuple(soft_label.shape)} != logits {tuple(scene_logits.shape)}")
    if (soft_label < 0).any() or ((soft_label.sum(dim=-1) - 1.0).abs() > SIMPLEX_TOLERANCE).any():
        raise ValueError("soft label is not on the probability simplex")
    return F.kl_div(F.log_softmax(scene_logits, dim=-1), soft_label, reduction="batchmean")


def _diverged_breakdown(epoch: int, step: int, weights: LossWeights, transform=None, **known: float) -> LossBreakdown:
    fields = {"ce_u": NAN, "total_u": NAN, "total": NAN, "ind": NAN}
    fields.update(known)
    return LossBreakdown(epoch=epoch, step=step, beta_t=beta_schedule(epoch, weights), transform=transform, **fields)


def _require_finite(
    tensors: Dict[str, Optional[torch.Tensor]],
    epoch: int,
    step: int,
    weights: LossWeights,
    transform: Optional[InputTransformMode] = None,
) -> None:
    for name, tensor in tensors.items():
        if tensor is not None and not torch.isfinite(tensor).all():
            raise TrainingDivergedError(_diverged_breakdown(epoch, step, weights, transform), name)


def _check_batch(out: StreamOutput, y: torch.Tensor, other: Optional[torch.Tensor]) -> None:
    m = out.action_logits.shape[0]
    if y.shape[0] != m:
        raise ValueError(f"{y.shape[0]} labels for a batch of {m}")
    if other is not None and other.shape[0] != m:
        raise ValueError(f"other-stream features have batch {other.shape[0]}, expected {m}")


def _stream_terms(
    out: StreamOutput,
    y: torch.Tensor,
    y_s: Optional[torch.Tensor],
    other: Optional[torch.Tensor],
    epoch: int,
    weights: LossWeights,
    sign: float,
    own_first: bool,
) -> StreamLossTerms:
    _check_batch(out, y, other)
    zero = out.action_logits.new_zeros(())
    ce = F.cross_entropy(out.action_logits, y)
    scene = scene_kl(out.scene_logits, y_s) if y_s is not None else zero
    if other is None:
        ind = zero
    elif own_first:
        ind = hsic_biased(out.feature, other.detach(), weights.kernel, weights.kernel)
    else:
        ind = hsic_biased(other.detach(), out.feature, weights.kernel, weights.kernel)
    total = ce + beta_schedule(epoch, weights) * scene + sign * weights.lam * ind
    return StreamLossTerms(ce=ce, scene=scene, ind=ind, total=total)


def unbiased_terms(out_u, y, y_s, f_b, epoch: int, weights: LossWeights) -> StreamLossTerms:
    # HSIC(f_b, f_u) with f_b stopped
    return _stream_terms(out_u, y, y_s, f_b, epoch, weights, sign=1.0, own_first=False)


def biased_terms(out_b, y, y_s, f_u, epoch: int, weights: LossWeights) -> StreamLossTerms:
    # HSIC(f_b, f_u) with f_u stopped; the minus sign makes theta_b raise the dependence
    return _stream_terms(out_b, y, y_s, f_u, epoch, weights, sign=-1.0, own_first=True)


def _stream_inputs(out: StreamOutput, y_s, other, prefix: str, other_name: str) -> Dict[str, Optional[torch.Tensor]]:
    return {
        f"{prefix}.feature": out.feature,
        f"{prefix}.action_logits": out.action_logits,
        f"{prefix}.scene_logits": out.scene_logits,
        "soft_label": y_s,
        other_name: other,
    }


def unbiased_loss(
    out_u: StreamOutput,
    y: torch.Tensor,
    y_s: Optional[torch.Tensor],
    f_b: Optional[torch.Tensor],
    epoch: int,
    weights: LossWeights,
    step: int = 0,
    record: Optional[Dict[str, float]] = None,
) -> torch.Tensor:
    """L_u for one batch; `record`, when given, receives the ce/scene/ind/total values."""
    _require_finite(_stream_inputs(out_u, y_s, f_b, "unbiased", "f_b"), epoch, step, weights)
    terms = unbiased_terms(out_u, y, y_s, f_b, epoch, weights)
    values = terms.as_floats()
    bad = [k for k, v in values.items() if not math.isfinite(v)]
    if bad:
        breakdown = _diverged_breakdown(
            epoch, step, weights, ce_u=values["ce"], scene_u=values["scene"], ind=values["ind"], total_u=values["total"]
        )
        raise TrainingDivergedError(breakdown, f"unbiased_loss.{bad[0]}")
    if record is not None:
        record.update(values)
    return terms.total


def biased_loss(
    out_b: StreamOutput,
    y: torch.Tensor,
    y_s: Optional[torch.Tensor],
    f_u: torch.Tensor,
    epoch: int,
    weights: LossWeights,
    step: int = 0,
    record: Optional[Dict[str, float]] = None,
) -> torch.Tensor:
    """L_b for one batch; `record`, when given, receives the ce/scene/ind/total values."""
    _require_finite(_stream_inputs(out_b, y_s, f_u, "biased", "f_u"), epoch, step, weights)
    terms = biased_terms(out_b, y, y_s, f_u, epoch, weights)
    values = terms.as_floats()
    bad = [k for k, v in values.items() if not math.isfinite(v)]
    if bad:
        breakdown = _diverged_breakdown(
            epoch, step, weights, ce_b=values["ce"], scene_b=values["scene"], ind=values["ind"], total_b=values["total"]
        )
        raise TrainingDivergedError(breakdown, f"biased_loss.{bad[0]}")
    if record is not None:
        record.update(values)
    return terms.total


def total_loss(loss_u: torch.Tensor, loss_b: torch.Tensor, weights: LossWeights) -> torch.Tensor:
    return weights.alpha * loss_u + (1.0 - weights.alpha) * loss_b


def compute_losses(
    out_u: StreamOutput,
    out_b: Optional[StreamOutput],
    y: torch.Tensor,
    y_s: Optional[torch.Tensor],
    epoch: int,
    step: int,
    weights: LossWeights,
    transform: Optional[InputTransformMode] = None,
) -> Tuple[torch.Tensor, LossBreakdown]:
    """Full objective for one batch plus its logged breakdown.

    Without a biased stream the objective is L_u alone.
    """
    inputs = _stream_inputs(out_u, y_s, None, "unbiased", "f_b")
    if out_b is not None:
        inputs.update(_stream_inputs(out_b, y_s, None, "biased", "f_u"))
    _require_finite(inputs, epoch, step, weights, transform)

    u, b = {}, {}
    f_b = out_b.feature if out_b is not None else None
    loss_u = unbiased_loss(out_u, y, y_s, f_b, epoch, weights, step=step, record=u)
    if out_b is None:
        total = loss_u
    else:
        loss_b = biased_loss(out_b, y, y_s, out_u.feature, epoch, weights, step=step, record=b)
        total = total_loss(loss_u, loss_b, weights)

    breakdown = LossBreakdown(
        epoch=epoch,
        step=step,
        ce_u=u["ce"],
        ce_b=b.get("ce", 0.0),
        scene_u=u["scene"],
        scene_b=b.get("scene", 0.0),
        ind=u["ind"],
        total_u=u["total"],
        total_b=b.get("total", 0.0),
        total=total.item(),
        beta_t=beta_schedule(epoch, weights),
        transform=transform,
    )
    if not math.isfinite(breakdown.total):
        raise TrainingDivergedError(breakdown, "total")
    return total, breakdown
