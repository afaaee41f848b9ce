"""Reassessment of the coarse prediction: fine-grained head, fusion, losses.

The fine head classifies the joint representation over all N classes (not
just the k candidates), so restricting attention to the candidate list is a
read-out of the full distribution, never a renormalization.  The final
prediction mixes the coarse and fine distributions with a trade-off alpha;
alpha only matters at inference, training always applies cross-entropy to
both heads (plus the augmentation pass when enabled) with unit weights.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, affine, astensor, cross_entropy, softmax
from .backbone import TopKPrediction, topk_search


@dataclass
class FusedPrediction:
    pr1: np.ndarray
    pr2: np.ndarray
    alpha: float
    pr: np.ndarray
    topk2: TopKPrediction


@dataclass
class LossBreakdown:
    coarse_ce: float
    fine_ce: float
    aug_ce: float

    @property
    def total(self) -> float:
        return self.coarse_ce + self.fine_ce + self.aug_ce


def init_fine_head(n_classes: int, d_j: int, rng: np.random.Generator, dtype=np.float64):
    lim = float(1.0 / np.sqrt(d_j))
    return {
        "fine.w": Tensor(rng.uniform(-lim, lim, size=(n_classes, d_j)).astype(dtype), requires_grad=True),
        "fine.b": Tensor(np.zeros(n_classes, dtype=dtype), requires_grad=True),
    }


def fine_logits(joint, params: dict[str, Tensor]) -> Tensor:
    """Logits over all N classes from the joint vector (batched or single)."""
    j = joint.J if hasattr(joint, "J") else astensor(joint)
    return affine(j, params["fine.w"], params["fine.b"])


def _check_distribution(name: str, p: np.ndarray):
    if p.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {p.shape}")
    if p.min() < -1e-12 or abs(p.sum() - 1.0) > 1e-6:
        raise ValueError(f"{name} is not a probability distribution (sum {p.sum():.6g})")


def fuse(pr1, pr2, alpha: float, k: int | None = None) -> FusedPrediction:
    """pr = alpha * pr1 + (1 - alpha) * pr2, with the second-stage top-k list."""
    p1 = pr1.data if isinstance(pr1, Tensor) else np.asarray(pr1, dtype=np.float64)
    p2 = pr2.data if isinstance(pr2, Tensor) else np.asarray(pr2, dtype=np.float64)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if p1.shape != p2.shape:
        raise ValueError(f"distribution length mismatch: {p1.shape} vs {p2.shape}")
    _check_distribution("pr1", p1)
    _check_distribution("pr2", p2)
    pr = alpha * p1 + (1.0 - alpha) * p2
    kk = len(pr) if k is None else k
    return FusedPrediction(pr1=p1, pr2=p2, alpha=float(alpha), pr=pr, topk2=topk_search(p2, kk))


def sac_loss(coarse, fine, aug_coarse, target) -> tuple[Tensor, LossBreakdown]:
    """Cross-entropy on both heads, plus the erased-image pass when present.

    Unit weights on each term.  Returns the differentiable total and a float
    breakdown; works on single logits vectors or (B, N) batches.
    """
    coarse_ce = cross_entropy(coarse, target)
    fine_ce = cross_entropy(fine, target)
    total = coarse_ce + fine_ce
    aug_val = 0.0
    if aug_coarse is not None:
        aug_ce = cross_entropy(aug_coarse, target)
        total = total + aug_ce
        aug_val = float(aug_ce.data)
    return total, LossBreakdown(
        coarse_ce=float(coarse_ce.data), fine_ce=float(fine_ce.data), aug_ce=aug_val
    )


def prediction_record(
    image_id: str,
    topk1: TopKPrediction,
    fused: FusedPrediction,
    truth: int,
    class_names: list[str] | None = None,
) -> str:
    """One JSON line describing both prediction stages for one image."""
    fused_top1 = int(np.argmax(fused.pr))
    rec = {
        "image": image_id,
        "topk1": [[int(c), float(s)] for c, s in zip(topk1.classes, topk1.scores)],
        "topk2": [[int(c), float(s)] for c, s in zip(fused.topk2.classes, fused.topk2.scores)],
        "fused_top1": fused_top1,
        "alpha": fused.alpha,
        "truth": int(truth),
    }
    if class_names is not None:
        rec["fused_top1_name"] = class_names[fused_top1]
        rec["truth_name"] = class_names[int(truth)]
    return json.dumps(rec)


def distributions(coarse, fine) -> tuple[np.ndarray, np.ndarray]:
    """Softmax both heads' logits into plain probability vectors."""
    pr1 = softmax(coarse if isinstance(coarse, Tensor) else Tensor(coarse))
    pr2 = softmax(fine if isinstance(fine, Tensor) else Tensor(fine))
    return pr1.data, pr2.data
