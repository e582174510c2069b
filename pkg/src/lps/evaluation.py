"""Hungarian-matched accuracies, NMI and the class-distribution pace trace."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from lps import kernels
from lps.numeric import InvalidInputError, kl_divergence


@dataclass(frozen=True)
class AssignmentResult:
    """``mapping[i]`` is the column matched to row ``i``."""

    mapping: np.ndarray
    total_cost: float

    def as_dict(self) -> dict[int, int]:
        return {int(i): int(j) for i, j in enumerate(self.mapping)}


def hungarian(cost) -> AssignmentResult:
    """Minimum-cost perfect matching of a square cost matrix."""
    c = np.asarray(cost, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise InvalidInputError(f"cost matrix must be square, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise InvalidInputError("cost matrix has non-finite entries")
    if c.shape[0] == 0:
        return AssignmentResult(np.empty(0, dtype=np.int64), 0.0)
    mapping, total = kernels.lsap(c)
    return AssignmentResult(mapping, float(total))


def _max_matching(counts: np.ndarray) -> float:
    """Largest total count over injective row-to-column matchings (zero-padded)."""
    r, c = counts.shape
    n = max(r, c)
    if n == 0:
        return 0.0
    padded = np.zeros((n, n))
    padded[:r, :c] = counts
    return -hungarian(-padded).total_cost


def _confusion(preds: np.ndarray, targets: np.ndarray, pred_ids, target_ids) -> np.ndarray:
    p_pos = {int(k): i for i, k in enumerate(pred_ids)}
    t_pos = {int(k): j for j, k in enumerate(target_ids)}
    counts = np.zeros((len(p_pos), len(t_pos)))
    for p, t in zip(preds, targets):
        i, j = p_pos.get(int(p)), t_pos.get(int(t))
        if i is not None and j is not None:
            counts[i, j] += 1
    return counts


def _aligned(preds, targets) -> tuple[np.ndarray, np.ndarray]:
    preds = np.asarray(preds, dtype=np.int64).ravel()
    targets = np.asarray(targets, dtype=np.int64).ravel()
    if preds.shape != targets.shape:
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(targets)} targets")
    return preds, targets


def seen_accuracy(preds, targets, seen_classes) -> float:
    preds, targets = _aligned(preds, targets)
    mask = np.isin(targets, list(seen_classes))
    if not mask.any():
        return math.nan
    return float(np.mean(preds[mask] == targets[mask]))


def novel_accuracy(preds, targets, novel_classes) -> float:
    """Accuracy on novel-class samples after optimally matching predicted ids to novel classes.

    Returns NaN when no sample belongs to a novel class.
    """
    preds, targets = _aligned(preds, targets)
    mask = np.isin(targets, list(novel_classes))
    if not mask.any():
        return math.nan
    p, t = preds[mask], targets[mask]
    counts = _confusion(p, t, np.unique(p), sorted(novel_classes))
    return _max_matching(counts) / len(t)


def overall_accuracy(preds, targets, seen_classes, novel_classes, pin_seen: bool = True) -> float:
    """Accuracy over all samples with novel clusters matched on the whole set.

    With ``pin_seen`` the seen classes keep their own prediction ids and the
    novel classes are matched to the remaining ids. Otherwise every class is
    matched freely.
    """
    preds, targets = _aligned(preds, targets)
    if len(targets) == 0:
        return math.nan
    seen = sorted(seen_classes)
    novel = sorted(novel_classes)
    if not pin_seen:
        ids = sorted(set(seen) | set(novel) | set(np.unique(preds).tolist()))
        counts = _confusion(preds, targets, ids, seen + novel)
        return _max_matching(counts) / len(targets)
    seen_mask = np.isin(targets, seen)
    correct = float(np.sum(preds[seen_mask] == targets[seen_mask]))
    free_ids = sorted(set(np.unique(preds).tolist()) - set(seen))
    counts = _confusion(preds[~seen_mask], targets[~seen_mask], free_ids, novel)
    return (correct + _max_matching(counts)) / len(targets)


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p)))


def nmi(preds, targets) -> float:
    """Normalized mutual information, arithmetic-mean normalization."""
    preds, targets = _aligned(preds, targets)
    if len(preds) == 0:
        raise ValueError("nmi needs at least one sample")
    _, p_idx = np.unique(preds, return_inverse=True)
    _, t_idx = np.unique(targets, return_inverse=True)
    joint = np.zeros((p_idx.max() + 1, t_idx.max() + 1))
    np.add.at(joint, (p_idx, t_idx), 1.0)
    h_p = _entropy(joint.sum(axis=1))
    h_t = _entropy(joint.sum(axis=0))
    if h_p == 0.0 or h_t == 0.0:
        return 1.0 if joint.shape[0] == joint.shape[1] == 1 else 0.0
    n = len(preds)
    nz = joint > 0
    outer = np.outer(joint.sum(axis=1), joint.sum(axis=0))
    mi = float(np.sum(joint[nz] / n * np.log(joint[nz] * n / outer[nz])))
    return min(max(mi / (0.5 * (h_p + h_t)), 0.0), 1.0)


def pace_trace(history) -> list[float]:
    """KL(pi_hat || uniform) for each class distribution in ``history``."""
    out = []
    for dist in history:
        pi = np.asarray(getattr(dist, "pi_hat", dist), dtype=np.float64)
        out.append(kl_divergence(pi, np.full(len(pi), 1.0 / len(pi))))
    return out


@dataclass
class MetricsRecord:
    epoch: int
    seen_acc: float
    novel_acc: float
    all_acc: float
    nmi_novel: float
    kl_to_prior: float
    losses: dict = field(default_factory=dict)

    def validate(self):
        for name in ("seen_acc", "novel_acc", "all_acc", "nmi_novel"):
            v = getattr(self, name)
            if not (math.isnan(v) or 0.0 <= v <= 1.0):
                raise ValueError(f"{name}={v} outside [0, 1]")
        if not self.kl_to_prior >= 0.0:
            raise ValueError(f"kl_to_prior={self.kl_to_prior} must be >= 0")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=False)

    @classmethod
    def from_json(cls, line: str) -> "MetricsRecord":
        rec = cls(**json.loads(line))
        rec.validate()
        return rec


def evaluate_predictions(epoch: int, preds, targets, seen_classes, novel_classes, kl_to_prior: float,
                         losses: dict | None = None, pin_seen: bool = True) -> MetricsRecord:
    preds, targets = _aligned(preds, targets)
    novel_mask = np.isin(targets, list(novel_classes))
    rec = MetricsRecord(
        epoch=epoch,
        seen_acc=seen_accuracy(preds, targets, seen_classes),
        novel_acc=novel_accuracy(preds, targets, novel_classes),
        all_acc=overall_accuracy(preds, targets, seen_classes, novel_classes, pin_seen=pin_seen),
        nmi_novel=nmi(preds[novel_mask], targets[novel_mask]) if novel_mask.any() else math.nan,
        kl_to_prior=kl_to_prior,
        losses=dict(losses or {}),
    )
    rec.validate()
    return rec
