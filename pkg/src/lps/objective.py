"""Loss terms of the learning-pace-synchronization objective.

Every loss returns a :class:`LossResult` with a hand-derived gradient. Batch
losses take the weak- and strong-view logits separately and return a gradient
of shape ``(2, B, K)``: index 0 is the weak view, index 1 the strong view.
Confidence masks, pseudo-labels and the class distribution are constants
within an iteration; no gradient flows through them.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from lps import kernels
from lps.data import SENTINEL, MultiViewBatch
from lps.numeric import (
    kl_divergence,
    log_softmax,
    logsumexp,
    normalize_rows,
    normalize_rows_backward,
    softmax,
)


@dataclass(frozen=True)
class Hyperparams:
    C: float = 10.0
    tau: float = 0.4
    eta1: float = 1.0
    eta2: float = 1.0
    lambda_seen: float = 0.95
    lambda_novel_base: float = 0.4
    lambda_novel_ramp: float = 0.4
    normalize_logits_for_similarity: bool = True
    # smoothing of the class-distribution estimate across iterations; 0 = per-batch
    ema_decay: float = 0.0
    # samples averaged by the entropy regularizer: "unlabeled" or "batch"
    entropy_population: str = "unlabeled"

    def __post_init__(self):
        if self.C <= 0 or self.tau <= 0:
            raise ValueError("C and tau must be positive")
        if self.eta1 < 0 or self.eta2 < 0:
            raise ValueError("eta1 and eta2 must be non-negative")
        if not 0 < self.lambda_seen <= 1 or not 0 < self.lambda_novel_base <= 1:
            raise ValueError("thresholds must lie in (0, 1]")
        if self.lambda_novel_ramp < 0 or self.lambda_novel_base + self.lambda_novel_ramp > 1:
            raise ValueError("lambda_novel_base + lambda_novel_ramp must not exceed 1")
        if not 0 <= self.ema_decay < 1:
            raise ValueError("ema_decay must lie in [0, 1)")
        if self.entropy_population not in ("unlabeled", "batch"):
            raise ValueError("entropy_population must be 'unlabeled' or 'batch'")


@dataclass(frozen=True)
class Ablation:
    no_am: bool = False
    no_pc: bool = False
    no_uc: bool = False
    no_entropy: bool = False

    @property
    def name(self) -> str:
        off = [k for k in ("no_am", "no_pc", "no_uc", "no_entropy") if getattr(self, k)]
        return "+".join(off) if off else "full"


@dataclass(frozen=True)
class TrainSchedule:
    t: int
    T: int

    def __post_init__(self):
        if self.T < 1 or not 0 <= self.t <= self.T:
            raise ValueError(f"need 0 <= t <= T and T >= 1, got t={self.t}, T={self.T}")


@dataclass
class LossResult:
    value: float
    grad: np.ndarray


@dataclass
class TotalLoss(LossResult):
    terms: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ClassDistribution:
    pi_hat: np.ndarray

    @property
    def K(self) -> int:
        return len(self.pi_hat)

    @property
    def pi_prior(self) -> np.ndarray:
        return np.full(self.K, 1.0 / self.K)

    @property
    def kl(self) -> float:
        return kl_divergence(self.pi_hat, self.pi_prior)

    @classmethod
    def uniform(cls, K: int) -> "ClassDistribution":
        return cls(np.full(K, 1.0 / K))


# -- thresholds and the class-distribution estimate ---------------------------


def confidence_threshold(class_id: int, seen_classes, sched: TrainSchedule, hp: Hyperparams = Hyperparams()) -> float:
    if class_id in seen_classes:
        return hp.lambda_seen
    return hp.lambda_novel_base + hp.lambda_novel_ramp * sched.t / sched.T


def class_thresholds(K: int, seen_classes, sched: TrainSchedule, hp: Hyperparams = Hyperparams()) -> np.ndarray:
    return np.array([confidence_threshold(c, seen_classes, sched, hp) for c in range(K)])


def confident_mask(probs: np.ndarray, thresholds: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Argmax class of each row and whether its probability clears that class's threshold."""
    probs = np.atleast_2d(probs)
    arg = np.argmax(probs, axis=1)
    return probs[np.arange(len(arg)), arg] >= thresholds[arg], arg


def partition(batch: MultiViewBatch, weak_logits: np.ndarray, thresholds: np.ndarray) -> MultiViewBatch:
    """Fill the confidence partition from the weak-view logits."""
    conf, arg = confident_mask(softmax(weak_logits), thresholds)
    conf = conf & ~batch.is_labeled
    pseudo = np.where(batch.is_labeled, SENTINEL, arg)
    return batch.with_partition(conf, pseudo)


def estimate_class_distribution(weak_probs_labeled, weak_probs_unlabeled, seen_classes, sched: TrainSchedule,
                                hp: Hyperparams = Hyperparams(), K: int | None = None) -> ClassDistribution:
    """Normalized sum of labeled predictions and confident unlabeled predictions.

    Falls back to uniform when nothing contributes.
    """
    lab = np.asarray(weak_probs_labeled, dtype=np.float64)
    unl = np.asarray(weak_probs_unlabeled, dtype=np.float64)
    if K is None:
        K = next(a.shape[-1] for a in (lab, unl) if a.size)
    lab = lab.reshape(-1, K)
    unl = unl.reshape(-1, K)
    total = lab.sum(axis=0)
    if len(unl):
        conf, _ = confident_mask(unl, class_thresholds(K, seen_classes, sched, hp))
        total = total + unl[conf].sum(axis=0)
    s = total.sum()
    if s <= 0:
        return ClassDistribution.uniform(K)
    return ClassDistribution(total / s)


def adaptive_margins(dist: ClassDistribution, C: float) -> np.ndarray:
    """Per-class margins: ``-KL(pi_hat || uniform) * pi_hat / max(pi_hat) * C`` (all <= 0)."""
    pi = dist.pi_hat
    return -dist.kl * (pi / pi.max()) * C


# -- adaptive margin loss -----------------------------------------------------


def _am_rows(logits: np.ndarray, targets: np.ndarray, margins: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row margin loss values and gradients."""
    rows = np.arange(len(targets))
    adj = np.array(logits, dtype=np.float64)
    adj[rows, targets] -= margins[targets]
    lse = logsumexp(adj, axis=1)
    values = lse - adj[rows, targets]
    grad = np.exp(adj - lse[:, None])
    grad[rows, targets] -= 1.0
    return values, grad


def adaptive_margin_loss(logits, target: int, margins) -> LossResult:
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("logits must be finite")
    values, grad = _am_rows(z[None, :], np.array([target]), np.asarray(margins, dtype=np.float64))
    return LossResult(float(values[0]), grad[0])


def cross_entropy(logits, target: int) -> float:
    return float(-log_softmax(logits)[target])


def am_batch_loss(batch: MultiViewBatch, weak_logits: np.ndarray, strong_logits: np.ndarray,
                  margins: np.ndarray, thresholds: np.ndarray | None = None) -> LossResult:
    """Labeled weak-view term over |B_l| plus confident strong-view term over |B_u|."""
    if thresholds is not None:
        batch = partition(batch, weak_logits, thresholds)
    B, K = weak_logits.shape
    grad = np.zeros((2, B, K))
    value = 0.0
    lab = np.flatnonzero(batch.is_labeled)
    unl_count = B - len(lab)
    if len(lab):
        v, g = _am_rows(weak_logits[lab], batch.labels[lab], margins)
        value += float(np.sum(v)) / len(lab)
        grad[0, lab] = g / len(lab)
    conf = np.flatnonzero(~batch.is_labeled & batch.confident)
    if len(conf):
        v, g = _am_rows(strong_logits[conf], batch.pseudo_labels[conf], margins)
        value += float(np.sum(v)) / unl_count
        grad[1, conf] = g / unl_count
    return LossResult(value, grad)


# -- contrastive terms --------------------------------------------------------


def _embed(z: np.ndarray, hp: Hyperparams):
    if hp.normalize_logits_for_similarity:
        return normalize_rows(z)
    return z, None


def _contrastive(z: np.ndarray, pos: np.ndarray, cand: np.ndarray, anchors: np.ndarray, hp: Hyperparams) -> LossResult:
    u, norms = _embed(z, hp)
    sim = (u @ u.T) / hp.tau
    total, count, dsim = kernels.contrastive(sim, pos, cand, anchors)
    if count == 0:
        return LossResult(0.0, np.zeros_like(z))
    dsim /= count
    grad_u = (dsim + dsim.T) @ u / hp.tau
    grad = normalize_rows_backward(grad_u, u, norms) if norms is not None else grad_u
    return LossResult(total / count, grad)


def pc_loss_views(z: np.ndarray, labels: np.ndarray, hp: Hyperparams = Hyperparams()) -> LossResult:
    """Pseudo-label contrastive clustering over a set of views.

    Every view is an anchor; positives are the other views with the same
    (pseudo-)label, candidates are all other views. Anchors without positives
    are skipped and not counted.
    """
    z = np.asarray(z, dtype=np.float64)
    n = len(z)
    if n < 2:
        return LossResult(0.0, np.zeros_like(z))
    labels = np.asarray(labels)
    off_diag = ~np.eye(n, dtype=bool)
    pos = (labels[:, None] == labels[None, :]) & off_diag
    return _contrastive(z, pos, off_diag, np.ones(n, dtype=bool), hp)


def uc_loss_views(z: np.ndarray, partner: np.ndarray, anchors: np.ndarray, hp: Hyperparams = Hyperparams()) -> LossResult:
    """Instance-level contrastive term.

    ``partner[i]`` is the index of view ``i``'s other augmentation; only rows
    flagged in ``anchors`` contribute. Candidates are all views except the anchor.
    """
    z = np.asarray(z, dtype=np.float64)
    n = len(z)
    anchors = np.asarray(anchors, dtype=bool)
    if n < 2 or not anchors.any():
        return LossResult(0.0, np.zeros_like(z))
    pos = np.zeros((n, n), dtype=bool)
    pos[np.arange(n), partner] = True
    np.fill_diagonal(pos, False)
    cand = ~np.eye(n, dtype=bool)
    return _contrastive(z, pos, cand, anchors, hp)


def _stack_views(weak_logits: np.ndarray, strong_logits: np.ndarray, mask: np.ndarray):
    idx = np.flatnonzero(mask)
    return np.concatenate([weak_logits[idx], strong_logits[idx]]), idx


def _scatter_views(grad_views: np.ndarray, idx: np.ndarray, B: int, K: int) -> np.ndarray:
    grad = np.zeros((2, B, K))
    k = len(idx)
    grad[0, idx] = grad_views[:k]
    grad[1, idx] = grad_views[k:]
    return grad


def pc_loss(batch: MultiViewBatch, weak_logits: np.ndarray, strong_logits: np.ndarray,
            hp: Hyperparams = Hyperparams()) -> LossResult:
    B, K = weak_logits.shape
    z, idx = _stack_views(weak_logits, strong_logits, batch.confident_set)
    labels = batch.targets[idx]
    res = pc_loss_views(z, np.concatenate([labels, labels]), hp)
    return LossResult(res.value, _scatter_views(res.grad, idx, B, K))


def uc_loss(batch: MultiViewBatch, weak_logits: np.ndarray, strong_logits: np.ndarray,
            hp: Hyperparams = Hyperparams()) -> LossResult:
    """Anchors are both views of every low-confidence sample; candidates span the whole batch."""
    B, K = weak_logits.shape
    low = batch.low_conf_set
    if not low.any():
        return LossResult(0.0, np.zeros((2, B, K)))
    z = np.concatenate([weak_logits, strong_logits])
    partner = np.concatenate([np.arange(B, 2 * B), np.arange(B)])
    res = uc_loss_views(z, partner, np.concatenate([low, low]), hp)
    return LossResult(res.value, np.stack([res.grad[:B], res.grad[B:]]))


# -- entropy regularizer ------------------------------------------------------


def entropy_regularizer(logits: np.ndarray) -> LossResult:
    """KL between the mean prediction of ``logits`` rows and the uniform prior."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    N, K = z.shape
    if N == 0:
        return LossResult(0.0, np.zeros_like(z))
    p = softmax(z)
    p_bar = p.mean(axis=0)
    value = kl_divergence(p_bar, np.full(K, 1.0 / K))
    g = np.log(np.maximum(p_bar, 1e-300) * K)
    grad = p * (g[None, :] - (p @ g)[:, None]) / N
    return LossResult(value, grad)


def entropy_loss(batch: MultiViewBatch, weak_logits: np.ndarray, strong_logits: np.ndarray,
                 population: str = "unlabeled") -> LossResult:
    """Entropy regularizer over both views of the unlabeled samples (or of the whole batch)."""
    B, K = weak_logits.shape
    members = ~batch.is_labeled if population == "unlabeled" else np.ones(B, dtype=bool)
    z, idx = _stack_views(weak_logits, strong_logits, members)
    res = entropy_regularizer(z.reshape(-1, K))
    return LossResult(res.value, _scatter_views(res.grad, idx, B, K))


# -- full objective -----------------------------------------------------------


def total_loss(batch: MultiViewBatch, weak_logits: np.ndarray, strong_logits: np.ndarray,
               dist: ClassDistribution, hp: Hyperparams = Hyperparams(),
               ablation: Ablation = Ablation()) -> TotalLoss:
    """Weighted sum of the four terms for a partitioned batch.

    With ``no_am`` the margin loss is replaced by plain cross-entropy on the
    same samples. Ablated terms report 0 in ``terms``.
    """
    if not batch.partitioned:
        raise ValueError("total_loss needs a partitioned batch")
    margins = np.zeros(dist.K) if ablation.no_am else adaptive_margins(dist, hp.C)
    am = am_batch_loss(batch, weak_logits, strong_logits, margins)
    value = am.value
    grad = am.grad.copy()
    terms = {"am": am.value, "pc": 0.0, "uc": 0.0, "entropy": 0.0}
    if not ablation.no_pc and hp.eta1 != 0:
        pc = pc_loss(batch, weak_logits, strong_logits, hp)
        terms["pc"] = pc.value
        value += hp.eta1 * pc.value
        grad += hp.eta1 * pc.grad
    if not ablation.no_uc and hp.eta2 != 0:
        uc = uc_loss(batch, weak_logits, strong_logits, hp)
        terms["uc"] = uc.value
        value += hp.eta2 * uc.value
        grad += hp.eta2 * uc.grad
    if not ablation.no_entropy:
        ent = entropy_loss(batch, weak_logits, strong_logits, hp.entropy_population)
        terms["entropy"] = ent.value
        value += ent.value
        grad += ent.grad
    terms["total"] = value
    return TotalLoss(value, grad, terms)
