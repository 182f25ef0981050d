"""Couple Learning objective.

Classification cost: binary cross-entropy over real-labeled and
pseudo-labeled terms, frame-level for strong targets and clip-level for
weak targets, each component averaged over its contributing scalar
terms. Consistency cost: mean squared error between student and teacher
predictions over every clip in the batch, frame-level and clip-level,
with the teacher treated as a constant.
"""

from dataclasses import dataclass

import numpy as np

from . import numkit as nk
from .numkit import ShapeError, Tensor

PROB_EPS = 1e-7  # probability clamp before logs


@dataclass(frozen=True)
class ClipTarget:
    """Training targets for one batch member.

    A clip may carry a strong target ([T', C] binary frame matrix), a
    weak target ([C] binary tag vector), both, or neither (bare
    unlabeled member that only contributes consistency).
    """

    clip_id: str
    strong: np.ndarray | None = None
    weak: np.ndarray | None = None
    pseudo: bool = False
    split: str = "unlabeled"


@dataclass(frozen=True)
class LossBreakdown:
    """Objective components for one step (or averaged over an epoch)."""

    j1_real: float
    j1_pseudo: float
    j2_strong: float
    j2_weak: float
    consistency_weight: float
    total: float
    n_real_terms: int = 0
    n_pseudo_terms: int = 0
    n_j2_strong_terms: int = 0
    n_j2_weak_terms: int = 0

    FIELDS = ("j1_real", "j1_pseudo", "j2_strong", "j2_weak", "total")


def bce(pred, target):
    """Mean binary cross-entropy; predictions are clamped to (0, 1).

    Args:
        pred: probabilities (Tensor or array).
        target: same-shape array of {0, 1}.

    Returns:
        Scalar Tensor.
    """
    total, count = _bce_sum(pred, target)
    return nk.mul(total, 1.0 / count)


def _bce_sum(pred, target):
    pred = nk.as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.data.shape != target.shape:
        raise ShapeError(f"bce shapes differ: pred {pred.data.shape} vs target {target.shape}")
    p = nk.clamp(pred, PROB_EPS, 1.0 - PROB_EPS)
    ll = nk.add(nk.mul(nk.log(p), target), nk.mul(nk.log(nk.sub(1.0, p)), 1.0 - target))
    return nk.mul(nk.tsum(ll), -1.0), target.size


def classification_cost(frame_probs, clip_probs, targets, pseudo_weight=1.0):
    """Real and pseudo classification costs for one batch.

    Strong targets score against frame probabilities, weak targets
    against clip probabilities. Each component is the mean over all of
    its scalar terms; the pseudo component is then scaled by
    ``pseudo_weight``. A batch with no labeled terms yields (0, 0).

    Args:
        frame_probs: [B, T', C] (Tensor or array).
        clip_probs: [B, C] (Tensor or array).
        targets: list of ClipTarget aligned with the batch rows.

    Returns:
        (j1_real, j1_pseudo, n_real_terms, n_pseudo_terms); costs are
        scalar Tensors.
    """
    frame_probs = nk.as_tensor(frame_probs)
    clip_probs = nk.as_tensor(clip_probs)
    if len(targets) != frame_probs.data.shape[0]:
        raise ShapeError(
            f"{len(targets)} targets for a batch of {frame_probs.data.shape[0]}")

    def component(pseudo_flag):
        sums, count = [], 0
        strong_idx = [i for i, t in enumerate(targets)
                      if t.pseudo == pseudo_flag and t.strong is not None]
        if strong_idx:
            sel = nk.gather_rows(frame_probs, strong_idx)
            stacked = np.stack([targets[i].strong for i in strong_idx])
            s, n = _bce_sum(sel, stacked)
            sums.append(s)
            count += n
        weak_idx = [i for i, t in enumerate(targets)
                    if t.pseudo == pseudo_flag and t.weak is not None]
        if weak_idx:
            sel = nk.gather_rows(clip_probs, weak_idx)
            stacked = np.stack([targets[i].weak for i in weak_idx])
            s, n = _bce_sum(sel, stacked)
            sums.append(s)
            count += n
        if not sums:
            return Tensor(0.0), 0
        total = sums[0] if len(sums) == 1 else nk.add(sums[0], sums[1])
        return nk.mul(total, 1.0 / count), count

    j1_real, n_real = component(False)
    j1_pseudo, n_pseudo = component(True)
    if n_pseudo:
        j1_pseudo = nk.mul(j1_pseudo, float(pseudo_weight))
    return j1_real, j1_pseudo, n_real, n_pseudo


def consistency_cost(student_frame, student_clip, teacher_frame, teacher_clip):
    """Mean squared student/teacher disagreement over every batch member.

    The teacher predictions are constants: no gradient flows to them.

    Args:
        student_frame: [B, T', C] student frame probabilities (Tensor).
        student_clip: [B, C] student clip probabilities (Tensor).
        teacher_frame / teacher_clip: matching teacher arrays.

    Returns:
        (j2_strong, j2_weak) scalar Tensors.
    """
    student_frame = nk.as_tensor(student_frame)
    student_clip = nk.as_tensor(student_clip)
    t_frame = teacher_frame.data if isinstance(teacher_frame, Tensor) else np.asarray(teacher_frame)
    t_clip = teacher_clip.data if isinstance(teacher_clip, Tensor) else np.asarray(teacher_clip)
    if student_frame.data.shape != t_frame.shape or student_clip.data.shape != t_clip.shape:
        raise ShapeError(
            f"student/teacher shapes differ: {student_frame.data.shape} vs {t_frame.shape}, "
            f"{student_clip.data.shape} vs {t_clip.shape}")
    df = nk.sub(student_frame, t_frame)
    dc = nk.sub(student_clip, t_clip)
    return nk.tmean(nk.mul(df, df)), nk.tmean(nk.mul(dc, dc))


def combine(j1_real, j1_pseudo, j2_strong, j2_weak, consistency_weight):
    """total = j1_real + j1_pseudo + w * (j2_strong + j2_weak).

    Works on floats or scalar Tensors; the operation order is fixed so
    both paths produce bit-identical float64 results.
    """
    return j1_real + j1_pseudo + consistency_weight * (j2_strong + j2_weak)


def total_objective(j1_real, j1_pseudo, j2_strong, j2_weak, consistency_weight,
                    n_real_terms=0, n_pseudo_terms=0,
                    n_j2_strong_terms=0, n_j2_weak_terms=0):
    """Assemble the scalar components into a LossBreakdown record."""
    total = combine(float(j1_real), float(j1_pseudo), float(j2_strong), float(j2_weak),
                    float(consistency_weight))
    return LossBreakdown(
        j1_real=float(j1_real), j1_pseudo=float(j1_pseudo),
        j2_strong=float(j2_strong), j2_weak=float(j2_weak),
        consistency_weight=float(consistency_weight), total=total,
        n_real_terms=n_real_terms, n_pseudo_terms=n_pseudo_terms,
        n_j2_strong_terms=n_j2_strong_terms, n_j2_weak_terms=n_j2_weak_terms)
