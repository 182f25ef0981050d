"""Event-based F1 with onset/offset collars.

A reference/estimate pair is eligible when the onset difference is
within the onset collar and the offset difference is within
max(offset_collar, offset_ratio * reference duration); per class and
clip, a maximum-cardinality one-to-one matching over eligible pairs
determines TP/FP/FN. Macro F1 averages over classes present in either
side.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CollarParams:
    """Matching tolerances (the DCASE2020 challenge's published values)."""

    onset_collar: float = 0.200
    offset_collar: float = 0.200
    offset_ratio: float = 0.20

    def __post_init__(self):
        if min(self.onset_collar, self.offset_collar, self.offset_ratio) < 0:
            raise ValueError("collar parameters must be >= 0")


@dataclass(frozen=True)
class ClassScore:
    tp: int
    fp: int
    fn: int

    @property
    def f1(self):
        denom = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / denom if denom > 0 else 0.0


@dataclass(frozen=True)
class ScoreReport:
    """Per-class counts/F1 plus the unweighted macro average."""

    per_class: dict
    macro_f1: float


def _bounds(event):
    if hasattr(event, "onset"):
        return float(event.onset), float(event.offset)
    onset, offset = event[0], event[1]
    return float(onset), float(offset)


def eligible(ref_event, est_event, collar):
    """Collar rule for one candidate pair (offset tolerance scales with
    the reference event's duration)."""
    r_on, r_off = _bounds(ref_event)
    e_on, e_off = _bounds(est_event)
    off_tol = max(collar.offset_collar, collar.offset_ratio * (r_off - r_on))
    return (abs(r_on - e_on) <= collar.onset_collar
            and abs(r_off - e_off) <= off_tol)


def match_events(ref, est, collar, greedy=False):
    """One-to-one matching of reference and estimated events of one class.

    Args:
        ref / est: lists of events ((onset, offset) pairs or EventLabel).
        collar: CollarParams.
        greedy: use first-eligible assignment in list order instead of
            the default maximum-cardinality matching (comparison mode,
            mirrors challenge tooling).

    Returns:
        List of (ref_index, est_index) pairs.
    """
    elig = [[eligible(r, e, collar) for e in est] for r in ref]
    if greedy:
        pairs, used = [], set()
        for i in range(len(ref)):
            for j in range(len(est)):
                if j not in used and elig[i][j]:
                    pairs.append((i, j))
                    used.add(j)
                    break
        return pairs
    # Kuhn's augmenting-path maximum bipartite matching
    match_est = [-1] * len(est)

    def augment(i, seen):
        for j in range(len(est)):
            if elig[i][j] and not seen[j]:
                seen[j] = True
                if match_est[j] < 0 or augment(match_est[j], seen):
                    match_est[j] = i
                    return True
        return False

    for i in range(len(ref)):
        augment(i, [False] * len(est))
    return sorted((i, j) for j, i in enumerate(match_est) if i >= 0)


def eb_f1(ref, est, collar=None, classes=None, greedy=False):
    """Event-based F1 over a set of clips.

    Args:
        ref / est: {clip_id: list of EventLabel}.
        collar: CollarParams (defaults).
        classes: full class list; events naming other classes are an
            error. Defaults to the classes observed in ref and est.
        greedy: forwarded to match_events.

    Returns:
        ScoreReport; macro_f1 averages the classes present in ref or
        est (all-absent classes are skipped).
    """
    collar = collar or CollarParams()
    observed = sorted({ev.class_name for events in ref.values() for ev in events}
                      | {ev.class_name for events in est.values() for ev in events})
    if classes is None:
        classes = observed
    if not classes:
        raise ValueError("eb_f1 needs a non-empty class list")
    unknown = set(observed) - set(classes)
    if unknown:
        raise ValueError(f"events use classes outside the class list: {sorted(unknown)}")

    clip_ids = sorted(set(ref) | set(est))
    per_class = {}
    for cls in classes:
        tp = fp = fn = 0
        seen = False
        for cid in clip_ids:
            r = [ev for ev in ref.get(cid, []) if ev.class_name == cls]
            e = [ev for ev in est.get(cid, []) if ev.class_name == cls]
            if r or e:
                seen = True
            matched = match_events(r, e, collar, greedy=greedy)
            tp += len(matched)
            fp += len(e) - len(matched)
            fn += len(r) - len(matched)
        if seen:
            per_class[cls] = ClassScore(tp=tp, fp=fp, fn=fn)
    if not per_class:
        return ScoreReport(per_class={}, macro_f1=0.0)
    macro = float(np.mean([s.f1 for s in per_class.values()]))
    return ScoreReport(per_class=per_class, macro_f1=macro)
