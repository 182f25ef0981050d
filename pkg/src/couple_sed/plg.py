"""Pseudo-label generation from a trained checkpoint.

Three label kinds: clip-level tags for unlabeled clips (UPW), events for
unlabeled clips (UPS), and events for weakly-labeled clips (WPS, by
default gated so only classes in the clip's real tags survive). Frame
decisions are thresholded, median-filtered, then turned into events.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from . import dataio
from . import numkit as nk
from .crnn import forward_graph, load_checkpoint


@dataclass(frozen=True)
class PlgConfig:
    """Decision thresholds and post-processing for pseudo labels."""

    clip_threshold: float = 0.5
    frame_threshold: float = 0.5
    median_window: int = 5
    gate_strong_by_weak: bool = True

    def __post_init__(self):
        for name in ("clip_threshold", "frame_threshold"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must be in (0, 1), got {v}")
        if self.median_window < 1 or self.median_window % 2 == 0:
            raise ValueError(f"median_window must be odd and >= 1, got {self.median_window}")


@dataclass
class PseudoLabelSet:
    """Generated labels keyed by clip id, plus checkpoint provenance."""

    upw: dict = field(default_factory=dict)   # clip id -> set of tags
    ups: dict = field(default_factory=dict)   # clip id -> list of EventLabel
    wps: dict = field(default_factory=dict)   # clip id -> list of EventLabel
    provenance: str = ""

    def kinds(self):
        active = []
        for kind in ("ups", "upw", "wps"):
            if getattr(self, kind):
                active.append(kind)
        return active


def median_filter(bits, window):
    """Binary majority filter; edge positions use shrunken windows.

    Output bit i is 1 iff strictly more than half of the in-bounds
    window centered at i is 1 (ties go to 0).
    """
    if window % 2 == 0:
        raise ValueError(f"median window must be odd, got {window}")
    bits = np.asarray(bits, dtype=np.int64)
    if window == 1 or bits.size == 0:
        return bits.copy()
    half = window // 2
    csum = np.concatenate([[0], np.cumsum(bits)])
    n = bits.size
    lo = np.maximum(np.arange(n) - half, 0)
    hi = np.minimum(np.arange(n) + half + 1, n)
    ones = csum[hi] - csum[lo]
    return (2 * ones > hi - lo).astype(np.int64)


def frames_to_events(bits, frame_duration):
    """Maximal runs of 1s as (onset, offset) second pairs.

    A run over frames [i, j] becomes (i * d, (j + 1) * d).
    """
    if frame_duration <= 0:
        raise ValueError(f"frame_duration must be > 0, got {frame_duration}")
    bits = np.asarray(bits, dtype=np.int64)
    edges = np.flatnonzero(np.diff(np.concatenate([[0], bits, [0]])))
    events = []
    for start, stop in zip(edges[::2], edges[1::2]):
        events.append((start * frame_duration, stop * frame_duration))
    return events


def events_to_frames(events, frame_duration, n_frames):
    """Rasterize (onset, offset) pairs onto a frame grid.

    Frame k is active iff its center (k + 0.5) * d lies in [onset,
    offset); the inverse of frames_to_events on frame-aligned events.
    """
    bits = np.zeros(n_frames, dtype=np.int64)
    centers = (np.arange(n_frames) + 0.5) * frame_duration
    for onset, offset in events:
        bits |= (centers >= onset) & (centers < offset)
    return bits


def _as_params(model):
    if isinstance(model, (str, bytes)) or hasattr(model, "__fspath__"):
        return load_checkpoint(model)
    return model


def _batched_probs(params, features, clip_ids):
    """Frame and clip probabilities per clip id (grouped by shape)."""
    frame, clip = {}, {}
    by_shape = {}
    for cid in clip_ids:
        by_shape.setdefault(features[cid].shape, []).append(cid)
    for ids in by_shape.values():
        stacked = np.stack([features[cid] for cid in ids])
        with nk.no_grad():
            f, c = forward_graph(params, stacked)
        for k, cid in enumerate(ids):
            frame[cid] = f.data[k]
            clip[cid] = c.data[k]
    return frame, clip


def generate_upw(model, clips, clip_threshold, features, class_names):
    """Clip-level pseudo tags: class c is tagged iff clip_prob[c] >= threshold.

    Args:
        model: CrnnParams or checkpoint path.
        clips: iterable of clip ids to label.
        features: {clip_id: [T, F] array}.

    Returns:
        {clip_id: set of tag names}
    """
    params = _as_params(model)
    ids = list(clips)
    _, clip_probs = _batched_probs(params, features, ids)
    out = {}
    for cid in ids:
        probs = clip_probs[cid]
        out[cid] = {class_names[c] for c in range(len(class_names))
                    if probs[c] >= clip_threshold}
    return out


def predict_events(params, features, clip_ids, class_names,
                   frame_threshold, median_window, frame_duration):
    """Thresholded, median-filtered frame decisions as per-class events."""
    frame_probs, _ = _batched_probs(params, features, clip_ids)
    out = {}
    for cid in clip_ids:
        probs = frame_probs[cid]
        events = []
        for c, name in enumerate(class_names):
            bits = median_filter((probs[:, c] >= frame_threshold).astype(np.int64),
                                 median_window)
            for onset, offset in frames_to_events(bits, frame_duration):
                events.append(dataio.EventLabel(onset=onset, offset=offset, class_name=name))
        out[cid] = events
    return out


def generate_strong(model, clips, frame_threshold, median_window, frame_duration,
                    features, class_names, weak_gate=None):
    """Frame-level pseudo events, optionally gated by known weak tags.

    With ``weak_gate`` (WPS mode), classes outside a clip's real tag set
    are suppressed entirely.

    Returns:
        {clip_id: list of EventLabel}
    """
    params = _as_params(model)
    ids = list(clips)
    events = predict_events(params, features, ids, class_names,
                            frame_threshold, median_window, frame_duration)
    if weak_gate is None:
        return events
    gated = {}
    for cid in ids:
        allowed = weak_gate.get(cid, set())
        gated[cid] = [ev for ev in events[cid] if ev.class_name in allowed]
    return gated


def generate_pseudo_labels(model, dataset, plg_cfg, frame_duration, features,
                           kinds=("ups", "upw", "wps"), provenance=""):
    """All requested pseudo-label kinds for a dataset.

    UPS/UPW cover the unlabeled split, WPS the weak split. When gating
    is on, WPS events are restricted to the clip's real weak tags and
    UPS events to the checkpoint's own clip-level tag decisions
    (two-stage thresholding), which prunes most frame-level noise.
    """
    params = _as_params(model)
    out = PseudoLabelSet(provenance=provenance)
    unlabeled = dataset.ids_by_split("unlabeled")
    weak = dataset.ids_by_split("weak")
    if "upw" in kinds and unlabeled:
        upw = generate_upw(params, unlabeled, plg_cfg.clip_threshold,
                           features, dataset.class_names)
        # a clip with no tags is dropped rather than asserted silent: the
        # checkpoint's misses should not become explicit negative labels
        out.upw = {cid: tags for cid, tags in upw.items() if tags}
    if "ups" in kinds and unlabeled:
        ups = generate_strong(params, unlabeled, plg_cfg.frame_threshold,
                              plg_cfg.median_window, frame_duration,
                              features, dataset.class_names)
        out.ups = {cid: evs for cid, evs in ups.items() if evs}
    if "wps" in kinds and weak:
        gate = dataset.weak_labels if plg_cfg.gate_strong_by_weak else None
        wps = generate_strong(params, weak, plg_cfg.frame_threshold,
                              plg_cfg.median_window, frame_duration,
                              features, dataset.class_names, weak_gate=gate)
        out.wps = {cid: evs for cid, evs in wps.items() if evs}
    return out


def save_pseudo_labels(out_dir, pls):
    """Write ups/wps as strong-label TSV and upw as weak-label TSV.

    Each file starts with a provenance comment naming the checkpoint.
    """
    header = f"# plg-checkpoint: {pls.provenance}"
    os.makedirs(out_dir, exist_ok=True)
    if pls.ups:
        dataio.save_strong(os.path.join(out_dir, "ups.tsv"), pls.ups, header=header)
    if pls.wps:
        dataio.save_strong(os.path.join(out_dir, "wps.tsv"), pls.wps, header=header)
    if pls.upw:
        dataio.save_weak(os.path.join(out_dir, "upw.tsv"), pls.upw, header=header)


def load_pseudo_labels(out_dir):
    """Read back pseudo-label files written by save_pseudo_labels."""
    pls = PseudoLabelSet()
    ups_path = os.path.join(out_dir, "ups.tsv")
    wps_path = os.path.join(out_dir, "wps.tsv")
    upw_path = os.path.join(out_dir, "upw.tsv")
    provenance = ""
    if os.path.exists(ups_path):
        pls.ups, provenance = dataio.load_strong(ups_path, return_header=True)
    if os.path.exists(wps_path):
        pls.wps, provenance = dataio.load_strong(wps_path, return_header=True)
    if os.path.exists(upw_path):
        pls.upw, provenance = dataio.load_weak(upw_path, return_header=True)
    pls.provenance = provenance.replace("# plg-checkpoint: ", "", 1) if provenance else ""
    return pls
