"""Dataset model, label file formats, synthetic data, epoch composition.

Strong labels are DCASE-style TSV ("filename<TAB>onset<TAB>offset<TAB>
event_label", seconds with 3 decimals); weak labels are "filename<TAB>
comma,joined,tags". The synthetic generator builds band-limited tone and
chirp events over Gaussian background noise, split into strong / weak /
unlabeled / validation pools with the ground truth retained only where
the split exposes it (the full truth stays on the dataset object for
validation scoring and tests).
"""

import os
from dataclasses import dataclass, field

import numpy as np

from .features import read_wav, write_wav

VOI_MODES = {"RF", "PF", "random"}


class LabelFileError(ValueError):
    """Malformed label file; the message names the offending line."""


@dataclass(frozen=True)
class EventLabel:
    onset: float
    offset: float
    class_name: str

    def __post_init__(self):
        if not 0.0 <= self.onset < self.offset:
            raise ValueError(
                f"event needs 0 <= onset < offset, got ({self.onset}, {self.offset})")


@dataclass
class Clip:
    id: str
    samples: np.ndarray
    duration: float
    split: str

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError(f"clip {self.id}: duration must be > 0")


@dataclass
class Dataset:
    """Clips plus the labels each split exposes.

    ``truth`` holds generator ground truth for every clip; training code
    must only consume ``strong_labels`` / ``weak_labels``.
    """

    clips: dict
    class_names: list
    strong_labels: dict = field(default_factory=dict)
    weak_labels: dict = field(default_factory=dict)
    truth: dict = field(default_factory=dict)
    sample_rate: int = 0

    def ids_by_split(self, split):
        return [cid for cid, clip in self.clips.items() if clip.split == split]

    def subset(self, splits):
        """View with only the given splits (e.g. drop unlabeled clips)."""
        clips = {cid: c for cid, c in self.clips.items() if c.split in splits}
        return Dataset(
            clips=clips,
            class_names=self.class_names,
            strong_labels={cid: v for cid, v in self.strong_labels.items() if cid in clips},
            weak_labels={cid: v for cid, v in self.weak_labels.items() if cid in clips},
            truth={cid: v for cid, v in self.truth.items() if cid in clips},
            sample_rate=self.sample_rate)


# -- label file formats --------------------------------------------------

def save_strong(path, events_by_clip, header=None):
    """Strong-label TSV; onsets/offsets rounded to 3 decimals."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        if header:
            f.write(header.rstrip("\n") + "\n")
        for cid in sorted(events_by_clip):
            for ev in sorted(events_by_clip[cid], key=lambda e: (e.onset, e.offset, e.class_name)):
                f.write(f"{cid}\t{ev.onset:.3f}\t{ev.offset:.3f}\t{ev.class_name}\n")


def load_strong(path, return_header=False):
    """Parse a strong-label TSV into {clip_id: [EventLabel]}."""
    events, header = {}, ""
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                header = header or line
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise LabelFileError(
                    f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
            name, onset_s, offset_s, cls = parts
            try:
                onset, offset = float(onset_s), float(offset_s)
            except ValueError:
                raise LabelFileError(f"{path}:{lineno}: non-numeric onset/offset") from None
            if onset >= offset:
                raise LabelFileError(f"{path}:{lineno}: onset {onset} >= offset {offset}")
            events.setdefault(name, []).append(
                EventLabel(onset=onset, offset=offset, class_name=cls))
    return (events, header) if return_header else events


def save_weak(path, tags_by_clip, header=None):
    """Weak-label TSV with comma-joined, sorted tags."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        if header:
            f.write(header.rstrip("\n") + "\n")
        for cid in sorted(tags_by_clip):
            f.write(f"{cid}\t{','.join(sorted(tags_by_clip[cid]))}\n")


def load_weak(path, return_header=False):
    """Parse a weak-label TSV into {clip_id: set of tags}."""
    tags, header = {}, ""
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                header = header or line
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise LabelFileError(
                    f"{path}:{lineno}: expected 2 tab-separated fields, got {len(parts)}")
            name, tag_field = parts
            if name in tags:
                raise LabelFileError(f"{path}:{lineno}: duplicate filename {name!r}")
            tags[name] = set(t for t in tag_field.split(",") if t)
    return (tags, header) if return_header else tags


# -- synthetic dataset ----------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    """Desk-scale synthetic dataset layout and signal parameters."""

    n_strong: int = 40
    n_weak: int = 80
    n_unlabeled: int = 400
    n_validation: int = 60
    n_classes: int = 4
    clip_seconds: float = 2.0
    sample_rate: int = 8000
    events_per_clip: tuple = (1, 3)
    snr_db: tuple = (-3.0, 9.0)
    freq_jitter: float = 0.18
    labeled_freq_jitter: float = 0.05
    distractors_per_clip: tuple = (2, 6)
    distractor_seconds: tuple = (0.15, 0.35)
    seed: int = 0

    def __post_init__(self):
        if min(self.n_strong, self.n_weak, self.n_unlabeled, self.n_validation) < 0:
            raise ValueError("split counts must be >= 0")
        if self.n_classes < 2:
            raise ValueError(f"n_classes must be >= 2, got {self.n_classes}")
        if not 1 <= self.events_per_clip[0] <= self.events_per_clip[1] <= self.n_classes:
            raise ValueError(
                f"events_per_clip {self.events_per_clip} must fit in [1, n_classes]")


BACKGROUND_RMS = 0.05
RAMP_SECONDS = 0.02


def class_frequencies(n_classes, sample_rate):
    """Geometrically spaced center frequencies inside the usable band."""
    lo, hi = 0.06 * sample_rate, 0.42 * sample_rate
    return np.geomspace(lo, hi, n_classes)


def _event_wave(class_idx, freq, n, sample_rate, snr_db, rng):
    """One event: even classes are steady tones, odd ones linear chirps."""
    t = np.arange(n) / sample_rate
    if class_idx % 2 == 0:
        phase = 2.0 * np.pi * freq * t
    else:
        f0, f1 = 0.85 * freq, 1.15 * freq
        phase = 2.0 * np.pi * (f0 * t + 0.5 * (f1 - f0) / t[-1] * t * t) if n > 1 else 0.0
    amp = BACKGROUND_RMS * (10.0 ** (snr_db / 20.0)) * np.sqrt(2.0)
    wave = amp * np.sin(phase + rng.uniform(0.0, 2.0 * np.pi))
    ramp = min(int(RAMP_SECONDS * sample_rate), n // 2)
    if ramp > 0:
        env = 0.5 * (1.0 - np.cos(np.pi * np.arange(ramp) / ramp))
        wave[:ramp] *= env
        wave[-ramp:] *= env[::-1]
    return wave


def synth_dataset(cfg):
    """Generate clips for every split, fully determined by cfg.seed."""
    rng = np.random.default_rng(cfg.seed)
    class_names = [f"class{i}" for i in range(cfg.n_classes)]
    freqs = class_frequencies(cfg.n_classes, cfg.sample_rate)
    n_samples = int(round(cfg.clip_seconds * cfg.sample_rate))

    clips, strong, weak, truth = {}, {}, {}, {}
    layout = (("strong", cfg.n_strong), ("weak", cfg.n_weak),
              ("unlabeled", cfg.n_unlabeled), ("validation", cfg.n_validation))
    for split, count in layout:
        for k in range(count):
            cid = f"{split}_{k:04d}.wav"
            samples = rng.normal(0.0, BACKGROUND_RMS, n_samples)
            n_events = int(rng.integers(cfg.events_per_clip[0], cfg.events_per_clip[1] + 1))
            classes = rng.choice(cfg.n_classes, size=n_events, replace=False)
            # the labeled pools draw from a narrow slice of the within-class
            # frequency spread; unlabeled and validation cover the full range
            jitter = cfg.labeled_freq_jitter if split in ("strong", "weak") else cfg.freq_jitter
            events = []
            for c in classes:
                dur = rng.uniform(0.15, 0.45) * cfg.clip_seconds
                onset = rng.uniform(0.0, cfg.clip_seconds - dur)
                snr = rng.uniform(cfg.snr_db[0], cfg.snr_db[1])
                freq = freqs[c] * rng.uniform(1.0 - jitter, 1.0 + jitter)
                i0 = int(round(onset * cfg.sample_rate))
                i1 = min(int(round((onset + dur) * cfg.sample_rate)), n_samples)
                samples[i0:i1] += _event_wave(int(c), freq, i1 - i0,
                                              cfg.sample_rate, snr, rng)
                events.append(EventLabel(onset=i0 / cfg.sample_rate,
                                         offset=i1 / cfg.sample_rate,
                                         class_name=class_names[c]))
            # unlabeled distractor blips: short tones anywhere in the band,
            # including on top of class frequencies; they bait false positives
            n_distractors = int(rng.integers(cfg.distractors_per_clip[0],
                                             cfg.distractors_per_clip[1] + 1))
            for _ in range(n_distractors):
                dur = rng.uniform(cfg.distractor_seconds[0], cfg.distractor_seconds[1])
                onset = rng.uniform(0.0, cfg.clip_seconds - dur)
                snr = rng.uniform(cfg.snr_db[0], cfg.snr_db[1])
                freq = rng.uniform(0.05 * cfg.sample_rate, 0.45 * cfg.sample_rate)
                i0 = int(round(onset * cfg.sample_rate))
                i1 = min(int(round((onset + dur) * cfg.sample_rate)), n_samples)
                samples[i0:i1] += _event_wave(int(rng.integers(0, 2)), freq, i1 - i0,
                                              cfg.sample_rate, snr, rng)
            events.sort(key=lambda e: (e.onset, e.class_name))
            clips[cid] = Clip(id=cid, samples=samples, duration=cfg.clip_seconds, split=split)
            truth[cid] = events
            if split == "strong":
                strong[cid] = events
            elif split == "weak":
                weak[cid] = {ev.class_name for ev in events}
    return Dataset(clips=clips, class_names=class_names, strong_labels=strong,
                   weak_labels=weak, truth=truth, sample_rate=cfg.sample_rate)


# -- epoch composition -----------------------------------------------------

@dataclass(frozen=True)
class EpochItem:
    """One batch member: a clip plus the targets this pass trains on."""

    clip_id: str
    provenance: str  # "real" | "pseudo"
    strong: tuple = None   # tuple of EventLabel or None
    weak: frozenset = None  # frozenset of tags or None


def build_items(dataset, pseudo=None):
    """Real and pseudo item pools for one epoch.

    Real items: strong clips with their events, weak clips with their
    tags, and unlabeled clips (bare, consistency only) that no pseudo
    label covers. Pseudo items: unlabeled clips carrying UPS/UPW targets
    (these replace the bare appearance of the same clip) and one extra
    item per weak clip with a WPS target.
    """
    items_real, items_pseudo = [], []
    for cid in sorted(dataset.ids_by_split("strong")):
        items_real.append(EpochItem(cid, "real", strong=tuple(dataset.strong_labels[cid])))
    for cid in sorted(dataset.ids_by_split("weak")):
        items_real.append(EpochItem(cid, "real", weak=frozenset(dataset.weak_labels[cid])))
    covered = set()
    if pseudo is not None:
        covered = set(pseudo.ups) | set(pseudo.upw)
        for cid in sorted(covered):
            strong = tuple(pseudo.ups[cid]) if cid in pseudo.ups else None
            weak = frozenset(pseudo.upw[cid]) if cid in pseudo.upw else None
            items_pseudo.append(EpochItem(cid, "pseudo", strong=strong, weak=weak))
        for cid in sorted(pseudo.wps):
            items_pseudo.append(EpochItem(cid, "pseudo", strong=tuple(pseudo.wps[cid])))
    for cid in sorted(dataset.ids_by_split("unlabeled")):
        if cid not in covered:
            items_real.append(EpochItem(cid, "real"))
    return items_real, items_pseudo


def compose_epoch(dataset, pseudo, mode, batch_size, seed):
    """Ordered batches for one epoch under a VOI ordering mode.

    RF: shuffled real items then shuffled pseudo items; PF: the reverse;
    random: one shuffle of the union. Items are canonically sorted by
    (clip id, provenance) before shuffling so streams are reproducible.

    Returns:
        List of batches (lists of EpochItem); the last batch may be short.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if mode not in VOI_MODES:
        raise ValueError(f"unknown VOI mode {mode!r}; expected one of {sorted(VOI_MODES)}")
    items_real, items_pseudo = build_items(dataset, pseudo)
    if not items_real and not items_pseudo:
        raise ValueError("compose_epoch: no items to schedule")
    rng = np.random.default_rng(seed)

    def shuffled(items):
        return [items[i] for i in rng.permutation(len(items))]

    if mode == "RF":
        order = shuffled(items_real) + shuffled(items_pseudo)
    elif mode == "PF":
        order = shuffled(items_pseudo) + shuffled(items_real)
    else:
        union = sorted(items_real + items_pseudo,
                       key=lambda it: (it.clip_id, it.provenance))
        order = shuffled(union)
    return [order[i:i + batch_size] for i in range(0, len(order), batch_size)]


# -- dataset directory layout ----------------------------------------------

DATASET_FILES = ("strong.tsv", "weak.tsv", "validation.tsv", "unlabeled.lst", "classes.txt")


def save_dataset(out_dir, dataset):
    """Materialize a dataset as WAVs + label files (see DATASET_FILES)."""
    audio_dir = os.path.join(out_dir, "audio")
    os.makedirs(audio_dir, exist_ok=True)
    for cid, clip in dataset.clips.items():
        write_wav(os.path.join(audio_dir, cid), clip.samples, dataset.sample_rate)
    save_strong(os.path.join(out_dir, "strong.tsv"), dataset.strong_labels)
    save_weak(os.path.join(out_dir, "weak.tsv"), dataset.weak_labels)
    save_strong(os.path.join(out_dir, "validation.tsv"),
                {cid: dataset.truth[cid] for cid in dataset.ids_by_split("validation")})
    with open(os.path.join(out_dir, "unlabeled.lst"), "w", encoding="utf-8") as f:
        for cid in sorted(dataset.ids_by_split("unlabeled")):
            f.write(cid + "\n")
    with open(os.path.join(out_dir, "classes.txt"), "w", encoding="utf-8") as f:
        for name in dataset.class_names:
            f.write(name + "\n")


def load_dataset(root):
    """Load a dataset directory written by save_dataset."""
    def read_lines(name):
        with open(os.path.join(root, name), "r", encoding="utf-8") as f:
            return [line.strip() for line in f if line.strip()]

    class_names = read_lines("classes.txt")
    strong = load_strong(os.path.join(root, "strong.tsv"))
    weak = load_weak(os.path.join(root, "weak.tsv"))
    val_truth = load_strong(os.path.join(root, "validation.tsv"))
    unlabeled = read_lines("unlabeled.lst")

    split_of = {}
    for cid in strong:
        split_of[cid] = "strong"
    for cid in weak:
        split_of[cid] = "weak"
    for cid in unlabeled:
        split_of[cid] = "unlabeled"
    for cid in val_truth:
        split_of[cid] = "validation"

    clips, sample_rate = {}, 0
    for cid in sorted(split_of):
        samples, sample_rate = read_wav(os.path.join(root, "audio", cid))
        clips[cid] = Clip(id=cid, samples=samples,
                          duration=samples.size / sample_rate, split=split_of[cid])
    truth = dict(strong)
    truth.update(val_truth)
    return Dataset(clips=clips, class_names=class_names, strong_labels=strong,
                   weak_labels=weak, truth=truth, sample_rate=sample_rate)
