"""Mean Teacher training loop.

One step: student forward, teacher forward on the same input plus
Gaussian noise (stop-gradient), Couple Learning objective, SGD-with-
momentum update of the student, then an EMA update of the teacher. The
consistency weight follows a sigmoid-shaped ramp over the first part of
training. Runs are bit-reproducible from (config, dataset, seed).
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import dataio, evalkit, losses, plg
from . import numkit as nk
from .crnn import CrnnParams, forward_graph, init_params
from .features import log_mel
from .losses import ClipTarget, LossBreakdown


class TrainingAbort(RuntimeError):
    """Raised when a step produces a non-finite loss."""


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters.

    ``ramp_len`` is in steps; None means 10 epochs' worth, resolved at
    the start of train(). ``noise_std`` is the teacher-input noise; the
    student input is clean unless ``student_noise_std`` is raised.
    """

    epochs: int = 15
    batch_size: int = 16
    learning_rate: float = 0.02
    momentum: float = 0.9
    ema_alpha: float = 0.999
    ema_warmup: bool = True
    noise_std: float = 0.1
    student_noise_std: float = 0.0
    ramp_len: int | None = None
    max_consistency_weight: float = 2.0
    pseudo_weight: float = 1.0
    voi_mode: str = "random"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.ema_alpha <= 1.0:
            raise ValueError(f"ema_alpha must be in [0, 1], got {self.ema_alpha}")
        if self.noise_std < 0.0 or self.student_noise_std < 0.0:
            raise ValueError("noise stddevs must be >= 0")
        if self.ramp_len is not None and self.ramp_len < 0:
            raise ValueError(f"ramp_len must be >= 0, got {self.ramp_len}")
        if self.voi_mode not in dataio.VOI_MODES:
            raise ValueError(f"voi_mode must be one of {sorted(dataio.VOI_MODES)}")


@dataclass
class MeanTeacherState:
    """Student weights, teacher EMA weights, step counter, momenta."""

    student: CrnnParams
    teacher: CrnnParams
    step: int = 0
    velocity: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: LossBreakdown
    val_eb_f1: float


def init_state(crnn_cfg, seed):
    student = init_params(crnn_cfg, seed)
    return MeanTeacherState(student=student, teacher=student.copy(requires_grad=False))


def ema_update(state, alpha):
    """Teacher <- alpha * teacher + (1 - alpha) * student, elementwise.

    Mutates the teacher tensors in place and returns the state.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    for name, s in state.student.tensors.items():
        t = state.teacher.tensors[name]
        if t.data.shape != s.data.shape:
            raise nk.ShapeError(f"student/teacher shape mismatch on {name}")
        t.data *= alpha
        t.data += (1.0 - alpha) * s.data
    return state


def ramp_up(step, ramp_len, max_w):
    """Sigmoid-shaped consistency ramp: max_w * exp(-5 (1 - s)^2).

    s = min(step / ramp_len, 1); ramp_len 0 means always max_w.
    """
    if ramp_len <= 0 or step >= ramp_len:
        return float(max_w)
    s = step / ramp_len
    return float(max_w) * math.exp(-5.0 * (1.0 - s) ** 2)


def train_step(state, batch, cfg, rng=None, ramp_len=None):
    """One optimization step over a (features, targets) batch.

    Args:
        state: MeanTeacherState, updated in place and returned.
        batch: ([B, T, F] feature array, list of ClipTarget).
        cfg: TrainConfig.
        rng: noise stream; defaults to one derived from (seed, step).
        ramp_len: resolved ramp length in steps (cfg.ramp_len or 0 when
            omitted).

    Returns:
        (state, LossBreakdown)
    """
    feats, targets = batch
    if len(targets) == 0:
        raise ValueError("train_step needs a non-empty batch")
    if rng is None:
        rng = np.random.default_rng([cfg.seed, state.step])
    if ramp_len is None:
        ramp_len = cfg.ramp_len or 0
    w = ramp_up(state.step, ramp_len, cfg.max_consistency_weight)

    s_frame, s_clip = forward_graph(state.student, feats, cfg.student_noise_std, rng)
    j1_real, j1_pseudo, n_real, n_pseudo = losses.classification_cost(
        s_frame, s_clip, targets, cfg.pseudo_weight)
    if w == 0.0:
        # consistency is switched off entirely: the teacher forward would
        # not influence the update, so it is skipped
        j2_strong, j2_weak = nk.Tensor(0.0), nk.Tensor(0.0)
        n_j2s = n_j2w = 0
    else:
        with nk.no_grad():
            t_frame, t_clip = forward_graph(state.teacher, feats, cfg.noise_std, rng)
        j2_strong, j2_weak = losses.consistency_cost(s_frame, s_clip, t_frame, t_clip)
        n_j2s, n_j2w = t_frame.size, t_clip.size

    total = losses.combine(j1_real, j1_pseudo, j2_strong, j2_weak, w)
    breakdown = losses.total_objective(
        j1_real.item(), j1_pseudo.item(), j2_strong.item(), j2_weak.item(), w,
        n_real_terms=n_real, n_pseudo_terms=n_pseudo,
        n_j2_strong_terms=n_j2s, n_j2_weak_terms=n_j2w)
    if not math.isfinite(breakdown.total):
        raise TrainingAbort(
            f"non-finite loss at step {state.step}: "
            f"j1_real={breakdown.j1_real} j1_pseudo={breakdown.j1_pseudo} "
            f"j2_strong={breakdown.j2_strong} j2_weak={breakdown.j2_weak}")

    names = state.student.names()
    grads = nk.GradTape(total).gradients(state.student.tensors[n] for n in names)
    for name, g in zip(names, grads):
        v = state.velocity.get(name)
        if v is None:
            v = np.zeros_like(g)
        v = cfg.momentum * v + g
        state.velocity[name] = v
        state.student.tensors[name].data -= cfg.learning_rate * v

    alpha = cfg.ema_alpha
    if cfg.ema_warmup:
        alpha = min(1.0 - 1.0 / (state.step + 1), alpha)
    ema_update(state, alpha)
    state.step += 1
    return state, breakdown


def featurize(dataset, feat_cfg):
    """Standardized log-mel frames for every clip, keyed by clip id."""
    return {cid: log_mel(clip.samples, feat_cfg).frames
            for cid, clip in dataset.clips.items()}


def _raster_cache(crnn_cfg, feat_cfg, n_frames):
    out_frames = crnn_cfg.output_frames(n_frames)
    out_duration = feat_cfg.frame_duration * crnn_cfg.time_pool()
    return out_frames, out_duration


def _targets_for(item, dataset, crnn_cfg, out_frames, out_duration, cache):
    key = (item.clip_id, item.provenance)
    hit = cache.get(key)
    if hit is not None:
        return hit
    strong = None
    if item.strong is not None:
        strong = np.zeros((out_frames, len(dataset.class_names)))
        index = {c: k for k, c in enumerate(dataset.class_names)}
        for ev in item.strong:
            bits = plg.events_to_frames([(ev.onset, ev.offset)], out_duration, out_frames)
            strong[:, index[ev.class_name]] = np.maximum(strong[:, index[ev.class_name]], bits)
    weak = None
    if item.weak is not None:
        weak = np.array([1.0 if c in item.weak else 0.0 for c in dataset.class_names])
    target = ClipTarget(clip_id=item.clip_id, strong=strong, weak=weak,
                        pseudo=item.provenance == "pseudo",
                        split=dataset.clips[item.clip_id].split)
    cache[key] = target
    return target


def validation_f1(params, dataset, features, feat_cfg, plg_cfg=None, collar=None):
    """Event-based macro F1 of the model on the validation split."""
    plg_cfg = plg_cfg or plg.PlgConfig()
    collar = collar or evalkit.CollarParams()
    val_ids = dataset.ids_by_split("validation")
    if not val_ids:
        return float("nan")
    n_frames = features[val_ids[0]].shape[0]
    _, out_duration = _raster_cache(params.cfg, feat_cfg, n_frames)
    est = plg.predict_events(params, features, val_ids, dataset.class_names,
                             plg_cfg.frame_threshold, plg_cfg.median_window, out_duration)
    ref = {cid: dataset.truth[cid] for cid in val_ids}
    return evalkit.eb_f1(ref, est, collar, dataset.class_names).macro_f1


def train(dataset, pseudo_labels, cfg, crnn_cfg, feat_cfg,
          features=None, plg_cfg=None, collar=None):
    """Full Mean Teacher / Couple Learning run.

    Args:
        dataset: dataio.Dataset; must contain at least one labeled clip.
        pseudo_labels: plg.PseudoLabelSet or None for the plain baseline.
        cfg: TrainConfig; cfg.seed fixes everything.
        crnn_cfg / feat_cfg: architecture and frontend configuration.
        features: optional precomputed {clip_id: [T, F]} cache.

    Returns:
        (final MeanTeacherState, list of EpochRecord)
    """
    train_ids = (dataset.ids_by_split("strong") + dataset.ids_by_split("weak")
                 + dataset.ids_by_split("unlabeled"))
    if not (dataset.strong_labels or dataset.weak_labels):
        raise ValueError("training needs at least one labeled clip")
    if not train_ids:
        raise ValueError("dataset has no training clips")
    if features is None:
        features = featurize(dataset, feat_cfg)

    state = init_state(crnn_cfg, cfg.seed)
    if cfg.epochs == 0:
        return state, []

    items_real, items_pseudo = dataio.build_items(dataset, pseudo_labels)
    n_items = len(items_real) + len(items_pseudo)
    steps_per_epoch = -(-n_items // cfg.batch_size)
    ramp_len = cfg.ramp_len if cfg.ramp_len is not None else 10 * steps_per_epoch

    root = np.random.SeedSequence(cfg.seed)
    noise_ss, compose_ss = root.spawn(2)
    noise_rng = np.random.default_rng(noise_ss)
    epoch_seeds = compose_ss.spawn(cfg.epochs)

    n_frames = features[train_ids[0]].shape[0]
    out_frames, out_duration = _raster_cache(crnn_cfg, feat_cfg, n_frames)
    target_cache = {}
    history = []
    for epoch in range(cfg.epochs):
        batches = dataio.compose_epoch(dataset, pseudo_labels, cfg.voi_mode,
                                       cfg.batch_size, seed=epoch_seeds[epoch])
        sums = np.zeros(6)
        counts = np.zeros(4, dtype=np.int64)
        for batch_items in batches:
            feats = np.stack([features[it.clip_id] for it in batch_items])
            targets = [_targets_for(it, dataset, crnn_cfg, out_frames, out_duration,
                                    target_cache) for it in batch_items]
            state, bd = train_step(state, (feats, targets), cfg,
                                   rng=noise_rng, ramp_len=ramp_len)
            sums += (bd.j1_real, bd.j1_pseudo, bd.j2_strong, bd.j2_weak,
                     bd.total, bd.consistency_weight)
            counts += (bd.n_real_terms, bd.n_pseudo_terms,
                       bd.n_j2_strong_terms, bd.n_j2_weak_terms)
        sums /= len(batches)
        val = validation_f1(state.student, dataset, features, feat_cfg, plg_cfg, collar)
        # epoch record: per-step means (total is the mean step total, not
        # recombined from the mean components, since w ramps within epochs)
        loss = LossBreakdown(
            j1_real=sums[0], j1_pseudo=sums[1], j2_strong=sums[2], j2_weak=sums[3],
            consistency_weight=sums[5], total=sums[4],
            n_real_terms=int(counts[0]), n_pseudo_terms=int(counts[1]),
            n_j2_strong_terms=int(counts[2]), n_j2_weak_terms=int(counts[3]))
        history.append(EpochRecord(epoch=epoch, loss=loss, val_eb_f1=val))
    return state, history


HISTORY_COLUMNS = ("epoch", "j1_real", "j1_pseudo", "j2_strong", "j2_weak",
                   "total", "val_eb_f1")


def write_history(path, history):
    """Per-epoch loss components and validation EB-F1 as CSV."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(HISTORY_COLUMNS)
        for rec in history:
            writer.writerow([rec.epoch, repr(rec.loss.j1_real), repr(rec.loss.j1_pseudo),
                             repr(rec.loss.j2_strong), repr(rec.loss.j2_weak),
                             repr(rec.loss.total), repr(rec.val_eb_f1)])
