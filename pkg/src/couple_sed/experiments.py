"""Desk-scale experiment orchestration.

Reproduces the ablation structure of the reference tables and the
variable-order-input comparison on the synthetic dataset: a supervised
CRNN, a Mean Teacher run whose trained model then serves as the
pseudo-label generator, and Couple Learning runs over selected
pseudo-label kinds and epoch orderings. Seeds run as independent jobs
(optionally in parallel processes); each job is bit-reproducible.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import plg as plg_mod
from . import teacher as teacher_mod
from .crnn import CrnnConfig
from .dataio import SynthConfig, synth_dataset
from .evalkit import CollarParams
from .features import FeatureConfig
from .plg import PlgConfig
from .reports import AblationReport, VariantResult
from .teacher import TrainConfig

TABLE1_VARIANTS = ("CRNN", "CRNN+MT", "CRNN+PLG", "CRNN+MT+PLG")
TABLE2_VARIANTS = ("baseline", "+UPW", "+WPS", "+UPS", "+UPS+WPS", "+UPS+WPS+UPW")
TABLE2_KINDS = {
    "baseline": (),
    "+UPW": ("upw",),
    "+WPS": ("wps",),
    "+UPS": ("ups",),
    "+UPS+WPS": ("ups", "wps"),
    "+UPS+WPS+UPW": ("ups", "wps", "upw"),
}
VOI_VARIANTS = ("RF", "PF", "random")

TABLE1_REFERENCE = "paper-scale reference (DCASE2020, non-reproducible at desk scale): " \
    "CRNN 28.14, CRNN+MT 32.39, CRNN+PLG 30.04, CRNN+MT+PLG 33.93"
TABLE2_REFERENCE = "paper-scale reference (DCASE2020, non-reproducible at desk scale): " \
    "baseline 32.39, +UPW 30.06, +WPS 32.15, +UPS 32.42, +UPS+WPS 33.52, +UPS+WPS+UPW 33.93"
VOI_REFERENCE = "paper-scale finding: random ordering performed best for all PLG models"

SCORE_TAIL_EPOCHS = 5


@dataclass(frozen=True)
class DeskExperiment:
    """Bundle of every configuration a desk experiment needs."""

    synth: SynthConfig
    features: FeatureConfig
    crnn: CrnnConfig
    train: TrainConfig
    plg: PlgConfig
    collar: CollarParams


def desk_experiment(data_seed=7):
    """Calibrated desk-scale defaults for the trend experiments."""
    return DeskExperiment(
        synth=SynthConfig(seed=data_seed),
        features=FeatureConfig.desk(),
        crnn=CrnnConfig.desk(n_classes=4, n_mels=32),
        train=TrainConfig(epochs=10, batch_size=24, learning_rate=0.15,
                          momentum=0.9, ema_alpha=0.99, noise_std=0.3,
                          ramp_len=None, max_consistency_weight=2.0,
                          pseudo_weight=1.0, voi_mode="random"),
        plg=PlgConfig(median_window=3),
        collar=CollarParams())


def run_score(history):
    """One scalar per run: median validation EB-F1 over the last epochs

    (plateau smoothing; fewer epochs than the tail just use them all).
    """
    tail = [rec.val_eb_f1 for rec in history[-SCORE_TAIL_EPOCHS:]]
    return float(np.median(tail))


def _train_run(exp, dataset, pseudo, seed, max_w, voi_mode="random", features=None):
    cfg = replace(exp.train, seed=seed, max_consistency_weight=max_w, voi_mode=voi_mode)
    state, history = teacher_mod.train(dataset, pseudo, cfg, exp.crnn, exp.features,
                                       features=features, plg_cfg=exp.plg,
                                       collar=exp.collar)
    return state, history


def _prepare(exp):
    dataset = synth_dataset(exp.synth)
    features = teacher_mod.featurize(dataset, exp.features)
    supervised = dataset.subset({"strong", "weak", "validation"})
    out_duration = exp.features.frame_duration * exp.crnn.time_pool()
    return dataset, supervised, features, out_duration


def _seed_job_table1(exp, seed):
    dataset, supervised, features, out_duration = _prepare(exp)
    scores = {}
    _, hist = _train_run(exp, supervised, None, seed, 0.0, features=features)
    scores["CRNN"] = run_score(hist)
    mt_state, hist = _train_run(exp, dataset, None, seed,
                                exp.train.max_consistency_weight, features=features)
    scores["CRNN+MT"] = run_score(hist)
    pseudo = plg_mod.generate_pseudo_labels(mt_state.student, dataset, exp.plg,
                                            out_duration, features, provenance="mt-crnn")
    _, hist = _train_run(exp, dataset, pseudo, seed, 0.0, features=features)
    scores["CRNN+PLG"] = run_score(hist)
    _, hist = _train_run(exp, dataset, pseudo, seed,
                         exp.train.max_consistency_weight, features=features)
    scores["CRNN+MT+PLG"] = run_score(hist)
    return scores


def _seed_job_table2(exp, seed):
    dataset, _, features, out_duration = _prepare(exp)
    scores = {}
    mt_state, hist = _train_run(exp, dataset, None, seed,
                                exp.train.max_consistency_weight, features=features)
    scores["baseline"] = run_score(hist)
    pseudo_all = plg_mod.generate_pseudo_labels(mt_state.student, dataset, exp.plg,
                                                out_duration, features, provenance="mt-crnn")
    for variant in TABLE2_VARIANTS[1:]:
        kinds = TABLE2_KINDS[variant]
        pseudo = plg_mod.PseudoLabelSet(
            upw=pseudo_all.upw if "upw" in kinds else {},
            ups=pseudo_all.ups if "ups" in kinds else {},
            wps=pseudo_all.wps if "wps" in kinds else {},
            provenance=pseudo_all.provenance)
        _, hist = _train_run(exp, dataset, pseudo, seed,
                             exp.train.max_consistency_weight, features=features)
        scores[variant] = run_score(hist)
    return scores


def _seed_job_voi(exp, seed):
    dataset, _, features, out_duration = _prepare(exp)
    mt_state, _ = _train_run(exp, dataset, None, seed,
                             exp.train.max_consistency_weight, features=features)
    pseudo = plg_mod.generate_pseudo_labels(mt_state.student, dataset, exp.plg,
                                            out_duration, features, provenance="mt-crnn")
    scores = {}
    for mode in VOI_VARIANTS:
        _, hist = _train_run(exp, dataset, pseudo, seed,
                             exp.train.max_consistency_weight, voi_mode=mode,
                             features=features)
        scores[mode] = run_score(hist)
    return scores


_JOBS = {"ablation1": (_seed_job_table1, TABLE1_VARIANTS, TABLE1_REFERENCE),
         "ablation2": (_seed_job_table2, TABLE2_VARIANTS, TABLE2_REFERENCE),
         "voi": (_seed_job_voi, VOI_VARIANTS, VOI_REFERENCE)}


def run_trend_experiment(kind, exp, seeds, workers=1):
    """Run one trend experiment over seeds; returns an AblationReport.

    Scores are EB-F1 percentages; rows keep the table's variant order.
    """
    job, variants, reference = _JOBS[kind]
    seeds = list(seeds)
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(seeds))) as pool:
            results = list(pool.map(job, [exp] * len(seeds), seeds))
    else:
        results = [job(exp, seed) for seed in seeds]
    rows = []
    for variant in variants:
        rows.append(VariantResult(variant, {seed: 100.0 * res[variant]
                                            for seed, res in zip(seeds, results)}))
    return AblationReport(rows, footer=[reference])
