"""Calibration sweep helper (workspace tool, not part of the package)."""
import sys
import time

import numpy as np

from couple_sed import crnn, dataio, evalkit, features as F, plg, teacher

EPOCHS = int(sys.argv[1])
SEEDS = [int(s) for s in sys.argv[2].split(",")]
PWS = [float(s) for s in sys.argv[3].split(",")] if len(sys.argv) > 3 else [1.0]

synth_cfg = dataio.SynthConfig(seed=7)
ds = dataio.synth_dataset(synth_cfg)
feat_cfg = F.FeatureConfig.desk()
feats = teacher.featurize(ds, feat_cfg)
crnn_cfg = crnn.CrnnConfig.desk(n_classes=4, n_mels=32)
plg_cfg = plg.PlgConfig(median_window=3)
fd_out = feat_cfg.frame_duration * crnn_cfg.time_pool()


def score(hist):
    return float(np.median([h.val_eb_f1 for h in hist[-5:]]))


def run(dataset, seed, maxw, lr=0.15, pseudo=None, bs=24, noise=0.3, pw=1.0):
    cfg = teacher.TrainConfig(epochs=EPOCHS, batch_size=bs, learning_rate=lr,
                              momentum=0.9, ema_alpha=0.99, noise_std=noise,
                              ramp_len=None, max_consistency_weight=maxw, seed=seed,
                              pseudo_weight=pw)
    st, hist = teacher.train(dataset, pseudo, cfg, crnn_cfg, feat_cfg,
                             features=feats, plg_cfg=plg_cfg)
    return st, score(hist)


sup_ds = ds.subset({"strong", "weak", "validation"})
for seed in SEEDS:
    t0 = time.time()
    _, sup = run(sup_ds, seed, 0.0)
    mt_state, mt = run(ds, seed, 2.0)
    pseudo = plg.generate_pseudo_labels(mt_state.student, ds, plg_cfg, fd_out, feats)
    cols = []
    for pw in PWS:
        _, both = run(ds, seed, 2.0, pseudo=pseudo, pw=pw)
        cols.append("mt+plg(pw%g) %.3f" % (pw, both))
    print("ep%d seed %d (%.0fs): sup %.3f  mt %.3f  %s"
          % (EPOCHS, seed, time.time() - t0, sup, mt, "  ".join(cols)), flush=True)
