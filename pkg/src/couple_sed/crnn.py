"""Student/teacher network: GLU conv stack, bidirectional GRU, attention pooling.

Each conv layer emits twice its nominal filter count so the GLU split
(value half gated by sigmoid of the other half) restores it; pooling is
max with -inf edge padding. Clip-level probabilities come from a
softmax-over-time attention branch multiplied with a sigmoid branch.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import numkit as nk
from .numkit import Tensor


@dataclass(frozen=True)
class CrnnConfig:
    """Architecture hyperparameters.

    ``conv_filters`` are post-GLU channel counts; the stored kernels have
    twice as many output channels. ``n_mels`` is the input feature width.
    """

    conv_filters: tuple = (16, 32, 64, 128, 128, 128, 128)
    pool_sizes: tuple = ((2, 2), (2, 2), (1, 2), (1, 2), (1, 2), (1, 2), (1, 2))
    gru_layers: int = 2
    gru_hidden: int = 128
    n_classes: int = 10
    n_mels: int = 128
    kernel_size: int = 3
    dropout: float = 0.0

    def __post_init__(self):
        if len(self.conv_filters) != len(self.pool_sizes):
            raise ValueError(
                f"conv_filters ({len(self.conv_filters)}) and pool_sizes "
                f"({len(self.pool_sizes)}) must have the same length")
        if self.n_classes < 1:
            raise ValueError(f"n_classes must be >= 1, got {self.n_classes}")

    @classmethod
    def desk(cls, n_classes=4, n_mels=32):
        """Small configuration used by tests and the synthetic experiments."""
        return cls(conv_filters=(8, 16), pool_sizes=((2, 2), (2, 2)),
                   gru_layers=1, gru_hidden=16, n_classes=n_classes, n_mels=n_mels)

    def output_frames(self, n_frames):
        """Frame count after the time-pooling stack (ceil at each layer)."""
        t = n_frames
        for pt, _ in self.pool_sizes:
            t = -(-t // pt)
        return t

    def time_pool(self):
        """Total time subsampling factor of the pooling stack."""
        p = 1
        for pt, _ in self.pool_sizes:
            p *= pt
        return p

    def output_bins(self):
        f = self.n_mels
        for _, pf in self.pool_sizes:
            f = -(-f // pf)
        return f

    def gru_input_dim(self):
        return self.conv_filters[-1] * self.output_bins()


@dataclass(frozen=True)
class Predictions:
    """Per-frame and per-clip class probabilities, all in [0, 1]."""

    frame_probs: np.ndarray
    clip_probs: np.ndarray


@dataclass
class AttentionParams:
    wa: Tensor
    ba: Tensor
    wb: Tensor
    bb: Tensor


class CrnnParams:
    """All trainable weights, as an ordered name -> Tensor mapping."""

    def __init__(self, cfg, tensors):
        self.cfg = cfg
        self.tensors = dict(tensors)

    def __getitem__(self, name):
        return self.tensors[name]

    def names(self):
        return list(self.tensors.keys())

    def n_params(self):
        return sum(t.size for t in self.tensors.values())

    def copy(self, requires_grad=None):
        out = {}
        for name, t in self.tensors.items():
            rg = t.requires_grad if requires_grad is None else requires_grad
            out[name] = Tensor(t.data.copy(), requires_grad=rg)
        return CrnnParams(self.cfg, out)

    def gru(self, layer):
        def direction(tag):
            g = lambda k: self.tensors[f"gru{layer}.{tag}.{k}"]
            return nk.GruDirection(wz=g("wz"), wr=g("wr"), wh=g("wh"),
                                   uz=g("uz"), ur=g("ur"), uh=g("uh"),
                                   bz=g("bz"), br=g("br"), bh=g("bh"))
        return nk.GruParams(fwd=direction("fwd"), bwd=direction("bwd"))

    def attention(self):
        return AttentionParams(wa=self.tensors["attn_a.w"], ba=self.tensors["attn_a.b"],
                               wb=self.tensors["attn_b.w"], bb=self.tensors["attn_b.b"])


def init_params(cfg, seed):
    """Seeded uniform fan-in initialization of every weight and bias."""
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)

    tensors = {}
    k = cfg.kernel_size
    c_in = 1
    for i, filters in enumerate(cfg.conv_filters):
        c_out = 2 * filters  # GLU halves the channels back to `filters`
        tensors[f"conv{i}.kernel"] = uniform((c_out, c_in, k, k), c_in * k * k)
        tensors[f"conv{i}.bias"] = uniform((c_out,), c_in * k * k)
        c_in = filters

    d = cfg.gru_input_dim()
    h = cfg.gru_hidden
    for layer in range(cfg.gru_layers):
        for tag in ("fwd", "bwd"):
            for name in ("wz", "wr", "wh"):
                tensors[f"gru{layer}.{tag}.{name}"] = uniform((d, h), d)
            for name in ("uz", "ur", "uh"):
                tensors[f"gru{layer}.{tag}.{name}"] = uniform((h, h), h)
            for name in ("bz", "br", "bh"):
                tensors[f"gru{layer}.{tag}.{name}"] = uniform((h,), h)
        d = 2 * h

    for head in ("frame", "attn_a", "attn_b"):
        tensors[f"{head}.w"] = uniform((2 * h, cfg.n_classes), 2 * h)
        tensors[f"{head}.b"] = uniform((cfg.n_classes,), 2 * h)
    return CrnnParams(cfg, tensors)


def attention_pool(frame_feats, attn):
    """Clip probabilities from softmax(linear) * sigmoid(linear), summed over time.

    Args:
        frame_feats: [T, D] or [B, T, D] frame features (Tensor or array).
        attn: AttentionParams.

    Returns:
        Tensor of clip probabilities, [n_classes] or [B, n_classes].
    """
    x = nk.as_tensor(frame_feats)
    squeeze = x.ndim == 2
    if squeeze:
        x = nk.reshape(x, (1,) + x.data.shape)
    if x.data.shape[1] < 1:
        raise nk.ShapeError("attention_pool needs at least one frame")
    weights = nk.softmax(nk.add(nk.matmul(x, attn.wa), attn.ba), axis=1)
    values = nk.sigmoid(nk.add(nk.matmul(x, attn.wb), attn.bb))
    clip = nk.tsum(nk.mul(weights, values), axis=1)
    return nk.reshape(clip, clip.data.shape[1:]) if squeeze else clip


def forward_graph(params, feats, noise_std=0.0, rng=None):
    """Batched forward pass returning graph tensors.

    Args:
        params: CrnnParams.
        feats: [B, T, F] feature array (or Tensor).
        noise_std: stddev of i.i.d. Gaussian noise added to the input.
        rng: numpy Generator; required when noise_std > 0 or dropout > 0.

    Returns:
        (frame_probs Tensor [B, T', C], clip_probs Tensor [B, C])
    """
    cfg = params.cfg
    data = feats.data if isinstance(feats, Tensor) else np.asarray(feats, dtype=np.float64)
    if data.ndim != 3:
        raise nk.ShapeError(f"expected [B, T, F] features, got shape {data.shape}")
    if data.shape[2] != cfg.n_mels:
        raise nk.ShapeError(f"feature width {data.shape[2]} != configured n_mels {cfg.n_mels}")
    if noise_std > 0.0:
        if rng is None:
            raise ValueError("noise_std > 0 requires an rng")
        data = data + rng.normal(0.0, noise_std, size=data.shape)
    x = Tensor(data[:, None, :, :])
    for i in range(len(cfg.conv_filters)):
        x = nk.conv2d(x, params[f"conv{i}.kernel"])
        x = nk.add(x, nk.reshape(params[f"conv{i}.bias"], (1, -1, 1, 1)))
        x = nk.glu(x, axis=1)
        x = nk.max_pool2d(x, cfg.pool_sizes[i])
    # [B, C, T', F'] -> [B, T', C*F']
    x = nk.transpose(x, (0, 2, 1, 3))
    x = nk.reshape(x, (x.data.shape[0], x.data.shape[1], -1))
    for layer in range(cfg.gru_layers):
        x = nk.bigru_layer(x, params.gru(layer))
        if cfg.dropout > 0.0 and rng is not None:
            keep = 1.0 - cfg.dropout
            mask = rng.random(size=x.data.shape) < keep
            x = nk.mul(x, mask.astype(np.float64) / keep)
    frame = nk.sigmoid(nk.add(nk.matmul(x, params["frame.w"]), params["frame.b"]))
    clip = attention_pool(x, params.attention())
    return frame, clip


def forward(params, features, noise_std=0.0, rng_seed=None):
    """Single-clip inference; deterministic when noise_std is 0.

    Args:
        features: FeatureMatrix (or bare [T, F] array).
        rng_seed: seed for the noise/dropout stream; ignored when unused.

    Returns:
        Predictions with frame_probs [T', n_classes] and clip_probs
        [n_classes].
    """
    frames = getattr(features, "frames", features)
    rng = None
    if noise_std > 0.0 or params.cfg.dropout > 0.0:
        rng = np.random.default_rng(rng_seed)
    with nk.no_grad():
        frame, clip = forward_graph(params, np.asarray(frames)[None], noise_std, rng)
    return Predictions(frame_probs=frame.data[0], clip_probs=clip.data[0])


def save_checkpoint(path, params):
    """Serialize config + parameter tensors; round-trips exactly."""
    cfg = params.cfg
    header = {
        "conv_filters": list(cfg.conv_filters),
        "pool_sizes": [list(p) for p in cfg.pool_sizes],
        "gru_layers": cfg.gru_layers,
        "gru_hidden": cfg.gru_hidden,
        "n_classes": cfg.n_classes,
        "n_mels": cfg.n_mels,
        "kernel_size": cfg.kernel_size,
        "dropout": cfg.dropout,
    }
    arrays = {f"param/{k}": v.data for k, v in params.tensors.items()}
    with open(path, "wb") as f:  # file handle keeps the exact path (no .npz suffixing)
        np.savez(f, __config__=np.array(json.dumps(header)), **arrays)


def load_checkpoint(path, trainable=False):
    """Load a checkpoint written by save_checkpoint.

    Returns:
        CrnnParams (tensors trainable only when requested).
    """
    try:
        with np.load(path) as z:
            header = json.loads(str(z["__config__"].item()))
            arrays = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
    except (OSError, KeyError, ValueError) as e:
        raise ValueError(f"unreadable checkpoint {path}: {e}") from None
    cfg = CrnnConfig(conv_filters=tuple(header["conv_filters"]),
                     pool_sizes=tuple(tuple(p) for p in header["pool_sizes"]),
                     gru_layers=header["gru_layers"], gru_hidden=header["gru_hidden"],
                     n_classes=header["n_classes"], n_mels=header["n_mels"],
                     kernel_size=header["kernel_size"], dropout=header["dropout"])
    tensors = {}
    for name in arrays:
        tensors[name] = Tensor(arrays[name], requires_grad=trainable)
    ordered = init_params(cfg, seed=0).names()
    if sorted(tensors) != sorted(ordered):
        raise ValueError(f"checkpoint {path} does not match its architecture header")
    return CrnnParams(cfg, {name: tensors[name] for name in ordered})
