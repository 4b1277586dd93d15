"""Miniature frame-causal denoiser with hand-written reverse-mode gradients.

The network maps noisy per-frame latents plus a timestep composition to a
prediction of the clean latents: tokens are projected to d_model, each
frame's tokens receive that frame's learned timestep embedding, a stack of
residual attention + tanh-MLP blocks mixes information (attention is full
within a frame and strictly causal across frames), and an output projection
maps back to latent space, optionally clamped to [-x0_clamp, x0_clamp].

Everything runs in float64 and gradients are exact reverse-mode derivatives
of the mean-squared x0 loss, validated against central finite differences
by the verification module. Parameters live in a flat name -> array dict.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from stairdiff.lattice import TimestepComposition
from stairdiff.schedule import NoiseSchedule
from stairdiff.video import LatentVideo

__all__ = [
    "DenoiserConfig",
    "DenoiserParams",
    "init_params",
    "causal_mask",
    "forward",
    "forward_batch",
    "loss_and_grad",
    "loss_only",
    "save_checkpoint",
    "load_checkpoint",
]

DenoiserParams = dict[str, np.ndarray]

_MLP_RATIO = 4

CHECKPOINT_MAGIC = b"STAIRDIFF-CKPT1\n"  # 16 bytes


@dataclass(frozen=True)
class DenoiserConfig:
    frames: int
    tokens: int
    dim: int
    d_model: int = 32
    n_layers: int = 2
    n_heads: int = 2
    x0_clamp: float = 2.0  # 0 disables clamping

    def __post_init__(self):
        if min(self.frames, self.tokens, self.dim) < 1:
            raise ValueError("frames, tokens and dim must be positive")
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model={self.d_model} not divisible by n_heads={self.n_heads}"
            )
        if self.x0_clamp < 0:
            raise ValueError("x0_clamp must be non-negative")


def init_params(config: DenoiserConfig, T: int, rng: np.random.Generator) -> DenoiserParams:
    """Uniform init scaled by 1/sqrt(fan_in); zero biases and zero output
    projection, so a fresh model predicts exactly zero."""

    def uniform(rows, cols):
        bound = 1.0 / np.sqrt(rows)
        return rng.uniform(-bound, bound, size=(rows, cols))

    dm = config.d_model
    p: DenoiserParams = {
        "w_in": uniform(config.dim, dm),
        "b_in": np.zeros(dm),
        "temb": rng.uniform(-1.0, 1.0, size=(T + 1, dm)) / np.sqrt(dm),
        "w_out": np.zeros((dm, config.dim)),
        "b_out": np.zeros(config.dim),
    }
    hidden = _MLP_RATIO * dm
    for l in range(config.n_layers):
        p[f"layers.{l}.wq"] = uniform(dm, dm)
        p[f"layers.{l}.bq"] = np.zeros(dm)
        # no key bias: a shared key offset shifts every score of a query
        # equally and softmax cancels it, so the parameter would be inert
        p[f"layers.{l}.wk"] = uniform(dm, dm)
        p[f"layers.{l}.wv"] = uniform(dm, dm)
        p[f"layers.{l}.bv"] = np.zeros(dm)
        p[f"layers.{l}.wo"] = uniform(dm, dm)
        p[f"layers.{l}.bo"] = np.zeros(dm)
        p[f"layers.{l}.w1"] = uniform(dm, hidden)
        p[f"layers.{l}.b1"] = np.zeros(hidden)
        p[f"layers.{l}.w2"] = uniform(hidden, dm)
        p[f"layers.{l}.b2"] = np.zeros(dm)
    return p


def causal_mask(F: int, L: int) -> np.ndarray:
    """(F*L, F*L) boolean mask: query q may attend key k iff frame(k) <= frame(q)."""
    if F < 1 or L < 1:
        raise ValueError(f"need F >= 1 and L >= 1, got F={F}, L={L}")
    frame = np.repeat(np.arange(F), L)
    return frame[None, :] <= frame[:, None]


def _split_heads(x: np.ndarray, H: int) -> np.ndarray:
    B, S, dm = x.shape
    return x.reshape(B, S, H, dm // H).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    B, H, S, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, S, H * dh)


def forward_batch(
    params: DenoiserParams,
    config: DenoiserConfig,
    z: np.ndarray,
    t: np.ndarray,
    want_cache: bool = False,
):
    """Batched forward pass.

    z: (B, F, L, D) noisy latents; t: (B, F) integer timesteps indexing the
    embedding table. Returns (B, F, L, D) predictions, plus the activation
    cache when requested by the backward pass.
    """
    B, F, L, D = z.shape
    if (F, L, D) != (config.frames, config.tokens, config.dim):
        raise ValueError(
            f"input shape {(F, L, D)} does not match config "
            f"{(config.frames, config.tokens, config.dim)}"
        )
    n_emb = params["temb"].shape[0]
    if t.shape != (B, F) or t.min() < 0 or t.max() >= n_emb:
        raise ValueError(f"timesteps must be (B, F) ints in [0, {n_emb - 1}]")
    S = F * L
    H = config.n_heads
    dh = config.d_model // H
    mask = causal_mask(F, L)

    zf = z.reshape(B, S, D)
    h = zf @ params["w_in"] + params["b_in"]
    h = h + np.repeat(params["temb"][t], L, axis=1)

    cache = {"z": z, "t": t, "h0_in": zf, "mask": mask, "layers": []}
    for l in range(config.n_layers):
        pre = h
        q = h @ params[f"layers.{l}.wq"] + params[f"layers.{l}.bq"]
        k = h @ params[f"layers.{l}.wk"]
        v = h @ params[f"layers.{l}.wv"] + params[f"layers.{l}.bv"]
        qh, kh, vh = (_split_heads(x, H) for x in (q, k, v))
        scores = qh @ kh.transpose(0, 1, 3, 2) / np.sqrt(dh)
        scores = np.where(mask[None, None], scores, -np.inf)
        scores -= scores.max(axis=-1, keepdims=True)
        e = np.exp(scores)
        attn = e / e.sum(axis=-1, keepdims=True)
        ctx = _merge_heads(attn @ vh)
        h = h + ctx @ params[f"layers.{l}.wo"] + params[f"layers.{l}.bo"]
        mid = h
        m1 = h @ params[f"layers.{l}.w1"] + params[f"layers.{l}.b1"]
        a = np.tanh(m1)
        h = h + a @ params[f"layers.{l}.w2"] + params[f"layers.{l}.b2"]
        cache["layers"].append(
            {"pre": pre, "qh": qh, "kh": kh, "vh": vh, "attn": attn,
             "ctx": ctx, "mid": mid, "a": a}
        )
    raw = h @ params["w_out"] + params["b_out"]
    if config.x0_clamp > 0:
        out = np.clip(raw, -config.x0_clamp, config.x0_clamp)
    else:
        out = raw
    cache["h_final"] = h
    cache["raw"] = raw
    out = out.reshape(B, F, L, D)
    return (out, cache) if want_cache else out


def forward(
    params: DenoiserParams,
    config: DenoiserConfig,
    z_noisy: LatentVideo,
    composition: TimestepComposition,
    sched: NoiseSchedule,
) -> LatentVideo:
    """Predict clean latents for one video given its timestep composition."""
    if composition.frames != z_noisy.frames:
        raise ValueError(
            f"composition has {composition.frames} frames, video {z_noisy.frames}"
        )
    if composition.max_timestep != sched.T:
        raise ValueError("composition grid does not match the schedule")
    t = composition.as_array()[None, :]
    out = forward_batch(params, config, z_noisy.data[None], t)
    return LatentVideo(data=out[0], scale_factor=z_noisy.scale_factor)


def _backward_batch(
    params: DenoiserParams,
    config: DenoiserConfig,
    cache: dict,
    dout: np.ndarray,
) -> DenoiserParams:
    B, F, L, D = cache["z"].shape
    S = F * L
    H = config.n_heads
    dh = config.d_model // H
    g = {name: np.zeros_like(arr) for name, arr in params.items()}

    d = dout.reshape(B, S, D)
    if config.x0_clamp > 0:
        d = d * (np.abs(cache["raw"]) <= config.x0_clamp)
    g["w_out"] += np.einsum("bsd,bse->de", cache["h_final"], d)
    g["b_out"] += d.sum(axis=(0, 1))
    dhid = d @ params["w_out"].T

    for l in range(config.n_layers - 1, -1, -1):
        lc = cache["layers"][l]
        # MLP sublayer
        da = dhid @ params[f"layers.{l}.w2"].T
        g[f"layers.{l}.w2"] += np.einsum("bsh,bsd->hd", lc["a"], dhid)
        g[f"layers.{l}.b2"] += dhid.sum(axis=(0, 1))
        dm1 = da * (1.0 - lc["a"] ** 2)
        g[f"layers.{l}.w1"] += np.einsum("bsd,bsh->dh", lc["mid"], dm1)
        g[f"layers.{l}.b1"] += dm1.sum(axis=(0, 1))
        dhid = dhid + dm1 @ params[f"layers.{l}.w1"].T
        # attention sublayer
        dctx_m = dhid @ params[f"layers.{l}.wo"].T
        g[f"layers.{l}.wo"] += np.einsum("bsd,bse->de", lc["ctx"], dhid)
        g[f"layers.{l}.bo"] += dhid.sum(axis=(0, 1))
        dctx = _split_heads(dctx_m, H)
        dattn = dctx @ lc["vh"].transpose(0, 1, 3, 2)
        dvh = lc["attn"].transpose(0, 1, 3, 2) @ dctx
        # softmax backward; masked cells have attn == 0 and drop out
        tmp = (dattn * lc["attn"]).sum(axis=-1, keepdims=True)
        dscores = lc["attn"] * (dattn - tmp) / np.sqrt(dh)
        dqh = dscores @ lc["kh"]
        dkh = dscores.transpose(0, 1, 3, 2) @ lc["qh"]
        dq, dk, dv = (_merge_heads(x) for x in (dqh, dkh, dvh))
        pre = lc["pre"]
        for name, dd in (("wq", dq), ("wk", dk), ("wv", dv)):
            g[f"layers.{l}.{name}"] += np.einsum("bsd,bse->de", pre, dd)
        g[f"layers.{l}.bq"] += dq.sum(axis=(0, 1))
        g[f"layers.{l}.bv"] += dv.sum(axis=(0, 1))
        dhid = (
            dhid
            + dq @ params[f"layers.{l}.wq"].T
            + dk @ params[f"layers.{l}.wk"].T
            + dv @ params[f"layers.{l}.wv"].T
        )

    g["b_in"] += dhid.sum(axis=(0, 1))
    g["w_in"] += np.einsum("bsd,bse->de", cache["h0_in"], dhid)
    # timestep embeddings: each frame's rows collect its tokens' gradients
    dframe = dhid.reshape(B, F, L, config.d_model).sum(axis=2)
    np.add.at(g["temb"], cache["t"], dframe)
    return g


def loss_and_grad(
    params: DenoiserParams,
    config: DenoiserConfig,
    z0: np.ndarray,
    t: np.ndarray,
    eps: np.ndarray,
    sched: NoiseSchedule,
) -> tuple[float, DenoiserParams]:
    """Mean-squared x0-prediction loss and its exact gradients.

    z0, eps: (B, F, L, D); t: (B, F) timesteps in [0, sched.T]. Each frame
    is corrupted to its own timestep before the forward pass, and the loss
    is the mean over every batch/frame/token/dim element of
    (prediction - z0)^2.
    """
    z0 = np.asarray(z0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    t = np.asarray(t, dtype=np.int64)
    if z0.ndim != 4 or z0.shape[0] == 0:
        raise ValueError("batch must be a non-empty (B, F, L, D) array")
    if t.max() > sched.T:
        raise ValueError(f"timestep {t.max()} exceeds schedule T={sched.T}")
    ab = sched.alpha_bars[t][..., None, None]
    z_noisy = np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps
    out, cache = forward_batch(params, config, z_noisy, t, want_cache=True)
    err = out - z0
    per_sample = np.mean(err**2, axis=(1, 2, 3))
    if not np.all(np.isfinite(per_sample)):
        bad = int(np.flatnonzero(~np.isfinite(per_sample))[0])
        raise FloatingPointError(f"non-finite loss at batch index {bad}")
    loss = float(per_sample.mean())
    dout = 2.0 * err / err.size
    grads = _backward_batch(params, config, cache, dout)
    return loss, grads


def loss_only(
    params: DenoiserParams,
    config: DenoiserConfig,
    z0: np.ndarray,
    t: np.ndarray,
    eps: np.ndarray,
    sched: NoiseSchedule,
) -> float:
    """Loss without gradients; the finite-difference oracle leans on this."""
    ab = sched.alpha_bars[np.asarray(t, dtype=np.int64)][..., None, None]
    z_noisy = np.sqrt(ab) * np.asarray(z0, float) + np.sqrt(1.0 - ab) * np.asarray(eps, float)
    out = forward_batch(params, config, z_noisy, np.asarray(t, dtype=np.int64))
    return float(np.mean((out - np.asarray(z0, float)) ** 2))


def save_checkpoint(
    params: DenoiserParams,
    config: DenoiserConfig,
    meta: dict,
    path: str | Path,
) -> None:
    """Versioned checkpoint: 16-byte magic, JSON header (config, metadata,
    tensor directory), then named tensors as little-endian float32."""
    names = sorted(params)
    header = {
        "config": asdict(config),
        "meta": meta,
        "tensors": [[name, list(params[name].shape)] for name in names],
        "dtype": "float32",
        "byte_order": "little",
    }
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("ascii"))
        for name in names:
            fh.write(params[name].astype("<f4").tobytes())


def load_checkpoint(path: str | Path) -> tuple[DenoiserParams, DenoiserConfig, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        header = json.loads(fh.readline().decode("ascii"))
        params: DenoiserParams = {}
        for name, shape in header["tensors"]:
            n = int(np.prod(shape))
            raw = fh.read(4 * n)
            if len(raw) != 4 * n:
                raise ValueError(f"{path}: truncated tensor {name}")
            params[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
    config = DenoiserConfig(**header["config"])
    return params, config, header.get("meta", {})
