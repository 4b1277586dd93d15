"""Latent video container and its binary tensor file format.

A latent video is an (F, L, D) float array: F frames, L tokens per frame,
D channels per token. The on-disk format is a 16-byte magic+version block,
one JSON header line (shape, dtype, byte order, scale factor), then the raw
little-endian float32 payload.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"STAIRDIFF-LV-01\n"  # 16 bytes, version baked into the tag


@dataclass
class LatentVideo:
    data: np.ndarray
    scale_factor: float = 1.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ValueError(f"expected (frames, tokens, dim), got shape {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("latent video contains non-finite values")

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def tokens(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]


def save_tensor(array: np.ndarray, path: str | Path, scale_factor: float = 1.0) -> None:
    """Write any float tensor in the binary format (float32, little-endian)."""
    header = {
        "shape": list(array.shape),
        "dtype": "float32",
        "byte_order": "little",
        "scale_factor": scale_factor,
    }
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write((json.dumps(header, sort_keys=True) + "\n").encode("ascii"))
        fh.write(np.asarray(array).astype("<f4").tobytes())


def load_tensor(path: str | Path) -> tuple[np.ndarray, float]:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a latent tensor file (bad magic {magic!r})")
        header = json.loads(fh.readline().decode("ascii"))
        shape = tuple(header["shape"])
        if header.get("dtype") != "float32" or header.get("byte_order") != "little":
            raise ValueError(f"{path}: unsupported payload encoding in header {header}")
        n = int(np.prod(shape))
        raw = fh.read(4 * n)
        if len(raw) != 4 * n:
            raise ValueError(f"{path}: truncated payload ({len(raw)} of {4 * n} bytes)")
        data = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
    return data, float(header.get("scale_factor", 1.0))


def save_latent_video(video: LatentVideo, path: str | Path) -> None:
    save_tensor(video.data, path, scale_factor=video.scale_factor)


def load_latent_video(path: str | Path) -> LatentVideo:
    data, scale = load_tensor(path)
    return LatentVideo(data=data, scale_factor=scale)


def dump_latent_csv(video: LatentVideo, path: str | Path) -> None:
    """Plain-text dump (frame, token, dim, value), one row per scalar."""
    with open(path, "w") as fh:
        fh.write("frame,token,dim,value\n")
        for f in range(video.frames):
            for l in range(video.tokens):
                for d in range(video.dim):
                    fh.write(f"{f},{l},{d},{float(video.data[f, l, d])!r}\n")
