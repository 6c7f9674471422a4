"""Desk-scale synthetic dataset generator for compression-chain labels.

Base images are seeded multi-scale smoothed noise plus a gradient,
kept well inside [0, 255] so block-DCT requantization stays on its
quantization grid (and re-applying the same quality is bit-exact).
Each chain is a sequence of JPEG-like quantization rounds with an
optional rescale, emulating single vs. platform-style double
compression. Output is an ingest-compatible frame store plus sidecar.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft
import scipy.ndimage
from PIL import Image

from provnet.errors import ConfigError
from provnet.ingest import SIDECAR_FIELDS

# ITU-T81 Annex K luminance quantization table
STD_LUMA_TABLE = np.array(
    [
        [16, 11, 10, 16, 24, 40, 51, 61],
        [12, 12, 14, 19, 26, 58, 60, 55],
        [14, 13, 16, 24, 40, 57, 69, 56],
        [14, 17, 22, 29, 51, 87, 80, 62],
        [18, 22, 37, 56, 68, 109, 103, 77],
        [24, 35, 55, 64, 81, 104, 113, 92],
        [49, 64, 78, 87, 103, 121, 120, 101],
        [72, 92, 95, 98, 112, 100, 103, 99],
    ],
    dtype=np.float64,
)


@dataclass
class ChainStage:
    quality: int
    rescale: float | None = None

    def validate(self):
        if not 10 <= self.quality <= 95:
            raise ConfigError(f"quality {self.quality} outside [10, 95]")
        if self.rescale is not None and not 0.25 <= self.rescale <= 4.0:
            raise ConfigError(f"rescale factor {self.rescale} outside [0.25, 4]")


@dataclass
class CompressionChain:
    label: str
    stages: list = field(default_factory=list)

    def validate(self):
        if not self.stages:
            raise ConfigError(f"chain {self.label!r} has no stages")
        for s in self.stages:
            s.validate()

    @classmethod
    def from_dict(cls, d) -> "CompressionChain":
        stages = [
            ChainStage(quality=int(s["quality"]), rescale=s.get("rescale"))
            for s in d["stages"]
        ]
        return cls(label=d["label"], stages=stages)


def quality_table(quality: int) -> np.ndarray:
    """Standard luma table scaled by the usual JPEG quality rule."""
    if quality < 50:
        scale = 5000.0 / quality
    else:
        scale = 200.0 - 2.0 * quality
    table = np.floor((STD_LUMA_TABLE * scale + 50.0) / 100.0)
    return np.clip(table, 1, 255)


def quantize_block_dct(plane: np.ndarray, quality: int) -> np.ndarray:
    """One JPEG-like round: 8x8 DCT, quantize, dequantize, inverse, clamp.

    Input planes whose dims are not multiples of 8 are reflect-padded for
    the transform and cropped back. Output stays float so repeating the
    same quality requantizes to the identical grid.
    """
    plane = np.asarray(plane, dtype=np.float64)
    h, w = plane.shape
    ph, pw = (-h) % 8, (-w) % 8
    padded = np.pad(plane, ((0, ph), (0, pw)), mode="reflect") if (ph or pw) else plane
    hh, ww = padded.shape

    table = quality_table(quality)
    blocks = padded.reshape(hh // 8, 8, ww // 8, 8).transpose(0, 2, 1, 3) - 128.0
    coeffs = scipy.fft.dctn(blocks, axes=(2, 3), norm="ortho")
    coeffs = np.round(coeffs / table) * table
    rec = scipy.fft.idctn(coeffs, axes=(2, 3), norm="ortho") + 128.0
    out = rec.transpose(0, 2, 1, 3).reshape(hh, ww)[:h, :w]
    return np.clip(out, 0.0, 255.0)


def _rescale(plane: np.ndarray, factor: float, size: int) -> np.ndarray:
    """Bilinear rescale then crop/reflect-pad back to the working size."""
    zoomed = scipy.ndimage.zoom(plane, factor, order=1)
    zh, zw = zoomed.shape
    if zh >= size and zw >= size:
        top, left = (zh - size) // 2, (zw - size) // 2
        return zoomed[top : top + size, left : left + size]
    return np.pad(zoomed, ((0, size - zh), (0, size - zw)), mode="reflect")


def apply_chain(plane: np.ndarray, chain: CompressionChain) -> np.ndarray:
    size = plane.shape[0]
    out = plane
    for stage in chain.stages:
        if stage.rescale is not None:
            out = _rescale(out, stage.rescale, size)
        out = quantize_block_dct(out, stage.quality)
    return out


def base_image(rng: np.random.Generator, size: int) -> np.ndarray:
    """Natural-statistics stand-in: multi-scale smoothed noise + gradient."""
    img = np.zeros((size, size))
    for sigma, amp in ((1.5, 14.0), (4.0, 30.0), (12.0, 45.0)):
        noise = rng.standard_normal((size, size))
        img += amp * scipy.ndimage.gaussian_filter(noise, sigma)
    gy, gx = rng.uniform(-40, 40, size=2)
    ramp = np.linspace(-0.5, 0.5, size)
    img += gy * ramp[:, None] + gx * ramp[None, :]
    img += 128.0
    return np.clip(img, 40.0, 215.0)


def _write_frame(path: Path, plane: np.ndarray):
    gray = np.clip(np.round(plane), 0, 255).astype(np.uint8)
    rgb = np.stack([gray, gray, gray], axis=-1)
    Image.fromarray(rgb, mode="RGB").save(path)


def generate_dataset(
    chains: list[CompressionChain],
    n_frames: int,
    frame_size: int,
    seed: int,
    out_dir,
    p_frames: int = 0,
    p_shift_max: int = 2,
) -> Path:
    """Synthesize labeled frames and a sidecar CSV under ``out_dir``.

    ``n_frames`` base images are drawn per chain; each becomes its own
    one-GOP "video" whose I-frame is the chain output. With ``p_frames``
    > 0, each video also gets that many P-emulated successors: the base
    image circularly shifted by a small seeded offset and requantized at
    the chain's final quality (approximate by design; no real motion
    compensation). Returns the sidecar path.
    """
    if len(chains) < 2:
        raise ConfigError("need at least 2 chains to label a dataset")
    labels = [c.label for c in chains]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"duplicate chain labels: {labels}")
    for c in chains:
        c.validate()

    out_dir = Path(out_dir)
    frames_dir = out_dir / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for fi in range(n_frames):
        # one base scene per frame index, shared by all chains, so classes
        # differ only in their compression history
        rng = np.random.default_rng([seed, fi])
        base = base_image(rng, frame_size)
        shifts = rng.integers(-p_shift_max, p_shift_max + 1, size=(p_frames, 2))
        for chain in chains:
            video_id = f"{chain.label}_{fi:05d}"
            iframe = apply_chain(base, chain)
            ipath = frames_dir / f"{video_id}_f000_I.png"
            _write_frame(ipath, iframe)
            rows.append([video_id, 0, "I", frame_size, frame_size, str(ipath)])

            last_q = chain.stages[-1].quality
            for pj in range(p_frames):
                dy, dx = shifts[pj]
                shifted = np.roll(base, (int(dy), int(dx)), axis=(0, 1))
                pframe = apply_chain(shifted, chain)
                pframe = quantize_block_dct(pframe, max(10, last_q - 5))
                ppath = frames_dir / f"{video_id}_f{pj + 1:03d}_P.png"
                _write_frame(ppath, pframe)
                rows.append(
                    [video_id, pj + 1, "P", frame_size, frame_size, str(ppath)]
                )

    sidecar = out_dir / "sidecar.csv"
    with open(sidecar, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SIDECAR_FIELDS)
        writer.writerows(rows)
    return sidecar


def load_frame(path) -> np.ndarray:
    """Read a frame raster file as an (h, w, 3) uint8 array."""
    path = Path(path)
    if path.suffix == ".npy":
        arr = np.load(path)
    else:
        arr = np.asarray(Image.open(path).convert("RGB"))
    if arr.ndim == 2:
        arr = np.stack([arr, arr, arr], axis=-1)
    return arr
