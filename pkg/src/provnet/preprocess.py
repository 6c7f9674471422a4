"""Residual front-ends for the two streams, plus luma conversion and patching.

I-frames go through a fixed 5x5 zero-sum high-pass filter on the luma
channel; P-frame triplets are turned into 3-channel stacks of Gaussian
residuals (luma minus its Gaussian blur). Both filters use reflective
padding so frame borders do not leak into the residual statistics.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from provnet.errors import DataError

log = logging.getLogger(__name__)

PATCH_MAGIC = b"PNETPTCH"
PATCH_VERSION = 1

# 5x5 square residual filter from the SRM bank (zero-sum high-pass).
_S5A_INT = np.array(
    [
        [-1, 2, -2, 2, -1],
        [2, -6, 8, -6, 2],
        [-2, 8, -12, 8, -2],
        [2, -6, 8, -6, 2],
        [-1, 2, -2, 2, -1],
    ],
    dtype=np.float64,
)
S5A_KERNEL = _S5A_INT / 12.0


def _gaussian_kernel(size: int = 5, sigma: float = 1.0) -> np.ndarray:
    half = size // 2
    ax = np.arange(-half, half + 1, dtype=np.float64)
    g1 = np.exp(-(ax**2) / (2 * sigma**2))
    k = np.outer(g1, g1)
    return k / k.sum()

GAUSSIAN_KERNEL = _gaussian_kernel()


@dataclass
class PFrameStack:
    """Three consecutive P-frame images from one video, in temporal order."""

    frames: tuple  # (prev, center, next) RGB arrays
    video_id: str
    center_index: int


@dataclass
class Patch:
    tensor: np.ndarray  # (1, s, s) for I-kind, (3, s, s) for P-kind, float32
    label: int
    video_id: str
    frame_index: int
    row: int
    col: int
    kind: str  # "I" or "P"


def rgb_to_yuv(rgb_frame: np.ndarray) -> np.ndarray:
    """Full-range BT.601 luma from an (h, w, 3) frame, kept real-valued."""
    frame = np.asarray(rgb_frame)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise DataError(f"expected (h, w, 3) RGB input, got shape {frame.shape}")
    frame = frame.astype(np.float64)
    return 0.299 * frame[:, :, 0] + 0.587 * frame[:, :, 1] + 0.114 * frame[:, :, 2]


def _convolve2d_reflect(plane: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Same-size true 2-D convolution (kernel flipped) with reflect padding."""
    k = kernel.shape[0]
    half = k // 2
    padded = np.pad(plane.astype(np.float64), half, mode="reflect")
    windows = sliding_window_view(padded, (k, k))
    flipped = kernel[::-1, ::-1]
    return np.einsum("ijkl,kl->ij", windows, flipped)


def hpf_s5a(y: np.ndarray) -> np.ndarray:
    """High-pass residual of a luma plane via the fixed zero-sum kernel."""
    y = np.asarray(y)
    if y.ndim != 2 or min(y.shape) < 5:
        raise DataError(f"plane too small for 5x5 filtering: {y.shape}")
    # convolve with the integer kernel and scale afterwards: integer-valued
    # inputs then cancel exactly, so constants map to exact zero
    return _convolve2d_reflect(y, _S5A_INT) / 12.0


def gaussian_residual(y: np.ndarray) -> np.ndarray:
    """Luma minus its 5x5 sigma=1 Gaussian blur."""
    y = np.asarray(y)
    if y.ndim != 2 or min(y.shape) < 5:
        raise DataError(f"plane too small for 5x5 filtering: {y.shape}")
    return y.astype(np.float64) - _convolve2d_reflect(y, GAUSSIAN_KERNEL)


def crop_patches(array: np.ndarray, size: int = 256) -> list[tuple[int, int, np.ndarray]]:
    """Row-major grid of non-overlapping (row, col, tile) anchored at (0, 0).

    Works on (h, w) planes or (c, h, w) stacks; remainder pixels at the
    right/bottom are discarded. An input smaller than one tile yields an
    empty list (logged, not an error).
    """
    arr = np.asarray(array)
    h, w = arr.shape[-2], arr.shape[-1]
    rows, cols = h // size, w // size
    if rows == 0 or cols == 0:
        log.info("skipping %sx%s input: smaller than one %sx%s patch", w, h, size, size)
        return []
    out = []
    for r in range(rows):
        for c in range(cols):
            tile = arr[..., r * size : (r + 1) * size, c * size : (c + 1) * size]
            out.append((r * size, c * size, np.ascontiguousarray(tile)))
    return out


def make_iframe_input(
    frame: np.ndarray,
    video_id: str,
    frame_index: int,
    label: int,
    size: int = 256,
) -> list[Patch]:
    """I-frame pipeline: luma -> S5a residual -> non-overlapping patches."""
    residual = hpf_s5a(rgb_to_yuv(frame))
    patches = []
    for row, col, tile in crop_patches(residual, size=size):
        patches.append(
            Patch(
                tensor=tile[None, :, :].astype(np.float32),
                label=label,
                video_id=video_id,
                frame_index=frame_index,
                row=row,
                col=col,
                kind="I",
            )
        )
    return patches


def make_pframe_input(stack: PFrameStack, label: int, size: int = 256) -> list[Patch]:
    """P-triplet pipeline: per-frame Gaussian residual, stacked, then cropped."""
    shapes = {np.asarray(f).shape for f in stack.frames}
    if len(shapes) != 1:
        raise DataError(f"triplet frames have mismatched shapes: {shapes}")
    residuals = np.stack([gaussian_residual(rgb_to_yuv(f)) for f in stack.frames])
    patches = []
    for row, col, tile in crop_patches(residuals, size=size):
        patches.append(
            Patch(
                tensor=tile.astype(np.float32),
                label=label,
                video_id=stack.video_id,
                frame_index=stack.center_index,
                row=row,
                col=col,
                kind="P",
            )
        )
    return patches


def save_patch(path, patch: Patch):
    """Write one patch: PNETPTCH header plus float32 little-endian body."""
    tensor = np.ascontiguousarray(patch.tensor, dtype="<f4")
    vid = patch.video_id.encode("utf-8")
    out = bytearray()
    out += PATCH_MAGIC
    out += struct.pack("<I", PATCH_VERSION)
    out += struct.pack("<B", ord(patch.kind))
    out += struct.pack("<3I", *tensor.shape)
    out += struct.pack("<I", patch.label)
    out += struct.pack("<H", len(vid))
    out += vid
    out += struct.pack("<3I", patch.frame_index, patch.row, patch.col)
    out += tensor.tobytes()
    Path(path).write_bytes(bytes(out))


def load_patch(path) -> Patch:
    raw = Path(path).read_bytes()
    if raw[:8] != PATCH_MAGIC:
        raise DataError(f"{path}: not a patch file (bad magic)")
    pos = 8
    (version,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    if version != PATCH_VERSION:
        raise DataError(f"{path}: unsupported patch version {version}")
    (kind_byte,) = struct.unpack_from("<B", raw, pos)
    pos += 1
    c, h, w = struct.unpack_from("<3I", raw, pos)
    pos += 12
    (label,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    (vlen,) = struct.unpack_from("<H", raw, pos)
    pos += 2
    video_id = raw[pos : pos + vlen].decode("utf-8")
    pos += vlen
    frame_index, row, col = struct.unpack_from("<3I", raw, pos)
    pos += 12
    tensor = np.frombuffer(raw, dtype="<f4", count=c * h * w, offset=pos).reshape(c, h, w)
    return Patch(
        tensor=np.array(tensor),
        label=label,
        video_id=video_id,
        frame_index=frame_index,
        row=row,
        col=col,
        kind=chr(kind_byte),
    )
