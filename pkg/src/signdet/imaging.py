"""Raster operations for the preprocessing pipeline.

Only binary netpbm (P5 grayscale / P6 RGB, maxval 255) is supported: it is
bit-exact and dependency-free, which the round-trip and determinism tests
rely on. Headers are whitespace-tolerant on input (including ``#`` comments)
and normalized to ``P6\\n<w> <h>\\n255\\n`` form on output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadHeader, IndexOutOfRange, IoFailure, TruncatedData, UnsupportedFormat
from .geometry import Box


@dataclass(frozen=True)
class Raster:
    """An 8-bit image buffer: row-major samples, 1 (gray) or 3 (RGB) channels."""

    width: int
    height: int
    channels: int
    data: bytes

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"raster dimensions must be >= 1, got {self.width}x{self.height}")
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        expected = self.width * self.height * self.channels
        if len(self.data) != expected:
            raise ValueError(f"data length {len(self.data)} != {expected}")

    def to_array(self) -> np.ndarray:
        """View as a (height, width, channels) uint8 array."""
        return np.frombuffer(self.data, dtype=np.uint8).reshape(
            self.height, self.width, self.channels
        )

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Raster":
        if arr.ndim == 2:
            arr = arr[:, :, np.newaxis]
        if arr.dtype != np.uint8:
            raise ValueError(f"expected uint8 samples, got {arr.dtype}")
        height, width, channels = arr.shape
        return cls(width, height, channels, np.ascontiguousarray(arr).tobytes())


def _read_header_tokens(data: bytes, count: int, start: int) -> tuple[list[bytes], int]:
    # Netpbm tokens are separated by whitespace; '#' starts a comment to EOL.
    tokens: list[bytes] = []
    pos = start
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] not in (0x0A, 0x0D):
                pos += 1
            continue
        if pos >= len(data):
            raise BadHeader("header ended before width/height/maxval")
        tok_start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[tok_start:pos])
    return tokens, pos


def read_image(data: bytes) -> Raster:
    """Decode binary PGM (P5) or PPM (P6) bytes, maxval 255 only."""
    if data[:2] == b"P5":
        channels = 1
    elif data[:2] == b"P6":
        channels = 3
    else:
        raise UnsupportedFormat(f"not a binary PGM/PPM file (magic {data[:2]!r})")
    tokens, pos = _read_header_tokens(data, 3, 2)
    try:
        width, height, maxval = (int(tok) for tok in tokens)
    except ValueError:
        raise BadHeader(f"non-numeric header fields {tokens!r}") from None
    if width < 1 or height < 1:
        raise BadHeader(f"bad dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedFormat(f"only maxval 255 is supported, got {maxval}")
    # Exactly one whitespace byte separates the header from the samples.
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise BadHeader("missing whitespace after maxval")
    pos += 1
    n = width * height * channels
    samples = data[pos : pos + n]
    if len(samples) < n:
        raise TruncatedData(f"expected {n} sample bytes, got {len(samples)}")
    return Raster(width, height, channels, samples)


def write_image(raster: Raster) -> bytes:
    """Encode as binary P5/P6 with a normalized header."""
    magic = b"P5" if raster.channels == 1 else b"P6"
    header = magic + b"\n%d %d\n255\n" % (raster.width, raster.height)
    return header + raster.data


def read_image_file(path: str) -> Raster:
    try:
        with open(path, "rb") as fh:
            return read_image(fh.read())
    except OSError as exc:
        raise IoFailure(f"cannot read image {path}: {exc}") from exc


def write_image_file(path: str, raster: Raster):
    try:
        with open(path, "wb") as fh:
            fh.write(write_image(raster))
    except OSError as exc:
        raise IoFailure(f"cannot write image {path}: {exc}") from exc


def to_grayscale(img: Raster) -> Raster:
    """BT.601 luma, round-half-up. Grayscale input passes through unchanged."""
    if img.channels == 1:
        return img
    rgb = img.to_array().astype(np.float64)
    luma = 0.299 * rgb[:, :, 0] + 0.587 * rgb[:, :, 1] + 0.114 * rgb[:, :, 2]
    gray = np.clip(np.floor(luma + 0.5), 0, 255).astype(np.uint8)
    return Raster.from_array(gray)


def resize(img: Raster, out_w: int, out_h: int, mode: str = "bilinear") -> Raster:
    """Resample to (out_w, out_h) with half-pixel-centered sampling.

    nearest: output (x, y) copies source pixel (floor((x+0.5)*W/out_w),
    floor((y+0.5)*H/out_h)). bilinear: samples at the same centers minus 0.5,
    edge-clamped, quantized round-half-up.
    """
    if out_w < 1 or out_h < 1:
        raise ValueError(f"output size must be >= 1, got {out_w}x{out_h}")
    if mode not in ("nearest", "bilinear"):
        raise ValueError(f"unknown resize mode {mode!r}")
    if out_w == img.width and out_h == img.height:
        return img
    src = img.to_array()
    xs = np.arange(out_w)
    ys = np.arange(out_h)
    if mode == "nearest":
        sx = np.minimum((((xs + 0.5) * img.width) // out_w).astype(np.int64), img.width - 1)
        sy = np.minimum((((ys + 0.5) * img.height) // out_h).astype(np.int64), img.height - 1)
        out = src[sy[:, None], sx[None, :], :]
        return Raster.from_array(out.copy())
    fx = np.clip((xs + 0.5) * img.width / out_w - 0.5, 0, img.width - 1)
    fy = np.clip((ys + 0.5) * img.height / out_h - 0.5, 0, img.height - 1)
    x0 = np.floor(fx).astype(np.int64)
    y0 = np.floor(fy).astype(np.int64)
    x1 = np.minimum(x0 + 1, img.width - 1)
    y1 = np.minimum(y0 + 1, img.height - 1)
    wx = (fx - x0)[None, :, None]
    wy = (fy - y0)[:, None, None]
    src_f = src.astype(np.float64)
    top = src_f[y0[:, None], x0[None, :], :] * (1 - wx) + src_f[y0[:, None], x1[None, :], :] * wx
    bottom = src_f[y1[:, None], x0[None, :], :] * (1 - wx) + src_f[y1[:, None], x1[None, :], :] * wx
    blended = top * (1 - wy) + bottom * wy
    out = np.clip(np.floor(blended + 0.5), 0, 255).astype(np.uint8)
    return Raster.from_array(out)


def rotate_quarter(img: Raster, turns: int) -> Raster:
    """Rotate clockwise by 90 * turns degrees; pure pixel permutation.

    turns=1 maps output (x, y) to input (y, H-1-x) and swaps dimensions.
    turns=0 covers the 360-degree case and returns the input unchanged.
    """
    if turns not in (0, 1, 2, 3):
        raise ValueError(f"turns must be in 0..3, got {turns}")
    if turns == 0:
        return img
    arr = np.rot90(img.to_array(), k=-turns)
    return Raster.from_array(np.ascontiguousarray(arr))


def rotate_box(box: Box, turns: int) -> Box:
    """Transform a normalized box under the same clockwise quarter turns."""
    if turns not in (0, 1, 2, 3):
        raise ValueError(f"turns must be in 0..3, got {turns}")
    if turns == 0:
        return box
    if turns == 1:
        return Box(1 - box.cy, box.cx, box.h, box.w)
    if turns == 2:
        return Box(1 - box.cx, 1 - box.cy, box.w, box.h)
    return Box(box.cy, 1 - box.cx, box.h, box.w)


@dataclass(frozen=True)
class FramePolicy:
    """Which frame numbers to keep out of an extracted sequence.

    Either an explicit index tuple, or a (start, step, count) progression.
    The default progression keeps frames 50, 60, 70, 80, 90, 100.
    """

    indices: tuple[int, ...] | None = None
    start: int = 50
    step: int = 10
    count: int = 6

    @classmethod
    def explicit(cls, indices) -> "FramePolicy":
        return cls(indices=tuple(indices))


def select_frames(total: int, policy: FramePolicy = FramePolicy()) -> list[int]:
    """Resolve a FramePolicy against a sequence length.

    Returns strictly increasing indices, all < total; raises IndexOutOfRange
    if the policy asks for a frame the sequence does not have.
    """
    if total < 1:
        raise ValueError(f"total must be >= 1, got {total}")
    if policy.indices is not None:
        wanted = sorted(set(policy.indices))
    else:
        if policy.step < 1 or policy.count < 1 or policy.start < 0:
            raise ValueError(f"bad frame progression {policy}")
        wanted = [policy.start + k * policy.step for k in range(policy.count)]
    for idx in wanted:
        if idx < 0 or idx >= total:
            raise IndexOutOfRange(f"frame {idx} requested but only {total} frames exist")
    return wanted
