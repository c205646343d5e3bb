"""Scalar quantizers for the values operators exchange.

Gains are quantized uniformly in dB with midpoint reconstruction.
Interference levels are quantized uniformly on ``[0, cap]`` and always
rounded up, so a report never understates the true contribution.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

UNQUANTIZED = math.inf


class QuantizerMode(enum.Enum):
    GAIN_DB = "gain_db"
    LEVEL_LINEAR = "level_linear"


class LevelOverflowError(ValueError):
    """A reported interference level exceeds the range it is quantized on."""


@dataclass(frozen=True)
class QuantizerConfig:
    bits: float = UNQUANTIZED
    lo_db: float = -60.0
    hi_db: float = 20.0
    mode: QuantizerMode = QuantizerMode.GAIN_DB

    def __post_init__(self):
        if not self.lo_db < self.hi_db:
            raise ValueError(f"need lo_db < hi_db, got {self.lo_db}, {self.hi_db}")
        if self.bits != UNQUANTIZED and (int(self.bits) != self.bits or self.bits < 1):
            raise ValueError(f"bits must be a positive integer or UNQUANTIZED, got {self.bits}")

    @property
    def unquantized(self) -> bool:
        return self.bits == UNQUANTIZED


def quantize_gain(x, cfg: QuantizerConfig):
    """Quantize linear power gain(s) on a uniform dB grid.

    Zero is a reserved codeword and maps to exactly zero.
    """
    x = np.asarray(x, dtype=float)
    if cfg.unquantized:
        return x.copy() if x.ndim else float(x)
    n_cells = 2 ** int(cfg.bits)
    width = (cfg.hi_db - cfg.lo_db) / n_cells
    pos = x > 0
    with np.errstate(divide="ignore"):
        x_db = np.where(pos, 10.0 * np.log10(np.where(pos, x, 1.0)), cfg.lo_db)
    x_db = np.clip(x_db, cfg.lo_db, cfg.hi_db)
    cell = np.minimum(np.floor((x_db - cfg.lo_db) / width), n_cells - 1)
    mid_db = cfg.lo_db + (cell + 0.5) * width
    out = np.where(pos, 10.0 ** (mid_db / 10.0), 0.0)
    return out if out.ndim else float(out)


def quantize_level(x, cap, bits):
    """Round interference level(s) up to the next point of a ``2**bits``-cell
    grid on ``[0, cap]``.

    ``cap`` broadcasts against ``x``.  Raises :class:`LevelOverflowError` if
    any ``x`` exceeds its cap.
    """
    x = np.asarray(x, dtype=float)
    cap = np.broadcast_to(np.asarray(cap, dtype=float), x.shape)
    if np.any(x < 0):
        raise ValueError("interference levels must be nonnegative")
    if np.any(x > cap):
        worst = float(np.max(x - cap))
        raise LevelOverflowError(f"reported level exceeds its cap by {worst:.3e}")
    if bits == UNQUANTIZED:
        return x.copy() if x.ndim else float(x)
    n_cells = 2 ** int(bits)
    width = cap / n_cells
    with np.errstate(divide="ignore", invalid="ignore"):
        idx = np.where(width > 0, np.ceil(x / np.where(width > 0, width, 1.0)), 0.0)
    # guard against x/width landing a hair above an integer through rounding
    idx = np.minimum(idx, n_cells)
    out = np.minimum(idx * width, cap)
    out = np.maximum(out, x)
    return out if out.ndim else float(out)
