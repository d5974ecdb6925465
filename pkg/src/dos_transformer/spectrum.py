"""Energy grid construction and DOS target preparation."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from .crystal_data import Dataset


@dataclass(frozen=True)
class EnergyGrid:
    e_min: float
    e_max: float
    m: int

    def __post_init__(self):
        if not (math.isfinite(self.e_min) and math.isfinite(self.e_max)):
            raise ValueError("grid bounds must be finite")
        if self.m < 2:
            raise ValueError(f"grid needs at least 2 points, got {self.m}")
        if not self.e_min < self.e_max:
            raise ValueError(f"e_min ({self.e_min}) must be < e_max ({self.e_max})")

    @property
    def values(self) -> np.ndarray:
        k = np.arange(self.m, dtype=np.float64)
        return self.e_min + k * (self.e_max - self.e_min) / (self.m - 1)

    @property
    def spacing(self) -> float:
        return (self.e_max - self.e_min) / (self.m - 1)

    def to_dict(self) -> dict:
        return {"e_min": self.e_min, "e_max": self.e_max, "m": self.m}

    @classmethod
    def from_dict(cls, d: dict) -> "EnergyGrid":
        return cls(float(d["e_min"]), float(d["e_max"]), int(d["m"]))


ELECTRON_GRID = EnergyGrid(-5.0, 5.0, 201)


def make_grid(e_min: float = -5.0, e_max: float = 5.0, m: int = 201) -> EnergyGrid:
    """Uniform grid of ``m`` points on [e_min, e_max] (eV)."""
    return EnergyGrid(float(e_min), float(e_max), int(m))


@dataclass(frozen=True)
class SmootherConfig:
    window: int = 17
    polyorder: int = 1

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError(f"window must be a positive odd integer, got {self.window}")
        if not 0 <= self.polyorder < self.window:
            raise ValueError(f"polyorder must be in [0, window), got {self.polyorder}")


def normalize_dos(raw) -> tuple[np.ndarray, bool]:
    """Min-max normalize one spectrum to [0, 1].

    Returns ``(out, degenerate)``. A constant spectrum maps to all zeros with
    ``degenerate=True``.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if np.isnan(raw).any():
        raise ValueError("DOS contains NaN")
    if not np.isfinite(raw).all():
        raise ValueError("DOS contains non-finite values")
    lo, hi = raw.min(), raw.max()
    if hi == lo:
        return np.zeros_like(raw), True
    return (raw - lo) / (hi - lo), False


def savgol_coeffs(window: int, polyorder: int, pos: int | None = None) -> np.ndarray:
    """Weights ``c`` such that ``c @ y[window]`` is the least-squares polynomial
    of degree ``polyorder`` fitted to the window, evaluated at offset ``pos``
    (default: window center)."""
    half = window // 2
    if pos is None:
        pos = half
    x = np.arange(window, dtype=np.float64) - pos
    vander = x[:, None] ** np.arange(polyorder + 1)[None, :]
    # row 0 of the pseudo-inverse gives the fitted value at x = 0
    return np.linalg.pinv(vander)[0]


def _edge_fit(block: np.ndarray, polyorder: int) -> np.ndarray:
    window = block.shape[0]
    x = np.arange(window, dtype=np.float64)
    vander = x[:, None] ** np.arange(polyorder + 1)[None, :]
    coef, *_ = np.linalg.lstsq(vander, block, rcond=None)
    return vander @ coef


def savgol_smooth(y, cfg: SmootherConfig = SmootherConfig()) -> np.ndarray:
    """Savitzky-Golay smoothing with polynomial-interpolation edges.

    Interior points use the centered least-squares fit; the first and last
    ``window // 2`` points are taken from a single polynomial fitted to the
    first/last full window.
    """
    y = np.asarray(y, dtype=np.float64)
    m = y.shape[0]
    w, p = cfg.window, cfg.polyorder
    if m < w:
        raise ValueError(f"signal length {m} is shorter than window {w}")
    half = w // 2
    c = savgol_coeffs(w, p)
    out = np.empty_like(y)
    windows = np.lib.stride_tricks.sliding_window_view(y, w)
    out[half:m - half] = windows @ c
    if half:
        out[:half] = _edge_fit(y[:w], p)[:half]
        out[m - half:] = _edge_fit(y[m - w:], p)[w - half:]
    return out


def prepare(dataset: "Dataset", cfg: SmootherConfig = SmootherConfig()) -> tuple["Dataset", list[str]]:
    """Normalize, smooth, then clip every spectrum to [0, 1].

    Returns the prepared dataset and the ids of degenerate (constant) spectra.
    """
    from .crystal_data import Dataset

    crystals = []
    degenerate = []
    for c in dataset.crystals:
        if c.dos is None:
            raise ValueError(f"crystal {c.id}: no DOS to prepare")
        norm, flat = normalize_dos(c.dos)
        if flat:
            degenerate.append(c.id)
        target = np.clip(savgol_smooth(norm, cfg), 0.0, 1.0)
        crystals.append(dataclasses.replace(c, dos=target))
    return Dataset(crystals, dataset.grid), degenerate
