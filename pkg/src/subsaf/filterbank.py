"""Cosine-modulated analysis filter bank and critically sampled subband decomposition."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.signal import firwin

# (n_subbands, prototype length) pairs used throughout the experiments
PRESETS = {2: 17, 4: 33, 8: 65}

# stopband starts at pi/N plus this fraction of pi/N
TRANSITION_MARGIN = 0.1


class DesignError(ValueError):
    """Raised when a prototype cannot meet its attenuation target."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass
class PrototypeFilter:
    coeffs: np.ndarray
    n_subbands: int
    stopband_atten_db: float

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.ndim != 1 or self.coeffs.size == 0:
            raise ValueError("prototype needs at least one coefficient")
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("prototype coefficients must be finite")
        if self.n_subbands < 1:
            raise ValueError("n_subbands must be >= 1")

    @property
    def length(self):
        return self.coeffs.size


@dataclass
class AnalysisBank:
    filters: np.ndarray  # (N, J)
    prototype: PrototypeFilter

    @property
    def n_subbands(self):
        return self.filters.shape[0]

    @property
    def length(self):
        return self.filters.shape[1]

    def energies(self):
        """Squared l2 norm of each analysis filter."""
        return np.sum(self.filters ** 2, axis=1)


def stopband_edge(n_subbands):
    return np.pi / n_subbands * (1.0 + TRANSITION_MARGIN)


def stopband_attenuation(coeffs, n_subbands, n_fft=8192):
    """Worst-case stopband attenuation in dB relative to the DC gain.

    Returns inf when the stopband is empty (N=1) or the response vanishes there.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    edge = stopband_edge(n_subbands)
    if edge >= np.pi:
        return float("inf")
    n_fft = max(n_fft, 4 * coeffs.size)
    mag = np.abs(np.fft.rfft(coeffs, n_fft))
    omega = np.linspace(0.0, np.pi, mag.size)
    peak = mag[omega >= edge].max()
    dc = abs(coeffs.sum())
    if peak == 0.0:
        return float("inf")
    return float(20.0 * np.log10(dc / peak))


def _kaiser_lowpass(length, n_subbands, beta):
    return firwin(length, 1.0 / (2 * n_subbands), window=("kaiser", beta), scale=True)


def design_prototype(n_subbands, length, target_atten_db=60.0):
    """Design a Kaiser-windowed lowpass prototype with cutoff pi/(2N).

    The Kaiser shape parameter is chosen by a bounded scalar search that
    maximizes the measured stopband attenuation. Raises DesignError (with the
    best filter attached) if the target is not met.
    """
    if n_subbands < 1:
        raise ValueError("n_subbands must be >= 1")
    if length < n_subbands:
        raise ValueError(f"prototype length {length} shorter than n_subbands {n_subbands}")
    if target_atten_db <= 0:
        raise ValueError("target attenuation must be positive")

    if length == 1:
        # h_0(0) = 2 p(0) cos(pi/4) = 1 -> identity bank for N = 1
        coeffs = np.array([1.0 / np.sqrt(2.0)])
        return PrototypeFilter(coeffs, n_subbands, stopband_attenuation(coeffs, n_subbands))

    res = minimize_scalar(
        lambda b: -stopband_attenuation(_kaiser_lowpass(length, n_subbands, b), n_subbands),
        bounds=(0.0, 20.0),
        method="bounded",
        options={"xatol": 1e-4},
    )
    coeffs = _kaiser_lowpass(length, n_subbands, res.x)
    atten = stopband_attenuation(coeffs, n_subbands)
    proto = PrototypeFilter(coeffs, n_subbands, atten)
    if atten < target_atten_db:
        raise DesignError(
            f"N={n_subbands}, J={length}: best attenuation {atten:.2f} dB "
            f"< target {target_atten_db:.2f} dB",
            best=proto,
        )
    return proto


def load_prototype(path, n_subbands):
    """Read externally designed prototype coefficients (one float per line)."""
    text = Path(path).read_text()
    coeffs = np.array([float(tok) for tok in text.split()], dtype=float)
    if coeffs.size == 0:
        raise ValueError(f"{path}: no coefficients")
    return PrototypeFilter(coeffs, n_subbands, stopband_attenuation(coeffs, n_subbands))


def save_prototype(proto, path):
    np.savetxt(path, proto.coeffs, fmt="%.17g")


def modulate(prototype):
    """Cosine-modulate the prototype into N analysis filters.

    h_i(l) = 2 p(l) cos[(2i+1)(2l-(J-1)) pi/(4N) + (-1)^i pi/4]
    """
    p = prototype.coeffs
    n = prototype.n_subbands
    length = p.size
    i = np.arange(n)[:, None]
    l = np.arange(length)[None, :]
    phase = (2 * i + 1) * (2 * l - (length - 1)) * np.pi / (4 * n) + np.where(i % 2 == 0, 1.0, -1.0) * np.pi / 4
    return AnalysisBank(2.0 * p[None, :] * np.cos(phase), prototype)


def make_bank(n_subbands, length=None, target_atten_db=60.0):
    """Preset bank; length defaults to the preset J (or 1 for N=1)."""
    if length is None:
        length = PRESETS.get(n_subbands, 1 if n_subbands == 1 else 8 * n_subbands + 1)
    return modulate(design_prototype(n_subbands, length, target_atten_db))


class SubbandDecomposer:
    """Streaming analysis + critical decimation.

    Each call to ``step`` consumes N fullband samples of u and d and returns
    the N regressors u_i(k) (rows of an (N, M) array, newest sample first)
    and the N decimated desired samples d_i(kN), where kN is the last sample
    of the block.
    """

    def __init__(self, bank, filter_len):
        self.bank = bank
        self.n = bank.n_subbands
        self.taps = bank.length
        self.filter_len = int(filter_len)
        if self.filter_len < 1:
            raise ValueError("filter_len must be >= 1")
        # newest-first histories of the fullband signals
        self._u_hist = np.zeros(self.taps + self.n - 1)
        self._d_hist = np.zeros(self.taps)
        # per-subband newest-first subband input history, length M
        self.regressors = np.zeros((self.n, self.filter_len))

    def reset(self):
        self._u_hist[:] = 0.0
        self._d_hist[:] = 0.0
        self.regressors[:] = 0.0

    def step(self, u_block, d_block):
        n = self.n
        u_block = np.asarray(u_block, dtype=float)
        d_block = np.asarray(d_block, dtype=float)
        if u_block.shape != (n,) or d_block.shape != (n,):
            raise ValueError(f"blocks must have exactly {n} samples")

        hist = self._u_hist
        hist[n:] = hist[:-n].copy()
        hist[:n] = u_block[::-1]
        # windows[j] = [u(kN - j), ..., u(kN - j - J + 1)]
        windows = np.lib.stride_tricks.sliding_window_view(hist, self.taps)
        new = self.bank.filters @ windows.T  # (N subbands, N newest-first outputs)

        reg = self.regressors
        m = self.filter_len
        if m > n:
            reg[:, n:] = reg[:, : m - n].copy()
            reg[:, :n] = new
        else:
            reg[:, :] = new[:, :m]

        dh = self._d_hist
        if self.taps > n:
            dh[n:] = dh[: self.taps - n].copy()
            dh[:n] = d_block[::-1]
        else:
            dh[:] = d_block[::-1][: self.taps]
        d_sub = self.bank.filters @ dh
        return reg.copy(), d_sub


def decompose_step(dec, u_block, d_block):
    return dec.step(u_block, d_block)
