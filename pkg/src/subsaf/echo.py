"""Delayless subband echo canceler, Geigel double-talk detector and ERLE tracking."""

from __future__ import annotations

import math

import numpy as np
from scipy.signal import lfilter

from .adaptive import SubbandTick

ERLE_CAP_DB = 320.0


class GeigelDtd:
    """Declares double-talk when |d(kN)| >= T_c * max(|u(kN)|, ..., |u(kN-M+1)|).

    After a detection the adaptation stays frozen for a hangover of ``t_hold``
    (fullband samples, rounded up to whole blocks, or decimated ticks when
    ``hold_unit == "ticks"``).
    """

    def __init__(self, threshold=0.45, t_hold=256, hold_unit="samples"):
        if not 0.0 < threshold < 1.0:
            raise ValueError("Geigel threshold must lie in (0, 1)")
        if t_hold < 0:
            raise ValueError("t_hold must be >= 0")
        if hold_unit not in ("samples", "ticks"):
            raise ValueError(f"unknown hold unit {hold_unit!r}")
        self.threshold = threshold
        self.t_hold = t_hold
        self.hold_unit = hold_unit
        self.hold_counter = 0
        self.n_declared = 0

    def hold_ticks(self, n_subbands):
        if self.hold_unit == "ticks":
            return int(self.t_hold)
        return math.ceil(self.t_hold / n_subbands)

    def detect(self, d_now, u_window):
        return abs(d_now) >= self.threshold * float(np.max(np.abs(u_window)))

    def evaluate(self, d_now, u_window, n_subbands):
        """Return True if adaptation must be frozen at this tick."""
        if self.detect(d_now, u_window):
            self.hold_counter = self.hold_ticks(n_subbands)
            self.n_declared += 1
            return True
        if self.hold_counter > 0:
            self.hold_counter -= 1
            return True
        return False


class ErleTracker:
    def __init__(self, smoothing=0.999):
        self.smoothing = smoothing
        self.avg_d2 = 0.0
        self.avg_e2 = 0.0

    def update(self, d, e):
        a = self.smoothing
        self.avg_d2 = a * self.avg_d2 + (1.0 - a) * d * d
        self.avg_e2 = a * self.avg_e2 + (1.0 - a) * e * e
        if self.avg_e2 == 0.0:
            # perfect cancellation so far; undefined until anything arrives
            return ERLE_CAP_DB if self.avg_d2 > 0.0 else None
        if self.avg_d2 == 0.0:
            return -ERLE_CAP_DB
        return max(min(10.0 * math.log10(self.avg_d2 / self.avg_e2), ERLE_CAP_DB), -ERLE_CAP_DB)

    def trace(self, d, e):
        """Vectorized ERLE over whole streams (NaN where undefined)."""
        a = self.smoothing
        zi_d = [a * self.avg_d2]
        zi_e = [a * self.avg_e2]
        pd, _ = lfilter([1.0 - a], [1.0, -a], np.square(d), zi=zi_d)
        pe, _ = lfilter([1.0 - a], [1.0, -a], np.square(e), zi=zi_e)
        self.avg_d2 = float(pd[-1])
        self.avg_e2 = float(pe[-1])
        out = np.full(pd.shape, np.nan)
        both = (pe > 0) & (pd > 0)
        out[both] = np.minimum(10.0 * np.log10(pd[both] / pe[both]), ERLE_CAP_DB)
        out[(pe == 0) & (pd > 0)] = ERLE_CAP_DB
        return out


def erle_update(tr, d, e):
    return tr.update(d, e)


class EchoCanceler:
    """Runs a subband engine on decomposed signals and reports the fullband
    error e(n) = d(n) - u(n)^T w(n) from an auxiliary loop, where w(n) is the
    engine's weight vector copied once per block of N samples."""

    def __init__(self, engine, decomposer):
        if engine.n != decomposer.n or engine.m != decomposer.filter_len:
            raise ValueError("engine and decomposer dimensions differ")
        self.engine = engine
        self.decomposer = decomposer
        self.n = decomposer.n
        self.m = decomposer.filter_len
        self.copied_w = engine.w.copy()
        # newest-first fullband input history covering one block of regressors
        self._u_hist = np.zeros(self.m + self.n - 1)
        self.last_step = None

    def process_block(self, u_block, d_block, dtd=None):
        n = self.n
        u_block = np.asarray(u_block, dtype=float)
        d_block = np.asarray(d_block, dtype=float)
        hist = self._u_hist
        hist[n:] = hist[:-n].copy()
        hist[:n] = u_block[::-1]

        regs, d_sub = self.decomposer.step(u_block, d_block)
        frozen = False
        if dtd is not None:
            frozen = dtd.evaluate(d_block[-1], hist[: self.m], n)
        tick = SubbandTick(regs, d_sub)
        if frozen:
            tick.check(self.engine.n, self.engine.m)
            self.engine.hold(tick)
            self.last_step = None
            sub_err = d_sub - regs @ self.engine.w
        else:
            self.last_step = self.engine.step(tick)
            sub_err = self.last_step.errors
        self.copied_w = self.engine.w.copy()

        # rows: u(n) for the block's samples, oldest first
        windows = np.lib.stride_tricks.sliding_window_view(hist, self.m)[::-1]
        e = d_block - windows @ self.copied_w
        return e, sub_err, frozen


def process_block(ec, u_block, d_block, dtd=None):
    return ec.process_block(u_block, d_block, dtd)
