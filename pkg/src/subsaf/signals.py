"""Input signals and additive noise with deterministic, stream-separated seeding."""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import toeplitz
from scipy.signal import lfilter

NOISE_KINDS = ("none", "gaussian", "contaminated_gaussian", "alpha_stable")

# stream ids so input, noise and near-end draws never share a counter range
STREAM_INPUT = 0
STREAM_NOISE = 1
STREAM_NEAR_END = 2


def rng(seed, stream=0):
    """Counter-based generator (Philox) keyed by (seed, stream)."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(stream)])))


@dataclass
class NoiseSpec:
    kind: str = "contaminated_gaussian"
    snr_db: float = 30.0
    p_r: float = 0.001
    impulse_gain: float = 1000.0
    alpha: float = 1.6
    dispersion: float = 1.0 / 30.0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if not 0.0 <= self.p_r <= 1.0:
            raise ValueError("p_r must lie in [0, 1]")
        if not 0.0 < self.alpha <= 2.0:
            raise ValueError("alpha must lie in (0, 2]")
        if self.dispersion <= 0:
            raise ValueError("dispersion must be positive")
        if not np.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite")
        if self.impulse_gain < 0:
            raise ValueError("impulse_gain must be nonnegative")


@dataclass
class SignalSource:
    kind: str = "ar1"
    pole: float = 0.95
    samples: np.ndarray | None = None
    path: str | None = None

    def __post_init__(self):
        if self.kind not in ("ar1", "white", "file", "speechlike"):
            raise ValueError(f"unknown source kind {self.kind!r}")
        if self.kind == "ar1" and not abs(self.pole) < 1:
            raise ValueError("AR(1) pole must satisfy |pole| < 1")
        if self.kind == "file" and self.samples is None:
            if self.path is None:
                raise ValueError("file source needs a path")
            self.samples = load_pcm(self.path)

    def generate(self, n, seed):
        if self.kind == "ar1":
            return gen_ar1(self.pole, n, seed)
        if self.kind == "white":
            return gen_ar1(0.0, n, seed)
        if self.kind == "speechlike":
            return gen_speechlike(n, seed)
        reps = int(np.ceil(n / self.samples.size))
        return np.tile(self.samples, reps)[:n].copy()

    def autocorrelation(self, n_lags):
        """Analytic autocorrelation r(0..n_lags-1), or None if unavailable."""
        if self.kind == "ar1":
            return ar1_autocorrelation(self.pole, n_lags)
        if self.kind == "white":
            return ar1_autocorrelation(0.0, n_lags)
        return None


def gen_ar1(pole, n, seed, stream=STREAM_INPUT):
    """x(t) = pole * x(t-1) + w(t) with unit-variance Gaussian w and zero initial state."""
    if not abs(pole) < 1:
        raise ValueError("AR(1) pole must satisfy |pole| < 1")
    if n <= 0:
        raise ValueError("n must be positive")
    w = rng(seed, stream).standard_normal(int(n))
    if pole == 0.0:
        return w
    return lfilter([1.0], [1.0, -pole], w)


def ar1_autocorrelation(pole, n_lags):
    return pole ** np.arange(n_lags) / (1.0 - pole * pole)


def eigenvalue_spread(r):
    """Condition number of the symmetric Toeplitz matrix built from autocorrelation r."""
    eig = np.linalg.eigvalsh(toeplitz(r))
    return float(eig[-1] / eig[0])


def output_power(w_true, r):
    """sigma_dbar^2 = w^T R w for a stationary input with autocorrelation r."""
    w_true = np.asarray(w_true, dtype=float)
    return float(w_true @ toeplitz(r[: w_true.size]) @ w_true)


def gen_speechlike(n, seed, pole=0.9, syllable=800, gap_prob=0.3, stream=STREAM_INPUT):
    """Amplitude-modulated AR(1) with silent gaps, peak-normalized to 1.

    Bundled stand-in for recorded speech so that the test suite runs offline.
    """
    g = rng(seed, stream)
    x = lfilter([1.0], [1.0, -pole], g.standard_normal(int(n)))
    n_seg = int(np.ceil(n / syllable))
    levels = np.exp(g.normal(0.0, 0.5, n_seg))
    levels[g.random(n_seg) < gap_prob] = 0.0
    env = np.repeat(levels, syllable)[:n]
    # raised-cosine taper inside each segment
    env = env * np.tile(np.sin(np.pi * (np.arange(syllable) + 0.5) / syllable), n_seg)[:n] ** 0.5
    x = x * env
    peak = np.max(np.abs(x))
    return x / peak if peak > 0 else x


def gen_alpha_stable(alpha, dispersion, n, g):
    """Symmetric alpha-stable draws with characteristic function exp(-dispersion |t|^alpha).

    Angle/exponential transformation (Chambers-Mallows-Stuck, beta = 0).
    """
    v = g.uniform(-np.pi / 2, np.pi / 2, n)
    w = g.exponential(1.0, n)
    if alpha == 1.0:
        x = np.tan(v)
    else:
        x = (np.sin(alpha * v) / np.cos(v) ** (1.0 / alpha)
             * (np.cos((1.0 - alpha) * v) / w) ** ((1.0 - alpha) / alpha))
    return dispersion ** (1.0 / alpha) * x


def gaussian_variance(spec, system_output_power):
    return system_output_power * 10.0 ** (-spec.snr_db / 10.0)


def gen_noise(spec, system_output_power, n, seed, stream=STREAM_NOISE):
    if system_output_power <= 0:
        raise ValueError("system output power must be positive")
    if n <= 0:
        raise ValueError("n must be positive")
    n = int(n)
    g = rng(seed, stream)
    if spec.kind == "none":
        return np.zeros(n)
    if spec.kind == "alpha_stable":
        return gen_alpha_stable(spec.alpha, spec.dispersion, n, g)
    sigma_g = np.sqrt(gaussian_variance(spec, system_output_power))
    noise = sigma_g * g.standard_normal(n)
    if spec.kind == "contaminated_gaussian":
        hits = g.random(n) < spec.p_r
        eta = np.sqrt(spec.impulse_gain * system_output_power) * g.standard_normal(n)
        noise += hits * eta
    return noise


def load_pcm(path):
    """Read a 16-bit mono WAV/raw PCM file or a float-per-line text file, scaled to [-1, 1]."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    raw = path.read_bytes()
    if not raw:
        raise ValueError(f"{path}: empty file")
    if raw[:4] == b"RIFF":
        with wave.open(str(path), "rb") as wf:
            if wf.getsampwidth() != 2 or wf.getnchannels() != 1:
                raise ValueError(f"{path}: only 16-bit mono PCM is supported")
            data = np.frombuffer(wf.readframes(wf.getnframes()), dtype="<i2")
        x = data.astype(float) / 32768.0
    elif path.suffix.lower() in (".pcm", ".raw", ".s16"):
        if len(raw) % 2:
            raise ValueError(f"{path}: odd byte count for 16-bit PCM")
        x = np.frombuffer(raw, dtype="<i2").astype(float) / 32768.0
    else:
        try:
            x = np.array([float(tok) for tok in raw.decode().split()], dtype=float)
        except (UnicodeDecodeError, ValueError) as exc:
            raise ValueError(f"{path}: unsupported format") from exc
        peak = np.max(np.abs(x)) if x.size else 0.0
        if peak > 1.0:
            x = x / peak
    if x.size == 0:
        raise ValueError(f"{path}: no samples")
    return x
