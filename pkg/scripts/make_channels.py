"""Regenerate the bundled synthetic echo-path stand-ins in src/subsaf/data/."""

from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "subsaf" / "data"


def _unit(h):
    return h / np.linalg.norm(h)


def sparse(length, g, onset, n_active=12):
    # network-hybrid style: bulk delay, one short oscillating burst
    h = np.zeros(length)
    n = np.arange(n_active)
    burst = np.cos(0.9 * np.pi * n + 0.3) * np.exp(-n / 3.0) + 0.05 * g.standard_normal(n_active)
    h[onset:onset + n_active] = burst
    tail = np.arange(length - onset - n_active)
    h[onset + n_active:] = 1e-3 * g.standard_normal(tail.size) * np.exp(-tail / 20.0)
    return _unit(h)


def dispersive(length, g, onset, decay):
    # long exponentially decaying, band-limited response
    n = np.arange(length - onset)
    x = g.standard_normal(n.size)
    x = np.convolve(x, np.hanning(5), mode="same")
    h = np.zeros(length)
    h[onset:] = x * np.exp(-n / decay)
    return _unit(h)


def acoustic_sparse(length, g):
    h = np.zeros(length)
    for delay, amp in [(20, 1.0), (75, -0.5), (160, 0.3), (290, -0.15), (430, 0.08)]:
        h[delay:delay + 3] += amp * np.array([0.6, 1.0, 0.4])
    h += 1e-3 * g.standard_normal(length) * np.exp(-np.arange(length) / 150.0)
    return _unit(h)


def main():
    g = np.random.Generator(np.random.Philox(20220607))
    chans = {
        "sparse128": sparse(128, g, onset=28),
        "dispersive128": dispersive(128, g, onset=6, decay=150.0),
        "sparse512": acoustic_sparse(512, g),
        "dispersive512": dispersive(512, g, onset=10, decay=120.0),
    }
    OUT.mkdir(parents=True, exist_ok=True)
    for name, h in chans.items():
        np.savetxt(OUT / f"{name}.txt", h, fmt="%.17g")


if __name__ == "__main__":
    main()
