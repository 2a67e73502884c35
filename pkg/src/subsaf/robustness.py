"""Robust scaling rules q(e) and the M-estimate threshold tracker."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RULES = ("modified_huber", "correntropy", "unity")


@dataclass
class ScalingRule:
    """Maps subband errors to update weights q in [0, 1].

    ``modified_huber`` gates each subband with a hard threshold xi_i that
    comes from a :class:`ThresholdState`; ``correntropy`` uses a Gaussian
    kernel of width ``kernel_width``; ``unity`` always returns 1 (plain NSAF).
    """

    variant: str = "modified_huber"
    kappa: float = 2.576
    kernel_width: float = 1.0

    def __post_init__(self):
        if self.variant not in RULES:
            raise ValueError(f"unknown scaling rule {self.variant!r}")
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.kernel_width <= 0:
            raise ValueError("kernel_width must be positive")

    @property
    def needs_threshold(self):
        return self.variant == "modified_huber"

    def scale(self, e, xi=None):
        return scale(self, e, xi)


def scale(rule, e, xi=None):
    e = np.asarray(e, dtype=float)
    if rule.variant == "modified_huber":
        return (np.abs(e) < xi).astype(float)
    if rule.variant == "correntropy":
        return np.exp(-(e * e) / (2.0 * rule.kernel_width ** 2))
    return np.ones_like(e)


def rho(q):
    """Effective covariance-reduction weight 2q - q^2."""
    return 2.0 * q - q * q


def correction_factor(n_window):
    return 1.483 * (1.0 + 5.0 / (n_window - 1))


class ThresholdState:
    """Impulse-free error variance tracking for all N subbands at once.

    sigma_e2 <- theta * sigma_e2 + c_sigma (1 - theta) median(window), with
    theta forced to 0 on the first update. Until the window has seen n_window
    entries, the median runs over the entries pushed so far.
    """

    def __init__(self, n_subbands, filter_len, kappa=2.576, tau=2.0, n_window=20, theta=None):
        if n_window < 2:
            raise ValueError("n_window must be >= 2")
        if tau < 1:
            raise ValueError("tau must be >= 1")
        self.n_subbands = n_subbands
        self.kappa = kappa
        self.n_window = int(n_window)
        self.tau = tau
        self.theta = 1.0 - n_subbands / (tau * filter_len) if theta is None else float(theta)
        if not 0.0 <= self.theta < 1.0:
            raise ValueError(f"theta={self.theta} outside [0, 1)")
        self.c_sigma = correction_factor(self.n_window)
        self.window = np.zeros((n_subbands, self.n_window))
        self.count = 0
        self.sigma_e2 = np.zeros(n_subbands)

    def update(self, e, frozen=False):
        """Push e^2 (or 0 when frozen) and return the thresholds xi_i = kappa * sigma_e,i."""
        pos = self.count % self.n_window
        self.window[:, pos] = 0.0 if frozen else np.square(e)
        filled = min(self.count + 1, self.n_window)
        med = np.median(self.window[:, :filled], axis=1)
        theta = 0.0 if self.count == 0 else self.theta
        self.sigma_e2 = theta * self.sigma_e2 + self.c_sigma * (1.0 - theta) * med
        self.count += 1
        return self.kappa * np.sqrt(self.sigma_e2)


def update_threshold(st, e, frozen=False):
    return st.update(e, frozen)
