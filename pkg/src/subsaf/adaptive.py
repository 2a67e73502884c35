"""Subband adaptive filter engines: NSAF / M-NSAF and GR-SAF.

All engines consume one decimated tick at a time: an (N, M) array of subband
regressors and the N decimated desired samples. Subband quantities are kept
as length-N arrays and updated together.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .robustness import ScalingRule, ThresholdState, rho, scale

MSD_FLOOR_DB = -320.0


class NonFiniteInput(ValueError):
    pass


@dataclass
class SubbandTick:
    regressors: np.ndarray  # (N, M), newest sample first
    desired: np.ndarray  # (N,)

    def check(self, n_subbands, filter_len):
        if self.regressors.shape != (n_subbands, filter_len) or self.desired.shape != (n_subbands,):
            raise ValueError(
                f"tick shape {self.regressors.shape}/{self.desired.shape} does not match "
                f"N={n_subbands}, M={filter_len}"
            )
        if not (np.all(np.isfinite(self.regressors)) and np.all(np.isfinite(self.desired))):
            raise NonFiniteInput("non-finite sample in subband tick")


@dataclass
class StepResult:
    errors: np.ndarray
    q: np.ndarray
    msd_decrement: float = 0.0


class RobustGate:
    """A scaling rule together with the threshold state it needs (if any)."""

    def __init__(self, rule, n_subbands, filter_len, tau=2.0, n_window=20, theta=None):
        self.rule = rule
        self.threshold = None
        if rule.needs_threshold:
            self.threshold = ThresholdState(n_subbands, filter_len, rule.kappa, tau, n_window, theta)

    def weights(self, e):
        xi = self.threshold.update(e) if self.threshold is not None else None
        return scale(self.rule, e, xi)

    def hold(self):
        # double-talk freeze: the median window receives zeros
        if self.threshold is not None:
            self.threshold.update(np.zeros(self.threshold.n_subbands), frozen=True)


def make_gate(rule, n_subbands, filter_len, **kw):
    if rule is None:
        rule = ScalingRule("unity")
    return RobustGate(rule, n_subbands, filter_len, **kw)


def msd(w, w_true):
    """10 log10 ||w_true - w||^2, floored at -320 dB."""
    w = np.asarray(w, dtype=float)
    w_true = np.asarray(w_true, dtype=float)
    if w.shape != w_true.shape:
        raise ValueError(f"length mismatch {w.shape} vs {w_true.shape}")
    return msd_from_sq(float(np.sum((w_true - w) ** 2)))


def msd_from_sq(sq):
    if sq <= 0.0:
        return MSD_FLOOR_DB
    return max(10.0 * np.log10(sq), MSD_FLOOR_DB)


def theoretical_msd_decrement(phi_diag, regressors, q, sigma_nu2):
    """Predicted one-step MSD change for a diagonal covariance; always <= 0."""
    u2 = np.square(regressors)
    num = u2 @ np.square(phi_diag)
    den = u2 @ phi_diag + sigma_nu2
    r = rho(np.asarray(q, dtype=float))
    with np.errstate(invalid="ignore", divide="ignore"):
        terms = np.where(num > 0, r * num / den, 0.0)
    return -float(np.sum(terms))


class MnsafState:
    """M-estimate NSAF (plain NSAF when the gate's rule is ``unity``).

    w(k) = w(k-1) + mu * sum_i q_i e_i u_i / (||u_i||^2 + delta_i)

    delta_i is ``reg`` plus, with ``silence_guard``, 20 * sigma_u,i^2 / N where
    sigma_u,i^2 tracks the newest subband input power.
    """

    kind = "mnsaf"

    def __init__(self, n_subbands, filter_len, gate, mu=1.0, reg=0.0, silence_guard=False, beta=None):
        if mu <= 0:
            raise ValueError("mu must be positive")
        if reg < 0:
            raise ValueError("reg must be >= 0")
        self.n = n_subbands
        self.m = filter_len
        self.gate = gate
        self.mu = mu
        self.reg = reg
        self.silence_guard = silence_guard
        self.beta = 1.0 - 1.0 / (2 * filter_len) if beta is None else beta
        self.sigma_u2 = np.zeros(n_subbands)
        self.w = np.zeros(filter_len)

    def step(self, tick):
        tick.check(self.n, self.m)
        U, d = tick.regressors, tick.desired
        e = d - U @ self.w
        q = self.gate.weights(e)
        b = self.beta
        self.sigma_u2 = b * self.sigma_u2 + (1.0 - b) * U[:, 0] ** 2
        delta = self.reg + (20.0 * self.sigma_u2 / self.n if self.silence_guard else 0.0)
        den = np.sum(U * U, axis=1) + delta
        coef = np.divide(q * e, den, out=np.zeros_like(e), where=den > 0)
        self.w = self.w + self.mu * (coef @ U)
        return StepResult(e, q)

    def hold(self, tick=None):
        self.gate.hold()


@dataclass
class GrSafParams:
    eps1: float = 1.0
    eps2: float = 1e-5
    gamma: float = 0.95
    varrho: float = 2.0
    # forgetting factor of the subband noise estimators; None -> 1 - 1/(varrho M)
    beta: float | None = None
    phi_floor: float = 1e-12
    dense: bool = False
    track_uncertainty: bool = True
    avg_uncertainty_floor: bool = True

    def __post_init__(self):
        if self.eps1 < 1:
            raise ValueError("eps1 must be >= 1")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.varrho < 1:
            raise ValueError("varrho must be >= 1")
        if self.eps2 <= 0:
            raise ValueError("eps2 must be positive")


class GrSafState:
    """General robust SAF.

    Weight update w += sum_i q_i g_i e_i with the MSD-minimizing gain

        g_i = Phi u_i / (u_i^T Phi u_i + u_i^T C_w u_i + sigma_nu,i^2)

    and covariance recursion Phi <- Phi - sum_i rho_i g_i u_i^T Phi + C_w,
    restricted to the diagonal unless ``params.dense`` is set.
    """

    kind = "grsaf"

    def __init__(self, n_subbands, filter_len, gate, params=None):
        p = params or GrSafParams()
        self.params = p
        self.n = n_subbands
        self.m = filter_len
        self.gate = gate
        self.beta = 1.0 - 1.0 / (p.varrho * filter_len) if p.beta is None else p.beta
        self.w = np.zeros(filter_len)
        self.prev_w = self.w.copy()
        if p.dense:
            self.phi = np.eye(filter_len) * (p.eps1 / filter_len)
        else:
            self.phi = np.full(filter_len, p.eps1 / filter_len)
        self.cw_diag = np.zeros(filter_len)
        self.sigma_e2 = np.zeros(n_subbands)
        self.sigma_u2 = np.zeros(n_subbands)
        self.r_vec = np.zeros((n_subbands, filter_len))
        self.sigma_nu2 = np.zeros(n_subbands)

    @property
    def phi_diag(self):
        return np.diag(self.phi).copy() if self.params.dense else self.phi

    @phi_diag.setter
    def phi_diag(self, value):
        value = np.broadcast_to(np.asarray(value, dtype=float), (self.m,))
        if self.params.dense:
            self.phi = np.diag(value)
        else:
            self.phi = value.copy()

    def step(self, tick):
        tick.check(self.n, self.m)
        p = self.params
        U, d = tick.regressors, tick.desired
        e = d - U @ self.w
        q = self.gate.weights(e)

        b = self.beta
        qe = q * e
        self.sigma_e2 = b * self.sigma_e2 + (1.0 - b) * qe * qe
        self.sigma_u2 = b * self.sigma_u2 + (1.0 - b) * U[:, 0] ** 2
        self.r_vec = b * self.r_vec + (1.0 - b) * qe[:, None] * U
        nu = self.sigma_e2 - np.sum(self.r_vec ** 2, axis=1) / (self.sigma_u2 + p.eps2)
        self.sigma_nu2 = np.where(nu > 0, nu, self.sigma_nu2)

        r = rho(q)
        U2 = U * U
        cw = self.cw_diag
        if p.dense:
            PU = U @ self.phi  # rows: (Phi u_i)^T, Phi symmetric
            den = np.sum(PU * U, axis=1) + U2 @ cw + self.sigma_nu2
            G = PU / den[:, None]
            decrement = theoretical_msd_decrement(np.diag(self.phi), U, q, self.sigma_nu2)
        else:
            phi = self.phi
            den = U2 @ (phi + cw) + self.sigma_nu2
            G = phi * U / den[:, None]
            decrement = theoretical_msd_decrement(phi, U, q, self.sigma_nu2)

        self.prev_w = self.w
        self.w = self.w + qe @ G
        dw = self.w - self.prev_w

        if p.track_uncertainty:
            cw = p.gamma * cw + (1.0 - p.gamma) * dw * dw
            if p.avg_uncertainty_floor:
                cw = np.maximum(cw, np.dot(dw, dw) / self.m)
            self.cw_diag = cw

        if p.dense:
            P = self.phi - (r[:, None] * G).T @ PU + np.diag(cw)
            P = 0.5 * (P + P.T)
            # summed downdates over non-orthogonal subbands can break definiteness
            lam, V = np.linalg.eigh(P)
            if lam[0] < p.phi_floor:
                P = (V * np.maximum(lam, p.phi_floor)) @ V.T
            self.phi = P
        else:
            shrink = np.sum(r[:, None] * G * U, axis=0)
            self.phi = np.maximum(self.phi * (1.0 - shrink) + cw, p.phi_floor)
        return StepResult(e, q, decrement)

    def hold(self, tick=None):
        self.gate.hold()


def grsaf_step(st, tick):
    return st.step(tick)


def mnsaf_step(st, tick):
    return st.step(tick)


def vr_nsaf_reference(regressors, desired, kernel_width, sigma_phi0, beta, eps2=1e-5, sigma_nu2=None):
    """Scalar-covariance GR-SAF written as a variable-regularization NSAF.

    Independent reference for the diagonal engine with C_w = 0 and
    Phi = sigma_phi^2 I. Uses the correntropy rule so no threshold state is
    involved. Returns the weight trajectory (K, M), the sigma_phi^2 trace
    before each step (K,), and the per-step regularization delta_i(k) (K, N).
    A fixed ``sigma_nu2`` replaces the running subband noise estimate.

    Per tick k and subband i (with delta_i = sigma_nu,i^2 / sigma_phi^2(k-1)):
        w(k) = w(k-1) + sum_i q_i u_i e_i / (||u_i||^2 + delta_i)
        sigma_phi^2(k) = sigma_phi^2(k-1)
                         - sum_i rho_i (||u_i||^2 / M) sigma_phi^2(k-1) / (||u_i||^2 + delta_i)
    """
    n_ticks, n_sub, m = regressors.shape
    w = [0.0] * m
    s_phi = sigma_phi0
    s_e = [0.0] * n_sub
    s_u = [0.0] * n_sub
    s_nu = [0.0] * n_sub
    rv = [[0.0] * m for _ in range(n_sub)]
    ws = np.zeros((n_ticks, m))
    phis = np.zeros(n_ticks)
    deltas = np.zeros((n_ticks, n_sub))
    for k in range(n_ticks):
        phis[k] = s_phi
        upd = [0.0] * m
        shrink = 0.0
        for i in range(n_sub):
            u = regressors[k, i]
            y = sum(u[j] * w[j] for j in range(m))
            err = desired[k, i] - y
            qi = np.exp(-err * err / (2.0 * kernel_width * kernel_width))
            s_e[i] = beta * s_e[i] + (1 - beta) * (qi * err) ** 2
            s_u[i] = beta * s_u[i] + (1 - beta) * u[0] * u[0]
            for j in range(m):
                rv[i][j] = beta * rv[i][j] + (1 - beta) * qi * u[j] * err
            est = s_e[i] - sum(x * x for x in rv[i]) / (s_u[i] + eps2)
            if sigma_nu2 is not None:
                s_nu[i] = sigma_nu2
            elif est > 0:
                s_nu[i] = est
            delta = s_nu[i] / s_phi
            deltas[k, i] = delta
            energy = sum(x * x for x in u)
            for j in range(m):
                upd[j] += qi * u[j] * err / (energy + delta)
            shrink += (2 * qi - qi * qi) * (energy / m) / (energy + delta)
        w = [w[j] + upd[j] for j in range(m)]
        s_phi = s_phi - s_phi * shrink
        ws[k] = w
    return ws, phis, deltas
