"""l0-regularized RLS decision-feedback filter bank.

Each device owns one filter stored at fixed length L (M feedforward taps,
plus N feedback taps for decision-feedback banks). Inside the filter bank the
feedback tap of device j carries j's decision once j has been detected in the
current symbol period and zero otherwise; this is the stage-ordered vector of
:func:`augment_input` up to a fixed permutation, and it keeps each learned tap
tied to one interferer when the detection order is refreshed.
"""
from dataclasses import dataclass

import numpy as np

from . import complexity as cx
from ._accel import USING_NUMBA, jit
from .errors import ConfigError, NumericalError


@dataclass(frozen=True)
class RlsHyperParams:
    lam: float = 0.92
    gamma: float = 1e-4
    beta: float = 10.0
    delta: float = 0.7
    relative_delta: bool = False   # scale delta by the received power per antenna

    def __post_init__(self):
        if not 0 < self.lam <= 1:
            raise ConfigError("lambda must be in (0,1]")
        if self.gamma < 0:
            raise ConfigError("gamma must be >= 0")
        if self.beta <= 0:
            raise ConfigError("beta must be > 0")
        if self.delta <= 0:
            raise ConfigError("delta must be > 0")


PRESETS = {
    "std": RlsHyperParams(lam=0.998, gamma=0.0, beta=10.0, delta=0.5),
    "reg": RlsHyperParams(lam=0.92, gamma=1e-4, beta=10.0, delta=0.7),
    # long memory and a ridge start worth ~18 pilot periods of received power
    "desk": RlsHyperParams(lam=0.998, gamma=0.0, beta=10.0, delta=18.0, relative_delta=True),
}


class FilterBank:
    """Per-device weights, inverse correlation matrices, LSE costs and order."""

    def __init__(self, M, N, hyper, feedback=True, power=1.0):
        self.M, self.N = int(M), int(N)
        self.hyper = hyper
        self.feedback = bool(feedback)
        self.L = self.M + self.N if feedback else self.M
        # P starts (and restarts after a fault) at I / delta
        self.delta = hyper.delta * (float(power) if hyper.relative_delta else 1.0)
        if not self.delta > 0:
            raise ConfigError("effective delta must be > 0")
        self.weights = np.zeros((self.N, self.L), dtype=complex)
        eye = np.eye(self.L, dtype=complex) / self.delta
        self.inv_corr = np.repeat(eye[None], self.N, axis=0)
        self.costs = np.zeros(self.N)
        self.order = np.arange(self.N, dtype=np.int64)
        self.resets = np.zeros(1, dtype=np.int64)
        self.steps = np.zeros(1, dtype=np.int64)    # symbol periods seen

    def copy(self):
        out = FilterBank.__new__(FilterBank)
        out.__dict__.update(self.__dict__)
        for name in ("weights", "inv_corr", "costs", "order", "resets", "steps"):
            setattr(out, name, getattr(self, name).copy())
        return out

    def comparison_costs(self, regularized=True):
        """LSE costs, plus gamma times the smooth l0 surrogate when regularized."""
        J = self.costs.copy()
        if regularized and self.hyper.gamma > 0:
            J += self.hyper.gamma * l0_surrogate(self.weights, self.hyper.beta)
        return J

    def mse(self):
        """Costs normalised by the total forgetting weight: per-device output MSE."""
        return cost_to_mse(self.costs, self.hyper.lam, int(self.steps[0]))


def cost_to_mse(J, lam, steps):
    if steps <= 0:
        return np.ones_like(J)
    w = steps if lam == 1.0 else (1.0 - lam ** steps) / (1.0 - lam)
    return J / w


def l0_surrogate(w, beta):
    """sum_p 1 - exp(-beta |w_p|) along the last axis."""
    return np.sum(1.0 - np.exp(-beta * np.abs(w)), axis=-1)


# ---------------------------------------------------------------- kernels

@jit
def _attract_inplace(w, gamma, beta):
    if gamma <= 0.0:
        return
    band = 1.0 / beta
    for p in range(w.shape[0]):
        a = abs(w[p])
        if a > 0.0 and a <= band:
            s = gamma * beta * (beta - beta * beta * a)
            if s > a:
                s = a
            w[p] = w[p] * (1.0 - s / a)


@jit
def _rls_step_loops(w, P, y, desired, lam, gamma, beta, delta, counters):
    L = w.shape[0]
    # real arithmetic on an interleaved view vectorises far better than complex
    Pv = P.view(np.float64)
    gr = np.zeros(L)
    gi = np.zeros(L)
    nnz = 0
    for j in range(L):
        a = y[j].real
        b = y[j].imag
        if a != 0.0 or b != 0.0:
            nnz += 1
            # P is Hermitian: column j of P is the conjugate of row j
            for i in range(L):
                pr = Pv[j, 2 * i]
                pi = Pv[j, 2 * i + 1]
                gr[i] += pr * a + pi * b
                gi[i] += pr * b - pi * a
    g = gr + 1j * gi
    den = lam
    out = 0j
    for i in range(L):
        den += (np.conj(y[i]) * g[i]).real
        out += np.conj(w[i]) * y[i]
    eps = desired - out
    ok = np.isfinite(den) and den > 0.0
    if ok:
        inv = 1.0 / den
        ec = np.conj(eps) * inv
        for i in range(L):
            w[i] += g[i] * ec
        _attract_inplace(w, gamma, beta)
        il = 1.0 / lam
        # full contiguous rows; with h = g/sqrt(den) every product h_i conj(h_j)
        # is the exact conjugate of its mirror, so P stays exactly Hermitian
        s = np.sqrt(inv)
        hr = gr * s
        hi = gi * s
        for i in range(L):
            a = hr[i]
            b = hi[i]
            for j in range(L):
                c = hr[j]
                d = hi[j]
                Pv[i, 2 * j] = (Pv[i, 2 * j] - (a * c + b * d)) * il
                Pv[i, 2 * j + 1] = (Pv[i, 2 * j + 1] - (b * c - a * d)) * il
        post = 0j
        for i in range(L):
            post += np.conj(w[i]) * y[i]
        eps_post = desired - post
        ok = np.isfinite(eps_post.real) and np.isfinite(eps_post.imag)
    else:
        eps_post = eps
    counters[1] += L * nnz + L * (L + 1) // 2 + 3 * L
    counters[0] += L
    if not ok:
        for i in range(L):
            w[i] = 0.0
            for j in range(L):
                P[i, j] = 0.0
            P[i, i] = 1.0 / delta
        return eps, 0j, False
    return eps, eps_post, True


def _rls_step_numpy(w, P, y, desired, lam, gamma, beta, delta, counters):
    L = w.shape[0]
    nnz = int(np.count_nonzero(y))
    g = P @ y
    den = lam + float(np.real(np.vdot(y, g)))
    eps = desired - np.vdot(w, y)
    ok = np.isfinite(den) and den > 0.0
    if ok:
        w += g * (np.conj(eps) / den)
        _attract_inplace(w, gamma, beta)
        P -= np.outer(g / den, g.conj())
        P /= lam
        P[...] = 0.5 * (P + P.conj().T)
        eps_post = desired - np.vdot(w, y)
        ok = bool(np.isfinite(eps_post))
    else:
        eps_post = eps
    counters[1] += L * nnz + L * (L + 1) // 2 + 3 * L
    counters[0] += L
    if not ok:
        w[:] = 0.0
        P[...] = np.eye(L) / delta
        return eps, 0j, False
    return eps, eps_post, True


_rls_step = _rls_step_loops if USING_NUMBA else _rls_step_numpy


@jit
def _bank_step(W, P, J, resets, dev, y, desired, lam, gamma, beta, delta, counters):
    eps, eps_post, ok = _rls_step(W[dev], P[dev], y, desired, lam, gamma, beta, delta, counters)
    if ok:
        J[dev] = lam * J[dev] + abs(eps_post) ** 2
    else:
        J[dev] = 0.0
        resets[0] += 1
    return eps


@jit
def _order_from_costs(J, W, gamma, beta, regularized, order):
    N = J.shape[0]
    key = J.copy()
    if regularized and gamma > 0.0:
        for n in range(N):
            acc = 0.0
            for p in range(W.shape[1]):
                acc += 1.0 - np.exp(-beta * abs(W[n, p]))
            key[n] += gamma * acc
    # stable insertion sort: ties keep the lower device index first
    for n in range(N):
        order[n] = n
    for i in range(1, N):
        cur = order[i]
        kc = key[cur]
        j = i - 1
        while j >= 0 and key[order[j]] > kc:
            order[j + 1] = order[j]
            j -= 1
        order[j + 1] = cur


@jit
def _fill_input(yv, ycol, M, feedback, order, stage, fb_values):
    for i in range(M):
        yv[i] = ycol[i]
    if feedback:
        for q in range(yv.shape[0] - M):
            yv[M + q] = 0.0
        for q in range(stage):
            j = order[q]
            yv[M + j] = fb_values[j]


@jit
def _train_kernel(W, P, J, order, resets, steps, Yp, pilots, feedback, lam, gamma, beta, delta,
                  regularized, counters, stats_on, Sr, SR, Sxx, Sw):
    M, Tp = Yp.shape
    N = W.shape[0]
    L = W.shape[1]
    yv = np.zeros(L, dtype=np.complex128)
    for t in range(Tp):
        _order_from_costs(J, W, gamma, beta, regularized, order)
        steps[0] += 1
        for s in range(N):
            dev = order[s]
            _fill_input(yv, Yp[:, t], M, feedback, order, s, pilots[:, t])
            _bank_step(W, P, J, resets, dev, yv, pilots[dev, t], lam, gamma, beta, delta, counters)
            if stats_on:
                _stats_push(Sr[dev], SR[dev], Sxx, Sw, dev, yv, pilots[dev, t], lam, counters)
    _order_from_costs(J, W, gamma, beta, regularized, order)


@jit
def _stats_push(r, R, Sxx, Sw, dev, y, x, lam, counters):
    """Exponentially weighted sums of y x*, y y^H, |x|^2 and the weights."""
    L = y.shape[0]
    xc = np.conj(x)
    for i in range(L):
        r[i] = lam * r[i] + y[i] * xc
    for i in range(L):
        yi = y[i]
        R[i, i] = lam * R[i, i].real + (yi * np.conj(yi)).real
        for j in range(i + 1, L):
            v = lam * R[i, j] + yi * np.conj(y[j])
            R[i, j] = v
            R[j, i] = np.conj(v)
    Sxx[dev] = lam * Sxx[dev] + abs(x) ** 2
    Sw[dev] = lam * Sw[dev] + 1.0
    counters[5] += L + L * (L + 1) // 2


@jit
def _stats_eval(w, r, R, sxx, sw, zeta2_min, counters):
    """Equivalent-channel gain and noise variance of one filter output."""
    L = w.shape[0]
    mu = 0j
    if sxx > 0.0:
        acc = 0j
        for i in range(L):
            acc += np.conj(w[i]) * r[i]
        mu = acc / sxx
    q = 0.0
    for i in range(L):
        acc = 0j
        for j in range(L):
            acc += R[i, j] * w[j]
        q += (np.conj(w[i]) * acc).real
    counters[5] += L * L + 2 * L
    z2 = zeta2_min
    if sw > 0.0:
        z2 = q / sw - abs(mu) ** 2 * sxx / sw
        if not z2 > zeta2_min:
            z2 = zeta2_min
    return mu, z2


# ------------------------------------------------------------- public API

def augment_input(y, prior_decisions, stage, N):
    """Input vector of the stage-th filter (stages numbered from 1).

    Stage 1 sees ``y`` alone; later stages see ``y`` followed by the earlier
    decisions, zero padded to length M+N.
    """
    y = np.asarray(y, dtype=complex)
    d = np.asarray(prior_decisions, dtype=complex).ravel()
    if not 1 <= stage <= N:
        raise ValueError(f"stage {stage} outside 1..{N}")
    if len(d) != stage - 1:
        raise ValueError(f"stage {stage} needs {stage - 1} prior decisions, got {len(d)}")
    if stage == 1:
        return y.copy()
    out = np.zeros(len(y) + N, dtype=complex)
    out[:len(y)] = y
    out[len(y):len(y) + len(d)] = d
    return out


def kalman_gain(P, y, lam):
    """k = P y / (lam + y^H P y)."""
    g = np.asarray(P) @ np.asarray(y)
    den = lam + np.vdot(y, g)
    if not np.isfinite(den):
        raise NumericalError("non-finite Kalman gain denominator")
    return g / den.real


def zero_attraction(w, gamma, beta):
    """Additive l0 zero-attraction adjustment for each coefficient.

    Coefficients with 0 < |w| <= 1/beta are pulled toward zero by
    gamma*beta*(beta - beta^2 |w|) along their phase, never past zero;
    larger coefficients are untouched.
    """
    w = np.asarray(w, dtype=complex)
    new = w.copy().ravel()
    _attract_inplace(new, float(gamma), float(beta))
    return new.reshape(w.shape) - w


def rls_update(bank, device, y_n, desired, counters=None):
    """One l0-RLS step for ``device``; returns the a-priori error.

    ``y_n`` shorter than the bank's filter length is zero padded.
    """
    if not 0 <= device < bank.N:
        raise ValueError("device index out of range")
    y = np.zeros(bank.L, dtype=complex)
    y_n = np.asarray(y_n, dtype=complex)
    if len(y_n) > bank.L:
        raise ValueError("input longer than filter")
    y[:len(y_n)] = y_n
    counters = cx.new_counters() if counters is None else counters
    h = bank.hyper
    return complex(_bank_step(bank.weights, bank.inv_corr, bank.costs, bank.resets, int(device),
                              y, complex(desired), h.lam, h.gamma, h.beta, bank.delta, counters))


def select_detection_order(bank, remaining, regularized=True):
    """Device in ``remaining`` with the smallest cost (lowest index on ties)."""
    remaining = sorted(int(j) for j in remaining)
    if not remaining:
        raise ValueError("no remaining devices")
    J = bank.comparison_costs(regularized)
    return min(remaining, key=lambda j: (J[j], j))


def train_on_pilots(bank, pilots, Y_pilot, counters=None, regularized=True, stats=None):
    """Run the training recursion over every pilot instant; mutates ``bank``."""
    pilots = np.ascontiguousarray(pilots, dtype=complex)
    Yp = np.ascontiguousarray(Y_pilot, dtype=complex)
    if pilots.shape[0] != bank.N or Yp.shape[0] != bank.M or pilots.shape[1] != Yp.shape[1]:
        raise ConfigError("pilot/received dimensions do not match the filter bank")
    counters = cx.new_counters() if counters is None else counters
    h = bank.hyper
    if stats is None:
        from .idd import EquivalentChannelStats
        st, on = EquivalentChannelStats.empty(bank.N, 0), False
    else:
        st, on = stats, True
    if Yp.shape[1] == 0:
        return bank
    _train_kernel(bank.weights, bank.inv_corr, bank.costs, bank.order, bank.resets, bank.steps,
                  Yp, pilots, bank.feedback, h.lam, h.gamma, h.beta, bank.delta, bool(regularized), counters,
                  on, st.r, st.R, st.sxx, st.sw)
    return bank
