"""Shadow-area reliability test, constellation lists and the adaptive detectors.

Symbols are handled as indices into ``alphabet.points`` (0 = inactive).
"""
from dataclasses import dataclass
import enum

import numpy as np

from . import complexity as cx
from ._accel import jit
from .adaptive import (PRESETS, FilterBank, _bank_step, _fill_input, _order_from_costs,
                       _stats_eval, _stats_push, train_on_pilots)
from .errors import ConfigError
from .idd import ZETA2_MIN, EquivalentChannelStats, log_symbol_priors


class Variant(str, enum.Enum):
    AA_RLS = "AA_RLS"
    AA_CL_RLS = "AA_CL_RLS"
    AA_RLS_DF = "AA_RLS_DF"
    AA_CL_DF = "AA_CL_DF"

    @property
    def feedback(self):
        return self in (Variant.AA_RLS_DF, Variant.AA_CL_DF)

    @property
    def use_list(self):
        return self in (Variant.AA_CL_RLS, Variant.AA_CL_DF)


@dataclass(frozen=True)
class SacConfig:
    """Reliability disks: radius 1 - 1/lam around 0, 1/lam around active points."""
    lambda_rel: float = 2.0

    def __post_init__(self):
        if np.any(np.asarray(self.lambda_rel, dtype=float) <= 1):
            raise ConfigError("SAC lambda must be > 1")

    @property
    def zero_radius(self):
        return 1.0 - 1.0 / np.asarray(self.lambda_rel, dtype=float)

    @property
    def active_radius(self):
        return 1.0 / np.asarray(self.lambda_rel, dtype=float)

    def radii(self, N, scale=1.0):
        r0 = np.broadcast_to(self.zero_radius * scale, (N,)).astype(float)
        r1 = np.broadcast_to(self.active_radius * scale, (N,)).astype(float)
        return np.ascontiguousarray(r0), np.ascontiguousarray(r1)


FORCE_NONE, FORCE_RELIABLE, FORCE_UNRELIABLE = 0, 1, 2
_FORCE = {None: FORCE_NONE, "reliable": FORCE_RELIABLE, "unreliable": FORCE_UNRELIABLE}


# ---------------------------------------------------------------- kernels

@jit
def _metric(z, x, lp, z2, use_priors):
    d = abs(z - x) ** 2
    if use_priors:
        return d / z2 - lp
    return d


@jit
def _slice_idx(z, pts, lp, z2, use_priors):
    best = 0
    bm = _metric(z, pts[0], lp[0], z2, use_priors)
    for i in range(1, pts.shape[0]):
        m = _metric(z, pts[i], lp[i], z2, use_priors)
        if m < bm:
            bm = m
            best = i
    return best


@jit
def _rank(z, pts, lp, z2, use_priors, K, cand):
    """Indices of the K best points by slicer metric (stable); returns count."""
    n = pts.shape[0]
    met = np.empty(n)
    idx = np.empty(n, dtype=np.int64)
    cnt = 0
    for i in range(n):
        m = _metric(z, pts[i], lp[i], z2, use_priors)
        if m < np.inf:
            j = cnt - 1
            while j >= 0 and met[j] > m:
                met[j + 1] = met[j]
                idx[j + 1] = idx[j]
                j -= 1
            met[j + 1] = m
            idx[j + 1] = i
            cnt += 1
    if K < cnt:
        cnt = K
    for i in range(cnt):
        cand[i] = idx[i]
    return cnt


@jit
def _sac(z, pts, r0, r1):
    if abs(z) <= r0:
        return True
    for i in range(1, pts.shape[0]):
        if abs(z - pts[i]) <= r1:
            return True
    return False


@jit
def _unbias(out, mu, z2):
    m2 = abs(mu) ** 2
    if m2 > 1e-24:
        return out / mu, z2 / m2
    return out, z2


@jit
def _continue_branch(rwork, Hh, W, order, start, pts, lp_t, mu_cur, z2_cur, stats_on,
                     use_priors, bv, counters):
    """Conventional SIC over stages start..N-1 on a channel-domain residual."""
    M = rwork.shape[0]
    N = order.shape[0]
    for q in range(start, N):
        j = order[q]
        z = 0j
        for i in range(M):
            z += np.conj(W[j, i]) * rwork[i]
        mu = 1.0 + 0j
        z2 = 1.0
        if stats_on:
            mu = mu_cur[j]
            z2 = z2_cur[j]
        zu, z2u = _unbias(z, mu, z2)
        k = _slice_idx(zu, pts, lp_t[j], z2u, use_priors)
        bv[j] = k
        v = pts[k]
        if v != 0:
            for i in range(M):
                rwork[i] -= Hh[i, j] * v
        counters[2] += 2 * M
    res = 0.0
    for i in range(M):
        res += rwork[i].real ** 2 + rwork[i].imag ** 2
    counters[3] += M
    return res


@jit
def _detect_kernel(W, P, J, order, resets, steps, Yd, Hh, pts, feedback, use_list, K, r0, r1,
                   force_sac, lam, gamma, beta, delta, regularized, adapt,
                   use_priors, logprior, stats_on, Sr, SR, Sxx, Sw, mu_cur, z2_cur, zeta2_min,
                   dec, soft, mu_out, z2_out, trace, trace_n, counters):
    M, Td = Yd.shape
    N = W.shape[0]
    L = W.shape[1]
    yv = np.zeros(L, dtype=np.complex128)
    rres = np.zeros(M, dtype=np.complex128)
    rwork = np.zeros(M, dtype=np.complex128)
    fbv = np.zeros(N, dtype=np.complex128)
    cand = np.zeros(pts.shape[0], dtype=np.int64)
    resid = np.zeros(pts.shape[0])
    bv = np.zeros(N, dtype=np.int64)
    scaled = stats_on or use_priors
    for t in range(Td):
        _order_from_costs(J, W, gamma, beta, regularized, order)
        if use_priors and not stats_on:
            # output MSE from the LSE cost stands in for the noise proxy
            ns = steps[0]
            wsum = 1.0
            if ns > 0:
                wsum = ns if lam == 1.0 else (1.0 - lam ** ns) / (1.0 - lam)
            for n in range(N):
                mu_cur[n] = 1.0
                z2 = J[n] / wsum if ns > 0 else 1.0
                z2_cur[n] = z2 if z2 > zeta2_min else zeta2_min
        if adapt:
            steps[0] += 1
        tp = t if logprior.shape[1] > 1 else 0
        lp_t = logprior[:, tp, :]
        for i in range(M):
            rres[i] = Yd[i, t]
        for n in range(N):
            fbv[n] = 0.0
        for s in range(N):
            dev = order[s]
            _fill_input(yv, Yd[:, t], M, feedback, order, s, fbv)
            out = 0j
            for i in range(L):
                out += np.conj(W[dev, i]) * yv[i]
            counters[0] += L
            mu = 1.0 + 0j
            z2 = 1.0
            if scaled:
                mu = mu_cur[dev]
                z2 = z2_cur[dev]
            zu, z2u = _unbias(out, mu, z2)
            k = _slice_idx(zu, pts, lp_t[dev], z2u, use_priors)
            if use_list:
                if force_sac == 1:
                    reliable = True
                elif force_sac == 2:
                    reliable = False
                else:
                    reliable = _sac(zu, pts, r0[dev], r1[dev])
                if not reliable:
                    nc = _rank(zu, pts, lp_t[dev], z2u, use_priors, K, cand)
                    best = 0
                    bres = np.inf
                    for c in range(nc):
                        v = pts[cand[c]]
                        for i in range(M):
                            rwork[i] = rres[i] - Hh[i, dev] * v
                        counters[2] += M
                        res = _continue_branch(rwork, Hh, W, order, s + 1, pts, lp_t, mu_cur,
                                               z2_cur, scaled, use_priors, bv, counters)
                        resid[c] = res
                        if res < bres:
                            bres = res
                            best = c
                    k = cand[best]
                    if trace_n[0] < trace.shape[0]:
                        trace[trace_n[0], 0] = resid[best]
                        trace[trace_n[0], 1] = resid[0]
                        trace[trace_n[0], 2] = nc
                        trace_n[0] += 1
            val = pts[k]
            dec[dev, t] = k
            soft[dev, t] = out
            mu_out[dev, t] = mu
            z2_out[dev, t] = z2
            fbv[dev] = val
            if use_list and val != 0:
                for i in range(M):
                    rres[i] -= Hh[i, dev] * val
                counters[2] += M
            if adapt:
                _bank_step(W, P, J, resets, dev, yv, val, lam, gamma, beta, delta, counters)
            if stats_on:
                _stats_push(Sr[dev], SR[dev], Sxx, Sw, dev, yv, val, lam, counters)
                m_new, z_new = _stats_eval(W[dev], Sr[dev], SR[dev], Sxx[dev], Sw[dev],
                                           zeta2_min, counters)
                mu_cur[dev] = m_new
                z2_cur[dev] = z_new


# ------------------------------------------------------------- public API

def _log_priors_1d(priors, size):
    if priors is None:
        return np.zeros(size), False
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(priors, dtype=float)), True


def slice_symbol(z, alphabet, priors=None, zeta2=1.0):
    """Hard decision over A_0.

    With priors, maximises prior * exp(-|z - x|^2 / zeta2); without, returns
    the nearest point. Ties go to the zero symbol, then to the lowest label.
    """
    lp, use = _log_priors_1d(priors, alphabet.size)
    return alphabet.points[_slice_idx(complex(z), alphabet.points, lp, float(zeta2), use)]


def sac_reliable(z, alphabet, sac):
    """(reliable, nearest point of A_0); the zero disk is tested first."""
    pts = alphabet.points
    r0, r1 = float(sac.zero_radius), float(sac.active_radius)
    z = complex(z)
    nearest = pts[_slice_idx(z, pts, np.zeros(len(pts)), 1.0, False)]
    if abs(z) <= r0:
        return True, 0j
    d = np.abs(z - alphabet.active_points)
    i = int(np.argmin(d))
    if d[i] <= r1:
        return True, alphabet.active_points[i]
    return False, nearest


def build_candidate_list(z, alphabet, K, priors=None, zeta2=1.0):
    """The K best points of A_0 for soft value z, best first."""
    if not 1 <= K <= alphabet.size:
        raise ConfigError(f"list size K={K} outside 1..{alphabet.size}")
    lp, use = _log_priors_1d(priors, alphabet.size)
    cand = np.zeros(alphabet.size, dtype=np.int64)
    n = _rank(complex(z), alphabet.points, lp, float(zeta2), use, int(K), cand)
    return alphabet.points[cand[:n]]


def extend_branch(y, H_hat, bank, order, stage, candidate, prior_decisions, alphabet,
                  counters=None):
    """Complete the branch that places ``candidate`` at ``stage`` (1-based).

    Earlier stages keep ``prior_decisions`` (in detection order); later
    stages are filled by conventional SIC using feedforward taps only.
    Returns the length-N symbol vector indexed by device.
    """
    pts = alphabet.points
    order = np.asarray(order, dtype=np.int64)
    N = len(order)
    counters = cx.new_counters() if counters is None else counters
    b = np.zeros(N, dtype=complex)
    r = np.array(y, dtype=complex)
    for q, d in enumerate(prior_decisions):
        b[order[q]] = d
        r -= H_hat[:, order[q]] * d
    dev = order[stage - 1]
    b[dev] = candidate
    r -= H_hat[:, dev] * candidate
    if stage < N:
        bv = np.zeros(N, dtype=np.int64)
        _continue_branch(r, np.ascontiguousarray(H_hat), bank.weights, order, stage, pts,
                         np.zeros((N, len(pts))), np.ones(N, dtype=complex), np.ones(N),
                         False, False, bv, counters)
        later = order[stage:]
        b[later] = pts[bv[later]]
    return b


def select_branch(y, H_hat, branches):
    """0-based index of the branch with the smallest ||y - H_hat b||^2."""
    res = [float(np.sum(np.abs(y - H_hat @ b) ** 2)) for b in branches]
    if not res:
        raise ValueError("no branches")
    return int(np.argmin(res))


@dataclass
class SoftOutput:
    decisions: np.ndarray    # (N, Td) indices into alphabet.points
    soft: np.ndarray         # filter outputs
    mu: np.ndarray
    zeta2: np.ndarray


class ListTrace:
    """Residuals of the selected and first-ranked branch at every list stage."""

    def __init__(self, capacity=100000):
        self.buf = np.zeros((capacity, 3))
        self.n = np.zeros(1, dtype=np.int64)

    @property
    def selected(self):
        return self.buf[:self.n[0], 0]

    @property
    def first(self):
        return self.buf[:self.n[0], 1]

    @property
    def list_sizes(self):
        return self.buf[:self.n[0], 2].astype(int)


class AdaptiveDetector:
    """AA-RLS family: pilot-trained l0-RLS filters, optional DF and list stage.

    ``prepare`` trains a filter bank on the frame's pilots and keeps it as a
    snapshot; every ``detect`` call restarts from that snapshot when
    ``restart`` is set (the default), otherwise it continues adapting.
    """

    def __init__(self, variant, alphabet, hyper=PRESETS["reg"], sac=SacConfig(), K=3,
                 regularized_order=True, force_sac=None, restart=True, symbol_var=1.0,
                 activity_prob=None):
        self.variant = Variant(variant)
        self.alphabet = alphabet
        self.hyper = hyper
        self.sac = sac
        if not 1 <= K <= alphabet.size:
            raise ConfigError(f"list size K={K} outside 1..{alphabet.size}")
        self.K = int(K)
        self.regularized_order = regularized_order
        self.force_sac = _FORCE[force_sac]
        self.restart = restart
        self.activity_prob = None if activity_prob is None else np.asarray(activity_prob, float)
        self.amp = float(np.sqrt(symbol_var))
        self.pts = alphabet.points * self.amp
        self._bank = None
        self._stats = None

    def prepare(self, frame, counters=None, soft=False):
        N, M = frame.pilots.shape[0], frame.Y.shape[0]
        Yp = frame.Y_pilot
        power = float(np.mean(np.abs(Yp) ** 2)) if Yp.size else 1.0
        bank = FilterBank(M, N, self.hyper, feedback=self.variant.feedback,
                          power=power if power > 0 else 1.0)
        stats = EquivalentChannelStats.empty(N, bank.L) if soft else None
        train_on_pilots(bank, frame.pilots, frame.Y_pilot, counters,
                        regularized=self.regularized_order, stats=stats)
        if stats is not None:
            stats.refresh(bank.weights, counters)
        self._bank, self._stats = bank, stats
        return bank

    def detect(self, frame, log_priors=None, counters=None, trace=None, adapt=True):
        if self._bank is None:
            raise RuntimeError("detector not trained; call prepare(frame) first")
        bank = self._bank.copy() if self.restart else self._bank
        stats = self._stats
        if stats is not None and self.restart:
            stats = stats.copy()
        return self._run(bank, stats, np.ascontiguousarray(frame.Y_data),
                         np.ascontiguousarray(frame.H_hat), log_priors, counters, trace, adapt)

    def _run(self, bank, stats, Yd, Hh, log_priors, counters, trace, adapt):
        counters = cx.new_counters() if counters is None else counters
        N, M, Td = bank.N, bank.M, Yd.shape[1]
        if log_priors is None and self.activity_prob is not None:
            log_priors = log_symbol_priors(np.zeros((N, 1, self.alphabet.bits_per_symbol)),
                                           np.broadcast_to(self.activity_prob, (N,))[:, None],
                                           self.alphabet)
        use_priors = log_priors is not None
        lp = (np.ascontiguousarray(log_priors, dtype=float) if use_priors
              else np.zeros((N, 1, len(self.pts))))
        stats_on = stats is not None
        st = stats if stats_on else EquivalentChannelStats.empty(N, 0)
        if not stats_on:
            st.mu = np.ones(N, dtype=complex)
            st.zeta2 = np.ones(N)
        r0, r1 = self.sac.radii(N, self.amp)
        tr = trace if trace is not None else ListTrace(0)
        dec = np.zeros((N, Td), dtype=np.int64)
        soft = np.zeros((N, Td), dtype=complex)
        mu = np.ones((N, Td), dtype=complex)
        z2 = np.ones((N, Td))
        h = bank.hyper
        _detect_kernel(bank.weights, bank.inv_corr, bank.costs, bank.order, bank.resets,
                       bank.steps, Yd, Hh,
                       self.pts, bank.feedback, self.variant.use_list, self.K, r0, r1,
                       self.force_sac, h.lam, h.gamma, h.beta, bank.delta, self.regularized_order,
                       adapt, use_priors, lp, stats_on, st.r, st.R, st.sxx, st.sw, st.mu,
                       st.zeta2, ZETA2_MIN, dec, soft, mu, z2, tr.buf, tr.n, counters)
        self.last_bank = bank
        return SoftOutput(dec, soft, mu, z2)


def detect_symbol_period(y, bank, H_hat, alphabet, sac, K, variant, counters=None, trace=None,
                         force_sac=None):
    """Detect one received vector with a trained bank (updated in place).

    Returns ``(symbols, soft)``: the length-N decisions and filter outputs,
    both indexed by device.
    """
    det = AdaptiveDetector(variant, alphabet, hyper=bank.hyper, sac=sac, K=K,
                           force_sac=force_sac, restart=False)
    if Variant(variant).feedback != bank.feedback:
        raise ConfigError("variant and filter bank disagree on decision feedback")
    Yd = np.ascontiguousarray(np.asarray(y, dtype=complex).reshape(-1, 1))
    out = det._run(bank, None, Yd, np.ascontiguousarray(H_hat), None, counters, trace, True)
    return alphabet.points[out.decisions[:, 0]], out.soft[:, 0]
