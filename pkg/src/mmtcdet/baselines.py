"""Reference detectors: LMMSE, oracle LMMSE, SA-SIC and AA-MF-SIC.

All detectors take a block of received vectors ``Y`` (M x T, or a single
length-M vector) and compute their filters once per call. Calling them one
column at a time therefore reproduces per-vector detection cost.
"""
import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import complexity as cx
from ._accel import jit
from .errors import NumericalError
from .idd import log_symbol_priors
from .listdetect import (ListTrace, SacConfig, SoftOutput, _FORCE, _rank, _sac, _slice_idx,
                         _unbias)


def _as_block(y):
    y = np.asarray(y, dtype=complex)
    return (y[:, None], True) if y.ndim == 1 else (y, False)


def _squeeze(out, single):
    if single:
        return SoftOutput(out.decisions[:, 0], out.soft[:, 0], out.mu[:, 0], out.zeta2[:, 0])
    return out


def _activity_log_priors(cfg, alphabet, T):
    lp = log_symbol_priors(np.zeros((cfg.N, 1, alphabet.bits_per_symbol)), cfg.p[:, None], alphabet)
    return np.ascontiguousarray(np.broadcast_to(lp, (cfg.N, T, alphabet.size)))


def _chol(R):
    try:
        return cho_factor(R, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"MMSE system not positive definite: {exc}") from exc


def _mmse_columns(H, var, noise_var, cols, counters):
    """var_j (H diag(var) H^H + noise_var I)^-1 h_j for j in ``cols``.

    Uses the M x M system; when that is singular (noise_var ~ 0 with fewer
    columns than rows) falls back to the equal small-side form
    H (H^H H + noise_var diag(var)^-1)^-1.
    """
    M, n = H.shape
    R = (H * var) @ H.conj().T + noise_var * np.eye(M)
    try:
        c = cho_factor(R, lower=True, check_finite=True)
        if np.min(np.abs(np.diag(c[0]))) ** 2 < 1e-12 * np.max(np.abs(np.diag(R))):
            raise np.linalg.LinAlgError("ill conditioned")
    except (np.linalg.LinAlgError, ValueError):
        if n >= M:
            raise NumericalError("MMSE system not positive definite") from None
        G = H.conj().T @ H + noise_var * np.diag(1.0 / var)
        cg = _chol(G)
        E = np.zeros((n, len(cols)), dtype=complex)
        E[cols, np.arange(len(cols))] = 1.0
        counters[cx.MMSE] += (n * (n + 1) // 2) * M + n ** 3 // 6 + (n * n + M * n) * len(cols)
        return H @ cho_solve(cg, E)
    counters[cx.MMSE] += cx.mmse_stage_cost(M, n) - M * M + M * M * len(cols)
    return cho_solve(c, H[:, cols]) * var[cols]


def mmse_filters(H, var, noise_var, counters=None):
    """Columns f_n = var_n (H diag(var) H^H + noise_var I)^-1 h_n.

    Returns ``(F, mu, zeta2)`` with the equivalent gain mu_n = f_n^H h_n and
    the interference-plus-noise variance var_n mu_n (1 - mu_n).
    """
    M, N = H.shape
    counters = cx.new_counters() if counters is None else counters
    var = np.broadcast_to(np.asarray(var, dtype=float), (N,))
    F = _mmse_columns(H, var, noise_var, np.arange(N), counters)
    mu = np.real(np.einsum("mn,mn->n", F.conj(), H))
    z2 = np.maximum(var * mu * (1.0 - mu), 1e-12)
    return F, mu, z2


def _map_decide(z, mu, z2, logpri, pts):
    zu = z / np.where(np.abs(mu) > 1e-12, mu, 1.0)[:, None]
    z2u = (z2 / np.maximum(np.abs(mu) ** 2, 1e-24))[:, None, None]
    metric = np.abs(zu[..., None] - pts) ** 2 / z2u - logpri
    return np.argmin(metric, axis=-1)


def lmmse_detect(y, H_hat, cfg, alphabet, log_priors=None, counters=None):
    """Activity-aware LMMSE: input variance p_n sigma_x^2, MAP slicing over A_0."""
    Y, single = _as_block(y)
    T = Y.shape[1]
    counters = cx.new_counters() if counters is None else counters
    var = cfg.p * cfg.symbol_var
    F, mu, z2 = mmse_filters(np.asarray(H_hat), var, cfg.noise_var, counters)
    z = F.conj().T @ Y
    counters[cx.FILTER] += cfg.N * cfg.M * T
    lp = _activity_log_priors(cfg, alphabet, T) if log_priors is None else log_priors
    pts = alphabet.points * np.sqrt(cfg.symbol_var)
    dec = _map_decide(z, mu, z2, lp, pts)
    out = SoftOutput(dec, z, np.repeat(mu[:, None].astype(complex), T, 1), np.repeat(z2[:, None], T, 1))
    return _squeeze(out, single)


def oracle_lmmse_detect(y, H_hat, support, cfg, alphabet, log_priors=None, counters=None):
    """LMMSE on the true support with full variance; zero elsewhere."""
    Y, single = _as_block(y)
    N, T = cfg.N, Y.shape[1]
    counters = cx.new_counters() if counters is None else counters
    S = np.flatnonzero(np.asarray(support, dtype=bool)) if np.asarray(support).dtype == bool \
        else np.asarray(sorted(support), dtype=int)
    dec = np.zeros((N, T), dtype=np.int64)
    soft = np.zeros((N, T), dtype=complex)
    mu = np.zeros((N, T), dtype=complex)
    z2 = np.ones((N, T))
    if len(S):
        Hs = np.asarray(H_hat)[:, S]
        F, m, v = mmse_filters(Hs, np.full(len(S), cfg.symbol_var), cfg.noise_var, counters)
        z = F.conj().T @ Y
        counters[cx.FILTER] += len(S) * cfg.M * T
        lp = (_activity_log_priors(cfg, alphabet, T) if log_priors is None
              else np.array(log_priors, dtype=float))[S].copy()
        lp[..., 0] = -np.inf
        pts = alphabet.points * np.sqrt(cfg.symbol_var)
        dec[S] = _map_decide(z, m, v, lp, pts)
        soft[S], mu[S], z2[S] = z, m[:, None], v[:, None]
    return _squeeze(SoftOutput(dec, soft, mu, z2), single)


def sic_order_and_filters(H, cfg, ordering="norm", counters=None):
    """Detection order and per-stage MMSE filters over the undetected devices.

    ``ordering='norm'`` sorts by descending column norm; ``'sinr'`` picks,
    at each stage, the undetected device with the largest post-MMSE SINR.
    Filters are indexed by stage.
    """
    M, N = H.shape
    counters = cx.new_counters() if counters is None else counters
    var = cfg.p * cfg.symbol_var
    F = np.zeros((M, N), dtype=complex)
    mu = np.zeros(N)
    z2 = np.ones(N)
    if ordering == "norm":
        order = np.argsort(-np.sum(np.abs(H) ** 2, axis=0), kind="stable")
    elif ordering != "sinr":
        raise ValueError(f"unknown SIC ordering {ordering!r}")
    remaining = list(range(N))
    chosen = []
    for s in range(N):
        if ordering == "norm":
            rem = list(order[s:])
            dev = order[s]
        else:
            rem = remaining
        Hr, vr = H[:, rem], var[rem]
        if ordering == "sinr":
            G = _mmse_columns(Hr, vr, cfg.noise_var, np.arange(len(rem)), counters)
            m_all = np.real(np.einsum("mn,mn->n", G.conj(), Hr))
            sinr = m_all / np.maximum(1.0 - m_all, 1e-300)
            i = int(np.argmax(sinr))
            dev = rem[i]
            f = G[:, i]
            remaining = [j for j in rem if j != dev]
        else:
            f = _mmse_columns(Hr, vr, cfg.noise_var, np.array([0]), counters)[:, 0]
        chosen.append(dev)
        F[:, s] = f
        m = float(np.real(np.vdot(f, H[:, dev])))
        mu[s] = m
        z2[s] = max(var[dev] * m * (1.0 - m), 1e-12)
    return np.asarray(chosen, dtype=np.int64), F, mu, z2


@jit
def _sic_continue(rwork, Hh, order, F, mu_s, z2_s, start, pts, lp_t, bv, counters):
    M = rwork.shape[0]
    N = order.shape[0]
    for q in range(start, N):
        j = order[q]
        z = 0j
        for i in range(M):
            z += np.conj(F[i, q]) * rwork[i]
        zu, z2u = _unbias(z, mu_s[q] + 0j, z2_s[q])
        k = _slice_idx(zu, pts, lp_t[j], z2u, True)
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
def _sic_kernel(Y, Hh, order, F, mu_s, z2_s, pts, use_list, K, r0, r1, force_sac, logprior,
                dec, soft, mu_out, z2_out, trace, trace_n, branch_log, counters):
    M, T = Y.shape
    N = order.shape[0]
    r = np.zeros(M, dtype=np.complex128)
    rwork = np.zeros(M, dtype=np.complex128)
    cand = np.zeros(pts.shape[0], dtype=np.int64)
    resid = np.zeros(pts.shape[0])
    bv = np.zeros(N, dtype=np.int64)
    log_on = branch_log.shape[0] > 0
    for t in range(T):
        for i in range(M):
            r[i] = Y[i, t]
        lp_t = logprior[:, t, :]
        for s in range(N):
            dev = order[s]
            z = 0j
            for i in range(M):
                z += np.conj(F[i, s]) * r[i]
            counters[0] += M
            zu, z2u = _unbias(z, mu_s[s] + 0j, z2_s[s])
            k = _slice_idx(zu, pts, lp_t[dev], z2u, True)
            if use_list:
                if force_sac == 1:
                    reliable = True
                elif force_sac == 2:
                    reliable = False
                else:
                    reliable = _sac(zu, pts, r0[dev], r1[dev])
                if not reliable:
                    nc = _rank(zu, pts, lp_t[dev], z2u, True, K, cand)
                    best = 0
                    bres = np.inf
                    for c in range(nc):
                        v = pts[cand[c]]
                        for i in range(M):
                            rwork[i] = r[i] - Hh[i, dev] * v
                        counters[2] += M
                        res = _sic_continue(rwork, Hh, order, F, mu_s, z2_s, s + 1, pts, lp_t,
                                            bv, counters)
                        resid[c] = res
                        if log_on:
                            row = (t * N + s) * pts.shape[0] + c
                            for n in range(N):
                                branch_log[row, n] = bv[n]
                            for q in range(s):
                                branch_log[row, order[q]] = dec[order[q], t]
                            branch_log[row, dev] = cand[c]
                            branch_log[row, N] = 1
                        if res < bres:
                            bres = res
                            best = c
                    k = cand[best]
                    if trace_n[0] < trace.shape[0]:
                        trace[trace_n[0], 0] = resid[best]
                        trace[trace_n[0], 1] = resid[0]
                        trace[trace_n[0], 2] = nc
                        trace_n[0] += 1
            v = pts[k]
            dec[dev, t] = k
            soft[dev, t] = z
            mu_out[dev, t] = mu_s[s]
            z2_out[dev, t] = z2_s[s]
            if v != 0:
                for i in range(M):
                    r[i] -= Hh[i, dev] * v
                counters[2] += M


def _sic_detect(y, H_hat, cfg, alphabet, use_list, sac, K, ordering, log_priors, counters,
                force_sac, trace, branch_log=None):
    Y, single = _as_block(y)
    Y = np.ascontiguousarray(Y)
    Hh = np.ascontiguousarray(H_hat, dtype=complex)
    N, T = cfg.N, Y.shape[1]
    counters = cx.new_counters() if counters is None else counters
    order, F, mu, z2 = sic_order_and_filters(Hh, cfg, ordering, counters)
    lp = (_activity_log_priors(cfg, alphabet, T) if log_priors is None
          else np.ascontiguousarray(log_priors, dtype=float))
    amp = np.sqrt(cfg.symbol_var)
    pts = alphabet.points * amp
    r0, r1 = sac.radii(N, amp)
    tr = trace if trace is not None else ListTrace(0)
    blog = branch_log if branch_log is not None else np.zeros((0, N + 1), dtype=np.int64)
    dec = np.zeros((N, T), dtype=np.int64)
    soft = np.zeros((N, T), dtype=complex)
    mu_out = np.zeros((N, T), dtype=complex)
    z2_out = np.ones((N, T))
    _sic_kernel(Y, Hh, order, np.ascontiguousarray(F), mu, z2, pts, use_list, int(K), r0, r1,
                _FORCE[force_sac], lp, dec, soft, mu_out, z2_out, tr.buf, tr.n, blog, counters)
    return _squeeze(SoftOutput(dec, soft, mu_out, z2_out), single), order


def sa_sic_detect(y, H_hat, cfg, alphabet, ordering="norm", log_priors=None, counters=None):
    """Sparsity-aware MMSE-SIC with MAP slicing over A_0, no list."""
    out, _ = _sic_detect(y, H_hat, cfg, alphabet, False, SacConfig(), 1, ordering, log_priors,
                         counters, None, None)
    return out


def aa_mf_sic_detect(y, H_hat, cfg, alphabet, sac=SacConfig(), K=3, ordering="norm",
                     log_priors=None, counters=None, force_sac=None, trace=None,
                     branch_log=None, return_order=False):
    """SA-SIC plus the shadow-area test and constellation-list branch selection.

    ``branch_log`` (optional, shape (T*N*|A_0|, N+1) int) receives every
    evaluated branch as symbol indices by device, last column flagging use.
    """
    out, order = _sic_detect(y, H_hat, cfg, alphabet, True, sac, K, ordering, log_priors,
                             counters, force_sac, trace, branch_log)
    return (out, order) if return_order else out


class BaselineDetector:
    """Uniform prepare/detect interface over the channel-based baselines."""

    NAMES = ("LMMSE", "ORACLE_LMMSE", "SA_SIC", "AA_MF_SIC")

    def __init__(self, name, cfg, alphabet, sac=SacConfig(), K=3, ordering="norm",
                 per_vector=False):
        if name not in self.NAMES:
            raise ValueError(f"unknown baseline {name!r}")
        self.name, self.cfg, self.alphabet = name, cfg, alphabet
        self.sac, self.K, self.ordering = sac, K, ordering
        self.per_vector = per_vector

    def prepare(self, frame, counters=None, soft=False):
        return None

    def _one(self, Y, frame, lp, counters):
        c, A = self.cfg, self.alphabet
        if self.name == "LMMSE":
            return lmmse_detect(Y, frame.H_hat, c, A, lp, counters)
        if self.name == "ORACLE_LMMSE":
            return oracle_lmmse_detect(Y, frame.H_hat, frame.active_mask, c, A, lp, counters)
        if self.name == "SA_SIC":
            return sa_sic_detect(Y, frame.H_hat, c, A, self.ordering, lp, counters)
        return aa_mf_sic_detect(Y, frame.H_hat, c, A, self.sac, self.K, self.ordering, lp, counters)

    def detect(self, frame, log_priors=None, counters=None, trace=None):
        Y = frame.Y_data
        if not self.per_vector:
            return self._one(Y, frame, log_priors, counters)
        parts = [self._one(Y[:, t:t + 1], frame,
                           None if log_priors is None else log_priors[:, t:t + 1], counters)
                 for t in range(Y.shape[1])]
        return SoftOutput(*(np.concatenate([getattr(p, f) for p in parts], axis=1)
                            for f in ("decisions", "soft", "mu", "zeta2")))
