"""Soft information exchange between detector and LDPC decoder.

Symbol index convention everywhere: 0 is the inactivity symbol, 1..|A| are
the active points in label order (see :func:`sysmodel.build_alphabet`).
"""
from dataclasses import dataclass, field

import numpy as np

from . import complexity as cx
from .adaptive import _stats_eval, _stats_push
from .coding import spa_decode

L_MAX = 30.0
ZETA2_MIN = 1e-10


@dataclass
class EquivalentChannelStats:
    """Exponentially weighted history behind the equivalent AWGN channel.

    ``mu``/``zeta2`` hold the current gain and variance per device, computed
    from the history up to the previous symbol period.
    """
    r: np.ndarray
    R: np.ndarray
    sxx: np.ndarray
    sw: np.ndarray
    mu: np.ndarray
    zeta2: np.ndarray

    @classmethod
    def empty(cls, N, L):
        return cls(r=np.zeros((N, L), dtype=complex), R=np.zeros((N, L, L), dtype=complex),
                   sxx=np.zeros(N), sw=np.zeros(N), mu=np.ones(N, dtype=complex),
                   zeta2=np.ones(N))

    def copy(self):
        return EquivalentChannelStats(*(np.array(a, copy=True) for a in
                                        (self.r, self.R, self.sxx, self.sw, self.mu, self.zeta2)))

    def refresh(self, W, counters=None, zeta2_min=ZETA2_MIN):
        counters = cx.new_counters() if counters is None else counters
        for n in range(W.shape[0]):
            self.mu[n], self.zeta2[n] = _stats_eval(W[n], self.r[n], self.R[n], self.sxx[n],
                                                    self.sw[n], zeta2_min, counters)


def update_equivalent_stats(stats, device, w_n, y_n, x_ref, lam, counters=None,
                            zeta2_min=ZETA2_MIN):
    """Fold one (input, reference symbol) pair into a device's history.

    Returns the refreshed ``(mu, zeta2)``. The gain is the weighted
    cross-correlation normalised by the weighted symbol energy, so that
    the filter output reads ``mu * x + noise``.
    """
    counters = cx.new_counters() if counters is None else counters
    y = np.zeros(stats.r.shape[1], dtype=complex)
    y[:len(y_n)] = y_n
    _stats_push(stats.r[device], stats.R[device], stats.sxx, stats.sw, int(device), y,
                complex(x_ref), float(lam), counters)
    w = np.zeros_like(y)
    w[:len(w_n)] = w_n
    mu, z2 = _stats_eval(w, stats.r[device], stats.R[device], stats.sxx[device],
                         stats.sw[device], zeta2_min, counters)
    stats.mu[device], stats.zeta2[device] = mu, z2
    return mu, z2


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def log_symbol_priors(L_e, p, alphabet):
    """Log prior over A_0 from decoder extrinsics and activity probability.

    ``L_e`` has shape (..., M_c); ``p`` broadcasts against ``L_e[..., 0]``.
    Returns shape (..., |A_0|).
    """
    L_e = np.clip(np.asarray(L_e, dtype=float), -L_MAX, L_MAX)
    p = np.broadcast_to(np.asarray(p, dtype=float), L_e.shape[:-1])
    labels = alphabet.bit_labels                      # (|A|, M_c)
    bits = _log_sigmoid(L_e[..., None, :] * labels).sum(axis=-1)
    with np.errstate(divide="ignore"):
        log0 = np.log1p(-p)
        logp = np.log(p)
    return np.concatenate([log0[..., None], logp[..., None] + bits], axis=-1)


def symbol_priors(L_e, p_n, alphabet):
    """Probability of each symbol of A_0 (index 0 = inactive)."""
    return np.exp(log_symbol_priors(L_e, p_n, alphabet))


def likelihood(d_hat, mu, zeta2, x_bar):
    """Complex Gaussian density of the filter output given symbol ``x_bar``."""
    return np.exp(-np.abs(d_hat - mu * x_bar) ** 2 / zeta2) / (np.pi * zeta2)


def _logsumexp(a, mask):
    a = np.where(mask, a, -np.inf)
    m = np.max(a, axis=-1, keepdims=True)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return (safe + np.log(np.sum(np.exp(a - safe), axis=-1, keepdims=True)))[..., 0]


def extrinsic_llrs(d_hat, mu, zeta2, log_priors, L_e, alphabet, diagnostics=None):
    """Bitwise extrinsic LLRs of filter outputs, vectorised over leading axes.

    Only active points enter the two hypothesis sets; the inactivity
    symbol carries no bits. Output is clamped to +-L_MAX; a bit whose
    hypothesis sums both vanish gets 0.
    """
    d_hat = np.asarray(d_hat)[..., None]
    mu = np.asarray(mu)[..., None]
    zeta2 = np.maximum(np.asarray(zeta2, dtype=float), ZETA2_MIN)[..., None]
    pts = alphabet.active_points
    metric = -np.abs(d_hat - mu * pts) ** 2 / zeta2 + np.asarray(log_priors)[..., 1:]
    L_e = np.clip(np.asarray(L_e, dtype=float), -L_MAX, L_MAX)
    out = np.empty(L_e.shape)
    for z in range(alphabet.bits_per_symbol):
        plus = alphabet.bit_labels[:, z] > 0
        num = _logsumexp(metric, plus)
        den = _logsumexp(metric, ~plus)
        bad = ~(np.isfinite(num) & np.isfinite(den))
        with np.errstate(invalid="ignore"):
            val = num - den - L_e[..., z]
        val = np.where(bad, 0.0, val)
        if diagnostics is not None and np.any(bad):
            diagnostics.append(f"llr underflow in {int(np.sum(bad))} bits")
        out[..., z] = np.clip(val, -L_MAX, L_MAX)
    return out


def extrinsic_llr(d_hat, mu, zeta2, priors, L_e, alphabet):
    """Scalar form of :func:`extrinsic_llrs` taking priors as probabilities."""
    with np.errstate(divide="ignore"):
        lp = np.log(np.asarray(priors, dtype=float))
    return extrinsic_llrs(np.asarray(d_hat), np.asarray(mu), np.asarray(zeta2), lp,
                          np.asarray(L_e, dtype=float), alphabet)


@dataclass
class IddResult:
    info_bits: np.ndarray            # (N, n_cw * k) decoded message bits
    bit_errors: list                 # per outer iteration, over active devices
    bit_count: int
    raw_bit_errors: int              # detector hard bits before decoding, iteration 1
    raw_bit_count: int
    decisions: np.ndarray            # (N, Td) symbol indices of the last pass
    decisions_per_iter: list = field(default_factory=list)
    converged: list = field(default_factory=list)


def idd_run(frame, detector, code, T_outer, p, alphabet, max_spa_iters=20,
            diagnostics=None, counters=None):
    """Iterative detection and decoding of one frame.

    ``detector.detect(frame, log_priors)`` must return an object with
    ``decisions``, ``soft``, ``mu`` and ``zeta2`` arrays of shape (N, Td).
    The first pass uses zero decoder extrinsics.
    """
    N, Td = frame.data_index.shape
    Mc = alphabet.bits_per_symbol
    n_cw = Td * Mc // code.n
    active = frame.active_mask
    L_e = np.zeros((N, Td, Mc))
    p = np.broadcast_to(np.asarray(p, dtype=float), (N,))
    truth = frame.bit_payload
    bit_errors, decs, conv = [], [], []
    raw_err = raw_cnt = 0
    info = None
    out = None
    for it in range(T_outer):
        logpri = log_symbol_priors(L_e, p[:, None], alphabet)
        out = detector.detect(frame, logpri, counters=counters)
        L_c = extrinsic_llrs(out.soft, out.mu, out.zeta2, logpri, L_e, alphabet, diagnostics)
        chan = L_c.reshape(N * n_cw, code.n)
        if it == 0:
            hard_raw = (chan < 0).reshape(N, Td * Mc)
            raw_err = int(np.sum(hard_raw[active] != frame.coded_bits[active]))
            raw_cnt = int(active.sum()) * Td * Mc
        post, ext, hard, ok, _ = spa_decode(code, chan, max_spa_iters)
        info = hard[:, code.info_positions].reshape(N, n_cw * code.k)
        bit_errors.append(int(np.sum(info[active] != truth[active])))
        decs.append(out.decisions)
        conv.append(ok.reshape(N, n_cw))
        L_e = np.clip(ext, -L_MAX, L_MAX).reshape(N, Td, Mc)
    return IddResult(info_bits=info, bit_errors=bit_errors,
                     bit_count=int(active.sum()) * n_cw * code.k,
                     raw_bit_errors=raw_err, raw_bit_count=raw_cnt,
                     decisions=out.decisions, decisions_per_iter=decs, converged=conv)
