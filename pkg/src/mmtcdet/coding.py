"""Regular LDPC code: 4-cycle-free construction, encoding, sum-product decoding.

Bit convention: bit 0 <-> +1, bit 1 <-> -1, LLR = log P(b=0)/P(b=1).
"""
from dataclasses import dataclass, field

import numpy as np

from ._accel import jit
from .errors import ConfigError


@dataclass(frozen=True)
class LdpcCode:
    parity: np.ndarray          # (m, n) uint8
    generator: np.ndarray       # (k, n) uint8, rows are codewords
    info_positions: np.ndarray  # (k,) message bit positions in the codeword
    col_weight: int
    rank: int
    meta: dict = field(default_factory=dict)
    chk_ptr: np.ndarray = None
    chk_var: np.ndarray = None
    var_ptr: np.ndarray = None
    var_edge: np.ndarray = None

    @property
    def m(self):
        return self.parity.shape[0]

    @property
    def n(self):
        return self.parity.shape[1]

    @property
    def k(self):
        return self.generator.shape[0]

    @property
    def rate(self):
        return self.k / self.n

    def syndrome(self, bits):
        return (np.asarray(bits, dtype=np.int64) @ self.parity.T.astype(np.int64)) % 2

    @classmethod
    def from_parity(cls, parity, k=None, meta=None):
        """Derive the generator and decoder adjacency from a parity matrix.

        ``k`` defaults to n - m. When the parity matrix is rank deficient
        (always the case for even column weight) the surplus free bits are
        pinned to zero.
        """
        parity = (np.asarray(parity) % 2).astype(np.uint8)
        m, n = parity.shape
        k = n - m if k is None else k
        rref, pivots = gf2_rref(parity)
        rank = len(pivots)
        free = np.setdiff1d(np.arange(n), pivots)
        if len(free) < k:
            raise ConfigError(f"parity matrix rank {rank} leaves fewer than {k} free bits")
        info = free[:k]
        G = np.zeros((k, n), dtype=np.uint8)
        G[np.arange(k), info] = 1
        G[:, pivots] = rref[:rank][:, info].T
        col_w = parity.sum(axis=0)
        rows, cols = np.nonzero(parity)          # row-major: edges grouped by check
        chk_ptr = np.zeros(m + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=m), out=chk_ptr[1:])
        var_order = np.argsort(cols, kind="stable")
        var_ptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(cols, minlength=n), out=var_ptr[1:])
        meta = dict(meta or {})
        meta.setdefault("row_weights", np.bincount(parity.sum(axis=1)).tolist())
        arrays = (parity, G, info)
        for a in arrays:
            a.setflags(write=False)
        return cls(parity=parity, generator=G, info_positions=info,
                   col_weight=int(col_w.max()), rank=rank, meta=meta,
                   chk_ptr=chk_ptr, chk_var=cols.astype(np.int64),
                   var_ptr=var_ptr, var_edge=var_order.astype(np.int64))


def gf2_rref(A):
    """Reduced row echelon form over GF(2); returns (R, pivot_columns)."""
    R = (np.array(A, dtype=np.uint8) % 2)
    m, n = R.shape
    pivots = []
    row = 0
    for col in range(n):
        if row == m:
            break
        hits = np.nonzero(R[row:, col])[0]
        if hits.size == 0:
            continue
        p = row + hits[0]
        if p != row:
            R[[row, p]] = R[[p, row]]
        others = np.nonzero(R[:, col])[0]
        others = others[others != row]
        R[others] ^= R[row]
        pivots.append(col)
        row += 1
    return R, np.array(pivots, dtype=np.int64)


def _place_columns(n, m, col_weight, rng, max_row):
    """Column-by-column placement rejecting rows that would close a 4-cycle."""
    H = np.zeros((m, n), dtype=np.uint8)
    deg = np.zeros(m, dtype=np.int64)
    paired = np.zeros((m, m), dtype=bool)   # rows already sharing a column
    for j in rng.permutation(n):
        chosen = []
        blocked = np.zeros(m, dtype=bool)
        for _ in range(col_weight):
            ok = (~blocked) & (deg < max_row)
            if not ok.any():
                return None
            cand = np.nonzero(ok)[0]
            low = cand[deg[cand] == deg[cand].min()]
            r = rng.choice(low)
            chosen.append(r)
            blocked |= paired[r]
            blocked[r] = True
        chosen = np.array(chosen)
        H[chosen, j] = 1
        deg[chosen] += 1
        paired[np.ix_(chosen, chosen)] = True
    return H


def _balance_rows(H, row_weight, rng):
    """Move single edges from heavy to light rows without closing a 4-cycle."""
    m, n = H.shape
    for _ in range(4 * m):
        deg = H.sum(axis=1)
        heavy = np.nonzero(deg > row_weight)[0]
        light = np.nonzero(deg < row_weight)[0]
        if heavy.size == 0 or light.size == 0:
            return True
        moved = False
        for a in rng.permutation(heavy):
            for j in rng.permutation(np.nonzero(H[a])[0]):
                others = np.nonzero(H[:, j])[0]
                others = others[others != a]
                for b in rng.permutation(light):
                    if H[b, j] or np.any(H[others] & H[b]):
                        continue
                    H[a, j], H[b, j] = 0, 1
                    moved = True
                    break
                if moved:
                    break
            if moved:
                break
        if not moved:
            return False
    return not np.any(H.sum(axis=1) != row_weight)


def build_ldpc(n=256, m=128, col_weight=6, rng=None, max_retries=200, strict_attempts=1):
    """Random regular LDPC code with no length-4 cycles.

    Rows are kept at weight n*col_weight/m. When greedy placement cannot
    close strictly, rows may take one extra edge and a repair pass then moves
    edges from heavy to light rows; any leftover slack is recorded in ``meta``.
    """
    if isinstance(rng, (int, np.integer)) or rng is None:
        seed = rng
        rng = np.random.default_rng(rng)
    else:
        seed = None
    if (n * col_weight) % m:
        raise ConfigError("n*col_weight must be divisible by m for regular rows")
    row_weight = n * col_weight // m
    for attempt in range(max_retries):
        slack = 0 if attempt < strict_attempts else 1
        H = _place_columns(n, m, col_weight, rng, row_weight + slack)
        if H is not None and slack and _balance_rows(H, row_weight, rng):
            slack = 0
        if H is not None and (slack == 0 or attempt >= max_retries // 2):
            meta = {"attempts": attempt + 1, "row_slack": slack, "seed": seed}
            return LdpcCode.from_parity(H, meta=meta)
    raise ConfigError(f"LDPC construction failed after {max_retries} attempts (seed={seed})")


def encode(code, message_bits):
    """Systematic encoding; accepts (k,) or (..., k) message arrays."""
    msg = np.asarray(message_bits, dtype=np.int64)
    if msg.shape[-1] != code.k:
        raise ValueError(f"message length {msg.shape[-1]} != k={code.k}")
    return ((msg @ code.generator.astype(np.int64)) % 2).astype(np.uint8)


def has_four_cycle(parity):
    """True when some pair of columns shares more than one check."""
    P = np.asarray(parity, dtype=np.int64)
    overlap = P.T @ P
    np.fill_diagonal(overlap, 0)
    return bool((overlap > 1).any())


@jit
def _spa_kernel(llr, chk_ptr, chk_var, var_ptr, var_edge, max_iters, post, iters, conv):
    B, n = llr.shape
    m = chk_ptr.shape[0] - 1
    E = chk_var.shape[0]
    v2c = np.empty(E)
    c2v = np.zeros(E)
    t = np.empty(E)
    lim = 1.0 - 1e-15
    for b in range(B):
        for e in range(E):
            v2c[e] = llr[b, chk_var[e]]
            c2v[e] = 0.0
        it = 0
        ok = False
        while it < max_iters:
            it += 1
            for c in range(m):
                lo = chk_ptr[c]
                hi = chk_ptr[c + 1]
                for e in range(lo, hi):
                    t[e] = np.tanh(0.5 * v2c[e])
                for e in range(lo, hi):
                    prod = 1.0
                    for f in range(lo, hi):
                        if f != e:
                            prod *= t[f]
                    if prod > lim:
                        prod = lim
                    elif prod < -lim:
                        prod = -lim
                    c2v[e] = 2.0 * np.arctanh(prod)
            for v in range(n):
                acc = llr[b, v]
                for q in range(var_ptr[v], var_ptr[v + 1]):
                    acc += c2v[var_edge[q]]
                post[b, v] = acc
                for q in range(var_ptr[v], var_ptr[v + 1]):
                    e = var_edge[q]
                    v2c[e] = acc - c2v[e]
            ok = True
            for c in range(m):
                s = 0
                for e in range(chk_ptr[c], chk_ptr[c + 1]):
                    if post[b, chk_var[e]] < 0:
                        s ^= 1
                if s:
                    ok = False
                    break
            if ok:
                break
        iters[b] = it
        conv[b] = ok


def spa_decode(code, channel_llrs, max_iters=20):
    """Flooding sum-product decoding.

    Returns ``(posterior, extrinsic, hard_bits, converged, iterations)``;
    a 2-D input decodes each row independently.
    """
    llr = np.asarray(channel_llrs, dtype=float)
    single = llr.ndim == 1
    llr2 = np.ascontiguousarray(np.atleast_2d(llr))
    if llr2.shape[1] != code.n:
        raise ValueError(f"expected {code.n} LLRs, got {llr2.shape[1]}")
    B = llr2.shape[0]
    post = np.empty_like(llr2)
    iters = np.zeros(B, dtype=np.int64)
    conv = np.zeros(B, dtype=np.bool_)
    _spa_kernel(llr2, code.chk_ptr, code.chk_var, code.var_ptr, code.var_edge,
                int(max_iters), post, iters, conv)
    ext = post - llr2
    hard = (post < 0).astype(np.uint8)
    if single:
        return post[0], ext[0], hard[0], bool(conv[0]), int(iters[0])
    return post, ext, hard, conv, iters


def write_alist(code_or_parity, path):
    """Write a parity matrix in alist format (1-based, zero padded)."""
    P = code_or_parity.parity if isinstance(code_or_parity, LdpcCode) else np.asarray(code_or_parity)
    m, n = P.shape
    cols = [np.nonzero(P[:, j])[0] + 1 for j in range(n)]
    rows = [np.nonzero(P[i])[0] + 1 for i in range(m)]
    cw = max(len(c) for c in cols)
    rw = max(len(r) for r in rows)
    lines = [f"{n} {m}", f"{cw} {rw}",
             " ".join(str(len(c)) for c in cols),
             " ".join(str(len(r)) for r in rows)]
    lines += [" ".join(map(str, list(c) + [0] * (cw - len(c)))) for c in cols]
    lines += [" ".join(map(str, list(r) + [0] * (rw - len(r)))) for r in rows]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_alist(path):
    """Read an alist file and return the (m, n) parity matrix."""
    with open(path) as fh:
        tokens = [list(map(int, ln.split())) for ln in fh if ln.strip()]
    n, m = tokens[0]
    P = np.zeros((m, n), dtype=np.uint8)
    for j in range(n):
        for r in tokens[4 + j]:
            if r:
                P[r - 1, j] = 1
    for i in range(m):
        for c in tokens[4 + n + i]:
            if c and not P[i, c - 1]:
                raise ConfigError(f"alist row/column lists disagree at ({i + 1}, {c})")
    return P
