"""Complex-multiplication counters.

Kernels receive an ``int64`` array of length :data:`N_CATEGORIES` and add the
number of complex multiplications performed by each primitive. Counts are
exact integers so aggregation across trials is order independent.

Per-primitive costs (L = filter length, M = receive dimension):

* inner product / filter output: L
* RLS update: L*nnz (P y, skipping zero inputs) + L (y^H P y) + L(L+1)/2 (Hermitian
  downdate, upper triangle) + L (weights) + L (a-posteriori error); the a-priori
  output adds L to the filter category. Real scalings are not counted.
* branch continuation stage: M (filter) + M (cancellation)
* residual norm: M
* MMSE stage filter: M(M+1)/2 * n_cols (Gram) + M^3/6 (Cholesky) + M^2 (two solves)
"""
import numpy as np

FILTER = 0
RLS = 1
BRANCH = 2
RESIDUAL = 3
MMSE = 4
STATS = 5
N_CATEGORIES = 6

NAMES = ("filter", "rls", "branch", "residual", "mmse", "stats")


def new_counters():
    return np.zeros(N_CATEGORIES, dtype=np.int64)


def rls_update_cost(L):
    """Complex multiplications of one l0-RLS update of a length-L filter."""
    return L * L + L * (L + 1) // 2 + 3 * L


def mmse_stage_cost(M, n_cols):
    """Gram matrix, Cholesky factorization and two triangular solves."""
    return (M * (M + 1) // 2) * n_cols + (M * M * M) // 6 + M * M


def as_dict(counters):
    return {name: int(counters[i]) for i, name in enumerate(NAMES)}
