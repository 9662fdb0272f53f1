"""Order-statistic kernels for the quantile constraint.

The quantile ``v_[M]`` (M-th smallest entry) is written as the difference of two
top-k sums, ``top_sum(v, T+1) - top_sum(v, T)`` with ``T = N - M``.  Both
sums are convex in ``v``, which is what turns the sample chance constraint into a
DC constraint.  A simplex weight vector ``w`` generalises this to L-estimators:
``sum_i w_i v_[i] = G - H`` with

    G = sum_i w_i top_sum(v, N - i + 1),   H = sum_{i<N} w_i top_sum(v, N - i).

Indices in this module are 0-based on the Python side; "the i-th smallest" in
docstrings is 1-based.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.special import ndtr

from .model import InvalidInputError, ScenarioModel

SIMPLEX_TOL = 1e-10


class AllScenariosRequired(InvalidInputError):
    """``ceil((1 - alpha) N) == N``: every scenario must hold, the constraint is convex."""

    def __init__(self, M, N):
        super().__init__(f"M = {M} equals N = {N}; quantile constraint is the convex all-scenario case")
        self.M = M
        self.N = N


def _guarded_ceil(value: Fraction) -> int:
    nearest = round(value)
    if abs(value - nearest) <= Fraction(1, 10**12):
        return int(nearest)
    return math.ceil(value)


def _exact(x: float) -> Fraction:
    # shortest repr: 0.1 -> 1/10 rather than the binary expansion
    return Fraction(repr(float(x)))


def compute_M(alpha: float, N: int) -> int:
    """``ceil((1 - alpha) N)`` with near-integer products snapped exactly."""
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError(f"alpha must lie in (0, 1), got {alpha}")
    if N < 2:
        raise InvalidInputError("N must be at least 2")
    M = _guarded_ceil((1 - _exact(alpha)) * N)
    M = max(M, 1)
    if M >= N:
        raise AllScenariosRequired(M, N)
    return M


def kth_smallest(v, k: int) -> float:
    v = np.asarray(v, dtype=float)
    if not 1 <= k <= v.size:
        raise InvalidInputError(f"k = {k} out of range for a vector of length {v.size}")
    return float(np.partition(v, k - 1)[k - 1])


def top_sum(v, k: int) -> float:
    """Sum of the k largest entries, correctly rounded (``math.fsum``)."""
    v = np.asarray(v, dtype=float)
    N = v.size
    if not 0 <= k <= N:
        raise InvalidInputError(f"k = {k} out of range for a vector of length {N}")
    if k == 0:
        return 0.0
    if k == N:
        return math.fsum(v)
    return math.fsum(np.partition(v, N - k)[N - k:])


@dataclass(frozen=True)
class DcSplit:
    """Quantile index M, T = N - M, and the L-estimator weights (``e_M`` when plain)."""

    M: int
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        N = w.size
        if not 1 <= self.M <= N - 1:
            raise InvalidInputError(f"need 1 <= M <= N-1, got M={self.M}, N={N}")
        if (w < 0).any() or abs(math.fsum(w) - 1.0) > SIMPLEX_TOL:
            raise InvalidInputError("split weights must lie on the simplex")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @classmethod
    def plain(cls, M: int, N: int) -> "DcSplit":
        w = np.zeros(N)
        w[M - 1] = 1.0
        return cls(M, w)

    @property
    def N(self) -> int:
        return self.weights.size

    @property
    def T(self) -> int:
        return self.N - self.M

    def levels(self):
        """``(w_i, k_G, k_H)`` for each nonzero weight: the top-k sizes in G and H."""
        N = self.N
        return [(float(self.weights[i]), N - i, N - i - 1)
                for i in np.flatnonzero(self.weights)]


def gh_values(split: DcSplit, v):
    """Return ``(G, H)`` evaluated at the scenario vector ``v``."""
    v = np.asarray(v, dtype=float)
    if v.size != split.N:
        raise InvalidInputError(f"expected vector of length {split.N}")
    levels = split.levels()
    if len(levels) == 1:
        w, kG, kH = levels[0]
        return w * top_sum(v, kG), w * top_sum(v, kH)
    desc = np.sort(v)[::-1]
    G = math.fsum(w * math.fsum(desc[:kG]) for w, kG, _ in levels)
    H = math.fsum(w * math.fsum(desc[:kH]) for w, _, kH in levels)
    return G, H


@dataclass(frozen=True)
class ActiveSelection:
    """Scenarios with the T largest values and, per scenario, the attaining piece."""

    scenario_indices: np.ndarray
    piece_indices: np.ndarray
    order: np.ndarray  # all scenarios, by value descending then index ascending
    values: np.ndarray


def _descending_order(C):
    return np.lexsort((np.arange(C.size), -C))


def select_active(model: ScenarioModel, split: DcSplit, x) -> ActiveSelection:
    P = model.piece_values(x)
    pieces = P.argmax(axis=1)  # first maximiser, i.e. smallest piece index
    C = P[np.arange(model.N), pieces]
    order = _descending_order(C)
    return ActiveSelection(order[: split.T].copy(), pieces, order, C)


def active_gradients(model: ScenarioModel, pieces) -> np.ndarray:
    """Row i is the gradient of the active piece of scenario i, shape (N, n)."""
    out = np.empty((model.N, model.n))
    for j in range(model.m):
        mask = pieces == j
        if mask.any():
            out[mask] = model.piece_gradients(j)[mask]
    return out


def subgrad_H(model: ScenarioModel, split: DcSplit, x) -> np.ndarray:
    """One element of the subdifferential of H at x (deterministic tie-breaking)."""
    sel = select_active(model, split, x)
    grads = active_gradients(model, sel.piece_indices)[sel.order]
    cum = np.cumsum(grads, axis=0)
    s = np.zeros(model.n)
    for w, _, kH in split.levels():
        if kH > 0:
            s += w * cum[kH - 1]
    return s


def H_value(model: ScenarioModel, split: DcSplit, x) -> float:
    C = model.piece_values(x).max(axis=1)
    return gh_values(split, C)[1]


# --- L-estimator weights -------------------------------------------------------------

def l1_weights(p: float, N: int) -> np.ndarray:
    """Weighted average of the (M-1)-th and M-th order statistics, ``M = ceil(pN)``."""
    if not 0.0 < p < 1.0 or N < 2:
        raise InvalidInputError("need 0 < p < 1 and N >= 2")
    Np = _exact(p) * N
    M = _guarded_ceil(Np)
    if M < 2:
        raise InvalidInputError(f"M = ceil(pN) = {M}; no (M-1)-th order statistic exists")
    g = float(Np - M + 1) if abs(Np - round(Np)) > Fraction(1, 10**12) else 1.0
    w = np.zeros(N)
    w[M - 2] = 1.0 - g
    w[M - 1] = g
    return w


def _kernel_cdf(kernel: str, t):
    t = np.asarray(t, dtype=float)
    if kernel == "uniform":
        return np.clip((t + 1.0) / 2.0, 0.0, 1.0)
    if kernel == "epanechnikov":
        u = np.clip(t, -1.0, 1.0)
        return 0.5 + 0.75 * u - 0.25 * u**3
    if kernel == "gaussian":
        return ndtr(t)
    raise InvalidInputError(f"unknown kernel {kernel!r}")


def kernel_weights(p: float, N: int, h: float | None = None, kernel: str = "gaussian") -> np.ndarray:
    """Kernel quantile estimator weights, renormalised onto the simplex.

    Bin i receives the kernel mass of ``(1/h) K((x - p)/h)`` over ``[(i-1)/N, i/N]``.
    The integrals use the kernel CDFs in closed form; for the gaussian kernel the
    right tail is evaluated through the complementary CDF to avoid cancellation.
    The default bandwidth is ``1/sqrt(N)``.
    """
    if not 0.0 < p < 1.0 or N < 2:
        raise InvalidInputError("need 0 < p < 1 and N >= 2")
    if h is None:
        h = 1.0 / math.sqrt(N)
    if h <= 0:
        raise InvalidInputError("bandwidth must be positive")
    edges = np.arange(N + 1) / N
    t = (edges - p) / h
    lo, hi = t[:-1], t[1:]
    if kernel == "gaussian":
        raw = np.where(lo > 0, ndtr(-lo) - ndtr(-hi), ndtr(hi) - ndtr(lo))
    else:
        raw = _kernel_cdf(kernel, hi) - _kernel_cdf(kernel, lo)
    raw = np.maximum(raw, 0.0)
    total = math.fsum(raw)
    if total < 1e-12:
        raise InvalidInputError("degenerate bandwidth: kernel mass falls outside [0, 1]")
    return raw / total
