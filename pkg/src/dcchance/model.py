"""Problem data: scenario constraint maps, convex/DC objectives, polyhedral domains.

A scenario constraint piece has the form

    c_j(x, xi) = (a_j + B_j xi) . x + b_j . xi + d_j

which is affine in ``x`` for every fixed ``xi``.  ``B_j`` is optional; without it
the map is the additive form used by the transportation models, with it the
map covers return constraints such as ``R - xi . x``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

FEAS_TOL = 1e-8


class InvalidInputError(ValueError):
    """Raised when problem data is dimensionally or semantically inconsistent."""


class InstanceFormatError(InvalidInputError):
    """Instance document does not match the schema; ``field`` names the culprit."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def _frozen(a, ndim=None, name="array"):
    arr = np.array(a, dtype=float)
    if ndim is not None and arr.ndim != ndim:
        raise InvalidInputError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def _check_vector(x, n):
    x = np.asarray(x, dtype=float)
    if x.shape != (n,):
        raise InvalidInputError(f"expected vector of length {n}, got shape {x.shape}")
    return x


@dataclass(frozen=True)
class AffineMap:
    """One piece ``c_j`` of the scenario constraint."""

    a: np.ndarray
    b: np.ndarray
    d: float = 0.0
    B: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "a", _frozen(self.a, 1, "a"))
        object.__setattr__(self, "b", _frozen(self.b, 1, "b"))
        object.__setattr__(self, "d", float(self.d))
        if self.B is not None:
            B = _frozen(self.B, 2, "B")
            if B.shape != (self.a.size, self.b.size):
                raise InvalidInputError(
                    f"B must have shape {(self.a.size, self.b.size)}, got {B.shape}")
            object.__setattr__(self, "B", B)


@dataclass(frozen=True)
class ScenarioModel:
    """N samples of xi together with the m constraint pieces."""

    samples: np.ndarray
    maps: tuple

    def __post_init__(self):
        samples = np.array(self.samples, dtype=float)
        if samples.ndim == 1:
            samples = samples[:, None]
        if samples.ndim != 2:
            raise InvalidInputError("samples must be an N x d matrix")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        maps = tuple(self.maps)
        object.__setattr__(self, "maps", maps)
        if samples.shape[0] < 2:
            raise InvalidInputError("need at least two scenarios")
        if not maps:
            raise InvalidInputError("need at least one constraint map")
        n = maps[0].a.size
        for j, mp in enumerate(maps):
            if mp.a.size != n:
                raise InvalidInputError(f"map {j}: a has length {mp.a.size}, expected {n}")
            if mp.b.size != samples.shape[1]:
                raise InvalidInputError(
                    f"map {j}: b has length {mp.b.size}, expected d={samples.shape[1]}")

    @property
    def N(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]

    @property
    def m(self) -> int:
        return len(self.maps)

    @property
    def n(self) -> int:
        return self.maps[0].a.size

    def piece_values(self, x) -> np.ndarray:
        """Matrix of c_j(x, xi^i), shape (N, m)."""
        x = _check_vector(x, self.n)
        out = np.empty((self.N, self.m))
        for j, mp in enumerate(self.maps):
            coef = mp.b if mp.B is None else mp.b + mp.B.T @ x
            out[:, j] = self.samples @ coef + (mp.a @ x + mp.d)
        return out

    def piece_gradients(self, j: int) -> np.ndarray:
        """Gradients of piece j in x for every scenario, shape (N, n)."""
        mp = self.maps[j]
        if mp.B is None:
            return np.broadcast_to(mp.a, (self.N, self.n))
        return mp.a + self.samples @ mp.B.T

    def piece_offsets(self, j: int) -> np.ndarray:
        """The x-independent part b_j . xi^i + d_j, shape (N,)."""
        mp = self.maps[j]
        return self.samples @ mp.b + mp.d


@dataclass(frozen=True)
class ConvexFunction:
    """``zero``, ``linear`` (a0 . x + const) or ``quadratic`` (x'Ax + a0 . x + const).

    ``rho`` is the certified strong-convexity modulus: twice the smallest
    eigenvalue of ``A`` for the quadratic kind and 0 otherwise.
    """

    kind: str
    n: int
    A: Optional[np.ndarray] = None
    a0: Optional[np.ndarray] = None
    const: float = 0.0
    rho: float = field(default=0.0, init=False)

    def __post_init__(self):
        if self.kind not in ("zero", "linear", "quadratic"):
            raise InvalidInputError(f"unknown function kind {self.kind!r}")
        n = int(self.n)
        a0 = np.zeros(n) if self.a0 is None else np.asarray(self.a0, dtype=float)
        if a0.shape != (n,):
            raise InvalidInputError(f"a0 must have length {n}")
        object.__setattr__(self, "a0", _frozen(a0))
        object.__setattr__(self, "const", float(self.const))
        rho = 0.0
        if self.kind == "quadratic":
            A = np.asarray(self.A, dtype=float)
            if A.shape != (n, n):
                raise InvalidInputError(f"A must be {n} x {n}")
            if not np.allclose(A, A.T, atol=1e-12, rtol=0):
                raise InvalidInputError("A must be symmetric")
            A = 0.5 * (A + A.T)
            lam_min = float(np.linalg.eigvalsh(A)[0]) if n else 0.0
            if lam_min < -1e-10 * max(1.0, float(np.abs(A).max(initial=0.0))):
                raise InvalidInputError("A must be positive semidefinite")
            rho = max(0.0, 2.0 * lam_min)
            object.__setattr__(self, "A", _frozen(A))
        else:
            object.__setattr__(self, "A", None)
        object.__setattr__(self, "rho", rho)

    @classmethod
    def zero(cls, n):
        return cls("zero", n)

    @classmethod
    def linear(cls, a0, const=0.0):
        a0 = np.asarray(a0, dtype=float)
        return cls("linear", a0.size, a0=a0, const=const)

    @classmethod
    def quadratic(cls, A, a0=None, const=0.0):
        A = np.asarray(A, dtype=float)
        return cls("quadratic", A.shape[0], A=A, a0=a0, const=const)

    def __call__(self, x) -> float:
        x = _check_vector(x, self.n)
        if self.kind == "zero":
            return 0.0
        val = float(self.a0 @ x) + self.const
        if self.kind == "quadratic":
            val += float(x @ self.A @ x)
        return val

    def subgradient(self, x) -> np.ndarray:
        x = _check_vector(x, self.n)
        if self.kind == "zero":
            return np.zeros(self.n)
        if self.kind == "linear":
            return np.array(self.a0)
        return 2.0 * (self.A @ x) + self.a0

    def hessian(self) -> np.ndarray:
        if self.kind == "quadratic":
            return 2.0 * np.array(self.A)
        return np.zeros((self.n, self.n))

    def lift(self, n_total: int) -> "ConvexFunction":
        """Same function on a longer variable vector (extra coordinates ignored)."""
        extra = n_total - self.n
        a0 = np.concatenate([self.a0, np.zeros(extra)])
        if self.kind == "quadratic":
            A = np.zeros((n_total, n_total))
            A[: self.n, : self.n] = self.A
            return ConvexFunction.quadratic(A, a0, self.const)
        if self.kind == "linear":
            return ConvexFunction.linear(a0, self.const)
        return ConvexFunction.zero(n_total)


@dataclass(frozen=True)
class DcObjective:
    g: ConvexFunction
    h: ConvexFunction

    def __post_init__(self):
        if self.g.n != self.h.n:
            raise InvalidInputError("g and h must share the variable dimension")

    @property
    def n(self) -> int:
        return self.g.n

    @property
    def rho(self) -> float:
        return self.g.rho

    def __call__(self, x) -> float:
        return self.g(x) - self.h(x)


def objective_value(obj: DcObjective, x) -> float:
    return obj(x)


def objective_subgradients(obj: DcObjective, x):
    """Return ``(s_g, s_h)`` with s_g in dg(x) and s_h in dh(x)."""
    return obj.g.subgradient(x), obj.h.subgradient(x)


@dataclass(frozen=True)
class Polyhedron:
    """{x : Aeq x = beq, Gineq x <= hineq}."""

    Aeq: np.ndarray
    beq: np.ndarray
    Gineq: np.ndarray
    hineq: np.ndarray

    def __post_init__(self):
        Aeq = np.array(self.Aeq, dtype=float)
        Gineq = np.array(self.Gineq, dtype=float)
        beq = np.array(self.beq, dtype=float).reshape(-1)
        hineq = np.array(self.hineq, dtype=float).reshape(-1)
        n = Aeq.shape[1] if Aeq.ndim == 2 and Aeq.size else (
            Gineq.shape[1] if Gineq.ndim == 2 else 0)
        Aeq = Aeq.reshape(-1, n) if Aeq.size else np.zeros((0, n))
        Gineq = Gineq.reshape(-1, n) if Gineq.size else np.zeros((0, n))
        if Aeq.shape[0] != beq.size or Gineq.shape[0] != hineq.size:
            raise InvalidInputError("domain row counts do not match right-hand sides")
        for name, arr in (("Aeq", Aeq), ("beq", beq), ("Gineq", Gineq), ("hineq", hineq)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def free(cls, n):
        return cls(np.zeros((0, n)), np.zeros(0), np.zeros((0, n)), np.zeros(0))

    @classmethod
    def box(cls, lo, hi, Aeq=None, beq=None):
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        n = lo.size
        eye = np.eye(n)
        G = np.vstack([eye, -eye])
        h = np.concatenate([hi, -lo])
        keep = np.isfinite(h)
        if Aeq is None:
            Aeq, beq = np.zeros((0, n)), np.zeros(0)
        return cls(Aeq, beq, G[keep], h[keep])

    @property
    def n(self) -> int:
        return max(self.Aeq.shape[1], self.Gineq.shape[1])

    def residuals(self, x):
        """(max |Aeq x - beq|, max positive part of Gineq x - hineq)."""
        x = np.asarray(x, dtype=float)
        eq = float(np.abs(self.Aeq @ x - self.beq).max(initial=0.0))
        ineq = float(np.maximum(self.Gineq @ x - self.hineq, 0.0).max(initial=0.0))
        return eq, ineq

    def contains(self, x, tol=FEAS_TOL) -> bool:
        eq, ineq = self.residuals(x)
        return eq <= tol and ineq <= tol

    def coordinate_bounds(self):
        """Per-coordinate bounds implied by single-variable inequality rows."""
        n = self.n
        lo = np.full(n, -np.inf)
        hi = np.full(n, np.inf)
        for row, rhs in zip(self.Gineq, self.hineq):
            nz = np.flatnonzero(row)
            if nz.size != 1:
                continue
            i = nz[0]
            if row[i] > 0:
                hi[i] = min(hi[i], rhs / row[i])
            else:
                lo[i] = max(lo[i], rhs / row[i])
        return lo, hi


@dataclass(frozen=True)
class ChanceProblem:
    objective: DcObjective
    domain: Polyhedron
    scenarios: ScenarioModel
    alpha: float
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise InvalidInputError(f"alpha must lie in (0, 1), got {self.alpha}")
        n = self.objective.n
        if self.scenarios.n != n or self.domain.n not in (0, n):
            raise InvalidInputError("objective, domain and scenario maps disagree on n")
        if self.weights is not None:
            w = _frozen(self.weights, 1, "weights")
            if w.size != self.scenarios.N:
                raise InvalidInputError("weights must have length N")
            if (w < 0).any() or (w > 1).any() or abs(w.sum() - 1.0) > 1e-10:
                raise InvalidInputError("weights must lie on the probability simplex")
            object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.objective.n

    @property
    def N(self) -> int:
        return self.scenarios.N


def evaluate_scenarios(model: ScenarioModel, x) -> np.ndarray:
    """The vector (C(x, xi^1), ..., C(x, xi^N)) with C the max over pieces."""
    return model.piece_values(x).max(axis=1)


def in_sample_probability(model: ScenarioModel, x, tol: float = FEAS_TOL) -> float:
    return float(np.count_nonzero(evaluate_scenarios(model, x) <= tol)) / model.N


# --- instance documents -----------------------------------------------------------

def _get(doc, key, path, required=True):
    if not isinstance(doc, dict):
        raise InstanceFormatError(path or "<root>", "expected an object")
    if key not in doc or doc[key] is None:
        if required:
            raise InstanceFormatError(f"{path}.{key}" if path else key, "missing field")
        return None
    return doc[key]


def _array(value, path, ndim, length=None):
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise InstanceFormatError(path, "not a numeric array") from None
    if ndim == 2 and arr.size == 0:
        arr = arr.reshape(0, length or 0)
    if arr.ndim != ndim:
        raise InstanceFormatError(path, f"expected {ndim}-d array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InstanceFormatError(path, "contains non-finite values")
    return arr


def _parse_function(doc, path, n):
    kind = _get(doc, "kind", path)
    if kind == "zero":
        return ConvexFunction.zero(n)
    a0 = doc.get("a0")
    a0 = np.zeros(n) if a0 is None else _array(a0, f"{path}.a0", 1)
    if a0.size != n:
        raise InstanceFormatError(f"{path}.a0", f"expected length {n}")
    const = float(doc.get("const", 0.0))
    try:
        if kind == "linear":
            return ConvexFunction.linear(a0, const)
        if kind == "quadratic":
            A = _array(_get(doc, "A", path), f"{path}.A", 2)
            return ConvexFunction.quadratic(A, a0, const)
    except InvalidInputError as exc:
        raise InstanceFormatError(path, str(exc)) from None
    raise InstanceFormatError(f"{path}.kind", f"unknown kind {kind!r}")


def problem_from_dict(doc) -> ChanceProblem:
    n = int(_get(doc, "n", ""))
    m = int(_get(doc, "m", ""))
    d = int(_get(doc, "d", ""))
    alpha = float(_get(doc, "alpha", ""))
    samples = _array(_get(doc, "samples", ""), "samples", 2, d)
    if samples.shape[1] != d:
        raise InstanceFormatError("samples", f"expected {d} columns, got {samples.shape[1]}")
    raw_maps = _get(doc, "maps", "")
    if not isinstance(raw_maps, list) or len(raw_maps) != m:
        raise InstanceFormatError("maps", f"expected a list of {m} maps")
    maps = []
    for j, mp in enumerate(raw_maps):
        p = f"maps[{j}]"
        a = _array(_get(mp, "a", p), f"{p}.a", 1)
        b = _array(_get(mp, "b", p), f"{p}.b", 1)
        if a.size != n:
            raise InstanceFormatError(f"{p}.a", f"expected length {n}")
        if b.size != d:
            raise InstanceFormatError(f"{p}.b", f"expected length {d}")
        B = mp.get("B")
        if B is not None:
            B = _array(B, f"{p}.B", 2)
            if B.shape != (n, d):
                raise InstanceFormatError(f"{p}.B", f"expected shape {(n, d)}")
        maps.append(AffineMap(a, b, float(mp.get("d", 0.0)), B))
    obj = _get(doc, "objective", "")
    g = _parse_function(_get(obj, "g", "objective"), "objective.g", n)
    h = _parse_function(_get(obj, "h", "objective"), "objective.h", n)
    dom = doc.get("domain") or {}
    parts = {}
    for key, nd in (("Aeq", 2), ("beq", 1), ("Gineq", 2), ("hineq", 1)):
        val = dom.get(key)
        parts[key] = (np.zeros((0, n)) if nd == 2 else np.zeros(0)) if val is None \
            else _array(val, f"domain.{key}", nd, n)
        if nd == 2 and parts[key].shape[1] != n:
            raise InstanceFormatError(f"domain.{key}", f"expected {n} columns")
    try:
        domain = Polyhedron(**parts)
        weights = doc.get("weights")
        if weights is not None:
            weights = _array(weights, "weights", 1)
        return ChanceProblem(DcObjective(g, h), domain,
                             ScenarioModel(samples, tuple(maps)), alpha, weights)
    except InstanceFormatError:
        raise
    except InvalidInputError as exc:
        raise InstanceFormatError("<instance>", str(exc)) from None


def load_instance(path) -> ChanceProblem:
    with open(path) as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceFormatError(f"line {exc.lineno}, column {exc.colno}", exc.msg) from None
    return problem_from_dict(doc)


def _function_to_dict(fn: ConvexFunction):
    out = {"kind": fn.kind}
    if fn.kind != "zero":
        out["a0"] = fn.a0.tolist()
        if fn.const:
            out["const"] = fn.const
    if fn.kind == "quadratic":
        out["A"] = fn.A.tolist()
    return out


def problem_to_dict(problem: ChanceProblem) -> dict:
    sc = problem.scenarios
    maps = []
    for mp in sc.maps:
        entry = {"a": mp.a.tolist(), "b": mp.b.tolist(), "d": mp.d}
        if mp.B is not None:
            entry["B"] = mp.B.tolist()
        maps.append(entry)
    dom = problem.domain
    return {
        "n": problem.n, "m": sc.m, "d": sc.d, "alpha": problem.alpha,
        "samples": sc.samples.tolist(),
        "maps": maps,
        "objective": {"g": _function_to_dict(problem.objective.g),
                      "h": _function_to_dict(problem.objective.h)},
        "domain": {"Aeq": dom.Aeq.tolist(), "beq": dom.beq.tolist(),
                   "Gineq": dom.Gineq.tolist(), "hineq": dom.hineq.tolist()},
        "weights": None if problem.weights is None else problem.weights.tolist(),
    }


def save_instance(problem: ChanceProblem, path) -> None:
    with open(path, "w") as fh:
        json.dump(problem_to_dict(problem), fh, indent=1)


def as_vector(x, n: int) -> np.ndarray:
    return _check_vector(x, n)


def stack_rows(blocks: Sequence[np.ndarray], ncols: int) -> np.ndarray:
    blocks = [b for b in blocks if b.size]
    if not blocks:
        return np.zeros((0, ncols))
    return np.vstack(blocks)
