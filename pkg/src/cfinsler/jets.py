"""Forward-mode jets over real coordinates with Wirtinger extraction.

A ``Jet`` carries the truncated Taylor expansion (total degree <= order) of a
complex-valued scalar field with respect to a chosen subset of the real
coordinates ``Re z^i, Im z^i, Re xi^i, Im xi^i``.  Arithmetic on jets lifts
any composition of +, -, *, /, sqrt, pow, log, exp, sin, cos, conj and
modulus-squared, so one evaluation of a metric on seeded jets yields every
partial derivative needed downstream.  Mixed holomorphic/antiholomorphic
derivatives are reconstructed on extraction via

    d/dw  = (d/dx - i d/dy) / 2,      d/dwbar = (d/dx + i d/dy) / 2.

Coefficients are stored in Taylor convention (divided by the factorial), so
multiplication is a truncated polynomial product.  Coefficient tables may be
batched: shape ``(L,)`` for a single point or ``(L, B)`` for ``B`` points.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import factorial
from typing import Iterable, Sequence

import numpy as np

MAX_ORDER = 4

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    _HAVE_NUMBA = False

# Tracked variables are (coord, index, part) with coord in {"z", "xi"} and
# part in {"re", "im"}; complex coordinate keys are (coord, index).
Var = tuple[str, int, str]
CoordKey = tuple[str, int]


def tracked_fiber(n: int) -> tuple[Var, ...]:
    """All 2n real fiber coordinates."""
    return tuple(("xi", i, p) for i in range(n) for p in ("re", "im"))


def tracked_base(n: int) -> tuple[Var, ...]:
    """All 2n real base coordinates."""
    return tuple(("z", i, p) for i in range(n) for p in ("re", "im"))


def tracked_all(n: int) -> tuple[Var, ...]:
    return tracked_base(n) + tracked_fiber(n)


def _graded_exponents(m: int, order: int) -> list[tuple[int, ...]]:
    # Graded ordering (total degree, then lex) so lower-order tables are a
    # prefix of higher-order ones; truncation is then a slice.
    out: list[tuple[int, ...]] = []
    for deg in range(order + 1):
        out.extend(
            sorted(
                tuple(e)
                for e in _compositions(deg, m)
            )
        )
    return out


def _compositions(total: int, m: int) -> Iterable[tuple[int, ...]]:
    if m == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for tail in _compositions(total - head, m - 1):
            yield (head,) + tail


if _HAVE_NUMBA:

    # fastmath only reassociates the complex multiply-accumulate; results stay
    # deterministic for a fixed build and input order.
    @numba.njit(cache=True, fastmath=True)
    def _mul_kernel(a, b, ia, ib, ic, out):  # pragma: no cover - jitted
        B = a.shape[1]
        for p in range(ia.size):
            va = a[ia[p]]
            vb = b[ib[p]]
            vo = out[ic[p]]
            for c in range(B):
                vo[c] += va[c] * vb[c]


class JetSpace:
    """Combinatorics shared by all jets over one tracked-variable layout."""

    _cache: dict[tuple[tuple[Var, ...], int], "JetSpace"] = {}

    def __init__(self, tracked: tuple[Var, ...], order: int):
        self.tracked = tracked
        self.order = order
        self.m = len(tracked)
        self.exponents = np.array(_graded_exponents(self.m, order), dtype=np.int64)
        self.size = len(self.exponents)
        self._index = {tuple(e): i for i, e in enumerate(self.exponents.tolist())}
        self._totals = self.exponents.sum(axis=1)
        # position of the (re, im) pair for each tracked complex coordinate
        self.coord_vars: dict[CoordKey, dict[str, int]] = {}
        for pos, (coord, idx, part) in enumerate(tracked):
            self.coord_vars.setdefault((coord, idx), {})[part] = pos
        self._mul_plan: tuple[np.ndarray, ...] | None = None
        self._deriv_plans: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self._factorials = np.array(
            [np.prod([factorial(int(k)) for k in e]) for e in self.exponents],
            dtype=np.float64,
        )

    @classmethod
    def get(cls, tracked: Sequence[Var], order: int) -> "JetSpace":
        key = (tuple(tracked), order)
        space = cls._cache.get(key)
        if space is None:
            space = cls(key[0], order)
            cls._cache[key] = space
        return space

    def shrunk(self, order: int) -> "JetSpace":
        return JetSpace.get(self.tracked, order)

    @property
    def mul_plan(self):
        if self._mul_plan is None:
            ia, ib, ic = [], [], []
            for i in range(self.size):
                di = self._totals[i]
                for j in range(self.size):
                    if di + self._totals[j] > self.order:
                        continue
                    ia.append(i)
                    ib.append(j)
                    ic.append(self._index[tuple((self.exponents[i] + self.exponents[j]).tolist())])
            ia = np.array(ia, dtype=np.int64)
            ib = np.array(ib, dtype=np.int64)
            ic = np.array(ic, dtype=np.int64)
            srt = np.argsort(ic, kind="stable")
            ia, ib, ic = ia[srt], ib[srt], ic[srt]
            seg = np.flatnonzero(np.r_[True, np.diff(ic) > 0])
            self._mul_plan = (ia, ib, ic, seg)
        return self._mul_plan

    def deriv_plan(self, var_pos: int) -> tuple[np.ndarray, np.ndarray]:
        # d/dx_r in Taylor convention: g_beta = f_{beta+e_r} * (beta_r + 1)
        plan = self._deriv_plans.get(var_pos)
        if plan is None:
            lower = self.shrunk(self.order - 1)
            src = np.empty(lower.size, dtype=np.int64)
            fac = np.empty(lower.size, dtype=np.float64)
            for i, e in enumerate(lower.exponents.tolist()):
                shifted = list(e)
                shifted[var_pos] += 1
                src[i] = self._index[tuple(shifted)]
                fac[i] = shifted[var_pos]
            plan = (src, fac)
            self._deriv_plans[var_pos] = plan
        return plan


def _as_coeff_array(value, batch_shape: tuple[int, ...]) -> np.ndarray:
    arr = np.asarray(value, dtype=np.complex128)
    if arr.shape != batch_shape:
        arr = np.broadcast_to(arr, batch_shape).copy()
    return arr


class Jet:
    """Truncated derivative table of one scalar field at one (batch of) point(s)."""

    __slots__ = ("space", "coeffs")

    def __init__(self, space: JetSpace, coeffs: np.ndarray):
        self.space = space
        self.coeffs = coeffs

    # -- constructors -------------------------------------------------------

    @staticmethod
    def constant(space: JetSpace, value, batch_shape: tuple[int, ...] = ()) -> "Jet":
        coeffs = np.zeros((space.size,) + batch_shape, dtype=np.complex128)
        coeffs[0] = _as_coeff_array(value, batch_shape)
        return Jet(space, coeffs)

    @staticmethod
    def variable(space: JetSpace, value, coord: CoordKey, batch_shape: tuple[int, ...] = ()) -> "Jet":
        jet = Jet.constant(space, value, batch_shape)
        parts = space.coord_vars.get(coord)
        if parts is None:
            raise ValueError(f"coordinate {coord} is not tracked in this jet space")
        unit = np.zeros(space.m, dtype=np.int64)
        unit[parts["re"]] = 1
        jet.coeffs[space._index[tuple(unit.tolist())]] = 1.0
        unit[parts["re"]] = 0
        unit[parts["im"]] = 1
        jet.coeffs[space._index[tuple(unit.tolist())]] = 1.0j
        return jet

    # -- basic properties ----------------------------------------------------

    @property
    def value(self):
        return self.coeffs[0]

    @property
    def order(self) -> int:
        return self.space.order

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.coeffs.shape[1:]

    def truncate(self, order: int) -> "Jet":
        if order == self.order:
            return self
        if order > self.order:
            raise ValueError("cannot raise jet order by truncation")
        lower = self.space.shrunk(order)
        return Jet(lower, self.coeffs[: lower.size])

    def copy(self) -> "Jet":
        return Jet(self.space, self.coeffs.copy())

    # -- ring operations ----------------------------------------------------

    def _align(self, other: "Jet") -> tuple["Jet", "Jet"]:
        if self.space.tracked != other.space.tracked:
            raise ValueError("jets over different tracked layouts cannot combine")
        k = min(self.order, other.order)
        return self.truncate(k), other.truncate(k)

    def __add__(self, other):
        if isinstance(other, Jet):
            a, b = self._align(other)
            return Jet(a.space, a.coeffs + b.coeffs)
        out = self.coeffs.copy()
        out[0] = out[0] + np.asarray(other, dtype=np.complex128)
        return Jet(self.space, out)

    __radd__ = __add__

    def __neg__(self):
        return Jet(self.space, -self.coeffs)

    def __sub__(self, other):
        return self + (-other if isinstance(other, Jet) else -np.asarray(other, dtype=np.complex128))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet):
            return Jet(self.space, self.coeffs * np.asarray(other, dtype=np.complex128))
        a, b = self._align(other)
        ia, ib, ic, seg = a.space.mul_plan
        ca, cb = a.coeffs, b.coeffs
        flat = ca.ndim == 1
        if flat:
            ca = ca[:, None]
            cb = cb[:, None]
        out = np.zeros_like(ca)
        if _HAVE_NUMBA:
            _mul_kernel(np.ascontiguousarray(ca), np.ascontiguousarray(cb), ia, ib, ic, out)
        else:
            prod = ca[ia] * cb[ib]
            out[ic[seg]] = np.add.reduceat(prod, seg, axis=0)
        return Jet(a.space, out[:, 0] if flat else out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * other.reciprocal()
        return Jet(self.space, self.coeffs / np.asarray(other, dtype=np.complex128))

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def conj(self) -> "Jet":
        # Tracked variables are real, so conjugation acts coefficient-wise.
        return Jet(self.space, np.conj(self.coeffs))

    def abs2(self) -> "Jet":
        """Modulus squared |f|^2 = f * conj(f)."""
        return self * self.conj()

    # -- analytic functions via truncated composition ------------------------

    def _compose(self, derivs: list[np.ndarray]) -> "Jet":
        # Horner evaluation of sum_j derivs[j] * (self - value)^j; derivs[j]
        # must be g^{(j)}(value) / j!.
        delta = self.copy()
        delta.coeffs[0] = 0.0
        result = Jet.constant(self.space, derivs[-1], self.batch_shape)
        for d in reversed(derivs[:-1]):
            result = result * delta
            result.coeffs[0] += _as_coeff_array(d, self.batch_shape)
        return result

    def _analytic(self, dfuns) -> "Jet":
        v = self.value
        derivs = []
        fac = 1.0
        for j, g in enumerate(dfuns[: self.order + 1]):
            fac = fac * (j if j > 0 else 1)
            derivs.append(np.asarray(g(v), dtype=np.complex128) / fac)
        return self._compose(derivs)

    def reciprocal(self) -> "Jet":
        return self._analytic([lambda v, j=j: (-1) ** j * factorial(j) / v ** (j + 1) for j in range(self.order + 1)])

    def sqrt(self) -> "Jet":
        return self.power(0.5)

    def power(self, p: float) -> "Jet":
        def der(j):
            c = 1.0
            for t in range(j):
                c *= p - t
            return lambda v: c * v ** (p - j)

        return self._analytic([der(j) for j in range(self.order + 1)])

    def log(self) -> "Jet":
        funs = [np.log]
        funs += [lambda v, j=j: (-1) ** (j - 1) * factorial(j - 1) / v ** j for j in range(1, self.order + 1)]
        return self._analytic(funs)

    def exp(self) -> "Jet":
        return self._analytic([np.exp] * (self.order + 1))

    def sin(self) -> "Jet":
        cycle = [np.sin, np.cos, lambda v: -np.sin(v), lambda v: -np.cos(v)]
        return self._analytic([cycle[j % 4] for j in range(self.order + 1)])

    def cos(self) -> "Jet":
        cycle = [np.cos, lambda v: -np.sin(v), lambda v: -np.cos(v), np.sin]
        return self._analytic([cycle[j % 4] for j in range(self.order + 1)])

    # -- derivative extraction ------------------------------------------------

    def deriv_real(self, var_pos: int) -> "Jet":
        """d/dx_r as a jet of one lower order."""
        if self.order == 0:
            raise ValueError("order-0 jet carries no derivatives")
        src, fac = self.space.deriv_plan(var_pos)
        shape = (1,) * (self.coeffs.ndim - 1)
        return Jet(self.space.shrunk(self.order - 1), self.coeffs[src] * fac.reshape((-1,) + shape))

    def _coord_parts(self, key: CoordKey) -> dict[str, int]:
        parts = self.space.coord_vars.get(key)
        if parts is None or "re" not in parts or "im" not in parts:
            raise ValueError(
                f"coordinate {key} is not tracked (tracked: {sorted(self.space.coord_vars)})"
            )
        return parts

    def wirtinger_jet(self, holo: Sequence[CoordKey] = (), anti: Sequence[CoordKey] = ()) -> "Jet":
        """Iterated Wirtinger derivative, returned as a lower-order jet."""
        if len(holo) + len(anti) > self.order:
            raise ValueError(
                f"requested derivative order {len(holo) + len(anti)} exceeds jet order {self.order}"
            )
        jet = self
        for key, sign in [(k, -1.0j) for k in holo] + [(k, +1.0j) for k in anti]:
            parts = jet._coord_parts(key)
            jet = (jet.deriv_real(parts["re"]) + sign * jet.deriv_real(parts["im"])) * 0.5
        return jet

    def wirtinger(self, holo: Sequence[CoordKey] = (), anti: Sequence[CoordKey] = ()):
        """Value of the mixed Wirtinger derivative d^{|holo|} dbar^{|anti|} f."""
        return self.wirtinger_jet(holo, anti).value


@dataclass(frozen=True)
class JetPoint:
    """Seeded evaluation point exposing coordinate jets.

    ``z`` and ``xi`` hold the complex coordinates, each an array of shape
    ``(n,)`` or ``(n, B)`` for batched evaluation.
    """

    z: np.ndarray
    xi: np.ndarray
    order: int
    space: JetSpace

    @property
    def n(self) -> int:
        return self.z.shape[0]

    @property
    def batch_shape(self) -> tuple[int, ...]:
        return self.z.shape[1:]

    def z_jets(self) -> list[Jet]:
        return [
            Jet.variable(self.space, self.z[i], ("z", i), self.batch_shape)
            if ("z", i) in self.space.coord_vars
            else Jet.constant(self.space, self.z[i], self.batch_shape)
            for i in range(self.n)
        ]

    def xi_jets(self) -> list[Jet]:
        return [
            Jet.variable(self.space, self.xi[i], ("xi", i), self.batch_shape)
            if ("xi", i) in self.space.coord_vars
            else Jet.constant(self.space, self.xi[i], self.batch_shape)
            for i in range(self.n)
        ]


def seed(z, xi, order: int, tracked: Sequence[Var]) -> JetPoint:
    """Seed a jet evaluation point.

    Parameters
    ----------
    z, xi : array_like
        Base and fiber coordinates, shape ``(n,)`` or ``(n, B)``.  The fiber
        vector must be nonzero (metrics are smooth only off the zero section).
    order : int
        Truncation order, between 1 and 4.
    tracked : sequence of (coord, index, part)
        Real coordinates carried by the jets; no duplicates allowed.
    """
    if not 1 <= order <= MAX_ORDER:
        raise ValueError(f"jet order must be in 1..{MAX_ORDER}, got {order}")
    tracked = tuple(tracked)
    if len(set(tracked)) != len(tracked):
        raise ValueError("tracked variable list contains duplicates")
    z = np.atleast_1d(np.asarray(z, dtype=np.complex128))
    xi = np.atleast_1d(np.asarray(xi, dtype=np.complex128))
    if z.shape != xi.shape:
        raise ValueError("base and fiber coordinate shapes differ")
    norms = np.sqrt((np.abs(xi) ** 2).sum(axis=0))
    if np.any(norms == 0.0):
        raise ValueError("fiber vector must be nonzero (zero section excluded)")
    return JetPoint(z=z, xi=xi, order=order, space=JetSpace.get(tracked, order))
