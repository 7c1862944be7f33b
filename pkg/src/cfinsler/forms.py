"""Sparse exterior algebra over the mixed coframe {dz, dzbar, dxi, dxibar}.

Forms are pointwise objects: a sparse map from strictly increasing covector
tuples to complex coefficients.  Coefficients may be scalars or numpy arrays
of a common batch shape, so all operations work on whole quadrature batches
at once.  The global covector order is

    base-holo < base-anti < fiber-holo < fiber-anti,  ascending index inside
    each slot,

encoded as ``label = slot * n + index``.  The fiber labels stand for the
horizontal-adapted coframe ``delta xi`` whenever a connection is in play; the
algebra itself is agnostic.

Orientation is fixed so that ``(i/2)^n dz^1 ^ dzbar^1 ^ ... ^ dz^n ^ dzbar^n``
is the positive real volume element; ``top_density`` converts a top-degree
coefficient to the corresponding real density.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

BASE_HOLO, BASE_ANTI, FIBER_HOLO, FIBER_ANTI = 0, 1, 2, 3

PRUNE_TOL = 1e-300  # exact-zero pruning only; never alters numerics


def _is_zero(c) -> bool:
    if isinstance(c, np.ndarray):
        return bool(np.all(np.abs(c) <= PRUNE_TOL))
    return abs(c) <= PRUNE_TOL


def _merge_signed(t1: tuple[int, ...], t2: tuple[int, ...]):
    """Merge two strictly increasing tuples; returns (sign, merged) or None."""
    merged = []
    sign = 1
    i = j = 0
    n1, n2 = len(t1), len(t2)
    while i < n1 and j < n2:
        a, b = t1[i], t2[j]
        if a == b:
            return None
        if a < b:
            merged.append(a)
            i += 1
        else:
            # b jumps over the remaining n1 - i entries of t1
            if (n1 - i) % 2:
                sign = -sign
            merged.append(b)
            j += 1
    merged.extend(t1[i:])
    merged.extend(t2[j:])
    return sign, tuple(merged)


def _sort_signed(labels: Sequence[int]):
    """Sort distinct labels, tracking permutation parity; None if repeated."""
    arr = list(labels)
    sign = 1
    for i in range(1, len(arr)):
        j = i
        while j > 0 and arr[j - 1] > arr[j]:
            arr[j - 1], arr[j] = arr[j], arr[j - 1]
            sign = -sign
            j -= 1
        if j > 0 and arr[j - 1] == arr[j]:
            return None
    return sign, tuple(arr)


class ExteriorForm:
    """Complex-valued exterior form at a point (coefficients may be batched)."""

    __slots__ = ("n", "degree", "terms")

    def __init__(self, n: int, degree: int, terms: dict | None = None):
        self.n = n
        self.degree = degree
        self.terms = terms if terms is not None else {}

    # -- constructors --------------------------------------------------------

    @staticmethod
    def zero(n: int, degree: int = 0) -> "ExteriorForm":
        return ExteriorForm(n, degree)

    @staticmethod
    def scalar(n: int, value) -> "ExteriorForm":
        f = ExteriorForm(n, 0)
        f._add_term((), value)
        return f

    @staticmethod
    def covector(n: int, slot: int, index: int, value=1.0) -> "ExteriorForm":
        if not 0 <= index < n:
            raise ValueError(f"covector index {index} outside dimension {n}")
        f = ExteriorForm(n, 1)
        f._add_term((slot * n + index,), value)
        return f

    def label(self, slot: int, index: int) -> int:
        return slot * self.n + index

    # -- bookkeeping ---------------------------------------------------------

    def _add_term(self, labels: tuple[int, ...], coeff) -> None:
        if _is_zero(coeff):
            return
        cur = self.terms.get(labels)
        if cur is None:
            self.terms[labels] = coeff
        else:
            new = cur + coeff
            if _is_zero(new):
                del self.terms[labels]
            else:
                self.terms[labels] = new

    def coefficient(self, labels: tuple[int, ...]):
        return self.terms.get(tuple(labels), 0.0)

    def max_abs(self) -> float:
        m = 0.0
        for c in self.terms.values():
            m = max(m, float(np.max(np.abs(c))) if isinstance(c, np.ndarray) else abs(c))
        return m

    def copy(self) -> "ExteriorForm":
        return ExteriorForm(self.n, self.degree, dict(self.terms))

    def __repr__(self) -> str:
        names = {0: "dz", 1: "dzb", 2: "dxi", 3: "dxib"}
        parts = []
        for labels, c in sorted(self.terms.items()):
            mono = "^".join(f"{names[l // self.n]}{l % self.n + 1}" for l in labels) or "1"
            parts.append(f"({c})*{mono}")
        return " + ".join(parts) if parts else "0"

    # -- linear structure ------------------------------------------------------

    def __add__(self, other: "ExteriorForm") -> "ExteriorForm":
        if self.n != other.n:
            raise ValueError("dimension mismatch")
        if not self.terms:
            return other.copy() if other.terms else ExteriorForm(self.n, self.degree)
        if not other.terms:
            return self.copy()
        if self.degree != other.degree:
            raise ValueError(f"cannot add degree {self.degree} and {other.degree}")
        out = self.copy()
        for labels, c in other.terms.items():
            out._add_term(labels, c)
        return out

    def __sub__(self, other: "ExteriorForm") -> "ExteriorForm":
        return self + other.scale(-1.0)

    def scale(self, factor) -> "ExteriorForm":
        out = ExteriorForm(self.n, self.degree)
        for labels, c in self.terms.items():
            out._add_term(labels, c * factor)
        return out

    # -- multiplicative structure ----------------------------------------------

    def wedge(self, other: "ExteriorForm") -> "ExteriorForm":
        if self.n != other.n:
            raise ValueError("dimension mismatch")
        out = ExteriorForm(self.n, self.degree + other.degree)
        for t1, c1 in self.terms.items():
            for t2, c2 in other.terms.items():
                merged = _merge_signed(t1, t2)
                if merged is None:
                    continue
                sign, labels = merged
                out._add_term(labels, (c1 * c2) * sign if sign < 0 else c1 * c2)
        return out

    def __xor__(self, other: "ExteriorForm") -> "ExteriorForm":
        return self.wedge(other)

    def conj(self) -> "ExteriorForm":
        """Complex conjugate; swaps holo and anti labels with parity sign."""
        out = ExteriorForm(self.n, self.degree)
        for labels, c in self.terms.items():
            mapped = [l + self.n if (l // self.n) % 2 == 0 else l - self.n for l in labels]
            sorted_ = _sort_signed(mapped)
            if sorted_ is None:  # cannot happen: the swap is a bijection
                continue
            sign, tup = sorted_
            cc = np.conj(c) if isinstance(c, np.ndarray) else complex(c).conjugate()
            out._add_term(tup, cc * sign)
        return out

    def real_part(self) -> "ExteriorForm":
        """Re(f) = (f + conj f) / 2."""
        return (self + self.conj()).scale(0.5)

    def contract(self, vector, slot: int) -> "ExteriorForm":
        """Interior product with ``vector^i d/d(slot coordinate i)``."""
        if self.degree == 0:
            return ExteriorForm(self.n, 0)
        out = ExteriorForm(self.n, self.degree - 1)
        lo, hi = slot * self.n, (slot + 1) * self.n
        for labels, c in self.terms.items():
            for pos, l in enumerate(labels):
                if lo <= l < hi:
                    comp = vector[l - lo]
                    coeff = c * comp if pos % 2 == 0 else -(c * comp)
                    out._add_term(labels[:pos] + labels[pos + 1 :], coeff)
        return out

    # -- section pullback --------------------------------------------------------

    def pullback_section(self, jacobian, connection=None) -> "ExteriorForm":
        """Pull back along z -> (z, X(z)) in the adapted coframe.

        ``delta xi^i`` maps to ``(dX^i/dz^j + N^i_j) dz^j`` and fiber-anti labels
        to the conjugate on ``dzbar``; base labels pass through.  ``jacobian``
        is the holomorphic Jacobian of X, ``connection`` the nonlinear
        connection N at (z, X(z)); both (n, n), entries possibly batched.
        """
        n = self.n
        jac = np.asarray(jacobian) if connection is None else None
        if connection is None:
            M = np.asarray(jacobian, dtype=object)
        else:
            M = np.empty((n, n), dtype=object)
            for i in range(n):
                for j in range(n):
                    M[i, j] = jacobian[i][j] + connection[i][j]
        out = ExteriorForm(n, self.degree)
        for labels, c in self.terms.items():
            piece = ExteriorForm.scalar(n, c)
            for l in labels:
                slot, idx = l // n, l % n
                if slot in (BASE_HOLO, BASE_ANTI):
                    repl = ExteriorForm.covector(n, slot, idx)
                else:
                    repl = ExteriorForm(n, 1)
                    for j in range(n):
                        comp = M[idx, j] if isinstance(M, np.ndarray) else M[idx][j]
                        if slot == FIBER_ANTI:
                            comp = np.conj(comp)
                        repl._add_term((BASE_ANTI * n + j if slot == FIBER_ANTI else BASE_HOLO * n + j,), comp)
                piece = piece.wedge(repl)
            out = out + piece if out.terms or piece.terms else out
        out.degree = self.degree
        return out


# -- matrices of forms -----------------------------------------------------


class FormMatrix:
    """n x n matrix of exterior forms of one common degree.

    Entry ``[k][i]`` carries the upper index k (row) and lower index i
    (column), so the matrix wedge product below implements
    ``(A ^ B)^k_i = A^k_s ^ B^s_i``.
    """

    __slots__ = ("n", "degree", "entries")

    def __init__(self, n: int, degree: int, entries=None):
        self.n = n
        self.degree = degree
        if entries is None:
            entries = [[ExteriorForm(n, degree) for _ in range(n)] for _ in range(n)]
        self.entries = entries
        for row in entries:
            for e in row:
                if e.terms and e.degree != degree:
                    raise ValueError("matrix entries must share one degree")

    def __getitem__(self, idx):
        return self.entries[idx]

    def wedge_matmul(self, other: "FormMatrix") -> "FormMatrix":
        n = self.n
        out = FormMatrix(n, self.degree + other.degree)
        for k in range(n):
            for i in range(n):
                acc = ExteriorForm(n, self.degree + other.degree)
                for s in range(n):
                    acc = acc + self.entries[k][s].wedge(other.entries[s][i])
                out.entries[k][i] = acc
        return out

    def add(self, other: "FormMatrix") -> "FormMatrix":
        out = FormMatrix(self.n, self.degree)
        for k in range(self.n):
            for i in range(self.n):
                out.entries[k][i] = self.entries[k][i] + other.entries[k][i]
        return out

    def scale(self, factor) -> "FormMatrix":
        out = FormMatrix(self.n, self.degree)
        for k in range(self.n):
            for i in range(self.n):
                out.entries[k][i] = self.entries[k][i].scale(factor)
        return out

    def max_abs(self) -> float:
        return max(e.max_abs() for row in self.entries for e in row)


def _permutations_signed(n: int):
    import itertools

    base = list(range(n))
    for perm in itertools.permutations(base):
        inv = sum(1 for a in range(n) for b in range(a + 1, n) if perm[a] > perm[b])
        yield (-1) ** inv, perm


def form_det(m: FormMatrix) -> ExteriorForm:
    """Determinant by permutation expansion (entries must commute)."""
    out = ExteriorForm(m.n, m.degree * m.n)
    for sign, perm in _permutations_signed(m.n):
        prod = ExteriorForm.scalar(m.n, 1.0)
        for i in range(m.n):
            prod = prod.wedge(m.entries[i][perm[i]])
        out = out + prod.scale(sign)
    return out


def det_poly(a: FormMatrix, b: FormMatrix) -> list[ExteriorForm]:
    """Coefficients of det(lambda*A + B) in powers of lambda.

    Returns ``[det^0, ..., det^n]`` with ``det^0 = det(B)`` and
    ``det^n = det(A)``.  A must have even-degree entries (so they commute);
    B must be scalar (degree 0).
    """
    import itertools

    if a.degree % 2 != 0:
        raise ValueError("det_poly requires even-degree entries in the first matrix")
    if b.degree != 0:
        raise ValueError("det_poly requires scalar entries in the second matrix")
    n = a.n
    out = [ExteriorForm(n, a.degree * j) for j in range(n + 1)]
    for sign, perm in _permutations_signed(n):
        for subset_size in range(n + 1):
            for subset in itertools.combinations(range(n), subset_size):
                chosen = set(subset)
                prod = ExteriorForm.scalar(n, 1.0)
                for i in range(n):
                    entry = a.entries[i][perm[i]] if i in chosen else b.entries[i][perm[i]]
                    prod = prod.wedge(entry)
                out[subset_size] = out[subset_size] + prod.scale(sign)
    return out


# -- numeric exterior derivative ---------------------------------------------


def _central_difference(field: Callable, w: np.ndarray, q: int, part: str, h: float):
    delta = np.zeros_like(w)
    delta[q] = h if part == "re" else 1j * h
    return (field(w + delta) - field(w - delta)).scale(1.0 / (2 * h))


def _numeric_d_general(
    field: Callable,
    w: np.ndarray,
    labels: Sequence[tuple[int, int]],
    h: float,
    refine: bool,
    part: str,
) -> ExteriorForm:
    if h < 1e-8:
        raise ValueError(f"numeric derivative step {h} underflows the guard 1e-8")
    sample = field(w)
    n = sample.n
    out = ExteriorForm(n, sample.degree + 1)
    for q, (holo_label, anti_label) in enumerate(labels):
        comps = {}
        for reim in ("re", "im"):
            d1 = _central_difference(field, w, q, reim, h)
            if refine:
                d2 = _central_difference(field, w, q, reim, h / 2)
                d1 = d2.scale(4.0 / 3.0) + d1.scale(-1.0 / 3.0)
            comps[reim] = d1
        d_holo = comps["re"].scale(0.5) + comps["im"].scale(-0.5j)
        d_anti = comps["re"].scale(0.5) + comps["im"].scale(0.5j)
        if part in ("d", "holo"):
            cov = ExteriorForm(n, 1)
            cov._add_term((holo_label,), 1.0)
            out = out + cov.wedge(d_holo)
        if part in ("d", "anti"):
            cov = ExteriorForm(n, 1)
            cov._add_term((anti_label,), 1.0)
            out = out + cov.wedge(d_anti)
    return out


def numeric_d(
    field: Callable[[np.ndarray], ExteriorForm],
    z: np.ndarray,
    h: float = 1e-4,
    refine: bool = True,
    part: str = "d",
) -> ExteriorForm:
    """Numeric exterior derivative of a base-coordinate form field.

    ``field`` maps base points (shape (n,) or (n, B)) to forms whose
    coefficients depend on the base coordinates only.  Central differences
    with one Richardson refinement by default (O(h^2) without, O(h^4) with).
    ``part`` selects "d", "holo" (the dz-part) or "anti" (the dzbar-part).
    """
    z = np.asarray(z, dtype=np.complex128)
    n = z.shape[0]
    labels = [(BASE_HOLO * n + q, BASE_ANTI * n + q) for q in range(n)]
    return _numeric_d_general(field, z, labels, h, refine, part)


def numeric_d_total(
    field: Callable[[np.ndarray], ExteriorForm],
    z: np.ndarray,
    xi: np.ndarray,
    h: float = 1e-4,
    refine: bool = True,
    part: str = "d",
) -> ExteriorForm:
    """Numeric d over base and fiber coordinates in the coordinate coframe.

    ``field`` receives the concatenated vector (z, xi) of length 2n.
    """
    z = np.asarray(z, dtype=np.complex128)
    xi = np.asarray(xi, dtype=np.complex128)
    n = z.shape[0]
    w = np.concatenate([z, xi], axis=0)
    labels = [(BASE_HOLO * n + q, BASE_ANTI * n + q) for q in range(n)]
    labels += [(FIBER_HOLO * n + q, FIBER_ANTI * n + q) for q in range(n)]
    return _numeric_d_general(field, w, labels, h, refine, part)


# -- integration ------------------------------------------------------------


def orientation_factor(n: int) -> complex:
    """Converts the canonical-order top coefficient to the real density.

    With positive orientation (i/2)^n dz^1^dzbar^1^...^dz^n^dzbar^n and
    canonical storage dz^1..dz^n^dzbar^1..dzbar^n, a stored coefficient c
    corresponds to the real density c * (-1)^(n(n-1)/2) * (-2i)^n.
    """
    return (-1) ** (n * (n - 1) // 2) * (-2j) ** n


def top_density(f: ExteriorForm):
    """Real-measure density of a top-degree base form."""
    n = f.n
    top = tuple(range(2 * n))
    for labels in f.terms:
        if labels != top:
            raise ValueError("form is not of pure top base degree")
    return f.coefficient(top) * orientation_factor(n)


def fsum_c(values) -> complex:
    """Exactly rounded complex sum (order-independent, deterministic)."""
    arr = np.asarray(values, dtype=np.complex128).ravel()
    return complex(math.fsum(arr.real), math.fsum(arr.imag))


def integrate_top(field: Callable[[np.ndarray], ExteriorForm], nodes: np.ndarray, weights: np.ndarray) -> complex:
    """Integrate a top-degree base-form field over quadrature nodes.

    ``nodes`` has shape (n, B); ``weights`` (B,) are real weights for the
    Euclidean measure dx^1 dy^1 ... dx^n dy^n.  Compensated (exact) summation.
    """
    f = field(nodes)
    if not f.terms:
        return 0.0 + 0.0j
    dens = top_density(f)
    return fsum_c(np.asarray(dens) * weights)
