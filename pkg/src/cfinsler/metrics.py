"""Finsler metrics and their fiberwise tensors.

A metric is a chart-wise scalar field ``G(z, xi) = F^2``, (1,1)-homogeneous in
the fiber variable, evaluable both on plain complex numbers and on jets.  All
fiber tensors (fundamental tensor, inverse, third derivatives, Cartan tensor)
come from a single order-3 jet evaluation per point.

Built-in metrics are registered by name; the quartic metric declares the fiber
axes as its degeneracy locus and samplers avoid them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .jets import Jet, seed, tracked_fiber

DEGENERACY_RTOL = 1e-12


class DegeneracyError(ValueError):
    """Fiber Hessian is numerically singular at the named point."""


def _conj(x):
    return x.conj() if isinstance(x, Jet) else np.conj(x)


def _abs2(x):
    return x * _conj(x)


def _sqrt(x):
    return x.sqrt() if isinstance(x, Jet) else np.sqrt(x)


def _pow(x, p):
    return x.power(p) if isinstance(x, Jet) else np.power(x, p)


def _sin(x):
    return x.sin() if isinstance(x, Jet) else np.sin(x)


def _exp(x):
    return x.exp() if isinstance(x, Jet) else np.exp(x)


class FinslerMetric:
    """Base class: subclasses implement ``G(z, xi, chart)``.

    Flags describe what the metric claims about itself; tests and the runtime
    verify the cheap consequences (Hermitian cartan norm, constant volume)
    instead of trusting them blindly.
    """

    name = "abstract"
    n: int = 0
    claims_hermitian = False
    claims_locally_minkowski = False
    claims_berwald = False
    claims_constant_volume = False

    def G(self, z, xi, chart: int = 0):
        raise NotImplementedError

    def locus_distance(self, xi):
        """Scaled distance to the declared degeneracy locus (None if empty)."""
        return None

    def describe(self) -> str:
        return self.name


class FlatHermitian(FinslerMetric):
    """G = sum |xi^i|^2."""

    claims_hermitian = True
    claims_locally_minkowski = True
    claims_berwald = True
    claims_constant_volume = True

    def __init__(self, n: int = 1):
        self.n = n
        self.name = f"flat-hermitian(n={n})"

    def G(self, z, xi, chart: int = 0):
        total = _abs2(xi[0])
        for i in range(1, self.n):
            total = total + _abs2(xi[i])
        return total


class FubiniStudy(FinslerMetric):
    """Fubini-Study on CP^1: G = |xi|^2 / (1+|z|^2)^2, same formula in both charts."""

    claims_hermitian = True
    claims_berwald = True
    claims_constant_volume = True
    name = "fubini-study"
    n = 1

    def G(self, z, xi, chart: int = 0):
        return _abs2(xi[0]) * _pow(1.0 + _abs2(z[0]), -2)


class FubiniStudyConformal(FinslerMetric):
    """e^{c u(z)} FS with the global function u = Re z / (1+|z|^2).

    u is invariant under z -> 1/z, so the rescaled metric is global on CP^1.
    """

    claims_hermitian = True
    claims_berwald = True
    claims_constant_volume = True
    n = 1

    def __init__(self, c: float = 0.4):
        self.c = float(c)
        self.name = f"fs-conformal(c={self.c})"

    def G(self, z, xi, chart: int = 0):
        denom = 1.0 + _abs2(z[0])
        u = (z[0] + _conj(z[0])) * 0.5 / denom
        return _exp(u * self.c) * _abs2(xi[0]) * _pow(denom, -2)


class QuarticMinkowski(FinslerMetric):
    """G = sqrt(|xi^1|^4 + |xi^2|^4); locally Minkowski, degenerate on the axes."""

    claims_locally_minkowski = True
    claims_berwald = True
    claims_constant_volume = True
    name = "quartic-minkowski"
    n = 2

    def G(self, z, xi, chart: int = 0):
        a, b = _abs2(xi[0]), _abs2(xi[1])
        return _sqrt(a * a + b * b)

    def locus_distance(self, xi):
        xi = np.asarray(xi, dtype=np.complex128)
        norm = np.sqrt((np.abs(xi) ** 2).sum(axis=0))
        return np.abs(xi).min(axis=0) / norm


class QuarticBlend(FinslerMetric):
    """G = ((|xi^1|^2+|xi^2|^2)^2 + lam (|xi^1|^4+|xi^2|^4))^(1/2) on the torus."""

    claims_locally_minkowski = True
    claims_berwald = True
    claims_constant_volume = True
    n = 2

    def __init__(self, lam: float = 0.1):
        self.lam = float(lam)
        self.name = f"quartic-blend(lam={self.lam})"

    def G(self, z, xi, chart: int = 0):
        a, b = _abs2(xi[0]), _abs2(xi[1])
        s = a + b
        return _sqrt(s * s + self.lam * (a * a + b * b))


class ProductFubiniStudy(FinslerMetric):
    """Product FS on CP^1 x CP^1: G = s1 + s2 with s_i = |xi^i|^2/(1+|z^i|^2)^2."""

    claims_hermitian = True
    claims_berwald = True
    claims_constant_volume = True
    name = "product-fubini-study"
    n = 2

    def _factors(self, z, xi):
        return [_abs2(xi[i]) * _pow(1.0 + _abs2(z[i]), -2) for i in range(2)]

    def G(self, z, xi, chart: int = 0):
        s1, s2 = self._factors(z, xi)
        return s1 + s2


class FsProductBlend(ProductFubiniStudy):
    """Blend of the product FS norms: G = ((s1+s2)^2 + lam (s1^2+s2^2))^(1/2).

    Each s_i is chart-invariant, so the blend is global on CP^1 x CP^1;
    non-Hermitian for lam > 0.  The fiber shape at every point is the same
    Minkowski model up to a diagonal rescaling, so vol(z) is constant.
    """

    claims_hermitian = False
    claims_berwald = False
    claims_locally_minkowski = False
    claims_constant_volume = True

    def __init__(self, lam: float = 0.1):
        self.lam = float(lam)
        self.name = f"fs-product-blend(lam={self.lam})"

    def G(self, z, xi, chart: int = 0):
        s1, s2 = self._factors(z, xi)
        s = s1 + s2
        return _sqrt(s * s + self.lam * (s1 * s1 + s2 * s2))


class WarpedBlend(FinslerMetric):
    """Torus blend with z-dependent weight: genuinely z-dependent fiber shape.

    lam(z) = lam0 (1 + sin(2 pi x1) sin(2 pi y1) / 2), doubly periodic, so the
    metric lives on the square torus T x T.  vol(z) varies with z; this is the
    exemplar for d log vol != 0.
    """

    claims_hermitian = False
    claims_berwald = False
    claims_constant_volume = False
    n = 2

    def __init__(self, lam0: float = 0.2):
        self.lam0 = float(lam0)
        self.name = f"warped-blend(lam0={self.lam0})"

    def G(self, z, xi, chart: int = 0):
        x = (z[0] + _conj(z[0])) * 0.5
        y = (z[0] - _conj(z[0])) * (-0.5j)
        lam = (_sin(x * (2 * np.pi)) * _sin(y * (2 * np.pi)) * 0.5 + 1.0) * self.lam0
        a, b = _abs2(xi[0]), _abs2(xi[1])
        s = a + b
        return _sqrt(s * s + lam * (a * a + b * b))


_REGISTRY = {
    "flat-hermitian": lambda n=1, **_: FlatHermitian(n=int(n)),
    "fubini-study": lambda **_: FubiniStudy(),
    "fs-conformal": lambda c=0.4, **_: FubiniStudyConformal(c=c),
    "quartic-minkowski": lambda **_: QuarticMinkowski(),
    "quartic-blend": lambda lam=0.1, **_: QuarticBlend(lam=lam),
    "product-fubini-study": lambda **_: ProductFubiniStudy(),
    "fs-product-blend": lambda lam=0.1, **_: FsProductBlend(lam=lam),
    "warped-blend": lambda lam=0.2, **_: WarpedBlend(lam0=lam),
}


def metric_by_name(name: str, **params) -> FinslerMetric:
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown metric '{name}' (known: {sorted(_REGISTRY)})") from None
    return factory(**params)


def builtin_metric_names() -> list[str]:
    return sorted(_REGISTRY)


# -- fiber tensors -----------------------------------------------------------


@dataclass
class MetricTensors:
    """All fiber tensors at one point (trailing axes = batch)."""

    G: np.ndarray
    G_i: np.ndarray          # dG/dxi^i
    G_ij: np.ndarray         # d2G/dxi^i dxi^j
    G_ibj: np.ndarray        # d2G/dxi^i dxibar^j  (fundamental tensor)
    G_inv: np.ndarray        # inverse fundamental tensor, G^{i jbar}
    G_ijk: np.ndarray        # d3G/dxi^i dxi^j dxi^k
    G_ijbk: np.ndarray       # d3G/dxi^i dxibar^j dxi^k
    G_ijkb: np.ndarray       # d3G/dxi^i dxi^j dxibar^k
    cartan: np.ndarray       # C^k_{ij} = G^{k lbar} G_{i lbar j}
    min_eigenvalue: np.ndarray


def _fiber_jet(metric: FinslerMetric, z, xi, order: int = 3) -> Jet:
    pt = seed(z, xi, order, tracked_fiber(metric.n))
    return metric.G(pt.z_jets(), pt.xi_jets())


def _invert_hermitian(h: np.ndarray, z, xi) -> tuple[np.ndarray, np.ndarray]:
    """Inverse and min eigenvalue of G_{i jbar}; batch-aware, degeneracy-checked.

    The returned array follows the index convention G^{i jbar}, i.e. it
    satisfies G^{i jbar} G_{k jbar} = delta^i_k (contraction over the barred
    slot), which is the transpose of the plain matrix inverse.
    """
    hm = np.moveaxis(h, (0, 1), (-2, -1))
    det = np.linalg.det(hm)
    scale = np.max(np.abs(hm), axis=(-2, -1)) ** hm.shape[-1]
    bad = np.abs(det) < DEGENERACY_RTOL * np.maximum(scale, 1e-300)
    if np.any(bad):
        idx = tuple(np.argwhere(np.atleast_1d(bad))[0])
        zz = np.asarray(z)[(slice(None),) + idx] if np.asarray(z).ndim > 1 else z
        xx = np.asarray(xi)[(slice(None),) + idx] if np.asarray(xi).ndim > 1 else xi
        raise DegeneracyError(
            f"fundamental tensor degenerate at z={np.asarray(zz).ravel()}, xi={np.asarray(xx).ravel()}"
        )
    inv = np.swapaxes(np.linalg.inv(hm), -2, -1)
    eig = np.linalg.eigvalsh(0.5 * (hm + np.swapaxes(hm.conj(), -2, -1)))
    return np.moveaxis(inv, (-2, -1), (0, 1)), eig[..., 0]


def metric_tensors(metric: FinslerMetric, z, xi) -> MetricTensors:
    """Compute every fiber tensor from one order-3 jet evaluation.

    Raises ``DegeneracyError`` when the fundamental tensor is singular (for
    the quartic metric that happens on the fiber axes).
    """
    n = metric.n
    jet = _fiber_jet(metric, z, xi)
    batch = jet.batch_shape
    k = ("xi",)

    def w(holo, anti):
        return jet.wirtinger([("xi", i) for i in holo], [("xi", i) for i in anti])

    G = np.real(jet.value)
    G_i = np.stack([w([i], []) for i in range(n)])
    G_ij = np.stack([np.stack([w([i, j], []) for j in range(n)]) for i in range(n)])
    G_ibj = np.stack([np.stack([w([i], [j]) for j in range(n)]) for i in range(n)])
    G_ijk = np.stack(
        [np.stack([np.stack([w([i, j, kk], []) for kk in range(n)]) for j in range(n)]) for i in range(n)]
    )
    G_ijbk = np.stack(
        [np.stack([np.stack([w([i, kk], [j]) for kk in range(n)]) for j in range(n)]) for i in range(n)]
    )
    G_ijkb = np.stack(
        [np.stack([np.stack([w([i, j], [kk]) for kk in range(n)]) for j in range(n)]) for i in range(n)]
    )
    G_inv, min_eig = _invert_hermitian(G_ibj, z, xi)
    # C^k_{ij} = G^{k lbar} G_{i lbar j}
    cartan = np.einsum("kl...,ilj...->kij...", G_inv, G_ijbk)
    return MetricTensors(
        G=G,
        G_i=G_i,
        G_ij=G_ij,
        G_ibj=G_ibj,
        G_inv=G_inv,
        G_ijk=G_ijk,
        G_ijbk=G_ijbk,
        G_ijkb=G_ijkb,
        cartan=cartan,
        min_eigenvalue=min_eig,
    )


def homogeneity_report(metric: FinslerMetric, z, xi) -> np.ndarray:
    """Absolute residuals of the nine fiber homogeneity identities.

    Order: [hermitian symmetry, inverse identities (both), G = G_{i jbar} xi
    xibar, G_i xi = G, G_{i jbar} xibar = G_i, G_{ij} xi = 0, G_{ijk} xi =
    -G_{ij}, G_{ij kbar} xibar = G_{ij}, G_{i jbar k} xi = 0].
    """
    t = metric_tensors(metric, z, xi)
    xiv = np.asarray(xi, dtype=np.complex128)
    n = metric.n
    eye = np.eye(n).reshape((n, n) + (1,) * (xiv.ndim - 1))

    def mx(a):
        return np.max(np.abs(a), axis=tuple(range(a.ndim - (xiv.ndim - 1))))

    res = [
        mx(np.conj(np.swapaxes(t.G_ibj, 0, 1)) - t.G_ibj),
        np.maximum(
            mx(np.einsum("ij...,kj...->ik...", t.G_inv, t.G_ibj) - eye),
            mx(np.einsum("ij...,ik...->jk...", t.G_inv, t.G_ibj) - eye),
        ),
        mx(np.einsum("ij...,i...,j...->...", t.G_ibj, xiv, np.conj(xiv)) - t.G),
        mx(np.einsum("i...,i...->...", t.G_i, xiv) - t.G),
        mx(np.einsum("ij...,j...->i...", t.G_ibj, np.conj(xiv)) - t.G_i),
        mx(np.einsum("ij...,j...->i...", t.G_ij, xiv)),
        mx(np.einsum("ijk...,k...->ij...", t.G_ijk, xiv) + t.G_ij),
        mx(np.einsum("ijk...,k...->ij...", t.G_ijkb, np.conj(xiv)) - t.G_ij),
        mx(np.einsum("ijk...,k...->ij...", t.G_ijbk, xiv)),
    ]
    return np.stack([np.asarray(r, dtype=float) for r in res])


def cartan_norm(metric: FinslerMetric, z, xi) -> float:
    """Max-abs entry of the Cartan tensor; ~0 classifies the point Hermitian."""
    t = metric_tensors(metric, z, xi)
    return float(np.max(np.abs(t.cartan)))


@dataclass
class PseudoconvexityScan:
    min_eigenvalue: float
    worst_direction: np.ndarray
    on_locus: bool
    samples: int


def pseudoconvexity_scan(
    metric: FinslerMetric,
    z,
    count: int = 64,
    seed_value: int = 0,
    directions=None,
    locus_tol: float = 1e-6,
) -> PseudoconvexityScan:
    """Minimum fiber-Hessian eigenvalue over sampled unit directions.

    Seeded sampling avoids the declared degeneracy locus; passing explicit
    ``directions`` (shape (n, B)) bypasses the avoidance and flags any locus
    hits in the result instead of crashing.
    """
    n = metric.n
    on_locus = False
    if directions is None:
        rng = np.random.default_rng(seed_value)
        dirs = []
        while len(dirs) < count:
            v = rng.normal(size=n) + 1j * rng.normal(size=n)
            v = v / np.linalg.norm(v)
            dist = metric.locus_distance(v[:, None])
            if dist is not None and float(dist[0]) < locus_tol:
                continue
            dirs.append(v)
        directions = np.stack(dirs, axis=1)
    else:
        directions = np.asarray(directions, dtype=np.complex128)
        dist = metric.locus_distance(directions)
        if dist is not None and np.any(dist < locus_tol):
            on_locus = True
    zb = np.repeat(np.asarray(z, dtype=np.complex128)[:, None], directions.shape[1], axis=1)
    jet = _fiber_jet(metric, zb, directions, order=2)
    h = np.stack(
        [
            np.stack([jet.wirtinger([("xi", i)], [("xi", j)]) for j in range(n)])
            for i in range(n)
        ]
    )
    hm = np.moveaxis(h, (0, 1), (-2, -1))
    eigs = np.linalg.eigvalsh(0.5 * (hm + np.swapaxes(hm.conj(), -2, -1)))[..., 0]
    worst = int(np.argmin(eigs))
    return PseudoconvexityScan(
        min_eigenvalue=float(eigs[worst]),
        worst_direction=directions[:, worst],
        on_locus=on_locus,
        samples=directions.shape[1],
    )
