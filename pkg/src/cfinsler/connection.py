"""Nonlinear connection, Chern-Finsler/Rund connection forms, curvature blocks.

Everything is computed from one order-k jet evaluation of G per point via a
small tower: fundamental tensor jets -> inverse -> nonlinear connection ->
horizontal (Rund) coefficients and Cartan tensor -> curvature blocks

    R^j_{ik lbar} = -(delta Gamma^j_{i,k}/delta zbar^l
                      + C^j_{is} delta N^s_k/delta zbar^l)
    P^j_{ik,lbar} = -(d Gamma^j_{i,k}/d xibar^l + C^j_{is} dN^s_k/d xibar^l)
    S^j_{ik,lbar} = -delta C^j_{ik}/delta zbar^l
    Q^j_{ik lbar} = -d C^j_{ik}/d xibar^l

with delta/delta zbar^l = d/dzbar^l - conj(N^m_l) d/dxibar^m.  Fourth-order
jets keep the structure-equation residuals at the 1e-6 scale; no finite
differences enter the curvature path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .forms import (
    BASE_ANTI,
    BASE_HOLO,
    FIBER_ANTI,
    FIBER_HOLO,
    ExteriorForm,
    FormMatrix,
)
from .jets import Jet, seed, tracked_all
from .metrics import DegeneracyError, FinslerMetric


def _jet_matrix_inverse(H, z, xi):
    """Inverse of a matrix of jets in the G^{i jbar} convention (n <= 2).

    Returns Ginv with Ginv[i][j] ~ G^{i jbar}, i.e. sum_j G^{i jbar} G_{k jbar}
    = delta^i_k.
    """
    n = len(H)
    if n == 1:
        det = H[0][0]
        _check_det(det, z, xi)
        return [[det.reciprocal()]]
    if n == 2:
        det = H[0][0] * H[1][1] - H[0][1] * H[1][0]
        _check_det(det, z, xi)
        inv_det = det.reciprocal()
        # plain inverse then transpose: paper convention contracts the barred slot
        return [
            [H[1][1] * inv_det, (-1.0) * H[1][0] * inv_det],
            [(-1.0) * H[0][1] * inv_det, H[0][0] * inv_det],
        ]
    raise NotImplementedError("jet matrix inverse implemented for n <= 2")


def _check_det(det: Jet, z, xi) -> None:
    val = np.atleast_1d(det.value)
    bad = np.abs(val) < 1e-12
    if np.any(bad):
        raise DegeneracyError(f"fundamental tensor degenerate along the tower at z={z}, xi={xi}")


class ConnectionTower:
    """Jet tower at (z, xi); exposes jets and values of N, Gamma, C."""

    def __init__(self, metric: FinslerMetric, z, xi, order: int, chart: int = 0):
        if order < 2:
            raise ValueError("connection tower needs jets of order >= 2")
        self.metric = metric
        self.n = metric.n
        self.order = order
        self.z = np.atleast_1d(np.asarray(z, dtype=np.complex128))
        self.xi = np.atleast_1d(np.asarray(xi, dtype=np.complex128))
        pt = seed(self.z, self.xi, order, tracked_all(self.n))
        self.G_jet = metric.G(pt.z_jets(), pt.xi_jets(), chart)
        n = self.n
        zk = [("z", i) for i in range(n)]
        xk = [("xi", i) for i in range(n)]
        g = self.G_jet
        # fundamental tensor jets (order-2 drop) and inverse
        self.H = [[g.wirtinger_jet([xk[i]], [xk[j]]) for j in range(n)] for i in range(n)]
        self.Ginv = _jet_matrix_inverse(self.H, z, xi)
        # nonlinear connection N^j_k = G^{j ibar} d2G/dz^k dxibar^i
        mixed = [[g.wirtinger_jet([zk[k]], [xk[i]]) for i in range(n)] for k in range(n)]
        self.N = [
            [_sum(self.Ginv[j][i] * mixed[k][i] for i in range(n)) for k in range(n)]
            for j in range(n)
        ]

    # -- values ---------------------------------------------------------------

    @property
    def N_values(self) -> np.ndarray:
        return np.stack([np.stack([np.asarray(self.N[j][k].value) for k in range(self.n)]) for j in range(self.n)])

    def _delta_z(self, f: Jet, s: int) -> Jet:
        """delta f / delta z^s = df/dz^s - N^l_s df/dxi^l (jets)."""
        out = f.wirtinger_jet([("z", s)], [])
        for l in range(self.n):
            out = out - self.N[l][s] * f.wirtinger_jet([("xi", l)], [])
        return out

    def gamma_jets(self):
        """Rund coefficients Gamma^k_{i,s} = G^{k jbar} delta G_{i jbar}/delta z^s."""
        n = self.n
        if self.order < 3:
            raise ValueError("Gamma requires an order >= 3 tower")
        out = [
            [
                [
                    _sum(self.Ginv[k][j] * self._delta_z(self.H[i][j], s) for j in range(n))
                    for s in range(n)
                ]
                for i in range(n)
            ]
            for k in range(n)
        ]
        return out

    def cartan_jets(self):
        """C^k_{ij} = G^{k lbar} G_{i lbar j} (third fiber derivatives)."""
        n = self.n
        if self.order < 3:
            raise ValueError("Cartan tensor requires an order >= 3 tower")
        third = [
            [[self.G_jet.wirtinger_jet([("xi", i), ("xi", j)], [("xi", l)]) for j in range(n)] for l in range(n)]
            for i in range(n)
        ]
        return [
            [[_sum(self.Ginv[k][l] * third[i][l][j] for l in range(n)) for j in range(n)] for i in range(n)]
            for k in range(n)
        ]


def _sum(items):
    it = iter(items)
    total = next(it)
    for x in it:
        total = total + x
    return total


def _values3(jets3) -> np.ndarray:
    n = len(jets3)
    return np.stack(
        [np.stack([np.stack([np.asarray(jets3[a][b][c].value) for c in range(n)]) for b in range(n)]) for a in range(n)]
    )


@dataclass
class ConnectionPoint:
    """Connection and curvature data at one (batch of) point(s)."""

    n: int
    N: np.ndarray          # N^j_k -> [j][k]
    Gamma: np.ndarray      # Gamma^k_{i,s} -> [k][i][s]
    cartan: np.ndarray     # C^k_{ij} -> [k][i][j]
    R: np.ndarray          # R^j_{ik lbar} -> [j][i][k][l]
    P: np.ndarray
    S: np.ndarray
    Q: np.ndarray

    def varpi(self) -> FormMatrix:
        """Chern-Finsler connection form, adapted coframe (dz and delta-xi labels)."""
        n = self.n
        out = FormMatrix(n, 1)
        for k in range(n):
            for i in range(n):
                f = ExteriorForm(n, 1)
                for s in range(n):
                    f._add_term((BASE_HOLO * n + s,), self.Gamma[k][i][s])
                    f._add_term((FIBER_HOLO * n + s,), self.cartan[k][i][s])
                out.entries[k][i] = f
        return out

    def omega(self) -> FormMatrix:
        """Curvature form assembled from the four blocks (adapted coframe)."""
        n = self.n
        out = FormMatrix(n, 2)
        for j in range(n):
            for i in range(n):
                f = ExteriorForm(n, 2)
                for k in range(n):
                    for l in range(n):
                        pairs = [
                            (self.R[j][i][k][l], BASE_HOLO * n + k, BASE_ANTI * n + l),
                            (self.P[j][i][k][l], BASE_HOLO * n + k, FIBER_ANTI * n + l),
                            (self.S[j][i][k][l], FIBER_HOLO * n + k, BASE_ANTI * n + l),
                            (self.Q[j][i][k][l], FIBER_HOLO * n + k, FIBER_ANTI * n + l),
                        ]
                        for coeff, la, lb in pairs:
                            cov = ExteriorForm(n, 2)
                            cov._add_term((la, lb) if la < lb else (lb, la), coeff if la < lb else -coeff)
                            f = f + cov
                out.entries[j][i] = f
        return out

    def block_forms(self) -> dict[str, FormMatrix]:
        """Each curvature block as its own form matrix (adapted coframe)."""
        n = self.n
        out = {}
        for name, arr, la_slot, lb_slot in [
            ("R", self.R, BASE_HOLO, BASE_ANTI),
            ("P", self.P, BASE_HOLO, FIBER_ANTI),
            ("S", self.S, FIBER_HOLO, BASE_ANTI),
            ("Q", self.Q, FIBER_HOLO, FIBER_ANTI),
        ]:
            m = FormMatrix(n, 2)
            for j in range(n):
                for i in range(n):
                    f = ExteriorForm(n, 2)
                    for k in range(n):
                        for l in range(n):
                            la, lb = la_slot * n + k, lb_slot * n + l
                            cov = ExteriorForm(n, 2)
                            cov._add_term((la, lb) if la < lb else (lb, la), arr[j][i][k][l] if la < lb else -arr[j][i][k][l])
                            f = f + cov
                    m.entries[j][i] = f
            out[name] = m
        return out


def nonlinear_connection(metric: FinslerMetric, z, xi, chart: int = 0) -> np.ndarray:
    """N^j_k from the mixed base-fiber second derivatives."""
    return ConnectionTower(metric, z, xi, order=2, chart=chart).N_values


def chern_finsler_form(metric: FinslerMetric, z, xi, chart: int = 0):
    """Connection form matrix and its coefficient arrays (Gamma, C)."""
    tower = ConnectionTower(metric, z, xi, order=3, chart=chart)
    Gamma = _values3(tower.gamma_jets())
    C = _values3(tower.cartan_jets())
    point = ConnectionPoint(
        n=metric.n,
        N=tower.N_values,
        Gamma=Gamma,
        cartan=C,
        R=np.zeros(Gamma.shape + (metric.n,), dtype=complex),
        P=np.zeros(Gamma.shape + (metric.n,), dtype=complex),
        S=np.zeros(Gamma.shape + (metric.n,), dtype=complex),
        Q=np.zeros(Gamma.shape + (metric.n,), dtype=complex),
    )
    return point.varpi(), Gamma, C


def curvature(metric: FinslerMetric, z, xi, chart: int = 0) -> ConnectionPoint:
    """Full curvature decomposition from an order-4 tower."""
    tower = ConnectionTower(metric, z, xi, order=4, chart=chart)
    n = metric.n
    gamma = tower.gamma_jets()
    cart = tower.cartan_jets()
    Nj = tower.N
    Nbar_v = np.conj(tower.N_values)

    def delta_zbar_value(f: Jet, l: int):
        out = np.asarray(f.wirtinger_jet([], [("z", l)]).value)
        for m in range(n):
            out = out - Nbar_v[m][l] * np.asarray(f.wirtinger_jet([], [("xi", m)]).value)
        return out

    def dxibar_value(f: Jet, l: int):
        return np.asarray(f.wirtinger_jet([], [("xi", l)]).value)

    Gamma_v = _values3(gamma)
    C_v = _values3(cart)
    shape = Gamma_v.shape + (n,)
    R = np.zeros(shape, dtype=complex)
    P = np.zeros(shape, dtype=complex)
    S = np.zeros(shape, dtype=complex)
    Q = np.zeros(shape, dtype=complex)
    for j in range(n):
        for i in range(n):
            for k in range(n):
                for l in range(n):
                    dG = delta_zbar_value(gamma[j][i][k], l)
                    dN = _sum(C_v[j][i][s] * delta_zbar_value(Nj[s][k], l) for s in range(n))
                    R[j][i][k][l] = -(dG + dN)
                    pG = dxibar_value(gamma[j][i][k], l)
                    pN = _sum(C_v[j][i][s] * dxibar_value(Nj[s][k], l) for s in range(n))
                    P[j][i][k][l] = -(pG + pN)
                    S[j][i][k][l] = -delta_zbar_value(cart[j][i][k], l)
                    Q[j][i][k][l] = -dxibar_value(cart[j][i][k], l)
    return ConnectionPoint(n=n, N=tower.N_values, Gamma=Gamma_v, cartan=C_v, R=R, P=P, S=S, Q=Q)


# -- coordinate-coframe conversion and structure equations --------------------


def varpi_coordinate_matrix(point: ConnectionPoint) -> FormMatrix:
    """Connection form with delta-xi expanded: dz and d-xi labels only."""
    n = point.n
    out = FormMatrix(n, 1)
    for k in range(n):
        for i in range(n):
            f = ExteriorForm(n, 1)
            for s in range(n):
                coeff = point.Gamma[k][i][s]
                for m in range(n):
                    coeff = coeff + point.cartan[k][i][m] * point.N[m][s]
                f._add_term((BASE_HOLO * n + s,), coeff)
                f._add_term((FIBER_HOLO * n + s,), point.cartan[k][i][s])
            out.entries[k][i] = f
    return out


def omega_coordinate_matrix(point: ConnectionPoint) -> FormMatrix:
    """Curvature form with delta-xi expanded into the coordinate coframe."""
    n = point.n
    dz = [ExteriorForm.covector(n, BASE_HOLO, s) for s in range(n)]
    dzb = [ExteriorForm.covector(n, BASE_ANTI, s) for s in range(n)]
    dxi_h = []
    dxi_a = []
    for s in range(n):
        h = ExteriorForm.covector(n, FIBER_HOLO, s)
        a = ExteriorForm.covector(n, FIBER_ANTI, s)
        for m in range(n):
            h = h + dz[m].scale(point.N[s][m])
            a = a + dzb[m].scale(np.conj(point.N[s][m]))
        dxi_h.append(h)
        dxi_a.append(a)
    out = FormMatrix(n, 2)
    for j in range(n):
        for i in range(n):
            f = ExteriorForm(n, 2)
            for k in range(n):
                for l in range(n):
                    f = f + dz[k].wedge(dzb[l]).scale(point.R[j][i][k][l])
                    f = f + dz[k].wedge(dxi_a[l]).scale(point.P[j][i][k][l])
                    f = f + dxi_h[k].wedge(dzb[l]).scale(point.S[j][i][k][l])
                    f = f + dxi_h[k].wedge(dxi_a[l]).scale(point.Q[j][i][k][l])
            out.entries[j][i] = f
    return out


def structure_residuals(metric: FinslerMetric, z, xi, h: float = 1e-4, chart: int = 0) -> tuple[float, float]:
    """Residuals of the two structure equations, coordinate coframe.

    Numeric d of the connection coefficients over all 4n real coordinates is
    split into holomorphic/antiholomorphic parts and compared against the
    wedge square and the jet-tower curvature.
    """
    n = metric.n
    z = np.atleast_1d(np.asarray(z, dtype=np.complex128))
    xi = np.atleast_1d(np.asarray(xi, dtype=np.complex128))

    def varpi_entries(w):
        pt = curvature(metric, w[:n], w[n:], chart)
        return varpi_coordinate_matrix(pt)

    point = curvature(metric, z, xi, chart)
    base = varpi_coordinate_matrix(point)
    omega_ref = omega_coordinate_matrix(point)

    w0 = np.concatenate([z, xi])
    labels = [(BASE_HOLO * n + q, BASE_ANTI * n + q) for q in range(n)]
    labels += [(FIBER_HOLO * n + q, FIBER_ANTI * n + q) for q in range(n)]

    d_holo = [[ExteriorForm(n, 2) for _ in range(n)] for _ in range(n)]
    d_anti = [[ExteriorForm(n, 2) for _ in range(n)] for _ in range(n)]
    for q in range(2 * n):
        for reim, factor in (("re", 1.0), ("im", 1.0j)):
            deltas = []
            for step in (h, h / 2):
                dvec = np.zeros_like(w0)
                dvec[q] = step * factor
                plus = varpi_entries(w0 + dvec)
                minus = varpi_entries(w0 - dvec)
                deltas.append(
                    [
                        [plus.entries[a][b] - minus.entries[a][b] for b in range(n)]
                        for a in range(n)
                    ]
                )
                deltas[-1] = [[e.scale(1.0 / (2 * step)) for e in row] for row in deltas[-1]]
            diff = [
                [deltas[1][a][b].scale(4.0 / 3.0) + deltas[0][a][b].scale(-1.0 / 3.0) for b in range(n)]
                for a in range(n)
            ]
            for a in range(n):
                for b in range(n):
                    dh = diff[a][b].scale(0.5 if reim == "re" else -0.5j)
                    da = diff[a][b].scale(0.5 if reim == "re" else 0.5j)
                    cov_h = ExteriorForm(n, 1)
                    cov_h._add_term((labels[q][0],), 1.0)
                    cov_a = ExteriorForm(n, 1)
                    cov_a._add_term((labels[q][1],), 1.0)
                    d_holo[a][b] = d_holo[a][b] + cov_h.wedge(dh)
                    d_anti[a][b] = d_anti[a][b] + cov_a.wedge(da)

    sq = FormMatrix(n, 1, base.entries).wedge_matmul(FormMatrix(n, 1, base.entries))
    res1 = max(
        (d_holo[a][b] - sq.entries[a][b]).max_abs() for a in range(n) for b in range(n)
    )
    res2 = max(
        (omega_ref.entries[a][b] - d_anti[a][b]).max_abs() for a in range(n) for b in range(n)
    )
    return float(res1), float(res2)


# -- parallel transport --------------------------------------------------------


def parallel_transport(
    metric: FinslerMetric,
    curve: Callable[[float], tuple[np.ndarray, np.ndarray]],
    v0,
    steps: int,
    t_span: tuple[float, float] = (0.0, 1.0),
    chart: int = 0,
):
    """Transport v0 along the curve by RK4 on dv/dt = -Gamma(z, v) v zdot.

    For non-Berwald metrics Gamma is evaluated at the transported vector
    (nonlinear transport); the result notes that choice.  Returns
    (times, vectors, F_norms, mode) with vectors of shape (steps+1, n).
    """
    if steps < 8:
        raise ValueError("parallel transport requires at least 8 steps")
    n = metric.n
    v = np.asarray(v0, dtype=np.complex128).copy()
    t0, t1 = t_span
    dt = (t1 - t0) / steps
    times = [t0]
    path = [v.copy()]
    norms = []

    def rhs(t, vec):
        zt, zdot = curve(t)
        tower = ConnectionTower(metric, zt, vec, order=3, chart=chart)
        Gamma = _values3(tower.gamma_jets())
        return -np.einsum("ijk,j,k->i", Gamma, vec, zdot)

    def f_norm(t, vec):
        zt, _ = curve(t)
        return float(np.sqrt(np.real(complex(metric.G(list(np.atleast_1d(zt)), list(vec), chart)))))

    norms.append(f_norm(t0, v))
    for s in range(steps):
        t = t0 + s * dt
        k1 = rhs(t, v)
        k2 = rhs(t + dt / 2, v + dt / 2 * k1)
        k3 = rhs(t + dt / 2, v + dt / 2 * k2)
        k4 = rhs(t + dt, v + dt * k3)
        v = v + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        times.append(t + dt)
        path.append(v.copy())
        norms.append(f_norm(t + dt, v))
    mode = "linear" if metric.claims_berwald else "nonlinear (Gamma at transported vector)"
    return np.array(times), np.stack(path), np.array(norms), mode
