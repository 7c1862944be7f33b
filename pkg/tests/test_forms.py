"""Exterior algebra: wedge/contract/conj, polarized determinants, numeric d."""

import numpy as np
import pytest

from cfinsler.forms import (
    BASE_ANTI,
    BASE_HOLO,
    FIBER_ANTI,
    FIBER_HOLO,
    ExteriorForm,
    FormMatrix,
    det_poly,
    form_det,
    fsum_c,
    integrate_top,
    numeric_d,
    orientation_factor,
    top_density,
)


def dz(n, i, v=1.0):
    return ExteriorForm.covector(n, BASE_HOLO, i, v)


def dzb(n, i, v=1.0):
    return ExteriorForm.covector(n, BASE_ANTI, i, v)


def dxi(n, i, v=1.0):
    return ExteriorForm.covector(n, FIBER_HOLO, i, v)


def random_form(rng, n, degree, batch=()):
    """Random form with the given degree over all 4n covectors."""
    import itertools

    f = ExteriorForm(n, degree)
    labels = list(range(4 * n))
    tuples = list(itertools.combinations(labels, degree))
    rng.shuffle(tuples)
    for t in tuples[: min(6, len(tuples))]:
        c = rng.normal() + 1j * rng.normal()
        f._add_term(tuple(t), c)
    return f


class TestWedge:
    def test_square_vanishes(self):
        a = dz(2, 0)
        assert a.wedge(a).terms == {}

    def test_odd_anticommute(self):
        a, b = dz(1, 0), dzb(1, 0)
        ab = a.wedge(b)
        ba = b.wedge(a)
        assert (ab + ba).terms == {}

    def test_even_forms_commute(self):
        p = dz(2, 0).wedge(dzb(2, 0))
        q = dz(2, 1).wedge(dzb(2, 1))
        diff = p.wedge(q) - q.wedge(p)
        assert diff.max_abs() == 0.0

    @pytest.mark.parametrize("da,db", [(1, 1), (1, 2), (2, 2), (2, 3)])
    def test_graded_anticommutativity(self, da, db):
        rng = np.random.default_rng(da * 10 + db)
        a = random_form(rng, 2, da)
        b = random_form(rng, 2, db)
        lhs = a.wedge(b)
        rhs = b.wedge(a).scale((-1.0) ** (da * db))
        assert (lhs - rhs).max_abs() == 0.0

    def test_degree_overflow_returns_zero(self):
        n = 1
        a = dz(n, 0).wedge(dzb(n, 0)).wedge(dxi(n, 0))
        b = dxi(n, 0)
        full = a.wedge(ExteriorForm.covector(n, FIBER_ANTI, 0))
        assert full.degree == 4 and len(full.terms) == 1
        assert full.wedge(b).terms == {}


class TestContraction:
    def test_basic(self):
        f = dz(1, 0).wedge(dzb(1, 0))
        got = f.contract([1.0], BASE_HOLO)
        assert got.coefficient((BASE_ANTI,)) == pytest.approx(1.0)

    def test_wrong_slot_untouched(self):
        f = dz(2, 1)
        assert f.contract([1.0, 0.0], BASE_HOLO).max_abs() == 0.0

    def test_zero_form(self):
        f = ExteriorForm.scalar(2, 3.0)
        assert f.contract([1.0, 0.0], BASE_HOLO).terms == {}

    @pytest.mark.parametrize("da,db", [(1, 1), (2, 1), (2, 2)])
    def test_antiderivation(self, da, db):
        rng = np.random.default_rng(17 + da + 3 * db)
        n = 2
        a = random_form(rng, n, da)
        b = random_form(rng, n, db)
        v = rng.normal(size=n) + 1j * rng.normal(size=n)
        lhs = a.wedge(b).contract(v, FIBER_HOLO)
        rhs = a.contract(v, FIBER_HOLO).wedge(b) + a.wedge(b.contract(v, FIBER_HOLO)).scale((-1.0) ** da)
        assert (lhs - rhs).max_abs() < 1e-14


class TestConjugationAndReal:
    def test_i_dz_dzb_is_real(self):
        f = dz(1, 0).wedge(dzb(1, 0)).scale(1j)
        assert (f.conj() - f).max_abs() == 0.0
        assert (f.real_part() - f).max_abs() == 0.0

    def test_real_of_dz(self):
        f = dz(1, 0).real_part()
        assert f.coefficient((BASE_HOLO,)) == pytest.approx(0.5)
        assert f.coefficient((BASE_ANTI,)) == pytest.approx(0.5)

    def test_real_idempotent(self):
        rng = np.random.default_rng(5)
        f = random_form(rng, 2, 2)
        r = f.real_part()
        assert (r.real_part() - r).max_abs() < 1e-15


class TestDetPoly:
    def test_n1_direct(self):
        a = FormMatrix(1, 2, [[dz(1, 0).wedge(dzb(1, 0)).scale(2.0)]])
        b = FormMatrix(1, 0, [[ExteriorForm.scalar(1, 5.0)]])
        dets = det_poly(a, b)
        assert dets[0].coefficient(()) == pytest.approx(5.0)
        assert dets[1].coefficient((BASE_HOLO, BASE_ANTI)) == pytest.approx(2.0)

    def test_sum_equals_direct_determinant(self):
        rng = np.random.default_rng(2)
        n = 2
        a = FormMatrix(n, 2)
        b = FormMatrix(n, 0)
        for i in range(n):
            for j in range(n):
                a.entries[i][j] = random_2form_base(rng, n)
                b.entries[i][j] = ExteriorForm.scalar(n, rng.normal() + 1j * rng.normal())
        dets = det_poly(a, b)
        total = dets[0]
        for d in dets[1:]:
            # embed lower-degree pieces by wedging with 1 (degrees differ);
            # compare against det(A+B) termwise instead
            pass
        direct = form_det_sum(a, b)
        recomposed = {}
        for d in dets:
            for labels, c in d.terms.items():
                recomposed[labels] = recomposed.get(labels, 0) + c
        for labels, c in direct.items():
            assert abs(recomposed.get(labels, 0) - c) < 1e-12 * max(1.0, abs(c))
        for labels, c in recomposed.items():
            assert abs(direct.get(labels, 0) - c) < 1e-12 * max(1.0, abs(c))

    def test_zero_a(self):
        n = 2
        rng = np.random.default_rng(3)
        a = FormMatrix(n, 2)
        b = FormMatrix(n, 0)
        for i in range(n):
            for j in range(n):
                b.entries[i][j] = ExteriorForm.scalar(n, rng.normal())
        dets = det_poly(a, b)
        assert dets[1].max_abs() == 0.0 and dets[2].max_abs() == 0.0
        want = b.entries[0][0].coefficient(()) * b.entries[1][1].coefficient(()) - b.entries[0][1].coefficient(
            ()
        ) * b.entries[1][0].coefficient(())
        assert dets[0].coefficient(()) == pytest.approx(want)

    def test_interpolation_oracle(self):
        # det(lambda A + B) sampled at n+1 lambda values; Vandermonde-solve for
        # the coefficients and compare. Scalar matrices make the determinant an
        # honest polynomial in lambda.
        rng = np.random.default_rng(9)
        n = 2
        a_s = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        b_s = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
        a = FormMatrix(n, 0, [[ExteriorForm.scalar(n, a_s[i, j]) for j in range(n)] for i in range(n)])
        b = FormMatrix(n, 0, [[ExteriorForm.scalar(n, b_s[i, j]) for j in range(n)] for i in range(n)])
        dets = det_poly(a, b)
        lams = np.array([0.0, 1.0, 2.0])
        samples = np.array([np.linalg.det(lam * a_s + b_s) for lam in lams])
        coeffs = np.linalg.solve(np.vander(lams, increasing=True), samples)
        for j in range(n + 1):
            got = dets[j].coefficient(())
            assert abs(got - coeffs[j]) < 1e-10 * max(1.0, abs(coeffs[j]))

    def test_odd_degree_rejected(self):
        a = FormMatrix(1, 1, [[dz(1, 0)]])
        b = FormMatrix(1, 0, [[ExteriorForm.scalar(1, 1.0)]])
        with pytest.raises(ValueError, match="even-degree"):
            det_poly(a, b)
        with pytest.raises(ValueError, match="scalar"):
            det_poly(FormMatrix(1, 2), FormMatrix(1, 1, [[dz(1, 0)]]))


def random_2form_base(rng, n):
    f = ExteriorForm(n, 2)
    for i in range(n):
        for j in range(n):
            f = f + dz(n, i).wedge(dzb(n, j)).scale(rng.normal() + 1j * rng.normal())
    return f


def form_det_sum(a: FormMatrix, b: FormMatrix):
    """Direct determinant of A+B by permutation expansion; mixed-degree terms."""
    import itertools

    n = a.n
    out: dict = {}
    for perm in itertools.permutations(range(n)):
        inv = sum(1 for x in range(n) for y in range(x + 1, n) if perm[x] > perm[y])
        sign = (-1) ** inv
        prod = ExteriorForm.scalar(n, 1.0)
        acc = [ExteriorForm.scalar(n, float(sign))]
        for i in range(n):
            entry = a.entries[i][perm[i]] + b.entries[i][perm[i]] if a.entries[i][perm[i]].degree == b.entries[i][
                perm[i]
            ].degree else None
            new_acc = []
            for pref in acc:
                new_acc.append(pref.wedge(a.entries[i][perm[i]]))
                new_acc.append(pref.wedge(b.entries[i][perm[i]]))
            acc = new_acc
        for piece in acc:
            for labels, c in piece.terms.items():
                out[labels] = out.get(labels, 0) + c
    return {k: v for k, v in out.items() if abs(v) > 0}


class TestPullback:
    def test_base_covector_fixed(self):
        f = dz(2, 0)
        jac = np.zeros((2, 2), dtype=complex)
        got = f.pullback_section(jac)
        assert (got - f).max_abs() == 0.0

    def test_linear_field(self):
        # X = z d/dz in dimension 1 with N = 0: delta xi -> dz
        f = dxi(1, 0)
        got = f.pullback_section(np.array([[1.0 + 0j]]))
        assert got.coefficient((BASE_HOLO,)) == pytest.approx(1.0)

    def test_constant_field(self):
        f = dxi(1, 0)
        got = f.pullback_section(np.array([[0.0 + 0j]]))
        assert got.max_abs() == 0.0

    def test_fiber_anti_conjugates(self):
        f = ExteriorForm.covector(2, FIBER_ANTI, 0)
        jac = np.array([[1.0 + 2.0j, 0.0], [0.0, 0.0]])
        got = f.pullback_section(jac)
        assert got.coefficient((BASE_ANTI * 2 + 0,)) == pytest.approx(1.0 - 2.0j)

    def test_with_connection(self):
        f = dxi(1, 0)
        got = f.pullback_section(np.array([[2.0 + 0j]]), connection=[[1.0 + 1.0j]])
        assert got.coefficient((BASE_HOLO,)) == pytest.approx(3.0 + 1.0j)

    def test_commutes_with_antiholomorphic_d(self):
        # X*(dbar F) == dbar(X* F) for a holomorphic section z -> (z, X(z)).
        n = 2

        def X(z):
            return np.stack([z[0] * z[0], z[0] * z[1] + 1.0])

        def Xjac(z):
            return [[2 * z[0], np.zeros_like(z[0])], [z[1], z[0]]]

        def total_field(w):
            z, xi = w[:n], w[n:]
            c1 = z[0] * np.conj(z[1]) * xi[0]
            c2 = np.conj(xi[1]) * xi[0] + z[1]
            f = ExteriorForm(n, 1)
            f._add_term((FIBER_HOLO * n + 0,), c1)
            f._add_term((FIBER_ANTI * n + 1,), c2)
            return f

        z0 = np.array([0.4 + 0.2j, -0.3 + 0.5j])

        def pulled(z):
            w = np.concatenate([z, X(z)])
            return total_field(w).pullback_section(Xjac(z))

        from cfinsler.forms import numeric_d_total

        lhs = numeric_d_total(
            lambda w: total_field(w), z0, X(z0), part="anti"
        )
        # chain rule: restrict the total dbar to the section before pulling back
        restricted = lhs  # includes dzbar and dxibar parts
        pulled_lhs = restricted.pullback_section(Xjac(z0))
        rhs = numeric_d(pulled, z0, part="anti")
        # fiber variation along the section adds J-bar terms; account for them:
        jac = np.array(Xjac(z0))

        def shifted_total(z):
            w = np.concatenate([z, X(z)])
            return total_field(w)

        direct = numeric_d(lambda z: shifted_total(z).pullback_section(Xjac(z)), z0, part="anti")
        assert (direct - rhs).max_abs() < 1e-12
        assert (pulled_lhs - rhs).max_abs() < 5e-7


class TestNumericD:
    def test_constant_field(self):
        f0 = dz(1, 0).scale(2.0 + 1.0j)
        got = numeric_d(lambda z: f0, np.array([0.3 + 0.1j]))
        assert got.max_abs() < 1e-12

    def test_linear_coefficient(self):
        # field = Re(z) dz: d = (1/2)(dz + dzbar) ^ dz = -(1/2) dz ^ dzbar ... sign via algebra
        def field(z):
            return dz(1, 0, z[0].real)

        got = numeric_d(field, np.array([0.25 - 0.7j]))
        want = (dz(1, 0).scale(0.5) + dzb(1, 0).scale(0.5)).wedge(dz(1, 0))
        assert (got - want).max_abs() < 1e-10

    def test_step_guard(self):
        with pytest.raises(ValueError, match="underflow"):
            numeric_d(lambda z: dz(1, 0), np.array([0.0j]), h=1e-9)

    def test_dd_vanishes(self):
        # discrete stencils commute, so d(numeric_d(field)) is roundoff-level
        rng = np.random.default_rng(21)
        coeff = rng.normal(size=4)

        def field(z):
            x, y = z[0].real, z[0].imag
            u = coeff[0] * x**5 + coeff[1] * x**2 * y**3
            v = coeff[2] * x**4 + coeff[3] * y**5
            return dz(1, 0, u) + dzb(1, 0, v)

        z0 = np.array([0.37 + 0.21j])
        inner = lambda z: numeric_d(field, z, refine=False)
        assert numeric_d(inner, z0, refine=False).max_abs() < 1e-9

    def test_truncation_order_h2(self):
        # against the exact derivative of u = x^5: error(h)/error(h/2) -> 4
        def field(z):
            return dz(1, 0, z[0].real ** 5)

        z0 = np.array([0.83 + 0.11j])
        exact = (dz(1, 0).scale(0.5) + dzb(1, 0).scale(0.5)).wedge(dz(1, 0)).scale(5 * z0[0].real ** 4)

        def err(h):
            return (numeric_d(field, z0, h=h, refine=False) - exact).max_abs()

        assert err(2e-3) / err(1e-3) == pytest.approx(4.0, rel=0.05)
        # Richardson refinement pushes the error down by orders of magnitude
        assert (numeric_d(field, z0, h=1e-3, refine=True) - exact).max_abs() < err(1e-3) * 1e-3


class TestIntegration:
    @staticmethod
    def disk_nodes(n_r=40, n_t=64, r_hi=1.0):
        from numpy.polynomial.legendre import leggauss

        x, w = leggauss(n_r)
        r = 0.5 * r_hi * (x + 1.0)
        wr = 0.5 * r_hi * w * r
        t = 2 * np.pi * (np.arange(n_t) + 0.5) / n_t
        wt = 2 * np.pi / n_t
        rr, tt = np.meshgrid(r, t, indexing="ij")
        nodes = (rr * np.exp(1j * tt)).ravel()[None, :]
        weights = (np.broadcast_to(wr[:, None], rr.shape) * wt).ravel()
        return nodes, weights

    def test_euclidean_area(self):
        nodes, weights = self.disk_nodes()

        def field(z):
            return dz(1, 0).wedge(dzb(1, 0)).scale(0.5j * np.ones(z.shape[1]))

        got = integrate_top(field, nodes, weights)
        assert got.real == pytest.approx(np.pi, rel=1e-12)
        assert abs(got.imag) < 1e-12

    def test_zero_field(self):
        nodes, weights = self.disk_nodes(8, 8)
        got = integrate_top(lambda z: ExteriorForm(1, 2), nodes, weights)
        assert got == 0

    def test_bidisk(self):
        n1, w1 = self.disk_nodes(24, 32)
        n2, w2 = self.disk_nodes(24, 32)
        nodes = np.stack(
            [np.repeat(n1[0], n2.shape[1]), np.tile(n2[0], n1.shape[1])]
        )
        weights = np.repeat(w1, w2.size) * np.tile(w2, w1.size)

        def field(z):
            top = dz(2, 0).wedge(dzb(2, 0)).wedge(dz(2, 1)).wedge(dzb(2, 1))
            return top.scale((0.5j) ** 2 * np.ones(z.shape[1]))

        got = integrate_top(field, nodes, weights)
        assert got.real == pytest.approx(np.pi**2, rel=1e-12)

    def test_non_top_rejected(self):
        nodes, weights = self.disk_nodes(4, 4)
        with pytest.raises(ValueError, match="top"):
            integrate_top(lambda z: dz(1, 0, np.ones(z.shape[1])), nodes, weights)

    def test_orientation_factor(self):
        assert orientation_factor(1) == pytest.approx(-2j)
        # n=2: (i/2)^2 interleaved = +1 real density
        f = ExteriorForm(2, 4)
        inter = dz(2, 0).wedge(dzb(2, 0)).wedge(dz(2, 1)).wedge(dzb(2, 1)).scale((0.5j) ** 2)
        assert top_density(inter) == pytest.approx(1.0)

    def test_fsum_deterministic(self):
        rng = np.random.default_rng(0)
        vals = rng.normal(size=1000) * 10.0**rng.integers(-8, 8, size=1000) + 1j
        assert fsum_c(vals) == fsum_c(vals[::-1].copy()[::-1])
