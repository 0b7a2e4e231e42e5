import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from diffflat.stability import (
    Deformation,
    InvalidDeformationError,
    NeumannSpectrum,
    OutOfHypothesisError,
    RectangleSpec,
    amplitude_for_target,
    analytic_rectangle_spectrum,
    assemble_pulled_back_operator,
    assemble_reference_operator,
    catalog_for_targets,
    determinant_range,
    expansion_coefficients,
    jacobian_extremes,
    lemma_checks,
    neumann_eigensolve,
    residual_tail,
    theorem_bound,
    verify_theorem,
    write_report_csv,
)

PI2 = math.pi**2


def _element_oracle(hx, hy):
    kx = np.array([[2, -2, -1, 1], [-2, 2, 1, -1], [-1, 1, 2, -2], [1, -1, -2, 2]]) * hy / (6 * hx)
    ky = np.array([[2, 1, -1, -2], [1, 2, -2, -1], [-1, -2, 2, 1], [-2, -1, 1, 2]]) * hx / (6 * hy)
    return kx + ky


def _dense_stiffness(rect):
    hx, hy = rect.width / rect.nx, rect.height / rect.ny
    Ke = _element_oracle(hx, hy)
    S = np.zeros((rect.n_nodes, rect.n_nodes))
    for ey in range(rect.ny):
        for ex in range(rect.nx):
            n0 = ey * (rect.nx + 1) + ex
            nodes = [n0, n0 + 1, n0 + rect.nx + 2, n0 + rect.nx + 1]
            for a in range(4):
                for b in range(4):
                    S[nodes[a], nodes[b]] += Ke[a, b]
    return S


# ---------------------------------------------------------------- analytic


def test_analytic_unit_square():
    modes = analytic_rectangle_spectrum(RectangleSpec(1.0, 1.0, 4, 4), 3)
    assert modes[0].eta == 0.0
    assert [(m.p, m.q) for m in modes[1:3]] == [(0, 1), (1, 0)]
    assert modes[1].eta == pytest.approx(PI2) and modes[2].eta == pytest.approx(PI2)
    assert modes[3].eta == pytest.approx(2 * PI2)


def test_analytic_thin_rectangle_pure_y_modes():
    modes = analytic_rectangle_spectrum(RectangleSpec(0.1, 10.0, 4, 4), 101)
    assert all(m.p == 0 and m.q == j for j, m in enumerate(modes[:101]))
    # (0, 100) and (1, 0) tie at 100 pi^2
    assert modes[100].eta == pytest.approx(100 * PI2)
    assert (modes[101].p, modes[101].q) == (1, 0)


@settings(max_examples=30, deadline=None)
@given(w=st.floats(0.2, 5.0), h=st.floats(0.2, 5.0), count=st.integers(1, 20))
def test_analytic_sorted_against_brute_force(w, h, count):
    modes = analytic_rectangle_spectrum(RectangleSpec(w, h, 2, 2), count)
    vals = sorted(PI2 * ((p / w) ** 2 + (q / h) ** 2) for p in range(60) for q in range(60))
    np.testing.assert_allclose([m.eta for m in modes], vals[: count + 1], rtol=1e-12)


# ---------------------------------------------------------------- deformations


def test_jacobian_identity():
    rect = RectangleSpec(0.5, 4.0, 8, 8)
    assert jacobian_extremes(Deformation.on(rect, "identity"), rect) == (0.0, 0.0)


def test_jacobian_matches_finite_differences():
    rect = RectangleSpec(0.5, 4.0, 8, 8)
    for fam in ("vertical-wave", "bulge"):
        phi = Deformation.on(rect, fam, 0.03)
        x, y, h = 0.17, 1.3, 1e-6
        J = phi.jacobian(x, y)
        for j, (dx, dy) in enumerate([(h, 0), (0, h)]):
            fp = np.array(phi.map(x + dx, y + dy))
            fm = np.array(phi.map(x - dx, y - dy))
            np.testing.assert_allclose(J[:, j], (fp - fm) / (2 * h), atol=1e-8)


def test_eps_shrinks_with_amplitude():
    rect = RectangleSpec(0.5, 4.0, 8, 8)
    a = 0.01
    e1 = jacobian_extremes(Deformation.on(rect, "vertical-wave", a), rect)[0]
    e2 = jacobian_extremes(Deformation.on(rect, "vertical-wave", a / 2), rect)[0]
    assert e1 / e2 >= 1.8


@pytest.mark.parametrize("family", ["vertical-wave", "bulge"])
@pytest.mark.parametrize("target", [0.02, 0.05, 0.09])
def test_determinant_bound(family, target):
    rect = RectangleSpec(0.5, 4.0, 8, 8)
    d = 2
    phi = Deformation.on(rect, family, amplitude_for_target(family, rect, target, d))
    eps, delta = jacobian_extremes(phi, rect)
    assert eps * d <= target and eps * d == pytest.approx(target, rel=1e-6)
    assert delta <= 2 * eps * d
    lo, hi = determinant_range(phi, rect)
    assert 1 - 2 * eps * d <= lo and hi <= 1 + 2 * eps * d


def test_invalid_deformation():
    rect = RectangleSpec(0.5, 4.0, 8, 8)
    with pytest.raises(InvalidDeformationError):
        jacobian_extremes(Deformation.on(rect, "vertical-wave", 3.0), rect)
    with pytest.raises(InvalidDeformationError):
        assemble_pulled_back_operator(rect, Deformation.on(rect, "vertical-wave", 3.0))
    with pytest.raises(ValueError):
        Deformation.on(rect, "twist", 0.1)


# ---------------------------------------------------------------- assembly


def test_reference_operator_basics():
    rect = RectangleSpec(0.7, 2.3, 5, 9)
    S, M = assemble_reference_operator(rect)
    assert np.abs(S @ np.ones(rect.n_nodes)).max() <= 1e-12
    assert M.diagonal().sum() == pytest.approx(rect.area, abs=1e-12)
    assert np.all(M.diagonal() > 0)
    assert abs(S - S.T).max() == 0
    assert np.linalg.eigvalsh(S.toarray()).min() >= -1e-12


def test_reference_stiffness_hand_oracle():
    rect = RectangleSpec(1.0, 1.0, 3, 3)
    S, _ = assemble_reference_operator(rect)
    np.testing.assert_allclose(S.toarray(), _dense_stiffness(rect), atol=1e-13, rtol=0)
    rect = RectangleSpec(0.5, 2.0, 3, 4)
    S, _ = assemble_reference_operator(rect)
    np.testing.assert_allclose(S.toarray(), _dense_stiffness(rect), atol=1e-13, rtol=0)


def test_pulled_back_reduces_to_reference():
    rect = RectangleSpec(0.5, 4.0, 6, 12)
    S, M = assemble_reference_operator(rect)
    for phi in (Deformation.on(rect, "identity"), Deformation.on(rect, "bulge", 0.0)):
        SG, MG = assemble_pulled_back_operator(rect, phi)
        assert abs(SG - S).max() <= 1e-15
        assert abs(MG - M).max() <= 1e-15


def test_pulled_back_mass_is_deformed_area():
    rect = RectangleSpec(0.5, 4.0, 16, 64)
    a = 0.05
    _, MG = assemble_pulled_back_operator(rect, Deformation.on(rect, "bulge", a))
    # area of the bulged domain: w * int_0^h (1 + a sin(pi y / h)) dy
    exact = rect.width * (rect.height + a * 2 * rect.height / math.pi)
    assert MG.diagonal().sum() == pytest.approx(exact, rel=1e-3)
    SG, _ = assemble_pulled_back_operator(rect, Deformation.on(rect, "vertical-wave", 0.01))
    assert np.abs(SG @ np.ones(rect.n_nodes)).max() <= 1e-12


def test_vertical_wave_dense_generalized_oracle():
    rect = RectangleSpec(0.5, 4.0, 8, 16)
    SG, MG = assemble_pulled_back_operator(rect, Deformation.on(rect, "vertical-wave", 0.01))
    spec = neumann_eigensolve(SG, MG, 6)
    dense = scipy.linalg.eigh(SG.toarray(), MG.toarray(), eigvals_only=True)[:7]
    np.testing.assert_allclose(spec.eigenvalues, dense, atol=1e-9 * max(1.0, dense.max()), rtol=0)


# ---------------------------------------------------------------- eigensolve


def test_neumann_eigensolve_accuracy():
    rect = RectangleSpec(1.0, 2.0, 32, 64)
    S, M = assemble_reference_operator(rect)
    spec = neumann_eigensolve(S, M, 4)
    eta = spec.eigenvalues
    assert abs(eta[0]) <= 1e-9 * eta[1]
    assert eta[1] == pytest.approx(PI2 / 4, rel=0.01)
    mass = spec.mass
    gram = spec.vectors.T @ (mass[:, None] * spec.vectors)
    np.testing.assert_allclose(gram, np.eye(5), atol=1e-10)
    v0 = spec.vectors[:, 0]
    assert np.ptp(v0) <= 1e-8 * np.abs(v0).max()
    assert np.all(spec.residuals <= 1e-8)


def test_refinement_order():
    exact = PI2 / 4
    errs = []
    for nx, ny in [(8, 16), (16, 32), (32, 64)]:
        S, M = assemble_reference_operator(RectangleSpec(1.0, 2.0, nx, ny))
        errs.append(abs(neumann_eigensolve(S, M, 1).eigenvalues[1] - exact))
    assert errs[0] > errs[1] > errs[2]
    for coarse, fine in zip(errs, errs[1:]):
        assert 3.0 <= coarse / fine <= 5.0


def test_lumped_mass_approaches_from_below():
    # lumping makes the discrete eigenvalue increase toward the exact one
    exact = PI2 / 4
    vals = []
    for nx, ny in [(8, 16), (16, 32), (32, 64)]:
        S, M = assemble_reference_operator(RectangleSpec(1.0, 2.0, nx, ny))
        vals.append(neumann_eigensolve(S, M, 1).eigenvalues[1])
    assert vals[0] < vals[1] < vals[2] < exact


# ---------------------------------------------------------------- coefficients and bounds


def _small_basis(rect=RectangleSpec(0.5, 2.0, 4, 8)):
    S, M = assemble_reference_operator(rect)
    mass = M.diagonal()
    vals, Y = np.linalg.eigh(S.toarray() / np.sqrt(np.outer(mass, mass)))
    V = Y / np.sqrt(mass)[:, None]
    return S, NeumannSpectrum(vals, V, mass, np.zeros_like(vals))


def test_expansion_examples_and_oracle():
    _, basis = _small_basis()
    alpha = expansion_coefficients(basis.vectors[:, 1], basis)
    expected = np.zeros(basis.vectors.shape[1])
    expected[1] = 1.0
    np.testing.assert_allclose(alpha, expected, atol=1e-12)

    u = np.random.default_rng(0).normal(size=basis.mass.size)
    alpha = expansion_coefficients(u, basis)
    for j in (0, 3, 17):
        oracle = sum(basis.mass[i] * u[i] * basis.vectors[i, j] for i in range(u.size))
        assert alpha[j] == pytest.approx(oracle, abs=1e-11)
    with pytest.raises(ValueError):
        expansion_coefficients(u[:-1], basis)


def test_parseval():
    _, basis = _small_basis()
    u = np.random.default_rng(1).normal(size=basis.mass.size)
    alpha = expansion_coefficients(u, basis)
    norm_sq = float(u @ (basis.mass * u))
    partial = np.cumsum(alpha**2)
    assert np.all(partial <= norm_sq + 1e-10)
    assert partial[-1] == pytest.approx(norm_sq, rel=1e-12)


def test_residual_tail_examples():
    assert residual_tail(np.array([0.0, 1.0]), 1, 1.0) == 0.0
    assert residual_tail(np.array([0.0, 0.8, 0.6]), 1, 1.0) == pytest.approx(0.36)
    alpha = np.random.default_rng(2).normal(size=10)
    rho = [residual_tail(alpha, k, float(alpha @ alpha)) for k in range(1, 10)]
    assert np.all(np.diff(rho) <= 0)
    assert rho[-1] == pytest.approx(alpha[0] ** 2)


def test_theorem_bound_examples():
    assert theorem_bound(1.0, 3.0, 0.0, 2) == 0.0
    assert theorem_bound(1.0, 3.0, 0.01, 2) == pytest.approx(0.22)
    assert theorem_bound(1.0, 3.0, 0.01, 2, constant_in_span=True) == pytest.approx(0.2)
    with pytest.raises(OutOfHypothesisError):
        theorem_bound(1.0, 3.0, 0.06, 2)
    with pytest.raises(ValueError):
        theorem_bound(1.0, 1.0, 0.01, 2)


def test_lemmas_for_identity():
    rect = RectangleSpec(0.5, 4.0, 8, 32)
    S, M = assemble_reference_operator(rect)
    ref = neumann_eigensolve(S, M, 6)
    u = ref.vectors[:, 1]
    alpha = expansion_coefficients(u, ref)
    assert abs(alpha[1]) >= 1 - 1e-8
    assert np.sum(alpha**2) - alpha[1] ** 2 <= 1e-8
    l1, l2, l3 = lemma_checks(ref, ref, alpha, 0.0, 0.0, energy=float(u @ (S @ u)))
    assert l3.lhs == pytest.approx(0.0, abs=1e-20) and l3.rhs == 0.0 and l3.passed
    assert l2.lhs == pytest.approx(l2.rhs, rel=1e-8) and l2.passed
    assert l1.passed


def test_lemmas_out_of_hypothesis():
    _, basis = _small_basis()
    with pytest.raises(OutOfHypothesisError):
        lemma_checks(basis, basis, np.zeros(3), 0.1, 0.7)


# ---------------------------------------------------------------- full runs


def test_verify_identity_and_wave(tmp_path):
    rect = RectangleSpec(0.5, 4.0, 16, 128)
    catalog = [Deformation.on(rect, "identity")]
    catalog += catalog_for_targets(rect, ["vertical-wave", "bulge"], [0.05], include_identity=False)
    reports = verify_theorem(rect, catalog, [2, 4])
    assert len(reports) == 6
    ident = [r for r in reports if r.family == "identity"]
    assert all(r.residual <= 1e-10 and r.passed for r in ident)
    for r in reports:
        assert not r.skipped and r.passed
        assert all(c.passed for c in r.lemmas)
    path = tmp_path / "report.csv"
    write_report_csv(reports, path)
    lines = path.read_text().splitlines()
    assert lines[0].startswith("family,amplitude,eps_meas")
    assert len(lines) == 7


def test_verify_skips_out_of_hypothesis():
    rect = RectangleSpec(0.5, 4.0, 8, 64)
    a = amplitude_for_target("bulge", rect, 0.15)
    reports = verify_theorem(rect, [Deformation.on(rect, "bulge", a)], [2])
    assert reports[0].skipped and not reports[0].passed


def test_verify_rejects_degenerate_k():
    rect = RectangleSpec(1.0, 1.0, 8, 8)
    with pytest.raises(ValueError, match="degenerate"):
        verify_theorem(rect, [Deformation.on(rect, "identity")], [1])
