import numpy as np
import pytest
from hypothesis import given, strategies as st

from homconc import schulgasser as S
from homconc.geometry import SchulgasserCell

R_HALF = (3 * 0.5 / (4 * np.pi)) ** (1 / 3)  # single ball with theta = 1/2


@pytest.fixture
def origin_ball():
    # a ball "at the origin" shifted into the cell; offsets are what matter
    return SchulgasserCell.single(radius=0.35)


def test_temperature_example(origin_ball):
    y = np.array([0.5 + 0.0875, 0.5, 0.5])
    assert S.analytic_temperature(origin_ball, 0, y) - 0.5 == pytest.approx(0.175, abs=1e-15)


def test_temperature_outside_and_on_boundary(origin_ball):
    y = np.array([0.05, 0.9, 0.2])
    for i in range(3):
        assert S.analytic_temperature(origin_ball, i, y) == y[i]
    yb = np.array([0.5 + 0.35 * (1 - 1e-15), 0.5, 0.5])
    assert S.analytic_temperature(origin_ball, 0, yb) == pytest.approx(yb[0], abs=1e-12)


def test_corrector_examples(origin_ball):
    assert np.array_equal(S.analytic_corrector(origin_ball, [0.05, 0.05, 0.05]), np.eye(3))
    yb = np.array([0.5 + 0.35 * (1 - 1e-14), 0.5, 0.5])
    assert np.allclose(S.analytic_corrector(origin_ball, yb), np.diag([0.5, 1, 1]), atol=1e-12)


def test_corrector_radial_eigenvector(origin_ball):
    rng = np.random.default_rng(3)
    for _ in range(10):
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        s = rng.uniform(0.01, 0.34)
        P = S.analytic_corrector(origin_ball, 0.5 + s * n)
        expect = 0.5 * 0.35 ** 0.5 * s ** -0.5
        assert np.allclose(P @ n, expect * n, rtol=1e-13)


def test_singular_center_rejected(origin_ball):
    for f in (S.analytic_corrector, S.analytic_lambda):
        with pytest.raises(ValueError):
            f(origin_ball, [0.5, 0.5, 0.5])
    with pytest.raises(ValueError):
        S.analytic_temperature(origin_ball, 0, [0.5, 0.5, 0.5])


def test_lambda_values(origin_ball):
    assert S.analytic_lambda(origin_ball, [0.1, 0.1, 0.1]) == 1.0
    yb = np.array([0.5 + 0.35 * (1 - 1e-15), 0.5, 0.5])
    assert S.analytic_lambda(origin_ball, yb) == pytest.approx(0.25, rel=1e-12)


def test_effective_tensor_and_quadrature(origin_ball):
    assert np.array_equal(S.analytic_effective(origin_ball).entries, np.eye(3))
    assert np.abs(S.effective_by_quadrature(origin_ball) - np.eye(3)).max() <= 1e-8
    assert np.array_equal(S.effective_by_quadrature(SchulgasserCell(())), np.eye(3))


def test_two_ball_quadrature():
    cell = SchulgasserCell((((0.25, 0.25, 0.3), 0.2), ((0.7, 0.7, 0.7), 0.25)), lambda2=0.8)
    assert np.abs(S.effective_by_quadrature(cell) - np.eye(3)).max() <= 1e-8


def test_lambda_moment_example():
    cell = SchulgasserCell.single(radius=R_HALF)
    assert cell.theta == pytest.approx(0.5, abs=1e-15)
    assert S.lambda_moment(cell, 2) == pytest.approx(0.6875, abs=1e-14)
    assert abs(S.lambda_moment_quadrature(cell, 2) - 0.6875) <= 1e-8
    assert S.lambda_moment(cell, 6) == np.inf and S.lambda_moment(cell, 9) == np.inf
    with pytest.raises(ValueError):
        S.lambda_moment(cell, 1.5)
    assert S.lambda_moment(SchulgasserCell(()), 4) == 1.0


@pytest.mark.parametrize("p", [2.5, 4.0, 5.5])
def test_lambda_moment_matches_quadrature(p):
    cell = SchulgasserCell((((0.3, 0.3, 0.3), 0.2), ((0.7, 0.65, 0.7), 0.22)))
    assert S.lambda_moment(cell, p) == pytest.approx(S.lambda_moment_quadrature(cell, p), abs=1e-8)


def test_lambda_moment_is_not_monotone_but_its_root_is():
    cell = SchulgasserCell.single(radius=R_HALF)
    ps = (2, 3, 4, 5, 5.5, 5.9, 5.99, 5.999)
    vals = [S.lambda_moment(cell, p) for p in ps]
    # lam < 1 on most of the ball, so the raw integral first drops
    assert vals[:4] == pytest.approx([0.6875, 0.625, 0.59375, 0.59375], abs=1e-15)
    roots = [S.lb_factor(cell, p) for p in ps]
    assert all(b > a for a, b in zip(roots, roots[1:]))
    assert vals[-1] > 10


def test_direct_moment_against_samples():
    cell = SchulgasserCell.single(radius=R_HALF)
    P, w, lab = S.quadrature_samples(cell)
    direct = (w * np.linalg.norm(P[:, :, 0], axis=1) ** 2).sum()
    assert direct == pytest.approx(S.direct_moment(cell, 2), abs=1e-6)
    assert S.direct_moment(cell, 2, phase=0) == pytest.approx(0.5)


@given(st.floats(2.0, 5.9))
def test_direct_moment_dominates_lambda_moment(p):
    cell = SchulgasserCell.single(radius=R_HALF)
    assert S.direct_moment(cell, p) >= S.lambda_moment(cell, p) * (1 - 1e-12)


def test_lb_factor():
    assert S.lb_factor(SchulgasserCell(()), 3) == 1.0
    cell = SchulgasserCell.single(radius=R_HALF)
    assert S.lb_factor(cell, 2) == pytest.approx(0.6875 ** 0.5, rel=1e-14)
    assert S.lb_factor(cell, 6) == np.inf


def test_critical_exponent():
    assert S.critical_exponent(0.75) == 6.0
    assert S.critical_exponent(5 / 8) == 4.0
    assert S.critical_exponent(0.999) > S.critical_exponent(0.99)
    for bad in (0.5, 1.0, 0.2):
        with pytest.raises(ValueError):
            S.critical_exponent(bad)


@given(st.floats(0.5001, 0.9999))
def test_critical_exponent_range(l2):
    assert 3 < S.critical_exponent(l2) < np.inf
    assert 0 < 2 * l2 - 1 < 1


def test_invariant_suite_passes(origin_ball):
    checks = S.verify(origin_ball, (2.0, 3.0, 5.0))
    assert all(c["passed"] for c in checks), [c for c in checks if not c["passed"]]


def test_invariant_suite_flags_perturbed_lambda1(origin_ball):
    bad = SchulgasserCell(origin_ball.crystallites, 0.75, lambda1_override=2.1)
    failed = {c["name"] for c in S.verify(bad) if not c["passed"]}
    assert {"identity_defect", "effective_tensor_quadrature", "flux_divergence"} <= failed


def test_analytics_phase_split():
    a = S.SchulgasserAnalytics(SchulgasserCell.single(radius=R_HALF))
    xi = np.array([0.0, 2.0, 0.0])
    for p in (2.0, 3.0):
        assert a.cell_moment(xi, p, 0) + a.cell_moment(xi, p, 1) == pytest.approx(a.cell_moment(xi, p))
    assert a.cell_moment(xi, 2.0, 0) == pytest.approx(0.5 * 4)
    assert a.cell_moment(xi, 7.0) == np.inf
    assert a.p_c == 6.0 and a.alpha == 0.5
