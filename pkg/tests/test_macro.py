import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homconc.errors import ConfigError
from homconc.macro import Box, MacroProblem, StructuredMesh, solve_homogenized, solve_q1, two_scale_reconstruction

STRIP_BCS = {"x-": {"type": "dirichlet"}, "x+": {"type": "neumann", "g": 1.0}}


def strip(tensors, partition=0, counts=(8, 8), bcs=STRIP_BCS, f=0.0):
    return MacroProblem((1.0, 1.0), counts, partition, tensors, f, bcs)


def test_linear_solution_reproduced():
    sol = solve_homogenized(strip({0: np.eye(2)}))
    x = StructuredMesh((1.0, 1.0), (8, 8)).node_coordinates()
    assert np.abs(sol.u_H.reshape(-1) - x.reshape(-1, 2)[:, 0]).max() <= 1e-10
    assert np.abs(sol.grad_u_H - [1.0, 0.0]).max() <= 1e-10


def test_laminate_effective_tensor_gradient():
    sol = solve_homogenized(strip({0: np.diag([4 / 3, 1.5])}))
    assert np.abs(sol.grad_u_H - [0.75, 0.0]).max() <= 1e-10


def _two_subdomains(counts=(8, 8)):
    part = np.zeros(counts, dtype=int)
    part[counts[0] // 2:] = 1
    return part


def test_two_subdomain_strip_neumann():
    # unit inflow: flux 1 in both halves, gradients 1 and 1/2
    sol = solve_homogenized(strip({0: np.eye(2), 1: 2 * np.eye(2)}, _two_subdomains()))
    g = sol.grad_u_H[:, 0].reshape(8, 8)
    assert np.allclose(g[:4], 1.0, atol=1e-10) and np.allclose(g[4:], 0.5, atol=1e-10)


def test_two_subdomain_strip_dirichlet():
    # u = 0 | u = 1: series resistance 1/2 + 1/4 gives flux 4/3
    bcs = {"x-": {"type": "dirichlet", "value": 0.0}, "x+": {"type": "dirichlet", "value": 1.0}}
    sol = solve_homogenized(strip({0: np.eye(2), 1: 2 * np.eye(2)}, _two_subdomains(), bcs=bcs))
    g = sol.grad_u_H[:, 0].reshape(8, 8)
    assert np.allclose(g[:4], 4 / 3, atol=1e-10) and np.allclose(g[4:], 2 / 3, atol=1e-10)
    # continuous flux across the interface
    assert g[3, 0] * 1.0 == pytest.approx(g[4, 0] * 2.0)


def test_refinement_reduces_error_for_source_problem():
    # -(k u')' = 1 with k = 1 | 2, u(0) = 0, k u'(1) = 1: flux 2 - x
    errs = []
    for n in (4, 8, 16):
        part = np.zeros((n, 2), dtype=int)
        part[n // 2:] = 1
        sol = solve_homogenized(strip({0: np.eye(2), 1: 2 * np.eye(2)}, part, (n, 2), f=1.0))
        x = (np.arange(n) + 0.5) / n
        k = np.where(x < 0.5, 1.0, 2.0)
        exact = (2 - x) / k
        errs.append(np.abs(sol.grad_u_H[:, 0].reshape(n, 2)[:, 0] - exact).max())
    assert errs[0] > errs[1] > errs[2] or max(errs) < 1e-12


@settings(max_examples=15, deadline=None)
@given(st.floats(0.1, 5), st.floats(-2, 2), st.integers(0, 1000))
def test_energy_identity_and_flux_balance(k, g, seed):
    rng = np.random.default_rng(seed)
    f = rng.normal(size=(6, 6))
    bcs = {"x-": {"type": "dirichlet"}, "y+": {"type": "neumann", "g": g}}
    sol = solve_homogenized(MacroProblem((1.0, 2.0), (6, 6), 0, {0: k * np.eye(2)}, f, bcs))
    assert sol.energy == pytest.approx(sol.work, rel=1e-9, abs=1e-12)
    area = 1.0 / 6
    total = f.sum() * (1 / 6) * (2 / 6) + g * 6 * area
    assert sol.boundary_flux == pytest.approx(total, rel=1e-9, abs=1e-12)


def test_pure_neumann():
    bcs = {"x-": {"type": "neumann", "g": -1.0}, "x+": {"type": "neumann", "g": 1.0}}
    sol = solve_homogenized(strip({0: np.eye(2)}, bcs=bcs))
    assert np.abs(sol.grad_u_H - [1.0, 0.0]).max() <= 1e-9
    bad = {"x+": {"type": "neumann", "g": 1.0}}
    with pytest.raises(ConfigError):
        solve_homogenized(strip({0: np.eye(2)}, bcs=bad))


def test_problem_validation():
    with pytest.raises(ConfigError):
        strip({0: -np.eye(2)})
    with pytest.raises(ConfigError):
        strip({0: np.eye(2)}, partition=_two_subdomains())
    with pytest.raises(ConfigError):
        strip({0: np.eye(2)}, bcs={"q+": {"type": "dirichlet"}})
    with pytest.raises(ConfigError):
        strip({0: np.eye(2)}, bcs={"x+": {"type": "robin"}})


def test_three_dimensional_solve():
    prob = MacroProblem((1.0, 1.0, 1.0), (4, 4, 4), 0, {0: np.eye(3)}, 0.0, STRIP_BCS)
    sol = solve_homogenized(prob)
    assert np.abs(sol.grad_u_H - [1.0, 0.0, 0.0]).max() <= 1e-10
    cg = solve_q1(prob.mesh, prob.element_tensors(), 0.0, STRIP_BCS, method="cg")
    assert np.abs(cg.grad - [1.0, 0.0, 0.0]).max() <= 1e-8


def test_refine_keeps_solution():
    sol = solve_homogenized(strip({0: np.eye(2)}).refine(3))
    assert sol.grad_u_H.shape == (24 * 24, 2)
    assert np.abs(sol.grad_u_H - [1.0, 0.0]).max() <= 1e-10


def test_box_selection():
    D = Box.centered((1.0, 2.0))
    assert D.lo == (0.25, 0.5) and D.hi == (0.75, 1.5) and D.volume == 0.5


def test_two_scale_reconstruction(laminate_solution):
    sol = solve_homogenized(strip({0: np.eye(2)}))
    field = two_scale_reconstruction(sol, {0: laminate_solution}, 0)
    assert np.allclose(field[:32, :, 0], 4 / 3) and np.allclose(field[32:, :, 0], 2 / 3)
    with pytest.raises(ConfigError):
        two_scale_reconstruction(sol, {}, 0)


@settings(max_examples=10, deadline=None)
@given(st.floats(-3, 3), st.floats(0.1, 3))
def test_reconstruction_linear(c, k):
    bcs = {"x-": {"type": "dirichlet"}, "x+": {"type": "neumann", "g": c}}
    from homconc.cell_solver import solve_corrector
    from homconc.geometry import build_laminate
    cell = solve_corrector(build_laminate(0, (0.5, 0.5), (1.0, 1.0 + k), 8), tol=1e-12)
    one = two_scale_reconstruction(solve_homogenized(strip({0: np.eye(2)}, bcs=STRIP_BCS)), {0: cell}, 3)
    scaled = two_scale_reconstruction(solve_homogenized(strip({0: np.eye(2)}, bcs=bcs)), {0: cell}, 3)
    assert np.allclose(scaled, c * one, atol=1e-9)
