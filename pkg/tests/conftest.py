import numpy as np
import pytest

from homconc.cell_solver import solve_corrector
from homconc.geometry import SchulgasserCell, build_laminate, build_multiphase, rasterize_schulgasser


def two_phase_cell(rng, resolution=16, contrast=(1.0, 5.0)):
    """Random two-phase 2-D cell with both phases present."""
    mask = rng.random((resolution, resolution)) < 0.5
    mask[0, 0], mask[0, 1] = True, False
    k = rng.uniform(*contrast, size=2)
    return build_multiphase([~mask, mask], [k[0], k[1]], resolution)


@pytest.fixture(scope="session")
def laminate_grid():
    return build_laminate(0, (0.5, 0.5), (1.0, 2.0), 64)


@pytest.fixture(scope="session")
def laminate_solution(laminate_grid):
    return solve_corrector(laminate_grid, tol=1e-10)


@pytest.fixture(scope="session")
def single_ball():
    return SchulgasserCell.single()


@pytest.fixture(scope="session")
def schulgasser_ladder(single_ball):
    """Numeric corrector solutions at 32 and 64 (reused across modules)."""
    return {N: solve_corrector(rasterize_schulgasser(single_ball, N)) for N in (32, 64)}


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
