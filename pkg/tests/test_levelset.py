import numpy as np
import pytest

from atwflow.anisotropy import EuclideanAnisotropy
from atwflow.flow import FlowProblem, run_flow
from atwflow.geometry import SetState
from atwflow.grid import Grid
from atwflow.levelset import LevelLadder, pde_residual, run_levelset
from atwflow.relax import Forcing, SolverParams

from conftest import area_radius

GRID = Grid((128, 128), 1.0 / 128)
EUCLID = EuclideanAnisotropy()
PARAMS = SolverParams(pd_gap_tol=2e-5, pd_max_iters=40000)


def cone(clip=-0.15, R0=0.25):
    X, Y = GRID.centers()
    return np.maximum(R0 - np.hypot(X - 0.5, Y - 0.5), clip)


def test_staircase_reconstruction_bound():
    u0 = cone()
    lad = LevelLadder.from_function(GRID, u0, 64, "minus")
    ds = lad.levels[1] - lad.levels[0]
    rec = lad.reconstruct()
    assert np.max(np.abs(rec - u0)) <= ds + 1e-12
    # upper reconstruction differs by exactly one rung
    up = lad.reconstruct(upper=True)
    assert np.allclose(up - rec, ds)


def test_single_level_matches_set_flow_bitwise():
    u0 = cone()
    h = 1e-3
    lt = run_levelset(
        GRID, u0, 1, "minus", EUCLID, EUCLID, Forcing(0.0), h, 5 * h, PARAMS,
        levels=np.array([0.0]),
    )
    st0 = SetState.from_level(GRID, -u0)
    tr = run_flow(FlowProblem(GRID, EUCLID, EUCLID, Forcing(0.0), PARAMS), st0, h, 5 * h)
    assert len(lt.ladders) == len(tr.states)
    for lad, st in zip(lt.ladders[1:], tr.states[1:]):
        assert np.array_equal(lad.sets[0].indicator, st.indicator)


@pytest.fixture(scope="module")
def cone_ladders():
    u0 = cone()
    h = 1e-3
    out = {}
    for variant in ("minus", "plus"):
        out[variant] = run_levelset(
            GRID, u0, 12, variant, EUCLID, EUCLID, Forcing(0.0), h, 0.008,
            PARAMS, record_stride=4,
        )
    return out


def test_cone_nesting_without_corrections(cone_ladders):
    for variant, tr in cone_ladders.items():
        assert all(r.nesting_corrections == 0 for r in tr.reports)
        assert all(lad.nested() for lad in tr.ladders)


def test_cone_levels_follow_radial_law(cone_ladders):
    tr = cone_ladders["minus"]
    lad = tr.ladders[-1]
    t = tr.times[-1]
    for s, st in zip(lad.levels, lad.sets):
        if st.empty or st.full:
            continue
        r0 = 0.25 - s
        if r0 < 0.08:  # too close to extinction for the cell tolerance
            continue
        exact = np.sqrt(max(r0**2 - 2 * t, 0.0))
        assert abs(area_radius(st) - exact) <= 1.5 / 128


def test_ordering_minus_below_plus(cone_ladders):
    for um, up in zip(
        cone_ladders["minus"].functions, cone_ladders["plus"].functions
    ):
        assert np.all(um <= up + 1e-12)


def test_initial_reconstruction_matches_staircase(cone_ladders):
    u0 = cone()
    lad0 = cone_ladders["minus"].ladders[0]
    rec = cone_ladders["minus"].functions[0]
    expect = np.full(GRID.shape, lad0.floor)
    for s in lad0.levels:
        expect[u0 > s] = s
    assert np.array_equal(rec, expect)


def test_level_relabeling_leaves_sets_unchanged():
    # the scheme acts on sets: squashing the level values through a strictly
    # increasing map must reproduce identical evolved sets
    u0 = cone()
    h = 1e-3
    base = LevelLadder.from_function(GRID, u0, 6, "minus")
    warped = LevelLadder.from_function(
        GRID, np.tanh(3.0 * u0), 6, "minus",
        levels=np.tanh(3.0 * base.levels),
    )
    for a, b in zip(base.sets, warped.sets):
        assert np.array_equal(a.indicator, b.indicator)
    from atwflow.levelset import levelset_step

    b1, _, _ = levelset_step(base, h, 0.0, EUCLID, EUCLID, Forcing(0.0), PARAMS)
    w1, _, _ = levelset_step(warped, h, 0.0, EUCLID, EUCLID, Forcing(0.0), PARAMS)
    for a, b in zip(b1.sets, w1.sets):
        # the stepped sets coincide except for knife-edge cells: the level
        # profiles feed the subcell interface reconstruction, which is not
        # exactly relabel-invariant
        assert np.logical_xor(a.indicator, b.indicator).sum() <= 4


def test_full_and_empty_levels_are_static():
    u0 = cone(clip=-0.05)
    lad = LevelLadder.from_function(
        GRID, u0, 4, "minus", levels=np.array([-0.06, 0.05, 0.15, 0.26])
    )
    assert lad.sets[0].kind == "full"
    assert lad.sets[-1].kind == "empty"
    from atwflow.levelset import levelset_step

    out, rep, _ = levelset_step(lad, 1e-3, 0.0, EUCLID, EUCLID, Forcing(0.0), PARAMS)
    assert out.sets[0] is lad.sets[0]
    assert out.sets[-1] is lad.sets[-1]
    assert rep.nesting_corrections == 0


def test_pde_residual_stationary_forced_disk():
    # matched forcing: the level-set function should not move, residual small
    Rs = 0.2
    X, Y = GRID.centers()
    u0 = np.maximum(Rs - np.hypot(X - 0.5, Y - 0.5), -0.1)
    tr = run_levelset(
        GRID, u0, 24, "minus", EUCLID, EUCLID, Forcing(1.0 / Rs), 1e-3, 0.008,
        PARAMS, record_stride=8,
    )
    probe = (np.hypot(X - 0.5, Y - 0.5) > 0.1) & (np.hypot(X - 0.5, Y - 0.5) < 0.28)
    rep = pde_residual(
        tr, GRID, EUCLID, EUCLID, Forcing(1.0 / Rs), probe=probe,
        smoothing_cells=3.0,
    )
    assert rep["count"] > 100
    # scale of the raw terms is psi * H ~ 1/Rs = 5; the residual sits an
    # order of magnitude below after staircase mollification
    assert rep["median"] <= 0.1 * (1.0 / Rs)
