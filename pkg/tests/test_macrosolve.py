import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clogsim import (Ellipse, MacroSolver, ModelParams, PolygonDomain, SolverError, ValidationError,
                     build_macro_mesh, initial_sigma_field, run, smoluchowski_rates, v_exact_update)
from clogsim.coefftab import CoefficientTable
from clogsim.macrosolve import Cardioid, LShape, frame_name, write_snapshot, write_summary
from clogsim.oracle import smoluchowski_bruteforce, v_closed_form_constant_u, wellmixed_reference

SQUARE = ((0, 0), (1, 0), (1, 1), (0, 1))


def const_table(A=1.0, sigma_max=1.0, shape=None, D=None):
    D = np.eye(2) if D is None else np.asarray(D)
    return CoefficientTable(np.array([0.0, sigma_max]), np.array([D, D]), np.array([A, A]),
                            np.array([1.0, 1.0]), np.array([0.0, 0.0]), shape=shape)


def ramp_table():
    s = np.linspace(0, 0.4, 9)
    D = np.array([np.eye(2) * (1 - s_) for s_ in s])
    return CoefficientTable(s, D, 0.5 + 4 * s, 1 - s, 1 + s)


def params(N=1, **kw):
    base = dict(d=(1.0,) * N, a=(0.0,) * N, b=(0.0,) * N, gamma=((0.0,) * N,) * N,
                alpha_v=0.0, b_r=0.0, u_b=(0.0,) * N, T=0.1, dt=0.01)
    base.update(kw)
    return ModelParams(**base)


@pytest.fixture(scope="module")
def square():
    return build_macro_mesh(PolygonDomain(SQUARE, H=0.1))


# -- kinetics ---------------------------------------------------------------

def test_smoluchowski_examples():
    g = [[10.0, 10.0], [10.0, 10.0]]
    assert np.allclose(smoluchowski_rates(np.array([1.0, 0.0]), g), [-10.0, 5.0])
    assert smoluchowski_rates(np.array([0.7]), [[3.0]])[0] == 0.0


@settings(max_examples=200, deadline=None)
@given(N=st.integers(1, 10), seed=st.integers(0, 2**31 - 1))
def test_smoluchowski_matches_pair_sum_and_conserves_mass(N, seed):
    rng = np.random.default_rng(seed)
    u = rng.random(N)
    g = rng.random((N, N))
    g = g + g.T
    R = smoluchowski_rates(u, g)
    assert np.allclose(R, smoluchowski_bruteforce(u.tolist(), g.tolist()), rtol=1e-13, atol=1e-14)
    assert abs(np.dot(np.arange(1, N + 1), R)) <= 1e-12


def test_smoluchowski_vectorised_over_vertices():
    rng = np.random.default_rng(1)
    u = rng.random((4, 7))
    g = np.full((4, 4), 2.0)
    R = smoluchowski_rates(u, g)
    for k in range(7):
        assert np.allclose(R[:, k], smoluchowski_rates(u[:, k], g))


def test_v_update_examples():
    assert v_exact_update(1.0, np.zeros(3), [0.9] * 3, 3.0, 1.0) == pytest.approx(math.exp(-3))
    assert v_exact_update(0.0, np.array([2.0]), [1.0], 0.0, 0.5) == pytest.approx(1.0)
    v = 0.0
    for _ in range(1000):
        v = v_exact_update(v, np.ones(3), [0.9] * 3, 3.0, 1e-3)
    assert v == pytest.approx(2.7 / 3 * (1 - math.exp(-3)), abs=1e-12)
    assert v == pytest.approx(v_closed_form_constant_u(1.0, 0.0, [0.9] * 3, [1] * 3, [1] * 3), abs=1e-12)
    with pytest.raises(ValidationError):
        v_exact_update(0.0, np.ones(1), [1.0], 1.0, 0.0)


# -- parameters -------------------------------------------------------------

@pytest.mark.parametrize("kw", [
    dict(gamma=((0.0, 1.0), (2.0, 0.0))),
    dict(a=(-1.0, 0.0)),
    dict(scheme="rk4"),
    dict(u_b=(1.0,)),
    dict(dt=0.0),
])
def test_invalid_params(kw):
    with pytest.raises(ValidationError):
        params(2, **kw)


def test_no_species_rejected():
    with pytest.raises(ValidationError):
        ModelParams(d=(), a=(), b=(), gamma=(), u_b=())


# -- stepping ---------------------------------------------------------------

def test_zero_state_stays_zero(square):
    p = params(3, d=(1, 0.5, 0.9), a=(0.9,) * 3, b=(1,) * 3, gamma=((10.0,) * 3,) * 3,
               alpha_v=1.0, b_r=1.0, T=0.05)
    r = run(square, p, ramp_table(), callback=None)
    s = r.solver.initial_state()
    for _ in range(5):
        s = r.solver.step(s)
        assert not s.u.any() and not s.v.any()


def test_wellmixed_reduction_short(square):
    table = ramp_table()
    p = params(3, d=(0.0,) * 3, a=(0.9,) * 3, b=(1.0,) * 3, gamma=((10.0,) * 3,) * 3,
               alpha_v=0.5, T=0.1, dt=1e-3)
    u0 = np.array([1.0, 0.2, 0.0])[:, None] * np.ones(square.n_vertices)
    solver = MacroSolver(square, p, table)
    s = solver.initial_state(u0)
    out = [s.u[:, 0].copy()]
    for _ in range(100):
        s = solver.step(s)
        out.append(s.u[:, 0].copy())
        assert np.ptp(s.u, axis=1).max() < 1e-14
    ref = wellmixed_reference(p, table, [1.0, 0.2, 0.0], 0.0, 0.1, n_steps=10**5, n_out=100)
    assert np.max(np.abs(np.array(out).T - ref.u)) < 1e-6


def test_step_converges_to_spatial_residual(square):
    g = np.cos(np.pi * square.vertices[:, 0]) * np.cos(np.pi * square.vertices[:, 1])
    errs = []
    for dt in (1e-4, 1e-5, 1e-6):
        solver = MacroSolver(square, params(1, dt=dt), const_table())
        s = solver.initial_state(g[None, :])
        rate = (solver.step(s).u[0] - g) / dt
        residual = -(solver.stiffness(s.sigma) @ g) / solver.ml
        errs.append(np.max(np.abs(rate - residual)))
    assert errs[1] < errs[0] / 5 and errs[2] < errs[1] / 5


def test_robin_steady_state(square):
    p = params(1, b_r=2.0, u_b=(1.0,), T=3.0, dt=0.05)
    r = run(square, p, const_table())
    assert np.allclose(r.final.u[0], 0.5, atol=1e-6)


def test_inflow_cutoff(square):
    p = params(1, b_r=1.0, u_b=(1.0,), t0=0.05, T=0.1, dt=0.01)
    solver = MacroSolver(square, p, const_table())
    s = solver.initial_state()
    masses = []
    for _ in range(10):
        s = solver.step(s)
        masses.append(solver.integral(s.u[0]))
    assert masses[4] > masses[3] and masses[9] < masses[5]


def test_nonnegativity_and_offset_identity(square):
    table = ramp_table()
    p = params(3, d=(1, 0.5, 0.9), a=(0.9,) * 3, b=(1.0,) * 3, gamma=((10.0,) * 3,) * 3,
               alpha_v=0.3, b_r=1.0, u_b=(1.0, 0.0, 0.0), T=0.5, dt=0.01)
    worst = {"u": 0.0, "v": 0.0, "id": 0.0}

    def check(s):
        worst["u"] = min(worst["u"], float(s.u.min()))
        worst["v"] = min(worst["v"], float(s.v.min()))
        free = ~s.clogged
        worst["id"] = max(worst["id"], float(np.max(np.abs(s.sigma[free] - 0.3 * s.v[free]), initial=0)))

    run(square, p, table, callback=check)
    assert worst["u"] >= -1e-10 and worst["v"] >= 0.0 and worst["id"] <= 1e-14


def test_reaction_mass_balance(square):
    p = params(3, d=(0.0,) * 3, gamma=((10.0,) * 3,) * 3, T=0.5, dt=0.01)
    rng = np.random.default_rng(3)
    u0 = rng.random((3, square.n_vertices))
    r = run(square, p, const_table(), u0=u0)
    mass = np.array([row[-1] for row in r.summary])
    assert np.max(np.abs(mass - mass[0])) <= 1e-8 * mass[0]


def test_clogging_is_sticky_and_timed(square):
    table = const_table(sigma_max=0.1)
    sigma0 = np.where(square.vertices[:, 0] < 0.2, 0.2, 0.0)
    p = params(1, a=(1.0,), b=(0.0,), alpha_v=1.0, T=0.3, dt=0.01, d=(0.0,))
    u0 = np.ones((1, square.n_vertices))
    frac = []
    r = run(square, p, table, sigma0=sigma0, u0=u0, callback=lambda s: frac.append(s.clogged.mean()))
    s = r.final
    assert np.all(s.clog_time[sigma0 >= 0.1] == 0.0)
    assert np.all(s.clogged) and np.all(s.sigma[s.clogged] == 0.1)
    assert np.all(np.diff(frac) >= 0)
    others = s.clog_time[sigma0 < 0.1]
    assert np.all((others > 0) & (others <= 0.3))


def test_zero_final_time_gives_initial_snapshot(square):
    r = run(square, params(1, T=0.0), const_table())
    assert len(r.snapshots) == 1 and r.snapshots[0].t == 0.0


def test_frames_match_nearest_step(square):
    r = run(square, params(1, T=0.1, dt=0.01, frame_times=(0.031, 0.1)), const_table())
    assert [round(s.t, 10) for s in r.snapshots] == [0.03, 0.1]


def test_nan_aborts(square):
    p = params(1, T=0.02, dt=0.01)
    with pytest.raises(SolverError):
        run(square, p, const_table(), source=lambda x, t: np.full((1, len(x)), np.nan))


def test_stability_warning(square):
    p = params(1, a=(1.0,), T=0.02, dt=0.01)
    with pytest.warns(UserWarning):
        run(square, p, const_table(A=500.0))


def test_imex_euler_scheme_is_consistent(square):
    table = ramp_table()
    kw = dict(d=(1.0, 0.5), a=(0.9, 0.9), b=(1.0, 1.0), gamma=((10.0,) * 2,) * 2, alpha_v=0.5,
              b_r=1.0, u_b=(1.0, 0.0), T=0.2)
    ref = run(square, params(2, dt=1e-4, **kw), table).final.u
    err = [np.max(np.abs(run(square, params(2, dt=dt, scheme="imex-euler", **kw), table).final.u - ref))
           for dt in (0.02, 0.01)]
    assert err[1] < 0.7 * err[0]


def test_initial_sigma_field():
    mesh = build_macro_mesh(LShape(H=0.2))
    shape = Ellipse(0.005, 0.0005)
    table = const_table(sigma_max=0.49, shape=shape)
    assert not initial_sigma_field(mesh, ("uniform", 0.0), table).any()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        s0 = initial_sigma_field(mesh, ("barrier", 0.01, 10.0, 0.5), table)
    zero = np.isclose(mesh.vertices[:, 0] * mesh.vertices[:, 1], 0.0)
    assert np.allclose(s0[zero], 0.0)
    # at x1 x2 = pi / (2 omega) the long axis reaches 1/2, which exceeds the table
    pt = PolygonDomain(((0, 0), (1, 0), (1, 1), (0, 1)), H=0.5)
    m2 = build_macro_mesh(pt)
    m2 = type(m2)(np.array([[1.0, math.pi / 20]]), m2.triangles[:0], m2.boundary_edges[:0], (),
                  m2.periodic_pairs[:0], 0.5)
    with pytest.warns(UserWarning):
        s = initial_sigma_field(m2, ("barrier", 0.01, 10.0), table)
    assert s[0] == 0.49
    big = const_table(sigma_max=1.0, shape=shape)
    assert initial_sigma_field(m2, ("barrier", 0.01, 10.0), big)[0] == pytest.approx(0.495)
    with pytest.raises(ValidationError):
        initial_sigma_field(mesh, ("gaussian", 1.0), table)


def test_macro_domains_mesh():
    m = build_macro_mesh(Cardioid(H=0.3))
    assert m.areas().sum() == pytest.approx(6 * math.pi, rel=0.01)
    assert m.min_angles().min() >= 20.0
    with pytest.raises(ValidationError):
        build_macro_mesh(LShape(H=0.0))


def test_output_files(square, tmp_path):
    r = run(square, params(2, T=0.02, dt=0.01, frame_times=(0.02,)), const_table())
    path = tmp_path / frame_name(0.02)
    assert path.name == "frame_t0.0200.csv"
    write_snapshot(path, square, r.snapshots[0])
    lines = path.read_text().splitlines()
    assert lines[0] == "x,y,u1,u2,v,sigma,clogged,clog_time"
    assert len(lines) == square.n_vertices + 1
    write_summary(tmp_path / "s.csv", r.header, r.summary)
    head = (tmp_path / "s.csv").read_text().splitlines()[0]
    assert head == "t,clogged_fraction,min_u1,max_u1,min_u2,max_u2,total_mass"
