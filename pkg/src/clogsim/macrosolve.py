"""Macroscopic reaction-diffusion-sorption system with evolving microstructure.

Unknowns per mesh vertex: concentrations u_1..u_N of i-mers, sorbed mass v
and interface offset sigma. Per species

    du_i/dt - div(D_i(sigma) grad u_i) = R_i(u) - A(sigma) (a_i u_i - b_i v)
    D_i grad u_i . n + d_i b_r u_i = d_i u_b,i  on the boundary while t <= t0
    dv/dt = sum_i (a_i u_i - b_i v),   sigma = sigma_0 + alpha_v (v - v_0)

with D_i = d_i D(sigma) and A(sigma) read from a CoefficientTable. Space is
discretised with P1 elements and lumped mass matrices.

Two time schemes are provided:

``split`` (default)
    Lie splitting. The pointwise reaction/sorption ODE for (u, v) is advanced
    with the three-stage SSP Runge-Kutta method, then diffusion with the Robin
    condition is taken implicitly (backward Euler).
``imex-euler``
    One first-order IMEX step: implicit diffusion and sorption sink, explicit
    coagulation and desorption source, followed by the exponential update of v.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
import csv
import logging
import math
import warnings

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .cellmesh import TriMesh, triangulate_polygon
from .cellsolve import p1_gradients
from .coefftab import CoefficientTable, lookup
from .errors import SolverError, ValidationError

log = logging.getLogger(__name__)

SCHEMES = ("split", "imex-euler")


# -- domains ---------------------------------------------------------------

@dataclass(frozen=True)
class Cardioid:
    H: float = 0.085
    n_boundary: int = 256

    def boundary(self):
        s = 2 * np.pi * np.arange(self.n_boundary) / self.n_boundary
        r = 2 * (1 + np.cos(s))
        return np.column_stack([r * np.cos(s), r * np.sin(s)])


@dataclass(frozen=True)
class LShape:
    H: float = 0.03

    corners = ((-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (0.0, 1.0), (0.0, 0.0), (-1.0, 0.0))

    def boundary(self):
        return np.array(self.corners)


@dataclass(frozen=True)
class PolygonDomain:
    points: tuple
    H: float = 0.05

    def boundary(self):
        return np.asarray(self.points, dtype=float)


def build_macro_mesh(domain) -> TriMesh:
    if not domain.H > 0:
        raise ValidationError("macro mesh size H must be positive")
    return triangulate_polygon(domain.boundary(), domain.H)


# -- parameters and state --------------------------------------------------

@dataclass(frozen=True)
class ModelParams:
    d: tuple
    a: tuple
    b: tuple
    gamma: tuple
    alpha_v: float = 1.0
    b_r: float = 1.0
    u_b: tuple = ()
    t0: float = math.inf
    T: float = 1.0
    dt: float = 1e-3
    frame_times: tuple = ()
    scheme: str = "split"

    def __post_init__(self):
        self.validate()

    @property
    def N(self):
        return len(self.d)

    def validate(self):
        N = len(self.d)
        if N < 1:
            raise ValidationError("need at least one species")
        for name in ("a", "b", "u_b"):
            if len(getattr(self, name)) != N:
                raise ValidationError(f"{name} must have {N} entries")
        g = np.asarray(self.gamma, dtype=float)
        if g.shape != (N, N):
            raise ValidationError(f"gamma must be {N}x{N}")
        if not np.array_equal(g, g.T):
            raise ValidationError("coagulation kernel gamma must be symmetric")
        rates = np.concatenate([self.d, self.a, self.b, g.ravel(), [self.alpha_v, self.b_r]])
        if np.any(rates < 0):
            raise ValidationError("rates and coefficients must be nonnegative")
        if not self.dt > 0 or self.T < 0:
            raise ValidationError("need dt > 0 and T >= 0")
        if self.scheme not in SCHEMES:
            raise ValidationError(f"unknown time scheme {self.scheme!r}")

    @property
    def gamma_array(self):
        return np.asarray(self.gamma, dtype=float)


@dataclass(frozen=True)
class MacroState:
    t: float
    u: np.ndarray = field(repr=False)          # (N, n_vertices)
    v: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)
    clogged: np.ndarray = field(repr=False)
    clog_time: np.ndarray = field(repr=False)  # NaN while unclogged
    step: int = 0


# -- pointwise kinetics ----------------------------------------------------

def smoluchowski_rates(u, gamma):
    """Truncated coagulation rates R_i(u); ``u`` has shape (N,) or (N, n)."""
    u = np.asarray(u, dtype=float)
    g = np.asarray(gamma, dtype=float)
    N = u.shape[0]
    R = np.zeros_like(u)
    for i in range(N):              # size i + 1
        for j in range(i):          # sizes j + 1 and i - j sum to i + 1
            R[i] += 0.5 * g[j, i - j - 1] * u[j] * u[i - j - 1]
        m = N - (i + 1)
        if m > 0:
            R[i] -= u[i] * np.tensordot(g[i, :m], u[:m], axes=1)
    return R


def v_exact_update(v, u_new, a, b_total, dt):
    """Exponential step for dv/dt = sum a_i u_i - b v with u frozen at ``u_new``."""
    if not dt > 0:
        raise ValidationError("dt must be positive")
    forcing = np.tensordot(np.asarray(a, dtype=float), np.asarray(u_new, dtype=float), axes=1)
    bdt = b_total * dt
    if bdt < 1e-8:
        return v + forcing * dt
    decay = math.exp(-bdt)
    return decay * v + (1.0 - decay) / b_total * forcing


# -- solver ----------------------------------------------------------------

def lumped_mass(mesh: TriMesh):
    _, areas = p1_gradients(mesh.vertices, mesh.triangles)
    return np.bincount(mesh.triangles.ravel(), weights=np.repeat(areas / 3.0, 3),
                       minlength=mesh.n_vertices)


def lumped_boundary_mass(mesh: TriMesh):
    e = mesh.boundary_edges
    length = np.linalg.norm(mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]], axis=1)
    return np.bincount(e.ravel(), weights=np.repeat(length / 2.0, 2), minlength=mesh.n_vertices)


class MacroSolver:
    """Holds mesh operators and advances MacroState objects.

    ``source``, if given, is called as source(x, t) -> (N, n_vertices) and
    added to the right-hand side; it exists for manufactured-solution checks.
    """

    def __init__(self, mesh: TriMesh, params: ModelParams, table: CoefficientTable,
                 sigma0=None, v0=None, source=None):
        self.mesh = mesh
        self.params = params
        self.table = table
        n = mesh.n_vertices
        self.sigma0 = np.zeros(n) if sigma0 is None else np.asarray(sigma0, dtype=float)
        self.v0 = np.zeros(n) if v0 is None else np.asarray(v0, dtype=float)
        self.source = source
        self.grads, self.areas = p1_gradients(mesh.vertices, mesh.triangles)
        self.ml = lumped_mass(mesh)
        self.mb = lumped_boundary_mass(mesh)
        t = mesh.triangles
        self._rows = np.repeat(t, 3, axis=1).ravel()
        self._cols = np.tile(t, (1, 3)).ravel()
        self._gamma = params.gamma_array
        self._a = np.asarray(params.a, dtype=float)
        self._b = np.asarray(params.b, dtype=float)
        self._warned = False

    # state helpers
    def initial_state(self, u0=None) -> MacroState:
        N, n = self.params.N, self.mesh.n_vertices
        u = np.zeros((N, n)) if u0 is None else np.array(u0, dtype=float).reshape(N, n)
        smax = self.table.sigma_max
        clogged = self.sigma0 >= smax
        sigma = np.clip(self.sigma0, 0.0, smax)
        clog_time = np.where(clogged, 0.0, np.nan)
        return MacroState(0.0, u, self.v0.copy(), sigma, clogged, clog_time, 0)

    def sigma_from_v(self, v, clogged):
        raw = self.sigma0 + self.params.alpha_v * (v - self.v0)
        smax = self.table.sigma_max
        return np.where(clogged, smax, np.clip(raw, 0.0, smax)), raw

    def stiffness(self, sigma):
        D, _, _, _ = lookup(self.table, sigma)
        De = D[self.mesh.triangles].mean(axis=1)
        ke = self.areas[:, None, None] * np.einsum("mid,mde,mje->mij", self.grads, De, self.grads)
        n = self.mesh.n_vertices
        return sp.coo_matrix((ke.ravel(), (self._rows, self._cols)), shape=(n, n)).tocsr()

    def _kinetics(self, u, v, clogged):
        sigma, _ = self.sigma_from_v(v, clogged)
        _, A, _, _ = lookup(self.table, sigma)
        exch = self._a[:, None] * u - self._b[:, None] * v[None, :]
        du = smoluchowski_rates(u, self._gamma) - A[None, :] * exch
        dv = exch.sum(axis=0)
        return du, dv

    def _check_dt(self, state, A):
        p = self.params
        rate = np.max(A[None, :] * self._a[:, None] + self._gamma @ np.maximum(state.u, 0))
        if p.dt * rate >= 1 and not self._warned:
            self._warned = True
            warnings.warn(f"dt={p.dt} exceeds the explicit reaction bound (dt*rate={p.dt * rate:.3g})")

    def _diffusion_solve(self, K, rhs, i, extra_diag):
        p = self.params
        d = p.d[i]
        diag = self.ml + extra_diag + p.dt * d * p.b_r * self.mb
        M = sp.diags(diag) + (p.dt * d) * K
        if d == 0:
            return rhs / diag
        return splu(M.tocsc()).solve(rhs)

    def step(self, state: MacroState) -> MacroState:
        p = self.params
        dt = p.dt
        t_new = (state.step + 1) * dt
        inflow = 1.0 if t_new <= p.t0 * (1 + 1e-12) else 0.0
        src = None
        if self.source is not None:
            src = np.asarray(self.source(self.mesh.vertices, t_new), dtype=float)
        _, A0, _, _ = lookup(self.table, state.sigma)
        self._check_dt(state, A0)
        u_new = np.empty_like(state.u)

        if p.scheme == "split":
            u, v = state.u, state.v
            du, dv = self._kinetics(u, v, state.clogged)
            u1, v1 = u + dt * du, v + dt * dv
            du, dv = self._kinetics(u1, v1, state.clogged)
            u2 = 0.75 * u + 0.25 * (u1 + dt * du)
            v2 = 0.75 * v + 0.25 * (v1 + dt * dv)
            du, dv = self._kinetics(u2, v2, state.clogged)
            u_star = u / 3.0 + 2.0 / 3.0 * (u2 + dt * du)
            v_new = v / 3.0 + 2.0 / 3.0 * (v2 + dt * dv)
            sigma_mid, _ = self.sigma_from_v(v_new, state.clogged)
            K = self.stiffness(sigma_mid)
            for i in range(p.N):
                rhs = self.ml * u_star[i] + dt * p.d[i] * p.u_b[i] * inflow * self.mb
                if src is not None:
                    rhs = rhs + dt * self.ml * src[i]
                u_new[i] = self._diffusion_solve(K, rhs, i, 0.0)
        else:
            K = self.stiffness(state.sigma)
            R = smoluchowski_rates(state.u, self._gamma)
            for i in range(p.N):
                expl = state.u[i] + dt * (R[i] + A0 * p.b[i] * state.v)
                rhs = self.ml * expl + dt * p.d[i] * p.u_b[i] * inflow * self.mb
                if src is not None:
                    rhs = rhs + dt * self.ml * src[i]
                u_new[i] = self._diffusion_solve(K, rhs, i, dt * p.a[i] * A0 * self.ml)
            v_new = v_exact_update(state.v, u_new, p.a, float(np.sum(p.b)), dt)

        if not (np.all(np.isfinite(u_new)) and np.all(np.isfinite(v_new))):
            raise SolverError(f"non-finite values at t={t_new:.6g}")
        _, raw = self.sigma_from_v(v_new, state.clogged)
        newly = (~state.clogged) & (raw >= self.table.sigma_max)
        clogged = state.clogged | newly
        sigma, _ = self.sigma_from_v(v_new, clogged)
        clog_time = np.where(newly, t_new, state.clog_time)
        return MacroState(t_new, u_new, v_new, sigma, clogged, clog_time, state.step + 1)

    # diagnostics
    def integral(self, field_values):
        return float(self.ml @ field_values)

    def summary_row(self, state: MacroState):
        frac = float(self.ml[state.clogged].sum() / self.ml.sum())
        row = [state.t, frac]
        for i in range(self.params.N):
            row += [float(state.u[i].min()), float(state.u[i].max())]
        sizes = np.arange(1, self.params.N + 1)
        total = float(self.ml @ (sizes @ state.u)) + self.integral(state.v)
        row.append(total)
        return row

    def summary_header(self):
        cols = ["t", "clogged_fraction"]
        for i in range(1, self.params.N + 1):
            cols += [f"min_u{i}", f"max_u{i}"]
        return cols + ["total_mass"]


def step(state: MacroState, params: ModelParams, table: CoefficientTable, mesh: TriMesh,
         sigma0=None, v0=None) -> MacroState:
    """Single step without a persistent solver (operators rebuilt on each call)."""
    return MacroSolver(mesh, params, table, sigma0, v0).step(state)


@dataclass
class RunResult:
    snapshots: list
    summary: list
    header: list
    final: MacroState = field(repr=False)
    solver: MacroSolver = field(repr=False)


def run(mesh: TriMesh, params: ModelParams, table: CoefficientTable, sigma0=None, v0=None,
        u0=None, source=None, callback=None) -> RunResult:
    """Advance from t = 0 to T and collect snapshots at the frame times.

    Frames are matched to the nearest time step. With T = 0 the initial state
    is returned as the only snapshot. ``callback(state)`` sees every state.
    """
    solver = MacroSolver(mesh, params, table, sigma0, v0, source)
    state = solver.initial_state(u0)
    n_steps = int(round(params.T / params.dt))
    frame_steps = sorted({int(round(tf / params.dt)) for tf in params.frame_times
                          if 0 <= tf <= params.T + 0.5 * params.dt})
    snapshots, summary = [], [solver.summary_row(state)]
    if n_steps == 0 or 0 in frame_steps:
        snapshots.append(state)
    if callback is not None:
        callback(state)
    for _ in range(n_steps):
        state = solver.step(state)
        summary.append(solver.summary_row(state))
        if callback is not None:
            callback(state)
        if state.step in frame_steps:
            snapshots.append(state)
    return RunResult(snapshots, summary, solver.summary_header(), state, solver)


def initial_sigma_field(mesh: TriMesh, spec, table: CoefficientTable):
    """Per-vertex initial offset from ``('uniform', value)`` or
    ``('barrier', R0, omega, scale)``.

    The barrier prescribes the long semi-axis R = scale * max(R0, sin(omega x1 x2))
    and converts it to an offset relative to the table's base shape.
    """
    kind, *args = spec
    n = mesh.n_vertices
    if kind == "uniform":
        sigma0 = np.full(n, float(args[0]))
    elif kind == "barrier":
        R0, omega = float(args[0]), float(args[1])
        scale = float(args[2]) if len(args) > 2 else 0.5
        x1, x2 = mesh.vertices[:, 0], mesh.vertices[:, 1]
        R = scale * np.maximum(R0, np.sin(omega * x1 * x2))
        base = table.shape.base_radius if table.shape is not None else 0.0
        sigma0 = np.maximum(R - base, 0.0)
    else:
        raise ValidationError(f"unknown initial sigma spec {kind!r}")
    over = sigma0 > table.sigma_max
    if over.any():
        warnings.warn(f"{int(over.sum())} initial offsets exceed the table range and were clamped")
        sigma0 = np.minimum(sigma0, table.sigma_max)
    return sigma0


# -- output ----------------------------------------------------------------

def frame_name(t: float) -> str:
    return f"frame_t{t:.4f}.csv"


def write_snapshot(path, mesh: TriMesh, state: MacroState):
    N = state.u.shape[0]
    header = ["x", "y"] + [f"u{i}" for i in range(1, N + 1)] + ["v", "sigma", "clogged", "clog_time"]
    cols = [mesh.vertices[:, 0], mesh.vertices[:, 1], *state.u, state.v, state.sigma]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for k in range(mesh.n_vertices):
            row = [repr(float(c[k])) for c in cols]
            row += [str(int(state.clogged[k])), repr(float(state.clog_time[k]))]
            w.writerow(row)


def write_summary(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) for v in row])
