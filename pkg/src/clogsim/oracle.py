"""Reference computations used by the test-suite.

Each oracle takes a different route from the production code it checks:
closed-form circle geometry, Richardson extrapolation over refined cell
meshes, a scalar fourth-order Runge-Kutta integrator for the well-mixed
kinetics, and an explicit sum over collision pairs for coagulation.
"""
from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field
import math

import numpy as np

from .cellmesh import triangulate_perforated_cell
from .cellsolve import EffectiveTensor, effective_tensor, solve_cell
from .errors import OffsetRangeError, ValidationError
from .microgeometry import GeomQuantities, eval_initial_curve, offset_curve


@dataclass
class OracleReport:
    name: str
    reference_values: tuple
    tolerance: float
    passed: bool
    observed: tuple = ()
    error: float = float("nan")

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValidationError("oracle tolerance must be positive")

    def line(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: error={self.error:.3e} tol={self.tolerance:.1e}"


def compare(name, observed, reference, tolerance, relative=False) -> OracleReport:
    """Max-norm comparison, optionally relative to the reference's max-norm."""
    obs = np.atleast_1d(np.asarray(observed, dtype=float)).ravel()
    ref = np.atleast_1d(np.asarray(reference, dtype=float)).ravel()
    err = float(np.max(np.abs(obs - ref))) if obs.size else 0.0
    if relative:
        err /= max(float(np.max(np.abs(ref))), np.finfo(float).tiny)
    return OracleReport(name, tuple(ref.tolist()), tolerance, bool(err <= tolerance),
                        tuple(obs.tolist()), err)


# -- geometry --------------------------------------------------------------

def circle_reference(R: float, sigma: float) -> GeomQuantities:
    r = R + sigma
    if not (0 < r < 0.5):
        raise OffsetRangeError(f"offset circle radius {r} outside (0, 1/2)")
    gamma_len = 2 * math.pi * r
    solid = math.pi * r * r
    fluid = 1.0 - solid
    return GeomQuantities(gamma_len, fluid, solid, gamma_len / fluid)


# -- cell problem ----------------------------------------------------------

@dataclass(frozen=True)
class RefinedStudy:
    tensor: EffectiveTensor           # extrapolated
    levels: tuple                     # mesh sizes used
    tensors: tuple = field(repr=False)  # raw D at each level
    observed_ratio: float             # |D(h)-D(h/2)| / |D(h/2)-D(h/4)|
    error_bar: float                  # |extrapolated - finest|, max-norm


def _tensor_at(shape, sigma, h, phi_prefactor):
    base = eval_initial_curve(shape)
    curve = offset_curve(base, sigma) if sigma != 0 else base
    mesh = triangulate_perforated_cell([curve], h)
    return effective_tensor(mesh, solve_cell(mesh), 1.0, phi_prefactor)


def refined_cell_study(shape, sigma: float = 0.0, h: float = 0.02, order: int = 2,
                       phi_prefactor: bool = True) -> RefinedStudy:
    """Solve at h, h/2, h/4 and extrapolate the two finest levels.

    The assumed convergence order is checked against the observed ratio of
    successive differences; a ratio far from 2**order raises.
    """
    hs = (h, h / 2, h / 4)
    if shape is None:
        mesh = triangulate_perforated_cell([], h / 4)
        t = effective_tensor(mesh, solve_cell(mesh), 1.0, phi_prefactor)
        return RefinedStudy(t, hs, (t.D,) * 3, float("nan"), 0.0)
    ts = [_tensor_at(shape, sigma, hh, phi_prefactor) for hh in hs]
    D0, D1, D2 = (t.D for t in ts)
    d01 = float(np.max(np.abs(D0 - D1)))
    d12 = float(np.max(np.abs(D1 - D2)))
    ratio = d01 / d12 if d12 > 0 else float("inf")
    target = 2.0 ** order
    if d12 > 1e-12 and not (target / 2 <= ratio <= target * 2):
        raise ValidationError(f"observed convergence ratio {ratio:.2f} inconsistent with order {order}")
    f = 1.0 / (target - 1.0)
    D = D2 + f * (D2 - D1)
    phi = ts[2].phi + f * (ts[2].phi - ts[1].phi)
    c_D = float(np.linalg.eigvalsh(0.5 * (D + D.T)).min())
    tensor = EffectiveTensor(D, phi, 1.0, c_D)
    return RefinedStudy(tensor, hs, (D0, D1, D2), ratio, float(np.max(np.abs(D - D2))))


def refined_cell_reference(shape, sigma: float = 0.0, h: float = 0.02,
                           phi_prefactor: bool = True) -> EffectiveTensor:
    """Richardson-extrapolated tensor from meshes of size h/2 and h/4.

    ``shape=None`` means the empty cell.
    """
    return refined_cell_study(shape, sigma, h, phi_prefactor=phi_prefactor).tensor


# -- kinetics --------------------------------------------------------------

def smoluchowski_bruteforce(u, gamma):
    """Coagulation rates summed over ordered collision pairs (j, l), j + l <= N."""
    N = len(u)
    R = [0.0] * N
    for j in range(1, N + 1):
        for l in range(1, N + 1 - j):
            r = 0.5 * gamma[j - 1][l - 1] * u[j - 1] * u[l - 1]
            R[j + l - 1] += r
            R[j - 1] -= r
            R[l - 1] -= r
    return R


@dataclass(frozen=True)
class Trajectory:
    t: np.ndarray
    u: np.ndarray        # (N, len(t))
    v: np.ndarray
    sigma: np.ndarray


def wellmixed_reference(params, table, u0, v0=0.0, T=1.0, sigma0=0.0,
                        n_steps: int = 10**6, n_out: int = 100) -> Trajectory:
    """Classical RK4 for the spatially uniform kinetics with dt = T / n_steps.

    Integrates u, v and sigma together, with sigma clamped to the table range
    when reading A (linear interpolation by bisection). Returns ``n_out + 1``
    equispaced samples including t = 0.
    """
    if n_steps % n_out:
        raise ValidationError("n_steps must be a multiple of n_out")
    N = len(u0)
    a = [float(x) for x in params.a]
    b = [float(x) for x in params.b]
    g = [[float(x) for x in row] for row in params.gamma]
    alpha = float(params.alpha_v)
    xs = [float(x) for x in table.sigmas]
    As = [float(x) for x in table.A]
    smax = xs[-1]

    def A_of(s):
        if s <= xs[0] or len(xs) == 1:
            return As[0]
        if s >= smax:
            return As[-1]
        k = bisect_right(xs, s) - 1
        w = (s - xs[k]) / (xs[k + 1] - xs[k])
        return As[k] + w * (As[k + 1] - As[k])

    def rhs(y):
        u, v, s = y[:N], y[N], y[N + 1]
        A = A_of(s)
        R = smoluchowski_bruteforce(u, g)
        du = [R[i] - A * (a[i] * u[i] - b[i] * v) for i in range(N)]
        dv = sum(a[i] * u[i] - b[i] * v for i in range(N))
        return du + [dv, alpha * dv]

    dt = T / n_steps
    y = [float(x) for x in u0] + [float(v0), float(sigma0)]
    stride = n_steps // n_out
    out = [list(y)]
    n = len(y)
    for k in range(1, n_steps + 1):
        k1 = rhs(y)
        k2 = rhs([y[i] + 0.5 * dt * k1[i] for i in range(n)])
        k3 = rhs([y[i] + 0.5 * dt * k2[i] for i in range(n)])
        k4 = rhs([y[i] + dt * k3[i] for i in range(n)])
        y = [y[i] + dt / 6.0 * (k1[i] + 2 * k2[i] + 2 * k3[i] + k4[i]) for i in range(n)]
        if k % stride == 0:
            out.append(list(y))
    arr = np.array(out)
    t = np.linspace(0.0, T, n_out + 1)
    return Trajectory(t, arr[:, :N].T.copy(), arr[:, N].copy(), arr[:, N + 1].copy())


def binary_coagulation_u1(t, gamma11):
    """Monomer concentration for N = 2, u(0) = (1, 0): 1 / (1 + gamma11 t)."""
    return 1.0 / (1.0 + gamma11 * np.asarray(t, dtype=float))


def v_closed_form_constant_u(t, v0, a, b, u):
    """Exact v(t) for frozen u: exp(-bt) v0 + (1 - exp(-bt)) sum(a u) / b, b = sum b_i."""
    btot = float(np.sum(b))
    force = float(np.dot(a, u))
    if btot == 0:
        return v0 + force * t
    return math.exp(-btot * t) * v0 + (1 - math.exp(-btot * t)) * force / btot
