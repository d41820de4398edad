"""Effective coefficients tabulated over the interface offset sigma.

A table is built once per initial shape: for each sigma on a uniform grid the
core is offset, the fluid cell meshed, both cell problems solved and D, A,
phi, |Gamma| stored. The macro solver reads coefficients by piecewise-linear
interpolation in sigma; beyond the last grid point the last entry is used
and the point is reported as clogged.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import csv
import logging

import numpy as np

from .cellmesh import triangulate_perforated_cell
from .cellsolve import effective_tensor, solve_cell
from .errors import ClogsimError, ValidationError
from .microgeometry import (DEFAULT_SAMPLES, ShapeSpec, eval_initial_curve, geom_quantities,
                            growth_limit, offset_curve)

log = logging.getLogger(__name__)

CSV_HEADER = ["sigma", "D11", "D12", "D21", "D22", "A", "phi", "gamma_len"]


@dataclass(frozen=True)
class CoefficientTable:
    sigmas: np.ndarray = field(repr=False)
    D: np.ndarray = field(repr=False)          # (M+1, 2, 2), base diffusivity d = 1
    A: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)
    gamma_len: np.ndarray = field(repr=False)
    shape: ShapeSpec | None = None
    epsilon: float | None = None
    h: float | None = None
    truncated_at: float | None = None
    d_base: float = 1.0

    def __post_init__(self):
        if len(self.sigmas) == 0:
            raise ValidationError("coefficient table is empty")
        if np.any(np.diff(self.sigmas) <= 0):
            raise ValidationError("table sigmas must be strictly increasing")

    @property
    def sigma_max(self) -> float:
        return float(self.sigmas[-1])

    def __len__(self):
        return len(self.sigmas)


def _entry(args):
    base, sigma, h, phi_prefactor = args
    curve = offset_curve(base, sigma)
    geo = geom_quantities([curve])
    mesh = triangulate_perforated_cell([curve], h)
    tensor = effective_tensor(mesh, solve_cell(mesh), 1.0, phi_prefactor)
    return tensor.D, geo.specific_surface, geo.fluid_area, geo.gamma_len


def build_table(shape: ShapeSpec, M: int = 60, epsilon: float = 1e-3, h: float = 0.02,
                n_samples: int = DEFAULT_SAMPLES, phi_prefactor: bool = True,
                workers: int = 1) -> CoefficientTable:
    """Tabulate D, A, phi, |Gamma| on M + 1 equispaced offsets in [0, sigma_top].

    sigma_top is the clogging offset, capped by the smooth-offset limit for
    non-convex shapes. A failure at some offset truncates the table there.
    """
    if M < 2:
        raise ValidationError("M must be at least 2")
    base = eval_initial_curve(shape, n_samples)
    top = growth_limit(base, epsilon)
    sigmas = top * np.arange(M + 1) / M
    jobs = [(base, float(s), h, phi_prefactor) for s in sigmas]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            futures = [pool.submit(_entry, j) for j in jobs]
            results = []
            for fut in futures:
                try:
                    results.append(fut.result())
                except ClogsimError as exc:
                    results.append(exc)
    else:
        results = []
        for j in jobs:
            try:
                results.append(_entry(j))
            except ClogsimError as exc:
                results.append(exc)
    rows, truncated = [], None
    for s, r in zip(sigmas, results):
        if isinstance(r, Exception):
            truncated = float(s)
            log.warning("table truncated at sigma=%.6g: %s", s, r)
            break
        rows.append(r)
    if not rows:
        raise ClogsimError("no table entry could be computed")
    n = len(rows)
    return CoefficientTable(
        sigmas=np.array(sigmas[:n]),
        D=np.array([r[0] for r in rows]),
        A=np.array([r[1] for r in rows]),
        phi=np.array([r[2] for r in rows]),
        gamma_len=np.array([r[3] for r in rows]),
        shape=shape, epsilon=epsilon, h=h, truncated_at=truncated,
    )


def lookup(table: CoefficientTable, sigma, d_i: float = 1.0):
    """Interpolated (D_i, A, phi, clogged) at offset(s) ``sigma``.

    Scalars give D of shape (2, 2); arrays give (n, 2, 2). Offsets below the
    grid clamp to the first entry, above it to the last entry with
    ``clogged`` set.
    """
    if len(table) == 0:
        raise ValidationError("empty coefficient table")
    s = np.asarray(sigma, dtype=float)
    scalar = s.ndim == 0
    s = np.atleast_1d(s)
    xs = table.sigmas
    clogged = s > xs[-1]
    if len(xs) == 1:
        idx = np.zeros(len(s), dtype=int)
        t = np.zeros(len(s))
    else:
        sc = np.clip(s, xs[0], xs[-1])
        idx = np.clip(np.searchsorted(xs, sc, side="right") - 1, 0, len(xs) - 2)
        t = (sc - xs[idx]) / (xs[idx + 1] - xs[idx])
        # knots are returned exactly
        idx = np.where(t == 1.0, idx + 1, idx)
        t = np.where(t == 1.0, 0.0, t)
    nxt = np.minimum(idx + 1, len(xs) - 1)

    def interp(v):
        lo, hi = v[idx], v[nxt]
        tt = t.reshape((-1,) + (1,) * (v.ndim - 1))
        return np.where(tt == 0.0, lo, lo + tt * (hi - lo))

    D = d_i * interp(table.D)
    A = interp(table.A)
    phi = interp(table.phi)
    if scalar:
        return D[0], float(A[0]), float(phi[0]), bool(clogged[0])
    return D, A, phi, clogged


def write_table(table: CoefficientTable, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for i in range(len(table)):
            D = table.D[i]
            row = [table.sigmas[i], D[0, 0], D[0, 1], D[1, 0], D[1, 1],
                   table.A[i], table.phi[i], table.gamma_len[i]]
            w.writerow([repr(float(v)) for v in row])


def read_table(path, shape: ShapeSpec | None = None, epsilon=None, h=None) -> CoefficientTable:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != CSV_HEADER:
            raise ValidationError(f"unexpected table header {header}")
        data = np.array([[float(v) for v in row] for row in reader if row])
    if data.size == 0:
        raise ValidationError("empty coefficient table")
    D = data[:, 1:5].reshape(-1, 2, 2)
    return CoefficientTable(data[:, 0], D, data[:, 5], data[:, 6], data[:, 7],
                            shape=shape, epsilon=epsilon, h=h)
