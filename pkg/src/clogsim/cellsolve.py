"""P1 finite elements for the periodic cell problems and the effective tensor.

For k = 1, 2 the cell function w_k solves

    int grad w_k . grad xi = int_Gamma xi (e_k . nu) dgamma    for all periodic xi,
    int w_k = 0,

on the fluid part of the cell, where nu is the unit normal on the inclusion
boundary pointing out of the solid (into the fluid). Paired vertices on
opposite cell edges share one degree of freedom; the zero mean is imposed
with a scalar Lagrange multiplier.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .cellmesh import TriMesh
from .errors import SolverError

RESIDUAL_TOL = 1e-10


@dataclass(frozen=True)
class CellSolution:
    w: np.ndarray           # shape (2, n_vertices)
    residual_norm: float
    mean: tuple


@dataclass(frozen=True)
class EffectiveTensor:
    D: np.ndarray
    phi: float
    d: float
    c_D: float


def p1_gradients(vertices, triangles):
    """Barycentric gradients, shape (m, 3, 2), and triangle areas."""
    p = vertices[triangles]
    x, y = p[:, :, 0], p[:, :, 1]
    area2 = (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    gx = np.column_stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]]) / area2[:, None]
    gy = np.column_stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]]) / area2[:, None]
    return np.stack([gx, gy], axis=2), 0.5 * area2


def periodic_dofs(mesh: TriMesh):
    """Map vertices to degrees of freedom, merging periodic partners."""
    parent = np.arange(mesh.n_vertices)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in mesh.periodic_pairs:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    roots = np.array([find(i) for i in range(mesh.n_vertices)])
    _, dof = np.unique(roots, return_inverse=True)
    return dof, int(dof.max()) + 1


def cell_load(mesh: TriMesh):
    """Boundary load int_Gamma phi_i nu_k, shape (n_vertices, 2).

    Boundary edges run with the fluid on their left, so (dy, -dx) is the
    fluid's outward normal times the edge length and nu is its negative.
    """
    f = np.zeros((mesh.n_vertices, 2))
    inner = mesh.edges_with_tag("inner")
    if len(inner) == 0:
        return f
    d = mesh.vertices[inner[:, 1]] - mesh.vertices[inner[:, 0]]
    load = 0.5 * np.column_stack([-d[:, 1], d[:, 0]])
    for col in (0, 1):
        np.add.at(f[:, col], inner[:, 0], load[:, col])
        np.add.at(f[:, col], inner[:, 1], load[:, col])
    return f


def _assemble(mesh: TriMesh):
    grads, areas = p1_gradients(mesh.vertices, mesh.triangles)
    dof, ndof = periodic_dofs(mesh)
    ke = areas[:, None, None] * np.einsum("mid,mjd->mij", grads, grads)
    td = dof[mesh.triangles]
    rows = np.repeat(td, 3, axis=1).ravel()
    cols = np.tile(td, (1, 3)).ravel()
    K = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(ndof, ndof)).tocsr()
    c = np.bincount(td.ravel(), weights=np.repeat(areas / 3.0, 3), minlength=ndof)
    return K, c, dof, ndof, grads, areas


def _solve_all(mesh: TriMesh):
    K, c, dof, ndof, grads, areas = _assemble(mesh)
    f_v = cell_load(mesh)
    f = np.zeros((ndof, 2))
    for col in (0, 1):
        f[:, col] = np.bincount(dof, weights=f_v[:, col], minlength=ndof)
    if not np.any(f):
        return np.zeros((2, mesh.n_vertices)), 0.0
    A = sp.bmat([[K, sp.csr_matrix(c[:, None])], [sp.csr_matrix(c[None, :]), None]], format="csc")
    rhs = np.vstack([f, np.zeros((1, 2))])
    lu = splu(A)
    x = lu.solve(rhs)
    # one step of iterative refinement keeps the residual at round-off level
    x += lu.solve(rhs - A @ x)
    res = np.linalg.norm(A @ x - rhs) / np.linalg.norm(rhs)
    if not np.isfinite(res) or res > RESIDUAL_TOL:
        raise SolverError(f"cell problem residual {res:.3e} above {RESIDUAL_TOL}", residual=res)
    w = x[:ndof].T[:, dof]
    return w, float(res)


def solve_cell_problem(mesh: TriMesh, k: int):
    """Nodal cell function w_k for axis k in {1, 2}."""
    if k not in (1, 2):
        raise ValueError("axis index must be 1 or 2")
    w, _ = _solve_all(mesh)
    return w[k - 1]


def solve_cell(mesh: TriMesh) -> CellSolution:
    w, res = _solve_all(mesh)
    _, areas = p1_gradients(mesh.vertices, mesh.triangles)
    mean = tuple(float(np.sum(areas * w[k][mesh.triangles].mean(axis=1))) for k in (0, 1))
    return CellSolution(w, res, mean)


def effective_tensor(mesh: TriMesh, sol: CellSolution, d: float = 1.0,
                     phi_prefactor: bool = True) -> EffectiveTensor:
    """D_jk = d * phi * int (d_j w_k + delta_jk), phi = fluid area of the mesh.

    With ``phi_prefactor`` off the porosity factor is omitted (classical form).
    """
    grads, areas = p1_gradients(mesh.vertices, mesh.triangles)
    phi = float(areas.sum())
    D = np.empty((2, 2))
    for k in (0, 1):
        gw = np.einsum("mi,mid->md", sol.w[k][mesh.triangles], grads)
        for j in (0, 1):
            D[j, k] = np.sum(areas * (gw[:, j] + (j == k)))
    D *= d * (phi if phi_prefactor else 1.0)
    c_D = float(np.linalg.eigvalsh(0.5 * (D + D.T)).min())
    if not c_D > 0:
        raise SolverError(f"effective tensor is not positive definite (min eigenvalue {c_D})")
    return EffectiveTensor(D, phi, float(d), c_D)


def interpolate_p1(mesh: TriMesh, values, points, chunk=512):
    """Evaluate a nodal P1 field at arbitrary points inside the mesh."""
    pts = np.asarray(points, dtype=float)
    p = mesh.vertices[mesh.triangles]
    x0, y0 = p[:, 0, 0], p[:, 0, 1]
    x1, y1 = p[:, 1, 0] - x0, p[:, 1, 1] - y0
    x2, y2 = p[:, 2, 0] - x0, p[:, 2, 1] - y0
    det = x1 * y2 - x2 * y1
    out = np.full(len(pts), np.nan)
    vals = np.asarray(values)[mesh.triangles]
    for start in range(0, len(pts), chunk):
        q = pts[start:start + chunk]
        dx = q[:, 0:1] - x0
        dy = q[:, 1:2] - y0
        l1 = (dx * y2 - dy * x2) / det
        l2 = (x1 * dy - y1 * dx) / det
        l0 = 1 - l1 - l2
        tol = -1e-10
        hit = (l0 >= tol) & (l1 >= tol) & (l2 >= tol)
        t = np.argmax(hit, axis=1)
        ok = hit[np.arange(len(q)), t]
        r = np.arange(len(q))
        v = l0[r, t] * vals[t, 0] + l1[r, t] * vals[t, 1] + l2[r, t] * vals[t, 2]
        out[start:start + chunk] = np.where(ok, v, np.nan)
    return out
