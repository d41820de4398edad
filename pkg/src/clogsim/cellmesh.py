"""Triangulation of the perforated unit cell and of polygonal macro domains.

The mesher builds a conforming Delaunay triangulation: boundary loops are
resampled to spacing <= h, a triangular lattice fills the interior, and
Ruppert-style refinement (midpoint splitting of missing or encroached
segments, circumcentre insertion for bad triangles) runs until every
constraint segment is a mesh edge and every triangle meets the angle bound.
Qhull (via scipy.spatial.Delaunay) is the Delaunay kernel; everything else,
including mirrored splitting of the cell edges for periodicity, lives here.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import logging
import math

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .errors import MeshingError
from .microgeometry import cell_clearance, points_in_polygon, signed_area

log = logging.getLogger(__name__)

MIN_ANGLE = 20.0
SIZE_FACTOR = 0.75      # refine triangles with circumradius above SIZE_FACTOR * h
MAX_REFINE_ITER = 400
DROP_AREA_FACTOR = 10.0


@dataclass(frozen=True)
class TriMesh:
    """Triangle mesh with CCW triangles and boundary edges oriented so the
    domain lies to their left."""

    vertices: np.ndarray = field(repr=False)
    triangles: np.ndarray = field(repr=False)
    boundary_edges: np.ndarray = field(repr=False)
    boundary_tags: tuple = field(repr=False)
    periodic_pairs: np.ndarray = field(repr=False)
    h: float
    dropped_holes: int = 0
    quality_ok: bool = True

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def areas(self):
        p = self.vertices[self.triangles]
        return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                      - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))

    def min_angles(self):
        """Smallest interior angle of each triangle, in degrees."""
        p = self.vertices[self.triangles]
        return np.degrees(_triangle_angles(p).min(axis=1))

    def edges(self):
        """Unique undirected edges as sorted index pairs."""
        t = self.triangles
        e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def edges_with_tag(self, tag):
        mask = np.array([t == tag for t in self.boundary_tags], dtype=bool)
        return self.boundary_edges[mask]


CellMesh = TriMesh


def _triangle_angles(p):
    a = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
    b = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
    c = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        A = np.arccos(np.clip((b * b + c * c - a * a) / (2 * b * c), -1, 1))
        B = np.arccos(np.clip((a * a + c * c - b * b) / (2 * a * c), -1, 1))
    return np.column_stack([A, B, np.pi - A - B])


def _circumcenters(p):
    ax, ay = p[:, 0, 0], p[:, 0, 1]
    bx, by = p[:, 1, 0] - ax, p[:, 1, 1] - ay
    cx, cy = p[:, 2, 0] - ax, p[:, 2, 1] - ay
    d = 2.0 * (bx * cy - by * cx)
    b2, c2 = bx * bx + by * by, cx * cx + cy * cy
    ux = (cy * b2 - by * c2) / d
    uy = (bx * c2 - cx * b2) / d
    return np.column_stack([ax + ux, ay + uy]), np.hypot(ux, uy)


def resample_closed(points, h, min_points=8, corner_deg=30.0):
    """Resample a closed polyline at uniform arc length with spacing <= h.

    Vertices where the polyline turns by more than ``corner_deg`` are kept
    and the pieces between them are resampled separately.
    """
    p = np.asarray(points, dtype=float)
    d_in = p - np.roll(p, 1, axis=0)
    d_out = np.roll(p, -1, axis=0) - p
    turn = np.degrees(np.abs(np.arctan2(d_in[:, 0] * d_out[:, 1] - d_in[:, 1] * d_out[:, 0],
                                        np.sum(d_in * d_out, axis=1))))
    corners = np.flatnonzero(turn > corner_deg)
    if len(corners) == 0:
        closed = np.vstack([p, p[:1]])
        seg = np.hypot(*np.diff(closed, axis=0).T)
        arc = np.concatenate([[0.0], np.cumsum(seg)])
        n = max(int(math.ceil(arc[-1] / h)), min_points)
        t = arc[-1] * np.arange(n) / n
        return np.column_stack([np.interp(t, arc, closed[:, 0]), np.interp(t, arc, closed[:, 1])])
    out = []
    rolled = np.roll(p, -corners[0], axis=0)
    cidx = np.append((corners - corners[0]) % len(p), len(p))
    closed = np.vstack([rolled, rolled[:1]])
    for a, b in zip(cidx[:-1], cidx[1:]):
        piece = closed[a:b + 1]
        seg = np.hypot(*np.diff(piece, axis=0).T)
        arc = np.concatenate([[0.0], np.cumsum(seg)])
        n = max(int(math.ceil(arc[-1] / h)), 1)
        t = arc[-1] * np.arange(n) / n
        out.append(np.column_stack([np.interp(t, arc, piece[:, 0]), np.interp(t, arc, piece[:, 1])]))
    return np.vstack(out)


class _Boundary:
    """Constraint loops of the domain, refined in place by midpoint splits.

    With ``periodic`` set the outer boundary is the unit square stored as the
    shared break-point lists ``xs`` (bottom/top) and ``ys`` (left/right), so a
    split on one edge is mirrored onto the opposite edge.
    """

    def __init__(self, h, holes, outer=None, periodic=False):
        self.periodic = periodic
        self.holes = [np.asarray(hh, dtype=float) for hh in holes]
        self.outer = None if outer is None else np.asarray(outer, dtype=float)
        if periodic:
            n = max(int(math.ceil(1.0 / h)), 2)
            self.xs = np.linspace(0.0, 1.0, n + 1)
            self.ys = self.xs.copy()

    def _square_loop(self):
        xs, ys = self.xs, self.ys
        nx, ny = len(xs) - 1, len(ys) - 1
        pts = np.vstack([
            np.column_stack([xs[:-1], np.zeros(nx)]),
            np.column_stack([np.ones(ny), ys[:-1]]),
            np.column_stack([xs[::-1][:-1], np.ones(nx)]),
            np.column_stack([np.zeros(ny), ys[::-1][:-1]]),
        ])
        tags = ["outer-bottom"] * nx + ["outer-right"] * ny + ["outer-top"] * nx + ["outer-left"] * ny
        return pts, tags

    def assemble(self):
        """Return (points, segments, tags, handles); handle = (loop id, segment index)."""
        loops, tags = [], []
        if self.periodic:
            sq, sq_tags = self._square_loop()
            loops.append(sq)
            tags.append(sq_tags)
        elif self.outer is not None:
            loops.append(self.outer)
            tags.append(["outer"] * len(self.outer))
        for hole in self.holes:
            loops.append(hole)
            tags.append(["inner"] * len(hole))
        pts, segs, seg_tags, handles = [], [], [], []
        offset = 0
        first_hole = 1 if (self.periodic or self.outer is not None) else 0
        for li, (loop, lt) in enumerate(zip(loops, tags)):
            n = len(loop)
            idx = offset + np.arange(n)
            segs.append(np.column_stack([idx, np.roll(idx, -1)]))
            seg_tags.extend(lt)
            lid = li - first_hole if li >= first_hole else -1
            handles.extend((lid, k) for k in range(n))
            pts.append(loop)
            offset += n
        return np.vstack(pts), np.vstack(segs), seg_tags, handles

    def split(self, handles, points, segs):
        by_loop = {}
        for (lid, k), (i, j) in zip(handles, segs):
            mid = 0.5 * (points[i] + points[j])
            by_loop.setdefault(lid, []).append((k, mid))
        for lid, items in by_loop.items():
            if lid == -1:
                if self.periodic:
                    newx = [m[0] for _, m in items if m[1] == 0.0 or m[1] == 1.0]
                    newy = [m[1] for _, m in items if m[0] == 0.0 or m[0] == 1.0]
                    self.xs = np.unique(np.concatenate([self.xs, newx]))
                    self.ys = np.unique(np.concatenate([self.ys, newy]))
                else:
                    self.outer = _insert_midpoints(self.outer, items)
            else:
                self.holes[lid] = _insert_midpoints(self.holes[lid], items)

    def inside(self, pts):
        if self.periodic:
            mask = np.all((pts > 0.0) & (pts < 1.0), axis=1)
        else:
            mask = points_in_polygon(pts, self.outer)
        for hole in self.holes:
            mask &= ~points_in_polygon(pts, hole)
        return mask


def _insert_midpoints(loop, items):
    items = sorted({k: m for k, m in items}.items())
    ks = np.array([k for k, _ in items])
    mids = np.array([m for _, m in items])
    return np.insert(loop, ks + 1, mids, axis=0)


def _lattice(h, lo, hi):
    dy = h * math.sqrt(3) / 2
    ys = np.arange(lo[1], hi[1] + dy, dy)
    rows = []
    for r, y in enumerate(ys):
        xs = np.arange(lo[0] + (h / 2 if r % 2 else 0.0), hi[0] + h, h)
        rows.append(np.column_stack([xs, np.full_like(xs, y)]))
    return np.vstack(rows)


def _densify(points, segs, step):
    a, b = points[segs[:, 0]], points[segs[:, 1]]
    length = np.linalg.norm(b - a, axis=1)
    k = np.maximum(np.ceil(length / step).astype(int), 1)
    out = [points]
    for m in range(1, int(k.max())):
        sel = k > m
        t = (m / k[sel])[:, None]
        out.append(a[sel] + t * (b[sel] - a[sel]))
    return np.vstack(out)


def _edge_keys(e, n):
    e = np.sort(e, axis=1)
    return e[:, 0].astype(np.int64) * n + e[:, 1]


def _refine(boundary: _Boundary, h: float, min_angle=MIN_ANGLE, max_iter=MAX_REFINE_ITER):
    bpts, segs, _, _ = boundary.assemble()
    lo, hi = bpts.min(axis=0), bpts.max(axis=0)
    lat = _lattice(h, lo, hi)
    lat = lat[boundary.inside(lat)]
    dist, _ = cKDTree(_densify(bpts, segs, h / 4)).query(lat)
    interior = lat[dist > 0.55 * h]
    min_len = h * 1e-3
    quality_ok = False
    for _ in range(max_iter):
        bpts, segs, tags, handles = boundary.assemble()
        pts = np.vstack([bpts, interior])
        n = len(pts)
        dela = Delaunay(pts)
        if len(dela.coplanar):
            raise MeshingError("Delaunay kernel dropped coincident points")
        tri = dela.simplices
        tkeys = np.concatenate([_edge_keys(tri[:, [a, b]], n) for a, b in ((0, 1), (1, 2), (2, 0))])
        skeys = _edge_keys(segs, n)
        seglen = np.linalg.norm(bpts[segs[:, 1]] - bpts[segs[:, 0]], axis=1)
        missing = ~np.isin(skeys, tkeys)
        if missing.any():
            sel = np.flatnonzero(missing)
            if np.any(seglen[sel] < min_len):
                raise MeshingError("constraint segment cannot be recovered")
            boundary.split([handles[i] for i in sel], bpts, segs[sel])
            continue

        tp = pts[tri]
        keep = boundary.inside(tp.mean(axis=1))
        tri, tp = tri[keep], tp[keep]

        # segment encroached by the apex of its adjacent domain triangle
        apex_keys, apex = [], []
        for a, b, c in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
            apex_keys.append(_edge_keys(tri[:, [a, b]], n))
            apex.append(tri[:, c])
        apex_keys = np.concatenate(apex_keys)
        apex = np.concatenate(apex)
        order = np.argsort(apex_keys)
        pos = np.searchsorted(apex_keys[order], skeys)
        pos = np.minimum(pos, len(order) - 1)
        found = apex_keys[order][pos] == skeys
        c = pts[apex[order][pos]]
        pa, pb = bpts[segs[:, 0]], bpts[segs[:, 1]]
        dot = np.sum((pa - c) * (pb - c), axis=1)
        encroached = found & (dot < -1e-14 * seglen ** 2) & (seglen > 2 * min_len)
        if encroached.any():
            sel = np.flatnonzero(encroached)
            boundary.split([handles[i] for i in sel], bpts, segs[sel])
            continue

        ang = np.degrees(_triangle_angles(tp))
        cc, R = _circumcenters(tp)
        edge_len = np.linalg.norm(tp - np.roll(tp, -1, axis=1), axis=2)
        short = edge_len.min(axis=1)
        bad_angle = (ang.min(axis=1) < min_angle) & (short > min_len)
        bad = bad_angle | (R > SIZE_FACTOR * h)
        if not bad.any():
            quality_ok = True
            break
        cand = np.flatnonzero(bad)
        cand = cand[np.argsort(ang.min(axis=1)[cand], kind="stable")]
        cpts, crad = cc[cand], R[cand]
        inside = boundary.inside(cpts)
        mids = 0.5 * (pa + pb)
        half = 0.5 * seglen
        hits = cKDTree(mids).query_ball_point(cpts, r=half.max() * (1 + 1e-12))
        ctree = cKDTree(cpts)
        taken = np.zeros(len(cpts), dtype=bool)
        to_split = set()
        accepted = []
        for q in range(len(cpts)):
            p = cpts[q]
            enc = [s for s in hits[q] if np.sum((p - mids[s]) ** 2) < half[s] ** 2]
            if enc:
                to_split.update(s for s in enc if seglen[s] > 2 * min_len)
                continue
            if not inside[q]:
                continue
            if taken[ctree.query_ball_point(p, 0.5 * crad[q])].any():
                continue
            taken[q] = True
            accepted.append(p)
        if to_split:
            sel = sorted(to_split)
            boundary.split([handles[i] for i in sel], bpts, segs[sel])
        if accepted:
            interior = np.vstack([interior, np.asarray(accepted)])
        if not to_split and not accepted:
            break
    return pts, tri, segs, tags, quality_ok


def _finalize(pts, tri, segs, tags, h, periodic, dropped, quality_ok):
    used = np.unique(tri)
    remap = -np.ones(len(pts), dtype=np.int64)
    remap[used] = np.arange(len(used))
    pts = pts[used]
    tri = remap[tri]
    segs = remap[segs]
    p = pts[tri]
    area2 = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - \
        (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
    flip = area2 < 0
    tri[flip] = tri[flip][:, [0, 2, 1]]
    # orient boundary edges along the CCW triangle that owns them
    n = len(pts)
    directed = np.vstack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    dkeys = directed[:, 0].astype(np.int64) * n + directed[:, 1]
    fwd = segs[:, 0].astype(np.int64) * n + segs[:, 1]
    segs = np.where(np.isin(fwd, dkeys)[:, None], segs, segs[:, ::-1])
    pairs = np.empty((0, 2), dtype=np.int64)
    if periodic:
        pairs = _periodic_pairs(pts)
    return TriMesh(pts, tri, segs, tuple(tags), pairs, h, dropped, quality_ok)


def _periodic_pairs(pts):
    out = []
    for axis in (0, 1):
        other = 1 - axis
        lo = np.flatnonzero(pts[:, axis] == 0.0)
        hi = np.flatnonzero(pts[:, axis] == 1.0)
        hi_by = {pts[j, other]: j for j in hi}
        if len(lo) != len(hi):
            raise MeshingError("periodic boundary nodes are not matched")
        for i in lo:
            j = hi_by.get(pts[i, other])
            if j is None:
                raise MeshingError("periodic boundary nodes are not matched")
            out.append((i, j))
    return np.array(out, dtype=np.int64)


def triangulate_perforated_cell(holes, h: float) -> TriMesh:
    """Mesh Y minus the given inclusions with mirrored nodes on opposite cell edges.

    ``holes`` are OffsetCurve objects (or CCW point arrays). Inclusions with area
    below DROP_AREA_FACTOR * h^2 are dropped and counted in ``dropped_holes``.
    """
    if not h > 0:
        raise MeshingError("mesh size must be positive")
    loops, dropped = [], 0
    for hole in holes:
        pts = np.asarray(getattr(hole, "samples", hole), dtype=float)
        if cell_clearance(pts) <= 0:
            raise MeshingError("inclusion touches the cell boundary (clogged cell)")
        if signed_area(pts) < 0:
            pts = pts[::-1]
        if signed_area(pts) < DROP_AREA_FACTOR * h * h:
            dropped += 1
            log.warning("dropping degenerate inclusion of area %.3g", signed_area(pts))
            continue
        loops.append(resample_closed(pts, h, min_points=8, corner_deg=180.0))
    boundary = _Boundary(h, loops, periodic=True)
    pts, tri, segs, tags, ok = _refine(boundary, h)
    return _finalize(pts, tri, segs, tags, h, True, dropped, ok)


def triangulate_polygon(outer, h: float, holes=()) -> TriMesh:
    """Mesh a polygonal domain (outer loop, optional holes) with target size h."""
    if not h > 0:
        raise MeshingError("mesh size must be positive")
    outer = np.asarray(outer, dtype=float)
    if signed_area(outer) < 0:
        outer = outer[::-1]
    outer = resample_closed(outer, h, min_points=3)
    loops = []
    for hole in holes:
        hp = np.asarray(hole, dtype=float)
        if signed_area(hp) < 0:
            hp = hp[::-1]
        loops.append(resample_closed(hp, h))
    boundary = _Boundary(h, loops, outer=outer)
    pts, tri, segs, tags, ok = _refine(boundary, h)
    return _finalize(pts, tri, segs, tags, h, False, 0, ok)


def write_mesh(mesh: TriMesh, path):
    """Plain-text export: vertices, triangles and periodic pairs sections."""
    lines = [f"vertices {mesh.n_vertices}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines.append(f"triangles {mesh.n_triangles}")
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    lines.append(f"pairs {len(mesh.periodic_pairs)}")
    lines += [f"{i} {j}" for i, j in mesh.periodic_pairs.tolist()]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_mesh(path):
    """Inverse of write_mesh; returns (vertices, triangles, pairs)."""
    with open(path) as fh:
        tokens = [ln.split() for ln in fh if ln.strip()]
    out, i = {}, 0
    for name, cast in (("vertices", float), ("triangles", int), ("pairs", int)):
        head, count = tokens[i]
        if head != name:
            raise ValueError(f"expected section {name!r}, got {head!r}")
        count = int(count)
        rows = [[cast(v) for v in row] for row in tokens[i + 1:i + 1 + count]]
        width = {"vertices": 2, "triangles": 3, "pairs": 2}[name]
        out[name] = np.array(rows, dtype=cast).reshape(count, width)
        i += 1 + count
    return out["vertices"], out["triangles"], out["pairs"]
