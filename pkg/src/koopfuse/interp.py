"""Piecewise-linear interpolation of scattered 2D data.

The plane is split into Delaunay triangles (Qhull, via ``scipy.spatial``) and a
query takes the barycentric combination of the vertex values of the triangle
that contains it.  Queries outside the convex hull either snap to the nearest
vertex and are flagged, or raise :class:`~koopfuse.errors.OutsideHullError`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay, cKDTree

from .errors import OutsideHullError, ValidationError

FALLBACK_POLICIES = ("nearest", "error")


@dataclass
class Triangulation:
    vertices: np.ndarray
    triangles: np.ndarray
    adjacency: np.ndarray
    _delaunay: Delaunay = field(repr=False, default=None)

    def locate(self, query) -> np.ndarray:
        """Index of the containing triangle for each query, ``-1`` if outside."""
        return self._delaunay.find_simplex(np.atleast_2d(query))

    def barycentric(self, query, simplex) -> np.ndarray:
        """Barycentric coordinates of ``query`` in triangles ``simplex`` (``>= 0``)."""
        query = np.atleast_2d(query)
        tr = self._delaunay.transform[simplex]
        b = np.einsum("nij,nj->ni", tr[:, :2, :], query - tr[:, 2, :])
        return np.column_stack([b, 1.0 - b.sum(axis=1)])

    def longest_edges(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        e = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]], axis=1)
        return np.linalg.norm(e, axis=2).max(axis=1)

    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def merge_duplicates(points, values=None, tol: float = 1e-12):
    """Drop points closer than ``tol`` to a later point (last write wins).

    Returns the kept points, their values (if given) and the kept indices.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    drop = np.zeros(len(points), dtype=bool)
    pairs = cKDTree(points).query_pairs(tol, output_type="ndarray")
    if len(pairs):
        drop[np.minimum(pairs[:, 0], pairs[:, 1])] = True
    keep = np.flatnonzero(~drop)
    kept_values = None if values is None else np.asarray(values, dtype=float)[keep]
    return points[keep], kept_values, keep


def triangulate(points, tol: float = 1e-12) -> Triangulation:
    """Delaunay triangulation of a 2D point set after duplicate removal."""
    pts, _, _ = merge_duplicates(points, tol=tol)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValidationError(f"expected 2D points, got shape {pts.shape}")
    if pts.shape[0] < 3:
        raise ValidationError("need at least 3 distinct points to triangulate")
    centred = pts - pts.mean(axis=0)
    s = np.linalg.svd(centred, compute_uv=False)
    if s[-1] <= 1e-12 * s[0]:
        raise ValidationError("points are collinear; no triangle can be formed")
    tri = Delaunay(pts)
    return Triangulation(pts, tri.simplices.copy(), tri.neighbors.copy(), tri)


@dataclass
class LinearInterpolant:
    """Barycentric interpolant of vector-valued data on a triangulation.

    ``coord_scale`` divides query coordinates before location, matching the
    scaling applied to the vertices when the interpolant was built.  Triangles
    with ``usable`` false are treated as lying outside the data.
    """

    triangulation: Triangulation
    values: np.ndarray
    fallback_policy: str = "nearest"
    coord_scale: np.ndarray = field(default_factory=lambda: np.ones(2))
    usable: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.shape[0] != self.triangulation.vertices.shape[0]:
            raise ValidationError("one value row is required per vertex")
        if not np.all(np.isfinite(self.values)):
            raise ValidationError("interpolant values must be finite")
        if self.fallback_policy not in FALLBACK_POLICIES:
            raise ValidationError(f"fallback_policy must be one of {FALLBACK_POLICIES}")
        self.coord_scale = np.asarray(self.coord_scale, dtype=float)
        n_tri = self.triangulation.triangles.shape[0]
        if self.usable is None:
            self.usable = np.ones(n_tri, dtype=bool)
        self.usable = np.asarray(self.usable, dtype=bool)
        if self.usable.shape != (n_tri,):
            raise ValidationError("usable mask needs one entry per triangle")
        self._tree = None

    @property
    def points(self) -> np.ndarray:
        """Vertex coordinates in the caller's (unscaled) units."""
        return self.triangulation.vertices * self.coord_scale

    def __call__(self, query):
        return interpolate(self, query)


def build_interpolant(points, values, fallback_policy: str = "nearest", rescale: bool = False,
                      tol: float = 1e-12, max_edge_ratio: float | None = None) -> LinearInterpolant:
    """Triangulate ``points`` and attach ``values`` (one row per point).

    With ``rescale`` each coordinate is divided by its range first, so the
    triangulation does not depend on the relative units of the two axes.
    With ``max_edge_ratio`` set, triangles whose longest edge exceeds that
    multiple of the median longest edge are excluded.  These are the slivers
    that bridge gaps along the convex hull of data lying on curves.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    values = np.asarray(values, dtype=float)
    if values.shape[0] != points.shape[0]:
        raise ValidationError("points and values must have the same number of rows")
    scale = np.ones(2)
    if rescale:
        span = np.ptp(points, axis=0)
        scale = np.where(span > 0, span, 1.0)
    pts, vals, _ = merge_duplicates(points / scale, values, tol)
    tri = triangulate(pts, tol=0.0)
    usable = None
    if max_edge_ratio is not None:
        if not max_edge_ratio > 0:
            raise ValidationError("max_edge_ratio must be positive")
        edges = tri.longest_edges()
        usable = edges <= max_edge_ratio * np.median(edges)
    return LinearInterpolant(tri, vals, fallback_policy, scale, usable)


def interpolate(itp: LinearInterpolant, query):
    """Evaluate the interpolant.

    Returns ``(values, extrapolated)``.  For a single 2-vector query these are
    a 1D value vector and a bool; for an ``(n, 2)`` batch an ``(n, m)`` array
    and an ``(n,)`` mask.
    """
    q = np.asarray(query, dtype=float)
    single = q.ndim == 1
    q = np.atleast_2d(q) / itp.coord_scale
    tri = itp.triangulation
    simplex = tri.locate(q)
    outside = simplex < 0
    outside[~outside] = ~itp.usable[simplex[~outside]]
    out = np.empty((q.shape[0], itp.values.shape[1]))
    inside = ~outside
    if inside.any():
        bary = tri.barycentric(q[inside], simplex[inside])
        verts = tri.triangles[simplex[inside]]
        out[inside] = np.einsum("nk,nkm->nm", bary, itp.values[verts])
    if outside.any():
        if itp.fallback_policy == "error":
            i = int(np.flatnonzero(outside)[0])
            raise OutsideHullError(f"query {np.asarray(query).reshape(-1, 2)[i].tolist()} "
                                   "lies outside the triangulated region")
        if itp._tree is None:
            itp._tree = cKDTree(tri.vertices)
        _, nearest = itp._tree.query(q[outside])
        out[outside] = itp.values[nearest]
    if single:
        return out[0], bool(outside[0])
    return out, outside


def pad_angle_periodic(points, values):
    """Copy each ``(magnitude, angle)`` point to ``angle - 2 pi`` and ``angle + 2 pi``.

    The padded set triangulates across the ``+-pi`` seam, so queries with
    principal-value angles always land in the interior band.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    values = np.asarray(values, dtype=float)
    ang = points[:, 1]
    if np.any(ang <= -np.pi - 1e-12) or np.any(ang > np.pi + 1e-12):
        raise ValidationError("angles must lie in (-pi, pi]")
    shift = np.array([0.0, 2.0 * np.pi])
    new_points = np.concatenate([points, points - shift, points + shift])
    new_values = np.concatenate([values, values, values])
    return new_points, new_values
