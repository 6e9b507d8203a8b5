"""Dictionaries of observables spanning the EDMD trial space.

:class:`MlsDictionary` holds moving-least-squares shape functions with a
linear polynomial basis and compactly supported cubic-spline weights on
tree-placed nodes.  :class:`RbfDictionary` is a simpler Gaussian alternative
with an explicit constant observable, and :class:`LinearDictionary` holds the
coordinate functions alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .errors import CoverageError, ValidationError


@dataclass
class NodeSet:
    """Node centres and per-node support radii."""

    centers: np.ndarray
    support_radius: np.ndarray

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        self.support_radius = np.asarray(self.support_radius, dtype=float).reshape(-1)
        if self.support_radius.shape[0] != self.centers.shape[0]:
            raise ValidationError("one support radius is required per centre")
        if np.any(~(self.support_radius > 0)):
            raise ValidationError("support radii must be positive")

    def __len__(self):
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def covers(self, points) -> np.ndarray:
        """Boolean mask: point lies strictly inside at least one support."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        k = min(len(self), 64)
        dist, idx = cKDTree(self.centers).query(points, k=k)
        dist = dist.reshape(len(points), k)
        idx = idx.reshape(len(points), k)
        ok = np.any(dist < self.support_radius[idx], axis=1)
        for i in np.flatnonzero(~ok):
            d = np.linalg.norm(self.centers - points[i], axis=1)
            ok[i] = np.any(d < self.support_radius)
        return ok


def build_nodes_quadtree(points, max_per_cell: int, cover_factor: float = 2.5,
                         max_depth: int = 30) -> NodeSet:
    """Place nodes at the centroids of the leaves of a 2^d-tree.

    The bounding box of ``points`` is bisected along every axis recursively
    until each cell holds at most ``max_per_cell`` points (a quad-tree in 2D,
    an oct-tree in 3D).  Every non-empty leaf contributes one node at the
    centroid of its points, with support radius ``cover_factor`` times the leaf
    diagonal.  Children are visited in a fixed order, so the result depends only
    on the input.
    """
    if max_per_cell < 1:
        raise ValidationError(f"max_per_cell must be >= 1, got {max_per_cell}")
    if not cover_factor > 1.0:
        raise ValidationError("cover_factor must exceed 1 so every point is covered")
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[0] < 1:
        raise ValidationError("need at least one point")
    dim = points.shape[1]

    lo = points.min(axis=0)
    hi = points.max(axis=0)
    extent = hi - lo
    pad = 1e-9 * max(float(extent.max()), 1.0)
    lo = lo - pad
    hi = hi + np.where(extent > 0, pad, max(float(extent.max()), 1.0) * 1e-6)

    centers, radii = [], []
    shifts = (np.arange(2 ** dim)[:, None] >> np.arange(dim)[None, :]) & 1
    stack = [(np.arange(points.shape[0]), lo, hi, 0)]
    while stack:
        idx, clo, chi, depth = stack.pop()
        if idx.size == 0:
            continue
        if idx.size <= max_per_cell or depth >= max_depth:
            centers.append(points[idx].mean(axis=0))
            radii.append(cover_factor * float(np.linalg.norm(chi - clo)))
            continue
        mid = 0.5 * (clo + chi)
        code = ((points[idx] >= mid) * (1 << np.arange(dim))).sum(axis=1)
        # push in reverse so children are processed in code order
        for c in range(2 ** dim - 1, -1, -1):
            sel = idx[code == c]
            if sel.size:
                s = shifts[c].astype(bool)
                stack.append((sel, np.where(s, mid, clo), np.where(s, chi, mid), depth + 1))

    centers = np.array(centers)
    radii = np.array(radii)
    _, first = np.unique(centers, axis=0, return_index=True)
    keep = np.sort(first)
    return NodeSet(centers[keep], radii[keep])


def cubic_spline_weight(r):
    """Cubic B-spline kernel on normalised distance ``r``.

    ``2/3 - 4r^2 + 4r^3`` for ``r <= 1/2``, ``4/3 - 4r + 4r^2 - 4r^3/3`` for
    ``1/2 < r <= 1`` and zero beyond.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValidationError("normalised distance must be non-negative")
    out = np.zeros_like(r)
    inner = r <= 0.5
    outer = (r > 0.5) & (r <= 1.0)
    ri = r[inner]
    ro = r[outer]
    out[inner] = 2.0 / 3.0 - 4.0 * ri ** 2 + 4.0 * ri ** 3
    # factored form of the outer piece: exactly zero at r = 1, never negative
    out[outer] = (4.0 / 3.0) * (1.0 - ro) ** 3
    return out if out.ndim else float(out)


class MlsDictionary:
    """Moving-least-squares shape functions with a linear basis.

    At an evaluation point ``x`` the shape function of node ``k`` is
    ``psi_k(x) = w_k(x) * (a(x) + b(x) . (c_k - x))`` where ``(a, b)`` solve the
    weighted moment system.  The constant coefficient is eliminated first,
    leaving the weighted covariance of the active node offsets; that matrix is
    pseudo-inverted with relative cutoff ``rcond``.  The result equals the usual
    MLS shape functions whenever the moment matrix is regular, and it keeps the
    partition of unity exactly when it is not (a lone active node gets
    ``psi = 1``).
    """

    kind = "mls"

    def __init__(self, nodes: NodeSet, poly_order: int = 1, rcond: float = 1e-12,
                 chunk_size: int = 256):
        if poly_order != 1:
            raise ValidationError("only linear MLS (poly_order=1) is implemented")
        self.nodes = nodes
        self.poly_order = poly_order
        self.rcond = rcond
        self.chunk_size = chunk_size

    @property
    def size(self) -> int:
        return len(self.nodes)

    @property
    def dim(self) -> int:
        return self.nodes.dim

    def _neighbours(self, points):
        tree = cKDTree(points)
        centers, radii = self.nodes.centers, self.nodes.support_radius
        pt_parts, nd_parts = [], []
        for start in range(0, len(centers), self.chunk_size):
            stop = min(start + self.chunk_size, len(centers))
            lists = tree.query_ball_point(centers[start:stop], r=radii[start:stop],
                                          return_sorted=False)
            counts = np.fromiter((len(lst) for lst in lists), dtype=np.int64, count=len(lists))
            if counts.sum() == 0:
                continue
            pt_parts.append(np.fromiter((i for lst in lists for i in lst), dtype=np.int64,
                                        count=int(counts.sum())))
            nd_parts.append(np.repeat(np.arange(start, stop), counts))
        if not pt_parts:
            return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
        pt = np.concatenate(pt_parts)
        nd = np.concatenate(nd_parts)
        order = np.lexsort((nd, pt))
        return pt[order], nd[order]

    def covers(self, points) -> np.ndarray:
        """Mask of points where :meth:`evaluate` is defined."""
        return self.nodes.covers(points)

    def evaluate(self, points) -> sp.csr_matrix:
        """Shape-function matrix of shape ``(n_points, size)`` (sparse CSR)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != self.dim:
            raise ValidationError(f"points have dimension {points.shape[1]}, expected {self.dim}")
        n_pts, dim = points.shape
        pt, nd = self._neighbours(points)
        offset = self.nodes.centers[nd] - points[pt]
        r = np.linalg.norm(offset, axis=1) / self.nodes.support_radius[nd]
        active = r < 1.0
        pt, nd, offset, r = pt[active], nd[active], offset[active], r[active]
        w = cubic_spline_weight(r)

        wsum = np.bincount(pt, weights=w, minlength=n_pts)
        missing = np.flatnonzero(~(wsum > 0))
        if missing.size:
            i = int(missing[0])
            raise CoverageError(
                f"point {i} at {points[i].tolist()} is outside every node support "
                f"({missing.size} uncovered points)", index=i)

        first = np.empty((n_pts, dim))
        second = np.empty((n_pts, dim, dim))
        for a in range(dim):
            first[:, a] = np.bincount(pt, weights=w * offset[:, a], minlength=n_pts)
            for b in range(a, dim):
                s = np.bincount(pt, weights=w * offset[:, a] * offset[:, b], minlength=n_pts)
                second[:, a, b] = s
                second[:, b, a] = s
        qbar = first / wsum[:, None]
        cov = second / wsum[:, None, None] - qbar[:, :, None] * qbar[:, None, :]

        # cutoff relative to the mean squared offset, so round-off left over
        # from the centring cancellation never counts as rank
        spread = np.trace(second, axis1=1, axis2=2) / wsum
        evals, evecs = np.linalg.eigh(cov)
        keep = evals > self.rcond * spread[:, None]
        inv = np.divide(1.0, evals, out=np.zeros_like(evals), where=keep)
        proj = np.einsum("pij,pj->pi", evecs.transpose(0, 2, 1), qbar)
        b = -np.einsum("pij,pj->pi", evecs, inv * proj) / wsum[:, None]
        a = 1.0 / wsum - np.einsum("pi,pi->p", b, qbar)
        vals = w * (a[pt] + np.einsum("ni,ni->n", b[pt], offset))
        return sp.csr_matrix((vals, (pt, nd)), shape=(n_pts, self.size))

    def __call__(self, x) -> np.ndarray:
        """Dense ``psi(x)`` for a single point."""
        return self.evaluate(np.asarray(x, dtype=float).reshape(1, -1)).toarray()[0]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "poly_order": self.poly_order,
            "rcond": self.rcond,
            "centers": self.nodes.centers.tolist(),
            "support_radius": self.nodes.support_radius.tolist(),
        }

    @classmethod
    def from_dict(cls, d) -> "MlsDictionary":
        nodes = NodeSet(np.array(d["centers"], dtype=float), np.array(d["support_radius"], dtype=float))
        return cls(nodes, poly_order=int(d.get("poly_order", 1)), rcond=float(d.get("rcond", 1e-12)))


def mls_evaluate(x, dictionary: MlsDictionary) -> np.ndarray:
    return dictionary(x)


class RbfDictionary:
    """Gaussian radial basis functions plus a constant observable at index 0."""

    kind = "rbf"

    def __init__(self, centers, shape_parameter: float):
        if not shape_parameter > 0:
            raise ValidationError("shape_parameter must be positive")
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
        self.shape_parameter = float(shape_parameter)

    @property
    def size(self) -> int:
        return self.centers.shape[0] + 1

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def evaluate(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != self.dim:
            raise ValidationError(f"points have dimension {points.shape[1]}, expected {self.dim}")
        d2 = ((points[:, None, :] - self.centers[None, :, :]) ** 2).sum(axis=-1)
        out = np.empty((points.shape[0], self.size))
        out[:, 0] = 1.0
        out[:, 1:] = np.exp(-(self.shape_parameter ** 2) * d2)
        return out

    def __call__(self, x) -> np.ndarray:
        return self.evaluate(np.asarray(x, dtype=float).reshape(1, -1))[0]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "centers": self.centers.tolist(),
                "shape_parameter": self.shape_parameter}

    @classmethod
    def from_dict(cls, d) -> "RbfDictionary":
        return cls(np.array(d["centers"], dtype=float), float(d["shape_parameter"]))


def rbf_evaluate(x, dictionary: RbfDictionary) -> np.ndarray:
    return dictionary(x)


class LinearDictionary:
    """The coordinate functions ``psi(x) = x``, optionally preceded by ``1``.

    On data from ``x_{n+1} = A x_n`` this dictionary makes EDMD exact: the
    Koopman matrix is ``A^T`` and its eigenvalues are those of ``A``.
    """

    kind = "linear"

    def __init__(self, dim: int, include_constant: bool = False):
        if dim < 1:
            raise ValidationError("dim must be >= 1")
        self._dim = int(dim)
        self.include_constant = bool(include_constant)

    @property
    def size(self) -> int:
        return self._dim + int(self.include_constant)

    @property
    def dim(self) -> int:
        return self._dim

    def evaluate(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != self._dim:
            raise ValidationError(f"points have dimension {points.shape[1]}, expected {self._dim}")
        if self.include_constant:
            return np.column_stack([np.ones(points.shape[0]), points])
        return points.copy()

    def __call__(self, x) -> np.ndarray:
        return self.evaluate(np.asarray(x, dtype=float).reshape(1, -1))[0]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "dim": self._dim, "include_constant": self.include_constant}

    @classmethod
    def from_dict(cls, d) -> "LinearDictionary":
        return cls(int(d["dim"]), bool(d.get("include_constant", False)))


def dictionary_from_dict(d):
    kinds = {"mls": MlsDictionary, "rbf": RbfDictionary, "linear": LinearDictionary}
    try:
        return kinds[d["kind"]].from_dict(d)
    except KeyError as exc:
        raise ValidationError(f"unknown dictionary description: {exc}") from None


def as_dense(mat) -> np.ndarray:
    return mat.toarray() if sp.issparse(mat) else np.asarray(mat)
