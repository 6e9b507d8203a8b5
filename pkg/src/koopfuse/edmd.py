"""Extended dynamic mode decomposition.

Given snapshot pairs ``(x_m, y_m)`` and a dictionary ``psi``, the Koopman
operator is approximated on ``span(psi)`` by ``K = pinv(G) @ A`` with::

    G = sum_m psi(x_m) psi(x_m)^T
    A = sum_m psi(x_m) psi(y_m)^T

An eigenpair ``(mu_k, xi_k)`` of ``K`` gives the approximate eigenfunction
``phi_k(x) = psi(x)^T xi_k`` with continuous-time eigenvalue
``lambda_k = log(mu_k) / dt``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .errors import CoverageError, NumericalError, ValidationError


@dataclass
class GramPair:
    """Accumulated ``G`` and ``A`` together with the number of pairs summed."""

    G: np.ndarray
    A: np.ndarray
    m_count: int

    def __add__(self, other: "GramPair") -> "GramPair":
        if self.G.shape != other.G.shape:
            raise ValidationError("cannot combine Gram pairs of different dictionary sizes")
        return GramPair(self.G + other.G, self.A + other.A, self.m_count + other.m_count)


def _eval(dictionary, points, offset):
    try:
        return dictionary.evaluate(points)
    except CoverageError as exc:
        index = None if exc.index is None else exc.index + offset
        raise CoverageError(f"snapshot {index}: {exc}", index=index) from None


def accumulate(dataset, dictionary, chunk_size: int | None = None) -> GramPair:
    """Sum ``G`` and ``A`` over all pairs of ``dataset``.

    Pairs are processed in snapshot order.  With ``chunk_size`` set, partial
    sums over consecutive blocks are formed and added in block order; the
    partial sums are independent and may be computed elsewhere and combined
    with ``+``.
    """
    x, y = dataset.x, dataset.y
    m = x.shape[0]
    if m == 0:
        raise ValidationError("dataset is empty")
    if chunk_size is None or chunk_size >= m:
        blocks = [(0, m)]
    else:
        blocks = [(s, min(s + chunk_size, m)) for s in range(0, m, chunk_size)]
    total = None
    for start, stop in blocks:
        px = _eval(dictionary, x[start:stop], start)
        py = _eval(dictionary, y[start:stop], start)
        if sp.issparse(px):
            g = (px.T @ px).toarray()
            a = (px.T @ py).toarray()
        else:
            g = px.T @ px
            a = px.T @ py
        part = GramPair(np.asarray(g), np.asarray(a), stop - start)
        total = part if total is None else total + part
    return total


def koopman_matrix(gp: GramPair, svd_tol: float = 1e-10) -> tuple[np.ndarray, int]:
    """``K = pinv(G) @ A`` with spectral truncation of ``G``.

    ``G`` is symmetric positive semidefinite, so its eigendecomposition doubles
    as its SVD.  Eigenvalues below ``svd_tol * max`` are discarded.

    Returns
    -------
    K : ndarray
        The ``(K, K)`` Koopman matrix.
    rank : int
        Number of retained directions of ``G``.
    """
    g = 0.5 * (gp.G + gp.G.T)
    evals, evecs = np.linalg.eigh(g)
    top = evals[-1] if evals.size else 0.0
    if not top > 0 or not np.isfinite(top):
        raise NumericalError("G is numerically zero; no snapshot excites the dictionary")
    keep = evals > svd_tol * top
    u = evecs[:, keep]
    k = u @ ((u.T @ gp.A) / evals[keep][:, None])
    return k, int(keep.sum())


def continuous_eigenvalue(mu, dt: float):
    """Principal-branch ``log(mu) / dt``; ``Im`` lies in ``(-pi/dt, pi/dt]``."""
    mu_arr = np.asarray(mu, dtype=complex)
    if np.any(mu_arr == 0):
        raise ValidationError("continuous eigenvalue undefined for mu = 0")
    if not dt > 0:
        raise ValidationError("dt must be positive")
    # numpy's log puts -1 + (-0j) on the lower branch edge
    mu_arr = np.where((mu_arr.imag == 0) & (mu_arr.real < 0), mu_arr.real + 0j, mu_arr)
    lam = np.log(mu_arr) / dt
    return complex(lam) if lam.ndim == 0 else lam


def normalize_eigenvectors(vecs: np.ndarray) -> np.ndarray:
    """Unit 2-norm columns whose largest-magnitude entry is real and positive."""
    vecs = np.array(vecs, dtype=complex)
    norms = np.linalg.norm(vecs, axis=0)
    norms[norms == 0] = 1.0
    vecs /= norms
    idx = np.argmax(np.abs(vecs), axis=0)
    lead = vecs[idx, np.arange(vecs.shape[1])]
    mag = np.abs(lead)
    phase = np.ones_like(lead)
    nz = mag > 0
    phase[nz] = np.conj(lead[nz]) / mag[nz]
    return vecs * phase


@dataclass
class KoopmanDecomposition:
    """Eigentuples of a Koopman matrix, sorted by ``|mu|`` descending.

    ``eigenvectors[:, k]`` is ``xi_k``.  ``dictionary`` is whatever object was
    used to build ``K``; it must provide ``evaluate(points)``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    dt: float
    dictionary: object = None
    svd_rank_used: int | None = None

    @property
    def continuous_eigenvalues(self) -> np.ndarray:
        mu = self.eigenvalues
        out = np.full(mu.shape, -np.inf + 0j, dtype=complex)
        nz = mu != 0
        out[nz] = continuous_eigenvalue(mu[nz], self.dt)
        return out

    def __len__(self):
        return self.eigenvalues.shape[0]

    def eigenfunctions(self, points, indices=None) -> np.ndarray:
        """``phi_k`` at each point; shape ``(n_points, len(indices))``."""
        if self.dictionary is None:
            raise ValidationError("decomposition carries no dictionary")
        psi = self.dictionary.evaluate(np.atleast_2d(points))
        xi = self.eigenvectors if indices is None else self.eigenvectors[:, np.atleast_1d(indices)]
        return np.asarray(psi @ xi)


def eigendecompose(K: np.ndarray, dt: float, dictionary=None,
                   svd_rank_used: int | None = None) -> KoopmanDecomposition:
    """Full nonsymmetric eigendecomposition of ``K``.

    Tuples are ordered by ``|mu|`` descending, ties broken with ``Im mu >= 0``
    first.  Eigenvectors are normalised by :func:`normalize_eigenvectors`.
    """
    K = np.asarray(K)
    if not np.all(np.isfinite(K)):
        raise ValidationError("K contains non-finite entries")
    if not dt > 0:
        raise ValidationError("dt must be positive")
    try:
        mu, vecs = sla.eig(K, check_finite=False)
    except sla.LinAlgError as exc:
        raise NumericalError(f"eigensolver failed: {exc}") from exc
    order = np.lexsort((-mu.imag, -np.abs(mu)))
    mu = mu[order]
    vecs = normalize_eigenvectors(vecs[:, order])
    return KoopmanDecomposition(mu, vecs, float(dt), dictionary, svd_rank_used)


def eval_eigenfunction(x, k: int, dec: KoopmanDecomposition):
    """``phi_k(x) = psi(x)^T xi_k`` for one point or a stack of points."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    vals = dec.eigenfunctions(np.atleast_2d(x), [k])[:, 0]
    return complex(vals[0]) if single else vals


def fit(dataset, dictionary, svd_tol: float = 1e-10, chunk_size: int | None = None
        ) -> KoopmanDecomposition:
    """Accumulate, form ``K`` and decompose in one call."""
    gp = accumulate(dataset, dictionary, chunk_size)
    K, rank = koopman_matrix(gp, svd_tol)
    return eigendecompose(K, dataset.dt, dictionary, rank)


def prediction_residual(dec: KoopmanDecomposition, trajectories, k: int, horizon: int) -> float:
    """Relative error of ``phi_k(x_{n+h}) = mu_k**h phi_k(x_n)`` along trajectories.

    ``trajectories`` is a list of ``(n_snapshots, dim)`` arrays in the
    coordinates the dictionary was fitted on, sampled at ``dec.dt``.  A true
    eigenfunction gives zero; an eigenvalue produced by the finite dictionary
    rather than the dynamics typically fails to predict over many steps.
    """
    if horizon < 1:
        raise ValidationError("horizon must be >= 1")
    gain = dec.eigenvalues[k] ** horizon
    num = den = 0.0
    for x in trajectories:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[0] <= horizon:
            continue
        phi = dec.eigenfunctions(x, [k])[:, 0]
        num += float(np.sum(np.abs(phi[horizon:] - gain * phi[:-horizon]) ** 2))
        den += float(np.sum(np.abs(phi[horizon:]) ** 2))
    if den == 0.0:
        raise ValidationError(f"no trajectory is longer than the horizon {horizon}")
    return float(np.sqrt(num / den))
