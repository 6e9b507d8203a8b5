"""Data fusion through Koopman eigenfunctions.

Two sensor sets ("target", written with a tilde, and "source", with a hat)
observe the same system.  Eigenfunctions of the two EDMD approximations that
share an eigenvalue describe the same intrinsic quantity up to a complex
factor.  One joint measurement fixes that factor, after which a source
measurement can be converted to target eigenfunction values and, through a
scattered-data interpolant, to a target measurement.

The state is parameterised by two intrinsic coordinates: the value of a slowly
decaying eigenfunction (distance from the limit cycle) and the phase of the
fundamental oscillatory eigenfunction (position along it).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .edmd import KoopmanDecomposition
from .errors import MatchError, NumericalError, RegistrationError, ValidationError
from .interp import LinearInterpolant, build_interpolant, interpolate, pad_angle_periodic
from .measurements import WhitenTransform

MATCH_RTOL = 0.1
MATCH_ATOL = 1e-3


@dataclass
class MatchedPair:
    """Corresponding eigentuples of the target and source decompositions.

    ``alpha`` is the registration factor with
    ``phi_target ~ alpha * signed_power(phi_source, power)``; ``power`` is 1
    except for a real pair registered with eigenvalue-ratio correction.
    """

    index_tilde: int
    index_hat: int
    lambda_tilde: complex
    lambda_hat: complex
    alpha: complex | None = None
    power: float = 1.0

    @property
    def eigenvalue_gap(self) -> float:
        return abs(self.lambda_tilde - self.lambda_hat)

    def to_dict(self) -> dict:
        d = {
            "index_tilde": int(self.index_tilde),
            "index_hat": int(self.index_hat),
            "lambda_tilde": [float(np.real(self.lambda_tilde)), float(np.imag(self.lambda_tilde))],
            "lambda_hat": [float(np.real(self.lambda_hat)), float(np.imag(self.lambda_hat))],
            "eigenvalue_gap": float(self.eigenvalue_gap),
        }
        if self.alpha is not None:
            d["alpha"] = [float(np.real(self.alpha)), float(np.imag(self.alpha))]
        d["power"] = float(self.power)
        return d

    @classmethod
    def from_dict(cls, d) -> "MatchedPair":
        alpha = d.get("alpha")
        return cls(int(d["index_tilde"]), int(d["index_hat"]),
                   complex(*d["lambda_tilde"]), complex(*d["lambda_hat"]),
                   None if alpha is None else complex(*alpha), float(d.get("power", 1.0)))

    def map_source(self, phi_hat):
        """Registered target eigenfunction values from source values."""
        if self.alpha is None:
            raise RegistrationError("pair has not been registered")
        return self.alpha * signed_power(phi_hat, self.power)


def signed_power(values, power: float):
    """``sign(v) |v|^power`` for real ``v``; identity when ``power == 1``.

    If ``phi`` is an eigenfunction with eigenvalue ``lam`` then
    ``signed_power(phi, p)`` is one with eigenvalue ``p * lam`` (on either side
    of the zero set), which is how two real eigenfunctions with slightly
    different computed eigenvalues are reconciled.
    """
    if power == 1.0:
        return values
    v = np.asarray(values)
    if np.iscomplexobj(v):
        if np.any(np.abs(v.imag) > 1e-12 * max(1.0, float(np.abs(v).max(initial=0.0)))):
            raise ValidationError("power correction applies to real eigenfunctions only")
        v = v.real
    return np.sign(v) * np.abs(v) ** power


def match_tolerance(lam_a, lam_b, rtol: float = MATCH_RTOL, atol: float = MATCH_ATOL):
    return rtol * np.maximum(np.abs(lam_a), np.abs(lam_b)) + atol


def _conjugate_partner(lam: np.ndarray, k: int) -> int:
    target = np.conj(lam[k])
    finite = np.isfinite(lam)
    d = np.where(finite, np.abs(lam - target), np.inf)
    d[k] = np.inf
    return int(np.argmin(d))


def match_eigenfunctions(dec_tilde: KoopmanDecomposition, dec_hat: KoopmanDecomposition,
                         rtol: float = MATCH_RTOL, atol: float = MATCH_ATOL) -> list[MatchedPair]:
    """Greedy minimal-gap pairing of the two continuous spectra.

    All candidate pairs with ``|lam_t - lam_h| <= rtol * max(|lam_t|, |lam_h|) +
    atol`` are sorted by gap and accepted while both members are still free.
    Real eigenvalues pair only with real ones; complex ones are matched through
    their ``Im >= 0`` member and the conjugates are paired alongside.
    """
    if abs(dec_tilde.dt - dec_hat.dt) > 1e-12 * dec_tilde.dt:
        raise ValidationError("decompositions were computed with different sampling intervals")
    lt = dec_tilde.continuous_eigenvalues
    lh = dec_hat.continuous_eigenvalues
    rep_t = np.flatnonzero(np.isfinite(lt) & (lt.imag >= 0))
    rep_h = np.flatnonzero(np.isfinite(lh) & (lh.imag >= 0))

    a = lt[rep_t][:, None]
    b = lh[rep_h][None, :]
    gap = np.abs(a - b)
    ok = (gap <= match_tolerance(a, b, rtol, atol)) & ((a.imag == 0) == (b.imag == 0))
    ii, jj = np.nonzero(ok)
    order = np.lexsort((rep_h[jj], rep_t[ii], gap[ii, jj]))

    used_t, used_h = set(), set()
    pairs = []
    for n in order:
        i, j = int(rep_t[ii[n]]), int(rep_h[jj[n]])
        if i in used_t or j in used_h:
            continue
        used_t.add(i)
        used_h.add(j)
        pairs.append(MatchedPair(i, j, complex(lt[i]), complex(lh[j])))
        if lt[i].imag > 0:
            ci, cj = _conjugate_partner(lt, i), _conjugate_partner(lh, j)
            used_t.add(ci)
            used_h.add(cj)
            pairs.append(MatchedPair(ci, cj, complex(lt[ci]), complex(lh[cj])))
    if not pairs:
        raise MatchError("no eigenvalues agree within tolerance; the approximation generated "
                         "by EDMD is not accurate enough to be useful")
    pairs.sort(key=lambda p: (p.eigenvalue_gap, p.index_tilde))
    return pairs


def register_alpha(joint_tilde, joint_hat, pair: MatchedPair, dec_tilde: KoopmanDecomposition,
                   dec_hat: KoopmanDecomposition, min_norm: float = 1e-12,
                   power: float | None = None) -> MatchedPair:
    """Least-squares registration factor from joint measurements.

    ``alpha = sum(conj(phi_hat) * phi_tilde) / sum(|phi_hat|^2)`` minimises
    ``sum |phi_tilde(x_tilde_m) - alpha * phi_hat(x_hat_m)|^2``.  Inputs are in
    the coordinates the decompositions were fitted in.  With ``power`` set,
    ``phi_hat`` is first replaced by ``signed_power(phi_hat, power)``.
    """
    joint_tilde = np.atleast_2d(np.asarray(joint_tilde, dtype=float))
    joint_hat = np.atleast_2d(np.asarray(joint_hat, dtype=float))
    if joint_tilde.shape[0] != joint_hat.shape[0]:
        raise ValidationError("joint data sets must have the same number of rows")
    phi_t = dec_tilde.eigenfunctions(joint_tilde, [pair.index_tilde])[:, 0]
    phi_h = dec_hat.eigenfunctions(joint_hat, [pair.index_hat])[:, 0]
    power = pair.power if power is None else float(power)
    phi_h = signed_power(phi_h, power)
    return replace(pair, alpha=registration_factor(phi_t, phi_h, min_norm), power=power)


def registration_factor(phi_tilde, phi_hat, min_norm: float = 1e-12) -> complex:
    phi_tilde = np.asarray(phi_tilde, dtype=complex)
    phi_hat = np.asarray(phi_hat, dtype=complex)
    denom = float(np.sum(np.abs(phi_hat) ** 2))
    if not denom > min_norm ** 2:
        raise RegistrationError(
            "source eigenfunction vanishes at every joint point; choose a joint measurement "
            "away from its zero set (e.g. off the limit cycle)")
    alpha = complex(np.sum(np.conj(phi_hat) * phi_tilde) / denom)
    if alpha == 0 or not np.isfinite(alpha):
        raise RegistrationError(f"registration factor is degenerate ({alpha})")
    return alpha


def select_parameterization(dec: KoopmanDecomposition, osc_band: float = 1e-4,
                            trivial_tol: float = 1e-8) -> tuple[int, int]:
    """Indices of the decaying and oscillatory tuples used as coordinates.

    The decaying tuple is the real eigenvalue ``lambda < 0`` closest to zero.
    Oscillatory candidates have ``Im lambda > 0`` and a decay rate within
    ``osc_band`` of the smallest one found; the lowest frequency among them is
    chosen, so harmonics of the cycle (which sit just as close to the unit
    circle) are skipped.  The trivial tuple ``mu = 1`` is never chosen.
    """
    mu = dec.eigenvalues
    lam = dec.continuous_eigenvalues
    finite = np.isfinite(lam)
    trivial = np.abs(mu - 1.0) < trivial_tol

    decaying = np.flatnonzero(finite & ~trivial & (lam.imag == 0) & (lam.real < 0))
    if decaying.size == 0:
        raise MatchError("spectrum has no decaying real eigenvalue")
    i_dec = int(decaying[np.argmin(np.abs(lam[decaying]))])

    osc = np.flatnonzero(finite & ~trivial & (lam.imag > 0))
    if osc.size == 0:
        raise MatchError("spectrum has no oscillatory eigenvalue")
    rate = np.abs(lam[osc].real)
    near = osc[rate <= rate.min() + osc_band]
    i_osc = int(near[np.argmin(lam[near].imag)])
    return i_dec, i_osc


def intrinsic_coordinates(phi_decaying, phi_oscillatory) -> np.ndarray:
    """``(Re phi_1, angle phi_2)`` columns used by the inverse interpolant."""
    return np.column_stack([np.real(phi_decaying), np.angle(phi_oscillatory)])


def phase_coupling(decaying: MatchedPair, oscillatory: MatchedPair) -> float:
    """``Im((lam_t2 - lam_h2) / lam_h1)`` for a decaying and an oscillatory pair.

    ``phi_h2 * |phi_h1| ** (1j * gamma)`` is a source eigenfunction whose
    eigenvalue has the target's imaginary part; without it the two phases
    drift apart by ``(omega_t - omega_h) t`` as trajectories close in on the
    limit cycle.
    """
    return float(((oscillatory.lambda_tilde - oscillatory.lambda_hat) / decaying.lambda_hat).imag)


def couple_phase(phi_oscillatory, phi_decaying, gamma: float, floor: float):
    """Multiply by ``exp(1j * gamma * log(max(|phi_decaying|, floor)))``."""
    if gamma == 0.0:
        return np.asarray(phi_oscillatory)
    mag = np.maximum(np.abs(np.real(phi_decaying)), floor)
    return np.asarray(phi_oscillatory) * np.exp(1j * gamma * np.log(mag))


@dataclass
class FusionModel:
    """Everything needed to map source measurements to target measurements.

    ``dec_source`` and ``dec_target`` act on whitened data; ``fuse`` takes and
    returns raw measurements.  ``pairs`` holds the registered decaying and
    oscillatory tuples in that order; ``all_matches`` the full spectral matching.
    ``gamma`` and ``coupling_floor`` parameterise :func:`couple_phase`.
    """

    dec_target: KoopmanDecomposition
    dec_source: KoopmanDecomposition
    pairs: list[MatchedPair]
    interpolant: LinearInterpolant
    target_whiten: WhitenTransform
    source_whiten: WhitenTransform
    trust_threshold: float = 0.03
    gamma: float = 0.0
    coupling_floor: float = 0.0
    all_matches: list[MatchedPair] = field(default_factory=list)

    @property
    def decaying(self) -> MatchedPair:
        return self.pairs[0]

    @property
    def oscillatory(self) -> MatchedPair:
        return self.pairs[1]

    def source_eigenfunctions(self, z_source) -> np.ndarray:
        """Source ``(phi_1, coupled phi_2)`` at whitened points, unregistered."""
        phi = self.dec_source.eigenfunctions(
            z_source, [self.decaying.index_hat, self.oscillatory.index_hat])
        phi[:, 1] = couple_phase(phi[:, 1], phi[:, 0], self.gamma, self.coupling_floor)
        return phi

    def source_coordinates(self, x_source) -> np.ndarray:
        """Registered intrinsic coordinates computed from raw source data."""
        phi = self.source_eigenfunctions(self.source_whiten.apply(np.atleast_2d(x_source)))
        return intrinsic_coordinates(self.decaying.map_source(phi[:, 0]),
                                     self.oscillatory.map_source(phi[:, 1]))

    def target_coordinates(self, x_target) -> np.ndarray:
        z = self.target_whiten.apply(np.atleast_2d(x_target))
        phi = self.dec_target.eigenfunctions(
            z, [self.decaying.index_tilde, self.oscillatory.index_tilde])
        return intrinsic_coordinates(phi[:, 0], phi[:, 1])


def build_fusion_model(dec_target: KoopmanDecomposition, dec_source: KoopmanDecomposition,
                       joint_target, joint_source, target_train,
                       target_whiten: WhitenTransform, source_whiten: WhitenTransform,
                       source_train=None, trust_threshold: float = 0.03,
                       match_rtol: float = MATCH_RTOL, match_atol: float = MATCH_ATOL,
                       osc_band: float = 1e-4, power_correction: bool = True,
                       phase_correction: bool = True, floor_quantile: float = 0.01,
                       max_edge_ratio: float | None = 10.0, rescale: bool = True,
                       use_conjugate: bool = False) -> FusionModel:
    """Match, register and build the inverse interpolant.

    Parameters
    ----------
    dec_target, dec_source : KoopmanDecomposition
        EDMD results for the two sensor sets, fitted on whitened data.
    joint_target, joint_source : array_like
        Raw simultaneous measurements, one row per joint pair.
    target_train : array_like
        Raw target measurements that define the inverse map (typically the
        ``x`` snapshots of the target data set).
    target_whiten, source_whiten : WhitenTransform
        The transforms used before fitting each decomposition.
    source_train : array_like, optional
        Raw source measurements.  Needed only for the phase correction, where
        the ``floor_quantile`` quantile of ``|phi_h1|`` over them bounds the
        logarithm in :func:`couple_phase`.
    power_correction : bool
        Register the decaying pair as ``phi_t = alpha * phi_h ** (lam_t / lam_h)``
        rather than ``alpha * phi_h``.  The two agree when the computed
        eigenvalues coincide; when they differ the power keeps the registration
        valid away from the joint point.
    phase_correction : bool
        Couple the source oscillatory eigenfunction to the decaying one so both
        sides share the oscillatory eigenvalue (see :func:`phase_coupling`).
    max_edge_ratio : float or None
        Passed to :func:`~koopfuse.interp.build_interpolant`.
    use_conjugate : bool
        Parameterise with the ``Im lambda < 0`` member of the oscillatory pair.
        The angle coordinate changes sign on both sides, so estimates agree.
    """
    i_dec, i_osc = select_parameterization(dec_target, osc_band)
    if use_conjugate:
        i_osc = _conjugate_partner(dec_target.continuous_eigenvalues, i_osc)
    matches = match_eigenfunctions(dec_target, dec_source, match_rtol, match_atol)
    by_tilde = {p.index_tilde: p for p in matches}
    chosen = []
    for idx, kind in [(i_dec, "decaying"), (i_osc, "oscillatory")]:
        if idx not in by_tilde:
            lam = dec_target.continuous_eigenvalues[idx]
            raise MatchError(f"{kind} target eigenvalue {lam:.4g} has no partner in the source "
                             "spectrum; the approximation generated by EDMD is not accurate "
                             "enough to be useful")
        chosen.append(by_tilde[idx])
    dec_pair, osc_pair = chosen
    if power_correction:
        dec_pair = replace(dec_pair,
                           power=float(dec_pair.lambda_tilde.real / dec_pair.lambda_hat.real))

    gamma, floor = 0.0, 0.0
    if phase_correction:
        gamma = phase_coupling(dec_pair, osc_pair)
        if gamma != 0.0:
            if source_train is None:
                raise ValidationError("phase correction needs source training data")
            z = source_whiten.apply(np.atleast_2d(np.asarray(source_train, dtype=float)))
            mag = np.abs(np.real(dec_source.eigenfunctions(z, [dec_pair.index_hat])[:, 0]))
            floor = float(np.quantile(mag, floor_quantile))
            if not floor > 0:
                raise NumericalError("source decaying eigenfunction vanishes on the training "
                                     "data; cannot bound the phase correction")

    jt = target_whiten.apply(np.atleast_2d(joint_target))
    js = source_whiten.apply(np.atleast_2d(joint_source))
    if jt.shape[0] != js.shape[0]:
        raise ValidationError("joint data sets must have the same number of rows")
    phi_t = dec_target.eigenfunctions(jt, [i_dec, i_osc])
    phi_h = dec_source.eigenfunctions(js, [dec_pair.index_hat, osc_pair.index_hat])
    pairs = [
        replace(dec_pair, alpha=registration_factor(phi_t[:, 0],
                                                    signed_power(phi_h[:, 0], dec_pair.power))),
        replace(osc_pair, alpha=registration_factor(
            phi_t[:, 1], couple_phase(phi_h[:, 1], phi_h[:, 0], gamma, floor))),
    ]

    target_train = np.atleast_2d(np.asarray(target_train, dtype=float))
    phi = dec_target.eigenfunctions(target_whiten.apply(target_train), [i_dec, i_osc])
    coords = intrinsic_coordinates(phi[:, 0], phi[:, 1])
    pts, vals = pad_angle_periodic(coords, target_train)
    itp = build_interpolant(pts, vals, fallback_policy="nearest", rescale=rescale,
                            max_edge_ratio=max_edge_ratio)
    return FusionModel(dec_target, dec_source, pairs, itp, target_whiten, source_whiten,
                       trust_threshold, gamma, floor, matches)


def fuse(model: FusionModel, x_source):
    """Estimate target measurements from raw source measurements.

    Every row is handled independently.  Returns ``(estimates, trusted)``; a
    row is untrusted when the registered decaying coordinate exceeds
    ``model.trust_threshold`` in magnitude or the interpolant had to
    extrapolate.  Rows outside the source dictionary's support have no
    eigenfunction values; their estimate is NaN and they are untrusted.  A
    single 1D measurement gives a 1D estimate and a bool.
    """
    x = np.asarray(x_source, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    covers = getattr(model.dec_source.dictionary, "covers", None)
    ok = np.ones(len(x), dtype=bool) if covers is None else covers(model.source_whiten.apply(x))
    est = np.full((len(x), model.interpolant.values.shape[1]), np.nan)
    trusted = np.zeros(len(x), dtype=bool)
    if ok.any():
        coords = model.source_coordinates(x[ok])
        est[ok], extrapolated = interpolate(model.interpolant, coords)
        trusted[ok] = (np.abs(coords[:, 0]) <= model.trust_threshold) & ~extrapolated
    if single:
        return est[0], bool(trusted[0])
    return est, trusted
