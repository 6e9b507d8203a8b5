"""End-to-end reproduction of the FitzHugh-Nagumo fusion experiment.

Every stage reads and writes files under one working directory, so each can
run on its own (the CLI subcommands) or all in sequence (:func:`reproduce`).
Layout::

    data/      pca_fields.npy, pointwise.csv, joint_fields.npy, joint_pointwise.csv,
               heldout_fields.npy, heldout_pointwise.csv, metadata.json
    pca/       pca_modes.csv, pca_basis.json, pca.csv, joint.csv, heldout_truth.csv
    edmd/pca/, edmd/pointwise/   decomposition directories
    model/     fusion model (pointwise -> PCA)
    predictions.csv, report.json
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .dictionary import LinearDictionary, MlsDictionary, build_nodes_quadtree
from .edmd import fit, prediction_residual
from .errors import MatchError, ValidationError
from .fhn import FhnParams, TrajectoryConfig, generate_trajectories
from .fusion import build_fusion_model, fuse, select_parameterization
from .measurements import compute_pca, point_measure, project, whiten

PCA_NAMES = ("a1", "a2", "a3")
POINT_NAMES = ("v", "w")
NORM_DEFINITION = "e_i = ||a_i_true - a_i_pred|| / ||a_i_true||, ||f||^2 = trapezoid(f(t)^2) over t in window"


@dataclass
class SensorSettings:
    """Quad-tree and MLS settings for one sensor set's dictionary."""

    max_per_cell: int
    cover_factor: float = 2.5
    rcond: float = 1e-12


@dataclass
class RunConfig:
    """All knobs of a reproduction run.

    ``rng_seed`` is split into independent child seeds for the PCA batch, the
    pointwise batch, the joint run and the held-out run; the ``rng_seed`` field
    inside ``trajectories`` is ignored.

    The per-sensor dictionary settings are the first ones tried.  A fit is
    accepted when the decaying and oscillatory eigenfunctions it would supply
    to fusion both predict themselves
    ``residual_horizon`` steps ahead along the training trajectories with
    relative error at most ``residual_tol``; otherwise the next setting from
    :func:`candidate_settings` is tried.
    """

    workdir: str = "koopfuse_run"
    params: FhnParams = field(default_factory=FhnParams)
    trajectories: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    heldout_pairs: int = 2000
    pca_modes: int = 3
    location: float = 10.0
    pca_dictionary: SensorSettings = field(default_factory=lambda: SensorSettings(33))
    pointwise_dictionary: SensorSettings = field(default_factory=lambda: SensorSettings(24))
    svd_tol: float = 1e-10
    residual_horizon: int = 200
    residual_tol: float = 0.05
    max_dictionary_attempts: int = 12
    match_rtol: float = 0.1
    match_atol: float = 1e-3
    trust_threshold: float = 0.03
    power_correction: bool = True
    phase_correction: bool = True
    max_edge_ratio: float | None = 10.0
    windows: tuple[float, ...] = (400.0, 4000.0)
    rng_seed: int = 0

    def seeds(self) -> dict[str, int]:
        children = np.random.SeedSequence(self.rng_seed).spawn(4)
        names = ("pca", "pointwise", "joint", "heldout")
        return {n: int(c.generate_state(1)[0]) for n, c in zip(names, children)}

    def path(self, *parts) -> Path:
        return Path(self.workdir).joinpath(*parts)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["windows"] = list(self.windows)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "params" in d:
            d["params"] = FhnParams(**d["params"])
        if "trajectories" in d:
            d["trajectories"] = TrajectoryConfig(**d["trajectories"])
        for key in ("pca_dictionary", "pointwise_dictionary"):
            if key in d:
                d[key] = SensorSettings(**d[key])
        if "windows" in d:
            d["windows"] = tuple(float(w) for w in d["windows"])
        return cls(**d)

    def save(self, path) -> None:
        io.write_json(path, self.to_dict())

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(io.read_json(path))


@dataclass
class ErrorReport:
    """Relative reconstruction errors per window plus the spectral bookkeeping."""

    windows: list[dict]
    eigenvalues: list[dict] = field(default_factory=list)
    alpha: list[list[float]] = field(default_factory=list)
    norm: str = NORM_DEFINITION

    def errors(self, window: float, trusted_only: bool = False) -> np.ndarray:
        for w in self.windows:
            if abs(w["window"][1] - w["window"][0] - window) < 1e-9:
                return np.array(w["e_trusted" if trusted_only else "e"])
        raise KeyError(window)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d) -> "ErrorReport":
        return cls(**d)


# -- helpers ------------------------------------------------------------------

def _log(verbose, msg):
    if verbose:
        print(msg, flush=True)


def relative_errors(t, truth, pred, window: float, weights=None) -> np.ndarray:
    """``e_i`` over ``t - t[0] in [0, window]`` with the trapezoidal rule.

    ``weights`` (0/1 per sample) zero the integrand of both numerator and
    denominator, which is how untrusted samples are left out.
    """
    t = np.asarray(t, dtype=float)
    truth = np.atleast_2d(np.asarray(truth, dtype=float))
    pred = np.atleast_2d(np.asarray(pred, dtype=float))
    if truth.shape != pred.shape or truth.shape[0] != t.shape[0]:
        raise ValidationError("truth, prediction and time arrays are misaligned")
    sel = (t - t[0]) <= window + 1e-9
    if sel.sum() < 2:
        raise ValidationError(f"window {window} contains fewer than two samples")
    w = np.ones(t.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    ts, ws = t[sel], w[sel][:, None]
    # zero-weight samples drop out even when their prediction is NaN
    sq = np.where(ws > 0, ws * (truth[sel] - pred[sel]) ** 2, 0.0)
    num = np.trapezoid(sq, ts, axis=0)
    den = np.trapezoid(ws * truth[sel] ** 2, ts, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.sqrt(np.where(den > 0, num / den, np.nan))


def _simulate_batch(cfg: RunConfig, seed: int, n_traj: int, pairs: int):
    tc = dataclasses.replace(cfg.trajectories, n_trajectories=n_traj,
                             pairs_per_trajectory=pairs, rng_seed=seed)
    trajs = generate_trajectories(tc, cfg.params)
    return np.stack([tr.fields for tr in trajs]), trajs[0].t


def _write_point_series(path, fields, t, cfg: RunConfig):
    pts = point_measure(fields, cfg.location, cfg.params)          # (n_traj, n_t, 2)
    n_traj, n_t = pts.shape[:2]
    io.write_series(path, np.tile(t, n_traj), pts.reshape(-1, 2), POINT_NAMES,
                    np.repeat(np.arange(n_traj), n_t))


# -- stages -------------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, verbose: bool = False) -> dict:
    """Generate the PCA batch, pointwise batch, joint snapshot and held-out run."""
    seeds = cfg.seeds()
    data = cfg.path("data")
    data.mkdir(parents=True, exist_ok=True)
    n, m = cfg.trajectories.n_trajectories, cfg.trajectories.pairs_per_trajectory

    t0 = time.perf_counter()
    fields, t = _simulate_batch(cfg, seeds["pca"], n, m)
    np.save(data / "pca_fields.npy", fields)
    _log(verbose, f"simulate: PCA batch {fields.shape} ({time.perf_counter() - t0:.0f}s)")

    fields, t = _simulate_batch(cfg, seeds["pointwise"], n, m)
    _write_point_series(data / "pointwise.csv", fields, t, cfg)
    _log(verbose, f"simulate: pointwise batch ({time.perf_counter() - t0:.0f}s)")

    fields, t = _simulate_batch(cfg, seeds["joint"], 1, 1)
    np.save(data / "joint_fields.npy", fields[0, :1])
    _write_point_series(data / "joint_pointwise.csv", fields[:, :1], t[:1], cfg)

    fields, t = _simulate_batch(cfg, seeds["heldout"], 1, cfg.heldout_pairs)
    np.save(data / "heldout_fields.npy", fields[0])
    _write_point_series(data / "heldout_pointwise.csv", fields, t, cfg)
    _log(verbose, f"simulate: joint and held-out runs ({time.perf_counter() - t0:.0f}s)")

    meta = {"seeds": seeds, "config": cfg.to_dict(), "dt": cfg.trajectories.sampling_interval,
            "grid": cfg.params.grid.tolist()}
    io.write_json(data / "metadata.json", meta)
    return meta


def cmd_pca(cfg: RunConfig, verbose: bool = False) -> dict:
    """PCA basis from the PCA batch; write coefficient series for all runs."""
    data, out = cfg.path("data"), cfg.path("pca")
    fields = np.load(data / "pca_fields.npy")
    n_traj, n_t = fields.shape[:2]
    basis = compute_pca(fields.reshape(n_traj * n_t, -1), cfg.pca_modes)
    io.save_pca_basis(out, basis)
    names = PCA_NAMES[:cfg.pca_modes] if cfg.pca_modes <= 3 else \
        tuple(f"a{i + 1}" for i in range(cfg.pca_modes))
    dt = cfg.trajectories.sampling_interval
    t = np.arange(n_t) * dt
    coeffs = project(fields, basis)
    io.write_series(out / "pca.csv", np.tile(t, n_traj), coeffs.reshape(-1, basis.retained), names,
                    np.repeat(np.arange(n_traj), n_t))

    joint_f = np.load(data / "joint_fields.npy")
    _, _, joint_p, _ = io.read_series(data / "joint_pointwise.csv")
    joint_a = project(joint_f, basis)
    io.write_series(out / "joint.csv", np.zeros(len(joint_a)), np.column_stack([joint_a, joint_p]),
                    [f"target:{n}" for n in names] + [f"source:{n}" for n in POINT_NAMES])

    held = np.load(data / "heldout_fields.npy")
    io.write_series(out / "heldout_truth.csv", np.arange(held.shape[0]) * dt, project(held, basis), names)
    info = {"energy_fraction": basis.energy_fraction(), "retained": basis.retained}
    _log(verbose, f"pca: {basis.retained} modes capture {100 * info['energy_fraction']:.2f}% of the energy")
    return info


def cmd_edmd(dataset_path, out_dir, settings: SensorSettings | None = None, svd_tol: float = 1e-10,
             dictionary: str = "mls", whiten_data: bool = True, verbose: bool = False):
    """Fit EDMD to a series CSV and write the decomposition directory."""
    ds = io.load_dataset(dataset_path)
    if whiten_data:
        ds, transform = whiten(ds)
    else:
        transform = None
    if dictionary == "mls":
        if settings is None:
            raise ValidationError("MLS dictionary needs sensor settings")
        pts = np.unique(np.concatenate([ds.x, ds.y]), axis=0)
        nodes = build_nodes_quadtree(pts, settings.max_per_cell, settings.cover_factor)
        dic = MlsDictionary(nodes, rcond=settings.rcond)
    elif dictionary == "linear":
        dic = LinearDictionary(ds.dim)
    else:
        raise ValidationError(f"unknown dictionary kind {dictionary!r}")
    t0 = time.perf_counter()
    dec = fit(ds, dic, svd_tol)
    io.save_decomposition(out_dir, dec, transform, {"dataset": str(dataset_path), "pairs": len(ds)})
    _log(verbose, f"edmd: {dataset_path} -> {dic.size} functions, rank {dec.svd_rank_used} "
                  f"({time.perf_counter() - t0:.0f}s)")
    return dec


def _split_joint(path):
    _, _, values, names = io.read_series(path)
    tgt = [i for i, n in enumerate(names) if n.startswith("target:")]
    src = [i for i, n in enumerate(names) if n.startswith("source:")]
    if not tgt or not src:
        raise ValidationError(f"{path}: joint file needs 'target:' and 'source:' columns")
    return values[:, tgt], values[:, src], [names[i].split(":", 1)[1] for i in tgt]


def cmd_fuse_build(target_dir, source_dir, joint_path, target_series, source_series, out_dir,
                   cfg: RunConfig | None = None, verbose: bool = False):
    """Match, register and store a source -> target fusion model."""
    cfg = RunConfig() if cfg is None else cfg
    dec_t, wt, _ = io.load_decomposition(target_dir)
    dec_s, ws, _ = io.load_decomposition(source_dir)
    if wt is None or ws is None:
        raise ValidationError("fusion needs decompositions fitted on whitened data")
    joint_t, joint_s, names = _split_joint(joint_path)
    _, _, x_t, _ = io.read_series(target_series)
    _, _, x_s, _ = io.read_series(source_series)
    model = build_fusion_model(
        dec_t, dec_s, joint_t, joint_s, x_t, wt, ws, source_train=x_s,
        trust_threshold=cfg.trust_threshold, match_rtol=cfg.match_rtol, match_atol=cfg.match_atol,
        power_correction=cfg.power_correction, phase_correction=cfg.phase_correction,
        max_edge_ratio=cfg.max_edge_ratio)
    io.save_fusion_model(out_dir, model)
    io.write_json(Path(out_dir) / "components.json", {"target": names})
    _log(verbose, f"fuse-build: decaying {model.decaying.lambda_tilde:.4g} / "
                  f"{model.decaying.lambda_hat:.4g}, oscillatory {model.oscillatory.lambda_tilde:.4g} / "
                  f"{model.oscillatory.lambda_hat:.4g}")
    return model


def cmd_fuse_apply(model_dir, input_path, output_path, verbose: bool = False) -> np.ndarray:
    """Fuse every row of a source series CSV; adds a 0/1 ``trusted`` column."""
    model = io.load_fusion_model(model_dir)
    names = io.read_json(Path(model_dir) / "components.json")["target"]
    traj, t, x, _ = io.read_series(input_path)
    est, trusted = fuse(model, x)
    io.write_series(output_path, t, np.column_stack([est, trusted.astype(float)]),
                    [*names, "trusted"], traj)
    _log(verbose, f"fuse-apply: {len(t)} rows, {int((~trusted).sum())} untrusted")
    return est


def cmd_evaluate(pred_path, truth_path, windows, out_path=None, model_dir=None,
                 verbose: bool = False) -> ErrorReport:
    """Relative errors of predictions against truth for each window."""
    traj_p, t_p, pred, names_p = io.read_series(pred_path)
    traj_t, t_t, truth, names_t = io.read_series(truth_path)
    if "trusted" in names_p:
        k = names_p.index("trusted")
        trusted = pred[:, k] > 0.5
        pred = np.delete(pred, k, axis=1)
    else:
        trusted = np.ones(len(t_p), dtype=bool)
    if len(t_p) != len(t_t) or not (np.array_equal(traj_p, traj_t) and np.allclose(t_p, t_t, rtol=0, atol=1e-9)):
        raise ValidationError("prediction and truth timestamps do not match")
    if pred.shape[1] != truth.shape[1]:
        raise ValidationError("prediction and truth have different numbers of components")
    rows = []
    for w in windows:
        sel = (t_t - t_t[0]) <= w + 1e-9
        rows.append({
            "window": [float(t_t[0]), float(t_t[0] + w)],
            "components": list(names_t),
            "e": relative_errors(t_t, truth, pred, w).tolist(),
            "e_trusted": relative_errors(t_t, truth, pred, w, trusted).tolist(),
            "flagged": int((~trusted[sel]).sum()),
            "samples": int(sel.sum()),
        })
    report = ErrorReport(rows)
    if model_dir is not None:
        model = io.load_fusion_model(model_dir)
        report.eigenvalues = [p.to_dict() for p in model.pairs]
        report.alpha = [[p.alpha.real, p.alpha.imag] for p in model.pairs]
    if out_path is not None:
        io.write_json(out_path, report.to_dict())
    for r in rows:
        _log(verbose, f"evaluate: window {r['window']}: e = {np.round(r['e'], 4).tolist()}, "
                      f"trusted-only {np.round(r['e_trusted'], 4).tolist()}, flagged {r['flagged']}")
    return report


def reproduce(cfg: RunConfig, verbose: bool = False) -> ErrorReport:
    """Run every stage in order with the standard file layout."""
    cfg.path().mkdir(parents=True, exist_ok=True)
    cfg.save(cfg.path("config.json"))
    cmd_simulate(cfg, verbose)
    cmd_pca(cfg, verbose)
    run_edmd_stage(cfg, verbose)
    cmd_fuse_build(cfg.path("edmd", "pca"), cfg.path("edmd", "pointwise"), cfg.path("pca", "joint.csv"),
                   cfg.path("pca", "pca.csv"), cfg.path("data", "pointwise.csv"), cfg.path("model"),
                   cfg, verbose)
    cmd_fuse_apply(cfg.path("model"), cfg.path("data", "heldout_pointwise.csv"),
                   cfg.path("predictions.csv"), verbose)
    return cmd_evaluate(cfg.path("predictions.csv"), cfg.path("pca", "heldout_truth.csv"),
                        cfg.windows, cfg.path("report.json"), cfg.path("model"), verbose)


CELL_SIZES = (24, 33, 48, 64)
COVER_FACTORS = (2.5, 3.0, 2.0)


def candidate_settings(first: SensorSettings):
    """``first``, then the same cell size with other cover factors, then other
    cell sizes in order of distance from ``first.max_per_cell``."""
    yield first
    sizes = sorted(set(CELL_SIZES) | {first.max_per_cell},
                   key=lambda m: (abs(m - first.max_per_cell), m))
    for m in sizes:
        for c in COVER_FACTORS:
            if (m, c) != (first.max_per_cell, first.cover_factor):
                yield SensorSettings(m, c, first.rcond)


def _whitened_trajectories(dataset_path, transform):
    traj, _, values, _ = io.read_series(dataset_path)
    z = transform.apply(values)
    return [z[traj == k] for k in np.unique(traj)]


def selection_residuals(dec, trajectories, horizon: int) -> dict:
    """Eigenvalues and prediction residuals of the two tuples fusion would select."""
    try:
        i_dec, i_osc = select_parameterization(dec)
    except MatchError:
        nan = float("nan")
        return {"decaying": nan, "oscillatory": [nan, nan], "residual": float("inf")}
    lam = dec.continuous_eigenvalues
    res = max(prediction_residual(dec, trajectories, i_dec, horizon),
              prediction_residual(dec, trajectories, i_osc, horizon))
    return {"decaying": float(lam[i_dec].real), "oscillatory": [float(lam[i_osc].real), float(lam[i_osc].imag)],
            "residual": res}


def fit_sensor(dataset_path, out_dir, cfg: RunConfig, first: SensorSettings, verbose: bool = False):
    """EDMD with the first dictionary setting whose selected eigenfunctions are predictive.

    Every attempt is recorded in the decomposition's ``meta.json``.  When no
    setting passes, the attempt with the smallest residual is kept, so that
    the failure surfaces at matching with the full record on disk.
    """
    if cfg.max_dictionary_attempts < 1:
        raise ValidationError("max_dictionary_attempts must be >= 1")
    attempts, best = [], None
    trajectories = None
    for n, settings in enumerate(candidate_settings(first)):
        if n >= cfg.max_dictionary_attempts:
            break
        dec = cmd_edmd(dataset_path, out_dir, settings, cfg.svd_tol, verbose=verbose)
        _, transform, _ = io.load_decomposition(out_dir)
        if trajectories is None:
            trajectories = _whitened_trajectories(dataset_path, transform)
        check = selection_residuals(dec, trajectories, cfg.residual_horizon)
        res = check["residual"]
        attempts.append({"max_per_cell": settings.max_per_cell, "cover_factor": settings.cover_factor,
                         "size": dec.dictionary.size, **check})
        _log(verbose, f"edmd: tuples {check['decaying']:.4g} and {check['oscillatory'][1]:.4g}i, "
                      f"{cfg.residual_horizon}-step residual {res:.3g}")
        if best is None or res < best[0]:
            best = (res, settings)
        if res <= cfg.residual_tol:
            break
    accepted = attempts[-1]["residual"] <= cfg.residual_tol
    if not accepted and best[1] != settings:
        dec = cmd_edmd(dataset_path, out_dir, best[1], cfg.svd_tol, verbose=verbose)
    _, transform, meta = io.load_decomposition(out_dir)
    meta["selection"] = {"accepted": bool(accepted), "horizon": cfg.residual_horizon,
                         "tolerance": cfg.residual_tol, "attempts": attempts}
    io.write_json(Path(out_dir) / "meta.json", meta)
    return dec


def run_edmd_stage(cfg: RunConfig, verbose: bool = False):
    """Both decompositions, each with its first predictive dictionary setting."""
    dec_pca = fit_sensor(cfg.path("pca", "pca.csv"), cfg.path("edmd", "pca"), cfg,
                         cfg.pca_dictionary, verbose)
    dec_pt = fit_sensor(cfg.path("data", "pointwise.csv"), cfg.path("edmd", "pointwise"), cfg,
                        cfg.pointwise_dictionary, verbose)
    return dec_pca, dec_pt
