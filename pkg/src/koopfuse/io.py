"""On-disk formats.

* Measurement series: CSV with a header row ``trajectory,t,<components...>``
  and one row per snapshot.  Consecutive rows of the same trajectory form the
  snapshot pairs.
* Metadata and small objects: JSON.
* Decomposition directory: ``eigenvalues.csv`` (sorted by ``|mu|``),
  ``eigenvectors.npy``, ``dictionary.json``, ``meta.json``.
* Fusion model directory: ``pairs.json``, ``interpolant.csv``, ``transforms.json``
  and the two decompositions in ``target/`` and ``source/``.

Floats are written with ``repr`` precision so files round-trip exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .dictionary import dictionary_from_dict
from .edmd import KoopmanDecomposition
from .errors import ValidationError
from .fusion import FusionModel, MatchedPair
from .interp import LinearInterpolant, triangulate
from .measurements import MeasurementDataset, PcaBasis, WhitenTransform, pairs_from_series, concatenate


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path):
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"missing file: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None


def _fmt(x) -> str:
    return repr(float(x))


def write_table(path, header, rows) -> None:
    """Write a CSV with ``header``; ``rows`` is any 2D numeric iterable."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def read_table(path) -> tuple[list[str], np.ndarray]:
    """Header and ``(rows, columns)`` float array; an empty body is an error."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"missing file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: file is empty") from None
        rows = [r for r in reader if r]
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    try:
        data = np.array(rows, dtype=float)
    except ValueError as exc:
        raise ValidationError(f"{path}: non-numeric entry ({exc})") from None
    if data.shape[1] != len(header):
        raise ValidationError(f"{path}: rows have {data.shape[1]} columns, header has {len(header)}")
    return header, data


# -- measurement series -------------------------------------------------------

def write_series(path, t, values, names, trajectory=None) -> None:
    """One row per snapshot: ``trajectory, t, values...``."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    t = np.asarray(t, dtype=float)
    if values.shape[0] != t.shape[0] or values.shape[1] != len(names):
        raise ValidationError("series shape does not match t and component names")
    traj = np.zeros(t.shape[0], dtype=int) if trajectory is None else np.asarray(trajectory)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trajectory", "t", *names])
        for k in range(t.shape[0]):
            w.writerow([int(traj[k]), _fmt(t[k]), *[_fmt(v) for v in values[k]]])


def read_series(path) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[str]]:
    """``(trajectory, t, values, names)`` from a series CSV."""
    header, data = read_table(path)
    if header[:2] != ["trajectory", "t"] or len(header) < 3:
        raise ValidationError(f"{path}: header must start with 'trajectory,t' and name components")
    return data[:, 0].astype(int), data[:, 1], data[:, 2:], header[2:]


def load_dataset(path, label: str | None = None) -> MeasurementDataset:
    """Snapshot pairs from a series CSV (pairs never straddle trajectories)."""
    traj, t, values, _ = read_series(path)
    label = Path(path).stem if label is None else label
    parts = []
    for k in np.unique(traj):
        sel = traj == k
        if sel.sum() < 2:
            continue
        tk = t[sel]
        dt = float(tk[1] - tk[0])
        parts.append(pairs_from_series(values[sel], tk, dt, label, int(k)))
    if not parts:
        raise ValidationError(f"{path}: no trajectory has two snapshots")
    return concatenate(parts, label)


# -- PCA basis --------------------------------------------------------------

def save_pca_basis(directory, basis: PcaBasis) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_table(d / "pca_modes.csv", ["mean", *[f"mode{i + 1}" for i in range(basis.retained)]],
                np.column_stack([basis.mean, basis.modes]))
    write_json(d / "pca_basis.json", {
        "retained": basis.retained,
        "singular_values": basis.singular_values.tolist(),
        "energy_fraction": basis.energy_fraction(),
    })


def load_pca_basis(directory) -> PcaBasis:
    d = Path(directory)
    _, data = read_table(d / "pca_modes.csv")
    meta = read_json(d / "pca_basis.json")
    return PcaBasis(modes=data[:, 1:].copy(), singular_values=np.array(meta["singular_values"]),
                    mean=data[:, 0].copy())


# -- decompositions -----------------------------------------------------------

def save_decomposition(directory, dec: KoopmanDecomposition, whiten: WhitenTransform | None = None,
                       extra: dict | None = None) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    lam = dec.continuous_eigenvalues
    mu = dec.eigenvalues
    write_table(d / "eigenvalues.csv", ["index", "mu_re", "mu_im", "abs_mu", "lambda_re", "lambda_im"],
                np.column_stack([np.arange(len(mu)), mu.real, mu.imag, np.abs(mu),
                                 lam.real, lam.imag]))
    np.save(d / "eigenvectors.npy", dec.eigenvectors)
    write_json(d / "dictionary.json", dec.dictionary.to_dict())
    meta = {"dt": dec.dt, "svd_rank_used": dec.svd_rank_used, "size": int(len(mu))}
    if whiten is not None:
        meta["whiten"] = whiten.to_dict()
    if extra:
        meta.update(extra)
    write_json(d / "meta.json", meta)


def load_decomposition(directory) -> tuple[KoopmanDecomposition, WhitenTransform | None, dict]:
    d = Path(directory)
    _, ev = read_table(d / "eigenvalues.csv")
    vec_path = d / "eigenvectors.npy"
    if not vec_path.is_file():
        raise ValidationError(f"missing file: {vec_path}")
    vecs = np.load(vec_path)
    dictionary = dictionary_from_dict(read_json(d / "dictionary.json"))
    meta = read_json(d / "meta.json")
    mu = ev[:, 1] + 1j * ev[:, 2]
    if vecs.shape != (mu.shape[0], mu.shape[0]):
        raise ValidationError(f"{d}: eigenvector array does not match eigenvalue table")
    dec = KoopmanDecomposition(mu, vecs, float(meta["dt"]), dictionary, meta.get("svd_rank_used"))
    whiten = WhitenTransform.from_dict(meta["whiten"]) if "whiten" in meta else None
    return dec, whiten, meta


# -- fusion models ------------------------------------------------------------

def save_fusion_model(directory, model: FusionModel) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_decomposition(d / "target", model.dec_target, model.target_whiten)
    save_decomposition(d / "source", model.dec_source, model.source_whiten)
    write_json(d / "pairs.json", {
        "decaying": model.decaying.to_dict(),
        "oscillatory": model.oscillatory.to_dict(),
        "gamma": model.gamma,
        "coupling_floor": model.coupling_floor,
        "trust_threshold": model.trust_threshold,
        "all_matches": [p.to_dict() for p in model.all_matches],
    })
    itp = model.interpolant
    n_val = itp.values.shape[1]
    write_table(d / "interpolant.csv",
                ["phi1", "angle_phi2", *[f"value{i + 1}" for i in range(n_val)]],
                np.column_stack([itp.triangulation.vertices, itp.values]))
    write_json(d / "transforms.json", {
        "target": model.target_whiten.to_dict(),
        "source": model.source_whiten.to_dict(),
        "coord_scale": itp.coord_scale.tolist(),
        "fallback_policy": itp.fallback_policy,
        "usable": np.flatnonzero(~itp.usable).tolist(),
        "triangles": itp.triangulation.triangles.tolist(),
    })


def load_fusion_model(directory) -> FusionModel:
    """Rebuild a model saved by :func:`save_fusion_model`.

    The stored (scaled) vertices are re-triangulated; Qhull is deterministic
    for identical input, and the stored triangle list is checked against it.
    """
    d = Path(directory)
    if not d.is_dir():
        raise ValidationError(f"model directory not found: {d}")
    dec_t, wt, _ = load_decomposition(d / "target")
    dec_s, ws, _ = load_decomposition(d / "source")
    pairs = read_json(d / "pairs.json")
    tf = read_json(d / "transforms.json")
    _, table = read_table(d / "interpolant.csv")
    tri = triangulate(table[:, :2], tol=0.0)
    if tri.triangles.shape[0] != len(tf["triangles"]) or \
            not np.array_equal(tri.triangles, np.array(tf["triangles"], dtype=int)):
        raise ValidationError(f"{d}: stored triangulation does not match its vertices")
    usable = np.ones(tri.triangles.shape[0], dtype=bool)
    usable[np.array(tf["usable"], dtype=int)] = False
    itp = LinearInterpolant(tri, table[:, 2:], tf["fallback_policy"],
                            np.array(tf["coord_scale"], dtype=float), usable)
    return FusionModel(
        dec_target=dec_t, dec_source=dec_s,
        pairs=[MatchedPair.from_dict(pairs["decaying"]), MatchedPair.from_dict(pairs["oscillatory"])],
        interpolant=itp,
        target_whiten=WhitenTransform.from_dict(tf["target"]),
        source_whiten=WhitenTransform.from_dict(tf["source"]),
        trust_threshold=float(pairs["trust_threshold"]),
        gamma=float(pairs["gamma"]), coupling_floor=float(pairs["coupling_floor"]),
        all_matches=[MatchedPair.from_dict(p) for p in pairs["all_matches"]],
    )
