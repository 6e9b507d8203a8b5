import numpy as np
import pytest

from koopfuse import io
from koopfuse.dictionary import LinearDictionary
from koopfuse.edmd import fit
from koopfuse.errors import ValidationError
from koopfuse.fusion import build_fusion_model, fuse
from koopfuse.measurements import WhitenTransform, compute_pca

import spiral
from spiral import SpiralDictionary
from test_edmd import linear_dataset, random_stable_matrix


def test_series_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(0)
    t = np.arange(6) * 0.1
    vals = rng.normal(size=(6, 2)) * 1e-7
    io.write_series(tmp_path / "s.csv", t, vals, ["v", "w"], [0, 0, 0, 1, 1, 1])
    traj, t2, v2, names = io.read_series(tmp_path / "s.csv")
    assert names == ["v", "w"] and list(traj) == [0, 0, 0, 1, 1, 1]
    assert np.array_equal(t2, t) and np.array_equal(v2, vals)


def test_dataset_pairs_stay_within_trajectories(tmp_path):
    t = np.array([0.0, 2.0, 4.0, 0.0, 2.0])
    vals = np.arange(10.0).reshape(5, 2)
    io.write_series(tmp_path / "s.csv", t, vals, ["a", "b"], [0, 0, 0, 1, 1])
    ds = io.load_dataset(tmp_path / "s.csv")
    assert len(ds) == 3 and ds.dt == 2.0
    assert np.array_equal(ds.x, vals[[0, 1, 3]]) and np.array_equal(ds.y, vals[[1, 2, 4]])


def test_series_shape_checked(tmp_path):
    with pytest.raises(ValidationError):
        io.write_series(tmp_path / "s.csv", np.arange(3.0), np.zeros((2, 2)), ["a", "b"])


@pytest.mark.parametrize("body, message", [
    ("", "empty"),
    ("trajectory,t,v\n", "no data rows"),
    ("trajectory,t,v\n0,0,abc\n", "non-numeric"),
    ("trajectory,t,v\n0,0\n", "columns"),
    ("time,v\n0,1\n", "header"),
])
def test_malformed_series_rejected(tmp_path, body, message):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(ValidationError, match=message):
        io.read_series(p)


def test_missing_files_and_bad_json(tmp_path):
    with pytest.raises(ValidationError, match="missing"):
        io.read_series(tmp_path / "nope.csv")
    (tmp_path / "x.json").write_text("{not json")
    with pytest.raises(ValidationError, match="invalid JSON"):
        io.read_json(tmp_path / "x.json")
    with pytest.raises(ValidationError):
        io.load_decomposition(tmp_path)
    with pytest.raises(ValidationError):
        io.load_fusion_model(tmp_path / "absent")


def test_pca_basis_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    basis = compute_pca(rng.normal(size=(30, 12)), 3)
    io.save_pca_basis(tmp_path, basis)
    back = io.load_pca_basis(tmp_path)
    assert np.array_equal(back.modes, basis.modes) and np.array_equal(back.mean, basis.mean)
    assert back.energy_fraction() == basis.energy_fraction()


def test_decomposition_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    dec = fit(linear_dataset(random_stable_matrix(rng), rng), LinearDictionary(3))
    tf = WhitenTransform(np.array([1.0, 2.0, 3.0]), np.array([0.5, 1.0, 2.0]))
    io.save_decomposition(tmp_path, dec, tf, {"note": "x"})
    back, tf2, meta = io.load_decomposition(tmp_path)
    assert np.array_equal(back.eigenvalues, dec.eigenvalues)
    assert np.array_equal(back.eigenvectors, dec.eigenvectors)
    assert np.array_equal(tf2.shift, tf.shift) and meta["note"] == "x"
    x = rng.normal(size=(4, 3))
    assert np.array_equal(back.eigenfunctions(x), dec.eigenfunctions(x))


def test_fusion_model_round_trip(tmp_path, monkeypatch):
    # the spiral dictionary is test-only, so it gets a serialisation just for this test
    a = [[1.2, 0.1], [0.0, 0.8]]
    states = spiral.trajectories(0)
    src = spiral.observe(states, a, [0.3, 0.0])
    dec_t = spiral.decomposition(states, SpiralDictionary())
    dec_s = spiral.decomposition(src, SpiralDictionary(a, [0.3, 0.0]))
    model = build_fusion_model(dec_t, dec_s, states[0, 0], src[0, 0], states.reshape(-1, 2),
                               spiral.IDENTITY, spiral.IDENTITY, source_train=src.reshape(-1, 2))
    monkeypatch.setattr(io, "dictionary_from_dict",
                        lambda d: SpiralDictionary(d["a"], d["b"]))
    monkeypatch.setattr(SpiralDictionary, "to_dict",
                        lambda self: {"kind": "spiral", "a": self.a.tolist(), "b": self.b.tolist()},
                        raising=False)
    io.save_fusion_model(tmp_path, model)
    back = io.load_fusion_model(tmp_path)
    x = src.reshape(-1, 2)[::7]
    e1, t1 = fuse(model, x)
    e2, t2 = fuse(back, x)
    assert np.array_equal(e1, e2) and np.array_equal(t1, t2)
    assert back.gamma == model.gamma and back.decaying.alpha == model.decaying.alpha
