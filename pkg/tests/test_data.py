import numpy as np
import pytest

from m3d.data import (DEFAULT_BANDS, DatasetError, DomainPair, FeatureDataset, extract_de_features,
                      load_binary, load_csv, load_dataset, make_loso_splits, save_binary,
                      save_csv, save_dataset, synth_domain_shift, synth_subjects)


def small_dataset(n_subjects=3, per=6, d=4, seed=0):
    rng = np.random.default_rng(seed)
    n = n_subjects * per
    return FeatureDataset(rng.standard_normal((n, d)), rng.integers(0, 3, n),
                          np.repeat(np.arange(n_subjects), per), np.zeros(n), 3)


def test_csv_structure(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b,c,label,subject,session\n"
                 "1,2,3,0,0,0\n4,5,6,1,0,0\n7,8,9,0,1,0\n1.5,2.5,3.5,1,1,0\n")
    ds = load_csv(p)
    assert ds.num_samples == 4 and ds.num_features == 3
    assert ds.feature_names == ("a", "b", "c")
    assert ds.features[1, 2] == 6.0


def test_csv_nan_names_cell(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("f0,f1,label,subject,session\n1,2,0,0,0\n3,nan,1,0,0\n")
    with pytest.raises(DatasetError, match=r"row 1, column 1"):
        load_csv(p)


def test_csv_bad_header(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("f0,f1,y\n1,2,0\n")
    with pytest.raises(DatasetError, match="header"):
        load_csv(p)


def test_csv_ragged_row(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("f0,label,subject,session\n1,0,0,0\n1,0,0\n")
    with pytest.raises(DatasetError, match="line 3"):
        load_csv(p)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="nope.csv"):
        load_dataset(tmp_path / "nope.csv")


@pytest.mark.parametrize("fmt", ["csv", "binary"])
def test_round_trip_bitwise(tmp_path, fmt):
    ds = small_dataset()
    ds = ds.with_features(ds.features * np.pi * 1e-7)
    p = tmp_path / ("d.bin" if fmt == "binary" else "d.csv")
    save_dataset(ds, p)
    back = load_dataset(p)
    assert back.features.tobytes() == ds.features.tobytes()
    for a in ("labels", "subject_id", "session_id"):
        np.testing.assert_array_equal(getattr(back, a), getattr(ds, a))
    save_dataset(back, tmp_path / ("e." + p.suffix[1:]))
    assert load_dataset(tmp_path / ("e." + p.suffix[1:])).features.tobytes() == ds.features.tobytes()


def test_binary_rejects_truncation(tmp_path):
    p = tmp_path / "d.bin"
    save_binary(small_dataset(), p)
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(DatasetError, match="dimension mismatch"):
        load_binary(p)
    p.write_bytes(b"XXXX" + b"\0" * 64)
    with pytest.raises(DatasetError, match="magic"):
        load_binary(p)


def test_dataset_validation():
    with pytest.raises(DatasetError, match="row 0, column 1"):
        FeatureDataset([[0.0, np.inf]], [0], [0], [0], 2)
    with pytest.raises(DatasetError, match="labels"):
        FeatureDataset([[0.0]], [2], [0], [0], 2)
    ds = FeatureDataset([[0.0]], [0], [0], [0], 2)
    with pytest.raises(ValueError):
        ds.features[0, 0] = 1.0


def test_domain_pair_checks():
    a = small_dataset(d=4)
    b = small_dataset(d=5)
    with pytest.raises(DatasetError, match="features"):
        DomainPair(a, b)
    unl = FeatureDataset(a.features, np.full(a.num_samples, -1), a.subject_id, a.session_id, 3)
    with pytest.raises(DatasetError, match="labeled"):
        DomainPair(unl, a)
    assert DomainPair(a, unl).m == a.num_samples


@pytest.mark.parametrize("n_subjects", [2, 15, 16])
def test_loso_fold_counts(n_subjects):
    ds = small_dataset(n_subjects=n_subjects, per=3)
    plan = make_loso_splits(ds, "single-session")
    assert len(plan) == n_subjects
    targets = [f.target_subjects for f in plan.folds]
    assert sorted(t[0] for t in targets) == list(range(n_subjects))
    for f in plan.folds:
        assert len(f.source_subjects) == n_subjects - 1
        assert not set(f.source_subjects) & set(f.target_subjects)


def test_loso_single_subject_error():
    with pytest.raises(DatasetError):
        make_loso_splits(small_dataset(n_subjects=1), "single-session")


def test_cross_session_pools_sessions():
    ds = synth_subjects(0, 3, 5, 2, 1.0, 0.1, 0.5, n_features=4, n_sessions=3)
    single = make_loso_splits(ds, "single-session")
    cross = make_loso_splits(ds, "cross-session")
    assert single.domain_pair(ds, 0).m == 10
    assert cross.domain_pair(ds, 0).m == 30
    assert set(np.unique(cross.domain_pair(ds, 0).target.session_id)) == {0, 1, 2}


def test_ten_fold_partition():
    ds = small_dataset(n_subjects=23, per=2)
    plan = make_loso_splits(ds, "ten-fold", seed=3)
    assert len(plan) == 10
    targets = sorted(s for f in plan.folds for s in f.target_subjects)
    assert targets == list(range(23))
    with pytest.warns(UserWarning, match="using 4 folds"):
        assert len(make_loso_splits(small_dataset(n_subjects=4), "ten-fold")) == 4


def test_synth_deterministic_and_zero_shift():
    a = synth_domain_shift(7, 20, 3, 3.0, 0.4, 0.8)
    b = synth_domain_shift(7, 20, 3, 3.0, 0.4, 0.8)
    assert a.target.features.tobytes() == b.target.features.tobytes()
    z = synth_domain_shift(1, 4000, 2, 0.0, 0.0, 1.0, n_features=4)
    np.testing.assert_allclose(z.source.features.mean(axis=0), z.target.features.mean(axis=0), atol=0.08)
    shifted = synth_domain_shift(1, 4000, 2, 3.0, 0.0, 1.0, n_features=4)
    gap = shifted.target.features.mean(axis=0) - shifted.source.features.mean(axis=0)
    assert abs(np.linalg.norm(gap) - 3.0) < 0.1


def test_synth_preconditions():
    with pytest.raises(ValueError):
        synth_domain_shift(0, 1, 3, 1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        synth_domain_shift(0, 5, 3, 1.0, 0.0, 0.0)


def test_de_feature_layout():
    windows = np.random.default_rng(0).standard_normal((2, 62, 200))
    ds = extract_de_features(windows, 200.0)
    assert ds.num_features == 310
    assert ds.feature_names[:6] == ("ch0_delta", "ch0_theta", "ch0_alpha", "ch0_beta", "ch0_gamma", "ch1_delta")


def test_de_white_noise_monte_carlo():
    # white noise of variance s2 puts s2 * (bins in band / bins total) into each band
    fs, n_t, s2 = 200.0, 200, 2.0
    rng = np.random.default_rng(1)
    windows = rng.normal(0.0, np.sqrt(s2), (10_000, 1, n_t))
    ds = extract_de_features(windows, fs)
    freqs = np.fft.rfftfreq(n_t, 1 / fs)
    for b, (_, lo, hi) in enumerate(DEFAULT_BANDS):
        frac = ((freqs >= lo) & (freqs <= hi)).sum() * 2 / n_t
        expected = 0.5 * np.log(2 * np.pi * np.e * s2 * frac)
        # the mean of log(var) is biased low; compare the log of the mean variance instead
        var = np.exp(2 * ds.features[:, b]) / (2 * np.pi * np.e)
        assert abs(0.5 * np.log(2 * np.pi * np.e * var.mean()) - expected) < 0.01


def test_de_degenerate_inputs():
    ds = extract_de_features(np.zeros((1, 1, 200)), 200.0)
    assert np.allclose(ds.features, 0.5 * np.log(2 * np.pi * np.e * 1e-12))
    with pytest.raises(ValueError, match="Nyquist"):
        extract_de_features(np.zeros((1, 1, 200)), 80.0)
