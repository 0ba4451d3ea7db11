import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from empathy_pipeline import classifier as clf
from empathy_pipeline.role_lm import HCP, PAT


def test_combo_dimensions():
    assert clf.FeatureCombo.parse("prosody").dimension() == 56
    full = clf.FeatureCombo.parse("embed+liwc+empath+cepstrum+prosody")
    assert full.dimension() == 944
    assert str(clf.FeatureCombo.parse("prosody,embed")) == "embed+prosody"
    with pytest.raises(ValueError, match="at least one"):
        clf.FeatureCombo.parse("")
    with pytest.raises(ValueError, match="unknown"):
        clf.FeatureCombo.parse("embed+mfcc")


def test_assemble_order_and_zero_fill():
    blocks = {
        PAT: {"embed": np.ones(100), "prosody": np.full(28, 2.0)},
        HCP: {"embed": np.zeros(100), "prosody": np.zeros(28)},
    }
    x = clf.assemble_features(blocks, "prosody+embed")
    assert x.shape == (256,)
    np.testing.assert_array_equal(x[:100], 1)
    np.testing.assert_array_equal(x[100:128], 2)
    np.testing.assert_array_equal(x[128:], 0)


def test_undersample_counts():
    labels = np.r_[np.ones(341), -np.ones(16247)]
    keep = clf.undersample(labels, 5, seed=3)
    assert len(keep) == 341 + 3249
    assert (labels[keep] > 0).sum() == 341
    np.testing.assert_array_equal(keep, np.sort(keep))
    np.testing.assert_array_equal(keep, clf.undersample(labels, 5, seed=3))
    assert not np.array_equal(keep, clf.undersample(labels, 5, seed=4))
    assert len(clf.undersample(labels, 1)) == len(labels)


@given(st.integers(0, 300), st.integers(1, 2000), st.integers(1, 9), st.integers(0, 99))
def test_undersample_property(n_pos, n_neg, factor, seed):
    labels = np.r_[np.ones(n_pos), -np.ones(n_neg)]
    keep = clf.undersample(labels, factor, seed)
    assert (labels[keep] > 0).sum() == n_pos
    expect = n_neg if factor == 1 else n_neg // factor
    assert (labels[keep] < 0).sum() == expect
    assert len(set(keep.tolist())) == len(keep)


def test_standardizer_uses_training_statistics():
    rng = np.random.default_rng(0)
    X = rng.normal(3, 2, size=(200, 3))
    X[:, 2] = 5.0
    s = clf.Standardizer.fit(X)
    Z = s.transform(X)
    np.testing.assert_allclose(Z[:, :2].mean(0), 0, atol=1e-12)
    np.testing.assert_allclose(Z[:, :2].std(0), 1, atol=1e-12)
    np.testing.assert_array_equal(Z[:, 2], 0)
    np.testing.assert_allclose(s.transform(np.full((1, 3), 3.0))[0, :2], (3 - s.mean[:2]) / s.scale[:2])


def _grouped(seed, n_groups=30, per=12):
    rng = np.random.default_rng(seed)
    groups = np.repeat([f"s{i:02d}" for i in range(n_groups)], per)
    y = np.where(rng.random(len(groups)) < 0.2, 1.0, -1.0)
    X = rng.normal(size=(len(y), 5)) + 1.2 * y[:, None]
    return X, y, groups


@given(st.integers(0, 1000), st.integers(2, 6))
def test_group_folds_keep_sessions_whole(seed, k):
    _, y, groups = _grouped(seed)
    folds = clf.group_folds(y, groups, k, seed)
    for g in set(groups.tolist()):
        assert len(set(folds[groups == g].tolist())) == 1
    pos_per_fold = np.bincount(folds[y > 0], minlength=k)
    assert (pos_per_fold > 0).all()
    assert len(set(folds.tolist())) == k


def test_group_folds_need_enough_positive_groups():
    y = np.array([1, -1, -1, -1])
    with pytest.raises(ValueError, match="insufficient positives"):
        clf.group_folds(y, np.array(["a", "b", "c", "d"]), 2)


def test_training_config_grid():
    grid = clf.TrainConfig().grid()
    assert len(grid) == 90
    assert grid[0] == (0.01, 1e-4, 1) and grid == sorted(grid)


def test_single_configuration_grid():
    X, y, groups = _grouped(1)
    cfg = clf.TrainConfig(C=(0.1,), gamma=(0.1,), W=(2,), folds=3)
    res = clf.grid_search(X, y, groups, cfg)
    assert (res.C, res.gamma, res.W) == (0.1, 0.1, 2)
    assert len(res.table) == 1 and len(res.table[0]["fold_ap"]) == 3


def test_grid_tie_prefers_smallest_parameters():
    X, y, groups = _grouped(2)
    X = np.c_[X, 50 * y]  # every configuration ranks perfectly
    cfg = clf.TrainConfig(C=(1.0, 0.1), gamma=(0.01, 0.001), W=(3, 1), folds=3)
    res = clf.grid_search(X, y, groups, cfg)
    assert all(row["mean_ap"] == 1.0 for row in res.table)
    assert (res.C, res.gamma, res.W) == (0.1, 0.001, 1)


def test_grid_search_matches_direct_fold_training():
    from empathy_pipeline.evaluation import average_precision
    from empathy_pipeline.svm import train_svm

    X, y, groups = _grouped(3)
    cfg = clf.TrainConfig(C=(1.0,), gamma=(0.05,), W=(2,), folds=3, seed=5)
    res = clf.grid_search(X, y, groups, cfg)
    folds = clf.group_folds(y, groups, 3, 5)
    aps = []
    for k in range(3):
        tr = folds != k
        s = clf.Standardizer.fit(X[tr])
        m = train_svm(s.transform(X[tr]), y[tr], 1.0, 0.05, 2)
        aps.append(average_precision(m.decision_function(s.transform(X[~tr])), y[~tr] > 0))
    np.testing.assert_allclose(res.table[0]["fold_ap"], aps, atol=1e-12)


def test_grid_search_parallel_identical():
    X, y, groups = _grouped(4)
    cfg = clf.TrainConfig(C=(0.1, 1.0), gamma=(0.01, 0.1), W=(1, 3), folds=3)
    a = clf.grid_search(X, y, groups, cfg, n_jobs=1)
    b = clf.grid_search(X, y, groups, cfg, n_jobs=2)
    assert a.table == b.table and (a.C, a.gamma, a.W) == (b.C, b.gamma, b.W)


def test_train_pipeline_and_round_trip(tmp_path):
    X, y, groups = _grouped(5, n_groups=40)
    Xfull = np.c_[X, np.zeros((len(y), 51))]  # 56 columns = prosody for both roles
    cfg = clf.TrainConfig(C=(1.0,), gamma=(0.01, 0.05), W=(1, 2), folds=3)
    model, res, keep = clf.train_pipeline(Xfull, y, groups, "prosody", cfg)
    assert model.svm.platt_A < 0
    p = model.predict_proba(Xfull)
    assert ((p > 0) & (p < 1)).all()
    from empathy_pipeline.evaluation import average_precision

    assert average_precision(p, y > 0) > 0.8
    path = tmp_path / "model.json"
    model.save(path)
    again = clf.EmpathyClassifier.load(path)
    np.testing.assert_array_equal(again.predict_proba(Xfull), p)
    assert again.combo == model.combo
    model.save(tmp_path / "model2.json")
    assert path.read_bytes() == (tmp_path / "model2.json").read_bytes()
    with pytest.raises(ValueError):
        model.predict_proba(Xfull[:, :10])


def test_training_is_deterministic():
    X, y, groups = _grouped(6)
    cfg = clf.TrainConfig(C=(0.1, 1.0), gamma=(0.05,), W=(1, 4), folds=3, seed=9)
    m1, r1, k1 = clf.train_pipeline(X, y, groups, "prosody", cfg)
    m2, r2, k2 = clf.train_pipeline(X, y, groups, "prosody", cfg)
    np.testing.assert_array_equal(k1, k2)
    assert r1.table == r2.table
    assert m1.to_dict() == m2.to_dict()


def test_model_version_checked():
    X, y, groups = _grouped(7)
    model = clf.fit_classifier(X, y, "prosody", 1.0, 0.05, 1, groups)
    doc = model.to_dict()
    doc["version"] = 99
    with pytest.raises(ValueError, match="version"):
        clf.EmpathyClassifier.from_dict(doc)
