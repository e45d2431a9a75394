import math
from dataclasses import dataclass

import numpy as np
import pytest

from crisisfilter.classify import (
    DEFAULT_IRRELEVANT_CATEGORIES,
    FEATURE_DIM,
    SoftmaxClassifier,
    build_relevance_dataset,
    cross_validate,
    extract_features,
    feature_matrix,
    largest_remainder,
    load_model,
    loss_and_grad,
    save_model,
    stratified_folds,
    train_classifier,
    train_split,
)
from crisisfilter.metrics import macro_f1

from conftest import random_raster
from test_phash import golden_image

# frozen from the naive-chain oracle (tests/oracles.py) on golden_image()
GOLDEN_FEATURES = [
    8.395549266901185, 4.643354463421506, -0.031190622445905092, -8.24630260898911,
    8.413742278615857, 1.3985937358930105, 5.860301783986554, 0.2034617138345034,
    0.6744638605560169, -1.2783967007188473, 3.3476674473151107, 0.3607822817516899,
    0.4378878380288711, 1.882991808552049, -3.0363921497583988, 1.0940531140841756,
    4.542860309015126, -5.1904553934994055, 0.47653604780368397, 0.13567161566526176,
    -4.18249183996452, 3.9048882291745333, 0.7126050821316099, -1.908578959896147,
    5.0785193363447405, 0.38442873581907655, -2.5544657047332784, 2.749803105204821,
    3.961846417711591, 2.028269007241555, 0.49144836248281365, 1.292275019834264,
    -0.44138502977422434, -2.4341574556395225, -0.2607033724981882, 2.373772459046471,
    0.3085872618596266, 2.5839280957583544, 1.208533871977572, -0.2869310588103211,
    -3.3766593548723165, -1.5528522120666737, 0.12070913238243897, 0.8166301465757035,
    2.118836775824864, -0.1779674670793714, -3.430995148469485, -0.035412618086596126,
    4.057915867306363, -4.289791886127935, -6.530475773215898, -0.9044684784511852,
    -3.728956435137901, 0.48773786272415887, -1.291715421844458, 3.1651366014091273,
    -1.2162541605271366, 1.9031716620934547, -1.4008177064709049, -1.4104174380558456,
    2.6871234017465815, -0.5449124941293207, -0.028606665272874143,
    -3.2956811899723824, 0.005126953125, 0.017822265625, 0.039794921875,
    0.054443359375, 0.07568359375, 0.099609375, 0.128662109375, 0.123291015625,
    0.130615234375, 0.102294921875, 0.08740234375, 0.061767578125, 0.05029296875,
    0.01953125, 0.003173828125, 0.00048828125, 0.00634765625, 0.03662109375,
    0.084716796875, 0.08984375, 0.112060546875, 0.15185546875, 0.156982421875,
    0.104736328125, 0.10400390625, 0.087646484375, 0.052490234375, 0.011962890625,
    0.000732421875, 0.0, 0.0, 0.0, 0.000244140625, 0.0048828125, 0.02099609375,
    0.046630859375, 0.0625, 0.088134765625, 0.108642578125, 0.122314453125,
    0.125244140625, 0.122314453125, 0.1064453125, 0.077392578125, 0.0546875,
    0.0380859375, 0.0185546875, 0.0029296875,
]


@dataclass(frozen=True)
class Rec:
    id: str
    damage: str | None = None
    relevance: str | None = None
    object_tags: tuple = ()


def make_blobs(rng, n_per_class, centers, noise=1.0):
    X, y = [], []
    for label, center in centers.items():
        pts = rng.normal(center, noise, size=(n_per_class, len(center)))
        X.append(pts)
        y.extend([label] * n_per_class)
    return np.vstack(X), y


class TestExtractFeatures:
    def test_constant_image(self):
        img = np.full((20, 20, 3), 37, dtype=np.uint8)
        vec = extract_features(img)
        assert vec.shape == (FEATURE_DIM,)
        assert np.all(vec[:64] == 0.0)  # flat image has no AC energy
        for section in (vec[64:80], vec[80:96], vec[96:112]):
            assert section[37 // 16] == 1.0
            assert section.sum() == 1.0

    def test_deterministic(self, rng):
        img = random_raster(rng)
        assert np.array_equal(extract_features(img), extract_features(img.copy()))

    def test_golden_vector(self):
        vec = extract_features(golden_image())
        assert np.abs(vec - np.array(GOLDEN_FEATURES)).max() < 1e-9

    def test_histogram_sums_to_three(self, rng):
        vec = extract_features(random_raster(rng))
        assert vec[64:].sum() == pytest.approx(3.0, abs=1e-9)

    def test_grayscale_replicates_luma(self, rng):
        img = random_raster(rng, rgb=False)
        vec = extract_features(img)
        assert np.array_equal(vec[64:80], vec[80:96])
        assert np.array_equal(vec[64:80], vec[96:112])


class TestBuildRelevanceDataset:
    def test_balanced_10_10(self):
        recs = [Rec(f"s{i}", damage="severe") for i in range(10)]
        recs += [Rec(f"n{i}", damage="none", object_tags=("website",)) for i in range(10)]
        out = build_relevance_dataset(recs, seed=1)
        assert len(out) == 20
        assert sum(1 for r in out if r.relevance == "relevant") == 10
        assert sum(1 for r in out if r.relevance == "irrelevant") == 10

    def test_unlisted_tag_excluded(self):
        recs = [Rec(f"s{i}", damage="severe") for i in range(3)]
        recs.append(Rec("volcano", damage="none", object_tags=("volcano",)))
        recs.append(Rec("web", damage="none", object_tags=("website",)))
        out = build_relevance_dataset(recs, seed=1)
        ids = {r.id for r in out}
        assert "volcano" not in ids
        assert "web" in ids
        assert len(out) == 2

    def test_paper_scale_balance(self):
        # 3,518 irrelevant images yield a balanced set of 7,036
        recs = [Rec(f"s{i}", damage="severe") for i in range(5000)]
        recs += [
            Rec(f"n{i}", damage="none", object_tags=("suit",)) for i in range(3518)
        ]
        out = build_relevance_dataset(recs, seed=0)
        assert len(out) == 7036
        assert sum(1 for r in out if r.relevance == "irrelevant") == 3518

    def test_every_irrelevant_member_carries_listed_tag(self):
        rng = np.random.default_rng(5)
        tags = list(DEFAULT_IRRELEVANT_CATEGORIES) + ["volcano", "street"]
        recs = [Rec(f"s{i}", damage="mild") for i in range(50)]
        recs += [
            Rec(f"n{i}", damage="none", object_tags=(tags[int(rng.integers(len(tags)))],))
            for i in range(40)
        ]
        out = build_relevance_dataset(recs, seed=2)
        listed = set(DEFAULT_IRRELEVANT_CATEGORIES)
        for r in out:
            if r.relevance == "irrelevant":
                assert listed & set(r.object_tags)

    def test_empty_side_rejected(self):
        with pytest.raises(ValueError):
            build_relevance_dataset([Rec("s", damage="severe")])
        with pytest.raises(ValueError):
            build_relevance_dataset(
                [Rec("n", damage="none", object_tags=("website",))]
            )


class TestTrainer:
    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        n, d, k = 25, 6, 3
        xb = np.hstack([rng.normal(0, 1, (n, d)), np.ones((n, 1))])
        y = rng.integers(0, k, n)
        w = rng.normal(0, 0.5, (k, d + 1))
        _, grad = loss_and_grad(w.copy(), xb, y, 1e-4)
        eps = 1e-5
        scale = np.abs(grad).max()
        for i in range(k):
            for j in range(d + 1):
                wp, wm = w.copy(), w.copy()
                wp[i, j] += eps
                wm[i, j] -= eps
                num = (
                    loss_and_grad(wp, xb, y, 1e-4)[0] - loss_and_grad(wm, xb, y, 1e-4)[0]
                ) / (2 * eps)
                assert abs(grad[i, j] - num) <= 1e-5 * max(scale, 1.0)

    def test_separable_blobs_high_accuracy(self):
        rng = np.random.default_rng(11)
        X, y = make_blobs(rng, 100, {"a": [0] * 8, "b": [4] * 8})
        clf = train_classifier(X, y, classes=("a", "b"))
        acc = np.mean([p == t for p, t in zip(clf.predict(X), y)])
        assert acc >= 0.99

    def test_contradictory_labels_give_half_accuracy(self, rng):
        X = np.tile(rng.normal(0, 1, (1, 4)), (20, 1))
        y = ["a", "b"] * 10
        clf = train_classifier(X, y, classes=("a", "b"))
        acc = np.mean([p == t for p, t in zip(clf.predict(X), y)])
        assert acc == 0.5

    def test_zero_epochs_uniform_softmax(self, rng):
        X = rng.normal(0, 1, (10, 4))
        y = ["a", "b"] * 5
        clf = SoftmaxClassifier(classes=("a", "b"), epochs=0).fit(X, y)
        assert np.allclose(clf.predict_proba(X), 0.5)

    def test_probabilities_sum_to_one(self, rng):
        X, y = make_blobs(rng, 30, {"a": [0, 0], "b": [2, 2], "c": [0, 3]})
        clf = train_classifier(X, y, classes=("a", "b", "c"))
        probs = clf.predict_proba(rng.normal(0, 3, (50, 2)))
        assert np.abs(probs.sum(axis=1) - 1.0).max() < 1e-9
        assert probs.min() > 0.0

    def test_loss_non_increasing(self, rng):
        X, y = make_blobs(rng, 60, {"a": [0, 1, 0], "b": [1, 0, 1]}, noise=2.0)
        clf = train_classifier(X, y, classes=("a", "b"))
        losses = np.array(clf.loss_curve_)
        assert np.all(np.diff(losses) <= 1e-12)

    def test_fixed_seed_bit_reproducible(self, rng):
        X, y = make_blobs(rng, 40, {"a": [0, 0], "b": [1, 1]})
        c1 = SoftmaxClassifier(classes=("a", "b"), seed=3).fit(X, y)
        c2 = SoftmaxClassifier(classes=("a", "b"), seed=3).fit(X, y)
        assert np.array_equal(c1.coef_, c2.coef_)
        assert c1.loss_curve_ == c2.loss_curve_

    def test_degenerate_class_counts_rejected(self):
        with pytest.raises(ValueError):
            train_classifier(np.zeros((3, 2)), ["a", "a", "b"], classes=("a", "b"))

    def test_non_finite_features_rejected(self):
        X = np.array([[1.0, np.nan], [0.0, 1.0], [1.0, 2.0], [3.0, 1.0]])
        with pytest.raises(ValueError):
            train_classifier(X, ["a", "b", "a", "b"], classes=("a", "b"))

    def test_golden_score_against_matrix_oracle(self):
        # tiny frozen model: classes (a, b), dim 2, identity standardization
        clf = SoftmaxClassifier(classes=("a", "b"))
        clf.classes_ = ("a", "b")
        clf.mu_ = np.zeros(2)
        clf.sigma_ = np.ones(2)
        clf.coef_ = np.array([[0.5, -1.0, 0.25], [-0.5, 1.0, -0.25]])
        clf.feature_spec_ = "raw2"
        x = np.array([1.5, -2.0])
        probs = clf.predict_proba(x)[0]
        # independent recompute: explicit dot products and softmax
        z_a = 0.5 * 1.5 + (-1.0) * (-2.0) + 0.25
        z_b = -0.5 * 1.5 + 1.0 * (-2.0) + (-0.25)
        denominator = math.exp(z_a) + math.exp(z_b)
        assert probs[0] == pytest.approx(math.exp(z_a) / denominator, abs=1e-12)
        assert probs[1] == pytest.approx(math.exp(z_b) / denominator, abs=1e-12)
        # frozen values for the record
        assert probs[0] == pytest.approx(0.9975273768433653, abs=1e-12)
        assert probs[1] == pytest.approx(0.002472623156634748, abs=1e-12)


class TestCrossValidate:
    def test_separable_three_class(self):
        rng = np.random.default_rng(21)
        X, y = make_blobs(
            rng, 60, {"a": [0, 0, 0], "b": [5, 0, 0], "c": [0, 5, 0]}, noise=0.8
        )
        report = cross_validate(X, y, ("a", "b", "c"), k=5, seed=1)
        assert report.macro_f1 >= 0.95

    def test_leave_one_out_boundary(self):
        rng = np.random.default_rng(22)
        X, y = make_blobs(rng, 4, {"a": [0, 0], "b": [6, 6]})
        report = cross_validate(X, y, ("a", "b"), k=4, seed=1)
        assert sum(m.support for m in report.per_class.values()) == 8

    def test_planted_duplicates_inflate_scores(self):
        # hard overlapping classes; duplicating rows across folds leaks
        rng = np.random.default_rng(23)
        X, y = make_blobs(rng, 60, {"a": [0.0, 0.0], "b": [0.7, 0.7]}, noise=1.0)
        base = cross_validate(X, y, ("a", "b"), k=5, seed=9)
        X_dup = np.vstack([X, X])
        y_dup = y + y
        inflated = cross_validate(X_dup, y_dup, ("a", "b"), k=5, seed=9)
        assert inflated.macro_f1 > base.macro_f1

    def test_stratified_fold_counts_within_one(self, rng):
        y = ["a"] * 23 + ["b"] * 31 + ["c"] * 17
        folds = stratified_folds(y, ("a", "b", "c"), 5, seed=0)
        for c in ("a", "b", "c"):
            counts = [sum(1 for i in fold if y[i] == c) for fold in folds]
            assert max(counts) - min(counts) <= 1

    def test_class_smaller_than_k_rejected(self, rng):
        X = rng.normal(0, 1, (7, 3))
        y = ["a"] * 4 + ["b"] * 3
        with pytest.raises(ValueError):
            cross_validate(X, y, ("a", "b"), k=4)


class TestTrainSplit:
    def test_split_sizes_7036(self):
        assert largest_remainder(7036, (0.6, 0.2, 0.2)) == [4222, 1407, 1407]

    def test_separable_corpus_f1(self):
        rng = np.random.default_rng(31)
        X, y = make_blobs(rng, 300, {"relevant": [0] * 6, "irrelevant": [3] * 6})
        clf, val_report, test_report = train_split(
            X, y, ("relevant", "irrelevant"), seed=5
        )
        assert test_report.macro_f1 >= 0.95
        assert val_report.macro_f1 >= 0.95

    def test_deterministic_across_runs(self):
        rng = np.random.default_rng(32)
        X, y = make_blobs(rng, 50, {"a": [0, 0], "b": [1, 1]}, noise=1.5)
        r1 = train_split(X, y, ("a", "b"), seed=7)
        r2 = train_split(X, y, ("a", "b"), seed=7)
        assert np.array_equal(r1[0].coef_, r2[0].coef_)
        assert r1[2].to_json() == r2[2].to_json()

    def test_checkpoint_selection_uses_validation(self):
        rng = np.random.default_rng(33)
        X, y = make_blobs(rng, 80, {"a": [0, 0], "b": [2, 2]})
        clf, _, _ = train_split(X, y, ("a", "b"), seed=1, checkpoint_every=100)
        assert any(np.array_equal(clf.coef_, w) for w in clf.checkpoints_.values())


class TestModelIO:
    def test_roundtrip(self, tmp_path, rng):
        X, y = make_blobs(rng, 40, {"a": [0, 0, 0], "b": [2, 2, 2]})
        clf = train_classifier(X, y, classes=("a", "b"))
        path = tmp_path / "model.cfm"
        save_model(clf, path)
        loaded = load_model(path)
        assert loaded.classes_ == ("a", "b")
        assert np.array_equal(loaded.coef_, clf.coef_)
        assert np.array_equal(loaded.mu_, clf.mu_)
        assert np.array_equal(loaded.sigma_, clf.sigma_)
        probe = rng.normal(0, 1, (5, 3))
        assert np.array_equal(loaded.predict_proba(probe), clf.predict_proba(probe))

    def test_bytes_deterministic(self, tmp_path, rng):
        X, y = make_blobs(rng, 20, {"a": [0], "b": [2]})
        clf = train_classifier(X, y, classes=("a", "b"))
        p1, p2 = tmp_path / "m1.cfm", tmp_path / "m2.cfm"
        save_model(clf, p1)
        save_model(clf, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.cfm"
        path.write_bytes(b"JUNKJUNKJUNK")
        with pytest.raises(ValueError, match="magic"):
            load_model(path)

    def test_feature_dim_guard_on_inference(self, rng):
        X, y = make_blobs(rng, 20, {"a": [0, 0], "b": [2, 2]})
        clf = train_classifier(X, y, classes=("a", "b"))
        with pytest.raises(ValueError):
            clf.predict_proba(np.zeros((1, 9)))


class TestFeatureMatrix:
    def test_shape(self, rng):
        imgs = [random_raster(rng) for _ in range(3)]
        assert feature_matrix(imgs).shape == (3, FEATURE_DIM)
