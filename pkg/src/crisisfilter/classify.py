"""Trainable scorers behind the relevancy and damage filters.

The classifier is a multinomial logistic regression over a fixed
112-dimensional feature vector: the 64 low-frequency DCT coefficients
from the hash chain (pre-binarization) plus a 48-bin RGB histogram
(16 bins per channel, each channel normalized to sum 1). Training is
full-batch gradient descent on cross-entropy with L2 on the non-bias
weights; with a fixed seed the fitted model is bit-reproducible.

`SoftmaxClassifier` follows the scikit-learn estimator protocol
(fit / predict / predict_proba / get_params) so it composes with the
wider ecosystem, while the training loop itself is implemented here.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from .imagecore import box_blur7, dct2_32, resize_area, to_luma
from .metrics import EvalReport, PredictionSet, evaluate, macro_f1
from .validation import check_feature_matrix, check_labels, check_raster

__all__ = [
    "FEATURE_DIM",
    "FEATURE_SPEC",
    "DAMAGE_CLASSES",
    "RELEVANCE_CLASSES",
    "RELEVANT",
    "IRRELEVANT",
    "DEFAULT_IRRELEVANT_CATEGORIES",
    "FeatureExtractor",
    "SoftmaxClassifier",
    "extract_features",
    "feature_matrix",
    "build_relevance_dataset",
    "train_classifier",
    "cross_validate",
    "train_split",
    "stratified_folds",
    "largest_remainder",
    "loss_and_grad",
    "save_model",
    "load_model",
]

FEATURE_DIM = 112
FEATURE_SPEC = "dct64+rgbhist48/v1"

DAMAGE_CLASSES = ("severe", "mild", "none")
RELEVANT = "relevant"
IRRELEVANT = "irrelevant"
RELEVANCE_CLASSES = (RELEVANT, IRRELEVANT)

# Most-frequent object categories whose images count as irrelevant when
# they carry a "none" damage label. Configurable per deployment.
DEFAULT_IRRELEVANT_CATEGORIES = (
    "website",
    "suit",
    "lab coat",
    "envelope",
    "dust jacket",
    "candle",
    "menu",
    "vestment",
    "monitor",
    "street sign",
    "puzzle",
    "television",
    "cash machine",
    "screen",
)

MODEL_MAGIC = b"CFLM"
MODEL_VERSION = 1


# --------------------------------------------------------------------------
# features
# --------------------------------------------------------------------------


def extract_features(img) -> np.ndarray:
    """Deterministic 112-dim feature vector for one raster.

    Layout: 64 DCT coefficients (hash-chain block (1,1)..(8,8), real
    values) followed by 16-bin histograms for R, G, B over the original
    resolution (luma replicated for grayscale input).
    """
    arr = check_raster(img)
    plane = resize_area(box_blur7(to_luma(arr)), 32, 32)
    dct_block = dct2_32(plane)[1:9, 1:9].ravel()
    if arr.ndim == 2:
        channels = [arr, arr, arr]
    else:
        channels = [arr[:, :, 0], arr[:, :, 1], arr[:, :, 2]]
    n_pix = arr.shape[0] * arr.shape[1]
    hists = [
        np.bincount(c.ravel() >> 4, minlength=16) / n_pix for c in channels
    ]
    return np.concatenate([dct_block] + hists)


def feature_matrix(images) -> np.ndarray:
    """Stack extract_features over an iterable of rasters."""
    return np.array([extract_features(img) for img in images])


class FeatureExtractor(BaseEstimator):
    """Stateless transformer from rasters to the 112-dim feature space."""

    def fit(self, X, y=None):
        return self

    def transform(self, X) -> np.ndarray:
        return feature_matrix(X)

    def fit_transform(self, X, y=None) -> np.ndarray:
        return self.transform(X)


# --------------------------------------------------------------------------
# relevancy training-set construction
# --------------------------------------------------------------------------


def build_relevance_dataset(
    images,
    irrelevant_categories=DEFAULT_IRRELEVANT_CATEGORIES,
    seed: int = 42,
):
    """Derive a balanced relevant/irrelevant training set from damage labels.

    Images labeled severe or mild are the relevant candidates. Images
    labeled none whose object tags intersect `irrelevant_categories`
    form the irrelevant set (size k); k relevant candidates are then
    sampled uniformly (seeded) so the output is exactly balanced at 2k.
    Returned records are copies with the relevance field set, in the
    original input order.
    """
    categories = set(irrelevant_categories)
    relevant_pool = [r for r in images if r.damage in ("severe", "mild")]
    irrelevant = [
        r
        for r in images
        if r.damage == "none" and r.object_tags and categories & set(r.object_tags)
    ]
    if not irrelevant:
        raise ValueError("no images match the irrelevant category list")
    if len(relevant_pool) < len(irrelevant):
        raise ValueError(
            f"cannot balance: {len(relevant_pool)} relevant candidates for "
            f"{len(irrelevant)} irrelevant images"
        )
    rng = np.random.default_rng(seed)
    chosen = rng.choice(len(relevant_pool), size=len(irrelevant), replace=False)
    keep_relevant = {relevant_pool[i].id for i in chosen}
    irrelevant_ids = {r.id for r in irrelevant}
    out = []
    for r in images:
        if r.id in keep_relevant:
            out.append(replace(r, relevance=RELEVANT))
        elif r.id in irrelevant_ids:
            out.append(replace(r, relevance=IRRELEVANT))
    return out


# --------------------------------------------------------------------------
# multinomial logistic regression
# --------------------------------------------------------------------------


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def loss_and_grad(
    w: np.ndarray, xb: np.ndarray, y_idx: np.ndarray, l2: float
) -> tuple[float, np.ndarray]:
    """Cross-entropy + l2*||W||^2 (bias column unregularized) and its gradient.

    `xb` already carries the bias column of ones; `w` has shape
    (n_classes, dim + 1) with the bias last.
    """
    n = xb.shape[0]
    probs = _softmax(xb @ w.T)
    ce = -float(np.log(probs[np.arange(n), y_idx]).mean())
    reg = l2 * float((w[:, :-1] ** 2).sum())
    grad_p = probs
    grad_p[np.arange(n), y_idx] -= 1.0
    grad = grad_p.T @ xb / n
    grad[:, :-1] += 2.0 * l2 * w[:, :-1]
    return ce + reg, grad


def _run_gd(
    xb: np.ndarray,
    y_idx: np.ndarray,
    n_classes: int,
    l2: float,
    epochs: int,
    learning_rate: float,
    lr_decay: float,
    lr_decay_every: int,
    checkpoint_epochs=(),
) -> tuple[np.ndarray, list[float], dict[int, np.ndarray]]:
    w = np.zeros((n_classes, xb.shape[1]))
    lr = learning_rate
    losses: list[float] = []
    checkpoints: dict[int, np.ndarray] = {}
    wanted = set(checkpoint_epochs)
    for epoch in range(epochs):
        if epoch > 0 and lr_decay_every > 0 and epoch % lr_decay_every == 0:
            lr *= lr_decay
        loss, grad = loss_and_grad(w, xb, y_idx, l2)
        losses.append(loss)
        w -= lr * grad
        if (epoch + 1) in wanted:
            checkpoints[epoch + 1] = w.copy()
    losses.append(loss_and_grad(w, xb, y_idx, l2)[0])
    return w, losses, checkpoints


class SoftmaxClassifier(ClassifierMixin, BaseEstimator):
    """Multinomial logistic regression trained by full-batch gradient descent.

    Features are standardized per dimension inside the model (the mean
    and scale are stored with the weights), so inference needs no side
    files. Weights start at zero, so a zero-epoch fit scores every input
    uniformly.
    """

    def __init__(
        self,
        classes=None,
        l2: float = 1e-4,
        epochs: int = 500,
        learning_rate: float = 0.1,
        lr_decay: float = 0.5,
        lr_decay_every: int = 100,
        seed: int = 0,
    ):
        self.classes = classes
        self.l2 = l2
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.lr_decay_every = lr_decay_every
        self.seed = seed

    # -- fitting ----------------------------------------------------------

    def _prepare(self, X, y):
        X = check_feature_matrix(X)
        classes = (
            tuple(self.classes)
            if self.classes is not None
            else tuple(sorted(set(y)))
        )
        if len(classes) < 2:
            raise ValueError("need at least two classes")
        y = check_labels(y, classes)
        if len(y) != X.shape[0]:
            raise ValueError("feature rows and labels differ in length")
        counts = {c: 0 for c in classes}
        for label in y:
            counts[label] += 1
        short = [c for c, n in counts.items() if n < 2]
        if short:
            raise ValueError(f"classes with fewer than 2 examples: {short}")
        index = {c: i for i, c in enumerate(classes)}
        y_idx = np.array([index[v] for v in y], dtype=np.intp)
        mu = X.mean(axis=0)
        sigma = X.std(axis=0)
        sigma = np.where(sigma < 1e-12, 1.0, sigma)
        xs = (X - mu) / sigma
        xb = np.hstack([xs, np.ones((xs.shape[0], 1))])
        return classes, y_idx, mu, sigma, xb

    def fit(self, X, y, checkpoint_epochs=()):
        classes, y_idx, mu, sigma, xb = self._prepare(X, y)
        w, losses, checkpoints = _run_gd(
            xb,
            y_idx,
            len(classes),
            self.l2,
            self.epochs,
            self.learning_rate,
            self.lr_decay,
            self.lr_decay_every,
            checkpoint_epochs,
        )
        self.classes_ = classes
        self.mu_ = mu
        self.sigma_ = sigma
        self.coef_ = w
        self.loss_curve_ = losses
        self.checkpoints_ = checkpoints
        self.feature_spec_ = (
            FEATURE_SPEC if xb.shape[1] - 1 == FEATURE_DIM else f"raw{xb.shape[1] - 1}"
        )
        return self

    # -- inference --------------------------------------------------------

    def _check_fitted(self):
        if not hasattr(self, "coef_"):
            raise ValueError("classifier is not fitted")

    def predict_proba(self, X) -> np.ndarray:
        self._check_fitted()
        X = check_feature_matrix(X, dim=len(self.mu_))
        xs = (X - self.mu_) / self.sigma_
        xb = np.hstack([xs, np.ones((xs.shape[0], 1))])
        return _softmax(xb @ self.coef_.T)

    def predict(self, X) -> list:
        probs = self.predict_proba(X)
        return [self.classes_[i] for i in probs.argmax(axis=1)]

    def relevant_probability(self, X) -> np.ndarray:
        """Probability of the 'relevant' class (binary relevancy models)."""
        self._check_fitted()
        if RELEVANT not in self.classes_:
            raise ValueError("model has no 'relevant' class")
        return self.predict_proba(X)[:, self.classes_.index(RELEVANT)]

    def train_meta(self) -> dict:
        return {
            "seed": self.seed,
            "epochs": self.epochs,
            "l2": self.l2,
            "learning_rate": self.learning_rate,
            "lr_decay": self.lr_decay,
            "lr_decay_every": self.lr_decay_every,
        }


def train_classifier(X, y, classes=None, **hyper) -> SoftmaxClassifier:
    """Fit a SoftmaxClassifier with the default hyperparameters (overridable)."""
    return SoftmaxClassifier(classes=classes, **hyper).fit(X, y)


# --------------------------------------------------------------------------
# splits and validation protocols
# --------------------------------------------------------------------------


def largest_remainder(total: int, fractions) -> list[int]:
    """Integer apportionment of `total` by largest remainder, ties by position."""
    fractions = list(fractions)
    quotas = [total * f for f in fractions]
    floors = [int(np.floor(q)) for q in quotas]
    leftover = total - sum(floors)
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - floors[i]), i))
    for i in order[:leftover]:
        floors[i] += 1
    return floors


def stratified_folds(y, classes, k: int, seed: int = 42) -> list[np.ndarray]:
    """Stratified k-fold assignment: per-class shuffle then round-robin.

    Per-class counts across folds differ by at most one. Raises when any
    class has fewer than k members.
    """
    if k < 2:
        raise ValueError("need at least 2 folds")
    y = list(y)
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    for c in classes:
        idx = np.array([i for i, v in enumerate(y) if v == c])
        if len(idx) < k:
            raise ValueError(f"class {c!r} has {len(idx)} members, fewer than k={k}")
        rng.shuffle(idx)
        for j, i in enumerate(idx):
            folds[j % k].append(int(i))
    return [np.array(sorted(f), dtype=np.intp) for f in folds]


def cross_validate(
    X, y, classes, k: int = 5, seed: int = 42, **hyper
) -> EvalReport:
    """Stratified k-fold cross-validation with pooled test predictions.

    Each item is predicted exactly once (by the model trained without its
    fold); metrics are computed once over the pooled predictions.
    """
    X = check_feature_matrix(X)
    classes = tuple(classes)
    y = check_labels(y, classes)
    folds = stratified_folds(y, classes, k, seed)
    n = len(y)
    y_pred: list = [None] * n
    scores = np.zeros((n, len(classes)))
    all_idx = np.arange(n)
    for fold in folds:
        mask = np.ones(n, dtype=bool)
        mask[fold] = False
        train_idx = all_idx[mask]
        clf = SoftmaxClassifier(classes=classes, **hyper)
        clf.fit(X[train_idx], [y[i] for i in train_idx])
        probs = clf.predict_proba(X[fold])
        scores[fold] = probs
        for row, i in enumerate(fold):
            y_pred[i] = classes[int(probs[row].argmax())]
    return evaluate(PredictionSet(classes, y, y_pred, scores))


def _stratified_three_way(y, classes, fractions, seed):
    """Allocate items to train/val/test, stratified, hitting the global
    largest-remainder sizes exactly (splits are apportioned sequentially)."""
    n = len(y)
    sizes = largest_remainder(n, fractions)
    rng = np.random.default_rng(seed)
    per_class: dict = {}
    for c in classes:
        idx = np.array([i for i, v in enumerate(y) if v == c])
        rng.shuffle(idx)
        per_class[c] = list(idx)
    remaining = {c: len(per_class[c]) for c in classes}
    splits: list[list[int]] = []
    for s in range(len(sizes) - 1):
        total_remaining = sum(remaining.values())
        take = largest_remainder(
            sizes[s], [remaining[c] / total_remaining for c in classes]
        )
        chosen: list[int] = []
        for c, t in zip(classes, take):
            chosen.extend(per_class[c][:t])
            per_class[c] = per_class[c][t:]
            remaining[c] -= t
        splits.append(sorted(chosen))
    splits.append(sorted(i for c in classes for i in per_class[c]))
    return [np.array(s, dtype=np.intp) for s in splits]


def train_split(
    X,
    y,
    classes,
    seed: int = 42,
    fractions=(0.6, 0.2, 0.2),
    checkpoint_every: int = 50,
    **hyper,
) -> tuple[SoftmaxClassifier, EvalReport, EvalReport]:
    """Train/validation/test protocol with checkpoint selection.

    A stratified 60/20/20 split (largest-remainder rounding); training
    checkpoints every `checkpoint_every` epochs; the checkpoint with the
    best validation macro-F1 (earliest on ties) becomes the final model,
    reported on the held-out test split.
    """
    X = check_feature_matrix(X)
    classes = tuple(classes)
    y = check_labels(y, classes)
    idx_train, idx_val, idx_test = _stratified_three_way(y, classes, fractions, seed)
    clf = SoftmaxClassifier(classes=classes, **hyper)
    epochs = clf.epochs
    marks = sorted({e for e in range(checkpoint_every, epochs + 1, checkpoint_every)} | {epochs})
    clf.fit(X[idx_train], [y[i] for i in idx_train], checkpoint_epochs=marks)
    y_val = [y[i] for i in idx_val]
    best_f1 = -1.0
    best_w = None
    for epoch in marks:
        w = clf.checkpoints_[epoch]
        clf.coef_ = w
        pred = clf.predict(X[idx_val])
        f1 = macro_f1(classes, y_val, pred)
        if f1 > best_f1:
            best_f1 = f1
            best_w = w
    clf.coef_ = best_w

    def _report(idx) -> EvalReport:
        truths = [y[i] for i in idx]
        probs = clf.predict_proba(X[idx])
        preds = [classes[int(p.argmax())] for p in probs]
        return evaluate(PredictionSet(classes, truths, preds, probs))

    return clf, _report(idx_val), _report(idx_test)


# --------------------------------------------------------------------------
# model persistence
# --------------------------------------------------------------------------


def save_model(clf: SoftmaxClassifier, path) -> None:
    """Write a fitted model: JSON header + mu/sigma/weights as float64 LE."""
    clf._check_fitted()
    header = json.dumps(
        {
            "classes": list(clf.classes_),
            "feature_spec": clf.feature_spec_,
            "dim": len(clf.mu_),
            "train_meta": clf.train_meta(),
        },
        sort_keys=True,
    ).encode("utf-8")
    blob = b"".join(
        [
            MODEL_MAGIC,
            struct.pack("<BI", MODEL_VERSION, len(header)),
            header,
            np.ascontiguousarray(clf.mu_, dtype="<f8").tobytes(),
            np.ascontiguousarray(clf.sigma_, dtype="<f8").tobytes(),
            np.ascontiguousarray(clf.coef_, dtype="<f8").tobytes(),
        ]
    )
    Path(path).write_bytes(blob)


def load_model(source) -> SoftmaxClassifier:
    """Load a model written by save_model; accepts a path or raw bytes."""
    data = source if isinstance(source, bytes) else Path(source).read_bytes()
    if data[:4] != MODEL_MAGIC:
        raise ValueError(f"bad model magic {data[:4]!r}")
    version, header_len = struct.unpack_from("<BI", data, 4)
    if version != MODEL_VERSION:
        raise ValueError(f"unsupported model version {version}")
    pos = 9
    header = json.loads(data[pos : pos + header_len].decode("utf-8"))
    pos += header_len
    dim = header["dim"]
    classes = tuple(header["classes"])
    k = len(classes)
    need = 8 * (2 * dim + k * (dim + 1))
    if len(data) - pos < need:
        raise ValueError("model file truncated")
    mu = np.frombuffer(data, dtype="<f8", count=dim, offset=pos).copy()
    pos += 8 * dim
    sigma = np.frombuffer(data, dtype="<f8", count=dim, offset=pos).copy()
    pos += 8 * dim
    w = (
        np.frombuffer(data, dtype="<f8", count=k * (dim + 1), offset=pos)
        .reshape(k, dim + 1)
        .copy()
    )
    meta = header["train_meta"]
    clf = SoftmaxClassifier(
        classes=classes,
        l2=meta["l2"],
        epochs=meta["epochs"],
        learning_rate=meta["learning_rate"],
        lr_decay=meta["lr_decay"],
        lr_decay_every=meta["lr_decay_every"],
        seed=meta["seed"],
    )
    clf.classes_ = classes
    clf.mu_ = mu
    clf.sigma_ = sigma
    clf.coef_ = w
    clf.loss_curve_ = []
    clf.checkpoints_ = {}
    clf.feature_spec_ = header["feature_spec"]
    return clf
