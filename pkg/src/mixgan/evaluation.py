"""Quantitative evaluation: domain classifier, feature-space MMD, success proxy, PCA export.

Generated samples are routed to the training domain a binary classifier
finds nearer; MMD is then measured in the classifier's last hidden layer
between each routed subgroup and a size-matched sample of its domain.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from scipy.ndimage import zoom
from scipy.spatial.distance import cdist, pdist
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted
from torch import nn

from .data import (
    CONTENT_SHAPES,
    ImageBatch,
    colorize,
    foreground_mask,
    palette_of,
    value_channel,
)
from .exceptions import ArgumentError, DegenerateKernelError, IoError, ShapeError
from .losses import Adam
from .validation import as_array, broadcast_to_rgb, check_features, check_images

DOMAIN_A, DOMAIN_B = 0, 1


# ------------------------------------------------------------- classifier


class _ConvNet(nn.Module):
    def __init__(self, channels, size, n_classes, width, feature_dim):
        super().__init__()
        act = lambda: nn.LeakyReLU(0.2)
        self.conv = nn.Sequential(
            nn.Conv2d(channels, width, 4, 2, 1), act(),
            nn.Conv2d(width, 2 * width, 4, 2, 1), nn.BatchNorm2d(2 * width), act(),
            nn.Conv2d(2 * width, 4 * width, 4, 2, 1), nn.BatchNorm2d(4 * width), act(),
        )
        s = size // 8
        self.hidden = nn.Sequential(nn.Linear(4 * width * s * s, feature_dim), nn.ReLU())
        self.head = nn.Linear(feature_dim, n_classes)

    def features(self, x):
        return self.hidden(self.conv(x).flatten(1))

    def forward(self, x):
        return self.head(self.features(x))


class ConvClassifier(ClassifierMixin, BaseEstimator):
    """Small convolutional classifier over ``(n, c, s, s)`` images in [-1, 1].

    ``transform`` returns last-hidden-layer activations. A ``holdout``
    fraction of the training data is kept aside and scored after fitting
    (``holdout_accuracy_``).
    """

    def __init__(self, width=16, feature_dim=128, epochs=6, batch_size=64, lr=1e-3,
                 holdout=0.1, seed=0):
        self.width = width
        self.feature_dim = feature_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.holdout = holdout
        self.seed = seed

    def _check_X(self, X, reset=False):
        X = check_images(X, channels=(1, 3))
        if reset:
            self.n_channels_, self.image_size_ = X.shape[1], X.shape[2]
        elif X.shape[1:] != (self.n_channels_, self.image_size_, self.image_size_):
            raise ShapeError(
                f"expected images of shape (n, {self.n_channels_}, {self.image_size_}, "
                f"{self.image_size_}), got {X.shape}"
            )
        return X

    def fit(self, X, y):
        X = self._check_X(X, reset=True)
        y = np.asarray(y)
        if y.shape != (len(X),):
            raise ShapeError(f"y must have shape ({len(X)},), got {y.shape}")
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ArgumentError("need at least two classes to fit a classifier")
        if self.image_size_ % 8:
            raise ShapeError(f"image size must be a multiple of 8, got {self.image_size_}")
        rng = np.random.default_rng([int(self.seed), 11])
        order = rng.permutation(len(X))
        n_hold = int(round(self.holdout * len(X)))
        hold, train = order[:n_hold], order[n_hold:]
        if len(train) < 2:
            raise ArgumentError("too few samples left for training")

        gen = torch.Generator().manual_seed(int(self.seed))
        net = _ConvNet(self.n_channels_, self.image_size_, len(self.classes_), self.width, self.feature_dim)
        for m in net.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                nn.init.normal_(m.weight, 0.0, 0.02, generator=gen)
                nn.init.zeros_(m.bias)
        opt = Adam(net.named_parameters(), lr=self.lr, betas=(0.9, 0.999))
        Xt, yt = torch.from_numpy(X), torch.from_numpy(y_idx.astype(np.int64))
        bs = min(self.batch_size, len(train))
        net.train()
        for epoch in range(self.epochs):
            perm = train[np.random.default_rng([int(self.seed), 12, epoch]).permutation(len(train))]
            for start in range(0, len(perm) - bs + 1, bs):
                idx = torch.from_numpy(np.sort(perm[start:start + bs]))
                loss = nn.functional.cross_entropy(net(Xt[idx]), yt[idx])
                opt.zero_grad()
                loss.backward()
                opt.step()
        self.net_ = net.eval()
        self.feature_dim_ = self.feature_dim
        self.holdout_accuracy_ = float(self.score(X[hold], y[hold])) if n_hold else float("nan")
        return self

    @torch.no_grad()
    def _run(self, X, fn, chunk=512):
        check_is_fitted(self, "net_")
        X = self._check_X(X)
        self.net_.eval()
        out = [fn(torch.from_numpy(np.ascontiguousarray(X[i:i + chunk]))) for i in range(0, len(X), chunk)]
        return torch.cat(out).double().numpy()

    def predict_proba(self, X):
        return self._run(X, lambda t: torch.softmax(self.net_(t).double(), dim=1))

    def predict(self, X):
        return self.classes_[self.predict_proba(X).argmax(axis=1)]

    def transform(self, X):
        return self._run(X, self.net_.features)

    def state(self) -> dict:
        """Arrays and metadata sufficient to rebuild a fitted classifier."""
        check_is_fitted(self, "net_")
        return {
            "params": self.get_params(),
            "classes": self.classes_.tolist(),
            "n_channels": self.n_channels_,
            "image_size": self.image_size_,
            "holdout_accuracy": self.holdout_accuracy_,
            "weights": {k: v.numpy().copy() for k, v in self.net_.state_dict().items()},
        }

    @classmethod
    def from_state(cls, state) -> "ConvClassifier":
        clf = cls(**state["params"])
        clf.classes_ = np.asarray(state["classes"])
        clf.n_channels_, clf.image_size_ = state["n_channels"], state["image_size"]
        clf.holdout_accuracy_ = state["holdout_accuracy"]
        clf.feature_dim_ = clf.feature_dim
        net = _ConvNet(clf.n_channels_, clf.image_size_, len(clf.classes_), clf.width, clf.feature_dim)
        net.load_state_dict({k: torch.as_tensor(v) for k, v in state["weights"].items()})
        clf.net_ = net.eval()
        return clf


def save_classifier(clf: ConvClassifier, path) -> None:
    state = clf.state()
    meta = {k: v for k, v in state.items() if k != "weights"}
    try:
        np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
                 **{f"w:{k}": v for k, v in state["weights"].items()})
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_classifier(path) -> ConvClassifier:
    with np.load(path) as npz:
        meta = json.loads(npz["__meta__"].tobytes().decode())
        meta["weights"] = {k[2:]: npz[k] for k in npz.files if k.startswith("w:")}
    return ConvClassifier.from_state(meta)


def _domain_inputs(ds):
    return broadcast_to_rgb(check_images(ds, channels=(1, 3)))


def train_domain_classifier(dsA, dsB, seed=0, **kwargs) -> ConvClassifier:
    """Binary classifier telling domain A (label 0) from domain B (label 1).

    Grayscale inputs are replicated to three channels first.
    """
    A, B = as_array(dsA), as_array(dsB)
    if len(A) == 0 or len(B) == 0:
        raise ArgumentError("both domains need at least one image")
    X = np.concatenate([_domain_inputs(A), _domain_inputs(B)])
    y = np.concatenate([np.full(len(A), DOMAIN_A), np.full(len(B), DOMAIN_B)])
    return ConvClassifier(seed=seed, **kwargs).fit(X, y)


def assign_domain(clf: ConvClassifier, samples):
    """Route samples to the nearer domain; ties (p = 0.5) go to A.

    Returns ``(labels, fraction_A)``.
    """
    X = as_array(samples)
    if X.ndim != 4:
        raise ShapeError(f"samples must be rank 4, got shape {X.shape}")
    if len(X) == 0:
        raise ArgumentError("no samples to assign")
    proba = clf.predict_proba(_domain_inputs(X))
    col_a = int(np.flatnonzero(clf.classes_ == DOMAIN_A)[0])
    labels = np.where(proba[:, col_a] >= 0.5, DOMAIN_A, DOMAIN_B)
    return labels, float(np.mean(labels == DOMAIN_A))


def extract_features(clf: ConvClassifier, samples) -> np.ndarray:
    return clf.transform(_domain_inputs(as_array(samples)))


# -------------------------------------------------------------------- MMD


def median_bandwidth(X, Y) -> float:
    Z = np.concatenate([X, Y])
    sigma = float(np.median(pdist(Z)))
    if not sigma > 0:
        raise DegenerateKernelError("median pairwise distance is zero")
    return sigma


def mmd_squared(X, Y, sigma=None) -> float:
    """Biased squared MMD with a Gaussian kernel; median heuristic when ``sigma`` is None."""
    min_rows = 2 if sigma is None else 1
    X = check_features(X, min_rows, "X")
    Y = check_features(Y, min_rows, "Y")
    if X.shape[1] != Y.shape[1]:
        raise ShapeError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    if sigma is None:
        sigma = median_bandwidth(X, Y)
    elif sigma <= 0:
        raise DegenerateKernelError(f"bandwidth must be positive, got {sigma}")
    gamma = 1.0 / (2.0 * sigma * sigma)
    kxx = np.exp(-gamma * cdist(X, X, "sqeuclidean")).mean()
    kyy = np.exp(-gamma * cdist(Y, Y, "sqeuclidean")).mean()
    kxy = np.exp(-gamma * cdist(X, Y, "sqeuclidean")).mean()
    return float(kxx + kyy - 2.0 * kxy)


def mmd(X, Y, sigma=None) -> float:
    """Square root of :func:`mmd_squared` (clipped at zero)."""
    return math.sqrt(max(mmd_squared(X, Y, sigma), 0.0))


# ----------------------------------------------------------------- report


@dataclass
class EvalReport:
    n_generated: int
    n_domain_A: int
    n_domain_B: int
    assignment_fraction_A: float
    assignment_fraction_B: float
    n_assigned_A: int
    n_assigned_B: int
    mmd_to_domain_A: float | None
    mmd_to_domain_B: float | None
    bandwidth_A: float | None
    bandwidth_B: float | None
    baseline_mmd_A: float | None
    baseline_mmd_B: float | None
    mmd_all_to_domain_A: float
    mmd_all_to_domain_B: float
    classifier_holdout_accuracy: float
    success_proxy_rate: float | None = None
    feature_csv: str | None = None
    pca_png: str | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            try:
                with open(path, "w", encoding="utf-8", newline="\n") as fh:
                    fh.write(text + "\n")
            except OSError as exc:
                raise IoError(f"cannot write {path}: {exc}") from exc
        return text


REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": [
        "n_generated", "assignment_fraction_A", "assignment_fraction_B",
        "mmd_to_domain_A", "mmd_to_domain_B", "success_proxy_rate",
    ],
    "properties": {
        "n_generated": {"type": "integer", "minimum": 1},
        "n_domain_A": {"type": "integer", "minimum": 1},
        "n_domain_B": {"type": "integer", "minimum": 1},
        "n_assigned_A": {"type": "integer", "minimum": 0},
        "n_assigned_B": {"type": "integer", "minimum": 0},
        "assignment_fraction_A": {"type": "number", "minimum": 0, "maximum": 1},
        "assignment_fraction_B": {"type": "number", "minimum": 0, "maximum": 1},
        "mmd_to_domain_A": {"type": ["number", "null"], "minimum": 0},
        "mmd_to_domain_B": {"type": ["number", "null"], "minimum": 0},
        "bandwidth_A": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "bandwidth_B": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "baseline_mmd_A": {"type": ["number", "null"], "minimum": 0},
        "baseline_mmd_B": {"type": ["number", "null"], "minimum": 0},
        "mmd_all_to_domain_A": {"type": "number", "minimum": 0},
        "mmd_all_to_domain_B": {"type": "number", "minimum": 0},
        "classifier_holdout_accuracy": {"type": "number"},
        "success_proxy_rate": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "feature_csv": {"type": ["string", "null"]},
        "pca_png": {"type": ["string", "null"]},
        "extra": {"type": "object"},
    },
    "additionalProperties": False,
}


def _subsample(rng, F, m):
    if m >= len(F):
        return F
    return F[np.sort(rng.choice(len(F), size=m, replace=False))]


def _half_split(rng, F, m):
    half = len(F) // 2
    m = min(m, half) if m >= 2 else half
    if m < 2:
        return None
    order = rng.permutation(len(F))
    return mmd(F[np.sort(order[:m])], F[np.sort(order[m:2 * m])])


def mmd_report(gen, dsA, dsB, clf: ConvClassifier, seed=0) -> EvalReport:
    """Route ``gen`` through ``clf`` and measure feature-space MMD per domain.

    Subgroups with fewer than two members report ``None``. Each routed MMD
    is paired with a half-split baseline of the same domain at the same
    sample size. ``mmd_all_to_domain_*`` compares all generated samples
    with each domain regardless of routing.
    """
    rng = np.random.default_rng([int(seed), 21])
    labels, frac_a = assign_domain(clf, gen)
    Fg = extract_features(clf, gen)
    Fa, Fb = extract_features(clf, dsA), extract_features(clf, dsB)
    routed = {}
    for key, dom, F in (("A", DOMAIN_A, Fa), ("B", DOMAIN_B, Fb)):
        sub = Fg[labels == dom]
        m = len(sub)
        if m >= 2:
            ref = _subsample(rng, F, m)
            sigma = median_bandwidth(sub, ref)
            routed[key] = (mmd(sub, ref, sigma), sigma)
        else:
            routed[key] = (None, None)
        routed[key] += (_half_split(rng, F, m),)
    n = len(Fg)
    return EvalReport(
        n_generated=n,
        n_domain_A=len(Fa),
        n_domain_B=len(Fb),
        assignment_fraction_A=frac_a,
        assignment_fraction_B=1.0 - frac_a,
        n_assigned_A=int(np.sum(labels == DOMAIN_A)),
        n_assigned_B=int(np.sum(labels == DOMAIN_B)),
        mmd_to_domain_A=routed["A"][0],
        mmd_to_domain_B=routed["B"][0],
        bandwidth_A=routed["A"][1],
        bandwidth_B=routed["B"][1],
        baseline_mmd_A=routed["A"][2],
        baseline_mmd_B=routed["B"][2],
        mmd_all_to_domain_A=mmd(Fg, _subsample(rng, Fa, n)),
        mmd_all_to_domain_B=mmd(Fg, _subsample(rng, Fb, n)),
        classifier_holdout_accuracy=clf.holdout_accuracy_,
    )


# ---------------------------------------------------------- success proxy

REJECT_LABEL = len(CONTENT_SHAPES)


def shape_rendering(images) -> np.ndarray:
    """Single-channel rendering used by the shape test.

    The HSV value channel, stretched per image to span [-1, 1] so the test
    judges the silhouette rather than the fill brightness. Binary images are
    unchanged; constant images map to all -1.
    """
    v = value_channel(check_images(images, channels=(1, 3))).astype(np.float64)
    lo = v.min(axis=(1, 2, 3), keepdims=True)
    span = v.max(axis=(1, 2, 3), keepdims=True) - lo
    out = np.where(span > 0, 2.0 * (v - lo) / np.where(span > 0, span, 1.0) - 1.0, -1.0)
    return out.astype(np.float32)


def clutter(seed, n, size) -> np.ndarray:
    """Glyph-free binary images; the kind cycles with the index (noise blobs, speckle, strokes)."""
    rng = np.random.default_rng([int(seed), 31])
    out = np.empty((n, 1, size, size), dtype=np.float32)
    for i in range(n):
        kind = i % 3
        if kind == 0:
            coarse = rng.standard_normal((rng.integers(3, 7),) * 2)
            field = zoom(coarse, size / coarse.shape[0], order=1)[:size, :size]
            mask = field > np.quantile(field, rng.uniform(0.55, 0.9))
        elif kind == 1:
            mask = rng.random((size, size)) < rng.uniform(0.03, 0.25)
        else:
            mask = np.zeros((size, size), dtype=bool)
            for _ in range(rng.integers(2, 6)):
                r, c = rng.integers(0, size, size=2)
                length = rng.integers(2, size // 2)
                if rng.random() < 0.5:
                    mask[r, c:c + length] = True
                else:
                    mask[r:r + length, c] = True
        out[i, 0] = np.where(mask, 1.0, -1.0)
    return out


def train_shape_classifier(content: ImageBatch, style: ImageBatch, seed=0, epochs=20, **kwargs) -> ConvClassifier:
    """Classifier over the content glyph classes plus one reject class.

    Content glyphs are seen both raw and painted with style palettes. The
    reject class holds style-domain glyphs (painted and as bare masks) and
    glyph-free clutter, so neither texture nor color separates the classes.
    """
    if content.labels is None:
        raise ArgumentError("content batch needs shape labels")
    painted = colorize(content, seed=seed + 101)
    style_masks = np.where(foreground_mask(style)[:, None], 1.0, -1.0).astype(np.float32)
    junk = clutter(seed, len(content), content.size)
    X = np.concatenate([
        shape_rendering(content), shape_rendering(painted),
        shape_rendering(style), style_masks, junk,
    ])
    y = np.concatenate([
        content.labels, content.labels,
        np.full(len(style) * 2 + len(junk), REJECT_LABEL),
    ])
    return ConvClassifier(seed=seed, epochs=epochs, **kwargs).fit(X, y)


def success_mask(gen, shape_clf: ConvClassifier, palette_oracle=palette_of, confidence=0.8) -> np.ndarray:
    """Per-sample success: confident content glyph AND a recognised style palette."""
    X = check_images(gen, channels=(1, 3))
    proba = shape_clf.predict_proba(shape_rendering(X))
    content_cols = np.flatnonzero(shape_clf.classes_ != REJECT_LABEL)
    shape_ok = proba[:, content_cols].max(axis=1) >= confidence
    hue_ok = np.asarray(palette_oracle(X)) >= 0
    return shape_ok & hue_ok


def success_proxy(gen, shape_clf: ConvClassifier, palette_oracle=palette_of, confidence=0.8) -> float:
    return float(success_mask(gen, shape_clf, palette_oracle, confidence).mean())


# ------------------------------------------------------------ embeddings


def pca_2d(features) -> np.ndarray:
    """Project onto the top two principal axes of the feature covariance.

    Each axis is signed so its largest-magnitude loading is positive.
    """
    F = check_features(features, min_rows=2, name="features")
    if F.shape[1] < 2:
        raise ShapeError("need at least two feature dimensions")
    centered = F - F.mean(axis=0)
    cov = centered.T @ centered / (len(F) - 1)
    _, vecs = np.linalg.eigh(cov)
    axes = vecs[:, ::-1][:, :2].copy()
    for k in range(2):
        if axes[np.argmax(np.abs(axes[:, k])), k] < 0:
            axes[:, k] = -axes[:, k]
    return centered @ axes


def export_features_csv(features, labels, path) -> None:
    F = check_features(features, min_rows=1, name="features")
    labels = np.asarray(labels)
    if len(labels) != len(F):
        raise ShapeError("labels and features disagree on row count")
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["label"] + [f"f{i + 1}" for i in range(F.shape[1])])
            for label, row in zip(labels, F):
                writer.writerow([label] + [repr(float(v)) for v in row])
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def read_features_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    labels = [r[0] for r in rows]
    return np.array([[float(v) for v in r[1:]] for r in rows]), labels


def plot_embedding(points, labels, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    points = np.asarray(points)
    labels = np.asarray(labels)
    fig, ax = plt.subplots(figsize=(5, 5))
    for name, color in zip(sorted(set(labels.tolist())), ("tab:red", "tab:olive", "tab:gray", "tab:blue")):
        sel = labels == name
        ax.scatter(points[sel, 0], points[sel, 1], s=6, alpha=0.6, color=color, label=str(name))
    ax.legend(markerscale=3)
    ax.set_xticks([])
    ax.set_yticks([])
    try:
        fig.savefig(path, dpi=100)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    finally:
        plt.close(fig)
