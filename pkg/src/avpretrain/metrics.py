"""Evaluation suite: retrieval recall, alignment probe, KLD, Fréchet distance.

All metrics are pure numpy functions of their inputs. Probe and classifier
training are deterministic (fixed seeds, full-batch updates), so every
reported number is reproducible bit-for-bit from the same inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ProtocolError

PROB_FLOOR = 1e-10
EIG_TOLERANCE = -1e-8
DEFAULT_KS = (1, 5, 10)


# ---------------------------------------------------------------------------
# retrieval

@dataclass
class EmbeddingTable:
    rows: np.ndarray   # (N, D) unit-norm
    ids: np.ndarray    # (N,) unique integers
    modality: str = ""

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.rows.ndim != 2 or self.rows.shape[0] != self.ids.shape[0]:
            raise ValueError("rows and ids must agree on the sample count")
        if len(np.unique(self.ids)) != len(self.ids):
            raise ValueError("embedding table ids must be unique")
        norms = np.linalg.norm(self.rows, axis=1)
        self.rows = self.rows / (norms[:, None] + 1e-12)


def recall_at_k(queries: EmbeddingTable, gallery: EmbeddingTable,
                ks: tuple[int, ...] = DEFAULT_KS) -> dict[int, float]:
    """Percentage of queries whose true match ranks within the top k.

    Gallery items are ranked by cosine similarity descending; ties break by
    ascending gallery index (stable sort), so results are platform-stable.
    """
    id_to_index = {int(g): i for i, g in enumerate(gallery.ids)}
    try:
        match_index = np.array([id_to_index[int(q)] for q in queries.ids])
    except KeyError as exc:
        raise ProtocolError(f"query id {exc} missing from gallery") from exc
    scores = queries.rows @ gallery.rows.T
    order = np.argsort(-scores, axis=1, kind="stable")
    position = np.empty_like(order)
    n_gallery = gallery.rows.shape[0]
    rows = np.arange(order.shape[0])[:, None]
    position[rows, order] = np.arange(n_gallery)[None, :]
    match_rank = position[np.arange(len(match_index)), match_index] + 1
    return {int(k): 100.0 * float(np.mean(match_rank <= k)) for k in ks}


# ---------------------------------------------------------------------------
# alignment probe (logistic head on concatenated embeddings)

@dataclass
class ProbeParams:
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    std: np.ndarray


def probe_features(video_emb: np.ndarray, audio_emb: np.ndarray) -> np.ndarray:
    """Concatenated embeddings plus their elementwise product.

    The product term lets the linear head express similarity-style decisions,
    which pair synchronization fundamentally is.
    """
    return np.concatenate([video_emb, audio_emb, video_emb * audio_emb], axis=1)


def _adam_minimize(grad_fn, x0: np.ndarray, iterations: int, lr: float) -> np.ndarray:
    x = x0.copy()
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    b1, b2, eps = 0.9, 0.999, 1e-8
    for step in range(1, iterations + 1):
        g = grad_fn(x)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** step)
        v_hat = v / (1 - b2 ** step)
        x = x - lr * m_hat / (np.sqrt(v_hat) + eps)
    return x


def train_alignment_probe(features: np.ndarray, labels: np.ndarray,
                          iterations: int = 500, lr: float = 0.05,
                          weight_decay: float = 1e-4) -> ProbeParams:
    """Fit the binary synchronization probe; zero init keeps it deterministic."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if set(np.unique(labels)) - {0.0, 1.0}:
        raise ValueError("probe labels must be binary")
    mean = features.mean(axis=0)
    std = features.std(axis=0) + 1e-8
    x = (features - mean) / std
    n, d = x.shape

    def grad(wb):
        w, b = wb[:-1], wb[-1]
        z = x @ w + b
        p = 1.0 / (1.0 + np.exp(-z))
        err = (p - labels) / n
        return np.concatenate([x.T @ err + weight_decay * w, [err.sum()]])

    wb = _adam_minimize(grad, np.zeros(d + 1), iterations, lr)
    return ProbeParams(weights=wb[:-1], bias=float(wb[-1]), mean=mean, std=std)


def probe_predict(params: ProbeParams, features: np.ndarray) -> np.ndarray:
    """Probability that each pair is aligned."""
    x = (np.asarray(features, dtype=np.float64) - params.mean) / params.std
    return 1.0 / (1.0 + np.exp(-(x @ params.weights + params.bias)))


def alignment_accuracy(params: ProbeParams, features: np.ndarray,
                       labels: np.ndarray) -> float:
    """Percentage of correct aligned-vs-misaligned decisions."""
    labels = np.asarray(labels)
    if len(np.unique(labels)) < 2:
        raise ProtocolError("alignment test set must contain both classes")
    decisions = probe_predict(params, features) >= 0.5
    return 100.0 * float(np.mean(decisions == labels.astype(bool)))


def aligned_fraction(params: ProbeParams, features: np.ndarray) -> float:
    """Percentage of pairs the probe classifies as synchronized."""
    return 100.0 * float(np.mean(probe_predict(params, features) >= 0.5))


# ---------------------------------------------------------------------------
# KL divergence between classifier distributions

def kld_metric(gen_dists: np.ndarray, ref_dists: np.ndarray) -> float:
    """Mean KL(reference || generated) over paired class distributions."""
    gen = np.asarray(gen_dists, dtype=np.float64)
    ref = np.asarray(ref_dists, dtype=np.float64)
    if gen.shape != ref.shape or gen.ndim != 2:
        raise ProtocolError(
            f"paired distribution lists must match, got {gen.shape} vs {ref.shape}")
    gen = np.maximum(gen, PROB_FLOOR)
    gen = gen / gen.sum(axis=1, keepdims=True)
    ref = np.maximum(ref, PROB_FLOOR)
    ref = ref / ref.sum(axis=1, keepdims=True)
    kl = np.sum(ref * np.log(ref / gen), axis=1)
    return float(np.mean(kl))


# ---------------------------------------------------------------------------
# Fréchet distance between fitted Gaussians

def fit_gaussian(embeddings: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("embeddings must be (N, D)")
    n, d = x.shape
    if n < d + 1:
        raise ProtocolError(f"need at least D+1={d + 1} samples to fit, got {n}")
    mu = x.mean(axis=0)
    sigma = np.cov(x, rowvar=False)
    sigma = np.atleast_2d(sigma)
    return mu, (sigma + sigma.T) / 2


def _check_symmetric(matrix: np.ndarray, name: str) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    scale = max(float(np.abs(matrix).max()), 1.0)
    if np.abs(matrix - matrix.T).max() > 1e-8 * scale:
        raise ValueError(f"{name} is not symmetric within tolerance")
    return (matrix + matrix.T) / 2


def _psd_sqrt(matrix: np.ndarray, name: str) -> np.ndarray:
    vals, vecs = np.linalg.eigh(matrix)
    if vals.min() < EIG_TOLERANCE * max(float(vals.max()), 1.0):
        raise ValueError(f"{name} has negative eigenvalues beyond tolerance")
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_distance(mu1: np.ndarray, sigma1: np.ndarray,
                     mu2: np.ndarray, sigma2: np.ndarray) -> float:
    """Squared Fréchet distance between two Gaussians.

    The trace of sqrt(sigma1 sigma2) is computed from the eigendecomposition
    of the symmetric product sqrt(sigma1) sigma2 sqrt(sigma1); tiny negative
    eigenvalues are clamped, larger ones raise a numeric error.
    """
    mu1 = np.asarray(mu1, dtype=np.float64).ravel()
    mu2 = np.asarray(mu2, dtype=np.float64).ravel()
    s1 = _check_symmetric(sigma1, "sigma1")
    s2 = _check_symmetric(sigma2, "sigma2")
    if mu1.shape != mu2.shape or s1.shape != s2.shape:
        raise ValueError("moment shapes must match")
    root1 = _psd_sqrt(s1, "sigma1")
    product = root1 @ s2 @ root1
    product = (product + product.T) / 2
    vals = np.linalg.eigh(product)[0]
    if vals.min() < EIG_TOLERANCE * max(float(np.abs(vals).max()), 1.0):
        raise NumericError("covariance product has negative eigenvalues beyond tolerance")
    trace_sqrt = float(np.sqrt(np.clip(vals, 0.0, None)).sum())
    diff = mu1 - mu2
    return float(diff @ diff + np.trace(s1) + np.trace(s2) - 2.0 * trace_sqrt)


# ---------------------------------------------------------------------------
# toy audio classifier (stand-in feature network for KLD / FAD)

def pooled_grid_features(audio: np.ndarray, grid: tuple[int, int] = (8, 8)) -> np.ndarray:
    """Adaptive mean pooling of (N, T_a, F_a) spectrograms onto a fixed grid."""
    audio = np.asarray(audio, dtype=np.float64)
    n, t, f = audio.shape
    gt, gf = grid
    te = (np.arange(gt + 1) * t) // gt
    fe = (np.arange(gf + 1) * f) // gf
    cells = np.empty((n, gt, gf))
    for i in range(gt):
        band = audio[:, te[i]:te[i + 1]]
        for j in range(gf):
            cells[:, i, j] = band[:, :, fe[j]:fe[j + 1]].mean(axis=(1, 2))
    return cells.reshape(n, gt * gf)


@dataclass
class AudioClassifier:
    """One-hidden-layer softmax classifier on pooled spectrogram features."""
    n_classes: int
    hidden: int = 32
    grid: tuple[int, int] = (8, 8)
    seed: int = 0
    params: dict = field(default_factory=dict)

    def _features(self, audio: np.ndarray) -> np.ndarray:
        x = pooled_grid_features(audio, self.grid)
        return (x - self.params["mean"]) / self.params["std"]

    def fit(self, audio: np.ndarray, labels: np.ndarray,
            iterations: int = 400, lr: float = 0.02) -> "AudioClassifier":
        raw = pooled_grid_features(audio, self.grid)
        mean = raw.mean(axis=0)
        std = raw.std(axis=0) + 1e-8
        x = (raw - mean) / std
        y = np.asarray(labels, dtype=np.int64)
        n, d = x.shape
        rng = np.random.default_rng(self.seed)
        w1 = 0.1 * rng.standard_normal((d, self.hidden))
        b1 = np.zeros(self.hidden)
        w2 = 0.1 * rng.standard_normal((self.hidden, self.n_classes))
        b2 = np.zeros(self.n_classes)
        onehot = np.eye(self.n_classes)[y]

        def unpack(theta):
            i = 0
            out = []
            for ref in (w1, b1, w2, b2):
                out.append(theta[i:i + ref.size].reshape(ref.shape))
                i += ref.size
            return out

        def grad(theta):
            a, c, e, f = unpack(theta)
            h = np.tanh(x @ a + c)
            logits = h @ e + f
            logits -= logits.max(axis=1, keepdims=True)
            p = np.exp(logits)
            p /= p.sum(axis=1, keepdims=True)
            delta = (p - onehot) / n
            g_e = h.T @ delta
            g_f = delta.sum(axis=0)
            back = (delta @ e.T) * (1 - h ** 2)
            g_a = x.T @ back
            g_c = back.sum(axis=0)
            return np.concatenate([g.ravel() for g in (g_a, g_c, g_e, g_f)])

        theta0 = np.concatenate([p.ravel() for p in (w1, b1, w2, b2)])
        theta = _adam_minimize(grad, theta0, iterations, lr)
        w1, b1, w2, b2 = unpack(theta)
        self.params = {"mean": mean, "std": std, "w1": w1, "b1": b1,
                       "w2": w2, "b2": b2}
        return self

    def hidden_embeddings(self, audio: np.ndarray) -> np.ndarray:
        """Hidden-layer activations; the FAD feature space."""
        x = self._features(audio)
        return np.tanh(x @ self.params["w1"] + self.params["b1"])

    def class_distributions(self, audio: np.ndarray) -> np.ndarray:
        h = self.hidden_embeddings(audio)
        logits = h @ self.params["w2"] + self.params["b2"]
        logits -= logits.max(axis=1, keepdims=True)
        p = np.exp(logits)
        return p / p.sum(axis=1, keepdims=True)

    def accuracy(self, audio: np.ndarray, labels: np.ndarray) -> float:
        pred = self.class_distributions(audio).argmax(axis=1)
        return 100.0 * float(np.mean(pred == np.asarray(labels)))


# ---------------------------------------------------------------------------
# report bundle

@dataclass
class EvalReport:
    """Metric bundle emitted by every experiment run."""
    fingerprint: str
    recall_v2a: dict[int, float] | None = None
    recall_a2v: dict[int, float] | None = None
    align_acc: float | None = None
    kld: float | None = None
    fad: float | None = None
    n_retrieval: int = 0
    n_generation: int = 0

    def __post_init__(self):
        for table in (self.recall_v2a, self.recall_a2v):
            if table is not None:
                for k, pct in table.items():
                    if not 0.0 <= pct <= 100.0:
                        raise ValueError(f"recall@{k}={pct} outside [0, 100]")
        if self.align_acc is not None and not 0.0 <= self.align_acc <= 100.0:
            raise ValueError(f"align_acc={self.align_acc} outside [0, 100]")
        if self.kld is not None and self.kld < 0:
            raise ValueError(f"kld={self.kld} must be nonnegative")
        if self.fad is not None and self.fad < -1e-8:
            raise ValueError(f"fad={self.fad} below tolerance")

    CSV_COLUMNS = ("r1_v2a", "r5_v2a", "r10_v2a", "r1_a2v", "r5_a2v", "r10_a2v",
                   "align_acc", "kld", "fad", "n_retrieval", "n_generation",
                   "fingerprint")

    def csv_row(self) -> list[str]:
        def fmt(value):
            if value is None:
                return ""
            if isinstance(value, float):
                return repr(value) if math.isfinite(value) else ""
            return str(value)

        v2a = self.recall_v2a or {}
        a2v = self.recall_a2v or {}
        return [fmt(v2a.get(1)), fmt(v2a.get(5)), fmt(v2a.get(10)),
                fmt(a2v.get(1)), fmt(a2v.get(5)), fmt(a2v.get(10)),
                fmt(self.align_acc), fmt(self.kld), fmt(self.fad),
                fmt(self.n_retrieval), fmt(self.n_generation), self.fingerprint]
