"""Symmetric contrastive objective, toy linear encoders, and AdamW training.

The similarity matrix S = t * image_side @ text_side.T carries the correct
pairing on its diagonal; the loss is the mean of row-wise and column-wise
cross-entropy against that diagonal. Gradients are analytic so they can be
checked against central finite differences.

The loss is defined for any finite matrices (no internal renormalization),
which keeps finite-difference checks well-posed; training paths always feed
it row-normalized encoder outputs.
"""

from __future__ import annotations

import json
import math
import struct
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import EmbeddingVector, cosine_similarity
from .errors import (
    BadMagic,
    BadVersion,
    DegenerateLabelsWarning,
    DimensionMismatch,
    EmptyInput,
    NonFiniteLoss,
    Truncated,
    ZeroVector,
)

CLIP_INIT_SCALE = 1.0 / 0.07
MAX_LOGIT_SCALE = 100.0

ENCODER_MAGIC = b"GUINGWTS"
ENCODER_VERSION = 1
_ENC_HEADER = struct.Struct("<8sIII")


@dataclass(frozen=True)
class AdamWParams:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        if self.eps <= 0.0 or self.weight_decay < 0.0:
            raise ValueError("eps must be positive, weight_decay non-negative")


@dataclass(frozen=True)
class LogitScaleSpec:
    """Multiplicative temperature inverse applied to similarities.

    Learnable by default, initialized to 1/0.07 and kept at or below
    max_value; the underlying trained parameter is log(scale) so optimizer
    steps cannot push the scale negative.
    """

    learnable: bool = True
    init: float = CLIP_INIT_SCALE
    max_value: float = MAX_LOGIT_SCALE

    def __post_init__(self):
        if self.init <= 0.0 or self.max_value <= 0.0:
            raise ValueError("logit scale values must be positive")

    @classmethod
    def fixed(cls, value: float) -> "LogitScaleSpec":
        return cls(learnable=False, init=value, max_value=max(value, MAX_LOGIT_SCALE))


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    learning_rate: float = 5e-5
    epochs: int = 5
    optimizer: AdamWParams = field(default_factory=AdamWParams)
    seed: int = 0
    logit_scale: LogitScaleSpec = field(default_factory=LogitScaleSpec)

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


class AdamW:
    """Decoupled-weight-decay Adam over a fixed list of parameter arrays.

    Decay is applied to the weights directly (lr * wd * w), never folded
    into the gradient moments.
    """

    def __init__(self, params: list[np.ndarray], lr: float, hp: AdamWParams | None = None):
        self.params = params
        self.lr = lr
        self.hp = hp if hp is not None else AdamWParams()
        self._m = [np.zeros_like(p) for p in params]
        self._v = [np.zeros_like(p) for p in params]
        self._t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ValueError(f"{len(grads)} grads for {len(self.params)} params")
        self._t += 1
        hp = self.hp
        bc1 = 1.0 - hp.beta1 ** self._t
        bc2 = 1.0 - hp.beta2 ** self._t
        for p, g, m, v in zip(self.params, grads, self._m, self._v):
            m *= hp.beta1
            m += (1.0 - hp.beta1) * g
            v *= hp.beta2
            v += (1.0 - hp.beta2) * np.square(g)
            p -= self.lr * ((m / bc1) / (np.sqrt(v / bc2) + hp.eps) + hp.weight_decay * p)


@dataclass
class LinearEncoder:
    """Single linear map; outputs are L2-normalized before any loss or search."""

    weights: np.ndarray  # out_dim x in_dim, float64

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise DimensionMismatch(f"weights must be 2-D, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise NonFiniteLoss("encoder weights contain non-finite values")
        self.weights = w

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    def project(self, features) -> np.ndarray:
        """Raw (unnormalized) projections, one row per input row."""
        f = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if f.shape[1] != self.in_dim:
            raise DimensionMismatch(f"feature dim {f.shape[1]} != encoder in_dim {self.in_dim}")
        return f @ self.weights.T

    def encode(self, features) -> np.ndarray:
        z = self.project(features)
        norms = np.linalg.norm(z, axis=1, keepdims=True)
        if np.any(norms < 1e-12):
            raise ZeroVector("encoder projected a feature row to (near) zero")
        return z / norms


@dataclass(frozen=True)
class ContrastiveBatch:
    """Row i of image_side pairs with row i of text_side."""

    image_side: np.ndarray
    text_side: np.ndarray

    def __post_init__(self):
        i = np.asarray(self.image_side, dtype=np.float64)
        t = np.asarray(self.text_side, dtype=np.float64)
        if i.ndim != 2 or t.ndim != 2 or i.shape != t.shape:
            raise DimensionMismatch(f"batch sides must share a 2-D shape, got {i.shape} vs {t.shape}")
        if i.shape[0] < 1:
            raise EmptyInput("batch needs at least one pair")
        if not (np.all(np.isfinite(i)) and np.all(np.isfinite(t))):
            raise NonFiniteLoss("batch contains non-finite values")
        object.__setattr__(self, "image_side", i)
        object.__setattr__(self, "text_side", t)

    @property
    def n(self) -> int:
        return self.image_side.shape[0]


@dataclass(frozen=True)
class InfoNceGrads:
    image_side: np.ndarray
    text_side: np.ndarray
    logit_scale: float


def _log_softmax(m: np.ndarray, axis: int) -> np.ndarray:
    shifted = m - m.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def info_nce_loss(batch: ContrastiveBatch, logit_scale: float) -> tuple[float, InfoNceGrads]:
    """Loss = mean of row-wise and column-wise CE against the diagonal.

    Returns analytic gradients wrt both sides and wrt the scale itself.
    For N=1 the single candidate has softmax probability 1, so the loss is
    exactly 0 and every gradient vanishes.
    """
    if logit_scale <= 0.0:
        raise ValueError(f"logit_scale must be > 0, got {logit_scale}")
    sims = batch.image_side @ batch.text_side.T
    s = logit_scale * sims
    n = batch.n
    diag = np.arange(n)
    log_p_rows = _log_softmax(s, axis=1)
    log_p_cols = _log_softmax(s, axis=0)
    loss = -0.5 * (log_p_rows[diag, diag].mean() + log_p_cols[diag, diag].mean()) + 0.0
    eye = np.eye(n)
    d_s = ((np.exp(log_p_rows) - eye) + (np.exp(log_p_cols) - eye)) / (2.0 * n)
    return float(loss), InfoNceGrads(
        image_side=logit_scale * (d_s @ batch.text_side),
        text_side=logit_scale * (d_s.T @ batch.image_side),
        logit_scale=float(np.sum(d_s * sims)),
    )


class _ScaleParam:
    """Logit scale held as log(t); AdamW steps on the log keep t positive."""

    def __init__(self, spec: LogitScaleSpec):
        self.spec = spec
        self.log_t = np.array([math.log(spec.init)], dtype=np.float64)

    @property
    def value(self) -> float:
        return math.exp(self.log_t[0])

    def clamp(self) -> None:
        self.log_t[0] = min(self.log_t[0], math.log(self.spec.max_value))


def _normalize_rows(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(norms < 1e-12):
        raise NonFiniteLoss("a projection row collapsed to zero norm")
    return z / norms, norms


def _normalize_rows_grad(grad_unit: np.ndarray, unit: np.ndarray, norms: np.ndarray) -> np.ndarray:
    # d/dz of z/|z|: remove the component along the unit vector, shrink by |z|.
    along = np.sum(grad_unit * unit, axis=1, keepdims=True)
    return (grad_unit - unit * along) / norms


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]  # last partial batch kept


def _open_log(log_path):
    return open(log_path, "w", encoding="utf-8") if log_path is not None else None


def _log_epoch(fh, epoch: int, loss: float, started: float) -> None:
    if fh is not None:
        wall_ms = (time.perf_counter() - started) * 1000.0
        fh.write(json.dumps({"epoch": epoch, "loss": loss, "wall_ms": wall_ms}) + "\n")
        fh.flush()


def train_contrastive(raw_image_features, raw_text_features, pairs,
                      config: TrainConfig | None = None, embed_dim: int = 64,
                      log_path=None) -> tuple[LinearEncoder, LinearEncoder, list[float]]:
    """Train both encoders on (image_row, text_row) pairs; returns loss per epoch."""
    cfg = config if config is not None else TrainConfig()
    x = np.asarray(raw_image_features, dtype=np.float64)
    y = np.asarray(raw_text_features, dtype=np.float64)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise NonFiniteLoss("raw features contain non-finite values")
    if len(pairs) < 2:
        raise EmptyInput(f"need at least 2 pairs, got {len(pairs)}")
    img_rows = np.array([p[0] for p in pairs], dtype=np.int64)
    txt_rows = np.array([p[1] for p in pairs], dtype=np.int64)

    rng = np.random.default_rng(cfg.seed)
    w_img = rng.standard_normal((embed_dim, x.shape[1])) / math.sqrt(x.shape[1])
    w_txt = rng.standard_normal((embed_dim, y.shape[1])) / math.sqrt(y.shape[1])
    scale = _ScaleParam(cfg.logit_scale)
    params = [w_img, w_txt] + ([scale.log_t] if cfg.logit_scale.learnable else [])
    opt = AdamW(params, cfg.learning_rate, cfg.optimizer)

    loss_curve: list[float] = []
    log_fh = _open_log(log_path)
    try:
        for epoch in range(cfg.epochs):
            started = time.perf_counter()
            losses = []
            for batch in _epoch_batches(len(pairs), cfg.batch_size, rng):
                xf = x[img_rows[batch]]
                yf = y[txt_rows[batch]]
                ui, ni = _normalize_rows(xf @ w_img.T)
                ut, nt = _normalize_rows(yf @ w_txt.T)
                loss, grads = info_nce_loss(ContrastiveBatch(ui, ut), scale.value)
                if not math.isfinite(loss):
                    raise NonFiniteLoss(f"epoch {epoch}: loss became {loss}")
                g_img = _normalize_rows_grad(grads.image_side, ui, ni).T @ xf
                g_txt = _normalize_rows_grad(grads.text_side, ut, nt).T @ yf
                step_grads = [g_img, g_txt]
                if cfg.logit_scale.learnable:
                    # chain rule through t = exp(log_t)
                    step_grads.append(np.array([grads.logit_scale * scale.value]))
                opt.step(step_grads)
                scale.clamp()
                losses.append(loss)
            loss_curve.append(float(np.mean(losses)))
            _log_epoch(log_fh, epoch, loss_curve[-1], started)
    finally:
        if log_fh is not None:
            log_fh.close()
    return LinearEncoder(w_img), LinearEncoder(w_txt), loss_curve


def train_sketch_adapter(sketch_features, frozen_screenshot_embs, pairs,
                         config: TrainConfig | None = None,
                         log_path=None) -> LinearEncoder:
    """Contrastive training where only the sketch side learns.

    The screenshot side enters the loss as supplied, already unit-norm, and
    is never written to; its gradients are computed and discarded.
    """
    cfg = config if config is not None else TrainConfig()
    x = np.asarray(sketch_features, dtype=np.float64)
    frozen = np.asarray(frozen_screenshot_embs, dtype=np.float64)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(frozen))):
        raise NonFiniteLoss("inputs contain non-finite values")
    drift = np.abs(np.linalg.norm(frozen, axis=1) - 1.0)
    if np.any(drift > 1e-4):
        raise ValueError("screenshot embeddings must be unit-norm")
    if len(pairs) < 2:
        raise EmptyInput(f"need at least 2 pairs, got {len(pairs)}")
    sk_rows = np.array([p[0] for p in pairs], dtype=np.int64)
    shot_rows = np.array([p[1] for p in pairs], dtype=np.int64)
    embed_dim = frozen.shape[1]

    rng = np.random.default_rng(cfg.seed)
    w_sk = rng.standard_normal((embed_dim, x.shape[1])) / math.sqrt(x.shape[1])
    scale = _ScaleParam(cfg.logit_scale)
    params = [w_sk] + ([scale.log_t] if cfg.logit_scale.learnable else [])
    opt = AdamW(params, cfg.learning_rate, cfg.optimizer)

    log_fh = _open_log(log_path)
    try:
        for epoch in range(cfg.epochs):
            started = time.perf_counter()
            losses = []
            for batch in _epoch_batches(len(pairs), cfg.batch_size, rng):
                xf = x[sk_rows[batch]]
                us, ns = _normalize_rows(xf @ w_sk.T)
                loss, grads = info_nce_loss(ContrastiveBatch(us, frozen[shot_rows[batch]]), scale.value)
                if not math.isfinite(loss):
                    raise NonFiniteLoss(f"epoch {epoch}: loss became {loss}")
                g_sk = _normalize_rows_grad(grads.image_side, us, ns).T @ xf
                step_grads = [g_sk]
                if cfg.logit_scale.learnable:
                    step_grads.append(np.array([grads.logit_scale * scale.value]))
                opt.step(step_grads)
                scale.clamp()
                losses.append(loss)
            _log_epoch(log_fh, epoch, float(np.mean(losses)), started)
    finally:
        if log_fh is not None:
            log_fh.close()
    return LinearEncoder(w_sk)


def zero_shot_classify(image_emb: EmbeddingVector, label_embs: list[EmbeddingVector]) -> int:
    """Index of the label embedding most similar to the image; tie → lowest."""
    if not label_embs:
        raise EmptyInput("no candidate labels")
    scores = [cosine_similarity(image_emb, lab) for lab in label_embs]
    return int(np.argmax(scores))


@dataclass
class LinearClassifier:
    weights: np.ndarray  # n_classes x dim
    bias: np.ndarray     # n_classes

    def logits(self, features) -> np.ndarray:
        f = np.atleast_2d(np.asarray(features, dtype=np.float64))
        return f @ self.weights.T + self.bias

    def predict(self, features) -> np.ndarray:
        return np.argmax(self.logits(features), axis=1)


def train_linear_probe(features, labels, n_classes: int,
                       config: TrainConfig | None = None,
                       log_path=None) -> LinearClassifier:
    """Softmax cross-entropy over a single linear layer on frozen features."""
    cfg = config if config is not None else TrainConfig()
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"features {x.shape} do not align with labels {y.shape}")
    if x.shape[0] == 0:
        raise EmptyInput("no training rows")
    if n_classes < 1:
        raise ValueError(f"n_classes must be >= 1, got {n_classes}")
    if np.any(y < 0) or np.any(y >= n_classes):
        raise ValueError(f"labels outside [0, {n_classes})")
    present = np.unique(y)
    if len(present) < n_classes:
        missing = sorted(set(range(n_classes)) - set(present.tolist()))
        warnings.warn(f"classes absent from training data: {missing}", DegenerateLabelsWarning)

    rng = np.random.default_rng(cfg.seed)
    w = np.zeros((n_classes, x.shape[1]), dtype=np.float64)
    b = np.zeros(n_classes, dtype=np.float64)
    opt = AdamW([w, b], cfg.learning_rate, cfg.optimizer)

    log_fh = _open_log(log_path)
    try:
        for epoch in range(cfg.epochs):
            started = time.perf_counter()
            losses = []
            for batch in _epoch_batches(x.shape[0], cfg.batch_size, rng):
                xf = x[batch]
                yf = y[batch]
                logits = xf @ w.T + b
                log_p = _log_softmax(logits, axis=1)
                loss = float(-log_p[np.arange(len(batch)), yf].mean())
                if not math.isfinite(loss):
                    raise NonFiniteLoss(f"epoch {epoch}: loss became {loss}")
                d_logits = np.exp(log_p)
                d_logits[np.arange(len(batch)), yf] -= 1.0
                d_logits /= len(batch)
                opt.step([d_logits.T @ xf, d_logits.sum(axis=0)])
                losses.append(loss)
            _log_epoch(log_fh, epoch, float(np.mean(losses)), started)
    finally:
        if log_fh is not None:
            log_fh.close()
    return LinearClassifier(weights=w, bias=b)


def save_encoder(encoder: LinearEncoder, path) -> None:
    """Weights section appended to the standard header; values stored float32."""
    with open(path, "wb") as fh:
        fh.write(_ENC_HEADER.pack(ENCODER_MAGIC, ENCODER_VERSION, encoder.out_dim, encoder.in_dim))
        fh.write(np.ascontiguousarray(encoder.weights, dtype="<f4").tobytes())


def load_encoder(path) -> LinearEncoder:
    with open(path, "rb") as fh:
        raw = fh.read(_ENC_HEADER.size)
        if len(raw) != _ENC_HEADER.size:
            raise Truncated("encoder header incomplete")
        magic, version, out_dim, in_dim = _ENC_HEADER.unpack(raw)
        if magic != ENCODER_MAGIC:
            raise BadMagic(f"expected {ENCODER_MAGIC!r}, found {magic!r}")
        if version != ENCODER_VERSION:
            raise BadVersion(f"unsupported encoder version {version}")
        payload = fh.read(out_dim * in_dim * 4)
        if len(payload) != out_dim * in_dim * 4:
            raise Truncated("encoder weights incomplete")
        weights = np.frombuffer(payload, dtype="<f4").reshape(out_dim, in_dim).astype(np.float64)
    return LinearEncoder(weights=weights)
