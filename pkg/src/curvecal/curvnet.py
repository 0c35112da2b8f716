"""Residual MLP curvature regressor with explicit forward/backward passes.

Architecture: a stem (affine in->width, ReLU, layer norm, dropout), three
residual blocks (affine, layer norm, ReLU, dropout, affine, skip-add), and an
affine head down to one output. The production model is width 128 with 3
blocks; width and depth stay parametric so small instances can be checked
against hand-expanded matrix arithmetic.

Training: AdamW on a Huber loss over targets scaled to [0, 1] (kappa / 80),
cosine learning-rate schedule, mixup and label jitter augmentation, stratified
60/20/20 split, checkpoint on best validation loss. Everything is driven by a
single seeded numpy Generator, so runs are bit-reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .errors import ConfigError, DomainError
from .featurize import N_FEATURES, NormalizationSpec

LN_EPS = 1e-5

# Cap of the usable curvature range; labels above it come from the regime
# where the film response is too erratic to regress against.
KAPPA_TRAIN_MAX = 80.0
TARGET_SCALE = 80.0


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 1e-4
    huber_delta: float = 1.0
    lr_min: float = 1e-5
    mixup_alpha: float = 0.2
    label_jitter_sigma: float = 1.0
    split: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 0
    batch_size: int = 32
    width: int = 128
    n_blocks: int = 3
    dropout_rate: float = 0.1

    def __post_init__(self):
        if abs(sum(self.split) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {self.split}")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ConfigError("dropout_rate must be in [0, 1)")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        for key in ("betas", "split"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass(frozen=True)
class RegressionMetrics:
    """rmse/mae in m^-1; r2 is None when SS_tot vanishes (constant labels)."""

    rmse: float
    mae: float
    r2: float | None

    @property
    def r2_defined(self) -> bool:
        return self.r2 is not None

    def to_dict(self) -> dict:
        return {"rmse": self.rmse, "mae": self.mae, "r2": self.r2}


# ---------------------------------------------------------------------------
# Parameters and the forward/backward core
# ---------------------------------------------------------------------------


def param_keys(n_blocks: int) -> list[str]:
    keys = ["stem.W", "stem.b", "stem.g", "stem.beta"]
    for i in range(n_blocks):
        keys += [f"block{i}.W1", f"block{i}.b1", f"block{i}.g", f"block{i}.beta",
                 f"block{i}.W2", f"block{i}.b2"]
    keys += ["head.W", "head.b"]
    return keys


def init_params(rng: np.random.Generator, in_dim: int, width: int, n_blocks: int) -> dict[str, np.ndarray]:
    """Fan-in-scaled uniform init; layer norms start as identity."""

    def affine(fan_in, fan_out):
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=fan_out)
        return w, b

    params: dict[str, np.ndarray] = {}
    params["stem.W"], params["stem.b"] = affine(in_dim, width)
    params["stem.g"] = np.ones(width)
    params["stem.beta"] = np.zeros(width)
    for i in range(n_blocks):
        params[f"block{i}.W1"], params[f"block{i}.b1"] = affine(width, width)
        params[f"block{i}.g"] = np.ones(width)
        params[f"block{i}.beta"] = np.zeros(width)
        params[f"block{i}.W2"], params[f"block{i}.b2"] = affine(width, width)
    params["head.W"], params["head.b"] = affine(width, 1)
    return params


def _layer_norm(x: np.ndarray, g: np.ndarray, beta: np.ndarray):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return g * xhat + beta, xhat, inv


def _layer_norm_backward(dy: np.ndarray, xhat: np.ndarray, inv: np.ndarray, g: np.ndarray):
    dg = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * g
    dx = inv * (
        dxhat
        - dxhat.mean(axis=1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
    )
    return dx, dg, dbeta


def forward(
    params: dict[str, np.ndarray],
    x: np.ndarray,
    n_blocks: int,
    dropout_rate: float = 0.0,
    train: bool = False,
    rng: np.random.Generator | None = None,
    cache: dict | None = None,
) -> np.ndarray:
    """Predict scaled targets for a batch; fills ``cache`` when provided.

    Dropout masks are sampled only when ``train`` is true and the rate is
    positive; in eval mode the pass is deterministic.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if not np.all(np.isfinite(x)):
        raise DomainError("non-finite model input")

    use_dropout = train and dropout_rate > 0.0
    if use_dropout and rng is None:
        raise ConfigError("dropout in train mode needs an rng")

    def drop_mask(shape):
        return (rng.random(shape) >= dropout_rate) / (1.0 - dropout_rate)

    z0 = x @ params["stem.W"] + params["stem.b"]
    a0 = np.maximum(z0, 0.0)
    n0, xhat0, inv0 = _layer_norm(a0, params["stem.g"], params["stem.beta"])
    m0 = drop_mask(n0.shape) if use_dropout else None
    h = n0 * m0 if use_dropout else n0

    blocks = []
    for i in range(n_blocks):
        p = f"block{i}"
        h_in = h
        z1 = h_in @ params[f"{p}.W1"] + params[f"{p}.b1"]
        n1, xhat1, inv1 = _layer_norm(z1, params[f"{p}.g"], params[f"{p}.beta"])
        a1 = np.maximum(n1, 0.0)
        m1 = drop_mask(a1.shape) if use_dropout else None
        d1 = a1 * m1 if use_dropout else a1
        z2 = d1 @ params[f"{p}.W2"] + params[f"{p}.b2"]
        h = h_in + z2
        if cache is not None:
            blocks.append((h_in, xhat1, inv1, n1, m1, d1))

    yhat = h @ params["head.W"] + params["head.b"]
    if cache is not None:
        cache.update(x=x, z0=z0, xhat0=xhat0, inv0=inv0, m0=m0, blocks=blocks, h_final=h)
    return yhat[:, 0]


def backward(
    params: dict[str, np.ndarray],
    cache: dict,
    dpred: np.ndarray,
    n_blocks: int,
) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss given dL/dpred for the cached forward pass."""
    grads: dict[str, np.ndarray] = {}
    dy = np.asarray(dpred, dtype=float)[:, None]

    h = cache["h_final"]
    grads["head.W"] = h.T @ dy
    grads["head.b"] = dy.sum(axis=0)
    dh = dy @ params["head.W"].T

    for i in reversed(range(n_blocks)):
        p = f"block{i}"
        h_in, xhat1, inv1, n1, m1, d1 = cache["blocks"][i]
        dz2 = dh
        grads[f"{p}.W2"] = d1.T @ dz2
        grads[f"{p}.b2"] = dz2.sum(axis=0)
        dd1 = dz2 @ params[f"{p}.W2"].T
        da1 = dd1 * m1 if m1 is not None else dd1
        dn1 = da1 * (n1 > 0)
        dz1, dg, dbeta = _layer_norm_backward(dn1, xhat1, inv1, params[f"{p}.g"])
        grads[f"{p}.g"] = dg
        grads[f"{p}.beta"] = dbeta
        grads[f"{p}.W1"] = h_in.T @ dz1
        grads[f"{p}.b1"] = dz1.sum(axis=0)
        dh = dh + dz1 @ params[f"{p}.W1"].T  # skip path + block path

    m0 = cache["m0"]
    dn0 = dh * m0 if m0 is not None else dh
    da0, dg0, dbeta0 = _layer_norm_backward(dn0, cache["xhat0"], cache["inv0"], params["stem.g"])
    grads["stem.g"] = dg0
    grads["stem.beta"] = dbeta0
    dz0 = da0 * (cache["z0"] > 0)
    grads["stem.W"] = cache["x"].T @ dz0
    grads["stem.b"] = dz0.sum(axis=0)
    return grads


def huber_loss(residuals: np.ndarray, delta: float) -> tuple[float, np.ndarray]:
    """Mean Huber loss and its gradient w.r.t. the residuals."""
    r = np.asarray(residuals, dtype=float)
    absr = np.abs(r)
    quad = absr <= delta
    value = np.where(quad, 0.5 * r * r, delta * (absr - 0.5 * delta))
    grad = np.clip(r, -delta, delta) / r.size
    return float(value.mean()), grad


def loss_and_grads(params, x, y, n_blocks, delta, dropout_rate=0.0, train=True, rng=None):
    cache: dict = {}
    pred = forward(params, x, n_blocks, dropout_rate, train=train, rng=rng, cache=cache)
    loss, dres = huber_loss(pred - y, delta)
    grads = backward(params, cache, dres, n_blocks)
    return loss, grads


def _stem_out(params, x: np.ndarray) -> np.ndarray:
    h = x @ params["stem.W"]
    h += params["stem.b"]
    np.maximum(h, 0.0, out=h)
    _ln_inplace(h, params["stem.g"], params["stem.beta"])
    return h


def _block_out(params, i: int, h_in: np.ndarray) -> np.ndarray:
    p = f"block{i}"
    z = h_in @ params[f"{p}.W1"]
    z += params[f"{p}.b1"]
    _ln_inplace(z, params[f"{p}.g"], params[f"{p}.beta"])
    np.maximum(z, 0.0, out=z)
    h = h_in + z @ params[f"{p}.W2"]
    h += params[f"{p}.b2"]
    return h


def _head_loss(params, h: np.ndarray, y: np.ndarray, delta: float) -> float:
    r = (h @ params["head.W"])[:, 0]
    r += params["head.b"][0]
    r -= y
    np.abs(r, out=r)
    quad = r <= delta
    return float(np.where(quad, 0.5 * r * r, delta * (r - 0.5 * delta)).mean())


def _ln_inplace(h: np.ndarray, g: np.ndarray, beta: np.ndarray) -> None:
    mu = h.mean(axis=1, keepdims=True)
    h -= mu
    var = np.einsum("ij,ij->i", h, h)[:, None]
    var /= h.shape[1]
    var += LN_EPS
    np.sqrt(var, out=var)
    h /= var
    h *= g
    h += beta


def loss_only(params, x, y, n_blocks, delta) -> float:
    """Deterministic eval-mode loss; the probe used by finite differences.

    Same arithmetic as ``forward`` + ``huber_loss`` (pinned in a unit test),
    structured as per-layer pieces so the difference check can reuse
    unperturbed upstream activations.
    """
    x = np.asarray(x, dtype=float)
    h = _stem_out(params, x)
    for i in range(n_blocks):
        h = _block_out(params, i, h)
    return _head_loss(params, h, y, delta)


def finite_difference_check(
    params: dict[str, np.ndarray],
    x: np.ndarray,
    y: np.ndarray,
    n_blocks: int,
    delta: float = 1.0,
    h: float = 1e-5,
    rel_floor: float = 1e-6,
) -> dict[str, float]:
    """Max relative error between analytic and central-difference gradients.

    Returns one worst-case figure per parameter tensor. Perturbing a layer's
    parameter leaves everything upstream bit-identical, so the probe restarts
    from the cached input of the perturbed layer; the comparison floor keeps
    near-zero gradient entries from demanding more resolution than a central
    difference quotient can deliver.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _, grads = loss_and_grads(params, x, y, n_blocks, delta, dropout_rate=0.0, train=True)

    # inputs[i] = activation entering layer i (0 = stem, 1..n = blocks, n+1 = head)
    inputs = [x, _stem_out(params, x)]
    for i in range(n_blocks):
        inputs.append(_block_out(params, i, inputs[-1]))

    def loss_from_layer(layer: int) -> float:
        hcur = inputs[layer]
        if layer == 0:
            hcur = _stem_out(params, hcur)
            layer = 1
        for i in range(layer - 1, n_blocks):
            hcur = _block_out(params, i, hcur)
        return _head_loss(params, hcur, y, delta)

    def layer_of(key: str) -> int:
        if key.startswith("stem."):
            return 0
        if key.startswith("head."):
            return n_blocks + 1
        return int(key.split(".")[0].removeprefix("block")) + 1

    out: dict[str, float] = {}
    try:
        from threadpoolctl import threadpool_limits

        limiter = threadpool_limits(limits=1)  # tiny matmuls: thread sync costs more than it buys
    except ImportError:
        limiter = None
    try:
        for key, tensor in params.items():
            layer = layer_of(key)
            flat = tensor.reshape(-1)
            gflat = grads[key].reshape(-1)
            worst = 0.0
            for idx in range(flat.size):
                orig = flat[idx]
                flat[idx] = orig + h
                lp = loss_from_layer(layer)
                flat[idx] = orig - h
                lm = loss_from_layer(layer)
                flat[idx] = orig
                num = (lp - lm) / (2.0 * h)
                ana = gflat[idx]
                rel = abs(ana - num) / max(abs(ana), abs(num), rel_floor)
                if rel > worst:
                    worst = rel
            out[key] = worst
    finally:
        if limiter is not None:
            limiter.unregister()
    return out


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------


def mixup(batch_a, batch_b, lam: float):
    """Convex combination of two (X, y) batches with weight lam on batch_a."""
    if not (0.0 <= lam <= 1.0):
        raise DomainError(f"mixup lambda must be in [0, 1], got {lam}")
    xa, ya = batch_a
    xb, yb = batch_b
    xa, xb = np.asarray(xa, dtype=float), np.asarray(xb, dtype=float)
    ya, yb = np.asarray(ya, dtype=float), np.asarray(yb, dtype=float)
    if xa.shape != xb.shape or ya.shape != yb.shape:
        raise ConfigError("mixup batches must have equal shapes")
    return lam * xa + (1.0 - lam) * xb, lam * ya + (1.0 - lam) * yb


def label_jitter(y, sigma: float, rng: np.random.Generator):
    """Gaussian target noise; train-time only by construction of the caller."""
    if sigma < 0:
        raise DomainError("jitter sigma must be nonnegative")
    y = np.asarray(y, dtype=float)
    if sigma == 0:
        return y.copy()
    return y + rng.normal(0.0, sigma, size=y.shape)


def cosine_lr(epoch: int, epochs: int, lr_max: float, lr_min: float) -> float:
    """Cosine decay from lr_max at epoch 0 to lr_min at the final epoch."""
    if epochs == 1:
        return lr_max
    frac = epoch / (epochs - 1)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + np.cos(np.pi * frac))


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


class AdamW:
    """AdamW with decoupled weight decay on the affine weight matrices only."""

    def __init__(self, params: dict[str, np.ndarray], betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    @staticmethod
    def decays(key: str) -> bool:
        return key.endswith((".W", ".W1", ".W2"))

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, p in params.items():
            g = grads[k]
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            denom = np.sqrt(v / bc2)
            denom += self.eps
            update = m / denom
            update *= lr / bc1
            p -= update
            if self.weight_decay and self.decays(k):
                p -= lr * self.weight_decay * p


# ---------------------------------------------------------------------------
# Model container
# ---------------------------------------------------------------------------


@dataclass
class CurvNetModel:
    """Weights plus the normalization/config context needed for inference."""

    params: dict[str, np.ndarray]
    in_dim: int = N_FEATURES
    width: int = 128
    n_blocks: int = 3
    dropout_rate: float = 0.1
    feature_norm: NormalizationSpec = field(default_factory=NormalizationSpec)
    target_scale: float = TARGET_SCALE
    train_config: TrainConfig | None = None
    metrics: dict | None = None

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Curvature in m^-1 for a batch of feature vectors (eval mode)."""
        pred = forward(self.params, X, self.n_blocks, train=False)
        return pred * self.target_scale

    def predict_one(self, features) -> float:
        return float(self.predict(np.asarray(features, dtype=float)[None, :])[0])

    def to_dict(self) -> dict:
        return {
            "format": "curvecal-model-v1",
            "arch": {
                "in_dim": self.in_dim,
                "width": self.width,
                "n_blocks": self.n_blocks,
                "dropout_rate": self.dropout_rate,
            },
            "target_scale": self.target_scale,
            "feature_norm": {"lo": self.feature_norm.lo, "hi": self.feature_norm.hi},
            "params": {k: v.tolist() for k, v in self.params.items()},
            "train_config": self.train_config.to_dict() if self.train_config else None,
            "metrics": self.metrics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CurvNetModel":
        if d.get("format") != "curvecal-model-v1":
            raise ConfigError(f"unknown model format: {d.get('format')!r}")
        arch = d["arch"]
        params = {k: np.array(v, dtype=float) for k, v in d["params"].items()}
        return cls(
            params=params,
            in_dim=arch["in_dim"],
            width=arch["width"],
            n_blocks=arch["n_blocks"],
            dropout_rate=arch["dropout_rate"],
            feature_norm=NormalizationSpec(**d["feature_norm"]),
            target_scale=d["target_scale"],
            train_config=TrainConfig.from_dict(d["train_config"]) if d.get("train_config") else None,
            metrics=d.get("metrics"),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "CurvNetModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def evaluate_arrays(pred: np.ndarray, y: np.ndarray) -> RegressionMetrics:
    pred = np.asarray(pred, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise ConfigError("cannot evaluate an empty dataset")
    err = pred - y
    rmse = float(np.sqrt(np.mean(err**2)))
    mae = float(np.mean(np.abs(err)))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = None if ss_tot == 0.0 else 1.0 - float(np.sum(err**2)) / ss_tot
    return RegressionMetrics(rmse=rmse, mae=mae, r2=r2)


def evaluate(model: CurvNetModel, X: np.ndarray, y: np.ndarray) -> RegressionMetrics:
    return evaluate_arrays(model.predict(X), y)


def stratified_split(y: np.ndarray, fractions, rng: np.random.Generator):
    """Index split keeping every distinct label value present in each part."""
    f_tr, f_val, _ = fractions
    train_idx, val_idx, test_idx = [], [], []
    for value in np.unique(y):
        idx = np.flatnonzero(y == value)
        idx = idx[rng.permutation(idx.size)]
        n = idx.size
        n_tr = max(1, int(round(n * f_tr)))
        n_val = max(1, int(round(n * f_val)))
        while n_tr + n_val >= n and n_tr > 1:
            n_tr -= 1
        train_idx.extend(idx[:n_tr])
        val_idx.extend(idx[n_tr:n_tr + n_val])
        test_idx.extend(idx[n_tr + n_val:])
    return np.array(train_idx), np.array(val_idx), np.array(test_idx)


def validate_training_labels(y: np.ndarray) -> None:
    y = np.asarray(y, dtype=float)
    if y.size < 50:
        raise ConfigError(f"need at least 50 samples, got {y.size}")
    if np.unique(y).size < 3:
        raise ConfigError("need at least 3 distinct curvature levels")
    if np.any(y < 0):
        raise ConfigError("curvature labels must be nonnegative")
    if np.any(y > KAPPA_TRAIN_MAX):
        raise ConfigError(
            f"dataset contains curvature labels above {KAPPA_TRAIN_MAX:g} m^-1; "
            "readings in that regime are too unreliable for curvature training "
            "and must be excluded"
        )


@dataclass
class TrainResult:
    model: CurvNetModel
    metrics: dict[str, RegressionMetrics]
    history: list[dict]
    best_epoch: int
    splits: dict[str, np.ndarray]


def _limit_blas_threads():
    """Single-thread BLAS for this net's tiny matmuls (sync costs dominate)."""
    try:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=1)
    except ImportError:
        import contextlib

        return contextlib.nullcontext()


def train(
    X: np.ndarray,
    y: np.ndarray,
    config: TrainConfig = TrainConfig(),
    feature_norm: NormalizationSpec = NormalizationSpec(),
) -> TrainResult:
    """Full training loop; returns the checkpoint with best validation loss."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ConfigError(f"X of shape {X.shape} does not match y of shape {y.shape}")
    validate_training_labels(y)
    with _limit_blas_threads():
        return _train_loop(X, y, config, feature_norm)


def _train_loop(X, y, config: TrainConfig, feature_norm: NormalizationSpec) -> TrainResult:
    rng = np.random.default_rng(config.seed)
    params = init_params(rng, X.shape[1], config.width, config.n_blocks)
    tr, va, te = stratified_split(y, config.split, rng)

    ys = y / TARGET_SCALE
    jitter_sigma_scaled = config.label_jitter_sigma / TARGET_SCALE
    opt = AdamW(params, betas=config.betas, weight_decay=config.weight_decay)

    best_val = np.inf
    best_epoch = -1
    best_params = {k: v.copy() for k, v in params.items()}
    history: list[dict] = []

    for epoch in range(config.epochs):
        lr = cosine_lr(epoch, config.epochs, config.lr, config.lr_min)
        order = rng.permutation(tr.size)
        epoch_losses = []
        for start in range(0, tr.size, config.batch_size):
            idx = tr[order[start:start + config.batch_size]]
            xb = X[idx]
            yb = ys[idx]
            if config.mixup_alpha > 0 and idx.size > 1:
                lam = float(rng.beta(config.mixup_alpha, config.mixup_alpha))
                perm = rng.permutation(idx.size)
                xb, yb = mixup((xb, yb), (xb[perm], yb[perm]), lam)
            yb = label_jitter(yb, jitter_sigma_scaled, rng)
            loss, grads = loss_and_grads(
                params, xb, yb, config.n_blocks, config.huber_delta,
                dropout_rate=config.dropout_rate, train=True, rng=rng,
            )
            opt.step(params, grads, lr)
            epoch_losses.append(loss)

        val_pred = forward(params, X[va], config.n_blocks, train=False)
        val_loss, _ = huber_loss(val_pred - ys[va], config.huber_delta)
        history.append(
            {"epoch": epoch, "lr": lr, "train_loss": float(np.mean(epoch_losses)),
             "val_loss": val_loss}
        )
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_params = {k: v.copy() for k, v in params.items()}

    model = CurvNetModel(
        params=best_params,
        in_dim=X.shape[1],
        width=config.width,
        n_blocks=config.n_blocks,
        dropout_rate=config.dropout_rate,
        feature_norm=feature_norm,
        train_config=config,
    )
    metrics = {
        "train": evaluate(model, X[tr], y[tr]),
        "val": evaluate(model, X[va], y[va]),
        "test": evaluate(model, X[te], y[te]),
    }
    model.metrics = {split: m.to_dict() for split, m in metrics.items()}
    return TrainResult(model=model, metrics=metrics, history=history, best_epoch=best_epoch,
                       splits={"train": tr, "val": va, "test": te})
