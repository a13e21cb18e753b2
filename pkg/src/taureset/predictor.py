"""Allocation predictor: a small feed-forward network plus an ensemble layer.

The network maps a standardized feature row to a reduced allocation via a
normalized-exponential output, trained with mean squared error against
the per-epoch optimal strategies. Training runs adaptive-moment gradient
descent with early stopping inside a contiguous k-fold split of the
training rows; the fold model with the best validation loss is kept.
Everything is plain numpy so the gradients stay inspectable — the
ensemble layer then mixes this network with externally supplied
prediction files under a simplex constraint.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .errors import (
    EpochMismatch,
    MalformedRecord,
    NonfiniteLoss,
    RowSumViolation,
    ShapeMismatch,
    TooFewRows,
    ValidationError,
)

ARTIFACT_VERSION = 1


@dataclass(frozen=True)
class DatasetSplit:
    X_train: np.ndarray
    Y_train: np.ndarray
    X_test: np.ndarray
    Y_test: np.ndarray


def split_dataset(X: np.ndarray, Y: np.ndarray) -> DatasetSplit:
    """Chronological 80/20 split — later epochs never leak into training."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if len(X) != len(Y):
        raise ShapeMismatch(f"X has {len(X)} rows, Y has {len(Y)}")
    K = len(X)
    if K < 5:
        raise TooFewRows(f"need at least 5 epochs to split, got {K}")
    cut = int(np.floor(0.8 * K))
    return DatasetSplit(X[:cut], Y[:cut], X[cut:], Y[cut:])


@dataclass(frozen=True)
class MlpConfig:
    hidden: tuple[int, ...] = (128, 64, 32, 16)
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 100
    patience: int = 10
    folds: int = 5
    batch_size: int = 32


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class AllocationNet:
    """Feed-forward rectifier network with a simplex-valued output row.

    Estimator-style interface: construct with hyper-parameters, `fit`
    standardizes and trains, `predict` serves allocations. `get_params` /
    `set_params` follow the usual estimator contract.
    """

    def __init__(
        self,
        hidden=(128, 64, 32, 16),
        learning_rate=1e-3,
        beta1=0.9,
        beta2=0.999,
        eps=1e-8,
        max_epochs=100,
        patience=10,
        folds=5,
        batch_size=32,
        seed=0,
    ):
        self.hidden = tuple(hidden)
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.max_epochs = max_epochs
        self.patience = patience
        self.folds = folds
        self.batch_size = batch_size
        self.seed = seed
        self.weights_ = None
        self.biases_ = None
        self.x_mean_ = None
        self.x_std_ = None
        self.val_loss_ = None

    # -- estimator plumbing --------------------------------------------

    _param_names = (
        "hidden", "learning_rate", "beta1", "beta2", "eps",
        "max_epochs", "patience", "folds", "batch_size", "seed",
    )

    def get_params(self, deep=True):
        return {name: getattr(self, name) for name in self._param_names}

    def set_params(self, **params):
        for name, value in params.items():
            if name not in self._param_names:
                raise ValidationError(f"unknown parameter {name!r}")
            setattr(self, name, value)
        return self

    # -- core network -----------------------------------------------------

    def _init_layers(self, d_in: int, d_out: int, rng: np.random.Generator):
        sizes = [d_in, *self.hidden, d_out]
        Ws, bs = [], []
        for a, b in zip(sizes[:-1], sizes[1:]):
            Ws.append(rng.standard_normal((a, b)) * np.sqrt(2.0 / a))
            bs.append(np.zeros(b))
        return Ws, bs

    @staticmethod
    def _forward(Ws, bs, X):
        pre, act = [], [X]
        a = X
        for i, (W, b) in enumerate(zip(Ws, bs)):
            z = a @ W + b
            pre.append(z)
            a = _softmax(z) if i == len(Ws) - 1 else np.maximum(z, 0.0)
            act.append(a)
        return pre, act

    @staticmethod
    def _loss_grads(Ws, bs, X, Y):
        pre, act = AllocationNet._forward(Ws, bs, X)
        out = act[-1]
        diff = out - Y
        loss = float(np.mean(diff**2))
        g = 2.0 * diff / diff.size
        # normalized-exponential jacobian applied to the loss gradient
        dz = out * (g - np.sum(g * out, axis=1, keepdims=True))
        dWs = [None] * len(Ws)
        dbs = [None] * len(bs)
        for i in range(len(Ws) - 1, -1, -1):
            dWs[i] = act[i].T @ dz
            dbs[i] = dz.sum(axis=0)
            if i > 0:
                dz = (dz @ Ws[i].T) * (pre[i - 1] > 0.0)
        return loss, dWs, dbs

    def _train_single(self, Xtr, Ytr, Xva, Yva, rng):
        Ws, bs = self._init_layers(Xtr.shape[1], Ytr.shape[1], rng)
        mW = [np.zeros_like(W) for W in Ws]
        vW = [np.zeros_like(W) for W in Ws]
        mb = [np.zeros_like(b) for b in bs]
        vb = [np.zeros_like(b) for b in bs]
        t = 0
        best = (np.inf, [W.copy() for W in Ws], [b.copy() for b in bs])
        stale = 0
        n = len(Xtr)
        for _ in range(self.max_epochs):
            order = rng.permutation(n)
            for lo in range(0, n, self.batch_size):
                idx = order[lo : lo + self.batch_size]
                loss, dWs, dbs = self._loss_grads(Ws, bs, Xtr[idx], Ytr[idx])
                if not np.isfinite(loss):
                    raise NonfiniteLoss(f"training loss became {loss}")
                t += 1
                c1 = 1.0 - self.beta1**t
                c2 = 1.0 - self.beta2**t
                for j in range(len(Ws)):
                    mW[j] = self.beta1 * mW[j] + (1 - self.beta1) * dWs[j]
                    vW[j] = self.beta2 * vW[j] + (1 - self.beta2) * dWs[j] ** 2
                    Ws[j] -= self.learning_rate * (mW[j] / c1) / (np.sqrt(vW[j] / c2) + self.eps)
                    mb[j] = self.beta1 * mb[j] + (1 - self.beta1) * dbs[j]
                    vb[j] = self.beta2 * vb[j] + (1 - self.beta2) * dbs[j] ** 2
                    bs[j] -= self.learning_rate * (mb[j] / c1) / (np.sqrt(vb[j] / c2) + self.eps)
            val, _, _ = self._loss_grads(Ws, bs, Xva, Yva)
            if not np.isfinite(val):
                raise NonfiniteLoss(f"validation loss became {val}")
            if val < best[0]:
                best = (val, [W.copy() for W in Ws], [b.copy() for b in bs])
                stale = 0
            else:
                stale += 1
                if stale >= self.patience:
                    break
        return best

    def fit(self, X, Y):
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        if X.ndim != 2 or Y.ndim != 2 or len(X) != len(Y):
            raise ShapeMismatch(f"incompatible shapes {X.shape} and {Y.shape}")
        if np.any(~np.isfinite(X)) or np.any(~np.isfinite(Y)):
            raise ValidationError("training data must be finite")

        self.x_mean_ = X.mean(axis=0)
        std = X.std(axis=0)
        self.x_std_ = np.where(std < 1e-8, 1.0, std)
        Xs = (X - self.x_mean_) / self.x_std_

        n = len(Xs)
        folds = min(self.folds, n)
        if folds < 2:
            rng = np.random.default_rng([self.seed, 0])
            val, Ws, bs = self._train_single(Xs, Y, Xs, Y, rng)
        else:
            # contiguous chronological folds; best validation model kept as-is
            bounds = np.linspace(0, n, folds + 1).astype(int)
            val, Ws, bs = np.inf, None, None
            for f in range(folds):
                lo, hi = bounds[f], bounds[f + 1]
                mask = np.zeros(n, dtype=bool)
                mask[lo:hi] = True
                rng = np.random.default_rng([self.seed, f])
                v, W_f, b_f = self._train_single(Xs[~mask], Y[~mask], Xs[mask], Y[mask], rng)
                if v < val:
                    val, Ws, bs = v, W_f, b_f
        self.weights_, self.biases_, self.val_loss_ = Ws, bs, val
        return self

    def predict(self, X):
        if self.weights_ is None:
            raise ValidationError("predict called before fit")
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        if single:
            X = X[None, :]
        Xs = (X - self.x_mean_) / self.x_std_
        _, act = self._forward(self.weights_, self.biases_, Xs)
        out = act[-1]
        return out[0] if single else out

    # -- flat-parameter view (gradient checking, serialization) ---------

    def packed_weights(self) -> np.ndarray:
        parts = []
        for W, b in zip(self.weights_, self.biases_):
            parts.append(W.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    def set_packed_weights(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=float)
        pos = 0
        for j in range(len(self.weights_)):
            W, b = self.weights_[j], self.biases_[j]
            self.weights_[j] = flat[pos : pos + W.size].reshape(W.shape)
            pos += W.size
            self.biases_[j] = flat[pos : pos + b.size].copy()
            pos += b.size
        if pos != flat.size:
            raise ShapeMismatch(f"packed vector has {flat.size} entries, expected {pos}")

    def loss_and_gradients(self, X, Y, packed=None):
        """MSE loss and its gradient as one flat vector, for checking."""
        if packed is not None:
            saved = self.packed_weights()
            self.set_packed_weights(packed)
        try:
            loss, dWs, dbs = self._loss_grads(self.weights_, self.biases_, X, Y)
            parts = []
            for dW, db in zip(dWs, dbs):
                parts.append(dW.ravel())
                parts.append(db.ravel())
            return loss, np.concatenate(parts)
        finally:
            if packed is not None:
                self.set_packed_weights(saved)


def train_mlp(split: DatasetSplit, cfg: MlpConfig, seed: int = 0) -> AllocationNet:
    net = AllocationNet(
        hidden=cfg.hidden,
        learning_rate=cfg.learning_rate,
        beta1=cfg.beta1,
        beta2=cfg.beta2,
        eps=cfg.eps,
        max_epochs=cfg.max_epochs,
        patience=cfg.patience,
        folds=cfg.folds,
        batch_size=cfg.batch_size,
        seed=seed,
    )
    return net.fit(split.X_train, split.Y_train)


def predict(model: AllocationNet, psi: np.ndarray) -> np.ndarray:
    return model.predict(psi)


# --- model artifact ---------------------------------------------------------

def save_model(model: AllocationNet, dest) -> None:
    if model.weights_ is None:
        raise ValidationError("cannot save an unfitted model")
    payload = {
        "version": np.array(ARTIFACT_VERSION),
        "seed": np.array(model.seed),
        "hidden": np.array(model.hidden, dtype=np.int64),
        "n_layers": np.array(len(model.weights_)),
        "x_mean": model.x_mean_,
        "x_std": model.x_std_,
        "val_loss": np.array(model.val_loss_),
    }
    for j, (W, b) in enumerate(zip(model.weights_, model.biases_)):
        payload[f"W{j}"] = W
        payload[f"b{j}"] = b
    np.savez(dest, **payload)


def load_model(source) -> AllocationNet:
    with np.load(source, allow_pickle=False) as data:
        version = int(data["version"])
        if version != ARTIFACT_VERSION:
            raise MalformedRecord(f"unsupported model artifact version {version}")
        net = AllocationNet(hidden=tuple(int(h) for h in data["hidden"]),
                            seed=int(data["seed"]))
        n_layers = int(data["n_layers"])
        net.weights_ = [data[f"W{j}"].copy() for j in range(n_layers)]
        net.biases_ = [data[f"b{j}"].copy() for j in range(n_layers)]
        net.x_mean_ = data["x_mean"].copy()
        net.x_std_ = data["x_std"].copy()
        net.val_loss_ = float(data["val_loss"])
    return net


# --- ensemble layer ---------------------------------------------------------

@dataclass(frozen=True)
class EnsembleWeights:
    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 1 or len(w) == 0:
            raise ValidationError("ensemble weights form a non-empty vector")
        if np.any(w <= 0.0) or not np.isclose(w.sum(), 1.0, rtol=0.0, atol=1e-9):
            raise ValidationError("ensemble weights must be positive and sum to 1")
        object.__setattr__(self, "w", w)

    def combine(self, preds: list[np.ndarray]) -> np.ndarray:
        if len(preds) != len(self.w):
            raise ShapeMismatch(f"{len(preds)} members for {len(self.w)} weights")
        return sum(wj * P for wj, P in zip(self.w, preds))


def _objective_terms(preds: list[np.ndarray], Y: np.ndarray, l2: float):
    """Quadratic form of the penalized MSE: w'(A + l2 I)w - 2 b'w + c."""
    m = len(preds)
    scale = Y.size
    A = np.empty((m, m))
    b = np.empty(m)
    for i in range(m):
        b[i] = float(np.sum(preds[i] * Y)) / scale
        for j in range(i, m):
            A[i, j] = A[j, i] = float(np.sum(preds[i] * preds[j])) / scale
    c = float(np.sum(Y * Y)) / scale
    return A + l2 * np.eye(m), b, c


def _project_simplex(v: np.ndarray) -> np.ndarray:
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    rho = np.flatnonzero(u - css / (np.arange(len(v)) + 1) > 0)[-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def fit_ensemble(preds: list[np.ndarray], Y: np.ndarray, l2: float = 0.001) -> EnsembleWeights:
    """Simplex-constrained weights minimizing penalized MSE of the blend.

    Up to three members, a dense 0.001-resolution grid is exhaustive; the
    grid winner is then polished by projected gradient (the objective is a
    convex quadratic, so the polish can only improve). More members skip
    straight to projected gradient seeded at the grid-free best of
    {uniform, each vertex}.
    """
    if not preds:
        raise ShapeMismatch("ensemble needs at least one member")
    Y = np.asarray(Y, dtype=float)
    preds = [np.asarray(P, dtype=float) for P in preds]
    for j, P in enumerate(preds):
        if P.shape != Y.shape:
            raise ShapeMismatch(
                f"member {j} predictions have shape {P.shape}, targets {Y.shape}"
            )
    m = len(preds)
    if m == 1:
        return EnsembleWeights(np.array([1.0]))

    Q, b, c = _objective_terms(preds, Y, l2)
    obj = lambda w: float(w @ Q @ w - 2.0 * b @ w + c)

    candidates = [np.full(m, 1.0 / m)]
    candidates.extend(np.eye(m)[j] for j in range(m))
    if m == 2:
        g = np.arange(1001) / 1000.0
        vals = Q[0, 0] * g**2 + 2 * Q[0, 1] * g * (1 - g) + Q[1, 1] * (1 - g) ** 2 \
            - 2 * (b[0] * g + b[1] * (1 - g)) + c
        k = int(np.argmin(vals))
        candidates.append(np.array([g[k], 1 - g[k]]))
    elif m == 3:
        best_val, best_w = np.inf, None
        w1 = np.arange(1001) / 1000.0
        for i in range(1001):
            a = i / 1000.0
            g = w1[: 1001 - i]
            h = 1.0 - a - g
            vals = (
                Q[0, 0] * a**2 + Q[1, 1] * g**2 + Q[2, 2] * h**2
                + 2 * (Q[0, 1] * a * g + Q[0, 2] * a * h + Q[1, 2] * g * h)
                - 2 * (b[0] * a + b[1] * g + b[2] * h) + c
            )
            k = int(np.argmin(vals))
            if vals[k] < best_val:
                best_val, best_w = float(vals[k]), np.array([a, g[k], h[k]])
        candidates.append(best_w)

    # convex polish from the best candidate found so far
    w = min(candidates, key=obj).copy()
    step = 1.0 / (2.0 * float(np.linalg.eigvalsh(Q)[-1]) + 1e-12)
    for _ in range(10_000):
        w_next = _project_simplex(w - step * (2.0 * (Q @ w) - 2.0 * b))
        if np.max(np.abs(w_next - w)) < 1e-13:
            w = w_next
            break
        w = w_next

    w = min([w, *candidates], key=obj)
    # keep strictly inside the simplex; the nudge is far below objective slack
    w = np.maximum(w, 1e-9)
    return EnsembleWeights(w / w.sum())


def external_predictions(source, expected_ids=None) -> np.ndarray:
    """Load an `epoch_id, rho_0..rho_tau` prediction file as a matrix.

    Rows must be valid reduced allocations; when `expected_ids` is given,
    the file must cover exactly those epochs in order.
    """
    if hasattr(source, "read"):
        text = source.read()
    else:
        with open(source, "r", encoding="utf-8") as fh:
            text = fh.read()
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise MalformedRecord("empty prediction file")
    head = [col.strip() for col in rows[0]]
    if head[:1] != ["epoch_id"] or len(head) < 2:
        raise MalformedRecord(f"unexpected prediction header {head}")
    ids, mat = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(head):
            raise MalformedRecord(f"line {lineno}: expected {len(head)} fields")
        try:
            ids.append(int(row[0]))
            vec = np.array([float(v) for v in row[1:]])
        except ValueError as exc:
            raise MalformedRecord(f"line {lineno}: {exc}") from None
        if np.any(vec < 0.0):
            raise RowSumViolation(f"line {lineno}: negative weight")
        if abs(vec.sum() - 1.0) > 1e-6:
            raise RowSumViolation(f"line {lineno}: weights sum to {vec.sum()}")
        mat.append(vec)
    if expected_ids is not None and ids != list(expected_ids):
        raise EpochMismatch(
            f"prediction file covers epochs {ids[:3]}…, expected {list(expected_ids)[:3]}…"
        )
    return np.array(mat)
