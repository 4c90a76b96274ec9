"""LSTM classifier over embedded super-tweet sequences.

Standard cell: f, i, o = sigmoid(W [x_t; h_{t-1}] + b), g = tanh(...),
c_t = f*c_{t-1} + i*g, h_t = o*tanh(c_t), with h_0 = c_0 = 0 and the
forget bias initialised to 1.  The pooled text feature is the last hidden
state or the mean over all timesteps, followed by a 2-way softmax head.
Training is batched BPTT with cross-entropy, Adam by default, global-norm
gradient clipping, and early stopping on validation accuracy; everything
is bit-deterministic given the seed and data order.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels, store
from .numerics import Rng, ShapeError, softmax_rows
from .optim import clip_global_norm, make_optimizer
from .text import SequenceMatrix

POOLINGS = ("last", "mean")


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during training."""


@dataclass(frozen=True)
class LSTMConfig:
    input_dim: int
    hidden_dim: int
    pooling: str = "mean"
    timesteps: int = 150
    num_classes: int = 2

    def __post_init__(self):
        if self.input_dim <= 0 or self.hidden_dim <= 0 or self.timesteps <= 0:
            raise ValueError("all dimensions must be positive")
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}")
        if self.num_classes != 2:
            raise ValueError("binary classification only")


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 10
    clip_norm: float = 5.0
    seed: int = 0
    patience: int = 3
    dtype: str = "float64"

    def __post_init__(self):
        if self.learning_rate <= 0 or self.clip_norm <= 0:
            raise ValueError("learning_rate and clip_norm must be positive")
        if self.batch_size <= 0 or self.epochs <= 0 or self.patience <= 0:
            raise ValueError("batch_size, epochs and patience must be positive")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be float64 or float32")


@dataclass
class LSTMModel:
    """Gate weights W_* act on [x_t; h_{t-1}]; W_c/b_c form the softmax head."""

    W_f: np.ndarray
    W_i: np.ndarray
    W_o: np.ndarray
    W_g: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_o: np.ndarray
    b_g: np.ndarray
    W_c: np.ndarray
    b_c: np.ndarray
    config: LSTMConfig


_GATES = ("f", "i", "o", "g")


def init_params(cfg: LSTMConfig, rng: Rng) -> dict:
    """Packed parameter dict: Wx (D,4H), Wh (H,4H), b (4H,), Wc (2,H), bc (2,).

    Weights are uniform(-k, k) with k = 1/sqrt(H); the forget-gate bias
    starts at 1, all other biases at 0.
    """
    d, h = cfg.input_dim, cfg.hidden_dim
    k = 1.0 / math.sqrt(h)
    wx = np.empty((d, 4 * h))
    wh = np.empty((h, 4 * h))
    b = np.zeros(4 * h)
    b[0:h] = 1.0
    for g_idx in range(4):
        full = rng.uniform(size=(h, d + h), low=-k, high=k)
        wx[:, g_idx * h : (g_idx + 1) * h] = full[:, :d].T
        wh[:, g_idx * h : (g_idx + 1) * h] = full[:, d:].T
    wc = rng.uniform(size=(2, h), low=-k, high=k)
    return {"Wx": wx, "Wh": wh, "b": b, "Wc": wc, "bc": np.zeros(2)}


def pack_model(model: LSTMModel) -> dict:
    cfg = model.config
    d, h = cfg.input_dim, cfg.hidden_dim
    wx = np.empty((d, 4 * h))
    wh = np.empty((h, 4 * h))
    b = np.empty(4 * h)
    for g_idx, name in enumerate(_GATES):
        full = getattr(model, f"W_{name}")
        wx[:, g_idx * h : (g_idx + 1) * h] = full[:, :d].T
        wh[:, g_idx * h : (g_idx + 1) * h] = full[:, d:].T
        b[g_idx * h : (g_idx + 1) * h] = getattr(model, f"b_{name}")
    return {"Wx": wx, "Wh": wh, "b": b, "Wc": model.W_c.copy(), "bc": model.b_c.copy()}


def unpack_model(params: dict, cfg: LSTMConfig) -> LSTMModel:
    h = cfg.hidden_dim
    fields = {}
    for g_idx, name in enumerate(_GATES):
        sl = slice(g_idx * h, (g_idx + 1) * h)
        fields[f"W_{name}"] = np.hstack([params["Wx"][:, sl].T, params["Wh"][:, sl].T])
        fields[f"b_{name}"] = params["b"][sl].copy()
    return LSTMModel(
        W_c=params["Wc"].copy(), b_c=params["bc"].copy(), config=cfg, **fields
    )


def _check_input(m: SequenceMatrix, cfg: LSTMConfig) -> None:
    d, t = m.values.shape
    if d != cfg.input_dim or t != cfg.timesteps:
        raise ShapeError(
            f"sequence is {d}x{t}, model expects {cfg.input_dim}x{cfg.timesteps}"
        )


def _forward_pooled(params, xb, pooling):
    """xb (T, B, D) -> (pooled (B, H), caches) using the selected backend."""
    hout, c, f, i, o, g, tc = kernels.lstm_forward(xb, params["Wx"], params["Wh"], params["b"])
    if pooling == "last":
        pooled = hout[-1]
    else:
        pooled = hout.sum(axis=0) / hout.shape[0]
    return pooled, (hout, c, f, i, o, g, tc)


def _backward_from_pooled(params, xb, caches, dpooled, pooling):
    """Gradient of the loss w.r.t. packed LSTM parameters given dpooled."""
    hout, c, f, i, o, g, tc = caches
    t, bsz, h = hout.shape
    dh_all = np.zeros_like(hout)
    if pooling == "last":
        dh_all[-1] = dpooled
    else:
        dh_all[:] = dpooled / t
    wht = np.ascontiguousarray(params["Wh"].T)
    dgates = kernels.lstm_backward(dh_all, f, i, o, g, c, tc, wht)
    dgflat = dgates.reshape(t * bsz, 4 * h)
    xflat = xb.reshape(t * bsz, xb.shape[2])
    hprev = np.concatenate([np.zeros((1, bsz, h), hout.dtype), hout[:-1]])
    dwx = xflat.T @ dgflat
    dwh = hprev.reshape(t * bsz, h).T @ dgflat
    db = dgflat.sum(axis=0)
    return {"Wx": dwx, "Wh": dwh, "b": db}


def loss_and_grads(params: dict, xb: np.ndarray, labels: np.ndarray, pooling: str):
    """Mean cross-entropy over a batch plus gradients for every tensor."""
    bsz = xb.shape[1]
    pooled, caches = _forward_pooled(params, xb, pooling)
    logits = pooled @ params["Wc"].T + params["bc"]
    probs = softmax_rows(logits)
    eps = np.finfo(np.float64).tiny
    loss = -float(np.mean(np.log(probs[np.arange(bsz), labels] + eps)))
    dlogits = probs.copy()
    dlogits[np.arange(bsz), labels] -= 1.0
    dlogits /= bsz
    grads = {
        "Wc": dlogits.T @ pooled,
        "bc": dlogits.sum(axis=0),
    }
    dpooled = dlogits @ params["Wc"]
    grads.update(_backward_from_pooled(params, xb, caches, dpooled, pooling))
    return loss, grads


def stack_sequences(seqs) -> np.ndarray:
    """Pack SequenceMatrix values into one (N, T, D) array."""
    return np.ascontiguousarray(np.stack([m.values.T for m in seqs]))


def _batch_view(x: np.ndarray, idx) -> np.ndarray:
    return np.ascontiguousarray(x[idx].transpose(1, 0, 2))


def predict_probs(params: dict, x: np.ndarray, pooling: str, chunk=256) -> np.ndarray:
    """Class probabilities for stacked sequences x (N, T, D)."""
    out = np.empty((x.shape[0], 2))
    for start in range(0, x.shape[0], chunk):
        idx = slice(start, min(start + chunk, x.shape[0]))
        pooled, _ = _forward_pooled(params, _batch_view(x, idx), pooling)
        out[idx] = softmax_rows(pooled @ params["Wc"].T + params["bc"])
    return out


def lstm_forward(m: SequenceMatrix, model: LSTMModel):
    """Hidden states h_1..h_T (T, H) and the pooled text feature (H,)."""
    _check_input(m, model.config)
    params = pack_model(model)
    xb = np.ascontiguousarray(m.values.T[:, None, :])
    pooled, caches = _forward_pooled(params, xb, model.config.pooling)
    return caches[0][:, 0, :], pooled[0]


def classify(m: SequenceMatrix, model: LSTMModel) -> np.ndarray:
    """Class probability 2-vector for one sequence."""
    _, pooled = lstm_forward(m, model)
    return softmax_rows(pooled @ model.W_c.T + model.b_c)


def _as_arrays(dataset):
    seqs, labels = dataset
    x = seqs if isinstance(seqs, np.ndarray) else stack_sequences(seqs)
    y = np.asarray(labels, dtype=np.int64)
    if x.shape[0] != y.shape[0]:
        raise ShapeError(f"{x.shape[0]} sequences but {y.shape[0]} labels")
    return x, y


def train(train_set, val_set, cfg: TrainConfig, lcfg: LSTMConfig):
    """Train on (sequences, labels); returns (best model, log dict).

    Sequences may be a list of SequenceMatrix or an (N, T, D) array.  The
    returned model is the best-validation-accuracy checkpoint; the log
    carries per-epoch train loss and validation accuracy.
    """
    x_train, y_train = _as_arrays(train_set)
    x_val, y_val = _as_arrays(val_set)
    classes = np.unique(y_train)
    if classes.size < 2:
        raise ValueError("training data contains a single class")
    if x_train.shape[1] != lcfg.timesteps or x_train.shape[2] != lcfg.input_dim:
        raise ShapeError(
            f"data is T={x_train.shape[1]} D={x_train.shape[2]}, "
            f"config wants T={lcfg.timesteps} D={lcfg.input_dim}"
        )

    rng = Rng(cfg.seed)
    params = init_params(lcfg, rng)
    dtype = np.float32 if cfg.dtype == "float32" else np.float64
    if dtype is np.float32:
        params = {k: v.astype(np.float32) for k, v in params.items()}
        x_train = x_train.astype(np.float32)
        x_val = x_val.astype(np.float32)
    opt = make_optimizer(cfg.optimizer, params, cfg.learning_rate)

    order = np.arange(x_train.shape[0])
    best = {k: v.copy() for k, v in params.items()}
    best_acc = -1.0
    best_epoch = -1
    stale = 0
    log_epochs = []
    for epoch in range(cfg.epochs):
        perm = list(order)
        rng.shuffle(perm)
        perm = np.array(perm)
        total_loss = 0.0
        for start in range(0, perm.size, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            xb = _batch_view(x_train, idx)
            loss, grads = loss_and_grads(params, xb, y_train[idx], lcfg.pooling)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            clip_global_norm(grads, cfg.clip_norm)
            opt.step(params, grads)
            total_loss += loss * idx.size
        train_loss = total_loss / perm.size
        val_pred = predict_probs(params, x_val, lcfg.pooling).argmax(axis=1)
        val_acc = float(np.mean(val_pred == y_val))
        log_epochs.append(
            {"epoch": epoch, "train_loss": train_loss, "val_accuracy": val_acc}
        )
        if val_acc > best_acc:
            best_acc = val_acc
            best_epoch = epoch
            best = {k: v.copy() for k, v in params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    best = {k: v.astype(np.float64) for k, v in best.items()}
    model = unpack_model(best, lcfg)
    log = {
        "epochs": log_epochs,
        "best_epoch": best_epoch,
        "best_val_accuracy": best_acc,
        "seed": cfg.seed,
        "train_config": asdict(cfg),
        "model_config": asdict(lcfg),
    }
    return model, log


def save_model(model: LSTMModel, path) -> None:
    tensors = {
        name: getattr(model, name)
        for name in ("W_f", "W_i", "W_o", "W_g", "b_f", "b_i", "b_o", "b_g", "W_c", "b_c")
    }
    store.save_tensors(path, "lstm", asdict(model.config), tensors)


def load_model(path) -> LSTMModel:
    kind, config, tensors = store.load_tensors(path)
    if kind != "lstm":
        raise store.ContainerError(f"expected an lstm container, got {kind!r}")
    return LSTMModel(config=LSTMConfig(**config), **tensors)
