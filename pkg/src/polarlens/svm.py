"""Soft-margin RBF SVM trained by sequential minimal optimization.

Platt-style pair sweeps with seeded random second-index selection and an
exhaustive-probe fallback; a full sweep with no update is a fixpoint, so
max_passes defaults to 1.  Features are z-scored from the training split
by default.  The full kernel matrix is cached for n <= cache_limit and
computed row-on-demand above that.
"""

from dataclasses import asdict, dataclass

import numpy as np

from . import kernels, store
from .numerics import Rng, ShapeError


@dataclass(frozen=True)
class SVMConfig:
    C: float = 1.0
    gamma: float = None  # None -> 1 / feature_dim
    tol: float = 1e-3
    max_passes: int = 1
    max_sweeps: int = 2000
    standardize: bool = True
    cache_limit: int = 20000

    def __post_init__(self):
        if self.C <= 0 or self.tol <= 0:
            raise ValueError("C and tol must be positive")
        if self.gamma is not None and self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.max_passes <= 0 or self.max_sweeps <= 0:
            raise ValueError("max_passes and max_sweeps must be positive")


@dataclass
class SVMModel:
    """Support vectors live in standardized space; coefs are alpha_i * y_i."""

    support_vectors: np.ndarray
    dual_coefs: np.ndarray
    bias: float
    gamma: float
    mean: np.ndarray
    scale: np.ndarray
    config: SVMConfig
    diagnostics: dict = None


def rbf_kernel(x: np.ndarray, y: np.ndarray, gamma: float) -> float:
    """exp(-gamma * ||x - y||^2)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"rbf_kernel dims differ: {x.shape} vs {y.shape}")
    diff = x - y
    return float(np.exp(-gamma * np.dot(diff, diff)))


def _rbf_row(points: np.ndarray, x: np.ndarray, gamma: float) -> np.ndarray:
    diff = points - x
    return np.exp(-gamma * (diff * diff).sum(axis=1))


def _kernel_matrix(points: np.ndarray, gamma: float) -> np.ndarray:
    n = points.shape[0]
    k = np.empty((n, n))
    for i in range(n):
        k[i] = _rbf_row(points, points[i], gamma)
    return k


def _standardize_stats(x: np.ndarray):
    mean = x.mean(axis=0)
    scale = x.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    return mean, scale


def _jdraw_stream(rng: Rng, n: int, length: int) -> np.ndarray:
    """Seeded second-index offsets in [0, n-2]; consumed cyclically."""
    raws = rng._raw_block(length)
    return (raws % np.uint64(max(n - 1, 1))).astype(np.int64)


def _smo_uncached(x, y, c, tol, max_passes, max_sweeps, jdraws, gamma, cache_rows):
    """Row-on-demand mirror of kernels._smo_src for n above the cache limit."""
    n = x.shape[0]
    diag = np.ones(n)  # k(x, x) = 1 for the RBF kernel
    rows = {}
    order = []

    def row(i):
        r = rows.get(i)
        if r is None:
            r = _rbf_row(x, x[i], gamma)
            rows[i] = r
            order.append(i)
            if len(order) > cache_rows:
                del rows[order.pop(0)]
        return r

    alpha = np.zeros(n)
    b = 0.0
    passes = sweeps = draw_pos = 0
    while passes < max_passes and sweeps < max_sweeps:
        changed = 0
        for i in range(n):
            ay = alpha * y
            ki = row(i)
            ei = float(np.dot(ay, ki)) + b - y[i]
            ri = y[i] * ei
            if not ((ri < -tol and alpha[i] < c) or (ri > tol and alpha[i] > 0.0)):
                continue
            jstart = int(jdraws[draw_pos % jdraws.shape[0]])
            draw_pos += 1
            for probe in range(n - 1):
                j = (i + 1 + (jstart + probe) % (n - 1)) % n
                kj = row(j)
                ej = float(np.dot(ay, kj)) + b - y[j]
                ai_old, aj_old = alpha[i], alpha[j]
                s = y[i] * y[j]
                if s < 0.0:
                    lo, hi = max(0.0, aj_old - ai_old), min(c, c + aj_old - ai_old)
                else:
                    lo, hi = max(0.0, ai_old + aj_old - c), min(c, ai_old + aj_old)
                if lo >= hi:
                    continue
                kij = ki[j]
                eta = diag[i] + diag[j] - 2.0 * kij
                if eta > 0.0:
                    aj_new = min(max(aj_old + y[j] * (ei - ej) / eta, lo), hi)
                else:
                    vi = float(np.dot(ay, ki)) - ai_old * y[i] * diag[i] - aj_old * y[j] * kij
                    vj = float(np.dot(ay, kj)) - ai_old * y[i] * kij - aj_old * y[j] * diag[j]
                    ail = ai_old + s * (aj_old - lo)
                    aih = ai_old + s * (aj_old - hi)
                    wl = (ail + lo - 0.5 * (ail * ail * diag[i] + lo * lo * diag[j])
                          - s * ail * lo * kij - y[i] * ail * vi - y[j] * lo * vj)
                    wh = (aih + hi - 0.5 * (aih * aih * diag[i] + hi * hi * diag[j])
                          - s * aih * hi * kij - y[i] * aih * vi - y[j] * hi * vj)
                    if wl > wh + 1e-12:
                        aj_new = lo
                    elif wh > wl + 1e-12:
                        aj_new = hi
                    else:
                        continue
                if abs(aj_new - aj_old) < 1e-12 * (aj_new + aj_old + 1e-12):
                    continue
                ai_new = ai_old + s * (aj_old - aj_new)
                b1 = b - ei - y[i] * (ai_new - ai_old) * diag[i] - y[j] * (aj_new - aj_old) * kij
                b2 = b - ej - y[i] * (ai_new - ai_old) * kij - y[j] * (aj_new - aj_old) * diag[j]
                if 0.0 < ai_new < c:
                    b = b1
                elif 0.0 < aj_new < c:
                    b = b2
                else:
                    b = 0.5 * (b1 + b2)
                alpha[i] = ai_new
                alpha[j] = aj_new
                changed += 1
                break
        sweeps += 1
        passes = passes + 1 if changed == 0 else 0
    return alpha, b, sweeps, 1 if passes >= max_passes else 0


def dual_objective(kmat: np.ndarray, alpha: np.ndarray, y: np.ndarray) -> float:
    ay = alpha * y
    return float(alpha.sum() - 0.5 * np.dot(ay, kmat @ ay))


def train_smo(data, cfg: SVMConfig, seed: int = 0, track_objective=False) -> SVMModel:
    """Fit the dual by SMO; deterministic given the seed.

    data is (features (n, d), labels (n,) in {-1, +1}).  The returned
    model keeps only alpha > 0 points as support vectors; full-alpha
    convergence information lands in model.diagnostics.
    """
    x, y = data
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ShapeError(f"bad data shapes {x.shape} / {y.shape}")
    if x.shape[0] < 2:
        raise ValueError("need at least two training points")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be -1 or +1")
    if np.unique(y).size < 2:
        raise ValueError("training data contains a single class")

    n, d = x.shape
    gamma = cfg.gamma if cfg.gamma is not None else 1.0 / d
    if cfg.standardize:
        mean, scale = _standardize_stats(x)
    else:
        mean, scale = np.zeros(d), np.ones(d)
    xs = (x - mean) / scale

    rng = Rng(seed)
    jdraws = _jdraw_stream(rng, n, min(cfg.max_sweeps * n, 2_000_000))
    obj_trace = None
    if n <= cfg.cache_limit:
        kmat = _kernel_matrix(xs, gamma)
        obj_buf = np.zeros(min(cfg.max_sweeps * n, 500_000)) if track_objective else None
        alpha, bias, sweeps, converged, n_obj = kernels.smo_sweeps(
            kmat, y, cfg.C, cfg.tol, cfg.max_passes, cfg.max_sweeps, jdraws, obj_buf
        )
        objective = dual_objective(kmat, alpha, y)
        if track_objective:
            obj_trace = obj_buf[:n_obj].copy()
    else:
        alpha, bias, sweeps, converged = _smo_uncached(
            xs, y, cfg.C, cfg.tol, cfg.max_passes, cfg.max_sweeps, jdraws, gamma, 512
        )
        objective = None

    mask = alpha > 0.0
    model = SVMModel(
        support_vectors=xs[mask].copy(),
        dual_coefs=(alpha * y)[mask].copy(),
        bias=float(bias),
        gamma=gamma,
        mean=mean,
        scale=scale,
        config=cfg,
        diagnostics={
            "alpha": alpha,
            "sweeps": int(sweeps),
            "converged": bool(converged),
            "dual_objective": objective,
            "objective_trace": obj_trace,
            "seed": seed,
        },
    )
    return model


def decision_values(model: SVMModel, x: np.ndarray) -> np.ndarray:
    """Raw decision function for a batch of raw-space vectors (m, d)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != model.mean.shape[0]:
        raise ShapeError(
            f"feature dim {x.shape[1]} != model dim {model.mean.shape[0]}"
        )
    xs = (x - model.mean) / model.scale
    out = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        out[i] = float(np.dot(model.dual_coefs, _rbf_row(model.support_vectors, xs[i], model.gamma))) + model.bias
    return out


def predict(model: SVMModel, x: np.ndarray):
    """(label, decision value) for one vector; exact zero maps to +1."""
    dec = float(decision_values(model, np.asarray(x)[None, :])[0])
    return (1 if dec >= 0.0 else -1), dec


def predict_batch(model: SVMModel, x: np.ndarray):
    dec = decision_values(model, x)
    return np.where(dec >= 0.0, 1, -1).astype(np.int64), dec


def check_kkt(model: SVMModel, data) -> float:
    """Max KKT violation over the training set the model was fitted on.

    alpha = 0 wants y*f >= 1, interior alpha wants y*f = 1, alpha = C
    wants y*f <= 1; returns the worst overshoot (0 means exact).
    """
    x, y = data
    alpha = model.diagnostics["alpha"]
    _, dec = predict_batch(model, np.asarray(x, dtype=np.float64))
    yf = np.asarray(y, dtype=np.float64) * dec
    c = model.config.C
    worst = 0.0
    for a, margin in zip(alpha, yf):
        if a <= 0.0:
            worst = max(worst, 1.0 - margin)
        elif a >= c:
            worst = max(worst, margin - 1.0)
        else:
            worst = max(worst, abs(margin - 1.0))
    return worst


def save_model(model: SVMModel, path) -> None:
    cfg = asdict(model.config)
    cfg["gamma"] = model.gamma  # persist the resolved value
    tensors = {
        "support_vectors": model.support_vectors,
        "dual_coefs": model.dual_coefs,
        "bias": np.array([model.bias]),
        "mean": model.mean,
        "scale": model.scale,
    }
    store.save_tensors(path, "svm", cfg, tensors)


def load_model(path) -> SVMModel:
    kind, cfg, tensors = store.load_tensors(path)
    if kind != "svm":
        raise store.ContainerError(f"expected an svm container, got {kind!r}")
    return SVMModel(
        support_vectors=tensors["support_vectors"],
        dual_coefs=tensors["dual_coefs"],
        bias=float(tensors["bias"][0]),
        gamma=cfg["gamma"],
        mean=tensors["mean"],
        scale=tensors["scale"],
        config=SVMConfig(**cfg),
        diagnostics=None,
    )
