"""ERD regressors: hand-crafted-feature least squares, a small MLP, and
U-Net inference, all mapping the current measurement state to per-channel
estimated-reduction-in-distortion maps.

Feature vector per unmeasured cell t (6 entries, from the reconstruction of
one channel):
  0. inverse-distance-weighted mean |recon(t) - v_i| over the 10 nearest
     measured values v_i
  1. variance of those neighbor values
  2. physical distance to the nearest measured cell
  3. measured-cell count within a 2-pitch radius, divided by the disc area
  4. magnitude of the central-difference gradient of the reconstruction at t
  5. mean |recon(t) - recon(u)| over the 8-connected neighbor cells u
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import MeasuredValues, MeasurementMask
from .neighbors import NeighborInfo, nearest_measured
from .recon import DEFAULT_NEIGHBORS, Reconstruction
from .rd import RdParams
from . import unet

N_FEATURES = 6

_EIGHT_NEIGHBORS = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)
                    if (dy, dx) != (0, 0)]


def density_radius_um(grid) -> float:
    """Radius of the measured-density disc: twice the mean pixel pitch."""
    return 2.0 * grid.pixel_pitch_um


def extract_features(recon: Reconstruction, mask: MeasurementMask, channel: int,
                     neighbors: int = DEFAULT_NEIGHBORS,
                     nn: NeighborInfo | None = None) -> np.ndarray:
    """(q, 6) feature rows for the unmeasured cells, in row-major order."""
    if mask.n_measured == 0:
        raise ValueError("features need at least one measured cell")
    grid = mask.grid
    plane = recon.stack.planes[channel]
    t_cells = mask.unmeasured_cells
    q = len(t_cells)
    if q == 0:
        return np.empty((0, N_FEATURES))
    if nn is None or nn.radius_counts is None:
        nn = nearest_measured(mask, neighbors=neighbors,
                              count_radius_um=density_radius_um(grid))
    k_eff = min(neighbors, mask.n_measured)

    s_cells = mask.measured_cells
    measured_vals = plane[s_cells[:, 0], s_cells[:, 1]]
    nb_vals = measured_vals[nn.indices[:, :k_eff]]
    x_t = plane[t_cells[:, 0], t_cells[:, 1]]

    w = 1.0 / nn.d2[:, :k_eff]
    wn = w / w.sum(axis=1, keepdims=True)

    feats = np.empty((q, N_FEATURES))
    feats[:, 0] = (wn * np.abs(nb_vals - x_t[:, None])).sum(axis=1)
    feats[:, 1] = nb_vals.var(axis=1)
    feats[:, 2] = np.sqrt(nn.d2[:, 0])
    radius = density_radius_um(grid)
    feats[:, 3] = nn.radius_counts / (np.pi * radius * radius)

    gy, gx = np.gradient(plane, grid.pixel_height_um, grid.pixel_width_um)
    feats[:, 4] = np.hypot(gy, gx)[t_cells[:, 0], t_cells[:, 1]]

    # 8-connected mean absolute difference, clipped at the border
    diff_sum = np.zeros(q)
    diff_n = np.zeros(q)
    for dy, dx in _EIGHT_NEIGHBORS:
        ny, nx = t_cells[:, 0] + dy, t_cells[:, 1] + dx
        ok = (ny >= 0) & (ny < grid.rows) & (nx >= 0) & (nx < grid.cols)
        diff_sum[ok] += np.abs(x_t[ok] - plane[ny[ok], nx[ok]])
        diff_n[ok] += 1
    feats[:, 5] = np.where(diff_n > 0, diff_sum / np.maximum(diff_n, 1), 0.0)
    return feats


# ---------------------------------------------------------------------------
# least squares

@dataclass(frozen=True)
class LsFitReport:
    rows: int
    residual: float
    ridge_engaged: bool


@dataclass(frozen=True)
class LsModel:
    """Linear ERD regressor; theta[0] is the bias."""

    theta: np.ndarray
    channels: tuple[int, ...] | None = None
    report: LsFitReport | None = None

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=np.float64)
        if not np.all(np.isfinite(theta)):
            raise ValueError("model weights must be finite")
        object.__setattr__(self, "theta", theta)

    def predict(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        return self.theta[0] + features @ self.theta[1:]

    def predict_design(self, design: np.ndarray) -> np.ndarray:
        """Linear map on full design rows (bias column included)."""
        return np.asarray(design, dtype=np.float64) @ self.theta


RIDGE_LAMBDA = 1e-8


def fit_ls(features: np.ndarray, targets: np.ndarray,
           channels: tuple[int, ...] | None = None) -> LsModel:
    """Least-squares fit via normal equations.

    A rank-deficient design falls back to ridge regularization with
    lambda = 1e-8, flagged in the returned report.
    """
    features = np.asarray(features, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if features.ndim != 2 or len(features) != len(targets):
        raise ValueError("features must be (n, p) with one target per row")
    design = np.hstack([np.ones((len(features), 1)), features])
    n_params = design.shape[1]
    gram = design.T @ design
    rhs = design.T @ targets

    ridge_engaged = bool(np.linalg.matrix_rank(design) < n_params)
    if not ridge_engaged:
        try:
            theta = np.linalg.solve(gram, rhs)
        except np.linalg.LinAlgError:
            ridge_engaged = True
    if ridge_engaged:
        theta = np.linalg.solve(gram + RIDGE_LAMBDA * np.eye(n_params), rhs)

    residual = float(np.linalg.norm(design @ theta - targets))
    return LsModel(theta, channels, LsFitReport(len(targets), residual, ridge_engaged))


# ---------------------------------------------------------------------------
# MLP

@dataclass(frozen=True)
class MlpModel:
    """Fully connected ERD regressor: 5 hidden layers x 50 ReLU units by
    default, linear scalar output. Inputs are standardized with the stored
    training statistics."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    feat_mean: np.ndarray
    feat_std: np.ndarray
    channels: tuple[int, ...] | None = None
    seed: int | None = None

    def __post_init__(self):
        for w, b in zip(self.weights, self.biases):
            if w.shape[1] != b.shape[0]:
                raise ValueError("layer weight/bias shapes inconsistent")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("model parameters must be finite")
        shapes = [w.shape for w in self.weights]
        for (_, o), (i, _) in zip(shapes, shapes[1:]):
            if o != i:
                raise ValueError("consecutive layer shapes do not chain")

    def predict(self, features: np.ndarray) -> np.ndarray:
        x = (np.asarray(features, dtype=np.float64) - self.feat_mean) / self.feat_std
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            x = x @ w + b
            if i < last:
                x = np.maximum(x, 0.0)
        return x[:, 0]


def fit_mlp(features: np.ndarray, targets: np.ndarray, epochs: int = 500,
            lr: float = 1e-3, hidden_layers: int = 5, hidden_units: int = 50,
            batch_size: int = 256, seed: int = 0,
            channels: tuple[int, ...] | None = None) -> tuple[MlpModel, list[float]]:
    """Train the MLP with Adam on a squared-error loss.

    Features are standardized to zero mean / unit variance using statistics
    kept inside the model. Returns the model and the per-epoch training loss
    history (full-set loss, so history[-1] <= history[0] is checkable).
    Deterministic for a fixed seed. Raises on a non-finite loss, which
    usually means the learning rate is too high for the data scale.
    """
    features = np.asarray(features, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if len(features) < 1 or len(features) != len(targets):
        raise ValueError("need at least one (feature, target) pair")
    rng = np.random.default_rng(seed)

    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    x_all = (features - mean) / std

    dims = [features.shape[1]] + [hidden_units] * hidden_layers + [1]
    weights = [rng.normal(0.0, np.sqrt(2.0 / dims[i]), size=(dims[i], dims[i + 1]))
               for i in range(len(dims) - 1)]
    weights[-1] = np.zeros_like(weights[-1])  # zero-init regression head
    biases = [np.zeros(dims[i + 1]) for i in range(len(dims) - 1)]

    m_w = [np.zeros_like(w) for w in weights]
    v_w = [np.zeros_like(w) for w in weights]
    m_b = [np.zeros_like(b) for b in biases]
    v_b = [np.zeros_like(b) for b in biases]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    adam_t = 0

    def forward(x):
        acts = [x]
        for i, (w, b) in enumerate(zip(weights, biases)):
            x = x @ w + b
            if i < len(weights) - 1:
                x = np.maximum(x, 0.0)
            acts.append(x)
        return acts

    def full_loss():
        pred = forward(x_all)[-1][:, 0]
        return float(np.mean((pred - targets) ** 2))

    history = [full_loss()]
    n = len(x_all)
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            xb, yb = x_all[idx], targets[idx]
            acts = forward(xb)
            pred = acts[-1][:, 0]
            grad = (2.0 / len(idx)) * (pred - yb)[:, None]
            adam_t += 1
            for i in reversed(range(len(weights))):
                gw = acts[i].T @ grad
                gb = grad.sum(axis=0)
                if i > 0:
                    grad = (grad @ weights[i].T) * (acts[i] > 0)
                for p, g, m, v in ((weights[i], gw, m_w[i], v_w[i]),
                                   (biases[i], gb, m_b[i], v_b[i])):
                    m[...] = beta1 * m + (1 - beta1) * g
                    v[...] = beta2 * v + (1 - beta2) * g * g
                    mh = m / (1 - beta1 ** adam_t)
                    vh = v / (1 - beta2 ** adam_t)
                    p -= lr * mh / (np.sqrt(vh) + eps)
        loss = full_loss()
        if not np.isfinite(loss):
            raise RuntimeError(
                f"training diverged (non-finite loss at epoch {len(history)}); "
                "the learning rate is likely too high for the data scale")
        history.append(loss)

    model = MlpModel(tuple(weights), tuple(biases), mean, std, channels, seed)
    return model, history


# ---------------------------------------------------------------------------
# model input planes and ERD maps

def model_input(recon: Reconstruction, measured: MeasuredValues, channel: int) -> np.ndarray:
    """Network input for one channel: three planes mapped to 2-D locations.

    Plane 0 holds reconstruction values at unmeasured cells (zero at
    measured), plane 1 the measured values (zero at unmeasured), plane 2 the
    binary measured mask.
    """
    mask = measured.mask
    m = mask.measured.astype(np.float64)
    plane = recon.stack.planes[channel]
    return np.stack([plane * (1.0 - m), plane * m, m])


@dataclass(frozen=True)
class ErdMap:
    """Estimated reduction in distortion per channel, plus the average.

    Every plane is zero at measured locations (enforced post-inference).
    """

    planes: np.ndarray
    averaged: np.ndarray
    channels: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(z) for z in self.channels))


ErdModel = LsModel | MlpModel | unet.UNetModel


def erd_for(model: ErdModel, recon: Reconstruction, measured: MeasuredValues,
            channels: tuple[int, ...] | None = None,
            neighbors: int = DEFAULT_NEIGHBORS,
            nn: NeighborInfo | None = None) -> ErdMap:
    """Per-channel ERD from any model family, zeroed on measured cells.

    nn may carry a precomputed neighbor query (with radius counts) for the
    current mask; the acquisition loop shares one query per step.
    """
    mask = measured.mask
    requested = channels if channels is not None else getattr(model, "channels", None)
    if requested is None:
        requested = tuple(range(measured.n_channels))
    trained = getattr(model, "channels", None)
    if trained is not None and tuple(requested) != tuple(trained):
        raise ValueError(f"model was trained for channels {trained}, got {tuple(requested)}")
    bad = [z for z in requested if not 0 <= z < measured.n_channels]
    if bad:
        raise ValueError(f"channel indices {bad} out of range")

    grid = mask.grid
    t_cells = mask.unmeasured_cells
    planes = np.zeros((len(requested), grid.rows, grid.cols))
    if len(t_cells) > 0:
        if isinstance(model, unet.UNetModel):
            for i, z in enumerate(requested):
                planes[i] = unet.unet_infer(model, model_input(recon, measured, z))
        else:
            if nn is None or nn.radius_counts is None:
                nn = nearest_measured(mask, neighbors=neighbors,
                                      count_radius_um=density_radius_um(grid))
            for i, z in enumerate(requested):
                feats = extract_features(recon, mask, z, neighbors=neighbors, nn=nn)
                planes[i, t_cells[:, 0], t_cells[:, 1]] = model.predict(feats)
        planes[:, mask.measured] = 0.0
    return ErdMap(planes, planes.mean(axis=0), tuple(requested))


# ---------------------------------------------------------------------------
# simulation-only selectors

@dataclass(frozen=True)
class OracleModel:
    """Selects from the ground-truth RD map instead of a learned estimate.

    exact=False uses the Gaussian approximation with rd_params (tractable at
    simulation scale); exact=True uses the brute-force map (small grids only).
    """

    rd_params: RdParams
    exact: bool = False

    @property
    def channels(self):
        return self.rd_params.channels


@dataclass(frozen=True)
class RandomModel:
    """Uniform-random positive ERD: an undirected-measurement baseline."""

    seed: int = 0
    channels: tuple[int, ...] | None = None


# ---------------------------------------------------------------------------
# JSON serialization for LS / MLP models

def save_model(model, path: str | Path) -> None:
    if isinstance(model, LsModel):
        doc = {
            "kind": "ls",
            "theta": model.theta.tolist(),
            "channels": list(model.channels) if model.channels is not None else None,
            "report": None if model.report is None else {
                "rows": model.report.rows,
                "residual": model.report.residual,
                "ridge_engaged": model.report.ridge_engaged,
            },
        }
    elif isinstance(model, MlpModel):
        doc = {
            "kind": "mlp",
            "weights": [w.tolist() for w in model.weights],
            "biases": [b.tolist() for b in model.biases],
            "feat_mean": model.feat_mean.tolist(),
            "feat_std": model.feat_std.tolist(),
            "channels": list(model.channels) if model.channels is not None else None,
            "seed": model.seed,
        }
    else:
        raise ValueError(f"cannot serialize model of type {type(model).__name__}")
    Path(path).write_text(json.dumps(doc))


def load_model(path: str | Path):
    doc = json.loads(Path(path).read_text())
    channels = doc.get("channels")
    channels = tuple(channels) if channels is not None else None
    if doc["kind"] == "ls":
        report = doc.get("report")
        rep = (LsFitReport(report["rows"], report["residual"], report["ridge_engaged"])
               if report else None)
        return LsModel(np.asarray(doc["theta"]), channels, rep)
    if doc["kind"] == "mlp":
        return MlpModel(
            tuple(np.asarray(w) for w in doc["weights"]),
            tuple(np.asarray(b) for b in doc["biases"]),
            np.asarray(doc["feat_mean"]), np.asarray(doc["feat_std"]),
            channels, doc.get("seed"))
    raise ValueError(f"unknown model kind {doc['kind']!r}")
