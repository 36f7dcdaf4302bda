"""
Training-time math for the displacement head.

A two-layer tanh network maps hand-built per-candidate features to T+1
displacement offsets and one confidence logit. Supervision is winner-takes-all:
only the candidate whose anchor is closest to the ground truth gets the
weighted-L1 regression loss; every candidate gets a binary cross-entropy term
on its logit with the winner as the positive class.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import ShapeError, TrainingDiverged
from .geometry import Polyline, box_corners, signed_distance_batch, wrap_angle
from .scene import DisplacementSequence


def _band_weights(n: int) -> Tuple[float, ...]:
    # closer steps weigh more: 1.0 for t=1-5, 0.6 for t=6-11, 0.4 for t>=12
    return tuple(1.0 if t <= 5 else 0.6 if t <= 11 else 0.4 for t in range(1, n + 1))


@dataclass(frozen=True)
class LossWeights:
    path_weights: Tuple[float, ...] = field(default_factory=lambda: _band_weights(15))
    disp_weights: Tuple[float, ...] = field(default_factory=lambda: _band_weights(15))
    lambda_drivepath: float = 2.0
    lambda_plan: float = 2.0


def _flat(x) -> np.ndarray:
    if isinstance(x, DisplacementSequence):
        return x.values.astype(float)
    if isinstance(x, Polyline):
        return x.points.reshape(-1)
    return np.asarray(x, dtype=float).reshape(-1)


def wta_assign(anchor_sets: Sequence, gt) -> int:
    """Index of the anchor nearest (L2 over the flattened values) to ``gt``; ties go low."""
    if len(anchor_sets) == 0:
        raise ShapeError("no anchors")
    g = _flat(gt)
    flat = [_flat(a) for a in anchor_sets]
    for i, a in enumerate(flat):
        if a.shape != g.shape:
            raise ShapeError(f"anchor {i} has shape {a.shape}, ground truth {g.shape}")
    d = np.linalg.norm(np.stack(flat) - g, axis=1)
    return int(np.argmin(d))


def weighted_l1_path(pred, gt, w: LossWeights) -> float:
    p = pred.points if isinstance(pred, Polyline) else np.asarray(pred, dtype=float).reshape(-1, 2)
    g = gt.points if isinstance(gt, Polyline) else np.asarray(gt, dtype=float).reshape(-1, 2)
    if p.shape != g.shape:
        raise ShapeError(f"path point counts differ: {len(p)} vs {len(g)}")
    wt = np.asarray(w.path_weights, dtype=float)
    if len(wt) != len(p):
        raise ShapeError(f"{len(wt)} path weights for {len(p)} points")
    return float(np.sum(wt * np.abs(p - g).sum(axis=1)))


def _future(seq, n: int) -> np.ndarray:
    v = _flat(seq)
    if len(v) == n + 1:
        return v[1:]
    if len(v) != n:
        raise ShapeError(f"expected {n} (or {n + 1}) displacements, got {len(v)}")
    return v


def weighted_l1_disp(pred, gt, w: LossWeights) -> float:
    """Weighted L1 over the future steps; a leading current-step entry is ignored."""
    n = len(w.disp_weights)
    p, g = _future(pred, n), _future(gt, n)
    return float(np.sum(np.asarray(w.disp_weights) * np.abs(p - g)))


# --------------------------------------------------------------------------
# Features

FEATURE_RANGE = 15.0  # meters, distance scale of the proximity feature


def feature_dim(horizon: int) -> int:
    return 2 * (horizon + 1) + 4


def path_curvature_summary(path: Polyline, reach: float = 20.0) -> float:
    """Net heading change (radians) between the path start and ``reach`` meters along."""
    _, h = path.sample(np.array([0.0, min(reach, path.length)]))
    return float(wrap_angle(h[1] - h[0]))


def candidate_features(path: Polyline, anchor_values: np.ndarray, ego_speed: float,
                       agents_c: np.ndarray, ego_dims, dt: float = 0.2,
                       speed_limit: Optional[float] = None) -> np.ndarray:
    """Feature rows ``(M, F)`` for displacement anchors ``(M, T+1)`` along ``path``.

    Per reference point (the path position at the anchor's cumulative displacement
    for steps 0..T): tanh-squashed signed distance from the ego box there to the
    nearest agent box at that step, and that agent's bearing over pi. Then ego
    speed, path heading change, the anchor's reach per second and the route
    speed limit (the ego speed when unknown), each scaled.
    """
    a = np.atleast_2d(np.asarray(anchor_values, dtype=float))
    m, tp1 = a.shape
    cum = np.concatenate([np.zeros((m, 1)), np.cumsum(a[:, 1:], axis=1)], axis=1)
    xy, h = path.sample(cum)
    if agents_c.shape[0]:
        ego_c = box_corners(xy[..., 0], xy[..., 1], h, ego_dims[0], ego_dims[1])
        sd = signed_distance_batch(ego_c[:, None], agents_c[None, :, :tp1])     # (M, A, T+1)
        near = np.argmin(sd, axis=1)                                             # (M, T+1)
        dist = np.take_along_axis(sd, near[:, None], axis=1)[:, 0]
        centers = agents_c[:, :tp1].mean(axis=2)                                 # (A, T+1, 2)
        c = centers[near, np.arange(tp1)[None, :]]                               # (M, T+1, 2)
        rel = c - xy
        bearing = wrap_angle(np.arctan2(rel[..., 1], rel[..., 0]) - h) / math.pi
        prox = np.tanh(dist / FEATURE_RANGE)
    else:
        prox = np.ones((m, tp1))
        bearing = np.zeros((m, tp1))
    glob = np.stack([np.full(m, ego_speed / 10.0),
                     np.full(m, path_curvature_summary(path)),
                     a[:, 1] / dt / 10.0,
                     np.full(m, (ego_speed if speed_limit is None else speed_limit) / 10.0)], axis=1)
    return np.concatenate([prox, bearing, glob], axis=1)


# --------------------------------------------------------------------------
# Regressor


@dataclass
class RegressorParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    @property
    def dims(self) -> Tuple[int, int, int]:
        """(feature dim, hidden units, offsets per candidate)."""
        return self.W1.shape[1], self.W1.shape[0], self.W2.shape[0] - 1

    def copy(self) -> "RegressorParams":
        return RegressorParams(self.W1.copy(), self.b1.copy(), self.W2.copy(), self.b2.copy())

    def flat(self) -> np.ndarray:
        return np.concatenate([p.reshape(-1) for p in (self.W1, self.b1, self.W2, self.b2)])

    @classmethod
    def from_flat(cls, v: np.ndarray, dims) -> "RegressorParams":
        f, hdim, n_off = dims
        sizes = [hdim * f, hdim, (n_off + 1) * hdim, n_off + 1]
        parts = np.split(np.asarray(v, dtype=float), np.cumsum(sizes)[:-1])
        return cls(parts[0].reshape(hdim, f), parts[1], parts[2].reshape(n_off + 1, hdim), parts[3])

    def to_dict(self) -> dict:
        return {"dims": list(self.dims), "W1": self.W1.tolist(), "b1": self.b1.tolist(),
                "W2": self.W2.tolist(), "b2": self.b2.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "RegressorParams":
        p = cls(*(np.asarray(d[k], dtype=float) for k in ("W1", "b1", "W2", "b2")))
        if list(p.dims) != list(d["dims"]):
            raise ShapeError(f"declared dims {d['dims']} disagree with arrays {p.dims}")
        return p

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "RegressorParams":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def init_params(n_features: int, n_hidden: int, n_offsets: int,
                rng: np.random.Generator, scale: float = 1.0) -> RegressorParams:
    """Glorot-scaled first layer, zero output layer (so the head starts at the anchors)."""
    w1 = rng.normal(0.0, scale / math.sqrt(n_features), size=(n_hidden, n_features))
    return RegressorParams(w1, np.zeros(n_hidden), np.zeros((n_offsets + 1, n_hidden)),
                           np.zeros(n_offsets + 1))


def forward(params: RegressorParams, features: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Offsets ``(..., T+1)`` and score logits ``(...)`` for feature rows ``(..., F)``."""
    x = np.asarray(features, dtype=float)
    if x.shape[-1] != params.W1.shape[1]:
        raise ShapeError(f"feature dim {x.shape[-1]} != parameter dim {params.W1.shape[1]}")
    h = np.tanh(x @ params.W1.T + params.b1)
    out = h @ params.W2.T + params.b2
    return out[..., :-1], out[..., -1]


class Sample(NamedTuple):
    features: np.ndarray   # (M, F)
    anchors: np.ndarray    # (M, T+1)
    gt: np.ndarray         # (T+1,)
    winner: int


def _stack(batch: Sequence[Sample]):
    x = np.stack([s.features for s in batch])
    a = np.stack([s.anchors for s in batch])
    g = np.stack([s.gt for s in batch])
    w = np.array([s.winner for s in batch], dtype=int)
    return x, a, g, w


def _softplus(z):
    return np.logaddexp(0.0, z)


def loss_and_grad(params: RegressorParams, batch: Sequence[Sample],
                  weights: Optional[LossWeights] = None) -> Tuple[float, RegressorParams]:
    """Mean over samples of ``lambda_plan * L1(winner) + sum_m BCE(logit_m, m == winner)``.

    Gradients are exact backpropagation; the L1 subgradient at zero is 0.
    """
    weights = weights or LossWeights()
    x, a, g, win = _stack(batch)
    b, m, _ = x.shape
    n_off = a.shape[2]
    tw = np.zeros(n_off)
    tw[n_off - len(weights.disp_weights):] = weights.disp_weights

    z1 = x @ params.W1.T + params.b1            # (B, M, H)
    h = np.tanh(z1)
    out = h @ params.W2.T + params.b2           # (B, M, T+2)
    off, logit = out[..., :-1], out[..., -1]

    rows = np.arange(b)
    resid = a[rows, win] + off[rows, win] - g   # (B, T+1)
    reg = weights.lambda_plan * np.sum(tw * np.abs(resid), axis=1)
    y = np.zeros((b, m))
    y[rows, win] = 1.0
    bce = np.sum(_softplus(logit) - y * logit, axis=1)
    loss = float(np.mean(reg + bce))

    dout = np.zeros_like(out)
    dout[rows, win, :-1] = weights.lambda_plan * tw * np.sign(resid)
    dout[..., -1] = 0.5 * (1.0 + np.tanh(0.5 * logit)) - y   # overflow-free sigmoid
    dout /= b
    dW2 = np.einsum("bmo,bmh->oh", dout, h)
    db2 = dout.sum(axis=(0, 1))
    dz1 = (dout @ params.W2) * (1.0 - h * h)
    dW1 = np.einsum("bmh,bmf->hf", dz1, x)
    db1 = dz1.sum(axis=(0, 1))
    return loss, RegressorParams(dW1, db1, dW2, db2)


def train(params: RegressorParams, dataset: Sequence[Sample], lr: float, epochs: int,
          rng: np.random.Generator, batch_size: int = 32,
          weights: Optional[LossWeights] = None) -> Tuple[RegressorParams, List[float]]:
    """Minibatch gradient descent with a fresh shuffle each epoch.

    Returns the fitted parameters and the mean training loss of every epoch.
    """
    if not lr >= 0:
        raise ValueError("learning rate must be non-negative")
    p = params.copy()
    history: List[float] = []
    n = len(dataset)
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for i in range(0, n, batch_size):
            chunk = [dataset[j] for j in order[i:i + batch_size]]
            loss, grad = loss_and_grad(p, chunk, weights)
            if not math.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} in epoch {len(history) + 1}")
            total += loss * len(chunk)
            if lr:
                p.W1 -= lr * grad.W1
                p.b1 -= lr * grad.b1
                p.W2 -= lr * grad.W2
                p.b2 -= lr * grad.b2
        history.append(total / max(n, 1))
    return p, history


def score_accuracy(params: RegressorParams, dataset: Sequence[Sample]) -> float:
    """Fraction of samples whose highest logit is the WTA winner."""
    if not dataset:
        return float("nan")
    x, _, _, win = _stack(dataset)
    _, logit = forward(params, x)
    return float(np.mean(np.argmax(logit, axis=1) == win))
