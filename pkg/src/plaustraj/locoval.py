"""Differentiable plausibility scorer.

A sigmoid-headed MLP regressed onto the locomotion oracle's reward. Inputs are
canonicalized (root at the origin, facing direction rotated to +x) and the
trajectory is encoded as per-step displacements, so the score is invariant to
rigid motions and the speed cue is explicit. The scorer exposes analytic
gradients w.r.t. the trajectory points, which is what lets a predictor train
against it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict

import numpy as np

from . import gradcore
from .errors import ConfigError, DataError, InputShapeError
from .gradcore import AdamW, MlpModel, TrainConfig
from .oracle import (
    REQUIRED_JOINTS,
    ObservableState,
    PlausibilitySample,
    Trajectory,
    rotation_matrix,
)

CHECKPOINT_SCHEMA_VERSION = 1
DEFAULT_HIDDEN = (128, 128, 128)


@dataclass(frozen=True)
class FeatureLayout:
    horizon: int              # trajectory length T_f
    joint_count: int = len(REQUIRED_JOINTS)
    include_pose: bool = True
    include_velocity: bool = True

    @property
    def feature_size(self) -> int:
        n = 2 * self.horizon
        if self.include_pose:
            n += 3 * self.joint_count
        if self.include_velocity:
            n += 2
        return n

    def joint_order(self, joints: dict) -> list[str]:
        extras = sorted(set(joints) - set(REQUIRED_JOINTS))
        names = list(REQUIRED_JOINTS) + extras
        if len(names) != self.joint_count:
            raise InputShapeError(
                f"expected {self.joint_count} joints, got {len(names)}"
            )
        return names


@dataclass
class LocoValModel:
    net: MlpModel
    layout: FeatureLayout

    def __post_init__(self):
        if self.net.layer_sizes[0] != self.layout.feature_size:
            raise ConfigError(
                f"net input size {self.net.layer_sizes[0]} != "
                f"feature size {self.layout.feature_size}"
            )
        if self.net.layer_sizes[-1] != 1 or self.net.output_activation != "sigmoid":
            raise ConfigError("scorer net must have a single sigmoid output")


def build_locoval(layout: FeatureLayout, hidden=DEFAULT_HIDDEN, seed: int = 0) -> LocoValModel:
    rng = np.random.default_rng(seed)
    net = gradcore.init_mlp(
        [layout.feature_size, *hidden, 1], rng,
        hidden_activation="relu", output_activation="sigmoid",
    )
    return LocoValModel(net=net, layout=layout)


# ---------------------------------------------------------------------------
# Canonicalization


def canonical_frame(obs: ObservableState) -> tuple[np.ndarray, np.ndarray]:
    """(root position, rotation by -heading) defining the canonical frame."""
    return obs.root_position, rotation_matrix(-obs.heading())


def canonicalize(traj: Trajectory, obs: ObservableState, layout: FeatureLayout) -> np.ndarray:
    """Feature vector: rotated per-step displacements (first step taken from
    the root), then root-relative rotated joints, then rotated root velocity."""
    if len(traj) != layout.horizon:
        raise InputShapeError(
            f"trajectory length {len(traj)} != layout horizon {layout.horizon}"
        )
    root, rot = canonical_frame(obs)
    steps = np.diff(np.vstack([root, traj.points]), axis=0)
    parts = [(steps @ rot.T).reshape(-1)]
    if layout.include_pose:
        pose = []
        for name in layout.joint_order(obs.joints):
            j = obs.joints[name]
            xy = rot @ (j[:2] - root)
            pose.extend([xy[0], xy[1], j[2]])
        parts.append(np.array(pose))
    if layout.include_velocity:
        parts.append(rot @ obs.root_velocity)
    return np.concatenate(parts)


def feature_grad_to_traj_grad(feature_grad: np.ndarray, obs: ObservableState,
                              layout: FeatureLayout) -> np.ndarray:
    """Pull a gradient w.r.t. the trajectory-feature block back to the
    trajectory points. Features are linear in the points, so this is exact."""
    _, rot = canonical_frame(obs)
    g = feature_grad[: 2 * layout.horizon].reshape(layout.horizon, 2) @ rot
    # step t contributes +p_t and step t+1 contributes -p_t
    out = g.copy()
    out[:-1] -= g[1:]
    return out


# ---------------------------------------------------------------------------
# Scoring


def score(model: LocoValModel, traj: Trajectory, obs: ObservableState) -> float:
    feats = canonicalize(traj, obs, model.layout)
    return float(gradcore.forward(model.net, feats)[0])


def score_batch(model: LocoValModel, candidates: list[Trajectory],
                obs: ObservableState) -> list[float]:
    return [score(model, traj, obs) for traj in candidates]


def score_with_traj_grad(model: LocoValModel, traj: Trajectory,
                         obs: ObservableState) -> tuple[float, np.ndarray]:
    """Score plus d(score)/d(trajectory points), shape (T_f, 2)."""
    feats = canonicalize(traj, obs, model.layout)
    out, cache = gradcore.forward_cached(model.net, feats)
    grads = gradcore.backward(model.net, cache, np.ones(1))
    return float(out[0]), feature_grad_to_traj_grad(grads.inputs, obs, model.layout)


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainingCurvePoint:
    step: int
    lr: float
    train_mse: float
    holdout_mse: float


@dataclass
class LocoValTrainResult:
    model: LocoValModel
    curve: list[TrainingCurvePoint]
    best_holdout_mse: float
    holdout_indices: np.ndarray


def features_and_targets(dataset: list[PlausibilitySample],
                         layout: FeatureLayout) -> tuple[np.ndarray, np.ndarray]:
    X = np.stack([canonicalize(s.trajectory, s.observable, layout) for s in dataset])
    y = np.array([s.reward for s in dataset])
    return X, y


def train_locoval(
    dataset: list[PlausibilitySample],
    config: TrainConfig,
    layout: FeatureLayout | None = None,
    hidden=DEFAULT_HIDDEN,
    holdout_fraction: float = 0.1,
    eval_every: int = 50,
) -> LocoValTrainResult:
    """Regression against oracle rewards with best-checkpoint selection on a
    held-out split."""
    if not dataset:
        raise DataError("empty training dataset")
    horizon = len(dataset[0].trajectory)
    n_joints = len(dataset[0].observable.joints)
    for s in dataset:
        if len(s.trajectory) != horizon or len(s.observable.joints) != n_joints:
            raise InputShapeError("inconsistent trajectory/joint shapes in dataset")
    if layout is None:
        layout = FeatureLayout(horizon=horizon, joint_count=n_joints)

    model = build_locoval(layout, hidden=hidden, seed=config.seed)
    X, y = features_and_targets(dataset, layout)

    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(len(X))
    n_hold = max(1, int(round(holdout_fraction * len(X)))) if len(X) > 1 else 0
    hold_idx, train_idx = perm[:n_hold], perm[n_hold:]
    if len(train_idx) == 0:
        train_idx, hold_idx = perm, perm
    if len(hold_idx) == 0:
        # no held-out split requested: select the checkpoint on training data
        hold_idx = train_idx
    X_tr, y_tr = X[train_idx], y[train_idx]
    X_ho, y_ho = X[hold_idx], y[hold_idx]

    opt = AdamW(model.net, config)
    best_params = model.net.copy()
    best_mse = math.inf
    curve = []

    def holdout_mse(net: MlpModel) -> float:
        pred = gradcore.forward(net, X_ho)[:, 0]
        return float(np.mean((pred - y_ho) ** 2))

    for step in range(config.total_steps):
        idx = rng.integers(len(X_tr), size=min(config.batch_size, len(X_tr)))
        xb, yb = X_tr[idx], y_tr[idx]
        out, cache = gradcore.forward_cached(model.net, xb)
        err = out[:, 0] - yb
        train_mse = float(np.mean(err**2))
        upstream = (2.0 * err / len(err))[:, None]
        grads = gradcore.backward(model.net, cache, upstream)
        opt.step(model.net, grads)

        if (step + 1) % eval_every == 0 or step == config.total_steps - 1:
            ho = holdout_mse(model.net)
            curve.append(TrainingCurvePoint(step + 1, opt.current_lr(), train_mse, ho))
            if ho < best_mse:
                best_mse = ho
                best_params = model.net.copy()

    model = LocoValModel(net=best_params, layout=layout)
    return LocoValTrainResult(
        model=model, curve=curve, best_holdout_mse=best_mse, holdout_indices=hold_idx
    )


# ---------------------------------------------------------------------------
# Checkpoint I/O


def save_locoval(model: LocoValModel, path, seed: int | None = None,
                 train_config: TrainConfig | None = None):
    doc = gradcore.model_to_dict(model.net, seed=seed, train_config=train_config)
    doc["feature_layout"] = asdict(model.layout)
    doc["locoval_schema_version"] = CHECKPOINT_SCHEMA_VERSION
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_locoval(path) -> LocoValModel:
    with open(path) as fh:
        doc = json.load(fh)
    if "feature_layout" not in doc:
        raise ConfigError(f"{path}: not a scorer checkpoint (missing feature_layout)")
    net = gradcore.model_from_dict(doc)
    layout = FeatureLayout(**doc["feature_layout"])
    return LocoValModel(net=net, layout=layout)
