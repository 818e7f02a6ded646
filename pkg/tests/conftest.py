"""Shared fixtures. The expensive ones (trained scorer, labeled dataset) are
session-scoped so the property tests and the acceptance suite reuse them."""

import numpy as np
import pytest

from plaustraj import datakit, locoval, oracle
from plaustraj.gradcore import TrainConfig


def make_observable(heading=0.0, speed=1.2, root=(0.0, 0.0)):
    """A clean walking pose as an ObservableState, placed and oriented."""
    state = datakit.make_walking_pose(heading, speed)
    state = state.transformed(translation=np.asarray(root, dtype=float) - state.root_position)
    return state.observable()


def straight_trajectory(n=12, speed=1.2, heading=0.0, start=(0.0, 0.0), dt=0.4):
    direction = np.array([np.cos(heading), np.sin(heading)])
    pts = np.asarray(start, dtype=float) + np.outer(
        np.arange(1, n + 1) * speed * dt, direction
    )
    return oracle.Trajectory(pts, dt)


@pytest.fixture(scope="session")
def pose_bank():
    return datakit.generate_pose_bank(32, seed=11)


@pytest.fixture(scope="session")
def traj_bank():
    cfg = datakit.SyntheticConfig()
    dataset = datakit.generate_synthetic(cfg, 20, seed=12)
    bank = []
    for tid in sorted(dataset.tracks):
        pts = dataset.tracks[tid].points
        for start in range(0, len(pts) - 12 + 1, 4):
            bank.append(oracle.Trajectory(pts[start : start + 12], dataset.dt))
    return bank


@pytest.fixture(scope="session")
def plausibility_dataset(pose_bank, traj_bank):
    return oracle.build_plausibility_dataset(pose_bank, traj_bank, 120, 120, seed=13)


@pytest.fixture(scope="session")
def trained_scorer(plausibility_dataset):
    """Small scorer, enough training to separate plausible from implausible."""
    config = TrainConfig(learning_rate=1e-3, total_steps=600, batch_size=64,
                         seed=14, schedule="cosine")
    result = locoval.train_locoval(
        plausibility_dataset, config, hidden=(64, 64), holdout_fraction=0.1
    )
    return result


@pytest.fixture(scope="session")
def training_instances(pose_bank):
    cfg = datakit.SyntheticConfig()
    dataset = datakit.generate_synthetic(cfg, 15, seed=15)
    return datakit.make_training_instances(
        dataset, pose_bank, past_frames=9, future_frames=12, stride=3, seed=16
    )
