"""Adversarial submission strategies that replace honest training."""

from __future__ import annotations

import enum

import numpy as np

from .contract import ContractState


class ByzantineKind(str, enum.Enum):
    HONEST = "honest"
    FAULTY = "faulty"
    MALICIOUS = "malicious"
    SMART = "smart"


def faulty_submission(rng: np.random.Generator, n_weights: int, n_samples: int) -> tuple[np.ndarray, int]:
    """Uniform noise on [-0.5, 0.5]; the robot still reports its real sample count."""
    return rng.uniform(-0.5, 0.5, size=n_weights), int(n_samples)


def malicious_submission(state: ContractState, n_samples: int) -> tuple[np.ndarray, int]:
    """Replays the shared model from the previous aggregation round."""
    return np.array(state.prev_shared_weights, dtype=np.float64), int(n_samples)


def smart_submission(
    w_t: np.ndarray, w_tminus1: np.ndarray, rng: np.random.Generator, n_samples: int = 1
) -> tuple[np.ndarray, int]:
    """Extrapolates the last shared-model step: w(t) + 2r * mean|w(t) - w(t-1)|.

    ``r`` is drawn independently for every weight.
    """
    w_t = np.asarray(w_t, dtype=np.float64)
    delta = float(np.mean(np.abs(w_t - np.asarray(w_tminus1, dtype=np.float64))))
    r = rng.uniform(0.0, 1.0, size=w_t.shape)
    return w_t + 2.0 * r * delta, int(n_samples)


def claimed_samples(state: ContractState, byzantine_ids, fallback: int = 1) -> int:
    """Sample count a smart robot declares: the median count of the honest
    participants in the round that produced the current model."""
    counts = sorted(n for robot, n in state.last_participants if robot not in byzantine_ids)
    if not counts:
        return fallback
    return int(np.median(counts))
