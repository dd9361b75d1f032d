"""Federated-averaging smart contract.

A pure state machine: every chain node folds the same transactions through
``apply_tx`` and arrives at the same state. With security enabled, each
submission costs a fee, is screened against the current shared model, and
once a quorum of submissions is pending the contract aggregates them, ranks
them around the median distance and pays the fee pool back out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

REJECT_INSUFFICIENT = "insufficient_tokens"
REJECT_OUTLIER = "outlier"
REJECT_DUPLICATE = "duplicate"
REJECT_MALFORMED = "malformed"


@dataclass(frozen=True)
class ContractParams:
    n_robots: int = 15
    n_weights: int = 2852
    quorum_fraction: float = 0.5
    fee: float = 5.0
    threshold: float = 0.05
    reward_weights: tuple = (1, 1, 1, 1, 1, -1, -1)
    initial_tokens: float = 21.0
    security_enabled: bool = True
    quorum_override: int | None = None

    @property
    def quorum(self) -> int:
        if self.quorum_override is not None:
            return self.quorum_override
        return max(math.floor(self.quorum_fraction * self.n_robots), 1)

    def __post_init__(self):
        if self.quorum < 1:
            raise ValueError("quorum must be >= 1")
        if self.security_enabled and len(self.reward_weights) != self.quorum:
            raise ValueError(
                f"reward_weights has {len(self.reward_weights)} entries, quorum is {self.quorum}"
            )


@dataclass(frozen=True, eq=False)
class AcceptedSubmission:
    robot: int
    weights: np.ndarray
    n_samples: int
    distance: float
    arrival_index: int


@dataclass(frozen=True, eq=False)
class ContractState:
    params: ContractParams
    round: int
    shared_weights: np.ndarray
    prev_shared_weights: np.ndarray
    pending: tuple = ()
    balances: tuple = ()
    pool: float = 0.0
    arrivals: int = 0
    # (robot, n_samples) of the quorum that produced the current model
    last_participants: tuple = ()

    def same_as(self, other: "ContractState") -> bool:
        """Exact (bitwise) equality of every field."""
        if (self.round, self.balances, self.pool, self.arrivals, self.last_participants) != (
            other.round, other.balances, other.pool, other.arrivals, other.last_participants
        ):
            return False
        if self.params != other.params:
            return False
        if not (np.array_equal(self.shared_weights, other.shared_weights)
                and np.array_equal(self.prev_shared_weights, other.prev_shared_weights)):
            return False
        if len(self.pending) != len(other.pending):
            return False
        return all(
            a.robot == b.robot and a.n_samples == b.n_samples and a.distance == b.distance
            and a.arrival_index == b.arrival_index and np.array_equal(a.weights, b.weights)
            for a, b in zip(self.pending, other.pending)
        )

    @property
    def total_tokens(self) -> float:
        return math.fsum(self.balances) + self.pool


def genesis_state(params: ContractParams, initial_weights: np.ndarray) -> ContractState:
    w = np.array(initial_weights, dtype=np.float64)
    if w.shape != (params.n_weights,):
        raise ValueError(f"initial weights must have length {params.n_weights}")
    w.setflags(write=False)
    return ContractState(
        params=params,
        round=0,
        shared_weights=w,
        prev_shared_weights=w,
        balances=tuple(float(params.initial_tokens) for _ in range(params.n_robots)),
    )


def get_model(state: ContractState) -> tuple[int, np.ndarray]:
    return state.round, state.shared_weights


def mean_abs_distance(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"weight length mismatch: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


def aggregate(pending: Sequence[AcceptedSubmission]) -> np.ndarray:
    """Sample-weighted mean of the pending weight vectors (arrival order)."""
    total = 0
    acc = np.zeros_like(np.asarray(pending[0].weights, dtype=np.float64))
    for sub in pending:
        acc += sub.n_samples * np.asarray(sub.weights, dtype=np.float64)
        total += sub.n_samples
    if total <= 0:
        raise ValueError("aggregation needs a positive sample total")
    return acc / total


def rank(pending: Sequence[AcceptedSubmission]) -> list[int]:
    """Indices into ``pending``, best first.

    The submission at the median distance comes first, then the rest by
    absolute gap to that distance; exact ties go to the earlier arrival.
    """
    d = [s.distance for s in pending]
    med = sorted(d)[(len(d) - 1) // 2]
    # rounding keeps mathematically equal gaps tied despite float noise
    key = lambda i: (round(abs(d[i] - med), 12), pending[i].arrival_index)
    return sorted(range(len(pending)), key=key)


def payout(
    rank_order: Sequence[int],
    samples: Sequence[int],
    pool: float,
    fee: float = 5.0,
    reward_weights: Sequence[float] = (1, 1, 1, 1, 1, -1, -1),
) -> dict[int, float]:
    """Token payout per robot id.

    ``rank_order`` lists robot ids best first and ``samples`` the matching
    sample counts. Positive reward weights form the rewarded group, negative
    ones the penalised group. Anything in the pool beyond one fee per ranked
    robot is shared by the rewarded group in proportion to k*s.
    """
    q = len(rank_order)
    if q != len(samples) or q != len(reward_weights):
        raise ValueError("rank_order, samples and reward_weights must align")
    k = [float(v) for v in reward_weights]
    s = [float(v) for v in samples]
    rewarded = [i for i in range(q) if k[i] >= 0]
    penalised = [i for i in range(q) if k[i] < 0]
    sum_r = math.fsum(k[i] * s[i] for i in rewarded)
    sum_p = math.fsum(k[i] * s[i] for i in penalised)
    out: dict[int, float] = {}
    for i in rewarded:
        out[rank_order[i]] = (1.0 + k[i] * s[i] / sum_r) * fee if sum_r else fee
    for i in penalised:
        out[rank_order[i]] = (1.0 - k[i] * s[i] / sum_p) * fee
    surplus = pool - q * fee
    if surplus > 1e-12 and rewarded:
        for i in rewarded:
            share = k[i] * s[i] / sum_r if sum_r else 1.0 / len(rewarded)
            out[rank_order[i]] += surplus * share
    return out


def _event(kind, state, tx_sender, **extra):
    ev = {"event": kind, "round": state.round, "robot": tx_sender}
    ev.update(extra)
    return ev


def submit_model(
    state: ContractState, weights: np.ndarray, n_samples: int, sender: int
) -> tuple[ContractState, list[dict]]:
    """Apply one model submission; returns the new state and emitted events.

    Every failure path is a defined no-op (or fee forfeit for outliers)
    reported through a ``rejected`` event.
    """
    p = state.params
    w = np.asarray(weights)
    if (
        not 0 <= sender < p.n_robots
        or w.shape != (p.n_weights,)
        or n_samples < 1
        or not np.all(np.isfinite(w))
    ):
        return state, [_event("rejected", state, sender, reason=REJECT_MALFORMED)]

    balances = list(state.balances)
    pool = state.pool
    d = mean_abs_distance(w, state.shared_weights)
    if p.security_enabled:
        if balances[sender] < p.fee:
            return state, [_event("rejected", state, sender, reason=REJECT_INSUFFICIENT)]
        balances[sender] -= p.fee
        pool += p.fee
        if d > p.threshold:
            # fee stays in the pool
            new = replace(state, balances=tuple(balances), pool=pool)
            return new, [_event("rejected", state, sender, reason=REJECT_OUTLIER, distance=d)]
    if any(sub.robot == sender for sub in state.pending):
        # refund: a protocol error, not a priced attack
        return state, [_event("rejected", state, sender, reason=REJECT_DUPLICATE, distance=d)]

    sub = AcceptedSubmission(sender, w, int(n_samples), d, state.arrivals)
    pending = state.pending + (sub,)
    state = replace(state, balances=tuple(balances), pool=pool, pending=pending, arrivals=state.arrivals + 1)
    events = [_event("accepted", state, sender, distance=d, n_samples=int(n_samples))]
    if len(pending) == p.quorum:
        state, agg_events = _close_round(state)
        events.extend(agg_events)
    return state, events


def _close_round(state: ContractState) -> tuple[ContractState, list[dict]]:
    p = state.params
    pending = state.pending
    new_w = aggregate(pending)
    new_w.setflags(write=False)
    balances = list(state.balances)
    pool = state.pool
    ranking = []
    paid: dict[int, float] = {}
    if p.security_enabled:
        order = rank(pending)
        ranking = [pending[i].robot for i in order]
        paid = payout(ranking, [pending[i].n_samples for i in order], pool, p.fee, p.reward_weights)
        for robot, amount in paid.items():
            balances[robot] += amount
        pool = 0.0
    event = {
        "event": "aggregated",
        "round": state.round + 1,
        "participants": [s.robot for s in pending],
        "n_samples": [s.n_samples for s in pending],
        "distances": [s.distance for s in pending],
        "ranking": ranking,
        "payouts": {str(k): v for k, v in paid.items()},
        # in-memory handle for metrics; never serialised
        "_weights": [s.weights for s in pending],
    }
    new_state = replace(
        state,
        round=state.round + 1,
        prev_shared_weights=state.shared_weights,
        shared_weights=new_w,
        pending=(),
        balances=tuple(balances),
        pool=pool,
        last_participants=tuple((s.robot, s.n_samples) for s in pending),
    )
    return new_state, [event]


def apply_tx(state: ContractState, tx) -> tuple[ContractState, list[dict]]:
    """Contract transition for one chain transaction (Noop does nothing)."""
    if tx.kind != "submit":
        return state, []
    return submit_model(state, tx.weights, tx.n_samples, tx.sender)


def replay_txs(state: ContractState, txs) -> tuple[ContractState, list[dict]]:
    events: list[dict] = []
    for tx in txs:
        state, ev = apply_tx(state, tx)
        events.extend(ev)
    return state, events
