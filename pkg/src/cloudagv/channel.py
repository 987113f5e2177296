"""Uplink channel models and last-received-state bookkeeping.

A position packet is sent once per sampling interval. Each packet is either
delivered in its own slot or lost forever (no reordering, no late delivery);
consecutive losses leave the cloud controller operating on an increasingly
stale plant state. The downlink is treated as perfect.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .kinematics import Pose

VARIANTS = ("perfect", "bursts", "bernoulli", "gilbert_elliott")


def _check_probability(name: str, value: float) -> None:
    if not (0.0 <= value <= 1.0):
        raise ValueError(f"{name} must be in [0, 1], got {value}")


@dataclass(frozen=True)
class OutageModel:
    """Per-step packet loss process.

    variant:
        perfect          -- never loses a packet
        bursts           -- deterministic loss windows [(start_k, length), ...]
        bernoulli        -- i.i.d. loss with probability p_loss
        gilbert_elliott  -- two-state Markov loss (good/bad channel states)

    Stochastic variants are fully reproducible from ``seed``.
    """

    variant: str = "perfect"
    seed: int = 0
    bursts: Tuple[Tuple[int, int], ...] = ()
    p_loss: float = 0.0
    p_good_to_bad: float = 0.0
    p_bad_to_good: float = 0.0
    loss_good: float = 0.0
    loss_bad: float = 1.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown outage variant {self.variant!r}; expected one of {VARIANTS}")
        for name in ("p_loss", "p_good_to_bad", "p_bad_to_good", "loss_good", "loss_bad"):
            _check_probability(name, getattr(self, name))
        prev_end = -1
        for start, length in self.bursts:
            if start < 0 or length <= 0:
                raise ValueError(f"burst windows need start >= 0 and length > 0, got ({start}, {length})")
            if start < prev_end:
                raise ValueError("burst windows must be sorted and non-overlapping")
            prev_end = start + length

    @classmethod
    def perfect(cls) -> "OutageModel":
        return cls()

    @classmethod
    def from_bursts(cls, bursts: Sequence[Tuple[int, int]]) -> "OutageModel":
        return cls(variant="bursts", bursts=tuple((int(s), int(n)) for s, n in bursts))

    @classmethod
    def bernoulli(cls, p_loss: float, seed: int = 0) -> "OutageModel":
        return cls(variant="bernoulli", p_loss=p_loss, seed=seed)

    @classmethod
    def gilbert_elliott(
        cls,
        p_good_to_bad: float,
        p_bad_to_good: float,
        loss_good: float = 0.0,
        loss_bad: float = 1.0,
        seed: int = 0,
    ) -> "OutageModel":
        return cls(
            variant="gilbert_elliott",
            p_good_to_bad=p_good_to_bad,
            p_bad_to_good=p_bad_to_good,
            loss_good=loss_good,
            loss_bad=loss_bad,
            seed=seed,
        )


def _in_burst(bursts: Tuple[Tuple[int, int], ...], k: int) -> bool:
    for start, length in bursts:
        if start <= k < start + length:
            return True
    return False


class OutageProcess:
    """Stateful per-run sampler; ``sample(k)`` must be called with consecutive k.

    The process carries the RNG stream and, for the two-state Markov model,
    the current channel state, so a run replays identically from its seed.
    """

    def __init__(self, model: OutageModel):
        self.model = model
        self._rng = np.random.default_rng(model.seed)
        self._bad = False
        self._next_k = 0

    def sample(self, k: int) -> bool:
        if k != self._next_k:
            raise ValueError(f"outage samples must be drawn in step order (expected k={self._next_k}, got {k})")
        self._next_k += 1
        m = self.model
        if m.variant == "perfect":
            return False
        if m.variant == "bursts":
            return _in_burst(m.bursts, k)
        if m.variant == "bernoulli":
            return bool(self._rng.random() < m.p_loss)
        # gilbert_elliott: loss decided by the current state, then the chain moves
        lost = bool(self._rng.random() < (m.loss_bad if self._bad else m.loss_good))
        flip = m.p_bad_to_good if self._bad else m.p_good_to_bad
        if self._rng.random() < flip:
            self._bad = not self._bad
        return lost


def is_outage(model: OutageModel, k: int, process: Optional[OutageProcess] = None) -> bool:
    """Single-step outage decision.

    Deterministic variants are pure functions of ``k``; stochastic variants
    need the per-run :class:`OutageProcess` that holds the RNG state.
    """
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    if model.variant == "perfect":
        return False
    if model.variant == "bursts":
        return _in_burst(model.bursts, k)
    if process is None:
        raise ValueError("stochastic outage models require an OutageProcess")
    return process.sample(k)


def realize_outages(model: OutageModel, n_steps: int) -> np.ndarray:
    """Full reproducible loss sequence (bool, length n_steps) for one run."""
    if n_steps < 0:
        raise ValueError(f"n_steps must be >= 0, got {n_steps}")
    if model.variant == "perfect":
        return np.zeros(n_steps, dtype=bool)
    if model.variant == "bursts":
        out = np.zeros(n_steps, dtype=bool)
        for start, length in model.bursts:
            out[start : start + length] = True
        return out
    if model.variant == "bernoulli":
        rng = np.random.default_rng(model.seed)
        return rng.random(n_steps) < model.p_loss
    proc = OutageProcess(model)
    return np.fromiter((proc.sample(k) for k in range(n_steps)), dtype=bool, count=n_steps)


class UplinkBuffer(NamedTuple):
    """Cloud-side view of the plant: last received state and staleness counter."""

    last_received: Pose
    last_received_k: int
    n_ul: int


def initial_buffer(state0: Pose) -> UplinkBuffer:
    """The state at k=0 is always delivered; the controller cannot start blind."""
    return UplinkBuffer(state0, 0, 0)


def uplink_step(buf: UplinkBuffer, true_state: Pose, k: int, outage: bool) -> UplinkBuffer:
    """Advance bookkeeping for step k: deliver the current state or freeze.

    On delivery the buffer holds ``true_state`` with ``n_ul = 0``; on an outage
    the stored state is unchanged and the consecutive-outage counter grows, so
    ``n_ul == k - last_received_k`` at all times.
    """
    if outage:
        return UplinkBuffer(buf.last_received, buf.last_received_k, buf.n_ul + 1)
    return UplinkBuffer(true_state, k, 0)
