"""Exact stochastic simulation and discrete observation of reaction systems.

``simulate`` runs the classic direct-method SSA and records the full event
stream.  The other operations turn an event stream into discretely observed
trajectories: ``observe`` replays the state at arbitrary times,
``subsample_by_jump`` keeps every ``jump``-th event time as an observation,
and ``interval_counts`` recovers the true per-interval event counts that the
estimators treat as latent.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .network import (ReactionNetwork, Trajectory, _as_beta, _covariates_linear,
                      log_binomial_covariates)
from .rng import as_generator

__all__ = ["EventRecord", "simulate", "observe", "subsample_by_jump", "interval_counts",
           "write_events_csv", "read_events_csv"]


@dataclass(frozen=True)
class EventRecord:
    """An exactly simulated event stream.

    ``times[k]`` is when the ``reactions[k]``-th channel (0-based) fired.
    ``t_end`` is the last instant the record covers: the simulation horizon
    when one was given, otherwise the final event time.
    """

    initial_state: np.ndarray
    times: np.ndarray
    reactions: np.ndarray
    net_effect: np.ndarray
    t_end: float
    seed_label: str | None = None

    def __post_init__(self):
        y0 = np.asarray(self.initial_state, dtype=float)
        t = np.asarray(self.times, dtype=float)
        rx = np.asarray(self.reactions, dtype=np.int64)
        net = np.asarray(self.net_effect, dtype=np.int64)
        if t.shape != rx.shape or t.ndim != 1:
            raise ValidationError("event times and reaction indices must align")
        if t.size and (np.diff(t) <= 0).any():
            raise ValidationError("event times must be strictly increasing")
        if t.size and (t[0] <= 0 or t[-1] > self.t_end):
            raise ValidationError("event times must lie in (0, t_end]")
        if rx.size and (rx.min() < 0 or rx.max() >= net.shape[1]):
            raise ValidationError("reaction index out of range")
        states = self._replay_states(y0, net, rx)
        if states.size and states.min() < 0:
            raise ValidationError("event stream drives a species count negative")
        for a in (y0, t, rx, net):
            a.setflags(write=False)
        object.__setattr__(self, "initial_state", y0)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "reactions", rx)
        object.__setattr__(self, "net_effect", net)
        states.setflags(write=False)
        object.__setattr__(self, "_states_after", states)

    @staticmethod
    def _replay_states(y0, net, rx) -> np.ndarray:
        # Row k is the state immediately after event k; row count = n_events + 1
        # with row 0 the initial state.
        deltas = net.T[rx] if rx.size else np.zeros((0, y0.size))
        return np.vstack([y0, y0 + np.cumsum(deltas, axis=0)]) if rx.size else y0[None, :]

    @property
    def n_events(self) -> int:
        return self.times.size

    def state_at(self, t: float) -> np.ndarray:
        """State just after all events with time <= t."""
        idx = np.searchsorted(self.times, t, side="right")
        return self._states_after[idx]


def simulate(
    net: ReactionNetwork,
    rates,
    y0,
    horizon: float | None = None,
    max_events: int | None = None,
    seed=0,
) -> EventRecord:
    """Direct-method SSA from ``y0``.

    Runs until the horizon is reached, ``max_events`` events have fired, or
    every hazard is zero (absorption, a valid terminal state).  At least one
    stopping rule must be given.  Deterministic for a fixed seed.
    """
    beta = _as_beta(net, rates)
    y = np.asarray(y0, dtype=float)
    if y.shape != (net.species_count,):
        raise ValidationError(f"y0 must have length {net.species_count}")
    if (y < 0).any() or (y != np.floor(y)).any():
        raise ValidationError("y0 must hold nonnegative integers")
    if horizon is None and max_events is None:
        raise ValidationError("need a horizon or a max_events bound")
    if horizon is not None and not horizon > 0:
        raise ValidationError("horizon must be positive")
    rng = as_generator(seed)
    seed_label = None if isinstance(seed, np.random.Generator) else str(seed)

    theta = np.exp(beta)[net.param_map]
    t = 0.0
    times: list[float] = []
    fired: list[int] = []
    while True:
        if max_events is not None and len(times) >= max_events:
            break
        # Inline hazard: y stays valid by construction, so skip re-validation.
        lam = theta * _covariates_linear(net, y)
        if np.isinf(lam).any():
            lam = np.exp(beta[net.param_map] + log_binomial_covariates(net, y))
        total = lam.sum()
        if total <= 0.0:
            break  # absorbed
        wait = rng.exponential(1.0 / total)
        t_next = t + wait
        if t_next <= t:  # enormous hazards: keep times strictly increasing
            t_next = np.nextafter(t, np.inf)
        if horizon is not None and t_next > horizon:
            break
        u = rng.random() * total
        j = int(np.searchsorted(np.cumsum(lam), u, side="right"))
        if j >= lam.size or lam[j] == 0.0:
            j = int(np.max(np.nonzero(lam)[0]))
        y = y + net.net_effect[:, j]
        t = t_next
        times.append(t)
        fired.append(j)
    t_end = horizon if horizon is not None else (times[-1] if times else 0.0)
    return EventRecord(
        initial_state=np.asarray(y0, dtype=float),
        times=np.asarray(times),
        reactions=np.asarray(fired, dtype=np.int64),
        net_effect=net.net_effect,
        t_end=float(t_end),
        seed_label=seed_label,
    )


def observe(rec: EventRecord, grid, species_names=None) -> Trajectory:
    """Exact replay of the state at the given strictly increasing times."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 1:
        raise ValidationError("observation grid must be a non-empty 1-d sequence")
    if (grid < 0).any() or (grid > rec.t_end).any():
        raise ValidationError(
            f"grid must lie within [0, {rec.t_end}] covered by the record"
        )
    idx = np.searchsorted(rec.times, grid, side="right")
    states = rec._states_after[idx]
    return Trajectory(times=grid, states=states, species_names=species_names)


def subsample_by_jump(
    rec: EventRecord, jump: int, n_intervals: int, species_names=None
) -> Trajectory:
    """Observe the process at every ``jump``-th event time.

    The grid is t_0 = 0 plus the times of events number jump, 2*jump, ...,
    n_intervals*jump, so exactly ``jump`` events fall in each of the
    ``n_intervals`` observation intervals.
    """
    if jump < 1 or n_intervals < 1:
        raise ValidationError("jump and n_intervals must be positive integers")
    needed = jump * n_intervals
    if rec.n_events < needed:
        raise ValidationError(
            f"record has {rec.n_events} events but jump={jump} x "
            f"n_intervals={n_intervals} needs {needed} "
            f"(short by {needed - rec.n_events})"
        )
    grid = np.concatenate([[0.0], rec.times[jump - 1 : needed : jump]])
    idx = np.searchsorted(rec.times, grid, side="right")
    states = rec._states_after[idx]
    return Trajectory(times=grid, states=states, species_names=species_names)


def interval_counts(rec: EventRecord, grid) -> np.ndarray:
    """True event counts per channel in each interval (t_{i-1}, t_i].

    For any grid this satisfies the exact conservation identity
    ``states[i] - states[i-1] = net_effect @ counts[i-1]``.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValidationError("need at least two grid times to form intervals")
    if (np.diff(grid) <= 0).any():
        raise ValidationError("grid times must be strictly increasing")
    r = rec.net_effect.shape[1]
    bounds = np.searchsorted(rec.times, grid, side="right")
    counts = np.zeros((grid.size - 1, r), dtype=np.int64)
    for i in range(grid.size - 1):
        lo, hi = bounds[i], bounds[i + 1]
        if hi > lo:
            counts[i] = np.bincount(rec.reactions[lo:hi], minlength=r)
    return counts


def write_events_csv(rec: EventRecord, path, seed_label: str | None = None) -> None:
    """Write `time,reaction` rows (reaction indices 1-based in the file)."""
    label = seed_label if seed_label is not None else rec.seed_label
    with open(path, "w", newline="") as fh:
        fh.write(f"# y0={' '.join(str(int(v)) for v in rec.initial_state)}\n")
        fh.write(f"# t_end={rec.t_end!r}\n")
        if label is not None:
            fh.write(f"# seed={label}\n")
        writer = csv.writer(fh)
        writer.writerow(["time", "reaction"])
        for t, j in zip(rec.times, rec.reactions):
            writer.writerow([repr(float(t)), str(int(j) + 1)])


def read_events_csv(path, net: ReactionNetwork) -> EventRecord:
    """Read an event CSV written by write_events_csv."""
    y0 = None
    t_end = None
    rows = []
    with open(path, newline="") as fh:
        for raw in fh:
            line = raw.strip()
            if line.startswith("#"):
                body = line[1:].strip()
                if body.startswith("y0="):
                    y0 = np.asarray([float(v) for v in body[3:].split()])
                elif body.startswith("t_end="):
                    t_end = float(body[6:])
                continue
            if line:
                rows.append(line.split(","))
    if not rows or rows[0][:2] != ["time", "reaction"]:
        raise ValidationError(f"{path}: expected 'time,reaction' header")
    if y0 is None:
        raise ValidationError(f"{path}: missing '# y0=...' metadata line")
    times = np.asarray([float(r[0]) for r in rows[1:]])
    reactions = np.asarray([int(r[1]) - 1 for r in rows[1:]], dtype=np.int64)
    if t_end is None:
        t_end = float(times[-1]) if times.size else 0.0
    return EventRecord(
        initial_state=y0,
        times=times,
        reactions=reactions,
        net_effect=net.net_effect,
        t_end=t_end,
    )
