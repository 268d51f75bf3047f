"""Built-in benchmark systems used by the studies and the CLI.

``cell4`` is the four-species cell differentiation system (one duplication,
two death, three differentiation channels) that the comparison studies run
on.  The ``parallel*`` family keeps six channels while widening the species
set (each channel consumes/produces a k-tuple of species); the ``cycle*``
family stacks additional six-channel relay blocks to grow the channel
count.  The latter two families ship with unit rates and a flat initial
state of 100 per species; they exist for timing studies, not inference
benchmarks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .network import ReactionNetwork, parse_network

__all__ = ["SystemSpec", "builtin_systems", "get_system"]


@dataclass(frozen=True)
class SystemSpec:
    name: str
    network: ReactionNetwork
    beta_true: np.ndarray
    y0: np.ndarray
    description: str


_CELL4 = """
# four-species differentiation system: birth, two deaths, three conversions
0 -> A @ birth_a
A -> 0 @ death_a
D -> 0 @ death_d
A -> 2 B @ split_a_bb
B -> 2 C @ split_b_cc
B -> 2 D @ split_b_dd
"""

_CELL4_BETA = (5.30, 1.10, -0.11, -0.22, -0.22, -1.61)
_CELL4_Y0 = (50, 100, 100, 200)

# Six-channel conversion template; the parallel family applies it to
# 1, 2 or 3 species tuples at once.
_PARALLEL_BASE = [((1,), (2,)), ((1,), (3,)), ((2,), (4,)), ((1,), (4,)),
                  ((4,), (6,)), ((5,), (5,))]

# Relay blocks for the cycle family.  The first block differs from the
# repeated ones in the direction of its last two channels.
_CYCLE_FIRST = [((2,), (1, 3)), ((3,), (2, 4)), ((4,), (3, 5)), ((5,), (4, 6)),
                ((5,), (6,)), ((6,), (1,))]
_CYCLE_REPEAT = [((2,), (1, 3)), ((3,), (2, 4)), ((4,), (3, 5)), ((5,), (4, 6)),
                 ((6,), (5,)), ((1,), (6,))]


def _network_from_pairs(pairs, p):
    react = np.zeros((p, len(pairs)), dtype=np.int64)
    prod = np.zeros((p, len(pairs)), dtype=np.int64)
    for j, (reac, prods) in enumerate(pairs):
        for s in reac:
            react[s - 1, j] += 1
        for s in prods:
            prod[s - 1, j] += 1
    return ReactionNetwork.from_parts(react, prod)


def _parallel_system(copies: int) -> SystemSpec:
    p = 6 * copies
    pairs = []
    for reac, prods in _PARALLEL_BASE:
        reac_all = tuple(s + 6 * m for m in range(copies) for s in reac)
        prod_all = tuple(s + 6 * m for m in range(copies) for s in prods)
        pairs.append((reac_all, prod_all))
    net = _network_from_pairs(pairs, p)
    return SystemSpec(
        name=f"parallel{p}",
        network=net,
        beta_true=np.zeros(6),
        y0=np.full(p, 100.0),
        description=f"6 conversion channels over {copies}-tuples of {p} species",
    )


def _cycle_system(blocks: int) -> SystemSpec:
    p = 6 * blocks
    pairs = []
    for m in range(blocks):
        base = _CYCLE_FIRST if m == 0 else _CYCLE_REPEAT
        for reac, prods in base:
            pairs.append((tuple(s + 6 * m for s in reac),
                          tuple(s + 6 * m for s in prods)))
    net = _network_from_pairs(pairs, p)
    # Added blocks run at a low rate so the event-count observation design
    # keeps a comparable timescale across system sizes; the timing studies
    # then isolate the effect of channel count rather than of faster
    # dynamics.
    beta = np.concatenate([np.zeros(6), np.full(6 * (blocks - 1), np.log(0.05))])
    return SystemSpec(
        name=f"cycle{6 * blocks}",
        network=net,
        beta_true=beta,
        y0=np.full(p, 100.0),
        description=f"{blocks} relay blocks, {6 * blocks} channels over {p} species",
    )


def _cell4_system() -> SystemSpec:
    net = parse_network(_CELL4, species_order=("A", "B", "C", "D"))
    return SystemSpec(
        name="cell4",
        network=net,
        beta_true=np.asarray(_CELL4_BETA),
        y0=np.asarray(_CELL4_Y0, dtype=float),
        description="four-species differentiation system (comparison benchmark)",
    )


def builtin_systems() -> dict[str, SystemSpec]:
    """Name -> SystemSpec registry of every bundled system."""
    specs = [_cell4_system()]
    specs += [_parallel_system(c) for c in (1, 2, 3)]
    specs += [_cycle_system(b) for b in (1, 2, 3)]
    return {s.name: s for s in specs}


def get_system(name: str) -> SystemSpec:
    reg = builtin_systems()
    if name not in reg:
        raise ValidationError(
            f"unknown builtin system {name!r}; available: {', '.join(sorted(reg))}"
        )
    return reg[name]
