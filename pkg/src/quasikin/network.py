"""Quasi-reaction networks: stoichiometry, hazards, and observed trajectories.

A network is a set of reaction channels over ``p`` species.  Channel ``j``
consumes ``reactant_matrix[:, j]`` and produces ``product_matrix[:, j]``,
so firing it changes the state by the ``net_effect`` column.  Rates are
parameterized on the log scale, and several channels may share one rate
entry through ``param_map`` (parameter tying).
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import NetworkParseError, ValidationError

__all__ = [
    "ReactionNetwork",
    "LogRates",
    "Trajectory",
    "hazard",
    "interval_rates",
    "log_binomial_covariates",
    "binomial_covariates",
    "tying_matrix",
    "build_sir",
    "parse_network",
    "network_to_text",
    "read_trajectory_csv",
    "write_trajectory_csv",
]


@dataclass(frozen=True)
class ReactionNetwork:
    """Immutable description of a quasi-reaction system.

    Attributes:
        reactant_matrix: p x r nonnegative integer stoichiometry of inputs.
        product_matrix: p x r nonnegative integer stoichiometry of outputs.
        net_effect: p x r integer state change per firing; always equals
            ``product_matrix - reactant_matrix``.
        param_map: length-r array of 0-based indices into the rate vector;
            channels sharing an index share a rate (d = number of distinct
            indices, each of 0..d-1 used at least once).
        species_names / reaction_labels / param_labels: identifiers for I/O.
    """

    reactant_matrix: np.ndarray
    product_matrix: np.ndarray
    param_map: np.ndarray
    species_names: tuple[str, ...]
    reaction_labels: tuple[str, ...]
    param_labels: tuple[str, ...]
    net_effect: np.ndarray = field(init=False)

    def __post_init__(self):
        react = np.asarray(self.reactant_matrix, dtype=np.int64)
        prod = np.asarray(self.product_matrix, dtype=np.int64)
        if react.ndim != 2 or prod.shape != react.shape:
            raise ValidationError(
                f"reactant/product matrices must be p x r with equal shapes, "
                f"got {react.shape} and {prod.shape}"
            )
        if (react < 0).any() or (prod < 0).any():
            raise ValidationError("stoichiometric coefficients must be nonnegative")
        p, r = react.shape
        pm = np.asarray(self.param_map, dtype=np.int64)
        if pm.shape != (r,):
            raise ValidationError(f"param_map must have length r={r}, got shape {pm.shape}")
        d = pm.max() + 1 if r else 0
        if r and (pm.min() < 0 or len(np.unique(pm)) != d):
            raise ValidationError("param_map must use every index 0..d-1 at least once")
        if len(self.species_names) != p:
            raise ValidationError(f"expected {p} species names, got {len(self.species_names)}")
        if len(self.reaction_labels) != r:
            raise ValidationError(f"expected {r} reaction labels, got {len(self.reaction_labels)}")
        if len(self.param_labels) != d:
            raise ValidationError(f"expected {d} parameter labels, got {len(self.param_labels)}")
        react.setflags(write=False)
        prod.setflags(write=False)
        pm.setflags(write=False)
        object.__setattr__(self, "reactant_matrix", react)
        object.__setattr__(self, "product_matrix", prod)
        object.__setattr__(self, "param_map", pm)
        net = prod - react
        net.setflags(write=False)
        object.__setattr__(self, "net_effect", net)
        # Sparse view of the reactant matrix for hazard evaluation: nonzero
        # entries in reaction-major order, plus reduceat segment starts for
        # the per-reaction products.
        ridx, sidx = np.nonzero(react.T)
        kval = react.T[ridx, sidx]
        uniq, starts = (np.unique(ridx, return_index=True) if ridx.size
                        else (np.empty(0, np.int64), np.empty(0, np.int64)))
        for a in (ridx, sidx, kval, uniq, starts):
            a.setflags(write=False)
        object.__setattr__(self, "_ridx", ridx)
        object.__setattr__(self, "_sidx", sidx)
        object.__setattr__(self, "_kval", kval)
        object.__setattr__(self, "_runiq", uniq)
        object.__setattr__(self, "_rstarts", starts)
        object.__setattr__(self, "_k1", kval == 1)
        object.__setattr__(self, "_k2", kval == 2)
        object.__setattr__(self, "_kbig", np.nonzero(kval > 2)[0])

    @property
    def species_count(self) -> int:
        return self.reactant_matrix.shape[0]

    @property
    def reaction_count(self) -> int:
        return self.reactant_matrix.shape[1]

    @property
    def param_count(self) -> int:
        return int(self.param_map.max()) + 1 if self.reaction_count else 0

    @classmethod
    def from_parts(
        cls,
        reactant_matrix,
        product_matrix,
        param_map=None,
        species_names=None,
        reaction_labels=None,
        param_labels=None,
    ) -> "ReactionNetwork":
        """Build a network, defaulting param_map to the identity (no tying)."""
        react = np.asarray(reactant_matrix, dtype=np.int64)
        p, r = react.shape
        if param_map is None:
            param_map = np.arange(r)
        pm = np.asarray(param_map, dtype=np.int64)
        if species_names is None:
            species_names = tuple(f"Y{l + 1}" for l in range(p))
        if reaction_labels is None:
            reaction_labels = tuple(f"R{j + 1}" for j in range(r))
        if param_labels is None:
            d = int(pm.max()) + 1 if r else 0
            param_labels = tuple(f"beta{m + 1}" for m in range(d))
        return cls(
            reactant_matrix=react,
            product_matrix=np.asarray(product_matrix, dtype=np.int64),
            param_map=pm,
            species_names=tuple(species_names),
            reaction_labels=tuple(reaction_labels),
            param_labels=tuple(param_labels),
        )


@dataclass(frozen=True)
class LogRates:
    """Log-scale reaction rates; entry m applies to channels with param_map == m."""

    beta: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.beta, dtype=float)
        if b.ndim != 1 or not np.isfinite(b).all():
            raise ValidationError("log-rates must be a finite 1-d vector")
        b.setflags(write=False)
        object.__setattr__(self, "beta", b)


def _as_beta(net: ReactionNetwork, rates) -> np.ndarray:
    beta = rates.beta if isinstance(rates, LogRates) else np.asarray(rates, dtype=float)
    if beta.shape != (net.param_count,):
        raise ValidationError(
            f"expected {net.param_count} log-rates, got shape {beta.shape}"
        )
    if not np.isfinite(beta).all():
        raise ValidationError("log-rates must be finite")
    return beta


@dataclass(frozen=True)
class Trajectory:
    """States observed at strictly increasing time points.

    ``states[i]`` is the species-count vector at ``times[i]``.  Counts are
    integer-valued but stored as floats so the Gaussian-approximation
    estimators can consume them directly.
    """

    times: np.ndarray
    states: np.ndarray
    species_names: tuple[str, ...] | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        y = np.asarray(self.states, dtype=float)
        if t.ndim != 1 or y.ndim != 2 or y.shape[0] != t.shape[0]:
            raise ValidationError(
                f"times ({t.shape}) and states ({y.shape}) must align on the first axis"
            )
        if t.shape[0] < 1:
            raise ValidationError("a trajectory needs at least one time point")
        if (np.diff(t) <= 0).any():
            raise ValidationError("observation times must be strictly increasing")
        if not np.isfinite(y).all() or (y < 0).any():
            raise ValidationError("species counts must be finite and nonnegative")
        if (y != np.floor(y)).any():
            raise ValidationError("species counts must be integer-valued")
        t.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", y)

    @property
    def n_intervals(self) -> int:
        return self.times.shape[0] - 1

    @property
    def increments(self) -> np.ndarray:
        """N x p matrix of state changes between consecutive observations."""
        return np.diff(self.states, axis=0)

    @property
    def dts(self) -> np.ndarray:
        return np.diff(self.times)


def log_binomial_covariates(net: ReactionNetwork, y) -> np.ndarray:
    """log of the per-channel product of binomial coefficients C(y_l, k_lj).

    Entries are -inf for channels whose reactant requirement exceeds the
    available counts.  Computed in log space so that counts up to ~1e9 and
    large stoichiometries cannot overflow.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (net.species_count,):
        raise ValidationError(
            f"state vector must have length p={net.species_count}, got shape {y.shape}"
        )
    if (y < 0).any():
        raise ValidationError("state vector must be nonnegative")
    logc = np.zeros(net.reaction_count)
    ridx, sidx, kval = net._ridx, net._sidx, net._kval
    if ridx.size == 0:
        return logc
    yl = y[sidx]
    feasible = yl >= kval
    terms = np.full(yl.shape, -np.inf)
    one = feasible & (kval == 1)
    two = feasible & (kval == 2)
    with np.errstate(divide="ignore"):
        terms[one] = np.log(yl[one])
        terms[two] = np.log(yl[two] * (yl[two] - 1.0) / 2.0)
    rest = feasible & (kval > 2)
    for i in np.nonzero(rest)[0]:
        k = int(kval[i])
        terms[i] = sum(math.log(yl[i] - m) for m in range(k)) - math.lgamma(k + 1)
    # C(y, k) = 0 when y < k, including y = 0 with k = 1 (log(0) = -inf above).
    with np.errstate(invalid="ignore"):
        np.add.at(logc, ridx, terms)
    return logc


def _covariates_linear(net: ReactionNetwork, y: np.ndarray) -> np.ndarray:
    """Fast per-channel binomial products in linear space.

    Exact for the small stoichiometries in practice (falling factorials of
    integer counts vanish automatically below the requirement); may overflow
    to inf for extreme counts, in which case callers fall back to log space.
    """
    out = np.ones(net.reaction_count)
    if net._ridx.size == 0:
        return out
    vals = y[net._sidx]
    factors = np.empty_like(vals)
    factors[net._k1] = vals[net._k1]
    v2 = vals[net._k2]
    factors[net._k2] = 0.5 * v2 * (v2 - 1.0)
    for i in net._kbig:
        k = int(net._kval[i])
        prod = 1.0
        for m in range(k):
            prod *= vals[i] - m
        factors[i] = prod / math.factorial(k)
    np.maximum(factors, 0.0, out=factors)
    out[net._runiq] = np.multiply.reduceat(factors, net._rstarts)
    return out


def binomial_covariates(net: ReactionNetwork, y) -> np.ndarray:
    """Per-channel binomial product; the hazard equals exp(beta) times this."""
    y = np.asarray(y, dtype=float)
    if y.shape != (net.species_count,):
        raise ValidationError(
            f"state vector must have length p={net.species_count}, got shape {y.shape}"
        )
    if (y < 0).any():
        raise ValidationError("state vector must be nonnegative")
    c = _covariates_linear(net, y)
    if np.isinf(c).any():
        with np.errstate(over="ignore"):
            c = np.exp(log_binomial_covariates(net, y))
    return c


def hazard(net: ReactionNetwork, rates, y) -> np.ndarray:
    """Instantaneous rate of each channel at state ``y``.

    ``lambda_j = exp(beta[param_map[j]]) * prod_l C(y_l, k_lj)`` with the
    convention C(y, k) = 0 whenever y < k.
    """
    beta = _as_beta(net, rates)
    with np.errstate(over="ignore"):
        lam = np.exp(beta[net.param_map]) * binomial_covariates(net, y)
    if np.isinf(lam).any():
        # Retry the overflow-safe composition before giving up.
        logc = log_binomial_covariates(net, y)
        lam = np.exp(beta[net.param_map] + logc)
        if not np.isfinite(lam[logc > -np.inf]).all():
            raise ValidationError(
                "hazard overflow: rates and counts produce non-finite values"
            )
    return lam


def interval_rates(net: ReactionNetwork, rates, y_prev, dt: float) -> np.ndarray:
    """Expected event counts over an interval of length dt starting at y_prev."""
    if not dt > 0:
        raise ValidationError(f"interval length must be positive, got {dt}")
    return dt * hazard(net, rates, y_prev)


def tying_matrix(net: ReactionNetwork) -> np.ndarray:
    """r x d indicator matrix T with T[j, param_map[j]] = 1.

    Maps a d-vector of free rates to the per-channel rate vector; its
    transpose accumulates per-channel gradients into free parameters.
    """
    T = np.zeros((net.reaction_count, net.param_count))
    T[np.arange(net.reaction_count), net.param_map] = 1.0
    return T


def build_sir(regions: int, tied: bool, labels=None) -> ReactionNetwork:
    """Multi-region infection/recovery/death compartment model.

    Per region k the channels are I_k -> 2 I_k, I_k -> R_k, I_k -> D_k over
    species (I_k, R_k, D_k).  With ``tied`` the recovery channels of all
    regions share one rate and the death channels another, so d = regions+2;
    untied every channel has its own rate (d = 3*regions).
    """
    if regions < 1:
        raise ValidationError("regions must be >= 1")
    if labels is None:
        labels = [str(k + 1) for k in range(regions)]
    labels = [str(x) for x in labels]
    if len(labels) != regions:
        raise ValidationError(f"expected {regions} region labels, got {len(labels)}")
    p, r = 3 * regions, 3 * regions
    react = np.zeros((p, r), dtype=np.int64)
    prod = np.zeros((p, r), dtype=np.int64)
    species, rlabels = [], []
    param_map = np.zeros(r, dtype=np.int64)
    if tied:
        param_labels = [f"infect_{lab}" for lab in labels] + ["recover", "death"]
    else:
        param_labels = []
    for k, lab in enumerate(labels):
        i_idx, r_idx, d_idx = 3 * k, 3 * k + 1, 3 * k + 2
        species += [f"I_{lab}", f"R_{lab}", f"D_{lab}"]
        rlabels += [f"infect_{lab}", f"recover_{lab}", f"death_{lab}"]
        # I -> 2I
        react[i_idx, 3 * k] = 1
        prod[i_idx, 3 * k] = 2
        # I -> R
        react[i_idx, 3 * k + 1] = 1
        prod[r_idx, 3 * k + 1] = 1
        # I -> D
        react[i_idx, 3 * k + 2] = 1
        prod[d_idx, 3 * k + 2] = 1
        if tied:
            param_map[3 * k] = k
            param_map[3 * k + 1] = regions
            param_map[3 * k + 2] = regions + 1
        else:
            param_map[3 * k : 3 * k + 3] = (3 * k, 3 * k + 1, 3 * k + 2)
            param_labels += [f"infect_{lab}", f"recover_{lab}", f"death_{lab}"]
    return ReactionNetwork(
        reactant_matrix=react,
        product_matrix=prod,
        param_map=param_map,
        species_names=tuple(species),
        reaction_labels=tuple(rlabels),
        param_labels=tuple(param_labels),
    )


_TERM_RE = re.compile(r"^(?:(\d+)\s+)?([A-Za-z_][A-Za-z0-9_]*)$")


def _parse_side(side: str, line_no: int) -> dict[str, int]:
    side = side.strip()
    if side == "0" or side == "":
        return {}
    coeffs: dict[str, int] = {}
    for term in side.split("+"):
        m = _TERM_RE.match(term.strip())
        if not m:
            raise NetworkParseError(f"cannot parse species term {term.strip()!r}", line_no)
        count = int(m.group(1)) if m.group(1) else 1
        name = m.group(2)
        coeffs[name] = coeffs.get(name, 0) + count
    return coeffs


def parse_network(text: str, species_order=None) -> ReactionNetwork:
    """Parse the one-reaction-per-line network format.

    Lines look like ``A + 2 B -> C @ label``; ``0`` denotes an empty side
    and ``# ...`` lines are comments.  Channels that share a label share a
    rate parameter; without labels every channel gets its own parameter.
    Species are ordered by first appearance unless ``species_order`` is
    given explicitly.
    """
    reactions = []  # (reactants, products, label or None, line_no)
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        label = None
        if "@" in line:
            line, _, label = line.partition("@")
            label = label.strip()
            if not label:
                raise NetworkParseError("empty tying label after '@'", line_no)
        if "->" not in line:
            raise NetworkParseError("missing '->' between reactants and products", line_no)
        left, arrow, right = line.partition("->")
        if "->" in right:
            raise NetworkParseError("more than one '->' on a line", line_no)
        reactions.append(
            (_parse_side(left, line_no), _parse_side(right, line_no), label, line_no)
        )
    if not reactions:
        raise NetworkParseError("no reactions found")

    seen: list[str] = []
    for reac, prod, _, _ in reactions:
        for name in list(reac) + list(prod):
            if name not in seen:
                seen.append(name)
    if species_order is not None:
        species = [str(s) for s in species_order]
        missing = [s for s in seen if s not in species]
        if missing:
            raise ValidationError(f"species_order is missing {missing}")
    else:
        species = seen
    sindex = {s: l for l, s in enumerate(species)}

    p, r = len(species), len(reactions)
    react = np.zeros((p, r), dtype=np.int64)
    prod = np.zeros((p, r), dtype=np.int64)
    labels, rlabels = [], []
    param_map = np.zeros(r, dtype=np.int64)
    for j, (reac_side, prod_side, label, line_no) in enumerate(reactions):
        for name, k in reac_side.items():
            react[sindex[name], j] = k
        for name, k in prod_side.items():
            prod[sindex[name], j] = k
        label = label if label is not None else f"r{j + 1}"
        if label not in labels:
            labels.append(label)
        param_map[j] = labels.index(label)
        rlabels.append(label if label != f"r{j + 1}" else f"R{j + 1}")
    return ReactionNetwork(
        reactant_matrix=react,
        product_matrix=prod,
        param_map=param_map,
        species_names=tuple(species),
        reaction_labels=tuple(rlabels),
        param_labels=tuple(labels),
    )


def _format_side(coeffs: np.ndarray, species: tuple[str, ...]) -> str:
    terms = []
    for l, k in enumerate(coeffs):
        if k == 1:
            terms.append(species[l])
        elif k > 1:
            terms.append(f"{k} {species[l]}")
    return " + ".join(terms) if terms else "0"


def network_to_text(net: ReactionNetwork) -> str:
    """Render a network in the text format accepted by parse_network."""
    lines = []
    for j in range(net.reaction_count):
        left = _format_side(net.reactant_matrix[:, j], net.species_names)
        right = _format_side(net.product_matrix[:, j], net.species_names)
        lines.append(f"{left} -> {right} @ {net.param_labels[net.param_map[j]]}")
    return "\n".join(lines) + "\n"


def write_trajectory_csv(traj: Trajectory, path, seed_label: str | None = None) -> None:
    """Write `time,<species...>` rows; counts are emitted as integers."""
    names = traj.species_names or tuple(
        f"Y{l + 1}" for l in range(traj.states.shape[1])
    )
    with open(path, "w", newline="") as fh:
        if seed_label is not None:
            fh.write(f"# seed={seed_label}\n")
        writer = csv.writer(fh)
        writer.writerow(["time", *names])
        for t, row in zip(traj.times, traj.states):
            writer.writerow([repr(float(t)), *(str(int(v)) for v in row)])


def read_trajectory_csv(path) -> Trajectory:
    """Read a trajectory CSV, validating integer counts and increasing times."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    if not rows:
        raise ValidationError(f"{path}: empty trajectory file")
    header = rows[0]
    if not header or header[0] != "time":
        raise ValidationError(f"{path}: first column must be 'time'")
    names = tuple(header[1:])
    if not names:
        raise ValidationError(f"{path}: no species columns")
    times, states = [], []
    for r in rows[1:]:
        if len(r) != len(header):
            raise ValidationError(f"{path}: row has {len(r)} fields, expected {len(header)}")
        times.append(float(r[0]))
        vals = [float(v) for v in r[1:]]
        for name, v in zip(names, vals):
            if v != math.floor(v):
                raise ValidationError(f"{path}: non-integer count {v} in column {name}")
        states.append(vals)
    return Trajectory(times=np.asarray(times), states=np.asarray(states), species_names=names)
