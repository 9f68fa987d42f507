"""Static network structure: neurons, kinds, winner-take-all groups, connections, costs.

Neuron ids are integers 1..n(u). Ids 1..n_x are input neurons (no incoming
connections, arbitrary real activations); ids n_x+1..n_x+n_y are output
neurons. Exactly one non-input neuron is the halt neuron. Every connection
carries a constant positive cost, either given explicitly, derived from a 3D
placement (wire length), or defaulting to 1.0.

Adjacency lists are sorted by destination id. That order is the canonical
enumeration order used for tie-breaking by the engine, the search, and trace
canonicalization.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

ADDITIVE = "additive"
MULTIPLICATIVE = "multiplicative"

#: connections are keyed by (src, dst) id pairs everywhere
Conn = tuple[int, int]


class TopologyError(ValueError):
    """A network description violates a structural constraint."""


@dataclass(frozen=True)
class NeuronSpec:
    """One neuron: id, aggregation combinator, optional winner-take-all group.

    Input neurons never aggregate, so their combinator is None. A non-input
    neuron belongs to at most one group; group members compete each step and
    at most one of them activates.
    """

    id: int
    combinator: Optional[str] = None
    witas: Optional[int] = None


def _resolve_cost(explicit, src, dst, placement, metric):
    if explicit is not None:
        return float(explicit)
    if metric == "unit" or placement is None:
        return 1.0
    a, b = placement[src], placement[dst]
    if metric == "euclidean":
        return math.sqrt(sum((ai - bi) ** 2 for ai, bi in zip(a, b)))
    if metric == "manhattan":
        return float(sum(abs(ai - bi) for ai, bi in zip(a, b)))
    raise TopologyError(f"unknown wire metric: {metric!r}")


class SlimTopology:
    """Immutable network structure shared by engine, search, and tracker.

    Args:
        neurons: NeuronSpec per neuron; ids must cover 1..len(neurons).
        connections: iterable of (src, dst) or (src, dst, cost).
        n_x: number of input neurons (ids 1..n_x). The last input carries the
            reward channel by convention.
        n_y: number of output neurons (ids n_x+1..n_x+n_y).
        halt: id of the halt neuron (must be > n_x).
        threshold: activation threshold, shared by plain units and
            winner-take-all groups. Must be positive.
        placement: optional map id -> (x, y, z) used for geometric costs.
        metric: "unit", "euclidean" or "manhattan"; applied to connections
            without an explicit cost.
    """

    def __init__(
        self,
        neurons: Sequence[NeuronSpec],
        connections: Iterable[tuple],
        n_x: int,
        n_y: int,
        halt: int,
        threshold: float = 0.5,
        placement: Optional[Mapping[int, tuple]] = None,
        metric: str = "unit",
        validate: bool = True,
    ):
        self.neurons = tuple(sorted(neurons, key=lambda s: s.id))
        self.n_neurons = len(self.neurons)
        self.n_x = int(n_x)
        self.n_y = int(n_y)
        self.halt = int(halt)
        self.threshold = float(threshold)
        self.placement = (
            {int(k): tuple(float(c) for c in v) for k, v in placement.items()}
            if placement is not None
            else None
        )
        self.metric = metric

        self.conn_cost: dict[Conn, float] = {}
        raw_conns = []
        for entry in connections:
            if len(entry) == 2:
                src, dst = entry
                cost = None
            else:
                src, dst, cost = entry
            src, dst = int(src), int(dst)
            raw_conns.append((src, dst, cost))

        out: dict[int, list[tuple[int, float]]] = {}
        self._dup: list[Conn] = []
        for src, dst, cost in raw_conns:
            c = _resolve_cost(cost, src, dst, self.placement, metric)
            if (src, dst) in self.conn_cost:
                # keep first occurrence; duplicates go to the validation report
                self._dup.append((src, dst))
                continue
            self.conn_cost[(src, dst)] = c
            out.setdefault(src, []).append((dst, c))
        self.out: dict[int, tuple[tuple[int, float], ...]] = {
            src: tuple(sorted(lst)) for src, lst in out.items()
        }

        self.combinator: dict[int, Optional[str]] = {s.id: s.combinator for s in self.neurons}
        self.witas_of: dict[int, Optional[int]] = {s.id: s.witas for s in self.neurons}
        groups: dict[int, list[int]] = {}
        for s in self.neurons:
            if s.witas is not None:
                groups.setdefault(s.witas, []).append(s.id)
        # group member order (ascending id) is the tie-break order
        self.witas_members: dict[int, tuple[int, ...]] = {
            g: tuple(sorted(m)) for g, m in groups.items()
        }

        if validate:
            report = validate_topology(self)
            if report:
                raise TopologyError("; ".join(report))

    # -- convenience -----------------------------------------------------
    def is_input(self, nid: int) -> bool:
        return 1 <= nid <= self.n_x

    def output_ids(self) -> tuple[int, ...]:
        return tuple(range(self.n_x + 1, self.n_x + self.n_y + 1))

    def connections(self) -> tuple[Conn, ...]:
        return tuple(sorted(self.conn_cost))


def validate_topology(t: SlimTopology) -> list[str]:
    """Check structural invariants; returns a list of violations (empty = valid).

    Idempotent and side-effect free.
    """
    report = []
    ids = [s.id for s in t.neurons]
    if ids != list(range(1, t.n_neurons + 1)):
        report.append("neuron ids must cover 1..n without gaps or duplicates")
    if t.n_x < 1:
        report.append("at least one input neuron required (reward channel)")
    if t.n_x + t.n_y > t.n_neurons:
        report.append("n_x + n_y exceeds neuron count")
    if not (t.n_x < t.halt <= t.n_neurons):
        report.append("halt neuron must be a non-input neuron")
    if t.threshold <= 0:
        report.append("threshold must be positive")
    for s in t.neurons:
        if t.is_input(s.id):
            if s.combinator is not None:
                report.append(f"input neuron {s.id} must not have a combinator")
            if s.witas is not None:
                report.append(f"input neuron {s.id} cannot join a winner-take-all group")
        elif s.combinator not in (ADDITIVE, MULTIPLICATIVE):
            report.append(f"neuron {s.id} needs combinator additive|multiplicative")
    for (src, dst), cost in t.conn_cost.items():
        if not (1 <= src <= t.n_neurons) or not (1 <= dst <= t.n_neurons):
            report.append(f"connection ({src},{dst}) references unknown neuron")
            continue
        if t.is_input(dst):
            report.append(f"input neuron {dst} has incoming edge from {src}")
        if cost <= 0:
            report.append(f"connection ({src},{dst}) must have positive cost")
    for pair in t._dup:
        report.append(f"duplicate connection {pair}")
    if t.placement is not None:
        missing = [s.id for s in t.neurons if s.id not in t.placement]
        if missing:
            report.append(f"placement missing coordinates for neurons {missing}")
    return report


def wire_cost(t: SlimTopology, conn: Conn, metric: str = "unit") -> float:
    """Cost of one connection under the given metric.

    Geometric metrics need a placement; cost is symmetric in src/dst and
    strictly positive whenever the two placements differ.
    """
    src, dst = conn
    if metric == "unit":
        return 1.0
    if t.placement is None:
        raise TopologyError("geometric wire metric requires a placement")
    return _resolve_cost(None, src, dst, t.placement, metric)


def total_wire_cost(t: SlimTopology, trace) -> float:
    """Usage-weighted cost of a trace: sum of cost * use-count per connection.

    With zero external costs this equals the engine's accumulated time.
    """
    total = 0.0
    for conn, n in trace.usage_counts.items():
        if conn not in t.conn_cost:
            raise TopologyError(f"trace references unknown connection {conn}")
        total += t.conn_cost[conn] * n
    return total


def make_neurons(
    n_neurons: int,
    n_x: int,
    combinators: Optional[Mapping[int, str]] = None,
    witas: Optional[Mapping[int, int]] = None,
) -> list[NeuronSpec]:
    """Neuron specs with additive defaults for all non-inputs."""
    combinators = combinators or {}
    witas = witas or {}
    specs = []
    for nid in range(1, n_neurons + 1):
        if nid <= n_x:
            specs.append(NeuronSpec(nid))
        else:
            specs.append(
                NeuronSpec(nid, combinators.get(nid, ADDITIVE), witas.get(nid))
            )
    return specs


def random_topology(
    seed: int,
    n_neurons: int,
    n_connections: int,
    n_x: int = 2,
    n_y: int = 1,
    multiplicative_fraction: float = 0.3,
    witas_fraction: float = 0.3,
    witas_size: int = 3,
    threshold: float = 0.5,
) -> SlimTopology:
    """Deterministic random network for tests and benchmarks.

    Connections never target inputs and never repeat; the halt neuron is the
    last one. Costs are unit.
    """
    rng = random.Random(seed)
    n_internal = n_neurons - n_x
    if n_internal < 1:
        raise TopologyError("need at least one non-input neuron")
    combinators = {}
    witas = {}
    non_inputs = list(range(n_x + 1, n_neurons + 1))
    for nid in non_inputs:
        if rng.random() < multiplicative_fraction:
            combinators[nid] = MULTIPLICATIVE
    pool = [nid for nid in non_inputs if rng.random() < witas_fraction]
    rng.shuffle(pool)
    gid = 0
    while len(pool) >= 2:
        size = min(len(pool), rng.randint(2, max(2, witas_size)))
        gid += 1
        for nid in pool[:size]:
            witas[nid] = gid
        pool = pool[size:]
    neurons = make_neurons(n_neurons, n_x, combinators, witas)

    max_pairs = n_neurons * n_internal
    n_connections = min(n_connections, max_pairs)
    seen = set()
    conns = []
    while len(conns) < n_connections:
        src = rng.randint(1, n_neurons)
        dst = rng.randint(n_x + 1, n_neurons)
        if (src, dst) in seen:
            continue
        seen.add((src, dst))
        conns.append((src, dst))
    return SlimTopology(
        neurons, conns, n_x=n_x, n_y=n_y, halt=n_neurons, threshold=threshold
    )


# -- file format ---------------------------------------------------------

def _neuron_kind(t: SlimTopology, nid: int) -> str:
    if t.is_input(nid):
        return "input"
    if nid in t.output_ids():
        return "output"
    return "internal"


def topology_to_dict(t: SlimTopology) -> dict:
    return {
        "n_x": t.n_x,
        "n_y": t.n_y,
        "halt": t.halt,
        "threshold": t.threshold,
        "metric": t.metric,
        "neurons": [
            {
                "id": s.id,
                "kind": _neuron_kind(t, s.id),
                "combinator": s.combinator,
                "witas": s.witas,
            }
            for s in t.neurons
        ],
        "connections": [
            {"src": src, "dst": dst, "cost": t.conn_cost[(src, dst)]}
            for src, dst in t.connections()
        ],
        "placement": (
            {str(k): list(v) for k, v in sorted(t.placement.items())}
            if t.placement is not None
            else None
        ),
    }


def topology_from_dict(data: Mapping) -> SlimTopology:
    neurons = [
        NeuronSpec(int(n["id"]), n.get("combinator"), n.get("witas"))
        for n in data["neurons"]
    ]
    conns = [(c["src"], c["dst"], c.get("cost")) for c in data["connections"]]
    placement = data.get("placement")
    if placement is not None:
        placement = {int(k): tuple(v) for k, v in placement.items()}
    return SlimTopology(
        neurons,
        conns,
        n_x=data["n_x"],
        n_y=data["n_y"],
        halt=data["halt"],
        threshold=data.get("threshold", 0.5),
        placement=placement,
        metric=data.get("metric", "unit"),
    )


def save_topology(t: SlimTopology, path) -> None:
    with open(path, "w") as fh:
        json.dump(topology_to_dict(t), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_topology(path) -> SlimTopology:
    with open(path) as fh:
        return topology_from_dict(json.load(fh))
