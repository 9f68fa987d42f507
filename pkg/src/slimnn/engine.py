"""Event-driven episode execution with self-delimiting traces.

One episode propagates activations step by step, visiting only connections
that leave currently active neurons. The ordered record of first-used
connections (with their weights) is the program that ran; undoing its side
effects afterwards costs work proportional to that record, never to the
network size.

State layout per engine instance (allocated once, reused across episodes):

* ``acc[k]``   pending contribution accumulator; between steps it is 0 for
  additive neurons and 1 for multiplicative ones.
* ``used[k]``  true while neuron k has pending contributions this step.
* ``marked``   set of connections already recorded in the current trace.
* ``act[k]`` / ``stamp[k]``  last assigned activation and the step counter
  value at assignment. Reading an activation whose stamp is stale yields 0,
  so neither episodes nor steps need bulk resets.

Weights come from a :class:`WeightOracle`. A plain mapping is wrapped in
:class:`FixedWeights`, which treats missing connections as weight 0 (no
effect, never recorded). Oracles that return None from ``query`` get a
``request`` at the first potential use of a connection and may define a value
on the spot, grow-as-you-go style, or refuse, which aborts the episode. An
oracle may also expose ``on_first_use(conn, value)`` to tighten the episode's
remaining time budget whenever the running program grows; the search uses
this to keep each candidate inside its probability-proportional time slice.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

from .topology import ADDITIVE, MULTIPLICATIVE, Conn, SlimTopology

#: episode end reasons
HALTED = "halted"
TIMEOUT = "timeout"
PREFIX_EXHAUSTED = "program prefix exhausted"
INPUT_EXHAUSTED = "input exhausted"
STEP_LIMIT = "step limit"

#: weights set by an assignment; missing connection means weight 0
WeightAssignment = dict[Conn, float]


class WeightOracle:
    """Interface between the engine and whatever defines weights.

    ``query`` must be side-effect free; ``request`` is invoked at most once
    per connection per episode, exactly at the first potential use.
    """

    def query(self, conn: Conn) -> Optional[float]:
        raise NotImplementedError

    def request(self, conn: Conn) -> Optional[float]:
        return None  # refuse by default


class FixedWeights(WeightOracle):
    """Program given as a sparse map; anything missing is weight 0."""

    def __init__(self, assignment: Mapping[Conn, float]):
        self.assignment = assignment

    def query(self, conn: Conn) -> float:
        return self.assignment.get(conn, 0.0)


def as_oracle(weights) -> WeightOracle:
    if isinstance(weights, WeightOracle):
        return weights
    return FixedWeights(weights)


@dataclass
class Trace:
    """The self-delimiting program executed by one or more episodes.

    ``first_uses`` lists (episode, step, src, dst, weight) in order of first
    activation-carrying use. ``usage_counts`` maps each recorded connection
    to its number of uses; ``hebb`` maps it to (yes, no) counts of how often
    the destination neuron was active / inactive right after a use. The two
    always satisfy yes + no = uses. ``time`` is the total charged runtime
    including ``external`` (environment action and evaluation charges).
    """

    first_uses: tuple = ()
    usage_counts: dict = field(default_factory=dict)
    hebb: dict = field(default_factory=dict)
    time: float = 0.0
    external: float = 0.0
    halted: bool = False
    reason: str = ""

    def connections(self) -> list[Conn]:
        return [(src, dst) for (_, _, src, dst, _) in self.first_uses]

    def values(self) -> WeightAssignment:
        return {(src, dst): w for (_, _, src, dst, w) in self.first_uses}


@dataclass
class EpisodeResult:
    trace: Trace
    outputs: tuple  # per completed step, activations of the output neurons
    result_readout: tuple  # final activations of the designated readout set
    halted: bool
    steps: int
    activations: Optional[tuple] = None  # opt-in per-step {neuron: value}


def merge_traces(traces: Sequence[Trace]) -> Trace:
    """Concatenate episode traces; counters summed, times added."""
    first_uses = []
    usage: dict[Conn, int] = {}
    hebb: dict[Conn, list[int]] = {}
    time = external = 0.0
    halted = True
    reason = ""
    for tr in traces:
        first_uses.extend(tr.first_uses)
        for c, n in tr.usage_counts.items():
            usage[c] = usage.get(c, 0) + n
        for c, (y, n) in tr.hebb.items():
            h = hebb.setdefault(c, [0, 0])
            h[0] += y
            h[1] += n
        time += tr.time
        external += tr.external
        halted = halted and tr.halted
        reason = tr.reason
    return Trace(
        first_uses=tuple(first_uses),
        usage_counts=usage,
        hebb={c: (y, n) for c, (y, n) in hebb.items()},
        time=time,
        external=external,
        halted=halted,
        reason=reason,
    )


class Engine:
    """Executes episodes on one topology, reusing state buffers between runs."""

    def __init__(self, topology: SlimTopology):
        t = topology
        self.t = t
        n = t.n_neurons
        self.act = [0.0] * (n + 1)
        self.stamp = [0] * (n + 1)
        self.used = [False] * (n + 1)
        self.marked: set[Conn] = set()
        self._neutral = [0.0] * (n + 1)
        for nid in range(t.n_x + 1, n + 1):
            self._neutral[nid] = 1.0 if t.combinator[nid] == MULTIPLICATIVE else 0.0
        self.acc = list(self._neutral)
        self.clock = 0
        # instrumentation
        self.restore_touches = 0
        self.considerations = 0

    def reset_counters(self) -> None:
        self.restore_touches = 0
        self.considerations = 0

    def state_is_clean(self) -> bool:
        """Debug check: accumulators neutral, flags down, no marks left."""
        return (
            self.acc == self._neutral
            and not any(self.used)
            and not self.marked
        )

    def run_episode(
        self,
        oracle,
        env,
        t_lim: float,
        episode_index: int = 0,
        readout: Sequence[int] = (),
        max_steps: Optional[int] = None,
        record_activations: bool = False,
        step_order: Optional[Callable[[list], list]] = None,
        event_log: Optional[list] = None,
    ) -> EpisodeResult:
        """Run one episode until the halt neuron activates or budget runs out.

        ``t_lim`` is the total time allowance (connection costs plus external
        charges); exceeding it strictly aborts the episode. ``step_order`` is
        a testing hook permuting the per-step source frontier; results are
        invariant under it. Zero-activation neurons never spread, zero-weight
        connections are skipped unrecorded.
        """
        t = self.t
        oracle = as_oracle(oracle)
        hook = getattr(oracle, "on_first_use", None)
        env.reset()

        act, stamp, acc, used = self.act, self.stamp, self.acc, self.used
        marked = self.marked
        out = t.out
        comb = t.combinator
        witas_of = t.witas_of
        theta = t.threshold
        n_x = t.n_x
        output_ids = t.output_ids()

        old: list[int] = []
        new: list[int] = []
        first_uses: list[tuple] = []
        usage: dict[Conn, int] = {}
        hebb: dict[Conn, list[int]] = {}
        time_total = 0.0
        external = 0.0
        limit = float(t_lim)
        step = 0
        resolved_clock = self.clock  # clock of the last completed step
        outputs_rec: list[tuple] = []
        acts_rec: list[dict] = [] if record_activations else None
        reason = TIMEOUT
        halted = False

        def read(nid: int) -> float:
            return act[nid] if stamp[nid] == resolved_clock else 0.0

        while True:
            x = env.next_input()
            if x is None:
                reason = INPUT_EXHAUSTED
                break
            if max_steps is not None and step >= max_steps:
                reason = STEP_LIMIT
                break
            step += 1
            self.clock += 1
            clock = self.clock
            if len(x) != n_x:
                raise ValueError(
                    f"environment produced {len(x)} inputs, topology has {n_x}"
                )
            for k in range(1, n_x + 1):
                v = float(x[k - 1])
                act[k] = v
                stamp[k] = clock
                if v != 0.0:
                    old.append(k)

            # spread contributions from the active frontier
            step_uses: list[Conn] = []
            aborted = False
            frontier = step_order(old) if step_order is not None else old
            for l in frontier:
                ul = act[l]
                for k, cost in out.get(l, ()):
                    self.considerations += 1
                    conn = (l, k)
                    w = oracle.query(conn)
                    if w is None:
                        w = oracle.request(conn)
                        if w is None:
                            reason = PREFIX_EXHAUSTED
                            aborted = True
                            break
                    if w == 0.0:
                        continue
                    if conn not in marked:
                        marked.add(conn)
                        first_uses.append((episode_index, step, l, k, w))
                        if hook is not None:
                            new_limit = hook(conn, w)
                            if new_limit is not None:
                                limit = new_limit
                    if comb[k] == ADDITIVE:
                        acc[k] += ul * w
                    else:
                        acc[k] *= ul * w
                    if not used[k]:
                        used[k] = True
                        new.append(k)
                    step_uses.append(conn)
                    usage[conn] = usage.get(conn, 0) + 1
                    time_total += cost
                    if event_log is not None:
                        event_log.append(("use", step, l, k, ul * w))
                    if time_total + external > limit:
                        reason = TIMEOUT
                        aborted = True
                        break
                if aborted:
                    break

            if aborted:
                # partial step discarded; its uses count as failed triggers
                for conn in step_uses:
                    h = hebb.setdefault(conn, [0, 0])
                    h[1] += 1
                break

            # resolve thresholds and winner-take-all groups
            raws: dict[int, float] = {}
            groups: dict[int, list[int]] = {}
            for k in new:
                raws[k] = acc[k]
                used[k] = False
                acc[k] = self._neutral[k]
                g = witas_of[k]
                if g is not None:
                    groups.setdefault(g, []).append(k)
            next_old: list[int] = []
            for k in new:
                if witas_of[k] is not None:
                    continue
                a = 1.0 if raws[k] >= theta else 0.0
                act[k] = a
                stamp[k] = clock
                if a != 0.0:
                    next_old.append(k)
            for g, touched in groups.items():
                members = t.witas_members[g]
                best = None
                best_raw = -float("inf")
                for m in members:
                    r = raws.get(m, 0.0)
                    if r > best_raw:
                        best_raw = r
                        best = m
                winner = best if best_raw >= theta else None
                for m in touched:
                    a = 1.0 if m == winner else 0.0
                    act[m] = a
                    stamp[m] = clock
                    if a != 0.0:
                        next_old.append(m)

            resolved_clock = clock
            for conn in step_uses:
                h = hebb.setdefault(conn, [0, 0])
                if act[conn[1]] == 1.0 and stamp[conn[1]] == clock:
                    h[0] += 1
                else:
                    h[1] += 1

            old = next_old
            new = []
            y = tuple(read(k) for k in output_ids)
            outputs_rec.append(y)
            if record_activations:
                acts_rec.append(
                    {k: act[k] for k in range(n_x + 1, t.n_neurons + 1) if read(k) != 0.0}
                )
            if event_log is not None:
                for k in sorted(raws):
                    event_log.append(("neuron", step, k, read(k)))
            env.act(y)
            external += env.external_cost()
            if time_total + external > limit:
                reason = TIMEOUT
                break
            if read(t.halt) >= theta:
                reason = HALTED
                halted = True
                break

        # restore: residual pending flags (premature exits), then trace marks
        for k in new:
            used[k] = False
            acc[k] = self._neutral[k]
            self.restore_touches += 2
        for (_, _, src, dst, _) in first_uses:
            marked.discard((src, dst))
            self.restore_touches += 1

        trace = Trace(
            first_uses=tuple(first_uses),
            usage_counts=usage,
            hebb={c: (h[0], h[1]) for c, h in hebb.items()},
            time=time_total + external,
            external=external,
            halted=halted,
            reason=reason,
        )
        # a step counts as completed once its resolution ran
        completed = step if resolved_clock == self.clock else max(0, step - 1)
        return EpisodeResult(
            trace=trace,
            outputs=tuple(outputs_rec),
            result_readout=tuple(
                act[k] if stamp[k] == resolved_clock else 0.0 for k in readout
            ),
            halted=halted,
            steps=completed,
            activations=tuple(acts_rec) if record_activations else None,
        )


def spread(
    t: SlimTopology,
    weights,
    env,
    t_lim: float,
    **kwargs,
) -> EpisodeResult:
    """One-shot episode on a fresh engine; see :meth:`Engine.run_episode`."""
    return Engine(t).run_episode(as_oracle(weights), env, t_lim, **kwargs)


def restore_via_trace(
    t: SlimTopology, trace: Trace, tentative: WeightAssignment
) -> int:
    """Undo tentative weight definitions recorded by a trace.

    Walks only the trace's first uses; connections and neurons outside the
    trace are never touched. Returns the number of restoration touches for
    instrumentation.
    """
    touches = 0
    for (_, _, src, dst, _) in trace.first_uses:
        if (src, dst) in tentative:
            del tentative[(src, dst)]
            touches += 1
    return touches


def canonical_trace(t: SlimTopology, trace: Trace) -> tuple:
    """Order-independent form of a trace's first-use sequence.

    Within each (episode, step) group the first uses are sorted by (src, dst);
    two episodes that differ only in within-step scheduling produce equal
    canonical forms. Entries are (episode, step, src, dst, weight).
    """
    entries = list(trace.first_uses)
    entries.sort(key=lambda e: (e[0], e[1], e[2], e[3]))
    return tuple(entries)


def is_proper_prefix(a: tuple, b: tuple) -> bool:
    """True if canonical trace a is a strict leading slice of b."""
    if len(a) >= len(b):
        return False
    return all(x == y for x, y in zip(a, b))
