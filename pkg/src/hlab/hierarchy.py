"""Who depends on whom: Jacobian sensitivities, net dependency, phases.

The directed sensitivity of agent i to teammate j is the Frobenius norm of
the 5x4 block of the actor's input Jacobian over the four observation slots
that carry teammate j's position and velocity. Net dependency folds the
directed sensitivities into one signed score per agent,

    D_i = sum_{j != i} (|grad_ji| - |grad_ij|),

so D_i > 0 means the others react to agent i more than it reacts to them.
The per-agent sums are accumulated with math.fsum: each D_i is the correctly
rounded sum of its raw signed entries, and the team total cancels to zero at
machine precision.

A rollout yields one sensitivity matrix and one D vector per step; runs of a
common per-step argmax leader become phase segments, and a single segment
spanning the whole episode is persistent dominance (otherwise alternating).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import IO, Sequence

import numpy as np

from hlab.maddpg import AgentNets, Trajectory, _actor_list
from hlab.nn import MlpParams, input_jacobian
from hlab.world import ObservationLayout, ScenarioConfig

TIE_TOL = 1e-12

PATTERN_PERSISTENT = "persistent_dominance"
PATTERN_ALTERNATING = "alternating_dominance"


@dataclass
class SensitivityMatrix:
    """All directed sensitivities at one step; entry (i, j) = |grad_ij|."""

    step_index: int
    entries: np.ndarray  # (n, n), nonnegative, zero diagonal

    def validate(self) -> None:
        e = self.entries
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise ValueError(f"entries must be square, got shape {e.shape}")
        if np.any(e < 0):
            raise ValueError("sensitivities must be nonnegative")
        if np.any(np.diag(e) != 0):
            raise ValueError("diagonal must be exactly zero")


def pairwise_sensitivity(actor: MlpParams, obs: np.ndarray,
                         layout: ObservationLayout, j: int,
                         ord: str | int = "fro") -> float:
    """|grad_ij|: matrix norm of d(actor output)/d(teammate j slots).

    ord is any np.linalg.norm matrix order; the Frobenius default treats
    action and state components symmetrically.
    """
    if j == layout.observer:
        raise ValueError("sensitivity to the agent's own state is undefined")
    obs = np.asarray(obs, dtype=float)
    if obs.shape != (layout.total_dim,):
        raise ValueError(f"observation shape {obs.shape} does not match "
                         f"layout dim {layout.total_dim}")
    jac = input_jacobian(actor, obs)
    block = jac[:, layout.teammate_block(j)]
    return float(np.linalg.norm(block, ord=ord))


def sensitivity_matrix(actors: Sequence[MlpParams], joint_obs: np.ndarray,
                       scenario: ScenarioConfig,
                       step_index: int = 0,
                       ord: str | int = "fro") -> SensitivityMatrix:
    """All n(n-1) directed sensitivities at one recorded step."""
    n = scenario.n_agents
    if len(actors) != n:
        raise ValueError(f"{len(actors)} actors for {n} agents")
    entries = np.zeros((n, n))
    for i in range(n):
        layout = scenario.layout(i)
        jac = input_jacobian(actors[i], np.asarray(joint_obs[i], dtype=float))
        for j in range(n):
            if j == i:
                continue
            block = jac[:, layout.teammate_block(j)]
            entries[i, j] = float(np.linalg.norm(block, ord=ord))
    return SensitivityMatrix(step_index=step_index, entries=entries)


def dependency_values(matrix: SensitivityMatrix | np.ndarray) -> np.ndarray:
    """Net dependency D from a sensitivity matrix.

    Each D_i is fsum'ed over the raw signed entries (columns in, rows out),
    one rounding per agent; this keeps hand-checkable inputs exact and the
    total within one ulp of zero.
    """
    entries = matrix.entries if isinstance(matrix, SensitivityMatrix) else matrix
    entries = np.asarray(entries, dtype=float)
    n = entries.shape[0]
    out = np.empty(n)
    for i in range(n):
        terms = [entries[j, i] for j in range(n) if j != i]
        terms += [-entries[i, j] for j in range(n) if j != i]
        out[i] = math.fsum(terms)
    return out


@dataclass
class HierarchyCall:
    """Outcome of reading a single D vector."""

    leader: int | None  # None when no hierarchy exists
    followers: tuple[int, ...]
    tie: bool  # top value shared within tolerance (and not the no-hierarchy case)


def identify_hierarchy(dependencies: np.ndarray,
                       tol: float = TIE_TOL) -> HierarchyCall:
    """Pick the leader: strict max of D, lowest index on ties.

    All values equal within tol means no hierarchy at all (flat team).
    """
    d = np.asarray(dependencies, dtype=float)
    if d.ndim != 1 or d.size < 2:
        raise ValueError("need a vector of at least two dependency values")
    if float(d.max() - d.min()) <= tol:
        return HierarchyCall(leader=None, followers=tuple(range(d.size)),
                             tie=False)
    top = float(d.max())
    at_top = np.flatnonzero(d >= top - tol)
    leader = int(at_top[0])
    followers = tuple(i for i in range(d.size) if i != leader)
    return HierarchyCall(leader=leader, followers=followers,
                         tie=at_top.size > 1)


@dataclass
class DependencyTrace:
    """Per-step sensitivities and dependency values of one rollout."""

    scenario_id: str
    dependencies: np.ndarray  # (T, n)
    sensitivities: np.ndarray  # (T, n, n)
    leaders: np.ndarray  # (T,) per-step argmax (lowest index on ties)
    ties: np.ndarray  # (T,) bool
    seed: int | None = None
    checkpoint: str | None = None

    @property
    def n_steps(self) -> int:
        return self.dependencies.shape[0]

    @property
    def n_agents(self) -> int:
        return self.dependencies.shape[1]


def analyze_rollout(trajectory: Trajectory,
                    actors: Sequence[AgentNets] | Sequence[MlpParams],
                    scenario: ScenarioConfig,
                    seed: int | None = None,
                    checkpoint: str | None = None,
                    ord: str | int = "fro") -> DependencyTrace:
    """Sensitivities and D at every recorded step of a rollout."""
    actor_params = _actor_list(list(actors))
    n = scenario.n_agents
    if trajectory.n_agents != n:
        raise ValueError(f"trajectory has {trajectory.n_agents} agents, "
                         f"scenario has {n}")
    for i, actor in enumerate(actor_params):
        want = scenario.layout(i).total_dim
        if actor.in_dim != want:
            raise ValueError(f"actor {i} expects {actor.in_dim}-dim input, "
                             f"scenario observations are {want}-dim")
    t_steps = trajectory.n_steps
    deps = np.zeros((t_steps, n))
    sens = np.zeros((t_steps, n, n))
    leaders = np.zeros(t_steps, dtype=np.int64)
    ties = np.zeros(t_steps, dtype=bool)
    for t in range(t_steps):
        m = sensitivity_matrix(actor_params, trajectory.observations[t],
                               scenario, step_index=t, ord=ord)
        d = dependency_values(m)
        sens[t] = m.entries
        deps[t] = d
        call = identify_hierarchy(d)
        leaders[t] = 0 if call.leader is None else call.leader
        ties[t] = call.tie
    return DependencyTrace(
        scenario_id=scenario.scenario_id,
        dependencies=deps,
        sensitivities=sens,
        leaders=leaders,
        ties=ties,
        seed=seed,
        checkpoint=checkpoint,
    )


@dataclass
class PhaseSegment:
    start: int  # first step of the phase
    end: int  # one past the last step (half-open)
    leader: int
    mean_dependency: np.ndarray  # (n,) mean D over the phase

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass
class HierarchyReport:
    scenario_id: str
    n_steps: int
    min_segment_length: int
    segments: list[PhaseSegment]
    pattern: str  # persistent_dominance | alternating_dominance
    tie_steps: list[int]
    seed: int | None = None
    checkpoint: str | None = None

    @property
    def leader_sequence(self) -> list[int]:
        return [s.leader for s in self.segments]


def _run_lengths(leaders: np.ndarray) -> list[list[int]]:
    """Run-length encode: [[start, end, leader], ...]."""
    runs: list[list[int]] = []
    for t, leader in enumerate(leaders):
        if runs and runs[-1][2] == leader:
            runs[-1][1] = t + 1
        else:
            runs.append([t, t + 1, int(leader)])
    return runs


def segment_phases(trace: DependencyTrace,
                   min_segment_length: int = 3) -> HierarchyReport:
    """Merge short leader runs into stable phases and classify the pattern.

    Runs shorter than min_segment_length are absorbed by the preceding
    segment; a short opening run (nothing precedes it) folds into the
    following one. A lone run is kept whatever its length.
    """
    if trace.n_steps == 0:
        raise ValueError("cannot segment an empty trace")
    if min_segment_length < 0:
        raise ValueError("min_segment_length must be nonnegative")
    runs = _run_lengths(trace.leaders)
    while len(runs) > 1 and runs[0][1] - runs[0][0] < min_segment_length:
        runs[1][0] = runs[0][0]
        runs.pop(0)
    merged = [runs[0]]
    for start, end, leader in runs[1:]:
        if end - start < min_segment_length or leader == merged[-1][2]:
            merged[-1][1] = end
        else:
            merged.append([start, end, leader])
    # coalesce neighbors left with one leader after the absorptions
    segments: list[list[int]] = []
    for start, end, leader in merged:
        if segments and segments[-1][2] == leader:
            segments[-1][1] = end
        else:
            segments.append([start, end, leader])

    out = [
        PhaseSegment(
            start=start, end=end, leader=leader,
            mean_dependency=trace.dependencies[start:end].mean(axis=0),
        )
        for start, end, leader in segments
    ]
    pattern = PATTERN_PERSISTENT if len(out) == 1 else PATTERN_ALTERNATING
    return HierarchyReport(
        scenario_id=trace.scenario_id,
        n_steps=trace.n_steps,
        min_segment_length=min_segment_length,
        segments=out,
        pattern=pattern,
        tie_steps=[int(t) for t in np.flatnonzero(trace.ties)],
        seed=trace.seed,
        checkpoint=trace.checkpoint,
    )


# ---------------------------------------------------------------------------
# File formats. Agent labels are 1-based in files, 0-based in the API.

def trace_columns(n_agents: int) -> list[str]:
    cols = ["step"]
    cols += [f"D_{i}" for i in range(1, n_agents + 1)]
    for i in range(1, n_agents + 1):
        for j in range(1, n_agents + 1):
            if i != j:
                cols.append(f"grad_{i}_{j}")
    return cols


def write_trace_csv(trace: DependencyTrace, path) -> None:
    n = trace.n_agents
    with open(path, "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(trace_columns(n))
        for t in range(trace.n_steps):
            row: list = [t]
            row += [repr(float(v)) for v in trace.dependencies[t]]
            for i in range(n):
                for j in range(n):
                    if i != j:
                        row.append(repr(float(trace.sensitivities[t, i, j])))
            writer.writerow(row)


def read_trace_csv(path) -> DependencyTrace:
    with open(path, newline="") as fp:
        reader = csv.DictReader(fp)
        fields = reader.fieldnames or []
        n = sum(1 for c in fields if c.startswith("D_"))
        if n < 2 or fields != trace_columns(n):
            raise ValueError(f"unrecognized trace columns: {fields}")
        deps, sens = [], []
        for raw in reader:
            deps.append([float(raw[f"D_{i}"]) for i in range(1, n + 1)])
            m = np.zeros((n, n))
            for i in range(n):
                for j in range(n):
                    if i != j:
                        m[i, j] = float(raw[f"grad_{i + 1}_{j + 1}"])
            sens.append(m)
    deps_arr = np.array(deps).reshape(-1, n)
    leaders = (np.argmax(deps_arr, axis=1) if deps_arr.size
               else np.zeros(0, dtype=np.int64))
    ties = np.zeros(deps_arr.shape[0], dtype=bool)
    for t in range(deps_arr.shape[0]):
        call = identify_hierarchy(deps_arr[t])
        ties[t] = call.tie
    return DependencyTrace(
        scenario_id="?",
        dependencies=deps_arr,
        sensitivities=(np.stack(sens) if sens else np.zeros((0, n, n))),
        leaders=leaders.astype(np.int64),
        ties=ties,
    )


def report_to_json_dict(report: HierarchyReport) -> dict:
    return {
        "scenario_id": report.scenario_id,
        "seed": report.seed,
        "checkpoint": report.checkpoint,
        "n_steps": report.n_steps,
        "min_segment_length": report.min_segment_length,
        "pattern": report.pattern,
        "segments": [
            {
                "start": s.start,
                "end": s.end,
                "leader": s.leader + 1,
                "mean_dependency": [float(v) for v in s.mean_dependency],
            }
            for s in report.segments
        ],
        "leader_sequence": [s.leader + 1 for s in report.segments],
        "tie_steps": report.tie_steps,
    }


def write_report_json(report: HierarchyReport, fp_or_path) -> None:
    doc = report_to_json_dict(report)
    if hasattr(fp_or_path, "write"):
        json.dump(doc, fp_or_path, indent=2)
    else:
        with open(fp_or_path, "w") as fp:
            json.dump(doc, fp, indent=2)
