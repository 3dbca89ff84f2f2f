"""Tabular Q-learning: epsilon-greedy sampling, replay, and the search loop."""

from __future__ import annotations

import json
import random
from concurrent.futures import FIRST_COMPLETED, Future, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Callable, Iterable

from .oracle import EvaluationError, RewardOracle
from .space import (
    ActionChoice,
    AgentState,
    SpaceConfig,
    Terminate,
    action_key,
    legal_actions,
    parse,
    parse_action_key,
    parse_state_key,
    replay_episode,
    serialize,
    spec_from_actions,
    start_context,
    state_key,
    transition,
)


class RewardRangeError(ValueError):
    """Reward (validation accuracy) outside [0, 1]."""


class ScheduleError(ValueError):
    """Malformed epsilon schedule."""


# ---------------------------------------------------------------------------
# Epsilon schedule
# ---------------------------------------------------------------------------

# Exploration schedule: (epsilon, unique models trained at that epsilon).
DEFAULT_SCHEDULE: tuple[tuple[float, int], ...] = (
    (1.0, 1500),
    (0.9, 100),
    (0.8, 100),
    (0.7, 100),
    (0.6, 150),
    (0.5, 150),
    (0.4, 150),
    (0.3, 150),
    (0.2, 150),
    (0.1, 150),
)


def check_schedule(schedule: Iterable[tuple[float, int]]) -> tuple[tuple[float, int], ...]:
    entries = tuple((float(e), int(m)) for e, m in schedule)
    if not entries:
        raise ScheduleError("schedule must be non-empty")
    for eps, count in entries:
        if not 0.0 <= eps <= 1.0:
            raise ScheduleError(f"epsilon {eps} outside [0, 1]")
        if count < 1:
            raise ScheduleError(f"model count {count} must be >= 1")
    if any(first <= second
           for (first, _), (second, _) in zip(entries, entries[1:])):
        raise ScheduleError("epsilons must be strictly decreasing")
    return entries


def parse_schedule(text: str) -> tuple[tuple[float, int], ...]:
    """Parse the CLI form ``"1.0:150,0.5:15,0.1:15"``."""
    entries = []
    for part in text.split(","):
        eps_text, _, count_text = part.strip().partition(":")
        try:
            entries.append((float(eps_text), int(count_text)))
        except ValueError as exc:
            raise ScheduleError(f"bad schedule entry {part!r}") from exc
    return check_schedule(entries)


def total_models(schedule: Iterable[tuple[float, int]]) -> int:
    return sum(count for _, count in schedule)


def epsilon_for(unique_count: int,
                schedule: Iterable[tuple[float, int]]) -> float | None:
    """Epsilon owning the given unique-model index; None once the schedule ends."""
    if unique_count < 0:
        raise ValueError("unique_count must be >= 0")
    cumulative = 0
    for eps, count in schedule:
        cumulative += count
        if unique_count < cumulative:
            return eps
    return None


# ---------------------------------------------------------------------------
# Configuration and core containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QConfig:
    alpha: float = 0.01
    gamma: float = 1.0
    q_init: float = 0.5
    replay_samples_per_model: int = 100
    schedule: tuple[tuple[float, int], ...] = DEFAULT_SCHEDULE
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must be in (0, 1]")
        if self.gamma != 1.0:
            raise ValueError("the discount factor is fixed to 1 in this artifact")
        if self.replay_samples_per_model < 0:
            raise ValueError("replay_samples_per_model must be >= 0")
        object.__setattr__(self, "schedule", check_schedule(self.schedule))

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "gamma": self.gamma,
            "q_init": self.q_init,
            "replay_samples_per_model": self.replay_samples_per_model,
            "schedule": [list(entry) for entry in self.schedule],
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "QConfig":
        kwargs = dict(data)
        if "schedule" in kwargs:
            kwargs["schedule"] = tuple(tuple(e) for e in kwargs["schedule"])
        return cls(**kwargs)


class QTable:
    """Sparse (state, action) -> value map; absent entries read as q_init."""

    def __init__(self, q_init: float = 0.5):
        self.q_init = q_init
        self.values: dict[tuple[AgentState, ActionChoice], float] = {}

    def get(self, state: AgentState, action: ActionChoice) -> float:
        return self.values.get((state, action), self.q_init)

    def set(self, state: AgentState, action: ActionChoice, value: float) -> None:
        self.values[(state, action)] = value

    def max_over(self, state: AgentState, actions: Iterable[ActionChoice]) -> float:
        return max(self.values.get((state, a), self.q_init) for a in actions)

    def __len__(self) -> int:
        return len(self.values)

    def to_snapshot(self) -> dict[str, float]:
        return {f"{state_key(s)}|{action_key(a)}": v
                for (s, a), v in self.values.items()}

    @classmethod
    def from_snapshot(cls, mapping: dict[str, float], q_init: float = 0.5) -> "QTable":
        table = cls(q_init)
        for key, value in mapping.items():
            state_text, _, action_text = key.rpartition("|")
            table.values[(parse_state_key(state_text),
                          parse_action_key(action_text))] = float(value)
        return table


@dataclass(frozen=True)
class Episode:
    """One sampled trajectory and its reward.

    ``states`` starts at the Start state and holds every state an action was
    taken from; ``actions`` has the same length and ends in a termination.
    """

    states: tuple[AgentState, ...]
    actions: tuple[ActionChoice, ...]
    accuracy: float

    def __post_init__(self):
        if not self.actions or len(self.states) != len(self.actions):
            raise ValueError("states and actions must pair up one to one")
        if not isinstance(self.actions[-1], Terminate):
            raise ValueError("the final action must be a termination")


@dataclass(frozen=True)
class ReplayEntry:
    accuracy: float
    first_iteration: int


# ---------------------------------------------------------------------------
# Sampling and updates
# ---------------------------------------------------------------------------

def sample_new_network(epsilon: float, q: QTable, rng: random.Random,
                       space: SpaceConfig) -> tuple[tuple[AgentState, ...],
                                                    tuple[ActionChoice, ...]]:
    """Sample an episode skeleton with the epsilon-greedy behavior policy.

    With probability epsilon the next action is uniform over the legal set;
    otherwise it is the Q-argmax with ties broken uniformly at random.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must be in [0, 1]")
    ctx = start_context(space)
    states = [ctx.last]
    actions: list[ActionChoice] = []
    while True:
        state = states[-1]
        candidates = legal_actions(state, space)
        if rng.random() > epsilon:
            best = max(q.values.get((state, a), q.q_init) for a in candidates)
            ties = [a for a in candidates
                    if q.values.get((state, a), q.q_init) == best]
            chosen = ties[0] if len(ties) == 1 else rng.choice(ties)
        else:
            chosen = candidates[rng.randrange(len(candidates))]
        actions.append(chosen)
        step = transition(ctx, chosen, space)
        if step is None:
            return tuple(states), tuple(actions)
        state, ctx = step
        states.append(state)


def update_q_values(q: QTable, states: tuple[AgentState, ...],
                    actions: tuple[ActionChoice, ...], accuracy: float,
                    space: SpaceConfig, qcfg: QConfig) -> QTable:
    """Apply the iterative value update along an episode, terminal pair first.

    The terminal transition is pulled toward the reward; earlier transitions
    toward the discounted best successor value, in temporally reversed order.
    """
    if not 0.0 <= accuracy <= 1.0:
        raise RewardRangeError(f"accuracy {accuracy} outside [0, 1]")
    alpha = qcfg.alpha
    last = (states[-1], actions[-1])
    q.values[last] = (1 - alpha) * q.values.get(last, q.q_init) + alpha * accuracy
    for i in range(len(states) - 2, -1, -1):
        successor = states[i + 1]
        best = q.max_over(successor, legal_actions(successor, space))
        pair = (states[i], actions[i])
        q.values[pair] = ((1 - alpha) * q.values.get(pair, q.q_init)
                          + alpha * qcfg.gamma * best)
    return q


# ---------------------------------------------------------------------------
# Search loop
# ---------------------------------------------------------------------------

_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


def _logical_timestamp(iteration: int) -> str:
    # Deterministic by construction: same-seed runs must produce
    # byte-identical event logs, so wall-clock time cannot appear here.
    return (_EPOCH + timedelta(seconds=iteration)).strftime("%Y-%m-%dT%H:%M:%SZ")


def make_record(iteration: int, epsilon: float, arch: str,
                accuracy: float | None, cached: bool, status: str) -> dict:
    return {
        "iteration": iteration,
        "epsilon": epsilon,
        "arch": arch,
        "accuracy": accuracy,
        "cached": cached,
        "status": status,
        "timestamp": _logical_timestamp(iteration),
    }


@dataclass
class SearchResult:
    qtable: QTable
    dictionary: dict[str, ReplayEntry]
    records: list[dict]
    replay_memory: list[Episode]

    @property
    def unique_models(self) -> int:
        return len(self.dictionary)

    def best(self) -> tuple[str, float] | None:
        if not self.dictionary:
            return None
        arch = max(self.dictionary, key=lambda a: self.dictionary[a].accuracy)
        return arch, self.dictionary[arch].accuracy


@dataclass
class ResumeState:
    """Search state reconstructed from an event log plus a Q snapshot."""

    qtable: QTable
    dictionary: dict[str, ReplayEntry] = field(default_factory=dict)
    replay_memory: list[Episode] = field(default_factory=list)
    records: list[dict] = field(default_factory=list)
    next_iteration: int = 0


class _Coordinator:
    """Owns all mutable search state; oracle calls may run outside of it."""

    def __init__(self, space: SpaceConfig, qcfg: QConfig, oracle: RewardOracle,
                 sink: Callable[[dict], None] | None, resume: ResumeState | None,
                 stale_limit: int):
        self.space = space
        self.qcfg = qcfg
        self.oracle = oracle
        self.sink = sink
        self.stale_limit = stale_limit
        if resume is not None:
            self.qtable = resume.qtable
            self.dictionary = dict(resume.dictionary)
            self.replay_memory = list(resume.replay_memory)
            self.records = list(resume.records)
            self.iteration = resume.next_iteration
            self.rng = random.Random(f"{qcfg.seed}:resume:{resume.next_iteration}") \
                if resume.next_iteration else random.Random(qcfg.seed)
        else:
            self.qtable = QTable(qcfg.q_init)
            self.dictionary = {}
            self.replay_memory = []
            self.records = []
            self.iteration = 0
            self.rng = random.Random(qcfg.seed)
        self.stale = 0

    def epsilon(self) -> float | None:
        return epsilon_for(len(self.dictionary), self.qcfg.schedule)

    def sample(self, epsilon: float) -> tuple[tuple[AgentState, ...],
                                              tuple[ActionChoice, ...], str]:
        states, actions = sample_new_network(epsilon, self.qtable, self.rng, self.space)
        arch = serialize(spec_from_actions(actions, self.space))
        return states, actions, arch

    def learn(self, episode: Episode) -> None:
        self.replay_memory.append(episode)
        update_q_values(self.qtable, episode.states, episode.actions,
                        episode.accuracy, self.space, self.qcfg)
        for _ in range(self.qcfg.replay_samples_per_model):
            sampled = self.replay_memory[self.rng.randrange(len(self.replay_memory))]
            update_q_values(self.qtable, sampled.states, sampled.actions,
                            sampled.accuracy, self.space, self.qcfg)

    def emit(self, epsilon: float, arch: str, accuracy: float | None,
             cached: bool, status: str) -> None:
        record = make_record(self.iteration, epsilon, arch, accuracy, cached, status)
        self.records.append(record)
        if self.sink is not None:
            self.sink(record)
        self.iteration += 1

    def apply_new(self, epsilon: float, arch: str,
                  states: tuple[AgentState, ...],
                  actions: tuple[ActionChoice, ...], accuracy: float) -> None:
        self.dictionary[arch] = ReplayEntry(accuracy, self.iteration)
        self.learn(Episode(states, actions, accuracy))
        self.emit(epsilon, arch, accuracy, cached=False, status="ok")
        self.stale = 0

    def apply_cached(self, epsilon: float, arch: str,
                     states: tuple[AgentState, ...],
                     actions: tuple[ActionChoice, ...]) -> None:
        accuracy = self.dictionary[arch].accuracy
        self.learn(Episode(states, actions, accuracy))
        self.emit(epsilon, arch, accuracy, cached=True, status="ok")
        self.stale += 1
        if self.stale > self.stale_limit:
            raise RuntimeError(
                f"{self.stale} consecutive cache hits; the space is likely "
                "smaller than the schedule's unique-model quota")

    def apply_failed(self, epsilon: float, arch: str) -> None:
        # Failed evaluations are logged but never update Q, the dictionary,
        # replay memory, or the unique-model count.
        self.emit(epsilon, arch, None, cached=False, status="failed")

    def result(self) -> SearchResult:
        return SearchResult(self.qtable, self.dictionary, self.records,
                            self.replay_memory)


def run_search(space: SpaceConfig, qcfg: QConfig, oracle: RewardOracle,
               sink: Callable[[dict], None] | None = None, workers: int = 1,
               resume: ResumeState | None = None,
               stale_limit: int = 100_000) -> SearchResult:
    """Run the schedule to completion and return the search state.

    Architectures already in the replay dictionary are not re-evaluated: the
    cached accuracy is presented to the agent and the episode still feeds
    replay memory and Q-updates, but it does not count toward the schedule's
    unique-model quota. With ``workers`` > 1 up to that many evaluations run
    concurrently; all bookkeeping stays on the coordinator thread, so the
    sequential mode (workers=1) is the deterministic reference.
    """
    coord = _Coordinator(space, qcfg, oracle, sink, resume, stale_limit)
    if workers <= 1:
        _run_sequential(coord)
    else:
        _run_concurrent(coord, workers)
    return coord.result()


def _run_sequential(coord: _Coordinator) -> None:
    while (epsilon := coord.epsilon()) is not None:
        states, actions, arch = coord.sample(epsilon)
        if arch in coord.dictionary:
            coord.apply_cached(epsilon, arch, states, actions)
            continue
        try:
            accuracy = coord.oracle.evaluate(parse(arch))
        except EvaluationError:
            coord.apply_failed(epsilon, arch)
            continue
        coord.apply_new(epsilon, arch, states, actions, accuracy)


def _run_concurrent(coord: _Coordinator, workers: int) -> None:
    quota = total_models(coord.qcfg.schedule)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        in_flight: dict[Future, tuple[float, str, tuple, tuple]] = {}
        waiting: dict[str, list[tuple[float, tuple, tuple]]] = {}
        while True:
            # Keep the pipeline full while quota remains for new models.
            # Duplicates of an in-flight architecture are parked so the
            # oracle is still invoked exactly once per unique architecture.
            while len(in_flight) < workers:
                epsilon = coord.epsilon()
                if epsilon is None or len(coord.dictionary) + len(in_flight) >= quota:
                    break
                states, actions, arch = coord.sample(epsilon)
                if arch in coord.dictionary:
                    coord.apply_cached(epsilon, arch, states, actions)
                elif any(arch == meta[1] for meta in in_flight.values()):
                    waiting.setdefault(arch, []).append((epsilon, states, actions))
                else:
                    future = pool.submit(coord.oracle.evaluate, parse(arch))
                    in_flight[future] = (epsilon, arch, states, actions)
            if not in_flight:
                break
            done, _ = wait(in_flight, return_when=FIRST_COMPLETED)
            for future in done:
                epsilon, arch, states, actions = in_flight.pop(future)
                try:
                    accuracy = future.result()
                except EvaluationError:
                    coord.apply_failed(epsilon, arch)
                    for dup_eps, _, _ in waiting.pop(arch, []):
                        coord.apply_failed(dup_eps, arch)
                    continue
                coord.apply_new(epsilon, arch, states, actions, accuracy)
                for dup_eps, dup_states, dup_actions in waiting.pop(arch, []):
                    coord.apply_cached(dup_eps, arch, dup_states, dup_actions)


# ---------------------------------------------------------------------------
# Persistence: event log, Q snapshot, dictionary dump
# ---------------------------------------------------------------------------

def encode_record(record: dict) -> str:
    ordered = {key: record[key] for key in
               ("iteration", "epsilon", "arch", "accuracy", "cached",
                "status", "timestamp")}
    return json.dumps(ordered)


def write_events(path: str | Path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(encode_record(record) + "\n")


def load_events(path: str | Path) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records


def save_snapshot(qtable: QTable, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(qtable.to_snapshot(), handle, sort_keys=True, indent=0)
        handle.write("\n")


def load_snapshot(path: str | Path, q_init: float = 0.5) -> QTable:
    with open(path, "r", encoding="utf-8") as handle:
        return QTable.from_snapshot(json.load(handle), q_init)


def save_dictionary(dictionary: dict[str, ReplayEntry], path: str | Path) -> None:
    payload = {arch: {"accuracy": entry.accuracy,
                      "first_iteration": entry.first_iteration}
               for arch, entry in dictionary.items()}
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, sort_keys=True, indent=0)
        handle.write("\n")


def rebuild_from_events(records: list[dict], qtable: QTable,
                        space: SpaceConfig) -> ResumeState:
    """Reconstruct dictionary, unique counts, and replay memory from a log."""
    state = ResumeState(qtable=qtable)
    for record in records:
        state.records.append(record)
        state.next_iteration = max(state.next_iteration, record["iteration"] + 1)
        if record["status"] != "ok":
            continue
        arch = record["arch"]
        states, actions = replay_episode(parse(arch), space)
        state.replay_memory.append(Episode(states, actions, record["accuracy"]))
        if not record["cached"] and arch not in state.dictionary:
            state.dictionary[arch] = ReplayEntry(record["accuracy"],
                                                 record["iteration"])
    return state
