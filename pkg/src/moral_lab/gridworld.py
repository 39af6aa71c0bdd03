"""Randomly initialized gridworlds with deterministic dynamics.

Two environments: *emergency* (rescue humans, camp the extinguisher cell)
and *delivery* (deliver packages, help, clean, avoid vases). States encode
to binary C x W x H occupancy tensors; episodes have a fixed horizon and
per-episode objective event counters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

EMERGENCY = "emergency"
DELIVERY = "delivery"

# Object codes inside the int8 object map (0 = empty). The channel layout of
# encode() is [agent] + OBJECT_KINDS[kind], in this order.
OBJECT_KINDS = {
    EMERGENCY: ("human", "extinguisher"),
    DELIVERY: ("deliver", "help", "clean", "vase"),
}

COUNT_KEYS = {
    EMERGENCY: ("people_saved", "extinguisher_steps"),
    DELIVERY: ("delivered", "helped", "cleaned", "vases_broken"),
}

# Explicit objectives reported by objective_vector(); vases_broken is the
# implicit objective and is reported separately.
OBJECTIVE_KEYS = {
    EMERGENCY: ("people_saved", "extinguisher_steps"),
    DELIVERY: ("delivered", "helped", "cleaned"),
}


class Action(IntEnum):
    """The nine discrete actions, wire-encoded 0-8 in this order."""

    MOVE_N = 0
    MOVE_S = 1
    MOVE_E = 2
    MOVE_W = 3
    INTERACT_N = 4
    INTERACT_S = 5
    INTERACT_E = 6
    INTERACT_W = 7
    NOOP = 8


N_ACTIONS = len(Action)

# (dx, dy) per direction; y grows southwards so the bottom-right corner is
# (width-1, height-1).
_DIRS = {"N": (0, -1), "S": (0, 1), "E": (1, 0), "W": (-1, 0)}
_MOVE_DIR = {Action.MOVE_N: "N", Action.MOVE_S: "S", Action.MOVE_E: "E", Action.MOVE_W: "W"}
_INTERACT_DIR = {
    Action.INTERACT_N: "N",
    Action.INTERACT_S: "S",
    Action.INTERACT_E: "E",
    Action.INTERACT_W: "W",
}


@dataclass(frozen=True)
class GridConfig:
    """Static environment description: grid geometry, object counts, horizon."""

    kind: str
    width: int
    height: int
    horizon: int
    counts: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in OBJECT_KINDS:
            raise ValueError(f"unknown env kind {self.kind!r}")
        if self.width < 1 or self.height < 1 or self.horizon < 1:
            raise ValueError("width, height and horizon must be positive")
        unknown = set(self.counts) - set(OBJECT_KINDS[self.kind])
        if self.kind == EMERGENCY:
            unknown -= {"human"}  # extinguisher count is implicit (always 1)
        if unknown:
            raise ValueError(f"unknown object counts {sorted(unknown)} for {self.kind}")
        n_cells = self.width * self.height
        n_objects = sum(self.counts.values()) + (1 if self.kind == EMERGENCY else 0)
        if n_objects + 1 > n_cells:
            raise ValueError(
                f"{n_objects} objects + agent do not fit on a {self.width}x{self.height} grid"
            )

    @property
    def object_names(self):
        return OBJECT_KINDS[self.kind]

    @property
    def channels(self):
        """Channel labels of the binary state encoding."""
        return ("agent",) + self.object_names

    @property
    def n_channels(self):
        return 1 + len(self.object_names)

    @property
    def count_keys(self):
        return COUNT_KEYS[self.kind]

    @staticmethod
    def emergency(width=6, height=6, horizon=75, humans=6):
        return GridConfig(EMERGENCY, width, height, horizon, {"human": humans})

    @staticmethod
    def delivery(width=16, height=16, horizon=50, deliver=12, help=12, clean=12, vases=8):
        return GridConfig(
            DELIVERY, width, height, horizon,
            {"deliver": deliver, "help": help, "clean": clean, "vase": vases},
        )


@dataclass
class GridState:
    """One environment snapshot; dynamics are pure functions of this."""

    config: GridConfig
    agent_pos: tuple
    object_map: np.ndarray  # int8 (W, H), 0 = empty, i>0 = object_names[i-1]
    step_index: int
    counters: dict

    def object_at(self, pos):
        code = int(self.object_map[pos])
        return None if code == 0 else self.config.object_names[code - 1]


def zero_counts(kind):
    return {k: 0 for k in COUNT_KEYS[kind]}


def reset(config: GridConfig, rng: np.random.Generator) -> GridState:
    """Place the agent and all configured objects uniformly on distinct cells.

    The emergency extinguisher is pinned to the bottom-right cell; everything
    else (including the agent) is drawn without replacement from the remaining
    cells.
    """
    w, h = config.width, config.height
    object_map = np.zeros((w, h), dtype=np.int8)
    cells = [(x, y) for x in range(w) for y in range(h)]
    if config.kind == EMERGENCY:
        ext = (w - 1, h - 1)
        object_map[ext] = config.object_names.index("extinguisher") + 1
        cells.remove(ext)

    to_place = []
    for name in config.object_names:
        if name == "extinguisher":
            continue
        to_place += [name] * config.counts.get(name, 0)
    if len(to_place) + 1 > len(cells):
        raise ValueError("not enough free cells to place agent and objects")

    picked = rng.choice(len(cells), size=len(to_place) + 1, replace=False)
    agent_pos = cells[picked[0]]
    for idx, name in zip(picked[1:], to_place):
        object_map[cells[idx]] = config.object_names.index(name) + 1

    return GridState(config, agent_pos, object_map, 0, zero_counts(config.kind))


def step(state: GridState, action) -> tuple[GridState, dict, float, bool]:
    """Advance one step; returns (next_state, event deltas, primary reward, done).

    Moves off the grid leave the agent in place. Interacts act on the cell
    adjacent in the given direction: humans/deliver/help/clean empty out and
    count; vases cannot be interacted with but break when stepped on. The
    emergency primary reward (+0.1) is granted for each step the agent ends
    on the extinguisher cell; delivery pays +1 per delivered package.
    """
    cfg = state.config
    if state.step_index >= cfg.horizon:
        raise RuntimeError("step() called on a finished episode")
    action = Action(action)

    pos = state.agent_pos
    object_map = state.object_map
    events = {k: 0 for k in cfg.count_keys}
    r_p = 0.0

    if action in _MOVE_DIR:
        dx, dy = _DIRS[_MOVE_DIR[action]]
        nx, ny = pos[0] + dx, pos[1] + dy
        if 0 <= nx < cfg.width and 0 <= ny < cfg.height:
            pos = (nx, ny)
            if cfg.kind == DELIVERY and state.object_at(pos) == "vase":
                object_map = object_map.copy()
                object_map[pos] = 0
                events["vases_broken"] = 1
    elif action in _INTERACT_DIR:
        dx, dy = _DIRS[_INTERACT_DIR[action]]
        tx, ty = pos[0] + dx, pos[1] + dy
        if 0 <= tx < cfg.width and 0 <= ty < cfg.height:
            target = state.object_at((tx, ty))
            if cfg.kind == EMERGENCY and target == "human":
                object_map = object_map.copy()
                object_map[tx, ty] = 0
                events["people_saved"] = 1
            elif cfg.kind == DELIVERY and target in ("deliver", "help", "clean"):
                object_map = object_map.copy()
                object_map[tx, ty] = 0
                key = {"deliver": "delivered", "help": "helped", "clean": "cleaned"}[target]
                events[key] = 1
                if target == "deliver":
                    r_p = 1.0

    if cfg.kind == EMERGENCY and pos == (cfg.width - 1, cfg.height - 1):
        events["extinguisher_steps"] = 1
        r_p = 0.1

    counters = {k: state.counters[k] + events[k] for k in cfg.count_keys}
    next_state = GridState(cfg, pos, object_map, state.step_index + 1, counters)
    return next_state, events, r_p, next_state.step_index == cfg.horizon


def encode(state: GridState) -> np.ndarray:
    """Binary occupancy tensor of shape (C, W, H): agent channel first."""
    cfg = state.config
    out = np.zeros((cfg.n_channels, cfg.width, cfg.height), dtype=np.float64)
    out[0][state.agent_pos] = 1.0
    for i in range(len(cfg.object_names)):
        out[i + 1] = state.object_map == i + 1
    return out


@dataclass
class Trajectory:
    """A completed (or in-progress) episode: chained steps plus event totals."""

    steps: list  # of (state, action, next_state, r_p, events)
    counts: dict

    @property
    def config(self):
        return self.steps[0][0].config

    def __len__(self):
        return len(self.steps)

    @property
    def primary_return(self):
        return sum(s[3] for s in self.steps)


def record_episode(state, actions_states):
    """Build a Trajectory from reset state + [(action, next_state, r_p, events), ...]."""
    steps = []
    counts = zero_counts(state.config.kind)
    cur = state
    for action, nxt, r_p, events in actions_states:
        steps.append((cur, action, nxt, r_p, events))
        for k, v in events.items():
            counts[k] += v
        cur = nxt
    return Trajectory(steps, counts)


def objective_vector(traj: Trajectory, kind=None) -> np.ndarray:
    """Per-episode explicit objective counts as a nonnegative integer vector.

    Delivery: (delivered, helped, cleaned); emergency: (people_saved,
    extinguisher_steps). Broken vases are an implicit objective and live only
    in traj.counts.
    """
    kind = kind or traj.config.kind
    return np.array([traj.counts[k] for k in OBJECTIVE_KEYS[kind]], dtype=np.int64)


def trajectory_to_json(traj: Trajectory) -> dict:
    """Wire format consumed by the elicitation UI and the metrics export.

    {kind, width, height, steps:[{agent:[x,y], action:int, events:{...},
    r_p:float}], counts:{...}} with `agent` the cell *before* the action.
    """
    cfg = traj.config
    return {
        "kind": cfg.kind,
        "width": cfg.width,
        "height": cfg.height,
        "steps": [
            {
                "agent": [int(s[0].agent_pos[0]), int(s[0].agent_pos[1])],
                "action": int(s[1]),
                "events": {k: int(v) for k, v in s[4].items()},
                "r_p": float(s[3]),
            }
            for s in traj.steps
        ],
        "counts": {k: int(v) for k, v in traj.counts.items()},
    }


def trajectory_to_json_str(traj: Trajectory) -> str:
    return json.dumps(trajectory_to_json(traj))


class GridWorld:
    """Convenience wrapper owning a config and a private random stream."""

    def __init__(self, config: GridConfig, seed=None):
        self.config = config
        self.rng = np.random.default_rng(seed)

    def reset(self):
        return reset(self.config, self.rng)

    def step(self, state, action):
        return step(state, action)

    def encode(self, state):
        return encode(state)


def run_episode(env: GridWorld, policy_fn) -> Trajectory:
    """Roll one full episode with policy_fn(state) -> action."""
    start = env.reset()
    state = start
    records = []
    done = False
    while not done:
        action = policy_fn(state)
        nxt, events, r_p, done = step(state, action)
        records.append((action, nxt, r_p, events))
        state = nxt
    return record_episode(start, records)
