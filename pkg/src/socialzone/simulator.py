"""Closed-loop scenario engine: predict, control, step, log.

Scenarios are declarative (robot start, goal, humans, walls, zone
source, controller config); the engine runs the receding-horizon
controller until the goal is reached at near-zero speed or the duration
budget runs out, logging every step. Four built-in scenarios ship with
the package: passing a stationary person head-on, meeting a walker in a
narrow corridor, and two mirrored encounters at a gap in a wall.

Built-in geometry is a reconstruction: the corridor and gap dimensions
are pinned so the supplied zone model forces the documented behavior
(slow-down, yielding), not taken from any measured floor plan.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .controller import (
    STATUS_OPTIMAL,
    MpcConfig,
    OcpSolution,
    build_step_barriers,
    control_step,
)
from .dynamics import HumanState, RobotState, step_robot
from .geometry import Segment, barrier_value
from .zonelearn import SocialZone, ZoneModel

logger = logging.getLogger(__name__)

SCENARIO_SCHEMA = "socialzone.scenario/1"
SUMMARY_SCHEMA = "socialzone.simlog-summary/1"

BUILTIN_NAMES = ("s1", "s2", "s3a", "s3b")

__all__ = [
    "ScenarioConfig",
    "ScenarioError",
    "SimLog",
    "run_scenario",
    "builtin_scenarios",
    "load_scenario",
    "default_zone_model",
    "check_cbf_condition",
]


class ScenarioError(ValueError):
    """Scenario rejected before the loop (unsafe start, bad schema)."""


@dataclass(eq=False)
class ScenarioConfig:
    """Declarative description of one closed-loop run."""

    name: str
    robot_start: RobotState
    goal: np.ndarray
    humans: list[HumanState] = field(default_factory=list)
    walls: list[Segment] = field(default_factory=list)
    zone_model: ZoneModel | None = None
    mpc: MpcConfig = field(default_factory=MpcConfig)
    duration: float = 30.0
    termination_radius: float = 0.1
    stop_speed: float = 0.05
    notes: str = ""

    def __post_init__(self):
        self.goal = np.asarray(self.goal, float).reshape(2)
        if self.duration <= 0:
            raise ValueError("duration must be positive")

    def barrier_names(self) -> list[str]:
        return [f"human_{i}" for i in range(len(self.humans))] + [
            f"wall_{j}" for j in range(len(self.walls))
        ]

    def to_dict(self) -> dict:
        doc = {
            "schema": SCENARIO_SCHEMA,
            "name": self.name,
            "robot": {"start": self.robot_start.as_vector().tolist()},
            "goal": self.goal.tolist(),
            "humans": [
                {
                    "start": h.position.tolist(),
                    "velocity": h.velocity.tolist(),
                    "facing_rad": h.facing,
                }
                for h in self.humans
            ],
            "walls": [
                [w.endpoint_a.tolist(), w.endpoint_b.tolist()] for w in self.walls
            ],
            "zone_model": None,
            "mpc": self.mpc.to_dict(),
            "duration_s": self.duration,
            "termination_radius_m": self.termination_radius,
            "stop_speed_m_s": self.stop_speed,
            "notes": self.notes,
        }
        if self.zone_model is not None:
            doc["zone_model"] = "embedded"
            doc["zone_model_embedded"] = {
                "zones": [
                    z.to_dict(s) for s, z in zip(self.zone_model.speeds, self.zone_model.zones)
                ],
                "provenance": self.zone_model.provenance,
            }
        return doc

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _scenario_from_dict(raw: dict, base_dir: Path | None = None) -> ScenarioConfig:
    if raw.get("schema") != SCENARIO_SCHEMA:
        raise ScenarioError(f"not a {SCENARIO_SCHEMA} document")
    try:
        start = np.asarray(raw["robot"]["start"], float).reshape(4)
        humans = [
            HumanState(
                position=np.asarray(h["start"], float),
                velocity=np.asarray(h["velocity"], float),
                facing=h.get("facing_rad"),
            )
            for h in raw.get("humans", [])
        ]
        walls = [Segment(np.asarray(w[0], float), np.asarray(w[1], float))
                 for w in raw.get("walls", [])]
        mpc = MpcConfig.from_dict(raw.get("mpc", {}))
        cfg = ScenarioConfig(
            name=str(raw.get("name", "scenario")),
            robot_start=RobotState.from_vector(start),
            goal=np.asarray(raw["goal"], float),
            humans=humans,
            walls=walls,
            mpc=mpc,
            duration=float(raw.get("duration_s", 30.0)),
            termination_radius=float(raw.get("termination_radius_m", 0.1)),
            stop_speed=float(raw.get("stop_speed_m_s", 0.05)),
            notes=str(raw.get("notes", "")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"malformed scenario: {exc}") from exc
    zone_ref = raw.get("zone_model", "builtin:default")
    inline = raw.get("inline_zone")
    embedded = raw.get("zone_model_embedded")
    if inline is not None:
        zone = SocialZone(
            np.asarray(inline["center"], float), inline["a"], inline["b"],
            inline.get("theta_rad", 0.0),
        )
        cfg.zone_model = ZoneModel(
            np.asarray([float(inline.get("speed_m_s", cfg.mpc.zone_query_speed))]),
            (zone,),
            provenance={"source": "inline scenario zone"},
        )
    elif embedded is not None:
        entries = sorted(embedded["zones"], key=lambda e: e["speed_m_s"])
        cfg.zone_model = ZoneModel(
            np.asarray([e["speed_m_s"] for e in entries]),
            tuple(
                SocialZone(np.asarray(e["center"], float), e["a"], e["b"], e["theta_rad"])
                for e in entries
            ),
            provenance=embedded.get("provenance", {}),
        )
    elif zone_ref == "builtin:default":
        cfg.zone_model = default_zone_model()
    elif zone_ref:
        path = Path(zone_ref)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        cfg.zone_model = ZoneModel.load(path)
    return cfg


def load_scenario(path) -> ScenarioConfig:
    """Load a scenario JSON file; relative zone paths resolve next to it."""
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    return _scenario_from_dict(raw, base_dir=path.parent)


def default_zone_model() -> ZoneModel:
    """Zone model shipped with the package (reconstructed defaults)."""
    with resources.files("socialzone.data").joinpath("default_zones.json").open(
        "r", encoding="utf-8"
    ) as fh:
        payload = json.load(fh)
    entries = sorted(payload["zones"], key=lambda e: e["speed_m_s"])
    zones = tuple(
        SocialZone(np.asarray(e["center"], float), e["a"], e["b"], e["theta_rad"])
        for e in entries
    )
    return ZoneModel(
        np.asarray([e["speed_m_s"] for e in entries]),
        zones,
        provenance=payload.get("provenance", {}),
        warnings=tuple(payload.get("warnings", [])),
    )


def builtin_scenarios() -> dict[str, ScenarioConfig]:
    """The four shipped scenarios, loaded from packaged config files."""
    out: dict[str, ScenarioConfig] = {}
    for name in BUILTIN_NAMES:
        with resources.files("socialzone.data.scenarios").joinpath(f"{name}.json").open(
            "r", encoding="utf-8"
        ) as fh:
            raw = json.load(fh)
        out[name] = _scenario_from_dict(raw)
    return out


@dataclass(eq=False)
class SimLog:
    """Per-step record of one closed-loop run plus a derived summary."""

    scenario: str
    barrier_names: list[str]
    times: np.ndarray
    states: np.ndarray          # (n, 4)
    controls: np.ndarray        # (n, 2)
    h_values: np.ndarray        # (n, n_barriers)
    statuses: list[str]
    solve_ms: np.ndarray
    final_state: np.ndarray     # (4,), state after the last logged control
    goal: np.ndarray
    goal_reach_time: float | None
    dt: float

    def summary(self) -> dict:
        speeds = np.linalg.norm(self.states[:, 2:], axis=1)
        deltas = np.diff(self.states[:, :2], axis=0)
        path_length = float(np.sum(np.linalg.norm(deltas, axis=1)))
        min_h = {
            name: float(self.h_values[:, j].min())
            for j, name in enumerate(self.barrier_names)
        }
        status_counts: dict[str, int] = {}
        for s in self.statuses:
            status_counts[s] = status_counts.get(s, 0) + 1
        return {
            "schema": SUMMARY_SCHEMA,
            "scenario": self.scenario,
            "steps": int(len(self.times)),
            "dt_s": self.dt,
            "barriers": list(self.barrier_names),
            "min_h": min_h,
            "min_h_overall": float(self.h_values.min()) if self.h_values.size else None,
            "goal_reach_time_s": self.goal_reach_time,
            "min_speed_m_s": float(speeds.min()) if speeds.size else None,
            "max_speed_m_s": float(speeds.max()) if speeds.size else None,
            "path_length_m": path_length,
            "solver_status_counts": status_counts,
        }

    def write_csv(self, path) -> None:
        header = ["t", "x", "y", "vx", "vy", "ux", "uy"]
        header += [f"h_{j}" for j in range(len(self.barrier_names))]
        header += ["status", "solve_ms"]
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(len(self.times)):
                row = [f"{self.times[i]:.12g}"]
                row += [f"{v:.12g}" for v in self.states[i]]
                row += [f"{v:.12g}" for v in self.controls[i]]
                row += [f"{v:.12g}" for v in self.h_values[i]]
                row.append(self.statuses[i])
                row.append(f"{self.solve_ms[i]:.3f}")
                writer.writerow(row)

    def write_summary(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read_csv(cls, path, scenario: str = "", dt: float | None = None) -> "SimLog":
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            h_cols = [i for i, name in enumerate(header) if name.startswith("h_")]
            rows = list(reader)
        if not rows:
            raise ValueError(f"{path}: empty simulation log")
        times = np.array([float(r[0]) for r in rows])
        states = np.array([[float(v) for v in r[1:5]] for r in rows])
        controls = np.array([[float(v) for v in r[5:7]] for r in rows])
        h_values = np.array([[float(r[i]) for i in h_cols] for r in rows]).reshape(len(rows), -1)
        statuses = [r[7 + len(h_cols)] for r in rows]
        solve_ms = np.array([float(r[8 + len(h_cols)]) for r in rows])
        if dt is None:
            dt = float(times[1] - times[0]) if len(times) > 1 else 0.1
        return cls(
            scenario=scenario or Path(path).stem,
            barrier_names=[header[i] for i in h_cols],
            times=times,
            states=states,
            controls=controls,
            h_values=h_values,
            statuses=statuses,
            solve_ms=solve_ms,
            final_state=states[-1].copy(),
            goal=np.full(2, np.nan),
            goal_reach_time=None,
            dt=dt,
        )


def _humans_at(config: ScenarioConfig, step: int) -> list[HumanState]:
    # One multiply per step (not accumulation) keeps replays bit-exact.
    t = step * config.mpc.dt
    return [
        HumanState(h.position + t * h.velocity, h.velocity, h.facing)
        for h in config.humans
    ]


def _h_row(config: ScenarioConfig, state: RobotState, step: int) -> np.ndarray:
    bars = build_step_barriers(
        _humans_at(config, step), config.walls, config.zone_model, config.mpc, 0
    )[0]
    return np.array([barrier_value(state.position, b) for b in bars])


def run_scenario(config: ScenarioConfig) -> SimLog:
    """Run the closed loop; raises ScenarioError if the start is unsafe."""
    cfg = config.mpc
    if config.humans or config.walls:
        h0 = _h_row(config, config.robot_start, 0)
        if (h0 <= 0.0).any():
            raise ScenarioError(
                f"scenario '{config.name}' starts unsafe: min h = {h0.min():.4f}"
            )
    n_barriers = len(config.humans) + len(config.walls)
    max_steps = int(round(config.duration / cfg.dt))
    state = config.robot_start
    warm: OcpSolution | None = None
    times, states, controls, h_rows, statuses, solve_ms = [], [], [], [], [], []
    goal_reach_time = None
    for step in range(max_steps):
        t = step * cfg.dt
        dist_goal = float(np.linalg.norm(state.position - config.goal))
        if dist_goal <= config.termination_radius and state.speed < config.stop_speed:
            goal_reach_time = t
            break
        humans_now = _humans_at(config, step)
        u0, sol = control_step(
            state, config.goal, humans_now, config.walls, config.zone_model, cfg,
            warm_start=warm,
        )
        warm = sol
        times.append(t)
        states.append(state.as_vector())
        controls.append(u0)
        h_rows.append(
            _h_row(config, state, step) if n_barriers else np.empty(0)
        )
        statuses.append(sol.status)
        solve_ms.append(1000.0 * sol.solve_time)
        state = step_robot(state, u0, cfg.dt)
    else:
        logger.warning("scenario '%s': duration %.1f s exceeded before goal",
                       config.name, config.duration)
    return SimLog(
        scenario=config.name,
        barrier_names=config.barrier_names(),
        times=np.asarray(times),
        states=np.asarray(states).reshape(len(times), 4),
        controls=np.asarray(controls).reshape(len(times), 2),
        h_values=np.asarray(h_rows, dtype=float).reshape(len(times), n_barriers),
        statuses=statuses,
        solve_ms=np.asarray(solve_ms),
        final_state=state.as_vector(),
        goal=config.goal.copy(),
        goal_reach_time=goal_reach_time,
        dt=cfg.dt,
    )


def check_cbf_condition(log: SimLog, config: ScenarioConfig) -> float:
    """Smallest decay-inequality margin across optimal steps of a log.

    For consecutive logged states with an optimal solve at step k,
    evaluates h_{k+1}(x_{k+1}) - (1 - gamma) h_k(x_k) per barrier, with
    each h using the human positions of its own step. Nonnegative (up to
    solver tolerance) when the controller honored the constraints.
    """
    gamma = config.mpc.gamma
    worst = np.inf
    n = len(log.times)
    for k in range(n):
        if log.statuses[k] != STATUS_OPTIMAL:
            continue
        x_next = log.states[k + 1] if k + 1 < n else log.final_state
        h_k = _h_row(config, RobotState.from_vector(log.states[k]), k)
        h_k1 = _h_row(config, RobotState.from_vector(x_next), k + 1)
        if h_k.size:
            worst = min(worst, float((h_k1 - (1.0 - gamma) * h_k).min()))
    return worst
