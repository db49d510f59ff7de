"""Scenario ingestion, experiment orchestration, and trace persistence.

Scenario files are plain JSON: mode matrices as nested row-major arrays,
times either in integer steps or in seconds (``*_s`` keys, converted with
the sampling time by floor rounding and echoed back in the report).  Two
builtin scenarios reproduce the flight-control and engine fault case
studies; both are regular configs and accept the same overrides.
"""

from __future__ import annotations

import enum
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data_window import min_window_length, pe_sample_count
from .dd_lqr import (
    ConvergenceError,
    EqualityHandling,
    InstabilityError,
    SolverOptions,
    SolverStatus,
    closed_loop_h2_cost,
    dare_lqr,
    solve_dd_lqr,
)
from .excitation import ExcitationPolicy, PolicyMode
from .stability import ParameterError, compute_stability_constants
from .switched_plant import (
    ActuatorOutage,
    AdditiveStateFault,
    FaultEvent,
    LinearMode,
    SimulationError,
    SwitchedPlant,
    SwitchingSchedule,
    TraceRecord,
    generate_dwell_schedule,
    run_online_loop,
    seed_window_backward,
    seed_window_forward,
)


class ErrorCode(enum.IntEnum):
    """Process exit codes; one per distinct failure class."""

    OK = 0
    UNEXPECTED = 1
    SCHEMA = 2
    DIMENSION = 3
    WINDOW_LENGTH = 4
    UNCONTROLLABLE = 5
    SIMULATION = 6
    INVARIANT = 7
    PARAMETER = 8
    DISCREPANCY = 9


class ScenarioError(Exception):
    def __init__(self, message: str, code: ErrorCode):
        super().__init__(message)
        self.code = code


def _steps_from_seconds(value: float, h: float) -> int:
    return int(math.floor(value / h + 1e-9))


@dataclass
class ScheduleSpec:
    """Either explicit segments or parameters for random generation."""

    segments: list[tuple[int, int]] | None = None
    dwell: int | None = None
    first_mode: int | None = None

    def to_dict(self) -> dict:
        out: dict = {}
        if self.segments is not None:
            out["segments"] = [list(seg) for seg in self.segments]
        if self.dwell is not None:
            out["dwell"] = self.dwell
        if self.first_mode is not None:
            out["first_mode"] = self.first_mode
        return out


@dataclass
class ScenarioConfig:
    """Fully validated description of one experiment."""

    name: str
    sampling_time: float
    window_length: int
    delta: float
    seed: int
    policy_mode: PolicyMode
    horizon: int
    initial_state: np.ndarray
    input_range: tuple[float, float]
    modes: list[LinearMode]
    schedule: ScheduleSpec
    faults: list[FaultEvent] = field(default_factory=list)
    solver: SolverOptions = field(default_factory=SolverOptions)
    allow_short_dwell: bool = False
    output_dir: str | None = None
    conversions: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.modes[0].n

    @property
    def m(self) -> int:
        return self.modes[0].m

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "sampling_time": self.sampling_time,
            "window_length": self.window_length,
            "delta": self.delta,
            "seed": self.seed,
            "policy": self.policy_mode.value,
            "horizon": self.horizon,
            "initial_state": self.initial_state.tolist(),
            "input_range": list(self.input_range),
            "modes": [
                {"label": mode.label, "A": mode.A.tolist(), "B": mode.B.tolist()}
                for mode in self.modes
            ],
            "schedule": self.schedule.to_dict(),
            "faults": [_fault_to_dict(f) for f in self.faults],
            "solver": {
                "feasibility_tol": self.solver.feasibility_tol,
                "equality": self.solver.equality.value,
                "max_iterations": self.solver.max_iterations,
            },
            "allow_short_dwell": self.allow_short_dwell,
        }
        if self.output_dir is not None:
            out["output_dir"] = self.output_dir
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, ScenarioConfig):
            return NotImplemented
        return json.dumps(self.to_dict(), sort_keys=True) == json.dumps(
            other.to_dict(), sort_keys=True
        )


def _fault_to_dict(fault: FaultEvent) -> dict:
    if isinstance(fault, AdditiveStateFault):
        return {
            "kind": "additive-state",
            "coefficient": fault.coefficient,
            "D": fault.D.tolist(),
            "interval": [fault.start, None if fault.end >= _FAR_FUTURE else fault.end],
        }
    return {
        "kind": "actuator-outage",
        "column": fault.column,
        "interval": [fault.start, None if fault.end >= _FAR_FUTURE else fault.end],
    }


_FAR_FUTURE = 10**12


def _require(cond: bool, message: str, code: ErrorCode) -> None:
    if not cond:
        raise ScenarioError(message, code)


def _get(raw: dict, key: str, code: ErrorCode = ErrorCode.SCHEMA):
    if key not in raw:
        raise ScenarioError(f"scenario is missing required key '{key}'", code)
    return raw[key]


def _interval_steps(raw: dict, h: float, horizon: int) -> tuple[int, int, dict]:
    note = {}
    if "interval_s" in raw:
        lo_s, hi_s = raw["interval_s"]
        lo = _steps_from_seconds(float(lo_s), h)
        hi = horizon if hi_s is None else _steps_from_seconds(float(hi_s), h)
        note = {"interval_s": [lo_s, hi_s], "interval": [lo, hi]}
    elif "interval" in raw:
        lo_raw, hi_raw = raw["interval"]
        lo = int(lo_raw)
        hi = horizon if hi_raw is None else int(hi_raw)
    else:
        raise ScenarioError("fault needs an 'interval' or 'interval_s'", ErrorCode.SCHEMA)
    return lo, hi, note


def parse_scenario_dict(raw: dict, name: str | None = None) -> ScenarioConfig:
    """Validate a raw scenario mapping into a config; see the README schema.

    Every violated invariant raises a :class:`ScenarioError` carrying a
    distinct exit code.
    """
    if not isinstance(raw, dict):
        raise ScenarioError("scenario file must contain a JSON object", ErrorCode.SCHEMA)
    name = name or str(raw.get("name", "scenario"))
    conversions: dict = {}

    h = float(_get(raw, "sampling_time"))
    _require(h > 0, f"sampling_time must be positive, got {h}", ErrorCode.SCHEMA)

    if "horizon_s" in raw:
        horizon = _steps_from_seconds(float(raw["horizon_s"]), h)
        conversions["horizon"] = {"seconds": raw["horizon_s"], "steps": horizon}
    else:
        horizon = int(_get(raw, "horizon"))
    _require(horizon > 0, f"horizon must be positive, got {horizon}", ErrorCode.SCHEMA)

    raw_modes = _get(raw, "modes")
    _require(
        isinstance(raw_modes, list) and raw_modes,
        "modes must be a nonempty list",
        ErrorCode.SCHEMA,
    )
    modes = []
    for i, rm in enumerate(raw_modes):
        try:
            mode = LinearMode(
                A=np.asarray(rm["A"], dtype=float),
                B=np.asarray(rm["B"], dtype=float),
                label=str(rm.get("label", f"mode-{i}")),
            )
        except (KeyError, TypeError) as exc:
            raise ScenarioError(f"mode {i} is malformed: {exc}", ErrorCode.SCHEMA)
        except ValueError as exc:
            raise ScenarioError(f"mode {i}: {exc}", ErrorCode.DIMENSION)
        modes.append(mode)
    dims = {(mode.n, mode.m) for mode in modes}
    _require(
        len(dims) == 1,
        f"all modes must share state/input dimensions, got {sorted(dims)}",
        ErrorCode.DIMENSION,
    )
    n, m = modes[0].n, modes[0].m
    for i, mode in enumerate(modes):
        _require(
            mode.is_controllable(),
            f"mode {i} ('{mode.label}') is not controllable",
            ErrorCode.UNCONTROLLABLE,
        )

    T = int(_get(raw, "window_length"))
    t_min = min_window_length(n, m)
    _require(
        T >= t_min,
        f"window_length {T} violates the minimum 2N-1 = {t_min} "
        f"(N = {pe_sample_count(n, m)} for n={n}, m={m})",
        ErrorCode.WINDOW_LENGTH,
    )

    delta = float(_get(raw, "delta"))
    _require(delta > 0, f"delta must be positive, got {delta}", ErrorCode.PARAMETER)

    x0 = np.asarray(_get(raw, "initial_state"), dtype=float).reshape(-1)
    _require(
        x0.shape[0] == n,
        f"initial_state has dimension {x0.shape[0]}, modes have n={n}",
        ErrorCode.DIMENSION,
    )

    lo, hi = _get(raw, "input_range")
    _require(float(lo) < float(hi), "input_range must be (lo, hi) with lo < hi", ErrorCode.SCHEMA)

    seed = int(raw.get("seed", 0))
    policy_name = str(raw.get("policy", PolicyMode.RANDOM_THEN_GUARDED.value))
    try:
        policy_mode = PolicyMode(policy_name)
    except ValueError:
        raise ScenarioError(f"unknown policy '{policy_name}'", ErrorCode.SCHEMA)

    raw_sched = _get(raw, "schedule")
    schedule = ScheduleSpec()
    if "segments" in raw_sched:
        segments = []
        for seg in raw_sched["segments"]:
            if isinstance(seg, dict):
                start = _steps_from_seconds(float(seg["start_s"]), h)
                segments.append((start, int(seg["mode"])))
            else:
                start, mode_idx = seg
                segments.append((int(start), int(mode_idx)))
        schedule.segments = segments
        for _, mode_idx in segments:
            _require(
                0 <= mode_idx < len(modes),
                f"schedule references unknown mode {mode_idx}",
                ErrorCode.SCHEMA,
            )
    if "dwell_s" in raw_sched:
        schedule.dwell = _steps_from_seconds(float(raw_sched["dwell_s"]), h)
        conversions["dwell"] = {"seconds": raw_sched["dwell_s"], "steps": schedule.dwell}
    elif "dwell" in raw_sched:
        schedule.dwell = int(raw_sched["dwell"])
    if "first_mode" in raw_sched:
        schedule.first_mode = int(raw_sched["first_mode"])
    _require(
        schedule.segments is not None or schedule.dwell is not None,
        "schedule needs 'segments' or a 'dwell' for random generation",
        ErrorCode.SCHEMA,
    )

    allow_short_dwell = bool(raw.get("allow_short_dwell", False))

    faults: list[FaultEvent] = []
    for i, rf in enumerate(raw.get("faults", [])):
        kind = rf.get("kind")
        start, end, note = _interval_steps(rf, h, horizon)
        if note:
            conversions.setdefault("faults", []).append({"index": i, **note})
        _require(
            0 <= start < end,
            f"fault {i} has empty or negative interval [{start}, {end})",
            ErrorCode.SCHEMA,
        )
        _require(
            start < horizon,
            f"fault {i} starts at {start}, beyond horizon {horizon}",
            ErrorCode.SCHEMA,
        )
        if kind == "additive-state":
            D = np.asarray(rf["D"], dtype=float)
            _require(
                D.shape == (n, n),
                f"fault {i}: D has shape {D.shape}, expected ({n}, {n})",
                ErrorCode.DIMENSION,
            )
            faults.append(AdditiveStateFault(float(rf["coefficient"]), D, start, end))
        elif kind == "actuator-outage":
            col = int(rf["column"])
            _require(
                0 <= col < m,
                f"fault {i}: column {col} out of range for m={m}",
                ErrorCode.DIMENSION,
            )
            faults.append(ActuatorOutage(col, start, end))
        else:
            raise ScenarioError(f"fault {i} has unknown kind '{kind}'", ErrorCode.SCHEMA)

    raw_solver = raw.get("solver", {})
    try:
        solver = SolverOptions(
            feasibility_tol=float(raw_solver.get("feasibility_tol", 1e-8)),
            equality=EqualityHandling(
                raw_solver.get("equality", EqualityHandling.LINEAR_EQUALITY.value)
            ),
            max_iterations=int(raw_solver.get("max_iterations", 200_000)),
        )
    except ValueError as exc:
        raise ScenarioError(f"solver options: {exc}", ErrorCode.SCHEMA)

    config = ScenarioConfig(
        name=name,
        sampling_time=h,
        window_length=T,
        delta=delta,
        seed=seed,
        policy_mode=policy_mode,
        horizon=horizon,
        initial_state=x0,
        input_range=(float(lo), float(hi)),
        modes=modes,
        schedule=schedule,
        faults=faults,
        solver=solver,
        allow_short_dwell=allow_short_dwell,
        output_dir=raw.get("output_dir"),
        conversions=conversions,
    )
    _validate_dwell(config)
    return config


def _validate_dwell(config: ScenarioConfig) -> None:
    """Gaps must respect the declared dwell floor and exceed the window length.

    The window-length requirement can be waived per scenario for stress
    tests via ``allow_short_dwell``.
    """
    T = config.window_length
    spec = config.schedule
    if spec.segments is not None and len(spec.segments) > 1:
        gaps = [b - a for (a, _), (b, _) in zip(spec.segments, spec.segments[1:])]
        if spec.dwell is not None:
            _require(
                min(gaps) >= spec.dwell,
                f"minimum switching gap {min(gaps)} below declared dwell {spec.dwell}",
                ErrorCode.PARAMETER,
            )
        if not config.allow_short_dwell:
            _require(
                min(gaps) > T,
                f"minimum switching gap {min(gaps)} must exceed the window "
                f"length {T}; set allow_short_dwell for stress tests",
                ErrorCode.PARAMETER,
            )
    elif spec.segments is None and len(config.modes) > 1 and not config.allow_short_dwell:
        _require(
            spec.dwell > T,
            f"dwell {spec.dwell} must exceed the window length {T}; "
            "set allow_short_dwell for stress tests",
            ErrorCode.PARAMETER,
        )


def parse_scenario(path: str | Path) -> ScenarioConfig:
    """Load and validate a scenario JSON file (or a builtin name)."""
    if str(path) in BUILTIN_SCENARIOS:
        return parse_scenario_dict(BUILTIN_SCENARIOS[str(path)](), name=str(path))
    p = Path(path)
    if not p.exists():
        raise ScenarioError(f"scenario file not found: {p}", ErrorCode.SCHEMA)
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON in {p}: {exc}", ErrorCode.SCHEMA)
    return parse_scenario_dict(raw, name=raw.get("name", p.stem))


def apply_overrides(raw: dict, overrides: dict[str, str]) -> dict:
    """Apply ``dotted.path=value`` overrides to a raw scenario mapping.

    Values are parsed as JSON when possible, else kept as strings.
    """
    out = json.loads(json.dumps(raw))
    for dotted, text in overrides.items():
        try:
            value = json.loads(text)
        except json.JSONDecodeError:
            value = text
        node = out
        parts = dotted.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return out


# ---------------------------------------------------------------------------
# Builtin scenarios
# ---------------------------------------------------------------------------

def f18_scenario() -> dict:
    """Two-mode flight-control study: longitudinal dynamics at two altitudes.

    Switching instants are an author choice (the study only fixes the dwell
    floor of 1.5 s = 15 steps); the online start state (1, 0.5) is likewise
    a documented non-published choice.
    """
    return {
        "name": "f18",
        "sampling_time": 0.1,
        "window_length": 15,
        "delta": 0.001,
        "seed": 1,
        "policy": "random-then-guarded",
        "horizon": 150,
        "initial_state": [1.0, 0.5],
        "input_range": [-0.3, 0.3],
        "modes": [
            {
                "label": "mach-0.3-26kft",
                "A": [[0.977, 0.097], [0.002, 0.981]],
                "B": [[-0.013, -0.004], [-0.171, -0.051]],
            },
            {
                "label": "mach-0.7-14kft",
                "A": [[0.852, 0.088], [-0.753, 0.878]],
                "B": [[-0.106, -0.021], [-1.8143, -0.358]],
            },
        ],
        "schedule": {
            "segments": [[0, 0], [40, 1], [65, 0], [105, 1], [130, 0]],
            "dwell": 15,
        },
        "faults": [],
    }


def f404_scenario() -> dict:
    """Engine fault-tolerance study: one nominal mode plus a fault timeline.

    The state-matrix perturbation steps through four coefficient phases and
    the two actuators drop out in sequence; all times are in seconds and
    converted with the 0.1 s sampling time.  The start state is an author
    choice.
    """
    return {
        "name": "f404",
        "sampling_time": 0.1,
        "window_length": 21,
        "delta": 0.001,
        "seed": 1,
        "policy": "random-then-guarded",
        "horizon": 150,
        "initial_state": [1.0, 0.5, -0.5],
        "input_range": [-3.5, 3.5],
        "modes": [
            {
                "label": "f404-nominal",
                "A": [
                    [0.867, 0.0, 0.202],
                    [0.015, 0.961, -0.032],
                    [0.026, 0.0, 0.803],
                ],
                "B": [[0.011, 0.0], [0.014, -0.039], [0.009, 0.0]],
            }
        ],
        "schedule": {"segments": [[0, 0]]},
        "faults": [
            {
                "kind": "additive-state",
                "coefficient": 0.1,
                "D": _F404_D,
                "interval_s": [0.0, 2.7],
            },
            {
                "kind": "additive-state",
                "coefficient": 0.05,
                "D": _F404_D,
                "interval_s": [2.7, 5.2],
            },
            {
                "kind": "additive-state",
                "coefficient": -0.5,
                "D": _F404_D,
                "interval_s": [5.2, 9.5],
            },
            {"kind": "actuator-outage", "column": 0, "interval_s": [2.7, 5.2]},
            {"kind": "actuator-outage", "column": 1, "interval_s": [5.2, None]},
        ],
    }


_F404_D = [[0.075, 0.0, 0.0], [0.5, 1.0, 0.0], [0.0, 0.0, -0.75]]

BUILTIN_SCENARIOS = {"f18": f18_scenario, "f404": f404_scenario}


# ---------------------------------------------------------------------------
# Orchestration
# ---------------------------------------------------------------------------

def _child_seed(seed: int, stream: int) -> int:
    """Derive an independent deterministic child seed for one RNG stream."""
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])


_STREAM_SCHEDULE, _STREAM_WINDOW, _STREAM_POLICY = 1, 2, 3


def build_plant(config: ScenarioConfig) -> SwitchedPlant:
    """Materialize the ground-truth plant, generating the schedule if needed."""
    spec = config.schedule
    if spec.segments is not None:
        schedule = SwitchingSchedule(tuple(spec.segments), config.horizon)
    else:
        rng = np.random.default_rng(_child_seed(config.seed, _STREAM_SCHEDULE))
        schedule = generate_dwell_schedule(
            len(config.modes), spec.dwell, config.horizon, rng, spec.first_mode
        )
    return SwitchedPlant(tuple(config.modes), schedule, tuple(config.faults))


def effective_mode_set(config: ScenarioConfig, plant: SwitchedPlant) -> list[LinearMode]:
    """Every distinct (A, B) the plant realizes over the horizon.

    Fault phases transform the matrices, so the certificates must range
    over these effective systems, not just the loaded modes.
    """
    breakpoints = {0, config.horizon}
    for start, _ in plant.schedule.segments:
        breakpoints.add(start)
    for fault in plant.faults:
        breakpoints.add(fault.start)
        breakpoints.add(min(fault.end, config.horizon))
    seen: dict[bytes, LinearMode] = {}
    for k in sorted(b for b in breakpoints if 0 <= b < config.horizon):
        mode = plant.effective_mode_at(k)
        key = mode.A.tobytes() + mode.B.tobytes()
        if key not in seen:
            seen[key] = mode
    return list(seen.values())


# ---------------------------------------------------------------------------
# Trace persistence
# ---------------------------------------------------------------------------

def trace_columns(n: int, m: int) -> list[str]:
    return (
        ["k", "mode"]
        + [f"x_{i}" for i in range(n)]
        + [f"u_{i}" for i in range(m)]
        + [f"eps_{i}" for i in range(m)]
        + ["norm_x", "norm_K", "solver_status", "pe_ok", "rank_ok"]
    )


def _record_row(rec: TraceRecord) -> list:
    return (
        [rec.k, rec.mode]
        + [float(v) for v in rec.x]
        + [float(v) for v in rec.u]
        + [float(v) for v in rec.eps]
        + [rec.norm_x, rec.norm_K, rec.solver_status.value, rec.pe_ok, rec.rank_ok]
    )


def _format_cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_trace(records: list[TraceRecord], path: Path, fmt: str = "csv") -> None:
    """Persist one row per step; floats use shortest round-trip form."""
    if not records:
        raise ValueError("cannot write an empty trace")
    n, m = records[0].x.shape[0], records[0].u.shape[0]
    cols = trace_columns(n, m)
    if fmt == "csv":
        out = io.StringIO()
        out.write(",".join(cols) + "\n")
        for rec in records:
            out.write(",".join(_format_cell(v) for v in _record_row(rec)) + "\n")
        path.write_text(out.getvalue())
    elif fmt == "json":
        payload = {
            "columns": cols,
            "records": [dict(zip(cols, _jsonify(_record_row(rec)))) for rec in records],
        }
        path.write_text(json.dumps(payload, indent=1) + "\n")
    else:
        raise ValueError(f"unknown trace format '{fmt}'")


def _jsonify(row: list) -> list:
    return [v.item() if isinstance(v, np.generic) else v for v in row]


def read_trace(path: Path) -> list[dict]:
    """Parse a trace file back into per-step dicts (either format)."""
    text = path.read_text()
    if path.suffix == ".json" or text.lstrip().startswith("{"):
        payload = json.loads(text)
        return payload["records"]
    lines = text.strip().splitlines()
    cols = lines[0].split(",")
    records = []
    for line in lines[1:]:
        rec: dict = {}
        for col, cell in zip(cols, line.split(",")):
            if col in ("k", "mode"):
                rec[col] = int(cell)
            elif col == "solver_status":
                rec[col] = cell
            elif col in ("pe_ok", "rank_ok"):
                rec[col] = cell == "true"
            else:
                rec[col] = float(cell)
        records.append(rec)
    return records


def summarize_records(records: list[TraceRecord]) -> dict:
    """Roll-up statistics, each recomputable bit-exactly from the trace file."""
    return {
        "steps": len(records),
        "max_norm_x": max(rec.norm_x for rec in records),
        "max_norm_K": max(rec.norm_K for rec in records),
        "non_optimal_solves": sum(
            1 for rec in records if rec.solver_status is not SolverStatus.OPTIMAL
        ),
        "pe_violations": sum(1 for rec in records if not rec.pe_ok),
        "rank_violations": sum(1 for rec in records if not rec.rank_ok),
    }


def summarize_trace_dicts(rows: list[dict]) -> dict:
    """Same roll-up computed from a parsed trace file."""
    return {
        "steps": len(rows),
        "max_norm_x": max(row["norm_x"] for row in rows),
        "max_norm_K": max(row["norm_K"] for row in rows),
        "non_optimal_solves": sum(
            1 for row in rows if row["solver_status"] != SolverStatus.OPTIMAL.value
        ),
        "pe_violations": sum(1 for row in rows if not row["pe_ok"]),
        "rank_violations": sum(1 for row in rows if not row["rank_ok"]),
    }


# ---------------------------------------------------------------------------
# Reports and commands
# ---------------------------------------------------------------------------

@dataclass
class RunReport:
    """Outcome of one command: summary stats, bounds, file locations."""

    scenario: str
    seed: int
    command: str
    trace_path: str | None = None
    summary: dict = field(default_factory=dict)
    bounds: dict | None = None
    conversions: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    invariants_ok: bool = True
    error: str | None = None

    def to_dict(self) -> dict:
        out = {
            "scenario": self.scenario,
            "seed": self.seed,
            "command": self.command,
            "trace_path": self.trace_path,
            "summary": self.summary,
            "bounds": self.bounds,
            "conversions": self.conversions,
            "checks": self.checks,
            "invariants_ok": self.invariants_ok,
        }
        if self.error is not None:
            out["error"] = self.error
        return out

    def render_text(self) -> str:
        out = io.StringIO()
        out.write(f"scenario: {self.scenario} (seed {self.seed}, {self.command})\n")
        if self.conversions:
            out.write(f"time conversions: {json.dumps(self.conversions)}\n")
        if self.trace_path:
            out.write(f"trace: {self.trace_path}\n")
        for key, value in self.summary.items():
            out.write(f"  {key}: {value}\n")
        if self.checks:
            for key, value in self.checks.items():
                out.write(f"  check {key}: {value}\n")
        if self.bounds:
            out.write("bounds:\n")
            for key, value in self.bounds.items():
                if key == "per_mode":
                    for row in value:
                        out.write(f"  mode '{row['label']}': " + ", ".join(
                            f"{k}={v:.6g}" if not isinstance(v, str) else f"{k}={v}"
                            for k, v in row.items() if k != "label"
                        ) + "\n")
                elif key == "definitions":
                    out.write("  definitions:\n")
                    for name, formula in value.items():
                        out.write(f"    {name} = {formula}\n")
                elif key == "error":
                    out.write(f"  error: {value}\n")
                else:
                    out.write(f"  {key}: {value:.6g}\n")
        out.write("invariants ok\n" if self.invariants_ok else "INVARIANT VIOLATIONS\n")
        return out.getvalue()


def _compute_bounds(config: ScenarioConfig, plant: SwitchedPlant,
                    lam: float | None = None) -> dict:
    eff_modes = effective_mode_set(config, plant)
    try:
        constants = compute_stability_constants(
            eff_modes, config.delta, config.window_length, lam
        )
        return constants.as_dict()
    except ParameterError:
        raise
    except (ConvergenceError, InstabilityError) as exc:
        per_mode = []
        for mode in eff_modes:
            try:
                dare_lqr(mode.A, mode.B)
                per_mode.append({"label": mode.label, "status": "ok"})
            except ConvergenceError as mode_exc:
                per_mode.append({"label": mode.label, "status": f"failed: {mode_exc}"})
        return {"error": str(exc), "per_mode": per_mode}


def run_scenario(
    config: ScenarioConfig,
    output_dir: str | Path | None = None,
    fmt: str = "csv",
    seed: int | None = None,
    compute_bounds: bool = True,
    on_step=None,
) -> RunReport:
    """Seed the window, run the online loop, persist trace and report.

    ``invariants_ok`` requires every solve optimal and zero excitation or
    rank flags; the CLI turns a violation into a nonzero exit.
    """
    if seed is not None:
        config = replace(config, seed=int(seed))
    plant = build_plant(config)
    initial_mode = plant.modes[plant.mode_index_at(0)]
    window_rng = np.random.default_rng(_child_seed(config.seed, _STREAM_WINDOW))
    window = seed_window_backward(
        initial_mode,
        config.window_length,
        config.input_range,
        config.initial_state,
        window_rng,
    )
    policy = ExcitationPolicy(
        delta=config.delta,
        mode=config.policy_mode,
        rng_seed=_child_seed(config.seed, _STREAM_POLICY),
    )
    report = RunReport(scenario=config.name, seed=config.seed, command="simulate",
                       conversions=config.conversions)
    try:
        records = run_online_loop(
            plant, window, policy, config.solver, config.horizon, on_step=on_step
        )
    except SimulationError as exc:
        records = exc.records
        report.error = exc.reason
        report.invariants_ok = False

    if records:
        out_dir = Path(output_dir or config.output_dir or ".")
        out_dir.mkdir(parents=True, exist_ok=True)
        ext = "csv" if fmt == "csv" else "json"
        trace_path = out_dir / f"{config.name}-trace.{ext}"
        write_trace(records, trace_path, fmt)
        report.trace_path = str(trace_path)
        report.summary = summarize_records(records)
        flags = (
            report.summary["non_optimal_solves"]
            + report.summary["pe_violations"]
            + report.summary["rank_violations"]
        )
        report.invariants_ok = report.invariants_ok and flags == 0
    if report.error is None and len(records) < config.horizon:
        # the loop stops once the state underflows to the exact origin
        report.checks["origin_converged_at_step"] = len(records)
    if compute_bounds:
        report.bounds = _compute_bounds(config, plant)
    return report


def bounds_command(config: ScenarioConfig, lam: float | None = None) -> RunReport:
    """Stability-certificate report over the scenario's effective mode set."""
    plant = build_plant(config)
    report = RunReport(scenario=config.name, seed=config.seed, command="bounds",
                       conversions=config.conversions)
    try:
        report.bounds = _compute_bounds(config, plant, lam)
    except ParameterError as exc:
        raise ScenarioError(str(exc), ErrorCode.PARAMETER)
    report.invariants_ok = "error" not in (report.bounds or {})
    return report


def lqr_check_command(config: ScenarioConfig, tolerance: float = 1e-4) -> RunReport:
    """Cross-check the data route against the model route on one mode.

    Generates an exciting window on the (single) mode, solves the conic
    program, and compares gain and objective against the Riccati oracle.
    """
    if len(config.modes) != 1:
        raise ScenarioError(
            "lqr-check needs a single-mode scenario", ErrorCode.PARAMETER
        )
    mode = config.modes[0]
    rng = np.random.default_rng(_child_seed(config.seed, _STREAM_WINDOW))
    window = seed_window_forward(
        mode, config.window_length, config.input_range, config.initial_state, rng
    )
    sol = solve_dd_lqr(window, config.solver)
    report = RunReport(scenario=config.name, seed=config.seed, command="lqr-check",
                       conversions=config.conversions)
    if sol.solver_status is not SolverStatus.OPTIMAL:
        report.invariants_ok = False
        report.error = f"conic solve returned {sol.raw_status}"
        return report
    K_opt, _ = dare_lqr(mode.A, mode.B)
    cost_opt = closed_loop_h2_cost(mode.A, mode.B, K_opt)
    gain_err = float(
        np.linalg.norm(sol.K - K_opt, 2) / np.linalg.norm(K_opt, 2)
    ) if np.linalg.norm(K_opt, 2) > 0 else float(np.linalg.norm(sol.K, 2))
    value_err = abs(sol.gamma - cost_opt) / sol.gamma
    report.checks = {
        "gain_relative_error": gain_err,
        "objective_relative_error": value_err,
        "tolerance": tolerance,
    }
    report.invariants_ok = gain_err <= tolerance and value_err <= tolerance
    if not report.invariants_ok:
        report.error = "data-driven and model-based optima disagree beyond tolerance"
    return report
