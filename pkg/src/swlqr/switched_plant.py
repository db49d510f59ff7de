"""Closed-loop simulation of an unknown switched plant under online control.

The loop is strictly causal: at each step the current data window is fed
to the conic synthesis, the resulting gain plus a guarded auxiliary input
produce ``u(k)``, the true (possibly faulted) mode advances the state, and
the window slides forward one sample.  The controller never sees the mode
matrices, the switching signal, or the fault schedule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data_window import (
    DataWindow,
    numerical_rank,
    push_sample,
    rank_condition_holds,
)
from .dd_lqr import SdpSolution, SolverOptions, SolverStatus, solve_dd_lqr
from .excitation import (
    ExcitationError,
    ExcitationPolicy,
    ExcitationReport,
    is_persistently_exciting,
    select_input,
)


class SimulationError(RuntimeError):
    """Online loop aborted; carries the partial trace for post-mortem."""

    def __init__(self, reason: str, records: list["TraceRecord"]):
        super().__init__(reason)
        self.reason = reason
        self.records = records


@dataclass(frozen=True)
class LinearMode:
    """One discrete-time subsystem ``x+ = A x + B u``."""

    A: np.ndarray
    B: np.ndarray
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "A", np.asarray(self.A, dtype=float))
        object.__setattr__(self, "B", np.asarray(self.B, dtype=float))
        if self.A.ndim != 2 or self.A.shape[0] != self.A.shape[1]:
            raise ValueError(f"A must be square, got shape {self.A.shape}")
        if self.B.ndim != 2 or self.B.shape[0] != self.A.shape[0]:
            raise ValueError(
                f"B must have {self.A.shape[0]} rows, got shape {self.B.shape}"
            )

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def controllability_matrix(self) -> np.ndarray:
        blocks = []
        Ak = np.eye(self.n)
        for _ in range(self.n):
            blocks.append(Ak @ self.B)
            Ak = self.A @ Ak
        return np.hstack(blocks)

    def is_controllable(self) -> bool:
        return numerical_rank(self.controllability_matrix()) == self.n


@dataclass(frozen=True)
class SwitchingSchedule:
    """Piecewise-constant mode selector given as (start step, mode) segments.

    The first segment must start at 0, starts must strictly increase, and
    the mode must change at every later segment.  The last segment extends
    past ``horizon`` if the simulation runs longer.
    """

    segments: tuple[tuple[int, int], ...]
    horizon: int

    def __post_init__(self):
        segs = tuple((int(k), int(mode)) for k, mode in self.segments)
        object.__setattr__(self, "segments", segs)
        if not segs:
            raise ValueError("schedule needs at least one segment")
        if segs[0][0] != 0:
            raise ValueError(f"first segment must start at 0, got {segs[0][0]}")
        for (k_prev, mode_prev), (k_next, mode_next) in zip(segs, segs[1:]):
            if k_next <= k_prev:
                raise ValueError("segment starts must strictly increase")
            if mode_next == mode_prev:
                raise ValueError(f"mode does not change at step {k_next}")

    def mode_at(self, k: int) -> int:
        mode = self.segments[0][1]
        for start, seg_mode in self.segments:
            if k >= start:
                mode = seg_mode
            else:
                break
        return mode

    def switch_steps(self) -> list[int]:
        return [start for start, _ in self.segments[1:]]

    def dwell_time(self) -> int | None:
        """Minimum gap between consecutive segment starts; None if switch-free."""
        starts = [start for start, _ in self.segments]
        if len(starts) < 2:
            return None
        return min(b - a for a, b in zip(starts, starts[1:]))


@dataclass(frozen=True)
class AdditiveStateFault:
    """Perturb the state matrix: ``A <- A + coefficient * D`` while active."""

    coefficient: float
    D: np.ndarray
    start: int
    end: int

    def __post_init__(self):
        object.__setattr__(self, "D", np.asarray(self.D, dtype=float))

    def active_at(self, k: int) -> bool:
        return self.start <= k < self.end

    def apply(self, A: np.ndarray, B: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return A + self.coefficient * self.D, B

    def describe(self) -> str:
        return f"state-drift({self.coefficient:g})"


@dataclass(frozen=True)
class ActuatorOutage:
    """Zero one input column of B while active."""

    column: int
    start: int
    end: int

    def active_at(self, k: int) -> bool:
        return self.start <= k < self.end

    def apply(self, A: np.ndarray, B: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        B = B.copy()
        B[:, self.column] = 0.0
        return A, B

    def describe(self) -> str:
        return f"outage(u{self.column})"


FaultEvent = AdditiveStateFault | ActuatorOutage


def effective_mode(base: LinearMode, faults: list[FaultEvent], k: int) -> LinearMode:
    """Apply every fault active at step ``k``, in declaration order.

    The label of a transformed mode records which faults acted on it.
    """
    A, B = base.A, base.B
    tags = []
    for fault in faults:
        if fault.active_at(k):
            A, B = fault.apply(A, B)
            tags.append(fault.describe())
    label = base.label if not tags else base.label + "+" + "+".join(tags)
    return LinearMode(A=A, B=B, label=label)


def plant_step(mode: LinearMode, x, u) -> np.ndarray:
    """One exact step ``A x + B u`` of the given mode."""
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    if x.shape[0] != mode.n:
        raise ValueError(f"state has dimension {x.shape[0]}, expected {mode.n}")
    if u.shape[0] != mode.m:
        raise ValueError(f"input has dimension {u.shape[0]}, expected {mode.m}")
    return mode.A @ x + mode.B @ u


@dataclass(frozen=True)
class SwitchedPlant:
    """Ground-truth switched system: modes, schedule, fault list."""

    modes: tuple[LinearMode, ...]
    schedule: SwitchingSchedule
    faults: tuple[FaultEvent, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "faults", tuple(self.faults))
        dims = {(mode.n, mode.m) for mode in self.modes}
        if len(dims) != 1:
            raise ValueError(f"modes disagree on dimensions: {dims}")
        for _, idx in self.schedule.segments:
            if not 0 <= idx < len(self.modes):
                raise ValueError(f"schedule references unknown mode {idx}")

    @property
    def n(self) -> int:
        return self.modes[0].n

    @property
    def m(self) -> int:
        return self.modes[0].m

    def mode_index_at(self, k: int) -> int:
        return self.schedule.mode_at(k)

    def effective_mode_at(self, k: int) -> LinearMode:
        return effective_mode(self.modes[self.mode_index_at(k)], list(self.faults), k)


def generate_dwell_schedule(
    num_modes: int,
    dwell: int,
    horizon: int,
    rng: np.random.Generator,
    first_mode: int | None = None,
) -> SwitchingSchedule:
    """Random schedule with every inter-switch gap in ``[dwell, 2*dwell]``.

    Consecutive modes always differ.  A horizon shorter than ``dwell`` (or a
    single mode) degenerates to one switch-free segment.
    """
    if num_modes < 1:
        raise ValueError("need at least one mode")
    if dwell < 1:
        raise ValueError("dwell must be >= 1")
    if first_mode is None:
        mode = int(rng.integers(0, num_modes))
    else:
        mode = int(first_mode)
    segments = [(0, mode)]
    if num_modes == 1 or horizon <= dwell:
        return SwitchingSchedule(tuple(segments), horizon)
    k = 0
    while True:
        k += dwell + int(rng.integers(0, dwell + 1))
        if k >= horizon:
            break
        others = [i for i in range(num_modes) if i != mode]
        mode = int(others[rng.integers(0, len(others))])
        segments.append((k, mode))
    return SwitchingSchedule(tuple(segments), horizon)


@dataclass
class TraceRecord:
    """Everything observed and decided at one simulation step."""

    k: int
    mode: int
    x: np.ndarray
    u: np.ndarray
    eps: np.ndarray
    K: np.ndarray
    solver_status: SolverStatus
    norm_x: float
    norm_K: float
    pe_ok: bool
    rank_ok: bool


def _record_pe_ok(report: ExcitationReport) -> bool:
    if report.suffix_rank is None:
        return True  # zero state, check skipped by design
    return report.suffix_rank == report.target_rank


def run_online_loop(
    plant: SwitchedPlant,
    initial_window: DataWindow,
    policy: ExcitationPolicy,
    opts: SolverOptions | None = None,
    horizon: int = 100,
    on_step=None,
    max_consecutive_failures: int = 3,
) -> list[TraceRecord]:
    """Run the model-free control loop for ``horizon`` steps.

    The state picks up where the seeding experiment ended (the window's
    newest state sample), keeping the data matrices consistent with one
    uninterrupted trajectory.  A non-optimal solve holds the previous gain
    and flags the record; at the first step, or after
    ``max_consecutive_failures`` in a row, the loop aborts with the partial
    trace attached.  ``on_step(k, window)`` is invoked with the window the
    step-``k`` synthesis sees, before it is advanced.

    Returns fewer than ``horizon`` records if the state reaches the origin
    exactly (possible through floating-point underflow on very long runs):
    the origin is absorbing in a noiseless loop and the window would only
    fill with zeros from there on.

    Raises:
        SimulationError: excitation failure or repeated solver trouble.
    """
    opts = opts or SolverOptions()
    if not rank_condition_holds(initial_window):
        raise ValueError("initial window violates the full-row-rank data condition")
    window = initial_window.copy()
    x = window.latest_state()
    rng = np.random.default_rng(policy.rng_seed)
    records: list[TraceRecord] = []
    prev_K: np.ndarray | None = None
    consecutive_failures = 0

    for k in range(horizon):
        if float(np.linalg.norm(x)) == 0.0:
            break
        if on_step is not None:
            on_step(k, window.copy())
        rank_ok = rank_condition_holds(window)
        sol: SdpSolution = solve_dd_lqr(window, opts)
        if sol.solver_status is SolverStatus.OPTIMAL:
            K = sol.K
            prev_K = K
            consecutive_failures = 0
        else:
            consecutive_failures += 1
            if prev_K is None:
                raise SimulationError(
                    f"solver returned {sol.raw_status} at the first step", records
                )
            if consecutive_failures > max_consecutive_failures:
                raise SimulationError(
                    f"solver returned non-optimal status {consecutive_failures} "
                    f"times in a row (last: {sol.raw_status})",
                    records,
                )
            K = prev_K

        try:
            u, eps, report = select_input(window, K, x, policy, rng)
        except ExcitationError as exc:
            raise SimulationError(f"excitation failure at step {k}: {exc}", records)

        mode_idx = plant.mode_index_at(k)
        x_next = plant_step(plant.effective_mode_at(k), x, u)
        records.append(
            TraceRecord(
                k=k,
                mode=mode_idx,
                x=x.copy(),
                u=u.copy(),
                eps=eps.copy(),
                K=np.asarray(K, dtype=float).copy(),
                solver_status=sol.solver_status,
                norm_x=float(np.linalg.norm(x)),
                norm_K=float(np.linalg.norm(K, 2)),
                pe_ok=_record_pe_ok(report),
                rank_ok=rank_ok,
            )
        )
        window = push_sample(window, u, x_next)
        x = x_next

    return records


def seed_window_backward(
    mode: LinearMode,
    T: int,
    input_range: tuple[float, float],
    x_final,
    rng: np.random.Generator,
    max_attempts: int = 50,
) -> DataWindow:
    """Open-loop seeding experiment ending exactly at ``x_final``.

    Inputs are drawn i.i.d. uniform over ``input_range``; earlier states are
    filled backwards through the mode's (invertible) state matrix so the
    buffer is an exact system trajectory whose newest state is ``x_final``.
    Draws are repeated until the inputs are persistently exciting and the
    stacked data matrix has full row rank (failure has probability zero).
    """
    x_final = np.asarray(x_final, dtype=float).reshape(-1)
    lo, hi = input_range
    try:
        A_inv = np.linalg.inv(mode.A)
    except np.linalg.LinAlgError:
        raise ValueError(
            "seeding anchored at the online start state needs an invertible "
            "state matrix; use seed_window_forward instead"
        )
    for _ in range(max_attempts):
        inputs = [rng.uniform(lo, hi, size=mode.m) for _ in range(T)]
        states = [x_final]
        for u in reversed(inputs):
            states.insert(0, A_inv @ (states[0] - mode.B @ u))
        window = DataWindow(inputs, states, current_time=0)
        if is_persistently_exciting(inputs, mode.n + 1) and rank_condition_holds(window):
            return window
    raise RuntimeError(
        f"no exciting input draw found in {max_attempts} attempts; "
        "check mode controllability and input range"
    )


def seed_window_forward(
    mode: LinearMode,
    T: int,
    input_range: tuple[float, float],
    x_start,
    rng: np.random.Generator,
    max_attempts: int = 50,
) -> DataWindow:
    """Open-loop seeding experiment run forwards from ``x_start``."""
    x_start = np.asarray(x_start, dtype=float).reshape(-1)
    lo, hi = input_range
    for _ in range(max_attempts):
        inputs = [rng.uniform(lo, hi, size=mode.m) for _ in range(T)]
        states = [x_start]
        for u in inputs:
            states.append(mode.A @ states[-1] + mode.B @ u)
        window = DataWindow(inputs, states, current_time=0)
        if is_persistently_exciting(inputs, mode.n + 1) and rank_condition_holds(window):
            return window
    raise RuntimeError(
        f"no exciting input draw found in {max_attempts} attempts; "
        "check mode controllability and input range"
    )
