"""Data-parametrized LQR synthesis and its model-based verification oracles.

The feedback gain is recovered at every step from a small semidefinite
program written purely in terms of the windowed data matrices: minimize
``gamma`` subject to two PSD blocks, one linear matrix equality, and one
scalar trace inequality.  For windows generated by a single controllable
system under exciting inputs, the recovered gain coincides with the unique
unit-weight H2/LQR optimum, which this module can also compute directly
from a model via a Riccati fixed point -- the two routes deliberately share
no code so each can check the other.
"""

from __future__ import annotations

import enum
import io
import warnings
from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .data_window import DataWindow, rank_condition_holds

# Independent re-check level for constraint residuals; a solver-reported
# optimum whose re-evaluated violations exceed this is demoted.
RESIDUAL_RECHECK_TOL = 1e-6

# Progressively relaxed solver tolerances; the first clean optimum wins.
_LADDER_TARGETS = (1e-12, 1e-10, 1e-9, 1e-8)


class InstabilityError(RuntimeError):
    """Closed loop has spectral radius >= 1 where stability is required."""


class ConvergenceError(RuntimeError):
    """Riccati fixed point failed to converge (non-stabilizable pair?)."""


class RankDeficiencyError(ValueError):
    """Stacked input/state data matrix lost full row rank."""


class SolverStatus(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    NUMERICAL_TROUBLE = "numerical-trouble"


class EqualityHandling(enum.Enum):
    LINEAR_EQUALITY = "linear-equality"
    TWO_SIDED_INEQUALITY = "two-sided-inequality"


@dataclass(frozen=True)
class SolverOptions:
    """Knobs of the conic solve.

    ``feasibility_tol`` is handed to the interior-point solver; accepted
    solutions are additionally re-checked against the independent
    ``RESIDUAL_RECHECK_TOL``.
    """

    feasibility_tol: float = 1e-8
    equality: EqualityHandling = EqualityHandling.LINEAR_EQUALITY
    max_iterations: int = 200_000

    def __post_init__(self):
        if self.feasibility_tol <= 0:
            raise ValueError("feasibility_tol must be positive")


@dataclass
class SdpProblem:
    """Conic program description built from one data window."""

    problem: cp.Problem
    gamma: cp.Variable
    Q: cp.Variable
    P: cp.Variable
    L: cp.Variable
    U: np.ndarray
    X_past: np.ndarray
    X_next: np.ndarray
    psd_block_sizes: tuple[int, int] = field(init=False)
    equality_rows: int = field(init=False)
    variable_counts: dict[str, int] = field(init=False)

    def __post_init__(self):
        m, T = self.U.shape
        n = self.X_past.shape[0]
        self.psd_block_sizes = (2 * n, m + n)
        self.equality_rows = n * n
        self.variable_counts = {
            "gamma": 1,
            "Q": T * n,
            "P": n * (n + 1) // 2,
            "L": m * (m + 1) // 2,
        }

    def debug_dump(self) -> str:
        """Plain-text form of the program for external cross-checking.

        Lists every variable with its free-entry count, both PSD blocks
        with the dense data matrices they are assembled from, and one dense
        coefficient row per scalar equality.
        """
        m, T = self.U.shape
        n = self.X_past.shape[0]
        out = io.StringIO()
        out.write("minimize gamma subject to:\n")
        out.write("variables: " + ", ".join(
            f"{k}({v} free entries)" for k, v in self.variable_counts.items()
        ) + "\n")
        out.write(f"psd block 1, size {2 * n}, [[I - P, Xnext Q], [Q' Xnext', -P]] <= 0\n")
        _dump_matrix(out, "Xnext", self.X_next)
        out.write(f"psd block 2, size {m + n}, [[L, U Q], [Q' U', P]] >= 0\n")
        _dump_matrix(out, "U", self.U)
        out.write(f"equality rows ({n * n}): Xpast[i,:] . Q[:,j] - P[i,j] = 0\n")
        for i in range(n):
            row = " ".join(repr(float(v)) for v in self.X_past[i])
            out.write(f"  coeff row i={i}: {row}\n")
        out.write("scalar row: trace(P) + trace(L) - gamma <= 0\n")
        return out.getvalue()


def _dump_matrix(out, name: str, mat: np.ndarray) -> None:
    out.write(f"  {name} ({mat.shape[0]}x{mat.shape[1]}):\n")
    for row in mat:
        out.write("    " + " ".join(repr(float(v)) for v in row) + "\n")


@dataclass
class SdpSolution:
    """Optimizer tuple plus the extracted gain and verified residuals."""

    solver_status: SolverStatus
    raw_status: str
    gamma: float | None = None
    Q: np.ndarray | None = None
    P: np.ndarray | None = None
    L: np.ndarray | None = None
    K: np.ndarray | None = None
    residuals: dict[str, float] = field(default_factory=dict)


def build_sdp(window: DataWindow,
              equality: EqualityHandling = EqualityHandling.LINEAR_EQUALITY) -> SdpProblem:
    """Assemble the per-step conic program from the window's data matrices."""
    U = window.input_matrix()
    X_past = window.state_matrix()
    X_next = window.shifted_state_matrix()
    n, m, T = window.n, window.m, window.T

    gamma = cp.Variable(name="gamma")
    Q = cp.Variable((T, n), name="Q")
    P = cp.Variable((n, n), symmetric=True, name="P")
    L = cp.Variable((m, m), symmetric=True, name="L")

    constraints = [
        cp.bmat([[np.eye(n) - P, X_next @ Q],
                 [(X_next @ Q).T, -P]]) << 0,
        cp.bmat([[L, U @ Q],
                 [(U @ Q).T, P]]) >> 0,
    ]
    if equality is EqualityHandling.LINEAR_EQUALITY:
        constraints.append(X_past @ Q == P)
    else:
        constraints.append(X_past @ Q - P <= 0)
        constraints.append(X_past @ Q - P >= 0)
    constraints.append(cp.trace(P) + cp.trace(L) <= gamma)

    problem = cp.Problem(cp.Minimize(gamma), constraints)
    return SdpProblem(problem, gamma, Q, P, L, U, X_past, X_next)


def evaluate_residuals(gamma: float, Q: np.ndarray, P: np.ndarray, L: np.ndarray,
                       U: np.ndarray, X_past: np.ndarray, X_next: np.ndarray) -> dict[str, float]:
    """Constraint violations of a candidate tuple, measured without the solver.

    PSD blocks report the offending extreme eigenvalue, the equality its
    max-abs entry, the trace row its scalar excess; all are 0 when
    satisfied.  Violations are relative to the tuple's own magnitude
    (floored at 1): the optimal value grows with the plant's cost, and an
    absolute threshold would sit below the roundoff floor of merely
    evaluating the constraints once ``P`` reaches the thousands.  The lower
    bound ``P >= I`` keeps its natural absolute scale.
    """
    n = X_past.shape[0]
    block1 = np.block([[np.eye(n) - P, X_next @ Q],
                       [(X_next @ Q).T, -P]])
    block1 = 0.5 * (block1 + block1.T)
    block2 = np.block([[L, U @ Q],
                       [(U @ Q).T, P]])
    block2 = 0.5 * (block2 + block2.T)
    scale = max(1.0, float(np.linalg.norm(P, 2)), float(np.linalg.norm(L, 2)))
    return {
        "stability_block": max(0.0, float(np.linalg.eigvalsh(block1)[-1])) / scale,
        "effort_block": max(0.0, float(-np.linalg.eigvalsh(block2)[0])) / scale,
        "state_equality": float(np.max(np.abs(X_past @ Q - P))) / scale,
        "trace_row": max(0.0, float(np.trace(P) + np.trace(L) - gamma))
        / max(1.0, abs(gamma)),
        "P_lower_bound": max(0.0, float(np.linalg.eigvalsh(np.eye(n) - P)[-1])),
    }


def solve_dd_lqr(window: DataWindow, opts: SolverOptions | None = None) -> SdpSolution:
    """Solve the data-driven LQR program and extract ``K = U Q P^{-1}``.

    Never raises for solver-side failure: the returned status is
    ``INFEASIBLE`` or ``NUMERICAL_TROUBLE`` and the caller decides the
    fallback.  A reported optimum is demoted to ``NUMERICAL_TROUBLE`` if
    independently re-evaluated residuals exceed ``RESIDUAL_RECHECK_TOL``.
    """
    opts = opts or SolverOptions()
    # Jointly rescaling inputs and states leaves the optimal gain and value
    # untouched but keeps the solver's arithmetic well conditioned once the
    # closed loop has contracted the data to tiny magnitudes.
    scale = float(np.linalg.norm(window.stacked_data(), 2))
    if scale <= 0.0 or not np.isfinite(scale):
        scale = 1.0
    scaled = DataWindow(
        [u / scale for u in window.inputs],
        [x / scale for x in window.states],
        window.current_time,
    )
    sdp = build_sdp(scaled, opts.equality)

    raw_status = "not-solved"
    solved_clean = False
    targets = sorted({min(t, opts.feasibility_tol) for t in _LADDER_TARGETS})
    for target in targets:
        kwargs = {"tol_gap_abs": target, "tol_gap_rel": target, "tol_feas": target}
        try:
            with warnings.catch_warnings():
                # an inaccurate rung is expected and handled by the ladder
                warnings.filterwarnings("ignore", message="Solution may be inaccurate")
                sdp.problem.solve(
                    solver=cp.CLARABEL, max_iter=opts.max_iterations, **kwargs
                )
        except cp.error.SolverError as exc:
            raw_status = f"solver-error: {exc}"
            continue
        raw_status = str(sdp.problem.status)
        if raw_status == cp.OPTIMAL:
            solved_clean = True
            break
        if raw_status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            return SdpSolution(SolverStatus.INFEASIBLE, raw_status)

    if not solved_clean:
        if sdp.gamma.value is None:
            return SdpSolution(SolverStatus.NUMERICAL_TROUBLE, raw_status)
        # fall through with the inaccurate tuple so diagnostics carry values
    gamma = float(sdp.gamma.value)
    Q = np.asarray(sdp.Q.value, dtype=float) / scale
    P = np.asarray(sdp.P.value, dtype=float)
    P = 0.5 * (P + P.T)
    L = np.asarray(sdp.L.value, dtype=float)
    L = 0.5 * (L + L.T)
    U = window.input_matrix()
    K = np.linalg.solve(P.T, (U @ Q).T).T

    residuals = evaluate_residuals(
        gamma, Q, P, L, U, window.state_matrix(), window.shifted_state_matrix()
    )
    ok = solved_clean and max(residuals.values()) <= RESIDUAL_RECHECK_TOL
    status = SolverStatus.OPTIMAL if ok else SolverStatus.NUMERICAL_TROUBLE
    return SdpSolution(status, raw_status, gamma, Q, P, L, K, residuals)


def spectral_radius(M: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(np.asarray(M, dtype=float)))))


def dare_lqr(A: np.ndarray, B: np.ndarray, tol: float = 1e-12,
             max_iterations: int = 200_000) -> tuple[np.ndarray, np.ndarray]:
    """Unit-weight discrete LQR via fixed-point Riccati iteration.

    Iterates ``S <- A'SA - A'SB (I + B'SB)^{-1} B'SA + I`` from ``S = I``
    until the update falls below ``tol``.  Independent of the conic route.

    Returns:
        (K_opt, S): the optimal gain ``-(I + B'SB)^{-1} B'SA`` and the
        stabilizing cost-to-go matrix.

    Raises:
        ConvergenceError: iteration diverged or hit the iteration cap,
            which is what a non-stabilizable pair produces.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n, m = A.shape[0], B.shape[1]
    S = np.eye(n)
    converged = False
    for _ in range(max_iterations):
        BtS = B.T @ S
        gain_term = np.linalg.solve(np.eye(m) + BtS @ B, BtS @ A)
        S_next = A.T @ S @ A - (A.T @ S @ B) @ gain_term + np.eye(n)
        S_next = 0.5 * (S_next + S_next.T)
        step = float(np.max(np.abs(S_next - S)))
        S = S_next
        if not np.isfinite(S).all() or np.max(np.abs(S)) > 1e12:
            raise ConvergenceError("Riccati iteration diverged; pair not stabilizable?")
        if step <= tol * max(1.0, float(np.max(np.abs(S)))):
            converged = True
            break
    if not converged:
        raise ConvergenceError(
            f"Riccati iteration did not converge within {max_iterations} steps"
        )
    K = -np.linalg.solve(np.eye(m) + B.T @ S @ B, B.T @ S @ A)
    if spectral_radius(A + B @ K) >= 1.0:
        raise ConvergenceError("fixed point reached but closed loop is not stable")
    return K, S


def gramian_lyapunov(A_cl: np.ndarray) -> np.ndarray:
    """Solve ``A P A' - P + I = 0`` for the closed-loop Gramian-type P.

    Direct Kronecker solve plus one refinement step, keeping residuals at
    machine level for the small systems handled here.
    """
    A = np.asarray(A_cl, dtype=float)
    if spectral_radius(A) >= 1.0:
        raise InstabilityError(
            f"matrix has spectral radius {spectral_radius(A):.6f} >= 1"
        )
    n = A.shape[0]
    M = np.kron(A, A) - np.eye(n * n)
    P = np.linalg.solve(M, -np.eye(n).ravel()).reshape(n, n)
    P = 0.5 * (P + P.T)
    resid = A @ P @ A.T - P + np.eye(n)
    P = P + np.linalg.solve(M, -resid.ravel()).reshape(n, n)
    return 0.5 * (P + P.T)


def closed_loop_h2_cost(A: np.ndarray, B: np.ndarray, K: np.ndarray) -> float:
    """``trace(P) + trace(K P K')`` with P the closed-loop Gramian solution."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    K = np.asarray(K, dtype=float)
    P = gramian_lyapunov(A + B @ K)
    return float(np.trace(P) + np.trace(K @ P @ K.T))


def least_squares_id(window: DataWindow) -> tuple[np.ndarray, np.ndarray]:
    """Recover ``(A, B)`` from a window by least squares on the data equation.

    Exact (to machine precision) on noiseless single-system windows whose
    stacked data matrix has full row rank.

    Raises:
        RankDeficiencyError: the full-row-rank condition fails.
    """
    if not rank_condition_holds(window):
        raise RankDeficiencyError(
            "stacked input/state matrix is rank deficient; identification "
            "is not well posed"
        )
    W = window.stacked_data()
    BA = window.shifted_state_matrix() @ np.linalg.pinv(W)
    B_hat = BA[:, :window.m]
    A_hat = BA[:, window.m:]
    return A_hat, B_hat
