"""Ground-truth stability certificates for verification and reporting.

Everything here needs the true mode matrices and is therefore off-limits
to the online controller; it exists to check the controller from the
outside.  From the per-mode LQR optima it derives: a uniform bound on
every gain the conic program can return, the largest admissible
perturbation radius, the per-interval contraction and growth factors, and
the dwell time beyond which the switched closed loop is provably
exponentially stable.  It also constructs, for any mixed-data window taken
during a switching transient, an explicit feasible tuple certifying that
the per-step program stays solvable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data_window import DataWindow, numerical_rank, pe_sample_count
from .dd_lqr import (
    InstabilityError,
    dare_lqr,
    evaluate_residuals,
    gramian_lyapunov,
    spectral_radius,
)
from .switched_plant import LinearMode


class ParameterError(ValueError):
    """Analysis parameters violate the admissible ranges."""


class ConstructionError(RuntimeError):
    """A feasibility-tuple partition block lost the rank the argument needs."""


def discrete_lyapunov(A_cl: np.ndarray) -> np.ndarray:
    """Solve ``A' P A - P + I = 0`` for the decrescent Lyapunov matrix P.

    Direct Kronecker solve with one refinement step; residuals stay at
    machine level for stable matrices of the sizes used here.

    Raises:
        InstabilityError: spectral radius of ``A_cl`` is >= 1.
    """
    A = np.asarray(A_cl, dtype=float)
    rho = spectral_radius(A)
    if rho >= 1.0:
        raise InstabilityError(f"matrix has spectral radius {rho:.6f} >= 1")
    n = A.shape[0]
    M = np.kron(A.T, A.T) - np.eye(n * n)
    P = np.linalg.solve(M, -np.eye(n).ravel()).reshape(n, n)
    P = 0.5 * (P + P.T)
    resid = A.T @ P @ A - P + np.eye(n)
    P = P + np.linalg.solve(M, -resid.ravel()).reshape(n, n)
    return 0.5 * (P + P.T)


def _norm2(M: np.ndarray) -> float:
    return float(np.linalg.norm(M, 2))


@dataclass(frozen=True)
class ModeConstants:
    """Per-mode certificates derived from the mode's own LQR optimum."""

    label: str
    K_opt: np.ndarray
    P_lyap: np.ndarray       # A_cl' P A_cl - P + I = 0
    gamma: float             # optimal H2 value trace(P_gram) + trace(K P_gram K')
    c: float                 # sqrt(gamma - n), the transient gain bound piece
    delta: float             # largest admissible perturbation radius for this mode


def optimal_gains(modes: list[LinearMode]) -> list[np.ndarray]:
    """Model-based LQR gain of each mode (verification oracle)."""
    return [dare_lqr(mode.A, mode.B)[0] for mode in modes]


def gain_bound(modes: list[LinearMode], gains: list[np.ndarray] | None = None) -> float:
    """Uniform bound on every gain the data-driven program can return.

    Per mode: the Gramian-type Lyapunov solution of the optimal closed
    loop gives the optimal H2 value ``gamma_i``; the bound is
    ``max_i sqrt(gamma_i - n)``, which also dominates every ``||K_opt^i||``.
    """
    gains = gains if gains is not None else optimal_gains(modes)
    n = modes[0].n
    cs = []
    for mode, K in zip(modes, gains):
        P = gramian_lyapunov(mode.A + mode.B @ K)
        gamma = float(np.trace(P) + np.trace(K @ P @ K.T))
        cs.append(math.sqrt(gamma - n))
    return max(cs)


def excitation_bound(modes: list[LinearMode], gains: list[np.ndarray] | None = None) -> float:
    """Largest perturbation radius that keeps every mode's decay certificate.

    Solves, per mode, the positive root of the quadratic that the bounded
    auxiliary input contributes to the Lyapunov difference; the overall
    bound is the minimum over modes.  A mode with ``B = 0`` cannot be
    perturbed through the input and contributes ``+inf``.
    """
    gains = gains if gains is not None else optimal_gains(modes)
    lam_max = _lambda_extremes(modes, gains)[0]
    deltas = []
    for mode, K in zip(modes, gains):
        a_norm = _norm2(mode.A + mode.B @ K)
        b_norm = _norm2(mode.B)
        if b_norm == 0.0:
            deltas.append(math.inf)
            continue
        deltas.append(
            (-lam_max * a_norm + math.sqrt(lam_max**2 * a_norm**2 + lam_max / 2.0))
            / (lam_max * b_norm)
        )
    return min(deltas)


def _lambda_extremes(modes: list[LinearMode], gains: list[np.ndarray]) -> tuple[float, float]:
    lam_max = -math.inf
    lam_min = math.inf
    for mode, K in zip(modes, gains):
        P = discrete_lyapunov(mode.A + mode.B @ K)
        eigs = np.linalg.eigvalsh(P)
        lam_max = max(lam_max, float(eigs[-1]))
        lam_min = min(lam_min, float(eigs[0]))
    return lam_max, lam_min


def dwell_bound(
    modes: list[LinearMode],
    gains: list[np.ndarray] | None = None,
    delta: float = 0.0,
    T: int = 1,
    lam: float | None = None,
) -> tuple[float, float, float, float, float, float]:
    """Dwell time beyond which the switched closed loop is exponentially stable.

    Args:
        modes: ground-truth (possibly fault-transformed) subsystems.
        gains: per-mode optimal gains; recomputed if omitted.
        delta: perturbation radius in use; must not exceed the admissible bound.
        T: data window length (sets how long a transient can last).
        lam: decay rate certified per interval; defaults to the midpoint
            between the per-mode rate and 1.

    Returns:
        (tau_bar, alpha, phi, c0, growth, mu) where ``growth = max(c0, 1)``
        bounds per-step state growth and ``mu = phi * (growth / alpha)**T``.

    Raises:
        ParameterError: ``lam`` outside ``(alpha, 1)`` or ``delta`` above the
            admissible radius.
    """
    gains = gains if gains is not None else optimal_gains(modes)
    lam_max, lam_min = _lambda_extremes(modes, gains)
    alpha = math.sqrt((lam_max - 0.5) / lam_max)
    phi = math.sqrt(lam_max / lam_min)
    if lam is None:
        lam = (1.0 + alpha) / 2.0
    if not alpha < lam < 1.0:
        raise ParameterError(
            f"decay rate must satisfy alpha < lam < 1 with alpha={alpha:.6f}, "
            f"got lam={lam}"
        )
    if delta > excitation_bound(modes, gains):
        raise ParameterError(
            f"delta={delta} exceeds the admissible perturbation bound"
        )
    kappa = gain_bound(modes, gains)
    c0 = max(_norm2(mode.A) + _norm2(mode.B) * (kappa + delta) for mode in modes)
    growth = max(c0, 1.0)
    mu = phi * (growth / alpha) ** T
    tau_bar = math.log(mu) / math.log(lam / alpha)
    return tau_bar, alpha, phi, c0, growth, mu


@dataclass(frozen=True)
class StabilityConstants:
    """Everything the certificates yield, per mode and aggregated."""

    per_mode: tuple[ModeConstants, ...]
    lambda_max_P: float
    lambda_min_P: float
    kappa: float
    delta_bar: float
    alpha: float
    phi: float
    c0: float
    growth: float
    mu: float
    tau_bar: float
    delta: float
    T: int
    lam: float

    def as_dict(self) -> dict:
        return {
            "per_mode": [
                {
                    "label": mc.label,
                    "gain_norm": _norm2(mc.K_opt),
                    "h2_value": mc.gamma,
                    "transient_gain_bound": mc.c,
                    "perturbation_bound": mc.delta,
                }
                for mc in self.per_mode
            ],
            "lambda_max_P": self.lambda_max_P,
            "lambda_min_P": self.lambda_min_P,
            "kappa": self.kappa,
            "delta_bar": self.delta_bar,
            "alpha": self.alpha,
            "phi": self.phi,
            "c0": self.c0,
            "growth": self.growth,
            "mu": self.mu,
            "tau_bar": self.tau_bar,
            "delta": self.delta,
            "T": self.T,
            "lam": self.lam,
            "definitions": BOUND_DEFINITIONS,
        }


# Defining expression of every reported constant, shipped with the report
# so it stays self-describing.
BOUND_DEFINITIONS = {
    "per_mode.h2_value": "trace(P) + trace(K P K') with A_cl P A_cl' - P + I = 0",
    "per_mode.transient_gain_bound": "sqrt(h2_value - n)",
    "per_mode.perturbation_bound":
        "positive root d of lambda_max_P ||B||^2 d^2 "
        "+ 2 lambda_max_P ||A_cl|| ||B|| d - 1/2 = 0",
    "lambda_max_P": "max over modes of eig_max(P), A_cl' P A_cl - P + I = 0",
    "lambda_min_P": "min over modes of eig_min(P), same equation",
    "kappa": "max over modes of transient_gain_bound",
    "delta_bar": "min over modes of perturbation_bound",
    "alpha": "sqrt((lambda_max_P - 1/2) / lambda_max_P)",
    "phi": "sqrt(lambda_max_P / lambda_min_P)",
    "c0": "max over modes of ||A|| + ||B|| (kappa + delta)",
    "growth": "max(c0, 1)",
    "mu": "phi * (growth / alpha)^T",
    "tau_bar": "ln(mu) / ln(lam / alpha)",
}


def compute_stability_constants(
    modes: list[LinearMode],
    delta: float,
    T: int,
    lam: float | None = None,
) -> StabilityConstants:
    """Assemble the full certificate set for one mode collection."""
    gains = optimal_gains(modes)
    lam_max, lam_min = _lambda_extremes(modes, gains)
    n = modes[0].n
    per_mode = []
    for mode, K in zip(modes, gains):
        A_cl = mode.A + mode.B @ K
        P_gram = gramian_lyapunov(A_cl)
        gamma = float(np.trace(P_gram) + np.trace(K @ P_gram @ K.T))
        b_norm = _norm2(mode.B)
        a_norm = _norm2(A_cl)
        if b_norm == 0.0:
            mode_delta = math.inf
        else:
            mode_delta = (
                -lam_max * a_norm + math.sqrt(lam_max**2 * a_norm**2 + lam_max / 2.0)
            ) / (lam_max * b_norm)
        per_mode.append(
            ModeConstants(
                label=mode.label,
                K_opt=K,
                P_lyap=discrete_lyapunov(A_cl),
                gamma=gamma,
                c=math.sqrt(gamma - n),
                delta=mode_delta,
            )
        )
    tau_bar, alpha, phi, c0, growth, mu = dwell_bound(modes, gains, delta, T, lam)
    if lam is None:
        lam = (1.0 + alpha) / 2.0
    return StabilityConstants(
        per_mode=tuple(per_mode),
        lambda_max_P=lam_max,
        lambda_min_P=lam_min,
        kappa=max(mc.c for mc in per_mode),
        delta_bar=min(mc.delta for mc in per_mode),
        alpha=alpha,
        phi=phi,
        c0=c0,
        growth=growth,
        mu=mu,
        tau_bar=tau_bar,
        delta=delta,
        T=T,
        lam=lam,
    )


@dataclass(frozen=True)
class FeasibilityTuple:
    """Explicit feasible point of the per-step program on a mixed window.

    ``Y = Q + S`` with ``S`` in the kernel of the stacked data matrix, so
    the gain encoded by the tuple is still the donor mode's optimum while
    the kernel correction cancels the cross-mode contamination term
    (``Sigma``, stored for checking, is zero up to roundoff).
    """

    gamma: float
    Y: np.ndarray
    P: np.ndarray
    L: np.ndarray
    W: np.ndarray
    E: np.ndarray
    Q: np.ndarray
    S: np.ndarray
    Sigma: np.ndarray
    T_0: int
    t: int
    branch: str  # "old" or "new": which mode donated the certificate

    def residuals(self, window: DataWindow) -> dict[str, float]:
        """Re-evaluate all program constraints for this tuple on ``window``."""
        return evaluate_residuals(
            self.gamma, self.Y, self.P, self.L,
            window.input_matrix(), window.state_matrix(),
            window.shifted_state_matrix(),
        )


def build_feasibility_tuple(
    window: DataWindow,
    true_old_mode: LinearMode,
    true_new_mode: LinearMode,
    k: int,
    k_s: int,
    T_0: int | None = None,
) -> FeasibilityTuple:
    """Construct a feasible tuple for a window mixing two modes' data.

    ``k_s`` is the switch step and ``k`` the current step with
    ``t = k - k_s`` in ``[1, T-1]``.  For ``t <= T_0`` the certificate is
    donated by the pre-switch mode (the window is mostly its data) using a
    selection matrix that isolates the ``t`` newest columns; for larger
    ``t`` it is donated by the post-switch mode and the complementary
    selection.  The split point must leave at least ``N`` same-mode columns
    on the donating side, ``N - 1 <= T_0 <= T - N + 1``.

    Raises:
        ConstructionError: the stacked data matrix, or the partition block
            the kernel argument needs, is rank deficient.
        ParameterError: ``k`` outside the transient interval or ``T_0``
            outside its admissible range.
    """
    T, n, m = window.T, window.n, window.m
    big_n = pe_sample_count(n, m)
    t = k - k_s
    if not 1 <= t <= T - 1:
        raise ParameterError(
            f"step k={k} is not in the transient interval of switch k_s={k_s} "
            f"(t={t} must be in [1, {T - 1}])"
        )
    if T_0 is None:
        T_0 = big_n - 1
    if not big_n - 1 <= T_0 <= T - big_n + 1:
        raise ParameterError(
            f"split point T_0={T_0} outside [{big_n - 1}, {T - big_n + 1}]"
        )

    W = window.stacked_data()
    if numerical_rank(W) != m + n:
        raise ConstructionError("stacked data matrix is rank deficient")

    E = np.zeros((T, T))
    E[T - t:, T - t:] = np.eye(t)

    if t <= T_0:
        donor, branch = true_old_mode, "old"
        selection = E
    else:
        donor, branch = true_new_mode, "new"
        selection = E - np.eye(T)

    K_opt, _ = dare_lqr(donor.A, donor.B)
    P = gramian_lyapunov(donor.A + donor.B @ K_opt)
    Q = np.linalg.pinv(W) @ np.vstack([K_opt, np.eye(n)]) @ P

    W_head, W_tail = W[:, :T - t], W[:, T - t:]
    Q_head, Q_tail = Q[:T - t, :], Q[T - t:, :]
    if branch == "old":
        if numerical_rank(W_head) != m + n:
            raise ConstructionError(
                f"leading partition block ({T - t} columns) lost full row rank"
            )
        S_tail = -Q_tail
        S_head = np.linalg.pinv(W_head) @ (W_tail @ Q_tail)
    else:
        if numerical_rank(W_tail) != m + n:
            raise ConstructionError(
                f"trailing partition block ({t} columns) lost full row rank"
            )
        S_head = -Q_head
        S_tail = np.linalg.pinv(W_tail) @ (W_head @ Q_head)
    S = np.vstack([S_head, S_tail])
    Y = Q + S

    U = window.input_matrix()
    L = (U @ Q) @ np.linalg.solve(P, (U @ Q).T)
    L = 0.5 * (L + L.T)
    gamma = float(np.trace(P) + np.trace(L))

    delta_dyn = np.hstack([
        true_new_mode.B - true_old_mode.B,
        true_new_mode.A - true_old_mode.A,
    ])
    Sigma = delta_dyn @ W @ selection @ Y

    return FeasibilityTuple(
        gamma=gamma, Y=Y, P=P, L=L, W=W, E=E, Q=Q, S=S, Sigma=Sigma,
        T_0=T_0, t=t, branch=branch,
    )
