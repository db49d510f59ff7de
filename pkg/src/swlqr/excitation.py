"""Persistence-of-excitation checks and guarded auxiliary-input selection.

Pure feedback ``u = Kx`` can drain the richness out of closed-loop data, so
every applied input carries a bounded additive term ``eps * ||x||``.  A
finite candidate sweep over ``{0, +d*e_i, -d*e_i}`` is guaranteed to
restore full Hankel rank whenever the trailing input sequence was exciting
to begin with; a uniform random draw is tried first when the policy asks
for it, matching how the simulation studies perturb the loop.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .data_window import DataWindow, build_hankel, numerical_rank, pe_sample_count


class ExcitationError(RuntimeError):
    """No admissible auxiliary input restores excitation.

    Under the stated preconditions this cannot happen; seeing it means the
    window was already stale (non-exciting) when the step started.
    """


class PolicyMode(enum.Enum):
    GUARDED = "guarded"
    RANDOM_THEN_GUARDED = "random-then-guarded"


@dataclass(frozen=True)
class ExcitationPolicy:
    """How the per-step auxiliary input is drawn.

    ``delta`` bounds the perturbation (``||eps|| <= delta`` always);
    ``rng_seed`` feeds the uniform draw used by RANDOM_THEN_GUARDED.
    """

    delta: float
    mode: PolicyMode = PolicyMode.RANDOM_THEN_GUARDED
    rng_seed: int = 0

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")


@dataclass(frozen=True)
class ExcitationReport:
    """Diagnostics of one selection step.

    ``candidate_used`` is the index into :func:`epsilon_candidates`,
    ``"random"`` for a successful uniform draw, or ``None`` when the state
    was exactly zero and the check was skipped.
    """

    pe_order_checked: int
    suffix_rank: int | None
    target_rank: int
    candidate_used: int | str | None


def is_persistently_exciting(signal, order: int) -> bool:
    """True iff the block-Hankel matrix of ``signal`` has full row rank.

    Requires the signal to be long enough for full rank to be possible,
    i.e. at least ``(sig_dim + 1) * order - 1`` samples.
    """
    sig = np.asarray(signal, dtype=float)
    if sig.ndim == 1:
        sig = sig[:, None]
    nseq, sig_dim = sig.shape
    needed = (sig_dim + 1) * order - 1
    if nseq < needed:
        raise ValueError(
            f"sequence of length {nseq} cannot be persistently exciting of "
            f"order {order} (needs at least {needed} samples)"
        )
    hank = build_hankel(sig, order)
    return numerical_rank(hank.entries) == sig_dim * order


def epsilon_candidates(delta: float, m: int) -> list[np.ndarray]:
    """Deterministic sweep order: zero, then +delta*e_i, then -delta*e_i.

    The constructive argument behind the sweep guarantees success within
    the first ``m + 1`` entries; the negated unit vectors are appended for
    numerical headroom.
    """
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    eye = np.eye(m)
    cands = [np.zeros(m)]
    cands += [delta * eye[i] for i in range(m)]
    cands += [-delta * eye[i] for i in range(m)]
    return cands


def _suffix_is_exciting(tail: list[np.ndarray], u: np.ndarray, order: int, m: int) -> tuple[bool, int]:
    hank = build_hankel(tail + [u], order)
    rank = numerical_rank(hank.entries)
    return rank == m * order, rank


def select_input(
    window: DataWindow,
    K: np.ndarray,
    x: np.ndarray,
    policy: ExcitationPolicy,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, np.ndarray, ExcitationReport]:
    """Pick ``u = K x + eps * ||x||`` so the updated input tail stays exciting.

    The trailing ``N - 1`` inputs of the window (``N = pe_sample_count``)
    plus the new ``u`` must form a sequence that is persistently exciting
    of order ``n + 1``.  Candidates are tried in :func:`epsilon_candidates`
    order; the RANDOM_THEN_GUARDED policy first tries a uniform draw from
    ``[-delta, delta]^m`` projected onto the delta-ball.

    A zero state is returned unchanged (``u = eps = 0``) and the check is
    skipped: no richness can be added at the equilibrium.

    Raises:
        ExcitationError: if no candidate restores excitation (stale window).
    """
    K = np.asarray(K, dtype=float)
    x = np.asarray(x, dtype=float).reshape(-1)
    n, m = window.n, window.m
    order = n + 1
    target = m * order
    norm_x = float(np.linalg.norm(x))
    if norm_x == 0.0:
        zero = np.zeros(m)
        report = ExcitationReport(
            pe_order_checked=order, suffix_rank=None,
            target_rank=target, candidate_used=None,
        )
        return zero, zero, report

    big_n = pe_sample_count(n, m)
    tail = window.input_suffix(big_n - 1)
    feedback = K @ x

    if policy.mode is PolicyMode.RANDOM_THEN_GUARDED:
        if rng is None:
            raise ValueError("RANDOM_THEN_GUARDED needs an explicit rng")
        eps = rng.uniform(-policy.delta, policy.delta, size=m)
        eps_norm = float(np.linalg.norm(eps))
        if eps_norm > policy.delta:
            eps *= policy.delta / eps_norm
        u = feedback + eps * norm_x
        ok, rank = _suffix_is_exciting(tail, u, order, m)
        if ok:
            report = ExcitationReport(order, rank, target, "random")
            return u, eps, report

    for idx, eps in enumerate(epsilon_candidates(policy.delta, m)):
        u = feedback + eps * norm_x
        ok, rank = _suffix_is_exciting(tail, u, order, m)
        if ok:
            report = ExcitationReport(order, rank, target, idx)
            return u, eps, report

    raise ExcitationError(
        "no auxiliary input in the candidate sweep restores persistence of "
        "excitation; the window's input tail was not exciting to begin with"
    )
