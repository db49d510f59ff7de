"""Sliding input/state data buffers and their rank diagnostics.

The online controller never sees a model: everything it knows about the
plant lives in three aligned, fixed-length data matrices built from the
last ``T`` input samples and the last ``T + 1`` state samples.  This
module owns those buffers, the block-Hankel construction used for the
excitation checks, and the numerically robust rank tests applied to both.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np


def min_window_length(n: int, m: int) -> int:
    """Smallest admissible buffer length ``2 * pe_sample_count(n, m) - 1``."""
    return 2 * pe_sample_count(n, m) - 1


def pe_sample_count(n: int, m: int) -> int:
    """Number of input samples needed to excite an (n, m) system: (m+1)n + m."""
    return (m + 1) * n + m


@dataclass(frozen=True)
class HankelMatrix:
    """Block-Hankel matrix of a vector signal.

    ``entries[r*sig_dim:(r+1)*sig_dim, c] == signal[r + c]`` for every block
    row ``r < order`` and column ``c < depth``.
    """

    order: int
    depth: int
    sig_dim: int
    entries: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape


def build_hankel(signal, order: int) -> HankelMatrix:
    """Stack ``order`` consecutive samples of ``signal`` into block columns.

    Args:
        signal: sequence of equal-length vectors (scalars are treated as
            1-vectors), length ``Nseq``.
        order: number of stacked samples per column, >= 1.

    Returns:
        HankelMatrix of shape ``(sig_dim * order, Nseq - order + 1)``.

    Raises:
        ValueError: if the signal is shorter than ``order``.
    """
    sig = np.asarray(signal, dtype=float)
    if sig.ndim == 1:
        sig = sig[:, None]
    if sig.ndim != 2:
        raise ValueError(f"signal must be a sequence of vectors, got ndim={sig.ndim}")
    nseq, sig_dim = sig.shape
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    if nseq < order:
        raise ValueError(
            f"signal has {nseq} samples, too short for order {order}"
        )
    depth = nseq - order + 1
    entries = np.empty((sig_dim * order, depth))
    for c in range(depth):
        entries[:, c] = sig[c:c + order, :].ravel()
    return HankelMatrix(order=order, depth=depth, sig_dim=sig_dim, entries=entries)


def numerical_rank(matrix: np.ndarray, tol: float | str = "auto") -> int:
    """Count singular values of ``matrix`` above ``tol``.

    ``tol="auto"`` uses ``max(rows, cols) * eps * sigma_max``, the standard
    scale-relative threshold.
    """
    mat = np.asarray(matrix, dtype=float)
    if mat.size == 0:
        raise ValueError("matrix must be nonempty")
    sv = np.linalg.svd(mat, compute_uv=False)
    if tol == "auto":
        tol = max(mat.shape) * np.finfo(float).eps * sv[0]
    elif tol < 0:
        raise ValueError(f"tol must be nonnegative, got {tol}")
    return int(np.count_nonzero(sv > tol))


class DataWindow:
    """Ring buffer of the last ``T`` inputs and ``T + 1`` states.

    At step ``k`` the buffer holds ``u(k-T) .. u(k-1)`` and
    ``x(k-T) .. x(k)``; pushing a new ``(u, x_next)`` pair drops the oldest
    sample of each so the length never changes.  Dense snapshots for the
    rank tests and the conic program are produced on demand.
    """

    def __init__(self, inputs, states, current_time: int = 0):
        inputs = [np.asarray(u, dtype=float).reshape(-1) for u in inputs]
        states = [np.asarray(x, dtype=float).reshape(-1) for x in states]
        if not inputs:
            raise ValueError("window needs at least one input sample")
        if len(states) != len(inputs) + 1:
            raise ValueError(
                f"need exactly one more state than input samples, got "
                f"{len(states)} states for {len(inputs)} inputs"
            )
        self.T = len(inputs)
        self.m = inputs[0].shape[0]
        self.n = states[0].shape[0]
        if any(u.shape[0] != self.m for u in inputs):
            raise ValueError("input samples have inconsistent dimensions")
        if any(x.shape[0] != self.n for x in states):
            raise ValueError("state samples have inconsistent dimensions")
        if self.T < min_window_length(self.n, self.m):
            raise ValueError(
                f"window length {self.T} below minimum "
                f"{min_window_length(self.n, self.m)} for n={self.n}, m={self.m}"
            )
        self._inputs = deque(inputs, maxlen=self.T)
        self._states = deque(states, maxlen=self.T + 1)
        self.current_time = current_time

    def copy(self) -> "DataWindow":
        return DataWindow(list(self._inputs), list(self._states), self.current_time)

    @property
    def inputs(self) -> list[np.ndarray]:
        return list(self._inputs)

    @property
    def states(self) -> list[np.ndarray]:
        return list(self._states)

    def input_matrix(self) -> np.ndarray:
        """m x T matrix with columns u(k-T) .. u(k-1)."""
        return np.array(self._inputs).T

    def state_matrix(self) -> np.ndarray:
        """n x T matrix with columns x(k-T) .. x(k-1)."""
        return np.array([self._states[i] for i in range(self.T)]).T

    def shifted_state_matrix(self) -> np.ndarray:
        """n x T matrix with columns x(k-T+1) .. x(k)."""
        return np.array([self._states[i] for i in range(1, self.T + 1)]).T

    def stacked_data(self) -> np.ndarray:
        """(m + n) x T matrix [inputs; states], the regressor for every check."""
        return np.vstack([self.input_matrix(), self.state_matrix()])

    def latest_state(self) -> np.ndarray:
        return self._states[-1].copy()

    def input_suffix(self, length: int) -> list[np.ndarray]:
        """The most recent ``length`` input samples, oldest first."""
        if length > self.T:
            raise ValueError(f"suffix length {length} exceeds window length {self.T}")
        return [self._inputs[i].copy() for i in range(self.T - length, self.T)]


def push_sample(window: DataWindow, u, x_next) -> DataWindow:
    """Advance ``window`` one step: append (u, x_next), drop the oldest pair.

    Returns a new window; the argument is left untouched.
    """
    u = np.asarray(u, dtype=float).reshape(-1)
    x_next = np.asarray(x_next, dtype=float).reshape(-1)
    if u.shape[0] != window.m:
        raise ValueError(f"input has dimension {u.shape[0]}, expected {window.m}")
    if x_next.shape[0] != window.n:
        raise ValueError(f"state has dimension {x_next.shape[0]}, expected {window.n}")
    out = window.copy()
    out._inputs.append(u)
    out._states.append(x_next)
    out.current_time = window.current_time + 1
    return out


def rank_condition_holds(window: DataWindow, tol: float | str = "auto") -> bool:
    """True iff the stacked (m+n) x T input/state matrix has full row rank."""
    return numerical_rank(window.stacked_data(), tol) == window.m + window.n
