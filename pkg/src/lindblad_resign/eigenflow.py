"""Smooth eigendecomposition tracking of a density-matrix trajectory.

A trajectory ``rho(t_n)`` is diagonalized point by point, then eigenvector
columns are matched across consecutive grid points by maximal overlap and
rephased so that ``<psi_k(t_n)|psi_k(t_{n+1})>`` is real and positive (a
discrete parallel transport).  From the tracked frames we build

* the Hamiltonian ``H = i sum_k |d/dt psi_k><psi_k|`` that carries the
  eigenvectors along, and
* the eigenvalue flux ``f = diag(U^dagger (rho_dot + i[H, rho]) U)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import (
    DegenerateTrackingFailure,
    DimMismatch,
    InsufficientStencil,
    NonHermitianInput,
    OffDiagonalResidualTooLarge,
    TraceLeak,
)
from .linalg import DensityState, commutator, dagger, max_norm

TRACE_TOL = 1e-8


@dataclass(frozen=True)
class EigenFrame:
    """Tracked eigendecomposition at one grid point.

    ``p`` is in tracked order (not sorted); column ``k`` of ``U`` belongs to
    ``p[k]``.  ``phase[k]`` is the accumulated phase of column ``k`` relative
    to the anchor-component gauge (see :func:`reference_gauge`).
    """

    t: float
    p: np.ndarray
    U: np.ndarray
    phase: np.ndarray

    @property
    def dim(self) -> int:
        return self.p.shape[0]


@dataclass(frozen=True)
class FrameDerivatives:
    f: np.ndarray
    Udot: np.ndarray | None
    offdiag_residual: float


def as_stack(states) -> np.ndarray:
    """Convert a sequence of DensityState / arrays into an ``(N, d, d)`` array."""
    if isinstance(states, np.ndarray) and states.ndim == 3:
        stack = states.astype(complex, copy=False)
    else:
        stack = np.array(
            [s.matrix if isinstance(s, DensityState) else np.asarray(s) for s in states],
            dtype=complex,
        )
    if stack.ndim != 3 or stack.shape[1] != stack.shape[2]:
        raise DimMismatch(f"expected a stack of square matrices, got shape {stack.shape}")
    return stack


def _check_grid(times, n_points: int) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.shape[0] != n_points:
        raise DimMismatch(f"{times.shape[0]} times for {n_points} states")
    if n_points < 3:
        raise InsufficientStencil(f"need at least 3 grid points, got {n_points}")
    if np.any(np.diff(times) <= 0):
        raise ValueError("time grid must be strictly increasing")
    return times


def stencil(times, n: int):
    """Three-point second-order derivative stencil at grid index ``n``.

    Central at interior points, one-sided at the two endpoints; valid on
    non-uniform grids.  Returns ``(indices, weights)``.
    """
    t = np.asarray(times, dtype=float)
    N = t.shape[0]
    if N < 3:
        raise InsufficientStencil(f"need at least 3 grid points, got {N}")
    if n < 0:
        n += N
    if n == 0:
        h1, h2 = t[1] - t[0], t[2] - t[1]
        w = [-(2 * h1 + h2) / (h1 * (h1 + h2)), (h1 + h2) / (h1 * h2), -h1 / (h2 * (h1 + h2))]
        return np.array([0, 1, 2]), np.array(w)
    if n == N - 1:
        h1, h2 = t[N - 2] - t[N - 3], t[N - 1] - t[N - 2]
        w = [h2 / (h1 * (h1 + h2)), -(h1 + h2) / (h1 * h2), (h1 + 2 * h2) / (h2 * (h1 + h2))]
        return np.array([N - 3, N - 2, N - 1]), np.array(w)
    h1, h2 = t[n] - t[n - 1], t[n + 1] - t[n]
    w = [-h2 / (h1 * (h1 + h2)), (h2 - h1) / (h1 * h2), h1 / (h2 * (h1 + h2))]
    return np.array([n - 1, n, n + 1]), np.array(w)


def time_derivative(times, values) -> np.ndarray:
    """Second-order finite-difference derivative along axis 0 (same stencil as :func:`stencil`)."""
    values = np.asarray(values)
    times = np.asarray(times, dtype=float)
    if values.shape[0] < 3:
        raise InsufficientStencil(f"need at least 3 grid points, got {values.shape[0]}")
    return np.gradient(values, times, axis=0, edge_order=2)


def _align_degenerate(w, V, U_prev, degeneracy_tol):
    # Inside a degenerate eigenspace eigh returns an arbitrary basis; rotate it
    # onto the previous frame (orthogonal Procrustes) so matching stays stable.
    d = w.shape[0]
    k = 0
    while k < d:
        m = k + 1
        while m < d and w[m] - w[m - 1] <= degeneracy_tol:
            m += 1
        if m - k > 1:
            Vc = V[:, k:m]
            P = dagger(Vc) @ U_prev
            chosen = np.sort(np.argsort(-np.linalg.norm(P, axis=0))[: m - k])
            X, _, Yh = np.linalg.svd(P[:, chosen])
            V[:, k:m] = Vc @ (X @ Yh)
        k = m
    return V


def track_frames(times, states, match_tol: float = 1e-6, degeneracy_tol: float = 1e-10):
    """Diagonalize every state and connect the eigenvectors smoothly in time.

    Parameters
    ----------
    times : (N,) array_like
        Strictly increasing grid, ``N >= 3``.
    states : sequence of DensityState or (N, d, d) array
    match_tol : float
        Two candidate overlaps closer than this make the matching ambiguous.
    degeneracy_tol : float
        Eigenvalues closer than this are treated as one degenerate eigenspace.

    Returns
    -------
    list of EigenFrame

    Raises
    ------
    DegenerateTrackingFailure
        If the continuation of some eigenvector cannot be decided.
    """
    rhos = as_stack(states)
    times = _check_grid(times, rhos.shape[0])
    scale = max(1.0, max_norm(rhos))
    herr = max_norm(rhos - dagger(rhos))
    if herr > 1e-10 * scale:
        raise NonHermitianInput(f"trajectory is not Hermitian: max|M - M^dagger| = {herr:.3e}")
    W, V = np.linalg.eigh(0.5 * (rhos + dagger(rhos)))
    N, d = W.shape

    # First frame: order columns to sit closest to the computational basis.
    _, cols = linear_sum_assignment(-np.abs(V[0]))
    U = V[0][:, cols]
    p = W[0][cols]
    diag = np.diag(U).copy()
    diag[np.abs(diag) == 0] = 1.0
    U = U * (np.conj(diag) / np.abs(diag))
    Us = [U]
    ps = [p]
    for n in range(1, N):
        Vn = _align_degenerate(W[n], V[n].copy(), Us[-1], degeneracy_tol)
        overlap = dagger(Us[-1]) @ Vn
        mag = np.abs(overlap)
        _, cols = linear_sum_assignment(-mag)
        best = mag[np.arange(d), cols]
        rest = mag.copy()
        rest[np.arange(d), cols] = -np.inf
        if np.any(rest.max(axis=1) >= best - match_tol):
            raise DegenerateTrackingFailure(times[n], n, mag)
        c = overlap[np.arange(d), cols]
        Us.append(Vn[:, cols] * (np.conj(c) / np.abs(c)))
        ps.append(W[n][cols])

    Ustack = np.array(Us)
    anchors = np.argmax(np.abs(Ustack[0]), axis=0)
    phase = np.unwrap(np.angle(Ustack[:, anchors, np.arange(d)]), axis=0)
    return [
        EigenFrame(float(times[n]), ps[n], Ustack[n], phase[n] - phase[0])
        for n in range(N)
    ]


def frame_times(frames) -> np.ndarray:
    return np.array([fr.t for fr in frames])


def frame_unitaries(frames) -> np.ndarray:
    return np.array([fr.U for fr in frames])


def reference_gauge(frames):
    """Rephase tracked columns so a fixed anchor component is real and positive.

    This is a smooth but non-optimized gauge: it does not remove the
    geometric phase, so its Hamiltonian carries extra terms diagonal in the
    eigenbasis.  Returned frames share ``p`` and carry zero ``phase``.
    """
    U = frame_unitaries(frames)
    d = U.shape[1]
    anchors = np.argmax(np.abs(U[0]), axis=0)
    comp = U[:, anchors, np.arange(d)]
    rot = np.conj(comp) / np.abs(comp)
    U = U * rot[:, None, :]
    return [EigenFrame(fr.t, fr.p, U[n], np.zeros(d)) for n, fr in enumerate(frames)]


def frame_velocity(frames) -> np.ndarray:
    """Finite-difference ``dU/dt`` for every frame, shape ``(N, d, d)``."""
    return time_derivative(frame_times(frames), frame_unitaries(frames))


def _hamiltonian(U, Udot):
    H = 1j * Udot @ dagger(U)
    return 0.5 * (H + dagger(H)), max_norm(H - dagger(H))


def build_hamiltonian(frames, n: int, gauge: str = "parallel") -> np.ndarray:
    """Hamiltonian that transports the eigenvectors at grid index ``n``.

    ``gauge="parallel"`` uses the tracked (phase-fixed) columns; ``"raw"``
    uses the anchor-component gauge of :func:`reference_gauge`.  The result
    is symmetrized, ``H <- (H + H^dagger)/2``.
    """
    if len(frames) < 3:
        raise InsufficientStencil(f"need at least 3 frames, got {len(frames)}")
    if gauge == "raw":
        frames = reference_gauge(frames)
    elif gauge != "parallel":
        raise ValueError(f"unknown gauge {gauge!r}")
    idx, w = stencil(frame_times(frames), n)
    Udot = sum(wk * frames[i].U for i, wk in zip(idx, w))
    return _hamiltonian(frames[n].U, Udot)[0]


def build_hamiltonians(frames, gauge: str = "parallel", return_residual: bool = False):
    """Vectorized :func:`build_hamiltonian` over the whole grid.

    With ``return_residual=True`` also returns the per-point
    ``max|H - H^dagger|`` before symmetrization and the max-norm of dU/dt.
    """
    if len(frames) < 3:
        raise InsufficientStencil(f"need at least 3 frames, got {len(frames)}")
    if gauge == "raw":
        frames = reference_gauge(frames)
    elif gauge != "parallel":
        raise ValueError(f"unknown gauge {gauge!r}")
    U = frame_unitaries(frames)
    Udot = time_derivative(frame_times(frames), U)
    H = 1j * Udot @ dagger(U)
    Hsym = 0.5 * (H + dagger(H))
    if not return_residual:
        return Hsym
    resid = np.max(np.abs(H - dagger(H)), axis=(1, 2))
    scale = np.max(np.abs(Udot), axis=(1, 2))
    return Hsym, resid, scale


def rotating_frame_derivative(rho, rhodot, frame: EigenFrame, H, tol_offdiag=None, Udot=None):
    """Eigenvalue flux ``f`` in the co-moving diagonal frame.

    Computes ``M = U^dagger (rho_dot + i[H, rho]) U``; its diagonal is ``f``
    and its off-diagonal part must vanish up to ``tol_offdiag`` (default
    ``1e-6 * max(1, max|rho_dot|)``).  A trace leak below ``1e-8`` is
    removed by subtracting the mean.
    """
    rho = rho.matrix if isinstance(rho, DensityState) else np.asarray(rho, dtype=complex)
    rhodot = np.asarray(rhodot, dtype=complex)
    H = np.asarray(H, dtype=complex)
    if not (rho.shape == rhodot.shape == H.shape == frame.U.shape):
        raise DimMismatch("rho, rho_dot, H and frame must share one dimension")
    if tol_offdiag is None:
        tol_offdiag = 1e-6 * max(1.0, max_norm(rhodot))
    U = frame.U
    M = dagger(U) @ (rhodot + 1j * commutator(H, rho)) @ U
    f = M.diagonal().real.copy()
    off = max_norm(M - np.diag(M.diagonal()))
    if off > tol_offdiag:
        raise OffDiagonalResidualTooLarge(frame.t, off, tol_offdiag)
    leak = f.sum()
    if abs(leak) > TRACE_TOL:
        raise TraceLeak(f"sum of eigenvalue rates {leak:.3e} at t={frame.t}")
    f -= leak / f.shape[0]
    return FrameDerivatives(f, Udot, off)


@dataclass
class FrameFlow:
    """Everything the rate synthesis needs from a trajectory, on its grid."""

    times: np.ndarray
    rhos: np.ndarray
    rhodots: np.ndarray
    frames: list
    H: np.ndarray
    f: np.ndarray
    offdiag_residual: np.ndarray
    hermiticity_residual: np.ndarray
    udot_scale: np.ndarray

    @property
    def p(self) -> np.ndarray:
        return np.array([fr.p for fr in self.frames])


def frame_flow(times, states, rhodots=None, tol_offdiag=None, gauge: str = "parallel") -> FrameFlow:
    """Track frames, build H and compute the eigenvalue flux on the whole grid.

    Grid-wide version of :func:`rotating_frame_derivative`; ``rhodots``
    defaults to central finite differences of ``states``.
    """
    rhos = as_stack(states)
    times = np.asarray(times, dtype=float)
    frames = track_frames(times, rhos)
    H, herm, scale = build_hamiltonians(frames, gauge=gauge, return_residual=True)
    if rhodots is None:
        rhodots = time_derivative(times, rhos)
    rhodots = as_stack(rhodots)
    if rhodots.shape != rhos.shape:
        raise DimMismatch(f"rho_dot has shape {rhodots.shape}, rho has {rhos.shape}")
    U = frame_unitaries(frames)
    M = dagger(U) @ (rhodots + 1j * (H @ rhos - rhos @ H)) @ U
    f = np.real(np.diagonal(M, axis1=1, axis2=2)).copy()
    d = f.shape[1]
    off = np.max(np.abs(M * (1 - np.eye(d))), axis=(1, 2))
    if tol_offdiag is None:
        tol = 1e-6 * np.maximum(1.0, np.max(np.abs(rhodots), axis=(1, 2)))
    else:
        tol = np.full(len(frames), float(tol_offdiag))
    bad = np.flatnonzero(off > tol)
    if bad.size:
        n = bad[0]
        raise OffDiagonalResidualTooLarge(times[n], off[n], tol[n])
    leak = f.sum(axis=1)
    bad = np.flatnonzero(np.abs(leak) > TRACE_TOL)
    if bad.size:
        n = bad[0]
        raise TraceLeak(f"sum of eigenvalue rates {leak[n]:.3e} at t={times[n]}")
    f -= leak[:, None] / d
    return FrameFlow(times, rhos, rhodots, frames, H, f, off, herm, scale)
