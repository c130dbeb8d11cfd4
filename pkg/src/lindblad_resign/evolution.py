"""Evaluate, integrate and verify time-dependent Lindblad generators."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .eigenflow import as_stack, time_derivative
from .errors import DimMismatch, GridMismatch, StepBlowup
from .linalg import DensityState, anticommutator, as_matrix, commutator, dagger, max_norm

BLOWUP_NORM = 10.0


def lindblad_rhs(rho, H, terms) -> np.ndarray:
    """``-i[H, rho] + sum_k gamma_k (L rho L^dagger - 1/2 {L^dagger L, rho})``.

    ``terms`` is an iterable of ``(L, gamma)`` pairs.
    """
    rho = as_matrix(rho.matrix if isinstance(rho, DensityState) else rho)
    H = as_matrix(H)
    if H.shape != rho.shape:
        raise DimMismatch(f"H has shape {H.shape}, rho has {rho.shape}")
    out = -1j * commutator(H, rho)
    for L, gamma in terms:
        L = as_matrix(L)
        if L.shape != rho.shape:
            raise DimMismatch(f"jump operator has shape {L.shape}, rho has {rho.shape}")
        LdL = dagger(L) @ L
        out = out + gamma * (L @ rho @ dagger(L) - 0.5 * anticommutator(LdL, rho))
    return out


def _kron(A, B):
    d = A.shape[0]
    return (A[:, None, :, None] * B[None, :, None, :]).reshape(d * d, d * d)


def liouvillian(H, terms) -> np.ndarray:
    """Superoperator of :func:`lindblad_rhs` acting on row-major ``rho.ravel()``."""
    H = as_matrix(H)
    eye = np.eye(H.shape[0])
    K = -1j * H
    S = 0.0
    for L, gamma in terms:
        L = as_matrix(L)
        K = K - 0.5 * gamma * (dagger(L) @ L)
        S = S + gamma * _kron(L, L.conj())
    # rho -> K rho + rho K^dagger + sum_k gamma_k L rho L^dagger
    return S + _kron(K, eye) + _kron(eye, K.conj())


@dataclass(frozen=True)
class LindbladGenerator:
    """A Lindblad generator sampled on a time grid.

    ``terms[n]`` is a tuple of ``(operator, rate)`` pairs at ``times[n]``.
    Between grid points the generator is the linear blend of the two
    endpoint generators, sampled at each integration substep's midpoint
    (``interpolation="linear"``), or held at its left value
    (``interpolation="constant"``).  ``excluded`` flags grid points whose
    rates are singular or capped.
    """

    times: np.ndarray
    H: np.ndarray
    terms: tuple
    interpolation: str = "linear"
    excluded: np.ndarray | None = None
    specs: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        H = np.asarray(self.H, dtype=complex)
        if H.ndim != 3 or H.shape[0] != times.shape[0] or len(self.terms) != times.shape[0]:
            raise GridMismatch("times, H and terms must have one entry per grid point")
        if np.any(np.diff(times) <= 0):
            raise GridMismatch("generator grid must be strictly increasing")
        herr = max_norm(H - dagger(H))
        if herr > 1e-8:
            raise ValueError(f"generator Hamiltonian not Hermitian ({herr:.3e})")
        if self.interpolation not in ("linear", "constant"):
            raise ValueError(f"unknown interpolation {self.interpolation!r}")
        excluded = (
            np.zeros(times.shape[0], bool)
            if self.excluded is None
            else np.asarray(self.excluded, dtype=bool)
        )
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "terms", tuple(tuple(tp) for tp in self.terms))
        object.__setattr__(self, "excluded", excluded)

    @property
    def dim(self) -> int:
        return self.H.shape[1]

    def __len__(self) -> int:
        return self.times.shape[0]

    def rhs(self, n: int, rho) -> np.ndarray:
        return lindblad_rhs(rho, self.H[n], self.terms[n])

    def liouvillians(self) -> np.ndarray:
        return np.array([liouvillian(self.H[n], self.terms[n]) for n in range(len(self))])


def _rk4_segment(x, S0, S1, t0, t1, substeps, interpolation, d):
    h = (t1 - t0) / substeps
    for s in range(substeps):
        if interpolation == "linear":
            w = (s + 0.5) / substeps
            S = (1.0 - w) * S0 + w * S1
        else:
            S = S0
        k1 = S @ x
        k2 = S @ (x + 0.5 * h * k1)
        k3 = S @ (x + 0.5 * h * k2)
        k4 = S @ (x + h * k3)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        rho = x.reshape(d, d)
        x = (0.5 * (rho + rho.conj().T)).ravel()
        norm = np.max(np.abs(x))
        if not np.isfinite(norm) or norm > BLOWUP_NORM:
            raise StepBlowup(t0 + (s + 1) * h, norm)
    return x


def integrate(rho0, gen: LindbladGenerator, substeps: int = 1, start: int = 0, stop=None,
              liouvillians=None) -> np.ndarray:
    """Classical RK4 on the generator's grid.

    Returns the states at ``gen.times[start:stop + 1]`` as an ``(M, d, d)``
    array, beginning with ``rho0``.  States are re-symmetrized after every
    step; the trace is not renormalized.

    Raises
    ------
    StepBlowup
        If any entry exceeds 10 in magnitude.
    """
    rho0 = as_matrix(rho0.matrix if isinstance(rho0, DensityState) else rho0)
    d = gen.dim
    if rho0.shape != (d, d):
        raise DimMismatch(f"initial state {rho0.shape} for a {d}-level generator")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    stop = len(gen) - 1 if stop is None else stop
    S = gen.liouvillians() if liouvillians is None else liouvillians
    x = rho0.ravel().copy()
    out = [rho0.copy()]
    for n in range(start, stop):
        x = _rk4_segment(x, S[n], S[n + 1], gen.times[n], gen.times[n + 1], substeps,
                         gen.interpolation, d)
        out.append(x.reshape(d, d).copy())
    return np.array(out)


@dataclass(frozen=True)
class VerificationReport:
    """Closed-loop comparison of a generator against the trajectory it came from.

    Per-point arrays hold NaN where a point was excluded from the check.
    """

    max_state_error: float
    max_rhs_error: float
    trace_drift: float
    trace_drift_rate: float
    min_eigenvalue: float
    times: np.ndarray
    state_error: np.ndarray
    rhs_error: np.ndarray
    excluded: np.ndarray
    excluded_intervals: list

    def passed(self, bound: float) -> bool:
        return bool(self.max_state_error <= bound)


def flagged_intervals(times, mask) -> list:
    """Collapse a boolean mask into ``(t_start, t_end)`` windows, widened by one grid point."""
    times = np.asarray(times)
    mask = np.asarray(mask, bool)
    out = []
    n = 0
    N = mask.shape[0]
    while n < N:
        if mask[n]:
            m = n
            while m + 1 < N and mask[m + 1]:
                m += 1
            out.append((float(times[max(n - 1, 0)]), float(times[min(m + 1, N - 1)])))
            n = m + 1
        else:
            n += 1
    return out


def _segments(excluded):
    # Runs of consecutive grid points joined by intervals with no flagged endpoint.
    N = excluded.shape[0]
    segs = []
    n = 0
    while n < N:
        if excluded[n]:
            n += 1
            continue
        m = n
        while m + 1 < N and not excluded[m + 1]:
            m += 1
        segs.append((n, m))
        n = m + 1
    return segs


def verify_reconstruction(times, states, gen: LindbladGenerator, rhodots=None,
                          substeps: int = 1, exclude=None) -> VerificationReport:
    """Check that ``gen`` reproduces the sampled trajectory.

    * rhs error: ``max|L_n(rho_n) - rho_dot_n|`` with ``rho_dot`` from central
      differences unless given;
    * state error: re-integrate from the input state and compare.

    Flagged points (``gen.excluded`` or ``exclude``) are skipped and
    integration restarts from the input state after each flagged window.
    """
    rhos = as_stack(states)
    times = np.asarray(times, dtype=float)
    if times.shape != gen.times.shape or not np.allclose(times, gen.times, rtol=1e-12, atol=0):
        raise GridMismatch("trajectory grid does not match generator grid")
    if rhos.shape[0] != times.shape[0] or rhos.shape[1] != gen.dim:
        raise GridMismatch("trajectory shape does not match generator")
    excluded = gen.excluded.copy()
    if exclude is not None:
        excluded |= np.asarray(exclude, bool)
    if rhodots is None:
        rhodots = time_derivative(times, rhos)
    S = gen.liouvillians()
    N, d = rhos.shape[0], gen.dim

    rhs = np.einsum("nij,nj->ni", S, rhos.reshape(N, d * d)).reshape(N, d, d)
    rhs_err = np.max(np.abs(rhs - rhodots), axis=(1, 2))
    rhs_err[excluded] = np.nan

    state_err = np.full(N, np.nan)
    drift = 0.0
    lmin = np.inf
    span = 0.0
    for a, b in _segments(excluded):
        traj = integrate(rhos[a], gen, substeps=substeps, start=a, stop=b, liouvillians=S)
        state_err[a:b + 1] = np.max(np.abs(traj - rhos[a:b + 1]), axis=(1, 2))
        tr = np.trace(traj, axis1=1, axis2=2)
        drift = max(drift, float(np.max(np.abs(tr - tr[0]))))
        lmin = min(lmin, float(np.min(np.linalg.eigvalsh(traj))))
        span += times[b] - times[a]

    def _max(a):
        return float(np.nanmax(a)) if np.any(np.isfinite(a)) else float("nan")

    return VerificationReport(
        max_state_error=_max(state_err),
        max_rhs_error=_max(rhs_err),
        trace_drift=drift,
        trace_drift_rate=drift / span if span > 0 else 0.0,
        min_eigenvalue=float(lmin) if np.isfinite(lmin) else float("nan"),
        times=times,
        state_error=state_err,
        rhs_error=rhs_err,
        excluded=excluded,
        excluded_intervals=flagged_intervals(times, excluded),
    )
