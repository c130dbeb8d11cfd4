"""Analytic trajectories used as golden references and demo inputs.

Two-level models use the basis ordering (excited, ground), so ``rho11`` is
the excited-state population and ``sigma_minus = |2><1|``.
"""

from __future__ import annotations

import inspect
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidDensity, InvalidInitialState, SingularAt, UnknownModel
from .evolution import liouvillian
from .linalg import SIGMA_MINUS, SIGMA_Z, dagger, validate_density


@dataclass(frozen=True)
class JCParams:
    """Resonant Jaynes-Cummings atom with the cavity starting in vacuum.

    hbar = Omega = 1 and omega_c = omega_a = omega.
    """

    omega: float = 1.0
    rho11: float = 1.0
    rho12: complex = 0.0

    def __post_init__(self):
        try:
            validate_density(self.initial(), tol=1e-12)
        except InvalidDensity as exc:
            raise InvalidInitialState(f"invalid JC initial state: {exc}") from exc

    def initial(self) -> np.ndarray:
        r12 = complex(self.rho12)
        return np.array([[self.rho11, r12], [r12.conjugate(), 1 - self.rho11]], dtype=complex)


def _jc_matrix(params: JCParams, t):
    t = np.asarray(t, dtype=float)
    c = np.cos(t / 2)
    r12 = complex(params.rho12)
    rho = np.empty(t.shape + (2, 2), dtype=complex)
    rho[..., 0, 0] = params.rho11 * c**2
    rho[..., 0, 1] = r12 * c * np.exp(-1j * params.omega * t)
    rho[..., 1, 0] = np.conj(rho[..., 0, 1])
    rho[..., 1, 1] = 1 - params.rho11 * c**2
    return rho


def _jc_derivative(params: JCParams, t):
    t = np.asarray(t, dtype=float)
    c, s = np.cos(t / 2), np.sin(t / 2)
    r12 = complex(params.rho12)
    out = np.empty(t.shape + (2, 2), dtype=complex)
    out[..., 0, 0] = -params.rho11 * c * s
    out[..., 0, 1] = r12 * (-0.5 * s - 1j * params.omega * c) * np.exp(-1j * params.omega * t)
    out[..., 1, 0] = np.conj(out[..., 0, 1])
    out[..., 1, 1] = params.rho11 * c * s
    return out


def jc_exact(params: JCParams, t: float):
    """Reduced atom state at time ``t >= 0`` as a validated DensityState."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    return validate_density(_jc_matrix(params, t), tol=1e-10)


@dataclass(frozen=True)
class JCRateReference:
    """Closed-form rates for the diagonal JC trajectory.

    ``sign="nonneg"``: ``gamma1 = tan(t/2)`` on ``[2n pi, (2n+1) pi)`` and
    ``gamma2 = alpha(t)`` on ``[(2n+1) pi, (2n+2) pi)``, zero elsewhere.
    ``sign="nonpos"`` swaps the two half periods.  Intervals are half-open,
    so a multiple of pi belongs to the interval it starts.
    """

    params: JCParams
    sign: str = "nonneg"
    eps: float = 1e-9

    def __post_init__(self):
        if self.sign not in ("nonneg", "nonpos"):
            raise ValueError(f"sign must be 'nonneg' or 'nonpos', got {self.sign!r}")
        if complex(self.params.rho12) != 0:
            raise ValueError("closed-form JC rates need a diagonal initial state (rho12 = 0)")

    def lambda1(self, t):
        return self.params.rho11 * np.cos(np.asarray(t) / 2) ** 2

    def lambda1_dot(self, t):
        t = np.asarray(t)
        return -self.params.rho11 * np.cos(t / 2) * np.sin(t / 2)

    def alpha(self, t: float) -> float:
        r = self.params.rho11
        den = r * math.cos(t) + r - 2
        if abs(den) <= self.eps:
            raise SingularAt(t, "alpha(t) denominator vanishes")
        return r * math.sin(t) / den

    def _tan(self, t: float, half: int) -> float:
        if self.sign == "nonneg" and (half + 1) * math.pi - t <= self.eps:
            raise SingularAt(t, "tan(t/2) diverges at odd multiples of pi")
        if self.sign == "nonpos" and t - half * math.pi <= self.eps:
            raise SingularAt(t, "tan(t/2) diverges at odd multiples of pi")
        return math.tan(t / 2)

    def rates(self, t: float):
        if t < 0:
            raise ValueError("t must be nonnegative")
        if self.params.rho11 == 0:
            return 0.0, 0.0
        half = math.floor(t / math.pi)
        first = half % 2 == 0
        if first == (self.sign == "nonneg"):
            return self._tan(t, half), 0.0
        return 0.0, self.alpha(t)

    def gamma1(self, t: float) -> float:
        return self.rates(t)[0]

    def gamma2(self, t: float) -> float:
        return self.rates(t)[1]


def jc_reference_rates(params: JCParams, t: float, sign: str = "nonneg"):
    """``(gamma1, gamma2)`` of the closed-form JC solution at time ``t``.

    gamma1 multiplies the ``sigma_minus`` dissipator, gamma2 the
    ``sigma_plus`` one.
    """
    return JCRateReference(params, sign).rates(t)


# --- library models ---------------------------------------------------------


@dataclass
class Model:
    """A named trajectory source.

    ``states(times)`` returns ``(rhos, rhodots)`` as ``(N, d, d)`` arrays.
    ``hamiltonian`` and ``jumps`` describe the generating dynamics when it is
    a time-independent Lindblad generator.
    """

    name: str
    params: dict
    dim: int
    _states: object = field(repr=False)
    hamiltonian: np.ndarray | None = None
    jumps: list = field(default_factory=list)

    def states(self, times):
        return self._states(np.asarray(times, dtype=float))


def _qubit_state(rho11, rho12):
    r12 = complex(rho12)
    rho = np.array([[rho11, r12], [r12.conjugate(), 1 - rho11]], dtype=complex)
    try:
        validate_density(rho, tol=1e-12)
    except InvalidDensity as exc:
        raise InvalidInitialState(f"invalid initial state: {exc}") from exc
    return rho


def random_density(d: int, rng, mix: float = 0.3) -> np.ndarray:
    W = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    rho = W @ dagger(W)
    rho /= np.trace(rho).real
    return (1 - mix) * rho + mix * np.eye(d) / d


def random_hermitian(d: int, rng, scale: float = 1.0) -> np.ndarray:
    X = (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))) / 2
    return scale * (X + dagger(X)) / 2


def _unitary_model(omega=1.0, d=2, seed=0, r=0.8, theta=math.pi / 3, phi=0.0):
    d = int(d)
    if d == 2:
        H = 0.5 * omega * SIGMA_Z
        n = np.array([math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi),
                      math.cos(theta)])
        rho0 = 0.5 * (np.eye(2) + r * (n[0] * np.array([[0, 1], [1, 0]])
                                       + n[1] * np.array([[0, -1j], [1j, 0]])
                                       + n[2] * SIGMA_Z))
    else:
        rng = np.random.default_rng(int(seed))
        H = random_hermitian(d, rng, omega)
        rho0 = random_density(d, rng)
    w, V = np.linalg.eigh(H)

    def states(times):
        phases = np.exp(-1j * np.outer(times, w))
        Ut = np.einsum("ij,nj,kj->nik", V, phases, V.conj())
        rhos = Ut @ rho0 @ dagger(Ut)
        rhodots = -1j * (H @ rhos - rhos @ H)
        return rhos, rhodots

    return d, states, H, []


def _amplitude_damping_model(gamma=0.5, rho11=0.8, rho12=0.3, omega=0.0):
    rho0 = _qubit_state(rho11, rho12)
    H = 0.5 * omega * SIGMA_Z

    def states(times):
        e = np.exp(-gamma * times)
        c = rho0[0, 1] * np.exp(-(0.5 * gamma + 1j * omega) * times)
        rhos = np.empty((times.shape[0], 2, 2), complex)
        rhos[:, 0, 0] = rho11 * e
        rhos[:, 1, 1] = 1 - rho11 * e
        rhos[:, 0, 1] = c
        rhos[:, 1, 0] = c.conj()
        dots = np.empty_like(rhos)
        dots[:, 0, 0] = -gamma * rho11 * e
        dots[:, 1, 1] = gamma * rho11 * e
        dots[:, 0, 1] = -(0.5 * gamma + 1j * omega) * c
        dots[:, 1, 0] = dots[:, 0, 1].conj()
        return rhos, dots

    return 2, states, H, [(SIGMA_MINUS, gamma)]


def _dephasing_model(gamma=0.5, rho11=0.7, rho12=0.4, omega=0.0):
    rho0 = _qubit_state(rho11, rho12)
    H = 0.5 * omega * SIGMA_Z

    def states(times):
        c = rho0[0, 1] * np.exp(-(gamma + 1j * omega) * times)
        rhos = np.empty((times.shape[0], 2, 2), complex)
        rhos[:, 0, 0] = rho11
        rhos[:, 1, 1] = 1 - rho11
        rhos[:, 0, 1] = c
        rhos[:, 1, 0] = c.conj()
        dots = np.zeros_like(rhos)
        dots[:, 0, 1] = -(gamma + 1j * omega) * c
        dots[:, 1, 0] = dots[:, 0, 1].conj()
        return rhos, dots

    # coherence decays at rate gamma under L = sigma_z with rate gamma / 2
    return 2, states, H, [(SIGMA_Z, 0.5 * gamma)]


def _jc_model(omega=1.0, rho11=1.0, rho12=0.0):
    params = JCParams(omega, rho11, rho12)

    def states(times):
        return _jc_matrix(params, times), _jc_derivative(params, times)

    return 2, states, None, []


def random_lindblad(d: int, seed: int, h_scale: float = 1.0, rate_range=(0.1, 0.5),
                    n_jumps=None):
    """Random bounded time-independent generator and initial state.

    Returns ``(H, jumps, rho0)`` with jumps normalized to unit Frobenius
    norm and rates drawn uniformly from ``rate_range``.
    """
    rng = np.random.default_rng(seed)
    H = random_hermitian(d, rng, h_scale)
    jumps = []
    for _ in range(d if n_jumps is None else n_jumps):
        L = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        L /= np.linalg.norm(L)
        jumps.append((L, float(rng.uniform(*rate_range))))
    rho0 = random_density(d, rng)
    return H, jumps, rho0


def rk4_constant(S, x0, times, substeps: int = 4) -> np.ndarray:
    """Integrate ``dx/dt = S x`` with classical RK4 onto ``times``.

    For a constant ``S`` one RK4 step is the polynomial
    ``1 + hS + (hS)^2/2 + (hS)^3/6 + (hS)^4/24``; it is formed once per
    distinct step length.
    """
    x = np.asarray(x0, dtype=complex).copy()
    eye = np.eye(S.shape[0])
    steps = {}
    out = [x.copy()]
    for t0, t1 in zip(times[:-1], times[1:]):
        key = round((t1 - t0) / substeps, 15)
        P = steps.get(key)
        if P is None:
            A = key * S
            A2 = A @ A
            P = eye + A + A2 / 2 + A2 @ A / 6 + A2 @ A2 / 24
            P = np.linalg.matrix_power(P, substeps)
            steps[key] = P
        x = P @ x
        out.append(x.copy())
    return np.array(out)


def _random_model(d=3, seed=0, h_scale=1.0, substeps=4):
    d, seed = int(d), int(seed)
    H, jumps, rho0 = random_lindblad(d, seed, h_scale)
    S = liouvillian(H, jumps)

    def states(times):
        x = rk4_constant(S, rho0.ravel(), times, int(substeps))
        rhos = x.reshape(-1, d, d)
        rhos = 0.5 * (rhos + dagger(rhos))
        dots = (x @ S.T).reshape(-1, d, d)
        return rhos, 0.5 * (dots + dagger(dots))

    return d, states, H, jumps


MODELS = {
    "unitary": (_unitary_model, "pure precession; d=2: H = omega sigma_z / 2, "
                "d>2: random H scaled by omega"),
    "amplitude_damping": (_amplitude_damping_model, "constant-rate decay via sigma_minus"),
    "dephasing": (_dephasing_model, "pure dephasing, coherence decays at rate gamma"),
    "jc": (_jc_model, "resonant Jaynes-Cummings atom, cavity in vacuum"),
    "random": (_random_model, "random bounded Lindblad generator, RK4-sampled"),
}


def model_defaults(name: str) -> dict:
    if name not in MODELS:
        raise UnknownModel(f"unknown model {name!r}; available: {', '.join(MODELS)}")
    sig = inspect.signature(MODELS[name][0])
    return {k: v.default for k, v in sig.parameters.items()}


def library_models(name: str, **params) -> Model:
    """Instantiate a named model; unknown parameters raise TypeError."""
    defaults = model_defaults(name)
    unknown = set(params) - set(defaults)
    if unknown:
        raise TypeError(f"model {name!r} has no parameter(s) {sorted(unknown)}")
    merged = {**defaults, **params}
    dim, states, H, jumps = MODELS[name][0](**merged)
    return Model(name, merged, dim, states, H, jumps)


def eigen_gaps(rhos) -> tuple:
    """Smallest eigenvalue and smallest eigenvalue gap over a trajectory."""
    w = np.linalg.eigvalsh(rhos)
    gap = np.min(np.diff(w, axis=1)) if w.shape[1] > 1 else np.inf
    return float(w.min()), float(gap)


def frame_speed(rhos, rhodots) -> float:
    """Largest eigenframe angular velocity ``|rho_dot_ij| / |p_i - p_j|`` (eigenbasis entries)."""
    w, V = np.linalg.eigh(rhos)
    M = np.abs(dagger(V) @ rhodots @ V)
    gap = np.abs(w[:, :, None] - w[:, None, :])
    off = ~np.eye(w.shape[1], dtype=bool)
    return float(np.max(M[:, off] / np.maximum(gap[:, off], 1e-300)))


def random_corpus(count: int, dims=(2, 3, 4, 5), t_end: float = 0.5, dt: float = 1e-3,
                  min_eigenvalue: float = 1e-3, min_gap: float = 0.02, max_speed: float = 1.0,
                  seed: int = 0, h_scale: float = 1.0):
    """Deterministic set of random trajectories resolvable on a ``dt`` grid.

    Candidate seeds are drawn in order and kept when every sampled state
    has eigenvalues ``>= min_eigenvalue``, gaps ``>= min_gap`` and an
    eigenframe turning no faster than ``max_speed`` (see
    :func:`frame_speed`).  Returns a list of :class:`Model` instances
    (``name="random"``), cycling over ``dims``.
    """
    out = []
    candidate = seed
    times = np.arange(0.0, t_end + 0.5 * dt, dt)
    while len(out) < count:
        d = dims[len(out) % len(dims)]
        model = library_models("random", d=d, seed=candidate, h_scale=h_scale)
        candidate += 1
        rhos, rhodots = model.states(times)
        lmin, gap = eigen_gaps(rhos)
        if lmin >= min_eigenvalue and gap >= min_gap and frame_speed(rhos, rhodots) <= max_speed:
            out.append(model)
    return out
