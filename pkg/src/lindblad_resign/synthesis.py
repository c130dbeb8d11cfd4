"""Rates of prescribed sign from eigenvalue-flux compensation.

In the co-moving eigenframe the dissipator of an elementary jump
``L = |m><n|`` with rate ``gamma`` acting on ``rho_D = diag(p)`` is again
diagonal: it moves ``gamma * p[n]`` of population from level ``n`` to level
``m``.  Any traceless flux vector ``f`` can therefore be realized by pairing
draining levels with filling ones, one jump operator per pairing round, and
every round may choose between ``|m><n|`` with a positive rate and
``|n><m|`` with a negative rate.  That choice is what the :class:`SignPolicy`
controls.

Indices are 0-based in the Python API.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .eigenflow import TRACE_TOL, FrameFlow, frame_flow
from .errors import GridMismatch, InfeasibleTrace, SingularRate
from .evolution import LindbladGenerator, flagged_intervals


@dataclass(frozen=True, order=True)
class JumpSpec:
    """Elementary jump ``a_ij = |i><j|`` (``dagger=False``) or ``|j><i|``.

    Canonical ordering ``source < target``; the flag carries the direction.
    """

    target: int
    source: int
    dagger: bool
    dim: int

    def __post_init__(self):
        if not 0 <= self.source < self.target < self.dim:
            raise ValueError(
                f"JumpSpec needs 0 <= source < target < dim, got "
                f"({self.target}, {self.source}, dim={self.dim})"
            )

    @classmethod
    def transfer(cls, to: int, frm: int, dim: int) -> "JumpSpec":
        """The jump whose operator is ``|to><frm|``."""
        if to > frm:
            return cls(to, frm, False, dim)
        return cls(frm, to, True, dim)

    @property
    def to_level(self) -> int:
        return self.source if self.dagger else self.target

    @property
    def from_level(self) -> int:
        return self.target if self.dagger else self.source

    def matrix(self) -> np.ndarray:
        a = np.zeros((self.dim, self.dim), dtype=complex)
        a[self.to_level, self.from_level] = 1.0
        return a

    @property
    def label(self) -> str:
        base = f"a[{self.target + 1},{self.source + 1}]"
        return base + "^dag" if self.dagger else base


def all_specs(dim: int) -> list:
    """All ``d(d-1)`` elementary jumps.

    Lowering operators come first, ordered by level distance and then by
    source, which for ``d = 4`` reproduces the labels a_1 ... a_6 of the
    usual enumeration; the daggered family follows in the same order.
    """
    lower = [
        JumpSpec(j + gap, j, False, dim) for gap in range(1, dim) for j in range(dim - gap)
    ]
    return lower + [JumpSpec(s.target, s.source, True, dim) for s in lower]


@dataclass(frozen=True)
class RatedTerm:
    spec: JumpSpec
    rate: float
    capped: bool = False


@dataclass(frozen=True)
class SignPolicy:
    """Required sign for each compensation round.

    ``mode`` is ``"nonneg"``, ``"nonpos"`` or ``"per_round"``.  Per-round
    signs are ``+1``, ``-1`` or ``0``; a zero lets the round pick whichever
    direction has the larger denominator.
    """

    mode: str
    signs: tuple = ()

    def __post_init__(self):
        if self.mode not in ("nonneg", "nonpos", "per_round"):
            raise ValueError(f"unknown sign policy mode {self.mode!r}")
        if self.mode == "per_round":
            bad = [s for s in self.signs if s not in (-1, 0, 1)]
            if bad:
                raise ValueError(f"per-round signs must be -1, 0 or +1, got {bad}")

    @classmethod
    def nonnegative(cls):
        return cls("nonneg")

    @classmethod
    def nonpositive(cls):
        return cls("nonpos")

    @classmethod
    def per_round(cls, signs):
        return cls("per_round", tuple(int(s) for s in signs))

    @classmethod
    def alternating(cls, dim: int):
        return cls.per_round([1 if k % 2 == 0 else -1 for k in range(dim - 1)])

    @classmethod
    def random(cls, dim: int, rng):
        return cls.per_round(rng.choice([-1, 1], size=dim - 1))

    def check_dim(self, dim: int):
        if self.mode == "per_round" and len(self.signs) < dim - 1:
            raise ValueError(
                f"per-round policy has {len(self.signs)} signs, needs {dim - 1} for d={dim}"
            )

    def sign(self, round_index: int) -> int:
        if self.mode == "nonneg":
            return 1
        if self.mode == "nonpos":
            return -1
        return self.signs[round_index]

    def complies(self, round_index: int, rate: float, slack: float = 1e-12) -> bool:
        s = self.sign(round_index)
        if s > 0:
            return rate >= -slack
        if s < 0:
            return rate <= slack
        return True

    def __str__(self):
        if self.mode == "per_round":
            return "per_round:" + "".join("+" if s > 0 else "-" if s < 0 else "0" for s in self.signs)
        return self.mode


@dataclass
class RateProblem:
    """Eigenvalues ``p`` and eigenvalue fluxes ``f`` at one time point.

    ``rate_limit`` bounds ``|gamma|`` before a rate is declared singular;
    ``gamma_max`` switches to cap mode, where rates are clamped instead.
    """

    p: np.ndarray
    f: np.ndarray
    eps_f: float | None = None
    eps_p: float = 1e-10
    t: float | None = None
    rate_limit: float = math.inf
    gamma_max: float | None = None

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self.f = np.asarray(self.f, dtype=float)
        if self.p.shape != self.f.shape or self.p.ndim != 1:
            raise ValueError("p and f must be vectors of equal length")
        if self.eps_f is None:
            self.eps_f = 1e-12 * max(1.0, float(np.max(np.abs(self.f), initial=0.0)))
        if self.gamma_max is not None and not self.gamma_max > 0:
            raise ValueError("gamma_max must be positive")


def channel_action(spec: JumpSpec, rate: float, p) -> np.ndarray:
    """Diagonal of the dissipator of ``spec`` at ``rate`` on ``diag(p)``.

    Sums to zero exactly.
    """
    out = np.zeros(spec.dim)
    flux = rate * p[spec.from_level]
    out[spec.to_level] += flux
    out[spec.from_level] -= flux
    return out


def terms_action(terms, p) -> np.ndarray:
    out = np.zeros(len(p))
    for term in terms:
        out += channel_action(term.spec, term.rate, p)
    return out


@dataclass
class Compensation:
    terms: list
    deficit: np.ndarray
    capped: bool = False


def compensate_detailed(problem: RateProblem, policy: SignPolicy) -> Compensation:
    """Pairing loop behind :func:`compensate`; also reports the flux deficit left by capping."""
    d = problem.f.shape[0]
    policy.check_dim(d)
    total = float(problem.f.sum())
    if abs(total) > TRACE_TOL:
        raise InfeasibleTrace(f"eigenvalue rates sum to {total:.3e}, expected 0")
    # plain floats: d is small and numpy call overhead dominates here
    p = problem.p.tolist()
    r = problem.f.tolist()
    eps_f, eps_p = problem.eps_f, problem.eps_p
    gamma_max, limit = problem.gamma_max, problem.rate_limit
    idx = range(d)
    terms = []
    capped_any = False
    while True:
        s = min(idx, key=r.__getitem__)
        k = max(idx, key=r.__getitem__)
        if max(-r[s], r[k]) <= eps_f or not (r[s] < 0 < r[k]):
            break
        g = min(-r[s], r[k])
        sign = policy.sign(len(terms))
        if sign == 0:
            sign = 1 if p[s] >= p[k] else -1
        if sign > 0:
            spec, den = JumpSpec.transfer(k, s, d), p[s]
        else:
            spec, den = JumpSpec.transfer(s, k, d), p[k]
        capped = False
        if gamma_max is not None:
            magnitude = g / den if den > eps_p else math.inf
            if magnitude > gamma_max:
                magnitude, capped = gamma_max, True
        elif den <= eps_p or g > limit * den:
            raise SingularRate(problem.t, (k, s), g, den)
        else:
            magnitude = g / den
        terms.append(RatedTerm(spec, sign * magnitude, capped))
        capped_any |= capped
        if -r[s] <= r[k]:
            r[k] += r[s]
            r[s] = 0.0
        else:
            r[s] += r[k]
            r[k] = 0.0
    deficit = list(problem.f.tolist())
    for term in terms:
        m, n = term.spec.to_level, term.spec.from_level
        flux = term.rate * p[n]
        deficit[m] -= flux
        deficit[n] += flux
    return Compensation(terms, np.array(deficit), capped_any)


def compensate(problem: RateProblem, policy: SignPolicy) -> list:
    """Solve for at most ``d - 1`` rated jumps whose channel actions sum to ``f``.

    Each round moves flux from the most negative residual entry to the most
    positive one (lowest index on ties).  A round whose policy sign is
    positive uses ``|sink><source|`` with ``gamma = g / p[source]``; a
    negative sign uses ``|source><sink|`` with ``gamma = -g / p[sink]``.

    Raises
    ------
    SingularRate
        When the denominator of a required rate is at most ``eps_p`` or the
        rate exceeds ``rate_limit`` (and no ``gamma_max`` cap is set).
    InfeasibleTrace
        When ``|sum(f)| > 1e-8``.
    """
    return compensate_detailed(problem, policy).terms


def lab_operator(spec: JumpSpec, U) -> np.ndarray:
    """``U a U^dagger`` for the canonical matrix of ``spec``."""
    U = np.asarray(U)
    return np.outer(U[:, spec.to_level], U[:, spec.from_level].conj())


def assemble_generator(frames, terms_per_point, hamiltonians, excluded=None,
                       interpolation: str = "linear") -> LindbladGenerator:
    """Lab-frame generator with jumps ``A = U a U^dagger`` at every grid point."""
    N = len(frames)
    if len(terms_per_point) != N or len(hamiltonians) != N:
        raise GridMismatch(
            f"{N} frames, {len(terms_per_point)} term lists, {len(hamiltonians)} Hamiltonians"
        )
    ops = tuple(
        tuple((lab_operator(term.spec, fr.U), float(term.rate)) for term in terms)
        for fr, terms in zip(frames, terms_per_point)
    )
    specs = tuple(tuple(term.spec for term in terms) for terms in terms_per_point)
    return LindbladGenerator(
        times=np.array([fr.t for fr in frames]),
        H=np.asarray(hamiltonians),
        terms=ops,
        interpolation=interpolation,
        excluded=excluded,
        specs=specs,
    )


@dataclass
class SynthesisResult:
    times: np.ndarray
    frames: list
    H: np.ndarray
    f: np.ndarray
    terms: list
    generator: LindbladGenerator
    policy: SignPolicy
    singular: np.ndarray
    capped: np.ndarray
    deficit: np.ndarray
    offdiag_residual: np.ndarray
    hermiticity_residual: np.ndarray
    udot_scale: np.ndarray
    intervals: dict = field(default_factory=dict)

    def compliance(self, slack: float = 1e-12) -> dict:
        total = ok = 0
        for terms in self.terms:
            for k, term in enumerate(terms):
                total += 1
                ok += self.policy.complies(k, term.rate, slack)
        return {"terms": total, "compliant": ok, "violations": total - ok}

    @property
    def max_terms(self) -> int:
        return max((len(t) for t in self.terms), default=0)


def _local_spacing(times):
    dt = np.diff(times)
    left = np.concatenate([[dt[0]], dt])
    right = np.concatenate([dt, [dt[-1]]])
    return np.maximum(left, right)


def synthesize(times, states, policy: SignPolicy, rhodots=None, *, eps_f=None,
               eps_p: float = 1e-10, tol_offdiag=None, singularity: str = "error",
               gamma_max=None, resolve_factor=1.0, gauge: str = "parallel",
               interpolation: str = "linear", flow: FrameFlow | None = None) -> SynthesisResult:
    """Build a state-dependent Lindblad generator reproducing a trajectory.

    Parameters
    ----------
    times, states
        Sampled trajectory (``N >= 3``).
    policy
        Sign prescription for the synthesized rates.
    rhodots : optional
        Exact time derivatives; central finite differences otherwise.
    singularity : {"error", "cap", "skip"}
        ``"error"`` raises :class:`SingularRate` naming every singular window;
        ``"cap"`` clamps ``|gamma| <= gamma_max``; ``"skip"`` flags singular
        points and emits no terms there.
    resolve_factor : float or None
        A rate with ``|gamma| * dt > resolve_factor`` empties its source level
        within one grid step and is treated as singular. ``None`` disables
        this test, leaving only ``eps_p``.
    flow : FrameFlow, optional
        Precomputed :func:`frame_flow` of the same trajectory, to share the
        eigenframe work between several policies.
    """
    if singularity not in ("error", "cap", "skip"):
        raise ValueError(f"unknown singularity mode {singularity!r}")
    if singularity == "cap" and (gamma_max is None or not gamma_max > 0):
        raise ValueError("cap mode needs gamma_max > 0")
    if flow is None:
        flow = frame_flow(times, states, rhodots, tol_offdiag=tol_offdiag, gauge=gauge)
    times = flow.times
    N, d = flow.f.shape
    policy.check_dim(d)
    spacing = _local_spacing(times)

    deficit = np.zeros((N, d))
    singular = np.zeros(N, bool)
    capped = np.zeros(N, bool)
    all_terms = []
    for n, frame in enumerate(flow.frames):
        limit = math.inf if resolve_factor is None else resolve_factor / spacing[n]
        problem = RateProblem(
            frame.p, flow.f[n], eps_f=eps_f, eps_p=eps_p, t=frame.t, rate_limit=limit,
            gamma_max=gamma_max if singularity == "cap" else None,
        )
        try:
            comp = compensate_detailed(problem, policy)
        except SingularRate:
            singular[n] = True
            all_terms.append([])
            continue
        capped[n] = comp.capped
        deficit[n] = comp.deficit
        all_terms.append(comp.terms)

    intervals = {
        "singular": flagged_intervals(times, singular),
        "capped": flagged_intervals(times, capped),
    }
    if singularity == "error" and singular.any():
        raise SingularRate(intervals=intervals["singular"])
    generator = assemble_generator(
        flow.frames, all_terms, flow.H, excluded=singular | capped, interpolation=interpolation
    )
    return SynthesisResult(
        times=times, frames=flow.frames, H=flow.H, f=flow.f, terms=all_terms,
        generator=generator, policy=policy, singular=singular, capped=capped,
        deficit=deficit, offdiag_residual=flow.offdiag_residual,
        hermiticity_residual=flow.hermiticity_residual, udot_scale=flow.udot_scale,
        intervals=intervals,
    )
