import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose

from lindblad_resign.errors import GridMismatch, InfeasibleTrace, SingularRate
from lindblad_resign.linalg import SIGMA_MINUS, SIGMA_PLUS
from lindblad_resign.models import library_models
from lindblad_resign.synthesis import (
    JumpSpec,
    RateProblem,
    RatedTerm,
    SignPolicy,
    all_specs,
    assemble_generator,
    channel_action,
    compensate,
    compensate_detailed,
    lab_operator,
    synthesize,
    terms_action,
)


def dissipator_diagonal(L, p):
    """Diagonal of L rho L^dag - 1/2{L^dag L, rho} on rho = diag(p), by full matrix products."""
    rho = np.diag(p).astype(complex)
    LdL = L.conj().T @ L
    return np.real(np.diag(L @ rho @ L.conj().T - 0.5 * (LdL @ rho + rho @ LdL)))


def channel_matrix(p):
    d = len(p)
    return np.column_stack([dissipator_diagonal(s.matrix(), p) for s in all_specs(d)])


def oracle_residual(terms, p, f):
    """Residual of the returned sparse solution inside the dense d(d-1) channel system."""
    d = len(p)
    index = {s: k for k, s in enumerate(all_specs(d))}
    x = np.zeros(d * (d - 1))
    for term in terms:
        x[index[term.spec]] += term.rate
    return np.max(np.abs(channel_matrix(p) @ x - f))


def random_problem(d, seed):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(d)) * 0.9 + 0.1 / d
    f = rng.normal(size=d)
    f -= f.mean()
    return p, f


policies = st.sampled_from(["nonneg", "nonpos", "alternating", "random"])


def make_policy(name, d, seed):
    if name == "nonneg":
        return SignPolicy.nonnegative()
    if name == "nonpos":
        return SignPolicy.nonpositive()
    if name == "alternating":
        return SignPolicy.alternating(d)
    return SignPolicy.random(d, np.random.default_rng(seed + 1))


# --- channel algebra ---------------------------------------------------------


def test_channel_action_d4_lowering():
    p = np.array([0.4, 0.3, 0.2, 0.1])
    a1 = all_specs(4)[0]
    assert (a1.target, a1.source, a1.dagger) == (1, 0, False)
    assert_allclose(channel_action(a1, 0.7, p), [-0.7 * 0.4, 0.7 * 0.4, 0, 0])


def test_channel_action_d4_raising():
    p = np.array([0.4, 0.3, 0.2, 0.1])
    a1dag = JumpSpec(1, 0, True, 4)
    assert_allclose(channel_action(a1dag, 0.7, p), [0.7 * 0.3, -0.7 * 0.3, 0, 0])


def test_channel_action_zero_rate():
    assert_allclose(channel_action(JumpSpec(2, 0, False, 3), 0.0, [0.2, 0.3, 0.5]), 0)


def test_all_specs_d4_order():
    labels = [(s.target + 1, s.source + 1) for s in all_specs(4)[:6]]
    assert labels == [(2, 1), (3, 2), (4, 3), (3, 1), (4, 2), (4, 1)]
    assert len(set(all_specs(5))) == 20


@given(st.integers(2, 8), st.integers(0, 2**32 - 1), st.floats(-5, 5))
def test_channel_action_matches_full_dissipator(d, seed, rate):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(d))
    specs = all_specs(d)
    spec = specs[rng.integers(len(specs))]
    out = channel_action(spec, rate, p)
    assert_allclose(out, rate * dissipator_diagonal(spec.matrix(), p), atol=1e-15)
    assert out.sum() == 0.0


def test_jumpspec_validation():
    with pytest.raises(ValueError):
        JumpSpec(0, 1, False, 2)
    assert JumpSpec.transfer(0, 1, 2) == JumpSpec(1, 0, True, 2)
    assert_allclose(JumpSpec(1, 0, False, 2).matrix(), SIGMA_MINUS)
    assert_allclose(JumpSpec(1, 0, True, 2).matrix(), SIGMA_PLUS)


# --- compensation --------------------------------------------------------------


def test_zero_flux_gives_no_terms():
    assert compensate(RateProblem([0.5, 0.5], [0.0, 0.0]), SignPolicy.nonnegative()) == []


def test_qubit_decay_nonneg():
    lam, lamdot = 0.6, -0.2
    terms = compensate(RateProblem([lam, 1 - lam], [lamdot, -lamdot]), SignPolicy.nonnegative())
    assert len(terms) == 1
    assert terms[0].spec == JumpSpec(1, 0, False, 2)
    assert terms[0].rate == pytest.approx(-lamdot / lam)


def test_qubit_decay_nonpos():
    lam, lamdot = 0.6, -0.2
    terms = compensate(RateProblem([lam, 1 - lam], [lamdot, -lamdot]), SignPolicy.nonpositive())
    assert terms[0].spec == JumpSpec(1, 0, True, 2)
    assert terms[0].rate == pytest.approx(lamdot / (1 - lam))


def test_d5_alternating_against_oracle():
    p, f = random_problem(5, 11)
    policy = SignPolicy.alternating(5)
    terms = compensate(RateProblem(p, f), policy)
    assert len(terms) <= 4
    assert all(policy.complies(k, t.rate) for k, t in enumerate(terms))
    assert oracle_residual(terms, p, f) <= 1e-12 * max(1, np.max(np.abs(f)))
    x, *_ = np.linalg.lstsq(channel_matrix(p), f, rcond=None)
    assert_allclose(channel_matrix(p) @ x, f, atol=1e-12)


def test_singular_rate_names_pair():
    with pytest.raises(SingularRate) as exc:
        compensate(RateProblem([0.0, 1.0], [-0.1, 0.1], t=2.5), SignPolicy.nonnegative())
    assert exc.value.t == 2.5
    assert exc.value.pair == (1, 0)
    assert exc.value.flux == pytest.approx(0.1)


def test_sign_zero_routes_around_empty_level():
    # the nonneg route would divide by p[0] = 0; a free round takes the other direction
    terms = compensate(RateProblem([0.0, 1.0], [-0.1, 0.1]), SignPolicy.per_round([0]))
    assert terms[0].rate == pytest.approx(-0.1)


def test_both_denominators_vanish():
    with pytest.raises(SingularRate):
        compensate(RateProblem([0.0, 0.0, 1.0], [-0.1, 0.1, 0.0]), SignPolicy.per_round([0, 0]))


def test_rate_limit_marks_singular():
    with pytest.raises(SingularRate):
        compensate(RateProblem([0.01, 0.99], [-0.1, 0.1], rate_limit=5.0), SignPolicy.nonnegative())


def test_cap_mode_reports_deficit():
    comp = compensate_detailed(RateProblem([0.01, 0.99], [-0.1, 0.1], gamma_max=5.0),
                               SignPolicy.nonnegative())
    assert comp.capped and comp.terms[0].capped
    assert comp.terms[0].rate == 5.0
    assert_allclose(comp.deficit, [-0.05, 0.05])


def test_infeasible_trace():
    with pytest.raises(InfeasibleTrace):
        compensate(RateProblem([0.5, 0.5], [0.1, 0.0]), SignPolicy.nonnegative())


def test_per_round_policy_too_short():
    with pytest.raises(ValueError):
        compensate(RateProblem([0.2, 0.3, 0.5], [0.1, 0.0, -0.1]), SignPolicy.per_round([1]))


def test_tie_breaks_to_lower_index():
    terms = compensate(RateProblem([0.25] * 4, [-0.1, -0.1, 0.1, 0.1]), SignPolicy.nonnegative())
    assert (terms[0].spec.from_level, terms[0].spec.to_level) == (0, 2)


@given(st.integers(2, 8), st.integers(0, 2**32 - 1), policies)
def test_compensation_properties(d, seed, policy_name):
    p, f = random_problem(d, seed)
    policy = make_policy(policy_name, d, seed)
    terms = compensate(RateProblem(p, f), policy)
    assert len(terms) <= d - 1
    assert all(policy.complies(k, t.rate, 1e-12) for k, t in enumerate(terms))
    scale = max(1.0, np.max(np.abs(f)))
    assert np.max(np.abs(terms_action(terms, p) - f)) <= 1e-12 * scale
    assert oracle_residual(terms, p, f) <= 1e-12 * scale


@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_policy_duality(d, seed):
    p, f = random_problem(d, seed)
    pos = compensate(RateProblem(p, f), SignPolicy.nonnegative())
    neg = compensate(RateProblem(p, f), SignPolicy.nonpositive())
    assert_allclose(terms_action(pos, p), terms_action(neg, p), atol=1e-12)
    assert all(t.rate >= 0 for t in pos) and all(t.rate <= 0 for t in neg)


# --- generator assembly -------------------------------------------------------------


class _Frame:
    def __init__(self, t, U):
        self.t, self.U = t, U


def test_identity_frame_gives_canonical_operators():
    spec = JumpSpec(2, 0, False, 3)
    gen = assemble_generator([_Frame(t, np.eye(3)) for t in (0, 1)],
                             [[RatedTerm(spec, 0.3)]] * 2, np.zeros((2, 3, 3)))
    assert_allclose(gen.terms[0][0][0], spec.matrix())
    assert gen.terms[1][0][1] == 0.3


def test_rotated_frame_operator():
    U = np.array([[1, 1], [1, -1]]) / np.sqrt(2)
    A = lab_operator(JumpSpec(1, 0, False, 2), U)
    # U|2> = (1, -1)/sqrt2 and <1|U^dag = (1, 1)/sqrt2
    assert_allclose(A, 0.5 * np.array([[1, 1], [-1, -1]]))
    # unit operator norm survives the conjugation
    assert np.linalg.norm(A, 2) == pytest.approx(1.0)


def test_assemble_grid_mismatch():
    with pytest.raises(GridMismatch):
        assemble_generator([_Frame(0, np.eye(2))], [[], []], np.zeros((1, 2, 2)))


def test_jc_generator_uses_sigma_pm():
    times = np.linspace(0.1, 6.1, 601)
    rhos, rhodots = library_models("jc").states(times)
    mask = np.abs(times - math.pi) > 0.2
    result = synthesize(times[mask][:250], rhos[mask][:250], SignPolicy.nonnegative(),
                        rhodots[mask][:250])
    ops = {tuple(np.round(L.real, 12).ravel()) for terms in result.generator.terms for L, _ in terms}
    assert ops == {tuple(SIGMA_MINUS.real.ravel())}
    after = times > math.pi + 0.2
    result = synthesize(times[after], rhos[after], SignPolicy.nonnegative(), rhodots[after])
    ops = {tuple(np.round(L.real, 12).ravel()) for terms in result.generator.terms for L, _ in terms}
    assert ops == {tuple(SIGMA_PLUS.real.ravel())}


def test_synthesize_error_mode_reports_intervals():
    times = np.linspace(3.0, 3.3, 301)
    rhos, rhodots = library_models("jc").states(times)
    with pytest.raises(SingularRate) as exc:
        synthesize(times, rhos, SignPolicy.nonnegative(), rhodots)
    (lo, hi), = exc.value.intervals
    assert lo <= math.pi <= hi


def test_synthesize_skip_mode_excludes():
    times = np.linspace(3.0, 3.3, 301)
    rhos, rhodots = library_models("jc").states(times)
    result = synthesize(times, rhos, SignPolicy.nonnegative(), rhodots, singularity="skip")
    assert result.singular.any()
    assert all(not result.terms[n] for n in np.flatnonzero(result.singular))
    assert np.array_equal(result.generator.excluded, result.singular)


def test_synthesize_compliance_counts():
    times = np.linspace(0, 0.3, 301)
    rhos, rhodots = library_models("random", d=4, seed=3).states(times)
    result = synthesize(times, rhos, SignPolicy.alternating(4), rhodots)
    c = result.compliance()
    assert c["violations"] == 0 and c["terms"] == c["compliant"] > 0
    assert result.max_terms <= 3
