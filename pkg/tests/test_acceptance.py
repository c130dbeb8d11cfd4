"""End-to-end acceptance checks; each test records one pass/fail line."""

import json
import math
import time

import numpy as np
import pytest

from lindblad_resign.cli import main
from lindblad_resign.eigenflow import build_hamiltonians, frame_flow
from lindblad_resign.evolution import lindblad_rhs, verify_reconstruction
from lindblad_resign.models import JCParams, JCRateReference, library_models, random_corpus
from lindblad_resign.synthesis import JumpSpec, SignPolicy, all_specs, synthesize, terms_action

LOWER = JumpSpec(1, 0, False, 2)
RAISE = JumpSpec(1, 0, True, 2)
CORPUS_SIZE = 200
T_END = 0.5


def grid(t0, t1, dt):
    return np.linspace(t0, t1, int(round((t1 - t0) / dt)) + 1)


def jc_rates(times, policy):
    rhos, rhodots = library_models("jc").states(times)
    result = synthesize(times, rhos, policy, rhodots)
    g1 = np.array([sum(t.rate for t in terms if t.spec == LOWER) for terms in result.terms])
    g2 = np.array([sum(t.rate for t in terms if t.spec == RAISE) for terms in result.terms])
    return g1, g2


def jc_errors(sign):
    policy = SignPolicy.nonnegative() if sign == "nonneg" else SignPolicy.nonpositive()
    ref = JCRateReference(JCParams(), sign)
    out = {}
    for name, (t0, t1) in {"first": (0.1, 3.0), "second": (3.3, 6.1)}.items():
        times = grid(t0, t1, 1e-3)
        g1, g2 = jc_rates(times, policy)
        r = np.array([ref.rates(t) for t in times])
        out[name] = (np.max(np.abs(g1 - r[:, 0])), np.max(np.abs(g2 - r[:, 1])), g1, g2)
    return out


def test_c1_jc_nonnegative(criterion):
    start = time.perf_counter()
    err = jc_errors("nonneg")
    elapsed = time.perf_counter() - start
    e1, z2, g1, _ = err["first"]
    z1, e2, _, g2 = err["second"]
    ok = (e1 <= 1e-5 and z2 <= 1e-10 and e2 <= 1e-5 and z1 <= 1e-10 and elapsed < 5
          and g1.min() >= 0 and g2.min() >= 0)
    criterion("C1 JC nonneg rates", ok,
              f"|g1-tan|={e1:.2e} |g2|={z2:.1e} on [0.1,3]; |g2-alpha|={e2:.2e} |g1|={z1:.1e} "
              f"on [3.3,6.1]; {elapsed:.2f}s")


def test_c2_jc_nonpositive(criterion):
    err = jc_errors("nonpos")
    z1, e2, g1a, g2a = err["first"]
    e1, z2, g1b, g2b = err["second"]
    ok = (e1 <= 1e-5 and e2 <= 1e-5 and z1 <= 1e-10 and z2 <= 1e-10
          and g1b.max() <= 0 and g2a.max() <= 0)
    criterion("C2 JC nonpos rates", ok,
              f"|g2-alpha|={e2:.2e} on [0.1,3]; |g1-tan|={e1:.2e} on [3.3,6.1]; "
              f"off-branch {max(z1, z2):.1e}")


class Run:
    def __init__(self, model, policy, result, rhos, rhodots):
        self.model, self.policy, self.result = model, policy, result
        self.rhos, self.rhodots = rhos, rhodots


def synthesize_corpus(corpus, policies, dt):
    times = grid(0.0, T_END, dt)
    runs = []
    for model, pols in zip(corpus, policies):
        rhos, rhodots = model.states(times)
        flow = frame_flow(times, rhos, rhodots)
        for policy in pols:
            runs.append(Run(model, policy, synthesize(times, rhos, policy, rhodots, flow=flow),
                            rhos, rhodots))
    return times, runs


@pytest.fixture(scope="module")
def corpus_runs():
    start = time.perf_counter()
    corpus = random_corpus(CORPUS_SIZE, t_end=T_END, dt=1e-3)
    rng = np.random.default_rng(2024)
    policies = [(SignPolicy.nonnegative(), SignPolicy.nonpositive(), SignPolicy.random(m.dim, rng))
                for m in corpus]
    times, runs = synthesize_corpus(corpus, policies, 1e-3)
    elapsed = time.perf_counter() - start
    return {"corpus": corpus, "policies": policies, "times": times, "runs": runs,
            "elapsed": elapsed}


def test_c3_sign_freedom(corpus_runs, criterion):
    runs = corpus_runs["runs"]
    terms = violations = too_many = 0
    for run in runs:
        c = run.result.compliance(slack=1e-12)
        terms += c["terms"]
        violations += c["violations"]
        too_many += run.result.max_terms > run.model.dim - 1
    dims = sorted({run.model.dim for run in runs})
    elapsed = corpus_runs["elapsed"]
    ok = (len(runs) == 3 * CORPUS_SIZE and violations == 0 and too_many == 0 and elapsed < 60
          and dims == [2, 3, 4, 5])
    criterion("C3 sign freedom", ok,
              f"{len(runs)} syntheses (d in {dims}), {terms} terms, {violations} sign violations, "
              f"{too_many} over d-1 terms; {elapsed:.1f}s")


def dense_channel_matrices(p):
    """Batched ``(N, d, d(d-1))`` map from rates to diagonal changes, from full matrix products."""
    N, d = p.shape
    rho = np.zeros((N, d, d), complex)
    rho[:, np.arange(d), np.arange(d)] = p
    cols = []
    for spec in all_specs(d):
        L = spec.matrix()
        LdL = L.conj().T @ L
        D = L @ rho @ L.conj().T - 0.5 * (LdL @ rho + rho @ LdL)
        cols.append(np.real(np.diagonal(D, axis1=1, axis2=2)))
    return np.stack(cols, axis=2)


def test_c4_exactness(corpus_runs, criterion):
    worst_direct = worst_oracle = worst_pinv = 0.0
    for run in corpus_runs["runs"]:
        res = run.result
        d = res.f.shape[1]
        p = np.array([fr.p for fr in res.frames])
        scale = np.maximum(1.0, np.max(np.abs(res.f), axis=1))
        direct = np.array([terms_action(terms, pn) for terms, pn in zip(res.terms, p)])
        worst_direct = max(worst_direct, np.max(np.max(np.abs(direct - res.f), axis=1) / scale))
        index = {s: k for k, s in enumerate(all_specs(d))}
        x = np.zeros((len(res.terms), d * (d - 1)))
        for n, terms in enumerate(res.terms):
            for term in terms:
                x[n, index[term.spec]] += term.rate
        A = dense_channel_matrices(p)
        resid = np.max(np.abs(np.einsum("nij,nj->ni", A, x) - res.f), axis=1)
        worst_oracle = max(worst_oracle, np.max(resid / scale))
        # the system is consistent: its minimum-norm solution reproduces f too
        y = np.einsum("nij,nj->ni", np.linalg.pinv(A), res.f)
        resid = np.max(np.abs(np.einsum("nij,nj->ni", A, y) - res.f), axis=1)
        worst_pinv = max(worst_pinv, np.max(resid / scale))
    ok = worst_direct <= 1e-12 and worst_oracle <= 1e-12 and worst_pinv <= 1e-10
    criterion("C4 exactness", ok,
              f"max rel residual {worst_direct:.1e} (channel sum), {worst_oracle:.1e} "
              f"(dense oracle), {worst_pinv:.1e} (pinv consistency)")


@pytest.fixture(scope="module")
def verification(corpus_runs):
    _, fine = synthesize_corpus(corpus_runs["corpus"], corpus_runs["policies"], 5e-4)
    out = []
    for coarse_run, fine_run in zip(corpus_runs["runs"], fine):
        reports = []
        for run in (coarse_run, fine_run):
            times = run.result.times
            reports.append(verify_reconstruction(times, run.rhos, run.result.generator,
                                                 rhodots=run.rhodots))
        out.append((coarse_run, reports[0], reports[1]))
    return out


def test_c5_closed_loop(verification, criterion):
    coarse = np.array([r.max_state_error for _, r, _ in verification])
    fine = np.array([r.max_state_error for _, _, r in verification])
    ratio = coarse / fine
    ok = coarse.max() <= 1e-4 and ratio.min() >= 3 and ratio.max() <= 6
    criterion("C5 closed-loop reconstruction", ok,
              f"max state error {coarse.max():.2e} at dt=1e-3, {fine.max():.2e} at dt=5e-4; "
              f"per-run ratio {ratio.min():.2f}..{ratio.max():.2f} (median {np.median(ratio):.2f})")


def test_c6_invariants(corpus_runs, verification, criterion):
    rhs_herm = rhs_trace = h_herm = h_raw = hs_excess = offdiag = drift = 0.0
    seen = set()
    for run, report, _ in verification:
        res = run.result
        gen = res.generator
        for n in range(0, len(gen), 5):
            out = lindblad_rhs(run.rhos[n], gen.H[n], gen.terms[n])
            scale = max(1.0, np.max(np.abs(gen.H[n])), sum(abs(g) for _, g in gen.terms[n]))
            rhs_herm = max(rhs_herm, np.max(np.abs(out - out.conj().T)) / scale)
            rhs_trace = max(rhs_trace, abs(np.trace(out)) / scale)
        h_herm = max(h_herm, np.max(np.abs(gen.H - np.conj(np.swapaxes(gen.H, 1, 2)))))
        # discretization residual of i dU/dt U^dag before symmetrization (diagnostic, O(dt^2))
        h_raw = max(h_raw, np.max(res.hermiticity_residual / np.maximum(1, res.udot_scale)))
        offdiag = max(offdiag, np.max(res.offdiag_residual))
        drift = max(drift, report.trace_drift_rate)
        key = id(run.model)
        if key not in seen:
            seen.add(key)
            H_raw = build_hamiltonians(res.frames, "raw")
            hs_opt = np.einsum("nij,nji->n", res.H, res.H).real
            hs_raw = np.einsum("nij,nji->n", H_raw, H_raw).real
            hs_excess = max(hs_excess, np.max(hs_opt - hs_raw))
    ok = (rhs_herm <= 1e-12 and rhs_trace <= 1e-12 and h_herm <= 1e-6 and hs_excess <= 1e-8
          and offdiag <= 1e-6 and drift <= 1e-9)
    criterion("C6 structural invariants", ok,
              f"rhs herm {rhs_herm:.1e}, trace {rhs_trace:.1e}; H herm {h_herm:.1e} "
              f"(pre-symmetrization {h_raw:.1e} x |dU/dt|); "
              f"max Tr(Hopt^2)-Tr(Hraw^2) {hs_excess:.1e}; offdiag {offdiag:.1e}; "
              f"trace drift {drift:.1e}/unit time")


def test_c7_unitary_null(criterion):
    times = grid(0.0, 2.0, 1e-3)
    worst_rate = worst_rhs = 0.0
    cases = [dict(omega=2.0), dict(omega=1.0, r=0.5, theta=0.3)]
    cases += [dict(d=d, seed=s, omega=1.0) for d in (3, 4) for s in (0, 1)]
    for params in cases:
        model = library_models("unitary", **params)
        rhos, rhodots = model.states(times)
        for policy in (SignPolicy.nonnegative(), SignPolicy.nonpositive()):
            res = synthesize(times, rhos, policy, rhodots)
            rates = [abs(t.rate) for terms in res.terms for t in terms]
            worst_rate = max(worst_rate, max(rates, default=0.0))
            for n in range(0, len(times), 50):
                mine = lindblad_rhs(rhos[n], res.H[n], res.generator.terms[n])
                true = lindblad_rhs(rhos[n], model.hamiltonian, [])
                worst_rhs = max(worst_rhs, np.max(np.abs(mine - true)))
    ok = worst_rate <= 1e-10 and worst_rhs <= 1e-6
    criterion("C7 unitary null case", ok,
              f"max |gamma| {worst_rate:.1e}; max rhs mismatch {worst_rhs:.1e} "
              f"over {len(cases)} models")


def test_c8_singularity(tmp_path, criterion, capsys):
    err_dir, cap_dir = tmp_path / "error", tmp_path / "cap"
    code_err = main(["synthesize", "--model", "jc", "--t-end", "4.0", "--out", str(err_dir)])
    msg = capsys.readouterr().err
    singular = json.loads((err_dir / "summary.json").read_text())["singular_intervals"]
    code_cap = main(["synthesize", "--model", "jc", "--t-end", "4.0", "--singularity", "cap:50",
                     "--out", str(cap_dir)])
    capped = json.loads((cap_dir / "summary.json").read_text())["capped_intervals"]
    hit = [iv for iv in singular if iv[0] <= math.pi <= iv[1]]
    hit_cap = [iv for iv in capped if iv[0] <= math.pi <= iv[1]]
    ok = code_err == 2 and bool(hit) and "singular" in msg and code_cap == 0 and bool(hit_cap)
    criterion("C8 singularity handling", ok,
              f"error mode exit {code_err}, interval {hit}; cap mode exit {code_cap}, "
              f"flagged {hit_cap}")
