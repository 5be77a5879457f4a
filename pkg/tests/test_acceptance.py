"""Acceptance suite: one test per release criterion, printed pass/fail.

Every expected value is either a closed form derived by hand or computed by
an independent oracle inside the test (bisection, path enumeration, finite
differences, Monte Carlo); nothing is asserted against the code under test.
Run with ``pytest tests/test_acceptance.py -v -s`` to see the summary lines.
"""

import math
import time

import numpy as np
import pytest

from mnum import (
    DeterministicMin,
    DualProgram,
    Logit,
    SolverOptions,
    build_supports,
    check_choice_axioms,
    load_flows,
    mc_oracle,
    path_logit_oracle,
    solve_mnum,
    solve_mte,
    solve_num_singlepath,
    solve_tau,
)
from mnum.protocol import (
    ProtocolConfig,
    init_protocol_state,
    protocol_residuals,
    refresh_link_estimates,
    router_update,
    run,
    source_update,
)

from conftest import (
    BRAESS5,
    LAYERED12,
    SHIPPED_NETWORKS,
    TWO_LINK_ASYMMETRIC,
    TWO_LINK_SYMMETRIC,
    build,
)

LOGIT = Logit(1.0)


def _report(num, name, ok, detail=""):
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {name} {detail}".rstrip())
    assert ok, f"criterion {num} failed: {name} {detail}"


def _bisect(fn, lo, hi, iters=200):
    flo = fn(lo)
    assert flo * fn(hi) < 0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if flo * fn(mid) <= 0:
            hi = mid
        else:
            lo = mid
            flo = fn(lo)
    return 0.5 * (lo + hi)


def test_criterion_1_symmetric_instance():
    """Closed-form joint equilibrium on the symmetric two-link instance."""
    # oracle: demand balance x * psi(x/2) = alpha * D, i.e. x^2 + 2x - 8 = 0
    psi = lambda w: w / (2.0 * (2.0 - w))
    x_oracle = _bisect(lambda x: x * psi(0.5 * x) - 1.0, 0.1, 3.9)
    assert x_oracle == pytest.approx(2.0, abs=1e-10)

    net = build(TWO_LINK_SYMMETRIC)
    worst = 0.0
    elapsed = 0.0
    for beta in (1.0, 3.7):
        start = time.perf_counter()
        eq = solve_mnum(net, Logit(beta))
        elapsed = max(elapsed, time.perf_counter() - start)
        worst = max(
            worst,
            abs(eq.x[0] - 2.0),
            float(np.max(np.abs(eq.w - 1.0))),
            float(np.max(np.abs(eq.lam - 1.5))),
            abs(eq.q[0] - 0.5),
        )
    _report(
        1,
        "symmetric two-link equilibrium",
        worst < 1e-6 and elapsed < 1.0,
        f"(max err {worst:.2e}, slowest solve {elapsed * 1e3:.0f} ms)",
    )


def test_criterion_2_gradient_identity():
    """Analytic gradient vs central finite differences of the objective."""
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    points = 0
    for data in (TWO_LINK_SYMMETRIC, BRAESS5, LAYERED12):
        net = build(data)
        assert net.n_nodes <= 12
        prog = DualProgram(net, LOGIT)
        for _ in range(8):
            lam = net.lambda0 * (1.0 + rng.uniform(0.05, 0.6, net.n_arcs))
            g = prog.gradient(lam)
            for a in range(net.n_arcs):
                h = min(1e-5 * max(1.0, lam[a]), 0.25 * (lam[a] - net.lambda0[a]))
                up, dn = lam.copy(), lam.copy()
                up[a] += h
                dn[a] -= h
                fd = (prog.objective(up) - prog.objective(dn)) / (2.0 * h)
                worst = max(worst, abs(g[a] - fd) / max(1.0, abs(fd)))
            points += 1
    elapsed = time.perf_counter() - start
    _report(
        2,
        "gradient identity",
        worst < 1e-5 and points >= 20 and elapsed < 10.0,
        f"(max rel err {worst:.2e} over {points} points, {elapsed:.2f} s)",
    )


def test_criterion_3_markov_vs_path_logit():
    """Chain loading equals explicit path-logit flows on every shipped network."""
    rng = np.random.default_rng(3)
    worst = 0.0
    for name, data in sorted(SHIPPED_NETWORKS.items()):
        net = build(data)
        for beta in (0.7, 1.0, 2.0):
            choice = Logit(beta)
            lam = net.lambda0 * (1.0 + rng.uniform(0.0, 0.8, net.n_arcs))
            for k in range(net.n_sources):
                dag = build_supports(net, k)
                sol = solve_tau(net, choice, dag, lam)
                state = load_flows(net, choice, dag, sol, 1.5)
                oracle = path_logit_oracle(net, dag, lam, beta=beta, x=1.5)
                worst = max(worst, float(np.max(np.abs(state.v - oracle))))
    _report(3, "Markovian vs path-logit loading", worst < 1e-10, f"(max gap {worst:.2e})")


def test_criterion_4_monotone_value_iteration():
    """Value iteration from shortest-path distances: monotone, exact fast."""
    rng = np.random.default_rng(4)
    ok = True
    detail = []
    for name, data in sorted(SHIPPED_NETWORKS.items()):
        net = build(data)
        lam = net.lambda0 * (1.0 + rng.uniform(0.0, 0.6, net.n_arcs))
        for k in range(net.n_sources):
            dag = build_supports(net, k)
            sol = solve_tau(net, LOGIT, dag, lam, method="iterate", record_history=True)
            finite = dag.reachable
            monotone = all(
                np.all(after[finite] <= before[finite] + 1e-12)
                for before, after in zip(sol.history, sol.history[1:])
            )
            ok = ok and monotone and sol.residual < 1e-12 and sol.sweeps <= net.n_nodes
            detail.append(sol.sweeps)
    _report(4, "monotone value iteration", ok, f"(sweeps used: {sorted(set(detail))})")


def test_criterion_5_wardrop_limit():
    """Deterministic-min routing equalizes used-link delays (bisection oracle)."""
    net = build(TWO_LINK_ASYMMETRIC)
    demand = 2.5
    total = lambda mu: sum(
        a.latency.latency_inverse(max(mu, a.latency.lambda0)) for a in net.arcs
    )
    mu_oracle = _bisect(lambda mu: total(mu) - demand, 1.3, 50.0)
    eq = solve_mte(net, DeterministicMin(), [demand])
    both_used = bool(np.all(eq.w > 1e-9))
    spread = abs(eq.lam[0] - eq.lam[1])
    gap = float(np.max(np.abs(eq.lam - mu_oracle)))
    _report(
        5,
        "deterministic-min delay equalization",
        both_used and spread < 1e-6 and gap < 1e-6,
        f"(delay spread {spread:.2e}, oracle gap {gap:.2e})",
    )


def test_criterion_6_single_link_rate_control():
    """Single-link fixed-route equilibrium hits the closed-form quadratic root."""
    data = {
        "nodes": ["s", "d"],
        "arcs": [{"id": "a", "tail": "s", "head": "d", "model": "mm1", "capacity": 2.0, "lambda0": 1.0}],
        "sources": [{"id": "k", "origin": "s", "destination": "d", "rate": "vegas", "alpha": 1.0, "D": 1.0}],
    }
    net = build(data)
    p_star = (1.0 + math.sqrt(5.0)) / 4.0  # root of 4p^2 - 2p - 1 = 0
    p_oracle = _bisect(lambda p: net.arcs[0].latency.latency_inverse(1.0 + p) - 1.0 / p, 0.1, 5.0)
    assert p_oracle == pytest.approx(p_star, abs=1e-10)
    sol = solve_num_singlepath(net, opts=SolverOptions(tol=1e-10))
    err = max(abs(sol.p[0] - p_star), abs(sol.x[0] - 1.0 / p_star))
    _report(6, "single-link rate control", err < 1e-8, f"(max err {err:.2e})")


def test_criterion_7_uniqueness():
    """Distinct interior starts agree on every shipped network."""
    worst = 0.0
    for name, data in sorted(SHIPPED_NETWORKS.items()):
        net = build(data)
        a = solve_mnum(net, LOGIT, SolverOptions(start_scale=1.1))
        b = solve_mnum(net, LOGIT, SolverOptions(start_scale=2.5))
        worst = max(worst, float(np.max(np.abs(a.lam - b.lam))))
    _report(7, "uniqueness across starts", worst < 1e-6, f"(max spread {worst:.2e})")


def test_criterion_8_choice_axioms_and_mc_oracle():
    """Expected-minimum axioms at 1e3 random points plus the sampling oracle."""
    rng = np.random.default_rng(8)
    failures = 0
    for _ in range(1000):
        beta = float(rng.uniform(0.3, 4.0))
        model = Logit(beta)
        z = rng.uniform(-3.0, 3.0, int(rng.integers(2, 6)))
        c = float(rng.uniform(-5.0, 5.0))
        report = check_choice_axioms(model, z, c, tol=1e-9)
        if not all(entry["passed"] for entry in report.values()):
            failures += 1
        z2 = rng.uniform(-3.0, 3.0, z.size)
        mid = model.value(0.5 * (z + z2))
        if mid < 0.5 * (model.value(z) + model.value(z2)) - 1e-9:
            failures += 1
    mean, stderr = mc_oracle(Logit(1.0), [0.0, 0.0], n_samples=1_000_000, seed=88)
    brackets = abs(mean - (-math.log(2.0))) <= 3.0 * stderr
    _report(
        8,
        "choice axioms + Monte Carlo oracle",
        failures == 0 and brackets,
        f"(axiom failures {failures}, MC gap {abs(mean + math.log(2.0)):.2e} vs 3 stderr {3 * stderr:.2e})",
    )


def test_criterion_9_protocol_consistency():
    """Noise-free simulation approaches x*; unit-gain fixed point solves the equations."""
    net = build(TWO_LINK_SYMMETRIC)
    res = run(net, LOGIT, ProtocolConfig(outer=1000))
    rel = [rec["rate_dist"] / abs(res.reference.x[0]) for rec in res.outer_records]
    first_within = next((i + 1 for i, r in enumerate(rel) if r < 0.01), None)
    reached = first_within is not None and rel[-1] < 0.01

    prog = DualProgram(net, LOGIT)
    ref = prog.solve(SolverOptions())
    state = init_protocol_state(net, prog, ProtocolConfig())
    state.tau_est = np.array([st.tau for st in ref.states])
    state.lambda_est = ref.lam.copy()
    state.rates = ref.x.copy()
    for _ in range(3):
        refresh_link_estimates(state, net, LOGIT, prog.dags)
        source_update(state, net, prog.dags, prog.tau0, delta=1.0)
        router_update(state, net, LOGIT, prog.dags, alpha=1.0)
    resid = protocol_residuals(state, net, LOGIT, prog)
    fixed_ok = max(resid.values()) < 1e-6
    _report(
        9,
        "protocol consistency",
        reached and fixed_ok,
        f"(within 1% at outer step {first_within}, fixed-point residual {max(resid.values()):.2e})",
    )


def test_criterion_10_flow_conservation():
    """Node balance residual below 1e-10 for every solved instance."""
    worst = 0.0
    count = 0
    for name, data in sorted(SHIPPED_NETWORKS.items()):
        net = build(data)
        eq = solve_mnum(net, LOGIT)
        for state in eq.states:
            worst = max(worst, state.conservation_residual)
            count += 1
    eq = solve_mte(build(TWO_LINK_ASYMMETRIC), DeterministicMin(), [2.5])
    for state in eq.states:
        worst = max(worst, state.conservation_residual)
        count += 1
    _report(
        10,
        "flow conservation",
        worst < 1e-10,
        f"(max residual {worst:.2e} over {count} routing states)",
    )
