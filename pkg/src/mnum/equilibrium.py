"""Equilibrium solvers built on the strictly convex dual in link delays.

The decision vector is the link delay vector ``lam`` on the box
``lam >= lambda0``.  The dual objective is

    Phi(lam) = sum_a int_{lambda0_a}^{lam_a} s_a^{-1}(z) dz  -  demand term

where the demand term is ``sum_k F_k(q_k(lam))`` for joint rate control
(``q_k`` the end-to-end queueing delay seen by source ``k``) or
``sum_k x_k tau_k(lam)`` when demands are fixed.  Its gradient is
``s_a^{-1}(lam_a) - w_a(lam)`` with ``w`` the loads induced by routing the
current rates, so a vanishing gradient is exactly the delay-consistency
fixed point ``lam_a = s_a(w_a(lam))``.

Smooth choice models are minimized by projected gradient descent with an
Armijo backtracking line search; the deterministic-min (noise-free) choice
model makes the demand term piecewise linear, so it is handled by an
equivalent path-epigraph program solved with SLSQP.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .choice import ChoiceModel, DeterministicMin
from .errors import ConvergenceError, LineSearchError, NetworkError
from .network import Network
from .routing import (
    RoutingState,
    SupportDAG,
    TauSolution,
    aggregate_link_loads,
    build_supports,
    conservation_residual,
    enumerate_paths,
    load_flows,
    shortest_path_arcs,
    solve_tau,
)

log = logging.getLogger(__name__)

Q_FLOOR = 1e-10


@dataclass
class SolverOptions:
    tol: float = 1e-8
    max_iter: int = 5000
    step0: float = 1.0
    armijo_c1: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 60
    method: str = "descent"  # or "fixedpoint"
    theta: float = 0.5  # fixed-point damping
    start: np.ndarray | None = None
    start_scale: float = 1.25
    support_mode: str = "acyclic"
    record_history: bool = True


@dataclass
class Equilibrium:
    """Solved equilibrium bundle with residual diagnostics."""

    lam: np.ndarray
    w: np.ndarray
    x: np.ndarray
    q: np.ndarray
    states: list[RoutingState]
    objective: float
    grad_norm: float
    rmnum_residual: float
    iterations: int
    converged: bool = True
    method: str = "descent"
    objective_history: list = field(default_factory=list)
    gradnorm_history: list = field(default_factory=list)


class DualProgram:
    """Dual program machinery for one network and choice model.

    ``demands=None`` couples routing with the sources' rate curves (joint
    equilibrium); an array of fixed per-source demands gives the
    fixed-demand routing equilibrium instead.  Supports and free-flow
    delays are frozen at construction.
    """

    def __init__(self, net: Network, choice: ChoiceModel, demands=None, support_mode: str = "acyclic"):
        self.net = net
        self.choice = choice
        self.dags = [build_supports(net, k, mode=support_mode) for k in range(net.n_sources)]
        self.tau0 = np.array(
            [solve_tau(net, choice, dag, net.lambda0).tau[dag.origin] for dag in self.dags]
        )
        if demands is None:
            self.demands = None
        else:
            demands = np.asarray(demands, dtype=float)
            if demands.shape != (net.n_sources,):
                raise ValueError(f"expected {net.n_sources} demands, got shape {demands.shape}")
            if np.any(demands < 0.0):
                raise ValueError("demands must be nonnegative")
            self.demands = demands

    # -- building blocks ----------------------------------------------------

    def tau_solutions(self, lam) -> list[TauSolution]:
        return [solve_tau(self.net, self.choice, dag, lam) for dag in self.dags]

    def q_values(self, lam, sols=None) -> np.ndarray:
        sols = sols or self.tau_solutions(lam)
        return np.array([s.tau[d.origin] for s, d in zip(sols, self.dags)]) - self.tau0

    def rates(self, q: np.ndarray) -> np.ndarray:
        if self.demands is not None:
            return self.demands.copy()
        return np.array(
            [src.rate.rate(max(qk, Q_FLOOR)) for src, qk in zip(self.net.sources, q)]
        )

    def loads(self, lam):
        """Route current rates at ``lam``; returns ``(w, x, q, states)``."""
        sols = self.tau_solutions(lam)
        q = self.q_values(lam, sols)
        x = self.rates(q)
        states = [
            load_flows(self.net, self.choice, dag, sol, xk)
            for dag, sol, xk in zip(self.dags, sols, x)
        ]
        if states:
            w = aggregate_link_loads(states)
        else:
            w = np.zeros(self.net.n_arcs)
        return w, x, q, states

    # -- objective / gradient -------------------------------------------------

    def objective(self, lam) -> float:
        """Dual objective; ``+inf`` where a demand primitive is singular.

        Joint mode evaluates ``-F_k`` at the queueing delay ``q_k``, which
        blows up to ``+inf`` as ``q_k -> 0`` for delay-based rate curves;
        returning the sentinel lets the line search reject such points.
        """
        lam = np.asarray(lam, dtype=float)
        total = self.net.s_inverse_integral(lam)
        if self.net.n_sources == 0:
            return total
        sols = self.tau_solutions(lam)
        q = self.q_values(lam, sols)
        if self.demands is not None:
            taus = q + self.tau0
            return total - float(np.dot(self.demands, taus))
        for src, qk in zip(self.net.sources, q):
            if qk < Q_FLOOR and src.rate.primitive_singular_at_zero:
                return math.inf
            total -= src.rate.primitive(max(qk, Q_FLOOR))
        return total

    def gradient(self, lam) -> np.ndarray:
        lam = np.asarray(lam, dtype=float)
        w, _, _, _ = self.loads(lam)
        return self.net.s_inverse(lam) - w

    def projected_gradient_norm(self, lam, g=None) -> float:
        """Sup-norm of the box-aware optimality residual at ``lam``."""
        lam = np.asarray(lam, dtype=float)
        g = self.gradient(lam) if g is None else g
        pg = np.where(lam > self.net.lambda0, g, np.minimum(g, 0.0))
        return float(np.max(np.abs(pg))) if pg.size else 0.0

    # -- solvers ---------------------------------------------------------------

    def default_start(self, opts: SolverOptions) -> np.ndarray:
        if opts.start is not None:
            start = np.asarray(opts.start, dtype=float)
            if start.shape != (self.net.n_arcs,):
                raise ValueError(f"start must have {self.net.n_arcs} entries")
            return np.maximum(start, self.net.lambda0)
        return opts.start_scale * self.net.lambda0

    def solve(self, opts: SolverOptions | None = None) -> Equilibrium:
        opts = opts or SolverOptions()
        if isinstance(self.choice, DeterministicMin):
            return _solve_min_epigraph(self, opts)
        if opts.method == "descent":
            return self._solve_descent(opts)
        if opts.method == "fixedpoint":
            return self._solve_fixedpoint(opts)
        raise ValueError(f"unknown solver method {opts.method!r}")

    def _solve_descent(self, opts: SolverOptions) -> Equilibrium:
        lam, info = _projected_descent(
            self.objective, self.gradient, self.default_start(opts), self.net.lambda0, opts
        )
        return self._bundle(
            lam, info["iterations"], "descent", info["objective_history"], info["gradnorm_history"], opts
        )

    def _solve_fixedpoint(self, opts: SolverOptions) -> Equilibrium:
        """Damped delay-consistency iteration ``lam <- (1-theta) lam + theta s(w(lam))``."""
        lam = self.default_start(opts)
        resid_hist = []
        iterations = 0
        for iterations in range(1, opts.max_iter + 1):
            w, _, _, _ = self.loads(lam)
            target = self.net.s_clamped(w)
            residual = float(np.max(np.abs(lam - target))) if lam.size else 0.0
            resid_hist.append(residual)
            if residual < opts.tol:
                break
            lam = np.maximum((1.0 - opts.theta) * lam + opts.theta * target, self.net.lambda0)
        else:
            raise ConvergenceError(
                f"fixed-point iteration did not reach tol {opts.tol:g} in {opts.max_iter} iterations",
                iterations=opts.max_iter,
                residual=resid_hist[-1] if resid_hist else math.inf,
            )
        return self._bundle(lam, iterations, "fixedpoint", [], resid_hist, opts)

    def _bundle(self, lam, iterations, method, obj_hist, gn_hist, opts) -> Equilibrium:
        w, x, q, states = self.loads(lam)
        if np.any(w >= self.net.capacity):
            raise ConvergenceError("solution loads reached link capacity", iterations=iterations)
        rmnum = float(np.max(np.abs(lam - self.net.s_clamped(w)))) if lam.size else 0.0
        log.debug("%s converged: %d iterations, residual %.3e", method, iterations, rmnum)
        return Equilibrium(
            lam=lam,
            w=w,
            x=x,
            q=q,
            states=states,
            objective=self.objective(lam),
            grad_norm=self.projected_gradient_norm(lam),
            rmnum_residual=rmnum,
            iterations=iterations,
            converged=True,
            method=method,
            objective_history=obj_hist if opts.record_history else [],
            gradnorm_history=gn_hist if opts.record_history else [],
        )


# ---------------------------------------------------------------------------
# deterministic-min (noise-free) solver


def _solve_min_epigraph(program: DualProgram, opts: SolverOptions) -> Equilibrium:
    """Exact nonsmooth dual via a path-epigraph reformulation.

    With the deterministic-min choice model ``tau_k(lam)`` is the shortest
    path cost, so the demand term is piecewise linear and gradient descent
    cannot certify optimality at the kinks.  Introducing one epigraph
    variable ``t_k <= cost of every support path`` makes the program smooth
    with linear constraints; SLSQP solves it and a nonnegative path-flow
    decomposition rebuilds per-source routing states.
    """
    net, dags = program.net, program.dags
    n_arcs, n_src = net.n_arcs, net.n_sources
    lower = net.lambda0

    if n_src == 0:
        lam = lower.copy()
        return Equilibrium(
            lam=lam,
            w=np.zeros(n_arcs),
            x=np.zeros(0),
            q=np.zeros(0),
            states=[],
            objective=0.0,
            grad_norm=0.0,
            rmnum_residual=0.0,
            iterations=0,
            method="epigraph",
        )

    paths = [enumerate_paths(net, dag) for dag in dags]
    rows = []
    for k, plist in enumerate(paths):
        for p in plist:
            row = np.zeros(n_arcs + n_src)
            row[p] += 1.0
            row[n_arcs + k] = -1.0
            rows.append(row)
    G = np.array(rows)

    tau0 = program.tau0
    fixed = program.demands

    def split(y):
        return y[:n_arcs], y[n_arcs:]

    def fun(y):
        lam, t = split(y)
        lam = np.maximum(lam, lower)
        total = net.s_inverse_integral(lam)
        if fixed is not None:
            return total - float(np.dot(fixed, t))
        for src, tk, t0 in zip(net.sources, t, tau0):
            total -= src.rate.primitive(max(tk - t0, Q_FLOOR))
        return total

    def jac(y):
        lam, t = split(y)
        lam = np.maximum(lam, lower)
        g = np.empty(n_arcs + n_src)
        g[:n_arcs] = net.s_inverse(lam)
        if fixed is not None:
            g[n_arcs:] = -fixed
        else:
            g[n_arcs:] = [
                -src.rate.rate(max(tk - t0, Q_FLOOR))
                for src, tk, t0 in zip(net.sources, t, tau0)
            ]
        return g

    lam_start = program.default_start(opts)
    t0 = np.array(
        [min(lam_start[p].sum() for p in plist) for plist in paths]
    ) - 1e-9
    if fixed is None:
        t0 = np.maximum(t0, tau0 + 10 * Q_FLOOR)
    y0 = np.concatenate([lam_start, t0])

    bounds = [(float(lo), None) for lo in lower]
    if fixed is None:
        bounds += [(float(t) + Q_FLOOR, None) for t in tau0]
    else:
        bounds += [(None, None)] * n_src

    res = scipy.optimize.minimize(
        fun,
        y0,
        jac=jac,
        bounds=bounds,
        constraints=[{"type": "ineq", "fun": lambda y: G @ y, "jac": lambda y: G}],
        method="SLSQP",
        options={"maxiter": 1000, "ftol": 1e-14},
    )
    if not res.success and res.status != 8:  # 8: positive directional derivative (flat tail)
        raise ConvergenceError(f"SLSQP failed: {res.message}", iterations=res.nit)

    lam, t = split(res.x)
    lam = np.maximum(lam, lower)
    w = np.maximum(net.s_inverse(lam), 0.0)
    min_costs = np.array([min(lam[p].sum() for p in plist) for plist in paths])
    bind_gap = float(np.max(np.abs(t - min_costs))) if n_src else 0.0
    if bind_gap > 1e-6:
        raise ConvergenceError(
            "epigraph variables did not bind to the shortest path costs",
            iterations=int(res.nit),
            residual=bind_gap,
        )
    q = min_costs - tau0
    x = fixed.copy() if fixed is not None else np.array(
        [src.rate.rate(max(qk, Q_FLOOR)) for src, qk in zip(net.sources, q)]
    )
    states = _recover_min_states(program, paths, lam, min_costs, w, x)
    w_states = aggregate_link_loads(states) if states else np.zeros(n_arcs)
    rmnum = float(np.max(np.abs(lam - net.s_clamped(w_states)))) if n_arcs else 0.0
    g = net.s_inverse(lam) - w_states
    pg = np.where(lam > lower, g, np.minimum(g, 0.0))
    return Equilibrium(
        lam=lam,
        w=w_states,
        x=x,
        q=q,
        states=states,
        objective=program.objective(lam),
        grad_norm=float(np.max(np.abs(pg))),
        rmnum_residual=rmnum,
        iterations=int(res.nit),
        method="epigraph",
    )


def _recover_min_states(program: DualProgram, paths, lam, min_costs, w_target, x):
    """Nonnegative path flows on (near-)shortest paths matching the dual loads.

    Solves a bound-constrained least squares for path flows whose arc
    aggregation reproduces ``w_target`` and whose per-source totals match
    ``x`` (totals are then enforced exactly by rescaling).  The realized
    splits define the per-node transition rows of each routing state.
    """
    net, dags = program.net, program.dags
    active = []  # (source k, arc list)
    for k, plist in enumerate(paths):
        tol = 1e-6 * max(1.0, abs(min_costs[k]))
        for p in plist:
            if lam[p].sum() <= min_costs[k] + tol:
                active.append((k, p))
    n_cols = len(active)
    demand_weight = 1e3
    A = np.zeros((net.n_arcs + net.n_sources, n_cols))
    b = np.concatenate([w_target, demand_weight * x])
    for col, (k, p) in enumerate(active):
        for ai in p:
            A[ai, col] += 1.0
        A[net.n_arcs + k, col] = demand_weight
    sol = scipy.optimize.lsq_linear(A, b, bounds=(0.0, np.inf), tol=1e-14)
    h = sol.x

    states = []
    for k, dag in enumerate(dags):
        vk = np.zeros(net.n_arcs)
        total = 0.0
        for col, (kk, p) in enumerate(active):
            if kk != k:
                continue
            vk[p] += h[col]
            total += h[col]
        if total > 0.0 and x[k] > 0.0:
            vk *= x[k] / total
        tausol = solve_tau(net, DeterministicMin(), dag, lam)
        phi = np.zeros(net.n_nodes)
        for i in dag.order:
            inflow = float(sum(vk[ai] for ai in net.in_arcs[i] if dag.arc_mask[ai]))
            phi[i] = inflow + (x[k] if i == dag.origin else 0.0)
        phi[dag.destination] = float(
            sum(vk[ai] for ai in net.in_arcs[dag.destination] if dag.arc_mask[ai])
        )
        rel_nodes = np.array([i for i in dag.order if i != dag.destination], dtype=int)
        pos = {int(i): r for r, i in enumerate(rel_nodes)}
        Q = np.zeros((rel_nodes.size, net.n_arcs))
        P = np.zeros((rel_nodes.size, rel_nodes.size))
        mindet = DeterministicMin()
        for r, i in enumerate(rel_nodes):
            star = dag.out_stars[i]
            if phi[i] > 1e-14:
                probs = vk[star] / phi[i]
                s = probs.sum()
                probs = probs / s if s > 0 else mindet.gradient(tausol.z[star])
            else:
                probs = mindet.gradient(tausol.z[star])
            Q[r, star] = probs
            for ai, p in zip(star, probs):
                j = int(net.arc_head[ai])
                if j != dag.destination:
                    P[r, pos[j]] += p
        resid = conservation_residual(net, dag, phi, vk, x[k])
        states.append(
            RoutingState(
                source=k,
                tau=tausol.tau,
                z=tausol.z,
                P_hat=P,
                Q_hat=Q,
                phi=phi,
                v=vk,
                rel_nodes=rel_nodes,
                conservation_residual=resid,
            )
        )
    return states


# ---------------------------------------------------------------------------
# module-level operations


def free_flow_tau0(net: Network, choice: ChoiceModel, dag: SupportDAG) -> float:
    """Expected origin-to-destination delay at free flow for ``dag``'s source."""
    return float(solve_tau(net, choice, dag, net.lambda0).tau[dag.origin])


def q_of_lambda(net: Network, choice: ChoiceModel, lam, k: int, dag: SupportDAG | None = None) -> float:
    """End-to-end queueing delay of source ``k`` at delays ``lam``."""
    dag = dag or build_supports(net, k)
    tau0 = free_flow_tau0(net, choice, dag)
    return float(solve_tau(net, choice, dag, lam).tau[dag.origin]) - tau0


def phi_objective(net: Network, choice: ChoiceModel, lam, demands=None) -> float:
    return DualProgram(net, choice, demands).objective(lam)


def phi_gradient(net: Network, choice: ChoiceModel, lam, demands=None) -> np.ndarray:
    return DualProgram(net, choice, demands).gradient(lam)


def solve_mnum(net: Network, choice: ChoiceModel, opts: SolverOptions | None = None) -> Equilibrium:
    """Joint rate-control / routing equilibrium (unique dual minimizer)."""
    opts = opts or SolverOptions()
    return DualProgram(net, choice, support_mode=opts.support_mode).solve(opts)


def solve_mte(net: Network, choice: ChoiceModel, demands, opts: SolverOptions | None = None) -> Equilibrium:
    """Fixed-demand routing equilibrium; demands indexed like ``net.sources``."""
    opts = opts or SolverOptions()
    return DualProgram(net, choice, demands=demands, support_mode=opts.support_mode).solve(opts)


# ---------------------------------------------------------------------------
# single-path rate control


@dataclass
class NumSolution:
    """Rates and per-arc queueing delays for fixed single-path routing."""

    p: np.ndarray  # per-arc queueing delay (0 on arcs outside every route)
    q: np.ndarray  # per-source end-to-end queueing delay
    x: np.ndarray  # per-source rates
    routes: list[list[int]]
    objective: float
    kkt_residual: float
    iterations: int
    converged: bool = True
    objective_history: list = field(default_factory=list)
    gradnorm_history: list = field(default_factory=list)


def solve_num_singlepath(net: Network, routes=None, opts: SolverOptions | None = None) -> NumSolution:
    """Rate-control equilibrium with one fixed arc route per source.

    ``routes`` maps source ids to arc-id lists; unlisted sources default to a
    free-flow shortest path.  Works in per-arc queueing delays ``p >= 0``,
    minimizing ``sum_a int_0^{p_a} psi_a^{-1} - sum_k F_k(sum_{a in route k} p_a)``
    by the same projected descent used for the joint equilibrium.
    """
    opts = opts or SolverOptions()
    routes = dict(routes or {})
    resolved = []
    for k, src in enumerate(net.sources):
        if src.id in routes:
            arcs = [net.arc_index(aid) for aid in routes.pop(src.id)]
            _check_route(net, src, arcs)
        else:
            arcs = shortest_path_arcs(net, net.lambda0, k)
        resolved.append(arcs)
    if routes:
        raise NetworkError(f"routes given for unknown sources {sorted(routes)}")

    used = sorted({ai for route in resolved for ai in route})
    if not used:
        return NumSolution(
            p=np.zeros(net.n_arcs),
            q=np.zeros(0),
            x=np.zeros(0),
            routes=resolved,
            objective=0.0,
            kkt_residual=0.0,
            iterations=0,
        )
    col = {ai: c for c, ai in enumerate(used)}
    incidence = np.zeros((net.n_sources, len(used)))
    for k, route in enumerate(resolved):
        for ai in route:
            incidence[k, col[ai]] += 1.0
    models = [net.arcs[ai].latency for ai in used]
    lam0 = np.array([m.lambda0 for m in models])

    def q_of(p):
        return incidence @ p

    def fun(p):
        total = sum(m.latency_inverse_integral(l0 + pv) for m, l0, pv in zip(models, lam0, p))
        for src, qk in zip(net.sources, q_of(p)):
            if qk < Q_FLOOR and src.rate.primitive_singular_at_zero:
                return math.inf
            total -= src.rate.primitive(max(qk, Q_FLOOR))
        return float(total)

    def grad(p):
        g = np.array([m.latency_inverse(l0 + pv) for m, l0, pv in zip(models, lam0, p)])
        rates = np.array(
            [src.rate.rate(max(qk, Q_FLOOR)) for src, qk in zip(net.sources, q_of(p))]
        )
        return g - incidence.T @ rates

    if opts.start is not None:
        p0 = np.asarray(opts.start, dtype=float)
        if p0.shape != (len(used),):
            raise ValueError(f"start must have {len(used)} entries (one per used arc)")
        p0 = np.maximum(p0, 0.0)
    else:
        p0 = 0.1 * np.ones(len(used))
    p, info = _projected_descent(fun, grad, p0, np.zeros(len(used)), opts)

    q = q_of(p)
    x = np.array([src.rate.rate(max(qk, Q_FLOOR)) for src, qk in zip(net.sources, q)])
    kkt = float(np.max(np.abs(grad(p)))) if p.size else 0.0
    p_full = np.zeros(net.n_arcs)
    p_full[used] = p
    return NumSolution(
        p=p_full,
        q=q,
        x=x,
        routes=resolved,
        objective=fun(p),
        kkt_residual=kkt,
        iterations=info["iterations"],
        objective_history=info["objective_history"],
        gradnorm_history=info["gradnorm_history"],
    )


def _check_route(net: Network, src, arcs):
    if not arcs:
        raise NetworkError(f"source {src.id!r}: empty route")
    if net.arcs[arcs[0]].tail != src.origin:
        raise NetworkError(f"source {src.id!r}: route does not start at the origin")
    for a, b in zip(arcs, arcs[1:]):
        if net.arcs[a].head != net.arcs[b].tail:
            raise NetworkError(f"source {src.id!r}: route is not arc-connected")
    if net.arcs[arcs[-1]].head != src.destination:
        raise NetworkError(f"source {src.id!r}: route does not end at the destination")


def _projected_descent(fun, grad, x0, lower, opts: SolverOptions):
    """Projected gradient descent with Armijo backtracking on a lower-bound box.

    The trial step is warm-started with the safeguarded spectral (secant)
    estimate from the last gradient pair.  Once the achievable objective
    decrease drops below float resolution the Armijo test can no longer
    certify progress, so the solver switches to a polish phase that takes
    the same projected secant steps but accepts on a strict decrease of the
    optimality residual instead (the analytic gradient stays accurate long
    after the objective comparison has gone blind).
    """
    x = np.maximum(np.asarray(x0, dtype=float), lower)
    f = fun(x)
    if not np.isfinite(f):
        raise ValueError("starting point is not strictly interior (objective not finite)")
    obj_hist, gn_hist = [f], []
    t_trial = opts.step0
    x_prev = g_prev = None
    polish = False

    def pg_norm(point, gradient):
        pg = np.where(point > lower, gradient, np.minimum(gradient, 0.0))
        return float(np.max(np.abs(pg))) if pg.size else 0.0

    for iteration in range(1, opts.max_iter + 1):
        g = grad(x)
        pgnorm = pg_norm(x, g)
        gn_hist.append(pgnorm)
        if pgnorm < opts.tol:
            return x, {
                "iterations": iteration,
                "objective_history": obj_hist,
                "gradnorm_history": gn_hist,
            }
        if x_prev is not None:
            dx, dg = x - x_prev, g - g_prev
            curv = float(np.dot(dx, dg))
            t_trial = (
                min(max(float(np.dot(dx, dx)) / curv, 1e-12), 1e12) if curv > 0.0 else opts.step0
            )
        x_prev, g_prev = x, g

        if polish:
            t = t_trial
            moved = False
            for _ in range(50):
                cand = np.maximum(x - t * g, lower)
                if not np.any(cand - x):
                    break
                if pg_norm(cand, grad(cand)) < pgnorm:
                    x = cand
                    moved = True
                    break
                t *= opts.backtrack
            if not moved:
                raise ConvergenceError(
                    "optimality residual cannot be reduced further at float resolution",
                    iterations=iteration,
                    residual=pgnorm,
                )
            continue

        noise_floor = 1e-13 * max(1.0, abs(f))
        t = t_trial
        for _ in range(opts.max_backtracks):
            cand = np.maximum(x - t * g, lower)
            d = cand - x
            if not np.any(d):
                polish = True  # pinned in place; residual descent takes over
                break
            f_cand = fun(cand)
            if f_cand <= f + opts.armijo_c1 * float(np.dot(g, d)):
                if f_cand < f - noise_floor:
                    x, f = cand, f_cand
                    obj_hist.append(f)
                else:
                    polish = True  # decrease indistinguishable from evaluation noise
                break
            t *= opts.backtrack
        else:
            raise LineSearchError("no acceptable Armijo step", iterations=iteration, residual=pgnorm)
    raise ConvergenceError(
        f"descent did not reach tol {opts.tol:g} in {opts.max_iter} iterations",
        iterations=opts.max_iter,
        residual=gn_hist[-1] if gn_hist else math.inf,
    )
