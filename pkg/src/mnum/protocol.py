"""Flow-level simulator of the distributed two-time-scale control scheme.

Routers keep per-source estimates of the expected delay-to-destination and
refresh them on a slow clock by blending in the value observed over their
out-stars (exact, or averaged over Gumbel-perturbed samples to mimic packet
measurements).  Sources run on a fast clock: each sweep they read the
estimated end-to-end delay at their origin, subtract the free-flow delay to
get a queueing-delay signal ``Q`` and relax their rate through

    x <- (1 - delta) x + delta f(Q).

Between rate sweeps the current rates are reloaded through the routing
module and the link delay estimates are refreshed from the induced loads, so
the simulation never models individual packets or queues.  Traces record the
distance to the exact equilibrium computed by the solver.

The default smoothing ``alpha`` matters: with full inner relaxation the
outer map composes the rate response with the congestion response, which can
be expansive (delay-based rates are highly elastic at small queueing
delays); router smoothing keeps the loop contractive.

The simulator accepts any choice model, but the deterministic-min model
routes all-or-nothing and the resulting loop flaps between links instead of
settling; distances are recorded and reported either way.  The smooth
(logit) models are the intended regime.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .choice import ChoiceModel, Logit, gumbel_noise
from .equilibrium import DualProgram, Equilibrium, Q_FLOOR, SolverOptions
from .network import Network
from .routing import markov_load

log = logging.getLogger(__name__)


@dataclass
class ProtocolConfig:
    inner: int = 50
    outer: int = 200
    alpha: float = 0.5
    delta: float = 0.5
    noise_sigma: float = 0.0  # additive zero-mean Gaussian on observed source delays
    router_window: int = 1  # samples averaged per router observation
    router_noise: bool = False  # Gumbel-perturbed router observations
    seed: int = 42
    use_tau0_estimate: bool = False  # subtract the running-min estimate instead of the exact tau0
    x0: np.ndarray | None = None
    warm_start: bool = True  # False: router estimates start at free flow (slow-start transient)


@dataclass
class ProtocolState:
    tau_est: np.ndarray  # (n_sources, n_nodes) expected delay-to-destination estimates
    rates: np.ndarray  # (n_sources,)
    lambda_est: np.ndarray  # (n_arcs,) current link delays implied by loaded flows
    t_min: np.ndarray  # (n_sources,) running minimum of observed end-to-end delays
    last_q: np.ndarray  # (n_sources,) queueing-delay signal used in the last rate sweep
    outer_step: int = 0
    inner_step: int = 0
    delta_scale: float = 1.0  # halved for a sweep after a transient overload
    rng: np.random.Generator = None


@dataclass
class TraceRow:
    outer_step: int
    inner_step: int
    source: str
    rate: float
    q_est: float
    dist_to_eq: float


@dataclass
class ProtocolResult:
    trace: list[TraceRow]
    outer_records: list[dict]
    state: ProtocolState
    events: list[dict]
    reference: Equilibrium
    tau0: np.ndarray
    tau0_estimate: np.ndarray

    def final_rate_distance(self) -> float:
        return self.outer_records[-1]["rate_dist"] if self.outer_records else math.inf

    def summary(self, net: Network) -> dict:
        rel = self.final_rate_distance() / max(float(np.max(np.abs(self.reference.x))), 1e-300) \
            if self.reference.x.size else 0.0
        return {
            "schema": "mnum-simulation/1",
            "sources": [s.id for s in net.sources],
            "final_rates": [float(v) for v in self.state.rates],
            "equilibrium_rates": [float(v) for v in self.reference.x],
            "final_rate_distance": self.final_rate_distance(),
            "final_rate_distance_rel": float(rel),
            "final_tau_distance": self.outer_records[-1]["tau_dist"] if self.outer_records else math.inf,
            "tau0_exact": [float(v) for v in self.tau0],
            "tau0_estimate": [float(v) for v in self.tau0_estimate],
            "tau0_bias": [float(e - t) for e, t in zip(self.tau0_estimate, self.tau0)],
            "overload_events": len(self.events),
            "outer_steps": self.state.outer_step,
            "inner_steps_per_outer": 0 if not self.outer_records else self.outer_records[-1]["inner"],
        }


def init_protocol_state(net: Network, program: DualProgram, cfg: ProtocolConfig) -> ProtocolState:
    """Initial rates at f(tau0); router estimates at free flow or warm-started.

    A cold start leaves the delay estimates at their free-flow values, so a
    delay-based source first observes zero queueing delay and overshoots
    (the slow-start transient, absorbed by overload damping).  The default
    warm start refreshes link delays from the initial loads once and sets
    the estimates to the matching fixed point, which keeps early sweeps
    inside the rate curves' comfortable range.
    """
    if cfg.x0 is not None:
        rates = np.asarray(cfg.x0, dtype=float).copy()
        if rates.shape != (net.n_sources,) or np.any(rates <= 0.0):
            raise ValueError("x0 must give one positive rate per source")
    else:
        rates = np.array(
            [src.rate.rate(max(t0, Q_FLOOR)) for src, t0 in zip(net.sources, program.tau0)]
        )
    state = ProtocolState(
        tau_est=np.array([sol.tau for sol in program.tau_solutions(net.lambda0)]),
        rates=rates,
        lambda_est=net.lambda0.copy(),
        t_min=np.full(net.n_sources, np.inf),
        last_q=np.zeros(net.n_sources),
        rng=np.random.default_rng(cfg.seed),
    )
    if cfg.warm_start:
        refresh_link_estimates(state, net, program.choice, program.dags)
        state.tau_est = np.array(
            [sol.tau for sol in program.tau_solutions(state.lambda_est)]
        )
        state.delta_scale = 1.0
    return state


def refresh_link_estimates(state: ProtocolState, net: Network, choice: ChoiceModel, dags) -> list:
    """Reload current rates through the routing chains and refresh link delays.

    Returns the list of arcs whose load reached capacity this sweep (the
    transient-overload event); link delays are evaluated on clamped flows so
    the run survives the transient.
    """
    w = np.zeros(net.n_arcs)
    for k, dag in enumerate(dags):
        z = np.full(net.n_arcs, np.inf)
        arcs = dag.arcs
        z[arcs] = state.lambda_est[arcs] + state.tau_est[k][net.arc_head[arcs]]
        _, v, _, _, _ = markov_load(net, choice, dag, z, float(state.rates[k]))
        w += v
    overloaded = [int(ai) for ai in np.flatnonzero(w >= net.capacity)]
    state.delta_scale = 0.5 if overloaded else 1.0
    state.lambda_est = net.s_clamped(w)
    return overloaded


def router_update(state: ProtocolState, net: Network, choice: ChoiceModel, dags, alpha: float,
                  window: int = 1, perturb: bool = False) -> ProtocolState:
    """One slow-clock sweep: blend observed out-star values into the estimates.

    The observation at node ``i`` is the choice value of the labels
    ``lambda_est + tau_est[head]`` over the restricted out-star; with
    ``perturb`` it is the average of ``window`` sampled minima with matched
    Gumbel noise (an unbiased packet-level surrogate, logit models only).
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    if perturb and not isinstance(choice, Logit):
        raise ValueError("perturbed router observations require a Logit choice model")
    new = state.tau_est.copy()
    for k, dag in enumerate(dags):
        for i in dag.order:
            if i == dag.destination:
                continue
            star = dag.out_stars[i]
            labels = state.lambda_est[star] + state.tau_est[k][net.arc_head[star]]
            if perturb:
                eps = gumbel_noise(choice.beta, state.rng, (window, star.size))
                observed = float((labels + eps).min(axis=1).mean())
            else:
                observed = choice.value(labels)
            new[k, i] = (1.0 - alpha) * state.tau_est[k, i] + alpha * observed
    state.tau_est = new
    return state


def source_update(state: ProtocolState, net: Network, dags, tau0_ref: np.ndarray, delta: float,
                  noise_sigma: float = 0.0) -> ProtocolState:
    """One fast-clock sweep of the rate relaxation for every source."""
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"delta must be in (0, 1], got {delta}")
    delta_eff = delta * state.delta_scale
    for k, dag in enumerate(dags):
        observed = float(state.tau_est[k, dag.origin])
        if noise_sigma > 0.0:
            observed += noise_sigma * float(state.rng.standard_normal())
        state.t_min[k] = min(state.t_min[k], observed)
        q = max(observed - float(tau0_ref[k]), Q_FLOOR)
        state.last_q[k] = q
        target = net.sources[k].rate.rate(q)
        state.rates[k] = (1.0 - delta_eff) * state.rates[k] + delta_eff * target
    return state


def estimate_tau0(state: ProtocolState) -> np.ndarray:
    """Running-minimum estimate of the free-flow end-to-end delay per source."""
    if np.any(~np.isfinite(state.t_min)):
        raise ValueError("no delay observations recorded yet")
    return state.t_min.copy()


def protocol_residuals(state: ProtocolState, net: Network, choice: ChoiceModel, program: DualProgram) -> dict:
    """Fixed-point residuals of the current state against the equilibrium equations."""
    dags = program.dags
    dp = 0.0
    for k, dag in enumerate(dags):
        for i in dag.order:
            if i == dag.destination:
                continue
            star = dag.out_stars[i]
            labels = state.lambda_est[star] + state.tau_est[k][net.arc_head[star]]
            dp = max(dp, abs(state.tau_est[k, i] - choice.value(labels)))
    rate = 0.0
    for k, src in enumerate(net.sources):
        q = max(float(state.tau_est[k, dags[k].origin]) - float(program.tau0[k]), Q_FLOOR)
        rate = max(rate, abs(float(state.rates[k]) - src.rate.rate(q)))
    w = np.zeros(net.n_arcs)
    for k, dag in enumerate(dags):
        z = np.full(net.n_arcs, np.inf)
        arcs = dag.arcs
        z[arcs] = state.lambda_est[arcs] + state.tau_est[k][net.arc_head[arcs]]
        _, v, _, _, _ = markov_load(net, choice, dag, z, float(state.rates[k]))
        w += v
    rmnum = float(np.max(np.abs(state.lambda_est - net.s_clamped(w)))) if net.n_arcs else 0.0
    return {"dp_residual": dp, "rate_residual": rate, "rmnum_residual": rmnum}


def run(net: Network, choice: ChoiceModel, cfg: ProtocolConfig | None = None,
        reference: Equilibrium | None = None, program: DualProgram | None = None) -> ProtocolResult:
    """Simulate the two-time-scale scheme and measure distance to equilibrium.

    Each outer step runs ``cfg.inner`` fast sweeps (flow reload + rate
    update per source), then one router sweep.  The returned trace has one
    row per (outer, inner, source); outer records carry the sup-norm
    distances of rates and router estimates to the exact equilibrium, which
    is solved here unless ``reference`` is supplied.  Fixed seeds make runs
    bit-identical.
    """
    cfg = cfg or ProtocolConfig()
    if cfg.inner < 1:
        raise ValueError(f"need at least one inner step per outer step, got {cfg.inner}")
    if cfg.outer < 1:
        raise ValueError(f"need at least one outer step, got {cfg.outer}")
    program = program or DualProgram(net, choice)
    if reference is None:
        reference = program.solve(SolverOptions())
    dags = program.dags

    state = init_protocol_state(net, program, cfg)
    trace: list[TraceRow] = []
    events: list[dict] = []
    outer_records: list[dict] = []
    ref_tau = np.array([st.tau for st in reference.states]) if reference.states else None

    for outer in range(1, cfg.outer + 1):
        state.outer_step = outer
        for inner in range(1, cfg.inner + 1):
            state.inner_step = inner
            overloaded = refresh_link_estimates(state, net, choice, dags)
            if overloaded:
                events.append({"outer": outer, "inner": inner, "arcs": overloaded})
            tau0_ref = estimate_tau0(state) if cfg.use_tau0_estimate and np.all(
                np.isfinite(state.t_min)
            ) else program.tau0
            source_update(state, net, dags, tau0_ref, cfg.delta, cfg.noise_sigma)
            for k, src in enumerate(net.sources):
                dist = abs(float(state.rates[k]) - float(reference.x[k])) if reference.x.size else 0.0
                trace.append(
                    TraceRow(
                        outer_step=outer,
                        inner_step=inner,
                        source=src.id,
                        rate=float(state.rates[k]),
                        q_est=float(state.last_q[k]),
                        dist_to_eq=dist,
                    )
                )
        overloaded = refresh_link_estimates(state, net, choice, dags)
        if overloaded:
            events.append({"outer": outer, "inner": cfg.inner, "arcs": overloaded})
        router_update(state, net, choice, dags, cfg.alpha, cfg.router_window, cfg.router_noise)
        rate_dist = float(np.max(np.abs(state.rates - reference.x))) if reference.x.size else 0.0
        if ref_tau is not None:
            finite = np.isfinite(ref_tau)
            tau_dist = float(np.max(np.abs(state.tau_est[finite] - ref_tau[finite])))
        else:
            tau_dist = 0.0
        outer_records.append(
            {"outer": outer, "inner": cfg.inner, "rate_dist": rate_dist, "tau_dist": tau_dist}
        )
        log.debug("outer %d: rate_dist=%.3e tau_dist=%.3e", outer, rate_dist, tau_dist)

    tau0_estimate = state.t_min.copy()
    return ProtocolResult(
        trace=trace,
        outer_records=outer_records,
        state=state,
        events=events,
        reference=reference,
        tau0=program.tau0.copy(),
        tau0_estimate=tau0_estimate,
    )
