"""Per-source routing: delay-to-destination fixed point and Markov-chain loading.

For one source the routing state is determined by the link delay vector
``lam``:

* ``tau_i`` solves the fixed point ``tau_i = value_i((lam_a + tau_{head(a)})
  for a in the node's out-star)``, with ``tau = 0`` at the destination;
* the choice gradient at the labels ``z_a = lam_a + tau_{head(a)}`` gives the
  per-node split probabilities, forming an absorbing Markov chain whose
  stationary throughputs load the source rate onto arcs.

Supports are frozen from free-flow shortest-path distances: only arcs that
strictly decrease the distance-to-destination are kept, which makes every
per-source chain acyclic and the fixed point solvable by one sweep in
reverse topological order.  A value-iteration solver is retained both as the
general-graph path and as a check of the monotone convergence property.
"""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass

import numpy as np

from .choice import ChoiceModel
from .errors import ConvergenceError, DomainError, NetworkError, OracleUnavailableError
from .network import Network

log = logging.getLogger(__name__)

TAU_TOL = 1e-12
TAU_MAX_ITER = 100_000
CONSERVATION_TOL = 1e-10
SPECTRAL_MARGIN = 1e-8
PATH_CAP = 10_000


# ---------------------------------------------------------------------------
# shortest paths


def free_flow_distances(net: Network, lam, k: int, arc_mask=None) -> np.ndarray:
    """Shortest-path distance from every node to the destination of source ``k``.

    Arc costs are ``lam``; unreachable nodes get ``+inf``.  ``arc_mask``
    optionally restricts the usable arcs.  Raises if the source origin
    cannot reach the destination.
    """
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0.0):
        raise DomainError("arc costs must be nonnegative")
    src = net.sources[k]
    dest = net.node_index(src.destination)
    dist = np.full(net.n_nodes, np.inf)
    dist[dest] = 0.0
    heap = [(0.0, dest)]
    while heap:
        d, j = heapq.heappop(heap)
        if d > dist[j]:
            continue
        for ai in net.in_arcs[j]:
            if arc_mask is not None and not arc_mask[ai]:
                continue
            i = int(net.arc_tail[ai])
            nd = d + lam[ai]
            if nd < dist[i]:
                dist[i] = nd
                heapq.heappush(heap, (nd, i))
    if not np.isfinite(dist[net.node_index(src.origin)]):
        raise NetworkError(
            f"source {src.id!r}: origin cannot reach the destination on the given arcs"
        )
    return dist


def shortest_path_arcs(net: Network, lam, k: int) -> list[int]:
    """One shortest origin-to-destination arc sequence for source ``k``."""
    dist = free_flow_distances(net, lam, k)
    lam = np.asarray(lam, dtype=float)
    src = net.sources[k]
    i = net.node_index(src.origin)
    dest = net.node_index(src.destination)
    path = []
    while i != dest:
        for ai in net.out_arcs[i]:
            j = int(net.arc_head[ai])
            if np.isfinite(dist[j]) and abs(lam[ai] + dist[j] - dist[i]) <= 1e-12 * max(1.0, dist[i]):
                path.append(int(ai))
                i = j
                break
        else:  # pragma: no cover - reachability was validated upstream
            raise NetworkError("failed to trace a shortest path")
    return path


# ---------------------------------------------------------------------------
# supports


@dataclass(frozen=True)
class SupportDAG:
    """Per-source arc subset and restricted out-stars used for routing."""

    source: int
    origin: int
    destination: int
    acyclic: bool
    arc_mask: np.ndarray
    out_stars: tuple
    reachable: np.ndarray
    order: np.ndarray  # reachable nodes sorted by increasing free-flow distance
    tau_bar0: np.ndarray

    @property
    def arcs(self) -> np.ndarray:
        return np.flatnonzero(self.arc_mask)


def build_supports(net: Network, k: int, mode: str = "acyclic") -> SupportDAG:
    """Freeze the routing support of source ``k`` from free-flow distances.

    In the default ``acyclic`` mode an arc is kept iff it strictly decreases
    the free-flow distance-to-destination, so the induced chain cannot
    cycle.  The experimental ``full`` mode keeps every arc whose head can
    reach the destination; flow loading then certifies absorption through a
    spectral-radius check.
    """
    if mode not in ("acyclic", "full"):
        raise ValueError(f"unknown support mode {mode!r}")
    tau_bar0 = free_flow_distances(net, net.lambda0, k)
    src = net.sources[k]
    dest = net.node_index(src.destination)
    origin = net.node_index(src.origin)

    if mode == "acyclic":
        arc_mask = np.array(
            [
                np.isfinite(tau_bar0[h]) and tau_bar0[h] < tau_bar0[t]
                for t, h in zip(net.arc_tail, net.arc_head)
            ]
        )
    else:
        arc_mask = np.isfinite(tau_bar0[net.arc_head])

    reachable = np.isfinite(tau_bar0)
    out_stars = tuple(
        np.array([ai for ai in net.out_arcs[i] if arc_mask[ai]], dtype=int)
        for i in range(net.n_nodes)
    )
    for i in range(net.n_nodes):
        if reachable[i] and i != dest and out_stars[i].size == 0:
            raise NetworkError(
                f"source {src.id!r}: node {net.node_ids[i]!r} reaches the destination "
                "but has an empty restricted out-star"
            )
    order = np.array(sorted(np.flatnonzero(reachable), key=lambda i: tau_bar0[i]), dtype=int)
    return SupportDAG(
        source=k,
        origin=origin,
        destination=dest,
        acyclic=(mode == "acyclic"),
        arc_mask=arc_mask,
        out_stars=out_stars,
        reachable=reachable,
        order=order,
        tau_bar0=tau_bar0,
    )


# ---------------------------------------------------------------------------
# delay-to-destination fixed point


@dataclass
class TauSolution:
    tau: np.ndarray
    z: np.ndarray
    sweeps: int
    residual: float
    history: list | None = None


def _labels_z(net: Network, dag: SupportDAG, lam, tau) -> np.ndarray:
    z = np.full(net.n_arcs, np.inf)
    arcs = dag.arcs
    z[arcs] = lam[arcs] + tau[net.arc_head[arcs]]
    return z


def solve_tau(
    net: Network,
    choice: ChoiceModel,
    dag: SupportDAG,
    lam,
    tol: float = TAU_TOL,
    max_iter: int = TAU_MAX_ITER,
    method: str = "auto",
    record_history: bool = False,
) -> TauSolution:
    """Solve the delay-to-destination fixed point on the support of ``dag``.

    ``method="sweep"`` processes nodes in reverse topological order and is
    exact in one pass (acyclic supports only).  ``method="iterate"`` runs
    value iteration from the shortest-path distances, whose iterates are
    guaranteed non-increasing; a violation or an exhausted ``max_iter``
    raises.  ``auto`` picks the sweep whenever the support is acyclic.
    """
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < net.lambda0 - 1e-12):
        raise DomainError("link delays must dominate free-flow delays")
    if method == "auto":
        method = "sweep" if dag.acyclic else "iterate"
    if method == "sweep" and not dag.acyclic:
        raise ValueError("sweep solver requires an acyclic support")

    if method == "sweep":
        tau = np.full(net.n_nodes, np.inf)
        tau[dag.destination] = 0.0
        for i in dag.order:
            if i == dag.destination:
                continue
            star = dag.out_stars[i]
            tau[i] = choice.value(lam[star] + tau[net.arc_head[star]])
        return TauSolution(tau=tau, z=_labels_z(net, dag, lam, tau), sweeps=1, residual=0.0)

    if method != "iterate":
        raise ValueError(f"unknown tau solver {method!r}")

    tau = free_flow_distances(net, lam, dag.source, arc_mask=dag.arc_mask)
    history = [tau.copy()] if record_history else None
    nodes = [i for i in dag.order if i != dag.destination]
    for sweep in range(1, max_iter + 1):
        new = tau.copy()
        for i in nodes:
            star = dag.out_stars[i]
            new[i] = choice.value(lam[star] + tau[net.arc_head[star]])
        diff = new[dag.reachable] - tau[dag.reachable]
        if np.any(diff > 1e-9 * np.maximum(1.0, np.abs(tau[dag.reachable]))):
            raise ConvergenceError(
                "value iteration produced an increasing sweep", iterations=sweep
            )
        residual = float(np.max(np.abs(diff))) if diff.size else 0.0
        tau = new
        if history is not None:
            history.append(tau.copy())
        if residual < tol:
            log.debug("value iteration for source %d: %d sweeps", dag.source, sweep)
            return TauSolution(
                tau=tau, z=_labels_z(net, dag, lam, tau), sweeps=sweep, residual=residual, history=history
            )
    raise ConvergenceError(
        f"value iteration did not reach tol {tol:g} in {max_iter} sweeps",
        iterations=max_iter,
        residual=residual,
    )


# ---------------------------------------------------------------------------
# Markov-chain flow loading


@dataclass
class RoutingState:
    """One source's routing solution at a given delay vector."""

    source: int
    tau: np.ndarray
    z: np.ndarray
    P_hat: np.ndarray
    Q_hat: np.ndarray
    phi: np.ndarray
    v: np.ndarray
    rel_nodes: np.ndarray
    conservation_residual: float


def markov_load(net: Network, choice: ChoiceModel, dag: SupportDAG, z, x: float):
    """Load a rate ``x`` through the chain defined by arc labels ``z``.

    Builds the split matrix ``Q_hat`` (node x arc) and the transition matrix
    ``P_hat`` restricted to non-absorbing nodes, then solves
    ``(I - P_hat') phi = delta * x`` for the node throughputs and returns
    ``(phi, v, P_hat, Q_hat, rel_nodes)`` with per-arc flows ``v = Q_hat' phi``.
    """
    if x < 0.0:
        raise DomainError(f"source rate must be nonnegative, got {x}")
    z = np.asarray(z, dtype=float)
    rel_nodes = np.array([i for i in dag.order if i != dag.destination], dtype=int)
    pos = {int(i): r for r, i in enumerate(rel_nodes)}
    m = rel_nodes.size
    P = np.zeros((m, m))
    Q = np.zeros((m, net.n_arcs))
    for r, i in enumerate(rel_nodes):
        star = dag.out_stars[i]
        probs = choice.gradient(z[star])
        Q[r, star] = probs
        for ai, p in zip(star, probs):
            j = int(net.arc_head[ai])
            if j != dag.destination:
                P[r, pos[j]] += p

    if not dag.acyclic and m:
        rho = float(np.max(np.abs(np.linalg.eigvals(P))))
        if rho >= 1.0 - SPECTRAL_MARGIN:
            raise DomainError(
                f"absorbing chain not certified: spectral radius {rho:.6f} too close to 1"
            )

    delta = np.zeros(m)
    if m:
        delta[pos[dag.origin]] = x
    try:
        phi_rel = np.linalg.solve(np.eye(m) - P.T, delta)
    except np.linalg.LinAlgError:  # pragma: no cover - guarded by construction
        raise NetworkError("flow loading system is singular") from None
    if np.any(phi_rel < -1e-9 * max(1.0, x)):
        raise NetworkError("flow loading produced negative throughputs")
    phi_rel = np.maximum(phi_rel, 0.0)
    v = Q.T @ phi_rel

    phi = np.zeros(net.n_nodes)
    phi[rel_nodes] = phi_rel
    phi[dag.destination] = float(sum(v[ai] for ai in net.in_arcs[dag.destination] if dag.arc_mask[ai]))
    return phi, v, P, Q, rel_nodes


def conservation_residual(net: Network, dag: SupportDAG, phi, v, x: float) -> float:
    """Largest violation of node flow balance (inflow + injection = throughput)."""
    worst = 0.0
    for i in dag.order:
        inflow = float(sum(v[ai] for ai in net.in_arcs[i] if dag.arc_mask[ai]))
        if i == dag.destination:
            worst = max(worst, abs(phi[i] - inflow))
        else:
            inject = x if i == dag.origin else 0.0
            worst = max(worst, abs(phi[i] - inject - inflow))
    return worst


def load_flows(net: Network, choice: ChoiceModel, dag: SupportDAG, tausol: TauSolution, x: float) -> RoutingState:
    """Complete a routing state by loading rate ``x`` along solved labels."""
    phi, v, P, Q, rel_nodes = markov_load(net, choice, dag, tausol.z, x)
    resid = conservation_residual(net, dag, phi, v, x)
    if resid > CONSERVATION_TOL * max(1.0, x):
        raise NetworkError(f"flow conservation violated by {resid:g}")
    return RoutingState(
        source=dag.source,
        tau=tausol.tau,
        z=tausol.z,
        P_hat=P,
        Q_hat=Q,
        phi=phi,
        v=v,
        rel_nodes=rel_nodes,
        conservation_residual=resid,
    )


def aggregate_link_loads(states) -> np.ndarray:
    """Total expected load per arc: sum of per-source arc flows."""
    states = list(states)
    if not states:
        raise ValueError("no routing states to aggregate")
    w = np.zeros_like(states[0].v)
    for st in states:
        w = w + st.v
    return w


# ---------------------------------------------------------------------------
# brute-force path oracles


def enumerate_paths(net: Network, dag: SupportDAG, cap: int = PATH_CAP) -> list[list[int]]:
    """All origin-to-destination arc sequences inside the support.

    Raises :class:`OracleUnavailableError` when more than ``cap`` paths
    exist.  Intended for small test networks and the deterministic-min
    solver, not for production-size graphs.
    """
    paths = []
    stack = [(dag.origin, [])]
    while stack:
        i, prefix = stack.pop()
        if i == dag.destination:
            paths.append(prefix)
            if len(paths) > cap:
                raise OracleUnavailableError(f"more than {cap} paths in the support")
            continue
        for ai in dag.out_stars[i]:
            stack.append((int(net.arc_head[ai]), prefix + [int(ai)]))
    return paths


def path_logit_oracle(net: Network, dag: SupportDAG, lam, beta: float, x: float, cap: int = PATH_CAP) -> np.ndarray:
    """Arc flows from an explicit path-level logit split (softmax over path costs).

    On an acyclic support this must coincide with :func:`load_flows` for the
    :class:`~mnum.choice.Logit` model with the same ``beta``; it is the
    independent check of the chain-based loading.
    """
    lam = np.asarray(lam, dtype=float)
    paths = enumerate_paths(net, dag, cap)
    costs = np.array([lam[p].sum() for p in paths])
    e = np.exp(-beta * (costs - costs.min()))
    weights = x * e / e.sum()
    v = np.zeros(net.n_arcs)
    for p, h in zip(paths, weights):
        v[p] += h
    return v
