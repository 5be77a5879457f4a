"""Network model: directed graph, link latency families, source rate families.

A link carries traffic ``w`` and responds with a total delay
``s(w) = lambda0 + psi(w)`` where ``lambda0 > 0`` is the propagation delay and
``psi`` is a strictly increasing queueing-delay curve with ``psi(0) = 0``,
defined on ``[0, capacity)``.  A source reacts to its end-to-end queueing
delay ``q`` with a strictly decreasing rate curve ``x = f(q)``.

The solver works with the inverse map ``s^{-1}`` and its integral from
``lambda0``, so both get closed forms where available and generic numerical
fallbacks otherwise.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NetworkError

# Flows are kept strictly below capacity inside solver/simulator evaluations
# to avoid overflow at the queueing asymptote during transients.
CAPACITY_MARGIN = 1e-9

_BISECT_TOL = 1e-12
_SIMPSON_TOL = 1e-10


# ---------------------------------------------------------------------------
# latency models


class LatencyModel:
    """Base class for strictly increasing link delay curves.

    Subclasses must provide ``lambda0``, ``capacity`` and ``psi``; the
    inverse and the integral of the inverse fall back to bisection and
    adaptive Simpson quadrature unless overridden with closed forms.
    """

    lambda0: float
    capacity: float

    def psi(self, w: float) -> float:
        """Queueing delay at flow ``w``, for ``0 <= w < capacity``."""
        raise NotImplementedError

    # -- forward map ------------------------------------------------------

    def latency(self, w: float) -> float:
        """Total delay ``s(w) = lambda0 + psi(w)``; errors outside [0, capacity)."""
        if w < 0.0:
            raise DomainError(f"flow must be nonnegative, got {w}")
        if w >= self.capacity:
            raise DomainError(f"flow {w} at or above capacity {self.capacity}")
        return self.lambda0 + self.psi(w)

    def latency_clamped(self, w: float) -> float:
        """Like ``latency`` but clamps ``w`` just below capacity.

        Used on transient flows (line searches, simulator overloads) where a
        hard domain error would be unhelpful.
        """
        if w < 0.0:
            raise DomainError(f"flow must be nonnegative, got {w}")
        return self.lambda0 + self.psi(min(w, (1.0 - CAPACITY_MARGIN) * self.capacity))

    # -- inverse map ------------------------------------------------------

    def _require_delay(self, lam: float) -> None:
        if lam < self.lambda0:
            raise DomainError(f"delay {lam} below free-flow delay {self.lambda0}")

    def latency_inverse(self, lam: float) -> float:
        """Flow ``w`` with ``s(w) = lam``; bisection fallback, tol 1e-12.

        For models whose delay saturates at a finite value the inverse is
        extended by its monotone closure (returns ``capacity``).
        """
        self._require_delay(lam)
        u = lam - self.lambda0
        if u <= 0.0:
            return 0.0
        if math.isinf(self.capacity):
            hi = 1.0
            while self.psi(hi) < u:
                hi *= 2.0
                if hi > 1e300:
                    raise DomainError(f"delay {lam} outside the range of the latency curve")
        else:
            hi = self.capacity * (1.0 - CAPACITY_MARGIN)
            if self.psi(hi) <= u:
                return self.capacity
        lo = 0.0
        while hi - lo > _BISECT_TOL:
            mid = 0.5 * (lo + hi)
            if self.psi(mid) < u:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def latency_inverse_integral(self, lam: float) -> float:
        """Integral of ``s^{-1}`` from ``lambda0`` to ``lam`` (adaptive Simpson)."""
        self._require_delay(lam)
        if lam == self.lambda0:
            return 0.0
        return _adaptive_simpson(self.latency_inverse, self.lambda0, lam, _SIMPSON_TOL)


def _adaptive_simpson(f, a, b, tol):
    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    return _simpson_recurse(f, a, b, fa, fm, fb, whole, tol, 50)


def _simpson_recurse(f, a, b, fa, fm, fb, whole, tol, depth):
    m = 0.5 * (a + b)
    lm, rm = 0.5 * (a + m), 0.5 * (m + b)
    flm, frm = f(lm), f(rm)
    left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
    right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
    if depth <= 0 or abs(left + right - whole) <= 15.0 * tol:
        return left + right + (left + right - whole) / 15.0
    half = 0.5 * tol
    return _simpson_recurse(f, a, m, fa, flm, fm, left, half, depth - 1) + _simpson_recurse(
        f, m, b, fm, frm, fb, right, half, depth - 1
    )


@dataclass(frozen=True)
class MM1Latency(LatencyModel):
    """Single-server queueing delay ``psi(w) = w / (c (c - w))`` on ``[0, c)``."""

    capacity: float
    lambda0: float

    def __post_init__(self):
        if not self.capacity > 0.0 or math.isinf(self.capacity):
            raise NetworkError(f"mm1 capacity must be finite and positive, got {self.capacity}")
        if not self.lambda0 > 0.0:
            raise NetworkError(f"free-flow delay must be positive, got {self.lambda0}")

    def psi(self, w: float) -> float:
        return w / (self.capacity * (self.capacity - w))

    def latency_inverse(self, lam: float) -> float:
        self._require_delay(lam)
        u = lam - self.lambda0
        c = self.capacity
        return c * c * u / (1.0 + c * u)

    def latency_inverse_integral(self, lam: float) -> float:
        self._require_delay(lam)
        u = lam - self.lambda0
        c = self.capacity
        return c * u - math.log1p(c * u)


@dataclass(frozen=True)
class AffineLatency(LatencyModel):
    """Linear queueing delay ``psi(w) = slope * w``, optionally capacity-capped.

    With a finite capacity the inverse saturates at ``capacity`` for delays
    beyond the curve's range, which keeps the dual objective defined on the
    whole box while preserving convexity.
    """

    lambda0: float
    slope: float
    capacity: float = math.inf

    def __post_init__(self):
        if not self.lambda0 > 0.0:
            raise NetworkError(f"free-flow delay must be positive, got {self.lambda0}")
        if not self.slope > 0.0:
            raise NetworkError(f"slope must be positive, got {self.slope}")
        if not self.capacity > 0.0:
            raise NetworkError(f"capacity must be positive, got {self.capacity}")

    def psi(self, w: float) -> float:
        return self.slope * w

    def latency_inverse(self, lam: float) -> float:
        self._require_delay(lam)
        return min((lam - self.lambda0) / self.slope, self.capacity)

    def latency_inverse_integral(self, lam: float) -> float:
        self._require_delay(lam)
        u = lam - self.lambda0
        knee = self.slope * self.capacity
        if u <= knee:
            return 0.5 * u * u / self.slope
        return 0.5 * knee * self.capacity + self.capacity * (u - knee)


# ---------------------------------------------------------------------------
# source rate models


class RateModel:
    """Strictly decreasing positive rate response ``x = f(q)`` for ``q > 0``."""

    def rate(self, q: float) -> float:
        raise NotImplementedError

    def primitive(self, q: float) -> float:
        """Antiderivative ``F`` of ``f`` normalized so that ``F(1) = 0``."""
        raise NotImplementedError

    @property
    def primitive_singular_at_zero(self) -> bool:
        """True when ``F(q) -> -inf`` as ``q -> 0+`` (needs a floor guard)."""
        raise NotImplementedError

    def _require_q(self, q: float) -> None:
        if q <= 0.0:
            raise DomainError(f"queueing delay must be positive, got {q}")


@dataclass(frozen=True)
class VegasRate(RateModel):
    """Delay-based steady-state rate ``x = alpha * D / q`` (Vegas-style source)."""

    alpha: float
    D: float

    def __post_init__(self):
        if not self.alpha > 0.0:
            raise NetworkError(f"alpha must be positive, got {self.alpha}")
        if not self.D > 0.0:
            raise NetworkError(f"base delay D must be positive, got {self.D}")

    def rate(self, q: float) -> float:
        self._require_q(q)
        return self.alpha * self.D / q

    def primitive(self, q: float) -> float:
        self._require_q(q)
        return self.alpha * self.D * math.log(q)

    @property
    def primitive_singular_at_zero(self) -> bool:
        return True


@dataclass(frozen=True)
class PowerLawRate(RateModel):
    """Rate response ``x = scale * q**(-exponent)`` with ``exponent > 0``."""

    scale: float
    exponent: float

    def __post_init__(self):
        if not self.scale > 0.0:
            raise NetworkError(f"scale must be positive, got {self.scale}")
        if not self.exponent > 0.0:
            raise NetworkError(f"exponent must be positive, got {self.exponent}")

    def rate(self, q: float) -> float:
        self._require_q(q)
        return self.scale * q ** (-self.exponent)

    def primitive(self, q: float) -> float:
        self._require_q(q)
        e = self.exponent
        if e == 1.0:
            return self.scale * math.log(q)
        return self.scale * (q ** (1.0 - e) - 1.0) / (1.0 - e)

    @property
    def primitive_singular_at_zero(self) -> bool:
        return self.exponent >= 1.0


# ---------------------------------------------------------------------------
# graph


@dataclass(frozen=True)
class Arc:
    id: str
    tail: object
    head: object
    latency: LatencyModel


@dataclass(frozen=True)
class Source:
    id: str
    origin: object
    destination: object
    rate: RateModel


class Network:
    """Validated directed graph with per-arc latency and per-source rate models.

    Immutable after construction; all index structures (out/in stars, id
    maps, vectorized model parameters) are derived here so that evaluation
    code stays allocation-light and pure.
    """

    def __init__(self, nodes, arcs, sources):
        self.node_ids = list(nodes)
        self.arcs = list(arcs)
        self.sources = list(sources)

        self._node_index = {}
        for n in self.node_ids:
            if n in self._node_index:
                raise NetworkError(f"duplicate node id {n!r}")
            self._node_index[n] = len(self._node_index)

        self._arc_index = {}
        for a in self.arcs:
            if a.id in self._arc_index:
                raise NetworkError(f"duplicate arc id {a.id!r}")
            if a.tail not in self._node_index:
                raise NetworkError(f"arc {a.id!r}: unknown tail node {a.tail!r}")
            if a.head not in self._node_index:
                raise NetworkError(f"arc {a.id!r}: unknown head node {a.head!r}")
            self._arc_index[a.id] = len(self._arc_index)

        self._source_index = {}
        for s in self.sources:
            if s.id in self._source_index:
                raise NetworkError(f"duplicate source id {s.id!r}")
            if s.origin not in self._node_index:
                raise NetworkError(f"source {s.id!r}: unknown origin {s.origin!r}")
            if s.destination not in self._node_index:
                raise NetworkError(f"source {s.id!r}: unknown destination {s.destination!r}")
            if s.origin == s.destination:
                raise NetworkError(f"source {s.id!r}: origin equals destination")
            self._source_index[s.id] = len(self._source_index)

        n = len(self.node_ids)
        self.arc_tail = np.array([self._node_index[a.tail] for a in self.arcs], dtype=int)
        self.arc_head = np.array([self._node_index[a.head] for a in self.arcs], dtype=int)
        self.out_arcs = [[] for _ in range(n)]
        self.in_arcs = [[] for _ in range(n)]
        for ai, a in enumerate(self.arcs):
            self.out_arcs[self.arc_tail[ai]].append(ai)
            self.in_arcs[self.arc_head[ai]].append(ai)
        self.out_arcs = [np.array(v, dtype=int) for v in self.out_arcs]
        self.in_arcs = [np.array(v, dtype=int) for v in self.in_arcs]

        self.lambda0 = np.array([a.latency.lambda0 for a in self.arcs])
        self.capacity = np.array([a.latency.capacity for a in self.arcs])

        for s in self.sources:
            if not self._reaches(self._node_index[s.origin], self._node_index[s.destination]):
                raise NetworkError(
                    f"source {s.id!r}: destination {s.destination!r} unreachable from {s.origin!r}"
                )

    # -- sizes and lookups --------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_arcs(self) -> int:
        return len(self.arcs)

    @property
    def n_sources(self) -> int:
        return len(self.sources)

    def node_index(self, node) -> int:
        try:
            return self._node_index[node]
        except KeyError:
            raise NetworkError(f"unknown node id {node!r}") from None

    def arc_index(self, arc_id) -> int:
        try:
            return self._arc_index[arc_id]
        except KeyError:
            raise NetworkError(f"unknown arc id {arc_id!r}") from None

    def source_index(self, source_id) -> int:
        try:
            return self._source_index[source_id]
        except KeyError:
            raise NetworkError(f"unknown source id {source_id!r}") from None

    def _reaches(self, origin: int, destination: int) -> bool:
        seen = {origin}
        stack = [origin]
        while stack:
            i = stack.pop()
            if i == destination:
                return True
            for ai in self.out_arcs[i]:
                j = int(self.arc_head[ai])
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        return False

    # -- vectorized model evaluations ----------------------------------------

    def s_inverse(self, lam: np.ndarray) -> np.ndarray:
        """Per-arc inverse latency ``w_a = s_a^{-1}(lam_a)``."""
        return np.array([a.latency.latency_inverse(v) for a, v in zip(self.arcs, lam)])

    def s_inverse_integral(self, lam: np.ndarray) -> float:
        """Sum over arcs of the integral of ``s_a^{-1}`` from ``lambda0_a``."""
        return float(
            sum(a.latency.latency_inverse_integral(v) for a, v in zip(self.arcs, lam))
        )

    def s_clamped(self, w: np.ndarray) -> np.ndarray:
        """Per-arc total delay at flows ``w``, clamped just below capacity."""
        return np.array([a.latency.latency_clamped(v) for a, v in zip(self.arcs, w)])


# ---------------------------------------------------------------------------
# JSON input format


def _fields(obj, where, required, optional=()):
    if not isinstance(obj, dict):
        raise NetworkError(f"{where}: expected a JSON object")
    unknown = sorted(set(obj) - set(required) - set(optional))
    if unknown:
        raise NetworkError(f"{where}: unknown fields {unknown}")
    missing = sorted(set(required) - set(obj))
    if missing:
        raise NetworkError(f"{where}: missing fields {missing}")


def _number(obj, key, where):
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise NetworkError(f"{where}: field {key!r} must be a number")
    return float(v)


def _node_id(value, where):
    if isinstance(value, bool) or not isinstance(value, (str, int)):
        raise NetworkError(f"{where}: node ids must be strings or integers")
    return value


def _build_latency(obj, where):
    model = obj.get("model")
    if model == "mm1":
        _fields(obj, where, required=("id", "tail", "head", "model", "capacity", "lambda0"))
        return MM1Latency(capacity=_number(obj, "capacity", where), lambda0=_number(obj, "lambda0", where))
    if model == "affine":
        _fields(
            obj, where, required=("id", "tail", "head", "model", "lambda0", "slope"), optional=("capacity",)
        )
        cap = _number(obj, "capacity", where) if "capacity" in obj else math.inf
        return AffineLatency(
            lambda0=_number(obj, "lambda0", where), slope=_number(obj, "slope", where), capacity=cap
        )
    raise NetworkError(f"{where}: unknown latency model {model!r}")


def _build_rate(obj, where):
    model = obj.get("rate")
    if model == "vegas":
        _fields(obj, where, required=("id", "origin", "destination", "rate", "alpha", "D"))
        return VegasRate(alpha=_number(obj, "alpha", where), D=_number(obj, "D", where))
    if model == "powerlaw":
        _fields(obj, where, required=("id", "origin", "destination", "rate", "scale", "exponent"))
        return PowerLawRate(scale=_number(obj, "scale", where), exponent=_number(obj, "exponent", where))
    raise NetworkError(f"{where}: unknown rate model {model!r}")


def parse_network(data):
    """Build ``(Network, choice_spec)`` from a parsed JSON document.

    ``choice_spec`` is ``("logit", beta)``, ``("min", None)`` or ``None`` when
    the document does not select a choice model.  Unknown fields are rejected
    at every level.
    """
    _fields(data, "network", required=("nodes", "arcs", "sources"), optional=("choice", "beta"))
    if not isinstance(data["nodes"], list) or not data["nodes"]:
        raise NetworkError("network: 'nodes' must be a nonempty list")
    if not isinstance(data["arcs"], list):
        raise NetworkError("network: 'arcs' must be a list")
    if not isinstance(data["sources"], list):
        raise NetworkError("network: 'sources' must be a list")

    nodes = [_node_id(n, f"nodes[{i}]") for i, n in enumerate(data["nodes"])]

    arcs = []
    for i, obj in enumerate(data["arcs"]):
        where = f"arcs[{i}]"
        if not isinstance(obj, dict):
            raise NetworkError(f"{where}: expected a JSON object")
        latency = _build_latency(obj, where)
        if not isinstance(obj.get("id"), str):
            raise NetworkError(f"{where}: field 'id' must be a string")
        arcs.append(
            Arc(
                id=obj["id"],
                tail=_node_id(obj["tail"], where),
                head=_node_id(obj["head"], where),
                latency=latency,
            )
        )

    sources = []
    for i, obj in enumerate(data["sources"]):
        where = f"sources[{i}]"
        if not isinstance(obj, dict):
            raise NetworkError(f"{where}: expected a JSON object")
        rate = _build_rate(obj, where)
        if not isinstance(obj.get("id"), str):
            raise NetworkError(f"{where}: field 'id' must be a string")
        sources.append(
            Source(
                id=obj["id"],
                origin=_node_id(obj["origin"], where),
                destination=_node_id(obj["destination"], where),
                rate=rate,
            )
        )

    choice = None
    if "choice" in data:
        kind = data["choice"]
        if kind == "logit":
            if "beta" not in data:
                raise NetworkError("network: choice 'logit' requires field 'beta'")
            beta = _number(data, "beta", "network")
            if not beta > 0.0:
                raise NetworkError(f"network: beta must be positive, got {beta}")
            choice = ("logit", beta)
        elif kind == "min":
            if "beta" in data:
                raise NetworkError("network: choice 'min' does not take 'beta'")
            choice = ("min", None)
        else:
            raise NetworkError(f"network: unknown choice model {kind!r}")
    elif "beta" in data:
        raise NetworkError("network: field 'beta' requires \"choice\": \"logit\"")

    return Network(nodes, arcs, sources), choice


def load_network(path):
    """Parse and validate a network JSON file; see :func:`parse_network`."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise NetworkError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return parse_network(data)
