"""Next-hop choice models over a node's outgoing arcs.

A choice model maps a vector ``z`` of arc labels (delay of the arc plus the
expected delay-to-destination of its head node) to the expected value of the
smallest perceived label, ``E[min_a (z_a + eps_a)]`` with zero-mean noise.
Its gradient is the vector of probabilities of each arc being chosen, which
drives the per-node traffic splits in the routing module.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NetworkError

EULER_GAMMA = float(np.euler_gamma)


def _labels(z) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(z, dtype=float))
    if arr.ndim != 1 or arr.size == 0:
        raise NetworkError("empty out-star: no alternatives to choose from")
    if not np.all(np.isfinite(arr)):
        raise DomainError("arc labels must be finite")
    return arr


class ChoiceModel:
    smooth = True

    def value(self, z) -> float:
        raise NotImplementedError

    def gradient(self, z) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class Logit(ChoiceModel):
    """Gumbel-noise choice: value is a (scaled) log-sum-exp, gradient a softmax.

    ``value(z) = -(1/beta) log sum_a exp(-beta z_a)`` computed with max-shift
    so that large ``beta`` or widely spread labels never overflow.  The noise
    is scale ``1/beta`` Gumbel centered to zero mean, so larger ``beta``
    concentrates the choice on the smallest label.
    """

    beta: float

    def __post_init__(self):
        if not self.beta > 0.0:
            raise NetworkError(f"beta must be positive, got {self.beta}")

    def value(self, z) -> float:
        z = _labels(z)
        m = float(z.min())
        return m - math.log(float(np.exp(-self.beta * (z - m)).sum())) / self.beta

    def gradient(self, z) -> np.ndarray:
        z = _labels(z)
        e = np.exp(-self.beta * (z - z.min()))
        return e / e.sum()


@dataclass(frozen=True)
class DeterministicMin(ChoiceModel):
    """Noise-free limit: value is the minimum, ties split uniformly."""

    smooth = False
    _TIE_TOL = 1e-12

    def value(self, z) -> float:
        return float(_labels(z).min())

    def gradient(self, z) -> np.ndarray:
        z = _labels(z)
        m = z.min()
        ties = z <= m + self._TIE_TOL * max(1.0, abs(m))
        return ties / ties.sum()


def check_choice_axioms(model: ChoiceModel, z, c: float, tol: float = 1e-9) -> dict:
    """Diagnostic report on the expected-minimum axioms at a point ``z``.

    Checks translation equivariance ``value(z + c) = value(z) + c``, the
    upper bound by ``min(z)``, the gradient lying on the probability simplex,
    and componentwise monotonicity of the value.  Returns one entry per
    axiom with the measured error and a pass flag; never raises.
    """
    z = _labels(z)
    v = model.value(z)
    g = model.gradient(z)

    translation = abs(model.value(z + c) - v - c)
    min_bound = max(0.0, v - float(z.min()))
    simplex = max(abs(float(g.sum()) - 1.0), max(0.0, -float(g.min())))
    h = 0.1
    mono = 0.0
    for a in range(z.size):
        bumped = z.copy()
        bumped[a] += h
        mono = max(mono, v - model.value(bumped))

    report = {
        "translation": translation,
        "min_bound": min_bound,
        "gradient_simplex": simplex,
        "monotonicity": mono,
    }
    return {
        name: {"error": err, "passed": bool(err <= tol)} for name, err in report.items()
    }


def gumbel_noise(beta: float, rng: np.random.Generator, size) -> np.ndarray:
    """Zero-mean Gumbel perturbations matching the :class:`Logit` model.

    Draws ``eps`` such that ``E[min_a(z_a + eps_a)]`` equals the logit value
    and the argmin frequencies equal the softmax gradient.
    """
    return (EULER_GAMMA - rng.gumbel(0.0, 1.0, size)) / beta


def mc_oracle(model: Logit, z, n_samples: int, seed: int):
    """Monte Carlo estimate of the logit value by sampling perturbed minima.

    Returns ``(mean, stderr)`` of ``min_a(z_a + eps_a)`` over ``n_samples``
    draws; reproducible for a fixed seed.  Serves as an independent check of
    the closed-form value.
    """
    if not isinstance(model, Logit):
        raise TypeError("mc_oracle samples Gumbel noise and requires a Logit model")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    z = _labels(z)
    rng = np.random.default_rng(seed)
    mins = np.empty(n_samples)
    # chunked to keep memory bounded for wide stars at 1e6+ samples
    chunk = 200_000
    done = 0
    while done < n_samples:
        m = min(chunk, n_samples - done)
        eps = gumbel_noise(model.beta, rng, (m, z.size))
        mins[done : done + m] = (z + eps).min(axis=1)
        done += m
    mean = float(mins.mean())
    stderr = float(mins.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else 0.0
    return mean, stderr
