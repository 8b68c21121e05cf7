"""Stochastic oracles for the cocoercive operator: unbiased noise models,
variance schedules, and summability certificates.

Conditional expectations are realized by construction: the noise at step n is
drawn from a fresh RNG substream keyed by (seed, n), so given the iterate the
sample is unbiased and independent of the noise history.  Identical seed and
iterate history therefore reproduce the sample stream bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "VarianceSchedule",
    "DeterministicOracle",
    "GaussianOracle",
    "MinibatchOracle",
    "SummabilityReport",
    "summability_certificate",
    "empirical_variance",
]


@dataclass(frozen=True)
class VarianceSchedule:
    """Per-coordinate noise variance sigma_n^2 as a function of n.

    Kinds: ``constant`` (sigma0_sq), ``polynomial`` (sigma0_sq / (n+1)^(1+epsilon)),
    ``table`` (explicit values, clamped at the last entry).  The intended
    regime records which summability condition the schedule is meant to
    satisfy: ``almost-sure`` needs sum sigma_n^2 < inf, ``ergodic`` needs
    sum gamma_n^2 sigma_n^2 < inf for the paired step sizes.
    """

    kind: str
    sigma0_sq: float = 0.0
    epsilon: float = 1.0
    table: Optional[tuple] = None
    intended_regime: str = "almost-sure"

    def __post_init__(self):
        if self.kind not in ("constant", "polynomial", "table"):
            raise ValueError("unknown variance schedule kind %r" % self.kind)
        if self.kind == "table" and not self.table:
            raise ValueError("table schedule needs values")
        if self.sigma0_sq < 0:
            raise ValueError("sigma0_sq must be nonnegative")
        if self.intended_regime not in ("almost-sure", "ergodic"):
            raise ValueError("unknown regime %r" % self.intended_regime)

    def sigma_sq(self, n):
        if self.kind == "constant":
            return self.sigma0_sq
        if self.kind == "polynomial":
            return self.sigma0_sq / (n + 1.0) ** (1.0 + self.epsilon)
        t = self.table
        return float(t[n]) if n < len(t) else float(t[-1])

    @classmethod
    def constant(cls, sigma0_sq, regime="ergodic"):
        return cls("constant", float(sigma0_sq), intended_regime=regime)

    @classmethod
    def polynomial(cls, sigma0_sq, epsilon=1.0, regime="almost-sure"):
        return cls("polynomial", float(sigma0_sq), float(epsilon), intended_regime=regime)

    @classmethod
    def from_table(cls, values, regime="ergodic"):
        return cls("table", table=tuple(float(v) for v in values), intended_regime=regime)


class DeterministicOracle:
    """Noise-free oracle: r_n = B x_n exactly."""

    is_deterministic = True

    def __init__(self, B):
        self.base = B
        self.dim = B.dim

    def sample(self, x, n):
        return self.base.apply(x)

    def replicate(self, x, n, t):
        return self.base.apply(x)

    def error_second_moment(self, n):
        return 0.0


class GaussianOracle:
    """r_n = B x_n + sigma_n * z with z standard normal per coordinate.

    The per-coordinate error variance is sigma_n^2 from the schedule, so the
    full squared-norm second moment is dim * sigma_n^2.
    """

    is_deterministic = False

    def __init__(self, B, schedule, seed):
        self.base = B
        self.schedule = schedule
        self.seed = int(seed)
        self.dim = B.dim

    def sample(self, x, n):
        return self.replicate(x, n, 0)

    def replicate(self, x, n, t):
        mean = self.base.apply(x)
        s2 = self.schedule.sigma_sq(n)
        if s2 == 0.0:
            return mean
        rng = np.random.default_rng((self.seed, int(n), int(t)))
        return mean + math.sqrt(s2) * rng.standard_normal(self.dim)

    def error_second_moment(self, n):
        return self.dim * self.schedule.sigma_sq(n)


class MinibatchOracle:
    """r_n = mean over a random batch of component maps whose average is B.

    Components are sampled without replacement; a batch covering all
    components reproduces B exactly.
    """

    is_deterministic = False

    def __init__(self, components, beta, seed, batch_schedule=None, dim=None):
        from .monotone import CocoerciveMap

        self.components = list(components)
        if not self.components:
            raise ValueError("need at least one component")
        m = len(self.components)
        if dim is None:
            raise ValueError("dim is required")
        self.dim = int(dim)
        self.m = m
        self.seed = int(seed)
        self.batch_schedule = batch_schedule or (lambda n: m)

        def mean_apply(x):
            acc = np.zeros(self.dim)
            for c in self.components:
                acc += c(x)
            return acc / m

        self.base = CocoerciveMap(self.dim, mean_apply, beta=beta, name="minibatch-mean")

    def sample(self, x, n):
        return self.replicate(x, n, 0)

    def replicate(self, x, n, t):
        k = int(self.batch_schedule(n))
        if not 1 <= k <= self.m:
            raise ValueError("batch size %d out of range" % k)
        if k == self.m:
            return self.base.apply(x)
        rng = np.random.default_rng((self.seed, int(n), int(t)))
        idx = rng.choice(self.m, size=k, replace=False)
        acc = np.zeros(self.dim)
        for i in idx:
            acc += self.components[i](x)
        return acc / k

    def error_second_moment(self, n):
        return None  # depends on the point; estimate empirically


def empirical_variance(oracle, x, n, trials):
    """Unbiased sample variance of the error components of r_n - B x_n.

    All error coordinates across trials are pooled; for the gaussian model
    this estimates the scheduled per-coordinate sigma_n^2.
    """
    trials = int(trials)
    if trials < 2:
        raise ValueError("need at least 2 trials")
    mean = oracle.base.apply(x)
    errs = np.empty((trials, oracle.dim))
    for t in range(trials):
        errs[t] = oracle.replicate(x, n, t) - mean
    return float(np.var(errs.ravel(), ddof=1))


@dataclass(frozen=True)
class SummabilityReport:
    """Finite-horizon partial sums plus analytic tail bounds where available.

    ``status`` is one of ``certified`` (infinite-horizon summability holds
    analytically for the declared regime), ``finite-horizon`` (only the
    truncated sums are meaningful), or ``violation`` (the declared regime is
    not satisfiable by this schedule pair).  Partial sums are per-coordinate;
    multiply by the space dimension for squared-norm second moments.
    """

    regime: str
    status: str
    horizon: int
    partial_sigma_sq: float
    partial_gamma_sigma_sq: float
    tail_sigma_sq: Optional[float]
    tail_gamma_sigma_sq: Optional[float]
    messages: tuple = field(default=())

    @property
    def certified(self):
        return self.status == "certified"


def summability_certificate(schedule, gammas, horizon):
    """Certify the noise/step-size summability conditions over a horizon.

    For the almost-sure regime the noise variances themselves must be
    summable; for the ergodic regime only gamma_n^2 sigma_n^2 must be.  A
    constant-noise, constant-gamma pair in the ergodic regime is reported
    finite-horizon (its truncated sum is still the honest constant for the
    gap bound); constant noise in the almost-sure regime is a violation.
    """
    horizon = int(horizon)
    gamma = gammas.gamma if hasattr(gammas, "gamma") else gammas
    gamma_kind = getattr(gammas, "gamma_kind", "custom")

    s_part = 0.0
    gs_part = 0.0
    gamma0 = float(gamma(0))
    for n in range(horizon + 1):
        s2 = schedule.sigma_sq(n)
        g = float(gamma(n))
        s_part += s2
        gs_part += g * g * s2

    messages = []
    tail_s = None
    tail_gs = None

    zero_noise = schedule.sigma0_sq == 0.0 if schedule.kind != "table" else all(
        v == 0.0 for v in schedule.table)

    if zero_noise:
        status = "certified"
        tail_s = 0.0
        tail_gs = 0.0
        messages.append("zero noise: all sums vanish")
    elif schedule.kind == "polynomial" and schedule.epsilon > 0:
        # Integral comparison: sum_{n>N} (n+1)^{-(1+eps)} <= (N+1)^{-eps} / eps.
        eps = schedule.epsilon
        tail_s = schedule.sigma0_sq / (eps * (horizon + 1.0) ** eps)
        tail_gs = gamma0 * gamma0 * tail_s
        status = "certified"
        messages.append("polynomial decay: tail bounded by integral comparison")
    elif schedule.kind == "constant":
        if schedule.intended_regime == "almost-sure":
            status = "violation"
            messages.append("regime violation: constant noise variance is not summable")
        elif gamma_kind == "harmonic":
            # gamma_n = gamma0/(n+1): sum_{n>N} gamma_n^2 <= gamma0^2/(N+1).
            tail_gs = schedule.sigma0_sq * gamma0 * gamma0 / (horizon + 1.0)
            status = "certified"
            messages.append("constant noise with square-summable steps (p-series)")
        else:
            status = "finite-horizon"
            messages.append("constant noise and non-square-summable steps: "
                            "reporting the finite-horizon sum only")
    else:
        status = "finite-horizon"
        messages.append("table schedule: no analytic tail; finite-horizon sums only")

    if schedule.intended_regime == "almost-sure" and status == "certified" and not zero_noise \
            and schedule.kind != "polynomial":
        status = "finite-horizon"

    return SummabilityReport(
        regime=schedule.intended_regime,
        status=status,
        horizon=horizon,
        partial_sigma_sq=s_part,
        partial_gamma_sigma_sq=gs_part,
        tail_sigma_sq=tail_s,
        tail_gamma_sigma_sq=tail_gs,
        messages=tuple(messages),
    )
