"""The core primal-dual iteration with correction step.

One step reads, with gamma_n the primal step, tau_n the dual scaling, U the
dual preconditioner and r_n one stochastic sample of the cocoercive operator
(drawn once and reused by both primal lines):

    p_n     = P_V(x_n - gamma_n (L* v_n + r_n))
    v_{n+1} = J_{(tau_n/gamma_n) U A^{-1}} (v_n + (tau_n/gamma_n) U L p_n)
    x_{n+1} = P_V(x_n - gamma_n (L* v_{n+1} + r_n))

The dual resolvent is synthesized from A's resolvent through the inversion
identity, with the scalar (or per-block-scalar) reduction of U.  The saddle
variant replaces it by the conjugate prox of g in the U^{-1} metric, which is
the same map when A is the subdifferential of g.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import DimensionMismatchError, DivergenceError, UnsupportedMetricError
from .linop import LinearMap, OrthoProjector, SpdOperator, TauCertificate, inner, validate_tau
from .monotone import (CocoerciveMap, MonotoneBlock, ProductMonotoneBlock, ProxFunction,
                       conjugate_prox_via_moreau, inverse_resolvent)

__all__ = [
    "ProblemSpec",
    "Schedules",
    "PapcState",
    "ErgodicAccumulator",
    "ErgodicCheckpoint",
    "RunRecord",
    "HypothesisCertificate",
    "ConditionCheck",
    "validate_hypotheses",
    "papc_step",
    "saddle_step",
    "dual_resolvent",
    "dual_conjugate_prox",
    "ergodic_update",
    "run",
]


@dataclass(frozen=True)
class ProblemSpec:
    """The full inclusion datum: cocoercive B (or grad h), monotone dual block
    A (or g), coupling L, projector onto the constraint subspace, and the dual
    preconditioner U.  ``g``/``h`` are optional proxable/value oracles used by
    the saddle variant and the gap diagnostics."""

    B: CocoerciveMap
    A: MonotoneBlock | ProductMonotoneBlock
    L: LinearMap
    P_V: OrthoProjector
    U: SpdOperator
    g: Optional[ProxFunction] = None
    h: Optional[ProxFunction] = None
    name: str = ""

    def __post_init__(self):
        if not (self.B.dim == self.L.domain_dim == self.P_V.dim):
            raise DimensionMismatchError("primal dims disagree (B, L domain, P_V)")
        if not (self.A.dim == self.L.codomain_dim == self.U.dim):
            raise DimensionMismatchError("dual dims disagree (A, L codomain, U)")

    @property
    def primal_weights(self):
        return self.L.domain_weights

    @property
    def dual_weights(self):
        return self.L.codomain_weights


@dataclass(frozen=True)
class Schedules:
    """Step-size sequences with their contracts: gamma non-increasing with
    gamma_0 < beta, tau non-decreasing and capped by tau_cap."""

    gamma: Callable
    tau: Callable
    tau_cap: float
    beta: float
    gamma_kind: str = "custom"
    tau_kind: str = "custom"

    @property
    def gamma0(self):
        return float(self.gamma(0))

    @classmethod
    def constant(cls, gamma0, tau0, beta, tau_cap=None):
        gamma0 = float(gamma0)
        tau0 = float(tau0)
        return cls(lambda n: gamma0, lambda n: tau0,
                   tau_cap=float(tau_cap) if tau_cap is not None else tau0,
                   beta=float(beta), gamma_kind="constant", tau_kind="constant")

    @classmethod
    def make(cls, beta, gamma_kind="constant", gamma0=None, tau_kind="constant", tau_cap=1.0):
        """Named schedule families.

        gamma: ``constant`` gamma0; ``harmonic_floor`` (gamma0/2)(1 + 1/(n+1)),
        decreasing to gamma0/2; ``harmonic`` gamma0/(n+1) (ergodic only:
        violates inf gamma > 0).
        tau: ``constant`` tau_cap; ``ramp`` tau_cap (n+1)/(n+2), increasing to
        the cap.
        """
        beta = float(beta)
        gamma0 = 0.9 * beta if gamma0 is None else float(gamma0)
        tau_cap = float(tau_cap)
        if gamma_kind == "constant":
            gamma = lambda n: gamma0
        elif gamma_kind == "harmonic_floor":
            gamma = lambda n: 0.5 * gamma0 * (1.0 + 1.0 / (n + 1.0))
        elif gamma_kind == "harmonic":
            gamma = lambda n: gamma0 / (n + 1.0)
        else:
            raise ValueError("unknown gamma kind %r" % gamma_kind)
        if tau_kind == "constant":
            tau = lambda n: tau_cap
        elif tau_kind == "ramp":
            tau = lambda n: tau_cap * (n + 1.0) / (n + 2.0)
        else:
            raise ValueError("unknown tau kind %r" % tau_kind)
        return cls(gamma, tau, tau_cap=tau_cap, beta=beta,
                   gamma_kind=gamma_kind, tau_kind=tau_kind)


@dataclass(frozen=True)
class PapcState:
    n: int
    x: np.ndarray
    v: np.ndarray
    p: Optional[np.ndarray] = None
    last_r: Optional[np.ndarray] = None


@dataclass(frozen=True)
class ConditionCheck:
    name: str
    ok: bool
    detail: str = ""


@dataclass(frozen=True)
class HypothesisCertificate:
    ok: bool
    regime: str
    horizon: int
    checks: tuple
    tau_certificate: Optional[TauCertificate] = None

    def failed(self):
        return [c for c in self.checks if not c.ok]


def validate_hypotheses(spec, sched, horizon, regime="almost-sure", margin=1e-6):
    """Check the step-size hypotheses over the run horizon.

    Almost-sure regime: gamma non-increasing, tau non-decreasing and capped,
    gamma_0 < beta, inf gamma > 0, and (tau_cap U)^{-1} - L P_V L* positive
    definite (strict margin).  Ergodic regime: the same monotonicity and
    gamma_0 < beta, with positive semidefiniteness (margin 0) and no floor on
    gamma.  Each violated condition is reported by name.
    """
    if regime not in ("almost-sure", "ergodic"):
        raise ValueError("unknown regime %r" % regime)
    horizon = int(horizon)
    gammas = np.array([float(sched.gamma(n)) for n in range(horizon + 1)])
    taus = np.array([float(sched.tau(n)) for n in range(horizon + 1)])

    checks = []
    slack = 1e-15
    checks.append(ConditionCheck(
        "gamma non-increasing",
        bool(np.all(np.diff(gammas) <= slack * np.maximum(gammas[:-1], 1.0))),
        "gamma must not increase over the horizon"))
    checks.append(ConditionCheck(
        "tau non-decreasing",
        bool(np.all(np.diff(taus) >= -slack * np.maximum(taus[:-1], 1.0))),
        "tau must not decrease over the horizon"))
    checks.append(ConditionCheck(
        "tau capped",
        bool(np.max(taus) <= sched.tau_cap * (1.0 + 1e-12)),
        "max tau %.6g vs cap %.6g" % (float(np.max(taus)), sched.tau_cap)))
    checks.append(ConditionCheck(
        "gamma0 below beta",
        bool(gammas[0] < sched.beta),
        "gamma0=%.6g beta=%.6g" % (gammas[0], sched.beta)))
    checks.append(ConditionCheck(
        "gamma positive",
        bool(np.min(gammas) > 0.0),
        "all step sizes must be strictly positive"))
    if regime == "almost-sure":
        checks.append(ConditionCheck(
            "inf gamma positive",
            bool(np.min(gammas) > 0.0 and np.min(gammas) >= 1e-12 * gammas[0]),
            "inf gamma %.6g over the horizon" % float(np.min(gammas))))

    tau_margin = margin if regime == "almost-sure" else 0.0
    tcert = validate_tau(spec.U, spec.L, spec.P_V, sched.tau_cap, margin=tau_margin)
    detail = "tau*lambda_max=%.6g (status %s)" % (tcert.tau * tcert.spectral_estimate, tcert.status)
    checks.append(ConditionCheck("tau spectral condition", tcert.ok, detail))

    return HypothesisCertificate(
        ok=all(c.ok for c in checks),
        regime=regime,
        horizon=horizon,
        checks=tuple(checks),
        tau_certificate=tcert,
    )


def dual_resolvent(A, U, lam, w):
    """J_{lam * U * A^{-1}}(w) under the scalar or block-scalar reduction of U."""
    if U.scalar is not None:
        return inverse_resolvent(A, lam * U.scalar, w)
    if U.blocks is not None and isinstance(A, ProductMonotoneBlock):
        offsets = A.offsets
        if len(offsets) == len(U.blocks) and all(
                (s, e) == (bs, be) for (s, e), (bs, be, _) in zip(offsets, U.blocks)):
            parts = [inverse_resolvent(blk, lam * sigma, w[s:e])
                     for blk, (s, e, sigma) in zip(A.blocks, U.blocks)]
            return np.concatenate(parts)
    raise UnsupportedMetricError(
        "dual resolvent needs a scalar or aligned block-scalar preconditioner")


def dual_conjugate_prox(g, U, lam, w):
    """prox^{U^{-1}}_{lam g*}(w) under the scalar reduction of U."""
    if U.scalar is not None:
        return conjugate_prox_via_moreau(g, lam * U.scalar, w)
    raise UnsupportedMetricError(
        "conjugate prox in a non-scalar metric needs a user-supplied metric prox")


def _check_finite(arr, label, n, record=None):
    if not np.all(np.isfinite(arr)):
        raise DivergenceError(label, n, record)


def papc_step(state, spec, sched, oracle):
    """One iteration of the inclusion algorithm.  Draws exactly one oracle
    sample and reuses it in the predictor and the correction line."""
    n = state.n
    gam = float(sched.gamma(n))
    tau = float(sched.tau(n))
    r = oracle.sample(state.x, n)
    _check_finite(r, "r_n", n)
    p = spec.P_V(state.x - gam * (spec.L.adjoint(state.v) + r))
    _check_finite(p, "p_n", n)
    lam = tau / gam
    w = state.v + lam * spec.U.apply(spec.L(p))
    v1 = dual_resolvent(spec.A, spec.U, lam, w)
    _check_finite(v1, "v_{n+1}", n)
    x1 = spec.P_V(state.x - gam * (spec.L.adjoint(v1) + r))
    _check_finite(x1, "x_{n+1}", n)
    return PapcState(n + 1, x1, v1, p, r)


def saddle_step(state, spec, sched, oracle):
    """One iteration of the saddle-point variant: the dual line is the
    conjugate prox of g in the U^{-1} metric.  Identical to :func:`papc_step`
    when A is the subdifferential block of g."""
    if spec.g is None:
        raise ValueError("saddle_step needs spec.g (a ProxFunction)")
    n = state.n
    gam = float(sched.gamma(n))
    tau = float(sched.tau(n))
    r = oracle.sample(state.x, n)
    _check_finite(r, "r_n", n)
    p = spec.P_V(state.x - gam * (spec.L.adjoint(state.v) + r))
    _check_finite(p, "p_n", n)
    lam = tau / gam
    w = state.v + lam * spec.U.apply(spec.L(p))
    v1 = dual_conjugate_prox(spec.g, spec.U, lam, w)
    _check_finite(v1, "v_{n+1}", n)
    x1 = spec.P_V(state.x - gam * (spec.L.adjoint(v1) + r))
    _check_finite(x1, "x_{n+1}", n)
    return PapcState(n + 1, x1, v1, p, r)


@dataclass(frozen=True)
class ErgodicAccumulator:
    """Step-size-weighted running averages of (x_{n+1}, v_{n+1}) in the
    numerically stable incremental form."""

    weight_sum: float = 0.0
    x_avg: Optional[np.ndarray] = None
    v_avg: Optional[np.ndarray] = None


def ergodic_update(acc, gamma_n, x_next, v_next):
    if gamma_n <= 0:
        raise ValueError("gamma_n must be positive")
    w = acc.weight_sum + gamma_n
    if acc.x_avg is None:
        return ErgodicAccumulator(w, np.array(x_next), np.array(v_next))
    frac = gamma_n / w
    return ErgodicAccumulator(
        w,
        acc.x_avg + frac * (x_next - acc.x_avg),
        acc.v_avg + frac * (v_next - acc.v_avg),
    )


@dataclass(frozen=True)
class ErgodicCheckpoint:
    N: int
    x_avg: np.ndarray
    v_avg: np.ndarray
    sum_gamma: float


@dataclass(frozen=True)
class RunRecord:
    """Per-iteration trace.  Row k holds the state before step ``ns[k]`` plus
    the scheduled parameters at that index; a stride > 1 subsamples the trace
    for very long horizons (the terminal row is always present)."""

    ns: np.ndarray
    xs: np.ndarray
    vs: np.ndarray
    gammas: np.ndarray
    taus: np.ndarray
    checkpoints: tuple
    stochastic: bool
    horizon: int
    stride: int
    grad_gap_partial: Optional[np.ndarray] = None
    diverged: bool = False
    error: Optional[str] = None

    @property
    def terminal_x(self):
        return self.xs[-1]

    @property
    def terminal_v(self):
        return self.vs[-1]


def run(spec, sched, oracle, x0, v0, horizon, callbacks=(), checkpoints=(),
        grad_gap_reference=None, step=papc_step):
    """Iterate the algorithm for ``horizon`` steps and record the trace.

    The initial point is projected onto V (the update projects anyway, so
    p_0 and x_1 are unchanged).  ``checkpoints`` are ergodic indices N at
    which the running weighted averages are snapshotted; when
    ``grad_gap_reference`` is given, the true partial sums of
    ||B x_n - B x_ref||^2 are accumulated online and stored per trace row.
    Divergence aborts the run and attaches the partial record to the error.
    """
    horizon = int(horizon)
    stride = 1 if horizon <= 100000 else math.ceil(horizon / 100000)
    x0 = spec.P_V(np.array(x0, dtype=float))
    v0 = np.array(v0, dtype=float)
    state = PapcState(0, x0, v0)

    cps = sorted(set(int(c) for c in checkpoints))
    cp_iter = iter(cps)
    next_cp = next(cp_iter, None)

    ref_val = None
    if grad_gap_reference is not None:
        ref_val = spec.B.apply(np.asarray(grad_gap_reference, dtype=float))
    wH = spec.primal_weights

    rows_n, rows_x, rows_v, rows_g, rows_t, rows_gg = [], [], [], [], [], []
    snaps = []
    acc = ErgodicAccumulator()
    gg = 0.0

    def _store(n, st):
        rows_n.append(n)
        rows_x.append(st.x)
        rows_v.append(st.v)
        rows_g.append(float(sched.gamma(n)))
        rows_t.append(float(sched.tau(n)))
        if ref_val is not None:
            rows_gg.append(gg)

    def _partial_record(err=None):
        return RunRecord(
            ns=np.array(rows_n, dtype=int),
            xs=np.array(rows_x), vs=np.array(rows_v),
            gammas=np.array(rows_g), taus=np.array(rows_t),
            checkpoints=tuple(snaps),
            stochastic=not getattr(oracle, "is_deterministic", False),
            horizon=horizon, stride=stride,
            grad_gap_partial=np.array(rows_gg) if ref_val is not None else None,
            diverged=err is not None, error=err,
        )

    for n in range(horizon):
        if ref_val is not None:
            d = spec.B.apply(state.x) - ref_val
            gg += inner(d, d, wH)
        if n % stride == 0:
            _store(n, state)
        gam = float(sched.gamma(n))
        try:
            state = step(state, spec, sched, oracle)
        except DivergenceError as exc:
            exc.record = _partial_record(str(exc))
            raise
        acc = ergodic_update(acc, gam, state.x, state.v)
        if next_cp is not None and n == next_cp:
            snaps.append(ErgodicCheckpoint(n, np.array(acc.x_avg), np.array(acc.v_avg),
                                           acc.weight_sum))
            next_cp = next(cp_iter, None)
        for cb in callbacks:
            cb(n, state, gam, float(sched.tau(n)))

    if ref_val is not None:
        d = spec.B.apply(state.x) - ref_val
        gg += inner(d, d, wH)
    _store(horizon, state)
    return _partial_record()
