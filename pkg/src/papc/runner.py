"""Config-driven experiment runner: multi-seed orchestration, per-seed trace
CSVs, gap tables, and a summary JSON.

Trace and gap CSVs are byte-stable for a fixed config and seed (floats are
written with shortest round-trip repr and all randomness is keyed by (seed,
iteration)); the summary JSON additionally records wall time, which is the
one intentionally non-stable field.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .composite import (CompositeBlock, CompositeProblem, composite_dual_residuals, lift,
                        run_composite, validate_composite)
from .config import (ExperimentConfig, parse_config, parse_projector_spec, parse_prox_spec,
                     parse_smooth_spec, serialize_config)
from .diagnostics import GapConstant, gap_and_bound, kkt_residual, rate_fit
from .errors import ConfigError, DivergenceError
from .linop import (LinearMap, OrthoProjector, SpdOperator, coupling_spectral_estimate,
                    inner, norm, read_matrix, weighted_norm_sq)
from .monotone import MonotoneBlock, gradient_map
from .solver import ProblemSpec, Schedules, run, validate_hypotheses
from .stochastic import (DeterministicOracle, GaussianOracle, MinibatchOracle,
                         VarianceSchedule, summability_certificate)
from . import zoo as zoo_mod

__all__ = [
    "ExperimentResult",
    "run_experiment",
    "validate_only",
    "default_checkpoints",
    "TRACE_COLUMNS",
]

TRACE_COLUMNS = ("n", "gamma_n", "tau_n", "primal_res", "dual_res", "fejer_phi",
                 "dist_x_oracle", "dist_v_oracle", "grad_gap_partial_sum")
GAP_COLUMNS = ("N", "gap", "bound", "sum_gamma", "slope_window")


def default_checkpoints(horizon, count=48):
    """{0} plus log-spaced ergodic indices up to horizon - 1."""
    horizon = int(horizon)
    if horizon <= 1:
        return (0,)
    pts = np.unique(np.geomspace(1, horizon - 1, count).astype(int))
    return tuple(sorted({0, *pts.tolist()}))


def _resolve_checkpoints(cfg):
    if cfg.checkpoints == "none":
        return ()
    if cfg.checkpoints == "log":
        return default_checkpoints(cfg.horizon)
    return tuple(cfg.checkpoints)


@dataclass
class _Bound:
    cfg: ExperimentConfig
    instance: object
    schedules: Schedules
    kind: str  # "single" | "composite"
    noise: object  # VarianceSchedule or None
    oracle_available: bool = True


def _build_custom_single(cfg):
    params = dict(cfg.problem_params)
    dim = int(params.get("dim", 4))
    base = cfg.base_dir
    h, lipschitz = parse_smooth_spec(params.get("h", "zero"), dim, base)
    if lipschitz <= 0:
        raise ConfigError("custom problems need a smooth term with positive curvature")
    L_spec = params.get("L", "identity")
    if L_spec == "identity":
        L = LinearMap.identity(dim)
    elif L_spec.startswith("matrix:"):
        L = LinearMap.from_matrix(read_matrix(
            os.path.join(base, L_spec.split(":", 1)[1])))
    else:
        raise ConfigError("custom L must be 'identity' or 'matrix:<path>'")
    g = parse_prox_spec(params.get("g", "zero"), L.codomain_dim, base)
    P = parse_projector_spec(params.get("projector", "full"), dim, base)
    U = SpdOperator.scalar_op(float(params.get("sigma", 1.0)), L.codomain_dim)
    spec = ProblemSpec(B=gradient_map(h, lipschitz), A=MonotoneBlock.from_prox(g),
                       L=L, P_V=P, U=U, g=g, h=h, name="custom")
    est = coupling_spectral_estimate(U, L, P)
    if not est.converged:
        raise ConfigError("could not estimate the coupling spectrum for tau")
    tau = 0.9 / max(est.value, 1e-12)
    sched = Schedules.constant(0.9 * spec.B.beta, tau, spec.B.beta)
    return zoo_mod.ZooInstance("custom", "single", sched,
                               tuple(sorted(params.items())), spec=spec,
                               description="config-assembled problem")


def _build_custom_composite(cfg):
    params = dict(cfg.problem_params)
    dim = int(params.get("dim", 4))
    base = cfg.base_dir
    h, lipschitz = parse_smooth_spec(params.get("h", "zero"), dim, base)
    if lipschitz <= 0:
        raise ConfigError("custom problems need a smooth term with positive curvature")
    blocks, weights = [], []
    i = 1
    while ("block%d.g" % i) in params or ("block%d.L" % i) in params:
        prefix = "block%d." % i
        L_spec = params.get(prefix + "L", "identity")
        if L_spec == "identity":
            L = LinearMap.identity(dim)
        elif L_spec.startswith("matrix:"):
            L = LinearMap.from_matrix(read_matrix(
                os.path.join(base, L_spec.split(":", 1)[1])))
        else:
            raise ConfigError("%sL must be 'identity' or 'matrix:<path>'" % prefix)
        g = parse_prox_spec(params.get(prefix + "g", "zero"), L.codomain_dim, base)
        sigma = float(params.get(prefix + "sigma", 1.0))
        blocks.append(CompositeBlock(L=L, A=MonotoneBlock.from_prox(g), sigma=sigma, g=g))
        weights.append(float(params.get(prefix + "omega", 0.0)))
        i += 1
    if not blocks:
        raise ConfigError("custom_composite needs block1.g/block1.L/... entries")
    cp = CompositeProblem(weights=np.array(weights), C=gradient_map(h, lipschitz),
                          blocks=tuple(blocks), h=h, name="custom_composite")
    caps = []
    for blk in cp.blocks:
        est = coupling_spectral_estimate(SpdOperator.scalar_op(blk.sigma, blk.A.dim),
                                         blk.L, OrthoProjector.full(dim))
        if not est.converged:
            raise ConfigError("could not estimate a block coupling spectrum for tau")
        caps.append(0.9 / max(est.value, 1e-12))
    sched = Schedules.constant(0.9 * cp.C.beta, min(caps), cp.C.beta)
    return zoo_mod.ZooInstance("custom_composite", "composite", sched,
                               tuple(sorted(params.items())), composite=cp,
                               lifted=lift(cp),
                               description="config-assembled composite problem")


def bind(cfg):
    """Materialize problem, schedules and noise model from a config."""
    cfg.validate()
    oracle_available = True
    if cfg.problem == "custom":
        inst = _build_custom_single(cfg)
        oracle_available = False
    elif cfg.problem == "custom_composite":
        inst = _build_custom_composite(cfg)
        oracle_available = False
    else:
        inst = zoo_mod.build_instance(cfg.problem, cfg.problem_params)
    base = inst.schedules
    gamma0 = cfg.gamma0 if cfg.gamma0 is not None else base.gamma0
    tau_cap = cfg.tau_cap if cfg.tau_cap is not None else base.tau_cap
    beta = base.beta
    sched = Schedules.make(beta, gamma_kind=cfg.gamma_kind, gamma0=gamma0,
                           tau_kind=cfg.tau_kind, tau_cap=tau_cap)
    noise = None
    if cfg.noise_kind == "gaussian":
        if cfg.epsilon > 0:
            noise = VarianceSchedule.polynomial(cfg.sigma0_sq, cfg.epsilon, regime=cfg.regime)
        else:
            noise = VarianceSchedule.constant(cfg.sigma0_sq, regime=cfg.regime)
    elif cfg.noise_kind == "minibatch":
        if inst.components is None:
            raise ConfigError("minibatch noise needs a problem with component maps "
                              "(the zoo quadratics); custom problems must drive "
                              "stochastic.MinibatchOracle through the API")
        noise = "minibatch"
    return _Bound(cfg, inst, sched, inst.kind, noise, oracle_available)


def _make_oracle(bound, seed):
    base_map = bound.instance.spec.B if bound.kind == "single" else bound.instance.composite.C
    if bound.noise is None:
        return DeterministicOracle(base_map)
    if bound.noise == "minibatch":
        comps = bound.instance.components
        k = bound.cfg.batch_schedule or len(comps)
        return MinibatchOracle(comps, beta=base_map.beta, seed=seed, dim=base_map.dim,
                               batch_schedule=lambda n: min(k, len(comps)))
    return GaussianOracle(base_map, bound.noise, seed)


def validate_only(cfg, horizon=None):
    bound = bind(cfg)
    horizon = cfg.horizon if horizon is None else horizon
    if bound.kind == "single":
        return validate_hypotheses(bound.instance.spec, bound.schedules, horizon,
                                   regime=cfg.regime)
    return validate_composite(bound.instance.composite, bound.schedules, horizon,
                              regime=cfg.regime)


def _fmt(x):
    if x is None:
        return ""
    return repr(float(x))


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _trace_rows(bound, record, oracle_xv):
    """Diagnostic columns for every stored trace row.  Oracle-relative
    columns are left empty when no reference solution exists."""
    x_ref, v_ref = oracle_xv if oracle_xv is not None else (None, None)
    inst = bound.instance
    rows = []
    if bound.kind == "single":
        spec = inst.spec
        for k in range(len(record.ns)):
            x, v = record.xs[k], record.vs[k]
            pres, dres = kkt_residual(x, v, spec)
            phi = dist_x = dist_v = None
            if x_ref is not None:
                phi = inner(x - x_ref, x - x_ref, spec.primal_weights) + weighted_norm_sq(
                    v - v_ref, spec.U, record.taus[k], record.gammas[k], spec.L, spec.P_V)
                dist_x = norm(x - x_ref, spec.primal_weights)
                dist_v = norm(v - v_ref, spec.dual_weights)
            gg = record.grad_gap_partial[k] if record.grad_gap_partial is not None else None
            rows.append((
                str(int(record.ns[k])), _fmt(record.gammas[k]), _fmt(record.taus[k]),
                _fmt(pres), _fmt(dres), _fmt(phi), _fmt(dist_x), _fmt(dist_v), _fmt(gg),
            ))
    else:
        cp = inst.composite
        spec = inst.lifted.spec
        for k in range(len(record.ns)):
            x, v = record.xs[k], record.vs[k]
            combined, per_block = composite_dual_residuals(cp, x, v)
            phi = dist_x = dist_v = None
            if x_ref is not None:
                phi = float(np.dot(x - x_ref, x - x_ref)) + weighted_norm_sq(
                    v - v_ref, spec.U, record.taus[k], record.gammas[k], spec.L, spec.P_V)
                dist_x = float(np.linalg.norm(x - x_ref))
                dist_v = norm(v - v_ref, spec.dual_weights)
            gg = record.grad_gap_partial[k] if record.grad_gap_partial is not None else None
            rows.append((
                str(int(record.ns[k])), _fmt(record.gammas[k]), _fmt(record.taus[k]),
                _fmt(combined), _fmt(max(per_block)), _fmt(phi), _fmt(dist_x),
                _fmt(dist_v), _fmt(gg),
            ))
    return rows


def _noise_c0(bound):
    """c0 = sum gamma_n^2 E||r_n - grad h(x_n)||^2, analytic for the gaussian
    model (per-coordinate sums times the dimension, tail included when
    certified).  None for minibatch noise, whose error moments depend on the
    iterate: the gap table is then skipped."""
    if bound.noise is None:
        return 0.0
    if bound.noise == "minibatch":
        return None
    report = summability_certificate(bound.noise, bound.schedules, bound.cfg.horizon)
    per_coord = report.partial_gamma_sigma_sq
    if report.tail_gamma_sigma_sq is not None:
        per_coord += report.tail_gamma_sigma_sq
    dim = bound.instance.spec.B.dim if bound.kind == "single" else bound.instance.composite.C.dim
    return dim * per_coord


def _gap_rows(bound, record, oracle_xv):
    inst = bound.instance
    if bound.kind == "single":
        spec = inst.spec
        K = zoo_mod.saddle_function(inst)
        reference = oracle_xv
        x0 = np.zeros(spec.B.dim)
        v0 = np.zeros(spec.A.dim)
        embed = None
    else:
        lp = inst.lifted
        spec = lp.spec
        K = zoo_mod.saddle_function(inst)
        x_ref, v_ref = oracle_xv
        reference = (lp.embed_primal(x_ref), v_ref)
        x0 = np.zeros(spec.B.dim)
        v0 = np.zeros(spec.A.dim)
        embed = lp.embed_primal
    gapc = GapConstant(spec=spec, sched=bound.schedules, x0=x0, v0=v0, c0=_noise_c0(bound))
    return gap_and_bound(record, K, reference, gapc, embed_x=embed)


def _gap_csv_rows(rows):
    out = []
    for k, row in enumerate(rows):
        pairs = [(r.N, r.gap) for r in rows[: k + 1] if r.finite]
        slope = ""
        window = (max(1.0, row.N / 100.0), max(row.N, 1))
        try:
            slope = _fmt(rate_fit(pairs, window))
        except ValueError:
            slope = ""
        out.append((str(row.N), _fmt(row.gap) if row.finite else "",
                    _fmt(row.bound), _fmt(row.sum_gamma), slope))
    return out


def _run_seed(bound, seed, out_dir, oracle_xv):
    """One seed: run, write its trace CSV (and gap CSV when K is available),
    return the summary fragment."""
    cfg = bound.cfg
    inst = bound.instance
    checkpoints = _resolve_checkpoints(cfg)
    oracle = _make_oracle(bound, seed)
    x_ref, v_ref = oracle_xv if oracle_xv is not None else (None, None)
    status = "ok"
    error = None
    t0 = time.perf_counter()
    try:
        if bound.kind == "single":
            record = run(inst.spec, bound.schedules, oracle,
                         np.zeros(inst.spec.B.dim), np.zeros(inst.spec.A.dim),
                         cfg.horizon, checkpoints=checkpoints, grad_gap_reference=x_ref)
        else:
            record = run_composite(inst.composite, bound.schedules, oracle,
                                   np.zeros(inst.composite.base_dim),
                                   np.zeros(sum(inst.composite.dual_dims)),
                                   cfg.horizon, checkpoints=checkpoints,
                                   grad_gap_reference=x_ref)
    except DivergenceError as exc:
        record = exc.record
        status = "diverged"
        error = str(exc)
    wall = time.perf_counter() - t0

    trace_path = os.path.join(out_dir, "seed_%d_trace.csv" % seed)
    _write_csv(trace_path, TRACE_COLUMNS, _trace_rows(bound, record, oracle_xv))

    gap_summary = None
    if status == "ok" and record.checkpoints and oracle_xv is not None \
            and _noise_c0(bound) is not None:
        rows = _gap_rows(bound, record, oracle_xv)
        _write_csv(os.path.join(out_dir, "seed_%d_gap.csv" % seed), GAP_COLUMNS,
                   _gap_csv_rows(rows))
        finite = [r for r in rows if r.finite]
        gap_summary = {
            "max_gap_minus_bound": max((r.gap - r.bound) for r in finite) if finite else None,
            "rows": [(r.N, r.gap, r.bound, r.sum_gamma) for r in rows],
        }

    dist_x = dist_v = None
    if x_ref is not None:
        if bound.kind == "single":
            dist_x = norm(record.terminal_x - x_ref, inst.spec.primal_weights)
            dist_v = norm(record.terminal_v - v_ref, inst.spec.dual_weights)
        else:
            dist_x = float(np.linalg.norm(record.terminal_x - x_ref))
            dist_v = norm(record.terminal_v - v_ref, inst.lifted.spec.dual_weights)
    return {
        "seed": seed,
        "status": status,
        "error": error,
        "terminal_dist_x": dist_x,
        "terminal_dist_v": dist_v,
        "wall_time_s": wall,
        "gap": gap_summary,
    }


def _seed_worker(cfg_text, base_dir, seed, out_dir, oracle_x, oracle_v):
    # Workers rebuild everything from the config text: nothing with lambdas
    # crosses the process boundary, and determinism is inherited.
    cfg = parse_config(cfg_text, base_dir=base_dir)
    bound = bind(cfg)
    xv = None if oracle_x is None else (np.asarray(oracle_x), np.asarray(oracle_v))
    return _run_seed(bound, seed, out_dir, xv)


@dataclass
class ExperimentResult:
    out_dir: str
    summary: dict
    exit_code: int


def run_experiment(cfg, out_dir=None, jobs=1, force=False, seed_override=None):
    """Execute a full experiment: validate, run every seed, write artifacts.

    Exit code semantics: 0 success, 1 any seed diverged, 2 config/hypothesis
    rejection (unless ``force``).
    """
    if isinstance(cfg, str):
        cfg = parse_config(cfg)
    cfg.validate()
    if seed_override is not None:
        cfg.seeds = (int(seed_override),)
    out_dir = out_dir or cfg.out_dir
    os.makedirs(out_dir, exist_ok=True)

    t0 = time.perf_counter()
    bound = bind(cfg)
    cert = validate_only(cfg)
    cert_summary = {
        "ok": cert.ok,
        "regime": cert.regime,
        "failed": [c.name for c in cert.failed()],
    }
    if not cert.ok and not force:
        summary = {"certificate": cert_summary, "status": "rejected"}
        with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
        return ExperimentResult(out_dir, summary, 2)

    with open(os.path.join(out_dir, "config.cfg"), "w", encoding="utf-8") as fh:
        fh.write(serialize_config(cfg))

    oracle_xv = zoo_mod.oracle_solution(bound.instance) if bound.oracle_available else None
    seeds = sorted(set(int(s) for s in cfg.seeds))
    if jobs > 1 and len(seeds) > 1:
        cfg_text = serialize_config(cfg)
        ox = np.asarray(oracle_xv[0]) if oracle_xv is not None else None
        ov = np.asarray(oracle_xv[1]) if oracle_xv is not None else None
        with ProcessPoolExecutor(max_workers=int(jobs)) as pool:
            futures = [pool.submit(_seed_worker, cfg_text, cfg.base_dir, s, out_dir, ox, ov)
                       for s in seeds]
            per_seed = [f.result() for f in futures]
    else:
        per_seed = [_run_seed(bound, s, out_dir, oracle_xv) for s in seeds]
    per_seed.sort(key=lambda d: d["seed"])

    gap_mean_rows = _mean_gap(per_seed)
    if gap_mean_rows:
        _write_csv(os.path.join(out_dir, "gap_mean.csv"), GAP_COLUMNS, gap_mean_rows)

    summary = {
        "problem": cfg.problem,
        "problem_params": dict(cfg.problem_params),
        "horizon": cfg.horizon,
        "noise": cfg.noise_kind,
        "certificate": cert_summary,
        "seeds": {str(d["seed"]): {k: d[k] for k in
                                   ("status", "error", "terminal_dist_x", "terminal_dist_v")}
                  for d in per_seed},
        "max_terminal_dist_x": (max(d["terminal_dist_x"] for d in per_seed)
                                if per_seed[0]["terminal_dist_x"] is not None else None),
        "status": "ok" if all(d["status"] == "ok" for d in per_seed) else "diverged",
        "wall_time_s": time.perf_counter() - t0,
    }
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    exit_code = 0 if summary["status"] == "ok" else 1
    return ExperimentResult(out_dir, summary, exit_code)


def _mean_gap(per_seed):
    tables = [d["gap"]["rows"] for d in per_seed if d.get("gap")]
    if not tables or any(len(t) != len(tables[0]) for t in tables):
        return []
    out = []
    rows_by_k = list(zip(*tables))
    means = []
    for k, group in enumerate(rows_by_k):
        ns = {g[0] for g in group}
        if len(ns) != 1:
            return []
        gaps = [g[1] for g in group if math.isfinite(g[1])]
        mean = sum(gaps) / len(gaps) if gaps else math.nan
        means.append((group[0][0], mean, group[0][2], group[0][3]))
    for k, (n, mean, bnd, sg) in enumerate(means):
        pairs = [(m[0], m[1]) for m in means[: k + 1] if math.isfinite(m[1])]
        try:
            slope = _fmt(rate_fit(pairs, (max(1.0, n / 100.0), max(n, 1))))
        except ValueError:
            slope = ""
        out.append((str(n), _fmt(mean) if math.isfinite(mean) else "",
                    _fmt(bnd), _fmt(sg), slope))
    return out
