"""Command-line front end.

Subcommands: build, theta, eta, classify, defect, check, kernel-dump.
Exit codes: 0 completed, 2 invalid config/spec, 3 completed with "fails"
verdicts, 4 inconclusive due to resolution floors. RFPROBE_THREADS caps
the worker count for independent pair evaluations.
"""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import flowspace
from .classify import (
    classify_rough,
    classify_weak,
    default_t_set,
    _sample_global_pairs,
    _default_pair_schedule,
)
from .errors import InvalidSpecError, RFProbeError, UnsupportedOperationError
from .heat import kernel
from .probes import (
    StepSchedule,
    eta_eps,
    rigidity_defect,
    theta_pair,
)
from .report import fmt_float, write_csv, write_json
from .suite import format_table, run_core_suite
from .transport import w2

CSV_HEADER = ["kind", "t", "x_index", "y_index", "value", "flag",
              "steps_used", "floor_hit"]


@dataclass
class RunConfig:
    space: str = ""
    params: str = ""
    t: float | None = None
    t_set: list = field(default_factory=list)
    pairs: int = 10
    h0: float | None = None
    k: int = 3
    eps: float | None = None
    tol: float | None = None
    method: str = "exact"
    bandwidth: float | None = None
    seed: int = 0
    out: str = ""
    report: str = ""
    dump_kernel: str = ""
    dump_plan: str = ""
    refine: int = 0

    _PATH_FIELDS = ("out", "report", "dump_kernel", "dump_plan")

    def to_jsonable(self):
        # output locations are not part of the run identity
        return {k: (list(v) if isinstance(v, (list, tuple)) else v)
                for k, v in self.__dict__.items()
                if k not in self._PATH_FIELDS}


def _available_cpus():
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def _worker_count():
    env = os.environ.get("RFPROBE_THREADS", "")
    try:
        cap = int(env) if env else 0
    except ValueError:
        cap = 0
    return max(1, cap) if cap else min(4, _available_cpus())


def _parse_inline_params(text):
    out = {}
    if not text:
        return out
    for item in text.split(","):
        if not item:
            continue
        key, _, val = item.partition("=")
        key = key.strip()
        val = val.strip()
        if key == "lambda":
            key = "lam"
        if val in ("shrink", "static"):
            out[key] = val
        elif key == "window" and ":" in val:
            a, _, b = val.partition(":")
            out[key] = (float(a), float(b))
        else:
            try:
                out[key] = int(val)
            except ValueError:
                try:
                    out[key] = float(val)
                except ValueError:
                    out[key] = val
    return out


_REFINE_KEYS = ("resolution", "count", "s_count")


def _refined_space(cfg: RunConfig, level):
    if cfg.space not in ("gaussian", "sphere", "cone", "suspension"):
        raise InvalidSpecError("refine sweeps need an inline model space")
    params = _parse_inline_params(cfg.params)
    for key in _REFINE_KEYS:
        if key in params:
            params[key] = int(params[key]) * 2 ** level
    if "resolution" not in params and cfg.space == "gaussian":
        params["resolution"] = 32 * 2 ** level
    if "count" not in params and cfg.space in ("sphere", "cone"):
        params["count"] = (300 if cfg.space != "sphere" else 300) * 2 ** level
    return flowspace.build_from_spec({"kind": cfg.space, "params": params})


def load_space_arg(cfg: RunConfig):
    name = cfg.space
    if name in ("gaussian", "sphere", "cone", "suspension"):
        spec = {"kind": name, "params": _parse_inline_params(cfg.params)}
        return flowspace.build_from_spec(spec)
    return flowspace.load_custom(name)


def _flag_of(est):
    if est.diverged:
        return "diverged"
    if est.converged:
        return "converged"
    return "nonconv"


def cmd_build(cfg: RunConfig):
    space = load_space_arg(cfg)
    space.validate(seed=cfg.seed)
    lo, hi = space.time_window
    print(f"kind: {space.kind}")
    print(f"points: {space.n_points}")
    print(f"time window: [{fmt_float(lo)}, {fmt_float(hi)}]")
    print("metric: OK")
    print(f"log-Lipschitz: {fmt_float(space.log_lipschitz)}")
    print(f"static: {space.static}")
    return 0


def _theta_targets(space, t, quota, seed):
    rng = np.random.default_rng(seed)
    d = space.dist_matrix(t)
    diam = float(d.max())
    return _sample_global_pairs(space, t, quota, rng,
                                d_range=(0.15 * diam, 0.6 * diam))


def cmd_theta(cfg: RunConfig):
    space = load_space_arg(cfg)
    t = cfg.t if cfg.t is not None else default_t_set(space)[0]
    pairs = _theta_targets(space, t, cfg.pairs, cfg.seed)
    rows, diagnostics = [], []
    plan_dumped = False

    def one(pair):
        x, y = pair
        sched = (StepSchedule(cfg.h0, cfg.k) if cfg.h0
                 else _default_pair_schedule(space, t, x, y, levels=cfg.k + 1))
        return theta_pair(space, t, x, y, sched, eps_bw=cfg.bandwidth,
                          method=cfg.method)

    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        results = list(pool.map(one, pairs))
    for (x, y), (tp, tm) in zip(pairs, results):
        rows.append(["theta", t, x, y, tp.value, _flag_of(tp),
                     len(tp.steps), tp.floor_hit])
        diagnostics.append({
            "x": x, "y": y, "steps": tp.steps, "quotients": tp.quotients,
            "extrapolant": tp.extrapolant, "theta_plus": tp.value,
            "theta_minus": tm.value, "converged": tp.converged,
            "diverged": tp.diverged, "floor_hit": tp.floor_hit})
    for level in range(1, max(0, cfg.refine) + 1):
        try:
            rspace = _refined_space(cfg, level)
        except RFProbeError:
            break
        rpairs = _theta_targets(rspace, t, cfg.pairs, cfg.seed)
        for x, y in rpairs:
            sched = (StepSchedule(cfg.h0, cfg.k) if cfg.h0
                     else _default_pair_schedule(rspace, t, x, y,
                                                 levels=cfg.k + 1))
            tp, _ = theta_pair(rspace, t, x, y, sched, eps_bw=cfg.bandwidth,
                               method=cfg.method)
            rows.append([f"theta/r{level}", t, x, y, tp.value, _flag_of(tp),
                         len(tp.steps), tp.floor_hit])
    if cfg.dump_plan and pairs:
        x, y = pairs[0]
        from .transport import DiscreteMeasure
        plan = w2(space, t, DiscreteMeasure.dirac(space.n_points, t, x),
                  DiscreteMeasure.dirac(space.n_points, t, y),
                  method=cfg.method)
        write_json(cfg.dump_plan, plan.to_jsonable())
        plan_dumped = True
    if cfg.out:
        write_csv(cfg.out, CSV_HEADER, rows)
    if cfg.report:
        write_json(cfg.report, {"config": cfg.to_jsonable(), "t": t,
                                "results": diagnostics,
                                "plan_dumped": plan_dumped})
    for row in rows:
        print(",".join(str(v) if not isinstance(v, float) else fmt_float(v)
                       for v in row))
    return 0


def cmd_eta(cfg: RunConfig):
    space = load_space_arg(cfg)
    t = cfg.t if cfg.t is not None else default_t_set(space)[0]
    rng = np.random.default_rng(cfg.seed)
    d = space.dist_matrix(t)
    diam = float(d.max())
    pairs = _sample_global_pairs(space, t, cfg.pairs, rng,
                                 d_range=(0.4 * diam, 0.7 * diam))
    rows, diagnostics = [], []

    def one(pair):
        x, y = pair
        floor = 3.0 * max(space.nn_of(t, x), space.nn_of(t, y))
        eps = cfg.eps if cfg.eps else max(float(d[x, y]) / 3.0, floor)
        return eta_eps(space, t, x, y, eps, method=cfg.method), eps

    with ThreadPoolExecutor(max_workers=_worker_count()) as pool:
        results = list(pool.map(one, pairs))
    for (x, y), (est, eps) in zip(pairs, results):
        flag = "low_confidence" if est.low_confidence else "ok"
        rows.append(["eta_eps", t, x, y, est.value, flag, 0, False])
        diagnostics.append({
            "x": x, "y": y, "eps": eps, "value": est.value,
            "slope0": est.slope0, "slope1": est.slope1,
            "half_dtw2": est.half_dtw2, "w2": est.w2,
            "candidate": est.candidate, "fit_residual": est.fit_residual})
    if cfg.out:
        write_csv(cfg.out, CSV_HEADER, rows)
    if cfg.report:
        write_json(cfg.report, {"config": cfg.to_jsonable(), "t": t,
                                "results": diagnostics})
    for row in rows:
        print(",".join(str(v) if not isinstance(v, float) else fmt_float(v)
                       for v in row))
    return 0


def _verdict_exit(verdicts):
    states = []
    for v in verdicts:
        for check in v.checks():
            states.append(v.overall(check))
    if any(s == "fails" for s in states):
        return 3
    if any(s == "inconclusive" for s in states):
        return 4
    return 0


def cmd_classify(cfg: RunConfig):
    space = load_space_arg(cfg)
    t_set = cfg.t_set or None
    verdicts = [classify_rough(space, t_set=t_set, pair_quota=max(10, cfg.pairs),
                               tol=cfg.tol if cfg.tol is not None else 0.1,
                               seed=cfg.seed, eps_bw=cfg.bandwidth,
                               method=cfg.method)]
    if space.has_geodesic:
        try:
            verdicts.append(classify_weak(
                space, t_set=t_set, pair_quota=max(4, cfg.pairs // 2),
                tol=cfg.tol if cfg.tol is not None else 0.2,
                seed=cfg.seed, method=cfg.method))
        except UnsupportedOperationError:
            pass
    payload = {"config": cfg.to_jsonable(),
               "verdicts": [v.to_jsonable() for v in verdicts]}
    if cfg.report:
        write_json(cfg.report, payload)
        with open(cfg.report + ".txt", "w") as fh:
            for v in verdicts:
                fh.write(v.summary + "\n")
    for v in verdicts:
        print(v.summary)
    return _verdict_exit(verdicts)


def cmd_defect(cfg: RunConfig):
    space = load_space_arg(cfg)
    val = rigidity_defect(space)
    print(fmt_float(val))
    if cfg.out:
        write_csv(cfg.out, CSV_HEADER,
                  [["rigidity_defect", space.time_window[0], -1, -1, val,
                    "ok", 0, False]])
    if cfg.report:
        write_json(cfg.report, {"config": cfg.to_jsonable(), "defect": val})
    return 0


def cmd_check(cfg: RunConfig):
    space = load_space_arg(cfg)
    rows = run_core_suite(space, seed=cfg.seed, eps_bw=cfg.bandwidth)
    print(format_table(rows))
    if cfg.report:
        write_json(cfg.report, {"config": cfg.to_jsonable(), "rows": [
            {"name": r.name, "passed": bool(r.passed), "value": r.value,
             "threshold": r.threshold, "detail": r.detail} for r in rows]})
    return 0 if all(r.passed for r in rows) else 3


def cmd_kernel_dump(cfg: RunConfig):
    space = load_space_arg(cfg)
    lo, hi = space.time_window
    t = cfg.t if cfg.t is not None else lo + 0.2 * (hi - lo)
    s = max(lo, t - (cfg.h0 if cfg.h0 else 0.01))
    K = kernel(space, t, s, eps_bw=cfg.bandwidth)
    path = cfg.dump_kernel or cfg.out or "kernel.rfpk"
    if path.endswith(".json"):
        K.dump_json(path)
    else:
        K.dump_binary(path)
    print(f"kernel {K.n}x{K.n} s={fmt_float(K.s)} t={fmt_float(K.t)} -> {path}")
    return 0


_COMMANDS = {
    "build": cmd_build,
    "theta": cmd_theta,
    "eta": cmd_eta,
    "classify": cmd_classify,
    "defect": cmd_defect,
    "check": cmd_check,
    "kernel-dump": cmd_kernel_dump,
}


def make_parser():
    ap = argparse.ArgumentParser(
        prog="rfprobe",
        description="Synthetic Ricci-flow probes on discretized "
                    "time-dependent metric measure spaces")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--space", required=True,
                       help="space JSON path or inline model name")
        p.add_argument("--params", default="",
                       help="inline model parameters k=v,k=v")
        p.add_argument("--t", type=float, default=None)
        p.add_argument("--t-set", dest="t_set", default="",
                       help="comma-separated probe times")
        p.add_argument("--pairs", type=int, default=10)
        p.add_argument("--h0", type=float, default=None)
        p.add_argument("--k", type=int, default=3)
        p.add_argument("--eps", type=float, default=None)
        p.add_argument("--tol", type=float, default=None)
        p.add_argument("--method", choices=["exact", "entropic"],
                       default="exact")
        p.add_argument("--bandwidth", type=float, default=None)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="")
        p.add_argument("--report", default="")
        p.add_argument("--dump-kernel", dest="dump_kernel", default="")
        p.add_argument("--dump-plan", dest="dump_plan", default="")
        p.add_argument("--suite", default="core")
        p.add_argument("--refine", type=int, default=0)
    return ap


def main(argv=None):
    ap = make_parser()
    ns = ap.parse_args(argv)
    cfg = RunConfig(
        space=ns.space, params=ns.params, t=ns.t,
        t_set=[float(v) for v in ns.t_set.split(",") if v],
        pairs=ns.pairs, h0=ns.h0, k=ns.k, eps=ns.eps, tol=ns.tol,
        method=ns.method, bandwidth=ns.bandwidth, seed=ns.seed,
        out=ns.out, report=ns.report, dump_kernel=ns.dump_kernel,
        dump_plan=ns.dump_plan, refine=ns.refine)
    try:
        return _COMMANDS[ns.command](cfg)
    except RFProbeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
