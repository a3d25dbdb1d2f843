"""Command line entry point ``ldp-lab``.

Exit status: 0 when the command ran and every requested check passed, 1 when a check
failed (or a run had failing tasks), 2 for unusable input.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import yaml

from .control import Control
from .errors import LdpLabError, ValidationError
from .events import event_from_config
from .experiments import EpsilonLadder
from .checks import check_full_coercivity, check_linear_coercivity, preset_checks
from .manifest import (
    _Context,
    _task_converge,
    _task_curve,
    _task_mc,
    _task_tightness,
    dumps,
    load_manifest,
    run,
)
from .integrators import simulate
from .rate import RateQuery, RateResult, evaluate_rate, rate_over_event
from .spectral import field_from_csv, read_field, write_trajectory


def _load(args, validate=True):
    return load_manifest(args.config, validate=validate)


def _read_control(path):
    if path is None:
        return None
    return Control.from_dict(json.loads(Path(path).read_text()))


def _event(manifest, spec, ctx=None):
    if spec in manifest.events:
        return ctx.event(spec) if ctx is not None else manifest.events[spec]
    p = Path(spec)
    cfg = yaml.safe_load(p.read_text()) if p.exists() else yaml.safe_load(spec)
    if not isinstance(cfg, dict):
        raise ValidationError(f"cannot interpret event spec {spec!r}")
    return event_from_config(cfg)


def _target_field(spec):
    p = Path(spec)
    if not p.exists():
        return None
    if p.suffix == ".csv":
        return field_from_csv(p.read_text())[0]
    return read_field(p)[0]


def _out_dir(path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)


def cmd_check(args):
    m = _load(args, validate=False)
    samples = args.samples if args.samples is not None else int(m.raw["checks"].get("samples", 10_000))
    seed = args.seed if args.seed is not None else int(m.raw["checks"].get("seed", 0))
    reports = preset_checks(m.coeffs, samples=samples, seed=seed)
    if args.full_coercivity:
        reports.append(check_full_coercivity(m.coeffs, samples=samples, seed=seed))
    if args.linear_coercivity:
        reports.append(check_linear_coercivity(m.coeffs, samples=min(samples, 2000), seed=seed))
    if args.report:
        _out_dir(args.report)
        Path(args.report).write_text("[\n" + ",\n".join(r.to_json() for r in reports) + "\n]\n")
    for r in reports:
        print(f"{r.name}: {r.verdict} (margin {r.margin})")
    return 0 if all(r.passed for r in reports) else 1


def cmd_simulate(args, mode=None):
    m = _load(args)
    mode = mode or args.mode
    eps = 0.0 if mode == "skeleton" else args.eps
    cfg = m.solver.with_(epsilon=eps)
    T = args.T if args.T is not None else m.T
    psi = _read_control(getattr(args, "control", None))
    traj = simulate(mode, m.coeffs, m.initial_state(), cfg, T, seed=args.seed, psi=psi)
    _out_dir(args.out)
    with open(args.out, "wb") as f:
        write_trajectory(f, traj)
    side = {"config_hash": m.coeffs.fingerprint(), "manifest_digest": m.digest(), "seed": args.seed,
            "mode": mode, "eps": eps, "flags": list(traj.flags), "dt": traj.dt, "steps": len(traj) - 1}
    Path(str(args.out) + ".json").write_text(dumps(side))
    print(f"wrote {args.out} ({len(traj)} states, flags={list(traj.flags)})")
    return 0


def cmd_rate(args):
    m = _load(args)
    ctx = _Context(m, Path(args.out).parent)
    target = _target_field(args.target)
    common = dict(T=m.T, solver=m.solver.with_(epsilon=0.0), tol=args.tol, control_dt=args.control_dt,
                  grad_mode=args.grad_mode, max_iters=args.max_iters)
    if target is not None:
        res = evaluate_rate(m.coeffs, ctx.x, RateQuery(target=target, **common))
    else:
        ev = _event(m, args.target, ctx)
        res = rate_over_event(m.coeffs, ctx.x, ev, RateQuery(event=ev, **common))
    _out_dir(args.out)
    cfile = Path(args.out).with_name(Path(args.out).stem + "_control.json")
    cfile.write_text(dumps(res.control.to_dict()))
    Path(args.out).write_text(dumps(dict(res.to_dict(), control_file=cfile.name)))
    print(f"rate upper bound {res.value} converged={res.converged} mismatch={res.mismatch:.3g}")
    return 0


def _ctx_with_ladder(args):
    m = _load(args)
    if getattr(args, "n", None):
        m.ladder = EpsilonLadder(m.ladder.values, args.n, m.ladder.seed_base)
    return m, _Context(m, Path(args.out).parent)


def _register(ctx, name, control_path, rate_path=None):
    if control_path is None and rate_path is None:
        return None
    entry = {}
    if rate_path:
        body = json.loads(Path(rate_path).read_text())
        control_path = control_path or str(Path(rate_path).with_name(body["control_file"]))
        ctl = _read_control(control_path)
        val = math.inf if body["value"] == "inf" else float(body["value"])
        entry["rate"] = RateResult(val, ctl, body["mismatch"], body["converged"], body["iterations"],
                                   float(body["best_cost"]))
    entry["control"] = _read_control(control_path)
    ctx.results[name] = entry
    return name


def _event_name(m, ctx, spec):
    if spec in m.events:
        return spec
    m.events["cli"] = _event(m, spec)
    return "cli"


def cmd_mc(args):
    m, ctx = _ctx_with_ladder(args)
    task = {"id": Path(args.out).stem, "event": _event_name(m, ctx, args.event),
            "eps": args.eps if args.eps is not None else m.ladder.values[0],
            "n": args.n or m.ladder.samples_per_eps, "seed": args.seed,
            "importance": _register(ctx, "importance", args.importance)}
    ctx.out = Path(args.out).parent
    _out_dir(args.out)
    info, ok = _task_mc(ctx, task)
    print(f"wrote {ctx.out / info['files'][0]}")
    return 0 if ok else 1


def cmd_curve(args):
    m, ctx = _ctx_with_ladder(args)
    ev_name = _event_name(m, ctx, args.event)
    rate_name = _register(ctx, "rate", None, args.rate)
    if rate_name is None:
        ev = ctx.event(ev_name)
        q = RateQuery(T=m.T, solver=m.solver.with_(epsilon=0.0), event=ev, control_dt=args.control_dt,
                      grad_mode=args.grad_mode)
        res = rate_over_event(m.coeffs, ctx.x, ev, q)
        ctx.results["rate"] = {"rate": res, "control": res.control}
        rate_name = "rate"
    task = {"id": Path(args.out).stem, "event": ev_name, "rate": rate_name,
            "importance": rate_name if args.importance else None}
    ctx.out = Path(args.out).parent
    _out_dir(args.out)
    info, ok = _task_curve(ctx, task)
    print(f"intercept {info['intercept']:.6g}, relative error {info['relative_error']:.3g}")
    return 0 if ok else 1


def cmd_converge(args):
    m, ctx = _ctx_with_ladder(args)
    task = {"id": Path(args.out).stem, "control": _register(ctx, "control", args.control), "include_zero": True}
    ctx.out = Path(args.out).parent
    _out_dir(args.out)
    _task_converge(ctx, task)
    print(f"wrote {args.out}")
    return 0


def cmd_tightness(args):
    m, ctx = _ctx_with_ladder(args)
    task = {"id": Path(args.out).stem, "controls": [_register(ctx, "control", args.control) or "zero"],
            "level": args.level}
    if args.gammas:
        task["gammas"] = args.gammas
    if args.gamma_factors:
        task["gamma_factors"] = args.gamma_factors
    ctx.out = Path(args.out).parent
    _out_dir(args.out)
    info, ok = _task_tightness(ctx, task)
    print(f"sup tail {info['sup_tail']} ({'pass' if ok else 'fail'})")
    return 0 if ok else 1


def cmd_run(args):
    m = _load(args)
    out = args.out or Path(args.config).with_suffix("")
    summary = run(m, out)
    for t in summary["tasks"]:
        print(f"{t['id']}: {t['status']}")
    return 0 if summary["passed"] else 1


def build_parser():
    p = argparse.ArgumentParser(prog="ldp-lab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)

    def verb(name, func, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, help="manifest (YAML)")
        sp.set_defaults(func=func)
        return sp

    sp = verb("check", cmd_check, "run the structural checks of the configured system")
    sp.add_argument("--samples", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--report")
    sp.add_argument("--full-coercivity", action="store_true")
    sp.add_argument("--linear-coercivity", action="store_true")

    sp = verb("simulate", cmd_simulate, "integrate one path")
    sp.add_argument("--eps", type=float, default=0.1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--mode", choices=("skeleton", "ito", "tilted", "stratonovich"), default="ito")
    sp.add_argument("--control")
    sp.add_argument("--T", type=float)

    sp = verb("skeleton", lambda a: cmd_simulate(a, "skeleton"), "integrate the controlled deterministic equation")
    sp.add_argument("--out", required=True)
    sp.add_argument("--control")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--T", type=float)

    sp = verb("rate", cmd_rate, "upper bound on the rate function")
    sp.add_argument("--target", required=True, help="field file, manifest event name or inline event spec")
    sp.add_argument("--out", required=True)
    sp.add_argument("--tol", type=float, default=1e-3)
    sp.add_argument("--control-dt", type=float)
    sp.add_argument("--grad-mode", choices=("finite_difference", "adjoint_linear"), default="finite_difference")
    sp.add_argument("--max-iters", type=int, default=2000)

    sp = verb("mc", cmd_mc, "Monte Carlo event probability")
    sp.add_argument("--out", required=True)
    sp.add_argument("--event", required=True)
    sp.add_argument("--eps", type=float)
    sp.add_argument("--n", type=int)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--importance", help="control file for importance sampling")

    sp = verb("curve", cmd_curve, "decay of eps log p along the ladder")
    sp.add_argument("--out", required=True)
    sp.add_argument("--event", required=True)
    sp.add_argument("--rate", help="rate.json from a previous run")
    sp.add_argument("--n", type=int)
    sp.add_argument("--importance", action="store_true")
    sp.add_argument("--control-dt", type=float)
    sp.add_argument("--grad-mode", choices=("finite_difference", "adjoint_linear"), default="finite_difference")

    sp = verb("converge", cmd_converge, "MR distance between tilted and skeleton solutions")
    sp.add_argument("--out", required=True)
    sp.add_argument("--control")
    sp.add_argument("--n", type=int)

    sp = verb("tightness", cmd_tightness, "tail probabilities of the MR norm")
    sp.add_argument("--out", required=True)
    sp.add_argument("--control")
    sp.add_argument("--n", type=int)
    sp.add_argument("--gammas", type=float, nargs="+")
    sp.add_argument("--gamma-factors", type=float, nargs="+")
    sp.add_argument("--level", type=float, default=1e-2)

    sp = verb("run", cmd_run, "execute a full manifest")
    sp.add_argument("--out")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"validation failed: {exc}", file=sys.stderr)
        for r in exc.reports:
            print(r.to_json(), file=sys.stderr)
        return 2
    except (LdpLabError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
