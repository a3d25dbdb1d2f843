"""Experiment manifests: parsing, eager validation and deterministic execution.

A manifest is a YAML mapping::

    system: ou_scalar            # preset name
    overrides: {lam: 1.0}        # preset keyword overrides
    T: 1.0
    solver: {dt: 0.001}          # SolverConfig fields
    initial: {kind: zero}        # zero | random | mode | file
    ladder: {values: [0.2, 0.1, 0.05], samples_per_eps: 1000, seed_base: 0}
    events: {hit: {kind: mean_exceedance, threshold: 1.0}}
    checks: {samples: 10000, seed: 0}
    tasks:
      - {op: check}
      - {op: rate, id: r1, event: hit, control_dt: 0.025, grad_mode: adjoint_linear}
      - {op: curve, id: c1, event: hit, rate: r1, importance: r1}

Every output byte is a function of the manifest; wall-clock information goes to a
log file next to (not inside) the artifact directory.
"""

from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .checks import check_full_coercivity, check_linear_coercivity, preset_checks
from .control import Control
from .errors import DomainError, LdpLabError, ManifestError, ValidationError
from .events import event_from_config
from .experiments import (
    EpsilonLadder,
    convergence_study,
    energy_bound_audit,
    ldp_decay_curve,
    mc_probability,
    tightness_probe,
)
from .integrators import SolverConfig, simulate, solve_skeleton
from .presets import ORACLE_ONLY, PRESETS, make_preset, verify_preset_fidelity
from .rate import RateQuery, evaluate_rate, rate_over_event
from .spectral import SpectralField, random_field, read_field, write_trajectory

TOP_KEYS = {"system", "overrides", "T", "solver", "initial", "ladder", "events", "checks", "tasks", "seeds"}
OPS = ("check", "simulate", "skeleton", "rate", "mc", "curve", "converge", "tightness", "energy_audit")
DEFAULTS = {"T": 0.5, "solver": {"dt": 5e-4}, "initial": {"kind": "zero"},
            "ladder": {"values": [0.2, 0.1, 0.05], "samples_per_eps": 1000, "seed_base": 0},
            "checks": {"samples": 10_000, "seed": 0}, "events": {}, "tasks": [], "overrides": {}}
CSV_COLUMNS = ("eps", "estimate", "stderr", "n", "seed_base", "flags")


@dataclass
class ExperimentManifest:
    raw: dict
    coeffs: object
    solver: SolverConfig
    T: float
    ladder: EpsilonLadder
    events: dict
    tasks: list
    reports: list = field(default_factory=list)
    source: str | None = None

    @property
    def system(self):
        return self.raw["system"]

    def canonical(self):
        return yaml.safe_dump(self.raw, sort_keys=True, default_flow_style=False)

    def digest(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def initial_state(self):
        return initial_state(self.coeffs, self.raw["initial"], self.source)


def tool_version():
    """Package version plus a hash of the package sources."""
    h = hashlib.sha256()
    for p in sorted(Path(__file__).parent.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return f"{__version__}+{h.hexdigest()[:12]}"


def _plain(x):
    """Turn YAML scalars into plain Python numbers where possible."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def parse_manifest(text, source=None):
    """Parse YAML text into a raw manifest dict with defaults filled in (no validation)."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ManifestError(f"cannot parse manifest: {exc}") from None
    if raw is None:
        raise ManifestError("manifest is empty")
    if not isinstance(raw, dict):
        raise ManifestError("manifest must be a mapping")
    raw = _plain(raw)
    unknown = set(raw) - TOP_KEYS
    if unknown:
        raise ValidationError(f"unknown manifest keys: {sorted(unknown)}")
    if raw.get("system") not in PRESETS:
        raise ValidationError(f"system must be one of {sorted(PRESETS)}, got {raw.get('system')!r}")
    out = copy.deepcopy(DEFAULTS)
    for k, v in raw.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("events", "overrides"):
            out[k] = dict(out[k], **v)
        else:
            out[k] = v
    return out


def build_manifest(raw, source=None, validate=True):
    try:
        coeffs = make_preset(raw["system"], **raw["overrides"])
        solver = SolverConfig(**raw["solver"])
        T = float(raw["T"])
        ladder = EpsilonLadder(tuple(raw["ladder"]["values"]), int(raw["ladder"].get("samples_per_eps", 1000)),
                               int(raw["ladder"].get("seed_base", 0)))
        events = {name: event_from_config(cfg) for name, cfg in raw["events"].items()
                  if "threshold_factor" not in cfg}
        events.update({name: cfg for name, cfg in raw["events"].items() if "threshold_factor" in cfg})
        tasks = [dict(t) for t in raw["tasks"]]
    except (LdpLabError, TypeError, ValueError, KeyError) as exc:
        raise ValidationError(f"invalid manifest: {exc}") from None
    ids = set()
    for i, task in enumerate(tasks):
        if task.get("op") not in OPS:
            raise ValidationError(f"task {i}: op must be one of {OPS}")
        task.setdefault("id", f"{task['op']}{i}")
        if task["id"] in ids:
            raise ValidationError(f"duplicate task id {task['id']!r}")
        ids.add(task["id"])
        for key in ("event",):
            if key in task and task[key] not in events:
                raise ValidationError(f"task {task['id']}: unknown event {task[key]!r}")
    m = ExperimentManifest(raw, coeffs, solver, T, ladder, events, tasks, source=source)
    if validate:
        if coeffs.params.cited and raw["system"] == "brusselator":
            verify_preset_fidelity()
        reports = preset_checks(coeffs, samples=int(raw["checks"].get("samples", 10_000)),
                                seed=int(raw["checks"].get("seed", 0)))
        m.reports = reports
        failed = [r for r in reports if not r.passed]
        if failed:
            names = ", ".join(r.name for r in failed)
            raise ValidationError(f"eager checks failed: {names}", failed)
        initial_state(coeffs, raw["initial"], source)
    return m


def load_manifest(path, validate=True):
    """Read, parse and (by default) eagerly validate a manifest file."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from None
    return build_manifest(parse_manifest(text, str(p)), str(p), validate)


def initial_state(coeffs, spec, source=None):
    kind = spec.get("kind", "zero")
    grid = coeffs.grid
    if kind == "zero":
        return SpectralField.zeros(grid)
    if kind == "random":
        rng = np.random.default_rng(int(spec.get("seed", 0)))
        return random_field(grid, rng, kmax=spec.get("kmax"), amplitude=float(spec.get("amplitude", 0.5)),
                            decay=float(spec.get("decay", 0.0)),
                            divergence_free=coeffs.name == "navier_stokes")
    if kind == "mode":
        field_ = SpectralField.single_mode(grid, tuple(spec["k"]), float(spec.get("amplitude", 1.0)),
                                           int(spec.get("component", 0)))
        if spec.get("mean") is not None:
            c = field_.coeffs.copy()
            c[int(spec.get("component", 0)), 0, 0] += float(spec["mean"])
            field_ = SpectralField(grid, c)
        return field_
    if kind == "file":
        path = Path(spec["path"])
        if source and not path.is_absolute():
            path = Path(source).parent / path
        f = read_field(path)[0]
        if f.grid != grid:
            raise ValidationError("initial field grid does not match the system")
        return f
    raise ValidationError(f"unknown initial kind {kind!r}")


# ---------------------------------------------------------------- persistence helpers


def _num(x):
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, dict):
        return {str(k): _num(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_num(v) for v in x]
    if isinstance(x, np.ndarray):
        return _num(x.tolist())
    return x


def dumps(obj):
    return json.dumps(_num(obj), sort_keys=True, indent=2) + "\n"


def write_csv(path, rows, extra=()):
    cols = list(CSV_COLUMNS) + [c for c in extra if c not in CSV_COLUMNS]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow(["" if r.get(c) is None else (repr(float(r[c])) if isinstance(r.get(c), (float, np.floating))
                                                else r[c]) for c in cols])
    Path(path).write_text(buf.getvalue())


# ---------------------------------------------------------------- tasks


class _Context:
    def __init__(self, manifest, out):
        self.m = manifest
        self.out = out
        self.coeffs = manifest.coeffs
        self.x = manifest.initial_state()
        self.results = {}

    def event(self, name):
        ev = self.m.events[name]
        if isinstance(ev, dict):
            # threshold relative to the uncontrolled skeleton
            cfg = dict(ev)
            factor = float(cfg.pop("threshold_factor"))
            base = event_from_config(dict(cfg, threshold=0.0))
            traj = solve_skeleton(self.coeffs, self.x, None, self.m.T, self.m.solver.with_(epsilon=0.0))
            ev = base.with_threshold(factor * float(base.statistic(traj.data, self.coeffs.grid)))
            self.m.events[name] = ev
        return ev

    def control(self, ref):
        if ref in (None, "zero"):
            return None
        if ref not in self.results or "control" not in self.results[ref]:
            raise DomainError(f"no control produced by task {ref!r}")
        return self.results[ref]["control"]


def _task_check(ctx, task):
    m = ctx.m
    samples = int(task.get("samples", m.raw["checks"].get("samples", 10_000)))
    seed = int(task.get("seed", m.raw["checks"].get("seed", 0)))
    reports = preset_checks(ctx.coeffs, samples=samples, seed=seed)
    if task.get("full_coercivity"):
        reports.append(check_full_coercivity(ctx.coeffs, samples=samples, seed=seed))
    if task.get("linear_coercivity"):
        reports.append(check_linear_coercivity(ctx.coeffs, samples=min(samples, 2000), seed=seed))
    files = []
    for r in reports:
        name = f"{task['id']}_{r.name}.json"
        (ctx.out / name).write_text(r.to_json() + "\n")
        files.append(name)
    ok = all(r.passed for r in reports)
    return {"files": files, "passed": ok, "quantity": "structural hypothesis checks"}, ok


def _task_simulate(ctx, task):
    mode = task.get("mode", "ito")
    eps = float(task.get("eps", 0.1 if mode != "skeleton" else 0.0))
    cfg = ctx.m.solver.with_(epsilon=eps)
    psi = ctx.control(task.get("control"))
    traj = simulate(mode, ctx.coeffs, ctx.x, cfg, ctx.m.T, seed=int(task.get("seed", 0)),
                    path=int(task.get("path", 0)), psi=psi, record_every=int(task.get("record_every", 1)))
    name = f"{task['id']}.bin"
    with open(ctx.out / name, "wb") as f:
        write_trajectory(f, traj)
    side = {"config_hash": ctx.coeffs.fingerprint(), "seed": int(task.get("seed", 0)), "mode": mode,
            "eps": eps, "flags": list(traj.flags), "steps": len(traj) - 1, "dt": traj.dt}
    (ctx.out / f"{task['id']}.json").write_text(dumps(side))
    return {"files": [name, f"{task['id']}.json"], "flags": list(traj.flags),
            "quantity": f"{mode} trajectory"}, True


def _task_skeleton(ctx, task):
    task = dict(task, mode="skeleton", eps=0.0)
    return _task_simulate(ctx, task)


def _rate_query(ctx, task, event=None, target=None):
    m = ctx.m
    return RateQuery(T=m.T, solver=m.solver.with_(epsilon=0.0), target=target, event=event,
                     tol=float(task.get("tol", 1e-3)), control_dt=task.get("control_dt"),
                     penalties=tuple(task.get("penalties", (1e1, 1e2, 1e3, 1e4, 1e5))),
                     max_iters=int(task.get("max_iters", 2000)), stage_iters=int(task.get("stage_iters", 300)),
                     grad_mode=task.get("grad_mode", "finite_difference"))


def _task_rate(ctx, task):
    if "event" in task:
        ev = ctx.event(task["event"])
        q = _rate_query(ctx, task, event=ev)
        res = rate_over_event(ctx.coeffs, ctx.x, ev, q)
    else:
        tgt = initial_state(ctx.coeffs, task["target"], ctx.m.source)
        q = _rate_query(ctx, task, target=tgt)
        res = evaluate_rate(ctx.coeffs, ctx.x, q)
    cname = f"{task['id']}_control.json"
    (ctx.out / cname).write_text(dumps(res.control.to_dict()))
    body = dict(res.to_dict(), control_file=cname)
    (ctx.out / f"{task['id']}.json").write_text(dumps(body))
    ctx.results[task["id"]] = {"control": res.control, "rate": res}
    return {"files": [f"{task['id']}.json", cname], "value": res.value, "converged": res.converged,
            "quantity": "rate function upper bound"}, True


def _task_mc(ctx, task):
    ev = ctx.event(task["event"])
    eps = float(task.get("eps", ctx.m.ladder.values[0]))
    n = int(task.get("n", ctx.m.ladder.samples_per_eps))
    seed = int(task.get("seed", ctx.m.ladder.seed_base))
    psi = ctx.control(task.get("importance"))
    est = mc_probability(ctx.coeffs, ctx.x, eps, ev, n, seed, psi, T=ctx.m.T, cfg=ctx.m.solver)
    row = {"eps": eps, "estimate": est.p_hat, "stderr": est.stderr, "n": n, "seed_base": seed,
           "flags": "importance" if psi is not None else "", "hits": est.n_hits, "blowups": est.n_blowup}
    write_csv(ctx.out / f"{task['id']}.csv", [row], ("hits", "blowups"))
    return {"files": [f"{task['id']}.csv"], "quantity": "event probability", "importance": task.get("importance")}, True


def _task_curve(ctx, task):
    ev = ctx.event(task["event"])
    ref = ctx.results.get(task["rate"], {}).get("rate")
    if ref is None:
        raise DomainError(f"curve needs a rate task, {task['rate']!r} produced none")
    psi = ctx.control(task.get("importance"))
    tab = ldp_decay_curve(ctx.coeffs, ctx.x, ev, ctx.m.ladder, ref, psi, T=ctx.m.T, cfg=ctx.m.solver)
    rows = [{"eps": r["eps"], "estimate": r["p_hat"], "stderr": r["stderr"], "n": r["n"], "seed_base": r["seed"],
             "flags": "degenerate" if r["degenerate"] else "", "eps_log_p": r["eps_log_p"],
             "minus_rate": r["minus_rate"], "hits": r["hits"]} for r in tab.rows]
    write_csv(ctx.out / f"{task['id']}.csv", rows, ("eps_log_p", "minus_rate", "hits"))
    return {"files": [f"{task['id']}.csv"], "intercept": tab.intercept, "slope": tab.slope,
            "relative_error": tab.relative_error(), "rate_task": task["rate"],
            "quantity": "eps log p versus -I"}, True


def _task_converge(ctx, task):
    psi = ctx.control(task.get("control"))
    rows = convergence_study(ctx.coeffs, ctx.x, psi, ctx.m.ladder, T=ctx.m.T, cfg=ctx.m.solver,
                             include_zero=bool(task.get("include_zero", True)))
    out = [{"eps": r["eps"], "estimate": r["median"], "stderr": None, "n": r["n"], "seed_base": r["seed"],
            "flags": f"blowups={r['blowups']}" if r["blowups"] else "", "p90": r["p90"]} for r in rows]
    write_csv(ctx.out / f"{task['id']}.csv", out, ("p90",))
    return {"files": [f"{task['id']}.csv"], "control_task": task.get("control"),
            "quantity": "median MR distance to the skeleton"}, True


def _task_tightness(ctx, task):
    psis = [ctx.control(ref) for ref in task.get("controls", ["zero"])]
    gammas = task.get("gammas")
    if gammas is None:
        det = tightness_probe(ctx.coeffs, ctx.x, psis[:1], EpsilonLadder((1.0,), 1), [0.0], T=ctx.m.T,
                              cfg=ctx.m.solver)["rows"][0]["mr_det"]
        gammas = [f * det for f in task.get("gamma_factors", [1.0, 2.0, 4.0])]
    res = tightness_probe(ctx.coeffs, ctx.x, psis, ctx.m.ladder, gammas, T=ctx.m.T, cfg=ctx.m.solver,
                          level=float(task.get("level", 1e-2)))
    rows = []
    for r in res["rows"]:
        for g, tail in zip(res["gammas"], r["tails"]):
            se = math.sqrt(tail * (1 - tail) / r["n"])
            rows.append({"eps": r["eps"], "estimate": tail, "stderr": se, "n": r["n"],
                         "seed_base": ctx.m.ladder.seed_base, "flags": "", "gamma": g, "control": r["control"]})
    write_csv(ctx.out / f"{task['id']}.csv", rows, ("gamma", "control"))
    return {"files": [f"{task['id']}.csv"], "sup_tail": res["sup_tail"], "passed": res["passed"],
            "quantity": "MR-norm tail probabilities"}, res["passed"]


def _task_energy(ctx, task):
    psi = ctx.control(task.get("control"))
    traj = solve_skeleton(ctx.coeffs, ctx.x, psi, ctx.m.T, ctx.m.solver.with_(epsilon=0.0))
    audit = energy_bound_audit(ctx.coeffs, traj, psi)
    body = {"holds": audit.holds, "mr_norm": audit.mr_norm, "log_bound": audit.log_bound,
            "psi_l2": audit.psi_l2}
    (ctx.out / f"{task['id']}.json").write_text(dumps(body))
    return {"files": [f"{task['id']}.json"], "holds": audit.holds,
            "quantity": "skeleton energy bound"}, audit.holds


TASKS = {"check": _task_check, "simulate": _task_simulate, "skeleton": _task_skeleton, "rate": _task_rate,
         "mc": _task_mc, "curve": _task_curve, "converge": _task_converge, "tightness": _task_tightness,
         "energy_audit": _task_energy}


def run(manifest, out_dir, log_path=None):
    """Execute every task of a validated manifest into ``out_dir``.

    Returns the summary dict (also written to ``summary.json``). A failing task is
    recorded with its error message and the remaining tasks still run.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log_path = Path(log_path) if log_path else out.with_name(out.name + ".log")
    log = []
    (out / "manifest.yaml").write_text(manifest.canonical())
    for r in manifest.reports:
        (out / f"eager_{r.name}.json").write_text(r.to_json() + "\n")
    ctx = _Context(manifest, out)
    entries = []
    all_ok = True
    for task in manifest.tasks:
        t0 = time.time()
        try:
            info, ok = TASKS[task["op"]](ctx, task)
            status = "ok" if ok else "failed"
        except LdpLabError as exc:
            info, ok, status = {"error": f"{type(exc).__name__}: {exc}"}, False, "error"
        all_ok = all_ok and ok
        entries.append(dict(info, id=task["id"], op=task["op"], status=status))
        log.append(f"{time.strftime('%Y-%m-%dT%H:%M:%S')} {task['id']} {status} {time.time() - t0:.3f}s")
    summary = {"system": manifest.system, "oracle_only": manifest.system in ORACLE_ONLY,
               "manifest_digest": manifest.digest(), "tool_version": tool_version(),
               "coeffs": manifest.coeffs.fingerprint(), "tasks": entries, "passed": all_ok,
               "eager_checks": [r.name for r in manifest.reports]}
    (out / "summary.json").write_text(dumps(summary))
    log_path.write_text("\n".join(log) + "\n")
    return summary
