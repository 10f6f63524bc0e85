"""Command-line front end.

Every command reads an optional JSON config (``--config``); flags override
config keys.  Exit codes: 0 success, 1 model or numerical failure, 2 usage.
"""

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .compact import build_compact, dump_lp
from .drset import RobustSet, build_xirob, recompute_union_bound, support_set
from .errors import DispatchError
from .network import Contingency, compute_all_ptdfs, enumerate_contingencies, load_bundled, load_case
from .robust import (DispatchSolution, check_solution, duality_audit, solve_drpoly, solve_scenario,
                     solve_worstcase)
from .uncertainty import (GeneratorConfig, PartitionSpec, default_generator, generate_samples,
                          read_samples_csv, write_samples_csv)
from .validation import DEFAULT_THETAS, pareto_sweep, summary_csv, sweep_csv, violation_frequency

log = logging.getLogger("drdispatch")

METHODS = ("drpoly", "drbox", "scenario", "worstcase")
DEFAULTS = {
    "case": "rts24",
    "epsilon": 0.05,
    "theta": 0.001,
    "thetas": list(DEFAULT_THETAS),
    "method": "drpoly",
    "repeats": 5,
    "n_train": 50,
    "n_validation": 10_000,
    "formulation": "auto",
}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# config handling
# ---------------------------------------------------------------------------

def load_config(args):
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config) as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(user, dict):
            raise UsageError("config must be a JSON object")
        cfg.update(user)
    if getattr(args, "theta", None) is not None:
        thetas = _float_list(args.theta, "--theta")
        cfg["thetas"] = thetas
        cfg["theta"] = thetas[0]
    for key in ("epsilon", "method", "seed", "jobs", "repeats", "n"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if getattr(args, "kappa", None) is not None:
        cfg["kappa"] = [int(v) for v in _float_list(args.kappa, "--kappa")]
    if cfg["method"] not in METHODS:
        raise UsageError(f"unknown method {cfg['method']!r}; choose from {', '.join(METHODS)}")
    eps = cfg["epsilon"]
    if not isinstance(eps, (int, float)) or not 0 < eps < 1:
        raise UsageError(f"epsilon must lie in (0, 1), got {eps!r}")
    return cfg


def _float_list(text, flag):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"{flag}: {exc}") from exc


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def meta(cfg, command):
    return {"tool": "drdispatch", "version": __version__, "command": command, "config_hash": config_hash(cfg)}


class Context:
    """Case, partition and the compact problem derived from a config."""

    def __init__(self, cfg):
        self.cfg = cfg
        name = cfg["case"]
        self.case = load_bundled(name) if not str(name).endswith(".json") else load_case(name)
        ids = [w.id for w in self.case.wind_units]
        groups = cfg.get("groups")
        if groups is None:
            n = len(ids)
            groups = [list(range(n // 2)), list(range(n // 2, n))] if n >= 2 else [list(range(n))]
        else:
            try:
                groups = [[ids.index(w) if isinstance(w, str) else int(w) for w in g] for g in groups]
            except ValueError as exc:
                raise UsageError(f"groups reference an unknown wind unit: {exc}") from exc
        self.groups = [g for g in groups if g]
        self.partition = PartitionSpec.from_case(self.case, self.groups)
        self.kappa = list(cfg.get("kappa", [min(2, len(g) - 1) for g in self.groups]))
        if len(self.kappa) != len(self.groups):
            raise UsageError(f"{len(self.kappa)} kappa values for {len(self.groups)} groups")
        self._problem = None

    @property
    def problem(self):
        if self._problem is None:
            labels = self.cfg.get("contingencies")
            if labels is not None:
                try:
                    conts = [Contingency.parse(lab) for lab in labels]
                except ValueError as exc:
                    raise UsageError(str(exc)) from exc
            else:
                conts = enumerate_contingencies(self.case, self.cfg.get("excluded_lines"))
            self._problem = build_compact(self.case, conts, compute_all_ptdfs(self.case, conts),
                                          self.cfg["epsilon"])
        return self._problem

    def generator(self):
        base = default_generator(self.case, tuple(tuple(g) for g in self.groups))
        if "generator" in self.cfg:
            d = base.to_dict()
            d.update(self.cfg["generator"])
            return GeneratorConfig.from_dict(d, base.columns)
        return base

    def samples(self, key="samples", default_n=None, path=None):
        src = dict(self.cfg.get(key) or {})
        path = path or src.get("file")
        if path:
            return read_samples_csv(path, self.case)
        seed = src.get("seed", self.cfg.get("seed"))
        if seed is None:
            raise UsageError(f"no {key} file given and no seed to generate them (--seed)")
        n = int(src.get("n", default_n if default_n is not None else self.cfg["n_train"]))
        return generate_samples(self.generator(), n, int(seed))


def _emit(text, out):
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")


def _sidecar(out, info):
    if out:
        Path(str(out) + ".meta.json").write_text(json.dumps(info, indent=1) + "\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_samples(args):
    if args.seed is None:
        raise UsageError("gen-samples requires --seed")
    cfg = load_config(args)
    ctx = Context(cfg)
    n = int(cfg.get("n", (cfg.get("samples") or {}).get("n", cfg["n_train"])))
    if n < 0:
        raise UsageError("--n must be non-negative")
    samples = generate_samples(ctx.generator(), n, int(args.seed))
    if args.out:
        write_samples_csv(args.out, samples)
        _sidecar(args.out, {**meta(cfg, "gen-samples"), "n": n, "seed": int(args.seed)})
    else:
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(samples.columns)
        writer.writerows([repr(float(v)) for v in row] for row in samples.samples)
    return 0


def _build_set(ctx, cfg, samples, method):
    kappas = ctx.kappa if method == "drpoly" else [0] * len(ctx.groups)
    return build_xirob(samples, ctx.partition, kappas, float(cfg["theta"]), float(cfg["epsilon"]))


def cmd_build_set(args):
    cfg = load_config(args)
    ctx = Context(cfg)
    samples = ctx.samples(path=args.samples)
    method = cfg["method"] if cfg["method"] in ("drpoly", "drbox") else "drpoly"
    rset = _build_set(ctx, cfg, samples, method)
    check = recompute_union_bound(samples, ctx.partition, rset)
    out = rset.to_dict()
    out["union_bound_recomputed"] = check
    out["meta"] = meta(cfg, "build-set")
    _emit(json.dumps(out, indent=1), args.out)
    return 0


def cmd_solve(args):
    cfg = load_config(args)
    ctx = Context(cfg)
    problem = ctx.problem
    if args.dump_lp:
        Path(args.dump_lp).write_text(dump_lp(problem))
    method = cfg["method"]
    rset = None
    if method == "scenario":
        sol = solve_scenario(problem, ctx.samples(path=args.samples))
    elif method == "worstcase":
        sol = solve_worstcase(problem, ctx.partition)
        rset = support_set(ctx.partition)
    else:
        if args.set:
            rset = RobustSet.from_dict(json.loads(Path(args.set).read_text()))
        else:
            rset = _build_set(ctx, cfg, ctx.samples(path=args.samples), method)
        sol = solve_drpoly(problem, rset, method=method, formulation=cfg["formulation"])
    broken = check_solution(problem, sol)
    out = sol.to_dict(problem, ctx.case)
    out["invariant_failures"] = broken
    status = 0
    if rset is not None:
        worst, rows = duality_audit(problem, sol, rset, seed=int(cfg.get("seed") or 0))
        out["duality_audit"] = {"rows_checked": int(len(rows)), "worst_excess": worst, "passed": worst <= 1e-6}
        if worst > 1e-6:
            status = 1
    if broken:
        status = 1
    out["meta"] = meta(cfg, "solve")
    _emit(json.dumps(out, indent=1), args.out)
    return status


def cmd_validate(args):
    cfg = load_config(args)
    ctx = Context(cfg)
    if not args.solution:
        raise UsageError("validate requires --solution")
    try:
        sol_dict = json.loads(Path(args.solution).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read solution {args.solution}: {exc}") from exc
    problem = ctx.problem
    sol = DispatchSolution.from_dict(sol_dict, problem)
    val = ctx.samples("validation", default_n=cfg.get("n", cfg["n_validation"]), path=args.samples)
    if val.n == 0:
        raise UsageError("validation set is empty")
    rep = violation_frequency(problem, sol, val)
    out = rep.to_dict()
    out.update(method=sol.method, cost=sol.cost, meta=meta(cfg, "validate"))
    _emit(json.dumps(out, indent=1), args.out)
    return 0


def cmd_pareto(args):
    cfg = load_config(args)
    if cfg.get("seed") is None:
        raise UsageError("pareto requires --seed (or a seed in the config)")
    ctx = Context(cfg)
    result = pareto_sweep(
        ctx.problem, ctx.generator(), theta_list=cfg["thetas"], kappas=ctx.kappa, epsilon=cfg["epsilon"],
        repeats=int(cfg["repeats"]), seed=int(cfg["seed"]), n_train=int(cfg["n_train"]),
        n_validation=int(cfg["n_validation"]), partition=ctx.partition, jobs=int(cfg.get("jobs") or 1),
        formulation=cfg["formulation"])
    outdir = Path(args.out or cfg.get("out") or ".")
    outdir.mkdir(parents=True, exist_ok=True)
    info = meta(cfg, "pareto")
    (outdir / "pareto.csv").write_text(sweep_csv(result))
    (outdir / "summary.csv").write_text(summary_csv(result))
    (outdir / "meta.json").write_text(json.dumps({**info, "config": cfg}, indent=1, default=str) + "\n")
    failed = sum(c.status != "ok" for c in result.cells)
    log.info("wrote %s (%d cells, %d failed)", outdir, len(result.cells), failed)
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--theta", help="Wasserstein radius (comma list for pareto)")
    common.add_argument("--epsilon", type=float, help="joint violation level")
    common.add_argument("--method", choices=METHODS)
    common.add_argument("--kappa", help="eigen-slabs per group, e.g. 2,2")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int)
    common.add_argument("--out", help="output file (directory for pareto)")
    common.add_argument("--dump-lp", dest="dump_lp", help="write the compact LP listing here")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="drdispatch", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"drdispatch {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("gen-samples", parents=[common], help="draw samples from the generator")
    g.add_argument("--n", type=int, help="number of samples")
    b = sub.add_parser("build-set", parents=[common], help="construct the robust set")
    b.add_argument("--samples", help="training samples CSV")
    s = sub.add_parser("solve", parents=[common], help="solve the dispatch problem")
    s.add_argument("--samples", help="training samples CSV")
    s.add_argument("--set", help="robust set JSON from build-set")
    v = sub.add_parser("validate", parents=[common], help="Monte Carlo violation frequency")
    v.add_argument("--solution", help="solution JSON from solve")
    v.add_argument("--samples", help="validation samples CSV")
    v.add_argument("--n", type=int, help="validation samples to generate")
    pa = sub.add_parser("pareto", parents=[common], help="radius sweep")
    pa.add_argument("--repeats", type=int)
    return p


COMMANDS = {"gen-samples": cmd_gen_samples, "build-set": cmd_build_set, "solve": cmd_solve,
            "validate": cmd_validate, "pareto": cmd_pareto}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"drdispatch: error: {exc}", file=sys.stderr)
        return 2
    except DispatchError as exc:
        print(f"drdispatch: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
