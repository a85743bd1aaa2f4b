"""Command-line front end: gen, fit, eval, repro and selfcheck."""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import stats

from .bandit import Backends, learn
from .datamodel import (
    BANDIT_KINDS,
    EstimatorConfig,
    PolicyKind,
    parse_config,
    read_bandit_csv,
    read_sequential_csv,
    write_bandit_csv,
    write_sequential_csv,
)
from .envs import ContinuousBanditSpec, DiscreteBanditSpec, SequentialSpec, ToySpec, toy_values
from .evaluation import (
    ExperimentConfig,
    ExperimentReport,
    ReportRow,
    _jsonable,
    config_hash,
    render,
    run_replications,
    split_evaluate,
)
from .moments import GroupMean, KernelRidge, Linear, dump_model
from .sequential import learn_seq

TABLES = ("table1", "table2", "table3", "table4")
SPECS = ("toy", "discrete", "continuous", "sequential")
KINDS = tuple(k.value for k in PolicyKind)

SEQUENTIAL_BANNER = (
    "NOTE: the sequential environment is defined by this package (memoryless confounded POMDP,\n"
    "T = 2); only the direction of the comparison is meaningful, not the magnitudes."
)


class UsageError(Exception):
    pass


def default_seed() -> int:
    raw = os.environ.get("SUPERPOL_SEED")
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"SUPERPOL_SEED must be an integer, got {raw!r}") from None


# ---------------------------------------------------------------------------
# Files


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_via(writer, dataset, path) -> None:
    """Run a path-based writer into a temp file and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        writer(dataset, tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def shipped_config(name: str) -> str:
    return resources.files("superpol").joinpath("configs", f"{name}.cfg").read_text(encoding="utf-8")


def _read_config(args, fallback: str | None = None):
    if args.config:
        text = Path(args.config).read_text(encoding="utf-8")
    elif fallback:
        text = shipped_config(fallback)
    else:
        text = ""
    est, exp = parse_config(text)
    return est, exp, text


# ---------------------------------------------------------------------------
# Builders


def make_spec(name: str, eps: float, experiment: dict | None = None):
    experiment = experiment or {}
    if name == "toy":
        return ToySpec(eps)
    if name == "discrete":
        return DiscreteBanditSpec(eps)
    if name == "continuous":
        return ContinuousBanditSpec(eps)
    if name == "sequential":
        return SequentialSpec(delta=eps, horizon=int(experiment.get("horizon", 2)))
    raise UsageError(f"unknown spec {name!r}; choose from {', '.join(SPECS)}")


def make_backends(experiment: dict) -> Backends:
    bridge = experiment.get("bridge", "kernel")
    name = experiment.get("projection", "linear")
    projections = {"linear": Linear(), "kernel": KernelRidge(), "groupmean": GroupMean()}
    if name not in projections:
        raise UsageError(f"unknown projection {name!r}")
    if bridge not in ("kernel", "tabular"):
        raise UsageError(f"unknown bridge backend {bridge!r}")
    return Backends(bridge, projections[name])


def _kinds(text: str | None, default) -> tuple:
    if not text:
        return tuple(default)
    return tuple(PolicyKind(k) for k in text.replace(",", " ").split())


def _epsilons(args, experiment) -> list:
    if args.eps is not None:
        return [args.eps]
    return [float(v) for v in experiment.get("epsilons", "0.5").split()]


def _setting(spec_name: str, eps: float) -> str:
    return f"delta={eps:g}" if spec_name == "sequential" else f"eps={eps:g}"


def _pick(cli_value, experiment, key, cast, default):
    if cli_value is not None:
        return cli_value
    if key in experiment:
        return cast(experiment[key])
    return default


def _experiment_configs(args, est: EstimatorConfig, experiment: dict) -> list[ExperimentConfig]:
    spec_name = args.spec or experiment.get("spec")
    if spec_name is None:
        raise UsageError("no environment given (use --spec or a config with spec = ...)")
    default_kinds = ("common", "superseq") if spec_name == "sequential" else BANDIT_KINDS
    kinds = _kinds(args.kind or experiment.get("kinds"), default_kinds)
    oracle = _pick(args.oracle, experiment, "oracle", str, "exact" if spec_name in ("toy", "discrete") else "mc")
    n = _pick(args.n, experiment, "n", int, 1000)
    reps = _pick(args.reps, experiment, "reps", int, 50)
    seed = _pick(args.seed, experiment, "seed", int, default_seed())
    episodes = int(experiment.get("episodes", 100_000))
    backends = make_backends(experiment)
    out = []
    for eps in _epsilons(args, experiment):
        spec = make_spec(spec_name, eps, experiment)
        out.append(ExperimentConfig(spec, n, reps, seed, kinds, est, backends, oracle, episodes, setting=_setting(spec_name, eps)))
    return out


def _run_all(configs, jobs: int) -> ExperimentReport:
    report = None
    for cfg in configs:
        part = run_replications(cfg, jobs)
        report = part if report is None else report.merged(part)
    return report


def _write_report(out: Path, name: str, report: ExperimentReport, extra_md: str = "", digits: int = 3, provenance=None) -> None:
    atomic_write(out / f"{name}.csv", render(report, "csv"))
    atomic_write(out / f"{name}.md", extra_md + render(report, "markdown", digits))
    prov = dict(report.provenance) if provenance is None else provenance
    atomic_write(out / f"{name}.provenance.json", json.dumps(_jsonable(prov), sort_keys=True, indent=2, default=repr) + "\n")


# ---------------------------------------------------------------------------
# Subcommands


def cmd_gen(args) -> int:
    _, experiment, _ = _read_config(args)
    spec_name = args.spec or experiment.get("spec", "discrete")
    eps = args.eps if args.eps is not None else float(experiment.get("eps", 0.5))
    n = args.n if args.n is not None else int(experiment.get("n", 1000))
    seed = args.seed if args.seed is not None else default_seed()
    spec = make_spec(spec_name, eps, experiment)
    if isinstance(spec, ToySpec):
        spec = spec.finite()
    data = spec.sample(n, seed)
    out = Path(args.out)
    stem = f"{spec_name}_n{n}_seed{seed}"
    writer = write_sequential_csv if spec_name == "sequential" else write_bandit_csv
    _write_via(writer, data, out / f"{stem}.csv")
    sidecar = {"command": "gen", "spec_name": spec_name, "eps": eps, "n": n, "seed": seed, "spec": _jsonable(spec)}
    atomic_write(out / f"{stem}.spec.json", json.dumps(sidecar, sort_keys=True, indent=2, default=repr) + "\n")
    print(out / f"{stem}.csv")
    return 0


def _read_dataset(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
    if header.startswith("o0_"):
        return read_sequential_csv(path)
    return read_bandit_csv(path)


def _preview_bandit(fit, data, rows: int) -> str:
    m = min(rows, data.n)
    acts = fit.policy.act(data.s[:m], data.z[:m], data.a[:m])
    lines = ["row,s,z,a_rec,action"]
    for i in range(m):
        lines.append(f"{i},{' '.join(map(repr, data.s[i].tolist()))},{' '.join(map(repr, data.z[i].tolist()))},{data.a[i]},{acts[i]}")
    return "\n".join(lines) + "\n"


def _preview_seq(fit, data, rows: int) -> str:
    m = min(rows, data.n)
    lines = ["row,step,own,behavior,action"]
    own = np.zeros((m, 0), dtype=np.int64)
    for t in range(1, data.horizon + 1):
        behavior = data.actions(t)[:m]
        act = fit.policy.act(t, data.obs(t)[:m], own, behavior)
        for i in range(m):
            lines.append(f"{i},{t},{' '.join(map(str, own[i]))},{' '.join(map(str, behavior[i]))},{act[i]}")
        own = np.column_stack([own, act])
    return "\n".join(lines) + "\n"


def cmd_fit(args) -> int:
    if not args.data:
        raise UsageError("fit needs --data")
    est, experiment, text = _read_config(args)
    if args.seed is not None:
        est = EstimatorConfig(est.lam, est.mu, est.U, est.delta, est.mu_proj, est.cv, args.seed, est.median_cap)
    backends = make_backends(experiment)
    data = _read_dataset(args.data)
    out = Path(args.out)
    sequential = hasattr(data, "horizon")
    kind = PolicyKind(args.kind or ("superseq" if sequential else "super"))
    if kind.sequential != sequential:
        raise UsageError(f"--kind {kind.value} does not match the dataset type")
    parts = []
    if sequential:
        fit = learn_seq(data, kind, est, backends)
        for stage in fit.stages:
            for key, bridge in sorted(stage.bridges.items()):
                parts.append(f"# step {stage.t} behavior-tuple {key} unscale {stage.unscale!r}\n" + dump_model(bridge))
        for rule in fit.policy.stages:
            for key, models in sorted(rule.models.items()):
                for a, model in enumerate(models):
                    parts.append(f"# step {rule.t} key {key} action {a}\n" + dump_model(model))
        preview = _preview_seq(fit, data, 10)
    else:
        fit = learn(data, kind, est, backends)
        parts.append("# bridge\n" + dump_model(fit.bridge))
        for a, model in enumerate(fit.projections):
            parts.append(f"# projection action {a}\n" + dump_model(model))
        preview = _preview_bandit(fit, data, 10)
    atomic_write(out / f"model_{kind.value}.txt", "".join(parts))
    atomic_write(out / f"actions_{kind.value}.csv", preview)
    sidecar = {"command": "fit", "data": str(args.data), "kind": kind.value, "config": text,
               "estimator": _jsonable(fit.cfg) if fit.cfg is not None else None}
    atomic_write(out / f"model_{kind.value}.provenance.json", json.dumps(sidecar, sort_keys=True, indent=2, default=repr) + "\n")
    sys.stdout.write(preview)
    return 0


def cmd_eval(args) -> int:
    est, experiment, text = _read_config(args)
    out = Path(args.out)
    jobs = args.jobs
    if args.data:
        data = _read_dataset(args.data)
        if hasattr(data, "horizon"):
            raise UsageError("split evaluation takes bandit data")
        seed = args.seed if args.seed is not None else default_seed()
        kinds = _kinds(args.kind, BANDIT_KINDS) + ("behavior",)
        splits = args.reps if args.reps is not None else 20
        report = split_evaluate(data, float(experiment.get("train_fraction", 0.6)), kinds, splits, seed,
                                EstimatorConfig(est.lam, est.mu, est.U, est.delta, est.mu_proj, est.cv, seed, est.median_cap),
                                make_backends(experiment), Path(args.data).name)
        report.provenance.update({"command": "eval", "data": str(args.data), "config": text})
        _write_report(out, "eval", report)
    else:
        report = _run_all(_experiment_configs(args, est, experiment), jobs)
        report.provenance.update({"command": "eval", "config": text})
        _write_report(out, "eval", report)
    sys.stdout.write(render(report, "markdown"))
    return 0


def _table1(args, out: Path) -> int:
    _, experiment, text = _read_config(args, "table1")
    rows = []
    for eps in _epsilons(args, experiment):
        values = toy_values(eps)
        for name, v in zip(("behavior", "standard", "super"), values):
            rows.append(ReportRow(name, f"eps={eps:g}", float(v), 0.0, 1))
    prov = {"command": "repro table1", "config": text, "method": "exact enumeration"}
    prov["config_hash"] = config_hash(prov)
    report = ExperimentReport(tuple(rows), "value", {}, prov)
    _write_report(out, "table1", report, digits=12)
    sys.stdout.write(render(report, "markdown", 12))
    return 0


def paired_test(report: ExperimentReport, setting: str):
    """One-sided paired t-test that SuperSeq regret is below Common regret."""
    sup = np.asarray(report.samples[("superseq", setting)])
    com = np.asarray(report.samples[("common", setting)])
    if len(sup) < 2:
        return float("nan"), float("nan")
    res = stats.ttest_rel(sup, com, alternative="less")
    return float(res.statistic), float(res.pvalue)


def cmd_repro(args) -> int:
    table = args.table
    out = Path(args.out)
    if table == "table1":
        return _table1(args, out)
    est, experiment, text = _read_config(args, table)
    report = _run_all(_experiment_configs(args, est, experiment), args.jobs)
    report.provenance.update({"command": f"repro {table}", "config": text})
    extra = ""
    if table == "table4":
        lines = [SEQUENTIAL_BANNER, ""]
        for setting in dict.fromkeys(r.setting for r in report.rows):
            tstat, p = paired_test(report, setting)
            sup, com = report.row("superseq", setting).mean, report.row("common", setting).mean
            verdict = "superseq < common" if sup < com else "superseq >= common"
            lines.append(f"{setting}: mean regret {verdict}; paired one-sided t = {tstat:.4f}, p = {p:.3e}")
        extra = "\n".join(lines) + "\n\n"
        print(extra, end="")
    _write_report(out, table, report, extra)
    sys.stdout.write(render(report, "markdown"))
    return 0


def cmd_selfcheck(args) -> int:
    from .selfcheck import run_checks

    t0 = time.perf_counter()
    failures = 0
    for name, ok, detail in run_checks(seed=args.seed if args.seed is not None else default_seed()):
        print(f"{'PASS' if ok else 'FAIL'} {name}{': ' + detail if detail else ''}")
        failures += not ok
    print(f"{failures} failure(s) in {time.perf_counter() - t0:.1f} s")
    return 1 if failures else 0


# ---------------------------------------------------------------------------
# Parser


def _common(p, *, n=False, eps=False, reps=False, kind=False, oracle=False, spec=False, data=False):
    fmt = dict(default=None)
    p.add_argument("--seed", type=int, help="base seed (falls back to $SUPERPOL_SEED, then 0)", **fmt)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--config", default=None, help="INI config file with [estimator] / [experiment] sections")
    p.add_argument("--jobs", type=int, default=1, help="parallel replications")
    if spec:
        p.add_argument("--spec", choices=SPECS, help="environment", **fmt)
    if data:
        p.add_argument("--data", help="dataset CSV", **fmt)
    if n:
        p.add_argument("--n", type=int, help="sample size", **fmt)
    if eps:
        p.add_argument("--eps", type=float, help="confounding strength (delta for the sequential environment)", **fmt)
    if reps:
        p.add_argument("--reps", type=int, help="replications (splits for data evaluation)", **fmt)
    if kind:
        p.add_argument("--kind", choices=KINDS, help="policy class", **fmt)
    if oracle:
        p.add_argument("--oracle", choices=("exact", "mc"), help="value oracle", **fmt)


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="superpol", description="Super-policy learning under unmeasured confounding.", formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True, metavar="{gen,fit,eval,repro,selfcheck}")
    p = sub.add_parser("gen", help="sample a dataset", formatter_class=fmt)
    _common(p, n=True, eps=True, spec=True)
    p.set_defaults(func=cmd_gen)
    p = sub.add_parser("fit", help="fit a policy to a dataset", formatter_class=fmt)
    _common(p, kind=True, data=True)
    p.set_defaults(func=cmd_fit)
    p = sub.add_parser("eval", help="random-split evaluation of data, or regret on an environment", formatter_class=fmt)
    _common(p, n=True, eps=True, reps=True, kind=True, oracle=True, spec=True, data=True)
    p.set_defaults(func=cmd_eval)
    p = sub.add_parser("repro", help="reproduce a results table from its shipped config", formatter_class=fmt)
    p.add_argument("table", choices=TABLES, help="table to reproduce")
    _common(p, reps=True)
    p.set_defaults(func=cmd_repro, spec=None, n=None, eps=None, kind=None, oracle=None)
    p = sub.add_parser("selfcheck", help="fast invariant checks", formatter_class=fmt)
    p.add_argument("--seed", type=int, default=None, help="base seed (falls back to $SUPERPOL_SEED, then 0)")
    p.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be >= 1")
        return args.func(args)
    except UsageError as exc:
        print(f"superpol: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"superpol: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
