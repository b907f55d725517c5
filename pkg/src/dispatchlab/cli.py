"""Command-line entry point: one binary, eight subcommands, reproducible outputs.

Every run writes its data files plus a ``manifest.json`` into ``--out``:
the resolved configuration, the seed actually used, digests of all inputs
and outputs, and an argv that replays the run exactly.  Numeric CSV cells
use 17 significant digits so byte-level diffs are meaningful across
platforms.  Configuration precedence is flags, then ``--config`` file
(flat ``key=value`` lines, ``#`` comments), then built-in defaults.

``--threads`` (default from ``DISPATCHLAB_THREADS``, else 1) is accepted
and recorded for scheduling budgets; all computations run serially and
deterministically regardless of its value.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime as dt
import hashlib
import json
import os
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__, ingest
from .chain import (
    MIXING_SIZE_LIMIT,
    build_transition_from_policy,
    build_transition_nadap,
    build_transition_rand,
    check_aperiodic,
    check_irreducible,
    limiting_objective,
    mixing_analysis,
    stationary_distribution,
    uniform_decay_envelope,
)
from .coupling import verify_contraction
from .errors import DispatchLabError
from .grid import RequestModel, build_grid, distance_weights, uniform_request_model
from .mdp import MdpInstance, bellman_residual, simulate_optimal_episode, value_iteration
from .policies import PolicySpec, parse_policy
from .rng import stream
from .simulate import (
    SimConfig,
    error_curves,
    fit_exponential,
    fit_inverse,
    initial_state_preset,
    run_ensemble,
)
from .states import StateSpace, format_state, parse_state

THREADS_ENV = "DISPATCHLAB_THREADS"
DEFAULT_EPSILONS = "0.25,0.01"


def g17(x) -> str:
    """Fixed 17-significant-digit rendering used by every CSV cell."""
    return f"{float(x):.17g}"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _json_safe(value):
    if isinstance(value, dict):
        return {str(k): _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    if isinstance(value, Fraction):
        return str(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return [_json_safe(v) for v in value.tolist()]
    if isinstance(value, (dt.date, dt.datetime)):
        return value.isoformat()
    if isinstance(value, Path):
        return str(value)
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return _json_safe(dataclasses.asdict(value))
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return str(value)


def write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(_json_safe(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_report(outdir: Path, name: str, payload: dict, fmt: str) -> str:
    """Emit a report as JSON or as a flattened key,value CSV."""
    if fmt == "json":
        filename = f"{name}.json"
        write_json(outdir / filename, payload)
        return filename

    def flatten(prefix, value, rows):
        if isinstance(value, dict):
            for k in sorted(value):
                flatten(f"{prefix}.{k}" if prefix else str(k), value[k], rows)
        elif isinstance(value, (list, tuple)):
            rows.append((prefix, json.dumps(_json_safe(value))))
        else:
            rows.append((prefix, _json_safe(value)))

    rows: list = []
    flatten("", payload, rows)
    filename = f"{name}.csv"
    write_csv(outdir / filename, ["key", "value"], rows)
    return filename


# ---------------------------------------------------------------------------
# Flag parsing helpers


def parse_grid_spec(text: str) -> tuple[int, int]:
    try:
        rows, cols = text.lower().split("x")
        return int(rows), int(cols)
    except ValueError:
        raise ValueError(f"grid must look like 2x2 or 21x11, got {text!r}") from None


def parse_epsilons(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok.strip()]


def parse_bbox_spec(text: str) -> ingest.Bbox:
    parts = [float(tok) for tok in text.split(",")]
    if len(parts) != 4:
        raise ValueError("bbox needs latmin,latmax,lonmin,lonmax")
    return ingest.Bbox(*parts)


def dates_match(spec: str, date: dt.date) -> bool:
    """Date filter: 'all', a comma list, or an inclusive 'first:last' range."""
    if spec == "all":
        return True
    if ":" in spec:
        first, last = (dt.date.fromisoformat(tok) for tok in spec.split(":", 1))
        if last < first:
            raise ValueError(f"empty date range {spec!r}")
        return first <= date <= last
    return date in {dt.date.fromisoformat(tok) for tok in spec.split(",") if tok.strip()}


def resolve_weights(spec: str, grid):
    """Weight flag: const:X, distance, or file:PATH of origin,dest,w rows."""
    if spec == "distance":
        return distance_weights(grid)
    if spec.startswith("const:"):
        return float(spec[len("const:") :])
    if spec.startswith("file:"):
        path = spec[len("file:") :]
        w = np.zeros((grid.n, grid.n))
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            needed = {"origin", "dest", "w"}
            if not needed.issubset(reader.fieldnames or []):
                raise ValueError(f"weight file needs columns {sorted(needed)}")
            for row in reader:
                w[int(row["origin"]), int(row["dest"])] = float(row["w"])
        return w
    raise ValueError(f"unknown weights spec {spec!r}; use const:X, distance, or file:PATH")


def resolve_arrivals(spec: str, grid, weights_spec: str):
    """Arrival flag: uniform:p, model:FILE, or replay:FILE.

    Returns (model, trace, input paths).  Weights apply to uniform
    arrivals always and override a model file's weights only when the flag
    is not the default.
    """
    if spec.startswith("uniform:"):
        p = float(spec[len("uniform:") :])
        weights = resolve_weights(weights_spec, grid)
        return uniform_request_model(grid, p, weights=weights), None, []
    if spec.startswith("model:"):
        path = spec[len("model:") :]
        model = RequestModel.from_csv(path, grid)
        if weights_spec != "const:1":
            model = RequestModel(grid=grid, p=model.p, w=np.broadcast_to(
                np.asarray(resolve_weights(weights_spec, grid), dtype=float), (grid.n, grid.n)
            ).copy())
        return model, None, [path]
    if spec.startswith("replay:"):
        path = spec[len("replay:") :]
        return None, ingest.read_replay(path), [path]
    raise ValueError(f"unknown arrivals spec {spec!r}; use uniform:p, model:FILE, or replay:FILE")


def resolve_init(spec: str, grid, m: int, c: int) -> tuple[int, ...]:
    """Initial placement: a preset name, an inline count vector, or a file of one."""
    if spec in ("adversarial", "spread"):
        return initial_state_preset(grid, m, c, spec)
    if os.path.exists(spec):
        spec = Path(spec).read_text().strip()
    return parse_state(spec)


def build_chain(space: StateSpace, model: RequestModel, policy: PolicySpec):
    if policy.kind == "nadap":
        return build_transition_nadap(space, model, policy.alpha, policy.boundary)
    if policy.kind == "rand":
        return build_transition_rand(space, model, policy.phi)
    return build_transition_from_policy(space, model, policy)


# ---------------------------------------------------------------------------
# Config resolution: flags > config file > defaults


class SubSpec:
    """One subcommand's flags with types and defaults, for layered resolution."""

    def __init__(self, parser: argparse.ArgumentParser):
        self.parser = parser
        self.options: dict[str, tuple] = {}

    def add(self, flag: str, type=str, default=None, help: str = "", choices=None):
        dest = flag.lstrip("-").replace("-", "_")
        self.parser.add_argument(flag, dest=dest, type=str, default=None, help=help)
        self.options[dest] = (type, default, tuple(choices) if choices else None)


def load_config_file(path) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def resolve_options(ns: argparse.Namespace, spec: SubSpec) -> dict:
    """Merge CLI values over config-file values over defaults, typed."""
    config: dict[str, str] = {}
    if getattr(ns, "config", None):
        config = load_config_file(ns.config)
        unknown = set(config) - set(spec.options)
        if unknown:
            raise ValueError(f"config file sets unknown keys: {sorted(unknown)}")
    out = {}
    for dest, (typ, default, choices) in spec.options.items():
        raw = getattr(ns, dest, None)
        if raw is None:
            raw = config.get(dest)
        if raw is None:
            value = default
        elif typ in (int, float):
            value = typ(raw)
        else:
            value = typ(raw) if isinstance(raw, str) else raw
        if choices and value is not None and value not in choices:
            raise ValueError(f"--{dest.replace('_', '-')} must be one of {choices}, got {value!r}")
        out[dest] = value
    return out


def require(options: dict, *keys: str) -> None:
    missing = [k for k in keys if options.get(k) is None]
    if missing:
        flags = ", ".join("--" + k.replace("_", "-") for k in missing)
        raise ValueError(f"missing required option(s): {flags}")


def resolve_seed(options: dict) -> int:
    """The run's seed: as configured, or freshly drawn and recorded."""
    if options.get("seed") is None:
        options["seed"] = int.from_bytes(os.urandom(4), "big")
    return int(options["seed"])


def finish_run(
    outdir: Path,
    command: str,
    argv: list[str],
    options: dict,
    outputs: list[str],
    inputs: list[str] | None = None,
    summary: dict | None = None,
) -> None:
    """Write the manifest that makes the run reproducible and auditable."""
    rerun = list(argv)
    if options.get("seed") is not None and "--seed" not in rerun:
        rerun += ["--seed", str(options["seed"])]
    manifest = {
        "command": command,
        "version": __version__,
        "argv": list(argv),
        "rerun_argv": rerun,
        "seed": options.get("seed"),
        "threads": options.get("threads"),
        "config": _json_safe(options),
        "inputs": {str(p): sha256_file(p) for p in (inputs or [])},
        "outputs": {name: sha256_file(outdir / name) for name in sorted(outputs)},
    }
    if summary is not None:
        manifest["summary"] = _json_safe(summary)
    write_json(outdir / "manifest.json", manifest)


def make_outdir(options: dict) -> Path:
    outdir = Path(options.get("out") or "out")
    outdir.mkdir(parents=True, exist_ok=True)
    return outdir


# ---------------------------------------------------------------------------
# Subcommand handlers


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def add_common(spec: SubSpec) -> None:
    spec.add("--out", type=str, default="out", help="output directory (default: out)")
    spec.add("--format", type=str, default="json", choices=("json", "csv"),
             help="report format: json (default) or key,value csv")
    spec.add(
        "--threads",
        type=int,
        default=_default_threads(),
        help="recorded thread budget; execution is serial either way",
    )
    spec.parser.add_argument("--config", dest="config", default=None,
                             help="flat key=value config file; flags win over it")


def add_instance_flags(spec: SubSpec) -> None:
    spec.add("--grid", type=parse_grid_spec, help="grid as ROWSxCOLS, e.g. 2x2")
    spec.add("--drivers", type=int, help="fleet size m")
    spec.add("--capacity", type=int, help="per-location capacity c")


def cmd_exact(ns, argv) -> int:
    options = resolve_options(ns, ns.spec)
    require(options, "grid", "drivers", "capacity", "arrivals", "policy")
    rows, cols = options["grid"]
    grid = build_grid(rows, cols)
    m, c = options["drivers"], options["capacity"]
    policy = parse_policy(options["policy"])
    model, trace, inputs = resolve_arrivals(options["arrivals"], grid, options["weights"])
    if trace is not None:
        raise ValueError("the exact subcommand needs an arrival law, not a replay trace")
    space = StateSpace(grid, m, c)
    tm = build_chain(space, model, policy)
    stat = stationary_distribution(tm)
    objective = float(limiting_objective(stat, model, policy))
    irreducible = check_irreducible(tm)
    aperiodic = check_aperiodic(tm)
    outdir = make_outdir(options)
    outputs = []
    write_csv(
        outdir / "stationary.csv",
        ["state", "pi"],
        ((format_state(space.unrank(i)), g17(stat.pi[i])) for i in range(space.size)),
    )
    outputs.append("stationary.csv")
    write_csv(
        outdir / "gamma.csv",
        ["u", "v", "gamma"],
        ((u, v, g17(stat.gamma[u, v])) for u in range(grid.n) for v in range(grid.n)),
    )
    outputs.append("gamma.csv")
    report = {
        "states": space.size,
        "objective": objective,
        "irreducible": irreducible,
        "aperiodic": aperiodic,
        "residual": stat.residual,
        "method": stat.method,
        "policy": policy.label(),
    }
    uniform = options["arrivals"].startswith("uniform:")
    envelope = uniform_decay_envelope(grid.n, m) if uniform else None
    if space.size <= MIXING_SIZE_LIMIT:
        mixing = mixing_analysis(
            tm, stat.pi, parse_epsilons(options["epsilons"]), options["tmax"], envelope=envelope
        )
        write_csv(
            outdir / "mixing.csv",
            ["t", "d_t"],
            ((t, g17(d)) for t, d in enumerate(mixing.d_curve)),
        )
        outputs.append("mixing.csv")
        report["tau"] = {g17(e): t for e, t in sorted(mixing.tau.items())}
        if envelope is not None:
            report["envelope"] = {"C": envelope[0], "beta": envelope[1]}
            report["under_envelope"] = mixing.under_envelope()
    else:
        report["mixing"] = f"skipped: {space.size} states exceed the exhaustive limit"
    outputs.append(write_report(outdir, "report", report, options["format"]))
    finish_run(outdir, "exact", argv, options, outputs, inputs)
    print(f"objective={g17(objective)} states={space.size} "
          f"irreducible={irreducible} aperiodic={aperiodic}")
    return 0


def cmd_mixing(ns, argv) -> int:
    options = resolve_options(ns, ns.spec)
    require(options, "grid", "drivers", "capacity", "arrivals", "policy")
    rows, cols = options["grid"]
    grid = build_grid(rows, cols)
    m, c = options["drivers"], options["capacity"]
    policy = parse_policy(options["policy"])
    model, trace, inputs = resolve_arrivals(options["arrivals"], grid, options["weights"])
    if trace is not None:
        raise ValueError("mixing analysis needs an arrival law, not a replay trace")
    space = StateSpace(grid, m, c)
    tm = build_chain(space, model, policy)
    stat = stationary_distribution(tm)
    start_ranks = None
    if options["starts"] is not None:
        k = int(options["starts"])
        if not (1 <= k <= space.size):
            raise ValueError(f"--starts must lie in [1, {space.size}]")
        seed = resolve_seed(options)
        start_ranks = stream(seed, 7).choice(space.size, size=k, replace=False)
    uniform = options["arrivals"].startswith("uniform:")
    envelope = uniform_decay_envelope(grid.n, m) if uniform else None
    mixing = mixing_analysis(
        tm,
        stat.pi,
        parse_epsilons(options["epsilons"]),
        options["tmax"],
        start_ranks=start_ranks,
        envelope=envelope,
    )
    outdir = make_outdir(options)
    outputs = []
    write_csv(
        outdir / "mixing.csv",
        ["t", "d_t"],
        ((t, g17(d)) for t, d in enumerate(mixing.d_curve)),
    )
    outputs.append("mixing.csv")
    report = {
        "states": space.size,
        "tau": {g17(e): t for e, t in sorted(mixing.tau.items())},
        "exhaustive": mixing.exhaustive,
        "start_count": mixing.start_count,
        "policy": policy.label(),
    }
    if envelope is not None:
        report["envelope"] = {"C": envelope[0], "beta": envelope[1]}
        report["under_envelope"] = mixing.under_envelope()
    outputs.append(write_report(outdir, "report", report, options["format"]))
    finish_run(outdir, "mixing", argv, options, outputs, inputs)
    taus = ", ".join(f"tau({e})={t}" for e, t in report["tau"].items())
    print(f"states={space.size} {taus}")
    return 0


def cmd_couple(ns, argv) -> int:
    options = resolve_options(ns, ns.spec)
    require(options, "grid", "drivers", "capacity")
    rows, cols = options["grid"]
    grid = build_grid(rows, cols)
    m, c = options["drivers"], options["capacity"]
    eps = options["eps"]
    report = verify_contraction(grid, m, c, eps=eps)
    outdir = make_outdir(options)
    outputs = []
    write_csv(
        outdir / "coupling.csv",
        ["pair_rank_x", "pair_rank_y", "expected_d_prime", "ratio"],
        (
            (r.x, r.y, g17(r.expected_distance), g17(r.ratio))
            for r in report.records
        ),
    )
    outputs.append("coupling.csv")
    payload = {
        "n": report.n,
        "m": report.m,
        "c": report.c,
        "p": float(report.p),
        "pairs": report.pair_count,
        "worst_beta": float(report.worst_beta),
        "worst_beta_exact": str(report.worst_beta),
        "target": float(report.target),
        "diameter": report.diameter,
        "eps": eps,
        "tau_bound": report.tau_bound(eps),
    }
    outputs.append(write_report(outdir, "report", payload, options["format"]))
    finish_run(outdir, "couple", argv, options, outputs, summary=payload)
    print(
        f"worst_beta={report.worst_beta} (target {report.target}) "
        f"tau_bound({g17(eps)})={g17(report.tau_bound(eps))} over {report.pair_count} pairs"
    )
    return 0


def cmd_simulate(ns, argv) -> int:
    options = resolve_options(ns, ns.spec)
    require(options, "grid", "drivers", "capacity", "policy", "arrivals")
    rows, cols = options["grid"]
    grid = build_grid(rows, cols)
    m, c = options["drivers"], options["capacity"]
    policy = parse_policy(options["policy"])
    model, trace, inputs = resolve_arrivals(options["arrivals"], grid, options["weights"])
    estimator = options["estimator"]
    if estimator is None:
        estimator = "realized" if trace is not None else "conditional"
    T = options["rounds"]
    if T is None:
        if trace is None:
            raise ValueError("missing required option(s): --rounds")
        T = trace.rounds
    seed = resolve_seed(options)
    config = SimConfig(
        grid=grid,
        m=m,
        c=c,
        T=int(T),
        runs=options["runs"],
        seed=seed,
        policy=policy,
        model=model,
        trace=trace.entries if trace is not None else None,
        initial_state=resolve_init(options["init"], grid, m, c),
        estimator=estimator,
    )
    series = run_ensemble(config)
    target = "tail"
    target_note = "tail mean"
    if model is not None:
        try:
            space = StateSpace(grid, m, c)
            if space.size <= MIXING_SIZE_LIMIT:
                stat = stationary_distribution(build_chain(space, model, policy))
                target = float(limiting_objective(stat, model, policy))
                target_note = "exact stationary objective"
        except DispatchLabError:
            pass
    series = error_curves(series, target=target)
    outdir = make_outdir(options)
    outputs = []
    write_csv(
        outdir / "wt.csv",
        ["t", "mean", "stderr"],
        (
            (t, g17(series.w_mean[t]), g17(series.w_stderr[t]))
            for t in range(len(series.w_mean))
        ),
    )
    outputs.append("wt.csv")
    write_csv(
        outdir / "obj.csv",
        ["T", "running_avg"],
        ((t + 1, g17(series.obj_running[t])) for t in range(len(series.obj_running))),
    )
    outputs.append("obj.csv")
    write_csv(
        outdir / "error.csv",
        ["t", "delta", "delta_hat"],
        (
            (t, g17(series.delta[t]), g17(series.delta_hat[t]))
            for t in range(len(series.delta))
        ),
    )
    outputs.append("error.csv")
    t_axis = np.arange(len(series.delta))
    fits: dict = {
        "target": series.target,
        "target_kind": series.target_kind,
        "target_note": target_note,
        "objective": series.obj,
        "objective_stderr": series.obj_stderr,
    }
    try:
        efit = fit_exponential(t_axis, series.delta)
        fits["exponential"] = {"a": efit.a, "b": efit.b, "r2": efit.r2, "dropped": efit.dropped}
    except DispatchLabError as exc:
        fits["exponential"] = {"error": str(exc)}
    try:
        ifit = fit_inverse(t_axis + 1, series.delta_hat)
        fits["inverse"] = {"a": ifit.a, "r2": ifit.r2, "dropped": ifit.dropped}
    except DispatchLabError as exc:
        fits["inverse"] = {"error": str(exc)}
    outputs.append(write_report(outdir, "fit", fits, options["format"]))
    finish_run(outdir, "simulate", argv, options, outputs, inputs)
    print(
        f"objective={g17(series.obj)} stderr={g17(series.obj_stderr)} "
        f"runs={series.runs} rounds={config.T} estimator={series.estimator}"
    )
    return 0


def cmd_vi(ns, argv) -> int:
    options = resolve_options(ns, ns.spec)
    require(options, "grid", "drivers", "capacity", "arrivals")
    rows, cols = options["grid"]
    grid = build_grid(rows, cols)
    m, c = options["drivers"], options["capacity"]
    model, trace, inputs = resolve_arrivals(options["arrivals"], grid, options["weights"])
    if trace is not None:
        raise ValueError("value iteration needs an arrival law, not a replay trace")
    instance = MdpInstance(
        grid, m, c, model, discount=options["discount"], cap=options["cap"]
    )
    result = value_iteration(instance, tol=options["tol"])
    seed = resolve_seed(options)
    init = None
    if options["init"] is not None:
        init = resolve_init(options["init"], grid, m, c)
    report, _log = simulate_optimal_episode(
        instance, result, periods=options["periods"], seed=seed, initial_state=init
    )
    space = instance.space
    R = instance.n_requests
    outdir = make_outdir(options)
    outputs = []

    def request_label(r: int) -> str:
        return "none" if r == R else str(r)

    write_csv(
        outdir / "values.csv",
        ["state", "request", "value"],
        (
            (format_state(space.unrank(i)), request_label(r), g17(result.values[i, r]))
            for i in range(space.size)
            for r in range(R + 1)
        ),
    )
    outputs.append("values.csv")
    write_csv(
        outdir / "policy.csv",
        ["state", "request", "action"],
        (
            (format_state(space.unrank(i)), request_label(r), int(result.policy[i, r]))
            for i in range(space.size)
            for r in range(R + 1)
        ),
    )
    outputs.append("policy.csv")
    write_csv(
        outdir / "heatmap.csv",
        ["location", "time_covered", "drop_rate", "start_pct"],
        (
            (u, g17(report.time_covered[u]), g17(report.drop_rate[u]), g17(report.start_pct[u]))
            for u in range(grid.n)
        ),
    )
    outputs.append("heatmap.csv")
    payload = {
        "augmented_states": instance.state_count,
        "sweeps": result.sweeps,
        "residual": result.residual,
        "bellman_recheck": bellman_residual(instance, result.values),
        "discount": instance.discount,
        "episode_periods": report.periods,
        "episode_served": report.served,
    }
    outputs.append(write_report(outdir, "report", payload, options["format"]))
    finish_run(outdir, "vi", argv, options, outputs, inputs, summary=payload)
    print(
        f"augmented_states={instance.state_count} sweeps={result.sweeps} "
        f"residual={result.residual:.3e} served={report.served}/{report.periods}"
    )
    return 0


def cmd_ingest(ns, argv) -> int:
    options = resolve_options(ns, ns.spec)
    require(options, "input", "segment", "emit")
    rows, cols = options["grid"]
    bbox = options["bbox"]
    parsed = ingest.parse_trips(options["input"])
    records = ingest.filter_bbox(parsed.records, bbox)
    if options["subsample"] is not None:
        seed = resolve_seed(options)
        records = ingest.subsample_cars(records, int(options["subsample"]), seed)
    segmented = ingest.segment_by_time(records)
    segment = options["segment"]
    parts = segmented.parts[segment]
    dates = sorted(d for d in parts if dates_match(options["dates"], d))
    if not dates:
        raise ValueError(f"no trips fall in the {segment} segment for the requested dates")
    outdir = make_outdir(options)
    outputs = []
    stats = {
        "parsed": len(parsed.records),
        "skipped": parsed.skipped,
        "in_bbox": len(records),
        "outside_segments": segmented.dropped,
        "segment": segment,
        "dates": [d.isoformat() for d in dates],
    }
    if options["emit"] == "model":
        pairs = (
            ingest.bin_to_grid(r, rows, cols, bbox) for d in dates for r in parts[d]
        )
        slots = ingest.segment_seconds(segment) * len(dates)
        estimate = ingest.estimate_rates(pairs, slots, rows, cols)
        estimate.model.to_csv(outdir / "model.csv")
        outputs.append("model.csv")
        stats.update(
            {"requests": estimate.requests, "slots": estimate.slots, "rescale": estimate.rescale}
        )
    else:
        if len(dates) != 1:
            raise ValueError(
                f"a replay trace covers one date; {len(dates)} match (pass --dates)"
            )
        trace = ingest.build_replay(parts[dates[0]], segment, dates[0], rows, cols, bbox)
        ingest.write_replay(outdir / "replay.csv", trace)
        outputs.append("replay.csv")
        stats.update({"entries": len(trace), "rounds": trace.rounds})
    outputs.append(write_report(outdir, "report", stats, options["format"]))
    finish_run(outdir, "ingest", argv, options, outputs, [options["input"]], summary=stats)
    print(
        f"parsed={stats['parsed']} skipped={stats['skipped']} in_bbox={stats['in_bbox']} "
        f"emit={options['emit']} dates={len(dates)}"
    )
    return 0


def cmd_fit(ns, argv) -> int:
    options = resolve_options(ns, ns.spec)
    require(options, "input")
    t: list[float] = []
    values: list[float] = []
    with open(options["input"], newline="") as fh:
        reader = csv.DictReader(fh)
        needed = {options["t_column"], options["value_column"]}
        if not needed.issubset(reader.fieldnames or []):
            raise ValueError(f"fit input needs columns {sorted(needed)}")
        for row in reader:
            t.append(float(row[options["t_column"]]))
            values.append(float(row[options["value_column"]]))
    if options["kind"] == "exp":
        fit = fit_exponential(t, values)
        payload = {"kind": "exp", "a": fit.a, "b": fit.b, "r2": fit.r2, "dropped": fit.dropped}
    else:
        fit = fit_inverse(t, values)
        payload = {"kind": "inverse", "a": fit.a, "r2": fit.r2, "dropped": fit.dropped}
    outdir = make_outdir(options)
    outputs = [write_report(outdir, "fit", payload, options["format"])]
    finish_run(outdir, "fit", argv, options, outputs, [options["input"]], summary=payload)
    print(" ".join(f"{k}={v}" for k, v in payload.items()))
    return 0


def cmd_fixture(ns, argv) -> int:
    options = resolve_options(ns, ns.spec)
    resolve_seed(options)
    outdir = make_outdir(options)
    count = ingest.make_fixture(
        outdir / "trips.csv", trips=options["trips"], seed=options["seed"], cars=options["cars"]
    )
    finish_run(outdir, "fixture", argv, options, ["trips.csv"], summary={"rows": count})
    print(f"wrote {count} rows to {outdir / 'trips.csv'}")
    return 0


# ---------------------------------------------------------------------------
# Parser assembly


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dispatchlab",
        description="Exact and simulated analysis of grid rideshare dispatch chains.",
    )
    parser.add_argument("--version", action="version", version=f"dispatchlab {__version__}")
    subparsers = parser.add_subparsers(dest="command", metavar="COMMAND")

    def new_sub(name: str, help: str, handler) -> SubSpec:
        sub = subparsers.add_parser(name, help=help, description=help)
        spec = SubSpec(sub)
        sub.set_defaults(handler=handler, spec=spec)
        return spec

    spec = new_sub("exact", "Stationary distribution, occupancy maps, and limiting objective.", cmd_exact)
    add_instance_flags(spec)
    spec.add("--policy", help="policy spec: nadap:A[:lost], rand:PERM, greedy[:pool]")
    spec.add("--arrivals", help="uniform:p or model:FILE")
    spec.add("--weights", default="const:1", help="const:X, distance, or file:PATH")
    spec.add("--epsilons", default=DEFAULT_EPSILONS, help="mixing thresholds, comma separated")
    spec.add("--tmax", type=int, default=100_000, help="mixing horizon cap")
    add_common(spec)

    spec = new_sub("mixing", "Worst-start distance to stationarity and mixing times.", cmd_mixing)
    add_instance_flags(spec)
    spec.add("--policy", help="policy spec")
    spec.add("--arrivals", help="uniform:p or model:FILE")
    spec.add("--weights", default="const:1", help="const:X, distance, or file:PATH")
    spec.add("--epsilons", default=DEFAULT_EPSILONS, help="thresholds, comma separated")
    spec.add("--tmax", type=int, default=100_000, help="horizon cap")
    spec.add("--starts", type=int, help="random start sample size (required above the exhaustive limit)")
    spec.add("--seed", type=int, help="seed for the start sample")
    add_common(spec)

    spec = new_sub("couple", "Exhaustive one-step coupling contraction certificate.", cmd_couple)
    add_instance_flags(spec)
    spec.add("--eps", type=float, default=0.01, help="mixing threshold for the tau bound")
    add_common(spec)

    spec = new_sub("simulate", "Seeded Monte-Carlo convergence experiments.", cmd_simulate)
    add_instance_flags(spec)
    spec.add("--policy", help="policy spec")
    spec.add("--rounds", type=int, help="horizon T (replay default: trace length)")
    spec.add("--runs", type=int, default=100, help="replications")
    spec.add("--seed", type=int, help="master seed (random if omitted, recorded)")
    spec.add("--init", default="adversarial", help="adversarial, spread, counts, or a file")
    spec.add("--arrivals", help="uniform:p, model:FILE, or replay:FILE")
    spec.add("--weights", default="const:1", help="const:X, distance, or file:PATH")
    spec.add("--estimator", choices=("conditional", "realized"),
             help="profit estimator (default: conditional, replay: realized)")
    add_common(spec)

    spec = new_sub("vi", "Optimal dispatch by value iteration plus an episode heatmap.", cmd_vi)
    add_instance_flags(spec)
    spec.add("--arrivals", help="uniform:p or model:FILE")
    spec.add("--weights", default="const:1", help="const:X, distance, or file:PATH")
    spec.add("--discount", type=float, default=0.9, help="discount factor in (0,1)")
    spec.add("--tol", type=float, default=1e-8, help="sup-norm convergence tolerance")
    spec.add("--cap", type=int, default=100_000, help="augmented state cap")
    spec.add("--periods", type=int, default=1000, help="episode length")
    spec.add("--seed", type=int, help="episode seed")
    spec.add("--init", help="episode start: adversarial, spread, counts, or a file")
    add_common(spec)

    spec = new_sub("ingest", "Trip CSV to arrival model or replay trace.", cmd_ingest)
    spec.add("--input", help="trip records CSV")
    spec.add("--bbox", type=parse_bbox_spec, default=ingest.DEFAULT_BBOX,
             help="latmin,latmax,lonmin,lonmax (default: the stock box)")
    spec.add("--grid", type=parse_grid_spec, default=(ingest.DEFAULT_GRID_ROWS, ingest.DEFAULT_GRID_COLS),
             help="binning grid (default 21x11)")
    spec.add("--segment", choices=tuple(ingest.SEGMENTS),
             help="morning, afternoon, or evening")
    spec.add("--dates", default="all",
             help="'all', comma list, or inclusive first:last range")
    spec.add("--subsample", type=int, help="keep trips of this many seeded-random cars")
    spec.add("--seed", type=int, help="subsample seed")
    spec.add("--emit", choices=("model", "replay"), help="output kind")
    add_common(spec)

    spec = new_sub("fit", "Fit a decay law to a stored curve.", cmd_fit)
    spec.add("--input", help="CSV with the curve")
    spec.add("--t-column", default="t", help="time column name (default t)")
    spec.add("--value-column", default="delta", help="value column name (default delta)")
    spec.add("--kind", default="exp", choices=("exp", "inverse"), help="decay law")
    add_common(spec)

    spec = new_sub("fixture", "Deterministic synthetic trip CSV in the stock schema.", cmd_fixture)
    spec.add("--trips", type=int, default=1000, help="row count")
    spec.add("--cars", type=int, default=40, help="distinct car count")
    spec.add("--seed", type=int, help="generator seed (random if omitted, recorded)")
    add_common(spec)

    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(ns, "command", None) is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return ns.handler(ns, argv)
    except DispatchLabError as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 1
    except (ValueError, OSError) as exc:
        print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
