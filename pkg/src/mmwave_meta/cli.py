"""Command-line interface: analytic reports, simulations and sweeps as CSV."""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
import time
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import metadist, moments, simulator
from .checks import format_table, run_checks
from .geometry import STATES, association_table
from .model import ConfigError, NetworkModel, build_model, db_to_linear, load_config, merge_config, \
    parse_config_text, valid_keys

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_NONCONVERGENCE = 4
EXIT_INSUFFICIENT = 5
EXIT_CHECK_FAILED = 6

DEFAULT_THETA_DB = "-10:20:7"
DEFAULT_Y_GRID = "0.1:0.9:9"
LIST_FLAGS = ("--theta-db", "--y-grid", "--sweep", "--activity")


class UsageError(ValueError):
    pass


# --------------------------------------------------------------------------
# parsing helpers
# --------------------------------------------------------------------------

def parse_list(text: str, name: str) -> list[float]:
    """``a,b,c`` or ``start:stop:count`` (inclusive, evenly spaced)."""
    text = text.strip()
    if not text:
        raise UsageError(f"{name}: empty list")
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"{name}: expected START:STOP:COUNT, got {text!r}")
        try:
            start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
        except ValueError:
            raise UsageError(f"{name}: bad range {text!r}") from None
        if count < 1:
            raise UsageError(f"{name}: COUNT must be >= 1")
        vals = np.linspace(start, stop, count)
        return [float(np.round(v, 12)) for v in vals]
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"{name}: bad number list {text!r}") from None


def list_arg(value: str | None, default: str, name: str) -> list[float]:
    """Parse a list flag, falling back to ``default`` only when the flag is absent."""
    return parse_list(default if value is None else value, name)


def parse_sweep(text: str, num_tiers: int) -> tuple[str, list[float]]:
    key, sep, values = text.partition("=")
    key = key.strip()
    if not sep:
        raise UsageError("--sweep expects KEY=START:STOP:COUNT or KEY=v1,v2,...")
    if key not in valid_keys(num_tiers):
        raise ConfigError(key, values, "unknown sweep key; valid keys: " + ", ".join(valid_keys(num_tiers)))
    return key, parse_list(values, "--sweep")


def _merge_negative_values(argv: Sequence[str]) -> list[str]:
    """Let ``--theta-db -10,0`` work by gluing list values that start with '-'."""
    out: list[str] = []
    it = iter(range(len(argv)))
    skip = False
    for i in it:
        if skip:
            skip = False
            continue
        tok = argv[i]
        if tok in LIST_FLAGS and i + 1 < len(argv) and argv[i + 1].startswith("-") \
                and len(argv[i + 1]) > 1 and (argv[i + 1][1].isdigit() or argv[i + 1][1] == "."):
            out.append(f"{tok}={argv[i + 1]}")
            skip = True
        else:
            out.append(tok)
    return out


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "" if not math.isfinite(x) else f"{float(x):.9g}"
    return str(x)


def write_csv(path: str | None, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        if len(row) != len(header):
            raise AssertionError("row width does not match header")
        w.writerow([fmt(v) for v in row])
    text = buf.getvalue()
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def load_model(args, overrides: dict | None = None) -> NetworkModel:
    flat = load_config(args.config) if args.config else merge_config({})
    extra = {}
    for item in args.set or []:
        extra.update(parse_config_text(item, source="--set"))
    if overrides:
        extra.update(overrides)
    if extra:
        flat = merge_config(extra, base=flat, replace_tiers=False)
    return build_model(flat)


# --------------------------------------------------------------------------
# activity modes
# --------------------------------------------------------------------------

def resolve_activity(model: NetworkModel, mode: str) -> tuple[str, np.ndarray]:
    """``full``, ``fixed-point`` or a comma list of per-tier probabilities."""
    mode = mode.strip()
    if mode == "full":
        return "full", np.ones(model.num_tiers)
    if mode == "fixed-point":
        state = metadist.solve_fixed_point(model, strict=True)
        return "fixed-point", state.activity
    vals = parse_list(mode, "--activity")
    if len(vals) == 1:
        vals = vals * model.num_tiers
    if len(vals) != model.num_tiers or any(not 0 <= v <= 1 for v in vals):
        raise UsageError(f"--activity needs {model.num_tiers} values in [0, 1], got {mode!r}")
    return "fixed", np.array(vals)


def _activity_text(q: np.ndarray) -> str:
    return ";".join(fmt(v) for v in q)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_moments(args) -> int:
    base = load_model(args)
    thetas = list_arg(args.theta_db, DEFAULT_THETA_DB, "--theta-db")
    modes = args.activity or ["full", "fixed-point"]
    header = ["theta_db", "activity_mode", "activity", "tier", "state", "association", "m1", "m2", "variance"]
    rows = []
    for tdb in thetas:
        model = base.with_threshold(db_to_linear(tdb))
        assoc = association_table(model)
        for mode in modes:
            label, q = resolve_activity(model, mode)
            qt = _activity_text(q)
            net = np.zeros(2)
            for k in range(model.num_tiers):
                tier_acc = np.zeros(2)
                for s, st in enumerate(STATES):
                    m1, m2 = moments.integer_moments(model, k, st, (1, 2), q)
                    rows.append([tdb, label, qt, k + 1, st.name, assoc[k, s], m1, m2, m2 - m1 * m1])
                    tier_acc += assoc[k, s] * np.array([m1, m2])
                net += tier_acc
                a_k = assoc[k].sum()
                m1, m2 = tier_acc / a_k
                rows.append([tdb, label, qt, k + 1, "all", a_k, m1, m2, m2 - m1 * m1])
            rows.append([tdb, label, qt, "all", "all", assoc.sum(), net[0], net[1], net[1] - net[0] ** 2])
    write_csv(args.output, header, rows)
    return EXIT_OK


def cmd_metadist(args) -> int:
    base = load_model(args)
    method = args.method or "both"
    if method not in ("beta", "gil-pelaez", "both"):
        raise UsageError("--method must be beta, gil-pelaez or both")
    y = list_arg(args.y_grid, DEFAULT_Y_GRID, "--y-grid")
    if any(not 0 <= v <= 1 for v in y):
        raise UsageError("--y-grid values must lie in [0, 1]")
    y = np.array(sorted(set(y)))
    thetas = parse_list(args.theta_db, "--theta-db") if args.theta_db is not None else [None]
    modes = args.activity or ["full"]
    header = ["theta_db", "activity_mode", "activity", "tier", "y", "ccdf_beta", "ccdf_gil_pelaez", "gap"]
    rows = []
    for tdb in thetas:
        model = base if tdb is None else base.with_threshold(db_to_linear(tdb))
        tdb_out = 10 * math.log10(model.sinr_threshold)
        for mode in modes:
            label, q = resolve_activity(model, mode)
            qt = _activity_text(q)
            beta_tiers = [metadist.meta_distribution(model, q, y, "beta", tier=k) for k in range(model.num_tiers)]
            targets = list(range(model.num_tiers)) + [None]
            for k in targets:
                if method in ("beta", "both"):
                    bv = (metadist.MixtureMeta.of_tiers(model, beta_tiers).ccdf(y) if k is None
                          else beta_tiers[k].ccdf(y))
                else:
                    bv = [None] * y.size
                if method in ("gil-pelaez", "both"):
                    gv = metadist.meta_distribution(model, q, y, "gil-pelaez", tier=k).values
                else:
                    gv = [None] * y.size
                for i, yi in enumerate(y):
                    gap = None if bv[i] is None or gv[i] is None else gv[i] - bv[i]
                    rows.append([tdb_out, label, qt, "all" if k is None else k + 1, yi, bv[i], gv[i], gap])
    write_csv(args.output, header, rows)
    return EXIT_OK


def _write_trace(path: str, state: metadist.FixedPointState, num_tiers: int) -> None:
    header = ["iteration"] + [f"activity_tier{k + 1}" for k in range(num_tiers)] + ["change"]
    rows = [[r.iteration, *r.activity, r.change] for r in state.trajectory]
    write_csv(path, header, rows)


def _trace_path(args) -> str | None:
    if args.trace:
        return args.trace
    if args.output and args.output != "-":
        p = Path(args.output)
        return str(p.with_name(p.stem + ".trace.csv"))
    return None


def cmd_fixedpoint(args) -> int:
    model = load_model(args)
    y = np.array(sorted(set(list_arg(args.y_grid, DEFAULT_Y_GRID, "--y-grid"))))
    state = metadist.solve_fixed_point(model)
    trace = _trace_path(args)
    if trace:
        _write_trace(trace, state, model.num_tiers)
    if not state.converged:
        why = "oscillating" if state.oscillating else f"no convergence after {state.iteration} iterations"
        print(f"error: activity fixed point {why}; last change {state.change:.3g}"
              + (f"; trajectory in {trace}" if trace else ""), file=sys.stderr)
        return EXIT_NONCONVERGENCE
    header = ["tier", "activity", "m1", "m2", "variance", "beta_a", "beta_b", "iterations", "y", "ccdf"]
    rows = []
    for k, meta in enumerate(state.metas):
        m1, m2 = state.moments[k]
        a = meta.beta.a if meta.kind == "beta" else None
        b = meta.beta.b if meta.kind == "beta" else None
        for yi, c in zip(y, meta.ccdf(y)):
            rows.append([k + 1, state.activity[k], m1, m2, m2 - m1 * m1, a, b, state.iteration, yi, c])
    write_csv(args.output, header, rows)
    return EXIT_OK


def cmd_bounds(args) -> int:
    model = load_model(args)
    y = np.array(sorted(set(list_arg(args.y_grid, "0.01:0.99:99", "--y-grid"))))
    state = metadist.solve_fixed_point(model, strict=True)
    entries = [("favorable", 1), ("favorable", 2), ("fixed-point", 0), ("dominant", 2), ("dominant", 1)]
    header = ["system", "degree", "tier", "activity", "y", "ccdf"]
    rows = []
    for system, degree in entries:
        if system == "fixed-point":
            q, metas = state.activity, state.metas
        else:
            res = metadist.bound_meta(model, system, degree)
            q, metas = res.activity, res.metas
        for k in range(model.num_tiers):
            for yi, c in zip(y, metas[k].ccdf(y)):
                rows.append([system, degree, k + 1, q[k], yi, c])
    write_csv(args.output, header, rows)
    return EXIT_OK


SIM_HEADER = ["mode", "theta_db", "tier", "quantity", "y", "sim", "sim_half_width", "analytic", "abs_diff",
              "users"]


def _sim_rows(model: NetworkModel, sim: simulator.SimulationResult, q: np.ndarray, ti: int, y: np.ndarray,
              tdb: float, activity_rows: bool) -> list[list]:
    rows = []
    stp = sim.user_stp if sim.user_stp.ndim == 1 else sim.user_stp[:, ti]
    tiers = list(range(model.num_tiers)) + [None]
    metas = [metadist.meta_from_moments(*moments.tier_moments(model, k, q)) for k in range(model.num_tiers)]
    mix = metadist.MixtureMeta.of_tiers(model, metas)
    for k in tiers:
        sel = stp if k is None else stp[sim.user_tier == k]
        label = "all" if k is None else k + 1
        n = sel.size
        if k is None:
            am1, am2 = moments.network_moments(model, q)
            meta = mix
        else:
            am1, am2 = moments.tier_moments(model, k, q)
            meta = metas[k]
        if n:
            m1, m2 = sel.mean(), (sel**2).mean()
            hw1 = 1.96 * sel.std() / math.sqrt(n)
            hw2 = 1.96 * (sel**2).std() / math.sqrt(n)
            var = m2 - m1 * m1
        else:
            m1 = m2 = hw1 = hw2 = var = None
        diff = lambda a, b: None if a is None else abs(a - b)  # noqa: E731
        rows.append(["", tdb, label, "m1", None, m1, hw1, am1, diff(m1, am1), n])
        rows.append(["", tdb, label, "m2", None, m2, hw2, am2, diff(m2, am2), n])
        rows.append(["", tdb, label, "variance", None, var, None, am2 - am1 * am1,
                     diff(var, am2 - am1 * am1), n])
        if activity_rows and k is not None:
            act, hw = sim.tier_activity(k)
            rows.append(["", tdb, label, "activity", None, act, hw, q[k], abs(act - q[k]) if math.isfinite(act)
                         else None, int(np.sum(sim.bs_tier == k))])
        if n:
            frac, half = simulator.empirical_ccdf(sel, y)
        else:
            frac, half = [None] * y.size, [None] * y.size
        ana = meta.ccdf(y)
        for i, yi in enumerate(y):
            rows.append(["", tdb, label, "ccdf", yi, frac[i], half[i], ana[i],
                         None if frac[i] is None else abs(frac[i] - ana[i]), n])
    return rows


def run_simulation(model: NetworkModel, args, mode: str, activity_mode: str | None = None):
    """Returns (result, analytic activity vector, thetas in dB)."""
    threads = args.threads or 1
    seed = args.seed if args.seed is not None else 0
    window = args.window or simulator.DEFAULT_WINDOW
    if mode == "static":
        label, q = resolve_activity(model, activity_mode or "full")
        tdbs = parse_list(args.theta_db, "--theta-db") if args.theta_db is not None else [10 * math.log10(model.sinr_threshold)]
        thetas = [db_to_linear(t) for t in tdbs]
        sim = simulator.simulate_static(model, q, args.realizations or 500, args.draws or 200, seed=seed,
                                        thetas=thetas, window_radius=window, threads=threads)
        return sim, q, tdbs
    if mode == "temporal":
        state = metadist.solve_fixed_point(model, strict=True)
        slots = args.slots or 5000
        warmup = args.warmup if args.warmup is not None else max(slots // 10, 1)
        sim = simulator.simulate_temporal(model, args.realizations or 200, slots, warmup, seed=seed,
                                          window_radius=window, threads=threads)
        return sim, state.activity, [10 * math.log10(model.sinr_threshold)]
    raise UsageError("--mode must be static or temporal")


def cmd_simulate(args) -> int:
    model = load_model(args)
    mode = args.mode or "static"
    y = np.array(sorted(set(list_arg(args.y_grid, DEFAULT_Y_GRID, "--y-grid"))))
    activity_mode = (args.activity or ["full"])[0]
    sim, q, tdbs = run_simulation(model, args, mode, activity_mode)
    if sim.user_stp.shape[0] < 100:
        print(f"error: only {sim.user_stp.shape[0]} qualifying users; need at least 100", file=sys.stderr)
        return EXIT_INSUFFICIENT
    rows = []
    for ti, tdb in enumerate(tdbs):
        m = model.with_threshold(db_to_linear(tdb))
        for r in _sim_rows(m, sim, q, ti, y, tdb, activity_rows=(mode == "temporal")):
            r[0] = mode
            rows.append(r)
    write_csv(args.output, SIM_HEADER, rows)
    if args.per_user:
        stp = sim.user_stp if sim.user_stp.ndim == 2 else sim.user_stp[:, None]
        header = ["tier"] + [f"stp_theta_db={fmt(t)}" for t in tdbs]
        write_csv(args.per_user, header, ([t + 1, *s] for t, s in zip(sim.user_tier, stp)))
    return EXIT_OK


def cmd_sweep(args) -> int:
    if not args.sweep:
        raise UsageError("sweep needs --sweep KEY=START:STOP:COUNT")
    base = load_model(args)
    key, values = parse_sweep(args.sweep, base.num_tiers)
    y = np.array(sorted(set(list_arg(args.y_grid, DEFAULT_Y_GRID, "--y-grid"))))
    activity_mode = (args.activity or ["fixed-point"])[0]
    sim_mode = args.mode if args.realizations else None
    header = (["sweep_key", "value", "tier", "activity", "m1", "m2", "variance"]
              + [f"ccdf_y={fmt(v)}" for v in y]
              + ["sim_m1", "sim_m1_half_width", "sim_activity", "sim_activity_half_width"])
    rows = []
    for v in values:
        model = load_model(args, {key: v})
        _, q = resolve_activity(model, activity_mode)
        sim = None
        if sim_mode:
            sim, q_sim, _ = run_simulation(model, args, sim_mode, activity_mode)
            if sim_mode == "temporal":
                q = q_sim
        for k in range(model.num_tiers):
            m1, m2 = moments.tier_moments(model, k, q)
            ccdf = metadist.meta_from_moments(m1, m2).ccdf(y)
            s_m1 = s_hw = s_act = s_act_hw = None
            if sim is not None:
                stp = sim.user_stp if sim.user_stp.ndim == 1 else sim.user_stp[:, 0]
                sel = stp[sim.user_tier == k]
                if sel.size:
                    s_m1, s_hw = sel.mean(), 1.96 * sel.std() / math.sqrt(sel.size)
                if sim.bs_activity is not None:
                    s_act, s_act_hw = sim.tier_activity(k)
            rows.append([key, v, k + 1, q[k], m1, m2, m2 - m1 * m1, *ccdf, s_m1, s_hw, s_act, s_act_hw])
    write_csv(args.output, header, rows)
    return EXIT_OK


def cmd_check(args) -> int:
    model = load_model(args)
    results = run_checks(model)
    table = format_table(results)
    if args.output and args.output != "-":
        Path(args.output).write_text(table + "\n")
    print(table)
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK_FAILED


COMMANDS = {
    "moments": cmd_moments,
    "metadist": cmd_metadist,
    "fixedpoint": cmd_fixedpoint,
    "bounds": cmd_bounds,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    S = argparse.SUPPRESS
    common.add_argument("--config", metavar="PATH", default=S, help="flat key = value config file")
    common.add_argument("--set", metavar="KEY=VALUE", action="append", default=S,
                        help="override one config key (repeatable)")
    common.add_argument("--output", metavar="PATH", default=S, help="CSV output path (default stdout)")
    common.add_argument("--seed", metavar="U64", type=int, default=S, help="base seed for simulations")
    common.add_argument("--realizations", metavar="N", type=int, default=S, help="spatial realizations")
    common.add_argument("--slots", metavar="N", type=int, default=S, help="slots per temporal realization")
    common.add_argument("--warmup", metavar="N", type=int, default=S, help="warm-up slots (default slots/10)")
    common.add_argument("--draws", metavar="N", type=int, default=S, help="fading draws per user (static mode)")
    common.add_argument("--window", metavar="M", type=float, default=S, help="simulation window radius [m]")
    common.add_argument("--theta-db", metavar="LIST", default=S, help="SINR thresholds in dB: a,b,c or start:stop:count")
    common.add_argument("--y-grid", metavar="LIST", default=S, help="y values for CCDF columns")
    common.add_argument("--method", metavar="NAME", default=S, help="beta | gil-pelaez | both")
    common.add_argument("--activity", metavar="MODE", action="append", default=S,
                        help="full | fixed-point | q1,q2,... (repeatable for moments)")
    common.add_argument("--mode", metavar="MODE", default=S, help="simulation mode: static | temporal")
    common.add_argument("--sweep", metavar="KEY=START:STOP:COUNT", default=S, help="config key and values")
    common.add_argument("--threads", metavar="N", type=int, default=S, help="worker threads for simulations")
    common.add_argument("--trace", metavar="PATH", default=S, help="fixed-point trajectory CSV")
    common.add_argument("--per-user", metavar="PATH", default=S, help="export raw per-user estimates")
    common.add_argument("--check", action="store_true", default=S, help="run the invariant suite and exit")

    parser = argparse.ArgumentParser(
        prog="mmwave-meta", parents=[common],
        description="SINR meta distribution of K-tier mmWave networks with Geo/G/1 traffic.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    helps = {
        "moments": "moments M1, M2 of the conditional success probability",
        "metadist": "meta distribution CCDF (beta and/or Gil-Pelaez)",
        "fixedpoint": "queue-coupled activity fixed point",
        "bounds": "dominant / favorable bounds next to the fixed point",
        "simulate": "Monte Carlo run with analytic counterparts",
        "sweep": "one report row per value of a config key",
    }
    for name, text in helps.items():
        sub.add_parser(name, parents=[common], help=text, description=text)
    return parser


_DEFAULTS = dict(config=None, set=None, output=None, seed=None, realizations=None, slots=None, warmup=None,
                 draws=None, window=None, theta_db=None, y_grid=None, method=None, activity=None, mode=None,
                 sweep=None, threads=None, trace=None, per_user=None, check=False)


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(_merge_negative_values(argv))
    for k, v in _DEFAULTS.items():
        if not hasattr(args, k):
            setattr(args, k, v)
    started = time.perf_counter()
    try:
        if args.threads is not None and args.threads < 1:
            raise UsageError("--threads must be >= 1")
        if args.check:
            code = cmd_check(args)
        elif args.command is None:
            parser.print_usage(sys.stderr)
            print("error: a COMMAND or --check is required", file=sys.stderr)
            return EXIT_USAGE
        else:
            code = COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, simulator.WindowTooSmallError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except metadist.NonConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except simulator.InsufficientSampleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INSUFFICIENT
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"elapsed {time.perf_counter() - started:.2f} s", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
