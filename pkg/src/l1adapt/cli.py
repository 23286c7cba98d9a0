"""Command-line entry point: l1gain, design, simulate, margin, repro.

Scenario files are TOML; traces are CSV with 12-significant-digit floats.
Exit codes: 0 success, 2 parse/validation error, 3 infeasible design
(gain condition fails), 4 simulation divergence.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:               # Python < 3.11
    import tomli as tomllib

from l1adapt.analysis import (DesignInfeasible, bounds_report, compute_lambda,
                              lambda_sweep, verify_trace)
from l1adapt.controllers import (PlantModel, ThetaTrajectory, build_highgain,
                                 build_l1, build_mrac, _resolve_filter)
from l1adapt.lti import LtiSystem, Polynomial, UnstableSystemError, l1_gain
from l1adapt.margin import margin_curve
from l1adapt.presets import (benchmark_config_first, benchmark_config_third,
                             benchmark_plant, benchmark_scenario)
from l1adapt.sim import (ReferenceSignal, SimScenario, SimulationDiverged,
                         default_dt, run_scenario, simulate_highgain)

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_INFEASIBLE = 3
EXIT_DIVERGED = 4


class CliError(Exception):
    def __init__(self, message, code=EXIT_PARSE):
        super().__init__(message)
        self.code = code


def _max_workers() -> int:
    raw = os.environ.get("L1ADAPT_THREADS", "")
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise CliError(f"L1ADAPT_THREADS must be an integer, got {raw!r}")
        if n < 1:
            raise CliError("L1ADAPT_THREADS must be >= 1")
        return n
    return min(4, os.cpu_count() or 1)


# ---------------------------------------------------------------------------
# transfer-function expression parsing ("160/(s+160)")
# ---------------------------------------------------------------------------

class _Ratio:
    """Ratio of polynomials in s supporting +, -, *, /, ** for parsing."""

    def __init__(self, num, den=None):
        self.num = num if isinstance(num, Polynomial) else Polynomial([float(num)])
        self.den = den if den is not None else Polynomial([1.0])

    @staticmethod
    def _lift(other):
        if isinstance(other, _Ratio):
            return other
        return _Ratio(float(other))

    def __add__(self, other):
        o = self._lift(other)
        return _Ratio(self.num * o.den + o.num * self.den, self.den * o.den)

    __radd__ = __add__

    def __neg__(self):
        return _Ratio(self.num * Polynomial([-1.0]), self.den)

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __rsub__(self, other):
        return self._lift(other) + (-self)

    def __mul__(self, other):
        o = self._lift(other)
        return _Ratio(self.num * o.num, self.den * o.den)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._lift(other)
        return _Ratio(self.num * o.den, self.den * o.num)

    def __rtruediv__(self, other):
        o = self._lift(other)
        return _Ratio(o.num * self.den, o.den * self.num)

    def __pow__(self, k):
        if not (isinstance(k, int) or (isinstance(k, float) and k.is_integer())):
            raise ValueError("only integer powers are supported")
        k = int(k)
        if k < 0:
            raise ValueError("negative powers are not supported")
        out = _Ratio(1.0)
        for _ in range(k):
            out = out * self
        return out


def parse_tf(expr: str) -> LtiSystem:
    """Parse a rational expression in s, e.g. '160/(s+160)' or '(s+1)**2/(s+2)**3'."""
    cleaned = expr.replace("^", "**")
    allowed = set("0123456789.+-*/()se ")
    if not set(cleaned) <= allowed:
        bad = "".join(sorted(set(cleaned) - allowed))
        raise CliError(f"unsupported characters in transfer function: {bad!r}")
    try:
        val = eval(cleaned, {"__builtins__": {}}, {"s": _Ratio(Polynomial([0.0, 1.0]))})
    except Exception as exc:
        raise CliError(f"cannot parse transfer function {expr!r}: {exc}")
    if not isinstance(val, _Ratio):
        val = _Ratio._lift(val)
    try:
        return LtiSystem.from_tf(val.num.coeffs, val.den.coeffs)
    except Exception as exc:
        raise CliError(f"invalid transfer function {expr!r}: {exc}")


# ---------------------------------------------------------------------------
# scenario files
# ---------------------------------------------------------------------------

def _get(table, key, path, required=True, default=None):
    if key not in table:
        if required:
            raise CliError(f"missing key [{path}] {key}")
        return default
    return table[key]


def _matrix(value, path):
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise CliError(f"[{path}] must be numeric")
    return arr


def parse_theta_spec(table, path):
    if "constant" in table:
        return ThetaTrajectory(_matrix(table["constant"], path + ".constant"))
    theta0 = _matrix(_get(table, "theta0", path), path + ".theta0")
    harmonics = _get(table, "harmonics", path, required=False, default=[])
    try:
        return ThetaTrajectory(theta0, harmonics or None)
    except (TypeError, ValueError) as exc:
        raise CliError(f"[{path}] invalid trajectory: {exc}")


def parse_plant(table):
    try:
        return PlantModel(
            _matrix(_get(table, "A", "plant"), "plant.A"),
            _matrix(_get(table, "b", "plant"), "plant.b"),
            _matrix(_get(table, "c", "plant"), "plant.c"),
            _matrix(_get(table, "omega_box", "plant"), "plant.omega_box"),
            parse_theta_spec(_get(table, "theta", "plant"), "plant.theta"))
    except ValueError as exc:
        raise CliError(f"[plant] {exc}")


def parse_filter_spec(table):
    kind = _get(table, "kind", "controller.filter")
    if kind in ("first_order", "third_order"):
        return (kind, float(_get(table, "omega", "controller.filter")))
    if kind == "explicit":
        num = _matrix(_get(table, "num", "controller.filter"), "controller.filter.num")
        den = _matrix(_get(table, "den", "controller.filter"), "controller.filter.den")
        try:
            return LtiSystem.from_tf(num, den)
        except ValueError as exc:
            raise CliError(f"[controller.filter] {exc}")
    raise CliError(f"[controller.filter] unknown kind {kind!r}")


def parse_controller(table, plant):
    arch = _get(table, "architecture", "controller")
    try:
        if arch == "highgain":
            return "highgain", build_highgain(plant, float(_get(table, "k", "controller")))
        K = _matrix(_get(table, "K", "controller"), "controller.K")
        gamma_c = float(_get(table, "gamma_c", "controller"))
        Q = _matrix(_get(table, "Q", "controller", required=False,
                         default=np.eye(plant.dim).tolist()), "controller.Q")
        if arch == "mrac":
            return "mrac", build_mrac(plant, K, gamma_c, Q)
        if arch == "l1":
            filt = parse_filter_spec(_get(table, "filter", "controller"))
            return "l1", build_l1(plant, K, filt, gamma_c, Q)
    except (ValueError, UnstableSystemError) as exc:
        raise CliError(f"[controller] {exc}")
    raise CliError(f"[controller] unknown architecture {arch!r}")


def parse_reference(table, path="scenario.reference"):
    kind = _get(table, "kind", path)
    amp = float(_get(table, "amplitude", path))
    try:
        if kind == "step":
            return ReferenceSignal("step", amp)
        if kind == "cosine":
            return ReferenceSignal("cosine", amp,
                                   float(_get(table, "frequency", path)))
    except ValueError as exc:
        raise CliError(f"[{path}] {exc}")
    raise CliError(f"[{path}] unknown kind {kind!r}")


def parse_scenario_block(table, cfg):
    horizon = float(_get(table, "horizon", "scenario"))
    ref = parse_reference(_get(table, "reference", "scenario"))
    dt = table.get("dt")
    if dt is None:
        if cfg is None:
            raise CliError("[scenario] dt is required for the high-gain architecture")
        dt = default_dt(cfg, amplitude=ref.amplitude)
        dt = horizon / max(1, round(horizon / dt))
    x0 = table.get("x0")
    try:
        return SimScenario(horizon=horizon, dt=float(dt), reference=ref,
                           input_delay=float(table.get("delay", 0.0)),
                           x0=None if x0 is None else _matrix(x0, "scenario.x0"))
    except ValueError as exc:
        raise CliError(f"[scenario] {exc}")


def load_scenario_file(path):
    p = Path(path)
    if not p.exists():
        raise CliError(f"scenario file not found: {path}")
    try:
        data = tomllib.loads(p.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise CliError(f"{path}: {exc}")
    plant = parse_plant(_get(data, "plant", "(root)"))
    arch, ctrl = parse_controller(_get(data, "controller", "(root)"), plant)
    cfg = ctrl if arch in ("l1", "mrac") else None
    scenario = parse_scenario_block(_get(data, "scenario", "(root)"), cfg)
    outputs = data.get("outputs", {})
    return plant, arch, ctrl, scenario, outputs


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

def _fmt(v) -> str:
    return f"{v:.12g}"


def trace_csv_lines(trace, n: int):
    cols = [("t", trace.t)]
    cols += [(f"x{i+1}", trace.x[:, i]) for i in range(n)]
    cols += [(f"xhat{i+1}", trace.x_hat[:, i]) for i in range(n)]
    cols += [(f"thetahat{i+1}", trace.theta_hat[:, i]) for i in range(n)]
    cols += [("u", trace.u), ("y", trace.y)]
    omitted = []
    if trace.x_ref is not None:
        cols += [(f"xref{i+1}", trace.x_ref[:, i]) for i in range(n)]
        cols += [("uref", trace.u_ref), ("yref", trace.y_ref)]
    else:
        omitted += [f"xref{i+1}" for i in range(n)] + ["uref", "yref"]
    if trace.y_des is not None:
        cols += [("ydes", trace.y_des), ("udes", trace.u_des)]
    else:
        omitted += ["ydes", "udes"]
    lines = []
    if omitted:
        lines.append("# omitted columns: " + ",".join(omitted))
    lines.append(",".join(name for name, _ in cols))
    data = np.column_stack([c for _, c in cols])
    for row in data:
        lines.append(",".join(_fmt(v) for v in row))
    return lines


def _write(path: Path, lines) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _assemble_sweep(grid, lams):
    from l1adapt.analysis import LambdaSweep
    crossing = None
    for i in range(len(grid) - 1):
        a, b = lams[i] - 1.0, lams[i + 1] - 1.0
        if a == 0.0:
            crossing = float(grid[i])
            break
        if a * b < 0.0:
            crossing = float(grid[i] - a * (grid[i + 1] - grid[i]) / (b - a))
            break
    return LambdaSweep(omegas=np.asarray(grid), lambdas=np.asarray(lams),
                       crossing=crossing)


def cmd_l1gain(args) -> int:
    if args.tf:
        sys_ = parse_tf(args.tf)
    elif args.gbar:
        kind, omega = args.gbar
        from l1adapt.analysis import gbar_system
        plant = benchmark_plant()
        if kind not in ("first_order", "third_order"):
            raise CliError(f"unknown filter kind {kind!r}")
        try:
            cfg = build_l1(plant, np.zeros(2), (kind, float(omega)), 1.0,
                           np.eye(2))
        except ValueError as exc:
            raise CliError(str(exc))
        sys_ = gbar_system(cfg)
    else:
        raise CliError("provide --tf EXPR or --gbar KIND OMEGA")
    try:
        gain = l1_gain(sys_)
    except UnstableSystemError as exc:
        raise CliError(str(exc))
    print(_fmt(gain))
    return EXIT_OK


def cmd_design(args) -> int:
    if args.scenario:
        plant, arch, ctrl, _, _ = load_scenario_file(args.scenario)
        if arch == "highgain":
            raise CliError("design analysis applies to the l1/mrac architectures")
        cfg = ctrl
    else:
        plant = benchmark_plant()
        cfg = None

    if args.sweep:
        lo, hi, npts = args.sweep
        if not (lo > 0 and hi > lo and int(npts) >= 2):
            raise CliError("--sweep needs 0 < LO < HI and N >= 2")
        grid = np.geomspace(lo, hi, int(npts))
        kind = args.filter_kind
        workers = _max_workers()
        if workers > 1:
            # per-point gains are independent; chunk the grid across threads
            chunks = [c for c in np.array_split(grid, workers) if len(c)]
            with ThreadPoolExecutor(max_workers=workers) as ex:
                parts = list(ex.map(lambda c: lambda_sweep(plant, kind, c).lambdas,
                                    chunks))
            sweep = _assemble_sweep(grid, np.concatenate(parts))
        else:
            sweep = lambda_sweep(plant, kind, grid)
        lines = ["omega,lambda"]
        lines += [f"{_fmt(w)},{_fmt(l)}" for w, l in zip(sweep.omegas, sweep.lambdas)]
        if args.out:
            _write(Path(args.out), lines)
        else:
            print("\n".join(lines))
        if sweep.crossing is None:
            print("# no lambda = 1 crossing on the grid")
        else:
            print(f"# lambda = 1 crossing at omega = {_fmt(sweep.crossing)}")
        return EXIT_OK

    if cfg is None:
        raise CliError("provide a scenario file or --sweep")
    lam = compute_lambda(plant, cfg)
    if lam < 1.0:
        print(f"lambda = {_fmt(lam)} < 1: feasible")
        return EXIT_OK
    print(f"lambda = {_fmt(lam)} >= 1: infeasible")
    return EXIT_INFEASIBLE


def cmd_simulate(args) -> int:
    plant, arch, ctrl, scenario, outputs = load_scenario_file(args.scenario)
    outdir = Path(args.out or outputs.get("directory", "."))
    series = outputs.get("series", ["reference", "design"])
    if arch == "highgain":
        trace = simulate_highgain(plant, ctrl, scenario)
        _write(outdir / "trace.csv", trace_csv_lines(trace, plant.dim))
        print(f"wrote {outdir / 'trace.csv'}")
        return EXIT_OK
    cfg = ctrl
    lam = compute_lambda(plant, cfg)
    if arch == "l1" and lam >= 1.0:
        print(f"lambda = {_fmt(lam)} >= 1: infeasible design", file=sys.stderr)
        return EXIT_INFEASIBLE
    with_design = "design" in series and plant.theta_traj.is_constant
    trace = run_scenario(plant, cfg, scenario,
                         with_reference="reference" in series,
                         with_design=with_design)
    _write(outdir / "trace.csv", trace_csv_lines(trace, plant.dim))
    rep = bounds_report(plant, cfg)
    if trace.x_ref is not None and rep.feasible:
        rep = verify_trace(trace, rep)
    _write(outdir / "bounds.txt", rep.lines())
    print(f"wrote {outdir / 'trace.csv'} and {outdir / 'bounds.txt'}")
    return EXIT_OK


def cmd_margin(args) -> int:
    gammas = args.gammas
    if any(g <= 0 for g in gammas):
        raise CliError("gamma values must be positive")
    if sorted(gammas) != list(gammas) or len(set(gammas)) != len(gammas):
        raise CliError("gamma values must be strictly ascending")
    C_spec = parse_tf(args.filter) if args.filter else None
    curve = margin_curve(gammas, k=args.k, a_m=args.a_m, C_spec=C_spec,
                         tau_max=args.tau_max)
    lines = ["gamma,tau_mrac,tau_l1"]
    lines += [f"{_fmt(g)},{_fmt(tm)},{_fmt(tl)}"
              for g, tm, tl in zip(curve.gamma_values, curve.tau_mrac,
                                   curve.tau_l1)]
    if args.out:
        _write(Path(args.out), lines)
        print(f"wrote {args.out}")
    else:
        print("\n".join(lines))
    return EXIT_OK


def _repro_steps(outdir: Path) -> int:
    plant = benchmark_plant()
    cfg = benchmark_config_first(plant)
    rep = bounds_report(plant, cfg)
    for amp in (25.0, 100.0, 400.0):
        scenario = benchmark_scenario(cfg, ReferenceSignal("step", amp))
        trace = run_scenario(plant, cfg, scenario)
        _write(outdir / f"step_{int(amp)}.csv", trace_csv_lines(trace, plant.dim))
        rep = verify_trace(trace, rep)
    _write(outdir / "bounds.txt", rep.lines())
    print(f"wrote step_25/100/400.csv and bounds.txt in {outdir}")
    return EXIT_OK


def _repro_timevarying(outdir: Path) -> int:
    plant = benchmark_plant(time_varying=True)
    cfg = benchmark_config_first(plant)
    scenario = benchmark_scenario(cfg, ReferenceSignal("cosine", 100.0, 0.2),
                                  horizon=20.0)
    trace = run_scenario(plant, cfg, scenario)
    _write(outdir / "timevarying.csv", trace_csv_lines(trace, plant.dim))
    rep = verify_trace(trace, bounds_report(plant, cfg))
    _write(outdir / "bounds.txt", rep.lines())
    print(f"wrote timevarying.csv and bounds.txt in {outdir}")
    return EXIT_OK


def _repro_thirdorder(outdir: Path) -> int:
    plant = benchmark_plant()
    cfg = benchmark_config_third(plant)
    scenario = benchmark_scenario(cfg, ReferenceSignal("step", 100.0))
    trace = run_scenario(plant, cfg, scenario)
    _write(outdir / "thirdorder.csv", trace_csv_lines(trace, plant.dim))
    rep = verify_trace(trace, bounds_report(plant, cfg))
    _write(outdir / "bounds.txt", rep.lines())
    print(f"wrote thirdorder.csv and bounds.txt in {outdir}")
    return EXIT_OK


_REPRO = {"fig4": _repro_steps, "fig6": _repro_timevarying,
          "fig7": _repro_thirdorder}


def cmd_repro(args) -> int:
    outdir = Path(args.out or f"repro_{args.preset}")
    return _REPRO[args.preset](outdir)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="l1adapt",
        description="Simulation and verification toolkit for filtered "
                    "fast-adaptation controllers")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("l1gain", help="L1 gain of a transfer function")
    g.add_argument("--tf", help="rational expression in s, e.g. '1/(s+160)'")
    g.add_argument("--gbar", nargs=2, metavar=("KIND", "OMEGA"),
                   help="gain of the benchmark loop term for a filter family")
    g.set_defaults(func=cmd_l1gain)

    d = sub.add_parser("design", help="feasibility verdict and lambda sweeps")
    d.add_argument("scenario", nargs="?", help="scenario TOML file")
    d.add_argument("--sweep", nargs=3, type=float, metavar=("LO", "HI", "N"))
    d.add_argument("--filter-kind", default="first_order",
                   choices=["first_order", "third_order"])
    d.add_argument("--out", help="CSV output path")
    d.set_defaults(func=cmd_design)

    s = sub.add_parser("simulate", help="run a scenario file")
    s.add_argument("scenario")
    s.add_argument("--out", help="output directory")
    s.set_defaults(func=cmd_simulate)

    m = sub.add_parser("margin", help="time-delay margin vs adaptation gain")
    m.add_argument("--gammas", nargs="+", type=float,
                   default=[10.0, 100.0, 1000.0, 10000.0])
    m.add_argument("--k", type=float, default=2.0)
    m.add_argument("--a-m", dest="a_m", type=float, default=-1.0)
    m.add_argument("--filter", help="low-pass C(s) expression (default 1/(s+1))")
    m.add_argument("--tau-max", type=float, default=10.0)
    m.add_argument("--out", help="CSV output path")
    m.set_defaults(func=cmd_margin)

    r = sub.add_parser("repro", help="run a built-in benchmark preset")
    r.add_argument("preset", choices=sorted(_REPRO))
    r.add_argument("--out", help="output directory")
    r.set_defaults(func=cmd_repro)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except DesignInfeasible as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except SimulationDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
