"""Config parsing, batch runners, and the ``b4`` command line.

The runners read a flat ``key = value`` config file, drive the solver
and analysis modules, and write plain CSV files with 17 significant
digits, so repeated serial runs with the same config and seed produce
byte-identical output.
"""

from __future__ import annotations

import os


def _cap_threads():
    """Apply B4_THREADS before numpy (and its BLAS) is imported."""
    cap = os.environ.get("B4_THREADS")
    if cap is None:
        return None
    if not cap.isdigit() or int(cap) < 1:
        return f"B4_THREADS must be a positive integer, got {cap!r}"
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        os.environ.setdefault(var, cap)
    return None


_THREAD_CAP_ERROR = _cap_threads()

import argparse
import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .functionals import (
    InfeasibleError,
    brqp_matrix,
    coupling_constants,
    feasible_triple,
    sequences_for_triple,
    sylvester_minors,
)
from .model import BC_NEUMANN, BC_TAGS, SystemParams, stationary_solution
from .solver import (
    BlowUpError,
    Grid,
    SolverConfig,
    initial_condition,
    load_checkpoint,
    save_checkpoint,
    simulate,
    stability_limit,
)
from .spectral import dimension_bounds
from .tsa import (
    AnalysisConfig,
    albano_dimension,
    autocorrelation,
    correlation_integral,
    embed,
    embedding_stride,
    largest_lyapunov,
    radii_grid,
    svd_reduce,
    theiler_window,
)


class ConfigError(ValueError):
    """Malformed, unknown, or out-of-range config input."""


@dataclass(frozen=True)
class RunConfig:
    """Flat bag of every run setting, one attribute per config key.

    ``dt = None`` means "choose automatically from the stability
    limit"; ``theiler = None`` means "use the default exclusion window
    derived from the embedding".
    """

    alpha: float = 2.0
    beta: float = 5.5
    D1: float = 0.0126
    D2: float = 0.126
    D3: float = 0.0125
    D4: float = 0.125
    a: float = 1e-6
    b: float = 1e-6
    c: float = 1e-6
    d: float = 1e-6
    nx: int = 200
    ny: int = 200
    Lx: float = 500.0
    Ly: float = 500.0
    bc: str = BC_NEUMANN
    dt: float | None = None
    t_end: float = 10000.0
    record_every: int = 24
    probe_ix: int = 0
    probe_iy: int = 0
    ic_amplitude: float = 1e-3
    ic_seed: int = 0
    snapshot_every: int = 0
    resume_from: str = ""
    out_dir: str = "b4_out"
    threshold: float = 1e-2
    m_max: int = 50
    theiler: int | None = None
    series_file: str = ""
    series_column: str = "u"
    N: int = 2
    K_prime: float = 1.0
    K1: float = 1.0
    C_upper: float = 1.0
    max_modes: int = 1000

    def system_params(self):
        return SystemParams(
            alpha=self.alpha,
            beta=self.beta,
            D1=self.D1,
            D2=self.D2,
            D3=self.D3,
            D4=self.D4,
            a=self.a,
            b=self.b,
            c=self.c,
            d=self.d,
        )

    def grid(self):
        # Nodes sit on the domain ends, so spacing is L/(n-1); a
        # single-node direction keeps the full length as a placeholder.
        dx = self.Lx / (self.nx - 1) if self.nx > 1 else self.Lx
        dy = self.Ly / (self.ny - 1) if self.ny > 1 else self.Ly
        return Grid(self.nx, self.ny, dx, dy, self.bc)

    def analysis_config(self, sample_interval=1.0):
        return AnalysisConfig(
            threshold=self.threshold,
            m_max=self.m_max,
            theiler=self.theiler,
            sample_interval=sample_interval,
        )


@dataclass(frozen=True)
class _KeySpec:
    kind: str
    check: str = ""


_KEYS = {
    # reaction and diffusion parameters
    "alpha": _KeySpec("float", "positive"),
    "beta": _KeySpec("float", "positive"),
    "D1": _KeySpec("float", "nonneg"),
    "D2": _KeySpec("float", "nonneg"),
    "D3": _KeySpec("float", "nonneg"),
    "D4": _KeySpec("float", "nonneg"),
    "a": _KeySpec("float", "positive"),
    "b": _KeySpec("float", "positive"),
    "c": _KeySpec("float", "positive"),
    "d": _KeySpec("float", "positive"),
    # grid and boundary condition
    "nx": _KeySpec("int", "ge1"),
    "ny": _KeySpec("int", "ge1"),
    "Lx": _KeySpec("float", "positive"),
    "Ly": _KeySpec("float", "positive"),
    "bc": _KeySpec("str", "bc"),
    # time stepping and output
    "dt": _KeySpec("float_or_auto", "positive"),
    "t_end": _KeySpec("float", "positive"),
    "record_every": _KeySpec("int", "ge1"),
    "probe_ix": _KeySpec("int", "nonneg"),
    "probe_iy": _KeySpec("int", "nonneg"),
    "ic_amplitude": _KeySpec("float", "nonneg"),
    "ic_seed": _KeySpec("int", "u64"),
    "snapshot_every": _KeySpec("int", "nonneg"),
    "resume_from": _KeySpec("str"),
    "out_dir": _KeySpec("str"),
    # time-series analysis
    "threshold": _KeySpec("float", "nonneg"),
    "m_max": _KeySpec("int", "ge2"),
    "theiler": _KeySpec("int_or_auto", "nonneg"),
    "series_file": _KeySpec("str"),
    "series_column": _KeySpec("str", "column"),
    # dimension bounds and feasibility
    "N": _KeySpec("int", "n123"),
    "K_prime": _KeySpec("float", "positive"),
    "K1": _KeySpec("float", "positive"),
    "C_upper": _KeySpec("float", "positive"),
    "max_modes": _KeySpec("int", "ge1"),
}

_DEFAULTS = RunConfig()

_CHECKS = {
    "positive": (lambda v: v > 0, "must be positive"),
    "nonneg": (lambda v: v >= 0, "must be non-negative"),
    "ge1": (lambda v: v >= 1, "must be at least 1"),
    "ge2": (lambda v: v >= 2, "must be at least 2"),
    "u64": (lambda v: 0 <= v < 2**64, "must fit in an unsigned 64-bit integer"),
    "bc": (lambda v: v in BC_TAGS, f"must be one of {sorted(BC_TAGS)}"),
    "column": (lambda v: v in ("u", "v", "w", "z"), "must be one of u, v, w, z"),
    "n123": (lambda v: v in (1, 2, 3), "must be 1, 2, or 3"),
}


def _convert(name, spec, raw):
    if spec.kind.endswith("_or_auto") and raw == "auto":
        return None
    if spec.kind.startswith("float"):
        try:
            value = float(raw)
        except ValueError:
            raise ValueError(f"cannot parse {raw!r} as a number for {name}")
        if not math.isfinite(value):
            raise ValueError(f"{name} must be finite, got {raw!r}")
    elif spec.kind.startswith("int"):
        try:
            value = int(raw)
        except ValueError:
            raise ValueError(f"cannot parse {raw!r} as an integer for {name}")
    else:
        value = raw
    if spec.check:
        ok, message = _CHECKS[spec.check]
        if not ok(value):
            raise ValueError(f"{name} {message}, got {raw!r}")
    return value


def parse_config(text):
    """Parse ``key = value`` lines into a RunConfig.

    Blank lines and ``#`` comments are ignored.  Unknown keys,
    malformed lines, and out-of-range values raise ConfigError naming
    the line number.  Missing keys fall back to the defaults: the
    reference parameter table on a 200x200 grid of side 500, with dt
    picked automatically from the stability limit.  A repeated key
    keeps its last value.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key = key.strip()
        try:
            spec = _KEYS[key]
        except KeyError:
            raise ConfigError(f"line {lineno}: unknown key {key!r}") from None
        try:
            values[key] = _convert(key, spec, value.strip())
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    merged = {name: getattr(_DEFAULTS, name) for name in _KEYS}
    merged.update(values)
    return RunConfig(**merged)


def serialize(config):
    """Render a RunConfig as config text; parse_config round-trips it."""
    lines = []
    for name in _KEYS:
        value = getattr(config, name)
        if value is None:
            text = "auto"
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{name} = {text}")
    return "\n".join(lines) + "\n"


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.17g}"


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _auto_dt(params, nx, ny, dx, dy):
    ex = dx if nx > 1 else math.inf
    ey = dy if ny > 1 else math.inf
    return min(1.0 / 24.0, stability_limit(params, ex, ey))


def _snapshot_path(out, t):
    return out / f"snapshot_{t:g}.csv"


def _write_snapshot(path, state):
    xs = np.arange(state.nx) * state.dx
    ys = np.arange(state.ny) * state.dy
    with open(path, "w") as fh:
        fh.write("x,y,u,v,w,z\n")
        for i in range(state.nx):
            x_text = _fmt(xs[i])
            for j in range(state.ny):
                cells = (
                    x_text,
                    _fmt(ys[j]),
                    _fmt(state.u[i, j]),
                    _fmt(state.v[i, j]),
                    _fmt(state.w[i, j]),
                    _fmt(state.z[i, j]),
                )
                fh.write(",".join(cells) + "\n")


def run_simulate(config):
    """Integrate the configured system and write its CSV outputs.

    Files land in ``config.out_dir``: probe.csv and norms.csv hold one
    row per record_every steps, snapshot_<t>.csv field dumps appear
    when snapshot_every is set, and checkpoint.ck captures the final
    state.  With resume_from pointing at a checkpoint, new rows are
    appended to the existing files and the stitched trajectory is
    bit-identical to an uninterrupted run.  Returns the written paths.
    """
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    resuming = bool(config.resume_from)
    if resuming:
        state, params, start_step, start_t = load_checkpoint(config.resume_from)
        grid = config.grid()
        found = (state.nx, state.ny, state.bc)
        wanted = (grid.nx, grid.ny, grid.bc)
        if found != wanted:
            raise ConfigError(
                f"checkpoint grid {found} does not match the config grid {wanted}"
            )
    else:
        params = config.system_params()
        grid = config.grid()
        state = initial_condition(
            grid, stationary_solution(params), config.ic_amplitude, config.ic_seed
        )
        start_step = 0
        start_t = -math.inf

    dt = config.dt
    if dt is None:
        dt = _auto_dt(params, state.nx, state.ny, state.dx, state.dy)
    limit = stability_limit(
        params,
        state.dx if state.nx > 1 else math.inf,
        state.dy if state.ny > 1 else math.inf,
    )
    if dt > limit:
        raise ConfigError(f"dt = {dt:g} exceeds the stability limit {limit:g}")
    if not (0 <= config.probe_ix < state.nx and 0 <= config.probe_iy < state.ny):
        raise ConfigError(
            f"probe ({config.probe_ix}, {config.probe_iy}) is outside the "
            f"{state.nx}x{state.ny} grid"
        )

    total_steps = round(config.t_end / dt)
    if total_steps <= start_step:
        raise ConfigError(
            f"t_end = {config.t_end:g} is not past the checkpoint step {start_step}"
        )

    snap = config.snapshot_every
    boundaries = {total_steps}
    if snap > 0:
        first = snap * (start_step // snap + 1)
        boundaries.update(range(first, total_steps + 1, snap))

    def _open(path, header):
        if resuming and path.exists():
            return open(path, "a")
        fh = open(path, "w")
        fh.write(header + "\n")
        return fh

    probe_path = out / "probe.csv"
    norms_path = out / "norms.csv"
    written = [probe_path, norms_path]
    # Weight of the second oscillator pair in the paired-norm monitor.
    delta = params.D2 / params.D4 if params.D4 > 0 else math.nan

    fh_probe = _open(probe_path, "t,u,v,w,z")
    fh_norms = _open(
        norms_path,
        "t,l2_u,l2_v,l2_w,l2_z,grad_l2_u,grad_l2_v,grad_l2_w,grad_l2_z,"
        "L2_functional,K2_functional",
    )
    try:
        if snap > 0 and not resuming:
            path = _snapshot_path(out, 0.0)
            _write_snapshot(path, state)
            written.append(path)
        current = state
        offset = start_step
        last_t = start_t
        for b in sorted(boundaries):
            seg = SolverConfig(
                dt=dt,
                t_end=b * dt,
                record_every=config.record_every,
                probe=(config.probe_ix, config.probe_iy),
            )
            result = simulate(current, params, seg, step_offset=offset)
            for rec in result.records:
                if rec.t <= last_t:
                    continue
                pv = rec.probe_values
                fh_probe.write(
                    ",".join(_fmt(v) for v in (rec.t, pv.u, pv.v, pv.w, pv.z)) + "\n"
                )
                l2 = rec.l2_norms
                summed = sum(x * x for x in l2)
                paired = l2[1] ** 2 + delta * l2[3] ** 2
                fh_norms.write(
                    ",".join(
                        _fmt(v)
                        for v in (rec.t, *l2, *rec.grad_l2_norms, summed, paired)
                    )
                    + "\n"
                )
                last_t = rec.t
            current = result.final_state
            offset = b
            if snap > 0 and b % snap == 0:
                path = _snapshot_path(out, b * dt)
                _write_snapshot(path, current)
                written.append(path)
    finally:
        fh_probe.close()
        fh_norms.close()

    ck_path = out / "checkpoint.ck"
    save_checkpoint(ck_path, current, params, offset, offset * dt)
    written.append(ck_path)
    return written


def _all_floats(tokens):
    try:
        for tok in tokens:
            float(tok)
    except ValueError:
        return False
    return True


def _read_series(path, column):
    """Read one column of a series file as (values, sample spacing).

    Accepts a headered CSV (column picked by name, spacing taken from a
    ``t`` column when present) or a headerless single-column file.
    Non-numeric data raises ConfigError naming the offending row.
    """
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read series file: {exc}") from None
    numbered = [
        (n, line.strip())
        for n, line in enumerate(text.splitlines(), 1)
        if line.strip()
    ]
    if not numbered:
        raise ConfigError(f"series file {path} is empty")

    first_tokens = [tok.strip() for tok in numbered[0][1].split(",")]
    if _all_floats(first_tokens):
        if len(first_tokens) != 1:
            raise ConfigError(
                f"{path}: headerless series files must have a single column"
            )
        col, tcol, width = 0, None, 1
        data = numbered
    else:
        header = first_tokens
        if column not in header:
            raise ConfigError(f"column {column!r} not found in {path} header {header}")
        col = header.index(column)
        tcol = header.index("t") if "t" in header else None
        width = len(header)
        data = numbered[1:]

    values = np.empty(len(data))
    times = np.empty(len(data)) if tcol is not None else None
    for k, (lineno, line) in enumerate(data):
        tokens = line.split(",")
        if len(tokens) != width:
            raise ConfigError(
                f"{path} row {lineno}: expected {width} columns, got {len(tokens)}"
            )
        try:
            values[k] = float(tokens[col])
            if times is not None:
                times[k] = float(tokens[tcol])
        except ValueError:
            raise ConfigError(
                f"{path} row {lineno}: non-numeric value in {line!r}"
            ) from None

    interval = 1.0
    if times is not None and times.size >= 2:
        interval = float(np.median(np.diff(times)))
        if interval <= 0:
            raise ConfigError(f"{path}: time column must be increasing")
    return values, interval


def run_analyze(series_file, config):
    """Run the full series pipeline and write acf/cint/report CSVs.

    ``series_file`` falls back to probe.csv in the output directory.
    The series must hold at least 1000 samples.  Returns the written
    paths.
    """
    path = Path(series_file) if series_file else Path(config.out_dir) / "probe.csv"
    x, file_dt = _read_series(path, config.series_column)
    if x.size < 1000:
        raise ConfigError(f"need at least 1000 samples to analyze, got {x.size}")

    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    acfg = config.analysis_config()

    acf = autocorrelation(x, min(acfg.max_lag, x.size - 1))
    acf_path = out / "acf.csv"
    _write_csv(acf_path, ["lag", "acf"], enumerate(acf.tolist()))

    report = albano_dimension(x, acfg)
    stride = embedding_stride(x.size, acfg)
    emb = embed(x, report.m_used, report.tau, stride)
    coords, _, _ = svd_reduce(emb, acfg.threshold)
    radii = radii_grid(coords, acfg)
    C = correlation_integral(
        coords, radii, theiler_window(acfg, report.tau, report.m_used, stride)
    )
    cint_path = out / "cint.csv"
    cint_rows = [
        (r, c, math.log10(r), math.log10(c) if c > 0 else math.nan)
        for r, c in zip(radii.tolist(), C.tolist())
    ]
    _write_csv(cint_path, ["r", "C", "log10_r", "log10_C"], cint_rows)

    lyap_cfg = replace(acfg, sample_interval=file_dt * stride)
    lam = largest_lyapunov(x, (report.m_used, report.tau, stride), lyap_cfg)

    report_path = out / "report.csv"
    r_lo, r_hi = report.scaling_region
    _write_csv(
        report_path,
        ["d", "m", "tau", "r_lo", "r_hi", "fit_r2", "lambda1"],
        [(report.d, report.m_used, report.tau, r_lo, r_hi, report.fit_r2, lam)],
    )
    return [acf_path, cint_path, report_path]


def run_bounds(config):
    """Write the attractor-dimension bracket for the configured system."""
    params = config.system_params()
    one_d = config.N == 1
    report = dimension_bounds(
        params,
        config.N,
        K_prime=config.K_prime,
        K1=config.K1,
        C_upper=config.C_upper,
        omega_volume=config.Lx if one_d else config.Lx * config.Ly,
        Lx=config.Lx,
        Ly=None if one_d else config.Ly,
        max_modes=config.max_modes,
    )
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "bounds.csv"
    _write_csv(
        path,
        ["base", "lower", "trace_count", "full_count", "upper"],
        [
            (
                float(report.lower_bound_base),
                float(report.lower),
                report.trace_unstable_count,
                report.full_unstable_count,
                report.upper,
            )
        ],
    )
    return [path]


def run_feasibility(config):
    """Write the coupling report and quadratic-form positivity sweep.

    The sweep builds the order-6 coefficient sequences for a generator
    triple found from the diffusion ratios and checks every admissible
    index combination for positive definiteness.
    """
    params = config.system_params()
    A = coupling_constants(params.a, params.b, params.c, params.d)
    triple = feasible_triple(A)
    theta2, sigma2, rho2 = triple
    seqs = sequences_for_triple(triple, 6)
    ok = True
    for p in range(5):
        for q in range(p + 1):
            for r in range(q + 1):
                matrix = brqp_matrix(r, q, p, seqs, params.a, params.b, params.c, params.d)
                ok = ok and sylvester_minors(matrix).all_positive

    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "feasibility.csv"
    _write_csv(
        path,
        [
            "A12",
            "A13",
            "A14",
            "A23",
            "A24",
            "A34",
            "theta2",
            "sigma2",
            "rho2",
            "all_minors_positive",
        ],
        [(A.A12, A.A13, A.A14, A.A23, A.A24, A.A34, theta2, sigma2, rho2, ok)],
    )
    return [path]


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="b4",
        description=(
            "Four-species reaction-diffusion toolbox: simulation, "
            "time-series analysis, and attractor-dimension bounds."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "simulate": "integrate the system and write probe/norm CSV files",
        "analyze": "estimate delay, dimension, and the top Lyapunov exponent",
        "bounds": "write the attractor-dimension bracket",
        "feasibility": "write the coupling report and positivity sweep",
    }
    for name, help_text in helps.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to a key = value config file")
        p.add_argument("--out", help="output directory (overrides out_dir)")
        p.add_argument("--seed", type=int, help="initial-condition seed (overrides ic_seed)")
    return parser


def main(argv=None):
    if _THREAD_CAP_ERROR is not None:
        print(f"b4: {_THREAD_CAP_ERROR}", file=sys.stderr)
        return 1
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        # argparse exits with 2 on usage problems; fold that into the
        # single usage/config failure code and keep 0 for --help.
        return 0 if exc.code == 0 else 1

    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("b4: --seed must fit in an unsigned 64-bit integer", file=sys.stderr)
        return 1

    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        print(f"b4: cannot read config: {exc}", file=sys.stderr)
        return 1
    try:
        config = parse_config(text)
    except ConfigError as exc:
        print(f"b4: {exc}", file=sys.stderr)
        return 1

    overrides = {}
    if args.out is not None:
        overrides["out_dir"] = args.out
    if args.seed is not None:
        overrides["ic_seed"] = args.seed
    if overrides:
        config = replace(config, **overrides)

    runners = {
        "simulate": lambda: run_simulate(config),
        "analyze": lambda: run_analyze(config.series_file, config),
        "bounds": lambda: run_bounds(config),
        "feasibility": lambda: run_feasibility(config),
    }
    try:
        files = runners[args.command]()
    except ConfigError as exc:
        print(f"b4: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"b4: {exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"b4: numerical failure: {exc}", file=sys.stderr)
        return 2

    for path in files:
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
