"""Explicit finite-difference solver for the four-compartment model.

The scheme is forward Euler in time with a five-point Laplacian in
space.  All four fields advance simultaneously from the previous
state.  No-flux boundaries use ghost-node reflection (the ghost value
mirrors the first interior node), zero boundaries use zero ghosts.
"""

import math
import struct
from dataclasses import dataclass

import numpy as np

from .model import (
    BC_DIRICHLET0,
    BC_NEUMANN,
    BC_TAGS,
    GridState,
    Point4,
    SystemParams,
    reaction_fields,
    validate_params,
)

BLOWUP_LIMIT = 1e12

_CHECKPOINT_MAGIC = b"B4CK"
_CHECKPOINT_VERSION = 1
_BC_CODES = {BC_NEUMANN: 0, BC_DIRICHLET0: 1}
_BC_NAMES = {code: tag for tag, code in _BC_CODES.items()}
_PARAM_ORDER = ("alpha", "beta", "D1", "D2", "D3", "D4", "a", "b", "c", "d")


class BlowUpError(RuntimeError):
    """A field left the trusted range (non-finite or above BLOWUP_LIMIT)."""

    def __init__(self, message, t=None, step_index=None, max_abs=None, field_maxima=None):
        super().__init__(message)
        self.t = t
        self.step_index = step_index
        self.max_abs = max_abs
        self.field_maxima = field_maxima


@dataclass(frozen=True)
class Grid:
    """Grid geometry: extents, spacings and the boundary treatment."""

    nx: int
    ny: int
    dx: float
    dy: float
    bc: str = BC_NEUMANN

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid extents must be at least 1")
        if not (self.dx > 0 and math.isfinite(self.dx)):
            raise ValueError("dx must be positive and finite")
        if not (self.dy > 0 and math.isfinite(self.dy)):
            raise ValueError("dy must be positive and finite")
        if self.bc not in BC_TAGS:
            raise ValueError(f"unknown boundary tag {self.bc!r}")


@dataclass(frozen=True)
class SolverConfig:
    dt: float
    t_end: float
    record_every: int = 1
    probe: tuple = (0, 0)
    ic_amplitude: float = 1e-3
    ic_seed: int = 0

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("dt must be positive")
        if not (self.t_end > 0 and math.isfinite(self.t_end)):
            raise ValueError("t_end must be positive")
        if self.record_every < 1:
            raise ValueError("record_every must be at least 1")
        ix, iy = self.probe
        if ix < 0 or iy < 0:
            raise ValueError("probe indices must be nonnegative")
        if self.ic_amplitude < 0:
            raise ValueError("ic_amplitude must be nonnegative")
        if self.ic_seed < 0:
            raise ValueError("ic_seed must be nonnegative")


@dataclass(frozen=True)
class ObservableRecord:
    t: float
    probe_values: Point4
    l2_norms: tuple
    grad_l2_norms: tuple
    mins: tuple
    maxs: tuple


@dataclass(frozen=True)
class SimulationResult:
    """Trajectory records plus the probe series at solver resolution."""

    records: list
    probe_series: np.ndarray
    final_state: GridState
    final_step: int


def _check_extent(n):
    if n != 1 and n < 3:
        raise ValueError("simulated directions need at least 3 grid points")


def _axis_second_difference(field, axis, spacing, bc):
    pad = [(0, 0), (0, 0)]
    pad[axis] = (1, 1)
    if bc == BC_NEUMANN:
        padded = np.pad(field, pad, mode="reflect")
    else:
        padded = np.pad(field, pad, mode="constant")
    if axis == 0:
        diff = padded[2:, :] + padded[:-2, :] - 2.0 * padded[1:-1, :]
    else:
        diff = padded[:, 2:] + padded[:, :-2] - 2.0 * padded[:, 1:-1]
    return diff / spacing**2


def laplacian(field, dx, dy, bc=BC_NEUMANN):
    """Five-point Laplacian; directions of extent one are skipped."""
    field = np.asarray(field, dtype=float)
    if field.ndim != 2:
        raise ValueError("field must be 2-d (use extent 1 for a flat direction)")
    if bc not in BC_TAGS:
        raise ValueError(f"unknown boundary tag {bc!r}")
    _check_extent(field.shape[0])
    _check_extent(field.shape[1])
    out = np.zeros_like(field)
    if field.shape[0] > 1:
        out += _axis_second_difference(field, 0, dx, bc)
    if field.shape[1] > 1:
        out += _axis_second_difference(field, 1, dy, bc)
    return out


def stability_limit(params, dx, dy=math.inf):
    """Largest admissible forward-Euler step for these parameters.

    The diffusive bound is the usual one for the five-point stencil;
    the reaction bound is a conservative linearization scale.
    """
    bad = validate_params(params)
    if bad:
        raise ValueError(f"invalid parameters: {', '.join(bad)}")
    inv_h2 = (0.0 if math.isinf(dx) else 1.0 / dx**2) + (
        0.0 if math.isinf(dy) else 1.0 / dy**2
    )
    if inv_h2 == 0.0:
        diffusive = math.inf
    else:
        diffusive = 1.0 / (2.0 * max(params.a, params.b, params.c, params.d) * inv_h2)
    reaction = 0.5 / (params.beta + 1.0 + max(params.D1, params.D2, params.D3, params.D4))
    return min(diffusive, reaction)


def _advance(u, v, w, z, params, dt, dx, dy, bc):
    f, g, h, k = reaction_fields(u, v, w, z, params)
    un = u + dt * (params.a * laplacian(u, dx, dy, bc) + f)
    vn = v + dt * (params.b * laplacian(v, dx, dy, bc) + g)
    wn = w + dt * (params.c * laplacian(w, dx, dy, bc) + h)
    zn = z + dt * (params.d * laplacian(z, dx, dy, bc) + k)
    return un, vn, wn, zn


def _field_maxima(u, v, w, z):
    return tuple(float(np.max(np.abs(f))) for f in (u, v, w, z))


def _fields_ok(maxima):
    # np.max propagates NaN into the per-field maxima, but Python's max
    # can then skip it depending on argument order; scan explicitly.
    if any(math.isnan(m) for m in maxima):
        return False, math.nan
    overall = max(maxima)
    return math.isfinite(overall) and overall <= BLOWUP_LIMIT, overall


def step(state, params, dt):
    """One explicit step; all four fields update from the same state."""
    u, v, w, z = _advance(
        state.u, state.v, state.w, state.z, params, dt, state.dx, state.dy, state.bc
    )
    maxima = _field_maxima(u, v, w, z)
    ok, overall = _fields_ok(maxima)
    if not ok:
        raise BlowUpError(
            f"field magnitude reached {overall:.3e} after one step",
            max_abs=overall,
            field_maxima=maxima,
        )
    return GridState(state.nx, state.ny, state.dx, state.dy, u, v, w, z, state.bc)


def _l2_norm(field, cell_area):
    return math.sqrt(float(np.sum(field * field)) * cell_area)


def _grad_l2_norm(field, dx, dy):
    acc = 0.0
    if field.shape[0] > 1:
        gx = np.diff(field, axis=0) / dx
        acc += float(np.sum(gx * gx))
    if field.shape[1] > 1:
        gy = np.diff(field, axis=1) / dy
        acc += float(np.sum(gy * gy))
    return math.sqrt(acc * dx * dy)


def _make_record(t, ix, iy, fields, dx, dy):
    cell = dx * dy
    u, v, w, z = fields
    return ObservableRecord(
        t=t,
        probe_values=Point4(
            float(u[ix, iy]), float(v[ix, iy]), float(w[ix, iy]), float(z[ix, iy])
        ),
        l2_norms=tuple(_l2_norm(f, cell) for f in fields),
        grad_l2_norms=tuple(_grad_l2_norm(f, dx, dy) for f in fields),
        mins=tuple(float(f.min()) for f in fields),
        maxs=tuple(float(f.max()) for f in fields),
    )


def simulate(state0, params, cfg, step_offset=0):
    """Advance state0 to cfg.t_end, recording observables along the way.

    Times are step_index * dt with absolute step indices, so a run
    resumed from step_offset reproduces the uninterrupted trajectory
    bit for bit.  The probe series covers every step from step_offset
    to the final one, inclusive.  t_end is mapped to the nearest whole
    step count.
    """
    bad = validate_params(params)
    if bad:
        raise ValueError(f"invalid parameters: {', '.join(bad)}")
    limit = stability_limit(
        params,
        state0.dx if state0.nx > 1 else math.inf,
        state0.dy if state0.ny > 1 else math.inf,
    )
    if cfg.dt > limit:
        raise ValueError(f"dt {cfg.dt:g} exceeds the stability limit {limit:g}")
    ix, iy = cfg.probe
    if not (0 <= ix < state0.nx and 0 <= iy < state0.ny):
        raise ValueError(f"probe {cfg.probe} outside the {state0.nx}x{state0.ny} grid")
    total_steps = int(round(cfg.t_end / cfg.dt))
    if total_steps < step_offset:
        raise ValueError("t_end lies before the resumed step")

    nsteps = total_steps - step_offset
    dx, dy, bc = state0.dx, state0.dy, state0.bc
    u, v, w, z = state0.u, state0.v, state0.w, state0.z
    probe = np.empty((nsteps + 1, 5))
    records = []

    def snapshot(i, k):
        t = k * cfg.dt
        probe[i] = (t, u[ix, iy], v[ix, iy], w[ix, iy], z[ix, iy])
        if k % cfg.record_every == 0:
            records.append(_make_record(t, ix, iy, (u, v, w, z), dx, dy))

    snapshot(0, step_offset)
    for i in range(1, nsteps + 1):
        u, v, w, z = _advance(u, v, w, z, params, cfg.dt, dx, dy, bc)
        k = step_offset + i
        maxima = _field_maxima(u, v, w, z)
        ok, overall = _fields_ok(maxima)
        if not ok:
            raise BlowUpError(
                f"blow-up at t={k * cfg.dt:g} (step {k}): max |field| = {overall:.3e}, "
                f"per-field maxima {maxima}",
                t=k * cfg.dt,
                step_index=k,
                max_abs=overall,
                field_maxima=maxima,
            )
        snapshot(i, k)

    final = GridState(state0.nx, state0.ny, dx, dy, u, v, w, z, bc)
    return SimulationResult(records, probe, final, total_steps)


def initial_condition(grid, base, amplitude, seed):
    """Uniform base plus seeded uniform noise in [-amplitude, amplitude].

    Values are floored at zero so nonnegative bases stay nonnegative.
    """
    if amplitude < 0:
        raise ValueError("amplitude must be nonnegative")
    rng = np.random.default_rng(seed)
    noise = rng.uniform(-1.0, 1.0, size=(4, grid.nx, grid.ny))
    fields = [
        np.maximum(component + amplitude * noise[i], 0.0)
        for i, component in enumerate(base.as_tuple())
    ]
    return GridState(grid.nx, grid.ny, grid.dx, grid.dy, *fields, bc=grid.bc)


def save_checkpoint(path, state, params, step_index, t):
    """Binary snapshot sufficient for exact resume.

    Layout (little endian): magic "B4CK", version u32, ten parameter
    doubles (alpha, beta, D1..D4, a..d), nx/ny i64, dx/dy doubles,
    boundary code u8, step index i64, time double, then the four field
    arrays as raw row-major doubles.
    """
    header = struct.pack(
        "<4sI10d2q2dBqd",
        _CHECKPOINT_MAGIC,
        _CHECKPOINT_VERSION,
        *(getattr(params, name) for name in _PARAM_ORDER),
        state.nx,
        state.ny,
        state.dx,
        state.dy,
        _BC_CODES[state.bc],
        step_index,
        t,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for field in state.fields():
            fh.write(np.ascontiguousarray(field).tobytes())


def load_checkpoint(path):
    """Inverse of save_checkpoint: (state, params, step_index, t)."""
    header_fmt = "<4sI10d2q2dBqd"
    header_size = struct.calcsize(header_fmt)
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < header_size:
        raise ValueError("checkpoint truncated")
    parts = struct.unpack_from(header_fmt, raw)
    magic, version = parts[0], parts[1]
    if magic != _CHECKPOINT_MAGIC:
        raise ValueError("not a checkpoint file")
    if version != _CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    values = parts[2:12]
    nx, ny = parts[12], parts[13]
    dx, dy = parts[14], parts[15]
    bc_code, step_index, t = parts[16], parts[17], parts[18]
    if bc_code not in _BC_NAMES:
        raise ValueError(f"unknown boundary code {bc_code}")
    count = nx * ny
    expected = header_size + 4 * count * 8
    if len(raw) != expected:
        raise ValueError("checkpoint payload size mismatch")
    fields = []
    offset = header_size
    for _ in range(4):
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        fields.append(arr.reshape(nx, ny).copy())
        offset += count * 8
    params = SystemParams(**dict(zip(_PARAM_ORDER, values)))
    state = GridState(nx, ny, dx, dy, *fields, bc=_BC_NAMES[bc_code])
    return state, params, step_index, t
