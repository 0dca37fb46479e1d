"""Linear stability at the uniform state and attractor-dimension bounds.

The 4x4 linearization is evaluated mode by mode over the no-flux
Laplacian spectrum of a rectangle.  Two instability counts are kept
side by side: the positive-trace criterion and the full eigenvalue
check.  The first implies the second, never the reverse, so both are
reported rather than silently picking one.

Bound formulas accept exact rational inputs: with Fraction-valued
parameters and even N the lower-bound base stays a Fraction.
"""

import math
from dataclasses import dataclass

import numpy as np

from .model import validate_params

EIG_RESIDUAL_REL = 1e-8


@dataclass(frozen=True)
class ModeSpectrum:
    mu: float
    eigenvalues: tuple
    trace: float


@dataclass(frozen=True)
class BoundReport:
    lower_bound_base: object
    N: int
    K_prime: object
    lower: object
    upper: float
    trace_unstable_count: int = None
    full_unstable_count: int = None


def neumann_eigenvalues(Lx, Ly, count):
    """First `count` no-flux Laplacian eigenvalues of a rectangle.

    Values are pi^2 (j^2/Lx^2 + k^2/Ly^2) over j,k >= 0, ascending and
    with multiplicity.  Pass Ly=None for a one-dimensional interval,
    which keeps only the k=0 branch.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    if Lx <= 0 or (Ly is not None and Ly <= 0):
        raise ValueError("domain lengths must be positive")
    if Ly is None:
        j = np.arange(count, dtype=float)
        return math.pi**2 * j**2 / Lx**2

    # Enumerate everything below a cutoff, growing it until the first
    # `count` values are certainly complete.  The seed comes from the
    # leading-order mode count of a rectangle, area * mu / (4 pi).
    bound = 4.0 * math.pi * count / (Lx * Ly) * 1.3 + 16.0 * math.pi**2 * (
        1.0 / Lx**2 + 1.0 / Ly**2
    )
    while True:
        jmax = int(math.sqrt(bound) * Lx / math.pi) + 1
        kmax = int(math.sqrt(bound) * Ly / math.pi) + 1
        jj = (np.arange(jmax + 1, dtype=float) / Lx) ** 2
        kk = (np.arange(kmax + 1, dtype=float) / Ly) ** 2
        mu = (math.pi**2 * np.add.outer(jj, kk)).ravel()
        mu = mu[mu <= bound]
        if mu.size >= count:
            mu.sort()
            return mu[:count]
        bound *= 2.0


def mode_matrix(mu, params):
    """Linearization of the reaction-diffusion operator on one mode."""
    p = params
    a2 = p.alpha * p.alpha
    return np.array(
        [
            [-p.a * mu + p.beta - 1.0 - p.D1, a2, p.D1, 0.0],
            [-p.beta, -p.b * mu - p.D2 - a2, 0.0, p.D2],
            [p.D3, 0.0, -p.c * mu + p.beta - 1.0 - p.D3, a2],
            [0.0, p.D4, -p.beta, -p.d * mu - p.D4 - a2],
        ],
        dtype=float,
    )


def mode_spectrum(mu, params):
    """Eigenvalues of the mode matrix, residual-checked."""
    if mu < 0:
        raise ValueError("mu must be nonnegative")
    M = mode_matrix(mu, params)
    values, vectors = np.linalg.eig(M)
    scale = np.linalg.norm(M)
    residual = np.linalg.norm(M @ vectors - vectors * values, axis=0)
    if np.any(residual > EIG_RESIDUAL_REL * max(scale, 1e-300)):
        raise RuntimeError(f"eigenpair residual {residual.max():.3e} above tolerance")
    ordered = np.sort_complex(values)[::-1]
    return ModeSpectrum(
        mu=float(mu),
        eigenvalues=tuple(complex(x) for x in ordered),
        trace=float(np.trace(M)),
    )


def _trace_bracket(params):
    """Mode-independent part of the linearization trace."""
    return 2 * (params.beta - 1 - params.alpha * params.alpha) - (
        params.D1 + params.D2 + params.D3 + params.D4
    )


def unstable_mode_count(params, Lx, Ly, max_modes):
    """Counts of unstable modes among the first max_modes eigenvalues.

    Returns (trace_count, full_count): modes with positive trace of the
    mode matrix, and modes with any eigenvalue in the right half-plane.
    """
    if max_modes < 1:
        raise ValueError("max_modes must be at least 1")
    bad = validate_params(params)
    if bad:
        raise ValueError(f"invalid parameters: {', '.join(bad)}")
    mus = neumann_eigenvalues(Lx, Ly, max_modes)
    rate_sum = float(params.a + params.b + params.c + params.d)
    bracket = float(_trace_bracket(params))
    trace_count = int(np.sum(-rate_sum * mus + bracket > 0.0))

    base = mode_matrix(0.0, params)
    ramp = np.diag([float(params.a), float(params.b), float(params.c), float(params.d)])
    stack = base[None, :, :] - mus[:, None, None] * ramp[None, :, :]
    eigs = np.linalg.eigvals(stack)
    full_count = int(np.sum(eigs.real.max(axis=1) > 0.0))
    return trace_count, full_count


def lower_bound_base(params):
    """Trace bracket over the summed reaction-layer rates.

    Pure scalar arithmetic, so Fraction-valued parameters give an exact
    rational result.
    """
    return _trace_bracket(params) / (params.a + params.b + params.c + params.d)


def dimension_bounds(
    params,
    N,
    K_prime=1,
    K1=1,
    C_upper=1,
    omega_volume=1,
    Lx=None,
    Ly=None,
    max_modes=None,
):
    """Attractor-dimension bound report.

    lower = K_prime * max(base, 0)^(N/2) with base from
    lower_bound_base; upper = (C_upper/K1)^(3/2) * omega_volume + 1.
    The upper-bound constants are user inputs (default 1): the formula
    is exposed as an evaluator, not a claimed number.  When Lx and
    max_modes are given the unstable-mode counts are filled in too.
    """
    if N not in (1, 2, 3):
        raise ValueError("N must be 1, 2 or 3")
    if K1 <= 0:
        raise ValueError("K1 must be positive")
    base = lower_bound_base(params)
    clamped = base if base > 0 else 0
    if N % 2 == 0:
        powered = clamped ** (N // 2)
    else:
        powered = math.sqrt(clamped) ** N
    lower = K_prime * powered
    upper = float(C_upper / K1) ** 1.5 * float(omega_volume) + 1.0

    trace_count = full_count = None
    if Lx is not None and max_modes is not None:
        trace_count, full_count = unstable_mode_count(params, Lx, Ly, max_modes)
    return BoundReport(
        lower_bound_base=base,
        N=N,
        K_prime=K_prime,
        lower=lower,
        upper=upper,
        trace_unstable_count=trace_count,
        full_unstable_count=full_count,
    )


def extract_Kprime(d_observed, params, N):
    """Constant making the lower-bound formula reproduce d_observed."""
    if N not in (1, 2, 3):
        raise ValueError("N must be 1, 2 or 3")
    base = float(lower_bound_base(params))
    if base <= 0:
        raise ValueError("lower-bound base is nonpositive; no constant to extract")
    return d_observed / base ** (N / 2)
