"""Quadratic-form machinery controlling solution growth.

The degree-n form eval_Hn is a weighted multinomial in (u, v, w, z)
whose weights come from three geometric-ratio coefficient sequences.
Its second-derivative structure produces, for each index triple
(r, q, p), a symmetric 4x4 matrix whose positive definiteness makes the
diffusive part of d/dt eval_Ln nonpositive.  Definiteness reduces to
three scalar inequalities on the sequence generators (theta2, sigma2,
rho2), checked here together with a search for a feasible generator
triple and closed-form expressions for the leading principal minors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CouplingConstants:
    """The six pairwise diffusivity couplings (x+y)/(2*sqrt(x*y)).

    Each entry is at least 1, with equality exactly when the two
    diffusivities coincide.
    """

    A12: float
    A13: float
    A14: float
    A23: float
    A24: float
    A34: float

    def as_tuple(self):
        return (self.A12, self.A13, self.A14, self.A23, self.A24, self.A34)


@dataclass(frozen=True)
class ConditionReport:
    """Truth values and margins for the three definiteness conditions.

    Margins are the left-hand side minus the right-hand side of each
    strict inequality, so a condition holds iff its margin is positive:
      margin1 = theta2 - A12^2
      margin2 = lam   (first 2x2 block combination)
      margin3 = lam * vee - gam^2
    """

    cond1: bool
    cond2: bool
    cond3: bool
    margin1: float
    margin2: float
    margin3: float

    @property
    def all_pass(self):
        return self.cond1 and self.cond2 and self.cond3


@dataclass(frozen=True)
class CoefficientSequences:
    """Three positive sequences with constant second-order ratio.

    Each sequence obeys x[r] * x[r+2] / x[r+1]^2 == x2 for its generator
    x2, which pins the sequence given a seed x0 and a first-ratio
    constant C (consecutive ratios are C * x2**r).
    """

    theta: np.ndarray
    sigma: np.ndarray
    rho: np.ndarray
    theta2: float
    sigma2: float
    rho2: float
    C_theta: float
    C_sigma: float
    C_rho: float
    theta0: float
    sigma0: float
    rho0: float

    @property
    def n(self):
        return len(self.theta) - 1


@dataclass(frozen=True)
class MinorSet:
    """Leading principal minors of a symmetric 4x4 matrix.  All four
    positive is equivalent to positive definiteness (Sylvester)."""

    d1: float
    d2: float
    d3: float
    d4: float

    def as_tuple(self):
        return (self.d1, self.d2, self.d3, self.d4)

    @property
    def all_positive(self):
        return all(x > 0 for x in self.as_tuple())


class InfeasibleError(RuntimeError):
    """Raised when the generator-triple search exceeds its growth cap."""


def coupling_constants(a, b, c, d):
    """Pairwise coupling constants of four positive diffusivities."""
    if min(a, b, c, d) <= 0:
        raise ValueError("diffusivities must be positive")

    def pair(x, y):
        # AM-GM guarantees >= 1; clamp shields against a final rounding dip.
        return max((x + y) / (2.0 * math.sqrt(x * y)), 1.0)

    return CouplingConstants(
        A12=pair(a, b),
        A13=pair(a, c),
        A14=pair(a, d),
        A23=pair(b, c),
        A24=pair(b, d),
        A34=pair(c, d),
    )


def _condition_terms(A, theta2, sigma2, rho2):
    """The three combinations (lam, vee, gam) entering condition 3."""
    t = theta2 - A.A12**2
    e13 = A.A13 - A.A12 * A.A23
    e14 = A.A14 - A.A12 * A.A24
    lam = t * (sigma2 - A.A23**2) - e13**2
    vee = t * (sigma2 * rho2 - A.A24**2) - e14**2
    gam = t * (A.A34 * sigma2 - A.A23 * A.A24) - e13 * e14
    return lam, vee, gam


def check_conditions(A, theta2, sigma2, rho2):
    """Evaluate the three definiteness conditions with their margins."""
    if min(theta2, sigma2, rho2) <= 0:
        raise ValueError("generator triple must be positive")
    margin1 = theta2 - A.A12**2
    lam, vee, gam = _condition_terms(A, theta2, sigma2, rho2)
    margin3 = lam * vee - gam**2
    return ConditionReport(
        cond1=margin1 > 0,
        cond2=lam > 0,
        cond3=margin3 > 0,
        margin1=margin1,
        margin2=lam,
        margin3=margin3,
    )


GROWTH_CAP = 10**6


def feasible_triple(A, growth=2.0, bisect_steps=50):
    """Search for a generator triple satisfying all three conditions.

    theta2 is fixed at A12^2 + 1; sigma2 then grows geometrically until
    the second condition holds with a factor-two margin, and rho2 grows
    until the third does.  A bisection pass afterwards shrinks each
    grown value back toward the smallest one that still meets its
    margin target, which keeps the derived coefficient sequences well
    scaled.  Raises InfeasibleError if a growth phase exceeds its cap
    (not expected for finite coupling constants).
    """
    theta2 = A.A12**2 + 1.0
    e13 = A.A13 - A.A12 * A.A23

    # Condition 2 with margin: lam >= e13^2 + 1, i.e. a factor-two slack
    # over the bare inequality lam > 0.
    lam_target = e13**2 + 1.0

    def lam_at(s2):
        return _condition_terms(A, theta2, s2, 1.0)[0]

    sigma2 = A.A23**2 + 1.0
    steps = 0
    while lam_at(sigma2) < lam_target:
        sigma2 *= growth
        steps += 1
        if steps > GROWTH_CAP:
            raise InfeasibleError(
                f"condition 2 not reached: lam={lam_at(sigma2):.3e}"
            )
    if steps:
        lo, hi = sigma2 / growth, sigma2
        for _ in range(bisect_steps):
            mid = 0.5 * (lo + hi)
            if lam_at(mid) >= lam_target:
                hi = mid
            else:
                lo = mid
        sigma2 = hi

    lam, _, gam = _condition_terms(A, theta2, sigma2, 1.0)

    # Condition 3 with margin: lam*vee >= 2*gam^2 + 1.  gam does not
    # depend on rho2 and vee is increasing in it, so growth terminates.
    def margin3_ok(r2):
        vee = _condition_terms(A, theta2, sigma2, r2)[1]
        return vee > 0 and lam * vee >= 2.0 * gam**2 + 1.0

    rho2 = 1.0
    steps = 0
    while not margin3_ok(rho2):
        rho2 *= growth
        steps += 1
        if steps > GROWTH_CAP:
            raise InfeasibleError(
                f"condition 3 not reached: margins={check_conditions(A, theta2, sigma2, rho2)}"
            )
    if steps:
        lo, hi = rho2 / growth, rho2
        for _ in range(bisect_steps):
            mid = 0.5 * (lo + hi)
            if margin3_ok(mid):
                hi = mid
            else:
                lo = mid
        rho2 = hi

    return theta2, sigma2, rho2


def build_sequences(x0, C, x2, n):
    """Sequence of length n+1 with ratios x[r+1]/x[r] = C * x2**r.

    Entries must stay within floating-point range; overflow (or a
    vanished entry) raises.
    """
    if x0 <= 0 or C <= 0 or x2 <= 0:
        raise ValueError("seed, ratio constant and generator must be positive")
    seq = np.empty(n + 1)
    seq[0] = x0
    with np.errstate(over="ignore"):
        for r in range(n):
            seq[r + 1] = seq[r] * C * x2**r
    if not np.all(np.isfinite(seq)) or np.any(seq <= 0):
        raise OverflowError("sequence left floating-point range; rescale x0/C")
    return seq


def default_sequence_generators(x2, n):
    """A seed and ratio constant giving every consecutive ratio < 1.

    The seed centers the sequence so its middle entry is one.  Without
    centering, products of several entries (as in the 4x4 minors)
    underflow for moderate generators already at n around 8.
    """
    C = 0.5 / max(x2, 1.0) ** (n - 1)
    m = n // 2
    x0 = 1.0 / (C**m * x2 ** (m * (m - 1) / 2.0))
    return x0, C


def sequences_for_triple(triple, n):
    """Ratio-below-one coefficient sequences for a generator triple."""
    theta2, sigma2, rho2 = triple
    t0, Ct = default_sequence_generators(theta2, n)
    s0, Cs = default_sequence_generators(sigma2, n)
    r0, Cr = default_sequence_generators(rho2, n)
    return CoefficientSequences(
        theta=build_sequences(t0, Ct, theta2, n),
        sigma=build_sequences(s0, Cs, sigma2, n),
        rho=build_sequences(r0, Cr, rho2, n),
        theta2=theta2,
        sigma2=sigma2,
        rho2=rho2,
        C_theta=Ct,
        C_sigma=Cs,
        C_rho=Cr,
        theta0=t0,
        sigma0=s0,
        rho0=r0,
    )


def _seq_arrays(seqs):
    """Accept CoefficientSequences or a plain (theta, sigma, rho) triple."""
    if isinstance(seqs, CoefficientSequences):
        return seqs.theta, seqs.sigma, seqs.rho
    theta, sigma, rho = seqs
    return np.asarray(theta, float), np.asarray(sigma, float), np.asarray(rho, float)


def shifted_sequences(seqs, dr, dq, dp):
    """The same sequences viewed from shifted start indices.

    Evaluating the degree-(n-1) or degree-(n-2) form on shifted
    sequences is how the derivative identities of the form are stated.
    """
    theta, sigma, rho = _seq_arrays(seqs)
    return theta[dr:], sigma[dq:], rho[dp:]


def brqp_matrix(r, q, p, seqs, a, b, c, d):
    """Symmetric 4x4 coefficient matrix at index triple (r, q, p).

    Diagonal entries pair one diffusivity with a product of sequence
    entries; off-diagonal entries carry the averaged diffusivities
    (x+y)/2.  Requires p+2 (and hence q+2, r+2) within sequence length.
    """
    theta, sigma, rho = _seq_arrays(seqs)
    if not 0 <= r <= q <= p:
        raise IndexError(f"indices must satisfy 0 <= r <= q <= p, got {(r, q, p)}")
    if p + 2 >= len(rho) or q + 2 >= len(sigma) or r + 2 >= len(theta):
        raise IndexError(f"index triple {(r, q, p)} exceeds sequence length")
    B = np.empty((4, 4))
    B[0, 0] = a * rho[p + 2] * sigma[q + 2] * theta[r + 2]
    B[1, 1] = b * rho[p + 2] * sigma[q + 2] * theta[r]
    B[2, 2] = c * rho[p + 2] * sigma[q] * theta[r]
    B[3, 3] = d * rho[p] * sigma[q] * theta[r]
    B[0, 1] = B[1, 0] = 0.5 * (a + b) * rho[p + 2] * sigma[q + 2] * theta[r + 1]
    B[0, 2] = B[2, 0] = 0.5 * (a + c) * rho[p + 2] * sigma[q + 1] * theta[r + 1]
    B[0, 3] = B[3, 0] = 0.5 * (a + d) * rho[p + 1] * sigma[q + 1] * theta[r + 1]
    B[1, 2] = B[2, 1] = 0.5 * (b + c) * rho[p + 2] * sigma[q + 1] * theta[r]
    B[1, 3] = B[3, 1] = 0.5 * (b + d) * rho[p + 1] * sigma[q + 1] * theta[r]
    B[2, 3] = B[3, 2] = 0.5 * (c + d) * rho[p + 1] * sigma[q] * theta[r]
    return B


def sylvester_minors(M):
    """Leading principal minors of a symmetric 4x4 matrix.

    Rejects inputs whose asymmetry exceeds 1e-10 relative to the
    largest entry; definiteness via minors only makes sense for
    symmetric matrices.
    """
    M = np.asarray(M, float)
    if M.shape != (4, 4):
        raise ValueError("expected a 4x4 matrix")
    scale = np.max(np.abs(M))
    if scale > 0 and np.max(np.abs(M - M.T)) > 1e-10 * scale:
        raise ValueError("matrix is not symmetric")
    return MinorSet(
        d1=float(M[0, 0]),
        d2=float(np.linalg.det(M[:2, :2])),
        d3=float(np.linalg.det(M[:3, :3])),
        d4=float(np.linalg.det(M)),
    )


def minor_closed_forms(r, q, p, seqs, a, b, c, d):
    """Closed-form values of the four leading minors of brqp_matrix.

    Independent of the determinant expansion in sylvester_minors; used
    to cross-check it.  Requires the sequences to carry generators
    (CoefficientSequences), since the forms involve theta2/sigma2/rho2.
    """
    A = coupling_constants(a, b, c, d)
    lam, vee, gam = _condition_terms(A, seqs.theta2, seqs.sigma2, seqs.rho2)
    th, sg, rh = seqs.theta, seqs.sigma, seqs.rho
    t = seqs.theta2 - A.A12**2
    d1 = a * rh[p + 2] * sg[q + 2] * th[r + 2]
    d2 = a * b * rh[p + 2] ** 2 * sg[q + 2] ** 2 * th[r + 1] ** 2 * t
    d3 = (
        a * b * c
        * rh[p + 2] ** 3
        * sg[q + 2]
        * sg[q + 1] ** 2
        * th[r + 1] ** 2
        * th[r]
        * lam
    )
    d4 = (
        a * b * c * d
        * rh[p + 2] ** 2
        * rh[p + 1] ** 2
        * sg[q + 1] ** 4
        * th[r + 1] ** 2
        * th[r] ** 2
        * (lam * vee - gam**2)
        / t
    )
    return MinorSet(d1=d1, d2=d2, d3=d3, d4=d4)


def bordered_minor_parts(M):
    """The (P, Q, R) combination whose PQ - R^2 equals a scaled det.

    For a symmetric 4x4 matrix with entries m_ij,
      m11^2 * (m11*m22 - m12^2) * det M == P*Q - R^2
    with P, Q, R the three bordered 2x2-style combinations below.
    """
    m = np.asarray(M, float)
    d12 = m[0, 0] * m[1, 1] - m[0, 1] ** 2
    b13 = m[0, 0] * m[1, 2] - m[0, 1] * m[0, 2]
    b14 = m[0, 0] * m[1, 3] - m[0, 1] * m[0, 3]
    P = d12 * (m[0, 0] * m[2, 2] - m[0, 2] ** 2) - b13**2
    Q = d12 * (m[0, 0] * m[3, 3] - m[0, 3] ** 2) - b14**2
    R = d12 * (m[0, 0] * m[2, 3] - m[0, 2] * m[0, 3]) - b13 * b14
    return P, Q, R


def eval_Hn(point, seqs, n):
    """Degree-n weighted multinomial form at one state.

    Triple sum over 0 <= r <= q <= p <= n of trinomial-product binomial
    coefficients times theta[r]*sigma[q]*rho[p] times
    u^r v^(q-r) w^(p-q) z^(n-p).  With all-ones sequences this is
    exactly (u+v+w+z)^n.
    """
    return float(hn_fields(point.u, point.v, point.w, point.z, seqs, n))


def hn_fields(u, v, w, z, seqs, n):
    """Vectorized eval_Hn over arrays of field samples."""
    if n < 1:
        raise ValueError("n must be at least 1")
    theta, sigma, rho = _seq_arrays(seqs)
    if min(len(theta), len(sigma), len(rho)) < n + 1:
        raise ValueError(f"sequences too short for n={n}")
    u, v, w, z = (np.asarray(x, float) for x in (u, v, w, z))
    upow = [np.ones_like(u)]
    vpow = [np.ones_like(v)]
    wpow = [np.ones_like(w)]
    zpow = [np.ones_like(z)]
    for _ in range(n):
        upow.append(upow[-1] * u)
        vpow.append(vpow[-1] * v)
        wpow.append(wpow[-1] * w)
        zpow.append(zpow[-1] * z)
    total = np.zeros_like(u)
    for p in range(n + 1):
        cp = math.comb(n, p)
        for q in range(p + 1):
            cq = cp * math.comb(p, q)
            for r in range(q + 1):
                coef = cq * math.comb(q, r) * theta[r] * sigma[q] * rho[p]
                total += coef * upow[r] * vpow[q - r] * wpow[p - q] * zpow[n - p]
    return total


def eval_Ln(state, seqs, n):
    """Grid integral of the degree-n form (midpoint quadrature)."""
    values = hn_fields(state.u, state.v, state.w, state.z, seqs, n)
    return float(values.sum() * state.dx * state.dy)


def eval_Kp(state, p, D2, D4):
    """Grid integral of v^p + (D2/D4) * z^p."""
    if p < 2:
        raise ValueError("p must be at least 2")
    delta = D2 / D4
    values = state.v**p + delta * state.z**p
    return float(values.sum() * state.dx * state.dy)


@dataclass(frozen=True)
class DecayReport:
    """Plateau detection for a monitored functional."""

    absorbed: bool
    plateau: float
    tail_max: float


def decay_monitor(t, values, tolerance=0.05):
    """Decide whether a functional trace has settled onto a plateau.

    The trace is first reduced to its sup-envelope (block maxima), so a
    trajectory that keeps oscillating inside a bounded band still reads
    as settled.  The final quarter of the envelope is then compared
    against its own median: staying within `tolerance` of it means the
    trace is absorbed, and the median is reported as the plateau.
    """
    t = np.asarray(t, float)
    values = np.asarray(values, float)
    if len(values) < 2 or len(t) != len(values):
        raise ValueError("need at least two (t, value) samples")
    blocks = min(32, max(1, values.size // 8))
    starts = (np.arange(blocks) * values.size) // blocks
    envelope = np.maximum.reduceat(values, starts)
    tail = envelope[3 * envelope.size // 4 :]
    plateau = float(np.median(tail))
    tail_max = float(np.max(tail))
    absorbed = bool(np.isfinite(tail_max) and tail_max <= (1.0 + tolerance) * plateau)
    return DecayReport(absorbed=absorbed, plateau=plateau, tail_max=tail_max)
