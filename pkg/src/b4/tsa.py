"""Attractor reconstruction and invariants from a scalar time series.

Pipeline: pick a delay from the 1/e autocorrelation crossing, build a
delay embedding, rotate onto the leading singular directions, estimate
the correlation dimension from the pair-count integral, and iterate
the embedding dimension until the Takens condition m > 2d+1 holds.
A nearest-neighbor divergence estimator supplies the largest Lyapunov
exponent.

Pair distances use the max norm; neighbor searches for the exponent
use the Euclidean norm.  Temporally close pairs are excluded via a
Theiler window (default tau*m).
"""

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class AnalysisConfig:
    max_lag: int = 1000
    window_factor: float = 4.0
    threshold: float = 1e-2
    m_max: int = 50
    theiler: int = None
    max_points: int = 20000
    refine_span: int = 10
    radii_count: int = 40
    r_lo_percentile: float = 1.0
    r_hi_percentile: float = 50.0
    percentile_sample: int = 500
    lyap_max_steps: int = 50
    lyap_max_refs: int = 1000
    lyap_min_refs: int = 10
    sample_interval: float = 1.0

    def __post_init__(self):
        if self.max_lag < 1 or self.m_max < 2 or self.radii_count < 8:
            raise ValueError("degenerate analysis configuration")
        if self.threshold < 0 or self.max_points < 10:
            raise ValueError("degenerate analysis configuration")
        if not 0 <= self.r_lo_percentile < self.r_hi_percentile <= 100:
            raise ValueError("percentiles must satisfy 0 <= lo < hi <= 100")
        if self.sample_interval <= 0:
            raise ValueError("sample_interval must be positive")


@dataclass(frozen=True)
class EmbeddingMatrix:
    m: int
    tau: int
    l: int
    rows: np.ndarray
    window: int


@dataclass(frozen=True)
class ScalingFit:
    d: float
    scaling_region: tuple
    fit_r2: float
    low_confidence: bool


@dataclass(frozen=True)
class DimensionReport:
    d: float
    m_used: int
    scaling_region: tuple
    fit_r2: float
    singular_values: tuple
    takens_ok: bool
    tau: int
    kept_count: int
    low_confidence: bool


def autocorrelation(series, max_lag):
    """Mean-removed autocorrelation with per-lag sample normalization.

    Each lag divides by its own overlap count, so long-lag values are
    unbiased rather than shrunk toward zero.
    """
    x = np.asarray(series, dtype=float).ravel()
    if max_lag < 1:
        raise ValueError("max_lag must be at least 1")
    if x.size <= max_lag:
        raise ValueError("series length must exceed max_lag")
    centered = x - x.mean()
    var_sum = float(np.dot(centered, centered))
    if np.ptp(x) == 0 or var_sum == 0.0:
        raise ValueError("constant series has no autocorrelation structure")
    size = 1 << int(2 * x.size - 1).bit_length()
    spectrum = np.fft.rfft(centered, size)
    acov = np.fft.irfft(spectrum * np.conj(spectrum), size)[: max_lag + 1]
    lags = np.arange(max_lag + 1)
    acf = (acov / (x.size - lags)) / (var_sum / x.size)
    acf[0] = 1.0
    return acf


def select_delay(acf):
    """Smallest integer lag where the autocorrelation falls to 1/e."""
    acf = np.asarray(acf, dtype=float)
    if acf.size < 2 or abs(acf[0] - 1.0) > 1e-9:
        raise ValueError("expected an autocorrelation sequence starting at 1")
    below = np.nonzero(acf[1:] <= 1.0 / math.e)[0]
    if below.size == 0:
        raise ValueError(
            "autocorrelation never reaches 1/e within max_lag; "
            "recompute with a larger max_lag"
        )
    return int(below[0]) + 1


def embed(series, m, tau, l=1):
    """Delay-coordinate matrix: row i, column j is series[i*l + j*tau]."""
    x = np.asarray(series, dtype=float).ravel()
    if m < 1 or tau < 1 or l < 1:
        raise ValueError("m, tau and l must be positive integers")
    window = (m - 1) * tau
    if x.size < window + 1:
        raise ValueError(
            f"series of length {x.size} too short for window {window + 1}"
        )
    s = (x.size - 1 - window) // l + 1
    idx = np.arange(s)[:, None] * l + np.arange(m)[None, :] * tau
    return EmbeddingMatrix(m=m, tau=tau, l=l, rows=x[idx], window=window)


def svd_reduce(Y, threshold):
    """Project rows onto singular directions above the threshold.

    The matrix is column-mean centered first.  The threshold is
    relative to the largest singular value; components below the
    numerical-rank floor are dropped even at threshold zero.  Returns
    (rotated coordinates, kept_count, singular_values descending).
    """
    rows = Y.rows if isinstance(Y, EmbeddingMatrix) else np.asarray(Y, dtype=float)
    if rows.ndim != 2:
        raise ValueError("expected a 2-d embedding matrix")
    s_count, m = rows.shape
    if s_count < m:
        raise ValueError("need at least as many rows as columns")
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    centered = rows - rows.mean(axis=0)
    gram = centered.T @ centered
    evals, evecs = np.linalg.eigh(gram)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]
    sigma = np.sqrt(np.clip(evals, 0.0, None))
    if sigma[0] <= 0.0:
        raise ValueError("degenerate embedding (all rows identical): nothing kept")
    # deterministic sign convention: largest entry of each direction positive
    peak = np.argmax(np.abs(evecs), axis=0)
    signs = np.sign(evecs[peak, np.arange(m)])
    signs[signs == 0] = 1.0
    evecs = evecs * signs

    floor = sigma[0] * math.sqrt(max(s_count, m)) * math.sqrt(np.finfo(float).eps)
    kept = (sigma >= threshold * sigma[0]) & (sigma > floor)
    kept_count = int(np.count_nonzero(kept))
    if kept_count == 0:
        raise ValueError("threshold removed every component: nothing kept")
    return centered @ evecs[:, kept], kept_count, sigma


def correlation_integral(points, radii, theiler_window=0):
    """Fraction of point pairs within each radius (max norm).

    Pairs closer than theiler_window in time are excluded from the
    count; the denominator stays the full pair count M(M-1)/2.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    radii = np.asarray(radii, dtype=float)
    if radii.size == 0 or np.any(radii <= 0):
        raise ValueError("radii must be positive")
    if np.any(np.diff(radii) < 0):
        raise ValueError("radii must be ascending")
    if theiler_window < 0:
        raise ValueError("theiler_window must be nonnegative")
    M = pts.shape[0]
    gap = theiler_window + 1
    if M - gap < 1:
        raise ValueError("no usable pairs outside the Theiler window")
    counts = np.zeros(radii.size + 1, dtype=np.int64)
    for i in range(M - gap):
        d = np.max(np.abs(pts[i + gap :] - pts[i]), axis=1)
        bins = np.searchsorted(radii, d, side="right")
        counts += np.bincount(bins, minlength=radii.size + 1)
    below = np.cumsum(counts)[: radii.size]
    return below / (M * (M - 1) / 2.0)


def correlation_dimension(radii, C):
    """Slope of the best log-log scaling window of the pair integral.

    Windows need at least 5 points, half a decade of radius span and
    four distinct C values; among those the best linear fit wins.  If
    none qualifies the widest usable range is fitted and the result is
    flagged low-confidence, as it is whenever the best R^2 < 0.95.
    """
    r = np.asarray(radii, dtype=float)
    C = np.asarray(C, dtype=float)
    if r.shape != C.shape:
        raise ValueError("radii and C must have matching shapes")
    mask = C > 0
    if np.count_nonzero(mask) < 8:
        raise ValueError("need at least 8 radii with positive C")
    rm = r[mask]
    x = np.log(rm)
    y = np.log(C[mask])
    n = x.size
    min_span = 0.5 * math.log(10.0)

    def fit(i, j):
        xs, ys = x[i : j + 1], y[i : j + 1]
        slope, intercept = np.polyfit(xs, ys, 1)
        resid = ys - (slope * xs + intercept)
        ss_res = float(np.dot(resid, resid))
        centered = ys - ys.mean()
        ss_tot = float(np.dot(centered, centered))
        r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
        return slope, r2

    best = None
    for i in range(n - 4):
        for j in range(i + 4, n):
            if x[j] - x[i] < min_span:
                continue
            if np.unique(y[i : j + 1]).size < 4:
                continue
            slope, r2 = fit(i, j)
            if best is None or r2 > best[1]:
                best = (slope, r2, (float(rm[i]), float(rm[j])))
    if best is None:
        slope, r2 = fit(0, n - 1)
        return ScalingFit(max(slope, 0.0), (float(rm[0]), float(rm[-1])), r2, True)
    slope, r2, region = best
    return ScalingFit(max(slope, 0.0), region, r2, r2 < 0.95)


def embedding_stride(length, config):
    """Embedding stride that keeps vector counts near config.max_points."""
    if length <= 0:
        raise ValueError("series length must be positive")
    return max(1, -(-length // config.max_points))


def radii_grid(points, cfg):
    """Log-spaced radii between pair-distance percentiles (max norm)."""
    M = points.shape[0]
    k = min(M, cfg.percentile_sample)
    idx = np.unique(np.linspace(0, M - 1, k).astype(int))
    sub = points[idx]
    d = np.max(np.abs(sub[:, None, :] - sub[None, :, :]), axis=2)
    pairwise = d[np.triu_indices(idx.size, 1)]
    pairwise = pairwise[pairwise > 0]
    if pairwise.size == 0:
        raise ValueError("all sampled points coincide; no radius scale")
    lo = float(np.percentile(pairwise, cfg.r_lo_percentile))
    hi = float(np.percentile(pairwise, cfg.r_hi_percentile))
    if lo <= 0:
        lo = float(pairwise.min())
    if hi <= lo:
        hi = lo * 10.0
    return np.geomspace(lo, hi, cfg.radii_count)


def theiler_window(cfg, tau, m, stride=1):
    """Exclusion window in embedded-vector index units.

    The default tau*m is a span in samples; with a strided embedding
    it shrinks accordingly.  An explicit override is taken verbatim.
    """
    if cfg.theiler is not None:
        return cfg.theiler
    return -(-(tau * m) // stride)


def albano_dimension(series, config=None):
    """Iterated delay-embedding dimension estimate.

    Delay from the 1/e rule, initial window a multiple of it, SVD
    projection, correlation dimension, then embedding growth until the
    Takens condition m > 2d+1 holds, followed by a refinement scan
    keeping the best-fitting m.  Hitting m_max returns the last fit
    with takens_ok=False instead of raising.
    """
    cfg = config if config is not None else AnalysisConfig()
    x = np.asarray(series, dtype=float).ravel()
    max_lag = min(cfg.max_lag, x.size - 1)
    tau = select_delay(autocorrelation(x, max_lag))
    stride = embedding_stride(x.size, cfg)

    def evaluate(m):
        emb = embed(x, m, tau, stride)
        coords, kept, sigma = svd_reduce(emb, cfg.threshold)
        radii = radii_grid(coords, cfg)
        C = correlation_integral(coords, radii, theiler_window(cfg, tau, m, stride))
        return correlation_dimension(radii, C), sigma, kept

    def report(fit, sigma, kept, m, takens_ok):
        return DimensionReport(
            d=fit.d,
            m_used=m,
            scaling_region=fit.scaling_region,
            fit_r2=fit.fit_r2,
            singular_values=tuple(float(s) for s in sigma[:kept]),
            takens_ok=takens_ok,
            tau=tau,
            kept_count=kept,
            low_confidence=fit.low_confidence,
        )

    m = max(2, int(math.floor(cfg.window_factor)) + 1)
    while True:
        fit, sigma, kept = evaluate(m)
        if m > 2.0 * fit.d + 1.0:
            break
        next_m = max(m + 1, int(math.floor(2.0 * fit.d + 1.0)) + 1)
        if next_m > cfg.m_max:
            return report(fit, sigma, kept, m, False)
        m = next_m

    best = (fit, sigma, kept, m)
    for trial in range(m + 1, min(m + cfg.refine_span, cfg.m_max) + 1):
        try:
            fit_t, sigma_t, kept_t = evaluate(trial)
        except ValueError:
            break
        if fit_t.fit_r2 > best[0].fit_r2:
            best = (fit_t, sigma_t, kept_t, trial)
    fit, sigma, kept, m_used = best
    return report(fit, sigma, kept, m_used, m_used >= 2.0 * fit.d + 1.0)


def largest_lyapunov(series, embed_params, config=None):
    """Largest Lyapunov exponent from nearest-neighbor divergence.

    Each reference point is paired with its nearest neighbor outside
    the Theiler window; the mean log-separation is tracked forward and
    the slope of its initial linear stretch (before the curve comes
    within 0.7 nats of saturation) divided by the sample interval is
    returned.
    """
    cfg = config if config is not None else AnalysisConfig()
    m, tau = int(embed_params[0]), int(embed_params[1])
    stride = int(embed_params[2]) if len(embed_params) > 2 else 1
    Y = embed(series, m, tau, stride).rows
    M = Y.shape[0]
    if M < 200:
        raise ValueError("need at least 200 embedded points")
    theiler = theiler_window(cfg, tau, m, stride)
    kmax = min(cfg.lyap_max_steps, M // 4)
    limit = M - kmax
    if limit < 2:
        raise ValueError("series too short for the divergence horizon")
    n_refs = min(limit, cfg.lyap_max_refs)
    refs = np.unique(np.linspace(0, limit - 1, n_refs).astype(int))
    # Periodic signals revisit states to within rounding noise; pairing
    # with such near-duplicates would track arithmetic noise instead of
    # dynamics, so neighbors closer than a sliver of the attractor
    # diameter are skipped.
    min_separation = 1e-9 * float(np.linalg.norm(np.ptp(Y, axis=0)))

    log_sums = np.zeros(kmax + 1)
    used = 0
    for i in refs:
        diff = Y[:limit] - Y[i]
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        lo = max(0, i - theiler)
        dist[lo : i + theiler + 1] = np.inf
        dist[dist <= min_separation] = np.inf
        j = int(np.argmin(dist))
        if not np.isfinite(dist[j]):
            continue
        gap = Y[i : i + kmax + 1] - Y[j : j + kmax + 1]
        sep = np.sqrt(np.einsum("ij,ij->i", gap, gap))
        if np.any(sep == 0.0):
            continue
        log_sums += np.log(sep)
        used += 1
    if used < cfg.lyap_min_refs:
        raise ValueError(
            f"only {used} reference points found usable neighbors; "
            "need a longer or less correlated series"
        )
    mean_ln = log_sums / used
    # The divergence curve rises linearly, then saturates at the
    # attractor diameter.  Fit before the knee when the rise is
    # resolvable; a curve that saturates immediately (periodic or
    # noise-dominated signals) is fitted on its plateau instead, where
    # the slope is the honest answer: no sustained divergence.
    saturated = np.nonzero(mean_ln >= mean_ln.max() - 0.7)[0]
    knee = int(saturated[0]) if saturated.size else kmax
    if knee >= 5:
        lo_k, hi_k = 0, knee - 1
    elif kmax - knee >= 4:
        lo_k, hi_k = knee, kmax
    else:
        lo_k, hi_k = 0, kmax
    ks = np.arange(lo_k, hi_k + 1, dtype=float)
    slope = np.polyfit(ks, mean_ln[lo_k : hi_k + 1], 1)[0]
    return float(slope / cfg.sample_interval)
