"""Privacy and security analyses of an inflated vault.

Statistical indistinguishability (per-dimension KS battery, mutual-distance
distributions), the last-user ranking attack, the partial-leak membership
experiment, and exfiltration/brute-force cost arithmetic.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np
from scipy import integrate, stats

from honeyvault.errors import DegenerateInputError, DimensionError, InsufficientSamplesError
from honeyvault.streams import substream
from honeyvault.synth import nearest_distances

TERABYTE = 10**12
SECONDS_PER_DAY = 86_400
SECONDS_PER_YEAR = 365.25 * SECONDS_PER_DAY
KS_MIN_SAMPLES = 5


# -- two-sample KS ---------------------------------------------------------


def kolmogorov_sf(lam: float) -> float:
    """Survival function of the Kolmogorov distribution, ``P(K > lam)``.

    Uses the alternating series ``2 sum (-1)^(j-1) exp(-2 j^2 lam^2)`` for
    ``lam >= 1.18`` and the equivalent theta-function series, which
    converges fast for small arguments, below that.
    """
    if lam <= 0:
        return 1.0
    if lam < 1.18:
        total = 0.0
        for j in range(1, 50):
            term = math.exp(-((2 * j - 1) ** 2) * math.pi**2 / (8 * lam * lam))
            total += term
            if term < 1e-17 * total:
                break
        return min(1.0, max(0.0, 1.0 - math.sqrt(2 * math.pi) / lam * total))
    total = 0.0
    for j in range(1, 101):
        term = math.exp(-2.0 * j * j * lam * lam)
        total += term if j % 2 else -term
        if term < 1e-17:
            break
    return min(1.0, max(0.0, 2.0 * total))


@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float
    reject: bool
    alpha: float

    def __post_init__(self):
        if self.reject != (self.p_value < self.alpha):
            raise ValueError("reject must equal p_value < alpha")


def ks_statistic(a, b) -> float:
    """``sup |F_a - F_b|`` over the pooled sample."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / a.size
    fb = np.searchsorted(b, grid, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_two_sample(a, b, alpha: float = 0.05) -> KsResult:
    """Two-sample KS test with the asymptotic p-value.

    The effective size is ``n_a n_b / (n_a + n_b)`` and the statistic is
    rescaled by ``sqrt(n_e) + 0.12 + 0.11 / sqrt(n_e)`` before the
    Kolmogorov tail is evaluated.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if min(a.size, b.size) < KS_MIN_SAMPLES:
        raise InsufficientSamplesError(f"KS test needs at least {KS_MIN_SAMPLES} samples per side")
    d = ks_statistic(a, b)
    ne = a.size * b.size / (a.size + b.size)
    root = math.sqrt(ne)
    p = kolmogorov_sf((root + 0.12 + 0.11 / root) * d)
    return KsResult(d, p, bool(p < alpha), alpha)


@dataclass(frozen=True)
class BatteryResult:
    acceptance_rate: float
    mean_p: float
    tests: int
    runs: int
    alpha: float
    p_values: np.ndarray = field(repr=False)

    def to_record(self) -> dict:
        return {
            "acceptance_rate": self.acceptance_rate,
            "mean_p": self.mean_p,
            "tests": self.tests,
            "runs": self.runs,
            "alpha": self.alpha,
        }


def ks_battery(real_coeffs, synth_coeffs, runs: int = 50, alpha: float = 0.05, seed: int = 0) -> BatteryResult:
    """Per-dimension KS tests of real against synthetic templates, repeated ``runs`` times.

    Each run draws a fresh synthetic subset of the real sample's size
    (without replacement) from ``synth_coeffs`` and tests every dimension.
    """
    real = np.atleast_2d(np.asarray(real_coeffs, dtype=np.float64))
    synth = np.atleast_2d(np.asarray(synth_coeffs, dtype=np.float64))
    if real.shape[1] != synth.shape[1]:
        raise DimensionError("real and synthetic coefficient widths differ")
    n, d = real.shape
    if synth.shape[0] < n:
        raise InsufficientSamplesError("synthetic pool is smaller than the real sample")
    rng = substream(seed, "ks-battery")
    p = np.empty((runs, d))
    for r in range(runs):
        subset = synth[rng.choice(synth.shape[0], size=n, replace=False)]
        for j in range(d):
            p[r, j] = ks_two_sample(real[:, j], subset[:, j], alpha).p_value
    p.setflags(write=False)
    return BatteryResult(float(np.mean(p >= alpha)), float(p.mean()), p.size, runs, alpha, p)


# -- distances -------------------------------------------------------------


def angular_distance(a, b) -> float:
    """One minus the cosine of the angle between ``a`` and ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise DegenerateInputError("angular distance is undefined for a zero vector")
    return float(min(2.0, max(0.0, 1.0 - (a @ b) / (na * nb))))


METRICS = ("euclidean", "angular")


def _pair_metric(x, y, metric: str) -> np.ndarray:
    if metric == "euclidean":
        return np.linalg.norm(x - y, axis=1)
    if metric == "angular":
        nx = np.linalg.norm(x, axis=1)
        ny = np.linalg.norm(y, axis=1)
        if np.any(nx == 0) or np.any(ny == 0):
            raise DegenerateInputError("angular distance is undefined for a zero vector")
        return np.clip(1.0 - np.einsum("ij,ij->i", x, y) / (nx * ny), 0.0, 2.0)
    raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")


def sample_pairs(n: int, max_pairs: int, rng: np.random.Generator):
    """Index arrays ``(i, j)`` with ``i < j``: every pair, or ``max_pairs`` random ones."""
    total = n * (n - 1) // 2
    if total <= max_pairs:
        return np.triu_indices(n, k=1)
    i = rng.integers(0, n, size=max_pairs)
    j = rng.integers(0, n - 1, size=max_pairs)
    j = np.where(j >= i, j + 1, j)
    return np.minimum(i, j), np.maximum(i, j)


def disjoint_pairs(n: int, max_pairs: int, rng: np.random.Generator):
    """Random matching: up to ``min(max_pairs, n // 2)`` pairs, no template used twice."""
    perm = rng.permutation(n)
    m = min(int(max_pairs), n // 2)
    i, j = perm[:m], perm[m : 2 * m]
    return np.minimum(i, j), np.maximum(i, j)


def pair_distances(
    templates,
    metric: str = "euclidean",
    max_pairs: int = 10**6,
    seed: int = 0,
    *,
    disjoint: bool = False,
) -> np.ndarray:
    """Distances over unordered template pairs (exhaustive when there are few).

    With ``disjoint`` each template appears in at most one pair, so the
    returned distances are independent draws; overlapping pairs share
    templates and are correlated, which a goodness-of-fit test on them does
    not account for.
    """
    x = np.atleast_2d(np.asarray(templates, dtype=np.float64))
    if x.shape[0] < 2:
        raise InsufficientSamplesError("need at least two templates")
    draw = disjoint_pairs if disjoint else sample_pairs
    i, j = draw(x.shape[0], int(max_pairs), substream(seed, "pairs"))
    out = np.empty(i.size)
    for s in range(0, i.size, 100_000):
        out[s : s + 100_000] = _pair_metric(x[i[s : s + 100_000]], x[j[s : s + 100_000]], metric)
    return out


@dataclass(frozen=True)
class DistanceHistogram:
    metric: str
    edges: np.ndarray
    counts: np.ndarray
    sample_size: int

    def __post_init__(self):
        if int(np.sum(self.counts)) != self.sample_size:
            raise ValueError("counts must sum to the sample size")
        if np.any(np.diff(self.edges) <= 0):
            raise ValueError("bin edges must be strictly increasing")

    @property
    def frequencies(self) -> np.ndarray:
        return self.counts / self.sample_size

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", "bin_lo", "bin_hi", "count"])
            for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts):
                w.writerow([self.metric, repr(float(lo)), repr(float(hi)), int(c)])


def distance_distribution(
    templates,
    metric: str = "euclidean",
    bins: int = 100,
    max_pairs: int = 10**6,
    seed: int = 0,
    edges=None,
) -> DistanceHistogram:
    """Histogram of mutual distances; ``edges`` overrides the uniform ``bins`` over the observed range."""
    if edges is None and (not isinstance(bins, (int, np.integer)) or bins < 1):
        raise ValueError("bins must be a positive integer")
    dist = pair_distances(templates, metric, max_pairs, seed)
    counts, edges = np.histogram(dist, bins=bins if edges is None else np.asarray(edges, dtype=np.float64))
    if counts.sum() != dist.size:
        raise ValueError("some distances fall outside the supplied edges")
    return DistanceHistogram(metric, edges, counts, int(dist.size))


def total_variation(h1: DistanceHistogram, h2: DistanceHistogram) -> float:
    if h1.edges.shape != h2.edges.shape or not np.array_equal(h1.edges, h2.edges):
        raise ValueError("histograms must share bin edges")
    return 0.5 * float(np.abs(h1.frequencies - h2.frequencies).sum())


# -- face-space distances and the ranking attack ---------------------------


def _check_sigma(s) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if np.any(~np.isfinite(s)) or np.any(s <= 0):
        raise ValueError("standard deviations must be positive and finite")
    return s


def _hellinger(sa: np.ndarray, sb: np.ndarray) -> np.ndarray:
    # log Bhattacharyya coefficient, written to stay accurate for tiny differences
    with np.errstate(divide="ignore"):
        log_bc = 0.5 * np.sum(np.log1p(-((sa - sb) ** 2) / (sa**2 + sb**2)), axis=-1)
    return np.sqrt(-np.expm1(log_bc))


def gaussian_space_distance(sigma_a, sigma_b) -> float:
    """Hellinger distance between ``N(0, diag(sigma_a**2))`` and ``N(0, diag(sigma_b**2))``."""
    sa, sb = _check_sigma(sigma_a), _check_sigma(sigma_b)
    if sa.shape != sb.shape:
        raise DimensionError("sigma vectors differ in length")
    return float(_hellinger(sa, sb))


def gaussian_tv_1d(sa: float, sb: float) -> float:
    """Total variation between two zero-mean normals, by numerical integration."""
    if sa == sb:
        return 0.0
    pa, pb = stats.norm(scale=sa).pdf, stats.norm(scale=sb).pdf
    # densities cross at +-x0; integrate one half and split there
    x0 = sa * sb * math.sqrt(2 * math.log(sb / sa) / (sb**2 - sa**2))
    gap = lambda x: abs(pa(x) - pb(x))  # noqa: E731
    left, _ = integrate.quad(gap, 0.0, x0)
    right, _ = integrate.quad(gap, x0, math.inf)
    return float(left + right)


@dataclass(frozen=True)
class SpaceDistance:
    hellinger: float
    per_dimension_tv: np.ndarray = field(repr=False)


def space_distance_report(sigma_a, sigma_b) -> SpaceDistance:
    sa, sb = _check_sigma(sigma_a), _check_sigma(sigma_b)
    return SpaceDistance(gaussian_space_distance(sa, sb), np.array([gaussian_tv_1d(a, b) for a, b in zip(sa, sb)]))


def neighbor_space_distances(coeffs) -> np.ndarray:
    """Distance from the full-sample face-space to each leave-one-out face-space."""
    x = np.atleast_2d(np.asarray(coeffs, dtype=np.float64))
    n = x.shape[0]
    if n < 3:
        raise InsufficientSamplesError("need at least three faces")
    full = x.std(axis=0, ddof=1)
    s1, s2 = x.sum(axis=0), (x * x).sum(axis=0)
    m = n - 1
    mean = (s1 - x) / m
    var = ((s2 - x * x) - m * mean**2) / (m - 1)
    return _hellinger(np.sqrt(var), full)


@dataclass(frozen=True)
class RankingHistogram:
    edges: np.ndarray
    counts: np.ndarray
    trials: int
    percentiles: np.ndarray = field(repr=False)

    def __post_init__(self):
        if int(self.counts.sum()) != self.trials:
            raise ValueError("counts must sum to the trial count")

    def uniformity_pvalue(self) -> float:
        """Chi-square goodness of fit against equal bin probabilities."""
        return float(stats.chisquare(self.counts).pvalue)


def _candidate_scores(known: np.ndarray, candidates: np.ndarray, reference: np.ndarray) -> np.ndarray:
    n = known.shape[0] + 1
    s1 = known.sum(axis=0) + candidates
    s2 = (known * known).sum(axis=0) + candidates * candidates
    var = (s2 - s1 * s1 / n) / (n - 1)
    return _hellinger(np.sqrt(np.maximum(var, np.finfo(float).tiny)), reference)


def rank_with_ties(scores: np.ndarray, target: int, rng: np.random.Generator) -> int:
    """1-based rank of ``scores[target]`` in ascending order, ties broken uniformly."""
    better = int(np.sum(scores < scores[target]))
    tied = int(np.sum(scores == scores[target])) - 1
    return better + 1 + (int(rng.integers(0, tied + 1)) if tied else 0)


def last_user_ranking(
    real_templates,
    synthetic_templates,
    system_sigma,
    trials: int = 100,
    n_candidates: int = 100,
    seed: int = 0,
    bins: int = 10,
) -> RankingHistogram:
    """Where does the held-out real face rank among the unknown faces?

    Each trial holds out one real template at random; the adversary knows
    the others. Candidates are the held-out face plus ``n_candidates - 1``
    synthetic templates. Every candidate is added to the known faces, the
    per-dimension standard deviations are recomputed, and candidates are
    ranked by :func:`gaussian_space_distance` to ``system_sigma`` (closest
    first). The histogram bins the held-out face's rank percentile.
    """
    real = np.atleast_2d(np.asarray(real_templates, dtype=np.float64))
    synth = np.atleast_2d(np.asarray(synthetic_templates, dtype=np.float64))
    reference = _check_sigma(system_sigma)
    if real.shape[0] < 3:
        raise InsufficientSamplesError("need at least three real faces")
    if synth.shape[0] < n_candidates - 1:
        raise InsufficientSamplesError("not enough synthetic faces for the candidate set")
    if real.shape[1] != synth.shape[1] or reference.shape != (real.shape[1],):
        raise DimensionError("template widths and system_sigma must agree")
    rng = substream(seed, "ranking")
    pct = np.empty(trials)
    for t in range(trials):
        held = int(rng.integers(real.shape[0]))
        known = np.delete(real, held, axis=0)
        decoys = synth[rng.choice(synth.shape[0], size=n_candidates - 1, replace=False)]
        candidates = np.vstack([real[held], decoys])
        scores = _candidate_scores(known, candidates, reference)
        rank = rank_with_ties(scores, 0, rng)
        pct[t] = (rank - 1) / n_candidates
    edges = np.linspace(0.0, 1.0, bins + 1)
    counts = np.minimum((pct * bins).astype(int), bins - 1)
    counts = np.bincount(counts, minlength=bins)
    return RankingHistogram(edges, counts, trials, pct)


# -- partial leak ----------------------------------------------------------


@dataclass(frozen=True)
class PartialLeakReport:
    num_coeffs: int
    threshold: float
    insider_below_rate: float
    outsider_below_rate: float
    insiders: int
    outsiders: int

    def to_record(self) -> dict:
        return asdict(self)


def percentile_threshold(templates, percentile: float, sample_size: int, max_pairs: int, seed: int) -> float:
    """``percentile`` (in percent) of mutual distances within a random sample of templates."""
    x = np.atleast_2d(templates)
    n = min(sample_size, x.shape[0])
    pairs = min(n * (n - 1) // 2, max_pairs)
    if n < 2 or pairs * percentile / 100.0 < 1.0:
        raise InsufficientSamplesError(
            f"{pairs} mutual distances cannot resolve the {percentile}% percentile"
        )
    rng = substream(seed, "partial-leak-sample")
    sample = x[np.sort(rng.choice(x.shape[0], size=n, replace=False))]
    dist = pair_distances(sample, "euclidean", max_pairs, seed)
    return float(np.percentile(dist, percentile))


def partial_leak_experiment(
    vault_templates,
    insider_probes,
    outsider_probes,
    num_coeffs: int = 10,
    percentile: float = 0.01,
    sample_size: int = 30_000,
    seed: int = 0,
    *,
    max_pairs: int = 10**6,
    threshold: float | None = None,
) -> PartialLeakReport:
    """Membership inference from the leading ``num_coeffs`` coefficients.

    The threshold is the ``percentile`` (percent) of mutual distances among
    ``sample_size`` vault records (at most ``max_pairs`` sampled pairs),
    unless given. A probe counts as "in the system" when its nearest
    truncated record lies strictly below the threshold.
    """
    vault = np.atleast_2d(np.asarray(vault_templates, dtype=np.float64))
    d = vault.shape[1]
    if not 1 <= num_coeffs <= d:
        raise DimensionError(f"num_coeffs must lie in [1, {d}]")
    ins = np.atleast_2d(np.asarray(insider_probes, dtype=np.float64))
    outs = np.atleast_2d(np.asarray(outsider_probes, dtype=np.float64))
    if ins.size == 0 or outs.size == 0:
        raise InsufficientSamplesError("probe sets must be non-empty")
    cut = np.ascontiguousarray(vault[:, :num_coeffs])
    if threshold is None:
        threshold = percentile_threshold(cut, percentile, sample_size, max_pairs, seed)
    ins_d, _ = nearest_distances(ins[:, :num_coeffs], cut)
    out_d, _ = nearest_distances(outs[:, :num_coeffs], cut)
    return PartialLeakReport(
        num_coeffs,
        float(threshold),
        float(np.mean(ins_d < threshold)),
        float(np.mean(out_d < threshold)),
        ins.shape[0],
        outs.shape[0],
    )


# -- cost arithmetic -------------------------------------------------------


def exfil_time(file_bytes, bandwidth_bits_per_second) -> float:
    """Seconds to move ``file_bytes`` over a ``bandwidth_bits_per_second`` channel."""
    if file_bytes <= 0 or bandwidth_bits_per_second <= 0:
        raise ValueError("file size and bandwidth must be positive")
    return float(Fraction(8) * Fraction(file_bytes) / Fraction(bandwidth_bits_per_second))


def membership_cost_estimate(vault_size, per_attempt_seconds) -> float:
    """Time to try one authentication against every record."""
    if vault_size <= 0 or per_attempt_seconds <= 0:
        raise ValueError("vault size and attempt time must be positive")
    return float(Fraction(vault_size) * Fraction(per_attempt_seconds))


def describe_duration(seconds: float) -> str:
    if seconds < 120:
        return f"{seconds:.6g} s"
    if seconds < 2 * SECONDS_PER_DAY:
        return f"{seconds / 3600:.4g} h"
    if seconds < 2 * SECONDS_PER_YEAR:
        return f"{seconds / SECONDS_PER_DAY:.4g} days"
    return f"{seconds / SECONDS_PER_YEAR:.5g} years"


# -- reports ---------------------------------------------------------------


def _plain(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def report_record(name: str, parameters: dict, statistics: dict, verdict) -> str:
    """One JSON line: test name, parameters, statistics, verdict."""
    return json.dumps(
        {"name": name, "parameters": _plain(parameters), "statistics": _plain(statistics), "verdict": _plain(verdict)},
        sort_keys=True,
    )
