"""Estimators for drift, entropy, and total variation of coupled walks.

Monte Carlo estimators report an ``EstimateResult`` with a normal or
Wilson 95% interval; exact computations report the same shape with a
zero standard error.  All randomness flows through per-trial Philox
substreams, so every estimator is deterministic in (seed, parameters)
and independent of the worker count.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import rng as rngmod
from . import walkers
from .errors import BudgetError, InputError, ValidationError
from .measures import (
    DEFAULT_CAP,
    FiniteMeasure,
    Weight,
    build_pi_rho,
    iter_convolution_levels,
    product_measure,
    uniform_letter_count,
)
from .oracle import coupling_weights, h_semigroup

Z95 = 1.959963984540054


@dataclass(frozen=True)
class EstimateResult:
    """Point estimate with a 95% confidence interval and provenance."""

    value: float
    std_error: float
    ci_low: float
    ci_high: float
    n: int
    trials: int
    seed: int
    method: str
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.std_error < 0:
            raise ValidationError("std_error must be nonnegative")
        if not (self.ci_low - 1e-12 <= self.value <= self.ci_high + 1e-12):
            raise ValidationError(
                f"estimate {self.value} outside its interval "
                f"[{self.ci_low}, {self.ci_high}]"
            )


def _mean_result(
    samples: np.ndarray, n: int, seed: int, method: str, details: dict | None = None
) -> EstimateResult:
    trials = len(samples)
    value = float(samples.mean())
    sd = float(samples.std(ddof=1)) if trials > 1 else 0.0
    se = sd / math.sqrt(trials)
    return EstimateResult(
        value=value,
        std_error=se,
        ci_low=value - Z95 * se,
        ci_high=value + Z95 * se,
        n=n,
        trials=trials,
        seed=seed,
        method=method,
        details=details or {},
    )


# ---------------------------------------------------------------------------
# drift


def drift_mc(
    step: FiniteMeasure, n: int, trials: int, seed: int, workers: int = 1
) -> EstimateResult:
    """Monte Carlo drift |position after n steps| / n.

    For pair measures the length is the max metric and the details
    carry the per-coordinate estimates; the marginals of a coupling
    share the step distribution, so the coordinate drifts agree up to
    noise.
    """
    if not isinstance(trials, int) or trials < 2:
        raise InputError(f"trials must be an integer >= 2, got {trials!r}")
    lengths = walkers.final_lengths(
        step, n, trials, seed, rngmod.STREAM_DRIFT, workers=workers
    )
    details: dict = {}
    if len(lengths) == 2:
        combined = np.maximum(lengths[0], lengths[1]).astype(np.float64) / n
        for label, arr in (("coord1", lengths[0]), ("coord2", lengths[1])):
            r = _mean_result(arr.astype(np.float64) / n, n, seed, f"drift-mc-{label}")
            details[label] = {
                "value": r.value,
                "std_error": r.std_error,
                "ci_low": r.ci_low,
                "ci_high": r.ci_high,
            }
    else:
        combined = lengths[0].astype(np.float64) / n
    return _mean_result(combined, n, seed, "drift-mc", details)


# ---------------------------------------------------------------------------
# entropy


def shannon_pointwise(
    m: int, rho: float, n: int, trials: int, seed: int
) -> EstimateResult:
    """Pointwise entropy estimator -log(pi_n at the sampled position) / n.

    On the free semigroup the n-step mass of the realized position pair
    is p^k q^(n-k) where k counts positions where the two coordinates
    drew the same letter, so each trajectory contributes
    -(k log p + (n - k) log q) / n.  At rho = 0 only diagonal draws
    occur and the q term never appears.
    """
    if not isinstance(n, int) or n < 1:
        raise InputError(f"n must be a positive integer, got {n!r}")
    if not isinstance(trials, int) or trials < 1:
        raise InputError(f"trials must be a positive integer, got {trials!r}")
    p, q = coupling_weights(m, rho)
    diag_prob = m * p
    log_p = math.log(p)
    log_q = math.log(q) if q > 0 else 0.0  # k = n whenever q = 0
    vals = np.empty(trials, dtype=np.float64)
    for t in range(trials):
        gen = rngmod.generator(seed, rngmod.stream_id(rngmod.STREAM_ENTROPY, t))
        k = int((gen.random(n) < diag_prob).sum())
        if q == 0.0 and k < n:
            raise ValidationError("off-diagonal draw at rho = 0")
        if log_p == log_q:  # uniform product law: constant regardless of k
            vals[t] = -log_p
        else:
            vals[t] = -(k * log_p + (n - k) * log_q) / n
    return _mean_result(
        vals, n, seed, "shannon-pointwise", {"m": m, "rho": float(rho), "p": p, "q": q}
    )


@dataclass(frozen=True)
class EntropyCurve:
    """Exact entropies H(pi_n) for n = 1..n_max with truncation bounds.

    ``values[i]`` is the entropy of the kept mass at level ns[i], a
    certified lower bound for the true H; ``upper_bounds[i]`` adds the
    worst-case contribution of the dropped mass.  Untruncated levels
    have values == upper_bounds.
    """

    ns: tuple[int, ...]
    values: tuple[float, ...]
    upper_bounds: tuple[float, ...]
    truncated: tuple[bool, ...]
    lost_mass: tuple[float, ...]

    def __post_init__(self):
        if not (len(self.ns) == len(self.values) == len(self.upper_bounds)):
            raise ValidationError("curve fields must have equal length")

    @property
    def upper_rate(self) -> float:
        """min_n H_n / n, an upper bound for the entropy rate by subadditivity."""
        return min(ub / n for n, ub in zip(self.ns, self.upper_bounds))

    @property
    def increments(self) -> tuple[float, ...]:
        """H_n - H_(n-1) point estimates of the rate (H_0 = 0)."""
        prev = 0.0
        out = []
        for v in self.values:
            out.append(v - prev)
            prev = v
        return tuple(out)


def entropy_exact_curve(
    step: FiniteMeasure,
    n_max: int,
    cap: int = DEFAULT_CAP,
    engine: str = "auto",
) -> EntropyCurve:
    """Entropies of the exact convolution powers up to n_max."""
    ns, vals, ubs, flags, lost = [], [], [], [], []
    for lv in iter_convolution_levels(step, n_max, cap=cap, strict=False, engine=engine):
        ns.append(lv.level)
        vals.append(lv.entropy_kept())
        ubs.append(lv.entropy_upper_bound())
        flags.append(lv.truncated)
        lost.append(float(lv.lost_mass))
    return EntropyCurve(tuple(ns), tuple(vals), tuple(ubs), tuple(flags), tuple(lost))


def entropy_rate_estimate(curve: EntropyCurve) -> tuple[float, float]:
    """(certified upper bound, point estimate) of the entropy rate.

    The upper bound is min H_n / n, true by subadditivity; the point
    estimate is the increment H_n - H_(n-1) at the deepest untruncated
    level, which converges much faster.  Needs at least two untruncated
    levels.
    """
    exact_idx = [i for i, t in enumerate(curve.truncated) if not t]
    if len(exact_idx) < 2:
        raise ValidationError("need at least two untruncated levels for a rate")
    i = exact_idx[-1]
    return curve.upper_rate, curve.increments[i]


def _entropy_rate_result(curve: EntropyCurve, seed: int) -> EstimateResult:
    """Entropy increment estimate wrapped in the common result shape."""
    upper, increment = entropy_rate_estimate(curve)
    i = [j for j, t in enumerate(curve.truncated) if not t][-1]
    return EstimateResult(
        value=increment,
        std_error=0.0,
        ci_low=increment,
        ci_high=increment,
        n=curve.ns[i],
        trials=1,
        seed=seed,
        method="entropy-increment",
        details={"upper_rate": upper, "levels_used": curve.ns[i]},
    )


# ---------------------------------------------------------------------------
# total variation


def _tv_value_classes(mu: FiniteMeasure, rho_w, n: int, cap: int) -> Weight:
    """Exact TV via the per-position value-class convolution.

    Valid when the support consists of distinct single letters and no
    cancellation can occur: the position pair after n steps determines
    the letter matrix, so both the coupled and the independent n-step
    masses factor over positions.  The joint distribution of the pair
    (coupled step mass, independent step mass) is convolved
    multiplicatively; total variation is read off the classes.
    """
    step: Counter = Counter()
    one = Fraction(1) if isinstance(rho_w, Fraction) else 1.0
    for x, wx in mu.atoms:
        for y, wy in mu.atoms:
            vmm = wx * wy
            vpi = rho_w * vmm
            if x == y:
                vpi = vpi + (one - rho_w) * wx
            step[(vpi, vmm)] += 1
    cur = dict(step)
    for _ in range(2, n + 1):
        new: dict = {}
        for (a, b), c in cur.items():
            for (da, db), dc in step.items():
                key = (a * da, b * db)
                if key in new:
                    new[key] += c * dc
                else:
                    new[key] = c * dc
        if len(new) > cap:
            raise BudgetError(f"value-class count {len(new)} exceeds cap {cap}")
        cur = new
    if isinstance(rho_w, Fraction) and mu.exact:
        return sum((c * abs(a - b) for (a, b), c in cur.items()), Fraction(0)) / 2
    return math.fsum(c * abs(a - b) for (a, b), c in cur.items()) / 2


def _tv_pair_convolution(mu: FiniteMeasure, rho_w, n: int, cap: int) -> Weight:
    """Exact TV via full convolution of the coupled pair walk.

    Convolves the coupling and the marginal separately (strict: the cap
    must not truncate, or the result would not be exact) and sums
    |pi_n(u, v) - mu_n(u) mu_n(v)| over the coupled support plus the
    independent mass outside it.
    """
    pi = build_pi_rho(mu, rho_w)
    last_pi = None
    for lv in iter_convolution_levels(pi, n, cap=cap, strict=True):
        last_pi = lv
    last_mu = None
    for lv in iter_convolution_levels(mu, n, cap=cap, strict=True):
        last_mu = lv
    assert last_pi is not None and last_mu is not None
    if last_pi.exact and last_mu.exact:
        d_pi = last_pi.denominator
        d_mu2 = last_mu.denominator**2
        mu_num = dict(last_mu.iter_items())
        s = 0
        covered = 0
        for (u, v), a in last_pi.iter_items():
            b = mu_num.get(u, 0) * mu_num.get(v, 0)
            covered += b
            s += abs(a * d_mu2 - b * d_pi)
        s += (d_mu2 - covered) * d_pi
        return Fraction(s, 2 * d_pi * d_mu2)
    mu_val = dict(last_mu.iter_items())
    terms = []
    covered_f = []
    for (u, v), a in last_pi.iter_items():
        b = float(mu_val.get(u, 0.0)) * float(mu_val.get(v, 0.0))
        covered_f.append(b)
        terms.append(abs(float(a) - b))
    terms.append(max(0.0, 1.0 - math.fsum(covered_f)))
    return math.fsum(terms) / 2


def tv_exact(
    mu: FiniteMeasure,
    rho,
    n: int,
    cap: int = DEFAULT_CAP,
    route: str = "auto",
) -> Weight:
    """Total variation between the n-step coupled walk and independent copies.

    Exact (a Fraction) when mu is exact and rho is a Fraction or int;
    float otherwise.  ``route`` picks the algorithm: "classes" needs a
    single-letter inverse-free support, "pair" convolves the coupling
    on the product (feasible for small n), "auto" picks "classes" when
    valid.  The two routes are independent implementations and agree on
    their common domain.
    """
    if mu.kind != "single":
        raise ValidationError("tv_exact needs a single-coordinate step measure")
    if not isinstance(n, int) or n < 1:
        raise InputError(f"n must be a positive integer, got {n!r}")
    if isinstance(rho, float):
        rho_w: Weight = rho
    elif isinstance(rho, (int, Fraction)) and not isinstance(rho, bool):
        rho_w = Fraction(rho)
    else:
        raise InputError(f"rho must be a number, got {rho!r}")
    if not 0 <= rho_w <= 1:
        raise InputError(f"rho must lie in [0, 1], got {rho!r}")

    letters_only = mu.inverse_free and all(len(a) == 1 for a, _ in mu.atoms)
    if route == "auto":
        route = "classes" if letters_only else "pair"
    if route == "classes":
        if not letters_only:
            raise ValidationError(
                "value-class route needs a single-letter inverse-free support"
            )
        return _tv_value_classes(mu, rho_w, n, cap)
    if route == "pair":
        return _tv_pair_convolution(mu, rho_w, n, cap)
    raise InputError(f"unknown route {route!r}")


def _wilson(successes: int, trials: int, z: float = Z95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if trials < 1:
        raise InputError("Wilson interval needs at least one trial")
    phat = successes / trials
    denom = 1.0 + z * z / trials
    center = (phat + z * z / (2 * trials)) / denom
    half = (
        z
        * math.sqrt(phat * (1.0 - phat) / trials + z * z / (4 * trials * trials))
        / denom
    )
    return max(0.0, center - half), min(1.0, center + half)


def tv_lower_bound_mc(
    mu: FiniteMeasure,
    rho: float,
    n: int,
    trials: int,
    seed: int,
    threshold_frac: float = 0.2,
    workers: int = 1,
) -> EstimateResult:
    """Monte Carlo lower bound on TV via a prefix-coincidence event.

    Let A be the event that the Gromov product of the coordinate
    positions after n steps is at least ceil(threshold_frac * n).  TV
    dominates |P_coupled(A) - P_independent(A)|; both probabilities are
    estimated on disjoint substream families of the same seed, with
    Wilson intervals propagated to the difference.  Small thresholds
    give the event enough mass to separate couplings close to
    independence; the default 0.2 suits strongly coupled walks.
    """
    if mu.kind != "single":
        raise ValidationError("tv_lower_bound_mc needs a single-coordinate measure")
    if not 0 < threshold_frac <= 1:
        raise InputError(f"threshold_frac must lie in (0, 1], got {threshold_frac!r}")
    j = math.ceil(threshold_frac * n)
    coupled = build_pi_rho(mu, rho)
    indep = product_measure(mu, mu)
    g_c = walkers.pair_prefix_lengths(
        coupled, n, trials, seed, rngmod.STREAM_TV_COUPLED, workers=workers
    )
    g_i = walkers.pair_prefix_lengths(
        indep, n, trials, seed, rngmod.STREAM_TV_INDEPENDENT, workers=workers
    )
    k1 = int((g_c >= j).sum())
    k2 = int((g_i >= j).sum())
    p1, p2 = k1 / trials, k2 / trials
    lo1, hi1 = _wilson(k1, trials)
    lo2, hi2 = _wilson(k2, trials)
    half = math.sqrt(((hi1 - lo1) / 2) ** 2 + ((hi2 - lo2) / 2) ** 2)
    value = abs(p1 - p2)
    se = math.sqrt(
        p1 * (1 - p1) / trials + p2 * (1 - p2) / trials
    )
    return EstimateResult(
        value=value,
        std_error=se,
        ci_low=max(0.0, value - half),
        ci_high=min(1.0, value + half),
        n=n,
        trials=trials,
        seed=seed,
        method="tv-lower-mc",
        details={
            "threshold": j,
            "threshold_frac": threshold_frac,
            "p_coupled": p1,
            "p_independent": p2,
            "wilson_coupled": [lo1, hi1],
            "wilson_independent": [lo2, hi2],
        },
    )


# ---------------------------------------------------------------------------
# sweeps over the coupling parameter


@dataclass(frozen=True)
class SweepRow:
    rho: float
    entropy: EstimateResult
    drift: EstimateResult
    tv_lower: tuple[tuple[int, EstimateResult], ...]
    closed_form_entropy: float | None


@dataclass(frozen=True)
class SweepTable:
    rows: tuple[SweepRow, ...]
    uniform_letters: int | None  # m when semigroup closed forms apply


def rho_sweep(
    mu: FiniteMeasure,
    rho_grid,
    n: int,
    trials: int,
    seed: int,
    tv_ns: tuple[int, ...] = (),
    threshold_frac: float = 0.2,
    entropy_exact_max: int = 8,
    cap: int = DEFAULT_CAP,
    workers: int = 1,
) -> SweepTable:
    """Estimate entropy, drift, and TV lower bounds over a rho grid.

    Grid cells reuse the same substreams (common random numbers), which
    keeps curves smooth in rho and results deterministic in the seed.
    Uniform single-letter supports use the pointwise entropy estimator
    and record the closed form; other supports use exact convolution
    increments up to ``entropy_exact_max`` levels.
    """
    grid = [float(r) for r in rho_grid]
    if not grid:
        raise InputError("rho grid is empty")
    for r in grid:
        if not 0 <= r <= 1:
            raise InputError(f"rho must lie in [0, 1], got {r}")
    m = uniform_letter_count(mu)
    rows = []
    for r in grid:
        coupled = build_pi_rho(mu, r)
        if m is not None:
            ent = shannon_pointwise(m, r, n, trials, seed)
            closed = h_semigroup(m, r)
        else:
            curve = entropy_exact_curve(coupled, entropy_exact_max, cap=cap)
            ent = _entropy_rate_result(curve, seed)
            closed = None
        dr = drift_mc(coupled, n, trials, seed, workers=workers)
        tvs = []
        for tn in tv_ns:
            tvs.append(
                (
                    tn,
                    tv_lower_bound_mc(
                        mu, r, tn, trials, seed, threshold_frac, workers=workers
                    ),
                )
            )
        rows.append(SweepRow(r, ent, dr, tuple(tvs), closed))
    return SweepTable(tuple(rows), m)


@dataclass(frozen=True)
class RhoStarEstimate:
    """Largest grid rho whose entropy sits below the top value by the margin."""

    value: float
    margin: float
    warning: bool  # set when no grid point qualifies


def rho_star_estimate(table: SweepTable, margin: float | None = None) -> RhoStarEstimate:
    """Estimate the divergence threshold from a sweep table.

    Compares each grid entropy against the entropy at the largest rho
    (the independent end).  The default margin is three times the
    pooled standard error at that reference point.  Returns 0 with a
    warning when nothing qualifies; on coarse grids with a clear
    entropy gap this picks the last grid point below the reference.
    """
    if not table.rows:
        raise InputError("sweep table is empty")
    rows = sorted(table.rows, key=lambda r: r.rho)
    ref = rows[-1].entropy
    if margin is None:
        margin = 3.0 * ref.std_error
    qualifying = [r.rho for r in rows if r.entropy.value < ref.value - margin]
    if not qualifying:
        return RhoStarEstimate(0.0, margin, True)
    return RhoStarEstimate(max(qualifying), margin, False)
