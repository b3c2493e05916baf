"""Statistical verification layer: tail-index estimation, Monte Carlo
estimation of the limit-law constants (d1, d2, eta, psi, xi), the empirical
Laplace transform against the one-sided stable law, and the lattice
dichotomy diagnostic."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._rng import Stream
from .errors import TooFewSamples
from .laws import BiasLaw, GammaSolution, HarrisLaws, log_moment

HILL_FRACTIONS = (0.005, 0.01, 0.02)


@dataclass
class TailFit:
    gamma_hat: float
    se: float
    n_samples: int
    top_fraction: float
    method: str = "hill"
    loglog_slope: float = float("nan")
    non_power_law: bool = False
    instability: float = float("nan")


def hill_estimator(samples, top_fraction: float = 0.01,
                   stability_check: bool = True) -> TailFit:
    """Hill estimate of the tail index over the top ceil(fraction*n) order
    statistics, SE = gamma_hat/sqrt(k), with a rank-based log-log slope as a
    cross-check. Flags non-power-law behaviour when the estimate drifts more
    than 20% across the standard fraction ladder."""
    x = np.asarray(samples, dtype=np.float64)
    x = x[np.isfinite(x) & (x > 0)]
    n = x.size
    if n < 1000:
        raise TooFewSamples(f"hill estimator needs >= 1000 samples, got {n}")
    if not 0.0 < top_fraction <= 0.5:
        raise ValueError("top_fraction must lie in (0, 0.5]")
    x = np.sort(x)[::-1]
    k = max(2, math.ceil(top_fraction * n))
    threshold = x[k]
    if threshold <= 0 or x[0] == x[k]:
        return TailFit(float("nan"), float("nan"), n, top_fraction,
                       non_power_law=True)
    logs = np.log(x[:k]) - np.log(threshold)
    mean_log = logs.mean()
    if mean_log <= 0:
        return TailFit(float("nan"), float("nan"), n, top_fraction,
                       non_power_law=True)
    gamma_hat = 1.0 / mean_log
    se = gamma_hat / math.sqrt(k)
    ranks = np.arange(1, k + 1, dtype=np.float64)
    slope = -_ls_slope(np.log(x[:k]), np.log(ranks / n))
    fit = TailFit(gamma_hat, se, n, top_fraction, loglog_slope=slope)
    if stability_check:
        est = []
        for f in HILL_FRACTIONS:
            kk = max(2, math.ceil(f * n))
            if x[0] == x[kk]:
                continue
            ml = (np.log(x[:kk]) - np.log(x[kk])).mean()
            if ml > 0:
                est.append(1.0 / ml)
        if len(est) >= 2:
            lo, hi = min(est), max(est)
            fit.instability = (hi - lo) / lo
            fit.non_power_law = fit.instability > 0.20
    return fit


def _ls_slope(x, y) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xm, ym = x.mean(), y.mean()
    den = ((x - xm) ** 2).sum()
    return float(((x - xm) * (y - ym)).sum() / den) if den else float("nan")


def tail_prefactor(samples, gamma: float,
                   quantiles=(0.99, 0.995, 0.998, 0.999)) -> float:
    """Empirical A in P(X > u) ~ A u^-gamma: mean of u^gamma * P_hat(X > u)
    over a high-threshold grid."""
    x = np.sort(np.asarray(samples, dtype=np.float64))
    n = x.size
    vals = []
    for qq in quantiles:
        u = x[int(qq * n)]
        if u <= 0:
            continue
        p = (x > u).mean()
        vals.append(u ** gamma * p)
    return float(np.mean(vals))


# ---------------------------------------------------------------------------
# Trap-weight tail and the constant d1
# ---------------------------------------------------------------------------


@dataclass
class TrapTailReport:
    fit: TailFit
    gamma_ref: float
    d1_empirical: float
    d1_recursive: float          # via the depth-slice limit formula
    d1_ladder: dict[int, float]
    agreement_ratio: float
    n_samples: int


def trap_weight_tail(omegas, depths, gamma: float, harris: HarrisLaws,
                     bias: BiasLaw, top_fraction: float = 0.01,
                     k_range=range(8, 15)) -> TrapTailReport:
    """Fit the tail of omega(T) over P_{h,nu} samples and estimate d1 two
    independent ways: thresholded survival (empirical) and the depth-slice
    formula d1 = (gamma m_h)^-1 (int y^gamma log y nu)^-1 lim_k
    E(omega^gamma 1{D=k})."""
    om = np.asarray(omegas, dtype=np.float64)
    dp = np.asarray(depths)
    fit = hill_estimator(om, top_fraction)
    if fit.non_power_law:
        return TrapTailReport(fit, gamma, float("nan"), float("nan"), {},
                              float("nan"), om.size)
    d1_emp = tail_prefactor(om, gamma)
    pref = 1.0 / (gamma * harris.m_h * log_moment(bias, gamma))
    ladder = {}
    for k in k_range:
        sel = dp == k
        if sel.sum() >= 50:
            ladder[int(k)] = pref * float((om ** gamma * sel).mean())
    d1_rec = float(np.mean(list(ladder.values()))) if ladder else float("nan")
    ratio = d1_emp / d1_rec if d1_rec else float("nan")
    return TrapTailReport(fit, gamma, d1_emp, d1_rec, ladder, ratio, om.size)


# ---------------------------------------------------------------------------
# Pair-ensemble estimators: d2, eta, trap-time tail
# ---------------------------------------------------------------------------


@dataclass
class PairStats:
    """Per-snapshot columns consumed by the constant estimators."""

    omega: np.ndarray            # omega_ent(T_ent)
    r: np.ndarray                # renewal component count of the trap
    p_de: np.ndarray             # exact deep-excursion probability
    p_esc_k: np.ndarray          # hat escape probability at the working k
    c_f_k: np.ndarray            # correction factor at the working k
    cut_weight: np.ndarray       # omega_ent(base(C_k)) path weight (nan if r<=k)
    k: int
    h0: float                    # P_h(no edges) = p0/q_ext
    tau: np.ndarray | None = None
    fell_deep: np.ndarray | None = None
    censored: np.ndarray | None = None

    @property
    def count(self) -> int:
        return self.omega.size


@dataclass
class LadderEstimate:
    value: float
    se: float
    ladder: dict
    n_used: int


def estimate_d2(stats: PairStats, gamma: float,
                min_samples: int = 200) -> LadderEstimate:
    """(1 - p0/q_ext)^-1 E[(2 c_{f,k} omega_ent(base(C_k)))^gamma ; r > k]
    via Monte Carlo at the ensemble's working k."""
    sel = stats.r > stats.k
    if sel.sum() < min_samples:
        raise TooFewSamples(
            f"{int(sel.sum())} snapshots with r > k={stats.k}")
    vals = np.zeros(stats.count)
    vals[sel] = (2.0 * stats.c_f_k[sel] * stats.cut_weight[sel]) ** gamma
    scale = 1.0 / (1.0 - stats.h0)
    mean = float(vals.mean()) * scale
    se = float(vals.std(ddof=1) / math.sqrt(stats.count)) * scale
    return LadderEstimate(mean, se, {stats.k: mean}, int(sel.sum()))


def estimate_eta(stats: PairStats, quantile: float = 0.99,
                 min_above: int = 100) -> LadderEstimate:
    """Average of the fall-deep probability over snapshots conditioned on
    2 c_{f,k} omega exceeding its empirical quantile (the rho-limit
    approximation)."""
    if not 0.9 < quantile < 0.9999:
        raise ValueError("quantile must lie in (0.9, 0.9999)")
    score = 2.0 * stats.c_f_k * stats.omega
    u = np.quantile(score, quantile)
    sel = score > u
    if sel.sum() < min_above:
        raise TooFewSamples(f"{int(sel.sum())} snapshots above the "
                            f"{quantile} quantile")
    fd = stats.p_de[sel] / (1.0 - (1.0 - stats.p_esc_k[sel]) * (1.0 - stats.p_de[sel]))
    return LadderEstimate(float(fd.mean()),
                          float(fd.std(ddof=1) / math.sqrt(fd.size)),
                          {quantile: float(fd.mean())}, int(sel.sum()))


@dataclass
class TrapTimeReport:
    fit: TailFit
    gamma_ref: float
    censored_fraction: float
    prefactor_empirical: float
    prefactor_composed: float | None
    ratio: float | None
    n_samples: int


def trap_time_tail(taus, censored, gamma: float,
                   composed_prefactor: float | None = None,
                   top_fraction: float = 0.01,
                   max_censored: float = 0.02) -> TrapTimeReport:
    """Tail fit of the total trap time over a Q-approximate pair ensemble,
    with the prefactor compared to eta d1 d2 Gamma(1+gamma) when the
    composed constants are supplied."""
    taus = np.asarray(taus, dtype=np.float64)
    cen = np.asarray(censored, dtype=bool)
    frac_cen = float(cen.mean()) if cen.size else 0.0
    if frac_cen > max_censored:
        raise TooFewSamples(f"censored fraction {frac_cen:.3f} exceeds "
                            f"{max_censored}")
    ok = taus[~cen]
    fit = hill_estimator(ok, top_fraction)
    pref = tail_prefactor(ok, gamma) if not fit.non_power_law else float("nan")
    ratio = None
    if composed_prefactor is not None and np.isfinite(pref):
        ratio = pref / composed_prefactor
    return TrapTimeReport(fit, gamma, frac_cen, pref, composed_prefactor,
                          ratio, int(ok.size))


# ---------------------------------------------------------------------------
# The composed constant xi and the stable-law comparison
# ---------------------------------------------------------------------------


@dataclass
class ConstantEstimates:
    gamma: float
    d1: float
    d1_se: float
    d2: float
    d2_se: float
    eta: float
    eta_se: float
    psi: float
    psi_se: float
    meta: dict = field(default_factory=dict)

    @property
    def xi(self) -> float:
        return compose_xi(self.psi, self.eta, self.d1, self.d2, self.gamma)


def compose_xi(psi: float, eta: float, d1: float, d2: float,
               gamma: float) -> float:
    """xi = psi eta d1 d2 Gamma(1+gamma) Gamma(1-gamma)."""
    return psi * eta * d1 * d2 * math.gamma(1.0 + gamma) * math.gamma(1.0 - gamma)


def sample_stable(gamma: float, size: int, rng: Stream) -> np.ndarray:
    """One-sided stable law S_gamma with E exp(-l S) = exp(-l^gamma), by
    Kanter's uniform/exponential transform (the classical sampler; the
    independent oracle for laplace_compare)."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("one-sided stable index must lie in (0, 1)")
    u = rng.u01_array(size)
    u = np.clip(u, 1e-12, 1.0 - 1e-12)
    e = -np.log(np.clip(1.0 - rng.u01_array(size), 1e-300, 1.0))
    a = (np.sin(gamma * np.pi * u) ** gamma *
         np.sin((1.0 - gamma) * np.pi * u) ** (1.0 - gamma) /
         np.sin(np.pi * u))
    return (a ** (1.0 / (1.0 - gamma)) / e) ** ((1.0 - gamma) / gamma)


@dataclass
class LaplaceReport:
    lambdas: np.ndarray
    empirical: np.ndarray
    theory: np.ndarray
    deviation: np.ndarray
    ci_halfwidth: np.ndarray
    max_deviation: float


def laplace_compare(scaled_samples, gamma: float, xi: float,
                    lambdas=(0.25, 0.5, 1.0, 2.0, 4.0),
                    rng: Stream | None = None,
                    n_boot: int = 200) -> LaplaceReport:
    """Empirical E exp(-l X) for X = n^(-1/gamma) Delta_n against
    exp(-xi l^gamma), with bootstrap confidence halfwidths."""
    x = np.asarray(scaled_samples, dtype=np.float64)
    if x.size < 1000:
        raise TooFewSamples(f"laplace comparison needs >= 1000 samples, got {x.size}")
    lam = np.asarray(lambdas, dtype=np.float64)
    emp = np.array([np.exp(-l * x).mean() for l in lam])
    theo = np.exp(-xi * lam ** gamma)
    dev = np.abs(emp - theo)
    ci = np.full(lam.size, float("nan"))
    if rng is not None:
        boots = np.empty((n_boot, lam.size))
        for b in range(n_boot):
            idx = (rng.u01_array(x.size) * x.size).astype(np.int64)
            xb = x[idx]
            boots[b] = [np.exp(-l * xb).mean() for l in lam]
        ci = 1.96 * boots.std(axis=0, ddof=1)
    return LaplaceReport(lam, emp, theo, dev, ci, float(dev.max()))


# ---------------------------------------------------------------------------
# Displacement scaling
# ---------------------------------------------------------------------------


@dataclass
class SlopeReport:
    slope: float
    ci_halfwidth: float
    xs: np.ndarray
    medians: np.ndarray


def displacement_exponent(n_values, samples_by_n,
                          rng: Stream | None = None,
                          n_boot: int = 200) -> SlopeReport:
    """Slope of log median(sample) against log n over a geometric n grid
    (expected 1/gamma for hitting times, gamma for displacement), bootstrap
    CI over replicas."""
    ns = np.asarray(n_values, dtype=np.float64)
    if ns.size < 4:
        raise TooFewSamples("need >= 4 grid points")
    med = np.array([np.median(s) for s in samples_by_n])
    slope = _ls_slope(np.log(ns), np.log(med))
    ci = float("nan")
    if rng is not None:
        slopes = np.empty(n_boot)
        for b in range(n_boot):
            meds = []
            for s in samples_by_n:
                s = np.asarray(s)
                idx = (rng.u01_array(s.size) * s.size).astype(np.int64)
                meds.append(np.median(s[idx]))
            slopes[b] = _ls_slope(np.log(ns), np.log(meds))
        ci = float(1.96 * slopes.std(ddof=1))
    return SlopeReport(slope, ci, ns, med)


# ---------------------------------------------------------------------------
# Lattice / non-lattice dichotomy
# ---------------------------------------------------------------------------


@dataclass
class DichotomyReport:
    resultant_lattice: float
    resultant_nonlattice: float
    ratio: float
    n_lattice: int
    n_nonlattice: int
    beta: float
    threshold_lattice: float
    threshold_nonlattice: float


def circular_resultant(samples, beta: float) -> float:
    """R = |mean exp(2 pi i u)| of the fractional parts u = log(sample)/
    log(beta) mod 1; 1 for perfect log-beta clustering, ~sqrt(pi/4N) noise
    floor for equidistribution."""
    x = np.asarray(samples, dtype=np.float64)
    x = x[x > 0]
    u = np.log(x) / math.log(beta)
    u = u - np.floor(u)
    z = np.exp(2j * np.pi * u)
    return float(abs(z.mean()))


def lattice_dichotomy(samples_lattice, samples_nonlattice, beta: float,
                      min_samples: int = 10_000) -> DichotomyReport:
    """Compare log-beta clustering of deep-trap holding scales between a
    lattice and a non-lattice bias law."""
    a = np.asarray(samples_lattice, dtype=np.float64)
    b = np.asarray(samples_nonlattice, dtype=np.float64)
    if a.size < min_samples or b.size < min_samples:
        raise TooFewSamples(
            f"dichotomy needs >= {min_samples} per config, got "
            f"{a.size}/{b.size}")
    ra = circular_resultant(a, beta)
    rb = circular_resultant(b, beta)
    return DichotomyReport(ra, rb, ra / rb if rb else float("inf"),
                           a.size, b.size, beta, float(a.min()),
                           float(b.min()))
