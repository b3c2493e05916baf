"""Offspring and edge-bias laws, generating functions, the Harris
decomposition of a supercritical Galton-Watson law, and the solver for the
sub-ballistic exponent gamma."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import NoRoot, NotSupercritical

MAX_SUPPORT = 64

FIXED_POINT_TOL = 1e-12
GAMMA_TOL = 1e-10
GAMMA_MAX = 64.0


class LeaflessWarning(UserWarning):
    """p0 = 0: the tree has no leaves and the walk sees no traps."""


@dataclass(frozen=True)
class OffspringLaw:
    """Finite-support reproduction law p_0..p_K."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", p)
        if p.ndim != 1 or p.size < 1 or p.size > MAX_SUPPORT + 1:
            raise ValueError(f"offspring support must be 1..{MAX_SUPPORT + 1} terms")
        if np.any(p < 0):
            raise ValueError("offspring probabilities must be nonnegative")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"offspring probabilities sum to {p.sum()!r}, not 1")

    @classmethod
    def from_map(cls, mapping: dict[int, float]) -> "OffspringLaw":
        if not mapping:
            raise ValueError("empty offspring map")
        kmax = max(mapping)
        if kmax > MAX_SUPPORT:
            raise ValueError(f"offspring support exceeds K={MAX_SUPPORT}")
        p = np.zeros(kmax + 1)
        for k, v in mapping.items():
            if k < 0:
                raise ValueError("negative offspring count")
            p[k] = v
        return cls(p)

    @property
    def mean(self) -> float:
        return float(np.arange(self.probs.size) @ self.probs)

    @property
    def p0(self) -> float:
        return float(self.probs[0])

    @property
    def supercritical(self) -> bool:
        return self.mean > 1.0

    @property
    def leafless(self) -> bool:
        return self.p0 == 0.0

    def pgf(self, z: float) -> float:
        return pgf_eval(self, z)

    def pgf_prime(self, z: float) -> float:
        return pgf_eval(self, z, derivative=True)

    def cdf(self) -> np.ndarray:
        return np.cumsum(self.probs)


def pgf_eval(law: OffspringLaw, z: float, derivative: bool = False) -> float:
    """f(z) = sum p_i z^i, or f'(z) = sum i p_i z^(i-1)."""
    if not 0.0 <= z <= 1.0:
        raise ValueError(f"pgf argument {z} outside [0, 1]")
    p = law.probs
    if derivative:
        acc = 0.0
        for i in range(p.size - 1, 0, -1):
            acc = acc * z + i * p[i]
        return float(acc)
    acc = 0.0
    for i in range(p.size - 1, -1, -1):
        acc = acc * z + p[i]
    return float(acc)


def extinction_probability(law: OffspringLaw) -> float:
    """Smallest fixed point of the generating function in [0, 1).

    Bisection on [0, 1-delta] with delta shrunk until f(1-delta) < 1-delta;
    absolute tolerance 1e-12. A leafless law returns 0.0 with a
    LeaflessWarning instead of raising.
    """
    if not law.supercritical:
        raise NotSupercritical(f"offspring mean {law.mean} <= 1")
    if law.leafless:
        warnings.warn("p0 = 0: extinction probability is 0", LeaflessWarning,
                      stacklevel=2)
        return 0.0
    delta = 1e-3
    while pgf_eval(law, 1.0 - delta) >= 1.0 - delta:
        delta /= 2.0
        if delta < 1e-15:
            raise NotSupercritical("no gap below the fixed point at 1")
    lo, hi = 0.0, 1.0 - delta
    # f(z) - z > 0 on [0, q_ext), < 0 on (q_ext, 1)
    while hi - lo > FIXED_POINT_TOL:
        mid = 0.5 * (lo + hi)
        if pgf_eval(law, mid) - mid > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class BiasLaw:
    """Edge-bias law nu on [q, Q] in (1, inf): discrete atoms or uniform."""

    kind: str  # "atoms" | "uniform"
    atoms: tuple[tuple[float, float], ...] = ()
    q: float = 0.0
    Q: float = 0.0

    def __post_init__(self):
        if self.kind == "atoms":
            if not self.atoms:
                raise ValueError("empty atom list")
            vals = [v for v, _ in self.atoms]
            ps = [p for _, p in self.atoms]
            if min(vals) <= 1.0:
                raise ValueError("bias atoms must exceed 1")
            if any(p < 0 for p in ps) or abs(sum(ps) - 1.0) > 1e-12:
                raise ValueError("atom probabilities must be >= 0 and sum to 1")
            object.__setattr__(self, "q", float(min(vals)))
            object.__setattr__(self, "Q", float(max(vals)))
        elif self.kind == "uniform":
            if not 1.0 < self.q <= self.Q:
                raise ValueError("uniform bias needs 1 < q <= Q")
        else:
            raise ValueError(f"unknown bias kind {self.kind!r}")

    @classmethod
    def from_atoms(cls, mapping) -> "BiasLaw":
        items = tuple(sorted((float(v), float(p)) for v, p in
                             (mapping.items() if isinstance(mapping, dict) else mapping)))
        return cls(kind="atoms", atoms=items)

    @classmethod
    def from_uniform(cls, q: float, Q: float) -> "BiasLaw":
        return cls(kind="uniform", q=float(q), Q=float(Q))

    @property
    def support_min(self) -> float:
        return self.q

    @property
    def support_max(self) -> float:
        return self.Q

    @property
    def lattice(self) -> bool:
        """True iff all log-atom values are integer multiples of a common
        real. Tested pairwise by rational dependence of log ratios up to
        tolerance 1e-9; a uniform law is never lattice."""
        if self.kind == "uniform":
            return False
        logs = [math.log(v) for v, _ in self.atoms]
        ref = logs[0]
        for lg in logs[1:]:
            if not _rationally_dependent(lg / ref, tol=1e-9):
                return False
        return True

    def tables(self) -> tuple[int, np.ndarray, np.ndarray, float, float]:
        """(kind flag, atom values, atom cdf, q, Q) for the kernels."""
        if self.kind == "atoms":
            vals = np.array([v for v, _ in self.atoms])
            cdf = np.cumsum([p for _, p in self.atoms])
            return 0, vals, cdf, self.q, self.Q
        return 1, np.empty(0), np.empty(0), self.q, self.Q


def _rationally_dependent(x: float, tol: float, max_den: int = 10 ** 4) -> bool:
    # max_den must stay well below tol**-0.5: every real admits p/q within
    # ~1/q**2, so larger denominators would declare everything rational
    frac = Fraction(x).limit_denominator(max_den)
    return abs(x - float(frac)) <= tol


def moment(bias: BiasLaw, s: float) -> float:
    """int y^s nu(dy); closed form for both kinds."""
    if s < 0:
        raise ValueError("moment order must be >= 0")
    if bias.kind == "atoms":
        return float(sum(p * v ** s for v, p in bias.atoms))
    q, Q = bias.q, bias.Q
    if Q == q:
        return q ** s
    return (Q ** (s + 1) - q ** (s + 1)) / ((s + 1) * (Q - q))


def log_moment(bias: BiasLaw, s: float) -> float:
    """int y^s log(y) nu(dy), the s-derivative of moment()."""
    if bias.kind == "atoms":
        return float(sum(p * v ** s * math.log(v) for v, p in bias.atoms))
    q, Q = bias.q, bias.Q
    if Q == q:
        return q ** s * math.log(q)

    def prim(y):
        return y ** (s + 1) * ((s + 1) * math.log(y) - 1) / (s + 1) ** 2

    return (prim(Q) - prim(q)) / (Q - q)


@dataclass(frozen=True)
class BackboneJointLaw:
    """P(j, m): j >= 1 surviving (backbone) children and m bud children of a
    backbone vertex, j + m <= K.

    P(j, m) = p_{j+m} C(j+m, j) (1-q)^j q^m / (1-q), the unique law under
    which each child survives independently with probability 1-q conditioned
    on at least one survivor.
    """

    j: np.ndarray
    m: np.ndarray
    prob: np.ndarray

    @classmethod
    def build(cls, offspring: OffspringLaw, q_ext: float) -> "BackboneJointLaw":
        js, ms, ps = [], [], []
        p = offspring.probs
        for n in range(1, p.size):
            if p[n] == 0.0:
                continue
            for j in range(1, n + 1):
                m = n - j
                w = p[n] * math.comb(n, j) * (1 - q_ext) ** j * q_ext ** m / (1 - q_ext)
                js.append(j)
                ms.append(m)
                ps.append(w)
        return cls(np.array(js, dtype=np.int64), np.array(ms, dtype=np.int64),
                   np.array(ps, dtype=np.float64))

    @property
    def total(self) -> float:
        return float(self.prob.sum())

    def marginal_total(self, n: int) -> float:
        """P(j + m = n), should equal p_n (1 - q^n) / (1 - q)."""
        sel = (self.j + self.m) == n
        return float(self.prob[sel].sum())

    def backbone_marginal(self) -> np.ndarray:
        """P(j) for j = 1..K, the offspring law g of the leafless backbone."""
        kmax = int(self.j.max()) if self.j.size else 1
        out = np.zeros(kmax)
        for jj, pp in zip(self.j, self.prob):
            out[jj - 1] += pp
        return out

    def tables(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.j, self.m, np.cumsum(self.prob)

    def g_cdf(self) -> np.ndarray:
        return np.cumsum(self.backbone_marginal())


@dataclass(frozen=True)
class HarrisLaws:
    """Harris decomposition of a supercritical law: subcritical trap law h,
    the backbone joint offspring law, q_ext and m_h = f'(q_ext)."""

    offspring: OffspringLaw
    h: OffspringLaw
    joint: BackboneJointLaw
    q_ext: float
    m_h: float
    leafless: bool = field(default=False)


def harris_transform(law: OffspringLaw) -> HarrisLaws:
    """h_k = p_k q_ext^(k-1) (from h(t) = f(q_ext t) / q_ext), the backbone
    joint table, and m_h = f'(q_ext) < 1."""
    if law.leafless:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", LeaflessWarning)
            extinction_probability(law)  # validates supercriticality
        h = OffspringLaw(np.array([1.0]))
        js = np.arange(1, law.probs.size)[law.probs[1:] > 0]
        joint = BackboneJointLaw(js, np.zeros_like(js),
                                 law.probs[1:][law.probs[1:] > 0].copy())
        return HarrisLaws(law, h, joint, 0.0, 0.0, leafless=True)
    q_ext = extinction_probability(law)
    hk = np.array([p * q_ext ** (k - 1) for k, p in enumerate(law.probs)])
    h = OffspringLaw(hk / hk.sum())  # renormalize 1e-16 residue only
    m_h = law.pgf_prime(q_ext)
    assert m_h < 1.0, "Harris trap law must be subcritical"
    joint = BackboneJointLaw.build(law, q_ext)
    return HarrisLaws(law, h, joint, q_ext, m_h)


@dataclass(frozen=True)
class GammaSolution:
    gamma: float
    sub_ballistic: bool
    residual: float
    m_h: float


def solve_gamma(law: OffspringLaw, bias: BiasLaw) -> GammaSolution:
    """The unique gamma > 0 with int y^gamma nu(dy) = 1 / f'(q_ext).

    The moment is strictly increasing in gamma (all biases exceed 1), so
    plain bisection with tolerance 1e-10 applies; flags gamma < 1 as the
    sub-ballistic regime.
    """
    harris = harris_transform(law)
    if harris.leafless:
        raise NoRoot("leafless law: no traps, gamma undefined")
    target = 1.0 / harris.m_h
    if moment(bias, 0.0) >= target:
        raise NoRoot("moment at 0 already exceeds 1/f'(q_ext)")
    if moment(bias, GAMMA_MAX) < target:
        raise NoRoot(f"no root below gamma_max={GAMMA_MAX}")
    lo, hi = 0.0, GAMMA_MAX
    while hi - lo > GAMMA_TOL:
        mid = 0.5 * (lo + hi)
        if moment(bias, mid) < target:
            lo = mid
        else:
            hi = mid
    gamma = 0.5 * (lo + hi)
    residual = moment(bias, gamma) * harris.m_h - 1.0
    return GammaSolution(gamma, gamma < 1.0, residual, harris.m_h)
