"""Exact finite-tree Markov-chain oracles via linear tree recursions:
hitting probabilities, expected hitting times, escape/deep-excursion
probabilities with certified truncation enclosures, and the fall-deep
formula."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .errors import NonFinite
from .tree import BackboneTreePair, TrapTree, WeightedTree, trap_renewal_stats


@dataclass(frozen=True)
class AbsorptionSpec:
    """Hit A before B from start on a finite weighted tree. Vertices absent
    from A and B behave per the walk's transition law; childless vertices
    reflect naturally (parent probability 1)."""

    tree: WeightedTree
    start: int
    targets: tuple[int, ...]            # A
    rivals: tuple[int, ...] = ()        # B

    def __post_init__(self):
        if not self.targets:
            raise ValueError("empty target set")
        if set(self.targets) & set(self.rivals):
            raise ValueError("A and B must be disjoint")


def hit_probability(spec: AbsorptionSpec) -> float:
    """P(hit A before B) from start; degenerate starts return 0/1."""
    if spec.start in spec.targets:
        return 1.0
    if spec.start in spec.rivals:
        return 0.0
    t = spec.tree
    fixed = np.zeros(t.n, np.int8)
    val = np.zeros(t.n, np.float64)
    for v in spec.targets:
        fixed[v] = 1
        val[v] = 1.0
    for v in spec.rivals:
        fixed[v] = 1
    x, ok = K.absorb_solve(t.parent, t.bias, t.first_child, t.next_sibling,
                           t.n, fixed, val, 0.0)
    if not ok:
        raise NonFinite("absorption system is singular")
    return float(min(1.0, max(0.0, x[spec.start])))


def mean_hitting_time(spec: AbsorptionSpec) -> float:
    """Expected steps to absorb in A (rivals must be empty); equals
    2*omega(T_ent)-1 from ent to head on a single-entry trap."""
    if spec.rivals:
        raise ValueError("mean hitting time takes a single absorbing set")
    if spec.start in spec.targets:
        return 0.0
    t = spec.tree
    fixed = np.zeros(t.n, np.int8)
    val = np.zeros(t.n, np.float64)
    for v in spec.targets:
        fixed[v] = 1
    x, ok = K.absorb_solve(t.parent, t.bias, t.first_child, t.next_sibling,
                           t.n, fixed, val, 1.0)
    if not ok:
        raise NonFinite("no absorbing state reachable")
    return float(x[spec.start])


def hit_probability_dense(spec: AbsorptionSpec) -> float:
    """Independent oracle: dense linear solve of the same harmonic system."""
    t = spec.tree
    n = t.n
    P = np.zeros((n, n))
    for v in range(n):
        if v in spec.targets or v in spec.rivals:
            P[v, v] = 1.0
            continue
        children = t.children(v)
        s = sum(float(t.bias[c]) for c in children)
        if t.parent[v] == -1:
            for c in children:
                P[v, c] = float(t.bias[c]) / s
        else:
            total = 1.0 + s
            P[v, int(t.parent[v])] = 1.0 / total
            for c in children:
                P[v, c] = float(t.bias[c]) / total
    b = np.zeros(n)
    for v in spec.targets:
        b[v] = 1.0
    A = np.eye(n) - P
    for v in list(spec.targets) + list(spec.rivals):
        A[v] = 0.0
        A[v, v] = 1.0
    x = np.linalg.solve(A, b)
    return float(x[spec.start])


def mean_hitting_time_dense(spec: AbsorptionSpec) -> float:
    t = spec.tree
    n = t.n
    keep = [v for v in range(n) if v not in spec.targets]
    idx = {v: i for i, v in enumerate(keep)}
    m = len(keep)
    A = np.eye(m)
    b = np.ones(m)
    for v in keep:
        children = t.children(v)
        s = sum(float(t.bias[c]) for c in children)
        if t.parent[v] == -1:
            probs = [(c, float(t.bias[c]) / s) for c in children]
        else:
            total = 1.0 + s
            probs = [(int(t.parent[v]), 1.0 / total)]
            probs += [(c, float(t.bias[c]) / total) for c in children]
        for u, p in probs:
            if u in idx:
                A[idx[v], idx[u]] -= p
    x = np.linalg.solve(A, b)
    return float(x[idx[spec.start]])


# ---------------------------------------------------------------------------
# Pair constants
# ---------------------------------------------------------------------------


def fall_deep_probability(p_esc: float, p_de: float) -> float:
    """p_de / (1 - (1-p_esc)(1-p_de)): probability that repeated excursions
    ever take the walk to the trap base."""
    if not (0.0 < p_esc <= 1.0 and 0.0 < p_de <= 1.0):
        raise ValueError("p_esc and p_de must lie in (0, 1]")
    return p_de / (1.0 - (1.0 - p_esc) * (1.0 - p_de))


def _shell_vertices(pair: BackboneTreePair, k: int) -> list[int]:
    """Backbone vertices at tree distance exactly k+1 from ent."""
    t = pair.tree
    dist = {pair.ent: 0}
    frontier = [pair.ent]
    shell = []
    while frontier:
        nxt = []
        for v in frontier:
            dv = dist[v]
            if dv == k + 1:
                shell.append(v)
                continue
            nbrs = []
            p = int(t.parent[v])
            if p != -1 and t.role[p] == K.ROLE_BACKBONE:
                nbrs.append(p)
            if v != pair.ent:
                nbrs.extend(c for c in t.children(v)
                            if t.role[c] == K.ROLE_BACKBONE)
            for u in nbrs:
                if u not in dist:
                    dist[u] = dv + 1
                    nxt.append(u)
        frontier = nxt
    return shell


def escape_probability_k(pair: BackboneTreePair, k: int) -> tuple[float, float]:
    """(p_esc_hat(k), certified width): the exact probability, from head, of
    reaching the distance-(k+1) backbone shell before ent. Upper-bounds the
    true escape probability within 2 q^(1-k/2)."""
    shell = _shell_vertices(pair, k)
    if not shell:
        raise ValueError(f"pair scaffold too small for radius k={k}")
    q = _min_bias(pair)
    p = hit_probability(AbsorptionSpec(pair.tree, pair.head, tuple(shell),
                                       (pair.ent,)))
    width = 2.0 * q ** (1.0 - 0.5 * k)
    return p, width


def deep_excursion_probability(pair_or_trap) -> float:
    """Exact P(hit v_base before head) from ent."""
    obj = pair_or_trap
    if obj.v_base == obj.ent:
        return 1.0
    return hit_probability(AbsorptionSpec(obj.tree, obj.ent, (obj.v_base,),
                                          (_head_of(obj),)))


def _head_of(obj):
    return obj.head if hasattr(obj, "head") else 0


def _min_bias(pair) -> float:
    t = pair.tree
    return float(np.nanmin(t.bias[1:t.n])) if t.n > 1 else 2.0


@dataclass
class PairConstants:
    """Exact truncation ladder for one pair: hat-probabilities, correction
    factors c_{f,k} and running-intersected certified enclosures for c_f."""

    ks: list[int]
    p_esc_k: list[float]
    p_esc_width: list[float]
    p_de_k: list[float]
    p_de_width: list[float]
    c_f_k: list[float]
    c_f_upper: list[float]              # nonincreasing (intersected)
    p_de: float                         # exact on the finite trap
    fd_prob: float
    r_trap: int
    q: float
    Q: float

    @property
    def enclosure_widths(self) -> list[float]:
        return [u - c for u, c in zip(self.c_f_upper, self.c_f_k)]

    def box_bounds_ok(self) -> bool:
        lo_esc = (self.q - 1.0) / (self.Q + self.q + 1.0)
        lo_de = 1.0 - 1.0 / self.q
        hi_cf = (self.Q + self.q + 2.0) / (self.q - 1.0)
        ok = all(lo_esc - 1e-12 <= p <= 1.0 + 1e-12 for p in self.p_esc_k)
        ok &= all(lo_de - 1e-12 <= p <= 1.0 + 1e-12 for p in self.p_de_k)
        ok &= lo_de - 1e-12 <= self.p_de <= 1.0 + 1e-12
        ok &= all(1.0 - 1e-12 <= c <= hi_cf + 1e-12 for c in self.c_f_k)
        return bool(ok)


def p_de_k(pair: BackboneTreePair, k: int,
           renewal: tuple[int, list[int]] | None = None) -> tuple[float, float]:
    """(p_de_hat(k), width): hitting base(C_k) before head when the trap has
    more than k renewal components, else the exact p_de with width 0."""
    trap = TrapTree(pair.tree, head=pair.head, ent=pair.ent,
                    omega=pair.omega, D=pair.D, v_base=pair.v_base)
    r, cutpoints = renewal if renewal is not None else trap_renewal_stats(trap)
    if r <= k:
        return deep_excursion_probability(pair), 0.0
    ck = cutpoints[k - 1]
    q = _min_bias(pair)
    p = hit_probability(AbsorptionSpec(pair.tree, pair.ent, (ck,),
                                       (pair.head,)))
    return p, 2.0 * q ** (-float(k))


def correction_factor_k(pair: BackboneTreePair, k: int,
                        renewal=None) -> tuple[float, float]:
    """(c_{f,k}, err): c_{f,k} = p_esc_hat(k)^-1 + p_de_hat(k)^-1 - 1 with a
    certified upper error derived from the hat widths clamped into the
    lemma box bounds."""
    pesc, w_esc = escape_probability_k(pair, k)
    pde, w_de = p_de_k(pair, k, renewal)
    q, Q = _min_bias(pair), float(np.nanmax(pair.tree.bias[1:pair.tree.n]))
    cfk = 1.0 / pesc + 1.0 / pde - 1.0
    lo_esc = max(pesc - w_esc, (q - 1.0) / (Q + q + 1.0))
    lo_de = max(pde - w_de, 1.0 - 1.0 / q)
    upper = 1.0 / lo_esc + 1.0 / lo_de - 1.0
    upper = min(upper, (Q + q + 2.0) / (q - 1.0))
    return cfk, max(0.0, upper - cfk)


def pair_constants(pair: BackboneTreePair, ks: list[int]) -> PairConstants:
    """The full ladder over ks (ascending), with enclosures intersected
    along the ladder so widths are nonincreasing while staying certified."""
    trap = TrapTree(pair.tree, head=pair.head, ent=pair.ent,
                    omega=pair.omega, D=pair.D, v_base=pair.v_base)
    renewal = trap_renewal_stats(trap)
    t = pair.tree
    q = _min_bias(pair)
    Q = float(np.nanmax(t.bias[1:t.n]))
    p_de_exact = deep_excursion_probability(pair)
    rows = dict(ks=[], p_esc_k=[], p_esc_width=[], p_de_k=[], p_de_width=[],
                c_f_k=[], c_f_upper=[])
    best_upper = np.inf
    for k in sorted(ks):
        pesc, w_esc = escape_probability_k(pair, k)
        pde, w_de = p_de_k(pair, k, renewal)
        cfk, err = correction_factor_k(pair, k, renewal)
        best_upper = min(best_upper, cfk + err)
        rows["ks"].append(k)
        rows["p_esc_k"].append(pesc)
        rows["p_esc_width"].append(w_esc)
        rows["p_de_k"].append(pde)
        rows["p_de_width"].append(w_de)
        rows["c_f_k"].append(cfk)
        rows["c_f_upper"].append(best_upper)
    p_esc_best = rows["p_esc_k"][-1]
    fd = fall_deep_probability(p_esc_best, p_de_exact)
    return PairConstants(**rows, p_de=p_de_exact, fd_prob=fd,
                         r_trap=renewal[0], q=q, Q=Q)


def expected_trap_time(pair: BackboneTreePair, k: int) -> tuple[float, float, float]:
    """(2 c_{f,k} omega, lower, upper): leading-order conditional mean of
    the total trap time given a deep fall, with its certified enclosure."""
    cfk, err = correction_factor_k(pair, k)
    val = 2.0 * cfk * pair.omega
    return val, val, 2.0 * (cfk + err) * pair.omega


def path_weight(tree: WeightedTree, x: int, y: int) -> float:
    """omega_x(y): product of edge biases along the path x..y (y must be a
    descendant of x)."""
    w = 1.0
    v = y
    while v != x:
        w *= float(tree.bias[v])
        v = int(tree.parent[v])
        if v == -1:
            raise ValueError("y is not a descendant of x")
    return w
