"""Weighted-tree storage and sampling: finite traps under P_{h,nu}, the lazy
infinite environment in Harris form, backbone-tree pairs, and structural
analyses (weight, depth/base, outgrowths, bareness, renewal decomposition)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from ._rng import Stream
from .errors import TrapTooLarge
from .laws import BiasLaw, HarrisLaws

ROLE_NAMES = {K.ROLE_BACKBONE: "backbone", K.ROLE_BUD: "bud", K.ROLE_TRAP: "trap"}
ROLE_CODES = {v: k for k, v in ROLE_NAMES.items()}

DEFAULT_TRAP_CAP = 10 ** 8


class WeightedTree:
    """Dense-id vertex table; see _kernels module docstring for the array
    convention. Vertices are created parent-first, so parent[v] < v."""

    __slots__ = ("parent", "bias", "depth", "role", "first_child",
                 "next_sibling", "status", "trap_id", "mark", "n")

    def __init__(self, capacity: int = 16):
        self.parent = np.full(capacity, -1, np.int64)
        self.bias = np.full(capacity, np.nan, np.float64)
        self.depth = np.zeros(capacity, np.int64)
        self.role = np.zeros(capacity, np.int8)
        self.first_child = np.full(capacity, -1, np.int64)
        self.next_sibling = np.full(capacity, -1, np.int64)
        self.status = np.zeros(capacity, np.int8)
        self.trap_id = np.full(capacity, -1, np.int64)
        self.mark = np.full(capacity, -1, np.int64)
        self.n = 0

    # -- array plumbing ----------------------------------------------------

    _ARRAYS = ("parent", "bias", "depth", "role", "first_child",
               "next_sibling", "status", "trap_id", "mark")

    def arrays(self) -> tuple:
        return tuple(getattr(self, name) for name in self._ARRAYS)

    def set_arrays(self, arrs, n) -> None:
        for name, arr in zip(self._ARRAYS, arrs):
            setattr(self, name, arr)
        self.n = int(n)

    @property
    def root(self) -> int:
        return 0

    def add_root(self, role: int = K.ROLE_BACKBONE) -> int:
        assert self.n == 0
        self.parent[0] = -1
        self.bias[0] = np.nan
        self.depth[0] = 0
        self.role[0] = role
        self.first_child[0] = -1
        self.next_sibling[0] = -1
        self.status[0] = 0
        self.trap_id[0] = -1
        self.n = 1
        return 0

    def add_child(self, v: int, bias: float, role: int) -> int:
        arrs = K._grow(*self.arrays(), self.n + 1)
        self.set_arrays(arrs, self.n)
        new_n = K._append_child(*arrs[:8], self.n, v, bias, role)
        child = self.n
        self.n = int(new_n)
        return child

    def children(self, v: int) -> list[int]:
        out = []
        c = int(self.first_child[v])
        while c != -1:
            out.append(c)
            c = int(self.next_sibling[c])
        return out

    def __len__(self) -> int:
        return self.n

    def validate(self, q: float | None = None, Q: float | None = None) -> None:
        """Parent/child consistency, depth increments, single root."""
        n = self.n
        assert self.parent[0] == -1 and self.depth[0] == 0
        for v in range(1, n):
            p = self.parent[v]
            assert 0 <= p < v, f"vertex {v} has parent {p}"
            assert self.depth[v] == self.depth[p] + 1
            assert v in self.children(p)
            b = self.bias[v]
            assert b > 1.0, f"edge bias {b} not > 1"
            if q is not None:
                assert q - 1e-12 <= b <= Q + 1e-12

    # -- serialization -----------------------------------------------------

    def to_text(self, header: dict | None = None) -> str:
        """One line per vertex: `id parent_id bias role depth`, root first,
        children in creation order (ids are creation order already)."""
        lines = []
        if header:
            for k, v in header.items():
                lines.append(f"# {k} {v}")
        for v in range(self.n):
            b = "-" if self.parent[v] == -1 else repr(float(self.bias[v]))
            lines.append(f"{v} {self.parent[v]} {b} "
                         f"{ROLE_NAMES[int(self.role[v])]} {self.depth[v]}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "WeightedTree":
        rows = [ln.split() for ln in text.splitlines()
                if ln.strip() and not ln.startswith("#")]
        tree = cls(capacity=max(16, len(rows)))
        for i, row in enumerate(rows):
            vid, pid, b, role, depth = row
            vid, pid, depth = int(vid), int(pid), int(depth)
            if vid != i:
                raise ValueError(f"vertex ids must be dense and ordered; got {vid} at line {i}")
            if pid == -1:
                if i != 0:
                    raise ValueError("non-root vertex without parent")
                tree.add_root(ROLE_CODES[role])
                tree.status[0] = 1
            else:
                if pid >= vid:
                    raise ValueError("children must follow their parent")
                c = tree.add_child(pid, float(b), ROLE_CODES[role])
                tree.status[c] = 1
                if tree.depth[c] != depth:
                    raise ValueError(f"depth mismatch at vertex {vid}")
        return tree


def weight(tree: WeightedTree, x: int) -> float:
    """omega_x(T_x): sum over descendants v of x of the product of edge
    biases along x..v (1 for x itself); one linear pass."""
    om, _, _ = K.subtree_stats(tree.bias, tree.depth, tree.first_child,
                               tree.next_sibling, tree.n, x)
    return float(om)


@dataclass
class TrapTree:
    """Single-entry weighted tree: head (root) with unique child ent, plus
    cached weight, depth and base vertex of the descendent tree of ent."""

    tree: WeightedTree
    head: int = 0
    ent: int = 1
    omega: float = 0.0
    D: int = 0
    v_base: int = 1

    @classmethod
    def wrap(cls, tree: WeightedTree) -> "TrapTree":
        assert len(tree.children(0)) == 1, "head must have a unique child"
        om, D, vb = K.subtree_stats(tree.bias, tree.depth, tree.first_child,
                                    tree.next_sibling, tree.n, 1)
        return cls(tree, 0, 1, float(om), int(D), int(vb))

    @property
    def n_vertices(self) -> int:
        return self.tree.n


def sample_trap(harris: HarrisLaws, bias: BiasLaw, rng: Stream,
                cap: int = DEFAULT_TRAP_CAP) -> TrapTree:
    """A P_{h,nu} trap below a fresh (head, ent) edge whose bias is also
    nu-sampled; caches omega, D, v_base."""
    kind, vals, cdf, lo, hi = bias.tables()
    tree = WeightedTree(capacity=64)
    tree.add_root(K.ROLE_BACKBONE)
    tree.status[0] = 1
    head_bias = rng.bias(bias)
    ent = tree.add_child(0, head_bias, K.ROLE_BUD)
    tree.trap_id[ent] = 0
    res = K.grow_h_tree(*tree.arrays(), tree.n, ent, harris.h.cdf(),
                        kind, vals, cdf, lo, hi, rng.key, rng.ctr, cap)
    tree.set_arrays(res[:9], res[9])
    rng.ctr = res[10]
    if res[11] != K.STATUS_OK:
        raise TrapTooLarge(f"trap exceeded {cap} vertices")
    return TrapTree.wrap(tree)


def depth_and_base(trap: TrapTree) -> tuple[int, int]:
    """(D, v_base): maximal depth below ent and the first vertex attaining
    it in preorder with children in creation order (ties across subtrees
    resolve by creation order)."""
    return trap.D, trap.v_base


def outgrowth_sizes(trap: TrapTree) -> list[int]:
    """|V(J_i)| for i = 0..D-1: component sizes of the pieces hanging off
    the ent..v_base path after its edges are removed."""
    tree = trap.tree
    path = []
    v = trap.v_base
    while v != trap.head:
        path.append(v)
        v = int(tree.parent[v])
    path.reverse()  # ent .. v_base
    on_path = set(path)
    sizes = []
    for i, psi in enumerate(path[:-1]):
        size = 1
        stack = [c for c in tree.children(psi) if c not in on_path]
        while stack:
            w = stack.pop()
            size += 1
            stack.extend(tree.children(w))
        sizes.append(size)
    return sizes


def is_bare(trap: TrapTree, B0: float) -> bool:
    """Every outgrowth off the spine has at most B0 log log omega vertices;
    vacuously bare when omega <= e."""
    if trap.omega <= math.e:
        return True
    cutoff = B0 * math.log(math.log(trap.omega))
    return all(s <= cutoff for s in outgrowth_sizes(trap))


def renewal_decompose(tree: WeightedTree, top: int = 0) -> tuple[list[int], list[list[int]]]:
    """Cutpoints and depth-band components of the subtree rooted at `top`.

    A cutpoint is a non-root non-leaf vertex alone among non-leaves at its
    depth. Components C_1..C_r cover the depth bands between consecutive
    cutpoints (overlapping exactly at the cutpoints), ordered by depth.
    """
    base = int(tree.depth[top])
    sub = []
    stack = [top]
    while stack:
        v = stack.pop()
        sub.append(v)
        stack.extend(tree.children(v))
    levels: dict[int, list[int]] = {}
    for v in sub:
        levels.setdefault(int(tree.depth[v]) - base, []).append(v)
    D = max(levels)
    cutpoints = []
    for d in range(1, D + 1):
        # a cutpoint is the unique non-leaf at its depth
        nonleaf = [v for v in levels[d] if tree.first_child[v] != -1]
        if len(nonleaf) == 1:
            cutpoints.append(nonleaf[0])
    bounds = [0] + [int(tree.depth[c]) - base for c in cutpoints] + [D]
    components = []
    for i in range(len(bounds) - 1):
        lo, hi = bounds[i], bounds[i + 1]
        # at the lower boundary only the cutpoint itself carries over; any
        # leaves at that depth belong to the previous component
        comp = [cutpoints[i - 1]] if i > 0 else list(levels[0])
        comp += [v for d in range(lo + 1, hi + 1) for v in levels.get(d, [])]
        components.append(comp)
    return cutpoints, components


def trap_renewal_stats(trap: TrapTree) -> tuple[int, list[int]]:
    """(r(T_ent), cutpoints of T_ent): the decomposition of the descendent
    tree of ent (head is not part of it)."""
    cutpoints, components = renewal_decompose(trap.tree, trap.ent)
    return len(components), cutpoints


class Environment:
    """Lazily materialized infinite weighted tree under P_{f,nu,infinity} in
    Harris form: a leafless backbone decorated with bud entrances whose
    traps attach on first visit. Confined to one worker; the growth stream
    lives inside."""

    def __init__(self, harris: HarrisLaws, bias: BiasLaw, rng: Stream,
                 trap_cap: int = DEFAULT_TRAP_CAP, capacity: int = 1024):
        self.harris = harris
        self.bias_law = bias
        self.rng = rng
        self.trap_cap = trap_cap
        self.tree = WeightedTree(capacity=capacity)
        self.tree.add_root(K.ROLE_BACKBONE)
        self.joint_tables = harris.joint.tables()
        self.h_cdf = harris.h.cdf()
        self.g_cdf = harris.joint.g_cdf()
        self.bias_tables = bias.tables()

    def materialize_children(self, v: int) -> None:
        """Draw (j, m) from the backbone joint law and create the children
        of backbone vertex v (uniformly random interleaving)."""
        t = self.tree
        assert t.role[v] == K.ROLE_BACKBONE and t.status[v] == 0
        res = K.materialize_backbone_children(
            *t.arrays(), t.n, v, *self.joint_tables, *self.bias_tables,
            self.rng.key, self.rng.ctr)
        t.set_arrays(res[:9], res[9])
        self.rng.ctr = res[10]

    def attach_trap(self, v: int, entrance_index: int = 0) -> None:
        t = self.tree
        assert t.role[v] == K.ROLE_BUD and t.status[v] == 0
        t.trap_id[v] = entrance_index
        res = K.grow_h_tree(*t.arrays(), t.n, v, self.h_cdf,
                            *self.bias_tables, self.rng.key, self.rng.ctr,
                            self.trap_cap)
        t.set_arrays(res[:9], res[9])
        self.rng.ctr = res[10]
        if res[11] != K.STATUS_OK:
            raise TrapTooLarge(f"trap exceeded {self.trap_cap} vertices")

    def ensure_children(self, v: int) -> list[int]:
        t = self.tree
        if t.status[v] == 0:
            if t.role[v] == K.ROLE_BACKBONE:
                self.materialize_children(v)
            elif t.role[v] == K.ROLE_BUD:
                self.attach_trap(v)
        return self.tree.children(v)


@dataclass
class PairScaffold:
    """N^out_k(u): the bud u plus the backbone within distance k+1, rooted
    at the ancestor of u at distance k+1."""

    tree: WeightedTree
    ent: int
    k: int

    @property
    def head(self) -> int:
        return int(self.tree.parent[self.ent])


@dataclass
class BackboneTreePair:
    """A scaffold joined at ent with a finite trap (Def. of the pair law):
    the trap's root is identified with ent."""

    tree: WeightedTree
    ent: int
    k: int
    omega: float = 0.0
    D: int = 0
    v_base: int = 0
    trap_size: int = 0

    @property
    def head(self) -> int:
        return int(self.tree.parent[self.ent])

    def trap_vertices(self) -> list[int]:
        out = [self.ent]
        stack = list(self.tree.children(self.ent))
        while stack:
            v = stack.pop()
            out.append(v)
            stack.extend(self.tree.children(v))
        return out


def backbone_neighborhood(env: Environment, u: int, k: int) -> PairScaffold:
    """Extract N^out_k(u) from the environment, materializing backbone
    children on demand (consumes the environment's growth stream)."""
    t = env.tree
    assert t.role[u] == K.ROLE_BUD
    res = K.extract_neighborhood(*t.arrays(), t.n, u, k, *env.joint_tables,
                                 *env.bias_tables, env.rng.key, env.rng.ctr)
    cp, cb, cd, cr, cfc, cns, cst, cti, cnt, ent_copy = res[:10]
    t.set_arrays(res[10:19], res[19])
    env.rng.ctr = res[20]
    out = WeightedTree(capacity=max(16, int(cnt)))
    out.parent[:cnt] = cp
    out.bias[:cnt] = cb
    out.depth[:cnt] = cd
    out.role[:cnt] = cr
    out.first_child[:cnt] = cfc
    out.next_sibling[:cnt] = cns
    out.status[:cnt] = cst
    out.trap_id[:cnt] = cti
    out.n = int(cnt)
    return PairScaffold(out, int(ent_copy), k)


def compose_pair(scaffold: PairScaffold, trap: TrapTree) -> BackboneTreePair:
    """Identify the trap's root (its ent) with the scaffold's ent leaf."""
    base = scaffold.tree
    out = WeightedTree(capacity=base.n + trap.tree.n)
    for name in WeightedTree._ARRAYS:
        getattr(out, name)[:base.n] = getattr(base, name)[:base.n]
    out.n = base.n
    tt = trap.tree
    res = K.attach_subtree(*out.arrays(), out.n, scaffold.ent,
                           tt.parent, tt.bias, tt.depth, tt.first_child,
                           tt.next_sibling, tt.n, trap.ent)
    out.set_arrays(res[:9], res[9])
    remap = res[10]
    v_base = int(remap[trap.v_base]) if trap.v_base != trap.ent else scaffold.ent
    return BackboneTreePair(out, scaffold.ent, scaffold.k,
                            omega=trap.omega, D=trap.D, v_base=v_base,
                            trap_size=tt.n - 1)


def make_synthetic_pair(harris: HarrisLaws, bias: BiasLaw, k: int,
                        rng: Stream, cap: int = DEFAULT_TRAP_CAP,
                        line_backbone: bool = False) -> BackboneTreePair:
    """A backbone-tree pair built from fresh randomness (no walking): a
    leafless backbone ball of radius k+1 around a synthetic entrance, plus a
    fresh trap. line_backbone forces a single upward/downward line (used by
    the enumeration oracle)."""
    tree = WeightedTree(capacity=256)
    tree.add_root(K.ROLE_BACKBONE)
    tree.status[0] = 1
    v = 0
    for _ in range(k + 1):  # ancestor chain: root = a_{k+1}, ..., a_1 = head
        v = tree.add_child(v, rng.bias(bias), K.ROLE_BACKBONE)
        tree.status[v] = 1
    head = v
    ent = tree.add_child(head, rng.bias(bias), K.ROLE_BUD)
    g_cdf = harris.joint.g_cdf()

    def g_draw() -> int:
        if line_backbone:
            return 1
        return 1 + int(np.searchsorted(g_cdf, rng.u01(), side="right"))

    # BFS over backbone vertices by distance from ent; every vertex within
    # distance k of ent gets its full g-distributed backbone offspring
    queue: list[tuple[int, int]] = [(head, 1)]
    w = head
    d = 1
    while tree.parent[w] != -1:
        w = int(tree.parent[w])
        d += 1
        queue.append((w, d))
    qi = 0
    while qi < len(queue):
        w, d = queue[qi]
        qi += 1
        if d > k:
            continue
        existing = sum(1 for c in tree.children(w)
                       if tree.role[c] == K.ROLE_BACKBONE)
        for _ in range(max(0, g_draw() - existing)):
            c = tree.add_child(w, rng.bias(bias), K.ROLE_BACKBONE)
            tree.status[c] = 1
            queue.append((c, d + 1))
    for w, d in queue:  # ball boundary stays extendable in simulations
        if d == k + 1 and tree.first_child[w] == -1:
            tree.status[w] = 0
    trap = sample_trap(harris, bias, rng, cap)
    scaffold = PairScaffold(tree, ent, k)
    return compose_pair(scaffold, trap)
