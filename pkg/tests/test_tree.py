import math
from collections import Counter

import numpy as np
import pytest

from gwtrap import _kernels as K
from gwtrap._rng import Stream
from gwtrap.laws import OffspringLaw, harris_transform
from gwtrap.tree import (Environment, TrapTree, WeightedTree,
                         backbone_neighborhood, compose_pair, depth_and_base,
                         is_bare, make_synthetic_pair, outgrowth_sizes,
                         renewal_decompose, sample_trap, trap_renewal_stats,
                         weight)


def build_path(biases, roles=None):
    t = WeightedTree(8)
    t.add_root()
    t.status[0] = 1
    v = 0
    for i, b in enumerate(biases):
        role = (roles[i] if roles else (1 if i == 0 else 2))
        v = t.add_child(v, b, role)
        t.status[v] = 1
    return t


def test_weight_examples():
    t = build_path([2.5, 2.0, 3.0])  # head -> ent -> a -> b
    assert weight(t, 1) == pytest.approx(9.0)   # 1 + 2 + 6
    assert weight(t, 3) == pytest.approx(1.0)   # single vertex
    fork = WeightedTree(8)
    fork.add_root()
    ent = fork.add_child(0, 2.0, 1)
    fork.add_child(ent, 2.0, 2)
    fork.add_child(ent, 3.0, 2)
    assert weight(fork, ent) == pytest.approx(6.0)  # 1 + 2 + 3


def test_weight_recursion_invariant(ref_harris, ref_bias):
    # omega_x = 1 + sum_c beta_c omega_c at every vertex, against the
    # path-product definition
    rng = Stream.from_seed(31, 0, 3)
    for _ in range(30):
        trap = sample_trap(ref_harris, ref_bias, rng)
        t = trap.tree
        direct = np.zeros(t.n)
        for v in range(t.n - 1, -1, -1):
            direct[v] = 1.0 + sum(t.bias[c] * direct[c] for c in t.children(v))
        # path-product definition per vertex
        for x in range(t.n):
            acc = 0.0
            stack = [(x, 1.0)]
            while stack:
                v, w = stack.pop()
                acc += w
                stack.extend((c, w * t.bias[c]) for c in t.children(v))
            assert acc == pytest.approx(direct[x], rel=1e-12)


def test_sample_trap_trivial_law(ref_harris, ref_bias):
    # h = {0: 1}: immediate extinction, trap is {head, ent} only
    from gwtrap.laws import HarrisLaws

    hl = HarrisLaws(ref_harris.offspring, OffspringLaw.from_map({0: 1.0}),
                    ref_harris.joint, ref_harris.q_ext, 0.0)
    rng = Stream.from_seed(1, 0, 3)
    tr = sample_trap(hl, ref_bias, rng)
    assert tr.tree.n == 2 and tr.omega == 1.0 and tr.D == 0
    assert tr.v_base == tr.ent


def test_sample_trap_single_entry_and_mean_size(ref_harris, ref_bias):
    rng = Stream.from_seed(2, 0, 3)
    sizes = []
    for _ in range(3000):
        tr = sample_trap(ref_harris, ref_bias, rng)
        assert len(tr.tree.children(tr.head)) == 1
        sizes.append(tr.tree.n - 1)
    mean = np.mean(sizes)
    se = np.std(sizes) / math.sqrt(len(sizes))
    assert abs(mean - 2.0) <= 3 * se  # E|V| = 1/(1-m_h) = 2


def test_depth_and_base_ties():
    # two deepest siblings: first-created wins
    t = WeightedTree(8)
    t.add_root()
    ent = t.add_child(0, 2.0, 1)
    a = t.add_child(ent, 2.0, 2)
    b = t.add_child(ent, 3.0, 2)
    trap = TrapTree.wrap(t)
    D, vb = depth_and_base(trap)
    assert D == 1 and vb == a


def test_depth_and_base_lexicographic_across_subtrees():
    # deepest vertices in two subtrees; preorder-first (lexicographic
    # minimal) must win even if the other was created earlier globally
    t = WeightedTree(16)
    t.add_root()
    ent = t.add_child(0, 2.0, 1)
    a = t.add_child(ent, 2.0, 2)   # first child subtree
    b = t.add_child(ent, 2.0, 2)   # second child subtree
    bb = t.add_child(b, 2.0, 2)    # depth 2 via b, created before aa
    aa = t.add_child(a, 2.0, 2)    # depth 2 via a
    trap = TrapTree.wrap(t)
    D, vb = depth_and_base(trap)
    assert D == 2 and vb == aa


def test_outgrowths_and_partition():
    t = build_path([2.0, 2.0, 2.0, 2.0])  # pure path below ent
    trap = TrapTree.wrap(t)
    assert outgrowth_sizes(trap) == [1, 1, 1]
    # add one side leaf at spine level 1 (the ent itself)
    t2 = build_path([2.0, 2.0, 2.0, 2.0])
    t2.add_child(1, 2.0, 2)
    trap2 = TrapTree.wrap(t2)
    sizes = outgrowth_sizes(trap2)
    assert sizes[0] == 2 and all(s == 1 for s in sizes[1:])
    # partition: sum of outgrowth sizes plus the deepest component equals |V|
    deepest_comp = trap2.tree.n - 1 - sum(sizes)  # minus head
    assert deepest_comp >= 1


def test_is_bare():
    t = build_path([2.0] * 3)
    trap = TrapTree.wrap(t)
    trap.omega = 100.0  # loglog(100) ~ 1.527
    assert is_bare(trap, 1.0)
    t2 = build_path([2.0] * 3)
    for _ in range(4):  # size-5 outgrowth at the first spine vertex
        t2.add_child(1, 2.0, 2)
    trap2 = TrapTree.wrap(t2)
    trap2.omega = 100.0
    assert not is_bare(trap2, 1.0)
    trap2.omega = math.e * 0.99  # convention: small weight is bare
    assert is_bare(trap2, 1.0)


def brute_force_cutpoints(tree, top):
    sub = []
    stack = [top]
    while stack:
        v = stack.pop()
        sub.append(v)
        stack.extend(tree.children(v))
    out = []
    for v in sub:
        if v == top or not tree.children(v):
            continue
        d = tree.depth[v]
        if all(not tree.children(w) for w in sub
               if w != v and tree.depth[w] == d):
            out.append(v)
    return sorted(out, key=lambda v: int(tree.depth[v]))


def test_renewal_examples():
    path = build_path([2.0, 2.0, 2.0])  # phi(head)-ent-a-b viewed from head
    cut, comps = renewal_decompose(path, 0)
    assert len(cut) == 2 and len(comps) == 3
    star = WeightedTree(8)
    star.add_root()
    for _ in range(3):
        star.add_child(0, 2.0, 2)
    cut, comps = renewal_decompose(star, 0)
    assert cut == [] and len(comps) == 1


def test_renewal_brute_force_oracle(ref_harris, ref_bias):
    rng = Stream.from_seed(5, 0, 3)
    done = 0
    while done < 200:
        trap = sample_trap(ref_harris, ref_bias, rng)
        if trap.tree.n > 50 or trap.tree.n < 3:
            continue
        cut, comps = renewal_decompose(trap.tree, trap.ent)
        assert cut == brute_force_cutpoints(trap.tree, trap.ent)
        # components overlap exactly at cutpoints and cover the subtree
        for c, c1, c2 in zip(cut, comps, comps[1:]):
            assert set(c1) & set(c2) == {c}
        done += 1


def test_renewal_suffix_property(ref_harris, ref_bias):
    # rerunning on the subtree below cutpoint c_k yields the suffix
    rng = Stream.from_seed(6, 0, 3)
    done = 0
    while done < 100:
        trap = sample_trap(ref_harris, ref_bias, rng)
        cut, comps = renewal_decompose(trap.tree, trap.ent)
        if len(cut) < 2:
            continue
        cut2, comps2 = renewal_decompose(trap.tree, cut[0])
        assert cut2 == cut[1:]
        assert [sorted(c) for c in comps2] == [sorted(c) for c in comps[1:]]
        done += 1


def test_renewal_regeneration_distribution(ref_harris, ref_bias):
    """Subtree below the first cutpoint (given r >= 2) is distributed as a
    fresh trap conditioned on >= 1 edge: TV <= 0.02 on the truncated
    (size, depth) histogram."""
    rng = Stream.from_seed(7, 0, 3)
    below, fresh = [], []
    n_target = 20000
    while len(below) < n_target or len(fresh) < n_target:
        trap = sample_trap(ref_harris, ref_bias, rng)
        t = trap.tree
        if len(fresh) < n_target and t.n >= 3:
            om, D, vb = K.subtree_stats(t.bias, t.depth, t.first_child,
                                        t.next_sibling, t.n, trap.ent)
            fresh.append((min(t.n - 2, 12), min(int(D), 8)))
        if len(below) < n_target:
            cut, comps = renewal_decompose(t, trap.ent)
            if cut:
                c0 = cut[0]
                size = 0
                stack = [c0]
                while stack:
                    v = stack.pop()
                    size += 1
                    stack.extend(t.children(v))
                om, D, vb = K.subtree_stats(t.bias, t.depth, t.first_child,
                                            t.next_sibling, t.n, c0)
                below.append((min(size - 1, 12), min(int(D), 8)))
    ca, cb = Counter(below[:n_target]), Counter(fresh[:n_target])
    keys = set(ca) | set(cb)
    tv = 0.5 * sum(abs(ca[k] / n_target - cb[k] / n_target) for k in keys)
    assert tv <= 0.02, f"TV {tv}"


def test_serialization_roundtrip(ref_harris, ref_bias):
    rng = Stream.from_seed(8, 0, 3)
    for _ in range(20):
        trap = sample_trap(ref_harris, ref_bias, rng)
        text = trap.tree.to_text(header={"omega": repr(trap.omega)})
        again = WeightedTree.from_text(text)
        assert again.to_text(header={"omega": repr(trap.omega)}) == text
        om, _, _ = K.subtree_stats(again.bias, again.depth, again.first_child,
                                   again.next_sibling, again.n, 1)
        assert om == pytest.approx(trap.omega, abs=1e-12)


def test_serialization_rejects_malformed():
    with pytest.raises(ValueError):
        WeightedTree.from_text("0 -1 - backbone 0\n2 0 2.0 bud 1\n")
    with pytest.raises(ValueError):
        WeightedTree.from_text("0 -1 - backbone 0\n1 0 2.0 bud 2\n")


def test_materialize_joint_frequencies(ref_harris, ref_bias):
    # (j, m) frequencies against the joint table, chi^2 at the 1% level
    env = Environment(ref_harris, ref_bias, Stream.from_seed(9, 0, 1),
                      capacity=1 << 20)
    t = env.tree
    counts = Counter()
    n_calls = 20000
    frontier = [0]
    while sum(counts.values()) < n_calls:
        v = frontier.pop(0)
        before = t.n
        env.materialize_children(v)
        kids = t.children(v)
        j = sum(1 for c in kids if t.role[c] == K.ROLE_BACKBONE)
        m = len(kids) - j
        counts[(j, m)] += 1
        frontier.extend(c for c in kids if t.role[c] == K.ROLE_BACKBONE)
    joint = ref_harris.joint
    chi2 = 0.0
    dof = 0
    total = sum(counts.values())
    for jj, mm, p in zip(joint.j, joint.m, joint.prob):
        expected = p * total
        observed = counts.get((int(jj), int(mm)), 0)
        chi2 += (observed - expected) ** 2 / expected
        dof += 1
    from scipy.stats import chi2 as chi2_dist

    assert chi2 <= chi2_dist.ppf(0.99, dof - 1), f"chi2 {chi2} dof {dof}"


def test_environment_leafless_backbone(ref_harris, ref_bias):
    env = Environment(ref_harris, ref_bias, Stream.from_seed(10, 0, 1))
    env.materialize_children(0)
    kids = env.tree.children(0)
    assert sum(1 for c in kids if env.tree.role[c] == K.ROLE_BACKBONE) >= 1
    assert env.tree.role[0] == K.ROLE_BACKBONE


def test_backbone_neighborhood_and_compose(ref_harris, ref_bias):
    from gwtrap import walk as W

    env = Environment(ref_harris, ref_bias, Stream.from_seed(11, 0, 1))
    wr = Stream.from_seed(11, 0, 2)
    trace = W.run_walk(env, W.StopCondition("entrances", 5), wr,
                       step_budget=10 ** 6)
    u = int(trace.theta_vertices[-1])
    for k in (0, 3):
        scaffold = backbone_neighborhood(env, u, k)
        st = scaffold.tree
        assert st.n >= k + 2
        assert st.role[scaffold.ent] == K.ROLE_BUD
        assert all(st.role[v] == K.ROLE_BACKBONE
                   for v in range(st.n) if v != scaffold.ent)
        assert st.parent[scaffold.ent] != -1
        # every vertex within distance k+1 of ent
        # (spot check: depth differences bounded)
        trap_rng = Stream.from_seed(11, 0, 3)
        trap = sample_trap(ref_harris, ref_bias, trap_rng)
        pair = compose_pair(scaffold, trap)
        assert pair.omega == pytest.approx(trap.omega)
        assert pair.tree.n == st.n + trap.tree.n - 2  # minus head+ent copies
        om, _, _ = K.subtree_stats(pair.tree.bias, pair.tree.depth,
                                   pair.tree.first_child,
                                   pair.tree.next_sibling, pair.tree.n,
                                   pair.ent)
        assert om == pytest.approx(trap.omega, rel=1e-12)


def test_compose_trivial_trap(ref_harris, ref_bias):
    rng = Stream.from_seed(13, 0, 3)
    pair = make_synthetic_pair(ref_harris, ref_bias, 4, rng)
    while pair.trap_size != 1:
        pair = make_synthetic_pair(ref_harris, ref_bias, 4, rng)
    assert pair.omega == 1.0 and pair.v_base == pair.ent


def test_trap_cap(ref_bias):
    from gwtrap.errors import TrapTooLarge
    from gwtrap.laws import HarrisLaws, OffspringLaw

    # near-critical trap law to force big traps against a tiny cap
    law = OffspringLaw.from_map({0: 0.505, 2: 0.495})
    h = OffspringLaw.from_map({0: 0.505, 2: 0.495})
    base = harris_transform(OffspringLaw.from_map({0: 0.25, 2: 0.75}))
    hl = HarrisLaws(law, h, base.joint, 0.5, 0.99)
    rng = Stream.from_seed(14, 0, 3)
    with pytest.raises(TrapTooLarge):
        for _ in range(10000):
            sample_trap(hl, ref_bias, rng, cap=10)
