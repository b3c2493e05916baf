"""The biased random-walk engine: walks on lazy environments and on
backbone-tree pairs, plus event detection (hitting times, trap entrances,
holding times, regeneration times, late-trap snapshots)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from ._rng import ENV, TRAP, WALK, Stream
from .errors import InsufficientRegenerations, StepBudgetExceeded
from .laws import BiasLaw, HarrisLaws
from .tree import (BackboneTreePair, Environment, TrapTree,
                   backbone_neighborhood, compose_pair, sample_trap)

DEFAULT_REGEN_HORIZON = 10_000
DEFAULT_K_STOP = 30


@dataclass(frozen=True)
class StopCondition:
    """kind: 'backbone_distance' (Delta-bar), 'any_distance' (Delta),
    'steps', or 'entrances' (stop on arrival at the n-th new entrance)."""

    kind: str
    n: int = 0

    _KINDS = {"backbone_distance": K.STOP_BACKBONE_DIST,
              "any_distance": K.STOP_ANY_DIST,
              "steps": K.STOP_STEPS,
              "entrances": K.STOP_ENTRANCES}

    @property
    def code(self) -> int:
        return self._KINDS[self.kind]


@dataclass
class TraceSummary:
    """Per-walk record of everything the analysis layer consumes."""

    replica: int
    total_time: int
    end_vertex: int
    complete: bool                      # stop condition met within budget
    delta: dict[int, int]               # n -> first time any vertex at distance n
    delta_bar: dict[int, int]           # n -> first backbone visit at distance n
    theta_times: np.ndarray             # arrival times at new entrances
    theta_vertices: np.ndarray
    theta_depths: np.ndarray
    tau: np.ndarray                     # occupation time per entered trap
    tau_censored: bool                  # walk ended inside a trap
    regen_times: np.ndarray             # confirmed regeneration times
    regen_depths: np.ndarray
    provisional_regens: int             # candidates inside the horizon window
    checkpoint_times: np.ndarray
    checkpoint_max_depth: np.ndarray
    path: np.ndarray | None = None      # per-step vertex ids when recorded
    path_depths: np.ndarray | None = None
    path_backbone: np.ndarray | None = None

    def trap_count_before(self, time: int) -> int:
        return int(np.searchsorted(self.theta_times, time))


def run_walk(env: Environment, stop: StopCondition, rng: Stream,
             step_budget: int = 10 ** 7,
             distances: tuple[int, ...] = (),
             checkpoints: tuple[int, ...] = (),
             regen_horizon: int = DEFAULT_REGEN_HORIZON,
             record_path: bool = False,
             replica: int = 0) -> TraceSummary:
    """Walk from the root, materializing the environment on demand, firing
    all detectors online. A budget stop returns the partial trace flagged
    incomplete rather than raising."""
    if record_path and step_budget > 10 ** 6:
        raise ValueError("record_path needs a modest step budget")
    t = env.tree
    req = np.asarray(sorted(set(distances)), dtype=np.int64)
    cps = np.asarray(sorted(set(checkpoints)), dtype=np.int64)
    res = K.env_walk(*t.arrays(), t.n, t.root,
                     *env.joint_tables, env.h_cdf, *env.bias_tables,
                     env.rng.key, env.rng.ctr, rng.key, rng.ctr,
                     stop.code, stop.n, step_budget, env.trap_cap,
                     req, cps, 1 if record_path else 0)
    (code, end_t, end_v) = res[0], res[1], res[2]
    t.set_arrays(res[3:12], res[12])
    env.rng.ctr = res[13]
    rng.ctr = res[14]
    (delta_arr, delta_bar_arr, theta_t, theta_v, tau,
     rg_t, rg_d, cp_max, path, censored) = res[15:]
    if code == K.STATUS_TRAP_TOO_LARGE:
        from .errors import TrapTooLarge

        raise TrapTooLarge(f"trap exceeded {env.trap_cap} vertices")
    confirmed = rg_t <= end_t - regen_horizon
    trace = TraceSummary(
        replica=replica,
        total_time=int(end_t),
        end_vertex=int(end_v),
        complete=(code == K.STATUS_OK),
        delta={int(n): int(v) for n, v in zip(req, delta_arr) if v >= 0},
        delta_bar={int(n): int(v) for n, v in zip(req, delta_bar_arr) if v >= 0},
        theta_times=theta_t.astype(np.int64),
        theta_vertices=theta_v.astype(np.int64),
        theta_depths=t.depth[theta_v].astype(np.int64) if len(theta_v) else np.empty(0, np.int64),
        tau=tau.astype(np.int64),
        tau_censored=bool(censored),
        regen_times=rg_t[confirmed].astype(np.int64),
        regen_depths=rg_d[confirmed].astype(np.int64),
        provisional_regens=int((~confirmed).sum()),
        checkpoint_times=cps,
        checkpoint_max_depth=cp_max.astype(np.int64),
    )
    if record_path:
        trace.path = path.astype(np.int64)
        trace.path_depths = t.depth[path].astype(np.int64)
        trace.path_backbone = (t.role[path] == K.ROLE_BACKBONE)
    return trace


def transition_distribution(tree_like, v: int) -> list[tuple[int, float]]:
    """Exact one-step law at v: parent gets 1/(1+sum beta), child c gets
    beta_c/(1+sum beta); the root jumps to child c w.p. beta_c/sum beta."""
    tree = getattr(tree_like, "tree", tree_like)
    if isinstance(tree_like, Environment):
        children = tree_like.ensure_children(v)
    else:
        children = tree.children(v)
    biases = [float(tree.bias[c]) for c in children]
    s = sum(biases)
    out = []
    if tree.parent[v] == -1:
        for c, b in zip(children, biases):
            out.append((c, b / s))
    else:
        total = 1.0 + s
        out.append((int(tree.parent[v]), 1.0 / total))
        for c, b in zip(children, biases):
            out.append((c, b / total))
    return out


# ---------------------------------------------------------------------------
# Detectors as pure functions over recorded traces (fixtures and oracles;
# the kernel maintains the same quantities online)
# ---------------------------------------------------------------------------


def detect_trap_entrances(path_vertices, is_entrance) -> list[tuple[int, int]]:
    """theta events from a raw path: first visits to distinct entrance
    vertices, in chronological order. is_entrance maps vertex -> bool."""
    seen = set()
    events = []
    for t, v in enumerate(path_vertices):
        v = int(v)
        if is_entrance(v) and v not in seen:
            seen.add(v)
            events.append((t, v))
    return events


def detect_regenerations(times, depths, end_time: int,
                         horizon: int = DEFAULT_REGEN_HORIZON) -> np.ndarray:
    """Confirmed regeneration times among backbone-visit events (times[i],
    depths[i]): all earlier backbone visits strictly shallower, all later
    strictly deeper. Two-pass scan; candidates within `horizon` of the trace
    end are provisional and dropped."""
    times = np.asarray(times)
    depths = np.asarray(depths)
    if len(times) == 0:
        return np.empty(0, np.int64)
    before_max = np.concatenate(([-2 ** 62], np.maximum.accumulate(depths)[:-1]))
    after_min = np.concatenate((np.minimum.accumulate(depths[::-1])[::-1][1:], [2 ** 62]))
    cand = (depths > before_max) & (depths < after_min)
    out = times[cand]
    return out[out <= end_time - horizon].astype(np.int64)


def holding_times(path_vertices, trap_of) -> tuple[list[int], bool]:
    """tau_i per entered trap from a raw path; trap_of maps vertex -> trap
    index or -1. The final tau is censored iff the path ends inside a
    trap."""
    taus: dict[int, int] = {}
    order: list[int] = []
    for v in path_vertices:
        ti = trap_of(int(v))
        if ti >= 0:
            if ti not in taus:
                taus[ti] = 0
                order.append(ti)
            taus[ti] += 1
    censored = trap_of(int(path_vertices[-1])) >= 0
    return [taus[i] for i in order], censored


@dataclass
class PsiEstimate:
    psi_direct: float       # chi(n) / n
    psi_indirect: float     # mean(A_i) / mean depth increment per block
    kappa_hat: float
    a_bar: float
    n_blocks: int
    a_counts: np.ndarray


def trap_counts(trace: TraceSummary, n: int | None = None) -> PsiEstimate:
    """A_i = #{j : r_i < theta_j < r_{i+1}} over confirmed regeneration
    blocks, the direct estimator chi(n)/n and the indirect kappa^-1 Abar."""
    r = trace.regen_times
    if len(r) < 11:
        raise InsufficientRegenerations(f"{len(r)} confirmed regenerations")
    rd = trace.regen_depths
    th = trace.theta_times
    counts = np.diff(np.searchsorted(th, r)) - 0  # theta strictly inside (r_i, r_{i+1})
    # searchsorted gives #theta < r_i; strict inequalities hold because a
    # regeneration time stands on the backbone while theta stands on a bud
    a_counts = counts.astype(np.int64)
    kappa = float(np.mean(np.diff(rd)))
    a_bar = float(np.mean(a_counts))
    psi_ind = a_bar / kappa
    if n is None:
        n = max(trace.delta_bar) if trace.delta_bar else 0
    if n and n in trace.delta_bar:
        chi = trace.trap_count_before(trace.delta_bar[n])
        psi_dir = chi / n
    else:
        psi_dir = float("nan")
    return PsiEstimate(psi_dir, psi_ind, kappa, a_bar, len(a_counts),
                       a_counts)


# ---------------------------------------------------------------------------
# Late-trap snapshots (the empirical approximation of the pair law Q)
# ---------------------------------------------------------------------------


def late_trap_snapshot(env: Environment, n: int, k: int, rng: Stream,
                       trap_rng: Stream, step_budget: int = 10 ** 8,
                       n_min: int = 200) -> BackboneTreePair:
    """Run a fresh walk on env to its n-th trap-entrance arrival, extract
    the k-large backbone neighbourhood there, and compose it with an
    independent fresh trap (disjoint substream, independent by
    construction)."""
    if n < n_min:
        raise ValueError(f"snapshot index {n} below n_min={n_min}")
    if k > 20:
        raise ValueError("snapshot radius k must be <= 20")
    trace = run_walk(env, StopCondition("entrances", n), rng,
                     step_budget=step_budget)
    if not trace.complete:
        raise StepBudgetExceeded(f"walk hit {step_budget} steps before theta_{n}")
    u = int(trace.theta_vertices[-1])
    scaffold = backbone_neighborhood(env, u, k)
    trap = sample_trap(env.harris, env.bias_law, trap_rng)
    return compose_pair(scaffold, trap)


def snapshot_ensemble(harris: HarrisLaws, bias: BiasLaw, count: int, k: int,
                      master_seed: int, n_first: int = 200,
                      per_walk: int = 100, step_budget: int = 10 ** 8,
                      replica_offset: int = 0) -> list[BackboneTreePair]:
    """`count` Q-approximate pairs, harvesting a window of `per_walk`
    consecutive arrival neighbourhoods theta_{n_first}..theta_{n_first+B-1}
    from each fresh walk; every pair gets an independent fresh trap. Walks
    that exhaust the budget are skipped (counted, rare)."""
    pairs: list[BackboneTreePair] = []
    replica = replica_offset
    while len(pairs) < count:
        need = min(per_walk, count - len(pairs))
        env = Environment(harris, bias, Stream.from_seed(master_seed, replica, ENV))
        walk_rng = Stream.from_seed(master_seed, replica, WALK)
        trap_rng = Stream.from_seed(master_seed, replica, TRAP)
        trace = run_walk(env, StopCondition("entrances", n_first + need - 1),
                         walk_rng, step_budget=step_budget)
        replica += 1
        if not trace.complete:
            continue
        for i in range(need):
            u = int(trace.theta_vertices[n_first - 1 + i])
            scaffold = backbone_neighborhood(env, u, k)
            trap = sample_trap(harris, bias, trap_rng)
            pairs.append(compose_pair(scaffold, trap))
    return pairs


def simulate_trap_time(pair: BackboneTreePair, k_stop: int, env_rng: Stream,
                       walk_rng: Stream,
                       step_budget: int = 10 ** 9) -> tuple[int, bool, bool]:
    """(tau, fell_deep, censored): walk from ent until standing on a
    backbone vertex k_stop levels beyond head (residual return probability
    <= q**(1 - k_stop)); tau counts time in trap vertices, fell_deep is a
    v_base visit. The pair is copied; lazy extensions do not leak back."""
    if k_stop < 10:
        raise ValueError("k_stop below 10 gives uncertified escape")
    t = pair.tree
    work = _copy_tree_arrays(t)
    res = K.pair_trap_time(*work, t.n, pair.head, pair.ent, pair.v_base,
                           _g_cdf_of(pair), *_bias_tables_of(pair),
                           env_rng.key, env_rng.ctr, walk_rng.key,
                           walk_rng.ctr, k_stop, step_budget)
    tau, fell_deep, censored, steps, ectr, wctr = res
    env_rng.ctr = ectr
    walk_rng.ctr = wctr
    return int(tau), bool(fell_deep), bool(censored)


def simulate_escape_time(trap: TrapTree, reps: int, rng: Stream,
                         step_budget: int = 10 ** 9) -> np.ndarray:
    """Single-visit escape times H_head from ent with head absorbing."""
    t = trap.tree
    with np.errstate(over="ignore"):
        key = np.uint64(K.derive_key(rng.key, rng.ctr + np.uint64(1)))
        rng.ctr = rng.ctr + np.uint64(1)
    out = K.escape_time_batch(t.parent, t.bias, t.first_child,
                              t.next_sibling, trap.head, trap.ent, reps, key,
                              step_budget)
    if np.any(out < 0):
        raise StepBudgetExceeded("escape simulation hit the step budget")
    return out


def _copy_tree_arrays(t):
    return tuple(np.array(getattr(t, name)) for name in t._ARRAYS)


# pair-level law tables are stashed by the experiment drivers; fall back to
# the reference laws when a bare pair arrives (tests construct these)
def attach_pair_laws(pair: BackboneTreePair, harris: HarrisLaws,
                     bias: BiasLaw) -> BackboneTreePair:
    pair.g_cdf = harris.joint.g_cdf()
    pair.bias_tables = bias.tables()
    return pair


def _g_cdf_of(pair):
    if not hasattr(pair, "g_cdf"):
        raise ValueError("pair lacks law tables; call attach_pair_laws")
    return pair.g_cdf


def _bias_tables_of(pair):
    if not hasattr(pair, "bias_tables"):
        raise ValueError("pair lacks law tables; call attach_pair_laws")
    return pair.bias_tables
