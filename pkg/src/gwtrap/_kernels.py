"""Hot simulation kernels.

Everything in this module operates on flat numpy arrays so that the same
function bodies run either jit-compiled by numba (default) or as plain
Python (set GWTRAP_NO_NUMBA=1, or numba missing). The two backends consume
randomness identically and produce bit-identical results; the benchmark in
benchmarks/bench_kernels.py compares their speed.

Vertex storage convention (shared by tree.py wrappers):
    parent[v]        id of parent, -1 for the root
    bias[v]          bias of the edge (parent[v], v); NaN for the root
    depth[v]         distance from the root (may go negative for pair
                     simulations that extend ancestry upward)
    role[v]          0 backbone, 1 bud (trap entrance), 2 trap interior
    first_child[v] / next_sibling[v]
                     children linked list in creation order (-1 terminates)
    status[v]        0 children/trap not yet materialized, 1 done
    trap_id[v]       entrance index owning v, -1 on the backbone

Vertices are always created after their parent, so parent[v] < v; several
passes below rely on that ordering.
"""

import os

import numpy as np

_NO_NUMBA = os.environ.get("GWTRAP_NO_NUMBA", "") not in ("", "0")

try:
    if _NO_NUMBA:
        raise ImportError("numba disabled by GWTRAP_NO_NUMBA")
    from numba import njit as _numba_njit

    HAS_NUMBA = True
    BACKEND = "numba"

    def njit(func):
        return _numba_njit(cache=True)(func)

    def njit_sig(sig):
        # Pinned signature: python ints coerce to uint64 at the boundary
        # instead of silently compiling an int64 specialization whose mixed
        # arithmetic float-promotes and corrupts the stream.
        def deco(func):
            return _numba_njit(sig, cache=True)(func)

        return deco

except ImportError:
    import functools

    HAS_NUMBA = False
    BACKEND = "python"

    def njit(func):
        # Same body, interpreted. uint64 wraparound is intended, so the
        # overflow warnings numpy emits for scalar ops are suppressed here.
        @functools.wraps(func)
        def wrapper(*args):
            with np.errstate(over="ignore"):
                return func(*args)

        return wrapper

    def njit_sig(sig):
        def deco(func):
            @functools.wraps(func)
            def wrapper(*args):
                with np.errstate(over="ignore"):
                    return func(*(np.uint64(a) for a in args))

            return wrapper

        return deco


# ---------------------------------------------------------------------------
# splitmix64 in counter mode: out(key, ctr) = mix(key + ctr * GOLDEN).
# Verified against the published test vector (seed 0 -> 0xe220a8397b1dcdaf).
# ---------------------------------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIXA = np.uint64(0xBF58476D1CE4E5B9)
_MIXB = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_U1 = np.uint64(1)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53

ROLE_BACKBONE = 0
ROLE_BUD = 1
ROLE_TRAP = 2

STATUS_OK = 0
STATUS_BUDGET = 1
STATUS_TRAP_TOO_LARGE = 2


@njit_sig("uint64(uint64)")
def mix64(z):
    z = (z ^ (z >> _S30)) * _MIXA
    z = (z ^ (z >> _S27)) * _MIXB
    return z ^ (z >> _S31)


@njit_sig("uint64(uint64, uint64)")
def rand_u64(key, ctr):
    return mix64(key + ctr * _GOLDEN)


@njit_sig("float64(uint64, uint64)")
def rand_u01(key, ctr):
    return np.float64(rand_u64(key, ctr) >> _S11) * _INV53


@njit_sig("uint64(uint64, uint64)")
def derive_key(key, tag):
    return mix64(key ^ mix64(tag + _GOLDEN))


@njit
def _sample_cdf(cdf, u):
    i = 0
    last = cdf.shape[0] - 1
    while i < last and u >= cdf[i]:
        i += 1
    return i


@njit
def _sample_bias(bias_kind, atom_vals, atom_cdf, bias_lo, bias_hi, u):
    if bias_kind == 0:
        return atom_vals[_sample_cdf(atom_cdf, u)]
    return bias_lo + (bias_hi - bias_lo) * u


# ---------------------------------------------------------------------------
# Growable vertex storage
# ---------------------------------------------------------------------------


@njit
def _grow(parent, bias, depth, role, first_child, next_sibling, status,
          trap_id, mark, need):
    cap = parent.shape[0]
    if need <= cap:
        return parent, bias, depth, role, first_child, next_sibling, status, trap_id, mark
    newcap = cap
    while newcap < need:
        newcap *= 2
    p = np.empty(newcap, np.int64)
    b = np.empty(newcap, np.float64)
    d = np.empty(newcap, np.int64)
    r = np.empty(newcap, np.int8)
    fc = np.empty(newcap, np.int64)
    ns = np.empty(newcap, np.int64)
    st = np.empty(newcap, np.int8)
    ti = np.empty(newcap, np.int64)
    mk = np.empty(newcap, np.int64)
    p[:cap] = parent
    b[:cap] = bias
    d[:cap] = depth
    r[:cap] = role
    fc[:cap] = first_child
    ns[:cap] = next_sibling
    st[:cap] = status
    ti[:cap] = trap_id
    mk[:cap] = mark
    mk[cap:] = -1
    return p, b, d, r, fc, ns, st, ti, mk


@njit
def _append_child(parent, bias, depth, role, first_child, next_sibling,
                  status, trap_id, n, v, child_bias, child_role):
    """Append a child of v at index n. Arrays must have capacity."""
    parent[n] = v
    bias[n] = child_bias
    depth[n] = depth[v] + 1
    role[n] = child_role
    first_child[n] = -1
    next_sibling[n] = -1
    status[n] = 0
    trap_id[n] = trap_id[v] if child_role == ROLE_TRAP else -1
    c = first_child[v]
    if c == -1:
        first_child[v] = n
    else:
        while next_sibling[c] != -1:
            c = next_sibling[c]
        next_sibling[c] = n
    return n + 1


# ---------------------------------------------------------------------------
# Environment growth: backbone joint offspring + lazy traps
# ---------------------------------------------------------------------------


@njit
def materialize_backbone_children(parent, bias, depth, role, first_child,
                                  next_sibling, status, trap_id, mark, n, v,
                                  joint_j, joint_m, joint_cdf,
                                  bias_kind, atom_vals, atom_cdf,
                                  bias_lo, bias_hi, key, ctr):
    """Draw (j, m) from the backbone joint law and create j backbone plus m
    bud children of v, interleaved uniformly at random. Returns updated
    arrays, vertex count and rng counter."""
    ctr = ctr + _U1
    idx = _sample_cdf(joint_cdf, rand_u01(key, ctr))
    j = joint_j[idx]
    m = joint_m[idx]
    total = j + m
    arrs = _grow(parent, bias, depth, role, first_child, next_sibling,
                 status, trap_id, mark, n + total)
    parent, bias, depth, role, first_child, next_sibling, status, trap_id, mark = arrs
    jr = j
    mr = m
    for _ in range(total):
        ctr = ctr + _U1
        u = rand_u01(key, ctr)
        if u * np.float64(jr + mr) < np.float64(jr):
            child_role = ROLE_BACKBONE
            jr -= 1
        else:
            child_role = ROLE_BUD
            mr -= 1
        ctr = ctr + _U1
        cb = _sample_bias(bias_kind, atom_vals, atom_cdf, bias_lo, bias_hi,
                          rand_u01(key, ctr))
        n = _append_child(parent, bias, depth, role, first_child,
                          next_sibling, status, trap_id, n, v, cb, child_role)
    status[v] = 1
    return parent, bias, depth, role, first_child, next_sibling, status, trap_id, mark, n, ctr


@njit
def grow_h_tree(parent, bias, depth, role, first_child, next_sibling, status,
                trap_id, mark, n, ent, h_cdf,
                bias_kind, atom_vals, atom_cdf, bias_lo, bias_hi,
                key, ctr, cap):
    """Attach a fresh subcritical branching-process tree below ent: every
    descendant gets an i.i.d. offspring count from h_cdf and an i.i.d. edge
    bias. Returns a TRAP_TOO_LARGE status once more than cap vertices have
    been created."""
    stack = np.empty(64, np.int64)
    stack[0] = ent
    sp = 1
    created = 0
    code = STATUS_OK
    while sp > 0:
        sp -= 1
        v = stack[sp]
        ctr = ctr + _U1
        k = _sample_cdf(h_cdf, rand_u01(key, ctr))
        created += k
        if created > cap:
            code = STATUS_TRAP_TOO_LARGE
            break
        arrs = _grow(parent, bias, depth, role, first_child, next_sibling,
                     status, trap_id, mark, n + k)
        parent, bias, depth, role, first_child, next_sibling, status, trap_id, mark = arrs
        if sp + k > stack.shape[0]:
            newstack = np.empty(2 * (sp + k), np.int64)
            newstack[:sp] = stack[:sp]
            stack = newstack
        for _ in range(k):
            ctr = ctr + _U1
            cb = _sample_bias(bias_kind, atom_vals, atom_cdf, bias_lo,
                              bias_hi, rand_u01(key, ctr))
            child = n
            n = _append_child(parent, bias, depth, role, first_child,
                              next_sibling, status, trap_id, n, v, cb,
                              ROLE_TRAP)
            status[child] = 1
            stack[sp] = child
            sp += 1
        status[v] = 1
    return parent, bias, depth, role, first_child, next_sibling, status, trap_id, mark, n, ctr, code


@njit
def subtree_stats(bias, depth, first_child, next_sibling, n, top):
    """(omega, D, v_base) of the subtree rooted at top.

    omega is the sum over descendants v of the product of edge biases on the
    path top..v (the weight of the subtree); D is the maximal depth below
    top; v_base is the first vertex attaining D in preorder with children in
    creation order (the lexicographically minimal deepest vertex)."""
    stack = np.empty(64, np.int64)
    wstack = np.empty(64, np.float64)
    stack[0] = top
    wstack[0] = 1.0
    sp = 1
    omega = 0.0
    best_d = -1
    v_base = top
    base = depth[top]
    while sp > 0:
        sp -= 1
        v = stack[sp]
        w = wstack[sp]
        omega += w
        dv = depth[v] - base
        if dv > best_d:
            best_d = dv
            v_base = v
        # push children reversed so that they pop in creation order
        cnt = 0
        c = first_child[v]
        while c != -1:
            cnt += 1
            c = next_sibling[c]
        if sp + cnt > stack.shape[0]:
            ns2 = np.empty(2 * (sp + cnt), np.int64)
            ws2 = np.empty(2 * (sp + cnt), np.float64)
            ns2[:sp] = stack[:sp]
            ws2[:sp] = wstack[:sp]
            stack = ns2
            wstack = ws2
        c = first_child[v]
        pos = sp + cnt - 1
        while c != -1:
            stack[pos] = c
            wstack[pos] = w * bias[c]
            pos -= 1
            c = next_sibling[c]
        sp += cnt
    return omega, best_d, v_base


@njit
def sample_trap_weight_batch(start, count, h_cdf, bias_kind, atom_vals,
                             atom_cdf, bias_lo, bias_hi, base_key, cap):
    """Sample traps with absolute indices start..start+count-1, returning
    per trap the weight omega(T), the depth D(T) and the vertex count.
    Tree structure is kept only transiently; trap i uses the derived key
    (base_key, i), so any index split reproduces the same ensemble."""
    omegas = np.empty(count, np.float64)
    depths = np.empty(count, np.int64)
    sizes = np.empty(count, np.int64)
    parent = np.empty(64, np.int64)
    bias = np.empty(64, np.float64)
    depth = np.empty(64, np.int64)
    role = np.empty(64, np.int8)
    first_child = np.empty(64, np.int64)
    next_sibling = np.empty(64, np.int64)
    status = np.empty(64, np.int8)
    trap_id = np.empty(64, np.int64)
    mark = np.full(64, -1, np.int64)
    for i in range(count):
        key = derive_key(base_key, np.uint64(start + i))
        ctr = np.uint64(0)
        # root of the trap (the entrance); no head edge is needed here
        parent[0] = -1
        bias[0] = np.nan
        depth[0] = 0
        role[0] = ROLE_BUD
        first_child[0] = -1
        next_sibling[0] = -1
        status[0] = 0
        trap_id[0] = 0
        res = grow_h_tree(parent, bias, depth, role, first_child,
                          next_sibling, status, trap_id, mark, 1, 0, h_cdf,
                          bias_kind, atom_vals, atom_cdf, bias_lo, bias_hi,
                          key, ctr, cap)
        parent, bias, depth, role, first_child, next_sibling, status, trap_id, mark = res[:9]
        n = res[9]
        code = res[11]
        if code != STATUS_OK:
            omegas[i] = np.nan
            depths[i] = -1
            sizes[i] = -1
            continue
        om, dd, _vb = subtree_stats(bias, depth, first_child, next_sibling, n, 0)
        omegas[i] = om
        depths[i] = dd
        sizes[i] = n
    return omegas, depths, sizes


# ---------------------------------------------------------------------------
# The walk on a lazily materialized infinite environment
# ---------------------------------------------------------------------------

STOP_BACKBONE_DIST = 0
STOP_ANY_DIST = 1
STOP_STEPS = 2
STOP_ENTRANCES = 3


@njit
def _step(parent, bias, first_child, next_sibling, v, u):
    """One transition from v: parent with probability 1/(1+sum beta), child
    c with probability beta_c/(1+sum beta); the root jumps to child c with
    probability beta_c / sum beta."""
    s = 0.0
    c = first_child[v]
    while c != -1:
        s += bias[c]
        c = next_sibling[c]
    if parent[v] == -1:
        target = u * s
    else:
        target = u * (1.0 + s) - 1.0
        if target < 0.0:
            return parent[v]
    c = first_child[v]
    acc = 0.0
    while c != -1:
        acc += bias[c]
        if target < acc:
            return c
        c = next_sibling[c]
    return parent[v] if parent[v] != -1 else v  # guards fp edge cases


@njit
def env_walk(parent, bias, depth, role, first_child, next_sibling, status,
             trap_id, mark, n, start_vertex,
             joint_j, joint_m, joint_cdf, h_cdf,
             bias_kind, atom_vals, atom_cdf, bias_lo, bias_hi,
             env_key, env_ctr, walk_key, walk_ctr,
             stop_kind, stop_n, step_budget, trap_cap,
             req_dist, checkpoints, record_path):
    """Run the biased walk from start_vertex, materializing the environment
    on demand, until the stop condition or the step budget is hit.

    Returns the full event record needed to assemble a TraceSummary:
    first-hit times for req_dist (any vertex and backbone-restricted), trap
    entrance times/vertices, per-entrance occupation times, the candidate
    regeneration stack, per-checkpoint maximal displacement, and optionally
    the raw path."""
    nreq = req_dist.shape[0]
    delta = np.full(nreq, -1, np.int64)
    delta_bar = np.full(nreq, -1, np.int64)
    ncp = checkpoints.shape[0]
    cp_max = np.zeros(ncp, np.int64)

    theta_cap = 256
    theta_t = np.empty(theta_cap, np.int64)
    theta_v = np.empty(theta_cap, np.int64)
    tau = np.zeros(theta_cap, np.int64)
    n_ent = 0

    rg_cap = 256
    rg_t = np.empty(rg_cap, np.int64)
    rg_d = np.empty(rg_cap, np.int64)
    rg_sp = 0

    if record_path != 0:
        path_v = np.empty(step_budget + 1, np.int64)
    else:
        path_v = np.empty(0, np.int64)

    v = start_vertex
    t = np.int64(0)
    if record_path != 0:
        path_v[0] = v
    max_depth = depth[v]
    max_depth_bb = depth[v] if role[v] == ROLE_BACKBONE else np.int64(-1)
    dptr = 0
    while dptr < nreq and req_dist[dptr] <= max_depth:
        delta[dptr] = t
        if role[v] == ROLE_BACKBONE:
            delta_bar[dptr] = t
        dptr += 1
    bptr = 0
    while bptr < nreq and delta_bar[bptr] != -1:
        bptr += 1
    cptr = 0
    run_max_bb = np.int64(-2 ** 62)
    code = STATUS_BUDGET

    while True:
        # -- events at the current (vertex, time) ---------------------------
        if role[v] == ROLE_BACKBONE:
            d = depth[v]
            while rg_sp > 0 and rg_d[rg_sp - 1] >= d:
                rg_sp -= 1
            if d > run_max_bb:
                if rg_sp >= rg_cap:
                    rg_cap *= 2
                    t2 = np.empty(rg_cap, np.int64)
                    d2 = np.empty(rg_cap, np.int64)
                    t2[:rg_sp] = rg_t[:rg_sp]
                    d2[:rg_sp] = rg_d[:rg_sp]
                    rg_t = t2
                    rg_d = d2
                rg_t[rg_sp] = t
                rg_d[rg_sp] = d
                rg_sp += 1
                run_max_bb = d
        else:
            if status[v] == 0 and role[v] == ROLE_BUD:
                # first visit to a trap entrance
                if n_ent >= theta_cap:
                    theta_cap *= 2
                    t2 = np.empty(theta_cap, np.int64)
                    v2 = np.empty(theta_cap, np.int64)
                    u2 = np.zeros(theta_cap, np.int64)
                    t2[:n_ent] = theta_t[:n_ent]
                    v2[:n_ent] = theta_v[:n_ent]
                    u2[:n_ent] = tau[:n_ent]
                    theta_t = t2
                    theta_v = v2
                    tau = u2
                theta_t[n_ent] = t
                theta_v[n_ent] = v
                trap_id[v] = n_ent
                res = grow_h_tree(parent, bias, depth, role, first_child,
                                  next_sibling, status, trap_id, mark, n, v,
                                  h_cdf, bias_kind, atom_vals, atom_cdf,
                                  bias_lo, bias_hi, env_key, env_ctr,
                                  trap_cap)
                parent, bias, depth, role, first_child, next_sibling, status, trap_id, mark = res[:9]
                n = res[9]
                env_ctr = res[10]
                if res[11] != STATUS_OK:
                    code = STATUS_TRAP_TOO_LARGE
                    break
                n_ent += 1
                if stop_kind == STOP_ENTRANCES and n_ent >= stop_n:
                    tau[trap_id[v]] += 1
                    code = STATUS_OK
                    break
            if trap_id[v] >= 0:
                tau[trap_id[v]] += 1

        # -- displacement bookkeeping ---------------------------------------
        d = depth[v]
        if d > max_depth:
            max_depth = d
            while dptr < nreq and req_dist[dptr] <= max_depth:
                delta[dptr] = t
                dptr += 1
            if stop_kind == STOP_ANY_DIST and max_depth >= stop_n:
                code = STATUS_OK
                break
        if role[v] == ROLE_BACKBONE and d > max_depth_bb:
            max_depth_bb = d
            while bptr < nreq and req_dist[bptr] <= max_depth_bb:
                if delta_bar[bptr] == -1:
                    delta_bar[bptr] = t
                bptr += 1
            if stop_kind == STOP_BACKBONE_DIST and max_depth_bb >= stop_n:
                code = STATUS_OK
                break
        while cptr < ncp and checkpoints[cptr] <= t:
            cp_max[cptr] = max_depth
            cptr += 1

        if t >= step_budget:
            code = STATUS_BUDGET
            break

        # -- materialize and step -------------------------------------------
        if role[v] == ROLE_BACKBONE and status[v] == 0:
            res = materialize_backbone_children(
                parent, bias, depth, role, first_child, next_sibling, status,
                trap_id, mark, n, v, joint_j, joint_m, joint_cdf, bias_kind,
                atom_vals, atom_cdf, bias_lo, bias_hi, env_key, env_ctr)
            parent, bias, depth, role, first_child, next_sibling, status, trap_id, mark = res[:9]
            n = res[9]
            env_ctr = res[10]
        walk_ctr = walk_ctr + _U1
        v = _step(parent, bias, first_child, next_sibling, v,
                  rand_u01(walk_key, walk_ctr))
        t += 1
        if record_path != 0:
            path_v[t] = v

    while cptr < ncp and checkpoints[cptr] <= t:
        cp_max[cptr] = max_depth
        cptr += 1
    censored = 1 if trap_id[v] >= 0 else 0
    return (code, t, v,
            parent, bias, depth, role, first_child, next_sibling, status,
            trap_id, mark, n, env_ctr, walk_ctr,
            delta, delta_bar,
            theta_t[:n_ent].copy(), theta_v[:n_ent].copy(),
            tau[:n_ent].copy(),
            rg_t[:rg_sp].copy(), rg_d[:rg_sp].copy(),
            cp_max, path_v[:t + 1], censored)


# ---------------------------------------------------------------------------
# Walks on finite trees and backbone-tree pairs
# ---------------------------------------------------------------------------


@njit
def escape_time_batch(parent, bias, first_child, next_sibling, head, ent,
                      reps, key, step_budget):
    """Single-visit escape times: walk from ent, absorb at head. Returns the
    hitting times H_head over `reps` independent runs (-1 when the budget is
    exceeded, which cannot happen for sane budgets on finite traps)."""
    out = np.empty(reps, np.int64)
    for r in range(reps):
        rkey = derive_key(key, np.uint64(r))
        ctr = np.uint64(0)
        v = ent
        t = np.int64(0)
        while t < step_budget:
            ctr = ctr + _U1
            v = _step(parent, bias, first_child, next_sibling, v,
                      rand_u01(rkey, ctr))
            t += 1
            if v == head:
                break
        out[r] = t if v == head else -1
    return out


@njit
def pair_trap_time(parent, bias, depth, role, first_child, next_sibling,
                   status, trap_id, mark, n, head, ent, v_base,
                   g_cdf, bias_kind, atom_vals, atom_cdf, bias_lo, bias_hi,
                   env_key, env_ctr, walk_key, walk_ctr,
                   k_stop, step_budget):
    """Walk a backbone-tree pair from ent until standing on a backbone
    vertex k_stop levels below head (escape; residual return probability is
    at most q**(1-k_stop)) or until the budget runs out.

    The scaffold is extended lazily with fresh backbone growth (offspring
    law g via g_cdf, biases from nu), both below the snapshot shell and
    above the scaffold root. Returns (tau, fell_deep, censored, total steps,
    env_ctr, walk_ctr); tau counts the times at which the walk stands in the
    trap, including time 0 at ent."""
    v = ent
    t = np.int64(0)
    tau = np.int64(0)
    fell_deep = 0
    head_depth = depth[head]
    root = 0
    while parent[root] != -1:
        root = parent[root]
    code = STATUS_BUDGET
    while True:
        if role[v] != ROLE_BACKBONE:
            tau += 1
            if v == v_base:
                fell_deep = 1
        else:
            if depth[v] - head_depth >= k_stop:
                code = STATUS_OK
                break
        if t >= step_budget:
            code = STATUS_BUDGET
            break
        if role[v] == ROLE_BACKBONE and status[v] == 0:
            # fresh leafless growth: offspring count from g, biases from nu
            env_ctr = env_ctr + _U1
            j = _sample_cdf(g_cdf, rand_u01(env_key, env_ctr)) + 1
            arrs = _grow(parent, bias, depth, role, first_child,
                         next_sibling, status, trap_id, mark, n + j)
            parent, bias, depth, role, first_child, next_sibling, status, trap_id, mark = arrs
            for _ in range(j):
                env_ctr = env_ctr + _U1
                cb = _sample_bias(bias_kind, atom_vals, atom_cdf, bias_lo,
                                  bias_hi, rand_u01(env_key, env_ctr))
                n = _append_child(parent, bias, depth, role, first_child,
                                  next_sibling, status, trap_id, n, v, cb,
                                  ROLE_BACKBONE)
            status[v] = 1
        if v == root and parent[v] == -1:
            # extend ancestry upward: new root with the old root among its
            # g-distributed children, everything else fresh
            env_ctr = env_ctr + _U1
            j = _sample_cdf(g_cdf, rand_u01(env_key, env_ctr)) + 1
            arrs = _grow(parent, bias, depth, role, first_child,
                         next_sibling, status, trap_id, mark, n + j)
            parent, bias, depth, role, first_child, next_sibling, status, trap_id, mark = arrs
            newroot = n
            parent[newroot] = -1
            bias[newroot] = np.nan
            depth[newroot] = depth[root] - 1
            role[newroot] = ROLE_BACKBONE
            first_child[newroot] = root
            next_sibling[newroot] = -1
            status[newroot] = 1
            trap_id[newroot] = -1
            n += 1
            parent[root] = newroot
            env_ctr = env_ctr + _U1
            bias[root] = _sample_bias(bias_kind, atom_vals, atom_cdf,
                                      bias_lo, bias_hi,
                                      rand_u01(env_key, env_ctr))
            next_sibling[root] = -1
            for _ in range(j - 1):
                env_ctr = env_ctr + _U1
                cb = _sample_bias(bias_kind, atom_vals, atom_cdf, bias_lo,
                                  bias_hi, rand_u01(env_key, env_ctr))
                n = _append_child(parent, bias, depth, role, first_child,
                                  next_sibling, status, trap_id, n, newroot,
                                  cb, ROLE_BACKBONE)
            root = newroot
        walk_ctr = walk_ctr + _U1
        v = _step(parent, bias, first_child, next_sibling, v,
                  rand_u01(walk_key, walk_ctr))
        t += 1
    censored = 1 if code == STATUS_BUDGET and role[v] != ROLE_BACKBONE else 0
    return tau, fell_deep, censored, t, env_ctr, walk_ctr


# ---------------------------------------------------------------------------
# Scaffold extraction: the k-large backbone neighbourhood of a bud
# ---------------------------------------------------------------------------


@njit
def extract_neighborhood(parent, bias, depth, role, first_child,
                         next_sibling, status, trap_id, mark, n, u, k,
                         joint_j, joint_m, joint_cdf,
                         bias_kind, atom_vals, atom_cdf, bias_lo, bias_hi,
                         env_key, env_ctr):
    """Copy out the induced weighted tree on bud u plus all backbone
    vertices within distance k+1 of u, materializing missing backbone
    children on demand. The copy is rooted at the ancestor of u at distance
    k+1 (or at the environment root when u is shallower). Child creation
    order is preserved.

    Returns the copy as fresh arrays (with u relabelled as `ent`), the
    updated environment arrays and rng counter."""
    # ancestor chain a_1.. up to distance k+1
    anc = np.empty(k + 2, np.int64)
    anc[0] = u
    top = 0
    a = u
    for i in range(k + 1):
        if parent[a] == -1:
            break
        a = parent[a]
        top = i + 1
        anc[top] = a
    newroot_env = anc[top]

    # BFS over {u} + backbone vertices, distance <= k+1
    qcap = 1024
    queue = np.empty(qcap, np.int64)
    dist = np.empty(qcap, np.int64)
    queue[0] = u
    dist[0] = 0
    mark[u] = 0
    head_q = 0
    tail_q = 1
    while head_q < tail_q:
        v = queue[head_q]
        dv = dist[head_q]
        head_q += 1
        if dv == k + 1:
            continue
        # neighbors: parent and children (backbone only, except u itself)
        if role[v] == ROLE_BACKBONE and status[v] == 0:
            res = materialize_backbone_children(
                parent, bias, depth, role, first_child, next_sibling, status,
                trap_id, mark, n, v, joint_j, joint_m, joint_cdf, bias_kind,
                atom_vals, atom_cdf, bias_lo, bias_hi, env_key, env_ctr)
            parent, bias, depth, role, first_child, next_sibling, status, trap_id, mark = res[:9]
            n = res[9]
            env_ctr = res[10]
        p = parent[v]
        nb_count = 1
        c = first_child[v]
        while c != -1:
            nb_count += 1
            c = next_sibling[c]
        if tail_q + nb_count > qcap:
            qcap = 2 * (tail_q + nb_count)
            q2 = np.empty(qcap, np.int64)
            d2 = np.empty(qcap, np.int64)
            q2[:tail_q] = queue[:tail_q]
            d2[:tail_q] = dist[:tail_q]
            queue = q2
            dist = d2
        if p != -1 and role[p] == ROLE_BACKBONE and mark[p] == -1:
            mark[p] = 0
            queue[tail_q] = p
            dist[tail_q] = dv + 1
            tail_q += 1
        if v != u:
            c = first_child[v]
            while c != -1:
                if role[c] == ROLE_BACKBONE and mark[c] == -1:
                    mark[c] = 0
                    queue[tail_q] = c
                    dist[tail_q] = dv + 1
                    tail_q += 1
                c = next_sibling[c]
    cnt = tail_q

    # assign copy ids by env creation order so parents precede children
    sel = queue[:cnt].copy()
    sel.sort()
    for i in range(cnt):
        mark[sel[i]] = i
    cp = np.empty(cnt, np.int64)
    cb = np.empty(cnt, np.float64)
    cd = np.empty(cnt, np.int64)
    cr = np.empty(cnt, np.int8)
    cfc = np.full(cnt, -1, np.int64)
    cns = np.full(cnt, -1, np.int64)
    cst = np.zeros(cnt, np.int8)
    cti = np.full(cnt, -1, np.int64)
    base_depth = depth[newroot_env]
    for i in range(cnt):
        v = sel[i]
        cb[i] = bias[v]
        cd[i] = depth[v] - base_depth
        cr[i] = role[v]
        cst[i] = 1
        p = parent[v]
        if v == newroot_env or p == -1 or mark[p] == -1:
            cp[i] = -1
            cb[i] = np.nan
        else:
            cp[i] = mark[p]
    # rebuild child lists in creation order; mark boundary vertices (no
    # copied children but materialized in env) as unmaterialized so pair
    # simulation regrows them freshly
    for i in range(cnt):
        if cp[i] != -1:
            p = cp[i]
            if cfc[p] == -1:
                cfc[p] = i
            else:
                c = cfc[p]
                while cns[c] != -1:
                    c = cns[c]
                cns[c] = i
    for i in range(cnt):
        if cr[i] == ROLE_BACKBONE and cfc[i] == -1:
            cst[i] = 0
    ent_copy = mark[u]
    cst[ent_copy] = 0
    for i in range(cnt):
        mark[sel[i]] = -1
    return (cp, cb, cd, cr, cfc, cns, cst, cti, cnt, ent_copy,
            parent, bias, depth, role, first_child, next_sibling, status,
            trap_id, mark, n, env_ctr)


@njit
def attach_subtree(parent, bias, depth, role, first_child, next_sibling,
                   status, trap_id, mark, n, under,
                   s_parent, s_bias, s_depth, s_first_child, s_next_sibling,
                   s_n, s_top):
    """Graft the subtree of (s_*) rooted at s_top below vertex `under`,
    preserving child creation order; the grafted vertices get trap role.
    s_top itself is identified with `under` (not copied). Returns updated
    arrays, count, and the id of the copy of each source vertex in a remap
    array."""
    remap = np.full(s_n, -1, np.int64)
    remap[s_top] = under
    arrs = _grow(parent, bias, depth, role, first_child, next_sibling,
                 status, trap_id, mark, n + s_n)
    parent, bias, depth, role, first_child, next_sibling, status, trap_id, mark = arrs
    for v in range(s_n):
        if v == s_top:
            continue
        p = s_parent[v]
        if p != -1 and remap[p] != -1:
            child = n
            remap[v] = child
            n = _append_child(parent, bias, depth, role, first_child,
                              next_sibling, status, trap_id, n, remap[p],
                              s_bias[v], ROLE_TRAP)
            status[child] = 1
    status[under] = 1
    return (parent, bias, depth, role, first_child, next_sibling, status,
            trap_id, mark, n, remap)


# ---------------------------------------------------------------------------
# Exact absorption solves by post-order elimination (O(n), tree-structured)
# ---------------------------------------------------------------------------


@njit
def absorb_solve(parent, bias, first_child, next_sibling, n, fixed_mask,
                 fixed_val, reward):
    """Solve x_v = reward + sum_u P(v,u) x_u with x pinned on fixed
    vertices. reward=0, pins in {0,1}: hitting probabilities; reward=1,
    pins=0: expected absorption times. Exploits parent[v] < v.

    Returns (values, ok); ok=0 flags a singular system (no absorbing state
    reachable)."""
    alpha = np.zeros(n, np.float64)
    beta = np.zeros(n, np.float64)
    x = np.zeros(n, np.float64)
    ok = 1
    for v in range(n - 1, -1, -1):
        if fixed_mask[v] != 0:
            alpha[v] = fixed_val[v]
            beta[v] = 0.0
            continue
        s = 0.0
        c = first_child[v]
        while c != -1:
            s += bias[c]
            c = next_sibling[c]
        if parent[v] == -1:
            total = s
            ppar = 0.0
        else:
            total = 1.0 + s
            ppar = 1.0 / total
        acc = 0.0
        bsum = 0.0
        c = first_child[v]
        while c != -1:
            pc = bias[c] / total
            acc += pc * alpha[c]
            bsum += pc * beta[c]
            c = next_sibling[c]
        d = 1.0 - bsum
        if d <= 1e-14:
            ok = 0
            d = 1.0
        alpha[v] = (acc + reward) / d
        beta[v] = ppar / d
    for v in range(n):
        if fixed_mask[v] != 0:
            x[v] = fixed_val[v]
        elif parent[v] == -1:
            x[v] = alpha[v]
        else:
            x[v] = alpha[v] + beta[v] * x[parent[v]]
    return x, ok
