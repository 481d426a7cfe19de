"""Array interpreters for recorded scalar tapes plus fast data-generation loops.

Everything here is deliberately branch-simple so it compiles under numba's
nopython mode; when numba is unavailable the same functions run as plain
Python (slow but semantically identical). Guards replace exceptional float
behaviour (division by zero, exp overflow, log of non-positive) with inf/nan
so that both backends agree and the callers can detect the failure by the
finiteness check.
"""

import math

import numpy as np

try:
    from numba import njit as _njit

    HAVE_NUMBA = True

    def _jit(fn):
        return _njit(cache=True, nogil=True)(fn)

except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def _jit(fn):
        return fn


# Tape opcodes. LEAF values are scattered by the caller before a sweep;
# CONST values live in the aux array.
OP_LEAF = 0
OP_CONST = 1
OP_ADD = 2
OP_SUB = 3
OP_MUL = 4
OP_DIV = 5
OP_NEG = 6
OP_EXP = 7
OP_TANH = 8
OP_LOG = 9
OP_POWI = 10

OPT_ADAM = 0
OPT_SGD = 1

# math.exp keeps a finite double up to ~709.78; everything above is mapped
# to inf so the pure-Python backend never raises OverflowError mid-sweep.
_EXP_MAX = 709.0


@_jit
def forward_range(ops, pa, pb, aux, values, la, lb, start, end):
    """Evaluate nodes [start, end), filling values and local partials.

    Returns the index of the first non-finite node, or -1 if all finite.
    """
    for idx in range(start, end):
        op = ops[idx]
        if op == OP_LEAF:
            v = values[idx]
            la[idx] = 0.0
            lb[idx] = 0.0
        elif op == OP_CONST:
            v = aux[idx]
            values[idx] = v
            la[idx] = 0.0
            lb[idx] = 0.0
        elif op == OP_ADD:
            v = values[pa[idx]] + values[pb[idx]]
            values[idx] = v
            la[idx] = 1.0
            lb[idx] = 1.0
        elif op == OP_SUB:
            v = values[pa[idx]] - values[pb[idx]]
            values[idx] = v
            la[idx] = 1.0
            lb[idx] = -1.0
        elif op == OP_MUL:
            va = values[pa[idx]]
            vb = values[pb[idx]]
            v = va * vb
            values[idx] = v
            la[idx] = vb
            lb[idx] = va
        elif op == OP_DIV:
            va = values[pa[idx]]
            vb = values[pb[idx]]
            if vb == 0.0:
                v = math.inf
                values[idx] = v
                la[idx] = 0.0
                lb[idx] = 0.0
            else:
                v = va / vb
                values[idx] = v
                la[idx] = 1.0 / vb
                lb[idx] = -va / (vb * vb)
        elif op == OP_NEG:
            v = -values[pa[idx]]
            values[idx] = v
            la[idx] = -1.0
            lb[idx] = 0.0
        elif op == OP_EXP:
            va = values[pa[idx]]
            if va > _EXP_MAX:
                v = math.inf
            else:
                v = math.exp(va)
            values[idx] = v
            la[idx] = v
            lb[idx] = 0.0
        elif op == OP_TANH:
            v = math.tanh(values[pa[idx]])
            values[idx] = v
            la[idx] = 1.0 - v * v
            lb[idx] = 0.0
        elif op == OP_LOG:
            va = values[pa[idx]]
            if va <= 0.0:
                v = math.nan
                values[idx] = v
                la[idx] = 0.0
            else:
                v = math.log(va)
                values[idx] = v
                la[idx] = 1.0 / va
            lb[idx] = 0.0
        else:  # OP_POWI
            va = values[pa[idx]]
            k = int(aux[idx])
            if va == 0.0 and k < 1:
                v = math.inf
                values[idx] = v
                la[idx] = 0.0
            else:
                v = va ** k
                values[idx] = v
                la[idx] = k * (va ** (k - 1))
            lb[idx] = 0.0
        if not (v > -math.inf and v < math.inf):
            return idx
    return -1


@_jit
def backward_range(pa, pb, la, lb, adj, start, out_idx):
    """Reverse-accumulate adjoints for nodes [start, out_idx], seeded at out_idx.

    Runs a single strict reverse sweep; contributions flowing to parents
    below ``start`` (shared data leaves) are written but never propagated.
    """
    for idx in range(start, out_idx + 1):
        adj[idx] = 0.0
    adj[out_idx] = 1.0
    for idx in range(out_idx, start - 1, -1):
        a = adj[idx]
        if a == 0.0:
            continue
        ia = pa[idx]
        if ia >= 0:
            adj[ia] += la[idx] * a
            ib = pb[idx]
            if ib >= 0:
                adj[ib] += lb[idx] * a


@_jit
def adam_apply(params, grads, m, v, t, lr, b1, b2, eps):
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for j in range(params.shape[0]):
        g = grads[j]
        m[j] = b1 * m[j] + (1.0 - b1) * g
        v[j] = b2 * v[j] + (1.0 - b2) * (g * g)
        mhat = m[j] / bc1
        vhat = v[j] / bc2
        params[j] -= lr * mhat / (math.sqrt(vhat) + eps)


@_jit
def sgd_apply(params, grads, lr):
    for j in range(params.shape[0]):
        params[j] -= lr * grads[j]


@_jit
def run_epoch_full(ops, pa, pb, aux, values, la, lb, adj,
                   param_pos, out_idx, params, grads, m, v, step,
                   lr, b1, b2, eps, opt_kind, do_update):
    """One full-batch epoch: evaluate the whole-series cost once, take one step.

    Returns (cost before the update, failing node index or -1, step count).
    """
    n_params = param_pos.shape[0]
    for k in range(n_params):
        values[param_pos[k]] = params[k]
    bad = forward_range(ops, pa, pb, aux, values, la, lb, 0, ops.shape[0])
    if bad >= 0:
        return math.nan, bad, step
    cost = values[out_idx]
    if do_update:
        backward_range(pa, pb, la, lb, adj, 0, out_idx)
        for k in range(n_params):
            g = adj[param_pos[k]]
            if not (g > -math.inf and g < math.inf):
                return cost, param_pos[k], step
            grads[k] = g
        step += 1
        if opt_kind == OPT_ADAM:
            adam_apply(params, grads, m, v, step, lr, b1, b2, eps)
        else:
            sgd_apply(params, grads, lr)
    return cost, -1, step


@_jit
def run_epoch_pairs(ops, pa, pb, aux, values, la, lb, adj,
                    starts, ends, outs, leaf_rows, order,
                    params, grads, m, v, step,
                    lr, b1, b2, eps, opt_kind, do_update):
    """One mini-batch epoch: per pair, evaluate its cost and take one step.

    Pairs run in the order given by ``order``; the returned cost is the
    running sum of pair costs as they were visited.
    """
    total = 0.0
    n_params = params.shape[0]
    for oi in range(order.shape[0]):
        p = order[oi]
        s = starts[p]
        e = ends[p]
        o = outs[p]
        for k in range(n_params):
            values[leaf_rows[p, k]] = params[k]
        bad = forward_range(ops, pa, pb, aux, values, la, lb, s, e)
        if bad >= 0:
            return math.nan, bad, step
        total += values[o]
        if do_update:
            backward_range(pa, pb, la, lb, adj, s, o)
            bad_leaf = -1
            for k in range(n_params):
                g = adj[leaf_rows[p, k]]
                if not (g > -math.inf and g < math.inf):
                    bad_leaf = leaf_rows[p, k]
                    break
                grads[k] = g
            if bad_leaf >= 0:
                return total, bad_leaf, step
            step += 1
            if opt_kind == OPT_ADAM:
                adam_apply(params, grads, m, v, step, lr, b1, b2, eps)
            else:
                sgd_apply(params, grads, lr)
    return total, -1, step


# ---------------------------------------------------------------------------
# Fast simulation loops used by the data generators and the evaluation
# rollout. The operation order inside each sub-step mirrors the scalar rhs
# functions exactly so the recorded and simulated paths agree bitwise.
# ---------------------------------------------------------------------------


@_jit
def sir_fixed_beta_curve(times, beta, gamma, s0, i0, r0, iters):
    n = times.shape[0]
    out = np.empty((n, 3))
    s = s0
    i = i0
    r = r0
    out[0, 0] = s
    out[0, 1] = i
    out[0, 2] = r
    for k in range(n - 1):
        span = times[k + 1] - times[k]
        h = span / iters
        for _ in range(iters):
            bsi = beta * s * i
            gi = gamma * i
            ds = -bsi
            di = bsi - gi
            dr = gi
            s = s + h * ds
            i = i + h * di
            r = r + h * dr
        out[k + 1, 0] = s
        out[k + 1, 1] = i
        out[k + 1, 2] = r
    return out


@_jit
def sir_weekly_beta_curve(times, weekly_beta, gamma, s0, i0, r0, iters):
    """SIR curve whose infection rate switches at 7-day boundaries."""
    n = times.shape[0]
    n_weeks = weekly_beta.shape[0]
    out = np.empty((n, 3))
    s = s0
    i = i0
    r = r0
    out[0, 0] = s
    out[0, 1] = i
    out[0, 2] = r
    for k in range(n - 1):
        span = times[k + 1] - times[k]
        h = span / iters
        for j in range(iters):
            t = times[k] + j * h
            w = int(t // 7.0)
            if w >= n_weeks:
                w = n_weeks - 1
            beta = weekly_beta[w]
            bsi = beta * s * i
            gi = gamma * i
            ds = -bsi
            di = bsi - gi
            dr = gi
            s = s + h * ds
            i = i + h * di
            r = r + h * dr
        out[k + 1, 0] = s
        out[k + 1, 1] = i
        out[k + 1, 2] = r
    return out


@_jit
def rc_piecewise_tau_curve(times, taus, v_s, v0, iters):
    """Charging curve with a per-interval time constant, one tau per interval."""
    n = times.shape[0]
    out = np.empty((n, 1))
    v = v0
    out[0, 0] = v
    for k in range(n - 1):
        span = times[k + 1] - times[k]
        h = span / iters
        tau = taus[k]
        for _ in range(iters):
            dv = (v_s - v) / tau
            v = v + h * dv
        out[k + 1, 0] = v
    return out


_WARMED = False


def warmup():
    """Force compilation of every kernel with tiny inputs (idempotent)."""
    global _WARMED
    if _WARMED:
        return
    ops = np.array([OP_LEAF, OP_CONST, OP_MUL], dtype=np.int32)
    pa = np.array([-1, -1, 0], dtype=np.int32)
    pb = np.array([-1, -1, 1], dtype=np.int32)
    aux = np.array([0.0, 2.0, 0.0])
    values = np.zeros(3)
    la = np.zeros(3)
    lb = np.zeros(3)
    adj = np.zeros(3)
    values[0] = 3.0
    param_pos = np.array([0], dtype=np.int32)
    params = np.array([3.0])
    grads = np.zeros(1)
    m = np.zeros(1)
    v = np.zeros(1)
    run_epoch_full(ops, pa, pb, aux, values, la, lb, adj, param_pos, 2,
                   params, grads, m, v, 0, 0.01, 0.9, 0.999, 1e-8, OPT_ADAM, True)
    starts = np.array([0], dtype=np.int32)
    ends = np.array([3], dtype=np.int32)
    outs = np.array([2], dtype=np.int32)
    leaf_rows = np.array([[0]], dtype=np.int32)
    order = np.array([0], dtype=np.int32)
    run_epoch_pairs(ops, pa, pb, aux, values, la, lb, adj, starts, ends, outs,
                    leaf_rows, order, params, grads, m, v, 0, 0.01, 0.9, 0.999,
                    1e-8, OPT_SGD, True)
    t2 = np.array([0.0, 1.0])
    sir_fixed_beta_curve(t2, 0.3, 0.1, 0.99, 0.01, 0.0, 2)
    sir_weekly_beta_curve(t2, np.array([0.3]), 0.1, 0.99, 0.01, 0.0, 2)
    rc_piecewise_tau_curve(t2, np.array([4.0]), 1.0, 0.0, 2)
    _WARMED = True
