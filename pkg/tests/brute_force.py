"""Independent reference implementations shared by the unit and acceptance tests."""
import itertools

import numpy as np

from hevtl import oracle
from hevtl import powertrain as pt


def gae_direct(rewards, values, dones, gamma, lam, v_boot):
    """O(K^2) double loop over TD errors, truncated at terminal steps."""
    k = len(rewards)
    deltas = []
    for t in range(k):
        if dones[t]:
            nv = 0.0
        elif t == k - 1:
            nv = v_boot
        else:
            nv = values[t + 1]
        deltas.append(rewards[t] + gamma * nv - values[t])
    adv = np.zeros(k)
    for t in range(k):
        total, w = 0.0, 1.0
        for j in range(t, k):
            total += w * deltas[j]
            if dones[j]:
                break
            w *= gamma * lam
        adv[t] = total
    return adv


def lottery_enumeration(params, cycle, soc_nodes, torque_nodes, soc0):
    """Best expected cost over every node-feedback policy on the interpolated grid model.

    From node i under torque k the continuous next SOC s' is reached; the
    process then sits on the bracketing nodes with the linear-interpolation
    weights. Infeasible transitions cost INFEASIBLE_COST and absorb. Each
    policy is evaluated by propagating the node distribution forward, which
    shares no code with the backward sweep.
    """
    soc_nodes = np.asarray(soc_nodes, float)
    n, n_soc, n_tq = len(cycle), len(soc_nodes), len(torque_nodes)
    p_req = [pt.power_request(params, cycle.speed[t], cycle.accel[t]) for t in range(n)]

    def transition(t, s, k):
        tq = torque_nodes[k]
        _, _, fuel = pt.engine_operating_point(params.engine, tq)
        _, p_bat, _ = pt.split_power(params, p_req[t], tq)
        nxt = s + pt.soc_derivative(params, p_bat) * cycle.dt
        if nxt < params.soc_min - oracle.SOC_TOL or nxt > params.soc_max + oracle.SOC_TOL:
            return oracle.INFEASIBLE_COST, None
        c = min(max(nxt, 0.0), 1.0)
        cost = fuel * cycle.dt + params.lambda_soc * min(c - params.soc_ref, 0.0) ** 2 * cycle.dt
        return cost, weights(c)

    def weights(s):
        w = np.zeros(n_soc)
        if s <= soc_nodes[0]:
            w[0] = 1.0
        elif s >= soc_nodes[-1]:
            w[-1] = 1.0
        else:
            j = int(np.searchsorted(soc_nodes, s)) - 1
            f = (s - soc_nodes[j]) / (soc_nodes[j + 1] - soc_nodes[j])
            w[j], w[j + 1] = 1.0 - f, f
        return w

    # the grid value at soc0 is itself interpolated, so soc0 starts as a lottery too
    table = {(t, i, k): transition(t, soc_nodes[i], k)
             for t in range(n) for i in range(n_soc) for k in range(n_tq)}
    start = weights(soc0)
    best = np.inf
    for rule in itertools.product(range(n_tq), repeat=n * n_soc):
        total, dist = 0.0, start
        for t in range(n):
            nxt = np.zeros(n_soc)
            for i in range(n_soc):
                if dist[i] == 0.0:
                    continue
                c, w = table[(t, i, rule[t * n_soc + i])]
                total += dist[i] * c
                if w is not None:
                    nxt += dist[i] * w
            dist = nxt
        best = min(best, total)
    return best
