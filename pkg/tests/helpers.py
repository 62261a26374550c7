"""Independent oracles shared by the test modules.

Everything here recomputes quantities from first principles (explicit BFS,
exhaustive likelihood enumeration, symmetric-difference sums) so the tests
never reuse the code paths they are checking.
"""

from __future__ import annotations

import math
from collections import deque

import numpy as np

from quicksource import observe


def bfs_ball(kind, v, t):
    """Explicit breadth-first ball as a {vertex: distance} dict."""
    dist = {v: 0}
    queue = deque([v])
    while queue:
        w = queue.popleft()
        if dist[w] == t:
            continue
        for nb in kind.neighbors(w):
            if nb not in dist:
                dist[nb] = dist[w] + 1
                queue.append(nb)
    return dist


def bfs_sphere_sizes(kind, t_max):
    """|dN(s)| for s = 0..t_max counted from an explicit BFS ball."""
    dist = bfs_ball(kind, kind.origin, t_max)
    counts = [0] * (t_max + 1)
    for d in dist.values():
        counts[d] += 1
    return counts


def collect_rounds(trace, geometry, t_max):
    """All observation rounds 0..t_max as (vertex -> value) dicts."""
    rounds = []
    for t in range(t_max + 1):
        obs = observe(trace, geometry.region(t))
        rounds.append(dict(obs.pairs()))
    return rounds


def exhaustive_posterior(kind, cs, channel, rounds):
    """Posterior over candidates by brute-force likelihood enumeration.

    Works from raw per-vertex signal values and the channel's mass
    functions directly; never touches log_lr or the package posterior.
    """
    q0, q1 = channel.support_masses()
    loglik = np.zeros(cs.n)
    for i, u in enumerate(cs.vertices):
        total = 0.0
        for t, signals in enumerate(rounds):
            for w, y in signals.items():
                mass = q1[int(y)] if kind.distance(w, u) <= t else q0[int(y)]
                total += math.log(mass)
        loglik[i] = total
    loglik -= loglik.max()
    probs = np.exp(loglik)
    return probs / probs.sum()


def pairwise_z_oracle(kind, channel, rounds, v, u):
    """Z_vu from the symmetric-difference definition, straight off the
    observed signal values."""
    z = 0.0
    for t, signals in enumerate(rounds):
        ball_v = set(kind.enumerate_ball(v, t))
        ball_u = set(kind.enumerate_ball(u, t))
        for w in ball_v - ball_u:
            z += float(channel.log_lr(signals[w]))
        for w in ball_u - ball_v:
            z -= float(channel.log_lr(signals[w]))
    return z


def expected_distances_bruteforce(cs, weights):
    """O(n^2) pairwise-distance sweep."""
    d = cs.kind.distance
    return np.array(
        [sum(wi * d(u, w) for wi, w in zip(weights, cs.vertices)) for u in cs.vertices]
    )
