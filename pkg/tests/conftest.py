"""Shared test helpers.

``brute_force_run`` is a from-scratch synchronous executor kept deliberately
separate from the packaged reference runner so the two can cross-check each
other. The builders below make small random-but-seeded fixtures.
"""
import random

from dynsync.tvg import edge


def brute_force_run(algo, edge_sets, n, inputs=None):
    """Plain dict-based synchronous execution; result[i][u] is u's state
    after step i."""
    states = {u: algo.init(u, None if inputs is None else inputs[u]) for u in range(n)}
    out = []
    for edges in edge_sets:
        touching = {u: [] for u in range(n)}
        for a, b in edges:
            touching[a].append(b)
            touching[b].append(a)
        states = {
            u: algo.step(
                states[u],
                sorted((states[v] for v in touching[u]), key=algo.serialize),
            )
            for u in range(n)
        }
        out.append(dict(states))
    return out


def random_edge_sets(rng: random.Random, n: int, delta: int, k: int, p: float = 0.4):
    """k random edge sets over n nodes respecting the degree bound."""
    sets = []
    for _ in range(k):
        chosen = set()
        degree = [0] * n
        pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
        rng.shuffle(pairs)
        for u, v in pairs:
            if degree[u] < delta and degree[v] < delta and rng.random() < p:
                chosen.add(edge(u, v))
                degree[u] += 1
                degree[v] += 1
        sets.append(frozenset(chosen))
    return sets
