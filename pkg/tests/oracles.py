"""Independent brute-force reference implementations used as test oracles.

Everything here is written from first principles (explicit loops, pair
enumeration, direct definitions) and deliberately shares no code with the
package under test.
"""

import math
from collections import Counter
from itertools import combinations

import numpy as np


def brute_contingency(clusters, labels):
    counts = Counter(zip(clusters, labels))
    rows = sorted({c for c, _ in counts}, key=str)
    cols = sorted({l for _, l in counts}, key=str)
    return rows, cols, counts


def brute_nmi(clusters, labels, normalizer="arithmetic"):
    n = len(clusters)
    rows, cols, counts = brute_contingency(clusters, labels)
    row_tot = Counter(clusters)
    col_tot = Counter(labels)

    def entropy(totals):
        h = 0.0
        for v in totals.values():
            p = v / n
            h -= p * math.log(p)
        return h

    h_c = entropy(row_tot)
    h_t = entropy(col_tot)
    if h_c == 0.0 or h_t == 0.0:
        return 1.0 if h_c == h_t == 0.0 else 0.0
    mi = 0.0
    for r in rows:
        for c in cols:
            nij = counts.get((r, c), 0)
            if nij:
                mi += (nij / n) * math.log(nij * n / (row_tot[r] * col_tot[c]))
    if normalizer == "arithmetic":
        denom = (h_c + h_t) / 2.0
    elif normalizer == "min":
        denom = min(h_c, h_t)
    elif normalizer == "max":
        denom = max(h_c, h_t)
    else:
        denom = math.sqrt(h_c * h_t)
    return min(1.0, max(0.0, mi / denom))


def brute_ari(clusters, labels):
    """ARI via exhaustive enumeration of all item pairs."""
    n = len(clusters)
    a = b = c = d = 0
    for i, j in combinations(range(n), 2):
        same_cluster = clusters[i] == clusters[j]
        same_label = labels[i] == labels[j]
        if same_cluster and same_label:
            a += 1
        elif same_cluster:
            b += 1
        elif same_label:
            c += 1
        else:
            d += 1
    denom = (a + b) * (b + d) + (a + c) * (c + d)
    if denom == 0:
        return 1.0
    return 2.0 * (a * d - b * c) / denom


def brute_purity(clusters, labels):
    per_cluster = {}
    for cl, lab in zip(clusters, labels):
        per_cluster.setdefault(cl, []).append(lab)
    return sum(Counter(v).most_common(1)[0][1] for v in per_cluster.values()) / len(clusters)


def brute_silhouette(points, clusters):
    """O(n^2) silhouette with explicit loops and math.dist."""
    points = [list(map(float, p)) for p in points]
    n = len(points)
    uniq = sorted(set(clusters), key=str)
    members = {u: [i for i in range(n) if clusters[i] == u] for u in uniq}
    total = 0.0
    for i in range(n):
        own = members[clusters[i]]
        if len(own) == 1:
            continue
        a = sum(math.dist(points[i], points[j]) for j in own if j != i) / (len(own) - 1)
        b = min(
            sum(math.dist(points[i], points[j]) for j in members[u]) / len(members[u])
            for u in uniq
            if u != clusters[i]
        )
        if max(a, b) > 0.0:
            total += (b - a) / max(a, b)
    return total / n


def enumerate_contingency_tables(n, max_rows=3, max_cols=3):
    """All nonnegative integer tables (as row tuples) summing to n.

    NMI/ARI/purity depend only on this table, so enumerating tables covers
    every labeled partition pair up to item order and relabeling.
    """
    cells = max_rows * max_cols

    def fill(remaining, cells_left):
        if cells_left == 1:
            yield (remaining,)
            return
        for v in range(remaining + 1):
            for rest in fill(remaining - v, cells_left - 1):
                yield (v,) + rest

    for flat in fill(n, cells):
        yield tuple(flat[i * max_cols : (i + 1) * max_cols] for i in range(max_rows))


def table_to_pair(table):
    """Expand a contingency table into explicit (clusters, labels) lists."""
    clusters, labels = [], []
    for r, row in enumerate(table):
        for c, count in enumerate(row):
            clusters.extend([r] * count)
            labels.extend([c] * count)
    return clusters, labels


def longdouble_ntxent(sim_pos, sim_negs, tau, include_positive):
    """Extended-precision scalar evaluation of the contrastive loss."""
    ld = np.longdouble
    sp = ld(sim_pos) / ld(tau)
    terms = [ld(s) / ld(tau) for s in sim_negs]
    if include_positive:
        terms = terms + [sp]
    denom = sum(np.exp(t) for t in terms)
    return float(-(sp - np.log(denom)))
