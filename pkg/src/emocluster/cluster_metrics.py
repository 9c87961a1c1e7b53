"""Agreement and cohesion metrics between intra-speaker clusters and emotion labels.

NMI, ARI, and purity compare the cluster assignment of each utterance with
its emotion label via the contingency table; silhouette measures geometric
cohesion/separation of the clusters themselves.  All four are reported per
speaker and averaged uniformly over speakers.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .clustering import ClusteringRun
from .corpus import Corpus

NMI_NORMALIZERS = ("arithmetic", "min", "max", "geometric")

METRIC_NAMES = ("nmi", "ari", "purity", "silhouette")


@dataclass
class ClusterMetricsReport:
    per_speaker: dict[str, dict[str, float | None]]
    averages: dict[str, float]


def _check_pair(cluster_labels, true_labels):
    if len(cluster_labels) != len(true_labels):
        raise ValueError(
            f"length mismatch: {len(cluster_labels)} cluster labels vs {len(true_labels)} true labels"
        )
    if len(cluster_labels) < 1:
        raise ValueError("empty partition pair")


def contingency_table(cluster_labels, true_labels) -> np.ndarray:
    """Counts matrix, rows = clusters, cols = true labels (sorted value order)."""
    _check_pair(cluster_labels, true_labels)
    rows = {v: i for i, v in enumerate(sorted(set(cluster_labels), key=str))}
    cols = {v: i for i, v in enumerate(sorted(set(true_labels), key=str))}
    table = np.zeros((len(rows), len(cols)), dtype=np.int64)
    for c, t in zip(cluster_labels, true_labels):
        table[rows[c], cols[t]] += 1
    return table


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(cluster_labels, true_labels, normalizer: str = "arithmetic") -> float:
    """Normalized mutual information in [0, 1].

    Single-class convention: 1 if both partitions are single-class, 0 if
    only one of them is (avoids 0/0 in the normalizer).
    """
    if normalizer not in NMI_NORMALIZERS:
        raise ValueError(f"unknown normalizer {normalizer!r}; choose from {NMI_NORMALIZERS}")
    table = contingency_table(cluster_labels, true_labels)
    n = int(table.sum())
    a = table.sum(axis=1)
    b = table.sum(axis=0)
    h_c = _entropy(a, n)
    h_t = _entropy(b, n)
    if h_c == 0.0 or h_t == 0.0:
        return 1.0 if h_c == 0.0 and h_t == 0.0 else 0.0

    mi = 0.0
    for i in range(table.shape[0]):
        for j in range(table.shape[1]):
            nij = table[i, j]
            if nij > 0:
                mi += (nij / n) * np.log(nij * n / (a[i] * b[j]))
    if normalizer == "arithmetic":
        denom = 0.5 * (h_c + h_t)
    elif normalizer == "min":
        denom = min(h_c, h_t)
    elif normalizer == "max":
        denom = max(h_c, h_t)
    else:
        denom = float(np.sqrt(h_c * h_t))
    return float(min(1.0, max(0.0, mi / denom)))


def _comb2(m: int) -> int:
    return m * (m - 1) // 2


def ari(cluster_labels, true_labels) -> float:
    """Adjusted Rand index via the pair-counting contingency formula."""
    _check_pair(cluster_labels, true_labels)
    if len(cluster_labels) < 2:
        raise ValueError("ari needs at least 2 items")
    table = contingency_table(cluster_labels, true_labels)
    n = int(table.sum())
    sum_ij = sum(_comb2(int(v)) for v in table.flat)
    sum_a = sum(_comb2(int(v)) for v in table.sum(axis=1))
    sum_b = sum(_comb2(int(v)) for v in table.sum(axis=0))
    total = _comb2(n)
    expected = sum_a * sum_b / total
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        # both partitions trivial (one class, or all singletons): perfect agreement
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))


def purity(cluster_labels, true_labels) -> float:
    """Fraction of items in their cluster's majority emotion."""
    table = contingency_table(cluster_labels, true_labels)
    return float(table.max(axis=1).sum() / table.sum())


def silhouette(points, cluster_labels) -> float:
    """Mean silhouette with Euclidean distances.

    Points in singleton clusters score 0, as do points where both the
    intra- and nearest-other-cluster mean distances vanish.
    """
    points = np.asarray(points, dtype=np.float64)
    labels = list(cluster_labels)
    if len(labels) != points.shape[0]:
        raise ValueError("points and cluster_labels are misaligned")
    uniq = sorted(set(labels), key=str)
    if len(uniq) < 2:
        raise ValueError("silhouette undefined: fewer than 2 clusters")

    diff = points[:, None, :] - points[None, :, :]
    dists = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
    members = {c: [i for i, l in enumerate(labels) if l == c] for c in uniq}

    scores = np.zeros(len(labels))
    for i, lab in enumerate(labels):
        own = members[lab]
        if len(own) == 1:
            scores[i] = 0.0
            continue
        a = dists[i, own].sum() / (len(own) - 1)
        b = min(dists[i, members[c]].mean() for c in uniq if c != lab)
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(scores.mean())


def evaluate_run(run: ClusteringRun, corpus: Corpus) -> ClusterMetricsReport:
    """All four metrics per speaker plus unweighted speaker averages.

    Utterances without an emotion label are excluded with a warning; a
    speaker left with fewer than 2 labeled utterances is dropped from the
    averages.  Silhouette is omitted for speakers whose labeled subset
    covers fewer than 2 clusters.
    """
    by_id = corpus.record_by_id()
    per_speaker: dict[str, dict[str, float | None]] = {}
    for spk in sorted(run.per_speaker):
        sc = run.per_speaker[spk]
        clusters, emotions, vecs = [], [], []
        for utt_id in sorted(sc.assignments):
            rec = by_id.get(utt_id)
            if rec is None:
                raise ValueError(f"clustered utterance {utt_id!r} missing from corpus")
            if rec.emotion is None:
                warnings.warn(f"utterance {utt_id!r} has no emotion label; excluded", stacklevel=2)
                continue
            clusters.append(sc.assignments[utt_id])
            emotions.append(rec.emotion)
            vecs.append(rec.vec)
        if len(clusters) < 2:
            warnings.warn(f"speaker {spk!r} has < 2 labeled utterances; dropped", stacklevel=2)
            continue
        entry: dict[str, float | None] = {
            "nmi": nmi(clusters, emotions),
            "ari": ari(clusters, emotions),
            "purity": purity(clusters, emotions),
        }
        if len(set(clusters)) >= 2:
            entry["silhouette"] = silhouette(np.stack(vecs), clusters)
        else:
            warnings.warn(f"speaker {spk!r}: single cluster in labeled subset; silhouette omitted", stacklevel=2)
            entry["silhouette"] = None
        per_speaker[spk] = entry

    averages = {}
    for name in METRIC_NAMES:
        values = [m[name] for m in per_speaker.values() if m[name] is not None]
        averages[name] = float(np.mean(values)) if values else float("nan")
    return ClusterMetricsReport(per_speaker=per_speaker, averages=averages)


def report_to_dict(report: ClusterMetricsReport) -> dict:
    return {
        "per_speaker": {
            spk: {k: (None if v is None else float(v)) for k, v in metrics.items()}
            for spk, metrics in report.per_speaker.items()
        },
        "averages": {k: float(v) for k, v in report.averages.items()},
    }


def report_to_table(report: ClusterMetricsReport) -> str:
    """Aligned plain-text table, columns NMI / ARI / Purity / Silhouette."""
    header = ["speaker", "NMI", "ARI", "Purity", "Silhouette"]
    rows = []
    for spk in sorted(report.per_speaker):
        m = report.per_speaker[spk]
        rows.append(
            [spk]
            + [("-" if m[name] is None else f"{m[name]:.4f}") for name in METRIC_NAMES]
        )
    rows.append(["average"] + [f"{report.averages[name]:.4f}" for name in METRIC_NAMES])
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for row in rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))
    return "\n".join(lines) + "\n"
