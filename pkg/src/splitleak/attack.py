"""Label inference from cut-layer gradients and smashed data.

The pipeline: L2-normalize gradient points (for unit vectors, squared
Euclidean distance is 2 - 2*cosine, so nearest-centroid clustering in
Euclidean space is cosine clustering), optionally PCA-reduce, then run
anchor-seeded K-means and read each cluster's label off its seed. Smashed
data is clustered raw, without normalization. Two analytic baselines cover
the output layer: the sign structure of per-sample logit gradients and the
row-sign structure of per-sample last-layer weight gradients.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .nn import require_finite


class AttackSource:
    GRADIENTS = "gradients"
    SMASHED = "smashed"

    @staticmethod
    def parse(name: str) -> str:
        name = name.strip().lower()
        if name not in (AttackSource.GRADIENTS, AttackSource.SMASHED):
            raise ValueError(f"unknown attack source {name!r}")
        return name


@dataclass
class AttackInput:
    """Label-free point set: one gradient or smashed vector per sample."""

    points: np.ndarray  # (n, d)
    source: str
    n_classes: int

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or len(self.points) == 0:
            raise ValueError(f"points must be a nonempty 2-D array, got {self.points.shape}")
        require_finite(self.points, "points")
        self.source = AttackSource.parse(self.source)
        if self.n_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.n_classes}")


@dataclass
class AnchorSet:
    """One known-label vector per class, used to seed and name the clusters."""

    vectors: dict[int, np.ndarray]

    def __post_init__(self):
        self.vectors = {int(k): np.asarray(v, dtype=np.float64)
                        for k, v in self.vectors.items()}
        lengths = {v.shape for v in self.vectors.values()}
        if len(lengths) > 1:
            raise ValueError(f"anchor vectors disagree on shape: {lengths}")

    def matrix(self, n_classes: int) -> np.ndarray:
        if sorted(self.vectors) != list(range(n_classes)):
            raise ValueError(
                f"need exactly one anchor per class 0..{n_classes - 1}, "
                f"got labels {sorted(self.vectors)}"
            )
        return np.stack([self.vectors[k] for k in range(n_classes)])


@dataclass
class ClusterAssignment:
    assignment: np.ndarray        # (n,) cluster ids
    centroids: np.ndarray         # (K, d)
    objective: float              # within-cluster sum of squared distances
    iterations: int
    objective_history: list[float] = field(default_factory=list)


@dataclass
class AttackReport:
    predicted: np.ndarray
    truth: np.ndarray
    accuracy: float
    confusion: np.ndarray         # (K, K), truth rows x predicted columns
    per_class_recall: np.ndarray
    iterations: int = 0
    flags: list[str] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_class_recall": [float(r) for r in self.per_class_recall],
            "iterations": self.iterations,
            "flags": list(self.flags),
        }


def cosine_similarity(x: np.ndarray, y: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    nx = np.linalg.norm(x)
    ny = np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        raise ValueError("cosine similarity is undefined for zero-norm input")
    return float(np.clip(x @ y / (nx * ny), -1.0, 1.0))


def normalize_l2(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scale each row to unit L2 norm; zero rows pass through and are flagged.

    Returns (normalized points, indices of zero rows).
    """
    points = np.asarray(points, dtype=np.float64)
    norms = np.linalg.norm(points, axis=1)
    zero_rows = np.flatnonzero(norms == 0.0)
    safe = np.where(norms == 0.0, 1.0, norms)
    return points / safe[:, None], zero_rows


def pca_reduce(points: np.ndarray, target_dim: int, tol: float = 1e-10,
               max_iter: int = 1000) -> np.ndarray:
    """Project centered points onto their top principal directions.

    Deterministic power iteration with deflation on the covariance matrix, one
    component at a time; each component's largest-magnitude coordinate is made
    positive. Raises on non-convergence rather than returning a partial answer.
    """
    points = np.asarray(points, dtype=np.float64)
    n, d = points.shape
    if not 1 <= target_dim <= min(n, d):
        raise ValueError(f"target_dim must be in [1, {min(n, d)}], got {target_dim}")
    centered = points - points.mean(axis=0)
    cov = centered.T @ centered / n
    components = np.empty((target_dim, d))
    for comp in range(target_dim):
        rng = np.random.default_rng(comp)
        v = rng.standard_normal(d)
        v /= np.linalg.norm(v)
        for _ in range(max_iter):
            w = cov @ v
            norm = np.linalg.norm(w)
            if norm < 1e-30:
                raise ValueError(
                    f"power iteration found no direction for component {comp}: "
                    f"data rank is below target_dim {target_dim}"
                )
            w /= norm
            if min(np.linalg.norm(w - v), np.linalg.norm(w + v)) < tol:
                v = w
                break
            v = w
        else:
            raise ValueError(f"power iteration did not converge for component {comp} "
                             f"within {max_iter} iterations")
        eigenvalue = v @ cov @ v
        peak = np.argmax(np.abs(v))
        if v[peak] < 0:
            v = -v
        components[comp] = v
        cov = cov - eigenvalue * np.outer(v, v)
    return centered @ components.T


def _squared_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    p2 = np.einsum("ij,ij->i", points, points)[:, None]
    c2 = np.einsum("ij,ij->i", centroids, centroids)[None, :]
    return np.maximum(p2 + c2 - 2.0 * points @ centroids.T, 0.0)


def kmeans(points: np.ndarray, n_clusters: int, init: np.ndarray,
           max_iter: int = 300, tol: float = 1e-8) -> ClusterAssignment:
    """Lloyd iterations from the given centroids.

    Assignment ties break toward the lowest cluster id (argmin order); a
    cluster left empty is re-seeded with the point farthest from its current
    centroid. Stops when the largest centroid displacement drops below ``tol``.
    """
    points = np.asarray(points, dtype=np.float64)
    if n_clusters < 2:
        raise ValueError(f"need at least 2 clusters, got {n_clusters}")
    if len(points) < n_clusters:
        raise ValueError(f"{n_clusters} clusters need at least that many points, "
                         f"got {len(points)}")
    init = np.asarray(init, dtype=np.float64)
    if init.shape != (n_clusters, points.shape[1]):
        raise ValueError(f"init must be ({n_clusters}, {points.shape[1]}), got {init.shape}")
    centroids = init.copy()
    assignment = np.zeros(len(points), dtype=np.int64)
    history: list[float] = []
    iterations = 0
    for _ in range(max_iter):
        iterations += 1
        d2 = _squared_distances(points, centroids)
        assignment = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(len(points)), assignment].sum()))
        new_centroids = centroids.copy()
        reseeded: set[int] = set()
        for j in range(n_clusters):
            members = assignment == j
            if members.any():
                new_centroids[j] = points[members].mean(axis=0)
            else:
                order = np.argsort(-d2[:, j])
                pick = next(int(i) for i in order if int(i) not in reseeded)
                reseeded.add(pick)
                new_centroids[j] = points[pick]
        shift = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1)))
        centroids = new_centroids
        if shift < tol:
            break
    d2 = _squared_distances(points, centroids)
    assignment = np.argmin(d2, axis=1)
    objective = float(d2[np.arange(len(points)), assignment].sum())
    return ClusterAssignment(assignment, centroids, objective, iterations, history)


def farthest_point_centroids(points: np.ndarray, n_clusters: int, seed: int = 0) -> np.ndarray:
    """Greedy farthest-point seeds: random first pick, then max-min distance."""
    points = np.asarray(points, dtype=np.float64)
    rng = np.random.default_rng(seed)
    first = int(rng.integers(len(points)))
    chosen = [first]
    min_d2 = _squared_distances(points, points[[first]])[:, 0]
    for _ in range(n_clusters - 1):
        nxt = int(np.argmax(min_d2))
        chosen.append(nxt)
        min_d2 = np.minimum(min_d2, _squared_distances(points, points[[nxt]])[:, 0])
    return points[chosen].copy()


def select_anchors(points: np.ndarray, labels: np.ndarray, n_classes: int,
                   seed: int = 0) -> tuple[AnchorSet, dict[int, int]]:
    """Pick one sample per class by first occurrence in a seeded shuffle.

    Simulates the adversary's single known-label sample per class. Returns the
    anchors and the point index each one came from (the anchors stay in the
    point set, as in the attack's collected dataset).
    """
    labels = np.asarray(labels, dtype=np.int64)
    order = np.random.default_rng(seed).permutation(len(labels))
    vectors: dict[int, np.ndarray] = {}
    indices: dict[int, int] = {}
    for i in order:
        label = int(labels[i])
        if label not in vectors:
            vectors[label] = points[i]
            indices[label] = int(i)
            if len(vectors) == n_classes:
                break
    if len(vectors) != n_classes:
        missing = sorted(set(range(n_classes)) - set(vectors))
        raise ValueError(f"classes {missing} have no samples to anchor")
    return AnchorSet(vectors), indices


def _greedy_mapping(landing: np.ndarray) -> np.ndarray:
    """Greedy-by-count bipartite matching of clusters (cols) to labels (rows)."""
    k = landing.shape[0]
    pairs = sorted(
        ((int(landing[l, c]), l, c) for l in range(k) for c in range(k)),
        key=lambda t: (-t[0], t[1], t[2]),
    )
    cluster_to_label = np.full(k, -1, dtype=np.int64)
    used_labels: set[int] = set()
    for count, label, cluster in pairs:
        if cluster_to_label[cluster] == -1 and label not in used_labels:
            cluster_to_label[cluster] = label
            used_labels.add(label)
    leftovers = iter(sorted(set(range(k)) - used_labels))
    for c in range(k):
        if cluster_to_label[c] == -1:
            cluster_to_label[c] = next(leftovers)
    return cluster_to_label


def run_clustering_attack(attack_input: AttackInput, anchors: AnchorSet | None = None,
                          class_prior=None, pca_dim: int | None = None, *,
                          truth: np.ndarray, seed: int = 0, max_iter: int = 300,
                          tol: float = 1e-8) -> AttackReport:
    """Cluster the collected points into one group per class and name the groups.

    Gradient points are L2-normalized first (smashed data is not); with
    anchors, K-means starts from the anchor vectors and cluster j inherits
    anchor j's label. Without anchors, seeding is farthest-point from a fixed
    RNG and clusters map to labels by matching sorted cluster sizes against a
    strictly ordered class prior. ``truth`` is used only to score the result.
    """
    k = attack_input.n_classes
    if (anchors is None) == (class_prior is None):
        raise ValueError("provide exactly one of anchors or class_prior")
    flags: list[str] = []
    points = attack_input.points
    anchor_matrix = anchors.matrix(k) if anchors is not None else None

    if attack_input.source == AttackSource.GRADIENTS:
        points, zero_rows = normalize_l2(points)
        if zero_rows.size:
            flags.append("zero-vectors")
        if anchor_matrix is not None:
            anchor_matrix, zero_anchors = normalize_l2(anchor_matrix)
            if zero_anchors.size and "zero-vectors" not in flags:
                flags.append("zero-vectors")

    if pca_dim is not None:
        if anchor_matrix is not None:
            stacked = pca_reduce(np.vstack([points, anchor_matrix]), pca_dim)
            points, anchor_matrix = stacked[:len(points)], stacked[len(points):]
        else:
            points = pca_reduce(points, pca_dim)

    if anchor_matrix is not None:
        result = kmeans(points, k, anchor_matrix, max_iter=max_iter, tol=tol)
        cluster_to_label = np.arange(k, dtype=np.int64)
        anchor_cluster = np.argmin(_squared_distances(anchor_matrix, result.centroids), axis=1)
        if np.any(anchor_cluster != np.arange(k)):
            flags.append("anchor drift")
            landing = np.zeros((k, k), dtype=np.int64)
            landing[np.arange(k), anchor_cluster] += 1
            cluster_to_label = _greedy_mapping(landing)
    else:
        prior = np.asarray(class_prior, dtype=np.float64)
        if prior.shape != (k,):
            raise ValueError(f"class_prior must have {k} entries, got {prior.shape}")
        if len(np.unique(prior)) != k:
            raise ValueError("anchor-free mode requires strictly distinct class "
                             "frequencies; the given prior has ties")
        result = kmeans(points, k, farthest_point_centroids(points, k, seed),
                        max_iter=max_iter, tol=tol)
        sizes = np.bincount(result.assignment, minlength=k)
        clusters_by_size = np.lexsort((np.arange(k), -sizes))
        classes_by_prior = np.lexsort((np.arange(k), -prior))
        cluster_to_label = np.empty(k, dtype=np.int64)
        cluster_to_label[clusters_by_size] = classes_by_prior

    if len(np.unique(result.assignment)) == 1:
        flags.append("degenerate")

    predicted = cluster_to_label[result.assignment]
    report = score(predicted, truth, n_classes=k)
    report.iterations = result.iterations
    report.flags = flags
    return report


def logit_sign_attack(logit_gradients: np.ndarray) -> np.ndarray:
    """Label = index of the single negative entry of each per-sample logit gradient.

    An undefended logit gradient is probs - onehot, so it has exactly one
    negative entry, at the true label. Anything else means the input is not an
    undefended logit gradient, which is an error here.
    """
    grads = np.asarray(logit_gradients, dtype=np.float64)
    if grads.ndim != 2:
        raise ValueError(f"expected (n, K) logit gradients, got shape {grads.shape}")
    negatives = (grads < 0).sum(axis=1)
    bad = np.flatnonzero(negatives != 1)
    if bad.size:
        i = int(bad[0])
        raise ValueError(
            f"sample {i} has {int(negatives[i])} negative entries, expected exactly "
            f"one: not an undefended logit gradient"
        )
    return np.argmin(grads, axis=1)


def weight_sign_attack(weight_gradient: np.ndarray) -> int:
    """Label = the unique row of a per-sample last-layer weight gradient whose
    dot product with every other row is <= 0."""
    grad = np.asarray(weight_gradient, dtype=np.float64)
    if grad.ndim != 2:
        raise ValueError(f"expected a (K, d) per-sample weight gradient, got {grad.shape}")
    norms = np.linalg.norm(grad, axis=1)
    if np.any(norms == 0.0):
        raise ValueError(f"rows {np.flatnonzero(norms == 0.0).tolist()} are zero; "
                         f"cannot test sign structure")
    products = grad @ grad.T
    off_diag = products - np.diag(np.diag(products))
    qualifies = np.flatnonzero((off_diag <= 0).all(axis=1))
    if qualifies.size == 0:
        raise ValueError("no qualifying row: no row is anti-aligned with all others")
    if qualifies.size > 1:
        raise ValueError(f"multiple qualifying rows {qualifies.tolist()}")
    return int(qualifies[0])


def score(predicted: np.ndarray, truth: np.ndarray, n_classes: int | None = None) -> AttackReport:
    """Accuracy, confusion matrix and per-class recall of a label prediction."""
    predicted = np.asarray(predicted, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if predicted.shape != truth.shape:
        raise ValueError(f"length mismatch: {predicted.shape} vs {truth.shape}")
    if n_classes is None:
        n_classes = int(max(predicted.max(), truth.max())) + 1
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (truth, predicted), 1)
    accuracy = float(np.trace(confusion) / len(truth))
    row_totals = confusion.sum(axis=1)
    recall = np.divide(np.diag(confusion), row_totals,
                       out=np.zeros(n_classes, dtype=np.float64),
                       where=row_totals > 0)
    return AttackReport(predicted, truth, accuracy, confusion, recall)


def write_report_csv(path, report: AttackReport, sample_ids=None) -> None:
    """Per-sample rows: sample_id, predicted, true."""
    if sample_ids is None:
        sample_ids = np.arange(len(report.predicted))
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sample_id", "predicted", "true"])
        for sid, pred, true in zip(sample_ids, report.predicted, report.truth):
            writer.writerow([int(sid), int(pred), int(true)])
