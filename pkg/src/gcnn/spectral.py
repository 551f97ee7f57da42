"""Normalized-cut spectral clustering of time series.

Pipeline: absolute-correlation similarity graph -> Laplacians -> dense
symmetric eigendecomposition (cyclic Jacobi) -> k-means on the embedding
rows.  Includes exhaustive small-graph oracles used by the test suite.

Cut/volume arithmetic uses correctly-rounded summation (math.fsum), so
the reported values are independent of iteration order: degrees are
correctly-rounded row sums, volumes are correctly-rounded sums of
degrees, links are correctly-rounded sums of boundary weights, and the
final Ncut is the correctly-rounded sum of the per-group ratios halved.
Any evaluator following these definitions produces bit-identical values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .errors import ConvergenceError, DataError, NumericalError, ShapeError

__all__ = [
    "SimilarityGraph",
    "SpectralEmbedding",
    "GroupAssignment",
    "BruteForceResult",
    "similarity_from_series",
    "cut_value",
    "ncut_value",
    "laplacians",
    "sym_eig",
    "kmeans",
    "spectral_embedding",
    "spectral_cluster",
    "brute_force_min_ncut",
    "assignment_table",
    "embedding_table",
    "DENSE_EIG_LIMIT",
]

DENSE_EIG_LIMIT = 2048


@dataclass
class SimilarityGraph:
    """Symmetric nonnegative weights with a zero diagonal.

    ``degrees[i]`` is the correctly-rounded sum of row i.
    """

    weights: np.ndarray
    names: list[str] | None = None
    degrees: np.ndarray = field(init=False)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ShapeError(f"similarity matrix must be square, got {w.shape}")
        if np.max(np.abs(w - w.T), initial=0.0) > 1e-12:
            raise ShapeError("similarity matrix is not symmetric within 1e-12")
        if np.any(w < 0.0):
            raise ShapeError("similarity weights must be nonnegative")
        if np.any(np.diag(w) != 0.0):
            raise ShapeError("similarity diagonal must be zero")
        if self.names is not None and len(self.names) != w.shape[0]:
            raise ShapeError("name count does not match matrix size")
        self.weights = w
        self.degrees = np.array([math.fsum(row) for row in w])

    @property
    def n(self) -> int:
        return self.weights.shape[0]


@dataclass
class SpectralEmbedding:
    """Rows are vertex coordinates in the random-walk eigenbasis."""

    vectors: np.ndarray  # (N, K)
    eigenvalues: np.ndarray  # (K,) ascending

    def __post_init__(self):
        if np.any(np.diff(self.eigenvalues) < 0):
            raise NumericalError("embedding eigenvalues must be nondecreasing")
        if self.eigenvalues[0] < -1e-10:
            raise NumericalError(f"leading eigenvalue {self.eigenvalues[0]} below tolerance")


@dataclass
class GroupAssignment:
    """1-based group label per series."""

    labels: list[int]
    k: int

    def __post_init__(self):
        self.labels = [int(x) for x in self.labels]
        if any(not 1 <= x <= self.k for x in self.labels):
            raise ShapeError(f"labels must lie in 1..{self.k}")

    def member_lists(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.k)]
        for i, label in enumerate(self.labels):
            out[label - 1].append(i)
        return out

    def group_sizes(self) -> list[int]:
        return [len(m) for m in self.member_lists()]


def similarity_from_series(series: np.ndarray, names: Sequence[str] | None = None) -> SimilarityGraph:
    """Absolute Pearson correlation between rows of an (N, T) matrix.

    Off-diagonal w_ij = |corr(x_i, x_j)|, diagonal zero.  Constant series
    make correlations undefined and are rejected by name.
    """
    series = np.asarray(series, dtype=np.float64)
    if series.ndim != 2 or series.shape[0] < 2 or series.shape[1] < 2:
        raise ShapeError(f"need at least 2 series of at least 2 points, got {series.shape}")
    names = list(names) if names is not None else None
    stds = series.std(axis=1)
    for i, s in enumerate(stds):
        if s == 0.0:
            label = names[i] if names else f"series {i}"
            raise DataError(f"zero-variance series cannot be correlated: {label}")
    corr = np.corrcoef(series)
    w = np.abs(corr)
    # clamp tiny excursions above 1 from rounding, then force symmetry
    w = np.clip(w, 0.0, 1.0)
    w = (w + w.T) / 2.0
    np.fill_diagonal(w, 0.0)
    return SimilarityGraph(w, names)


def _check_assignment(g: SimilarityGraph, assignment: GroupAssignment) -> None:
    if len(assignment.labels) != g.n:
        raise ShapeError(f"assignment covers {len(assignment.labels)} vertices, graph has {g.n}")


def cut_value(g: SimilarityGraph, assignment: GroupAssignment) -> float:
    """Half the total boundary weight summed over groups.

    cut = 1/2 * sum_k link(A_k, complement of A_k), where link adds every
    w_ij with i inside and j outside the group.
    """
    _check_assignment(g, assignment)
    w = g.weights
    labels = np.asarray(assignment.labels)
    terms = []
    for k in range(1, assignment.k + 1):
        inside = np.flatnonzero(labels == k)
        outside = np.flatnonzero(labels != k)
        terms.extend(w[i, j] for i in inside for j in outside)
    return 0.5 * math.fsum(terms)


def ncut_value(g: SimilarityGraph, assignment: GroupAssignment) -> float:
    """Normalized cut: 1/2 * sum_k link(A_k, outside) / vol(A_k)."""
    _check_assignment(g, assignment)
    w = g.weights
    labels = np.asarray(assignment.labels)
    ratios = []
    for k in range(1, assignment.k + 1):
        inside = np.flatnonzero(labels == k)
        outside = np.flatnonzero(labels != k)
        vol = math.fsum(g.degrees[i] for i in inside)
        if vol <= 0.0:
            raise NumericalError(f"group {k} has zero volume")
        link = math.fsum(w[i, j] for i in inside for j in outside)
        ratios.append(link / vol)
    return 0.5 * math.fsum(ratios)


def laplacians(g: SimilarityGraph) -> tuple[np.ndarray, np.ndarray]:
    """Unnormalized and symmetric-normalized Laplacians (L, L_sym)."""
    d = g.degrees
    if np.any(d <= 0.0):
        i = int(np.argmin(d))
        raise NumericalError(f"vertex {i} is isolated (zero degree); cannot normalize")
    lap = np.diag(d) - g.weights
    inv_sqrt = 1.0 / np.sqrt(d)
    l_sym = inv_sqrt[:, None] * lap * inv_sqrt[None, :]
    return lap, l_sym


def sym_eig(
    a: np.ndarray, max_sweeps: int = 100, dense_limit: int = DENSE_EIG_LIMIT
) -> tuple[np.ndarray, np.ndarray]:
    """All eigenpairs of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues ascending, eigenvectors as columns).  Sign
    convention: each eigenvector's largest-magnitude component is
    positive (first occurrence on magnitude ties).
    """
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[0]
    if a.ndim != 2 or a.shape[1] != n:
        raise ShapeError(f"eigensolver needs a square matrix, got {a.shape}")
    if n > dense_limit:
        raise ShapeError(f"matrix size {n} exceeds the dense eigensolver limit {dense_limit}")
    if np.max(np.abs(a - a.T), initial=0.0) > 1e-10:
        raise ValueError("eigensolver input is not symmetric within 1e-10")

    b = a.copy()
    v = np.eye(n)
    scale = max(1.0, float(np.sqrt((a * a).sum())))
    tol = 1e-14 * scale

    def off_norm() -> float:
        off = b - np.diag(np.diag(b))
        return float(np.sqrt((off * off).sum()))

    converged = n == 1 or off_norm() <= tol
    for _ in range(max_sweeps):
        if converged:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = b[p, q]
                if apq == 0.0:
                    continue
                theta = (b[q, q] - b[p, p]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + math.sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + math.sqrt(theta * theta + 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                bp, bq = b[:, p].copy(), b[:, q].copy()
                b[:, p] = c * bp - s * bq
                b[:, q] = s * bp + c * bq
                bp, bq = b[p, :].copy(), b[q, :].copy()
                b[p, :] = c * bp - s * bq
                b[q, :] = s * bp + c * bq
                # rotated elements are zero by construction; pin them to
                # kill rounding residue that stalls the sweep count
                b[p, q] = 0.0
                b[q, p] = 0.0
                vp, vq = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        converged = off_norm() <= tol
    if not converged:
        raise ConvergenceError(f"Jacobi eigensolver did not converge in {max_sweeps} sweeps")

    eigenvalues = np.diag(b).copy()
    order = np.argsort(eigenvalues, kind="stable")
    eigenvalues = eigenvalues[order]
    vectors = v[:, order]
    for j in range(n):
        lead = int(np.argmax(np.abs(vectors[:, j])))
        if vectors[lead, j] < 0.0:
            vectors[:, j] = -vectors[:, j]
    return eigenvalues, vectors


def kmeans(points: np.ndarray, k: int, seed: int = 0, max_iter: int = 300) -> GroupAssignment:
    """Lloyd's algorithm with greedy farthest-point seeding.

    The first center is drawn from the seeded generator; each further
    center is the point farthest from its nearest chosen center (lowest
    index on ties).  Empty clusters are repaired by donating the point
    farthest from its own center.  Deterministic under a fixed seed.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ShapeError(f"kmeans needs an (N, D) matrix, got {points.shape}")
    n = points.shape[0]
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if n < k:
        raise ValueError(f"cannot form {k} clusters from {n} points")

    rng = np.random.default_rng(seed)
    centers = np.empty((k, points.shape[1]))
    centers[0] = points[int(rng.integers(n))]
    for c in range(1, k):
        d2 = np.min(((points[:, None, :] - centers[None, :c, :]) ** 2).sum(axis=2), axis=1)
        centers[c] = points[int(np.argmax(d2))]

    labels = np.zeros(n, dtype=int)
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_labels = np.argmin(d2, axis=1)
        for c in range(k):
            if not np.any(new_labels == c):
                # donate the worst-fitting point from a donor with spares
                dist_own = d2[np.arange(n), new_labels]
                counts = np.bincount(new_labels, minlength=k)
                eligible = counts[new_labels] > 1
                dist_own = np.where(eligible, dist_own, -np.inf)
                donor = int(np.argmax(dist_own))
                new_labels[donor] = c
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(k):
            centers[c] = points[labels == c].mean(axis=0)
    return GroupAssignment([int(x) + 1 for x in labels], k)


def spectral_embedding(g: SimilarityGraph, k: int) -> SpectralEmbedding:
    """K smallest random-walk Laplacian eigenpairs via the symmetric form.

    Solves L_sym and maps each eigenvector v to D^{-1/2} v, which turns
    the pairs into solutions of L u = lambda D u.
    """
    if not 1 <= k <= g.n:
        raise ShapeError(f"need 1 <= K <= {g.n}, got {k}")
    _, l_sym = laplacians(g)
    eigenvalues, vectors = sym_eig(l_sym)
    inv_sqrt = 1.0 / np.sqrt(g.degrees)
    coords = inv_sqrt[:, None] * vectors[:, :k]
    return SpectralEmbedding(coords, eigenvalues[:k])


def spectral_cluster(g: SimilarityGraph, k: int, seed: int = 0) -> GroupAssignment:
    """Normalized-cut clustering: embed, then k-means the vertex rows."""
    if not 2 <= k <= g.n:
        raise ShapeError(f"need 2 <= K <= {g.n}, got {k}")
    embedding = spectral_embedding(g, k)
    return kmeans(embedding.vectors, k, seed=seed)


@dataclass
class BruteForceResult:
    assignment: GroupAssignment
    value: float


def _partitions_into_k(n: int, k: int) -> Iterator[list[int]]:
    """Canonical labelings (restricted growth strings) using all k labels."""
    labels = [0] * n

    def rec(i: int, used: int):
        if i == n:
            if used == k:
                yield labels.copy()
            return
        # prune: remaining slots must be able to introduce the missing labels
        if used + (n - i) < k:
            return
        for lab in range(min(used + 1, k)):
            labels[i] = lab
            yield from rec(i + 1, max(used, lab + 1))

    yield from rec(0, 0)


def brute_force_min_ncut(g: SimilarityGraph, k: int) -> BruteForceResult:
    """Exact minimum Ncut by exhaustive enumeration (test oracle, N <= 10)."""
    if g.n > 10:
        raise ShapeError(f"brute force enumeration capped at 10 vertices, got {g.n}")
    if not 1 <= k <= g.n:
        raise ShapeError(f"need 1 <= K <= {g.n}, got {k}")
    best: BruteForceResult | None = None
    for rgs in _partitions_into_k(g.n, k):
        assignment = GroupAssignment([lab + 1 for lab in rgs], k)
        value = ncut_value(g, assignment)
        if best is None or value < best.value:
            best = BruteForceResult(assignment, value)
    assert best is not None
    return best


def assignment_table(assignment: GroupAssignment, names: Sequence[str] | None = None) -> str:
    """Render `series_name,group_id` lines (header included)."""
    if names is None:
        names = [f"series{i}" for i in range(len(assignment.labels))]
    if len(names) != len(assignment.labels):
        raise ShapeError("name count does not match assignment length")
    lines = ["series_name,group_id"]
    lines.extend(f"{name},{label}" for name, label in zip(names, assignment.labels))
    return "\n".join(lines) + "\n"


def embedding_table(embedding: SpectralEmbedding, names: Sequence[str] | None = None) -> str:
    """Render embedding coordinates as CSV (header included)."""
    n, k = embedding.vectors.shape
    if names is None:
        names = [f"series{i}" for i in range(n)]
    if len(names) != n:
        raise ShapeError("name count does not match embedding size")
    lines = ["series_name," + ",".join(f"v{j}" for j in range(k))]
    for i, name in enumerate(names):
        coords = ",".join(repr(float(x)) for x in embedding.vectors[i])
        lines.append(f"{name},{coords}")
    return "\n".join(lines) + "\n"
