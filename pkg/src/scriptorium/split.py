"""Stratified test-set construction.

Single-linkage agglomerative clustering of per-image feature vectors under
cosine distance, stopped at K clusters; one medoid per cluster becomes the
test set. Merge order is part of the contract: ties resolve toward the
cluster pair with the smaller (first, then second) minimum image id, and
the merge log records every step for audit.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from scriptorium import kernels
from scriptorium.errors import ParseError, ValidationError


@dataclass(frozen=True)
class FeatureVector:
    image_id: int
    values: tuple[float, ...]

    def __post_init__(self):
        if not self.values:
            raise ValidationError(f"feature for image {self.image_id} is empty")
        if not all(math.isfinite(v) for v in self.values):
            raise ValidationError(f"feature for image {self.image_id} has non-finite values")
        if not any(v != 0.0 for v in self.values):
            raise ValidationError(f"feature for image {self.image_id} has zero norm")


@dataclass(frozen=True)
class MergeStep:
    """One agglomeration: clusters named by their minimum image id."""

    first: int
    second: int
    distance: float


@dataclass(frozen=True)
class SplitResult:
    test_ids: frozenset[int]
    train_ids: frozenset[int]
    cluster_assignment: dict[int, int]
    merge_log: tuple[MergeStep, ...] = ()

    def __post_init__(self):
        if self.test_ids & self.train_ids:
            raise ValidationError("test and train sets overlap")


def cosine_distance(u: FeatureVector, v: FeatureVector) -> float:
    """1 - cosine similarity, in [0, 2]."""
    if len(u.values) != len(v.values):
        raise ValidationError(
            f"feature dimension mismatch: {len(u.values)} vs {len(v.values)}"
        )
    a = np.asarray(u.values, dtype=np.float64)
    b = np.asarray(v.values, dtype=np.float64)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValidationError("cosine distance undefined for zero-norm vectors")
    return 1.0 - float(np.dot(a, b)) / (na * nb)


def _feature_matrix(features: list[FeatureVector]) -> tuple[list[int], np.ndarray]:
    if not features:
        raise ValidationError("no feature vectors given")
    dims = {len(f.values) for f in features}
    if len(dims) != 1:
        raise ValidationError(f"inconsistent feature dimensions: {sorted(dims)}")
    ids = [f.image_id for f in features]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate image ids in feature set")
    ordered = sorted(features, key=lambda f: f.image_id)
    x = np.array([f.values for f in ordered], dtype=np.float64)
    return [f.image_id for f in ordered], x


def cluster_with_log(
    features: list[FeatureVector], k: int
) -> tuple[dict[int, int], tuple[MergeStep, ...]]:
    """Single-linkage agglomeration down to k clusters, plus the merge log.

    Cluster indices are renumbered 0..k-1 by smallest contained image id.
    """
    ids, x = _feature_matrix(features)
    n = len(ids)
    if not 1 <= k <= n:
        raise ValidationError(f"cluster count {k} outside 1..{n}")

    work = kernels.pairwise_cosine(x).copy()
    np.fill_diagonal(work, np.inf)
    alive = np.ones(n, dtype=bool)
    reps = list(ids)  # min image id per slot
    members: dict[int, list[int]] = {i: [ids[i]] for i in range(n)}

    log: list[MergeStep] = []
    for _ in range(n - k):
        m = work.min()
        ti, tj = np.nonzero(work == m)
        # canonical pair: (slot of smaller rep, slot of larger rep)
        best: tuple[int, int] | None = None
        best_key: tuple[int, int] | None = None
        for a, b in zip(ti.tolist(), tj.tolist()):
            if a >= b:
                continue
            lo, hi = (a, b) if reps[a] < reps[b] else (b, a)
            key = (reps[lo], reps[hi])
            if best_key is None or key < best_key:
                best_key = key
                best = (lo, hi)
        assert best is not None
        lo, hi = best
        log.append(MergeStep(first=reps[lo], second=reps[hi], distance=float(m)))
        np.minimum(work[lo], work[hi], out=work[lo])
        work[:, lo] = work[lo]
        work[lo, lo] = np.inf
        work[hi, :] = np.inf
        work[:, hi] = np.inf
        alive[hi] = False
        members[lo].extend(members.pop(hi))

    slots = sorted((reps[i], i) for i in range(n) if alive[i])
    assignment: dict[int, int] = {}
    for idx, (_, slot) in enumerate(slots):
        for image_id in members[slot]:
            assignment[image_id] = idx
    return assignment, tuple(log)


def single_linkage_cluster(features: list[FeatureVector], k: int) -> dict[int, int]:
    assignment, _ = cluster_with_log(features, k)
    return assignment


def select_medoids(
    features: list[FeatureVector], assignment: dict[int, int]
) -> list[int]:
    """Per cluster, the member minimizing total cosine distance to the rest.

    Ties go to the smallest image id; returned in cluster-index order.
    """
    ids, x = _feature_matrix(features)
    missing = set(ids) - set(assignment)
    if missing:
        raise ValidationError(f"assignment missing image ids {sorted(missing)[:5]}")
    dist = kernels.pairwise_cosine(x)
    pos = {image_id: i for i, image_id in enumerate(ids)}

    clusters: dict[int, list[int]] = {}
    for image_id in ids:
        clusters.setdefault(assignment[image_id], []).append(image_id)

    medoids = []
    for cluster_idx in sorted(clusters):
        member_ids = sorted(clusters[cluster_idx])
        rows = [pos[i] for i in member_ids]
        sums = dist[np.ix_(rows, rows)].sum(axis=1)
        medoids.append(member_ids[int(np.argmin(sums))])  # argmin: first = smallest id
    return medoids


def make_split(features: list[FeatureVector], ratio: float) -> SplitResult:
    """Cluster to K = round(ratio * N) (half-up) and take medoids as test."""
    if not 0.0 < ratio < 1.0:
        raise ValidationError(f"split ratio {ratio} outside (0, 1)")
    n = len(features)
    k = int(math.floor(ratio * n + 0.5))
    assignment, log = cluster_with_log(features, k)
    test = frozenset(select_medoids(features, assignment))
    train = frozenset(f.image_id for f in features) - test
    return SplitResult(
        test_ids=test, train_ids=train, cluster_assignment=assignment, merge_log=log
    )


# ---------------------------------------------------------------------------
# file formats


def read_features(path: str | Path) -> list[FeatureVector]:
    """JSON Lines, one {"image_id": int, "vector": [float, ...]} per line."""
    features = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                features.append(
                    FeatureVector(
                        image_id=int(rec["image_id"]),
                        values=tuple(float(v) for v in rec["vector"]),
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"{path}: bad feature record: {exc}", line=lineno) from exc
    if not features:
        raise ValidationError(f"{path}: no feature records")
    _feature_matrix(features)  # dimension/uniqueness validation
    return features


def write_features(features: list[FeatureVector], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f in features:
            fh.write(json.dumps({"image_id": f.image_id, "vector": list(f.values)}) + "\n")


def split_to_dict(result: SplitResult) -> dict:
    return {
        "k": len(set(result.cluster_assignment.values())),
        "test_ids": sorted(result.test_ids),
        "train_ids": sorted(result.train_ids),
        "cluster_assignment": {
            str(k): v for k, v in sorted(result.cluster_assignment.items())
        },
        "merge_log": [[s.first, s.second, s.distance] for s in result.merge_log],
    }


def split_from_dict(data: dict) -> SplitResult:
    try:
        return SplitResult(
            test_ids=frozenset(int(i) for i in data["test_ids"]),
            train_ids=frozenset(int(i) for i in data["train_ids"]),
            cluster_assignment={
                int(k): int(v) for k, v in data.get("cluster_assignment", {}).items()
            },
            merge_log=tuple(
                MergeStep(int(a), int(b), float(d)) for a, b, d in data.get("merge_log", [])
            ),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"bad split document: {exc}") from exc


def write_split(result: SplitResult, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(split_to_dict(result), indent=2) + "\n", encoding="utf-8"
    )


def read_split(path: str | Path) -> SplitResult:
    try:
        with open(path, encoding="utf-8") as fh:
            return split_from_dict(json.load(fh))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc.msg}", line=exc.lineno) from exc
