"""Training clusters as empirical measures, and their sector-constrained moments.

Every cluster is a finite set of points, so every moment is a finite sum;
no quadrature appears anywhere.  Moments are taken of the pushed-forward
measure, i.e. of the points z = R(x + beta) in the layer's rotated frame.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyCluster
from .model import LayerParams, ModelState, SectorMask, classify_sector

logger = logging.getLogger(__name__)


class TrainingSet:
    """Q clusters of length-Q points; cluster l carries label index l."""

    def __init__(self, clusters):
        cl = [np.asarray(c, dtype=float) for c in clusters]
        if not cl:
            raise ValueError("need at least one cluster")
        q = len(cl)
        for i, c in enumerate(cl):
            if c.ndim != 2 or c.shape[1] != q:
                raise ValueError(
                    f"cluster {i} has shape {c.shape}; expected (N_{i}, {q})"
                )
            if c.shape[0] < 1:
                raise EmptyCluster(f"cluster {i} is empty")
            c.setflags(write=False)
        self.clusters = cl

    @property
    def q(self) -> int:
        return len(self.clusters)

    @property
    def counts(self) -> list[int]:
        return [c.shape[0] for c in self.clusters]

    @property
    def total(self) -> int:
        return sum(self.counts)

    def to_dict(self, labels=None) -> dict:
        doc = {"q": self.q, "clusters": [c.tolist() for c in self.clusters]}
        if labels is not None:
            doc["labels"] = np.asarray(labels, dtype=float).tolist()
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> tuple["TrainingSet", np.ndarray | None]:
        """Parse {"q": int, "clusters": [[[x...]...]...], "labels": [[y...]...]}."""
        if "clusters" not in doc:
            raise ValueError("training-set document is missing 'clusters'")
        ts = cls(doc["clusters"])
        if "q" in doc and int(doc["q"]) != ts.q:
            raise ValueError(f"declared q={doc['q']} but found {ts.q} clusters")
        labels = None
        if doc.get("labels") is not None:
            labels = np.asarray(doc["labels"], dtype=float)
            if labels.shape != (ts.q, ts.clusters[0].shape[1]):
                raise ValueError(f"labels have shape {labels.shape}, expected ({ts.q}, {ts.clusters[0].shape[1]})")
        return ts, labels

    @classmethod
    def load(cls, path) -> tuple["TrainingSet", np.ndarray | None]:
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class Moments:
    """Free and sector-constrained moments of one pushed-forward cluster.

    i0 is the total mass (1 for a probability measure); i1 the mean of the
    pushed points; j0[r] / j0_perp[r] the fraction of points with coordinate
    r positive / truncated; j1_by_sector[nu] the per-sector first moment
    (1/N) sum z and j2_by_sector[nu] the per-sector second moment
    (1/N) sum z z^T, keyed only by occupied sectors.
    """

    i0: float
    i1: np.ndarray
    j0: np.ndarray
    j0_perp: np.ndarray
    j1_by_sector: dict[SectorMask, np.ndarray] = field(default_factory=dict)
    j2_by_sector: dict[SectorMask, np.ndarray] = field(default_factory=dict)


def pushforward_points(layer: LayerParams, cluster) -> np.ndarray:
    """Map cluster points into the layer's frame: rows z_i = R(x_i + beta)."""
    pts = np.asarray(cluster, dtype=float)
    if pts.ndim != 2:
        raise ValueError("cluster must be a 2-D array of points")
    return (pts + layer.beta) @ layer.rotation.mat.T


def compute_moments(layer: LayerParams, cluster) -> Moments:
    """Moments of the pushed-forward empirical measure of one cluster."""
    pts = np.asarray(cluster, dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise EmptyCluster("cluster must contain at least one point")
    z = pushforward_points(layer, pts)
    n = z.shape[0]
    pos = z > 0.0
    j0 = pos.mean(axis=0)
    j1: dict[SectorMask, np.ndarray] = {}
    j2: dict[SectorMask, np.ndarray] = {}
    for i in range(n):
        key = SectorMask(tuple(bool(b) for b in pos[i]))
        if key not in j1:
            j1[key] = np.zeros(z.shape[1])
            j2[key] = np.zeros((z.shape[1], z.shape[1]))
        j1[key] += z[i] / n
        j2[key] += np.outer(z[i], z[i]) / n
    return Moments(
        i0=1.0,
        i1=z.mean(axis=0),
        j0=j0,
        j0_perp=1.0 - j0,
        j1_by_sector=j1,
        j2_by_sector=j2,
    )


def truncated_counts(layer: LayerParams, cluster) -> np.ndarray:
    """Integer vector n_r: how many points have coordinate r truncated."""
    z = pushforward_points(layer, cluster)
    return np.sum(z <= 0.0, axis=0)


def check_cluster_separation(state: ModelState, data: TrainingSet):
    """Does every layer act as the identity on every other cluster?

    Returns (ok, violations) where violations lists (layer, cluster, point)
    triples whose point is not strictly inside the layer's positive sector.
    """
    violations = []
    for k, layer in enumerate(state.layers):
        for l, pts in enumerate(data.clusters):
            if l == k:
                continue
            for i, x in enumerate(pts):
                if not classify_sector(layer, x).all_true():
                    violations.append((k, l, i))
    return (not violations), violations


def warn_if_not_separated(state: ModelState, data: TrainingSet) -> bool:
    ok, violations = check_cluster_separation(state, data)
    if not ok:
        logger.warning(
            "cluster separation violated at %d (layer, cluster, point) triples; "
            "the cluster-separated flow equations are approximations here",
            len(violations),
        )
    return ok
