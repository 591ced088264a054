"""Activation Clustering: per-class 2-means, small clusters are poison."""

import logging

import numpy as np
from sklearn.cluster import KMeans
from sklearn.decomposition import PCA

from psdlab.detectors.base import ClassDiagnostic, DetectionResult, DetectorContext

logger = logging.getLogger(__name__)

NAME = "ac"
SMALL_CLUSTER_FRACTION = 0.35
RESTARTS = 10
MAX_ITER = 100
REDUCED_DIMS = 10


def detect_ac(
    features: np.ndarray,
    labels: np.ndarray,
    num_classes: int,
    seed: int = 0,
    threshold: float = SMALL_CLUSTER_FRACTION,
    dims: int = REDUCED_DIMS,
) -> DetectionResult:
    """Flag the smaller of two k-means clusters when it holds < threshold of the class.

    Each class is first reduced to `dims` principal components when it has
    more features and more samples than that.

    Score is d(majority centroid) / (d(majority) + d(minority)): above 0.5
    means closer to the minority cluster.
    """
    n = features.shape[0]
    scores = np.zeros(n)
    flags = np.zeros(n, dtype=bool)
    diagnostics = []

    for c in range(num_classes):
        members = np.flatnonzero(labels == c)
        diag = ClassDiagnostic(label=c, size=int(members.size))
        diagnostics.append(diag)
        if members.size < 2:
            diag.skipped = "fewer than 2 samples"
            logger.warning("AC: class %d skipped (%d samples)", c, members.size)
            continue

        x = features[members]
        if np.ptp(x, axis=0).max() == 0.0:
            diag.skipped = "identical features"
            diag.cluster_sizes = [int(members.size), 0]
            continue

        if x.shape[1] > dims and members.size > dims:
            x = PCA(n_components=dims, svd_solver="full").fit_transform(x)

        km = KMeans(n_clusters=2, init="k-means++", n_init=RESTARTS, max_iter=MAX_ITER,
                    random_state=seed).fit(x)
        sizes = np.bincount(km.labels_, minlength=2)
        minority = int(np.argmin(sizes))
        majority = 1 - minority
        diag.cluster_sizes = [int(sizes[majority]), int(sizes[minority])]
        diag.threshold = threshold

        d_major = np.linalg.norm(x - km.cluster_centers_[majority], axis=1)
        d_minor = np.linalg.norm(x - km.cluster_centers_[minority], axis=1)
        scores[members] = d_major / (d_major + d_minor + 1e-12)

        if sizes[minority] / members.size < threshold:
            hit = members[km.labels_ == minority]
            flags[hit] = True
            diag.flagged = int(hit.size)

    return DetectionResult(NAME, scores, flags, diagnostics)


def run(ctx: DetectorContext, params: dict) -> DetectionResult:
    return detect_ac(ctx.features, ctx.labels, ctx.num_classes, seed=ctx.seed,
                     threshold=params.get("ac_threshold", SMALL_CLUSTER_FRACTION),
                     dims=params.get("ac_dims", REDUCED_DIMS))
