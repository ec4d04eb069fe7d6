"""Epipolar separation of direct (single-bounce) from indirect reflections.

A correspondence whose camera pixel sits on the epipolar line of its decoded
projector pixel is a single-bounce diffuse return and goes to triangulation;
anything off the line reached the camera through at least two bounces and is
kept for deflectometry. Mixed pixels (shiny surfaces) carry both kinds; the
direct one wins and the specular component is rejected there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import formats
from .decode import CorrespondenceSet, _KEY_SHIFT
from .geometry import epipolar_distances

DIRECT = 0
INDIRECT = 1
REJECTED = 2

CLASS_NAMES = ("direct", "indirect", "rejected")


@dataclass
class ClassifiedSet:
    """Correspondences plus class labels and epipolar distances."""

    base: CorrespondenceSet
    label: np.ndarray  # int8 DIRECT / INDIRECT / REJECTED
    epipolar_distance: np.ndarray  # px

    def __len__(self) -> int:
        return len(self.base)

    def where(self, label: int) -> np.ndarray:
        return np.where(self.label == label)[0]

    def save_text(self, path) -> None:
        b = self.base
        formats.write_table(
            path,
            ["x_C", "y_C", "x_P", "y_P", "support", "quality", "class", "epi_dist"],
            [
                b.camera_pixel[:, 0],
                b.camera_pixel[:, 1],
                b.projector_pixel[:, 0],
                b.projector_pixel[:, 1],
                b.support,
                b.quality,
                np.array([CLASS_NAMES[c] for c in self.label]),
                self.epipolar_distance,
            ],
        )

    @staticmethod
    def load_text(path) -> "ClassifiedSet":
        _, cols = formats.read_table(path, ["x_C", "y_C", "x_P", "y_P", "support", "quality", "class", "epi_dist"])
        n = len(cols[0])
        cam = np.stack([cols[0].astype(float), cols[1].astype(float)], axis=1).astype(np.int32) if n else np.zeros((0, 2), np.int32)
        proj = np.stack([cols[2].astype(float), cols[3].astype(float)], axis=1) if n else np.zeros((0, 2))
        base = CorrespondenceSet(cam, proj, cols[4].astype(np.int32), cols[5].astype(np.float64))
        label = np.array([CLASS_NAMES.index(c) for c in cols[6]], dtype=np.int8)
        return ClassifiedSet(base, label, cols[7].astype(np.float64))


def epipolar_classify(correspondences: CorrespondenceSet, F: np.ndarray, tau: float = 2.0) -> ClassifiedSet:
    """Threshold the point-to-epipolar-line distance at ``tau`` pixels.

    The distance uses normalized line coefficients, so any rescaling of F
    leaves the labels unchanged.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    n = len(correspondences)
    if n == 0:
        return ClassifiedSet(correspondences, np.zeros(0, dtype=np.int8), np.zeros(0))
    dist = epipolar_distances(F, correspondences.projector_pixel, correspondences.camera_pixel.astype(np.float64))
    label = np.where(dist <= tau, DIRECT, INDIRECT).astype(np.int8)
    return ClassifiedSet(correspondences, label, dist)


def resolve_mixed_pixels(classified: ClassifiedSet) -> ClassifiedSet:
    """Resolve camera pixels carrying several correspondences.

    Where a pixel has both direct and indirect entries the direct one is kept
    and the indirect ones are rejected; among several direct entries the
    highest quality wins (tie: smaller epipolar distance). Pixels with only
    indirect entries pass through unchanged.
    """
    b = classified.base
    n = len(classified)
    if n == 0:
        return classified
    key = (b.camera_pixel[:, 1].astype(np.int64) << _KEY_SHIFT) | b.camera_pixel[:, 0].astype(np.int64)
    label = classified.label.copy()
    is_direct = label == DIRECT
    # order directs best-first within each pixel; everything after the first
    # is demoted
    order = np.lexsort((classified.epipolar_distance, -b.quality, key))
    ordered_key = key[order]
    ordered_direct = is_direct[order]
    direct_rows = order[ordered_direct]
    direct_keys = ordered_key[ordered_direct]
    first = np.ones(len(direct_rows), dtype=bool)
    first[1:] = direct_keys[1:] != direct_keys[:-1]
    label[direct_rows[~first]] = REJECTED
    # indirect entries on pixels that have a direct entry are rejected
    if len(direct_keys):
        has_direct = np.isin(key, direct_keys)
        label[(label == INDIRECT) & has_direct] = REJECTED
    return ClassifiedSet(b, label, classified.epipolar_distance)
