"""Decode an event stream into per-camera-pixel projector correspondences.

Each event timestamp is mapped to a sweep window and a continuous sweep
position ``(t - sweep_start) * steps / duration``; the integer part is the
projector step index, the fraction is the sub-step residual carried by the
timestamp. Per camera pixel, positions from repeated events are clustered
(a shiny pixel sees both its own illumination and a mirrored one), each
cluster is aggregated by its median, and vertical x horizontal cluster pairs
become correspondences ``(x_P, y_P)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import formats
from .events import SWEEP_HORIZONTAL, SWEEP_VERTICAL, EventStream
from .scene import ScanSchedule

_KEY_SHIFT = 20  # pixel key packing: key = (y << _KEY_SHIFT) | x


@dataclass
class SweepAssignments:
    """Per-event sweep labels for events inside sweep windows."""

    event_index: np.ndarray  # index into the source stream
    x: np.ndarray
    y: np.ndarray
    polarity: np.ndarray
    sweep: np.ndarray  # SWEEP_VERTICAL or SWEEP_HORIZONTAL
    index: np.ndarray  # integer projector step
    position: np.ndarray  # continuous sweep position in steps
    residual_us: np.ndarray  # time offset within the step
    steps_per_sweep: int = 0
    discarded_recovery: int = 0
    outside_window: int = 0

    def __len__(self) -> int:
        return len(self.event_index)


def assign_sweeps(events: EventStream, schedule: ScanSchedule, scan_start_us: int, n_sweeps: int = 2) -> SweepAssignments:
    """Label every event with its sweep and projector step.

    Events inside recovery windows are discarded and counted; events outside
    the scan window entirely are counted as ``outside_window``.
    """
    t = events.t
    steps = schedule.steps_per_sweep
    duration = schedule.sweep_duration_us
    sweep = np.full(len(t), -1, dtype=np.int8)
    position = np.zeros(len(t), dtype=np.float64)
    in_recovery = np.zeros(len(t), dtype=bool)
    for s in range(n_sweeps):
        start = scan_start_us + s * (duration + schedule.recovery_us)
        inside = (t >= start) & (t < start + duration)
        sweep[inside] = s
        position[inside] = (t[inside] - start) * steps / duration
        rec = (t >= start + duration) & (t < start + duration + schedule.recovery_us)
        in_recovery |= rec
    keep = sweep >= 0
    index = np.clip(np.floor(position[keep]).astype(np.int32), 0, steps - 1)
    sweep_start = scan_start_us + sweep[keep].astype(np.int64) * (duration + schedule.recovery_us)
    residual = t[keep] - (sweep_start + index * schedule.step_us)
    return SweepAssignments(
        event_index=np.where(keep)[0],
        x=events.x[keep],
        y=events.y[keep],
        polarity=events.polarity[keep],
        sweep=sweep[keep],
        index=index,
        position=position[keep],
        residual_us=residual,
        steps_per_sweep=steps,
        discarded_recovery=int(in_recovery.sum()),
        outside_window=int((~keep & ~in_recovery).sum()),
    )


@dataclass
class CorrespondenceSet:
    """Camera pixel to projector pixel links with provenance.

    ``event_ids``/``event_offsets`` form a CSR layout: events contributing to
    correspondence i are ``event_ids[event_offsets[i]:event_offsets[i+1]]``
    (indices into the originating stream).
    """

    camera_pixel: np.ndarray  # (N, 2) int32
    projector_pixel: np.ndarray  # (N, 2) float64
    support: np.ndarray  # int32
    quality: np.ndarray  # float64 in [0, 1]
    event_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    event_offsets: np.ndarray = field(default_factory=lambda: np.zeros(1, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.support)

    def events_of(self, i: int) -> np.ndarray:
        return self.event_ids[self.event_offsets[i] : self.event_offsets[i + 1]]

    def save_text(self, path) -> None:
        formats.write_table(
            path,
            ["x_C", "y_C", "x_P", "y_P", "support", "quality"],
            [
                self.camera_pixel[:, 0],
                self.camera_pixel[:, 1],
                self.projector_pixel[:, 0],
                self.projector_pixel[:, 1],
                self.support,
                self.quality,
            ],
        )

    @staticmethod
    def load_text(path) -> "CorrespondenceSet":
        _, cols = formats.read_table(path, ["x_C", "y_C", "x_P", "y_P", "support", "quality"])
        n = len(cols[0])
        cam = np.stack([cols[0].astype(float), cols[1].astype(float)], axis=1).astype(np.int32) if n else np.zeros((0, 2), np.int32)
        proj = np.stack([cols[2].astype(float), cols[3].astype(float)], axis=1) if n else np.zeros((0, 2))
        return CorrespondenceSet(cam, proj, cols[4].astype(np.int32), cols[5].astype(np.float64))


def _empty_correspondences() -> CorrespondenceSet:
    return CorrespondenceSet(np.zeros((0, 2), np.int32), np.zeros((0, 2)), np.zeros(0, np.int32), np.zeros(0))


def _concat_ranges(starts: np.ndarray, stops: np.ndarray) -> np.ndarray:
    lens = (stops - starts).astype(np.int64)
    total = int(lens.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(lens)[:-1]])
    return np.arange(total, dtype=np.int64) - np.repeat(offsets, lens) + np.repeat(starts, lens)


def _select_timing_events(a: SweepAssignments, policy: str):
    """Event selection per polarity policy, with -1 positions shifted back one step."""
    if policy == "positive":
        keep = a.polarity > 0
    elif policy == "negative":
        keep = a.polarity < 0
    elif policy == "both":
        keep = np.ones(len(a), dtype=bool)
    else:
        raise ValueError(f"unknown polarity policy {policy!r}")
    position = np.where(a.polarity < 0, a.position - 1.0, a.position)
    return keep, position


@dataclass
class _Clusters:
    """Contiguous position clusters per (pixel, sweep), ready for pairing."""

    pixel_key: np.ndarray
    sweep: np.ndarray
    median: np.ndarray
    spread: np.ndarray
    size: np.ndarray
    seg_start: np.ndarray  # ranges into sorted_event_index
    seg_stop: np.ndarray
    sorted_event_index: np.ndarray


def _cluster(a: SweepAssignments, keep: np.ndarray, position: np.ndarray, gap: float) -> _Clusters:
    key = (a.y[keep].astype(np.int64) << _KEY_SHIFT) | a.x[keep].astype(np.int64)
    sweep = a.sweep[keep].astype(np.int64)
    pos = position[keep]
    ev = a.event_index[keep]
    order = np.lexsort((pos, sweep, key))
    key, sweep, pos, ev = key[order], sweep[order], pos[order], ev[order]
    n = len(key)
    if n == 0:
        z = np.zeros(0, dtype=np.int64)
        return _Clusters(z, z, np.zeros(0), np.zeros(0), z, z, z, z)
    brk = np.ones(n, dtype=bool)
    brk[1:] = (key[1:] != key[:-1]) | (sweep[1:] != sweep[:-1]) | (np.diff(pos) > gap)
    starts = np.where(brk)[0]
    stops = np.concatenate([starts[1:], [n]])
    sizes = stops - starts
    med_at = starts + (sizes - 1) // 2  # lower middle on ties
    return _Clusters(
        pixel_key=key[starts],
        sweep=sweep[starts],
        median=pos[med_at],
        spread=pos[stops - 1] - pos[starts],
        size=sizes,
        seg_start=starts,
        seg_stop=stops,
        sorted_event_index=ev,
    )


def _build_set(cam_keys, proj, support, quality, seg_starts, seg_stops, sorted_event_index) -> CorrespondenceSet:
    """Assemble a canonical, deterministically ordered correspondence set.

    ``seg_starts``/``seg_stops`` hold one or two (start, stop) ranges per row
    into ``sorted_event_index``.
    """
    cam_keys = np.asarray(cam_keys, dtype=np.int64)
    proj = np.asarray(proj, dtype=np.float64).reshape(-1, 2)
    order = np.lexsort((proj[:, 1], proj[:, 0], cam_keys))
    cam_keys = cam_keys[order]
    proj = proj[order]
    support = np.asarray(support, dtype=np.int32)[order]
    quality = np.asarray(quality, dtype=np.float64)[order]
    seg_starts = np.asarray(seg_starts, dtype=np.int64).reshape(len(order), -1)[order]
    seg_stops = np.asarray(seg_stops, dtype=np.int64).reshape(len(order), -1)[order]
    flat = sorted_event_index[_concat_ranges(seg_starts.ravel(), seg_stops.ravel())]
    row_lens = (seg_stops - seg_starts).sum(axis=1)
    offsets = np.concatenate([[0], np.cumsum(row_lens)]).astype(np.int64)
    cam = np.stack([cam_keys & ((1 << _KEY_SHIFT) - 1), cam_keys >> _KEY_SHIFT], axis=1).astype(np.int32)
    return CorrespondenceSet(cam, proj, support, quality, flat, offsets)


def intersect_sweeps(
    assignments: SweepAssignments,
    polarity_policy: str = "positive",
    cluster_gap: float | None = None,
) -> CorrespondenceSet:
    """Pair vertical and horizontal sweep detections into (x_P, y_P) links.

    A camera pixel whose events form several well-separated position clusters
    in a sweep (a mixed direct + mirrored pixel) yields one candidate
    correspondence per vertical x horizontal cluster pair; downstream
    separation resolves which survive. Per cluster the median position is
    used; quality is 1 - spread / steps, taken from the worse cluster of the
    pair.
    """
    steps = assignments.steps_per_sweep
    if cluster_gap is None:
        cluster_gap = max(2.0, 0.005 * steps)
    keep, position = _select_timing_events(assignments, polarity_policy)
    cl = _cluster(assignments, keep, position, gap=cluster_gap)

    v_idx = np.where(cl.sweep == SWEEP_VERTICAL)[0]
    h_idx = np.where(cl.sweep == SWEEP_HORIZONTAL)[0]
    if len(v_idx) == 0 or len(h_idx) == 0:
        return _empty_correspondences()
    # clusters are already grouped by pixel key within each sweep
    vkeys = cl.pixel_key[v_idx]
    hkeys = cl.pixel_key[h_idx]
    common = np.intersect1d(vkeys, hkeys)
    if len(common) == 0:
        return _empty_correspondences()
    v_lo = np.searchsorted(vkeys, common, side="left")
    v_hi = np.searchsorted(vkeys, common, side="right")
    h_lo = np.searchsorted(hkeys, common, side="left")
    h_hi = np.searchsorted(hkeys, common, side="right")
    nv = v_hi - v_lo
    nh = h_hi - h_lo

    keys_out = []
    proj_out = []
    support_out = []
    quality_out = []
    segs_start = []
    segs_stop = []

    simple = (nv == 1) & (nh == 1)
    if np.any(simple):
        vi = v_idx[v_lo[simple]]
        hi = h_idx[h_lo[simple]]
        keys_out.append(common[simple])
        proj_out.append(np.stack([cl.median[vi], cl.median[hi]], axis=1))
        support_out.append(cl.size[vi] + cl.size[hi])
        spread = np.maximum(cl.spread[vi], cl.spread[hi])
        quality_out.append(np.maximum(0.0, 1.0 - spread / steps))
        segs_start.append(np.stack([cl.seg_start[vi], cl.seg_start[hi]], axis=1))
        segs_stop.append(np.stack([cl.seg_stop[vi], cl.seg_stop[hi]], axis=1))

    for k in np.where(~simple)[0]:
        for vi in v_idx[v_lo[k] : v_hi[k]]:
            for hi in h_idx[h_lo[k] : h_hi[k]]:
                keys_out.append(np.array([common[k]]))
                proj_out.append(np.array([[cl.median[vi], cl.median[hi]]]))
                support_out.append(np.array([cl.size[vi] + cl.size[hi]]))
                spread = max(cl.spread[vi], cl.spread[hi])
                quality_out.append(np.array([max(0.0, 1.0 - spread / steps)]))
                segs_start.append(np.array([[cl.seg_start[vi], cl.seg_start[hi]]]))
                segs_stop.append(np.array([[cl.seg_stop[vi], cl.seg_stop[hi]]]))

    return _build_set(
        np.concatenate(keys_out),
        np.concatenate(proj_out),
        np.concatenate(support_out),
        np.concatenate(quality_out),
        np.concatenate(segs_start),
        np.concatenate(segs_stop),
        cl.sorted_event_index,
    )


def intersect_single_sweep(
    assignments: SweepAssignments,
    F: np.ndarray,
    polarity_policy: str = "positive",
    cluster_gap: float | None = None,
) -> CorrespondenceSet:
    """Diffuse-only decoding from the vertical sweep alone.

    The sweep gives x_P; y_P comes from the epipolar constraint: the
    projector point of camera pixel p_C lies on the line F^T p_C, which is
    intersected with the column x = x_P. Support counts vertical events only,
    so it may be 1. Pixels whose projector epipolar line is near-parallel to
    the columns are skipped (y_P unidentifiable from a vertical sweep).
    """
    steps = assignments.steps_per_sweep
    if cluster_gap is None:
        cluster_gap = max(2.0, 0.005 * steps)
    keep, position = _select_timing_events(assignments, polarity_policy)
    keep = keep & (assignments.sweep == SWEEP_VERTICAL)
    cl = _cluster(assignments, keep, position, gap=cluster_gap)
    if len(cl.pixel_key) == 0:
        return _empty_correspondences()
    x_c = (cl.pixel_key & ((1 << _KEY_SHIFT) - 1)).astype(np.float64)
    y_c = (cl.pixel_key >> _KEY_SHIFT).astype(np.float64)
    lines = np.stack([x_c, y_c, np.ones_like(x_c)], axis=1) @ F  # rows: F^T p_C
    ok = np.abs(lines[:, 1]) > 1e-9 * np.hypot(lines[:, 0], lines[:, 1])
    y_p = np.where(ok, -(lines[:, 0] * cl.median + lines[:, 2]) / np.where(ok, lines[:, 1], 1.0), 0.0)
    return _build_set(
        cl.pixel_key[ok],
        np.stack([cl.median[ok], y_p[ok]], axis=1),
        cl.size[ok],
        np.maximum(0.0, 1.0 - cl.spread[ok] / steps),
        np.stack([cl.seg_start[ok]], axis=1),
        np.stack([cl.seg_stop[ok]], axis=1),
        cl.sorted_event_index,
    )
