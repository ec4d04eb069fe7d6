"""Dual-scan laser simulator: ray-trace a scene, synthesize the event stream.

The projector sweeps a vertical laser line across its columns, rests, then a
horizontal line across its rows. A surface point with continuous projector
coordinates (x_P, y_P) is crossed by the vertical line at
``scan_start + x_P * sweep_duration / steps`` and emits a +1 event at its
camera pixel (and a -1 event one step later when the line has moved on);
analogously for the horizontal sweep. Timestamps are rounded to integer
microseconds, which is the only timing quantization: projector *steps* are a
decoding concept, recovered by binning timestamps.

Reflection paths handled per camera pixel:

* bounce 1: laser -> diffuse/shiny point -> camera (direct),
* bounce 2: laser -> diffuse point Q -> specular/shiny surface -> camera;
  the event appears at the specular surface's camera pixel at Q's sweep
  crossing times,
* bounce >= 3 and specular-first paths are generated only when
  ``generate_higher_bounces`` is set, to exercise rejection behavior.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .events import SWEEP_HORIZONTAL, SWEEP_RASTER, SWEEP_VERTICAL, EventStream, GroundTruth
from .geometry import (
    PinholeModel,
    Ray,
    epipolar_distances,
    fundamental_from_models,
    pixel_directions,
    project_points,
    reflect_direction,
    unit,
)
from .scene import NoiseModel, Plane, ScanSchedule, SceneObject, Sphere, TriangleMesh

HIT_EPS_MM = 1e-6
ON_EPIPOLAR_TAU_PX = 2.0


class Hit:
    """Nearest intersection of a single ray with the scene."""

    __slots__ = ("point", "normal", "obj")

    def __init__(self, point, normal, obj):
        self.point = point
        self.normal = normal
        self.obj = obj


def _intersect_plane(origins, dirs, plane: Plane):
    denom = dirs @ plane.normal
    safe = np.where(np.abs(denom) < 1e-12, 1.0, denom)
    t = ((plane.point - origins) @ plane.normal) / safe
    hit = (np.abs(denom) >= 1e-12) & (t > HIT_EPS_MM)
    local = origins + t[:, None] * dirs - plane.point
    u_axis, v_axis = plane.basis
    inside = (np.abs(local @ u_axis) <= plane.extent[0]) & (np.abs(local @ v_axis) <= plane.extent[1])
    hit &= inside
    t = np.where(hit, t, np.inf)
    normals = np.broadcast_to(plane.normal, dirs.shape)
    return t, normals


def _intersect_sphere(origins, dirs, sphere: Sphere):
    oc = origins - sphere.center
    b = np.sum(dirs * oc, axis=1)
    c = np.sum(oc * oc, axis=1) - sphere.radius**2
    disc = b * b - c
    ok = disc >= 0.0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t_near = -b - sq
    t_far = -b + sq
    t = np.where(t_near > HIT_EPS_MM, t_near, np.where(t_far > HIT_EPS_MM, t_far, np.inf))
    t = np.where(ok, t, np.inf)
    finite = np.isfinite(t)
    hitp = origins + np.where(finite, t, 0.0)[:, None] * dirs
    normals = np.where(finite[:, None], (hitp - sphere.center) / sphere.radius, 0.0)
    return t, normals


def _intersect_mesh(origins, dirs, mesh: TriangleMesh):
    v0 = mesh.vertices[mesh.faces[:, 0]]
    e1 = mesh.vertices[mesh.faces[:, 1]] - v0
    e2 = mesh.vertices[mesh.faces[:, 2]] - v0
    n = origins.shape[0]
    best_t = np.full(n, np.inf)
    best_normal = np.zeros((n, 3))
    face_normals = np.cross(e1, e2)
    norms = np.linalg.norm(face_normals, axis=1, keepdims=True)
    face_normals = face_normals / np.where(norms < 1e-300, 1.0, norms)
    chunk = max(1, 2_000_000 // max(1, len(mesh.faces)))
    for lo in range(0, n, chunk):
        o = origins[lo : lo + chunk, None, :]
        d = dirs[lo : lo + chunk, None, :]
        h = np.cross(d, e2[None, :, :])
        a = np.sum(e1[None, :, :] * h, axis=2)
        ok = np.abs(a) > 1e-12
        f = 1.0 / np.where(ok, a, 1.0)
        s = o - v0[None, :, :]
        u = f * np.sum(s * h, axis=2)
        q = np.cross(s, e1[None, :, :])
        v = f * np.sum(d * q, axis=2)
        t = f * np.sum(e2[None, :, :] * q, axis=2)
        ok &= (u >= -1e-12) & (v >= -1e-12) & (u + v <= 1.0 + 1e-12) & (t > HIT_EPS_MM)
        t = np.where(ok, t, np.inf)
        idx = np.argmin(t, axis=1)
        rows = np.arange(t.shape[0])
        tmin = t[rows, idx]
        best_t[lo : lo + chunk] = tmin
        best_normal[lo : lo + chunk] = np.where(np.isfinite(tmin)[:, None], face_normals[idx], 0.0)
    return best_t, best_normal


def intersect_ray_batch(origins: np.ndarray, dirs: np.ndarray, objects: list[SceneObject]):
    """Nearest hit per ray. Returns (t, normals, obj_index) with inf / -1 on miss.

    Normals are unit length and oriented against the incoming ray.
    """
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    n = origins.shape[0]
    best_t = np.full(n, np.inf)
    best_normal = np.zeros((n, 3))
    best_obj = np.full(n, -1, dtype=np.int32)
    for i, obj in enumerate(objects):
        if isinstance(obj.shape, Plane):
            t, normals = _intersect_plane(origins, dirs, obj.shape)
        elif isinstance(obj.shape, Sphere):
            t, normals = _intersect_sphere(origins, dirs, obj.shape)
        elif isinstance(obj.shape, TriangleMesh):
            t, normals = _intersect_mesh(origins, dirs, obj.shape)
        else:
            raise TypeError(f"unknown shape {type(obj.shape).__name__}")
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_normal = np.where(closer[:, None], normals, best_normal)
        best_obj = np.where(closer, i, best_obj)
    flip = np.sum(best_normal * dirs, axis=1) > 0
    best_normal = np.where(flip[:, None], -best_normal, best_normal)
    return best_t, best_normal, best_obj


def intersect(ray: Ray, objects: list[SceneObject]) -> Hit | None:
    """Nearest positive-t hit of one ray, or None on miss."""
    t, normals, obj_idx = intersect_ray_batch(ray.origin[None], ray.direction[None], objects)
    if obj_idx[0] < 0:
        return None
    return Hit(ray.origin + t[0] * ray.direction, normals[0], objects[obj_idx[0]])


def reflect_ray(incident: Ray, hit_point: np.ndarray, normal: np.ndarray) -> Ray:
    """Mirror law: out = in - 2 (in . n) n, anchored at the hit point."""
    normal = np.asarray(normal, dtype=np.float64)
    if abs(np.linalg.norm(normal) - 1.0) > 1e-9:
        raise ValueError("normal must be unit length")
    d = float(incident.direction @ normal)
    if abs(d) <= 1e-12:
        raise ValueError("incident ray is orthogonal-degenerate to the surface normal")
    out = reflect_direction(incident.direction[None], normal[None])[0]
    return Ray(np.asarray(hit_point, dtype=np.float64), unit(out))


@dataclass
class SimulationResult:
    events: EventStream
    ground_truth: GroundTruth
    counts: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    scan_span_us: int = 0
    mode: str = "dual"


class _Emitter:
    """Accumulates +1/-1 event pairs with shared annotations."""

    def __init__(self, schedule: ScanSchedule, labels: list[str]):
        self.schedule = schedule
        self.labels = labels
        self.t: list[np.ndarray] = []
        self.x: list[np.ndarray] = []
        self.y: list[np.ndarray] = []
        self.pol: list[np.ndarray] = []
        self.bounce: list[np.ndarray] = []
        self.surface: list[np.ndarray] = []
        self.label: list[np.ndarray] = []
        self.proj: list[np.ndarray] = []
        self.on_epi: list[np.ndarray] = []
        self.sweep: list[np.ndarray] = []
        self.step: list[np.ndarray] = []
        self.step_time: list[np.ndarray] = []

    def emit(self, sweep, pixels, positions, bounce, surface, label_idx, proj_pixel, on_epi, raster_step=None):
        n = len(positions)
        if n == 0:
            return
        sched = self.schedule
        if sweep == SWEEP_RASTER:
            t_on = sched.step_time(0, raster_step)
            t_off = sched.step_time(0, raster_step + 1)
            step = raster_step.astype(np.int32)
            step_time = t_on
        else:
            t_on = sched.crossing_time(sweep, positions)
            t_off = sched.crossing_time(sweep, positions + 1.0)
            start = sched.sweep_start(sweep)
            step = np.floor((t_on - start) * sched.steps_per_sweep / sched.sweep_duration_us).astype(np.int32)
            step = np.clip(step, 0, sched.steps_per_sweep - 1)
            step_time = sched.step_time(sweep, step)
        for t_ev, pol in ((t_on, 1), (t_off, -1)):
            self.t.append(t_ev)
            self.x.append(pixels[:, 0].astype(np.int32))
            self.y.append(pixels[:, 1].astype(np.int32))
            self.pol.append(np.full(n, pol, dtype=np.int8))
            self.bounce.append(np.asarray(bounce, dtype=np.int16))
            self.surface.append(np.asarray(surface, dtype=np.float64))
            self.label.append(np.asarray(label_idx, dtype=np.int32))
            self.proj.append(np.asarray(proj_pixel, dtype=np.float64))
            self.on_epi.append(np.asarray(on_epi, dtype=bool))
            self.sweep.append(np.full(n, sweep, dtype=np.int8))
            self.step.append(step)
            self.step_time.append(step_time)

    def result(self) -> tuple[EventStream, GroundTruth]:
        if not self.t:
            empty = EventStream.empty()
            gt = GroundTruth(
                np.zeros(0, dtype=np.int16),
                np.zeros((0, 3)),
                np.zeros(0, dtype=np.int32),
                np.zeros((0, 2)),
                np.zeros(0, dtype=bool),
                np.zeros(0, dtype=np.int8),
                np.zeros(0, dtype=np.int32),
                np.zeros(0, dtype=np.int64),
                tuple(self.labels),
            )
            return empty, gt
        stream = EventStream(np.concatenate(self.t), np.concatenate(self.x), np.concatenate(self.y), np.concatenate(self.pol))
        gt = GroundTruth(
            np.concatenate(self.bounce),
            np.concatenate(self.surface),
            np.concatenate(self.label),
            np.concatenate(self.proj),
            np.concatenate(self.on_epi),
            np.concatenate(self.sweep),
            np.concatenate(self.step),
            np.concatenate(self.step_time),
            tuple(self.labels),
        )
        return stream, gt


def _camera_pixel_grid(camera: PinholeModel):
    xs, ys = np.meshgrid(np.arange(camera.width), np.arange(camera.height))
    return np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)


def _projector_view(projector: PinholeModel, points: np.ndarray, objects: list[SceneObject]):
    """Continuous projector pixel of each point, with visibility from the laser.

    A point is lit only when nothing occludes it from the projector and it
    falls inside the swept field (both coordinates within [0, steps - 1]).
    """
    pp, in_front = project_points(projector, points)
    ok = in_front.copy()
    ok &= (pp[:, 0] >= 0.0) & (pp[:, 0] <= projector.width - 1.0)
    ok &= (pp[:, 1] >= 0.0) & (pp[:, 1] <= projector.height - 1.0)
    if np.any(ok):
        center = projector.center
        diff = points[ok] - center
        dist = np.linalg.norm(diff, axis=1)
        dirs = diff / dist[:, None]
        t, _, _ = intersect_ray_batch(np.broadcast_to(center, dirs.shape), dirs, objects)
        visible = np.abs(t - dist) <= 1e-6 * dist + 1e-9
        sub = np.zeros(ok.sum(), dtype=bool)
        sub[visible] = True
        ok[np.where(ok)[0]] = sub
    return pp, ok


def _camera_sees(camera: PinholeModel, points: np.ndarray, objects: list[SceneObject]):
    """Integer camera pixel of each point, requiring unoccluded line of sight."""
    px, in_front = project_points(camera, points)
    pix = np.floor(px + 0.5).astype(np.int64)
    ok = in_front & (pix[:, 0] >= 0) & (pix[:, 0] < camera.width) & (pix[:, 1] >= 0) & (pix[:, 1] < camera.height)
    if np.any(ok):
        center = camera.center
        diff = points[ok] - center
        dist = np.linalg.norm(diff, axis=1)
        dirs = diff / dist[:, None]
        t, _, _ = intersect_ray_batch(np.broadcast_to(center, dirs.shape), dirs, objects)
        visible = np.abs(t - dist) <= 1e-6 * dist + 1e-9
        sub = np.zeros(ok.sum(), dtype=bool)
        sub[visible] = True
        ok[np.where(ok)[0]] = sub
    return pix, ok


def _apply_noise(stream: EventStream, gt: GroundTruth, noise: NoiseModel, camera: PinholeModel, span):
    rng = np.random.default_rng(noise.seed)
    counts = {"dropped": 0, "spurious": 0}
    t = stream.t.astype(np.float64)
    if noise.timestamp_jitter_sigma_us > 0:
        t = t + rng.normal(0.0, noise.timestamp_jitter_sigma_us, size=len(t))
    # timestamps are unsigned microsecond counters
    t = np.maximum(np.floor(t + 0.5), 0.0).astype(np.int64)
    keep = np.ones(len(t), dtype=bool)
    if noise.drop_probability > 0:
        keep = rng.random(len(t)) >= noise.drop_probability
        counts["dropped"] = int((~keep).sum())
    stream = EventStream(t[keep], stream.x[keep], stream.y[keep], stream.polarity[keep])
    gt = gt.take(np.where(keep)[0])
    if noise.spurious_rate > 0:
        t0, t1 = span
        expected = noise.spurious_rate * max(t1 - t0, 1) * (camera.width * camera.height / 1e6)
        n_spur = int(rng.poisson(expected))
        counts["spurious"] = n_spur
        if n_spur:
            ts = rng.integers(t0, t1 + 1, size=n_spur)
            xs = rng.integers(0, camera.width, size=n_spur)
            ys = rng.integers(0, camera.height, size=n_spur)
            ps = np.where(rng.random(n_spur) < 0.5, -1, 1).astype(np.int8)
            stream = EventStream(
                np.concatenate([stream.t, ts]),
                np.concatenate([stream.x, xs]),
                np.concatenate([stream.y, ys]),
                np.concatenate([stream.polarity, ps]),
            )
            nan3 = np.full((n_spur, 3), np.nan)
            nan2 = np.full((n_spur, 2), np.nan)
            gt = GroundTruth(
                np.concatenate([gt.bounce, np.zeros(n_spur, dtype=np.int16)]),
                np.concatenate([gt.surface_point, nan3]),
                np.concatenate([gt.object_label, np.full(n_spur, -1, dtype=np.int32)]),
                np.concatenate([gt.projector_pixel, nan2]),
                np.concatenate([gt.on_epipolar, np.zeros(n_spur, dtype=bool)]),
                np.concatenate([gt.sweep, np.full(n_spur, -1, dtype=np.int8)]),
                np.concatenate([gt.step, np.full(n_spur, -1, dtype=np.int32)]),
                np.concatenate([gt.step_time_us, np.full(n_spur, -1, dtype=np.int64)]),
                gt.labels,
            )
    return stream, gt, counts


def simulate_scan(
    objects: list[SceneObject],
    camera: PinholeModel,
    projector: PinholeModel,
    schedule: ScanSchedule,
    noise: NoiseModel | None = None,
    *,
    mode: str = "dual",
    generate_higher_bounces: bool = False,
    max_mirror_bounces: int = 3,
) -> SimulationResult:
    """Trace the scan and return the sorted event stream plus ground truth.

    ``mode`` is "dual" (vertical then horizontal sweep), "single" (vertical
    sweep only, for diffuse-only operation) or "raster" (explicit point
    raster over all projector pixels; direct channel only, used to compare
    scan time against dual scanning).
    """
    if mode not in ("dual", "single", "raster"):
        raise ValueError(f"unknown scan mode {mode!r}")
    if not objects:
        raise ValueError("scene is empty")
    if projector.width != schedule.steps_per_sweep or projector.height != schedule.steps_per_sweep:
        # sweep steps are identified with projector pixels (the projector is
        # pixelated by its timing bins)
        raise ValueError(
            f"projector pixelation {projector.width}x{projector.height} must equal "
            f"steps_per_sweep {schedule.steps_per_sweep}"
        )
    labels = [o.label for o in objects]
    F = fundamental_from_models(camera, projector)
    emitter = _Emitter(schedule, labels)
    warnings: list[str] = []
    counts: dict = {"direct_pairs": 0, "two_bounce_pairs": 0, "higher_bounce_pairs": 0}

    sweeps = [SWEEP_VERTICAL] if mode == "single" else [SWEEP_VERTICAL, SWEEP_HORIZONTAL]

    if mode in ("dual", "single"):
        pixels = _camera_pixel_grid(camera)
        center = camera.center
        dirs = pixel_directions(camera, pixels)
        origins = np.broadcast_to(center, dirs.shape)
        t_hit, normals, obj_idx = intersect_ray_batch(origins, dirs, objects)
        hit = obj_idx >= 0
        scatters = np.array([o.material.scatters for o in objects])
        mirrors = np.array([o.material.mirrors for o in objects])

        # Direct channel: diffuse/shiny points lit by the laser.
        direct = hit & scatters[np.clip(obj_idx, 0, None)]
        if np.any(direct):
            P = center + t_hit[direct, None] * dirs[direct]
            pp, lit = _projector_view(projector, P, objects)
            sel = np.where(direct)[0][lit]
            P, pp = P[lit], pp[lit]
            n_emit = len(sel)
            counts["direct_pairs"] += n_emit * len(sweeps)
            for sweep in sweeps:
                pos = pp[:, 0] if sweep == SWEEP_VERTICAL else pp[:, 1]
                emitter.emit(
                    sweep,
                    pixels[sel],
                    pos,
                    np.ones(n_emit, dtype=np.int16),
                    P,
                    obj_idx[sel],
                    pp,
                    np.zeros(n_emit, dtype=bool),
                )

        # Indirect channel: follow mirror reflections from specular pixels
        # back to the diffuse point that acts as the screen.
        specular = hit & mirrors[np.clip(obj_idx, 0, None)]
        if np.any(specular):
            idx = np.where(specular)[0]
            ro = center + t_hit[idx, None] * dirs[idx]
            rd = reflect_direction(dirs[idx], normals[idx])
            ro = ro + rd * HIT_EPS_MM
            mirror_hits = np.ones(len(idx), dtype=np.int16)
            for _ in range(max_mirror_bounces):
                if len(idx) == 0:
                    break
                t2, n2, o2 = intersect_ray_batch(ro, rd, objects)
                found = o2 >= 0
                land_scatter = found & scatters[np.clip(o2, 0, None)]
                if np.any(land_scatter):
                    Q = ro[land_scatter] + t2[land_scatter, None] * rd[land_scatter]
                    pp, lit = _projector_view(projector, Q, objects)
                    sel = idx[land_scatter][lit]
                    bounce = (1 + mirror_hits[land_scatter][lit]).astype(np.int16)
                    Q, pp = Q[lit], pp[lit]
                    if len(sel):
                        on_epi = epipolar_distances(F, pp, pixels[sel]) <= ON_EPIPOLAR_TAU_PX
                        for sweep in sweeps:
                            pos = pp[:, 0] if sweep == SWEEP_VERTICAL else pp[:, 1]
                            emitter.emit(sweep, pixels[sel], pos, bounce, Q, obj_idx[sel], pp, on_epi)
                        counts["two_bounce_pairs"] += int((bounce == 2).sum()) * len(sweeps)
                        counts["higher_bounce_pairs"] += int((bounce > 2).sum()) * len(sweeps)
                if not generate_higher_bounces:
                    break
                chain = found & mirrors[np.clip(o2, 0, None)] & ~scatters[np.clip(o2, 0, None)]
                if not np.any(chain):
                    break
                hp = ro[chain] + t2[chain, None] * rd[chain]
                rd = reflect_direction(rd[chain], n2[chain])
                ro = hp + rd * HIT_EPS_MM
                idx = idx[chain]
                mirror_hits = mirror_hits[chain] + 1

        # Specular-first paths (laser hits a mirror before any diffuse
        # surface); rejection fodder, generated only on request.
        if generate_higher_bounces:
            steps = schedule.steps_per_sweep
            kx, ky = np.meshgrid(np.arange(steps), np.arange(steps))
            ppix = np.stack([kx.ravel(), ky.ravel()], axis=1).astype(np.float64)
            pdirs = pixel_directions(projector, ppix)
            porig = np.broadcast_to(projector.center, pdirs.shape)
            t1, n1, o1 = intersect_ray_batch(porig, pdirs, objects)
            first_mirror = (o1 >= 0) & mirrors[np.clip(o1, 0, None)] & ~scatters[np.clip(o1, 0, None)]
            idx = np.where(first_mirror)[0]
            ro = porig[idx] + t1[idx, None] * pdirs[idx]
            rd = reflect_direction(pdirs[idx], n1[idx])
            ro = ro + rd * HIT_EPS_MM
            nbounce = np.ones(len(idx), dtype=np.int16)
            for _ in range(max_mirror_bounces):
                if len(idx) == 0:
                    break
                t2, n2, o2 = intersect_ray_batch(ro, rd, objects)
                found = o2 >= 0
                land = found & scatters[np.clip(o2, 0, None)]
                if np.any(land):
                    D = ro[land] + t2[land, None] * rd[land]
                    cam_pix, seen = _camera_sees(camera, D, objects)
                    sel = np.where(land)[0][seen]
                    if len(sel):
                        D_v = D[seen]
                        pix = cam_pix[seen]
                        pp = ppix[idx[sel]]
                        bounce = (nbounce[sel] + 1).astype(np.int16)
                        on_epi = epipolar_distances(F, pp, pix.astype(np.float64)) <= ON_EPIPOLAR_TAU_PX
                        for sweep in sweeps:
                            pos = pp[:, 0] if sweep == SWEEP_VERTICAL else pp[:, 1]
                            emitter.emit(sweep, pix, pos, bounce, D_v, o2[land][seen], pp, on_epi)
                        counts["higher_bounce_pairs"] += len(sel) * len(sweeps)
                chain = found & mirrors[np.clip(o2, 0, None)] & ~scatters[np.clip(o2, 0, None)]
                if not np.any(chain):
                    break
                hp = ro[chain] + t2[chain, None] * rd[chain]
                rd = reflect_direction(rd[chain], n2[chain])
                ro = hp + rd * HIT_EPS_MM
                idx = idx[chain]
                nbounce = nbounce[chain] + 1
        scan_span = schedule.total_us(len(sweeps))
    else:
        # Explicit point raster: one projector pixel at a time, each held for
        # one step; total scan time steps^2 * step_us versus 2 * steps * step_us.
        steps = schedule.steps_per_sweep
        ky, kx = np.meshgrid(np.arange(steps), np.arange(steps), indexing="ij")
        # raster order: all columns of row 0, then row 1, ...
        ppix = np.stack([kx.ravel(), ky.ravel()], axis=1).astype(np.float64)
        raster_step = np.arange(len(ppix), dtype=np.int64)
        pdirs = pixel_directions(projector, ppix)
        porig = np.broadcast_to(projector.center, pdirs.shape)
        t1, _, o1 = intersect_ray_batch(porig, pdirs, objects)
        scatters = np.array([o.material.scatters for o in objects])
        landed = (o1 >= 0) & scatters[np.clip(o1, 0, None)]
        D = porig[landed] + t1[landed, None] * pdirs[landed]
        cam_pix, seen = _camera_sees(camera, D, objects)
        sel = np.where(landed)[0][seen]
        if len(sel):
            pix = cam_pix[seen]
            counts["direct_pairs"] += len(sel)
            emitter.emit(
                SWEEP_RASTER,
                pix,
                ppix[sel][:, 0],
                np.ones(len(sel), dtype=np.int16),
                D[seen],
                o1[sel],
                ppix[sel],
                np.zeros(len(sel), dtype=bool),
                raster_step=raster_step[sel],
            )
        scan_span = int(round(steps * steps * schedule.step_us))

    stream, gt = emitter.result()
    if len(stream) == 0:
        warnings.append("no surface was illuminated; event stream is empty")

    if noise is not None and not noise.silent:
        span = (schedule.scan_start_us, schedule.scan_start_us + scan_span)
        stream, gt, noise_counts = _apply_noise(stream, gt, noise, camera, span)
        counts.update(noise_counts)

    order = stream.sort_order()
    stream = stream.take(order)
    gt = gt.take(order)
    return SimulationResult(stream, gt, counts, warnings, scan_span, mode)
