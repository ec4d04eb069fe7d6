import numpy as np
import pytest

from eventscan.geometry import PinholeModel, unit
from eventscan.scene import Material, Plane, ScanSchedule, SceneObject

from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
SCENES = REPO / "scenes"
CONFIGS = REPO / "configs"


def aimed_projector(center, look_at, f, steps=801):
    """Projector model at ``center`` looking at ``look_at``, pixelation = steps."""
    center = np.asarray(center, dtype=float)
    z = unit(np.asarray(look_at, dtype=float) - center)
    x = unit(np.cross([0.0, 1.0, 0.0], z))
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    return PinholeModel(
        fx=f, fy=f, cx=steps / 2, cy=steps / 2, width=steps, height=steps,
        rotation=R, translation=-R @ center,
    )


def small_rig(steps=801, cam_px=400, cam_f=1200.0, proj_f=1000.0):
    camera = PinholeModel(fx=cam_f, fy=cam_f, cx=cam_px / 2, cy=cam_px / 2, width=cam_px, height=cam_px)
    projector = aimed_projector([100.0, 0.0, 0.0], [0.0, 0.0, 600.0], proj_f * steps / 801, steps)
    return camera, projector


def wall_object(z=600.0, extent=240.0, label="wall"):
    return SceneObject(Plane([0.0, 0.0, z], [0.0, 0.0, -1.0], [extent, extent]), Material("diffuse", 0.9), label)


def tilted_mirror(center=(60.0, 0.0, 500.0), target=(-40.0, 70.0, 600.0), extent=16.0, kind="specular"):
    center = np.asarray(center, dtype=float)
    normal = unit(unit(np.asarray(target, dtype=float) - center) - unit(center))
    material = Material("specular", 0.0, 1.0) if kind == "specular" else Material("shiny", 0.5, 0.5)
    return SceneObject(Plane(center, normal, [extent, extent]), material, "mirror"), normal


@pytest.fixture(scope="session")
def mirror_scan():
    """Shared dual scan of the wall + tilted mirror scene (801 steps)."""
    from eventscan.simulate import simulate_scan

    camera, projector = small_rig()
    mirror, normal = tilted_mirror()
    schedule = ScanSchedule(801, 120000, 5000)
    objects = [wall_object(), mirror]
    result = simulate_scan(objects, camera, projector, schedule)
    return {
        "camera": camera,
        "projector": projector,
        "schedule": schedule,
        "objects": objects,
        "mirror_normal": normal,
        "result": result,
    }


@pytest.fixture(scope="session")
def plane_scan():
    """Shared dual scan of a pure diffuse plane (801 steps)."""
    from eventscan.simulate import simulate_scan

    camera, projector = small_rig(cam_px=320)
    schedule = ScanSchedule(801, 120000, 5000)
    objects = [wall_object()]
    result = simulate_scan(objects, camera, projector, schedule)
    return {
        "camera": camera,
        "projector": projector,
        "schedule": schedule,
        "objects": objects,
        "result": result,
    }
