import numpy as np
import pytest

from eventscan import formats
from eventscan.events import EventStream, GroundTruth
from eventscan.geometry import PinholeModel
from eventscan.scene import (
    Material,
    NoiseModel,
    Plane,
    ScanSchedule,
    SceneFile,
    SceneObject,
    Sphere,
    TriangleMesh,
    load_calibration_bundle,
    load_scene,
    save_calibration_bundle,
    save_scene,
)


def test_section_document_round_trip(tmp_path):
    sec = formats.Section("thing")
    sec.set("count", 7)
    sec.set("name", "hello world")
    sec.set("vec", np.array([1.5, -2.0, 1e-9]))
    sec.set("flag", True)
    path = tmp_path / "doc.txt"
    formats.write_sections(path, [sec, formats.Section("thing", {"count": "8"})], header="demo")
    back = formats.read_sections(path)
    assert [s.name for s in back] == ["thing", "thing"]
    assert back[0].get_int("count") == 7
    assert back[0].get_str("name") == "hello world"
    assert np.array_equal(back[0].get_floats("vec", 3), [1.5, -2.0, 1e-9])
    assert back[0].get_bool("flag") is True
    assert back[1].get_int("count") == 8


def test_section_errors(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("key = 1\n")
    with pytest.raises(formats.FormatError):
        formats.read_sections(p)
    p.write_text("[a]\nnonsense line\n")
    with pytest.raises(formats.FormatError):
        formats.read_sections(p)
    p.write_text("[a]\nk = 1\nk = 2\n")
    with pytest.raises(formats.FormatError):
        formats.read_sections(p)


def test_table_round_trip(tmp_path):
    path = tmp_path / "t.txt"
    a = np.array([1, 2, 3], dtype=np.int64)
    b = np.array([0.5, -1.25, 1e-17])
    formats.write_table(path, ["a", "b"], [a, b])
    cols, data = formats.read_table(path, ["a", "b"])
    assert cols == ["a", "b"]
    assert np.array_equal(data[0].astype(np.int64), a)
    assert np.array_equal(data[1].astype(np.float64), b)


def test_event_stream_text_and_binary_round_trip(tmp_path):
    ev = EventStream(
        np.array([5, 10, 10], dtype=np.int64),
        np.array([3, 2, 2], dtype=np.int32),
        np.array([1, 9, 9], dtype=np.int32),
        np.array([1, -1, 1], dtype=np.int8),
    )
    ev.save_text(tmp_path / "e.txt")
    back = EventStream.load_text(tmp_path / "e.txt")
    assert np.array_equal(back.t, ev.t) and np.array_equal(back.polarity, ev.polarity)
    ev.save_binary(tmp_path / "e.bin")
    size = (tmp_path / "e.bin").stat().st_size
    assert size == 16 * len(ev)
    back2 = EventStream.load_binary(tmp_path / "e.bin")
    assert np.array_equal(back2.x, ev.x) and np.array_equal(back2.t, ev.t)


def test_event_sort_order():
    ev = EventStream(
        np.array([10, 5, 10, 10]),
        np.array([1, 1, 0, 0]),
        np.array([2, 2, 2, 1]),
        np.array([1, 1, -1, 1]),
    )
    s = ev.take(ev.sort_order())
    assert s.t.tolist() == [5, 10, 10, 10]
    assert s.y.tolist() == [2, 1, 2, 2]  # ties broken by y then x then polarity
    assert s.x.tolist() == [1, 0, 0, 1]


def test_ground_truth_round_trip(tmp_path):
    gt = GroundTruth(
        bounce=np.array([1, 2, 0]),
        surface_point=np.array([[1.0, 2, 3], [4, 5, 6], [np.nan] * 3]),
        object_label=np.array([0, 1, -1]),
        projector_pixel=np.array([[10.5, 20.25], [1, 2], [np.nan] * 2]),
        on_epipolar=np.array([False, True, False]),
        sweep=np.array([0, 1, -1]),
        step=np.array([10, 20, -1]),
        step_time_us=np.array([100, 200, -1]),
        labels=("wall", "mirror"),
    )
    gt.save_text(tmp_path / "gt.txt")
    back = GroundTruth.load_text(tmp_path / "gt.txt")
    assert back.labels == ("wall", "mirror")
    assert np.array_equal(back.bounce, gt.bounce)
    assert np.allclose(back.surface_point[:2], gt.surface_point[:2])
    assert np.isnan(back.surface_point[2]).all()
    assert np.array_equal(back.on_epipolar, gt.on_epipolar)
    assert np.array_equal(back.step_time_us, gt.step_time_us)


def test_ply_round_trip(tmp_path):
    pts = np.array([[0.5, 1.5, 600.0], [-3.25, 0.0, 598.125]])
    formats.write_ply(tmp_path / "c.ply", pts, extra={"quality": np.array([0.9, 1.0])})
    back, extras = formats.read_ply(tmp_path / "c.ply")
    assert np.array_equal(back, pts)
    assert np.array_equal(extras["quality"], [0.9, 1.0])


def test_pfm_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.normal(size=(5, 7, 3)).astype(np.float32)
    formats.write_pfm(tmp_path / "n.pfm", img)
    back = formats.read_pfm(tmp_path / "n.pfm")
    assert back.shape == img.shape
    assert np.array_equal(back, img)
    mask = rng.random((5, 7)).astype(np.float32)
    formats.write_pfm(tmp_path / "m.pfm", mask)
    assert np.array_equal(formats.read_pfm(tmp_path / "m.pfm"), mask)


def test_scene_file_round_trip(tmp_path):
    cam = PinholeModel(fx=1200.0, fy=1210.0, cx=160.0, cy=161.0, width=320, height=320, skew=0.25, k1=-0.01)
    proj = PinholeModel(fx=900.0, fy=901.0, cx=400.5, cy=400.5, width=801, height=801,
                        rotation=np.eye(3), translation=np.array([1.0, 2.0, 3.0]))
    scene = SceneFile(
        camera=cam,
        projector=proj,
        schedule=ScanSchedule(801, 30000, 5000, 100),
        noise=NoiseModel(12.5, 1e-4, 0.125, 42),
        objects=[
            SceneObject(Plane([0, 0, 600.0], [0, 0, -1.0], [100.0, 120.0]), Material("diffuse", 0.8), "wall"),
            SceneObject(Sphere([1.0, 2.0, 500.0], 25.4), Material("specular", 0.0, 1.0), "ball"),
            SceneObject(
                TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0.0]], [[0, 1, 2]]),
                Material("shiny", 0.5, 0.5),
                "wedge",
            ),
        ],
    )
    save_scene(tmp_path / "s.scene", scene)
    back = load_scene(tmp_path / "s.scene")
    assert back.camera.fx == cam.fx and back.camera.k1 == cam.k1 and back.camera.skew == cam.skew
    assert back.schedule == scene.schedule
    assert back.noise == scene.noise
    assert [o.label for o in back.objects] == ["wall", "ball", "wedge"]
    assert isinstance(back.objects[2].shape, TriangleMesh)
    assert np.allclose(back.objects[1].shape.center, [1, 2, 500])
    # second round trip is byte-identical
    save_scene(tmp_path / "s2.scene", back)
    assert (tmp_path / "s.scene").read_bytes() == (tmp_path / "s2.scene").read_bytes()


def test_calibration_bundle_round_trip(tmp_path):
    cam = PinholeModel(fx=1450.0, fy=1430.5, cx=630.0, cy=370.0, width=1280, height=720, skew=0.4)
    proj = PinholeModel(fx=1000.0, fy=1005.0, cx=400.0, cy=398.0, width=801, height=801,
                        translation=np.array([-98.6, 0.0, 16.4]))
    save_calibration_bundle(tmp_path / "rig.calib", cam, proj)
    c2, p2 = load_calibration_bundle(tmp_path / "rig.calib")
    assert c2.fx == cam.fx and c2.skew == cam.skew
    assert np.array_equal(p2.translation, proj.translation)


def test_material_invariants():
    with pytest.raises(ValueError):
        Material("diffuse", 0.5, 0.5)
    with pytest.raises(ValueError):
        Material("specular", 0.5, 0.5)
    with pytest.raises(ValueError):
        Material("shiny", 0.0, 0.5)
    with pytest.raises(ValueError):
        Material("glass")
