import json
import math

import pytest
from hypothesis import given, strategies as st

from causticsim.errors import DomainError, MissingAssetError, ParseError, ValidationError
from causticsim.scene import (
    AreaLight,
    Camera,
    DiffuseMaterial,
    EnvironmentMap,
    GlassMaterial,
    ObjectInstance,
    Scene,
    Transform,
    dispersion_band_iors,
    dumps_scene,
    load_scene,
    loads_scene,
    save_scene,
    scene_to_dict,
    structural_diff,
)
from helpers import backdrop, ball_scene, orbit_camera

MINIMAL = {
    "seed": 3,
    "environment": {"id": "black"},
    "backdrop": {
        "object_id": 1, "mesh": "backdrop_plane", "semantic_class": "backdrop",
        "transform": {"translation": [0, 0, 0], "rotation": [1, 0, 0, 0]},
        "material": {"kind": "diffuse", "albedo": [0.5, 0.5, 0.5]},
    },
    "lights": [{"center": [0, 0, 2]}],
    "cameras": [{"pose": {"translation": [0, 0, 3], "rotation": [1, 0, 0, 0]}, "width": 8, "height": 6}],
}


def glass(oid, x=0.0):
    return ObjectInstance(oid, "ball", Transform((x, 0.0, 0.05)), GlassMaterial(), "transparent")


def test_minimal_scene_file(tmp_path, catalog):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(MINIMAL))
    s = load_scene(p, catalog)
    assert s.objects == () and s.props == ()
    assert s.depth_range_m == 10.0
    assert len(s.cameras) == 1 and s.cameras[0].width == 8


def test_save_of_load_is_canonical(tmp_path, catalog):
    p = tmp_path / "s.json"
    p.write_text(json.dumps(MINIMAL))
    s = load_scene(p, catalog)
    q = tmp_path / "t.json"
    save_scene(s, q)
    assert q.read_text() == dumps_scene(loads_scene(p.read_text()))
    save_scene(load_scene(q, catalog), tmp_path / "u.json")
    assert (tmp_path / "u.json").read_bytes() == q.read_bytes()


def test_duplicate_object_id_names_field(tmp_path):
    tree = dict(MINIMAL)
    tree["objects"] = [scene_to_dict(ball_scene(0.1))["objects"][0]] * 2
    with pytest.raises(ValidationError) as err:
        loads_scene(json.dumps(tree))
    assert "object_id" in err.value.field


def test_equal_scenes_identical_bytes(tmp_path):
    a, b = ball_scene(0.1), ball_scene(0.1)
    assert a is not b
    save_scene(a, tmp_path / "a.json")
    save_scene(b, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_nan_translation_rejected_and_nothing_written(tmp_path):
    with pytest.raises(ValidationError) as err:
        Transform((math.nan, 0.0, 0.0))
    assert err.value.field == "translation"
    s = ball_scene(0.1)
    # sneak a bad value past the constructor: save must still refuse
    object.__setattr__(s.objects[0].transform, "translation", (math.nan, 0.0, 0.0))
    with pytest.raises(ValueError):
        save_scene(s, tmp_path / "bad.json")
    assert not list(tmp_path.iterdir())


def test_nan_in_file_rejected():
    tree = json.loads(json.dumps(MINIMAL))
    tree["lights"][0]["center"] = [float("nan"), 0, 2]
    with pytest.raises(ValidationError) as err:
        loads_scene(json.dumps(tree))
    assert err.value.field == "lights[0].center"


def test_round_trip_structural():
    s = ball_scene(0.1, glass=GlassMaterial(roughness=0.2, thickness_mode="thin-walled", abbe_number=None))
    assert loads_scene(dumps_scene(s)) == s
    assert structural_diff(loads_scene(dumps_scene(s)), s) == []


def test_object_order_is_canonicalized():
    base = dict(seed=1, backdrop=backdrop(), environment=EnvironmentMap("black"))
    a = Scene(objects=(glass(2), glass(5, 0.3), glass(3, -0.3)), **base)
    b = Scene(objects=(glass(5, 0.3), glass(3, -0.3), glass(2)), **base)
    assert a == b
    assert dumps_scene(a) == dumps_scene(b)


@pytest.mark.parametrize("text", ["{", "[]", '{"format": "other/2"}', "not json"])
def test_parse_errors(text):
    with pytest.raises((ParseError, ValidationError)):
        loads_scene(text)


def test_unknown_field_rejected():
    tree = dict(MINIMAL, colour=1)
    with pytest.raises(ValidationError) as err:
        loads_scene(json.dumps(tree))
    assert err.value.field == "colour"


def test_missing_asset(tmp_path, catalog):
    tree = json.loads(json.dumps(MINIMAL))
    tree["environment"]["id"] = "no_such_sky"
    p = tmp_path / "s.json"
    p.write_text(json.dumps(tree))
    with pytest.raises(MissingAssetError):
        load_scene(p, catalog)


@pytest.mark.parametrize("make, field", [
    (lambda: Transform(rotation=(1.0, 0.1, 0.0, 0.0)), "rotation"),
    (lambda: Transform(scale=0.0), "scale"),
    (lambda: GlassMaterial(base_ior=1.0), "base_ior"),
    (lambda: GlassMaterial(roughness=1.5), "roughness"),
    (lambda: GlassMaterial(tint=(1.2, 0, 0)), "tint"),
    (lambda: GlassMaterial(thickness_mode="thick"), "thickness_mode"),
    (lambda: DiffuseMaterial(albedo=(-0.1, 0, 0)), "albedo"),
    (lambda: AreaLight(radius=-1.0), "radius"),
    (lambda: AreaLight(radiant_intensity=(-1, 0, 0)), "radiant_intensity"),
    (lambda: AreaLight(cone_half_angle=0.0), "cone_half_angle"),
    (lambda: Camera(width=0), "width"),
    (lambda: Camera(vertical_fov=math.pi), "vertical_fov"),
    (lambda: ObjectInstance(0, "ball", Transform(), GlassMaterial(), "transparent"), "object_id"),
    (lambda: Scene(seed=-1, backdrop=backdrop(), environment=EnvironmentMap("x")), "seed"),
    (lambda: Scene(seed=1, backdrop=backdrop(), environment=EnvironmentMap("x"), depth_range_m=0), "depth_range_m"),
])
def test_invariants_name_the_field(make, field):
    with pytest.raises(ValidationError) as err:
        make()
    assert err.value.field == field


def test_camera_helper_in_scene():
    s = ball_scene(0.1, camera=orbit_camera((0, 0, 0), 2.0, 45.0, size=16))
    assert s.cameras[0].width == 16


# dispersion ----------------------------------------------------------------------------

@pytest.mark.parametrize("ior, abbe, want", [
    (1.5, 30.0, (1.5 - 1 / 120, 1.5, 1.5 + 1 / 120)),
    (1.5, None, (1.5, 1.5, 1.5)),
    (1.5, math.inf, (1.5, 1.5, 1.5)),
    (2.0, 20.0, (1.975, 2.0, 2.025)),
])
def test_band_iors(ior, abbe, want):
    assert dispersion_band_iors(ior, abbe) == pytest.approx(want, abs=1e-15)


def test_band_iors_domain():
    with pytest.raises(DomainError):
        dispersion_band_iors(1.5, 0.0)
    with pytest.raises(DomainError):
        dispersion_band_iors(1.5, -3.0)


@given(st.floats(1.01, 3.0), st.floats(1.0, 100.0), st.floats(1.0, 100.0))
def test_band_spread_shrinks_with_abbe(ior, a, b):
    lo, hi = sorted((a, b))
    r1, g1, b1 = dispersion_band_iors(ior, lo)
    r2, g2, b2 = dispersion_band_iors(ior, hi)
    assert r1 <= g1 <= b1 and g1 == ior
    assert b1 - r1 == pytest.approx((ior - 1) / lo)
    if hi > lo * (1 + 1e-9):
        assert b2 - r2 < b1 - r1
