import math
from collections import Counter
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from causticsim import geometry
from causticsim.errors import PlacementError, ValidationError
from causticsim.geometry import quat_mul, quat_rotate
from causticsim.rng import Stream
from causticsim.scene import dumps_scene, structural_diff
from causticsim.scenegen import (
    OVERLAP_TOLERANCE,
    CatalogItem,
    GenerationConfig,
    SettleProxy,
    generate_scene,
    make_proxy,
    place_props,
    settle_drop,
    stable_poses,
)

BACKDROPS = ("backdrop_00", "backdrop_01", "backdrop_02")
SKIES = ("sky_00", "sky_01", "sky_02")


def config(**kw) -> GenerationConfig:
    kw.setdefault("backdrop_bank", BACKDROPS)
    kw.setdefault("hdri_bank", SKIES)
    return GenerationConfig(**kw)


def footprint(catalog, o):
    return np.array(o.transform.translation[:2]), catalog.mesh(o.mesh).bounding_radius * o.transform.scale


def overlap_violations(scene, catalog) -> int:
    fps = [footprint(catalog, o) for o in scene.objects + scene.props]
    bad = 0
    for i in range(len(fps)):
        for j in range(i + 1, len(fps)):
            (a, ra), (b, rb) = fps[i], fps[j]
            if ra + rb - np.linalg.norm(a - b) > OVERLAP_TOLERANCE * min(ra, rb):
                bad += 1
    return bad


def lowest_point(catalog, o) -> float:
    v, _ = catalog.mesh(o.mesh).transformed(o.transform.translation, o.transform.rotation, o.transform.scale)
    return float(v[:, 2].min())


# generate_scene ---------------------------------------------------------------------


def test_zero_objects_leaves_only_backdrop_props_lights_cameras(catalog):
    cfg = config(object_count_range=(0, 0))
    for seed in range(5):
        s = generate_scene(cfg, seed, catalog)
        assert s.objects == ()
        assert s.backdrop.mesh == "backdrop_plane"
        assert len(s.lights) == 1 and len(s.cameras) == len(cfg.camera_rig)


def test_same_seed_same_scene(catalog):
    cfg = config()
    a, b = generate_scene(cfg, 1234, catalog), generate_scene(cfg, 1234, catalog)
    assert structural_diff(a, b) == []
    assert dumps_scene(a) == dumps_scene(b)


def test_different_seeds_differ(catalog):
    cfg = config()
    assert dumps_scene(generate_scene(cfg, 1, catalog)) != dumps_scene(generate_scene(cfg, 2, catalog))


def test_count_distribution_is_uniform(catalog):
    cfg = config(object_count_range=(3, 7), prop_count_range=(0, 0))
    counts = Counter(len(generate_scene(cfg, seed, catalog).objects) for seed in range(1000))
    assert set(counts) <= set(range(3, 8))
    for k in range(3, 8):
        assert abs(counts[k] / 1000 - 0.2) <= 0.05, counts


def test_banks_are_drawn_uniformly(catalog):
    cfg = config(object_count_range=(0, 0), prop_count_range=(0, 0))
    scenes = [generate_scene(cfg, seed, catalog) for seed in range(600)]
    backs = Counter(s.backdrop.material for s in scenes)
    skies = Counter(s.environment.id for s in scenes)
    assert len(skies) == 3 and len(backs) == 3
    for c in list(skies.values()) + list(backs.values()):
        assert abs(c / 600 - 1 / 3) <= 0.06


def test_objects_rest_on_the_plane(catalog):
    cfg = config(object_count_range=(2, 5))
    for seed in range(50):
        s = generate_scene(cfg, seed, catalog)
        for o in s.objects + s.props:
            assert abs(lowest_point(catalog, o)) <= 1e-4, (seed, o.mesh)


def test_rest_orientation_is_yaw_times_stable_pose(catalog):
    cfg = config(object_count_range=(3, 3), prop_count_range=(0, 0))
    s = generate_scene(cfg, 9, catalog)
    for o in s.objects:
        proxy = make_proxy(catalog.mesh(o.mesh), o.object_id)
        # a yaw about z cannot change where +z ends up vertically
        down = np.array(quat_rotate(o.transform.rotation, (0.0, 0.0, 1.0)))
        ups = [np.array(quat_rotate(q, (0.0, 0.0, 1.0))) for q in proxy.rest_orientations]
        assert any(abs(u[2] - down[2]) < 1e-9 for u in ups)


def test_no_footprint_overlap_over_100_seeds(catalog):
    cfg = config(object_count_range=(2, 5), prop_count_range=(1, 3))
    assert sum(overlap_violations(generate_scene(cfg, seed, catalog), catalog) for seed in range(100)) == 0


def test_placement_failure_is_reported(catalog):
    cfg = config(object_count_range=(30, 30), spawn_region=((0, 0, 0), (0.01, 0.01, 0.3)), max_attempts=5)
    with pytest.raises(PlacementError, match="spawn_region"):
        generate_scene(cfg, 0, catalog)


def test_prop_count_does_not_move_objects(catalog):
    few = config(prop_count_range=(0, 0))
    many = config(prop_count_range=(2, 3))
    for seed in range(20):
        a, b = generate_scene(few, seed, catalog), generate_scene(many, seed, catalog)
        assert a.objects == b.objects
        assert a.backdrop == b.backdrop and a.environment == b.environment


def test_object_range_does_not_change_bank_draw(catalog):
    a = generate_scene(config(object_count_range=(0, 0)), 5, catalog)
    b = generate_scene(config(object_count_range=(4, 4)), 5, catalog)
    assert a.environment == b.environment and a.backdrop == b.backdrop


def test_ids_are_unique_and_labels_set(catalog):
    s = generate_scene(config(object_count_range=(4, 4), prop_count_range=(2, 2)), 3, catalog)
    ids = [o.object_id for o in (s.backdrop,) + s.objects + s.props]
    assert len(ids) == len(set(ids))
    assert all(o.is_glass and o.semantic_class == "transparent" for o in s.objects)
    assert all(not o.is_glass and o.semantic_class == "prop" for o in s.props)


# settle_drop -------------------------------------------------------------------------


@pytest.fixture(scope="module")
def sphere_proxy():
    return make_proxy(geometry.icosphere(0.1, 5), 7)


def test_zero_impulse_keeps_spawn_xy(sphere_proxy):
    t = settle_drop(sphere_proxy, (0.123, -0.456), 0.0, Stream(3, "drop"))
    assert t.translation[0] == 0.123 and t.translation[1] == -0.456


def test_sphere_rests_at_its_radius(sphere_proxy):
    for i in range(20):
        t = settle_drop(sphere_proxy, (0.0, 0.0), 0.5, Stream(i, "drop"))
        assert abs(t.translation[2] - sphere_proxy.bounding_radius_m) <= 1e-4


def test_same_stream_same_transform(sphere_proxy):
    a = settle_drop(sphere_proxy, (0.1, 0.2), 0.7, Stream(11, "x"))
    b = settle_drop(sphere_proxy, (0.1, 0.2), 0.7, Stream(11, "x"))
    assert a == b


@settings(max_examples=200, deadline=None)
@given(
    seed=st.integers(0, 2**64 - 1),
    impulse=st.floats(0.0, 5.0),
    x=st.floats(-1, 1),
    y=st.floats(-1, 1),
)
def test_displacement_bounded_by_impulse(seed, impulse, x, y):
    proxy = SettleProxy(1, 0.05, ((1.0, 0.0, 0.0, 0.0),), (0.02,))
    t = settle_drop(proxy, (x, y), impulse, Stream(seed))
    d = math.hypot(t.translation[0] - x, t.translation[1] - y)
    assert d <= impulse * proxy.bounding_radius_m + 1e-12
    assert t.translation[2] == 0.02


def test_yaw_is_composed_with_rest_pose():
    q0 = geometry.quat_from_axis_angle((1.0, 0.0, 0.0), math.pi / 2)
    proxy = SettleProxy(1, 0.05, (q0,), (0.01,))
    t = settle_drop(proxy, (0.0, 0.0), 0.0, Stream(5))
    # the rest pose's image of +z stays horizontal whatever the yaw
    assert abs(quat_rotate(t.rotation, (0.0, 0.0, 1.0))[2]) < 1e-12
    # and the yaw part is a pure rotation about z
    yaw = quat_mul(t.rotation, (q0[0], -q0[1], -q0[2], -q0[3]))
    assert abs(yaw[1]) < 1e-12 and abs(yaw[2]) < 1e-12


# stable poses --------------------------------------------------------------------------


def test_cube_has_six_stable_faces():
    poses = stable_poses(geometry.box((0.1, 0.1, 0.1)))
    assert len(poses) == 6
    for _, h in poses:
        assert abs(h - 0.05) < 1e-9


def test_cone_never_rests_on_its_tip():
    cone = geometry.cone(0.05, 0.2)
    for q, h in stable_poses(cone):
        v = np.array([quat_rotate(q, p) for p in cone.vertices])
        assert abs(v[:, 2].min() + h) < 1e-12
        # at least three support vertices
        assert np.count_nonzero(np.abs(v[:, 2] - v[:, 2].min()) < 1e-9) >= 3


def test_slab_rest_heights():
    poses = stable_poses(geometry.box((0.3, 0.05, 0.01)))
    assert len(poses) == 6  # all faces of a box are stable
    heights = sorted(round(h, 9) for _, h in poses)
    assert heights == [0.005, 0.005, 0.025, 0.025, 0.15, 0.15]


def test_proxy_validation():
    with pytest.raises(ValidationError, match="bounding_radius_m"):
        SettleProxy(1, 0.0, ((1.0, 0.0, 0.0, 0.0),), (0.0,))
    with pytest.raises(ValidationError, match="rest_orientations"):
        SettleProxy(1, 0.1, (), ())
    with pytest.raises(ValidationError, match="rest_orientations"):
        SettleProxy(1, 0.1, ((2.0, 0.0, 0.0, 0.0),), (0.0,))


# place_props --------------------------------------------------------------------------


def test_zero_props_returns_equal_scene(catalog):
    base = generate_scene(config(prop_count_range=(0, 0)), 8, catalog)
    out = place_props(base, config(prop_count_range=(0, 0)), Stream(8, "props"), catalog)
    assert structural_diff(base, out) == []


def test_place_props_leaves_input_alone(catalog):
    base = generate_scene(config(prop_count_range=(0, 0)), 8, catalog)
    before = dumps_scene(base)
    out = place_props(base, config(prop_count_range=(2, 2)), Stream(8, "props"), catalog)
    assert dumps_scene(base) == before
    assert len(out.props) == 2 and out.objects == base.objects
    again = place_props(base, config(prop_count_range=(2, 2)), Stream(8, "props"), catalog)
    assert again == out


def test_props_avoid_glass(catalog):
    cfg = config(object_count_range=(3, 5), prop_count_range=(2, 2))
    for seed in range(100):
        assert overlap_violations(generate_scene(cfg, seed, catalog), catalog) == 0


# config --------------------------------------------------------------------------------


@pytest.mark.parametrize(
    "kw, field",
    [
        ({"object_count_range": (3, 2)}, "object_count_range"),
        ({"prop_count_range": (-1, 2)}, "prop_count_range"),
        ({"spawn_region": ((0, 0, 0), (0, 1, 1))}, "spawn_region"),
        ({"drop_height_m": 0.0}, "drop_height_m"),
        ({"impulse_intensity": -0.1}, "impulse_intensity"),
        ({"backdrop_bank": ()}, "backdrop_bank"),
        ({"hdri_bank": ()}, "hdri_bank"),
        ({"camera_rig": ()}, "camera_rig"),
        ({"max_attempts": 0}, "max_attempts"),
    ],
)
def test_config_invariants(kw, field):
    with pytest.raises(ValidationError, match=field):
        config(**kw)


def test_catalog_item_weight():
    with pytest.raises(ValidationError, match="weight"):
        CatalogItem("ball", 0.0)


def test_config_dict_round_trip():
    cfg = config(object_count_range=(2, 3), impulse_intensity=0.25)
    assert GenerationConfig.from_dict(cfg.to_dict()) == cfg


def test_config_unknown_field():
    with pytest.raises(ValidationError, match="generation.gravity"):
        GenerationConfig.from_dict({"gravity": 9.8})


def test_unknown_backdrop_key(catalog):
    with pytest.raises(ValidationError, match="backdrop_bank"):
        generate_scene(replace(config(), backdrop_bank=("nope",)), 0, catalog)
