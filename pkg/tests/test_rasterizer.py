import numpy as np
import pytest

from stereo_pose.geometry import RIGHT, CameraIntrinsics, Pose, project_points, rot_x, rot_y
from stereo_pose.meshes import make_box, make_uv_sphere
from stereo_pose.rasterizer import (
    REGION_BACKGROUND,
    TriMesh,
    compute_visibility,
    merge_meshes,
    rasterize,
    region_partition,
    render_scene,
    self_occlusion_maps,
    shade_gray,
)


@pytest.fixture
def centred_K():
    # principal point between pixel centres, so symmetric scenes split evenly
    return CameraIntrinsics(fx=600.0, fy=600.0, cx=319.5, cy=239.5, width=640, height=480)


def _ray_residuals(pose, K, values, flags):

    """Distance of every valid plane intersection (mapped to the camera frame) from its pixel ray."""

    out = []
    for axis in range(3):
        others = [a for a in range(3) if a != axis]
        rows, cols = np.nonzero(flags[:, :, axis])
        obj = np.zeros((rows.size, 3))
        obj[:, others] = values[rows, cols, 2 * axis:2 * axis + 2]
        cam = pose.apply(obj)

        rays = np.stack([(cols - K.cx) / K.fx, (rows - K.cy) / K.fy, np.ones(rows.size)], axis=1)
        rays /= np.linalg.norm(rays, axis=1, keepdims=True)
        along = np.sum(cam * rays, axis=1)
        dist = np.linalg.norm(cam - along[:, None] * rays, axis=1)
        out.append((dist, np.linalg.norm(cam, axis=1)))

    return out


def test_cube_centre_pixel(K):
    cube = make_box(100.0, 100.0, 100.0)
    maps = rasterize(cube, Pose(np.eye(3), np.array([0.0, 0.0, 600.0])), K)

    assert maps.mask[240, 320]
    assert maps.depth[240, 320] == pytest.approx(550.0, abs=1e-6)
    np.testing.assert_allclose(maps.xyz[240, 320], [0.0, 0.0, -50.0], atol=1e-6)


def test_background_pixel(K):
    cube = make_box(100.0, 100.0, 100.0)
    maps = rasterize(cube, Pose(np.eye(3), np.array([0.0, 0.0, 600.0])), K)

    assert not maps.mask[10, 10]
    assert maps.depth[10, 10] == 0.0
    assert maps.region[10, 10] == REGION_BACKGROUND


def test_nearer_object_wins(K):
    cube = make_box(100.0, 100.0, 100.0)
    near, far = Pose(np.eye(3), np.array([0.0, 0.0, 600.0])), Pose(np.eye(3), np.array([0.0, 0.0, 900.0]))

    render = render_scene([(cube, far), (cube, near)], K, with_selfocc=False)

    assert render.maps.depth[240, 320] == pytest.approx(550.0, abs=1e-6)
    assert render.maps.instance[240, 320] == 1


def test_object_behind_camera_is_empty(K):
    cube = make_box(100.0, 100.0, 100.0)
    maps = rasterize(cube, Pose(np.eye(3), np.array([0.0, 0.0, -600.0])), K)

    assert not maps.mask.any()


def test_feature_map_invariants(K, library, rng):
    pose = Pose(rot_x(0.4) @ rot_y(-0.7), np.array([15.0, -10.0, 700.0]))

    for model in library.values():
        maps = rasterize(model.mesh, pose, K)
        rows, cols = np.nonzero(maps.mask)
        assert rows.size > 0

        cam = pose.apply(maps.xyz[rows, cols])
        pixels = project_points(cam, K)
        offsets = np.linalg.norm(pixels - np.stack([cols, rows], axis=1), axis=1)

        assert offsets.max() <= 0.71
        np.testing.assert_allclose(cam[:, 2], maps.depth[rows, cols], atol=1e-6)
        assert np.all((maps.depth > 0) == maps.mask)
        assert np.all(np.abs(maps.xyz[rows, cols]) <= 0.5 * model.mesh.extents + 1e-6)
        assert np.all(maps.xyz[~maps.mask] == 0.0)


def test_discretisation_stability(K, library):
    mesh = library[1].mesh
    pose = Pose(rot_x(0.3), np.array([0.0, 0.0, 600.0]))

    coarse = rasterize(mesh, pose, K).mask.sum()
    fine = rasterize(mesh, pose, K.scaled(2.0)).mask.sum() / 4.0

    assert abs(coarse - fine) / fine < 0.02


def test_single_object_fully_visible(K, cube):
    visibility = compute_visibility([(cube, Pose(np.eye(3), np.array([0.0, 0.0, 600.0])))], K)
    np.testing.assert_allclose(visibility, [1.0])


def test_fully_hidden_object(K, cube):
    big = make_box(400.0, 400.0, 10.0)
    scene = [
        (cube, Pose(np.eye(3), np.array([0.0, 0.0, 1000.0]))),
        (big, Pose(np.eye(3), np.array([0.0, 0.0, 500.0]))),
    ]
    visibility = compute_visibility(scene, K)

    assert visibility[0] == 0.0
    assert visibility[1] == 1.0


def test_half_covering_occluder(centred_K, cube):
    # occluder spans camera x in [-200, 0]: every target pixel left of the optical axis
    occluder = make_box(200.0, 600.0, 10.0)
    scene = [
        (cube, Pose(np.eye(3), np.array([0.0, 0.0, 1000.0]))),
        (occluder, Pose(np.eye(3), np.array([-100.0, 0.0, 600.0]))),
    ]
    visibility = compute_visibility(scene, centred_K)

    assert visibility[0] == pytest.approx(0.5, abs=0.02)


def test_object_outside_frustum_has_zero_visibility(K, cube):
    visibility = compute_visibility([(cube, Pose(np.eye(3), np.array([5000.0, 0.0, 600.0])))], K)
    assert visibility[0] == 0.0


@pytest.mark.parametrize('mesh_name', ['sphere', 'cube'])
def test_self_occlusion_points_lie_on_pixel_rays(K, mesh_name):
    mesh = make_uv_sphere(60.0) if mesh_name == 'sphere' else make_box(100.0, 100.0, 100.0)
    pose = Pose(rot_x(0.5) @ rot_y(0.8), np.array([20.0, 10.0, 650.0]))

    maps = rasterize(mesh, pose, K)
    values, flags = self_occlusion_maps(pose, K, maps.mask)

    assert flags[maps.mask].any()
    assert not flags[~maps.mask].any()
    for dist, norm in _ray_residuals(pose, K, values, flags):
        assert np.all(dist < 1e-6 + 1e-12 * norm)


def test_self_occlusion_ray_through_origin(K):
    # the principal ray hits the object origin: every intersection is the origin itself
    mesh = make_box(100.0, 100.0, 100.0)
    pose = Pose(rot_x(0.5) @ rot_y(0.8), np.array([0.0, 0.0, 600.0]))
    mask = np.zeros((K.height, K.width), dtype=bool)
    mask[240, 320] = True

    values, flags = self_occlusion_maps(pose, K, mask)

    assert flags[240, 320].all()
    np.testing.assert_allclose(values[240, 320], np.zeros(6), atol=1e-9)


def test_self_occlusion_parallel_plane_flagged(K):
    # identity rotation: the principal ray runs along object Z, parallel to X=0 and Y=0
    pose = Pose(np.eye(3), np.array([0.0, 0.0, 600.0]))
    mask = np.zeros((K.height, K.width), dtype=bool)
    mask[240, 320] = True

    _, flags = self_occlusion_maps(pose, K, mask)

    assert list(flags[240, 320]) == [False, False, True]


def test_region_partition_extremes(cube):
    assert np.all(region_partition(cube, 1) == 0)

    labels = region_partition(cube, cube.n_faces)
    assert sorted(labels.tolist()) == list(range(cube.n_faces))

    with pytest.raises(ValueError):
        region_partition(cube, cube.n_faces + 1)


def test_region_partition_is_deterministic(library):
    mesh = library[6].mesh
    np.testing.assert_array_equal(region_partition(mesh, 16, seed=3), region_partition(mesh, 16, seed=3))


def test_region_channel_follows_faces(K):
    mesh = make_box(100.0, 100.0, 100.0, subdiv=2)
    mesh = mesh.with_regions(region_partition(mesh, 8, seed=1))
    maps = rasterize(mesh, Pose(rot_x(0.3), np.array([0.0, 0.0, 600.0])), K)

    assert set(np.unique(maps.region[maps.mask])).issubset(set(mesh.region_of_face.tolist()))


def test_trimesh_validation():
    with pytest.raises(ValueError):
        TriMesh(np.zeros((3, 3)), np.array([[0, 1, 3]]))
    with pytest.raises(ValueError):
        TriMesh(np.zeros((0, 3)), np.array([[0, 1, 2]]))


def test_trimesh_diameter():
    cube = make_box(100.0, 100.0, 100.0)
    assert cube.diameter == pytest.approx(100.0 * np.sqrt(3.0))


def test_trimesh_diameter_of_flat_and_collinear_meshes():
    xs, ys = np.meshgrid(np.linspace(-50.0, 50.0, 21), np.linspace(-50.0, 50.0, 21))
    plane = np.stack([xs.ravel(), ys.ravel(), np.zeros(xs.size)], axis=1) @ rot_x(0.4).T
    faces = np.array([[i, i + 1, i + 21] for i in range(20)])
    sheet = TriMesh(plane, faces)

    assert sheet.diameter == pytest.approx(100.0 * np.sqrt(2.0))

    line = np.outer(np.linspace(-30.0, 30.0, 7), [1.0, 2.0, 2.0])
    rod = TriMesh(line, np.array([[0, 3, 6]]))

    assert rod.diameter == pytest.approx(180.0)


def test_merge_meshes_keeps_regions_distinct():
    a = make_box(10.0, 10.0, 10.0)
    b = make_box(10.0, 10.0, 10.0)
    merged = merge_meshes([a, b])

    assert merged.n_faces == a.n_faces + b.n_faces
    assert set(merged.region_of_face.tolist()) == {0, 1}


def test_shading_is_view_consistent(small_rig, library):
    pose = Pose(rot_x(0.2), np.array([0.0, 0.0, 600.0]))
    scene_l = [(library[1].mesh, pose)]
    scene_r = [(library[1].mesh, small_rig.to_view(pose, RIGHT))]

    left = render_scene(scene_l, small_rig.left, with_selfocc=False).maps
    right = render_scene(scene_r, small_rig.right, with_selfocc=False).maps
    img_l, img_r = shade_gray(left), shade_gray(right)

    assert img_l.dtype == np.uint8 and img_l.shape == left.shape
    # a surface point keeps its gray value across views
    rows, cols = np.nonzero(left.mask)
    d = small_rig.left.fx * small_rig.baseline / left.depth[rows, cols]
    cols_r = np.rint(cols - d).astype(int)
    inside = (cols_r >= 0) & right.mask[rows, np.clip(cols_r, 0, left.shape[1] - 1)]
    same = img_l[rows[inside], cols[inside]] == img_r[rows[inside], cols_r[inside]]

    assert same.mean() > 0.5
