import numpy as np
import pytest

from scenepaint import meshbake as mb
from scenepaint import painter as pt, raster, scenegraph as sg
from conftest import origin_camera, quad_mesh
from oracles import ray_triangle


def constant_painter(color, class_count=3, bounds=None, kind="MLP"):
    cfg = pt.GeneratorConfig(kind=kind, layers=2, hidden=4, dim_ne=4, ne_hidden=4, dim_z=2, class_count=class_count)
    gen = pt.build_generator(cfg, seed=0, dtype=np.float64)
    gen.weights[-1][...] = 0.0
    gen.biases[-1][...] = np.arctanh(2 * np.asarray(color) - 1)
    gen.bounds = bounds
    return gen


def two_plane_scene():
    front = sg.ObjectInstance("front", "q.obj", quad_mesh(1.0), sg.translation((0, 0, 2)), 1)
    back = sg.ObjectInstance("back", "q.obj", quad_mesh(0.6), sg.translation((0, 0, 3)), 2)
    return sg.Scene((front, back), 3)


def test_bilinear_lookup_values():
    img = np.arange(12, dtype=float).reshape(2, 2, 3)
    assert np.array_equal(mb.bilinear_lookup(img, np.array([[0.5, 0.5]]))[0], img[0, 0])
    assert np.allclose(mb.bilinear_lookup(img, np.array([[1.0, 0.5]]))[0], (img[0, 0] + img[0, 1]) / 2)
    flat = np.full((3, 3, 3), 0.3)
    assert np.all(mb.bilinear_lookup(flat, np.random.default_rng(0).uniform(0, 3, (20, 2))) == 0.3)


@pytest.mark.parametrize("sampling", ["point", "bilinear"])
def test_constant_painter_colors_quad(sampling):
    quad = sg.ObjectInstance("q", "q.obj", quad_mesh(1.0), sg.translation((0, 0, 2)), 1)
    back = sg.ObjectInstance("b", "q.obj", quad_mesh(0.2), sg.translation((0, 0, 4)), 2)
    scene = sg.Scene((quad, back), 3)
    c = np.array([0.2, 0.6, 0.9])
    gen = constant_painter(c, bounds=scene.bounds)
    # f = 43 puts each corner in the inner half of its pixel, so the pixel
    # containing the projection samples the quad itself
    mesh = mb.bake(scene, gen, [origin_camera(64, 64, f=43.0)], np.zeros(2), sampling=sampling)
    seen = ~mesh.unpainted
    assert seen[:4].all()
    assert np.allclose(mesh.colors[seen], c, rtol=0, atol=1e-12)


def test_occluded_vertices_get_fallback():
    scene = two_plane_scene()
    gen = constant_painter([0.5, 0.5, 0.5], bounds=scene.bounds)
    fallback = np.array([[1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]])
    mesh = mb.bake(scene, gen, [origin_camera(64, 64, f=40.0)], np.zeros(2), fallback=fallback)
    back = mesh.object_index == 1
    assert mesh.unpainted[back].all()
    assert np.array_equal(mesh.colors[back], np.tile([0, 1.0, 0], (4, 1)))


def test_visibility_against_raycast_oracle():
    scene = two_plane_scene()
    rng = np.random.default_rng(3)
    cams = [origin_camera(48, 48, f=30.0)]
    for _ in range(5):
        eye = rng.uniform([-1.5, -1.5, -0.5], [1.5, 1.5, 0.5])
        cams.append(sg.Camera.from_fov(sg.look_at(eye, (0, 0, 2.5), up=(0, 1, 0)), 48, 48, 70.0))
    verts = np.concatenate([o.world_vertices() for o in scene.objects])
    for cam in cams:
        frames = raster.rasterize_view(scene, cam)
        ok, _ = mb.visible_samples(verts, frames, cam, 0.01)
        origin = cam.pose[:3, 3]
        for k, p in enumerate(verts):
            if not ok[k]:
                continue
            # an accepted vertex must not sit strictly behind another surface
            d = p - origin
            for o in scene.objects:
                w = o.world_vertices()
                for tri in o.mesh.triangles:
                    t = ray_triangle(origin, d, *w[tri])
                    assert t is None or t >= 1 - 0.01, (k, t)


def test_mlp_bake_equals_per_point_color(toy_scene, toy_cameras, toy_styles):
    gen = pt.build_generator(pt.preset("desk-mlp", class_count=toy_scene.class_count), seed=5)
    gen.bounds = toy_scene.bounds
    cams = toy_cameras[:6]
    mesh = mb.bake(toy_scene, gen, cams, toy_styles[0])
    class_ids = np.array([o.class_id for o in toy_scene.objects])[mesh.object_index]
    direct = mb.point_colors(gen, mesh.vertices, class_ids, toy_styles[0])
    seen = ~mesh.unpainted
    assert seen.sum() > 20
    assert np.array_equal(mesh.colors[seen], direct[seen])
    assert (mesh.sample_count > 1).any()


def test_point_color_matches_painted_pixel(toy_scene, toy_frames, toy_styles):
    gen = pt.build_generator(pt.preset("desk-mlp", class_count=toy_scene.class_count), seed=5)
    gen.bounds = toy_scene.bounds
    f = toy_frames[0]
    img = gen.paint_view(f, toy_styles[1])
    pts = f.coord[5:9, 10]
    direct = mb.point_colors(gen, pts, f.label[5:9, 10], toy_styles[1])
    assert np.array_equal(direct, img[5:9, 10].astype(np.float64))


def test_style_changes_bake(toy_scene, toy_cameras, toy_styles):
    gen = pt.build_generator(pt.preset("desk-mlp", class_count=toy_scene.class_count), seed=5)
    gen.bounds = toy_scene.bounds
    a = mb.bake(toy_scene, gen, toy_cameras[:3], toy_styles[0], sampling="bilinear")
    b = mb.bake(toy_scene, gen, toy_cameras[:3], toy_styles[1], sampling="bilinear")
    assert np.abs(a.colors - b.colors).mean() > 0


def test_errors(toy_scene, toy_cameras):
    gen = constant_painter([0.5] * 3, class_count=toy_scene.class_count)
    with pytest.raises(mb.BakeError):
        mb.bake(toy_scene, gen, [], np.zeros(2))
    with pytest.raises(mb.BakeError):
        mb.bake(toy_scene, gen, toy_cameras[:1], np.zeros(2))  # no frozen bounds
    gen.bounds = sg.AABB(np.full(3, 10.0), np.full(3, 11.0))
    with pytest.raises(mb.BakeError):
        mb.bake(toy_scene, gen, toy_cameras[:1], np.zeros(2))
    gen.bounds = toy_scene.bounds
    with pytest.raises(mb.BakeError):
        mb.bake(toy_scene, gen, toy_cameras[:1], np.zeros(2), sampling="nearest")


def test_export_round_trip_and_determinism(tmp_path, toy_scene, toy_cameras, toy_styles):
    gen = pt.build_generator(pt.preset("desk-mlp", class_count=toy_scene.class_count), seed=1)
    gen.bounds = toy_scene.bounds
    mesh = mb.bake(toy_scene, gen, toy_cameras[:2], toy_styles[0])
    mb.export_colored_mesh(mesh, tmp_path / "a.ply")
    mb.export_colored_mesh(mesh, tmp_path / "b.ply")
    assert (tmp_path / "a.ply").read_bytes() == (tmp_path / "b.ply").read_bytes()
    v, t, c = mb.read_colored_ply(tmp_path / "a.ply")
    assert np.array_equal(v, mesh.vertices)
    assert np.array_equal(t, mesh.triangles)
    assert np.abs(c - mesh.colors).max() <= 0.5 / 255 + 1e-12


def test_export_empty_mesh():
    empty = mb.ColoredMesh(np.zeros((0, 3)), np.zeros((0, 3), int), np.zeros((0, 3)), np.zeros(0, int), np.zeros(0, int))
    with pytest.raises(mb.BakeError):
        mb.colored_mesh_bytes(empty)
