import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from scenepaint import encoding as enc
from scenepaint import raster, scenegraph as sg
from oracles import central_diff, max_rel_err


def test_pe_dimension_examples():
    assert enc.gamma_pe(np.zeros(3), 2).shape == (15,)
    assert [enc.pe_dim(F) for F in (2, 6, 10)] == [15, 39, 63]
    for F in range(11):
        assert enc.gamma_pe(np.zeros((4, 3)), F).shape == (4, 6 * F + 3)


@pytest.mark.parametrize("F", [0, 1, 3, 6])
def test_pe_at_origin(F):
    out = enc.gamma_pe(np.zeros(3), F)
    expect = np.array([0.0, 0, 0] + [0, 1] * 3 * F)
    assert np.array_equal(out, expect)


def test_pe_at_unit_x():
    out = enc.gamma_pe(np.array([1.0, 0, 0]), 1)
    assert np.allclose(out, [1, 0, 0, 0, -1, 0, 1, 0, 1], rtol=0, atol=1e-15)


def test_pe_layout_explicit():
    x = np.array([0.3, -0.7, 0.1])
    out = enc.gamma_pe(x, 3)
    k = 3
    for f in range(3):
        for axis in range(3):
            arg = 2.0**f * np.pi * x[axis]
            assert out[k] == np.sin(arg) and out[k + 1] == np.cos(arg)
            k += 2


def test_pe_negative_F():
    with pytest.raises(ValueError):
        enc.gamma_pe(np.zeros(3), -1)


def test_ne_zero_parameters():
    e = enc.NonlinearEncoder(np.zeros((4, 8)), np.zeros((9, 5)))
    assert not enc.gamma_ne(np.array([0.3, 0.2, -0.1]), e).any()


def test_ne_bias_path():
    W2 = np.zeros((9, 5))
    r = np.arange(5.0) + 1
    W2[-1] = r
    e = enc.NonlinearEncoder(np.zeros((4, 8)), W2)
    assert np.array_equal(enc.gamma_ne(np.array([0.3, 0.2, -0.1]), e), r)


def test_ne_matches_closed_form():
    rng = np.random.default_rng(1)
    e = enc.NonlinearEncoder.init(rng, hidden=6, dim_ne=4, dtype=np.float64)
    x = rng.uniform(-1, 1, size=3)
    pre = e.W1.T @ np.append(x, 1.0)
    act = np.where(pre > 0, pre, 0.2 * pre)
    assert np.allclose(enc.gamma_ne(x, e), e.W2.T @ np.append(act, 1.0), rtol=1e-14, atol=1e-15)


def test_ne_init_range():
    e = enc.NonlinearEncoder.init(np.random.default_rng(0), hidden=64, dim_ne=64)
    assert np.abs(e.W1).max() <= np.sqrt(1 / 4)
    assert np.abs(e.W2).max() <= np.sqrt(1 / 65)
    assert e.dim == 64


@pytest.mark.parametrize("seed", range(10))
def test_ne_gradients_finite_difference(seed):
    rng = np.random.default_rng(seed)
    e = enc.NonlinearEncoder.init(rng, hidden=7, dim_ne=5, dtype=np.float64)
    e.W1 *= 3.0  # push pre-activations away from the kink
    x = rng.uniform(-1, 1, size=(6, 3))
    w = rng.standard_normal((6, 5))

    def f():
        return float((e(x) * w).sum())

    out, cache = e.forward(x)
    if np.any(np.abs(cache[1]) < 1e-4):
        pytest.skip("pre-activation too close to the leaky-ReLU kink")
    gx, grads = e.backward(w, cache)
    assert max_rel_err(grads["enc.W1"], central_diff(f, e.W1)) < 1e-5
    assert max_rel_err(grads["enc.W2"], central_diff(f, e.W2)) < 1e-5
    assert max_rel_err(gx, central_diff(f, x)) < 1e-5


def test_one_hot():
    lab = np.array([[0, 1], [3, 2]])
    oh = enc.one_hot_labels(lab, 3)
    assert oh.shape == (2, 2, 3)
    assert not oh[0, 0].any()
    assert oh[1, 0].tolist() == [0, 0, 1]
    with pytest.raises(ValueError):
        enc.one_hot_labels(np.array([4]), 3)


# ------------------------------------------------------------ assembly

def small_frames(class_count=14, holes=False):
    H = W = 4
    rng = np.random.default_rng(2)
    label = rng.integers(1, class_count + 1, size=(H, W))
    coord = rng.uniform(-1, 1, size=(H, W, 3))
    depth = rng.uniform(1, 2, size=(H, W))
    if holes:
        label[0, 0] = 0
        depth[0, 0] = np.inf
        coord[0, 0] = 0
    return raster.FrameMaps(label, depth, coord, class_count)


BOUNDS = sg.AABB(-np.ones(3), np.ones(3))


def test_input_dimension_157():
    f = small_frames(14)
    e = enc.NonlinearEncoder.init(np.random.default_rng(0), 64, 64)
    X = enc.assemble_input(f, np.ones(64), e, 2, BOUNDS)
    assert X.shape == (4, 4, 157)
    assert 15 + 64 + 150 + 64 == 293


def test_input_channel_layout():
    f = small_frames(14)
    e = enc.NonlinearEncoder.init(np.random.default_rng(0), 64, 64)
    z = np.arange(64.0) / 64
    X = enc.assemble_input(f, z, e, 2, BOUNDS, dtype=np.float64)
    u = sg.normalize_coord(f.coord, BOUNDS)
    assert np.allclose(X[..., :15], enc.gamma_pe(u, 2))
    assert np.allclose(X[..., 15:79], e(u), atol=1e-6)
    assert np.array_equal(X[..., 79:93], enc.one_hot_labels(f.label, 14))
    assert np.allclose(X[..., 93:], np.broadcast_to(z, (4, 4, 64)))


def test_holes_require_flag():
    f = small_frames(holes=True)
    e = enc.NonlinearEncoder.init(np.random.default_rng(0), 8, 8)
    with pytest.raises(enc.CoverageError):
        enc.assemble_input(f, np.ones(4), e, 2, BOUNDS)
    X = enc.assemble_input(f, np.ones(4), e, 2, BOUNDS, allow_holes=True)
    assert not X[0, 0].any()
    assert X[1, 1].any()


def test_same_point_same_channels(toy_scene, toy_cameras):
    # render two views, find a pixel pair hitting (nearly) the same 3D point, then
    # force the coordinates equal: X(p) must depend only on (x, label, z).
    fa = raster.rasterize_view(toy_scene, toy_cameras[0])
    fb = raster.rasterize_view(toy_scene, toy_cameras[1])
    coord_b = fb.coord.copy()
    coord_b[5, 5] = fa.coord[10, 20]
    label_b = fb.label.copy()
    label_b[5, 5] = fa.label[10, 20]
    fb = raster.FrameMaps(label_b, fb.depth, coord_b, fb.class_count)
    e = enc.NonlinearEncoder.init(np.random.default_rng(0), 16, 16)
    z = np.random.default_rng(1).standard_normal(8)
    Xa = enc.assemble_input(fa, z, e, 2, toy_scene.bounds)
    Xb = enc.assemble_input(fb, z, e, 2, toy_scene.bounds)
    assert Xa[10, 20].tobytes() == Xb[5, 5].tobytes()


def test_assemble_is_pure(toy_frames, toy_scene):
    e = enc.NonlinearEncoder.init(np.random.default_rng(0), 16, 16)
    z = np.ones(8)
    a = enc.assemble_input(toy_frames[2], z, e, 2, toy_scene.bounds)
    b = enc.assemble_input(toy_frames[2], z, e, 2, toy_scene.bounds)
    assert a.tobytes() == b.tobytes()


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (5, 3), elements=st.floats(-1, 1)), st.integers(0, 10))
def test_pe_bounded_and_deterministic(x, F):
    out = enc.gamma_pe(x, F)
    assert out.shape == (5, 6 * F + 3)
    assert np.all(np.abs(out) <= 1.0)
    assert out.tobytes() == enc.gamma_pe(x.copy(), F).tobytes()
