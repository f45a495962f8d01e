import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from featsel import vision
from featsel.errors import DegenerateObservationError, InvalidInputError
from featsel.vision import CameraRig, Feature, euler_zyx, skew

vec3 = arrays(np.float64, 3, elements=st.floats(-5, 5))


def test_skew_trivial():
    np.testing.assert_array_equal(skew(np.zeros(3)), np.zeros((3, 3)))
    np.testing.assert_array_equal(skew([0, 0, 1]) @ [1, 0, 0], [0, 1, 0])


@given(vec3, vec3)
def test_skew_is_cross_product(u, v):
    # component formula written out independently of numpy's cross
    expect = np.array([u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]])
    np.testing.assert_allclose(skew(u) @ v, expect, atol=1e-12)


def test_euler_trivial():
    np.testing.assert_array_equal(euler_zyx(0, 0, 0), np.eye(3))
    np.testing.assert_allclose(euler_zyx(np.pi / 2, 0, 0) @ [1, 0, 0], [0, 1, 0], atol=1e-15)


@given(st.floats(-7, 7), st.floats(-7, 7), st.floats(-7, 7))
def test_euler_orthogonal(a, b, g):
    R = euler_zyx(a, b, g)
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-12)
    assert abs(np.linalg.det(R) - 1.0) < 1e-12


def test_rig_validation():
    with pytest.raises(InvalidInputError):
        CameraRig(sigma=0.0)
    with pytest.raises(InvalidInputError):
        CameraRig(R_c=2 * np.eye(3))


def test_observe_aligned_bearing_is_zero():
    rig = CameraRig(R_c=euler_zyx(0.1, 0.2, -0.3), x_c=[0.5, 0.0, 0.2])
    R = euler_zyx(1.0, -0.4, 0.2)
    x = np.array([1.0, 2.0, 3.0])
    f = Feature(0, [4.0, -1.0, 9.0])
    u = (R @ rig.R_c).T @ (f.y - x - R @ rig.x_c)
    u /= np.linalg.norm(u)
    residual = skew(u) @ (R @ rig.R_c).T @ (f.y - (x + R @ rig.x_c))
    np.testing.assert_allclose(residual, 0.0, atol=1e-12)
    # the linear form then equals the lever-arm constant -U R_c^T x_c
    z = vision.observe(rig, x, R, f, u_meas=u, noise=np.zeros(3))
    np.testing.assert_allclose(z, -skew(u) @ rig.R_c.T @ rig.x_c, atol=1e-12)


def test_observe_simple_case():
    z = vision.observe(CameraRig(), np.zeros(3), np.eye(3), Feature(0, [1, 0, 0]),
                       u_meas=np.array([1.0, 0, 0]), noise=np.zeros(3))
    np.testing.assert_array_equal(z, np.zeros(3))


@given(st.integers(0, 10_000))
def test_observe_matches_direct_formula(seed):
    rng = np.random.default_rng(seed)
    rig = CameraRig(R_c=euler_zyx(*rng.normal(size=3)), x_c=rng.normal(size=3))
    R = euler_zyx(*rng.normal(size=3))
    x, y = rng.normal(size=3), rng.normal(size=3) * 5
    u = rng.normal(size=3)
    u /= np.linalg.norm(u)
    eta = rng.normal(size=3)
    M = R @ rig.R_c
    d = M.T @ (x - y)
    expect = np.cross(u, d) + eta
    np.testing.assert_allclose(vision.observe(rig, x, R, Feature(0, y), u_meas=u, noise=eta), expect,
                               atol=1e-10)


def test_observe_degenerate():
    rig = CameraRig(x_c=[0.0, 0.0, 1.0])
    with pytest.raises(DegenerateObservationError):
        vision.observe(rig, np.zeros(3), np.eye(3), Feature(0, [0, 0, 1.0]))


def test_visible_cases():
    rig = CameraRig(fov_half_angles=(np.deg2rad(45), np.deg2rad(30)))
    I = np.eye(3)
    assert vision.visible(rig, np.zeros(3), I, Feature(0, [0, 0, 5]))
    assert not vision.visible(rig, np.zeros(3), I, Feature(0, [0, 0, -5]))
    # exactly on the horizontal half-angle boundary (closed set)
    assert vision.visible(rig, np.zeros(3), I, Feature(0, [5.0, 0, 5.0]))
    y = 5.0 * np.tan(np.deg2rad(30))
    assert vision.visible(rig, np.zeros(3), I, Feature(0, [0, y, 5.0]))
    assert not vision.visible(rig, np.zeros(3), I, Feature(0, [0, 1.01 * y, 5.0]))


def test_visibility_matrix_agrees(rng):
    rig = CameraRig()
    pos = rng.normal(size=(4, 3))
    rots = [euler_zyx(*rng.normal(size=3)) for _ in range(4)]
    ys = rng.normal(size=(30, 3)) * 4
    vm = vision.visibility_matrix(rig, pos, rots, ys)
    for k in range(4):
        for j in range(30):
            assert vm[k, j] == vision.visible(rig, pos[k], rots[k], Feature(j, ys[j]))


def _two_view_setup():
    rig = CameraRig(sigma=0.2)
    rots = [np.eye(3), euler_zyx(0.3, 0.1, -0.1), euler_zyx(-0.2, 0.0, 0.1)]
    means = np.array([[0.0, 0, 0], [1.0, 0.2, 0], [2.0, -0.1, 0.3]])
    return rig, rots, means


def test_contribution_zero_frames():
    rig, rots, means = _two_view_setup()
    c = vision.build_contribution(rig, rots, means, Feature(3, [0, 0, 5]), mask=[False] * 3)
    assert not c.triangulable and c.n_f == 0
    np.testing.assert_array_equal(c.Hf, 0.0)


def test_contribution_single_frame_not_triangulable():
    rig, rots, means = _two_view_setup()
    c = vision.build_contribution(rig, rots, means, Feature(3, [0, 0, 5]), mask=[True, False, False])
    assert not c.triangulable
    assert np.linalg.matrix_rank(c.E.T @ c.E) <= 2
    np.testing.assert_array_equal(c.Hf, 0.0)


def test_contribution_is_schur_complement():
    rig, rots, means = _two_view_setup()
    f = Feature(3, [1.0, 0.5, 6.0])
    c = vision.build_contribution(rig, rots, means, f, mask=[True, True, False])
    assert c.triangulable
    # joint information over (state, feature), then marginalize the feature block
    J = np.hstack([c.F, c.E]) / rig.sigma
    Jinfo = J.T @ J
    n = c.dim
    A, B, D = Jinfo[:n, :n], Jinfo[:n, n:], Jinfo[n:, n:]
    schur = A - B @ np.linalg.solve(D, B.T)
    np.testing.assert_allclose(c.Hf, schur, atol=1e-8)
    # explicit projector form of the vector map
    P = np.eye(c.E.shape[0]) - c.E @ np.linalg.solve(c.E.T @ c.E, c.E.T)
    np.testing.assert_allclose(c.Bf, c.F.T @ P / rig.sigma ** 2, atol=1e-8)
    np.testing.assert_allclose(c.Bf @ c.F, c.Hf, atol=1e-8)


def test_contribution_annihilates_common_translation(small_instance):
    shift = np.tile([0.3, -1.0, 2.0], small_instance.prior.dim // 3)
    for c in small_instance.contributions:
        assert np.abs(c.Hf @ shift).max() < 1e-10 * np.abs(c.Hf).max()
        assert np.linalg.eigvalsh(c.Hf)[0] > -1e-10 * np.trace(c.Hf)


def test_noise_scaling():
    rig, rots, means = _two_view_setup()
    f = Feature(3, [1.0, 0.5, 6.0])
    c1 = vision.build_contribution(rig, rots, means, f)
    rig2 = CameraRig(sigma=rig.sigma / np.sqrt(2))
    c2 = vision.build_contribution(rig2, rots, means, f)
    np.testing.assert_allclose(c2.Hf, 2 * c1.Hf, rtol=1e-10, atol=1e-12)
