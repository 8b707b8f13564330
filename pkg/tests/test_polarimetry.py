import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from polarsdf import polarimetry as pol

ETA_AIR, ETA_GLASS = 1.0, 1.5
angles = st.floats(-10.0, 10.0, allow_nan=False)


def random_unit(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def linear_stokes(e, x, y):
    """Stokes vector of a linearly polarized field ``e`` in the frame (x, y)."""
    ex, ey = np.sum(e * x, -1), np.sum(e * y, -1)
    return np.stack([ex**2 + ey**2, ex**2 - ey**2, 2 * ex * ey, np.zeros_like(ex)], -1)


# --------------------------------------------------------------------------
# Fresnel


def test_normal_incidence_amplitudes():
    fc = pol.fresnel_coefficients(ETA_AIR, ETA_GLASS, 1.0)
    assert fc.r_s == pytest.approx(-0.2, abs=1e-15)
    assert fc.r_p == pytest.approx(-0.2, abs=1e-15)
    assert fc.reflectance == pytest.approx(0.04, abs=1e-12)


def test_brewster_zero_p_amplitude():
    cos_b = np.cos(np.arctan(ETA_GLASS / ETA_AIR))
    fc = pol.fresnel_coefficients(ETA_AIR, ETA_GLASS, cos_b)
    assert abs(fc.r_p) < 1e-9
    assert abs(fc.r_s) > 0.1


def test_grazing_limit():
    r_s, r_p, _, _ = pol.fresnel_amplitudes(ETA_AIR, ETA_GLASS, 1e-9)
    assert abs(abs(r_s) - 1) < 1e-6 and abs(abs(r_p) - 1) < 1e-6


def test_amplitudes_match_angle_form():
    # sine/tangent form, valid away from normal incidence
    chi_i = np.linspace(0.05, 1.5, 200)
    chi_t = np.arcsin(ETA_AIR / ETA_GLASS * np.sin(chi_i))
    r_s_ref = -np.sin(chi_i - chi_t) / np.sin(chi_i + chi_t)
    r_p_ref = -np.tan(chi_i - chi_t) / np.tan(chi_i + chi_t)
    r_s, r_p, cos_t, tir = pol.fresnel_amplitudes(ETA_AIR, ETA_GLASS, np.cos(chi_i))
    assert not tir.any()
    np.testing.assert_allclose(r_s, r_s_ref, atol=1e-12)
    np.testing.assert_allclose(r_p, r_p_ref, atol=1e-12)
    np.testing.assert_allclose(cos_t, np.cos(chi_t), atol=1e-12)


def test_total_internal_reflection():
    cos_i = np.cos(np.radians(60))  # critical angle for 1.5 -> 1 is ~41.8 deg
    with pytest.raises(pol.TotalInternalReflection):
        pol.fresnel_coefficients(ETA_GLASS, ETA_AIR, cos_i)
    _, _, _, tir = pol.fresnel_amplitudes(ETA_GLASS, ETA_AIR, cos_i)
    assert tir
    assert pol.fresnel_reflectance(ETA_GLASS, ETA_AIR, cos_i) == pytest.approx(1.0)


def test_invalid_cosine_rejected():
    with pytest.raises(ValueError):
        pol.fresnel_coefficients(ETA_AIR, ETA_GLASS, 1.5)


def test_energy_split_and_transmission_throughput():
    rng = np.random.default_rng(1)
    cos_i = rng.uniform(1e-6, 1.0, 100_000)
    f = pol.fresnel_reflectance(ETA_AIR, ETA_GLASS, cos_i)
    assert np.all((f >= 0) & (f <= 1))
    assert np.max(np.abs(f + (1 - f) - 1)) <= 1e-12
    # transmitted power (with beam-area factor) closes the budget independently
    m_t = pol.mueller_transmit(ETA_AIR, ETA_GLASS, cos_i)
    np.testing.assert_allclose(m_t[..., 0, 0] + f, 1.0, atol=1e-12)


def test_fresnel_term_vector_form():
    n = np.array([0.0, 0.0, 1.0])
    chi = 0.7
    v_i = np.array([np.sin(chi), 0.0, -np.cos(chi)])  # propagating into the surface
    chi_t = np.arcsin(np.sin(chi) / ETA_GLASS)
    v_t = np.array([np.sin(chi_t), 0.0, -np.cos(chi_t)])
    expected = pol.fresnel_reflectance(ETA_AIR, ETA_GLASS, np.cos(chi))
    assert pol.fresnel_term(ETA_AIR, ETA_GLASS, v_i, v_t, n) == pytest.approx(expected, abs=1e-12)


# --------------------------------------------------------------------------
# Mueller matrices


def test_mueller_reflect_examples():
    m = pol.mueller_reflect((-0.2, -0.2))
    assert m[0, 0] == pytest.approx(0.04)
    assert m[0, 1] == 0 and m[1, 0] == 0
    assert np.all(pol.mueller_reflect((0.0, 0.0)) == 0)


def test_brewster_reflection_fully_polarized():
    cos_b = np.cos(np.arctan(ETA_GLASS))
    fc = pol.fresnel_coefficients(ETA_AIR, ETA_GLASS, cos_b)
    s = pol.apply(pol.mueller_reflect(fc), np.array([1.0, 0, 0, 0]))
    np.testing.assert_allclose(s[:2], [fc.r_s**2 / 2, fc.r_s**2 / 2], atol=1e-15)
    assert pol.stokes_to_dolp(s) == pytest.approx(1.0, abs=1e-9)


def test_unpolarized_reflection_intensity_is_reflectance():
    rng = np.random.default_rng(2)
    cos_i = rng.uniform(0, 1, 1000)
    r_s, r_p, _, _ = pol.fresnel_amplitudes(ETA_AIR, ETA_GLASS, cos_i)
    s = pol.apply(pol.mueller_reflect((r_s, r_p)), np.array([1.0, 0, 0, 0]))
    np.testing.assert_allclose(s[:, 0], pol.fresnel_reflectance(ETA_AIR, ETA_GLASS, cos_i), atol=1e-12)


# --------------------------------------------------------------------------
# Rotator


def test_rotator_examples():
    np.testing.assert_array_equal(pol.rotator(0.0), np.eye(4))
    out = pol.apply(pol.rotator(np.pi / 2), np.array([1.0, 1.0, 0.0, 0.0]))
    np.testing.assert_allclose(out, [1, -1, 0, 0], atol=1e-15)


def test_rotator_group_law_bulk():
    rng = np.random.default_rng(3)
    a, b = rng.uniform(-10, 10, (2, 10_000))
    lhs = pol.rotator(a) @ pol.rotator(b)
    assert np.max(np.abs(lhs - pol.rotator(a + b))) <= 1e-12


@given(angles, st.floats(-1, 1), st.floats(-1, 1))
def test_rotator_preserves_linear_power(theta, s1, s2):
    s = np.array([2.0, s1, s2, 0.3])
    out = pol.apply(pol.rotator(theta), s)
    assert out[0] == s[0] and out[3] == s[3]
    assert abs(out[1] ** 2 + out[2] ** 2 - (s1**2 + s2**2)) <= 1e-12


@given(angles)
def test_rotator_matches_rotating_the_field(theta):
    # a field at angle phi in the old frame sits at phi - theta in the new one
    phi = 0.4
    s_old = np.array([1.0, np.cos(2 * phi), np.sin(2 * phi), 0.0])
    s_new = np.array([1.0, np.cos(2 * (phi - theta)), np.sin(2 * (phi - theta)), 0.0])
    np.testing.assert_allclose(pol.apply(pol.rotator(theta), s_old), s_new, atol=1e-12)


# --------------------------------------------------------------------------
# Frames


def test_implicit_frame_canonical_and_orthonormal():
    f = pol.implicit_frame(np.array([0.0, 0.0, 1.0]))
    np.testing.assert_array_equal(f.x_axis, [1, 0, 0])
    np.testing.assert_array_equal(f.y_axis, [0, 1, 0])
    z = random_unit(np.random.default_rng(4), 1000)
    f = pol.implicit_frame(z)
    basis = np.stack([f.x_axis, f.y_axis, f.z_axis], axis=-1)
    gram = np.einsum("nia,nib->nab", basis, basis)
    assert np.max(np.abs(gram - np.eye(3))) < 1e-12
    # right-handed: x cross y = z
    np.testing.assert_allclose(np.cross(f.x_axis, f.y_axis), z, atol=1e-12)


def test_frame_in_identity_when_aligned():
    v_i = np.array([0.0, 0.0, 1.0])
    n = np.array([0.0, 1.0, -1.0]) / np.sqrt(2)  # n x v_i = +x
    np.testing.assert_allclose(np.cross(n, v_i) / np.linalg.norm(np.cross(n, v_i)), [1, 0, 0])
    np.testing.assert_allclose(pol.frame_in(v_i, n), np.eye(4), atol=1e-15)


def test_degenerate_frames_are_identity():
    v = np.array([0.3, -0.2, 0.9])
    v /= np.linalg.norm(v)
    np.testing.assert_array_equal(pol.frame_in(v, -v), np.eye(4))
    np.testing.assert_array_equal(pol.frame_out(v, v), np.eye(4))
    np.testing.assert_array_equal(pol.frame_camera(v, v), np.eye(4))


def _frame_angle_bruteforce(x_old, x_new, z):
    """Angle by which the basis (x_old, z x x_old) must turn about z to reach x_new."""
    y_old = np.cross(z, x_old)
    return np.arctan2(np.dot(x_new, y_old), np.dot(x_new, x_old))


def test_frame_in_counter_rotates_with_view_roll():
    rng = np.random.default_rng(5)
    for _ in range(50):
        v_i = random_unit(rng, 1)[0]
        n = random_unit(rng, 1)[0]
        x_imp = pol.implicit_frame(v_i).x_axis
        s = np.cross(n, v_i)
        s /= np.linalg.norm(s)
        angle = _frame_angle_bruteforce(x_imp, s, v_i)
        np.testing.assert_allclose(pol.frame_in(v_i, n), pol.rotator(angle), atol=1e-12)
        # rolling the frame being converted from by phi changes the angle by -phi
        phi = rng.uniform(-np.pi, np.pi)
        c, sn = np.cos(phi), np.sin(phi)
        x_rolled = c * x_imp + sn * np.cross(v_i, x_imp)
        angle2 = _frame_angle_bruteforce(x_rolled, s, v_i)
        assert np.isclose(np.mod(angle2 - angle + phi + np.pi, 2 * np.pi), np.pi, atol=1e-9)


def test_frame_out_mirror_symmetry():
    # incidence plane = x-z plane; mirror geometry about the normal
    n = np.array([0.0, 0.0, 1.0])
    chi = 0.6
    v_i = np.array([np.sin(chi), 0.0, -np.cos(chi)])
    v_o = np.array([np.sin(chi), 0.0, np.cos(chi)])
    d_in = _frame_angle_bruteforce(pol.implicit_frame(v_i).x_axis, np.cross(n, v_i) / np.sin(chi), v_i)
    s_out = np.cross(v_o, v_i)
    s_out /= np.linalg.norm(s_out)
    d_out = _frame_angle_bruteforce(s_out, pol.implicit_frame(v_o).x_axis, v_o)
    np.testing.assert_allclose(pol.frame_out(v_i, v_o), pol.rotator(d_out), atol=1e-12)
    assert abs(abs(d_in) - abs(d_out)) < 1e-12
    # opposite signs, compared modulo pi (the period of a Stokes rotator)
    assert np.sin(2 * (d_in + d_out)) == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(pol.rotator(d_in), pol.rotator(-d_out), atol=1e-12)


def test_frame_camera_optical_axis():
    v_o = np.array([0.0, 0.0, -1.0])  # light travelling toward a camera looking down +z
    up = np.array([0.0, -1.0, 0.0])
    x_img = np.cross(up, v_o)
    angle = _frame_angle_bruteforce(pol.implicit_frame(v_o).x_axis, x_img, v_o)
    np.testing.assert_allclose(pol.frame_camera(v_o, up), pol.rotator(angle), atol=1e-12)
    # flipping up turns the frame by pi, which acts as the identity on Stokes vectors
    np.testing.assert_allclose(pol.frame_camera(v_o, -up), pol.frame_camera(v_o, up), atol=1e-12)


def test_full_chain_matches_jones_oracle():
    """R_c R_o M_r R_i on unpolarized light vs explicit 3D field vectors."""
    rng = np.random.default_rng(6)
    n_geo = 2000
    n = random_unit(rng, n_geo)
    v_o = random_unit(rng, n_geo)
    flip = np.sum(v_o * n, -1) < 0
    v_o[flip] *= -1
    v_i = v_o - 2 * np.sum(v_o * n, -1, keepdims=True) * n
    up = random_unit(rng, n_geo)
    cos_i = np.sum(v_o * n, -1)
    r_s, r_p, _, _ = pol.fresnel_amplitudes(ETA_AIR, ETA_GLASS, cos_i)

    chain = pol.frame_camera(v_o, up) @ pol.frame_out(v_i, v_o) @ pol.mueller_reflect((r_s, r_p)) @ pol.frame_in(v_i, n)
    s = pol.apply(chain, np.array([1.0, 0, 0, 0]))

    s_hat = pol.normalize(np.cross(n, v_i))
    p_out = np.cross(v_o, s_hat)
    x_cam = pol.normalize(np.cross(up, v_o))
    y_cam = np.cross(v_o, x_cam)
    # unpolarized = incoherent sum of two orthogonal unit-power linear states
    oracle = 0.5 * (
        linear_stokes(r_s[:, None] * s_hat, x_cam, y_cam) + linear_stokes(r_p[:, None] * p_out, x_cam, y_cam)
    )
    np.testing.assert_allclose(s, oracle, atol=1e-12)


def test_chain_outputs_realizable_stokes():
    rng = np.random.default_rng(7)
    m = 10_000
    n = random_unit(rng, m)
    v_o = random_unit(rng, m)
    v_o[np.sum(v_o * n, -1) < 0] *= -1
    v_i = v_o - 2 * np.sum(v_o * n, -1, keepdims=True) * n
    up = random_unit(rng, m)
    r_s, r_p, _, _ = pol.fresnel_amplitudes(ETA_AIR, ETA_GLASS, np.sum(v_o * n, -1))
    chain = pol.frame_camera(v_o, up) @ pol.frame_out(v_i, v_o) @ pol.mueller_reflect((r_s, r_p)) @ pol.frame_in(v_i, n)
    # random realizable inputs, including circular components
    d = random_unit(rng, m) * rng.uniform(0, 1, (m, 1))
    s_in = np.concatenate([np.ones((m, 1)), d], axis=1)
    assert pol.is_realizable(pol.apply(chain, s_in)).all()


# --------------------------------------------------------------------------
# Stokes parameters


def test_stokes_parameter_examples():
    assert pol.stokes_to_dolp([1, 1, 0, 0]) == 1 and pol.stokes_to_aolp([1, 1, 0, 0]) == 0
    assert pol.stokes_to_aolp([1, 0, 1, 0]) == pytest.approx(np.pi / 4)
    assert pol.stokes_to_dolp([1, 0.6, 0.8, 0]) == pytest.approx(1.0)
    assert pol.stokes_to_intensity([2.5, 0, 0, 0]) == 2.5


def test_aolp_range_and_undefined():
    rng = np.random.default_rng(8)
    s = np.concatenate([np.ones((1000, 1)), rng.uniform(-0.7, 0.7, (1000, 2)), np.zeros((1000, 1))], 1)
    psi = pol.stokes_to_aolp(s)
    assert np.all((psi >= 0) & (psi < np.pi))
    assert not pol.aolp_defined([1.0, 0, 0, 0])
    assert pol.stokes_to_dolp([0.0, 0, 0, 0]) == 0


@given(st.floats(0.01, 100), st.floats(-1, 1), st.floats(-1, 1))
def test_aolp_and_dolp_scale_invariant(k, s1, s2):
    s = np.array([1.5, s1, s2, 0.0])
    assert pol.stokes_to_aolp(k * s) == pytest.approx(pol.stokes_to_aolp(s), abs=1e-9)
    assert pol.stokes_to_dolp(k * s) == pytest.approx(pol.stokes_to_dolp(s), abs=1e-12)


@settings(max_examples=200)
@given(st.floats(0, np.pi, exclude_max=True), st.floats(-20, 20))
def test_aolp_distance_is_pi_periodic(a, shift):
    d = pol.aolp_distance(a, a + shift)
    expected = np.mod(shift, np.pi)
    expected = min(expected, np.pi - expected)
    assert d == pytest.approx(expected, abs=1e-9)
    assert 0 <= d <= np.pi / 2 + 1e-12
