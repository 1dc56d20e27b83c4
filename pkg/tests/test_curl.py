import numpy as np
import pytest

from morreylab.curl import (
    Q, CurlProblem, EdgeSpace, checkerboard_init, compatible_projection, minimize_i2,
    write_curl_csv,
)
from morreylab.energy import MagicFamily
from morreylab.fem import FemProblem, build_mesh, stretch, trust_region_minimize

F0 = stretch(2.0)


@pytest.fixture(scope="module")
def space():
    return EdgeSpace(build_mesh("disc", 3))


def test_constant_field_is_reproduced_and_curl_free(space):
    d = space.interpolate_constant(F0)
    assert np.max(np.abs(space.field_at(d) - F0)) <= 1e-14
    assert np.max(np.abs(space.field_at(d, (0.7, 0.2, 0.1)) - F0)) <= 1e-14
    assert np.max(np.abs(space.curl(d))) <= 1e-12


def test_gradient_interpolant_is_curl_free(space):
    x, y = space.mesh.vertices.T
    phi = np.column_stack([x**2 + x * y - y, 0.5 * y**2 - 3 * x * y])
    assert np.max(np.abs(space.curl(space.interpolate_gradient(phi)))) <= 1e-12


def test_linear_field_hand_curl(space):
    # row 1 = (0, x1): curl = ∂1(x1) - ∂2(0) = 1; row 2 = 0
    d = space.interpolate_function(
        lambda x: np.stack([np.column_stack([0 * x[:, 0], x[:, 0]]), np.zeros((len(x), 2))], 1))
    assert np.allclose(space.curl(d), [1.0, 0.0], atol=1e-12)


def test_curl_equals_flux_divergence_of_rotated_field(space):
    rng = np.random.default_rng(0)
    for _ in range(5):
        d = rng.normal(size=2 * space.n_edges)
        c, dv = space.curl(d), space.div_by_flux(d)
        assert np.max(np.abs(c - dv)) <= 1e-12 * max(1.0, np.max(np.abs(c)))


def test_i2_equals_div_form(space):
    rng = np.random.default_rng(1)
    p = CurlProblem(space.mesh, F0, 0.7)
    u = 0.01 * rng.normal(size=p.n_dofs)
    u[~p.free] = 0
    bulk, pen = p.split(u)
    div = p.space.div_by_flux(p.dofs(u))
    pen_div = 0.5 * 0.7**2 * float(p.areas @ np.sum(div**2, 1))
    assert bulk + pen == pytest.approx(bulk + pen_div, abs=1e-12 * max(1.0, abs(bulk + pen)))
    assert p.total_energy(u) == pytest.approx(bulk + pen, rel=1e-14)


def test_boundary_transform(space):
    # tangential data P·τ = F0·τ is the normal data (PQ)·ν = (F0 Q)·ν with τ = Qν
    rng = np.random.default_rng(2)
    p = CurlProblem(space.mesh, F0, 1.0)
    u = 0.05 * rng.normal(size=p.n_dofs)
    u[~p.free] = 0
    dofs = p.dofs(u)
    m = space.mesh
    for e in np.flatnonzero(space.boundary)[:50]:
        t_idx, k = np.argwhere(space.tmap == e)[0]
        tri = m.triangles[t_idx]
        a, b = m.vertices[tri[k]], m.vertices[tri[(k + 1) % 3]]
        tvec = b - a
        nu = np.array([tvec[1], -tvec[0]]) / np.linalg.norm(tvec)
        tau = Q @ nu
        assert np.allclose(tau, tvec / np.linalg.norm(tvec), atol=1e-15)
        for s in (0.2, 0.5, 0.9):
            bary = np.zeros(3)
            bary[k], bary[(k + 1) % 3] = 1 - s, s
            P = space.field_at(dofs, bary)[t_idx]
            assert np.allclose(P @ tau, F0 @ tau, atol=1e-12)
            assert np.allclose((P @ Q) @ nu, (F0 @ Q) @ nu, atol=1e-12)


def test_operators_match_direct_evaluation(space):
    rng = np.random.default_rng(3)
    p = CurlProblem(space.mesh, F0, 0.5)
    d = rng.normal(size=p.n_dofs)
    assert np.allclose((p.A @ d).reshape(-1, 2, 2), space.field_at(d), atol=1e-13)
    assert np.allclose((p.C @ d).reshape(-1, 2), space.curl(d), atol=1e-11)


def test_gradient_and_hessian_fd(space):
    rng = np.random.default_rng(4)
    p = CurlProblem(space.mesh, F0, 0.8)
    u = 0.002 * rng.normal(size=p.n_dofs)
    u[~p.free] = 0
    ev = p.evaluate(u, 2)
    h = 1e-6
    for _ in range(3):
        d = np.zeros(p.n_dofs)
        d[p.free] = rng.normal(size=p.free.sum())
        fd = (p.total_energy(u + h * d) - p.total_energy(u - h * d)) / (2 * h)
        assert fd == pytest.approx(ev.gradient @ d, rel=1e-6)
        gd = (p.evaluate(u + h * d, 1).gradient - p.evaluate(u - h * d, 1).gradient) / (2 * h)
        assert np.max(np.abs(gd - ev.hessian @ d)) <= 1e-5 * max(1.0, np.max(np.abs(gd)))


def test_checkerboard_start(space):
    p = CurlProblem(space.mesh, F0, 1.0)
    assert np.array_equal(checkerboard_init(p, 4, 0.0), p.zero_field())
    u = checkerboard_init(p, 4, 0.5)
    bulk, pen = p.split(u)
    W = MagicFamily()
    assert 0.5 * (W.value(0.5 * F0) + W.value(1.5 * F0)) < W.value(F0)
    assert bulk < p.homogeneous_energy()
    assert pen > 0
    with pytest.raises(ValueError):
        checkerboard_init(p, 4, 1.0)
    with pytest.raises(ValueError):
        checkerboard_init(p, 0, 0.5)


def test_projection_of_constant_and_gradient(space):
    p = CurlProblem(space.mesh, F0, 1.0)
    theta, fem = compatible_projection(p, p.zero_field())
    assert np.max(np.abs(theta)) <= 1e-14
    # a compatible field with zero boundary perturbation projects onto itself
    fem0 = FemProblem(space.mesh, F0, MagicFamily())
    rng = np.random.default_rng(5)
    phi = np.zeros((space.mesh.n_vertices, 2))
    phi[~space.mesh.boundary_vertices()] = 0.01 * rng.normal(size=(fem0.free.sum() // 2, 2))
    u = space.interpolate_gradient(phi)
    th, _ = compatible_projection(p, u)
    assert np.allclose(th.reshape(-1, 2), phi, atol=1e-12)


def test_penalty_dominance_gap_decays_like_inverse_square():
    # constant F0 is not stationary for I2 (zero-trace fields can have non-zero
    # mean), so the relaxed gap is O(L_c^-2) rather than zero
    gaps = {lc: minimize_i2(lc, levels=2).gap for lc in (100.0, 1000.0)}
    assert all(g < 0 for g in gaps.values())
    assert gaps[100.0] * 100**2 == pytest.approx(gaps[1000.0] * 1000**2, rel=1e-2)
    assert gaps[1000.0] >= -1e-6


def test_homogeneous_state_not_stationary_for_i2():
    p = CurlProblem(build_mesh("disc", 2), F0, 10.0)
    ev = p.evaluate(p.zero_field(), 1)
    assert np.max(np.abs(ev.gradient[p.free])) > 1e-3


@pytest.fixture(scope="module")
def lc_runs():
    return {lc: minimize_i2(lc, levels=3) for lc in (0.5, 1.0, 2.0)}


def test_i2_monotone_in_lc_and_below_homogeneous(lc_runs):
    E = [lc_runs[lc].energy for lc in (0.5, 1.0, 2.0)]
    assert all(a <= b for a, b in zip(E, E[1:]))
    assert all(lc_runs[lc].gap < 0 for lc in lc_runs)
    for out in lc_runs.values():
        assert all(b <= a for a, b in zip(out.result.energies, out.result.energies[1:]))


def test_projections_not_below_homogeneous(lc_runs):
    for out in lc_runs.values():
        theta, fem = compatible_projection(out.problem, out.result.u)
        assert fem.gap(theta) >= 0


def test_projection_flows_back_home(lc_runs):
    out = lc_runs[0.5]
    theta, fem = compatible_projection(out.problem, out.result.u)
    res = trust_region_minimize(fem, theta)
    assert res.energy - fem.homogeneous_energy() >= -1e-8
    assert res.energy - fem.homogeneous_energy() <= 1e-6


def test_checkerboard_runs_and_csv(tmp_path):
    out = minimize_i2(0.5, levels=2, init="checkerboard:4:0.5")
    assert out.gap < 0
    theta, fem = compatible_projection(out.problem, out.result.u)
    assert fem.gap(theta) >= 0
    write_curl_csv(out, tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "element,det,distortion,curl_norm"
    assert len(lines) == 1 + out.problem.mesh.n_triangles
    with pytest.raises(ValueError):
        minimize_i2(0.0, levels=1)
