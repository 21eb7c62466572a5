"""Eigenvalue machinery, similarity structure, verdicts, and contraction
certificates with their induced inverse and distance bounds."""

import numpy as np
import pytest

import predsens as ps
from predsens import casestudies as cs
from predsens import registry
from predsens.bilevel import as_system_stack


def test_eigenvalues_rotation_and_companion_and_diagonal():
    assert ps.match_eigenvalues(ps.eigenvalues([[0.0, -1.0], [1.0, 0.0]]),
                                [1j, -1j]) <= 1e-12
    expected = [-0.5 + np.sqrt(3) / 2 * 1j, -0.5 - np.sqrt(3) / 2 * 1j]
    assert ps.match_eigenvalues(ps.eigenvalues([[-1.0, -1.0], [1.0, 0.0]]),
                                expected) <= 1e-12
    assert ps.match_eigenvalues(ps.eigenvalues(np.diag([2.5, -3.0])),
                                [2.5, -3.0]) <= 1e-14


def test_eigenvalues_residuals_with_recomputed_eigenvectors():
    """For each eigenvalue, the smallest-singular-direction of (A - lam I)
    satisfies norm(A v - lam v) <= 1e-8 norm(A)."""
    rng = np.random.default_rng(8)
    for _ in range(20):
        a = rng.normal(size=(6, 6))
        for lam in ps.eigenvalues(a):
            _, _, vh = np.linalg.svd(a - lam * np.eye(6))
            v = vh[-1].conj()
            assert np.linalg.norm(a @ v - lam * v) <= 1e-8 * np.linalg.norm(a)


def test_eigenvalues_input_validation():
    with pytest.raises(ValueError):
        ps.eigenvalues(np.ones((2, 3)))
    with pytest.raises(ValueError):
        ps.eigenvalues([[np.inf, 0.0], [0.0, 1.0]])


def test_jacobian_r2_singular_perturbation(r2_stack):
    for eps in (0.3, 1.0):
        expected = np.array([[1.0, -2.0],
                             [0.5 / eps, -0.5 / eps]])
        scheme = ps.SingularPerturbation([1.0, eps])
        jac = ps.jacobian_at(r2_stack, scheme, [0.4, -0.2], method="assembled")
        assert np.allclose(jac, expected, atol=1e-12)
        jac_fd = ps.jacobian_at(r2_stack, scheme, [0.4, -0.2], method="fd")
        assert np.allclose(jac_fd, expected, atol=1e-9)


def test_jacobian_r2_predictive(r2_stack):
    jac = ps.jacobian_at(r2_stack, ps.PredictiveSensitivity(), [0.0, 0.0],
                         method="assembled")
    assert np.allclose(jac, [[1.0, -2.0], [1.5, -2.5]], atol=1e-12)
    assert ps.match_eigenvalues(ps.eigenvalues(jac), [-1.0, -0.5]) <= 1e-12


def test_jacobian_decoupled_plain_block_diagonal():
    stack = ps.linear_stack([1, 1], [[[[-1.0]], [[0.0]]], [[[0.0]], [[-2.0]]]])
    jac = ps.jacobian_at(stack, ps.Plain(), [0.7, 0.7], method="fd")
    assert np.allclose(jac, np.diag([-1.0, -2.0]), atol=1e-9)


def test_block_triangular_form_r2(r2_stack):
    form = ps.block_triangular_form(r2_stack, [0.0, 0.0])
    assert np.allclose(form.matrix, [[-1.0, -2.0], [0.0, -0.5]], atol=1e-12)
    assert form.similarity_gap <= 1e-10


def test_block_triangular_form_decoupled_identity_transform():
    stack = ps.linear_stack([1, 1], [[[[-1.0]], [[0.0]]], [[[0.0]], [[-2.0]]]])
    form = ps.block_triangular_form(stack, [0.0, 0.0])
    for t in form.transforms:
        assert np.array_equal(t, np.eye(2))


def test_block_triangular_form_cascade_companion_blocks():
    params = cs.CascadeParams()
    stack = cs.cascade_stack(params, x1_ref=1.0)
    form = ps.block_triangular_form(stack, cs.cascade_equilibrium(params, 1.0))
    expected = [-0.5 + np.sqrt(3) / 2 * 1j, -0.5 - np.sqrt(3) / 2 * 1j]
    for blk in form.diagonal_blocks:
        assert ps.match_eigenvalues(ps.eigenvalues(blk), expected) <= 1e-9
    # generic elimination reproduces the closed-form conditioned matrix
    assert np.allclose(form.matrix, cs.cascade_matrices(params).A_tilde, atol=1e-12)
    # strictly upper block triangular below the diagonal
    assert np.max(np.abs(form.matrix[2:, :2])) <= 1e-12


def test_block_triangular_form_requires_steady_state(r2_stack):
    with pytest.raises(ps.NotSteadyStateError):
        ps.block_triangular_form(r2_stack, [1.0, 0.0])


def test_classify_r2_across_the_stability_boundary(r2_stack):
    stable = ps.classify_local_stability(
        r2_stack, ps.SingularPerturbation([1.0, 0.49]), [0.0, 0.0])
    assert stable.verdict == ps.Verdict.EXPONENTIALLY_STABLE
    unstable = ps.classify_local_stability(
        r2_stack, ps.SingularPerturbation([1.0, 0.51]), [0.0, 0.0])
    assert unstable.verdict == ps.Verdict.UNSTABLE


def test_classify_marginal_band():
    stack = ps.linear_stack([1], [[[[0.0]]]])
    report = ps.classify_local_stability(stack, ps.Plain(), [0.0])
    assert report.verdict == ps.Verdict.MARGINAL


def test_classify_cascade_plain_unstable():
    params = cs.CascadeParams()
    stack = cs.cascade_stack(params, x1_ref=1.0)
    report = ps.classify_local_stability(stack, ps.Plain(),
                                         cs.cascade_equilibrium(params, 1.0))
    assert report.verdict == ps.Verdict.UNSTABLE


def test_classify_r2_predictive_block_spectrum(r2_stack):
    report = ps.classify_local_stability(r2_stack, ps.PredictiveSensitivity(),
                                         [0.0, 0.0])
    assert report.verdict == ps.Verdict.EXPONENTIALLY_STABLE
    assert ps.match_eigenvalues(report.eigenvalues, [-1.0, -0.5]) <= 1e-9
    assert report.block_spectrum_gap <= 1e-9
    assert ps.match_eigenvalues(np.concatenate(report.block_eigenvalues),
                                [-1.0, -0.5]) <= 1e-12


def test_classify_requires_steady_point(r2_stack):
    with pytest.raises(ps.NotSteadyStateError):
        ps.classify_local_stability(r2_stack, ps.Plain(), [0.5, 0.0])


def test_similarity_preservation_on_random_stacks(random_linear_suite):
    """Conditioned spectrum equals the union of the per-level reduced-block
    spectra (within 1e-6) at the origin equilibrium."""
    for stack in random_linear_suite[:25]:
        x0 = np.zeros(stack.total_dim)
        report = ps.classify_local_stability(stack, ps.PredictiveSensitivity(), x0)
        union = np.concatenate(report.block_eigenvalues)
        assert ps.match_eigenvalues(report.eigenvalues, union) <= 1e-6


def test_preconditioned_scaling_of_block_spectra(random_linear_suite):
    """Scalar gains h_i multiply the per-level spectra (within 1e-6)."""
    gains = [2.0, 3.0, 4.0]
    for stack in random_linear_suite[:25]:
        n = len(stack)
        x0 = np.zeros(stack.total_dim)
        base = ps.classify_local_stability(stack, ps.PredictiveSensitivity(), x0)
        pre = ps.classify_local_stability(stack, ps.Preconditioned(gains[:n]), x0)
        for i in range(n):
            scaled = gains[i] * base.block_eigenvalues[i]
            assert ps.match_eigenvalues(pre.block_eigenvalues[i], scaled) <= 1e-6


def test_discrete_step_spectrum_is_one_plus_blocks(random_linear_suite):
    """Eigenvalues of the conditioned update map are 1 + lambda for the
    continuous block eigenvalues (within 1e-6)."""
    for stack in random_linear_suite[:25]:
        x0 = np.zeros(stack.total_dim)
        report = ps.classify_local_stability(stack, ps.PredictiveSensitivity(), x0)
        union = np.concatenate(report.block_eigenvalues)
        step_jac = ps.finite_difference_jacobian(
            lambda y: ps.discrete_step(stack, ps.PredictiveSensitivity(), y), x0)
        assert ps.match_eigenvalues(ps.eigenvalues(step_jac), 1.0 + union) <= 1e-6


def test_contraction_certificate_r2(r2_stack):
    rng = np.random.default_rng(3)
    points = [rng.uniform(-5.0, 5.0, 2) for _ in range(100)]
    cert = ps.contraction_check(r2_stack, [1.0, 1.0], [2.0, 1.0], points)
    assert cert.holds and cert.bounds_verified
    assert cert.inverse_bound == [1.0, 2.0]
    assert max(cert.max_residual_eig) <= 1e-10
    # bound is tight for this stack: norm(inverse) hits it exactly
    assert np.allclose(cert.max_inverse_norm, [1.0, 2.0], atol=1e-12)


def test_contraction_fails_for_expanding_field():
    stack = ps.linear_stack([1], [[[[1.0]]]])
    cert = ps.contraction_check(stack, [1.0], [1.0], [[0.5]])
    assert not cert.holds


def test_contraction_fails_where_lower_hessian_decays():
    stack = as_system_stack(cs.bilevel_example_problem())
    far = [np.array([0.3, 3.5]), np.array([-0.2, 4.2]), np.array([0.1, -4.5])]
    cert = ps.contraction_check(stack, [1.0, 1.0], [1.0, 1.0], far)
    assert not cert.holds


def test_contraction_input_validation(r2_stack):
    with pytest.raises(ValueError):
        ps.contraction_check(r2_stack, [-1.0, 1.0], [1.0, 1.0], [[0.0, 0.0]])
    with pytest.raises(ValueError):
        ps.contraction_check(r2_stack, [1.0, 1.0], [0.0, 1.0], [[0.0, 0.0]])
    stack = cs.cascade_stack(cs.CascadeParams(), 0.0)
    with pytest.raises(ValueError):
        ps.contraction_check(stack, [np.array([[1.0, 0.5], [0.0, 1.0]]), 1.0],
                             [1.0, 1.0], [np.zeros(4)])


def test_distance_bounds_on_contractive_points(r2_stack):
    rng = np.random.default_rng(9)
    points = [rng.uniform(-5.0, 5.0, 2) for _ in range(100)]
    cert = ps.contraction_check(r2_stack, [1.0, 1.0], [2.0, 1.0], points)
    margins = ps.distance_bound_margins(r2_stack, cert, points)
    assert np.min(margins) >= -1e-9


def test_report_json_round_trip(r2_stack):
    report = ps.classify_local_stability(r2_stack, ps.PredictiveSensitivity(),
                                         [0.0, 0.0])
    data = report.to_json_dict()
    assert data["verdict"] == "ExponentiallyStable"
    assert data["eigenvalues"] == [[-1.0, 0.0], [-0.5, 0.0]]
    assert data["block_eigenvalues"] == [[[-1.0, 0.0]], [[-0.5, 0.0]]]
