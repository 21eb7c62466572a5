"""Stack construction, state plumbing, and finite-difference derivatives."""

import numpy as np
import pytest

import predsens as ps
from predsens import casestudies as cs
from predsens import registry
from predsens.sensitivity import jacobian_row


def test_flatten_split_bijection_bit_identical():
    rng = np.random.default_rng(0)
    for _ in range(50):
        dims = [int(d) for d in rng.integers(1, 5, size=rng.integers(1, 5))]
        x = rng.standard_normal(int(np.sum(dims))) * 10.0 ** rng.integers(-8, 8)
        p = ps.StatePoint.from_flat(dims, x)
        assert p.flatten().tobytes() == x.tobytes()
        q = ps.StatePoint.from_blocks(p.blocks)
        assert q.flatten().tobytes() == x.tobytes()


def test_state_point_blocks_are_read_only():
    p = ps.StatePoint.from_flat([1, 2], [1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        p.blocks[0][0] = 9.0


def test_validate_stack_well_formed():
    stack = ps.SystemStack([
        ps.Subsystem(1, lambda x: np.array([x[0] - 2 * x[1]])),
        ps.Subsystem(1, lambda x: np.array([0.5 * x[0] - 0.5 * x[1]])),
    ])
    report = ps.validate_stack(stack, [0.0, 0.0])
    assert report.ok and report.total_dim == 2
    assert report.analytic_jacobian == (False, False)


def test_validate_stack_flags_wrong_field_length():
    stack = ps.SystemStack([
        ps.Subsystem(1, lambda x: np.array([x[0]])),
        ps.Subsystem(1, lambda x: np.array([x[1], x[1]])),  # length 2, dim 1
    ])
    with pytest.raises(ps.StackDefinitionError) as err:
        ps.validate_stack(stack, [0.0, 0.0])
    assert err.value.index == 1


def test_validate_rlc_stack_reports_analytic_jacobians():
    stack = cs.rlc_stack(cs.RlcParams())
    report = ps.validate_stack(stack, np.zeros(8))
    assert report.total_dim == 8
    assert report.analytic_jacobian == (True, True)


def test_fd_jacobian_square():
    jac = ps.finite_difference_jacobian(lambda x: x ** 2, [2.0], step=1e-6)
    assert abs(jac[0, 0] - 4.0) <= 1e-6


def test_fd_jacobian_constant_field_is_zero():
    jac = ps.finite_difference_jacobian(lambda x: np.array([3.0, -1.0]), [0.3, -0.7])
    assert np.all(jac == 0.0)


def test_fd_jacobian_linear_field_exact():
    # central differences have no truncation error on a linear field; what
    # remains is subtraction rounding, eps * |f| / h ~ 1e-10
    a = np.array([[1.0, -2.0], [0.5, -0.5]])
    jac = ps.finite_difference_jacobian(lambda x: a @ x, [0.7, -1.3])
    assert np.allclose(jac, a, rtol=0, atol=1e-9)


def test_fd_jacobian_rejects_nonfinite_and_bad_step():
    with pytest.raises(ps.EvaluationError):
        ps.finite_difference_jacobian(lambda x: np.array([np.nan]), [1.0])
    with pytest.raises(ValueError):
        ps.finite_difference_jacobian(lambda x: x, [1.0], step=0.0)


@pytest.mark.parametrize("name", ["r2", "tracking", "linear3", "cascade", "rlc",
                                  "bilevel-example"])
def test_analytic_jacobians_match_central_differences(name):
    """Every analytic block agrees with the finite-difference block to
    1e-5 * (1 + norm) on 100 random points in [-2, 2]^total_dim."""
    stack = registry.get_stack(name)
    rng = np.random.default_rng(17)
    for _ in range(100):
        x = rng.uniform(-2.0, 2.0, stack.total_dim)
        for i, sub in enumerate(stack.subsystems):
            if sub.jacobian is None:
                continue
            analytic = np.hstack(jacobian_row(stack, i, x))
            fd = ps.finite_difference_jacobian(lambda y: stack.field_block(i, y), x)
            bound = 1e-5 * (1.0 + np.linalg.norm(analytic))
            assert np.linalg.norm(analytic - fd) <= bound


def test_scaled_stack_multiplies_fields_and_jacobians():
    stack = registry.get_stack("r2")
    scaled = stack.scaled(0.1)
    x = np.array([1.3, -0.4])
    assert np.allclose(scaled.field(x), 0.1 * stack.field(x), rtol=0, atol=0)
    row = jacobian_row(scaled, 1, x)
    assert np.allclose(np.hstack(row), 0.1 * np.array([[0.5, -0.5]]))


def test_linear_stack_validation_errors():
    with pytest.raises(ps.StackDefinitionError):
        ps.linear_stack([1, 1], [[[[1.0]], [[1.0]]]])  # missing a block row
    with pytest.raises(ps.StackDefinitionError) as err:
        ps.linear_stack([1, 2], [[[[1.0]], [[1.0, 2.0]]],
                                 [[[1.0], [1.0]], [[1.0, 2.0]]]])  # (1,2) wrong shape
    assert err.value.index == 1
