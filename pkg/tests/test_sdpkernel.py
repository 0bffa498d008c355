import numpy as np
import pytest

from deltaiss.sdpkernel import (DuplicateName, InconsistentEqualities, MissingAssignment,
                                SdpError, SdpProblem, SdpSolution, SolveOptions, UndeclaredVariable,
                                check_solution, presolve_eliminate, solve)


def scalar_problem(sigma_value=-1.0):
    """sigma pinned by an equality; 2 sigma + 0.1 + 0.5 theta <= 0, theta >= 0."""
    p = SdpProblem()
    p.declare_symmetric("theta", 1)
    p.declare_free("sigma", 1, 1)
    p.add_equality([("sigma", 0, 0, 1.0)], sigma_value, name="pin")
    p.add_lmi([[0.1]], [(None, "sigma", None), (None, "sigma", None, True),
                        ([[0.5]], "theta", None)], name="decay")
    p.add_psd_floor("theta", 0.0)
    return p


def test_scalar_feasible_range():
    sol = solve(scalar_problem())
    assert sol.status == "feasible" and sol.margin > 0
    theta = sol.assignment["theta"][0, 0]
    # 2(-1) + 0.1 + 0.5 theta <= 0  <=>  theta <= 3.8
    assert 0.0 <= theta <= 3.8 + 1e-9
    assert check_solution(scalar_problem(), sol).passed


def test_scalar_infeasible_with_positive_sigma():
    sol = solve(scalar_problem(1.0))
    assert sol.status == "infeasible"
    assert sol.solver_stats.get("most_violated") == "decay"


def test_check_solution_hand_values():
    p = scalar_problem()
    sol = SdpSolution({"theta": np.array([[1.0]]), "sigma": np.array([[-1.0]])}, "feasible", 0.0)
    rep = check_solution(p, sol)
    assert rep.lmis["decay"] == pytest.approx(-1.4, abs=1e-12)
    assert rep.equalities["pin"] == 0.0 and rep.passed
    bad = SdpSolution({"theta": np.array([[1.0]]), "sigma": np.array([[-0.9]])}, "feasible", 0.0)
    rep = check_solution(p, bad)
    assert rep.equalities["pin"] == pytest.approx(0.1, abs=1e-12)
    assert not rep.passed


def test_check_solution_missing_variable():
    with pytest.raises(MissingAssignment):
        check_solution(scalar_problem(), SdpSolution({"theta": np.eye(1)}, "feasible", 0.0))


def test_declaration_errors():
    p = SdpProblem()
    p.declare_free("X", 2, 2)
    with pytest.raises(DuplicateName):
        p.declare_symmetric("X", 2)
    with pytest.raises(UndeclaredVariable):
        p.add_equality([("Y", 0, 0, 1.0)], 0.0)
    with pytest.raises(SdpError):
        p.add_lmi(np.zeros((2, 2)), [(None, "X", None)])  # X alone is not symmetric
    with pytest.raises(SdpError):
        p.add_psd_floor("X", 0.0)


def test_symmetric_storage():
    p = SdpProblem()
    v = p.declare_symmetric("S", 3)
    assert v.size == 6
    M = np.array([[1.0, 2.0, 3.0], [2.0, 4.0, 5.0], [3.0, 5.0, 6.0]])
    np.testing.assert_array_equal(v.unpack(v.pack(M)), M)
    assert v.index(2, 0) == v.index(0, 2)


def test_presolve_eliminates_auxiliary_block():
    # theta core; a, b auxiliary with a + b = 1 and a - b = theta - 1
    p = SdpProblem()
    p.declare_symmetric("theta", 1)
    p.declare_free("ab", 2, 1)
    p.add_matrix_equality([([[1.0, 1.0]], "ab", None)], [[1.0]], name="sum")
    p.add_matrix_equality([([[1.0, -1.0]], "ab", None), ([[-1.0]], "theta", None)], [[-1.0]],
                          name="diff")
    p.add_lmi([[-1.0]], [([[1.0]], "theta", None)], name="cap")  # theta <= 1
    p.add_psd_floor("theta", 0.5)
    red = presolve_eliminate(p)
    assert red.n_reduced == 1
    assert red.aux_nullity == 0
    sol = solve(p)
    assert sol.status == "feasible"
    rep = check_solution(p, sol)
    assert rep.passed, rep.to_dict()
    th = sol.assignment["theta"][0, 0]
    np.testing.assert_allclose(sol.assignment["ab"].ravel(), [th / 2, 1 - th / 2], atol=1e-9)


def test_presolve_detects_inconsistency():
    p = SdpProblem()
    p.declare_symmetric("theta", 1)
    p.declare_free("a", 1, 1)
    p.add_equality([("a", 0, 0, 1.0)], 1.0)
    p.add_equality([("a", 0, 0, 2.0)], 3.0)
    p.add_psd_floor("theta", 0.0)
    with pytest.raises(InconsistentEqualities):
        presolve_eliminate(p)


def test_norm_bound_limits_free_variable():
    p = SdpProblem()
    p.declare_symmetric("theta", 1)
    p.declare_free("s", 1, 1)
    # maximize margin of s <= 0 alone would push s to -infinity; the cap stops it
    p.add_lmi([[0.0]], [(None, "s", None)], name="neg")
    p.add_norm_bound("s", 2.0)
    p.add_psd_floor("theta", 1.0)
    sol = solve(p, SolveOptions(margin_cap=10.0))
    assert sol.status == "feasible"
    assert abs(sol.assignment["s"][0, 0]) <= 2.0 + 1e-6


def test_problem_json_roundtrip_solves_identically():
    p = scalar_problem()
    q = SdpProblem.from_json(p.to_json())
    assert q.to_json() == p.to_json()
    a, b = solve(p), solve(q)
    np.testing.assert_allclose(a.assignment["theta"], b.assignment["theta"], atol=1e-9)
    back = SdpSolution.from_dict(a.to_dict())
    assert check_solution(p, back).passed
