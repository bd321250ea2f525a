import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from degsde.errors import EvaluationError, InvalidInputError
from degsde.models import (
    BUILTINS,
    ExprSyntaxError,
    UnknownIdentifierError,
    UnknownModelError,
    builtin,
    chain_matrix,
    load_model,
    model_from_json,
    parse_coeff_expr,
    validate,
)

P = np.array([2.0, 1.0, 0.0])

CORPUS = [
    "0", "1", "-1", "x", "-x", "x + y", "x - y - z", "x - (y - z)", "x * y / z", "x / (y * z)",
    "x^2", "-x^2", "(-x)^2", "2^3^2", "(2^3)^2", "x^-1", "2^-x", "-x^3 + sgn(y)",
    "sqrt(2 + tanh(x))", "abs(x - y) * 3", "exp(-x^2 / 2)", "sin(x) * cos(y)", "min(x, y) + max(y, z)",
    "1.5e-3 * x", "x / y / z", "x - y + z", "-(x + y)", "--x", "x * -y", "2 * (x + y) * z",
    "sgn(x) * abs(x)", "exp(sin(x + y))", "x^4 - 3 * x^2 + 1", "(x + 1)^2.5", "tanh(x * y) / 2",
    "max(min(x, 1), -1)", "cos(x)^2 + sin(x)^2", "1 / (1 + x^2)", "-(-(x))", "x * (y - (z - 1))",
    "3 - -x", "0.1 + 0.2", "y^3 / 3", "abs(-x)", "sqrt(x^2 + y^2 + z^2)", "exp(x) - 1",
    "2 + sin(x)", "x*y*z", "((x))", "1e3 * z - y",
]


def positive_points(n, seed):
    return np.random.default_rng(seed).uniform(0.1, 2.0, size=(n, 3))


def test_parser_examples():
    assert parse_coeff_expr("-x^3 + y/abs(y)")(P) == -7.0
    assert parse_coeff_expr("2^3^2")(P) == 512.0
    assert parse_coeff_expr("-x^2")(np.array([3.0, 0.0, 0.0])) == -9.0
    assert parse_coeff_expr("0").is_zero
    assert parse_coeff_expr("2 * 3 + 1").is_constant
    assert not parse_coeff_expr("x").is_constant


def test_sgn_is_zero_at_zero():
    assert parse_coeff_expr("sgn(y)")(np.zeros(3)) == 0.0


def test_round_trip_corpus():
    Z = positive_points(100, 0)
    for src in CORPUS:
        e = parse_coeff_expr(src)
        again = parse_coeff_expr(str(e))
        assert str(again) == str(e), src
        assert np.array_equal(e(Z), again(Z)), src


_atoms = st.sampled_from(["x", "y", "z", "1", "2", "0.5", "3"])


def _combine(children):
    binary = st.tuples(children, st.sampled_from(["+", "-", "*", "/", "^"]), children).map(
        lambda t: f"({t[0]}) {t[1]} ({t[2]})" if t[1] != "^" else f"({t[0]})^2"
    )
    unary = children.map(lambda s: f"-({s})")
    call = st.tuples(st.sampled_from(["tanh", "sin", "cos", "abs"]), children).map(lambda t: f"{t[0]}({t[1]})")
    return binary | unary | call


@settings(max_examples=200, deadline=None)
@given(st.recursive(_atoms, _combine, max_leaves=12))
def test_round_trip_random_expressions(src):
    e = parse_coeff_expr(src)
    printed = str(e)
    again = parse_coeff_expr(printed)
    assert str(again) == printed
    Z = positive_points(20, 1)
    try:
        a = e(Z)
    except EvaluationError:
        with pytest.raises(EvaluationError):
            again(Z)
        return
    assert np.array_equal(a, again(Z), equal_nan=True)


def test_syntax_error_offset_and_expected():
    with pytest.raises(ExprSyntaxError) as exc:
        parse_coeff_expr("x + * y")
    assert exc.value.offset == 4
    assert exc.value.expected
    with pytest.raises(ExprSyntaxError) as exc:
        parse_coeff_expr("(x + y")
    assert exc.value.offset == 6
    with pytest.raises(ExprSyntaxError):
        parse_coeff_expr("   ")


def test_unknown_identifier_lists_valid_names():
    with pytest.raises(UnknownIdentifierError) as exc:
        parse_coeff_expr("x + w")
    assert exc.value.offset == 4
    assert "x, y, z" in str(exc.value) and "tanh" in str(exc.value)


def test_evaluation_errors_carry_witness():
    Z = np.array([[1.0, 2.0, 0.0], [1.0, 0.0, 0.0]])
    with pytest.raises(EvaluationError) as exc:
        parse_coeff_expr("x / y")(Z)
    assert np.array_equal(exc.value.point, [1.0, 0.0, 0.0])
    assert exc.value.where == 2
    with pytest.raises(EvaluationError):
        parse_coeff_expr("sqrt(x - 2)")(Z)


def test_builtins_load():
    for name in BUILTINS:
        m = builtin(name)
        assert m.d >= 1
    m = builtin("paper-ex1")
    assert m.kalman.k == 2
    assert m.C == 12.0 and m.meta["C_empirical"] < m.C
    assert builtin("ou-constant", d=3, d0=1).kalman.k == 2
    assert builtin("ou-constant", d=1).kalman.k == 0


def test_chain_matrix_is_shift():
    A = chain_matrix(4, 2)
    assert A[2, 0] == 1 and A[3, 1] == 1 and A.sum() == 2


def test_unknown_model_error():
    with pytest.raises(UnknownModelError) as exc:
        load_model("no-such-model")
    assert "paper-ex1" in str(exc.value)
    with pytest.raises(InvalidInputError):
        builtin("kolmogorov-2d", d=3)


def test_json_model_round_trip(tmp_path):
    spec = {"d": 2, "d0": 1, "A": [[0, 0], [1, 0]], "b0": ["0"], "Q0": [["2 + sin(x)"]]}
    path = tmp_path / "sin.json"
    path.write_text(json.dumps(spec))
    m = load_model(str(path))
    assert m.b0 is None and m.kalman.k == 1
    Q = m.diffusion_matrix(np.array([[np.pi / 2, 0.0]]))
    assert Q[0, 0, 0] == pytest.approx(3.0)


def test_json_model_validation_errors():
    with pytest.raises(InvalidInputError):
        model_from_json({"d": 1, "d0": 2, "A": [[0]], "B0": [["1"]]})
    with pytest.raises(InvalidInputError):
        model_from_json({"d": 2, "d0": 1, "A": [[0]], "B0": [["1"]]})
    with pytest.raises(InvalidInputError):
        model_from_json({"d": 1, "d0": 1, "A": [[0]]})


def test_user_phi_derivatives_match_analytic():
    spec = {"d": 2, "d0": 1, "A": [[0, 0], [1, 0]], "B0": [["1"]], "phi": "x^2 + 3 * x * y + y^4 + 1"}
    phi = model_from_json(spec).phi
    z = np.array([[0.7, -0.4]])
    x, y = z[0]
    assert np.allclose(phi.gradient(z)[0], [2 * x + 3 * y, 3 * x + 4 * y**3], atol=1e-6)
    assert np.allclose(phi.hessian(z)[0], [[2, 3], [3, 12 * y**2]], atol=1e-4)


def test_validate_clean_and_violating():
    rep = validate(builtin("paper-ex1"), R=3.0)
    assert rep.ok and rep.kalman.k == 2
    assert rep.to_dict()["ellipticity"]["min_eigenvalue"] > 1.0
    bad = model_from_json({"d": 1, "d0": 1, "A": [[0]], "Q0": [["x"]]})
    rep = validate(bad, R=1.0)
    assert not rep.ok
    kinds = {v["kind"] for v in rep.violations}
    assert "ellipticity" in kinds
    degenerate = model_from_json({"d": 2, "d0": 1, "A": [[0, 0], [0, 0]], "B0": [["1"]]})
    assert any(v["kind"] == "kalman" for v in validate(degenerate).violations)


def test_validate_lyapunov_violation_for_small_constant():
    rep = validate(builtin("paper-ex1"), C=0.5)
    assert any(v["kind"] == "lyapunov" for v in rep.violations)
