"""The reference path itself: closed forms, trivial cases, independence."""

import ast
import pathlib

import numpy as np
import numpy.testing as npt

from thicknet import oracle


class TestFdGradient:
    def test_quadratic(self):
        grad = oracle.fd_gradient(lambda p: p[0] ** 2, [3.0])
        npt.assert_allclose(grad, [6.0], atol=1e-9)

    def test_sum(self):
        grad = oracle.fd_gradient(lambda p: sum(p), [1.0, -2.0, 7.0])
        npt.assert_allclose(grad, [1.0, 1.0, 1.0], atol=1e-9)

    def test_products_match_closed_form(self):
        rng = np.random.default_rng(0)
        p0 = rng.standard_normal(4).tolist()

        def f(p):
            return p[0] * p[1] + p[2] * p[3] ** 2

        expected = [p0[1], p0[0], p0[3] ** 2, 2 * p0[2] * p0[3]]
        npt.assert_allclose(oracle.fd_gradient(f, p0), expected, atol=1e-8)


class TestScalarThickLinear:
    def test_single_element(self):
        spec = oracle.ScalarThickLinear([[[2.0]]])
        assert oracle.oracle_thick_linear(spec, [3.0]) == [6.0]

    def test_identity_weights(self):
        eye = [[1.0, 0.0], [0.0, 1.0]]
        spec = oracle.ScalarThickLinear([eye])
        assert oracle.oracle_thick_linear(spec, [2.0, 3.0]) == [2.0, 3.0]

    def test_max_of_two_maps(self):
        eye = [[1.0, 0.0], [0.0, 1.0]]
        neg = [[-1.0, 0.0], [0.0, -1.0]]
        spec = oracle.ScalarThickLinear([eye, neg])
        assert oracle.oracle_thick_linear(spec, [2.0, -3.0]) == [2.0, 3.0]

    def test_gap_diagnostic(self):
        eye = [[1.0]]
        spec = oracle.ScalarThickLinear([eye, [[0.5]]])
        assert oracle.oracle_thick_linear_gap(spec, [2.0]) == 1.0
        single = oracle.ScalarThickLinear([eye])
        assert oracle.oracle_thick_linear_gap(single, [2.0]) == np.inf


class TestScalarCell:
    def test_zero_parameters_give_zero_state(self):
        n, m, r, b = 2, 3, 2, 4
        zero_lin = lambda rows, cols: oracle.ScalarThickLinear(
            [[[0.0] * cols for _ in range(rows)] for _ in range(n)]
        )
        cell = oracle.ScalarThickCell(
            wh={g: zero_lin(m, m) for g in "ifog"},
            wx={g: zero_lin(m, r) for g in "ifog"},
            bias={g: [0.0] * m for g in "ifog"},
        )
        x = [[1.0, -2.0]] * b
        h = [[0.0] * m] * b
        c = [[0.0] * m] * b
        h_new, c_new = oracle.oracle_thick_lstm_step(cell, x, h, c)
        assert all(v == 0.0 for row in h_new for v in row)
        assert all(v == 0.0 for row in c_new for v in row)


def test_max_rel_err_floors_denominator():
    assert oracle.max_rel_err([0.0], [1e-9]) < 1e-2
    assert oracle.max_rel_err([1.0], [1.0 + 1e-5]) < 2e-5
    assert oracle.max_rel_err([1.0], [2.0]) == 0.5


def test_oracle_module_is_structurally_independent():
    """The reference path must not import the kernels, numpy, or the tape."""
    src = pathlib.Path(oracle.__file__).read_text()
    tree = ast.parse(src)
    imported = set()
    for node in ast.walk(tree):
        if isinstance(node, ast.Import):
            imported.update(alias.name for alias in node.names)
        elif isinstance(node, ast.ImportFrom):
            imported.add(node.module or "")
    assert imported <= {"math", "dataclasses"}, imported
