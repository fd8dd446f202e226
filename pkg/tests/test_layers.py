"""Layer semantics: thick linear maps, the cells, stacking, checkpoints."""

import numpy as np
import numpy.testing as npt
import pytest

import thicknet as tn
from thicknet import layers, oracle
from thicknet.errors import ArgumentError, DimensionError, FormatError, NumericError
from thicknet.layers import GATES, LSTMCell, RNNStack, ThickLinear, ThickLSTMCell


def thick_linear_spec(layer):
    return oracle.ScalarThickLinear(
        [w.tolist() for w in layer.weights], layer.reduction
    )


def thick_cell_spec(cell):
    return oracle.ScalarThickCell(
        wh={g: thick_linear_spec(cell.wh[g]) for g in GATES},
        wx={g: thick_linear_spec(cell.wx[g]) for g in GATES},
        bias={g: cell.bias[g].data.tolist() for g in GATES},
        scale={g: cell.scale[g].data.tolist() for g in GATES},
        identity_bn=cell.identity_bn,
    )


class TestThickLinear:
    def test_identity_weight_thickness_one(self):
        layer = ThickLinear(2, 2, 1, rng=np.random.default_rng(0))
        layer.w.data[0] = np.eye(2)
        npt.assert_array_equal(layer.forward(tn.Tensor([2.0, 3.0])).data, [2.0, 3.0])

    def test_max_of_identity_and_negation(self):
        layer = ThickLinear(2, 2, 2, rng=np.random.default_rng(0))
        layer.w.data[0] = np.eye(2)
        layer.w.data[1] = -np.eye(2)
        npt.assert_array_equal(layer.forward(tn.Tensor([2.0, -3.0])).data, [2.0, 3.0])

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(40):
            n, m, r = rng.integers(1, 5), rng.integers(1, 6), rng.integers(1, 6)
            layer = ThickLinear(r, m, n, rng=rng)
            x = rng.standard_normal(r)
            got = layer.forward(tn.Tensor(x)).data
            want = oracle.oracle_thick_linear(thick_linear_spec(layer), x.tolist())
            npt.assert_allclose(got, want, atol=1e-12)

    def test_spec_conversion_round_trip(self):
        layer = ThickLinear(3, 4, 2, rng=np.random.default_rng(2))
        spec = thick_linear_spec(layer)
        npt.assert_array_equal(np.array(spec.weights), layer.w.data)
        assert (spec.thickness, spec.out_dim, spec.in_dim) == (2, 4, 3)

    def test_thickness_one_bitwise_equals_single_matmul(self):
        rng = np.random.default_rng(3)
        for reduction in ("max", "mean", "random"):
            layer = ThickLinear(5, 4, 1, reduction, rng)
            x = rng.standard_normal((6, 5))
            out = layer.forward(tn.Tensor(x), rng=np.random.default_rng(0))
            assert np.array_equal(out.data, x @ layer.w.data[0].T)

    def test_max_dominates_mean(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            layer = ThickLinear(4, 3, 3, "max", rng)
            x = tn.Tensor(rng.standard_normal((5, 4)))
            max_out = layer.forward(x).data
            layer.reduction = "mean"
            mean_out = layer.forward(x).data
            layer.reduction = "max"
            assert np.all(max_out >= mean_out - 1e-12)

    def test_positive_scaling_equivariance(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            layer = ThickLinear(4, 3, 3, "max", rng)
            x = tn.Tensor(rng.standard_normal((2, 4)))
            base = layer.forward(x).data
            c = float(rng.uniform(0.1, 9.0))
            layer.w.data *= c
            scaled = layer.forward(x).data
            layer.w.data /= c
            npt.assert_allclose(scaled, c * base, rtol=1e-12)

    def test_width_mismatch(self):
        layer = ThickLinear(3, 2, 2, rng=np.random.default_rng(6))
        with pytest.raises(DimensionError):
            layer.forward(tn.Tensor(np.ones((4, 5))))


class TestInitParams:
    def test_bound_for_fan_two_two(self):
        rng = np.random.default_rng(7)
        t = layers.init_params((2000,), 2, 2, rng)
        bound = np.sqrt(6.0 / 4.0)
        assert np.all(np.abs(t.data) <= bound)
        assert np.abs(t.data).max() > 0.9 * bound  # actually fills the range

    def test_same_seed_bit_identical(self):
        a = layers.init_params((3, 4), 3, 4, np.random.default_rng(11))
        b = layers.init_params((3, 4), 3, 4, np.random.default_rng(11))
        assert np.array_equal(a.data, b.data)

    def test_forget_bias_is_ones(self):
        cell = ThickLSTMCell(2, 5, 2, rng=np.random.default_rng(8))
        npt.assert_array_equal(cell.bias["f"].data, np.ones(5))
        for gate in ("i", "o", "g"):
            npt.assert_array_equal(cell.bias[gate].data, np.zeros(5))

    def test_lstm_forget_block_is_ones(self):
        cell = LSTMCell(2, 4, np.random.default_rng(9))
        npt.assert_array_equal(cell.b.data[4:8], np.ones(4))
        npt.assert_array_equal(cell.b.data[:4], np.zeros(4))
        npt.assert_array_equal(cell.b.data[8:], np.zeros(8))


class TestThickCell:
    def test_zero_parameters_zero_state(self):
        cell = ThickLSTMCell(2, 3, 2, rng=np.random.default_rng(10))
        for gate in GATES:
            cell.wh[gate].w.data[:] = 0.0
            cell.wx[gate].w.data[:] = 0.0
            cell.bias[gate].data[:] = 0.0
        h, c = cell.step(tn.Tensor(np.random.randn(4, 2)), tn.zeros((4, 3)), tn.zeros((4, 3)))
        npt.assert_array_equal(h.data, np.zeros((4, 3)))
        npt.assert_array_equal(c.data, np.zeros((4, 3)))

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(11)
        cell = ThickLSTMCell(2, 3, 2, rng=rng)
        x = rng.standard_normal((4, 2))
        h0 = rng.standard_normal((4, 3))
        c0 = rng.standard_normal((4, 3))
        h, c = cell.step(tn.Tensor(x), tn.Tensor(h0), tn.Tensor(c0), mode="train")
        h_ref, c_ref = oracle.oracle_thick_lstm_step(
            thick_cell_spec(cell), x.tolist(), h0.tolist(), c0.tolist()
        )
        npt.assert_allclose(h.data, h_ref, atol=1e-10)
        npt.assert_allclose(c.data, c_ref, atol=1e-10)

    def test_thickness_one_identity_bn_matches_relu_lstm(self):
        """With BN bypassed and n=1 the cell is a plain LSTM with relu candidate."""
        rng = np.random.default_rng(12)
        cell = ThickLSTMCell(2, 3, 1, rng=rng, identity_bn=True)
        x = rng.standard_normal((4, 2))
        h0 = rng.standard_normal((4, 3))
        c0 = rng.standard_normal((4, 3))
        h, c = cell.step(tn.Tensor(x), tn.Tensor(h0), tn.Tensor(c0))
        # assemble the fused-weight reference in its (i, f, g, o) block order
        w_x = np.concatenate([cell.wx[g].w.data[0] for g in ("i", "f", "g", "o")])
        w_h = np.concatenate([cell.wh[g].w.data[0] for g in ("i", "f", "g", "o")])
        bias = np.concatenate([cell.bias[g].data for g in ("i", "f", "g", "o")])
        h_ref, c_ref = oracle.oracle_lstm_step(
            w_x.tolist(), w_h.tolist(), bias.tolist(),
            x.tolist(), h0.tolist(), c0.tolist(), candidate="relu",
        )
        npt.assert_allclose(h.data, h_ref, atol=1e-12)
        npt.assert_allclose(c.data, c_ref, atol=1e-12)

    def test_shapes_preserved(self):
        cell = ThickLSTMCell(5, 7, 3, rng=np.random.default_rng(13))
        h, c = cell.step(tn.Tensor(np.random.randn(6, 5)), tn.zeros((6, 7)), tn.zeros((6, 7)))
        assert h.shape == (6, 7) and c.shape == (6, 7)

    def test_parameter_count_formula(self):
        # 4n(m^2 + mr) thick weights + 4m biases + 4m normalization scales
        for n, m, r in [(1, 4, 3), (2, 3, 2), (4, 8, 5)]:
            cell = ThickLSTMCell(r, m, n, rng=np.random.default_rng(14))
            assert cell.num_params() == 4 * n * (m * m + m * r) + 8 * m

    def test_non_finite_preactivation_names_gate(self):
        cell = ThickLSTMCell(2, 3, 2, rng=np.random.default_rng(15))
        cell.wx["f"].w.data[0, 0, 0] = np.inf
        with pytest.raises(NumericError, match="'f'"):
            cell.step(tn.Tensor(np.ones((4, 2))), tn.zeros((4, 3)), tn.zeros((4, 3)))


class TestVanillaLSTM:
    def test_matches_textbook_oracle(self):
        rng = np.random.default_rng(16)
        cell = LSTMCell(3, 4, rng)
        x = rng.standard_normal((5, 3))
        h0 = rng.standard_normal((5, 4))
        c0 = rng.standard_normal((5, 4))
        h, c = cell.step(tn.Tensor(x), tn.Tensor(h0), tn.Tensor(c0))
        h_ref, c_ref = oracle.oracle_lstm_step(
            cell.w_x.data.tolist(), cell.w_h.data.tolist(), cell.b.data.tolist(),
            x.tolist(), h0.tolist(), c0.tolist(), candidate="tanh",
        )
        npt.assert_allclose(h.data, h_ref, atol=1e-12)
        npt.assert_allclose(c.data, c_ref, atol=1e-12)

    def test_gates_in_unit_interval(self):
        rng = np.random.default_rng(17)
        cell = LSTMCell(2, 3, rng)
        x = tn.Tensor(rng.standard_normal((4, 2)) * 10)
        h, c = cell.step(x, tn.Tensor(rng.standard_normal((4, 3))), tn.zeros((4, 3)))
        assert np.all(np.abs(h.data) <= 1.0)  # |sigmoid * tanh| <= 1


class TestRNNStack:
    def _stack(self, seed=18, layers_n=1, hidden=4):
        rng = np.random.default_rng(seed)
        cells = [
            ThickLSTMCell(2 if i == 0 else hidden, hidden, 2, rng=rng)
            for i in range(layers_n)
        ]
        return RNNStack(cells, 1, rng)

    def test_single_step_equals_cell_plus_head(self):
        stack = self._stack()
        xs = np.random.default_rng(19).standard_normal((1, 3, 2))
        out = stack.run_sequence(xs, mode="train")
        for g in GATES:
            stack.cells[0].bn[g] = tn.BNState(4)  # fresh stats for the manual replay
        h, _ = stack.cells[0].step(tn.Tensor(xs[0]), tn.zeros((3, 4)), tn.zeros((3, 4)))
        manual = h.data @ stack.head_w.data.T + stack.head_b.data
        npt.assert_allclose(out.data, manual, atol=1e-12)

    def test_zero_weight_stack_returns_head_bias(self):
        stack = self._stack()
        for _, p in stack.parameters():
            p.data[:] = 0.0
        stack.head_b.data[:] = 0.25
        out = stack.run_sequence(np.random.randn(3, 2, 2), mode="train")
        npt.assert_array_equal(out.data, np.full((2, 1), 0.25))

    def test_three_step_unroll_matches_oracle(self):
        rng = np.random.default_rng(20)
        stack = self._stack(seed=21)
        cell = stack.cells[0]
        xs = rng.standard_normal((3, 4, 2))
        out = stack.run_sequence(xs, mode="train")
        for g in GATES:
            cell.bn[g] = tn.BNState(4)
        spec = thick_cell_spec(cell)
        h = [[0.0] * 4 for _ in range(4)]
        c = [[0.0] * 4 for _ in range(4)]
        for t in range(3):
            h, c = oracle.oracle_thick_lstm_step(spec, xs[t].tolist(), h, c)
        manual = np.array(h) @ stack.head_w.data.T + stack.head_b.data
        npt.assert_allclose(out.data, manual, atol=1e-10)

    def test_layer_size_mismatch_rejected(self):
        rng = np.random.default_rng(22)
        cells = [ThickLSTMCell(2, 4, 1, rng=rng), ThickLSTMCell(5, 4, 1, rng=rng)]
        with pytest.raises(DimensionError):
            RNNStack(cells, 1, rng)

    def test_deep_stack_runs(self):
        rng = np.random.default_rng(23)
        cells = [LSTMCell(2 if i == 0 else 3, 3, rng) for i in range(3)]
        stack = RNNStack(cells, 2, rng)
        out = stack.run_sequence(rng.standard_normal((4, 5, 2)))
        assert out.shape == (5, 2)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(24)
        stack = RNNStack([ThickLSTMCell(2, 4, 3, rng=rng)], 1, rng)
        stack.run_sequence(rng.standard_normal((2, 4, 2)), mode="train")  # touch BN
        path = tmp_path / "model.ckpt"
        state = stack.state_dict()
        layers.save_checkpoint(path, state)
        loaded = layers.load_checkpoint(path)
        assert list(loaded) == list(state)
        for name in state:
            assert np.array_equal(loaded[name], state[name]), name

    def test_reload_reproduces_outputs(self, tmp_path):
        rng = np.random.default_rng(25)
        stack = RNNStack([ThickLSTMCell(2, 4, 2, rng=rng)], 1, rng)
        xs = rng.standard_normal((3, 4, 2))
        stack.run_sequence(xs, mode="train")
        expected = stack.run_sequence(xs, mode="eval").data
        path = tmp_path / "model.ckpt"
        layers.save_checkpoint(path, stack.state_dict())

        other = RNNStack([ThickLSTMCell(2, 4, 2, rng=np.random.default_rng(99))], 1,
                         np.random.default_rng(98))
        other.load_state_dict(layers.load_checkpoint(path))
        npt.assert_array_equal(other.run_sequence(xs, mode="eval").data, expected)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(FormatError) as exc:
            layers.load_checkpoint(path)
        assert exc.value.offset == 0

    def test_truncated_payload_rejected(self, tmp_path):
        rng = np.random.default_rng(26)
        stack = RNNStack([LSTMCell(2, 3, rng)], 1, rng)
        path = tmp_path / "model.ckpt"
        layers.save_checkpoint(path, stack.state_dict())
        blob = path.read_bytes()
        path.write_bytes(blob[:-4])
        with pytest.raises(FormatError):
            layers.load_checkpoint(path)

    def test_unknown_name_rejected(self, tmp_path):
        rng = np.random.default_rng(27)
        stack = RNNStack([LSTMCell(2, 3, rng)], 1, rng)
        state = stack.state_dict()
        state["bogus"] = np.zeros(3)
        path = tmp_path / "model.ckpt"
        layers.save_checkpoint(path, state)
        with pytest.raises(ArgumentError):
            stack.load_state_dict(layers.load_checkpoint(path))
