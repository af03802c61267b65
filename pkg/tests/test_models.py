"""models: architecture assembly, inference, checkpoints."""

import numpy as np
import pytest

from scratch_sense.errors import CheckpointFormatError, InvalidParams, ShapeMismatch
from scratch_sense.models import (
    Model,
    build_cnn,
    build_mlp,
    classify,
    load_checkpoint,
    parameter_count,
    predict_proba,
    save_checkpoint,
)
from scratch_sense.tensor_nn import (
    sgd_step,
    softmax_cross_entropy,
    softmax_cross_entropy_grad,
)


def _cnn_parameter_formula(k: int, width: int, height: int = 100) -> int:
    flat = k * (height // 4) * (width // 4)
    conv1 = k * 1 * 9 + k
    conv2 = k * k * 9 + k
    bns = 2 * (2 * k)
    dense1 = flat * 100 + 100
    dense2 = 100 * 6 + 6
    return conv1 + conv2 + bns + dense1 + dense2


class TestBuildCnn:
    def test_shape_walk_k4_width65(self):
        model = build_cnn(4, 65, seed=0)
        x = np.zeros((1, 1, 100, 65), dtype=np.float32)
        expected = [
            (1, 4, 100, 65),  # conv1 same
            (1, 4, 100, 65),  # bn
            (1, 4, 100, 65),  # relu
            (1, 4, 50, 32),   # pool
            (1, 4, 50, 32),   # conv2
            (1, 4, 50, 32),   # bn
            (1, 4, 50, 32),   # relu
            (1, 4, 25, 16),   # pool
            (1, 1600),        # flatten
            (1, 100),         # dense
            (1, 100),         # relu
            (1, 6),           # dense
        ]
        out = x.astype(np.float32)
        for layer, shape in zip(model.layers, expected):
            out = layer.forward(out, train=False)
            assert out.shape == shape

    def test_flatten_dimension_k26(self):
        model = build_cnn(26, 65, seed=0)
        dense1 = model.layers[9]
        assert dense1.weight.value.shape == (10400, 100)

    def test_same_seed_identical_init(self):
        a, b = build_cnn(8, 65, seed=6), build_cnn(8, 65, seed=6)
        for pa, pb in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(pa.value, pb.value)
        c = build_cnn(8, 65, seed=7)
        assert any(
            not np.array_equal(pa.value, pc.value)
            for pa, pc in zip(a.parameters(), c.parameters())
        )

    @pytest.mark.parametrize("k", [4, 8, 12, 26])
    @pytest.mark.parametrize("width", [65, 98, 130])
    def test_parameter_counts_closed_form(self, k, width):
        model = build_cnn(k, width, seed=1)
        assert parameter_count(model) == _cnn_parameter_formula(k, width)

    def test_invalid_params(self):
        with pytest.raises(InvalidParams):
            build_cnn(0, 65, seed=0)
        with pytest.raises(InvalidParams):
            build_cnn(4, 3, seed=0)


class TestBuildMlp:
    def test_parameter_counts(self):
        assert parameter_count(build_mlp(65, seed=0)) == 7206
        assert parameter_count(build_mlp(100, seed=0)) == 10706

    def test_same_seed_identical_init(self):
        a, b = build_mlp(65, seed=42), build_mlp(65, seed=42)
        for pa, pb in zip(a.parameters(), b.parameters()):
            np.testing.assert_array_equal(pa.value, pb.value)

    def test_rejects_other_dims(self):
        with pytest.raises(InvalidParams):
            build_mlp(64, seed=0)


class TestInference:
    def test_probabilities_strictly_positive(self):
        model = build_mlp(65, seed=5)
        x = np.random.default_rng(0).standard_normal((7, 65)).astype(np.float32)
        probs = predict_proba(model, x)
        assert probs.shape == (7, 6)
        assert np.all(probs > 0)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-6)

    def test_identical_inputs_identical_rows(self):
        model = build_cnn(4, 65, seed=5)
        row = np.random.default_rng(1).standard_normal((1, 1, 100, 65)).astype(np.float32)
        batch = np.concatenate([row, row], axis=0)
        probs = predict_proba(model, batch)
        np.testing.assert_array_equal(probs[0], probs[1])

    def test_eval_invariant_to_batch_composition(self):
        # numerically invariant: BLAS blocking may flip last-ulp bits between
        # batch shapes, but a sample's probabilities cannot depend on its
        # neighbours beyond float rounding
        model = build_cnn(4, 65, seed=9)
        rng = np.random.default_rng(2)
        batch = rng.standard_normal((6, 1, 100, 65)).astype(np.float32)
        alone = predict_proba(model, batch[2:3])
        together = predict_proba(model, batch)
        np.testing.assert_allclose(alone[0], together[2], atol=1e-5)
        assert alone[0].argmax() == together[2].argmax()

    def test_classify_matches_argmax(self):
        model = build_mlp(100, seed=3)
        x = np.random.default_rng(3).standard_normal((20, 100)).astype(np.float32)
        np.testing.assert_array_equal(classify(model, x), predict_proba(model, x).argmax(axis=1))

    def test_classify_tie_breaks_low_index(self):
        model = build_mlp(65, seed=0)
        for p in model.parameters():
            p.value = np.zeros_like(p.value)  # uniform logits: 6-way tie
        x = np.random.default_rng(4).standard_normal((5, 65)).astype(np.float32)
        np.testing.assert_array_equal(classify(model, x), 0)

    def test_shape_mismatch(self):
        model = build_mlp(65, seed=0)
        with pytest.raises(ShapeMismatch):
            predict_proba(model, np.zeros((2, 100), dtype=np.float32))

    def test_overfit_single_sample(self):
        rng = np.random.default_rng(5)
        model = build_mlp(65, seed=1)
        x = rng.standard_normal((1, 65)).astype(np.float32)
        y = np.array([4])
        for _ in range(150):
            logits = model.forward(x, train=True)
            _, probs = softmax_cross_entropy(logits, y)
            model.backward(softmax_cross_entropy_grad(probs, y).astype(np.float32))
            sgd_step(model.parameters(), 0.5)
        assert predict_proba(model, x)[0, 4] > 0.99


class TestCheckpoint:
    def _trained_ish_model(self):
        model = build_cnn(4, 65, seed=11)
        model.set_input_stats(np.array([-55.0]), np.array([18.0]))
        # touch batch-norm running stats so they are non-trivial
        x = np.random.default_rng(6).standard_normal((4, 1, 100, 65)).astype(np.float32)
        model.forward(x, train=True)
        return model

    def test_round_trip_bit_identical_probs(self, tmp_path):
        model = self._trained_ish_model()
        x = np.random.default_rng(7).standard_normal((5, 1, 100, 65)).astype(np.float32)
        before = predict_proba(model, x)
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path, train_config={"seed": 11, "transform": "crop"})
        loaded, descriptor = load_checkpoint(path)
        np.testing.assert_array_equal(predict_proba(loaded, x), before)
        assert descriptor["train_config"]["transform"] == "crop"

    def test_mlp_round_trip(self, tmp_path):
        model = build_mlp(100, seed=2)
        x = np.random.default_rng(8).standard_normal((3, 100)).astype(np.float32)
        before = predict_proba(model, x)
        path = tmp_path / "mlp.ckpt"
        save_checkpoint(model, path)
        loaded, _ = load_checkpoint(path)
        np.testing.assert_array_equal(predict_proba(loaded, x), before)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path)

    def test_wrong_version_rejected(self, tmp_path):
        model = self._trained_ish_model()
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        data = bytearray(path.read_bytes())
        data[4:8] = (99).to_bytes(4, "little")
        path.write_bytes(bytes(data))
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path)

    def test_truncated_rejected(self, tmp_path):
        model = self._trained_ish_model()
        path = tmp_path / "model.ckpt"
        save_checkpoint(model, path)
        path.write_bytes(path.read_bytes()[:-100])
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(path)
