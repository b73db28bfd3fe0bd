"""Deterministic text stub and the trainable condition projection."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from rdgan import Tensor
from rdgan.errors import InputError, ShapeError
from rdgan.text import TextEncoder, project_batch, project_condition


class TestEncodeText:
    def test_same_sentence_twice_identical(self):
        enc = TextEncoder(dim=64)
        a = enc.encode_text("a red square moving right")
        b = enc.encode_text("a red square moving right")
        assert_array_equal(a.values, b.values)

    def test_pure_across_encoder_instances(self):
        a = TextEncoder(dim=64).encode_text("a blue circle moving left")
        b = TextEncoder(dim=64).encode_text("a blue circle moving left")
        assert a.values.tobytes() == b.values.tobytes()

    def test_distinct_sentences_are_distinct(self):
        enc = TextEncoder(dim=64)
        a = enc.encode_text("a red square moving right").values
        b = enc.encode_text("a blue circle moving left").values
        cos = float(a @ b)  # both unit-norm
        assert cos < 0.99

    def test_unit_norm(self):
        enc = TextEncoder(dim=64)
        v = enc.encode_text("the quick brown fox").values
        assert abs(np.linalg.norm(v) - 1.0) < 1e-6

    def test_case_and_whitespace_insensitive(self):
        enc = TextEncoder(dim=32)
        a = enc.encode_text("A Red  Square")
        b = enc.encode_text("a red square")
        assert_array_equal(a.values, b.values)

    def test_empty_sentence_rejected(self):
        with pytest.raises(InputError):
            TextEncoder().encode_text("   ")

    def test_configured_dimension(self):
        assert TextEncoder(dim=4800).encode_text("x").values.shape == (4800,)

    def test_batch_stacks_rows(self):
        enc = TextEncoder(dim=16)
        batch = enc.encode_batch(["one sentence", "another sentence"])
        assert batch.shape == (2, 16)
        assert_array_equal(batch[0], enc.encode_text("one sentence").values)


class TestProjection:
    def test_paper_scale_dims(self):
        enc = TextEncoder(dim=4800)
        proj = Tensor(np.zeros((28, 4800), dtype=np.float32), requires_grad=True)
        cond = project_condition(enc.encode_text("a person is surfing"), proj)
        assert cond.values.shape == (28,)

    def test_zero_projection_gives_zero_condition(self):
        enc = TextEncoder(dim=64)
        proj = Tensor(np.zeros((28, 64), dtype=np.float32))
        cond = project_condition(enc.encode_text("anything"), proj)
        assert_array_equal(cond.values.data, np.zeros(28, dtype=np.float32))

    def test_identity_projection_passes_through(self):
        enc = TextEncoder(dim=28)
        raw = enc.encode_text("identity check")
        cond = project_condition(raw, Tensor(np.eye(28, dtype=np.float32)))
        assert_allclose(cond.values.data, raw.values, rtol=1e-6)

    def test_dim_mismatch_raises(self):
        enc = TextEncoder(dim=64)
        with pytest.raises(ShapeError):
            project_condition(enc.encode_text("x"), Tensor(np.zeros((28, 100))))

    def test_batch_projection_matches_single(self):
        enc = TextEncoder(dim=64)
        rng = np.random.default_rng(0)
        proj = Tensor(rng.normal(size=(28, 64)).astype(np.float32))
        raw = enc.encode_batch(["a red square moving right", "a blue circle moving left"])
        batch = project_batch(raw, proj)
        single = project_condition(enc.encode_text("a red square moving right"), proj)
        assert batch.shape == (2, 28)
        assert_allclose(batch.data[0], single.values.data, rtol=1e-5, atol=1e-6)
