"""
Tests for tensor helpers, gradient checks and checkpoints
"""

import os
import struct

import pytest
import torch
import torch.nn as nn

from floss.core.geometry import DTYPE
from floss.nn.tensorcore import (
    CHECKPOINT_MAGIC, Checkpoint, assert_finite, band_conv, call_with, expect_shape,
    grad_check, grad_check_parameter, load_checkpoint, save_checkpoint, scaled_dot_attention,
    seed_everything, set_threads, time_band_conv, time_conv,
)
from floss.utils.exceptions import CheckpointError, NumericalError, ValidationError


def _h(seed=0, shape=(2, 3, 5, 4, 6)):
    return torch.randn(shape, generator=torch.Generator().manual_seed(seed), dtype=DTYPE)


class TestShapeGuards:
    """Test shape and finiteness checks"""

    def test_expect_shape(self):
        """Test wildcard shape patterns"""
        x = torch.zeros(2, 3)
        assert expect_shape(x, (None, 3)) is x
        with pytest.raises(ValidationError, match="expected"):
            expect_shape(x, (None, 4), "x")
        with pytest.raises(ValidationError):
            expect_shape(x, (2, 3, 1))

    def test_assert_finite(self):
        """Test that NaN and Inf raise NumericalError naming the location"""
        assert_finite(torch.ones(3), "ok")
        with pytest.raises(NumericalError, match="block 2"):
            assert_finite(torch.tensor([1.0, float("inf")]), "block 2")


class TestAxisConvolutions:
    """Test convolutions along one axis of (N, S, T, B, C) tensors"""

    def test_time_conv_matches_loop(self):
        """Test time_conv against a per-(n, s, b) loop"""
        conv = nn.Conv1d(6, 7, 3, padding=1).to(DTYPE)
        h = _h()
        out = time_conv(conv, h)
        assert out.shape == (2, 3, 5, 4, 7)
        ref = conv(h[1, 2, :, 3, :].T.unsqueeze(0))[0].T
        assert torch.allclose(out[1, 2, :, 3, :], ref, atol=1e-12)

    def test_band_conv_matches_loop(self):
        """Test band_conv against a per-(n, s, t) loop"""
        conv = nn.Conv1d(6, 2, 3, padding=1).to(DTYPE)
        h = _h(1)
        out = band_conv(conv, h)
        ref = conv(h[0, 1, 4].T.unsqueeze(0))[0].T
        assert torch.allclose(out[0, 1, 4], ref, atol=1e-12)

    def test_time_band_conv(self):
        """Test the 2-D convolution keeps sources separate"""
        conv = nn.Conv2d(6, 5, (3, 3), padding=1).to(DTYPE)
        h = _h(2)
        out = time_band_conv(conv, h)
        assert out.shape == (2, 3, 5, 4, 5)
        assert torch.allclose(time_band_conv(conv, h[:, [2, 0, 1]]), out[:, [2, 0, 1]], atol=1e-12)


class TestAttention:
    """Test scaled dot-product attention"""

    def test_weights_are_distributions(self):
        """Test that attention rows sum to one"""
        q, k, v = (_h(i, (2, 5, 4)) for i in range(3))
        out, weights = scaled_dot_attention(q, k, v, return_weights=True)
        assert out.shape == (2, 5, 4)
        assert torch.allclose(weights.sum(dim=-1), torch.ones(2, 5, dtype=DTYPE))
        assert torch.all(weights >= 0)

    def test_token_permutation_equivariant(self):
        """Test that permuting tokens permutes the output"""
        q, k, v = (_h(i, (6, 3)) for i in range(3))
        perm = [3, 1, 5, 0, 2, 4]
        out = scaled_dot_attention(q, k, v)
        assert torch.allclose(scaled_dot_attention(q[perm], k[perm], v[perm]), out[perm], atol=1e-12)

    def test_shape_mismatch(self):
        """Test rejection of mismatched q/k"""
        with pytest.raises(ValidationError):
            scaled_dot_attention(torch.zeros(3, 4), torch.zeros(3, 5), torch.zeros(3, 4))


class TestGradCheck:
    """Test finite-difference gradient checks"""

    def test_quadratic(self):
        """Test autograd against central differences on a quadratic"""
        a = _h(3, (4, 4))
        err = grad_check(lambda x: (x @ a @ x), _h(4, (4,)))
        assert err < 1e-7

    def test_detects_wrong_gradient(self):
        """Test that a custom backward with the wrong sign is caught"""

        class Wrong(torch.autograd.Function):
            @staticmethod
            def forward(ctx, x):
                ctx.save_for_backward(x)
                return (x ** 2).sum()

            @staticmethod
            def backward(ctx, g):
                (x,) = ctx.saved_tensors
                return -2 * x * g

        assert grad_check(Wrong.apply, torch.ones(3, dtype=DTYPE)) > 1.0

    def test_subset_and_scalar_check(self):
        """Test coordinate subsampling and the scalar requirement"""
        assert grad_check(lambda x: x.exp().sum(), _h(5, (50,)), max_coords=5) < 1e-6
        with pytest.raises(ValidationError):
            grad_check(lambda x: x * 2, torch.ones(3, dtype=DTYPE))

    def test_parameter(self):
        """Test grad_check_parameter through functional_call"""
        lin = nn.Linear(3, 2).to(DTYPE)
        x = _h(6, (4, 3))

        def loss_fn(module, overrides):
            return call_with(module, overrides, x).pow(2).sum()

        assert grad_check_parameter(lin, "weight", loss_fn) < 1e-6
        with pytest.raises(ValidationError):
            grad_check_parameter(lin, "gamma", loss_fn)


class TestDeterminism:
    """Test seeding and thread control"""

    def test_seed_everything(self):
        """Test that reseeding repeats torch draws"""
        seed_everything(7, deterministic=False)
        a = torch.rand(3)
        seed_everything(7, deterministic=False)
        assert torch.equal(a, torch.rand(3))

    def test_set_threads(self):
        """Test thread count checks"""
        with pytest.raises(ValidationError):
            set_threads(0)


class TestCheckpoint:
    """Test the checkpoint container"""

    def setup_method(self):
        """Set up test fixtures"""
        self.ckpt = Checkpoint(
            meta={"format": "floss", "step": 3},
            params={"a.weight": _h(0, (2, 3)), "b": torch.tensor(1.5, dtype=DTYPE)},
            ema={"a.weight": _h(1, (2, 3))},
        )

    def test_round_trip(self, temp_dir):
        """Test save/load keeps metadata and tensors bit for bit"""
        path = os.path.join(temp_dir, "sub", "m.floss")
        save_checkpoint(path, self.ckpt)
        loaded = load_checkpoint(path)
        assert loaded.meta == self.ckpt.meta
        assert set(loaded.params) == {"a.weight", "b"}
        assert torch.equal(loaded.params["a.weight"], self.ckpt.params["a.weight"])
        assert loaded.params["b"].shape == ()
        assert torch.equal(loaded.ema["a.weight"], self.ckpt.ema["a.weight"])

    def _write(self, temp_dir, mutate):
        path = os.path.join(temp_dir, "m.floss")
        save_checkpoint(path, self.ckpt)
        with open(path, "rb") as fh:
            data = fh.read()
        with open(path, "wb") as fh:
            fh.write(mutate(data))
        return path

    def test_bad_magic(self, temp_dir):
        """Test rejection of foreign files"""
        path = self._write(temp_dir, lambda d: b"NOTFLOSS" + d[8:])
        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_bad_version(self, temp_dir):
        """Test rejection of unknown versions"""
        path = self._write(temp_dir, lambda d: d[:8] + struct.pack("<I", 99) + d[12:])
        with pytest.raises(CheckpointError, match="version"):
            load_checkpoint(path)

    def test_truncated(self, temp_dir):
        """Test rejection of truncated files"""
        path = self._write(temp_dir, lambda d: d[:-5])
        with pytest.raises(CheckpointError, match="truncated"):
            load_checkpoint(path)

    def test_trailing_bytes(self, temp_dir):
        """Test rejection of trailing garbage"""
        path = self._write(temp_dir, lambda d: d + b"\x00\x01")
        with pytest.raises(CheckpointError, match="trailing"):
            load_checkpoint(path)

    def test_corrupt_tensor_name(self, temp_dir):
        """Test that undecodable name bytes raise CheckpointError"""
        def mutate(d):
            (meta_len,) = struct.unpack("<I", d[12:16])
            start = 16 + meta_len + 4 + 2
            return d[:start] + b"\xff" + d[start + 1:]

        path = self._write(temp_dir, mutate)
        with pytest.raises(CheckpointError, match="tensor name"):
            load_checkpoint(path)

    def test_missing_file(self, temp_dir):
        """Test that a missing file raises CheckpointError"""
        with pytest.raises(CheckpointError):
            load_checkpoint(os.path.join(temp_dir, "absent.floss"))

    def test_magic_constant(self):
        """Test the 8-byte file signature"""
        assert CHECKPOINT_MAGIC == b"FLOSSCKP"
