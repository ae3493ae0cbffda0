"""Architecture arithmetic, forward contracts, checkpoint format."""

import numpy as np
import pytest

from advlab import autodiff as ad
from advlab import network
from advlab.network import (
    ArchitectureMismatch,
    BadMagic,
    NonFiniteParameter,
    TruncatedCheckpoint,
    VersionMismatch,
)


def test_flatten_width_is_9216():
    assert network.FLAT_FEATURES == 64 * 12 * 12 == 9216


def test_parameter_count_fixed_across_instances():
    a, b = network.build(0), network.build(99)
    assert a.parameter_count() == b.parameter_count() == 1_199_882


def test_same_seed_bitwise_identical():
    a, b = network.build(42), network.build(42)
    for (name, pa), (_, pb) in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(pa.data, pb.data, err_msg=name)


def test_different_seeds_differ():
    a, b = network.build(0), network.build(1)
    assert any(
        not np.array_equal(pa.data, pb.data)
        for (_, pa), (_, pb) in zip(a.parameters(), b.parameters())
    )


def test_init_respects_fan_in_bounds():
    net = network.build(3)
    params = dict(net.parameters())
    assert np.abs(params["conv1.weight"].data).max() <= (1 / 9) ** 0.5
    assert np.abs(params["fc1.weight"].data).max() <= (1 / 9216) ** 0.5


def test_forward_shape_and_normalisation():
    net = network.build(0)
    batch = np.random.default_rng(0).uniform(0, 1, (5, 1, 28, 28))
    out = net.forward(batch, mode="eval")
    assert out.shape == (5, 10)
    assert np.isfinite(out.data).all()
    np.testing.assert_allclose(np.exp(out.data).sum(axis=1), 1.0, atol=1e-9)


def test_eval_forward_deterministic_bitwise():
    net = network.build(1)
    batch = np.random.default_rng(3).uniform(0, 1, (4, 1, 28, 28))
    a = net.forward(batch, mode="eval").data
    b = net.forward(batch, mode="eval").data
    np.testing.assert_array_equal(a, b)


def test_high_temperature_raises_output_entropy():
    net = network.build(2)
    batch = np.random.default_rng(5).uniform(0, 1, (3, 1, 28, 28))

    def entropy(temperature):
        probs = np.exp(net.forward(batch, mode="eval", temperature=temperature).data)
        return float(-(probs * np.log(probs)).sum(axis=1).mean())

    assert entropy(100.0) > entropy(1.0)


def test_wrong_input_shape_rejected():
    net = network.build(0)
    for shape in ((2, 1, 27, 28), (2, 3, 28, 28), (28, 28)):
        with pytest.raises(ValueError, match="28"):
            net.forward(np.zeros(shape))


def test_train_mode_needs_rng():
    net = network.build(0).train()
    with pytest.raises(ValueError, match="rng|generator"):
        net.forward(np.zeros((1, 1, 28, 28)))


def test_train_eval_mode_switch():
    net = network.build(0)
    assert net.mode == "eval"
    assert net.train().mode == "train"
    assert net.eval().mode == "eval"


def test_fresh_network_near_chance_on_holdout(holdout):
    net = network.build(0)
    log_probs = network.predict_log_probs(net, holdout.images)
    accuracy = float((log_probs.argmax(axis=1) == holdout.labels).mean())
    assert 0.05 <= accuracy <= 0.20


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        net = network.build(11, temperature=100.0)
        path = tmp_path / "model.ckpt"
        network.save(net, path)
        loaded = network.load(path)
        assert loaded.temperature == 100.0
        for (name, p), (_, q) in zip(net.parameters(), loaded.parameters()):
            np.testing.assert_array_equal(p.data, q.data, err_msg=name)
        batch = np.random.default_rng(0).uniform(0, 1, (2, 1, 28, 28))
        np.testing.assert_array_equal(
            net.forward(batch, mode="eval").data, loaded.forward(batch, mode="eval").data
        )

    def test_save_load_save_byte_identical(self, tmp_path):
        net = network.build(8)
        first = tmp_path / "a.ckpt"
        second = tmp_path / "b.ckpt"
        network.save(net, first)
        network.save(network.load(first), second)
        assert first.read_bytes() == second.read_bytes()

    def test_corrupt_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        network.save(network.build(0), path)
        blob = bytearray(path.read_bytes())
        blob[0] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(BadMagic):
            network.load(path)

    def test_version_mismatch_rejected(self, tmp_path):
        path = tmp_path / "v2.ckpt"
        network.save(network.build(0), path)
        blob = bytearray(path.read_bytes())
        blob[4:8] = (99).to_bytes(4, "little")
        path.write_bytes(bytes(blob))
        with pytest.raises(VersionMismatch):
            network.load(path)

    def test_architecture_mismatch_rejected(self, tmp_path):
        path = tmp_path / "other.ckpt"
        network.write_container(path, "some-other-arch", 1.0, [("x", np.zeros(3))])
        with pytest.raises(ArchitectureMismatch):
            network.load(path)

    def test_wrong_parameter_set_rejected(self, tmp_path):
        path = tmp_path / "short.ckpt"
        network.write_container(path, network.ARCH_ID, 1.0, [("conv1.weight", np.zeros((32, 1, 3, 3)))])
        with pytest.raises(ArchitectureMismatch):
            network.load(path)

    def test_nan_parameter_rejected(self, tmp_path):
        net = network.build(0)
        dict(net.parameters())["fc2.bias"].data[0] = np.nan
        path = tmp_path / "nan.ckpt"
        network.save(net, path)
        with pytest.raises(NonFiniteParameter):
            network.load(path)

    def test_truncations_rejected(self, tmp_path):
        path = tmp_path / "full.ckpt"
        network.save(network.build(0), path)
        blob = path.read_bytes()
        cut = tmp_path / "cut.ckpt"
        # every structurally interesting prefix, plus a sweep of raw cuts
        offsets = {0, 1, 3, 4, 7, 8, 11, 12, 20, 40, len(blob) // 2, len(blob) - 1}
        for size in offsets:
            cut.write_bytes(blob[:size])
            with pytest.raises((TruncatedCheckpoint, BadMagic)):
                network.load(cut)

    def test_load_missing_file_raises_oserror(self, tmp_path):
        with pytest.raises(OSError):
            network.load(tmp_path / "nope.ckpt")
