import math

import numpy as np
import pytest

from c3sl import codec, pipeline
from c3sl.data import FeatureBatch, make_blobs
from c3sl.errors import ContractViolation, InvalidArgument
from c3sl.nn import SplitModel
from c3sl.pipeline import (TrainConfig, compress, decompress, divide_groups, group_sizes,
                           loss_and_gradients, batch_loss, train, train_step, vanilla_train_step)
from oracles import central_diff, rel_err


def small_setup(ratio, dim=16, batch=8, seed=0, classes=3, in_dim=5):
    model = SplitModel.build(in_dim, dim, classes, seed=seed, edge_hidden=(12,), cloud_hidden=(10,))
    rng = np.random.default_rng(seed + 100)
    for net in (model.edge, model.cloud):
        for layer in net.layers:
            layer.bias[:] = rng.normal(scale=0.3, size=layer.bias.shape)
    b = FeatureBatch(rng.normal(size=(batch, in_dim)), rng.integers(0, classes, size=batch))
    return model, codec.generate_keys(dim, ratio, seed + 7), b


def test_divide_groups_full_batch():
    z = np.arange(64 * 3).reshape(64, 3)
    groups = divide_groups(z, 16)
    assert [len(g) for g in groups] == [16] * 4
    np.testing.assert_array_equal(np.concatenate(groups), z)


def test_divide_groups_singletons():
    assert group_sizes(5, 1) == [1] * 5


def test_divide_groups_lenient_tail():
    z = np.arange(5)[:, None]
    groups = divide_groups(z, 2)
    assert [g[:, 0].tolist() for g in groups] == [[0, 1], [2, 3], [4]]


def test_divide_groups_strict_rejects():
    with pytest.raises(InvalidArgument):
        divide_groups(np.zeros((5, 2)), 2, strict=True)
    with pytest.raises(InvalidArgument):
        TrainConfig(ratio=3, batch_size=64, strict_grouping=True)


def test_group_sizes_rejects_empty():
    with pytest.raises(InvalidArgument):
        group_sizes(0, 2)


@pytest.mark.parametrize("r,batch", [(1, 7), (2, 8), (4, 9), (3, 3)])
def test_compress_matches_per_group_codec(r, batch, rng):
    keys = codec.generate_keys(32, r, 3)
    z = rng.normal(size=(batch, 32))
    sizes = group_sizes(batch, r)
    c = compress(keys, z, sizes)
    assert c.data.shape == (math.ceil(batch / r), 32)
    for g, group in enumerate(divide_groups(z, r)):
        np.testing.assert_allclose(c.data[g], codec.encode_group(keys, group), atol=1e-13)
    restored = decompress(keys, c)
    expected = np.concatenate([codec.decode_group(keys, c.data[g], len(grp))
                               for g, grp in enumerate(divide_groups(z, r))])
    np.testing.assert_allclose(restored, expected, atol=1e-13)


def test_r1_delta_keys_match_vanilla_bit_exact():
    cfg = TrainConfig(ratio=1, key_mode="delta", dim=16, batch_size=8, lr=1e-3,
                      edge_hidden=(12,), cloud_hidden=(10,), input_dim=6, n_train=40)
    data = make_blobs(4, 40, 8, 6, seed=1)
    a = pipeline.make_model(cfg, 6, 4)
    b = pipeline.make_model(cfg, 6, 4)
    keys = pipeline.make_keys(cfg)
    steps = 0
    for _, batches in pipeline.epoch_batches(data, TrainConfig(**{**cfg.to_dict(), "epochs": 4})):
        for batch in batches:
            ma = train_step(a, keys, batch, cfg)
            mb = vanilla_train_step(b, batch, cfg.wire_dtype)
            assert ma.loss == mb.loss
            steps += 1
    assert steps >= 20
    assert a.edge.state_bytes() == b.edge.state_bytes()
    assert a.cloud.state_bytes() == b.cloud.state_bytes()


@pytest.mark.parametrize("ratio,batch", [(1, 4), (2, 8), (4, 8), (4, 6)])
def test_end_to_end_gradients_finite_differences(ratio, batch):
    model, keys, b = small_setup(ratio, dim=16, batch=batch)
    loss, edge_grads, cloud_grads = loss_and_gradients(model, keys, b, ratio)
    assert loss == pytest.approx(batch_loss(model, keys, b, ratio), rel=1e-14)
    f = lambda: batch_loss(model, keys, b, ratio)
    for p, g in zip(model.edge.parameters() + model.cloud.parameters(), edge_grads + cloud_grads):
        assert rel_err(g, central_diff(f, p)) < 1e-5


def test_train_step_applies_the_computed_gradients():
    model, keys, b = small_setup(2, dim=16, batch=8)
    twin, _, _ = small_setup(2, dim=16, batch=8)
    _, eg, cg = loss_and_gradients(twin, keys, b, 2)
    twin.edge.step(eg)
    twin.cloud.step(cg)
    cfg = TrainConfig(ratio=2, batch_size=8, dim=16, wire_dtype="float64")
    train_step(model, keys, b, cfg)
    for p, q in zip(model.edge.parameters() + model.cloud.parameters(),
                    twin.edge.parameters() + twin.cloud.parameters()):
        np.testing.assert_allclose(p, q, rtol=1e-12, atol=1e-15)


def test_keys_never_change():
    cfg = TrainConfig(ratio=4, dim=32, batch_size=16, epochs=2, n_train=64, n_test=16, input_dim=8,
                      edge_hidden=(16,), cloud_hidden=(16,))
    result = train(cfg)
    fresh = pipeline.make_keys(cfg)
    assert result.keys.keys.tobytes() == fresh.keys.tobytes()
    assert not result.keys.keys.flags.writeable


@pytest.mark.parametrize("r", [1, 4])
def test_group_order_preserved(r):
    dim, batch = 256, 8
    keys = codec.generate_keys(dim, r, 11)
    z = np.zeros((batch, dim))
    z[np.arange(batch), np.arange(batch) * 3] = 10.0
    restored = decompress(keys, compress(keys, z, group_sizes(batch, r)))
    assert np.argmax(restored, axis=1).tolist() == (np.arange(batch) * 3).tolist()


@pytest.mark.parametrize("r", [1, 2, 4, 8, 16])
def test_bytes_per_step(r):
    model, keys, b = small_setup(r, dim=64, batch=64)
    m = train_step(model, keys, b, TrainConfig(ratio=r, batch_size=64, dim=64))
    assert m.forward_bytes == m.backward_bytes == math.ceil(64 / r) * 64 * 4


def test_trailing_batch_grouped_leniently():
    # 70 rows in batches of 64 leave a tail of 6, which R=4 cannot divide
    cfg = TrainConfig(ratio=4, batch_size=64, dim=32, strict_grouping=True, n_train=70, n_test=10,
                      input_dim=8, edge_hidden=(16,), cloud_hidden=(16,))
    result = train(cfg)
    assert [s.forward_bytes for s in result.steps] == [16 * 32 * 4, 2 * 32 * 4]


def test_mismatched_dims_rejected_before_mutation():
    model, keys, b = small_setup(2, dim=16, batch=8)
    wrong = codec.generate_keys(32, 2, 1)
    before = (model.edge.state_bytes(), model.cloud.state_bytes())
    with pytest.raises(ContractViolation):
        train_step(model, wrong, b, TrainConfig(ratio=2, batch_size=8, dim=32))
    bad = FeatureBatch(np.zeros((8, 9)), b.labels)
    with pytest.raises(ContractViolation):
        train_step(model, keys, bad, TrainConfig(ratio=2, batch_size=8, dim=16))
    with pytest.raises(ContractViolation):
        train_step(model, keys, b, TrainConfig(ratio=4, batch_size=8, dim=16))
    assert (model.edge.state_bytes(), model.cloud.state_bytes()) == before


def test_evaluate_untrained_is_near_chance():
    cfg = TrainConfig(ratio=2, dim=64, num_classes=4, n_test=2000, seed=5)
    data = pipeline.load_dataset(cfg)
    model = pipeline.make_model(cfg, data.input_dim, 4)
    acc = pipeline.evaluate(model, pipeline.make_keys(cfg), data.x_test, data.y_test, cfg)
    assert 0.0 <= acc <= 0.6


def test_evaluate_deterministic_and_rejects_empty():
    cfg = TrainConfig(ratio=2, dim=32, n_train=64, n_test=50, input_dim=8, edge_hidden=(16,),
                      cloud_hidden=(16,))
    result = train(cfg)
    data = pipeline.load_dataset(cfg)
    again = pipeline.evaluate(result.model, result.keys, data.x_test, data.y_test, cfg)
    assert again == result.final_accuracy
    with pytest.raises(InvalidArgument):
        pipeline.evaluate(result.model, result.keys, data.x_test[:0], data.y_test[:0], cfg)


def test_separable_data_reaches_full_accuracy():
    cfg = TrainConfig(ratio=1, dim=32, epochs=15, lr=3e-3, n_train=400, n_test=200, input_dim=16,
                      separation=10.0, edge_hidden=(32,), cloud_hidden=(32,))
    assert train(cfg).final_accuracy == 1.0


def test_training_is_reproducible():
    cfg = TrainConfig(ratio=4, dim=32, epochs=2, n_train=128, n_test=32, input_dim=8,
                      edge_hidden=(16,), cloud_hidden=(16,))
    a, b = train(cfg), train(cfg)
    assert [s.loss for s in a.steps] == [s.loss for s in b.steps]
    assert a.final_accuracy == b.final_accuracy


def test_summary_and_csv(tmp_path):
    cfg = TrainConfig(ratio=4, dim=32, epochs=1, n_train=128, n_test=32, input_dim=8,
                      edge_hidden=(16,), cloud_hidden=(16,))
    result = train(cfg)
    s = pipeline.summarize(cfg, result, 128)
    assert s["total_bytes"] == 2 * 2 * 16 * 32 * 4
    assert s["compression_ratio"] == pytest.approx(4.0)
    assert s["key_params"] == 4 * 32
    pipeline.write_steps_csv(result.steps, tmp_path / "steps.csv")
    lines = (tmp_path / "steps.csv").read_text().splitlines()
    assert lines[0].split(",") == pipeline.STEP_FIELDS
    assert len(lines) == 3


def test_ratio8_within_two_points_of_ratio1():
    # same budget as the accuracy-retention acceptance check
    accs = {r: train(TrainConfig(ratio=r, epochs=100, lr=3e-3, seed=0)).final_accuracy
            for r in (1, 8)}
    assert abs(accs[1] - accs[8]) <= 0.02 + 1e-9
