import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import clt_bound

from polyformer.baselines import MlpParams, init_params, nn_depth_spec, mlp_predict
from polyformer.network import GradientSet
from polyformer.polynomials import Polynomial, benchmark_targets
from polyformer.training import (
    EpochRecord,
    MlpModel,
    RunHistory,
    TrainConfig,
    TrainingDiverged,
    clip_gradients,
    generate_data,
    init_attention_model,
    one_cycle_lr,
    split,
    steps_per_epoch,
    train,
    warmup_steps,
)


def grads_with_norm(norm, rng=np.random.default_rng(0)):
    g = GradientSet(rng.standard_normal((3, 2)), rng.standard_normal((3, 2)), float(rng.standard_normal()))
    return g.scaled(norm / g.norm()) if norm else g.scaled(0.0)


def test_generate_f1_counts_and_noise():
    f1, _ = benchmark_targets()
    ds = generate_data(f1, 10000, [100, 100], seed=1)
    assert len(ds) == 10000 and ds.inputs.shape == (10000, 2)
    np.testing.assert_allclose(ds.clean_labels, (ds.inputs**2).sum(axis=1))
    np.testing.assert_allclose(ds.noisy_labels - ds.clean_labels, ds.noise)
    assert abs(ds.noise.std() - 1.0) < 0.05
    assert abs(ds.inputs.std(axis=0) - 10.0).max() < 0.5


def test_zero_covariance_rejected():
    f1, _ = benchmark_targets()
    with pytest.raises(ValueError):
        generate_data(f1, 10, [0.0, 1.0])


def test_sample_mean_within_clt_bound():
    p = Polynomial(3, 1, {(1, 0, 0): 1.0})
    ds = generate_data(p, 100_000, 1.0, seed=5)
    assert np.abs(ds.inputs.mean(axis=0)).max() < 0.02
    assert 0.02 > clt_bound(1.0, 100_000)


@pytest.mark.parametrize("total,train_count", [(10000, 9000), (50000, 45000)])
def test_split_sizes_and_partition(total, train_count):
    p = Polynomial(1, 1, {(1,): 1.0})
    ds = generate_data(p, total, 1.0, seed=0)
    tr, te = split(ds, train_count, seed=3)
    assert (len(tr), len(te)) == (train_count, total - train_count)
    rows = np.concatenate([tr.inputs[:, 0], te.inputs[:, 0]])
    assert np.array_equal(np.sort(rows), np.sort(ds.inputs[:, 0]))
    assert not set(tr.inputs[:, 0]) & set(te.inputs[:, 0])


def test_one_cycle_endpoints():
    total = 1200
    assert one_cycle_lr(0, total, 1e-4, 1e-3, 0.3) == 1e-4
    peak = warmup_steps(total, 0.3)
    assert one_cycle_lr(peak, total, 1e-4, 1e-3, 0.3) == pytest.approx(1e-3)
    assert one_cycle_lr(total - 1, total, 1e-4, 1e-3, 0.3) == pytest.approx(1e-4)


def test_one_cycle_rejects_step_out_of_range():
    with pytest.raises(ValueError):
        one_cycle_lr(10, 10, 1e-4, 1e-3, 0.3)


@settings(max_examples=100)
@given(st.integers(1, 5000), st.floats(0.05, 0.95), st.data())
def test_one_cycle_within_bounds(total, frac, data):
    step = data.draw(st.integers(0, total - 1))
    lr = one_cycle_lr(step, total, 1e-4, 1e-3, frac)
    assert 1e-4 - 1e-18 <= lr <= 1e-3 + 1e-18


def test_clip_scales_large_gradients():
    g = grads_with_norm(10.0)
    c = clip_gradients(g, 5.0)
    assert c.norm() == pytest.approx(5.0, abs=1e-12)
    np.testing.assert_allclose(c.dF, 0.5 * g.dF)


def test_clip_leaves_small_and_zero_gradients():
    g = grads_with_norm(1.0)
    assert clip_gradients(g, 5.0) is g
    z = grads_with_norm(0.0)
    assert clip_gradients(z, 5.0).norm() == 0.0


@settings(max_examples=100)
@given(st.floats(0, 1e6), st.floats(1e-3, 1e3))
def test_clip_never_exceeds_threshold(norm, clip):
    assert clip_gradients(grads_with_norm(norm), clip).norm() <= clip + 1e-9


def test_clip_works_on_mlp_gradients():
    p = init_params(nn_depth_spec("f1"), seed=0).scaled(100.0)
    assert clip_gradients(p, 1.0).norm() == pytest.approx(1.0)


def test_schedule_step_count_f1():
    assert steps_per_epoch(9000, 5000) == 2
    assert 600 * steps_per_epoch(9000, 5000) == 1200


def test_convergence_epoch_rule():
    h = RunHistory([EpochRecord(i + 1, v, 0.0, 1e-4, 0.0) for i, v in enumerate([10.0, 5.0, 4.995, 4.0])])
    assert h.convergence_epoch() == 3
    assert RunHistory([EpochRecord(1, 1.0, 0.0, 1e-4, 0.0)]).convergence_epoch() is None


def _small_f1_run(seed=0, epochs=5):
    f1, _ = benchmark_targets()
    ds = generate_data(f1, 600, [100, 100], seed=seed)
    tr, te = split(ds, 500, seed=seed)
    cfg = TrainConfig(epochs, 100, clip_norm=3.0, seed=seed)
    return train(init_attention_model(2, 2, [100, 100], seed=seed), tr, te, cfg)


def test_training_is_reproducible():
    m1, h1 = _small_f1_run(seed=2)
    m2, h2 = _small_f1_run(seed=2)
    strip = lambda h: [(r.epoch, r.train_mse_noisy, r.test_mse_clean, r.lr) for r in h.records]
    assert strip(h1) == strip(h2)
    np.testing.assert_array_equal(m1.F, m2.F)
    np.testing.assert_array_equal(m1.beta, m2.beta)


def test_training_reduces_error_and_only_moves_free_params():
    init = init_attention_model(2, 2, [100, 100], seed=0)
    m, h = _small_f1_run(seed=0, epochs=20)
    assert len(h) == 20 and [r.epoch for r in h.records] == list(range(1, 21))
    assert h.records[-1].train_mse_noisy < 0.8 * h.records[0].train_mse_noisy
    assert m.sep_consts.tolist() == init.sep_consts.tolist()


def test_history_csv_round_trip(tmp_path):
    _, h = _small_f1_run(epochs=3)
    path = tmp_path / "history.csv"
    h.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,train_mse,test_mse,lr,seconds"
    assert all(len(ln.split(",")) == 5 for ln in lines)
    back = RunHistory.from_csv(path)
    assert [r.train_mse_noisy for r in back.records] == [r.train_mse_noisy for r in h.records]


def test_divergence_guard():
    f1, _ = benchmark_targets()
    ds = generate_data(f1, 200, [100, 100], seed=0)
    tr, te = split(ds, 150)
    spec = nn_depth_spec("f1")
    cfg = TrainConfig(50, 150, lr_init=1e3, lr_max=1e3, clip_norm=1e300)
    with pytest.raises(TrainingDiverged) as err:
        train(MlpModel(spec, init_params(spec)), tr, te, cfg)
    assert len(err.value.history) < 50


def test_mlp_trains_under_same_harness():
    f1, _ = benchmark_targets()
    ds = generate_data(f1, 600, [100, 100], seed=0)
    tr, te = split(ds, 500)
    spec = nn_depth_spec("f1")
    m, h = train(MlpModel(spec, init_params(spec)), tr, te, TrainConfig(10, 100, clip_norm=10.0))
    assert h.records[-1].train_mse_noisy < h.records[0].train_mse_noisy
    assert isinstance(m.params, MlpParams)
    assert mlp_predict(spec, m.params, te.inputs).shape == (len(te),)


def test_batch_larger_than_dataset_rejected():
    f1, _ = benchmark_targets()
    ds = generate_data(f1, 100, [1, 1])
    tr, te = split(ds, 80)
    with pytest.raises(ValueError):
        train(init_attention_model(2, 2, [1, 1]), tr, te, TrainConfig(1, 81))
