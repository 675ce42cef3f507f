"""Smoke tests for the cptreplay extension module."""

import math

import numpy as np
import pytest

import cptreplay as cpt


def test_task_generation_is_deterministic():
    a = cpt.make_task(seed=3, vocab_size=16, concentration=0.5)
    b = cpt.make_task(seed=3, vocab_size=16, concentration=0.5)
    assert np.array_equal(a.transition, b.transition)
    assert a.transition.shape == (16, 16)
    np.testing.assert_allclose(a.transition.sum(axis=1), 1.0, atol=1e-9)
    assert cpt.mean_row_kl(a, cpt.make_task(seed=4, vocab_size=16, concentration=0.5)) > 0.0


def test_sampled_batches_round_trip_numpy():
    task = cpt.make_task(seed=1, vocab_size=8, concentration=1.0)
    batch = cpt.sample_sequences(task, n=5, seq_len=12, seed=9)
    arr = batch.numpy()
    assert arr.shape == (5, 12)
    assert arr.max() < 8
    again = cpt.SampleBatch(arr)
    assert np.array_equal(again.numpy(), arr)


def test_zero_params_loss_is_log_vocab():
    dims = cpt.ModelDims(vocab_size=32, embed_dim=8, context=2, hidden_dim=16)
    params = cpt.ModelParams.zeros(dims)
    task = cpt.make_task(seed=2, vocab_size=32, concentration=0.5)
    batch = cpt.sample_sequences(task, n=4, seq_len=16, seed=3)
    assert cpt.loss(params, batch) == pytest.approx(math.log(32.0), abs=1e-12)
    value, grads = cpt.loss_and_grad(params, batch)
    assert value == pytest.approx(math.log(32.0), abs=1e-12)
    assert grads.flatten().shape == (dims.param_count(),)


def test_schedule_anchor_points():
    sched = cpt.ScheduleConfig(peak_lr=1e-3, warmup_steps=10, total_steps=110, min_lr=1e-5)
    assert cpt.lr_at(sched, 9) == pytest.approx(1e-3, rel=1e-12)
    assert cpt.lr_at(sched, 110) == pytest.approx(1e-5, rel=1e-12)
    assert cpt.lr_at(sched, 10 + 50) == pytest.approx((1e-3 + 1e-5) / 2, rel=1e-9)


def test_replay_buffer_round_trip(tmp_path):
    cfg = cpt.BufferConfig(
        capacity_tokens=4 * 16 * 8,
        file_size=16,
        seq_len=8,
        data_dir=tmp_path / "buffer",
        queue_capacity=2,
    )
    buffer = cpt.ReplayBuffer(cfg)
    rows = np.arange(3 * 8, dtype=np.uint32).reshape(3, 8)
    buffer.add(cpt.SampleBatch(rows))
    state = buffer.state()
    assert state.total == 3
    assert state.sizes[0] == 3

    out = buffer.get_batch(1.0, 2).numpy()
    assert out.shape == (2, 8)
    as_set = {tuple(r) for r in rows.tolist()}
    for row in out.tolist():
        assert tuple(row) in as_set

    meta = cpt.ReplayBuffer.load_metadata(tmp_path / "buffer" / "metadata.json")
    assert meta.total == 3


def test_power_law_fit_recovers_parameters():
    xs = [1.0, 2.0, 4.0, 8.0, 16.0, 32.0]
    ys = [2.0 * x**-0.5 + 1.0 for x in xs]
    fit = cpt.fit_power_law(xs, ys)
    assert fit.a == pytest.approx(2.0, rel=0.05)
    assert fit.b == pytest.approx(0.5, rel=0.05)
    assert fit.c == pytest.approx(1.0, rel=0.05)


def test_small_training_run_learns_and_logs():
    stream = cpt.make_stream(
        seed=5, vocab_size=16, concentration=0.2, num_tasks=2, tokens_per_task=4096, seq_len=32
    )
    dims = cpt.ModelDims(vocab_size=16, embed_dim=8, context=2, hidden_dim=16)
    params = cpt.init_params(dims, seed=1)

    config = cpt.TrainConfig()
    config.batch_size = 8
    config.mode = cpt.TrainMode.sequential
    config.schedule = cpt.ScheduleConfig(
        peak_lr=3e-3, warmup_steps=4, total_steps=32, min_lr=3e-4
    )
    config.eval_interval = 8

    result = cpt.train(stream, params, config, validation_rows=32)
    assert result.counters.update_steps == 32
    log = result.log
    first = [r.val_loss for r in log.records if r.update_step == 0 and r.eval_task == 0][0]
    boundary = log.task_boundaries[0]
    at_boundary = [
        r.val_loss for r in log.records if r.update_step == boundary and r.eval_task == 0
    ][0]
    assert at_boundary < first  # it learned something about task 0
    assert cpt.retained_loss(log) == pytest.approx(
        cpt.learned_loss(log) + cpt.mean_end_of_run_forgetting(log), abs=1e-9
    )


def test_alignment_of_identical_batches_is_one():
    dims = cpt.ModelDims(vocab_size=8, embed_dim=4, context=2, hidden_dim=8)
    params = cpt.init_params(dims, seed=3)
    task = cpt.make_task(seed=6, vocab_size=8, concentration=0.5)
    batch = cpt.sample_sequences(task, n=4, seq_len=10, seed=8)
    result = cpt.grad_alignment(params, batch, batch)
    assert result.cosine == pytest.approx(1.0, abs=1e-9)
    assert result.dot > 0
