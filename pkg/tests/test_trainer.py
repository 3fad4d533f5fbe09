import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from shapely.geometry import box

from vstgnn.errors import NonFiniteLossError, ShapeError, ValidationError
from vstgnn.graph import build_static_adjacency, transition_supports
from vstgnn.ingest import SyntheticEventConfig, build_windows, prepare_archive, synthesize_events
from vstgnn.ingest.synthetic import county_bboxes
from vstgnn.model import ModelConfig
from vstgnn.trainer import (
    CaseSplit,
    Checkpoint,
    TrainConfig,
    cosine_lr,
    fit_scale,
    init_model,
    make_case_split,
    predict,
    read_history,
    train,
    unique_frames,
)

NODES, GRID = 3, 8


def tiny_model_config(horizon=1):
    return ModelConfig.create(
        NODES, codec=dict(depth=1, base_channels=4, embedding_size=8, input_resolution=(GRID, GRID)),
        stgnn=dict(dilations=(1, 2), residual_channels=8, dilation_channels=8, skip_channels=8,
                   end_channels=16, node_embedding_size=2),
        time_embedding_size=4, horizon=horizon)


def supports():
    adj = build_static_adjacency({c: box(*b) for c, b in county_bboxes(NODES).items()})
    return transition_supports(adj)


@pytest.fixture(scope="module")
def archives():
    base = SyntheticEventConfig(node_count=NODES, grid_size=GRID, num_days=16, landfall_day=7,
                                noise_sigma=0.05)
    return [prepare_archive(a, GRID, GRID) for a in synthesize_events(base, ["A", "B", "C"])]


@pytest.fixture(scope="module")
def split(archives):
    return make_case_split(archives, "A", S=4, T=1)


# --------------------------------------------------------------------------- splits

def test_split_sizes_small(split):
    # 16 days, S=4, T=1 -> 12 windows per event; round(0.3 * 12) = 4 val
    assert split.sizes == (16, 8, 12)


def test_split_is_chronological_partition(archives, split):
    for event in ("B", "C"):
        tr = [w.input_dates[0] for w in split.train_windows if w.event_id == event]
        va = [w.input_dates[0] for w in split.val_windows if w.event_id == event]
        assert max(tr) < min(va)
        assert len(tr) + len(va) == len(build_windows(archives[1], 4, 1))
    assert {w.event_id for w in split.test_windows} == {"A"}


def test_split_full_scale_counts():
    base = SyntheticEventConfig(node_count=2, grid_size=2, num_days=61)
    arch = synthesize_events(base, ["Michael", "Ian", "Idalia"])
    for held in ("Michael", "Ian", "Idalia"):
        assert make_case_split(arch, held, 8, 1, 0.3).sizes == (74, 32, 53)
        assert make_case_split(arch, held, 8, 1, 0.0).sizes == (106, 0, 53)


@settings(max_examples=25, deadline=None)
@given(st.integers(10, 30), st.integers(1, 6), st.floats(0.0, 0.9))
def test_split_partition_property(num_days, S, vf):
    base = SyntheticEventConfig(node_count=1, grid_size=1, num_days=num_days, landfall_day=0, ocean=False)
    arch = synthesize_events(base, ["x", "y", "z"])
    s = make_case_split(arch, "y", S, 1, vf)
    n = num_days - S
    assert len(s.test_windows) == n
    assert len(s.train_windows) + len(s.val_windows) == 2 * n
    keys = [(w.event_id, w.input_dates[0]) for w in s.train_windows + s.val_windows + s.test_windows]
    assert len(keys) == len(set(keys)) == 3 * n


def test_split_errors(archives):
    with pytest.raises(ValidationError):
        make_case_split(archives, "nope")
    with pytest.raises(ValidationError):
        make_case_split(archives[:2], "A")
    with pytest.raises(ValidationError):
        make_case_split(archives, "A", S=4, T=1, val_fraction=1.0)


# --------------------------------------------------------------------------- schedule & scale

def test_cosine_endpoints_and_monotone():
    assert cosine_lr(0, 1e-3, 100) == 1e-3
    assert cosine_lr(100, 1e-3, 100) == 0.0
    assert cosine_lr(50, 1e-3, 100) == pytest.approx(5e-4)
    lrs = [cosine_lr(e, 1e-3, 100) for e in range(101)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


def test_torch_scheduler_matches_closed_form():
    p = torch.nn.Parameter(torch.zeros(1))
    opt = torch.optim.Adam([p], lr=1e-3)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=20)
    for e in range(20):
        assert opt.param_groups[0]["lr"] == pytest.approx(cosine_lr(e, 1e-3, 20), abs=1e-12)
        opt.step()
        sched.step()


def test_scale_uses_unique_frames(split):
    frames = unique_frames(split.train_windows)
    # two training events, windows cover days 0..(last train target)
    assert frames.shape[1:] == (NODES, 1, GRID, GRID)
    assert fit_scale(split.train_windows) == pytest.approx(float(np.percentile(frames, 99)))


# --------------------------------------------------------------------------- training

def fit(split, epochs=3, **kw):
    model = init_model(tiny_model_config(), supports(), seed=kw.pop("init_seed", 0))
    cfg = TrainConfig(epochs=epochs, batch_size=4, **kw)
    return train(split, model, cfg), model


def test_zero_lr_leaves_parameters(split):
    model = init_model(tiny_model_config(), supports(), seed=0)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    train(split, model, TrainConfig(epochs=2, learning_rate=0.0, batch_size=4))
    for k, v in model.state_dict().items():
        if k.endswith(("running_mean", "running_var", "num_batches_tracked")):
            continue  # BatchNorm statistics are buffers, not parameters
        assert torch.equal(before[k], v), k


def test_epoch_zero_is_deterministic(split):
    a, _ = fit(split, epochs=1)
    b, _ = fit(split, epochs=1)
    assert a.history == b.history
    for k in a.state:
        np.testing.assert_array_equal(a.state[k], b.state[k])


def test_history_csv_round_trip(split, tmp_path):
    model = init_model(tiny_model_config(), supports(), seed=0)
    ckpt = train(split, model, TrainConfig(epochs=2, batch_size=4), history_path=tmp_path / "h.csv")
    assert read_history(tmp_path / "h.csv") == ckpt.history
    assert [r["epoch"] for r in ckpt.history] == [0, 1]
    assert ckpt.history[0]["lr"] == 1e-3


def test_best_epoch_selects_min_val(split):
    ckpt, _ = fit(split, epochs=4)
    vals = [r["val_mse"] for r in ckpt.history]
    assert ckpt.best_epoch == int(np.argmin(vals))


def test_no_val_falls_back_to_train_mse(split):
    no_val = CaseSplit("A", split.train_windows, [], split.test_windows)
    ckpt, _ = fit(no_val, epochs=2)
    assert all(math.isnan(r["val_mse"]) for r in ckpt.history)
    assert ckpt.best_epoch == int(np.argmin([r["train_mse"] for r in ckpt.history]))


def test_non_finite_loss_aborts(split):
    model = init_model(tiny_model_config(), supports(), seed=0)
    with torch.no_grad():
        model.codec.decoder.head.bias.fill_(float("nan"))
    with pytest.raises(NonFiniteLossError) as info:
        train(split, model, TrainConfig(epochs=1, batch_size=4))
    assert info.value.epoch == 0 and info.value.batch == 0
    assert math.isnan(info.value.param_norms["codec.decoder.head.bias"])


def test_empty_training_split(split):
    with pytest.raises(ValidationError):
        fit(CaseSplit("A", [], [], split.test_windows))


def test_loss_decreases_first_five_epochs_most_seeds(split):
    ok = 0
    for seed in range(10):
        ckpt, _ = fit(split, epochs=5, init_seed=seed, seed=seed)
        ok += ckpt.history[-1]["train_mse"] < ckpt.history[0]["train_mse"]
    assert ok >= 9


# --------------------------------------------------------------------------- checkpoint & predict

def test_checkpoint_round_trip(split, tmp_path):
    ckpt, _ = fit(split, epochs=2)
    before = predict(ckpt, split.test_windows)
    ckpt.save(tmp_path / "c.npz")
    loaded = Checkpoint.load(tmp_path / "c.npz")
    assert loaded.model_config == ckpt.model_config
    assert loaded.scale == ckpt.scale and loaded.node_order == ckpt.node_order
    assert loaded.history == ckpt.history and loaded.best_epoch == ckpt.best_epoch
    after = predict(loaded, split.test_windows)
    for a, b in zip(before, after):
        assert np.max(np.abs(a - b)) <= 1e-6


def test_predict_empty_and_pure(split):
    ckpt, _ = fit(split, epochs=1)
    assert predict(ckpt, []) == []
    first = predict(ckpt, split.test_windows[:3])
    again = predict(ckpt, split.test_windows[:3])
    single = predict(ckpt, split.test_windows[1:2])
    for a, b in zip(first, again):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_allclose(single[0], first[1], atol=1e-6)
    assert first[0].shape == (NODES, 1, 1, GRID, GRID)
    assert all(np.all(p >= 0) and np.all(p <= ckpt.scale * (1 + 1e-6)) for p in first)


def test_predict_rejects_wrong_shape(split):
    ckpt, _ = fit(split, epochs=1)
    base = SyntheticEventConfig(node_count=NODES, grid_size=16, num_days=16, landfall_day=7)
    other = [prepare_archive(a, 16, 16) for a in synthesize_events(base, ["A"])]
    with pytest.raises(ShapeError):
        predict(ckpt, build_windows(other[0], 4, 1))


def test_single_window_overfit():
    base = SyntheticEventConfig(node_count=NODES, grid_size=GRID, num_days=5, landfall_day=3)
    arch = [prepare_archive(a, GRID, GRID) for a in synthesize_events(base, ["A", "B", "C"])]
    windows = build_windows(arch[1], 4, 1)
    one = CaseSplit("A", windows, [], windows)
    model = init_model(tiny_model_config(), supports(), seed=0)
    ckpt = train(one, model, TrainConfig(epochs=300, batch_size=1, learning_rate=1e-2))
    assert min(r["train_mse"] for r in ckpt.history) < 1e-3
