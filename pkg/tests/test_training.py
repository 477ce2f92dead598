import math

import pytest
import torch
from hypothesis import given, settings, strategies as st

from conftest import IMAGE_CFG, MAP_CFG, TOY_TASKS, build_toy_model, write_toy_manifest
from pathmaps.core.mapper import UnknownTaskError
from pathmaps.core.tokenizer import VQTokenizer
from pathmaps.core.training import (
    DivergedError,
    EmptySubsetError,
    FinetunePolicy,
    LossHistory,
    SampleBudgetError,
    TrainConfig,
    TrainingError,
    TrainingState,
    TrainingStateError,
    collect_rasters,
    dwa_weights,
    finetune,
    make_scheduler,
    nmse_loss,
    take_subset,
    tokenizer_from_checkpoint,
    train_stage1,
    train_stage2,
    validation_split,
)
from pathmaps.storage import IncompleteSnapshotError, SnapshotDataset, read_gate_log

SHORT = TrainConfig(batch_size=4, epochs=2, seed=3, val_fraction=0.0)


def history_of(**series):
    history = LossHistory(list(series))
    for epoch in range(len(next(iter(series.values())))):
        history.record({task: values[epoch] for task, values in series.items()})
    return history


class TestDWA:

    def test_hand_evaluated_softmax(self):
        weights = dwa_weights(history_of(a=[1.0, 1.0], b=[1.0, 0.5]), temperature=2.0)
        expected_a = 2 * math.exp(0.5) / (math.exp(0.5) + math.exp(0.25))
        assert weights["a"] == pytest.approx(expected_a, abs=1e-12)
        assert weights["a"] == pytest.approx(1.1245, abs=1e-4)
        assert weights["b"] == pytest.approx(0.8755, abs=1e-4)

    def test_warm_up_is_uniform(self):
        assert dwa_weights(LossHistory(["a", "b"])) == {"a": 1.0, "b": 1.0}
        assert dwa_weights(history_of(a=[3.0], b=[0.1])) == {"a": 1.0, "b": 1.0}

    def test_identical_histories(self):
        weights = dwa_weights(history_of(a=[0.4, 0.2, 0.1], b=[0.4, 0.2, 0.1], c=[0.4, 0.2, 0.1]))
        assert all(w == pytest.approx(1.0, abs=1e-12) for w in weights.values())

    def test_zero_denominator_counts_as_no_change(self):
        weights = dwa_weights(history_of(a=[0.0, 0.3], b=[1.0, 1.0]))
        assert weights["a"] == pytest.approx(weights["b"])

    def test_only_last_two_epochs_matter(self):
        a = dwa_weights(history_of(a=[9.0, 1.0, 0.5], b=[9.0, 1.0, 1.0]))
        b = dwa_weights(history_of(a=[1.0, 0.5], b=[1.0, 1.0]))
        assert a == pytest.approx(b)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.floats(0.01, 10.0), st.floats(0.01, 10.0)), min_size=1, max_size=6),
           st.floats(0.1, 5.0))
    def test_positive_and_sum_to_task_count(self, pairs, temperature):
        series = {f"t{i}": list(pair) for i, pair in enumerate(pairs)}
        weights = dwa_weights(history_of(**series), temperature)
        assert all(w > 0 for w in weights.values())
        assert sum(weights.values()) == pytest.approx(len(pairs), abs=1e-6)

    def test_temperature_must_be_positive(self):
        with pytest.raises(TrainingError):
            dwa_weights(LossHistory(["a"]), temperature=0.0)


class TestTrainingState:

    def test_history_requires_every_task(self):
        history = LossHistory(["a", "b"])
        with pytest.raises(TrainingStateError):
            history.record({"a": 1.0})
        with pytest.raises(TrainingStateError):
            history.record({"a": 1.0, "b": -0.1})
        assert len(history) == 0

    def test_activities_are_bounded(self):
        state = TrainingState(max_activities=3)
        for i in range(5):
            state.epoch = i
            state.add_activity("stage2", "epoch", {"val": float(i)})
        activities = state.get_activities()
        assert [a["epoch"] for a in activities] == [2, 3, 4]
        assert activities[-1]["stage"] == "stage2"
        assert activities[-1]["val"] == 4.0

    def test_best_loss(self):
        state = TrainingState()
        assert state.update_best(1.0)
        assert not state.update_best(2.0)
        assert state.update_best(0.5)
        assert state.best_loss == 0.5


class TestSchedule:

    def test_defaults(self):
        cfg = TrainConfig()
        assert (cfg.batch_size, cfg.lr_stage1, cfg.lr_stage2) == (64, 2e-4, 4.5e-4)
        assert (cfg.lr_factor, cfg.lr_patience, cfg.min_lr) == (0.5, 10, 1e-6)

    @pytest.mark.parametrize("kwargs", [
        {"lr_stage1": 0.0},
        {"lr_stage2": -1e-3},
        {"lr_patience": 0},
        {"dwa_temperature": 0.0},
        {"val_fraction": 1.0},
        {"loss_denominator": "mean"},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(TrainingError):
            TrainConfig(**kwargs)

    def test_halves_after_ten_flat_epochs(self):
        param = torch.nn.Parameter(torch.zeros(1))
        optimizer = torch.optim.Adam([param], lr=4.5e-4)
        scheduler = make_scheduler(optimizer, TrainConfig())
        for _ in range(11):
            scheduler.step(1.0)
        assert optimizer.param_groups[0]["lr"] == pytest.approx(4.5e-4)
        scheduler.step(1.0)
        assert optimizer.param_groups[0]["lr"] == pytest.approx(2.25e-4)

    def test_floor(self):
        param = torch.nn.Parameter(torch.zeros(1))
        optimizer = torch.optim.Adam([param], lr=1e-3)
        scheduler = make_scheduler(optimizer, TrainConfig(lr_patience=1))
        for _ in range(200):
            scheduler.step(1.0)
        assert optimizer.param_groups[0]["lr"] == pytest.approx(1e-6)


class TestObjective:

    def test_identity(self):
        x = torch.rand(3, 1, 8, 8, dtype=torch.float64) + 0.1
        assert float(nmse_loss(x, x)) == 0.0

    def test_denominators(self):
        u = torch.rand(2, 1, 4, 4, dtype=torch.float64) + 0.1
        assert float(nmse_loss(u, 2 * u)) == pytest.approx(1.0, rel=1e-9)
        assert float(nmse_loss(u, 2 * u, "target")) == pytest.approx(0.25, rel=1e-9)

    def test_mean_of_per_sample_ratios(self):
        prediction = torch.ones(2, 1, 2, 2, dtype=torch.float64)
        target = torch.stack([torch.ones(1, 2, 2), 3 * torch.ones(1, 2, 2)]).double()
        assert float(nmse_loss(prediction, target)) == pytest.approx((0.0 + 4.0) / 2)


class TestValidationSplit:

    def test_deterministic_and_disjoint(self):
        ids = [f"snap-{i}" for i in range(200)]
        train, val = validation_split(ids, 0.1)
        assert (train, val) == validation_split(ids, 0.1)
        assert set(train).isdisjoint(val)
        assert sorted(train + val) == sorted(ids)
        assert 5 <= len(val) <= 40

    def test_zero_fraction(self):
        train, val = validation_split(["a", "b"], 0.0)
        assert (train, val) == (["a", "b"], [])


def tiny_tokenizer(cfg, seed=0):
    torch.manual_seed(seed)
    return VQTokenizer(cfg)


class TestStage1:

    def test_collect_rasters(self, toy_manifest):
        images = collect_rasters(toy_manifest)
        maps = collect_rasters(toy_manifest, "power")
        assert images.shape == (8, 3, 16, 16)
        assert maps.shape == (8, 1, 8, 8)
        with pytest.raises(EmptySubsetError):
            collect_rasters(toy_manifest, "aod_az")

    def test_curves_and_lambdas(self, toy_manifest):
        result = train_stage1(tiny_tokenizer(IMAGE_CFG), collect_rasters(toy_manifest), SHORT)
        components = {p.component for p in result.curves}
        assert {"total", "mse", "ssim", "codebook", "commitment", "gan_g", "gan_d", "lambda", "lr"} <= components
        assert len(result.curve("total")) == SHORT.epochs
        assert len(result.lambdas) == SHORT.epochs * 2
        assert all(math.isfinite(v) and v >= 0 for v in result.lambdas)
        assert result.checkpoint.kind == "tokenizer"
        assert result.checkpoint.metadata["epoch"] == SHORT.epochs

    def test_same_seed_same_curves(self, toy_manifest):
        rasters = collect_rasters(toy_manifest)
        first = train_stage1(tiny_tokenizer(IMAGE_CFG), rasters, SHORT)
        second = train_stage1(tiny_tokenizer(IMAGE_CFG), rasters, SHORT)
        assert [p.value for p in first.curves] == [p.value for p in second.curves]

    def test_gan_warm_up(self, toy_manifest):
        cfg = TrainConfig(batch_size=8, epochs=2, seed=0, gan_start_epoch=1)
        result = train_stage1(tiny_tokenizer(MAP_CFG), collect_rasters(toy_manifest, "power"), cfg, source="power")
        assert result.curve("lambda")[0] == 0.0
        assert result.curve("gan_d")[0] == 0.0
        assert result.curve("gan_d")[1] > 0.0

    def test_float32_without_gan(self):
        rasters = torch.rand(4, 1, 8, 8, generator=torch.Generator().manual_seed(0))
        state = TrainingState()
        cfg = TrainConfig(batch_size=4, epochs=1, seed=0, gan_start_epoch=5)
        result = train_stage1(tiny_tokenizer(MAP_CFG), rasters, cfg, source="power", state=state)
        assert result.lambdas == [0.0]
        assert result.curve("gan_g") == [0.0]
        assert math.isfinite(result.curve("total")[0])
        assert [a["action"] for a in state.get_activities()] == ["epoch"]
        assert state.best_loss == result.curve("total")[0]

    def test_checkpoint_restores_tokenizer(self, toy_manifest):
        rasters = collect_rasters(toy_manifest, "delay")
        result = train_stage1(tiny_tokenizer(MAP_CFG), rasters, SHORT, source="delay")
        restored = tokenizer_from_checkpoint(result.checkpoint)
        assert result.checkpoint.config["source"] == "delay"
        with torch.no_grad():
            assert torch.equal(restored(rasters)[0], result.tokenizer(rasters)[0])

    def test_nan_input_diverges(self):
        rasters = torch.full((2, 1, 8, 8), float("nan"))
        with pytest.raises(DivergedError) as info:
            train_stage1(tiny_tokenizer(MAP_CFG), rasters, SHORT)
        assert info.value.code == "diverged"
        assert info.value.last_good is None

    def test_empty(self):
        with pytest.raises(EmptySubsetError):
            train_stage1(tiny_tokenizer(MAP_CFG), torch.zeros(0, 1, 8, 8), SHORT)

    @pytest.mark.slow
    def test_overfits_eight_samples(self, toy_manifest):
        rasters = collect_rasters(toy_manifest, "power").double()
        tokenizer = tiny_tokenizer(MAP_CFG).double()
        cfg = TrainConfig(batch_size=2, epochs=200, seed=0, lr_stage1=2e-3, gan_start_epoch=200)
        train_stage1(tokenizer, rasters, cfg)
        with torch.no_grad():
            x_hat = tokenizer(rasters)[0]
        per_sample = ((x_hat - rasters) ** 2).mean(dim=(1, 2, 3))
        assert float(per_sample.max()) < 1e-3


def stage1_params(model):
    return {n: p.detach().clone() for n, p in model.named_parameters()
            if n.startswith("image_tokenizer.") or n.startswith("mapper.decoders.")}


class TestStage2:

    def test_curves_and_weights(self, toy_manifest):
        model = build_toy_model()
        state = TrainingState(TOY_TASKS)
        result = train_stage2(model, SnapshotDataset(toy_manifest, TOY_TASKS), SHORT, state=state)
        for task in TOY_TASKS:
            assert len(result.curve(f"nmse/{task}")) == SHORT.epochs
        for epoch in range(SHORT.epochs):
            total = sum(result.curve(f"dwa/{task}")[epoch] for task in TOY_TASKS)
            assert total == pytest.approx(len(TOY_TASKS), abs=1e-6)
        assert len(state.history) == SHORT.epochs
        assert result.checkpoint.kind == "pathmap-model"
        assert state.get_activities()[-1]["action"] == "epoch"

    def test_stage1_stays_frozen(self, toy_manifest):
        model = build_toy_model()
        before = stage1_params(model)
        train_stage2(model, SnapshotDataset(toy_manifest, TOY_TASKS), SHORT)
        after = stage1_params(model)
        assert all(torch.equal(before[n], after[n]) for n in before)

    def test_trains_mapper(self, toy_manifest):
        model = build_toy_model()
        before = {n: p.detach().clone() for n, p in model.mapper.token_blocks.named_parameters()}
        train_stage2(model, SnapshotDataset(toy_manifest, TOY_TASKS), SHORT)
        changed = [n for n, p in model.mapper.token_blocks.named_parameters() if not torch.equal(before[n], p)]
        assert changed

    def test_same_seed_same_curves(self, toy_manifest):
        dataset = SnapshotDataset(toy_manifest, TOY_TASKS)
        first = train_stage2(build_toy_model(), dataset, SHORT)
        second = train_stage2(build_toy_model(), dataset, SHORT)
        assert [p.value for p in first.curves] == [p.value for p in second.curves]

    def test_with_validation_split(self, tmp_path):
        manifest = write_toy_manifest(tmp_path, n=20)
        cfg = TrainConfig(batch_size=8, epochs=1, seed=0, val_fraction=0.3)
        result = train_stage2(build_toy_model(), SnapshotDataset(manifest, TOY_TASKS), cfg)
        assert result.curve("val")[0] >= 0

    def test_gate_log(self, toy_manifest, tmp_path):
        path = tmp_path / "gates.csv"
        result = train_stage2(build_toy_model(), SnapshotDataset(toy_manifest, TOY_TASKS), SHORT, gate_log_path=path)
        records = read_gate_log(path)
        assert len(records) == len(result.gate_records) > 0
        assert {r.block for r in records} == {"token0", "task0"}

    def test_incomplete_snapshot(self, toy_manifest):
        with pytest.raises(IncompleteSnapshotError) as info:
            SnapshotDataset(toy_manifest, ("power", "aod_az"))
        assert info.value.code == "incomplete-snapshot"

    def test_unknown_task(self, toy_manifest):
        with pytest.raises(UnknownTaskError):
            train_stage2(build_toy_model(), SnapshotDataset(toy_manifest, TOY_TASKS), SHORT, tasks=["aod_el"])

    def test_path_index_conditioning(self, tmp_path):
        manifest = write_toy_manifest(tmp_path, n=4, path_indices=(1, 2))
        model = build_toy_model(max_path_index=2)
        result = train_stage2(model, SnapshotDataset(manifest, TOY_TASKS), SHORT)
        assert len(result.curve("val")) == SHORT.epochs

    @pytest.mark.slow
    def test_overfits_toy_set(self, tmp_path):
        manifest = write_toy_manifest(tmp_path, n=32)
        model = build_toy_model(dtype=torch.float64)
        model.mapper.set_trainable("full", train_decoders=True)
        cfg = TrainConfig(batch_size=8, epochs=300, seed=0, val_fraction=0.0, freeze_stage1=False, lr_stage2=1e-3)
        result = train_stage2(model, SnapshotDataset(manifest, TOY_TASKS, dtype=torch.float64), cfg)
        for task in TOY_TASKS:
            assert result.curve(f"nmse/{task}")[-1] < 0.1


class TestFinetune:

    def test_task_wise_only_keeps_token_wise_identical(self, toy_manifest):
        model = build_toy_model()
        dataset = SnapshotDataset(toy_manifest, TOY_TASKS)
        scopes = model.scopes()
        before = {n: p.detach().clone() for n, p in model.named_parameters()}
        result = finetune(model, take_subset(dataset, 4, seed=1), FinetunePolicy("task_wise_only", 10), SHORT)
        params = dict(model.named_parameters())
        for name in scopes["token_wise"] + scopes["fusion"]:
            assert params[name].detach().numpy().tobytes() == before[name].numpy().tobytes()
        assert any(not torch.equal(before[n], params[n]) for n in scopes["task_wise"])
        assert 0 < result.trainable_fraction < 1
        assert {r.task for r in result.records} == set(TOY_TASKS)
        assert all(r.sample_count == 4 for r in result.records)

    def test_full_mode_trains_token_wise(self, toy_manifest):
        model = build_toy_model()
        dataset = SnapshotDataset(toy_manifest, TOY_TASKS)
        before = {n: p.detach().clone() for n, p in model.mapper.token_blocks.named_parameters()}
        result = finetune(model, dataset, FinetunePolicy("full", 8), SHORT)
        assert any(not torch.equal(before[n], p) for n, p in model.mapper.token_blocks.named_parameters())
        assert not any(name.startswith("mapper.token_blocks") for name in result.frozen)

    def test_new_task_only_touches_the_new_task(self, tmp_path):
        manifest = write_toy_manifest(tmp_path, n=4, tasks=("power", "delay", "aod_az"))
        model = build_toy_model()
        model.mapper.add_task("aod_az", freeze_policy="new_task")
        before = {n: p.detach().clone() for n, p in model.named_parameters()}
        dataset = SnapshotDataset(manifest, ["aod_az"])
        policy = FinetunePolicy("new_task", 4, new_tasks=("aod_az",))
        finetune(model, dataset, policy, SHORT, tasks=["aod_az"])
        for name, param in model.named_parameters():
            if "aod_az" not in name:
                assert torch.equal(before[name], param), name

    def test_budget(self, toy_manifest):
        dataset = SnapshotDataset(toy_manifest, TOY_TASKS)
        with pytest.raises(SampleBudgetError) as info:
            finetune(build_toy_model(), dataset, FinetunePolicy("full", 3), SHORT)
        assert info.value.code == "sample-budget"

    def test_subsets(self, toy_manifest):
        dataset = SnapshotDataset(toy_manifest, TOY_TASKS)
        assert [e.id for e in take_subset(dataset, 3, 5).entries] == [e.id for e in take_subset(dataset, 3, 5).entries]
        with pytest.raises(EmptySubsetError) as info:
            take_subset(dataset, 0)
        assert info.value.code == "empty-subset"
        with pytest.raises(SampleBudgetError):
            take_subset(dataset, 9)

    def test_unknown_mode(self):
        with pytest.raises(TrainingError):
            FinetunePolicy("everything", 10)
