import copy

import pytest
import torch
from hypothesis import given, settings, strategies as st

from pathmaps.core.mapper import (
    TASK_WISE,
    BadFrequencyError,
    DuplicateTaskError,
    FrequencyEmbedding,
    MapperConfig,
    MapperError,
    MapperStack,
    MissingPathEmbeddingError,
    MoELayerConfig,
    TaskMoE,
    TokenMoE,
    UnknownTaskError,
    normalized_log_frequency,
    top_k_mask,
    trainable_fraction,
)
from pathmaps.core.tokenizer import TokenizerBank, TokenizerConfig

MAP_CFG = TokenizerConfig(depth=1, width=16, heads=2, patch_size=4, K=8, n_z=4, channels=1)
TINY = MapperConfig(d=16, heads=2, n_token_blocks=1, n_task_blocks=1, n_shared=1, n_routed=3, top_k=2,
                    task_n_shared=1, task_n_routed=3, task_top_k=2, expert_hidden=16, tasks=("power", "delay"))


def make_stack(cfg=TINY, seed=0):
    torch.manual_seed(seed)
    return MapperStack(cfg, TokenizerBank(MAP_CFG, cfg.tasks))


def token_layer(n_shared=1, n_routed=4, top_k=2, freq=True, d=8, seed=0):
    torch.manual_seed(seed)
    cfg = MoELayerConfig(n_shared=n_shared, n_routed=n_routed, top_k=top_k, expert_hidden=8, freq_conditioned=freq)
    return TokenMoE(d, cfg).double()


def ranked_gates(probs, k):
    """Reference Top-K: rank by (-p, index) in plain python."""
    out = torch.zeros_like(probs)
    flat_probs = probs.reshape(-1, probs.shape[-1])
    flat_out = out.reshape(-1, probs.shape[-1])
    for row in range(flat_probs.shape[0]):
        values = flat_probs[row].tolist()
        keep = sorted(range(len(values)), key=lambda i: (-values[i], i))[:k]
        for i in keep:
            flat_out[row, i] = flat_probs[row, i]
    return out


def dense_output(layer, x, gates):
    out = torch.zeros_like(x)
    for expert in layer.shared:
        out = out + expert(x)
    for k, expert in enumerate(layer.routed):
        out = out + gates[..., k:k + 1] * expert(x)
    return out


class TestFrequencyEmbedding:

    def test_anchor_and_injectivity(self):
        u = normalized_log_frequency(torch.tensor([1e9, 1.6e9, 28e9, 30e9]))
        assert u[0].item() == 0.0
        assert u[3].item() == pytest.approx(1.0)
        assert u[1].item() != u[2].item()

    @pytest.mark.parametrize("freq", [0.0, -2.4e9, float("nan")])
    def test_bad_frequency(self, freq):
        with pytest.raises(BadFrequencyError) as info:
            FrequencyEmbedding(8)(torch.tensor([freq]))
        assert info.value.code == "bad-frequency"

    def test_distinct_frequencies_embed_differently(self):
        for seed in range(10):
            torch.manual_seed(seed)
            out = FrequencyEmbedding(8)(torch.tensor([1.6e9, 28e9]))
            assert out.shape == (2, 8)
            assert not torch.equal(out[0], out[1])


class TestTokenMoE:

    def test_tie_break_prefers_lowest_index(self):
        mask = top_k_mask(torch.full((1, 4), 0.25), 2)
        assert mask.tolist() == [[1.0, 1.0, 0.0, 0.0]]

    @settings(max_examples=40, deadline=None)
    @given(
        n_shared=st.integers(min_value=0, max_value=2),
        n_routed=st.integers(min_value=1, max_value=6),
        top_k=st.integers(min_value=1, max_value=3),
        seed=st.integers(min_value=0, max_value=1000),
    )
    def test_matches_masked_dense_mixture(self, n_shared, n_routed, top_k, seed):
        top_k = min(top_k, n_routed)
        layer = token_layer(n_shared, n_routed, top_k, seed=seed)
        gen = torch.Generator().manual_seed(seed)
        x = torch.randn(2, 8, 8, generator=gen, dtype=torch.float64)
        e_f = torch.randn(2, 8, generator=gen, dtype=torch.float64)
        out = layer(x, e_f)
        probs = layer.gate_probs(x, e_f)
        gates = ranked_gates(probs, top_k)
        assert torch.allclose(out, dense_output(layer, x, gates), atol=1e-6, rtol=0)
        assert torch.allclose(layer.last_probs.sum(dim=-1), torch.ones(2, 8, dtype=torch.float64), atol=1e-6)
        assert torch.all((layer.last_gates != 0).sum(dim=-1) == top_k)

    def test_full_top_k_is_dense(self):
        layer = token_layer(n_routed=4, top_k=4)
        x = torch.randn(1, 5, 8, dtype=torch.float64)
        e_f = torch.randn(1, 8, dtype=torch.float64)
        out = layer(x, e_f)
        assert torch.allclose(out, dense_output(layer, x, layer.gate_probs(x, e_f)), atol=1e-12)

    def test_top_one_uses_argmax_expert(self):
        layer = token_layer(n_routed=3, top_k=1)
        x = torch.randn(1, 1, 8, dtype=torch.float64)
        e_f = torch.randn(1, 8, dtype=torch.float64)
        out = layer(x, e_f)
        probs = layer.last_probs[0, 0]
        best = int(torch.argmax(probs))
        expected = layer.shared[0](x) + probs[best] * layer.routed[best](x)
        assert torch.allclose(out, expected, atol=1e-12)

    def test_shared_expert_is_live(self):
        layer = token_layer()
        x = torch.randn(1, 4, 8, dtype=torch.float64)
        e_f = torch.randn(1, 8, dtype=torch.float64)
        before = layer(x, e_f)
        with torch.no_grad():
            layer.shared[0][2].weight.zero_()
            layer.shared[0][2].bias.zero_()
        assert not torch.equal(before, layer(x, e_f))

    def test_unselected_routed_expert_is_inert(self):
        layer = token_layer(n_routed=4, top_k=2)
        with torch.no_grad():
            layer.g_f.bias.copy_(torch.tensor([50.0, 40.0, 0.0, 0.0], dtype=torch.float64))
        x = torch.randn(2, 4, 8, dtype=torch.float64) * 0.01
        e_f = torch.zeros(2, 8, dtype=torch.float64)
        before = layer(x, e_f)
        assert torch.all(layer.last_gates[..., 3] == 0)
        with torch.no_grad():
            for param in layer.routed[3].parameters():
                param.zero_()
        assert torch.equal(before, layer(x, e_f))

    def test_frequency_blind_gates_ignore_frequency(self):
        layer = token_layer(freq=False)
        x = torch.randn(1, 6, 8, dtype=torch.float64)
        layer(x, torch.randn(1, 8, dtype=torch.float64))
        first = layer.last_probs
        layer(x, torch.randn(1, 8, dtype=torch.float64))
        assert torch.equal(first, layer.last_probs)

    def test_frequency_changes_gates(self):
        layer = token_layer()
        x = torch.randn(1, 6, 8, dtype=torch.float64)
        layer(x, torch.randn(1, 8, dtype=torch.float64))
        first = layer.last_probs
        layer(x, torch.randn(1, 8, dtype=torch.float64))
        assert not torch.equal(first, layer.last_probs)

    def test_permuting_experts_with_gate_rows(self):
        layer = token_layer(n_routed=4, top_k=2, seed=3)
        perm = [2, 0, 3, 1]
        permuted = copy.deepcopy(layer)
        permuted.routed = torch.nn.ModuleList([copy.deepcopy(layer.routed[i]) for i in perm])
        with torch.no_grad():
            permuted.g_f.weight.copy_(layer.g_f.weight[perm])
            permuted.g_f.bias.copy_(layer.g_f.bias[perm])
        x = torch.randn(2, 5, 8, dtype=torch.float64)
        e_f = torch.randn(2, 8, dtype=torch.float64)
        assert torch.allclose(layer(x, e_f), permuted(x, e_f), atol=1e-6)

    def test_config_validation(self):
        with pytest.raises(MapperError):
            MoELayerConfig(n_shared=0, n_routed=0)
        with pytest.raises(MapperError):
            MoELayerConfig(n_routed=3, top_k=4)
        assert MoELayerConfig(n_shared=2, n_routed=0, top_k=0).n_routed == 0


class TestTaskMoE:

    def layer(self, tasks=("power", "delay"), n_routed=4, top_k=2, seed=0):
        torch.manual_seed(seed)
        cfg = MoELayerConfig(n_shared=1, n_routed=n_routed, top_k=top_k, expert_hidden=8, style=TASK_WISE,
                             freq_conditioned=False)
        return TaskMoE(8, cfg, list(tasks)).double()

    def test_matches_dense_mixture_with_one_gate_per_sample(self):
        layer = self.layer()
        x = torch.randn(3, 6, 8, dtype=torch.float64)
        out = layer(x, "power")
        gates = ranked_gates(layer.last_probs["power"], 2)
        expected = dense_output(layer, x, gates[:, None, :])
        assert torch.allclose(out, expected, atol=1e-6)
        assert torch.all((layer.last_gates["power"] != 0).sum(dim=-1) == 2)

    def test_full_top_k_is_dense(self):
        layer = self.layer(n_routed=3, top_k=3)
        x = torch.randn(2, 4, 8, dtype=torch.float64)
        out = layer(x, "delay")
        expected = dense_output(layer, x, layer.last_probs["delay"][:, None, :])
        assert torch.allclose(out, expected, atol=1e-12)

    def test_tasks_have_independent_gates(self):
        for seed in range(10):
            layer = self.layer(seed=seed)
            x = torch.randn(2, 4, 8, dtype=torch.float64)
            layer(x, "power")
            layer(x, "delay")
            assert not torch.equal(layer.last_probs["power"], layer.last_probs["delay"])

    def test_unknown_task(self):
        with pytest.raises(UnknownTaskError) as info:
            self.layer()(torch.zeros(1, 2, 8, dtype=torch.float64), "aoa_az")
        assert info.value.code == "unknown-task"


class TestMapperStack:

    def inputs(self, batch=2, seed=0):
        gen = torch.Generator().manual_seed(seed)
        return torch.randn(batch, 2, 2, 16, generator=gen), torch.tensor([1.6e9, 28e9][:batch])

    def test_one_grid_per_task(self):
        stack = make_stack()
        z, f = self.inputs()
        out = stack(z, f)
        assert list(out) == ["power", "delay"]
        assert all(grid.shape == (2, 2, 2, 16) for grid in out.values())

    def test_predict_renders_maps(self):
        stack = make_stack()
        z, f = self.inputs()
        maps = stack.predict(z, f, ["delay"])
        assert list(maps) == ["delay"]
        assert maps["delay"].shape == (2, 1, 8, 8)

    def test_tokens_are_pooled_onto_the_map_grid(self):
        z, f = self.inputs()
        assert make_stack().predict(z, f, ["power"], grid_size=(1, 1))["power"].shape == (2, 1, 4, 4)

    def test_unknown_task(self):
        z, f = self.inputs()
        with pytest.raises(UnknownTaskError):
            make_stack()(z, f, ["aoa_el"])

    def test_missing_decoder(self):
        with pytest.raises(UnknownTaskError):
            MapperStack(TINY, TokenizerBank(MAP_CFG, ["power"]))

    def test_frequency_changes_token_routing(self):
        stack = make_stack()
        z, _ = self.inputs(batch=1)
        stack(z, torch.tensor([1.6e9]))
        low = stack.token_blocks[0].moe.last_probs
        stack(z, torch.tensor([28e9]))
        assert not torch.equal(low, stack.token_blocks[0].moe.last_probs)

    def test_path_index_needs_table(self):
        z, f = self.inputs()
        with pytest.raises(MissingPathEmbeddingError):
            make_stack()(z, f, path_index=torch.tensor([1, 1]))

    def test_path_index_conditions_output(self):
        stack = make_stack(MapperConfig(**{**TINY.to_dict(), "max_path_index": 3}))
        z, f = self.inputs()
        first = stack(z, f, ["power"], path_index=torch.tensor([1, 1]))["power"]
        second = stack(z, f, ["power"], path_index=torch.tensor([2, 2]))["power"]
        assert not torch.equal(first, second)
        with pytest.raises(MapperError):
            stack(z, f, path_index=torch.tensor([4, 1]))

    def test_snapped_decoder_inputs_are_codebook_rows(self):
        stack = make_stack()
        decoder = stack.decoders["power"]
        seen = []
        original = decoder.decode
        decoder.decode = lambda codes: seen.append(codes) or original(codes)
        z, f = self.inputs()
        stack.predict(z, f, ["power"], snap_codes=True)
        rows = decoder.codebook.entries.detach()
        assert all(any(torch.equal(t, r) for r in rows) for t in seen[0].reshape(-1, 4))

    def test_gate_records(self):
        stack = make_stack()
        z, f = self.inputs()
        stack(z, f)
        records = stack.gate_records(f)
        token = [r for r in records if r.block == "token0"]
        task = [r for r in records if r.block == "task0"]
        assert len(token) == 2 * 4 * 2
        assert len(task) == 2 * 2 * 2
        assert {r.frequency_hz for r in token} == {1.6e9, 28e9}

    def test_no_routed_experts_log_no_gates(self):
        stack = make_stack(MapperConfig(**{**TINY.to_dict(), "n_routed": 0, "task_n_routed": 0}))
        z, f = self.inputs()
        stack(z, f)
        assert stack.gate_records(f) == []
        assert len(stack.token_blocks[0].moe.routed) == 0


class TestAddTask:

    def test_existing_outputs_unchanged(self):
        stack = make_stack()
        z, f = torch.randn(2, 2, 2, 16), torch.tensor([5.9e9, 15e9])
        before = stack.predict(z, f)
        stack.add_task("aoa_az")
        after = stack.predict(z, f)
        assert stack.tasks == ["power", "delay", "aoa_az"]
        for task in before:
            assert torch.equal(before[task], after[task])
        assert after["aoa_az"].shape == (2, 1, 8, 8)

    def test_duplicate(self):
        with pytest.raises(DuplicateTaskError):
            make_stack().add_task("power")

    def test_task_wise_only_freeze_scope(self):
        stack = make_stack()
        stack.add_task("aoa_az", freeze_policy="task_wise_only")
        for name, param in stack.named_parameters():
            if name.startswith("task_blocks") or ".aoa_az." in f".{name}":
                assert param.requires_grad, name
            else:
                assert not param.requires_grad, name
        assert 0.0 < trainable_fraction(stack) < 1.0

    def test_new_task_freeze_scope(self):
        stack = make_stack()
        stack.add_task("aoa_az", freeze_policy="new_task")
        trainable = [name for name, p in stack.named_parameters() if p.requires_grad]
        assert trainable
        assert all("aoa_az" in name for name in trainable)

    def test_unknown_policy(self):
        with pytest.raises(MapperError):
            make_stack().set_trainable("everything")

    def test_scopes_cover_all_parameters(self):
        stack = make_stack()
        scopes = stack.parameter_scopes()
        assert set(scopes) == {"embeddings", "token_wise", "task_wise", "heads", "decoders"}
        assert sum(len(v) for v in scopes.values()) == len(list(stack.parameters()))
