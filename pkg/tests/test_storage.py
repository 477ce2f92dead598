import json

import numpy as np
import pytest
import torch

from pathmaps.storage import (
    BadMagicError,
    Checkpoint,
    CurvePoint,
    DatasetManifest,
    GateRecord,
    IncompleteSnapshotError,
    ManifestEntry,
    SchemaError,
    SnapshotDataset,
    StorageError,
    TruncatedFileError,
    codebook_from_bytes,
    codebook_to_bytes,
    collate_snapshots,
    load_checkpoint,
    read_curves,
    read_gate_log,
    read_manifest,
    read_raster,
    save_checkpoint,
    write_curves,
    write_gate_log,
    write_manifest,
    write_raster,
)


def make_entry(idx=0, params=("power", "delay"), **kwargs):
    return ManifestEntry(
        id=f"snap-{idx}",
        scenario="crossroad",
        altitude_m=70.0,
        frequency_hz=28e9,
        image_path=f"images/{idx}.f32r",
        map_paths={p: f"maps/{idx}/{p}.f32r" for p in params},
        mask_path=f"maps/{idx}/mask.f32r",
        path_index=1,
        **kwargs,
    )


def write_snapshot_files(root, entry, rng):
    write_raster(root / entry.image_path, rng.random((16, 16, 3)))
    for path in entry.map_paths.values():
        write_raster(root / path, rng.random((8, 8)))
    write_raster(root / entry.mask_path, np.ones((8, 8)))


class TestRaster:

    def test_zero_raster_file_size(self, tmp_path):
        path = write_raster(tmp_path / "zeros.f32r", np.zeros((32, 32, 1)))
        assert path.stat().st_size == 16 + 4096
        assert path.read_bytes()[:4] == b"F32R"

    def test_random_raster_is_bit_identical(self, tmp_path):
        data = np.random.default_rng(7).standard_normal((5, 7, 3)).astype(np.float32)
        back = read_raster(write_raster(tmp_path / "r.f32r", data))
        assert back.dtype == np.float32
        assert back.tobytes() == data.tobytes()

    def test_two_dimensional_input_gets_one_channel(self, tmp_path):
        back = read_raster(write_raster(tmp_path / "m.f32r", np.ones((4, 6))))
        assert back.shape == (4, 6, 1)

    def test_corrupt_magic(self, tmp_path):
        path = write_raster(tmp_path / "r.f32r", np.zeros((2, 2)))
        path.write_bytes(b"XXXX" + path.read_bytes()[4:])
        with pytest.raises(BadMagicError) as info:
            read_raster(path)
        assert info.value.code == "bad-magic"

    def test_truncated_payload(self, tmp_path):
        path = write_raster(tmp_path / "r.f32r", np.zeros((4, 4)))
        path.write_bytes(path.read_bytes()[:-3])
        with pytest.raises(TruncatedFileError):
            read_raster(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(StorageError):
            read_raster(tmp_path / "absent.f32r")

    def test_unwritable_directory(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(StorageError):
            write_raster(blocker / "sub" / "r.f32r", np.zeros((2, 2)))


class TestManifest:

    def test_write_then_read(self, tmp_path):
        manifest = DatasetManifest(seed=3, snapshots=[make_entry(0), make_entry(1, dataset="d", step=2)])
        write_manifest(manifest, tmp_path)
        back = read_manifest(tmp_path)
        assert back.to_dict() == manifest.to_dict()
        assert back.root == tmp_path
        assert back.params() == ["delay", "power"]

    def test_missing_key(self, tmp_path):
        doc = DatasetManifest(snapshots=[make_entry()]).to_dict()
        del doc["snapshots"][0]["mask_path"]
        (tmp_path / "manifest.json").write_text(json.dumps(doc))
        with pytest.raises(SchemaError, match="mask_path"):
            read_manifest(tmp_path / "manifest.json")

    def test_unknown_key(self, tmp_path):
        doc = DatasetManifest(snapshots=[make_entry()]).to_dict()
        doc["snapshots"][0]["colour"] = "red"
        (tmp_path / "manifest.json").write_text(json.dumps(doc))
        with pytest.raises(SchemaError, match="colour"):
            read_manifest(tmp_path)

    def test_delay_span(self, tmp_path):
        write_manifest(DatasetManifest(snapshots=[make_entry(0, delay_span_s=1.25e-6), make_entry(1)]), tmp_path)
        spans = [s.delay_span_s for s in read_manifest(tmp_path).snapshots]
        assert spans == [1.25e-6, None]
        doc = DatasetManifest(snapshots=[make_entry(delay_span_s=-1.0)]).to_dict()
        (tmp_path / "manifest.json").write_text(json.dumps(doc))
        with pytest.raises(SchemaError, match="delay_span_s"):
            read_manifest(tmp_path)

    def test_duplicate_ids(self, tmp_path):
        doc = DatasetManifest(snapshots=[make_entry(0), make_entry(0)]).to_dict()
        (tmp_path / "manifest.json").write_text(json.dumps(doc))
        with pytest.raises(SchemaError):
            read_manifest(tmp_path)

    def test_not_json(self, tmp_path):
        (tmp_path / "manifest.json").write_text("{nope")
        with pytest.raises(SchemaError):
            read_manifest(tmp_path)

    def test_select_filters(self):
        manifest = DatasetManifest(snapshots=[make_entry(0, dataset="a"), make_entry(1, dataset="b")])
        assert [s.id for s in manifest.select(datasets=["b"]).snapshots] == ["snap-1"]
        assert len(manifest.select(frequencies=[1.6e9])) == 0
        assert manifest.datasets() == ["a", "b"]


class TestCheckpoint:

    def test_codebook_blob_layout(self):
        entries = torch.arange(6, dtype=torch.float32).reshape(3, 2)
        blob = codebook_to_bytes(entries)
        assert blob[:8] == (3).to_bytes(4, "little") + (2).to_bytes(4, "little")
        assert len(blob) == 8 + 4 * 6
        assert torch.equal(codebook_from_bytes(blob), entries)

    def test_truncated_codebook(self):
        blob = codebook_to_bytes(torch.zeros(4, 4))
        with pytest.raises(TruncatedFileError):
            codebook_from_bytes(blob[:-1])

    def test_save_and_load(self, tmp_path):
        state = {"w": torch.randn(3, 3)}
        ckpt = Checkpoint(
            kind="tokenizer",
            config={"K": 8, "n_z": 4},
            state_dict=state,
            codebooks={"image": codebook_to_bytes(torch.randn(8, 4))},
            scopes={"frozen": ["w"]},
            metadata={"seed": 1},
        )
        back = load_checkpoint(save_checkpoint(tmp_path / "c.pt", ckpt))
        assert back.kind == "tokenizer" and back.config == {"K": 8, "n_z": 4}
        assert torch.equal(back.state_dict["w"], state["w"])
        assert back.codebooks["image"] == ckpt.codebooks["image"]
        assert back.scopes == {"frozen": ["w"]}

    def test_not_a_checkpoint(self, tmp_path):
        torch.save({"hello": 1}, tmp_path / "x.pt")
        with pytest.raises(SchemaError):
            load_checkpoint(tmp_path / "x.pt")


class TestLogs:

    def test_curves_keep_exact_values(self, tmp_path):
        points = [CurvePoint(1, "power", 0.1 + 0.2), CurvePoint(2, "power", 1e-17)]
        assert read_curves(write_curves(tmp_path / "c.csv", points)) == points

    def test_gate_log(self, tmp_path):
        records = [GateRecord("token0", "3", 1, 0.25, 28e9)]
        assert read_gate_log(write_gate_log(tmp_path / "g.csv", records)) == records


class TestSnapshotDataset:

    def test_items_and_collate(self, tmp_path):
        rng = np.random.default_rng(0)
        entries = [make_entry(i) for i in range(3)]
        for entry in entries:
            write_snapshot_files(tmp_path, entry, rng)
        dataset = SnapshotDataset(DatasetManifest(snapshots=entries, root=tmp_path), ["power", "delay"])
        item = dataset[1]
        assert item["image"].shape == (3, 16, 16)
        assert item["maps"].shape == (2, 8, 8)
        assert bool(item["mask"].all())
        batch = collate_snapshots([dataset[0], dataset[2]])
        assert batch["maps"].shape == (2, 2, 8, 8)
        assert batch["id"] == ["snap-0", "snap-2"]

    def test_missing_task_map(self, tmp_path):
        manifest = DatasetManifest(snapshots=[make_entry(0, params=("power",))], root=tmp_path)
        with pytest.raises(IncompleteSnapshotError) as info:
            SnapshotDataset(manifest, ["power", "delay"])
        assert info.value.code == "incomplete-snapshot"

    def test_missing_file(self, tmp_path):
        entry = make_entry(0)
        dataset = SnapshotDataset(DatasetManifest(snapshots=[entry], root=tmp_path), ["power"])
        with pytest.raises(IncompleteSnapshotError):
            dataset[0]

    def test_empty_manifest(self, tmp_path):
        with pytest.raises(StorageError):
            SnapshotDataset(DatasetManifest(root=tmp_path), ["power"])
