import filecmp
import json
import os

import numpy as np
import pytest

from clip_exporter import ExportConfig, export_dataset
from clip_exporter.backbone import StubBackbone, load_backbone
from clip_exporter.cli import run
from clip_exporter.layout import LayoutError, walk_class

from conftest import make_class_tree, write_image, write_mask

# the scoring engine's reader is the contract oracle for the output format
devscore_embedstore = pytest.importorskip(
    "devscore.embedstore", reason="needs the scoring engine installed to verify the format"
)


def export_stub(root, out, class_name="bottle", **kwargs):
    config = ExportConfig(dataset_root=root, class_name=class_name,
                          out_dir=out, backbone="stub", **kwargs)
    return config, export_dataset(config)


class TestStubBackbone:
    def test_image_embeddings_unit_norm(self):
        bb = StubBackbone(dim=32, patch_size=16)
        rng = np.random.default_rng(0)
        grid, emb = bb.encode_image(rng.integers(0, 256, (64, 64, 3), dtype=np.uint8))
        assert grid == (4, 4)
        assert emb.shape == (16, 32)
        assert np.allclose(np.linalg.norm(emb.astype(np.float64), axis=1), 1.0,
                           atol=1e-6)

    def test_deterministic(self):
        bb = StubBackbone()
        img = np.full((64, 64, 3), 50, dtype=np.uint8)
        _, a = bb.encode_image(img)
        _, b = StubBackbone().encode_image(img)
        assert a.tobytes() == b.tobytes()

    def test_text_distinct_directions(self):
        bb = StubBackbone()
        e_n = bb.encode_text("a photo of a normal bottle")
        e_a = bb.encode_text("a photo of a defective bottle")
        assert e_n.tobytes() == bb.encode_text("a photo of a normal bottle").tobytes()
        assert float(e_n.astype(np.float64) @ e_a.astype(np.float64)) < 1 - 1e-6

    def test_spec_string(self):
        bb = load_backbone("stub:16:32")
        assert bb.dim == 16 and bb.patch_size == 32


class TestConfig:
    def test_template_placeholder_required(self, tmp_path):
        with pytest.raises(ValueError, match="placeholder"):
            ExportConfig(tmp_path, "bottle", tmp_path / "o",
                         template_normal="no placeholder here")

    def test_double_placeholder_rejected(self, tmp_path):
        with pytest.raises(ValueError, match="placeholder"):
            ExportConfig(tmp_path, "bottle", tmp_path / "o",
                         template_abnormal="{c} and {c}")

    def test_prompt_texts(self, tmp_path):
        config = ExportConfig(tmp_path, "bottle", tmp_path / "o")
        assert config.prompt_normal_text() == "a photo of a normal bottle"
        assert config.prompt_abnormal_text() == "a photo of a defective bottle"


class TestLayout:
    def test_walk_orders_and_labels(self, bench_root):
        entries = walk_class(bench_root / "bottle")
        train = [e for e in entries if e.split == "train"]
        assert [e.label for e in train] == [0, 0]
        test = [e for e in entries if e.split == "test"]
        by_cat = {e.image_id: (e.label, e.mask_path is not None) for e in test}
        assert by_cat["test_good_000"] == (0, False)
        assert by_cat["test_broken_000"] == (1, True)

    def test_missing_train_good(self, tmp_path):
        (tmp_path / "c" / "test" / "good").mkdir(parents=True)
        with pytest.raises(LayoutError, match="train/good"):
            walk_class(tmp_path / "c")

    def test_missing_mask(self, bench_root):
        victim = (bench_root / "bottle" / "ground_truth" / "broken"
                  / "000_mask.png")
        victim.unlink()
        with pytest.raises(LayoutError, match="broken/000"):
            walk_class(bench_root / "bottle")


class TestExport:
    def test_passes_downstream_validation(self, bench_root, tmp_path):
        _, out = export_stub(bench_root, tmp_path / "out")
        manifest = devscore_embedstore.read_dataset(out)
        assert devscore_embedstore.validate(manifest) == []

    def test_one_shot_train_split(self, bench_root, tmp_path):
        _, out = export_stub(bench_root, tmp_path / "out")
        manifest = devscore_embedstore.read_dataset(out)
        train = manifest.split_records("train")
        assert len(train) == 1
        assert train[0].image_id == "train_good_000"
        assert len(manifest.split_records("test")) == 4

    def test_labels_from_folder_names(self, bench_root, tmp_path):
        _, out = export_stub(bench_root, tmp_path / "out")
        manifest = devscore_embedstore.read_dataset(out)
        for rec in manifest.split_records("test"):
            expected = 0 if "_good_" in rec.image_id else 1
            assert rec.label == expected

    def test_prompts_unit_norm_and_distinct(self, bench_root, tmp_path):
        _, out = export_stub(bench_root, tmp_path / "out")
        manifest = devscore_embedstore.read_dataset(out)
        e_n = manifest.prompt_normal.astype(np.float64)
        e_a = manifest.prompt_abnormal.astype(np.float64)
        assert np.linalg.norm(e_n) == pytest.approx(1.0, abs=1e-6)
        assert float(e_n @ e_a) < 1 - 1e-6

    def test_normal_test_masks_all_zero(self, bench_root, tmp_path):
        _, out = export_stub(bench_root, tmp_path / "out")
        manifest = devscore_embedstore.read_dataset(out)
        for rec in manifest.split_records("test"):
            assert rec.mask.shape == (256, 256)
            if rec.label == 0:
                assert not rec.mask.any()
            else:
                assert rec.mask.any()

    def test_deterministic_reruns(self, bench_root, tmp_path):
        _, out_a = export_stub(bench_root, tmp_path / "a")
        _, out_b = export_stub(bench_root, tmp_path / "b")
        assert (out_a / "manifest.json").read_bytes() == (out_b / "manifest.json").read_bytes()
        for sub in ("images", "masks", "prompts"):
            cmp = filecmp.dircmp(out_a / sub, out_b / sub)
            assert not cmp.diff_files and not cmp.left_only and not cmp.right_only

    def test_small_images_upscaled(self, tmp_path, caplog):
        make_class_tree(tmp_path / "bench", "tiny", size=(48, 48))
        import logging

        with caplog.at_level(logging.INFO, logger="clip_exporter.export"):
            _, out = export_stub(tmp_path / "bench", tmp_path / "out", "tiny")
        manifest = devscore_embedstore.read_dataset(out)
        assert devscore_embedstore.validate(manifest) == []
        assert any("upscaling" in r.message for r in caplog.records)

    def test_mask_area_ratio_preserved(self, tmp_path):
        # synthetic disk mask: nearest-neighbor resize keeps the area ratio
        class_dir = tmp_path / "bench" / "disk"
        write_image(class_dir / "train" / "good" / "000.png", size=(128, 128))
        write_image(class_dir / "test" / "good" / "000.png", size=(128, 128))
        write_image(class_dir / "test" / "hole" / "000.png", size=(128, 128))
        yy, xx = np.mgrid[:128, :128]
        disk = ((yy - 64) ** 2 + (xx - 64) ** 2 <= 30 ** 2)
        from PIL import Image

        mask_path = class_dir / "ground_truth" / "hole" / "000_mask.png"
        mask_path.parent.mkdir(parents=True)
        Image.fromarray((disk * 255).astype(np.uint8)).save(mask_path)

        _, out = export_stub(tmp_path / "bench", tmp_path / "out", "disk")
        manifest = devscore_embedstore.read_dataset(out)
        rec = next(r for r in manifest.records if r.image_id == "test_hole_000")
        got_ratio = (rec.mask > 0).mean()
        want_ratio = disk.mean()
        assert got_ratio == pytest.approx(want_ratio, rel=0.10)

    def test_metadata_records_provenance(self, bench_root, tmp_path):
        config, out = export_stub(bench_root, tmp_path / "out")
        doc = json.loads((out / "manifest.json").read_text())
        meta = doc["metadata"]
        assert meta["backbone"] == "stub"
        assert meta["resize"] == 256
        assert meta["grid"] == doc["grid"]
        assert meta["templates"]["normal"] == config.template_normal

    def test_two_classes_both_validate(self, tmp_path):
        # stands in for "one MVTecAD class and one VISA class": both
        # benchmarks ship the same layout
        make_class_tree(tmp_path / "bench", "bottle")
        make_class_tree(tmp_path / "bench", "cashew", defect_category="burnt")
        for name in ("bottle", "cashew"):
            _, out = export_stub(tmp_path / "bench", tmp_path / name, name)
            manifest = devscore_embedstore.read_dataset(out)
            assert devscore_embedstore.validate(manifest) == []


class TestCli:
    def test_export_via_cli(self, bench_root, tmp_path, capsys):
        out = tmp_path / "out"
        assert run(["--root", str(bench_root), "--class-name", "bottle",
                    "--out", str(out)]) == 0
        assert "exported bottle" in capsys.readouterr().out
        manifest = devscore_embedstore.read_dataset(out)
        assert devscore_embedstore.validate(manifest) == []

    def test_bad_layout_exit_code(self, tmp_path, capsys):
        assert run(["--root", str(tmp_path), "--class-name", "nope",
                    "--out", str(tmp_path / "o")]) == 1
        assert "error:" in capsys.readouterr().err

    def test_usage_error(self):
        assert run(["--root", "x"]) == 2

    def test_bad_template_exit_code(self, bench_root, tmp_path, capsys):
        assert run(["--root", str(bench_root), "--class-name", "bottle",
                    "--out", str(tmp_path / "o"),
                    "--template-normal", "broken template"]) == 1


class TestPipelineIntegration:
    def test_exported_dataset_feeds_the_scorer(self, bench_root, tmp_path):
        from devscore.cli import run as devscore_run

        _, out = export_stub(bench_root, tmp_path / "out")
        assert devscore_run(["validate", "--data", str(out)]) == 0
        assert devscore_run(["fit", "--data", str(out), "--seed", "0",
                             "--epochs", "3"]) == 0
        csv = tmp_path / "eval.csv"
        assert devscore_run(["eval", "--data", str(out), "--out", str(csv)]) == 0
        lines = csv.read_text().splitlines()
        assert len(lines) == 3  # header + image + pixel rows


@pytest.mark.skipif(os.environ.get("MVTEC_ROOT") is None,
                    reason="set MVTEC_ROOT to a real MVTecAD checkout to run")
def test_real_mvtec_bottle_smoke():
    """1-shot export of MVTecAD bottle with real CLIP, then fit/score/eval.

    Requires pretrained weights (network) and the benchmark on disk;
    reports pixel AUROC and asserts the >= 0.87 bound.
    """
    pytest.importorskip("torch")
    pytest.importorskip("transformers")
    import tempfile

    from devscore.evalkit import fit_and_evaluate
    from devscore.embedstore import read_dataset
    from devscore.params import HyperParams

    with tempfile.TemporaryDirectory() as tmp:
        config = ExportConfig(
            dataset_root=os.environ["MVTEC_ROOT"], class_name="bottle",
            out_dir=tmp, backbone="openai/clip-vit-base-patch16")
        export_dataset(config)
        manifest = read_dataset(tmp)
        records = fit_and_evaluate(manifest, HyperParams())
        pixel = next(r.auroc for r in records if r.level == "pixel")
        print(f"bottle pixel auroc={pixel:.4f} config={config.to_dict()}")
        assert pixel >= 0.87
