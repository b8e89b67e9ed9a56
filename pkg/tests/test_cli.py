import hashlib

import numpy as np
import pytest

from lidm import io
from lidm.cli import main
from lidm.codec import PointCloud

TINY_CONFIG = """\
# 8 x 64 sensor and small networks so every command runs in seconds
beams = 64
height = 8
width = 64
ae_base_channels = 8
ae_num_res_blocks = 1
codebook_size = 32
ae_batch_size = 2
gan_start_step = 2
dm_base_channels = 8
channel_mult = 1,2
dm_num_res_blocks = 1
attention_heads = 2
dm_batch_size = 2
partitions = 4
"""


def cli(argv):
    return main([str(a) for a in argv])


def run(capsys, *argv):
    code = cli(argv)
    out = capsys.readouterr().out
    return code, dict(line.split("=", 1) for line in out.splitlines() if "=" in line and " " not in line)


def digest(directory, pattern="*"):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(directory.glob(pattern))}


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    """Synthetic data plus tiny autoencoder and diffusion checkpoints."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY_CONFIG)
    assert cli(["synth", "--config", cfg, "--count", 4, "--out", root / "data", "--labels"]) == 0
    assert cli(["train-ae", "--config", cfg, "--data", root / "data", "--out", root / "ae.pt", "--steps", 3]) == 0
    assert cli(["train-dm", "--config", cfg, "--data", root / "data", "--ae", root / "ae.pt",
                 "--out", root / "dm.pt", "--steps", 3]) == 0
    return root


class TestSynth:
    def test_outputs_and_manifest(self, work):
        files = sorted((work / "data").glob("*.lri"))
        assert [f.name for f in files] == [f"scene_{i:05d}.lri" for i in range(4)]
        manifest = (work / "data" / "manifest.txt").read_text().split("\n")[:-1]
        for line, f in zip(manifest, files):
            name, sha = line.split()
            assert name == f.name and sha == hashlib.sha256(f.read_bytes()).hexdigest()
        img = io.read_lri(files[0])
        assert img.config.shape == (8, 64)
        labels = np.load(work / "data" / "scene_00000.labels.npy")
        assert np.array_equal(labels > 0, img.mask > 0)

    def test_default_size_and_count_zero(self, tmp_path, capsys):
        code, out = run(capsys, "synth", "--count", 1, "--out", tmp_path / "a", "--beams", 32)
        assert code == 0 and (out["height"], out["width"]) == ("32", "1024")
        code, out = run(capsys, "synth", "--count", 0, "--out", tmp_path / "b")
        assert code == 0 and out["count"] == "0"
        assert (tmp_path / "b" / "manifest.txt").read_text() == ""

    def test_seed_changes_output(self, work, tmp_path):
        assert cli(["synth", "--config", work / "tiny.cfg", "--count", 2, "--out", tmp_path, "--seed", 9]) == 0
        assert digest(tmp_path, "*.lri") != digest(work / "data", "scene_0000[01].lri")


class TestConvert:
    def test_bin_round_trip(self, work, tmp_path, capsys):
        assert cli(["convert", "--in", work / "data", "--out", tmp_path / "bin", "--to", "bin"]) == 0
        code, out = run(capsys, "convert", "--config", work / "tiny.cfg", "--in", tmp_path / "bin",
                        "--out", tmp_path / "lri", "--to", "lri")
        assert code == 0 and out["files"] == "4" and out["total_collisions"] == "0"
        for f in sorted((work / "data").glob("*.lri")):
            assert io.read_lri(tmp_path / "lri" / f.name) == io.read_lri(f)

    def test_reports_drops(self, tmp_path, capsys):
        src = tmp_path / "in"
        src.mkdir()
        io.write_bin(src / "a.bin", PointCloud(np.array([[0.0, 0, 0], [0, 0, 9.0], [10.0, 0, 0], [11.0, 0, 0]])))
        code, out = run(capsys, "convert", "--in", src, "--out", tmp_path / "o", "--to", "lri")
        assert code == 0
        assert (out["total_out_of_fov"], out["total_degenerate"], out["total_collisions"]) == ("1", "1", "1")

    def test_truncated_and_missing(self, tmp_path, capsys):
        src = tmp_path / "in"
        src.mkdir()
        (src / "bad.bin").write_bytes(b"\0" * 17)
        assert cli(["convert", "--in", src, "--out", tmp_path / "o", "--to", "lri"]) == 3
        assert cli(["convert", "--in", tmp_path / "nope", "--out", tmp_path / "o", "--to", "lri"]) == 2

    def test_empty_directory(self, tmp_path, capsys):
        (tmp_path / "in").mkdir()
        code, out = run(capsys, "convert", "--in", tmp_path / "in", "--out", tmp_path / "o", "--to", "lri")
        assert code == 0 and out["files"] == "0"


class TestTraining:
    def test_csv_rows(self, work):
        ae_rows = (work / "ae.csv").read_text().splitlines()
        assert ae_rows[0].startswith("step,total,rec") and len(ae_rows) == 4
        assert len((work / "dm.csv").read_text().splitlines()) == 4

    def test_zero_steps(self, work, tmp_path, capsys):
        code, out = run(capsys, "train-ae", "--config", work / "tiny.cfg", "--data", work / "data",
                        "--out", tmp_path / "ae0.pt", "--steps", 0)
        assert code == 0 and out["steps"] == "0"

    def test_resume_mismatch_and_kind(self, work, tmp_path):
        assert cli(["train-ae", "--config", work / "tiny.cfg", "--data", work / "data", "--out", tmp_path / "x.pt",
                     "--steps", 4, "--resume", work / "ae.pt", "--seed", 1]) == 5
        assert cli(["train-dm", "--config", work / "tiny.cfg", "--data", work / "data", "--out", tmp_path / "x.pt",
                     "--steps", 4, "--ae", work / "dm.pt"]) == 5
        assert cli(["sample", "--checkpoint", work / "ae.pt", "--count", 1, "--out", tmp_path]) == 5

    def test_errors(self, work, tmp_path):
        (tmp_path / "empty").mkdir()
        assert cli(["train-ae", "--data", tmp_path / "empty", "--out", tmp_path / "a.pt", "--steps", 1]) == 6
        assert cli(["train-ae", "--data", tmp_path / "nope", "--out", tmp_path / "a.pt", "--steps", 1]) == 2
        assert cli(["train-dm", "--config", work / "tiny.cfg", "--data", work / "data",
                     "--out", tmp_path / "a.pt", "--steps", 1]) == 1
        bad = tmp_path / "bad.cfg"
        bad.write_text("beams = 64\nlearning_rate = 3\n")
        assert cli(["synth", "--config", bad, "--count", 1, "--out", tmp_path / "s"]) == 1
        bad.write_text("f_c = 3\n")
        assert cli(["train-ae", "--config", bad, "--data", work / "data", "--out", tmp_path / "a.pt",
                     "--steps", 1]) == 1

    def test_concat_conditioned_pipeline(self, work, tmp_path):
        cfg = tmp_path / "cond.cfg"
        cfg.write_text(TINY_CONFIG + "condition_mode = concat_image\n")
        assert cli(["train-dm", "--config", cfg, "--data", work / "data", "--ae", work / "ae.pt",
                     "--out", tmp_path / "dm.pt", "--steps", 2, "--cond-map", work / "data"]) == 0
        maps = tmp_path / "maps"
        maps.mkdir()
        np.save(maps / "m.npy", np.load(work / "data" / "scene_00000.labels.npy"))
        assert cli(["sample", "--checkpoint", tmp_path / "dm.pt", "--count", 2, "--steps", 3,
                     "--out", tmp_path / "s", "--cond-map", maps]) == 0
        assert len(list((tmp_path / "s").glob("*.lri"))) == 2
        assert cli(["sample", "--checkpoint", tmp_path / "dm.pt", "--count", 2, "--out", tmp_path / "t"]) == 1

    def test_token_conditioned_pipeline(self, work, tmp_path):
        cfg = tmp_path / "tok.cfg"
        cfg.write_text(TINY_CONFIG + "condition_mode = cross_attention_tokens\ntoken_dim = 3\n")
        toks = tmp_path / "toks"
        toks.mkdir()
        for i in range(4):
            io.write_tokens(toks / f"scene_{i:05d}.tok", np.full((2, 3), i, dtype=np.float32))
        assert cli(["train-dm", "--config", cfg, "--data", work / "data", "--ae", work / "ae.pt",
                     "--out", tmp_path / "dm.pt", "--steps", 2, "--cond-tokens", toks]) == 0
        assert cli(["sample", "--checkpoint", tmp_path / "dm.pt", "--count", 1, "--steps", 3,
                     "--out", tmp_path / "s", "--cond-tokens", toks / "scene_00001.tok"]) == 0


class TestSample:
    def test_valid_outputs(self, work, tmp_path, capsys):
        code, out = run(capsys, "sample", "--checkpoint", work / "dm.pt", "--count", 3, "--steps", 5,
                        "--out", tmp_path)
        assert code == 0 and out["count"] == "3"
        for f in sorted(tmp_path.glob("*.lri")):
            io.read_lri(f).validate()

    def test_count_zero_and_ddpm(self, work, tmp_path):
        assert cli(["sample", "--checkpoint", work / "dm.pt", "--count", 0, "--out", tmp_path / "z"]) == 0
        assert list((tmp_path / "z").iterdir()) == []


class TestEval:
    @pytest.mark.parametrize("metric", ["jsd", "mmd", "cd", "emd", "frid", "fsvd", "fpvd"])
    def test_identical_sets(self, work, capsys, metric):
        extra = ["--subsample", 200] if metric == "emd" else []
        code, out = run(capsys, "eval", "--config", work / "tiny.cfg", "--metric", metric,
                        "--ref", work / "data", "--gen", work / "data", *extra)
        assert code == 0 and out["metric"] == metric
        assert float(out["value"]) <= 1e-8

    def test_stats_cache(self, work, tmp_path, capsys):
        args = ["eval", "--config", work / "tiny.cfg", "--metric", "fsvd", "--ref", work / "data",
                "--gen", work / "data", "--stats-cache", tmp_path / "ref.lfs"]
        first = run(capsys, *args)[1]
        assert (tmp_path / "ref.lfs").exists()
        assert run(capsys, *args)[1]["value"] == first["value"]

    def test_errors(self, work, tmp_path, capsys):
        assert cli(["eval", "--metric", "jsd", "--ref", tmp_path / "nope", "--gen", work / "data"]) == 2
        one = tmp_path / "one"
        one.mkdir()
        (one / "a.lri").write_bytes((work / "data" / "scene_00000.lri").read_bytes())
        assert cli(["eval", "--metric", "frid", "--partitions", 4, "--ref", one, "--gen", work / "data"]) == 6
        assert cli(["eval", "--metric", "cd", "--ref", one, "--gen", work / "data"]) == 6
        assert cli(["eval", "--metric", "frid", "--partitions", 3, "--ref", work / "data",
                     "--gen", work / "data"]) == 1


class TestMisc:
    def test_curves(self, work, capsys):
        code, out = run(capsys, "curves", "--in", work / "data")
        assert code == 0 and out["files"] == "4" and int(out["curve_count"]) > 0

    def test_bench_quick(self, capsys):
        code, out = run(capsys, "bench", "--quick", "--count", 1, "--steps", 2)
        assert code == 0
        assert float(out["samples_per_s"]) > 0 and float(out["diffusion_steps_per_s"]) > 0
