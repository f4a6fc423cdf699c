"""Command-line interface: subcommands, exit codes, and reproducibility."""
import hashlib
import json
import re
from pathlib import Path

import pytest

from reidkit.cli import DATA_EXIT, USAGE_EXIT, main
from reidkit.config import (
    RunConfig,
    config_hash,
    load_config,
    save_config,
    validate_config,
)
from reidkit.core import ConfigError


def dir_digests(path: Path) -> dict:
    out = {}
    for p in sorted(Path(path).iterdir()):
        if p.is_file():
            out[p.name] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


SYNTH_ARGS = ["--persons", "6", "--cameras", "2", "--orientations", "8",
              "--height", "64", "--width", "24", "--noise", "4.0", "--seed", "3"]

TRAIN_CONFIG = dict(
    resize_h=64, resize_w=24,
    codebook_size=12, codebook_samples=250, kmeans_max_iter=8,
    llc_k=5, pca_dim=10, pca_bandwidth=0.8,
    pos_policy="similar", seed=0, svm_epochs=3,
    probe_shots=1, gallery_shots=2, trials=2,
    method="mid-pooling",
)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "data")] + SYNTH_ARGS) == 0
    cfg = dict(TRAIN_CONFIG)
    cfg["manifest"] = str(root / "data" / "manifest.csv")
    cfg["archive_dir"] = str(root / "archive")
    cfg["output_dir"] = str(root / "reports")
    cfg_path = root / "run.json"
    cfg_path.write_text(json.dumps(cfg))
    assert main(["train", "--config", str(cfg_path)]) == 0
    return root


def person_images(root: Path, person: str, cam: int, orients):
    paths = []
    for o in orients:
        hits = sorted((root / "data").glob(f"*_{person}_c{cam}_o{o}.png"))
        assert hits, f"no synth image for {person} cam{cam} o{o}"
        paths.append(str(hits[0]))
    return paths


class TestSynth:
    def test_writes_images_and_manifest(self, workdir):
        files = dir_digests(workdir / "data")
        assert "manifest.csv" in files
        assert sum(1 for n in files if n.endswith(".png")) == 96

    def test_output_is_reproducible(self, workdir, tmp_path):
        assert main(["synth", "--out", str(tmp_path / "again")] + SYNTH_ARGS) == 0
        assert dir_digests(tmp_path / "again") == dir_digests(workdir / "data")

    def test_prints_summary(self, tmp_path, capsys):
        main(["synth", "--out", str(tmp_path / "d"), "--persons", "2", "--cameras", "1",
              "--orientations", "2", "--height", "32", "--width", "16"])
        out = capsys.readouterr().out
        assert "wrote 4 images" in out


class TestTrain:
    def test_archive_written(self, workdir):
        assert (workdir / "archive" / "manifest.json").is_file()

    def test_training_is_reproducible(self, workdir, tmp_path, capsys):
        cfg = json.loads((workdir / "run.json").read_text())
        cfg["archive_dir"] = str(tmp_path / "a")
        cfg_path = tmp_path / "retrain.json"
        cfg_path.write_text(json.dumps(cfg))
        assert main(["train", "--config", str(cfg_path)]) == 0
        (tmp_path / "a").rename(tmp_path / "b")
        assert main(["train", "--config", str(cfg_path)]) == 0
        out = capsys.readouterr().out
        match = re.search(r"digest ([0-9a-f]{16})", out)
        assert match
        assert dir_digests(tmp_path / "a") == dir_digests(tmp_path / "b")
        stored = json.loads((tmp_path / "a" / "manifest.json").read_text())
        assert match.group(1) == stored["digest"][:16]

    def test_config_without_manifest_fails(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"archive_dir": str(tmp_path / "a")}))
        assert main(["train", "--config", str(p)]) == DATA_EXIT
        assert "manifest" in capsys.readouterr().err

    def test_unknown_config_key_fails(self, tmp_path, capsys):
        p = tmp_path / "bad.json"
        p.write_text(json.dumps({"manifst": "x.csv"}))
        assert main(["train", "--config", str(p)]) == DATA_EXIT
        assert "unknown config key" in capsys.readouterr().err


class TestEvaluate:
    def test_prints_rank1_and_writes_reports(self, workdir, capsys):
        rc = main(["evaluate", "--config", str(workdir / "run.json")])
        assert rc == 0
        out = capsys.readouterr().out
        lines = [l for l in out.splitlines() if l.startswith("rank1 ")]
        assert lines
        for line in lines:
            assert re.fullmatch(r"rank1 [a-z-]+ \d+x\d+ [a-z]+ = \d\.\d{4}", line)
        reports = list((workdir / "reports").iterdir())
        names = {p.name for p in reports}
        assert "run_metadata.txt" in names
        assert any(n.startswith("cmc_") and n.endswith(".csv") for n in names)

    def test_reruns_are_byte_identical(self, workdir, tmp_path, capsys):
        rc = main(["evaluate", "--config", str(workdir / "run.json"),
                   "--out", str(tmp_path / "r2")])
        assert rc == 0
        capsys.readouterr()
        assert dir_digests(tmp_path / "r2") == dir_digests(workdir / "reports")

    def test_unknown_method_fails(self, workdir, capsys):
        rc = main(["evaluate", "--config", str(workdir / "run.json"),
                   "--method", "psychic"])
        assert rc == DATA_EXIT
        assert "unknown method" in capsys.readouterr().err


class TestMatch:
    def test_score_and_pair_lines(self, workdir, capsys):
        probe = person_images(workdir, "p000", 0, [1, 2])
        gallery = person_images(workdir, "p000", 1, [2, 3])
        rc = main(["match", "--archive", str(workdir / "archive"),
                   "--probe-images"] + probe + ["--gallery-images"] + gallery +
                  ["--probe-orientations", "1,2", "--gallery-orientations", "2,3",
                   "--method", "odboa-mid-pooling"])
        assert rc == 0
        out = capsys.readouterr().out.splitlines()
        assert re.fullmatch(r"score=-?\d+\.\d{6}", out[0])
        assert out[1] == "pairs=(1,2);(2,2)"

    def test_same_person_outscores_impostor(self, workdir, capsys):
        probe = person_images(workdir, "p001", 0, [1, 2, 3])
        genuine = person_images(workdir, "p001", 1, [1, 2, 3])
        impostor = person_images(workdir, "p004", 1, [1, 2, 3])
        scores = []
        for gallery in (genuine, impostor):
            rc = main(["match", "--archive", str(workdir / "archive"),
                       "--probe-images"] + probe + ["--gallery-images"] + gallery +
                      ["--probe-orientations", "1,2,3", "--gallery-orientations", "1,2,3"])
            assert rc == 0
            out = capsys.readouterr().out.splitlines()
            scores.append(float(out[0].split("=")[1]))
        assert scores[0] > scores[1]

    def test_predicted_orientations(self, workdir, capsys):
        probe = person_images(workdir, "p002", 0, [1])
        gallery = person_images(workdir, "p002", 1, [1, 4])
        rc = main(["match", "--archive", str(workdir / "archive"),
                   "--probe-images"] + probe + ["--gallery-images"] + gallery +
                  ["--probe-orientations", "0"])
        assert rc == 0
        out = capsys.readouterr().out
        assert out.startswith("score=")

    def test_dual_method_needs_dual_metrics(self, workdir, capsys):
        probe = person_images(workdir, "p000", 0, [1])
        gallery = person_images(workdir, "p000", 1, [1])
        rc = main(["match", "--archive", str(workdir / "archive"),
                   "--probe-images"] + probe + ["--gallery-images"] + gallery +
                  ["--probe-orientations", "1", "--gallery-orientations", "1",
                   "--method", "dual-avg"])
        assert rc == DATA_EXIT
        assert "dissimilar" in capsys.readouterr().err

    def test_missing_image_fails(self, workdir, capsys):
        rc = main(["match", "--archive", str(workdir / "archive"),
                   "--probe-images", "nowhere.png",
                   "--gallery-images", "nowhere2.png",
                   "--probe-orientations", "1", "--gallery-orientations", "1"])
        assert rc == DATA_EXIT
        assert "not found" in capsys.readouterr().err

    def test_orientation_count_mismatch(self, workdir, capsys):
        probe = person_images(workdir, "p000", 0, [1, 2])
        gallery = person_images(workdir, "p000", 1, [1])
        rc = main(["match", "--archive", str(workdir / "archive"),
                   "--probe-images"] + probe + ["--gallery-images"] + gallery +
                  ["--probe-orientations", "1"])
        assert rc == DATA_EXIT


class TestUsageErrors:
    def test_bad_flag_exits_one(self):
        with pytest.raises(SystemExit) as exc:
            main(["synth", "--bogus"])
        assert exc.value.code == USAGE_EXIT

    def test_missing_subcommand_exits_one(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == USAGE_EXIT


class TestConfigFile:
    def test_save_load_round_trip(self, tmp_path):
        cfg = RunConfig(manifest="m.csv", codebook_size=32, smoothing_kernel=(0.1, 0.8, 0.1))
        save_config(cfg, tmp_path / "c.json")
        loaded = load_config(tmp_path / "c.json")
        assert loaded == cfg
        assert config_hash(loaded) == config_hash(cfg)

    def test_validation_errors(self):
        with pytest.raises(ConfigError, match="method"):
            validate_config(RunConfig(method="nope"))
        with pytest.raises(ConfigError, match="pos_policy"):
            validate_config(RunConfig(pos_policy="closeish"))
        with pytest.raises(ConfigError, match="positive"):
            validate_config(RunConfig(trials=0))
        with pytest.raises(ConfigError, match="odd"):
            validate_config(RunConfig(smoothing_kernel=(0.5, 0.5)))
        with pytest.raises(ConfigError, match="fit_orientation_estimator"):
            validate_config(RunConfig(fit_orientation_estimator="sometimes"))

    def test_load_rejects_bad_files(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("[1, 2]")
        with pytest.raises(ConfigError, match="JSON object"):
            load_config(p)
        p.write_text("{not json")
        with pytest.raises(ConfigError, match="valid JSON"):
            load_config(p)
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "absent.json")
