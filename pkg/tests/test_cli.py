import json

import pytest
from click.testing import CliRunner

from fusionpref.cli import main
from fusionpref.config import ConfigError, RunConfig, load_config


def write_config(path, **overrides):
    data = {
        "seed": 0,
        "codec_factor": 4,
        "diffusion_steps": 20,
        "sampler_steps": 5,
        "base_width": 8,
        "prompt_dim": 8,
        "prior_width": 8,
        "prior_blocks": 1,
        "prior_epochs": 1,
        "paldm_steps": 2,
        "finetune_epochs": 1,
        "batch_size": 4,
    }
    data.update(overrides)
    path.write_text(json.dumps(data))
    return path


class TestRunConfig:
    def test_defaults_valid(self):
        cfg = RunConfig(seed=0)
        assert cfg.codec == "patchify"
        assert cfg.n_levels == 5

    def test_hash_stable_and_sensitive(self):
        a = RunConfig(seed=0)
        b = RunConfig(seed=0)
        c = RunConfig(seed=1)
        assert a.config_hash() == b.config_hash()
        assert a.config_hash() != c.config_hash()

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"codec": "jpeg"},
            {"codec_factor": 3},
            {"diffusion_steps": 1},
            {"beta_start": 0.0},
            {"beta_start": 0.5, "beta_end": 0.1},
            {"sampler_steps": 0},
            {"sampler_steps": 999},
            {"n_levels": 1},
            {"mu": -1.0},
            {"lr_finetune": 0.0},
            {"batch_size": 0},
            {"schema_version": 99},
        ],
    )
    def test_invalid_values(self, kwargs):
        with pytest.raises(ConfigError):
            RunConfig(seed=0, **kwargs)

    def test_load_requires_seed(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{}")
        with pytest.raises(ConfigError, match="seed"):
            load_config(p)

    def test_load_rejects_unknown_fields(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text('{"seed": 0, "bogus": 1}')
        with pytest.raises(ConfigError, match="bogus"):
            load_config(p)

    def test_override_seed(self, tmp_path):
        p = write_config(tmp_path / "c.json")
        assert load_config(p, {"seed": 9}).seed == 9
        assert load_config(p, {"seed": None}).seed == 0


@pytest.fixture()
def workdir(tmp_path):
    write_config(tmp_path / "config.json")
    return tmp_path


def run_cli(workdir, *args, seed=None):
    argv = ["--config", str(workdir / "config.json")]
    if seed is not None:
        argv += ["--seed", str(seed)]
    argv += list(args)
    return CliRunner().invoke(main, argv, catch_exceptions=False)


class TestMissingDependencies:
    def test_train_lfm_without_corpus(self, workdir):
        r = run_cli(workdir, "train-lfm")
        assert r.exit_code == 2
        assert "corpus directory" in r.output
        assert "make-corpus" in r.output

    def test_train_paldm_without_prior(self, workdir):
        r = run_cli(workdir, "train-paldm")
        assert r.exit_code == 2
        assert "prior checkpoint" in r.output and "train-lfm" in r.output

    def test_generate_without_denoiser(self, workdir):
        r = run_cli(workdir, "generate-candidates")
        assert r.exit_code == 2
        assert "denoiser checkpoint" in r.output and "train-paldm" in r.output

    def test_autopref_without_candidates(self, workdir):
        r = run_cli(workdir, "autopref")
        assert r.exit_code == 2
        assert "candidate index" in r.output and "generate-candidates" in r.output

    def test_finetune_without_manifest(self, workdir, tmp_path):
        # satisfy the checkpoint requirement but not the manifest
        run_cli(workdir, "make-corpus", "--n", "2", "--size", "16")
        run_cli(workdir, "train-lfm")
        run_cli(workdir, "train-paldm")
        r = run_cli(workdir, "finetune")
        assert r.exit_code == 2
        assert "manifest.jsonl" in r.output
        assert "autopref" in r.output and "annotate-serve" in r.output

    def test_fuse_without_finetuned_model(self, workdir):
        r = run_cli(workdir, "fuse")
        assert r.exit_code == 2
        assert "fine-tuned checkpoint" in r.output and "finetune" in r.output


class TestPipelineSmoke:
    """Tiny end-to-end run: 2 pairs at 16x16, minimal budgets."""

    def test_full_pipeline(self, workdir):
        r = run_cli(workdir, "make-corpus", "--n", "2", "--size", "16")
        assert r.exit_code == 0, r.output
        assert (workdir / "corpus" / "0001_vis.png").exists()

        r = run_cli(workdir, "train-lfm")
        assert r.exit_code == 0, r.output
        assert (workdir / "run" / "checkpoints" / "prior.pt").exists()

        r = run_cli(workdir, "train-paldm")
        assert r.exit_code == 0, r.output

        r = run_cli(workdir, "generate-candidates")
        assert r.exit_code == 0, r.output
        index = json.loads((workdir / "run" / "candidates" / "index.json").read_text())
        assert set(index["pairs"]) == {"0000", "0001"}
        assert len(index["pairs"]["0000"]["candidates"]) == 6

        r = run_cli(workdir, "autopref", "--scorer", "sd")
        assert r.exit_code == 0, r.output
        manifest = workdir / "run" / "candidates" / "manifest.jsonl"
        assert len(manifest.read_text().splitlines()) == 2

        r = run_cli(workdir, "finetune", "--loss", "idpo")
        assert r.exit_code == 0, r.output
        assert (workdir / "run" / "checkpoints" / "coupled_idpo.pt").exists()

        r = run_cli(workdir, "fuse", "--loss", "idpo")
        assert r.exit_code == 0, r.output
        fused = workdir / "run" / "fused" / "idpo"
        assert (fused / "0000.png").exists() and (fused / "0001.png").exists()

        r = run_cli(workdir, "eval", "--images", str(fused))
        assert r.exit_code == 0, r.output
        csv_text = (fused / "eval.csv").read_text().splitlines()
        assert csv_text[0] == "image,EN,SD,AG,SF,SCD"
        assert len(csv_text) == 4  # header + 2 rows + mean
        assert csv_text[-1].startswith("mean,")

    def test_resume_skips_completed_stages(self, workdir):
        assert run_cli(workdir, "make-corpus", "--n", "1", "--size", "16").exit_code == 0
        r = run_cli(workdir, "make-corpus", "--n", "1", "--size", "16")
        assert "up to date" in r.output

    def test_force_reruns(self, workdir):
        run_cli(workdir, "make-corpus", "--n", "1", "--size", "16")
        r = run_cli(workdir, "--force", "make-corpus", "--n", "1", "--size", "16")
        assert "up to date" not in r.output
        assert "wrote 1 pairs" in r.output

    def test_seed_change_invalidates_stage(self, workdir):
        run_cli(workdir, "make-corpus", "--n", "1", "--size", "16")
        r = run_cli(workdir, "make-corpus", "--n", "1", "--size", "16", seed=5)
        assert "up to date" not in r.output

    def test_run_marker_contents(self, workdir):
        run_cli(workdir, "make-corpus", "--n", "1", "--size", "16")
        marker = json.loads((workdir / "run" / "run_make_corpus.json").read_text())
        assert marker["stage"] == "make_corpus"
        assert marker["seed"] == 0
        assert len(marker["config_hash"]) == 16
        assert any(k.endswith("0000_ir.png") for k in marker["outputs"])

    def test_deterministic_corpus_hashes(self, tmp_path):
        hashes = []
        for sub in ("a", "b"):
            d = tmp_path / sub
            d.mkdir()
            write_config(d / "config.json")
            run_cli(d, "make-corpus", "--n", "1", "--size", "16")
            marker = json.loads((d / "run" / "run_make_corpus.json").read_text())
            hashes.append(sorted(marker["outputs"].values()))
        assert hashes[0] == hashes[1]

    def test_size_not_divisible_by_factor(self, workdir):
        r = run_cli(workdir, "make-corpus", "--n", "1", "--size", "17")
        assert r.exit_code == 2
        assert "divisible" in r.output

    def test_eval_empty_dir(self, workdir, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        r = run_cli(workdir, "eval", "--images", str(empty))
        assert r.exit_code == 2
        assert "no PNG images" in r.output
