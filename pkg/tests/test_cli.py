import numpy as np

from avpretrain import cli, config, corpus
from avpretrain.errors import NumericError

TINY = """
n_pairs = 24
epochs = 1
batch_size = 8
retrieval_size = 12
generation_samples = 10
diffusion_steps = 10
sampler_steps = 5
ablate_sampler_steps = 2,5
encoder_channels = 4,6,8
embed_dim = 8
denoiser_channels = 4,6,8
video_frames = 8
frame_height = 16
frame_width = 16
audio_frames = 16
audio_bins = 16
traj_lengths = 2,4,8
"""


def write_cfg(tmp_path, text=TINY):
    path = tmp_path / "exp.cfg"
    path.write_text(text)
    return path


def test_pretrain_then_eval_subcommands(tmp_path):
    cfg_path = write_cfg(tmp_path)
    run_dir = tmp_path / "run"
    assert cli.main(["pretrain", "--config", str(cfg_path), "--seed", "3",
                     "--out", str(run_dir)]) == 0
    checkpoint = run_dir / "checkpoints" / "final"
    assert cli.main(["eval-retrieval", "--config", str(cfg_path), "--seed", "3",
                     "--out", str(tmp_path / "ret"),
                     "--checkpoint", str(checkpoint)]) == 0
    assert (tmp_path / "ret" / "eval_report.csv").is_file()
    assert cli.main(["generate", "--config", str(cfg_path), "--seed", "3",
                     "--out", str(tmp_path / "gen"),
                     "--checkpoint", str(checkpoint)]) == 0
    assert (tmp_path / "gen" / "generated" / "data.f32").is_file()


def test_seed_flag_overrides_config(tmp_path):
    cfg_path = write_cfg(tmp_path)
    cli.main(["gen-corpus", "--config", str(cfg_path), "--seed", "11",
              "--out", str(tmp_path / "corpus")])
    loaded = corpus.load_corpus(tmp_path / "corpus" / "train")
    cfg = config.with_overrides(config.load_config(cfg_path), seed=11)
    expected = corpus.render_batch(cfg, 11, corpus.train_indices(cfg))
    assert np.array_equal(loaded.audio, expected.audio)


def test_config_error_exit_code(tmp_path):
    assert cli.main(["pretrain", "--config", str(tmp_path / "missing.cfg"),
                     "--out", str(tmp_path / "o")]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("unknown_field = 3\n")
    assert cli.main(["pretrain", "--config", str(bad),
                     "--out", str(tmp_path / "o")]) == 2


def test_numeric_error_exit_code(tmp_path, monkeypatch):
    cfg_path = write_cfg(tmp_path)

    def explode(cfg, out_dir):
        raise NumericError("non-finite loss at step 0")

    monkeypatch.setattr("avpretrain.harness.run_pretrain", explode)
    assert cli.main(["pretrain", "--config", str(cfg_path),
                     "--out", str(tmp_path / "o")]) == 3


def test_ablate_sequential_single_worker(tmp_path):
    cfg_path = write_cfg(tmp_path)
    out = tmp_path / "abl"
    assert cli.main(["ablate", "--config", str(cfg_path), "--seed", "0",
                     "--out", str(out), "--workers", "1"]) == 0
    lines = (out / "ablation.csv").read_text().splitlines()
    assert lines[0].startswith("# config_fingerprint=")
    header = lines[1].split(",")
    rows = [dict(zip(header, line.split(","))) for line in lines[2:]]
    grid = [r for r in rows if r["kind"] == "grid"]
    assert [r["cell"] for r in grid] == ["none", "alignment_only",
                                         "diffusion_only", "full"]
    toggles = {(r["multiscale_alignment"], r["diffusion"]) for r in grid}
    assert toggles == {("0", "0"), ("1", "0"), ("0", "1"), ("1", "1")}
    # diffusion-off rows omit generation metrics
    none_row = grid[0]
    assert none_row["kld"] == "" and none_row["fad"] == "" and none_row["align_acc"] == ""
    full_row = grid[3]
    assert full_row["kld"] != "" and full_row["fad"] != ""
    # sampler sweep rows share the full checkpoint
    sweep = [r for r in rows if r["kind"] == "sampler_steps"]
    assert [r["sampler_steps"] for r in sweep] == ["2", "5"]
    assert all(r["error"] == "" for r in rows)
    assert (out / "ablation.png").is_file()
    assert (out / "sampler_steps.png").is_file()
