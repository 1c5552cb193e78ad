"""End-to-end CLI smoke: gen-synth -> train -> evaluate -> attack on a tiny
configuration, plus exit-code mapping and output-layout checks."""

import csv

import pytest

from spoofcm.cli import main
from spoofcm.runner import LOSS_CSV_HEADER

TINY_CFG = """\
data.dir={root}/corpus
run.out={root}/run
encoder.input_len=600
encoder.num_filters=9
encoder.sinc_kernel_len=65
encoder.sinc_pool=3,4
encoder.block_channels=3,4
encoder.gru_hidden=4
encoder.embed_dim=4
encoder.se_reduction=2
optim.epochs=1
optim.lr=0.001
adv.steps=2
adv.alpha=0.001
adv.eval_n=6
adv.dump_n=1
adv.sweep=0,0.002
eval.batch=8
metrics.bins=10
synth.train_per_attack=2
synth.dev_per_attack=1
synth.eval_per_attack=2
synth.train_bonafide=4
synth.dev_bonafide=2
synth.eval_bonafide=4
synth.dur_min=0.3
synth.dur_max=0.5
"""


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Generate the corpus and train one epoch once for the whole module."""
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY_CFG.format(root=root))
    assert main(["gen-synth", "--config", str(cfg)]) == 0
    assert main(["train", "--config", str(cfg)]) == 0
    return root, str(cfg)


def test_gen_synth_layout(pipeline):
    root, _ = pipeline
    corpus = root / "corpus"
    for split in ("train", "dev", "eval"):
        assert (corpus / f"{split}_protocol.txt").exists()
    assert list((corpus / "audio").glob("*.wav"))


def test_train_outputs(pipeline):
    root, _ = pipeline
    run = root / "run"
    assert (run / "resolved_config.txt").exists()
    assert (run / "summary.txt").exists()
    seed_dir = run / "seed_1"
    assert (seed_dir / "best.ckpt").exists()
    assert (seed_dir / "last.ckpt").exists()
    with open(seed_dir / "loss_curves.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == LOSS_CSV_HEADER
    assert len(rows) >= 2
    adv_col = LOSS_CSV_HEADER.index("L_W_adv")
    assert rows[1][adv_col] != ""  # adversarial branch was active and logged


def test_evaluate_outputs_and_determinism(pipeline, capfd):
    root, cfg = pipeline
    ckpt = str(root / "run" / "seed_1" / "best.ckpt")
    rc1 = main(["evaluate", "--config", cfg, "--checkpoint", ckpt,
                "--out", str(root / "ev1")])
    out1 = capfd.readouterr().out
    rc2 = main(["evaluate", "--config", cfg, "--checkpoint", ckpt,
                "--out", str(root / "ev2")])
    assert rc1 == 0 and rc2 == 0
    assert "eer=" in out1 and "eer_A01=" in out1
    for name in ("scores.txt", "metrics_report.txt", "histogram.csv", "det.csv"):
        assert (root / "ev1" / name).exists()
        assert (root / "ev1" / name).read_bytes() == (root / "ev2" / name).read_bytes()


def test_attack_sweep(pipeline, capfd):
    root, cfg = pipeline
    ckpt = str(root / "run" / "seed_1" / "best.ckpt")
    rc = main(["attack", "--config", cfg, "--checkpoint", ckpt,
               "--out", str(root / "atk")])
    out = capfd.readouterr().out
    assert rc == 0
    assert "delta=0 " in out and "delta=0.002" in out
    report = (root / "atk" / "attack_report.txt").read_text()
    assert report.startswith("clean_accuracy=")
    assert list((root / "atk" / "adv_audio").glob("*.wav"))


def test_train_seed_flag(pipeline):
    root, cfg = pipeline
    rc = main(["train", "--config", cfg, "--seed", "7",
               "--out", str(root / "run7")])
    assert rc == 0
    assert (root / "run7" / "seed_7" / "last.ckpt").exists()


def test_exit_code_config_error(tmp_path, capfd):
    rc = main(["train", "--config", str(tmp_path / "absent.cfg")])
    assert rc == 2
    assert "config error" in capfd.readouterr().err


def test_exit_code_data_error(pipeline, tmp_path, capfd):
    root, cfg = pipeline
    rc = main(["evaluate", "--config", cfg,
               "--checkpoint", str(tmp_path / "missing.ckpt"),
               "--out", str(tmp_path / "ev")])
    assert rc == 3
    assert "data error" in capfd.readouterr().err


def test_exit_code_runtime_error(pipeline, tmp_path, capfd, monkeypatch):
    import spoofcm.cli as cli_mod
    root, cfg = pipeline

    def boom(*a, **kw):
        raise RuntimeError("deliberate")

    monkeypatch.setattr(cli_mod, "evaluate_run", boom)
    rc = main(["evaluate", "--config", cfg, "--checkpoint", "x",
               "--out", str(tmp_path / "ev")])
    assert rc == 4
    assert "runtime error" in capfd.readouterr().err


def test_attack_requires_adv_enabled(pipeline, tmp_path, capfd):
    root, cfg = pipeline
    extra = tmp_path / "noadv.cfg"
    extra.write_text("adv.enabled=false\n")
    ckpt = str(root / "run" / "seed_1" / "best.ckpt")
    rc = main(["attack", "--config", cfg, "--config", str(extra),
               "--checkpoint", ckpt, "--out", str(tmp_path / "atk")])
    assert rc == 2
