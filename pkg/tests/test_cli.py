"""End-to-end CLI runs, in process via main(argv)."""

import json

import pytest

from eventcap.cli import ABLATION_GRID, format_ablation_table, main, run_ablation
from eventcap.config import dump_config
from eventcap.data.annotations import load_results
from eventcap.data.synth import SynthConfig
from eventcap.model import Model
from eventcap.training import TrainConfig

from conftest import TINY_DIMS

MICRO_SYNTH = SynthConfig(n_videos=6, duration_min=10.0, duration_max=16.0,
                          mean_events=2.0, vocab_min_count=1, val_fraction=0.34,
                          seed=5)
MICRO_TRAIN = TrainConfig(epochs=2, lr=3e-3, seed=0, log_every=10**9,
                          scorer_epochs=1, **TINY_DIMS)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """synth -> train(xe) once; several tests read the artifacts."""
    root = tmp_path_factory.mktemp("cli")
    synth_cfg = root / "synth.cfg"
    synth_cfg.write_text(dump_config(MICRO_SYNTH))
    train_cfg = root / "train.cfg"
    train_cfg.write_text(dump_config(MICRO_TRAIN))
    corpus = root / "corpus"
    ckpt = root / "ckpt"
    assert main(["synth", "--config", str(synth_cfg), "--out", str(corpus)]) == 0
    assert main(["train", "--config", str(train_cfg), "--corpus", str(corpus),
                 "--out", str(ckpt)]) == 0
    return root, corpus, ckpt, train_cfg


def test_synth_writes_corpus(workspace):
    _root, corpus, _ckpt, _ = workspace
    assert (corpus / "train.json").exists()
    assert (corpus / "val.json").exists()
    assert (corpus / "vocab.json").exists()
    assert (corpus / "synth.cfg").exists()
    assert list(corpus.glob("features/*.dvcf"))


def test_train_writes_checkpoint_with_final_loss(workspace):
    _root, corpus, ckpt, _ = workspace
    model = Model.load(ckpt)
    manifest = model.manifest
    assert manifest["trained_mode"] == "xe"
    assert manifest["step"] > 0
    assert manifest["final_loss"] > 0
    # the recorded loss reproduces from the checkpoint and train split
    from eventcap.cli import _corpus_xe_loss
    from eventcap.data.synth import load_corpus

    records, vocab, _ = load_corpus(corpus, "train")
    model.check_vocab(vocab)
    assert _corpus_xe_loss(model, records) == pytest.approx(
        manifest["final_loss"], abs=1e-12)


def test_eval_writes_results_and_report(workspace, capsys):
    root, corpus, ckpt, _ = workspace
    out = root / "eval-gt"
    code = main(["eval", "--checkpoint", str(ckpt), "--corpus", str(corpus),
                 "--split", "val", "--proposals", "gt", "--metric", "meteor",
                 "--out", str(out)])
    assert code == 0
    stdout = capsys.readouterr().out
    assert "metric" in stdout and "overall" in stdout
    preds = load_results(out / "results.json")
    report = json.loads((out / "report.json").read_text())
    assert set(report) == {"overall", "per_threshold", "counts"}
    assert 0.0 <= report["overall"]["meteor"] <= 1.0
    assert set(preds)  # non-empty prediction set


def test_eval_learnt_proposals_runs(workspace):
    root, corpus, ckpt, _ = workspace
    out = root / "eval-learnt"
    code = main(["eval", "--checkpoint", str(ckpt), "--corpus", str(corpus),
                 "--split", "val", "--proposals", "learnt", "--metric", "meteor",
                 "--out", str(out)])
    assert code == 0
    assert (out / "results.json").exists()


def test_scst_requires_init(workspace):
    root, corpus, _ckpt, train_cfg = workspace
    code = main(["train", "--config", str(train_cfg), "--corpus", str(corpus),
                 "--mode", "scst", "--out", str(root / "scst-ckpt")])
    assert code == 1  # validation error, not a crash


def test_scst_resumes_from_xe_checkpoint(workspace):
    root, corpus, ckpt, train_cfg = workspace
    out = root / "scst-ckpt2"
    code = main(["train", "--config", str(train_cfg), "--corpus", str(corpus),
                 "--mode", "scst", "--init", str(ckpt), "--out", str(out)])
    assert code == 0
    model = Model.load(out)
    assert model.manifest["trained_mode"] == "scst"
    base = Model.load(ckpt)
    assert model.step >= base.step


def test_missing_corpus_is_validation_error(tmp_path):
    code = main(["train", "--corpus", str(tmp_path / "nowhere"),
                 "--out", str(tmp_path / "ckpt")])
    assert code == 1


def test_eval_vocab_mismatch_fails(workspace, tmp_path):
    root, _corpus, ckpt, _ = workspace
    other = tmp_path / "other-corpus"
    assert main(["synth", "--seed", "9", "--config",
                 str(root / "synth.cfg"), "--out", str(other)]) == 0
    # same config but different seed: different vocabulary content
    code = main(["eval", "--checkpoint", str(ckpt), "--corpus", str(other),
                 "--split", "val", "--out", str(tmp_path / "eval")])
    assert code == 1


def test_resume_config_mismatch_fails(workspace, tmp_path):
    _root, corpus, ckpt, _ = workspace
    bad_cfg = tmp_path / "bad.cfg"
    bad_cfg.write_text(dump_config(TrainConfig(
        epochs=1, d_emb=TINY_DIMS["d_emb"] + 2,
        **{k: v for k, v in TINY_DIMS.items() if k != "d_emb"})))
    code = main(["train", "--config", str(bad_cfg), "--corpus", str(corpus),
                 "--resume", str(ckpt), "--out", str(tmp_path / "ckpt2")])
    assert code == 1


def test_ablate_micro(workspace, tmp_path, capsys):
    _root, corpus, _ckpt, _ = workspace
    cfg = tmp_path / "ablate.cfg"
    cfg.write_text(dump_config(TrainConfig(epochs=1, lr=3e-3, seed=0,
                                           log_every=10**9, **TINY_DIMS)))
    out = tmp_path / "ablation"
    code = main(["ablate", "--config", str(cfg), "--corpus", str(corpus),
                 "--metric", "meteor", "--out", str(out)])
    assert code == 0
    table = (out / "ablation.txt").read_text()
    for name, _flags in ABLATION_GRID:
        assert name in table
    payload = json.loads((out / "ablation.json").read_text())
    assert set(payload) == {name for name, _ in ABLATION_GRID}
    stdout = capsys.readouterr().out
    assert "full" in stdout


def test_run_ablation_and_table_shapes(workspace):
    _root, corpus, _ckpt, _ = workspace
    tcfg = TrainConfig(epochs=1, lr=3e-3, seed=0, log_every=10**9, **TINY_DIMS)
    reports = run_ablation(str(corpus), tcfg, metric="meteor")
    table = format_ablation_table(reports)
    lines = table.splitlines()
    assert lines[0].split()[:2] == ["configuration", "meteor"]
    assert len(lines) == 1 + len(ABLATION_GRID)


def test_unknown_command_exits_2():
    with pytest.raises(SystemExit):
        main(["frobnicate"])
