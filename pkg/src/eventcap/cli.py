"""Command line entry point: synth / train / eval / ablate.

Logs are line-delimited JSON on stdout. Exit codes: 0 success, 1 validation
error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from eventcap import ValidationError
from eventcap.config import dump_config, load_config
from eventcap.data.annotations import save_results
from eventcap.data.synth import SynthConfig, load_corpus, synthesize, write_corpus
from eventcap.metrics import ScoreReport
from eventcap.model import Model, config_hash
from eventcap.pipeline import evaluate_model
from eventcap.proposals import generate_candidates, train_scorer
from eventcap.training import TrainConfig, train_scst, train_selector, train_xe, xe_loss
from eventcap.autodiff import no_grad
from eventcap.training import encode_sentences

__all__ = ["main"]


def log(payload):
    sys.stdout.write(json.dumps(payload, sort_keys=True) + "\n")
    sys.stdout.flush()


def _load_train_config(args):
    cfg = load_config(args.config, TrainConfig) if args.config else TrainConfig()
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "mode", None):
        cfg = dataclasses.replace(cfg, mode=args.mode)
    return cfg.validate()


def cmd_synth(args):
    cfg = load_config(args.config, SynthConfig) if args.config else SynthConfig()
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    corpus = synthesize(cfg)
    os.makedirs(args.out, exist_ok=True)
    vocab = write_corpus(args.out, corpus)
    log({"event": "synth", "out": args.out, "n_videos": cfg.n_videos,
         "vocab_size": len(vocab), "seed": cfg.seed})
    return 0


def _corpus_xe_loss(model, records):
    """Deterministic whole-corpus teacher-forced loss, for reproducibility."""
    batch = [(r,) + encode_sentences(model.vocab, r) for r in records if r.events]
    with no_grad():
        return xe_loss(model.params, model.cfg, batch).item()


def _candidates_for(model, records, log_every=0):
    cands = {}
    pcfg = model.cfg.proposal_config()
    for i, record in enumerate(records):
        cands[record.video_id] = generate_candidates(record, model.params, pcfg)
        if log_every and (i + 1) % log_every == 0:
            log({"event": "candidates", "done": i + 1, "total": len(records)})
    return cands


def cmd_train(args):
    records, vocab, _synth_cfg = load_corpus(args.corpus, "train")
    tcfg = _load_train_config(args)
    d_feature = records[0].feature_dim
    mcfg = tcfg.model_config(d_feature, len(vocab))

    if tcfg.mode == "scst":
        if not args.init:
            raise ValidationError("scst mode requires --init pointing at an xe checkpoint")
        model = Model.load(args.init)
        model.check_vocab(vocab)
        if model.manifest.get("trained_mode") not in ("xe", "scst"):
            raise ValidationError("--init checkpoint was not produced by xe training")
        log({"event": "train_start", "mode": "scst", "videos": len(records),
             "init": args.init, "start_step": model.step})
        cands = _candidates_for(model, records, log_every=50)
        train_scst(model, records, cands, tcfg, log_fn=log, start_step=model.step)
    else:
        if args.resume:
            model = Model.load(args.resume)
            model.check_vocab(vocab)
            if config_hash(mcfg) != config_hash(model.cfg):
                raise ValidationError("config hash mismatch between --resume checkpoint "
                                      "and the requested configuration")
            log({"event": "train_start", "mode": "xe", "videos": len(records),
                 "resume": args.resume, "start_step": model.step})
        else:
            model = Model.init(mcfg, vocab, seed=tcfg.seed)
            log({"event": "train_start", "mode": "xe", "videos": len(records),
                 "start_step": 0})
        import numpy as np

        scorer_rng = np.random.default_rng(tcfg.seed + 2)
        scorer_losses = train_scorer(model.params, records, model.cfg.proposal_config(),
                                     scorer_rng, epochs=tcfg.scorer_epochs,
                                     lr=tcfg.scorer_lr)
        log({"event": "scorer", "losses": [round(x, 4) for x in scorer_losses]})
        cands = _candidates_for(model, records, log_every=50)
        train_selector(model, records, cands, tcfg, log_fn=log)
        train_xe(model, records, tcfg, log_fn=log, start_step=model.step)

    final_loss = _corpus_xe_loss(model, records)
    manifest = model.save(args.out, extra={"final_loss": final_loss,
                                           "trained_mode": tcfg.mode,
                                           "train_config": dataclasses.asdict(tcfg)})
    log({"event": "train_done", "mode": tcfg.mode, "step": model.step,
         "final_loss": final_loss, "checkpoint": args.out,
         "config_hash": manifest["config_hash"]})
    return 0


def cmd_eval(args):
    model = Model.load(args.checkpoint)
    records, vocab, _synth_cfg = load_corpus(args.corpus, args.split)
    model.check_vocab(vocab)
    report, predictions = evaluate_model(model, records, proposals=args.proposals,
                                         metric=args.metric)
    os.makedirs(args.out, exist_ok=True)
    save_results(os.path.join(args.out, "results.json"), predictions)
    report.save(os.path.join(args.out, "report.json"))
    log({"event": "eval", "proposals": args.proposals, "split": args.split,
         "overall": report.overall, "counts": report.counts})
    print(report.format_table())
    return 0


ABLATION_GRID = (
    ("baseline", dict(use_relation=False, use_gate=False, use_sentence_rnn=False)),
    ("relation_only", dict(use_relation=True, use_gate=False, use_sentence_rnn=False)),
    ("sentence_rnn_only", dict(use_relation=False, use_gate=False, use_sentence_rnn=True)),
    ("gated_sentence_rnn", dict(use_relation=False, use_gate=True, use_sentence_rnn=True)),
    ("full", dict(use_relation=True, use_gate=True, use_sentence_rnn=True)),
)


def run_ablation(corpus_dir, tcfg, metric="all", log_fn=None):
    """Train and evaluate the five decoder configurations with a shared seed.

    Training and evaluation both use GT event sequences, isolating the
    captioner, which is what the grid varies. Returns {row: ScoreReport}.
    """
    train_records, vocab, _ = load_corpus(corpus_dir, "train")
    val_records, _, _ = load_corpus(corpus_dir, "val")
    d_feature = train_records[0].feature_dim
    reports = {}
    for name, flags in ABLATION_GRID:
        row_cfg = dataclasses.replace(tcfg, **flags)
        model = Model.init(row_cfg.model_config(d_feature, len(vocab)), vocab,
                           seed=row_cfg.seed)
        train_xe(model, train_records, row_cfg,
                 log_fn=(lambda p: log_fn({**p, "row": name})) if log_fn else None)
        report, _ = evaluate_model(model, val_records, proposals="gt", metric=metric)
        reports[name] = report
        if log_fn:
            log_fn({"event": "ablate_row", "row": name, "overall": report.overall})
    return reports


def format_ablation_table(reports):
    metrics = sorted(next(iter(reports.values())).overall)
    header = ["configuration"] + metrics
    rows = [header]
    for name, _ in ABLATION_GRID:
        r = reports[name]
        rows.append([name] + [f"{r.overall[m] * 100:.2f}" for m in metrics])
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip()
                     for row in rows)


def cmd_ablate(args):
    tcfg = _load_train_config(args)
    reports = run_ablation(args.corpus, tcfg, metric=args.metric, log_fn=log)
    os.makedirs(args.out, exist_ok=True)
    payload = {name: r.to_json() for name, r in reports.items()}
    with open(os.path.join(args.out, "ablation.json"), "w") as fh:
        json.dump(payload, fh, indent=2)
    table = format_ablation_table(reports)
    with open(os.path.join(args.out, "ablation.txt"), "w") as fh:
        fh.write(table + "\n")
    print(table)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="eventcap",
                                     description="dense video captioning at desk scale")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--config", help="SynthConfig key-value file")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="TrainConfig key-value file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--mode", choices=["xe", "scst"], default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--init", help="xe checkpoint to start scst from")
    p.add_argument("--resume", help="checkpoint to continue xe training from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--proposals", choices=["gt", "learnt"], default="gt")
    p.add_argument("--metric", choices=["bleu4", "meteor", "cider", "all"],
                   default="all")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run the five-row decoder ablation")
    p.add_argument("--config", help="TrainConfig key-value file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--metric", choices=["bleu4", "meteor", "cider", "all"],
                   default="all")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        log({"event": "error", "kind": "validation", "message": str(exc)})
        return 1
    except Exception as exc:  # runtime failures
        log({"event": "error", "kind": "runtime", "message": f"{type(exc).__name__}: {exc}"})
        return 2


if __name__ == "__main__":
    sys.exit(main())
