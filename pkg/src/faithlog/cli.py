"""``faithlog`` command line: parse, generate, split, train, detect, evaluate, perturb.

Exit codes: 0 success, 2 input error, 3 data/config incompatibility,
4 checkpoint mismatch.
"""

from __future__ import annotations

import argparse
import logging
import shutil
import sys
from pathlib import Path

import torch

from faithlog.checkpoint import load_checkpoint, save_checkpoint, save_oracle_checkpoint
from faithlog.config import config_from_dict, format_config, parse_config_text, run_id
from faithlog.embedding import HashEmbedding
from faithlog.errors import CheckpointError, ConfigError, DatasetError, ShapeError, VocabularyError
from faithlog.evaluation import EvaluationError, evaluate_faithfulness, support_rate, write_verdicts
from faithlog.log_pipeline import (
    DrainParser, WindowConfig, load_dataset, load_templates, parse_corpus, write_dataset, write_templates,
)
from faithlog.model import Detector
from faithlog.synth import SynthConfig, generate, split
from faithlog.training import LOG_HEADER, TrainConfig, fit

logger = logging.getLogger("faithlog")

EXIT_OK, EXIT_INPUT, EXIT_INCOMPATIBLE, EXIT_CHECKPOINT = 0, 2, 3, 4


class InputError(Exception):
    pass


def _read_config(args) -> tuple:
    """Return ``(TrainConfig, normalized config text)``; ``--seed`` overrides the file."""
    values = {}
    if args.config:
        try:
            values = parse_config_text(Path(args.config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise InputError(f"cannot read config: {exc}") from None
    if args.seed is not None:
        values["seed"] = str(args.seed)
    config = config_from_dict(values)
    return config, format_config(config)


def _templates_path(args) -> Path:
    if getattr(args, "templates", None):
        return Path(args.templates)
    return Path(args.dataset).with_name("templates.tsv")


def _load_inputs(args, need_templates=True) -> tuple:
    try:
        sequences = load_dataset(args.dataset)
        templates = load_templates(_templates_path(args)) if need_templates else None
    except OSError as exc:
        raise InputError(f"cannot read input: {exc}") from None
    return sequences, templates


def _detector(args, templates_needed=True):
    expected = None
    if args.config:
        expected = _read_config(args)[0].model
    model, meta = load_checkpoint(args.checkpoint, expected)
    if meta.get("kind") == "oracle":
        return model, meta
    _, templates = _load_inputs(args, need_templates=templates_needed)
    provider = HashEmbedding(templates, d_model=meta["d_model"], seed=meta.get("embedding_seed", 0))
    return Detector(model, provider), meta


def cmd_parse(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    parser = DrainParser(depth=args.depth, similarity_threshold=args.threshold)
    window = WindowConfig(size=args.window, stride=args.stride or args.window)
    try:
        templates, sequences = parse_corpus(args.log, args.labels, parser, window)
    except OSError as exc:
        raise InputError(f"cannot read input: {exc}") from None
    write_templates(templates, out / "templates.tsv")
    write_dataset(sequences, out / "sequences.tsv")
    print(f"templates {len(templates)}")
    print(f"sequences {len(sequences)}")
    return EXIT_OK


def cmd_generate(args) -> int:
    config = SynthConfig(n_sequences=args.n_sequences, seq_length=args.length,
                         seed=7 if args.seed is None else args.seed)
    paths = generate(config).write(args.out)
    for name, path in paths.items():
        print(f"{name} {path}")
    return EXIT_OK


def cmd_split(args) -> int:
    sequences, _ = _load_inputs(args, need_templates=False)
    train, test = split(sequences, args.train_fraction, seed=0 if args.seed is None else args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(train, out / "train.tsv")
    write_dataset(test, out / "test.tsv")
    templates = _templates_path(args)
    if templates.exists() and templates.resolve() != (out / "templates.tsv").resolve():
        shutil.copyfile(templates, out / "templates.tsv")
    print(f"train {len(train)}")
    print(f"test {len(test)}")
    return EXIT_OK


def cmd_train(args) -> int:
    config, text = _read_config(args)
    rid = run_id(text, config.seed)
    sequences, templates = _load_inputs(args)
    heldout = load_dataset(args.heldout) if args.heldout else None
    provider = HashEmbedding(templates, d_model=config.model.d_model, seed=args.embedding_seed)
    result = fit(sequences, provider, config, heldout=heldout)
    out = Path(args.out)
    save_checkpoint(result.model, out, run_id=rid, extra={"embedding_seed": args.embedding_seed})
    log_path = Path(args.log) if args.log else out.with_suffix(".log.csv")
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write(f"# run_id={rid}\n{LOG_HEADER}\n")
        for row in result.log:
            fh.write(row.csv() + "\n")
    print(f"run_id {rid}")
    print(f"checkpoint {out}")
    return EXIT_OK


def cmd_detect(args) -> int:
    detector, meta = _detector(args)
    sequences, _ = _load_inputs(args, need_templates=False)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(f"# run_id={meta.get('run_id', '')}\n")
        fh.write("sequence_id\tp\tdecision\ttop_event\n")
        for seq in sequences:
            res = detector.detect(seq)
            top = int(res.positions[res.attention.argmax_index])
            fh.write(f"{seq.sequence_id}\t{res.confidence!r}\t{res.decision}\t{top}\n")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    detector, meta = _detector(args)
    sequences, _ = _load_inputs(args, need_templates=False)
    ks = [int(k) for k in args.ks.split(",")] if args.ks else ()
    report = evaluate_faithfulness(detector, sequences, ks, report_path=args.out, run_id=meta.get("run_id", ""))
    for key, value in report.to_dict()["metrics"].items():
        print(f"{key} {value:.2f}")
    return EXIT_OK


def cmd_perturb(args) -> int:
    detector, meta = _detector(args)
    sequences, _ = _load_inputs(args, need_templates=False)
    sr, verdicts = support_rate(detector, sequences)
    write_verdicts(verdicts, args.out, header=f"run_id={meta.get('run_id', '')}")
    print(f"sr {100 * sr:.2f}")
    return EXIT_OK


def cmd_oracle(args) -> int:
    save_oracle_checkpoint(args.out, run_id="oracle")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", required=True)
    common.add_argument("--threads", type=int, default=1, help="1 gives bitwise-reproducible runs")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="faithlog", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("parse", parents=[common], help="raw log -> templates + sequences")
    p.add_argument("--log", required=True)
    p.add_argument("--labels")
    p.add_argument("--window", type=int, default=20)
    p.add_argument("--stride", type=int)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--threshold", type=float, default=0.4)
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("generate", parents=[common], help="write the synthetic corpus")
    p.add_argument("--n-sequences", type=int, default=2000)
    p.add_argument("--length", type=int, default=20)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("split", parents=[common], help="stratified train/test split")
    p.add_argument("--dataset", required=True)
    p.add_argument("--templates")
    p.add_argument("--train-fraction", type=float, default=0.8)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", parents=[common], help="train and write a checkpoint")
    p.add_argument("--dataset", required=True)
    p.add_argument("--templates")
    p.add_argument("--heldout")
    p.add_argument("--log")
    p.add_argument("--embedding-seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    for name, func, text in (("detect", cmd_detect, "per-sequence predictions"),
                             ("evaluate", cmd_evaluate, "localization and support-rate report"),
                             ("perturb", cmd_perturb, "per-sequence removal verdicts")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--dataset", required=True)
        p.add_argument("--templates")
        p.add_argument("--checkpoint", required=True)
        if name == "evaluate":
            p.add_argument("--ks", help="comma-separated cutoffs added to 1,3,5")
        p.set_defaults(func=func)

    p = sub.add_parser("oracle", parents=[common], help="write a ground-truth oracle checkpoint")
    p.set_defaults(func=cmd_oracle)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    torch.set_num_threads(args.threads)
    try:
        return args.func(args)
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (InputError, DatasetError, VocabularyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConfigError, ShapeError, EvaluationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE


if __name__ == "__main__":
    sys.exit(main())
