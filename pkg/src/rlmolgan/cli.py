"""Command-line entry point: ``rlmolgan <subcommand> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .chem import read_corpus
from .config import Config, ConfigError, default_run_dir, dump_config, load_config, override
from .diversify import assemble, build_dataset, read_dataset, write_dataset
from .evalkit import canonical_set, histogram_bars, histogram_report, histogram_tsv, metrics, top_k_table
from .posenc import linear_position, scaffold_ids
from .scorers import ExternalScores, score
from .trainer import Trainer, compute_alpha, dataset_config

log = logging.getLogger("rlmolgan")

SUBCOMMANDS = ("preprocess", "pretrain-gen", "pretrain-disc", "train", "sample", "score", "report")

REPORT_COLUMNS = ("validity", "unique", "novelty", "total", "mean_property")


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--run-dir", help="run directory (default: RLMG_RUN_DIR or the config's run_dir)")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rlmolgan", description="Adversarial RL molecule generation.")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}")

    p = sub.add_parser("preprocess", help="build dataset.tsv and vocab.txt from a corpus")
    _common(p)
    p.add_argument("--corpus", help="SMILES corpus, one molecule per line")
    p.add_argument("--dump-positions", metavar="FILE", help="write token/segment/offset/position TSV")

    for name, text in (("pretrain-gen", "MLE pretraining of the generator"),
                       ("pretrain-disc", "discriminator pretraining against generator samples"),
                       ("train", "full pipeline: both pretraining stages then adversarial epochs")):
        _common(sub.add_parser(name, help=text))

    p = sub.add_parser("sample", help="print generated SMILES, one per line")
    _common(p)
    p.add_argument("--n", type=int, default=10)
    p.add_argument("--checkpoint", help="generator checkpoint (default: run_dir/checkpoints/generator.ckpt)")

    p = sub.add_parser("score", help="score each SMILES in a file")
    _common(p)
    p.add_argument("smiles_file")
    p.add_argument("--scorer", help="validity | qed_proxy | logp_norm | sa_proxy | external")

    p = sub.add_parser("report", help="metrics and property histogram for a samples file")
    _common(p)
    p.add_argument("--samples", required=True)
    p.add_argument("--training", required=True, help="SMILES file or source<TAB>target dataset file")
    p.add_argument("--out", help="output directory (default: run directory)")
    p.add_argument("--bins", type=int, default=10)
    return parser


def resolve_config(args) -> tuple[Config, Path]:
    cfg = load_config(args.config) if args.config else Config()
    changes: dict = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        changes[key.strip()] = value.strip()
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "scorer", None):
        changes["scorer"] = args.scorer
    if getattr(args, "corpus", None):
        changes["corpus"] = args.corpus
    cfg = override(cfg, **changes)
    run_dir = Path(args.run_dir) if args.run_dir else Path(default_run_dir(cfg))
    cfg = override(cfg, run_dir=str(run_dir))
    return cfg, run_dir


def read_training(path) -> list[str]:
    """Complete molecules from a SMILES file or a source<TAB>target dataset file."""
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if lines and "\t" in lines[0]:
        return [assemble(e.source, e.target)[0] for e in read_dataset(path)]
    return list(read_corpus(path))


def read_samples(path) -> list[str]:
    """One generated string per line; an empty line is an empty (invalid) sample."""
    return [ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines()]


# ---------------------------------------------------------------- commands


def cmd_preprocess(cfg: Config, run_dir: Path, args) -> None:
    if not cfg.corpus:
        raise ConfigError("preprocess needs a corpus (--corpus or corpus = ...)")
    entries, vocab = build_dataset(read_corpus(cfg.corpus), cfg.task, dataset_config(cfg))
    write_dataset(run_dir / "dataset.tsv", entries)
    vocab.save(run_dir / "vocab.txt")
    log.info("wrote %d entries and %d tokens to %s", len(entries), len(vocab), run_dir)
    if args.dump_positions:
        alpha = compute_alpha(entries, cfg.max_len)
        with open(args.dump_positions, "w", encoding="utf-8") as fh:
            fh.write("entry\ttoken\tS\tO\tpos\n")
            for k, e in enumerate(entries):
                ids = scaffold_ids(e.source)
                for tok, s, o, pos in zip(e.source, ids.segment, ids.offset, linear_position(ids, alpha)):
                    fh.write(f"{k}\t{tok}\t{s}\t{o}\t{pos}\n")


def cmd_sample(cfg: Config, run_dir: Path, args) -> None:
    if args.n < 1:
        raise ConfigError("--n must be >= 1")
    trainer = Trainer(cfg, run_dir)
    ckpt = Path(args.checkpoint) if args.checkpoint else run_dir / "checkpoints" / "generator.ckpt"
    trainer.load_generator(ckpt)
    for s in trainer.generate(args.n):
        sys.stdout.write(s.text + "\n")


def cmd_score(cfg: Config, run_dir: Path, args) -> None:
    external = ExternalScores(cfg.external_scores) if cfg.external_scores else None
    for smiles in read_samples(args.smiles_file):
        ps = score(smiles, cfg.scorer, external)
        sys.stdout.write(f"{smiles}\t{ps.raw:.6f}\t{ps.normalized:.6f}\n")


def report_values(samples, training, cfg: Config, external=None) -> dict:
    m = metrics(samples, canonical_set(training))
    mean_prop = sum(score(s, cfg.scorer, external).normalized for s in samples) / len(samples)
    return {"validity": m.validity, "unique": m.uniqueness, "novelty": m.novelty,
            "total": m.total, "mean_property": mean_prop}


def cmd_report(cfg: Config, run_dir: Path, args) -> None:
    external = ExternalScores(cfg.external_scores) if cfg.external_scores else None
    samples = read_samples(args.samples)
    training = read_training(args.training)
    out = Path(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)
    values = report_values(samples, training, cfg, external)
    (out / "report.tsv").write_text(
        "\t".join(REPORT_COLUMNS) + "\n" + "\t".join(f"{values[c]:.6f}" for c in REPORT_COLUMNS) + "\n",
        encoding="utf-8")
    hist = histogram_report(training, samples, cfg.scorer, args.bins, external)
    top = top_k_table(samples, cfg.scorer, cfg.top_k, external)
    text = [f"samples {len(samples)}  training {len(training)}  scorer {cfg.scorer}"]
    text += [f"{c:<14}{values[c]:.6f}" for c in REPORT_COLUMNS]
    text.append(f"top-{top.k} mean {top.mean:.6f}" + ("  (fewer unique molecules than requested)" if top.clipped else ""))
    text.append("")
    text.append(histogram_bars(hist, label=cfg.scorer))
    text.append(histogram_tsv(hist))
    (out / "report.txt").write_text("\n".join(text), encoding="utf-8")


def dispatch(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.command not in SUBCOMMANDS:
        parser.print_usage(sys.stderr)
        return 2
    try:
        cfg, run_dir = resolve_config(args)
    except (ConfigError, OSError) as e:
        print(f"rlmolgan: config error: {e}", file=sys.stderr)
        return 2
    logging.basicConfig(level=getattr(logging, cfg.log_level.upper(), logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.resolved").write_text(dump_config(cfg), encoding="utf-8")
        if args.command == "preprocess":
            cmd_preprocess(cfg, run_dir, args)
        elif args.command == "pretrain-gen":
            Trainer(cfg, run_dir, resume=True).pretrain_generator()
        elif args.command == "pretrain-disc":
            if not (run_dir / "checkpoints" / "generator.ckpt").exists():
                raise FileNotFoundError(f"no generator checkpoint in {run_dir}; run pretrain-gen first")
            Trainer(cfg, run_dir, resume=True).pretrain_discriminator()
        elif args.command == "train":
            Trainer(cfg, run_dir, resume=True).train()
        elif args.command == "sample":
            cmd_sample(cfg, run_dir, args)
        elif args.command == "score":
            cmd_score(cfg, run_dir, args)
        elif args.command == "report":
            cmd_report(cfg, run_dir, args)
    except ConfigError as e:
        print(f"rlmolgan: config error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001 - every runtime failure maps to exit 1
        log.debug("failure", exc_info=True)
        print(f"rlmolgan: error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
