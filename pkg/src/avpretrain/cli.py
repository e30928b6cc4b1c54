"""Command-line entry point.

Subcommands: gen-corpus, pretrain, generate, eval-retrieval, ablate.
Every subcommand takes --config <path>, --seed <int> (overrides the config
seed), and --out <dir>. Exit codes: 0 success, 2 configuration error,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import corpus, harness
from .config import config_fingerprint, load_config, with_overrides
from .errors import ConfigError, NumericError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="avpretrain",
        description="Desk-scale multi-scale audio-visual pretraining pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, checkpoint=False):
        p.add_argument("--config", required=True, help="flat key=value config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", required=True, help="output directory")
        if checkpoint:
            p.add_argument("--checkpoint", required=True,
                           help="checkpoint directory (raw-array store)")

    add_common(sub.add_parser("gen-corpus", help="render and persist the corpus"))
    add_common(sub.add_parser("pretrain", help="joint contrastive+diffusion training"))
    add_common(sub.add_parser("generate", help="sample spectrograms and score them"),
               checkpoint=True)
    add_common(sub.add_parser("eval-retrieval", help="recall@k in both directions"),
               checkpoint=True)
    ablate = sub.add_parser("ablate", help="component grid and sweeps")
    add_common(ablate)
    ablate.add_argument("--workers", type=int, default=None,
                        help="parallel cell processes (default from config)")
    return parser


def _load(args) -> "ExperimentConfig":
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = with_overrides(cfg, seed=args.seed)
    return cfg


def run_gen_corpus(cfg, out_dir: Path) -> None:
    fingerprint = config_fingerprint(cfg)
    corpus.save_corpus(out_dir / "train", cfg, cfg.seed,
                       corpus.train_indices(cfg), fingerprint)
    corpus.save_corpus(out_dir / "test", cfg, cfg.seed,
                       corpus.test_indices(cfg), fingerprint)
    print(f"wrote {cfg.n_pairs} train and {cfg.retrieval_size} test pairs to {out_dir}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        out_dir = Path(args.out)
        if args.command == "gen-corpus":
            run_gen_corpus(cfg, out_dir)
        elif args.command == "pretrain":
            manifest = harness.run_pretrain(cfg, out_dir)
            print(f"pretrain finished: fingerprint={manifest.fingerprint} "
                  f"epochs={len(manifest.epoch_losses)} out={out_dir}")
        elif args.command == "generate":
            report = harness.run_generate(cfg, args.checkpoint, out_dir)
            print(f"generate finished: kld={report.kld:.4f} fad={report.fad:.4f} "
                  f"align_acc={report.align_acc:.2f}")
        elif args.command == "eval-retrieval":
            report = harness.run_retrieval_eval(cfg, args.checkpoint, out_dir)
            print(f"retrieval: V->A R@1={report.recall_v2a[1]:.2f} "
                  f"A->V R@1={report.recall_a2v[1]:.2f}")
        elif args.command == "ablate":
            rows = harness.run_ablation(cfg, out_dir, workers=args.workers)
            failed = [row["cell"] for row in rows if row.get("error")]
            print(f"ablation wrote {len(rows)} rows to {out_dir / 'ablation.csv'}"
                  + (f" (failed cells: {failed})" if failed else ""))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
