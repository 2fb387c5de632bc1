"""Command line interface: generate, train, eval, gradcheck, compare.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical abort,
3 gradient check failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, resolve_dataset
from .data import SyntheticSpec, benchmark, generate, save_jsonl
from .errors import ConfigError, FormatError, LatentDAError, NonFiniteError
from .metrics import p_star, tie_fraction
from .train import EVAL_COLUMNS, Trainer, read_rows, run_experiment, write_rows

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_GRADCHECK = 0, 1, 2, 3

log = logging.getLogger("latentda")


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for numerical aborts here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="latentda", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic JSON-lines dataset")
    p.add_argument("--config", required=True,
                   help="synthetic spec JSON file, or a benchmark name such as blobs2x1")
    p.add_argument("--out", required=True, help="output .jsonl path")
    p.add_argument("--seed", type=int, help="override the spec seed")
    p.add_argument("--domain-label-frac", type=float,
                   help="fraction of source samples whose domain label is revealed")

    p = sub.add_parser("train", help="train one run; writes run.csv, checkpoint.mda, curves.png")
    p.add_argument("--config", help="experiment config JSON (defaults apply when omitted)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--mode", help="ours, ours_lambdaB0, unified, random_assign or oracle")
    p.add_argument("--domain-label-frac", type=float)
    p.add_argument("--no-plots", action="store_true", help="skip the PNG figures")

    p = sub.add_parser("eval", help="evaluate a checkpoint; writes eval.csv and histograms")
    p.add_argument("checkpoint")
    p.add_argument("--config", help="dataset to evaluate on (.jsonl or benchmark name); "
                                    "defaults to the dataset recorded in the checkpoint")
    p.add_argument("--out", help="output directory (default: next to the checkpoint)")
    p.add_argument("--no-plots", action="store_true")

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--layer-only", action="store_true", help="skip the whole-network checks")
    p.add_argument("--out", help="optional CSV with one line per trial")

    p = sub.add_parser("compare", help="p* between two sets of runs (final rows of run CSVs)")
    p.add_argument("--a", nargs="+", required=True, metavar="CSV")
    p.add_argument("--b", nargs="+", required=True, metavar="CSV")
    p.add_argument("--column", default="target_acc")
    p.add_argument("--out", help="optional CSV with the comparison")
    return parser


# subcommands ------------------------------------------------------------------

def cmd_generate(args) -> int:
    path = Path(args.config)
    if path.exists():
        try:
            spec = SyntheticSpec.from_dict(json.loads(path.read_text(encoding="utf-8")))
        except json.JSONDecodeError as e:
            raise ConfigError(f"cannot parse {path}: {e}") from None
    else:
        spec = benchmark(args.config)
    if args.seed is not None:
        spec.seed = args.seed
    if args.domain_label_frac is not None:
        spec = SyntheticSpec.from_dict({**spec.to_dict(), "domain_label_frac": args.domain_label_frac})
    dataset = generate(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_jsonl(dataset, out)
    print(json.dumps(dataset.summary(), indent=2))
    return EXIT_OK


def _load_config(args) -> tuple[ExperimentConfig, Path | None]:
    if args.config is None:
        cfg, base = ExperimentConfig(), None
    else:
        cfg, base = ExperimentConfig.load(args.config), Path(args.config).resolve().parent
    cfg = cfg.replace(seed=args.seed, mode=args.mode, domain_label_frac=args.domain_label_frac)
    # pin relative dataset paths so the checkpoint can be evaluated from anywhere
    if isinstance(cfg.dataset, str) and base is not None and (base / cfg.dataset).exists():
        cfg = cfg.replace(dataset=str((base / cfg.dataset).resolve()))
    return cfg, base


def cmd_train(args) -> int:
    cfg, base = _load_config(args)
    trainer = run_experiment(cfg, args.out, plots=not args.no_plots, base_dir=base)
    last = trainer.record.last
    print(f"step {last['step']} target_acc {last['target_acc']:.4f} "
          f"src_purity {last['src_purity']:.4f} total {last['total']:.6f}")
    print(f"wrote {Path(args.out) / 'run.csv'}")
    return EXIT_OK


def cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    dataset = None
    if args.config is not None:
        dataset, _ = resolve_dataset(args.config)
    trainer = Trainer.from_checkpoint(ckpt, dataset)
    metrics = trainer.evaluate(details=True)
    out = Path(args.out) if args.out else ckpt.parent
    out.mkdir(parents=True, exist_ok=True)
    row = {"step": trainer.step_count, **{k: metrics[k] for k in EVAL_COLUMNS}}
    write_rows(out / "eval.csv", ["step"] + EVAL_COLUMNS, [row])

    hist_rows = []
    for pool in ("source", "target"):
        counts = metrics[f"hist_{pool}"].counts
        for true_dom, line in enumerate(counts):
            for latent, n in enumerate(line):
                hist_rows.append({"pool": pool, "true_domain": true_dom,
                                  "latent_domain": latent, "count": int(n)})
    write_rows(out / "histogram.csv", ["pool", "true_domain", "latent_domain", "count"], hist_rows)
    if not args.no_plots:
        from .plotting import plot_histograms
        plot_histograms({p: metrics[f"hist_{p}"] for p in ("source", "target")},
                        out / "histogram.png")
    print(f"target_acc {metrics['target_acc']:.4f} src_purity {metrics['src_purity']:.4f} "
          f"tgt_purity {metrics['tgt_purity']:.4f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradcheck
    if args.trials < 1:
        raise ConfigError("--trials must be >= 1")
    report = run_gradcheck(seed=args.seed, trials=args.trials, network=not args.layer_only)
    for line in report.lines():
        print(line)
    if args.out:
        rows = [t.as_row() for t in report.trials]
        write_rows(args.out, list(rows[0]), rows)
    return EXIT_OK if report.passed else EXIT_GRADCHECK


def _final_values(paths, column) -> list[float]:
    values = []
    for path in paths:
        try:
            rows = read_rows(path)
        except OSError as e:
            raise ConfigError(f"cannot read {path}: {e}") from None
        if not rows or column not in rows[-1]:
            raise ConfigError(f"{path} has no '{column}' values")
        values.append(float(rows[-1][column]))
    return values


def cmd_compare(args) -> int:
    a = _final_values(args.a, args.column)
    b = _final_values(args.b, args.column)
    result = {"p_star": p_star(a, b), "ties": tie_fraction(a, b),
              "mean_a": float(np.mean(a)), "mean_b": float(np.mean(b)), "n_a": len(a), "n_b": len(b)}
    print(f"p*(A>B) {result['p_star']:.4f} ties {result['ties']:.4f} "
          f"mean A {result['mean_a']:.4f} mean B {result['mean_b']:.4f}")
    if args.out:
        write_rows(args.out, list(result), [result])
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval,
            "gradcheck": cmd_gradcheck, "compare": cmd_compare}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except NonFiniteError as e:
        print(f"numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, FormatError, OSError, ValueError, LatentDAError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
