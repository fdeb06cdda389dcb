"""Command-line interface: ``hiqc <command> [options]``.

Exit status is 0 on success, 2 for invalid input or configuration and 1 for
anything unexpected. Every command that writes files puts them under
``--out`` together with ``manifest.json`` (config plus a sha256 per file).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import re
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .config import RunConfig, apply, dump_config, load_config
from .corpus import gen_synthetic, make_record, write_queries, write_truth
from .encoder import load_embedding_store
from .errors import ConfigError, HiqcError, MalformedRow
from .experiments import (
    ablation_run,
    evaluate,
    load_dataset,
    make_split,
    run_selftrain,
    run_train,
    sweep,
)
from .model import load_checkpoint, predict, save_checkpoint
from .selftrain import write_round_reports, write_sample_ledger
from .taxonomy import load_taxonomy

log = logging.getLogger("hiqc")


# ---------------------------------------------------------------------------
# helpers


def _config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    for key in ("taxonomy", "queries", "embeddings", "truth", "out"):
        value = getattr(args, key, None)
        if value is not None:
            cfg = apply(cfg, key, str(value))
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        cfg = apply(cfg, k, v)
    return cfg


def _outdir(cfg: RunConfig) -> Path:
    if cfg.out is None:
        raise ConfigError("--out is required for this command")
    try:
        cfg.out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {cfg.out}: {exc.strerror}") from None
    return cfg.out


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _manifest(out: Path, command: str, cfg: RunConfig | None, files: Sequence[str], extra: dict | None = None) -> None:
    data = {
        "command": command,
        "version": __version__,
        "config": cfg.to_dict() if cfg is not None else None,
        "files": {name: _sha256(out / name) for name in sorted(files)},
    }
    if extra:
        data.update(extra)
    (out / "manifest.json").write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write(out: Path, name: str, text: str) -> str:
    (out / name).write_text(text, encoding="utf-8")
    return name


def _write_eval(out: Path, result, prefix: str = "eval") -> list[str]:
    _write(out, f"{prefix}.json", result.to_json() + "\n")
    result.write_tsv(out / f"{prefix}_per_class.tsv")
    return [f"{prefix}.json", f"{prefix}_per_class.tsv"]


def _headline(result) -> str:
    h = result.headline()
    return "\t".join(f"{k}={v:.4f}" for k, v in h.items()) + f"\tn={result.n}"


# ---------------------------------------------------------------------------
# commands


def cmd_validate(args: argparse.Namespace) -> int:
    problems: list[str] = []
    try:
        t = load_taxonomy(args.taxonomy)
    except OSError as exc:
        print(f"error: cannot read taxonomy {args.taxonomy}: {exc.strerror}", file=sys.stderr)
        return 2
    except HiqcError as exc:
        print(f"error: taxonomy: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(f"taxonomy\tparents={len(t.parents)}\tchildren={len(t.children)}\tdepth={t.depth}")

    if args.queries is not None:
        try:
            lines = Path(args.queries).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            print(f"error: cannot read queries {args.queries}: {exc.strerror}", file=sys.stderr)
            return 2
        seen: set[str] = set()
        labeled = unlabeled = 0
        for lineno, raw in enumerate(lines, 1):
            if not raw.strip():
                continue
            cols = raw.split("\t")
            if len(cols) == 2:
                cols.append("")
            try:
                if len(cols) != 3:
                    raise MalformedRow(f"expected 3 tab-separated columns, found {len(cols)}", line=lineno)
                rec = make_record(cols[0], cols[1], cols[2] or None, t, line=lineno)
            except HiqcError as exc:
                msg = re.sub(r"^line \d+: ", "", str(exc))
                problems.append(f"row {lineno}: {type(exc).__name__}: {msg}")
                continue
            if rec.id in seen:
                problems.append(f"row {lineno}: DuplicateId: id {rec.id!r} repeated")
            seen.add(rec.id)
            if rec.labeled:
                labeled += 1
            else:
                unlabeled += 1
        print(f"queries\tlabeled={labeled}\tunlabeled={unlabeled}")

    if args.embeddings is not None:
        try:
            store = load_embedding_store(args.embeddings)
            print(f"embeddings\trows={len(store)}\twidth={store.width}")
        except OSError as exc:
            problems.append(f"embeddings: cannot read {args.embeddings}: {exc.strerror}")
        except HiqcError as exc:
            problems.append(f"embeddings: {type(exc).__name__}: {exc}")

    for p in problems:
        print(f"error: {p}", file=sys.stderr)
    return 2 if problems else 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _config(args)
    out = _outdir(cfg)
    data = load_dataset(cfg)
    res = run_train(data, cfg)
    save_checkpoint(out / "checkpoint.npz", res.params)
    files = ["checkpoint.npz", _write(out, "train_report.json", res.report.to_json() + "\n")]
    files += _write_eval(out, res.test)
    files.append(_write(out, "config.txt", dump_config(cfg)))
    if not args.no_plots:
        from .plotting import training_curve

        training_curve(res.report, out / "training_curve.png")
        files.append("training_curve.png")
    _manifest(out, "train", cfg, files)
    print(f"test\t{_headline(res.test)}")
    return 0


def cmd_selftrain(args: argparse.Namespace) -> int:
    cfg = _config(args)
    out = _outdir(cfg)
    data = load_dataset(cfg)
    res = run_selftrain(data, cfg)
    save_checkpoint(out / "checkpoint.npz", res.params)
    write_round_reports(out / "rounds.jsonl", res.rounds)
    write_sample_ledger(out / "samples.tsv", res.rounds)
    files = ["checkpoint.npz", "rounds.jsonl", "samples.tsv"]
    files += _write_eval(out, res.test)
    files.append(_write(out, "config.txt", dump_config(cfg)))
    if not args.no_plots:
        from .plotting import round_trajectory

        round_trajectory(res.rounds, out / "rounds.png")
        files.append("rounds.png")
    _manifest(out, "selftrain", cfg, files)
    for r in res.rounds:
        print(f"round {r.round}\tsampled={len(r.sampled)}\tlabeled={r.labeled_size}\tval_macro_f1={r.val_macro_f1}")
    print(f"test\t{_headline(res.test)}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _config(args)
    out = _outdir(cfg)
    data = load_dataset(cfg)
    params = load_checkpoint(args.checkpoint, data.taxonomy, data.store)
    if args.split == "test":
        records = make_split(data.records, cfg, cfg.seed).test
    else:
        records = data.records
    result = evaluate(params, data.graph, records, data.truth)
    files = _write_eval(out, result)
    _manifest(out, "eval", cfg, files, {"split": args.split, "checkpoint_sha256": _sha256(Path(args.checkpoint))})
    print(f"{args.split}\t{_headline(result)}")
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    cfg = _config(args)
    data = load_dataset(cfg)
    params = load_checkpoint(args.checkpoint, data.taxonomy, data.store)
    t = data.taxonomy
    preds = predict(params, data.graph, data.records)
    lines = [
        f"{r.id}\t{t.names[p.child]}\t{t.names[p.parent]}\t{p.probs[p.child - 1]:.6f}"
        for r, p in zip(data.records, preds)
    ]
    text = "\n".join(lines) + ("\n" if lines else "")
    if cfg.out is None:
        sys.stdout.write(text)
        return 0
    out = _outdir(cfg)
    _manifest(out, "predict", cfg, [_write(out, "predictions.tsv", text)], {"checkpoint_sha256": _sha256(Path(args.checkpoint))})
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _config(args)
    out = _outdir(cfg)
    data = load_dataset(cfg)
    result = sweep(data, cfg, full_grid=args.full_grid or cfg.full_grid)
    table = result.delta_table()
    files = [_write(out, "sweep.tsv", table), _write(out, "sweep.json", result.to_json() + "\n")]
    if not args.no_plots and not result.full_grid:
        from .plotting import sweep_deltas

        sweep_deltas(result.deltas(), out / "sweep.png")
        files.append("sweep.png")
    _manifest(out, "sweep", cfg, files)
    sys.stdout.write(table)
    return 0


def cmd_ablation(args: argparse.Namespace) -> int:
    cfg = _config(args)
    out = _outdir(cfg)
    data = load_dataset(cfg)
    s = make_split(data.records, cfg, cfg.seed)
    table = ablation_run(s, data, cfg)
    files = [_write(out, "ablation.json", table.to_json() + "\n"), _write(out, "ablation.tsv", table.to_tsv())]
    if not args.no_plots:
        from .plotting import ablation_bars

        ablation_bars(table.medians(), out / "ablation.png")
        files.append("ablation.png")
    _manifest(out, "ablation", cfg, files)
    sys.stdout.write(table.to_tsv())
    return 0


def cmd_gen_synthetic(args: argparse.Namespace) -> int:
    if args.out is None:
        raise ConfigError("--out is required for this command")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus = gen_synthetic(
        args.seed,
        args.parents,
        args.children_per_parent,
        args.queries_per_child,
        args.imbalance,
        args.typo_rate,
        args.unlabeled_fraction,
    )
    files = [_write(out, "taxonomy.txt", corpus.taxonomy.to_text())]
    write_queries(out / "queries.tsv", corpus.records, corpus.taxonomy)
    write_truth(out / "queries.truth.tsv", corpus)
    files += ["queries.tsv", "queries.truth.tsv"]
    params = {k: getattr(args, k) for k in ("parents", "children_per_parent", "queries_per_child", "imbalance", "typo_rate", "unlabeled_fraction")}
    _manifest(out, "gen-synthetic", None, files, {"generator": {"seed": args.seed, **params}})
    labeled = sum(r.labeled for r in corpus.records)
    print(f"records={len(corpus.records)}\tlabeled={labeled}\tunlabeled={len(corpus.records) - labeled}\tclasses={len(corpus.taxonomy.children)}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hiqc", description="Semi-supervised hierarchical query classification.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for per-epoch detail")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, needs_data: bool = True) -> None:
        p.add_argument("--taxonomy", type=Path, required=needs_data, help="indented taxonomy file")
        p.add_argument("--queries", type=Path, required=needs_data, help="query TSV: id, text, child label (may be empty)")
        p.add_argument("--embeddings", type=Path, help="external embedding file ('N d' header)")
        p.add_argument("--truth", type=Path, help="withheld labels for unlabeled rows (id, child label)")
        p.add_argument("--config", type=Path, help="key=value config file")
        p.add_argument("--seed", type=int, help="seed for split, initialisation, batching and sampling")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
        p.add_argument("--no-plots", action="store_true", help="skip PNG figures")

    p = sub.add_parser("validate", help="check taxonomy, queries and embeddings files")
    p.add_argument("--taxonomy", type=Path, required=True)
    p.add_argument("--queries", type=Path)
    p.add_argument("--embeddings", type=Path)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("train", help="supervised training on the labeled split")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("selftrain", help="training plus neighbourhood-aware self-training")
    common(p)
    p.set_defaults(func=cmd_selftrain)

    p = sub.add_parser("eval", help="score a checkpoint")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--split", choices=("test", "all"), default="test", help="test split for --seed, or every labeled row")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="write id, child, parent, prob for every query")
    common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("sweep", help="one-factor-at-a-time loss and sampler weight sweep")
    common(p)
    p.add_argument("--full-grid", action="store_true", help="run every combination instead of one factor at a time")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablation", help="full model against each component removed, over the configured seeds")
    common(p)
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("gen-synthetic", help="write a synthetic taxonomy and query corpus")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--parents", type=int, default=4)
    p.add_argument("--children-per-parent", type=int, default=4)
    p.add_argument("--queries-per-child", type=int, default=60)
    p.add_argument("--imbalance", type=float, default=0.3)
    p.add_argument("--typo-rate", type=float, default=0.3)
    p.add_argument("--unlabeled-fraction", type=float, default=0.5)
    p.set_defaults(func=cmd_gen_synthetic)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (HiqcError, ConfigError) as exc:
        line = getattr(exc, "line", None)
        where = f" (row {line})" if line else ""
        print(f"error: {type(exc).__name__}{where}: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
