"""``copgraph`` command line: ingest, build, recommend, evaluate, grid-search, ablate."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

from . import dataset as ds
from .directionality import AGGREGATIONS, DAYS, STEPS, TIES_BIDIRECTIONAL, TIES_SEQUENCE, AggregationFunction
from .errors import (
    ChecksumError,
    ConfigError,
    ContractViolation,
    CopgraphError,
    EmptyDatasetError,
    MissingEmbeddingError,
    ModelFormatError,
    ParseError,
    TruncatedFileError,
    UnknownItemError,
    VersionError,
)
from .eval import (
    PROTOCOL_GRAPH,
    PROTOCOL_SEQUENTIAL,
    EvalConfig,
    GridSpec,
    ablation_sweep,
    cold_start_eval,
    evaluate,
    grid_search,
    report_table,
)
from .model import ModelParams, build_model, load_embeddings, load_model, recommend, recommend_cold_start, save_model
from .projection import PruningPolicy

logger = logging.getLogger("copgraph")

EXIT_CODES = [
    (VersionError, 10),
    (ChecksumError, 11),
    (TruncatedFileError, 12),
    (ModelFormatError, 9),
    (FileNotFoundError, 3),
    (ParseError, 4),
    (EmptyDatasetError, 5),
    (ConfigError, 6),
    (UnknownItemError, 7),
    (MissingEmbeddingError, 8),
    (ContractViolation, 13),
    (CopgraphError, 1),
]


def _floats(text):
    return tuple(float(x) for x in text.split(",") if x)


def _ints(text):
    return tuple(int(x) for x in text.split(",") if x)


def _range(text):
    if ":" in text:
        lo, hi = text.split(":")
        return tuple(range(int(lo), int(hi) + 1))
    return tuple(text.split(","))


def _add_data_flags(p, required=True):
    p.add_argument("--input", required=required, help="interaction file (CSV, TSV or JSONL)")
    p.add_argument("--format", choices=["csv", "tsv", "jsonl"], help="override format detection")
    p.add_argument("--min-core", type=int, default=None,
                   help="n-core threshold (default 5 for sequential, 10 for random split)")
    p.add_argument("--single-pass-core", action="store_true",
                   help="apply the n-core threshold once instead of to a fixed point")
    p.add_argument("--shuffle-ties", action="store_true",
                   help="randomly permute purchases sharing a timestamp (uses --seed)")


def _add_split_flag(p, default="sequential", allow_none=False):
    choices = ["sequential", "random"] + (["none"] if allow_none else [])
    p.add_argument("--split", choices=choices, default=default,
                   help="sequential = leave-last-out; random = per-user 80/10/10")


def _add_model_flags(p):
    p.add_argument("--params", help="JSON file with model parameters; explicit flags win")
    p.add_argument("--alpha", type=float, help="weight of the category-level directionality (default 1.0)")
    p.add_argument("--lambda", dest="lam", type=int, help="walk length / matrix power (default 4)")
    p.add_argument("--kappa", type=int, help="co-purchase window in steps (default 4)")
    p.add_argument("--agg", choices=AGGREGATIONS, help="gap weighting function (default inv)")
    p.add_argument("--agg-scale", type=float, help="scale of the exp/gauss weighting")
    p.add_argument("--delta-mode", choices=[STEPS, DAYS], help="measure gaps in steps or days")
    p.add_argument("--tie-mode", choices=[TIES_SEQUENCE, TIES_BIDIRECTIONAL],
                   help="how same-timestamp purchases are ordered when counting")
    p.add_argument("--prune", choices=["topm", "epsilon", "none"], help="pruning after each product")
    p.add_argument("--prune-m", type=int, help="entries kept per row with --prune topm (default 500)")
    p.add_argument("--prune-epsilon", type=float, help="threshold with --prune epsilon")


def _add_common(p):
    p.add_argument("--seed", type=int, default=0, help="seed for splits and shuffles")
    p.add_argument("--threads", default=None, help="worker threads or 'auto' (env COPGRAPH_THREADS)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="copgraph", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load, filter and describe an interaction file")
    _add_data_flags(p)
    _add_split_flag(p, default="none", allow_none=True)
    p.add_argument("--out", help="write the filtered log here")
    _add_common(p)

    p = sub.add_parser("build", help="build a model file")
    _add_data_flags(p)
    _add_split_flag(p, default="none", allow_none=True)
    p.add_argument("--fit-on", choices=["train", "train+valid"], default="train+valid",
                   help="events used when --split is given")
    _add_model_flags(p)
    p.add_argument("--out", required=True, help="model file to write")
    _add_common(p)

    p = sub.add_parser("recommend", help="print top-k complements as TSV: rank item score")
    p.add_argument("--model", required=True)
    p.add_argument("--item", required=True, help="query item identifier")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--embeddings", help="embedding file for cold-start queries")
    p.add_argument("--category", help="category of a cold-start query")
    _add_common(p)

    p = sub.add_parser("evaluate", help="score a model on a split of its input data")
    p.add_argument("--model", required=True)
    _add_data_flags(p)
    _add_split_flag(p)
    p.add_argument("--cutoffs", type=_ints, default=(5, 10), help="comma-separated k values")
    p.add_argument("--part", choices=["test", "validation"], default="test")
    p.add_argument("--out", help="write the report TSV here (default stdout)")
    _add_common(p)

    p = sub.add_parser("grid-search", help="tune alpha/lambda/kappa on validation targets")
    _add_data_flags(p)
    _add_split_flag(p)
    _add_model_flags(p)
    p.add_argument("--alpha-grid", type=_floats, default=GridSpec().alphas)
    p.add_argument("--lambda-grid", type=_ints, default=GridSpec().lambdas)
    p.add_argument("--kappa-grid", type=_ints, default=GridSpec().kappas)
    p.add_argument("--objective", default="ndcg@5")
    p.add_argument("--cutoffs", type=_ints, default=(5, 10))
    p.add_argument("--out", help="write the grid table TSV here (default stdout)")
    p.add_argument("--model-out", help="save the refit winning model here")
    _add_common(p)

    p = sub.add_parser("ablate", help="vary one factor and report each setting")
    _add_data_flags(p)
    _add_split_flag(p)
    _add_model_flags(p)
    p.add_argument("--kind", required=True, choices=["aggregation", "lambda", "kcore", "tie-shuffle"])
    p.add_argument("--range", dest="values", type=_range,
                   help="values as lo:hi (inclusive) or a comma list")
    p.add_argument("--runs", type=int, default=5, help="seeds for --kind tie-shuffle")
    p.add_argument("--cutoffs", type=_ints, default=(5, 10))
    p.add_argument("--out", help="write the table TSV here (default stdout)")
    _add_common(p)

    p = sub.add_parser("cold-start-eval", help="hide items from training and score the fallback")
    _add_data_flags(p)
    _add_model_flags(p)
    p.add_argument("--embeddings", required=True)
    p.add_argument("--cold-rates", type=_floats, default=(0.02, 0.05, 0.10))
    p.add_argument("--cutoff", type=int, default=5)
    p.add_argument("--out", help="write the summary here (default stdout)")
    _add_common(p)
    return parser


def _threads(args) -> int:
    value = args.threads or os.environ.get("COPGRAPH_THREADS") or "1"
    if value == "auto":
        return os.cpu_count() or 1
    try:
        n = int(value)
    except ValueError:
        raise ConfigError(f"--threads must be a positive integer or 'auto', got {value!r}") from None
    if n < 1:
        raise ConfigError("--threads must be positive")
    return n


def _file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _default_core(args):
    if args.min_core is not None:
        return args.min_core
    return 10 if getattr(args, "split", None) == "random" else 5


def _load(args):
    log = ds.load_interactions(args.input, args.format)
    log = ds.k_core_filter(log, _default_core(args), iterative=not args.single_pass_core)
    if args.shuffle_ties:
        log = ds.shuffle_timestamp_ties(log, args.seed)
    return log


def _split_spec(args):
    mode = ds.SEQUENTIAL if args.split == "sequential" else ds.RANDOM
    return ds.SplitSpec(mode=mode, seed=args.seed)


def _protocol(args):
    return PROTOCOL_SEQUENTIAL if args.split == "sequential" else PROTOCOL_GRAPH


def _params(args) -> ModelParams:
    base = {}
    if args.params:
        base = json.loads(Path(args.params).read_text())
    agg = base.get("aggregation", {})
    if isinstance(agg, str):
        agg = {"kind": agg}
    kind = args.agg or agg.get("kind", "inv")
    scale = args.agg_scale if args.agg_scale is not None else agg.get("scale", 1.0)
    prune_cfg = base.get("pruning", {})
    mode = args.prune or {"top_m": "topm"}.get(prune_cfg.get("mode"), prune_cfg.get("mode", "topm"))
    if mode == "topm":
        pruning = PruningPolicy.top_m(args.prune_m or prune_cfg.get("m") or 500)
    elif mode == "epsilon":
        eps = args.prune_epsilon or prune_cfg.get("epsilon")
        if eps is None:
            raise ConfigError("--prune epsilon needs --prune-epsilon")
        pruning = PruningPolicy.threshold(eps)
    else:
        pruning = PruningPolicy.none()

    def pick(flag, key, default):
        return flag if flag is not None else base.get(key, default)

    return ModelParams(
        alpha=float(pick(args.alpha, "alpha", 1.0)),
        lam=int(pick(args.lam, "lambda", 4)),
        kappa=int(pick(args.kappa, "kappa", 4)),
        aggregation=AggregationFunction(kind, float(scale)),
        pruning=pruning,
        min_core=_default_core(args),
        delta_mode=pick(args.delta_mode, "delta_mode", STEPS),
        tie_mode=pick(args.tie_mode, "tie_mode", TIES_SEQUENCE),
    )


def _announce(args, **extra):
    resolved = {k: v for k, v in vars(args).items() if k != "func"}
    resolved.update(extra)
    print("config: " + json.dumps(resolved, sort_keys=True, default=str), file=sys.stderr)
    for key in ("input", "model", "embeddings", "params"):
        path = getattr(args, key, None)
        if path and Path(path).is_file():
            print(f"fingerprint: {key}={path} sha256={_file_digest(path)}", file=sys.stderr)


def _emit(text: str, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_ingest(args):
    _announce(args)
    log = _load(args)
    lines = [f"users={log.n_users}", f"items={log.n_items}", f"events={log.n_events}",
             f"categories={log.n_categories - 1}"]
    if args.split != "none":
        s = ds.split(log, _split_spec(args))
        lines += [f"validation_users={len(s.validation)}", f"test_users={len(s.test)}",
                  f"skipped_users={s.n_skipped}"]
    sys.stdout.write("\n".join(lines) + "\n")
    if args.out:
        ds.save_interactions(log, args.out)


def cmd_build(args):
    params = _params(args)
    _announce(args, resolved_params=params.to_dict())
    log = _load(args)
    if args.split != "none":
        s = ds.split(log, _split_spec(args))
        log = s.train if args.fit_on == "train" else s.train_valid
    model = build_model(log, params)
    save_model(model, args.out)
    print(f"model: items={model.n_items} edges={model.W.nnz} fingerprint={model.fingerprint}",
          file=sys.stderr)


def cmd_recommend(args):
    _announce(args)
    model = load_model(args.model)
    if args.item in model or not args.embeddings:
        recs = recommend(model, args.item, args.k)
    else:
        recs = recommend_cold_start(model, args.item, args.category,
                                    load_embeddings(args.embeddings), args.k)
    for rank, (item, score) in enumerate(recs, start=1):
        sys.stdout.write(f"{rank}\t{item}\t{score:.10g}\n")


def cmd_evaluate(args):
    _announce(args)
    model = load_model(args.model)
    log = _load(args)
    s = ds.split(log, _split_spec(args))
    report = evaluate(model, s, EvalConfig(args.cutoffs, _protocol(args)), args.part)
    _emit(report_table([("evaluate", args.part, report)], args.cutoffs), args.out)
    sys.stderr.write(report.summary())


def cmd_grid_search(args):
    base = _params(args)
    _announce(args, resolved_params=base.to_dict())
    log = _load(args)
    grid = GridSpec(args.alpha_grid, args.lambda_grid, args.kappa_grid, args.objective)
    config = EvalConfig(args.cutoffs, _protocol(args))
    result = grid_search(log, grid, config, base=base, seed=args.seed, workers=_threads(args))
    rows = [("grid", p.error or "ok", p.report) for p in result.points if p.report]
    rows.append(("best-test", "refit", result.test_report))
    _emit(report_table(rows, args.cutoffs), args.out)
    for p in result.points:
        if p.error:
            print(f"grid point failed: {p.params.to_dict()} {p.error}", file=sys.stderr)
    sys.stderr.write("best: " + json.dumps(result.best.to_dict(), sort_keys=True) + "\n")
    sys.stderr.write(result.test_report.summary())
    if args.model_out:
        save_model(result.model, args.model_out)


def cmd_ablate(args):
    params = _params(args)
    _announce(args, resolved_params=params.to_dict())
    kind = args.kind.replace("-", "_")
    if kind == "kcore":
        log = ds.load_interactions(args.input, args.format)
        if args.shuffle_ties:
            log = ds.shuffle_timestamp_ties(log, args.seed)
    else:
        log = _load(args)
    config = EvalConfig(args.cutoffs, _protocol(args))
    rows = ablation_sweep(kind, log, params, config, values=args.values,
                          seeds=tuple(range(args.runs)), split_seed=args.seed)
    _emit(report_table([(r.label, r.value, r.report) for r in rows], args.cutoffs), args.out)


def cmd_cold_start_eval(args):
    params = _params(args)
    _announce(args, resolved_params=params.to_dict())
    log = _load(args)
    emb = load_embeddings(args.embeddings)
    text = "".join(cold_start_eval(log, params, emb, rate, seed=args.seed, cutoff=args.cutoff).summary()
                   for rate in args.cold_rates)
    _emit(text, args.out)


COMMANDS = {
    "ingest": cmd_ingest,
    "build": cmd_build,
    "recommend": cmd_recommend,
    "evaluate": cmd_evaluate,
    "grid-search": cmd_grid_search,
    "ablate": cmd_ablate,
    "cold-start-eval": cmd_cold_start_eval,
}


def exit_code(exc: BaseException) -> int:
    for cls, code in EXIT_CODES:
        if isinstance(exc, cls):
            return code
    return 1


def _category(exc) -> str:
    if isinstance(exc, FileNotFoundError):
        return "file-not-found"
    return getattr(exc, "category", "error")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(name)s: %(message)s")
    try:
        _threads(args)
        COMMANDS[args.command](args)
    except (CopgraphError, FileNotFoundError) as exc:
        print(f"error: {_category(exc)}: {exc}", file=sys.stderr)
        return exit_code(exc)
    return 0


if __name__ == "__main__":
    sys.exit(main())
