"""cli.py

Command-line entry point. Every command reads one INI run config (optional),
writes fixed file names under --out and drops a manifest beside them.

    python cli.py synth --out run1
    python cli.py embed --mock --out run1 --force
    python cli.py train --out run1 --seed 0
    python cli.py eval --out run1
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import os
import platform
import sys
import uuid
from dataclasses import asdict, dataclass, field, fields, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

import db
from analysis import (
    DEFAULT_ALPHA,
    cell_importance,
    extract_top_paths,
    infer_trajectory,
    paths_to_edge_confidence,
    population_profiles,
)
from baselines import run_baselines
from errors import DataValidationError, FetchError, NumericError, TNGError, UsageError
from excel_logger import append_metrics
from experiment_runner import (
    InputFiles,
    checkpoint_name,
    eval_seeds,
    history_name,
    load_inputs,
    metrics_table,
    predictions_name,
    train_seeds,
)
from gemini_client import embed_texts_gemini
from graph_model import load_gene_graph, load_paths, save_dataset, save_gene_graph, save_paths, synthesize_dataset
from net_eval import evaluate_network, load_gold_standard
from text_embedding import (
    EmbedClientConfig,
    build_embedding_store,
    http_embedder,
    mock_embedder,
    save_embedding_store,
)
from training import TrainConfig, context_for_checkpoint, load_checkpoint

__version__ = "0.1.0"

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

DEFAULT_OUT = "tng_out"
INPUT_DEFAULTS = {
    "nodes": "nodes.tsv",
    "edges": "edges.tsv",
    "paths": "paths.tsv",
    "expression": "expression.tsv",
    "labels": "labels.tsv",
    "embeddings": "embeddings.tnge",
}

TOP_PATHS_FILE = "top_paths.tsv"
NETWORK_FILE = "network.tsv"
TRAJECTORY_FILE = "trajectory.tsv"
CELL_IMPORTANCE_FILE = "cell_importance.tsv"
NET_EVAL_FILE = "net_eval.tsv"
METRICS_FILE = "metrics.tsv"
BASELINES_FILE = "baselines.tsv"


# ---------- run configuration ----------

@dataclass(frozen=True)
class AnalysisConfig:
    alpha: float = DEFAULT_ALPHA
    top_k: int = 10
    target_population: Optional[str] = None


@dataclass(frozen=True)
class NetEvalConfig:
    gold: Optional[str] = None
    max_edges: Optional[int] = None
    undirected: bool = False


@dataclass(frozen=True)
class RunConfig:
    inputs: InputFiles
    train: TrainConfig = field(default_factory=TrainConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    net_eval: NetEvalConfig = field(default_factory=NetEvalConfig)
    out_dir: str = DEFAULT_OUT
    seeds: Tuple[int, ...] = (0,)
    jobs: int = 1

    def validate(self) -> None:
        if not self.seeds:
            raise UsageError("seed list is empty")
        if self.jobs < 1:
            raise UsageError("jobs must be >= 1")
        if self.analysis.alpha < 0 or self.analysis.top_k < 1:
            raise UsageError("alpha must be >= 0 and top_k >= 1")
        self.train.validate()

    def config_hash(self) -> str:
        raw = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(raw.encode("utf-8")).hexdigest()


def _int_list(text: str) -> Tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.replace(" ", "").split(",") if x)
    except ValueError:
        raise UsageError(f"expected a comma-separated integer list, got {text!r}") from None


def _read_section(cp: configparser.ConfigParser, section: str, cls):
    """Build a dataclass from one INI section, coercing by each field's default."""
    values: Dict[str, object] = {}
    if cp.has_section(section):
        known = {f.name: f for f in fields(cls)}
        for key in cp[section]:
            if key not in known:
                raise UsageError(f"unknown key [{section}] {key}")
            default = known[key].default
            try:
                if isinstance(default, bool):
                    values[key] = cp.getboolean(section, key)
                elif isinstance(default, int):
                    values[key] = cp.getint(section, key)
                elif isinstance(default, float):
                    values[key] = cp.getfloat(section, key)
                elif isinstance(default, tuple):
                    values[key] = tuple(float(x) for x in cp.get(section, key).split(","))
                elif key in ("max_edges", "n_edge_types"):
                    values[key] = cp.getint(section, key)
                else:
                    values[key] = cp.get(section, key).strip() or None
            except ValueError as exc:
                raise UsageError(f"bad value for [{section}] {key}: {exc}") from None
    return cls(**values)


def load_run_config(config_file: Optional[str], out_dir: Optional[str] = None, seed: Optional[int] = None) -> RunConfig:
    cp = configparser.ConfigParser()
    base = Path(".")
    if config_file:
        if not Path(config_file).is_file():
            raise UsageError(f"config file not found: {config_file}")
        cp.read(config_file, encoding="utf-8")
        base = Path(config_file).parent

    run = cp["run"] if cp.has_section("run") else {}
    out = out_dir or run.get("out_dir") or DEFAULT_OUT
    seeds = (seed,) if seed is not None else _int_list(run.get("seeds", "0"))
    try:
        jobs = int(run.get("jobs", "1"))
    except ValueError:
        raise UsageError("[run] jobs must be an integer") from None

    section = cp["inputs"] if cp.has_section("inputs") else {}
    unknown = sorted(set(section) - set(INPUT_DEFAULTS) - {"n_edge_types"})
    if unknown:
        raise UsageError(f"unknown keys in [inputs]: {unknown}")
    resolved = {k: str(base / section[k]) if k in section else str(Path(out) / v) for k, v in INPUT_DEFAULTS.items()}
    if "embeddings" not in section and not Path(resolved["embeddings"]).is_file():
        resolved["embeddings"] = None
    n_types = section.get("n_edge_types")
    inputs = InputFiles(n_edge_types=int(n_types) if n_types else None, **resolved)

    net = _read_section(cp, "net_eval", NetEvalConfig)
    if net.gold and not Path(net.gold).is_absolute():
        net = replace(net, gold=str(base / net.gold))
    cfg = RunConfig(
        inputs=inputs,
        train=_read_section(cp, "train", TrainConfig),
        analysis=_read_section(cp, "analysis", AnalysisConfig),
        net_eval=net,
        out_dir=out,
        seeds=seeds,
        jobs=jobs,
    )
    cfg.validate()
    return cfg


# ---------- output helpers ----------

def _write_tsv(df: pd.DataFrame, path: Path) -> None:
    df.to_csv(path, sep="\t", index=False, float_format="%.17g", lineterminator="\n", na_rep="nan")


def _guard(paths: Sequence[Path], force: bool) -> None:
    existing = [str(p) for p in paths if p.exists()]
    if existing and not force:
        raise UsageError(f"refusing to overwrite {existing[0]} (use --force)")


def _require_inputs(cfg: RunConfig) -> None:
    missing = cfg.inputs.missing()
    if missing:
        raise DataValidationError(f"input file not found: {missing[0]}")


def _file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(command: str, cfg: RunConfig, outputs: List[str]) -> Dict[str, object]:
    inputs = {k: v for k, v in asdict(cfg.inputs).items() if isinstance(v, str)}
    manifest = {
        "command": command,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "config_hash": cfg.config_hash(),
        "seeds": list(cfg.seeds),
        "inputs": {k: _file_digest(v) for k, v in inputs.items() if Path(v).is_file()},
        "outputs": sorted(outputs),
        "versions": {
            "tng": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "pandas": pd.__version__,
        },
    }
    path = Path(cfg.out_dir) / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


def _record_run(command: str, cfg: RunConfig, manifest: Dict[str, object]) -> None:
    if not db.ledger_enabled():
        return
    try:
        db.init_db()
        db.save_run(
            run_id=uuid.uuid4().hex[:10],
            command=command,
            seed=cfg.seeds[0],
            config_hash=str(manifest["config_hash"]),
            out_dir=cfg.out_dir,
            exit_code=EXIT_OK,
            manifest=manifest,
        )
    except Exception as exc:
        logger.warning("run ledger write failed: %s", exc)


# ---------- commands ----------

def cmd_synth(args, cfg: RunConfig) -> List[str]:
    out = Path(cfg.out_dir)
    targets = [out / INPUT_DEFAULTS[k] for k in INPUT_DEFAULTS]
    _guard(targets, args.force)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.seeds[0]
    graph, paths, dataset = synthesize_dataset(
        args.genes, args.paths, args.cells, args.signal_path, args.effect_size, seed,
        n_edge_types=args.edge_types, n_populations=args.populations,
    )
    save_gene_graph(graph, targets[0], targets[1])
    save_paths(paths, graph, targets[2])
    save_dataset(dataset, graph, targets[3], targets[4])
    d_llm = args.d_llm or cfg.train.d_llm
    save_embedding_store(build_embedding_store(graph, paths, mock_embedder(d_llm, seed), d_llm), targets[5])
    logger.info("synthetic fixture: %d genes, %d paths, %d cells in %s", graph.n, paths.p, len(dataset), out)
    return [str(t) for t in targets]


def cmd_embed(args, cfg: RunConfig) -> List[str]:
    target = Path(cfg.out_dir) / INPUT_DEFAULTS["embeddings"]
    _guard([target], args.force)
    graph = load_gene_graph(cfg.inputs.nodes, cfg.inputs.edges, cfg.inputs.n_edge_types)
    paths = load_paths(cfg.inputs.paths, graph)
    d_llm = args.d_llm or cfg.train.d_llm
    if args.endpoint:
        client = EmbedClientConfig(endpoint=args.endpoint, d_llm=d_llm, batch_size=args.batch_size,
                                   max_workers=args.workers)
        embed_fn = http_embedder(client, progress=not args.quiet)
    elif args.gemini:
        embed_fn = lambda texts: embed_texts_gemini(texts, d_llm=d_llm)
    else:
        embed_fn = mock_embedder(d_llm, cfg.seeds[0])
    store = build_embedding_store(graph, paths, embed_fn, d_llm)
    Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
    save_embedding_store(store, target)
    logger.info("embedded %d genes and %d paths", len(store.gene_vectors), len(store.path_vectors))
    return [str(target)]


def _train_config(args, cfg: RunConfig) -> TrainConfig:
    overrides = {}
    if args.epochs is not None:
        overrides["epochs"] = args.epochs
    if args.lr is not None:
        overrides["learning_rate"] = args.lr
    if args.batch_size is not None:
        overrides["batch_size"] = args.batch_size
    tc = replace(cfg.train, **overrides)
    tc.validate()
    return tc


def cmd_train(args, cfg: RunConfig) -> List[str]:
    _require_inputs(cfg)
    out = Path(cfg.out_dir)
    _guard([out / checkpoint_name(s) for s in cfg.seeds], args.force)
    out.mkdir(parents=True, exist_ok=True)
    outcomes = train_seeds(_train_config(args, cfg), cfg.inputs, cfg.out_dir, cfg.seeds,
                           jobs=cfg.jobs, progress=not args.quiet)
    files = []
    for o in outcomes:
        logger.info("seed %d: best validation epoch %d", o.seed, o.best_epoch)
        files += [o.checkpoint, str(out / history_name(o.seed))]
    return files


def cmd_eval(args, cfg: RunConfig) -> List[str]:
    _require_inputs(cfg)
    out = Path(cfg.out_dir)
    results = eval_seeds(cfg.inputs, cfg.out_dir, cfg.seeds, jobs=cfg.jobs, progress=not args.quiet)
    per_seed = dict(zip(cfg.seeds, results))
    table = metrics_table(per_seed)
    _write_tsv(table, out / METRICS_FILE)
    if args.xlsx:
        run_id = uuid.uuid4().hex[:10]
        for seed, m in per_seed.items():
            append_metrics(run_id=run_id, model="tng", seed=seed, split="test", metrics=m, path=args.xlsx)
    print(table.to_string(index=False))
    return [str(out / METRICS_FILE)] + [str(out / predictions_name(s)) for s in cfg.seeds]


def cmd_baselines(args, cfg: RunConfig) -> List[str]:
    _require_inputs(cfg)
    inputs = load_inputs(cfg.inputs)
    per_model: Dict[str, Dict[int, object]] = {}
    for seed in cfg.seeds:
        for name, m in run_baselines(inputs.dataset, cfg.train.split_ratios, seed, graph=inputs.graph).items():
            per_model.setdefault(name, {})[seed] = m
    table = pd.concat([metrics_table(rows, model=name) for name, rows in per_model.items()], ignore_index=True)
    target = Path(cfg.out_dir) / BASELINES_FILE
    _write_tsv(table, target)
    print(table.to_string(index=False))
    return [str(target)]


def _load_trained(cfg: RunConfig):
    _require_inputs(cfg)
    inputs = load_inputs(cfg.inputs)
    seed = cfg.seeds[0]
    ckpt = load_checkpoint(Path(cfg.out_dir) / checkpoint_name(seed), inputs.graph, inputs.paths)
    ctx = context_for_checkpoint(ckpt, inputs.graph, inputs.paths, inputs.store)
    return inputs, ckpt, ctx


def cmd_extract_paths(args, cfg: RunConfig) -> List[str]:
    inputs, ckpt, _ = _load_trained(cfg)
    k = args.k or cfg.analysis.top_k
    ranked = extract_top_paths(ckpt.params, inputs.paths, inputs.graph, k)
    out = Path(cfg.out_dir)
    _write_tsv(pd.DataFrame(
        [(i, e.path_id, e.importance, e.arrow_symbols) for i, e in enumerate(ranked.entries, start=1)],
        columns=["rank", "path_id", "importance", "gene_symbols"],
    ), out / TOP_PATHS_FILE)

    # the network is built from every path, not only the top k
    full = extract_top_paths(ckpt.params, inputs.paths, inputs.graph, inputs.paths.p)
    edges = sorted(paths_to_edge_confidence(full).items(), key=lambda kv: (-kv[1], kv[0]))
    _write_tsv(pd.DataFrame([(a, b, c) for (a, b), c in edges], columns=["src_gene", "dst_gene", "confidence"]),
               out / NETWORK_FILE)
    return [str(out / TOP_PATHS_FILE), str(out / NETWORK_FILE)]


def _default_target(profiles) -> str:
    timed = [p for p in profiles if p.time is not None]
    if not timed:
        raise DataValidationError("no population has a time annotation; pass --target")
    return max(timed, key=lambda p: (p.time, p.population)).population


def cmd_trajectory(args, cfg: RunConfig) -> List[str]:
    inputs, ckpt, ctx = _load_trained(cfg)
    profiles = population_profiles(inputs.dataset)
    target = args.target or cfg.analysis.target_population or _default_target(profiles)
    traj = infer_trajectory(ckpt.params, ctx, inputs.dataset, target, profiles)
    out = Path(cfg.out_dir)
    _write_tsv(pd.DataFrame(traj.rows(), columns=["src_population", "dst_population", "distance", "retained"]),
               out / TRAJECTORY_FILE)

    alpha = args.alpha if args.alpha is not None else cfg.analysis.alpha
    scores = sorted(
        ((p.population, p.count_diseased, p.count_healthy, cell_importance(p, alpha)) for p in profiles),
        key=lambda r: (-r[3], r[0]),
    )
    _write_tsv(pd.DataFrame(scores, columns=["population", "count_diseased", "count_healthy", "score"]),
               out / CELL_IMPORTANCE_FILE)
    return [str(out / TRAJECTORY_FILE), str(out / CELL_IMPORTANCE_FILE)]


def cmd_net_eval(args, cfg: RunConfig) -> List[str]:
    gold_file = args.gold or cfg.net_eval.gold
    if not gold_file:
        raise UsageError("net-eval needs --gold or [net_eval] gold")
    out = Path(cfg.out_dir)
    network_file = Path(args.network) if args.network else out / NETWORK_FILE
    if not network_file.is_file():
        raise DataValidationError(f"network file not found: {network_file}")
    net = pd.read_csv(network_file, sep="\t", dtype={"src_gene": str, "dst_gene": str})
    inferred = {(a, b): float(c) for a, b, c in net[["src_gene", "dst_gene", "confidence"]].itertuples(index=False)}

    graph = load_gene_graph(cfg.inputs.nodes, cfg.inputs.edges, cfg.inputs.n_edge_types)
    if not Path(cfg.inputs.expression).is_file():
        raise DataValidationError(f"expression file not found: {cfg.inputs.expression}")
    header = pd.read_csv(cfg.inputs.expression, sep="\t", nrows=0).columns[1:]
    expressed = {g for g in header if graph.has_gene(g)}

    max_edges = args.max_edges if args.max_edges is not None else cfg.net_eval.max_edges
    undirected = args.undirected or cfg.net_eval.undirected
    report = evaluate_network(inferred, load_gold_standard(gold_file), expressed,
                              max_edges=max_edges, undirected=undirected)

    target = out / NET_EVAL_FILE
    df = pd.DataFrame([asdict(p) for p in report.points], columns=["rank", "src", "dst", "hit", "precision", "recall"])
    df["hit"] = df["hit"].astype(int)
    _write_tsv(df, target)
    with open(target, "a", encoding="utf-8", newline="\n") as f:
        f.write(f"area={report.area:.6f}\n")
    print(f"area={report.area:.6f}")
    return [str(target)]


COMMANDS = {
    "synth": cmd_synth,
    "embed": cmd_embed,
    "train": cmd_train,
    "eval": cmd_eval,
    "extract-paths": cmd_extract_paths,
    "trajectory": cmd_trajectory,
    "net-eval": cmd_net_eval,
    "baselines": cmd_baselines,
}


# ---------- argument parsing ----------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="INI run config")
    common.add_argument("--seed", type=int, help="run a single seed instead of [run] seeds")
    common.add_argument("--out", help=f"output directory (default {DEFAULT_OUT})")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")
    common.add_argument("--verbose", action="store_true")
    common.add_argument("--quiet", action="store_true", help="no progress bars")

    parser = _Parser(prog="tng", description="Text-numeric graph classifier for single-cell expression")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic fixture")
    p.add_argument("--genes", type=int, default=20)
    p.add_argument("--paths", type=int, default=8)
    p.add_argument("--cells", type=int, default=500)
    p.add_argument("--signal-path", type=int, default=0)
    p.add_argument("--effect-size", type=float, default=3.0)
    p.add_argument("--edge-types", type=int, default=2)
    p.add_argument("--populations", type=int, default=4)
    p.add_argument("--d-llm", type=int)

    p = sub.add_parser("embed", parents=[common], help="build the sentence embedding store")
    backend = p.add_mutually_exclusive_group()
    backend.add_argument("--mock", action="store_true", help="deterministic hash embeddings (default)")
    backend.add_argument("--endpoint", help="embedding service URL")
    backend.add_argument("--gemini", action="store_true", help="Gemini embedding API")
    p.add_argument("--d-llm", type=int)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("train", parents=[common], help="train one model per seed")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)

    p = sub.add_parser("eval", parents=[common], help="test-split metrics per seed")
    p.add_argument("--xlsx", help="also append metric rows to this workbook")

    p = sub.add_parser("extract-paths", parents=[common], help="rank paths and export the inferred network")
    p.add_argument("--k", type=int)

    p = sub.add_parser("trajectory", parents=[common], help="population MST pruned by time flow")
    p.add_argument("--target")
    p.add_argument("--alpha", type=float)

    p = sub.add_parser("net-eval", parents=[common], help="score the inferred network against a gold standard")
    p.add_argument("--gold")
    p.add_argument("--network")
    p.add_argument("--max-edges", type=int)
    p.add_argument("--undirected", action="store_true")

    sub.add_parser("baselines", parents=[common], help="random, MLP and random forest on the same split")
    return parser


def _configure_logging(verbose: bool) -> None:
    level = "DEBUG" if verbose else os.getenv("TNG_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _configure_logging(args.verbose)
        cfg = load_run_config(args.config, args.out, args.seed)
        outputs = COMMANDS[args.command](args, cfg)
        Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
        manifest = write_manifest(args.command.replace("-", "_"), cfg, outputs)
        _record_run(args.command, cfg, manifest)
        return EXIT_OK
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataValidationError, FetchError, TNGError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
