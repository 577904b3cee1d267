"""Command line front end: ingest, select, augment-cache, train, infer, eval.

Every option lives in one nested JSON config (``--config run.json``). Each
leaf key also has a flat flag; a flag given on the command line beats the
config file, which beats the built-in default.

Exit codes: 0 success, 1 usage, 2 validation, 3 runtime.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import selection as sel
from .checkpoint import load_checkpoint, save_checkpoint
from .datasets import load_planetoid
from .enhance import (
    BudgetLedger,
    ChatClient,
    EmbeddingClient,
    EnhancementCache,
    EnhancementPolicy,
    Enhancer,
    HashingEmbedder,
    LLM_CALLS,
    MockLLM,
    PromptCatalog,
    embed_texts,
    populate_cache,
)
from .enhance.clients import ENV_EMBED_ENDPOINT, ENV_LLM_API_KEY, ENV_LLM_ENDPOINT, EmbeddingError, LLMError
from .estimators import NodeSelector
from .gnn import TrainConfig, config_dict, format_metrics, predict, train
from .graph import GraphFormatError, GraphValidationError, load_graph, read_features, save_graph, write_features
from .metrics import accuracy, intra_class_cosine
from .sampler import SamplerConfig
from .validation import check_graph_features

log = logging.getLogger("ellagnn")

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2, 3

NODES_FILE, EDGES_FILE, FEATURES_FILE = "nodes.jsonl", "edges.txt", "features.bin"
CANDIDATES_FILE, CHECKPOINT_FILE = "candidate_set.json", "model.ckpt"
METRICS_FILE, PREDICTIONS_FILE, CACHE_FILE, EVAL_FILE = "metrics.jsonl", "predictions.jsonl", "cache.jsonl", "eval.json"
FIXED_TIMESTAMP = "1970-01-01T00:00:00Z"


class UsageError(Exception):
    pass


class ValidationError(Exception):
    pass


@dataclass(frozen=True)
class Option:
    section: str
    key: str
    type: type
    default: object
    help: str = ""
    choices: tuple | None = None

    @property
    def flag(self):
        return "--" + self.key.replace("_", "-")


OPTIONS = (
    Option("dataset", "data", str, None, "canonical dataset directory"),
    Option("dataset", "features", str, None, "features.bin (default: <data>/features.bin)"),
    Option("dataset", "num_classes", int, None, "number of classes (default: max label + 1)"),
    Option("dataset", "nodes", str, None, "raw nodes.jsonl to ingest"),
    Option("dataset", "edges", str, None, "raw edges.txt to ingest"),
    Option("dataset", "planetoid", str, None, "directory with raw Planetoid ind.* files to ingest"),
    Option("dataset", "name", str, "cora", "Planetoid dataset name"),
    Option("dataset", "embed_dim", int, 256, "width of the mock embedder"),
    Option("sampler", "fanout", int, 25),
    Option("sampler", "top_k", int, 5),
    Option("selection", "method", str, "textlen", "selection heuristic",
           ("pagerank", "density", "textlen", "degree", "combined")),
    Option("selection", "budget_k", int, None, "candidate-set size"),
    Option("selection", "percentile", float, 10.0, "degree percentile"),
    Option("selection", "alpha", float, 0.5, "PageRank weight in the combined score"),
    Option("selection", "direction", str, "ascending", "PageRank order", ("ascending", "descending")),
    Option("selection", "damping", float, 0.85),
    Option("selection", "tol", float, 1e-9),
    Option("selection", "max_iter", int, 200),
    Option("selection", "kmeans_seed", int, 0),
    Option("selection", "num_clusters", int, None),
    Option("selection", "stopwords", str, None, "stopword list, one word per line"),
    Option("enhancement", "p", float, 0.0, "enhancement probability"),
    Option("enhancement", "candidates", str, None, "candidate_set.json (default: <out>/candidate_set.json)"),
    Option("enhancement", "catalog", str, None, "prompt catalog JSON (default: built-in)"),
    Option("enhancement", "cache", str, None, "cache.jsonl (default: <out>/cache.jsonl)"),
    Option("enhancement", "temperature", float, 0.7),
    Option("enhancement", "max_tokens", int, 2048),
    Option("enhancement", "max_inflight", int, 1),
    Option("enhancement", "max_calls", int, None, "LLM call budget (default: unlimited)"),
    Option("enhancement", "templates", str, None, "comma-separated template ids for augment-cache"),
    Option("enhancement", "mock_fail_rate", float, 0.0, "failure rate of the mock LLM"),
    Option("training", "layers", int, 2),
    Option("training", "hidden_dim", int, 256),
    Option("training", "learning_rate", float, 0.01),
    Option("training", "weight_decay", float, 5e-4),
    Option("training", "epochs", int, 300),
    Option("training", "batch_size", int, 512),
    Option("training", "seed", int, 0),
    Option("training", "optimizer", str, "adam", None, ("adam", "sgd")),
    Option("training", "dropout", float, 0.5),
    Option("output", "out", str, ".", "output directory"),
    Option("output", "checkpoint", str, None, "checkpoint path (default: <out>/model.ckpt)"),
    Option("output", "split", str, "test", "nodes to predict", ("train", "val", "test", "all")),
)
_BY_KEY = {o.key: o for o in OPTIONS}

# `--budget` is the natural word in two places; it means the candidate-set
# size for `select` and the LLM call budget everywhere else.
_BUDGET_TARGET = {"select": "budget_k"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _common(command):
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--mock-llm", action="store_true", help="use the deterministic mock LLM")
    p.add_argument("--mock-embed", action="store_true", help="use the deterministic hashing embedder")
    p.add_argument("-v", "--verbose", action="store_true")
    for o in OPTIONS:
        # choices are checked after merging so config values get the same treatment
        p.add_argument(o.flag, dest=o.key, type=o.type, help=o.help or None)
    target = _BUDGET_TARGET.get(command, "max_calls")
    p.add_argument("--budget", dest=target, type=int, help=f"alias of --{target.replace('_', '-')}")
    return p


COMMANDS = {
    "ingest": "validate raw nodes/edges and write the canonical dataset with features",
    "select": "score nodes with a heuristic and write candidate_set.json",
    "augment-cache": "pre-compute LLM enhancements for the candidate set",
    "train": "train the GNN and write a checkpoint plus metrics.jsonl",
    "infer": "LLM-free prediction from a checkpoint",
    "eval": "intra-class cosine similarity of raw vs augmented features",
}


def build_parser():
    parser = _Parser(prog="ellagnn", description="Budgeted LLM-augmented GNN on text-attributed graphs.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_text in COMMANDS.items():
        cmd = sub.add_parser(name, help=help_text, parents=[_common(name)])
        if name == "augment-cache":
            cmd.add_argument("--pairwise", action="store_true", help="use the two-paper comparison prompts")
    return parser


def resolve_config(args) -> dict:
    """Flat ``{key: value}`` view with precedence flag > config file > default."""
    file_cfg = {}
    path = getattr(args, "config", None)
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from None
        for section, body in doc.items():
            if not isinstance(body, dict):
                raise ValidationError(f"config section {section!r} must be an object")
            for key, value in body.items():
                opt = _BY_KEY.get(key)
                if opt is None or opt.section != section:
                    raise ValidationError(f"unknown config key {section}.{key}")
                if value is not None:
                    try:
                        value = opt.type(value)
                    except (TypeError, ValueError):
                        raise ValidationError(f"config key {section}.{key}: bad value {value!r}") from None
                file_cfg[key] = value
    cfg = {}
    for o in OPTIONS:
        if hasattr(args, o.key):
            cfg[o.key] = getattr(args, o.key)
        elif o.key in file_cfg:
            cfg[o.key] = file_cfg[o.key]
        else:
            cfg[o.key] = o.default
        if o.choices and cfg[o.key] is not None and cfg[o.key] not in o.choices:
            raise UsageError(f"{o.flag}: invalid choice {cfg[o.key]!r} (choose from {', '.join(o.choices)})")
    return cfg


def nested_config(cfg) -> dict:
    out = {}
    for o in OPTIONS:
        out.setdefault(o.section, {})[o.key] = cfg[o.key]
    return out


# -- helpers -------------------------------------------------------------------

def _out_dir(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _out_path(cfg, key, default_name):
    return Path(cfg[key]) if cfg.get(key) else Path(cfg["out"]) / default_name


def _require_path(path, what):
    if path is None or not Path(path).exists():
        raise ValidationError(f"{what} not found: {path}")
    return Path(path)


def _load_dataset(cfg, need_features=True):
    data = _require_path(cfg["data"], "dataset directory (--data)")
    graph = load_graph(data / NODES_FILE, data / EDGES_FILE, cfg["num_classes"])
    if not need_features:
        return graph, None
    feats_path = _require_path(cfg["features"] or data / FEATURES_FILE, "features file")
    graph, features = check_graph_features(graph, read_features(feats_path))
    return graph, features


def _make_embedder(args, cfg, dim=None):
    if getattr(args, "mock_embed", False):
        return HashingEmbedder(dim or cfg["embed_dim"])
    if not os.environ.get(ENV_EMBED_ENDPOINT):
        raise ValidationError(f"{ENV_EMBED_ENDPOINT} is not set (use --mock-embed for the offline embedder)")
    return EmbeddingClient.from_env()


def _make_llm(args, cfg):
    if getattr(args, "mock_llm", False):
        return MockLLM(fail_rate=cfg["mock_fail_rate"], seed=cfg["seed"])
    missing = [v for v in (ENV_LLM_ENDPOINT, ENV_LLM_API_KEY) if not os.environ.get(v)]
    if missing:
        raise ValidationError(f"{' and '.join(missing)} not set (use --mock-llm for the offline mock)")
    return ChatClient.from_env()


def _make_cache(args, cfg):
    path = _out_path(cfg, "cache", CACHE_FILE)
    path.parent.mkdir(parents=True, exist_ok=True)
    # mock runs must be byte-reproducible, so their records carry a fixed timestamp
    if getattr(args, "mock_llm", False):
        return EnhancementCache(path, clock=lambda: FIXED_TIMESTAMP)
    return EnhancementCache(path)


def _load_candidates(cfg):
    path = _out_path(cfg, "candidates", CANDIDATES_FILE)
    return sel.CandidateSet.load(_require_path(path, "candidate set"))


def _catalog(cfg):
    return PromptCatalog.load(_require_path(cfg["catalog"], "prompt catalog")) if cfg["catalog"] else PromptCatalog.default()


def _llm_params(cfg):
    return {"temperature": cfg["temperature"], "max_tokens": cfg["max_tokens"]}


def _train_config(cfg):
    return TrainConfig(
        num_layers=cfg["layers"], hidden_dim=cfg["hidden_dim"], learning_rate=cfg["learning_rate"],
        weight_decay=cfg["weight_decay"], epochs=cfg["epochs"], batch_size=cfg["batch_size"],
        seed=cfg["seed"], optimizer=cfg["optimizer"], dropout_rate=cfg["dropout"],
    )


def _sampler_config(cfg):
    return SamplerConfig(fanout=cfg["fanout"], top_k=cfg["top_k"], num_hops=cfg["layers"])


# -- subcommands -----------------------------------------------------------------

def cmd_ingest(args, cfg):
    out = _out_dir(cfg)
    if cfg["planetoid"]:
        graph, features = load_planetoid(_require_path(cfg["planetoid"], "Planetoid directory"), cfg["name"])
    else:
        nodes = _require_path(cfg["nodes"] or (cfg["data"] and Path(cfg["data"]) / NODES_FILE), "nodes file")
        edges = _require_path(cfg["edges"] or (cfg["data"] and Path(cfg["data"]) / EDGES_FILE), "edges file")
        graph = load_graph(nodes, edges, cfg["num_classes"])
        if cfg["features"]:
            graph, features = check_graph_features(graph, read_features(_require_path(cfg["features"], "features")))
        else:
            features = embed_texts(_make_embedder(args, cfg), graph.texts)
    if graph.num_edges == 0:
        log.warning("edge list is empty: every node is isolated")
    nodes_out, edges_out, feats_out = out / NODES_FILE, out / EDGES_FILE, out / FEATURES_FILE
    # write to temporaries first so re-ingesting a directory onto itself is safe
    tmp = out / ".ingest.tmp"
    tmp.mkdir(exist_ok=True)
    save_graph(graph, tmp / NODES_FILE, tmp / EDGES_FILE)
    write_features(tmp / FEATURES_FILE, features)
    for name in (NODES_FILE, EDGES_FILE, FEATURES_FILE):
        os.replace(tmp / name, out / name)
    shutil.rmtree(tmp)
    print(f"{graph.num_nodes} nodes")
    print(f"{graph.num_edges} edges")
    print(f"{graph.num_classes} classes")
    print(f"wrote {nodes_out}, {edges_out}, {feats_out}")
    return EXIT_OK


def cmd_select(args, cfg):
    graph, features = _load_dataset(cfg, need_features=cfg["method"] in ("density", "combined"))
    stopwords = sel.load_stopwords(_require_path(cfg["stopwords"], "stopwords")) if cfg["stopwords"] else None
    selector = NodeSelector(
        method=cfg["method"], budget=cfg["budget_k"], percentile=cfg["percentile"], alpha=cfg["alpha"],
        direction=cfg["direction"], damping=cfg["damping"], tol=cfg["tol"], max_iter=cfg["max_iter"],
        num_clusters=cfg["num_clusters"], random_state=cfg["kmeans_seed"], stopwords=stopwords,
    )
    try:
        selector.fit(graph, features)
    except ValueError as exc:
        if "needs a budget" in str(exc):
            raise UsageError(f"--method {cfg['method']} needs --budget") from None
        raise
    if not selector.scores_.converged:
        log.warning("PageRank did not converge in %d iterations", selector.scores_.iterations)
    out = _out_dir(cfg) / CANDIDATES_FILE
    selector.candidate_set_.save(out)
    print(f"selected {len(selector.candidate_set_)} of {graph.num_nodes} nodes ({cfg['method']}) -> {out}")
    return EXIT_OK


def cmd_augment_cache(args, cfg):
    graph, features = _load_dataset(cfg)
    candidates = _load_candidates(cfg)
    catalog = _catalog(cfg)
    llm = _make_llm(args, cfg)
    embedder = _make_embedder(args, cfg, dim=features.shape[1])
    cache = _make_cache(args, cfg)
    templates = [t.strip() for t in cfg["templates"].split(",")] if cfg["templates"] else None
    if templates:
        unknown = [t for t in templates if t not in {tpl.id for tpl in catalog}]
        if unknown:
            raise ValidationError(f"unknown template ids {unknown}")
    before = len(cache)
    stats = populate_cache(
        graph, candidates, catalog, llm, embedder, BudgetLedger(cfg["max_calls"]), cache,
        template_ids=templates, pairwise=getattr(args, "pairwise", False), features=features,
        max_inflight=cfg["max_inflight"], llm_params=_llm_params(cfg),
    )
    added = len(cache) - before
    print(f"{added} new records, {len(cache)} total in {cache.path}")
    print(json.dumps({k: stats[k] for k in sorted(stats)}, sort_keys=True))
    failures = stats["llm_failures"] + stats["embed_failures"]
    return EXIT_RUNTIME if failures else EXIT_OK


def cmd_train(args, cfg):
    graph, features = _load_dataset(cfg)
    train_cfg = _train_config(cfg)
    sampler_cfg = _sampler_config(cfg)
    enhancer = None
    if cfg["p"] > 0:
        candidates = _load_candidates(cfg)
        llm = _make_llm(args, cfg)
        embedder = _make_embedder(args, cfg, dim=features.shape[1])
        enhancer = Enhancer(
            EnhancementPolicy(cfg["p"], candidates), _catalog(cfg), llm, embedder,
            ledger=BudgetLedger(cfg["max_calls"]), cache=_make_cache(args, cfg), run_seed=cfg["seed"],
            max_inflight=cfg["max_inflight"], llm_params=_llm_params(cfg),
        )
    out = _out_dir(cfg)
    metrics_path = out / METRICS_FILE
    started = time.perf_counter()
    with open(metrics_path, "w", encoding="utf-8", newline="\n") as fh:
        def on_epoch(record):
            fh.write(format_metrics(record) + "\n")
            fh.flush()
            log.info("epoch %d loss %.4f val %s gf %.4g", record["epoch"], record["loss"], record["val_acc"],
                     record["gf"])

        result = train(graph, features, train_cfg, sampler_cfg, enhancer, on_epoch)
    ckpt = _out_path(cfg, "checkpoint", CHECKPOINT_FILE)
    meta = {
        "train": config_dict(train_cfg),
        "sampler": {"fanout": sampler_cfg.fanout, "top_k": sampler_cfg.top_k},
        "best_epoch": result.best_epoch,
        "best_val_acc": result.best_val_acc,
        "num_classes": graph.num_classes,
    }
    save_checkpoint(ckpt, result.params, meta)
    calls = result.history[-1]["llm_calls_total"] if result.history else 0
    print(f"trained {train_cfg.epochs} epochs in {time.perf_counter() - started:.1f}s; "
          f"best epoch {result.best_epoch} val acc {result.best_val_acc}")
    print(f"llm calls {calls}; checkpoint {ckpt}; metrics {metrics_path}")
    if enhancer is not None and enhancer.ledger.exhausted:
        print("LLM call budget exhausted; later enhancements came from the cache only")
    return EXIT_OK


def cmd_infer(args, cfg):
    graph, features = _load_dataset(cfg)
    params, meta = load_checkpoint(_require_path(_out_path(cfg, "checkpoint", CHECKPOINT_FILE), "checkpoint"))
    if features.shape[1] != params.dims[0]:
        raise ValidationError(f"features have dim {features.shape[1]}, checkpoint expects {params.dims[0]}")
    sampler = meta.get("sampler", {})
    sampler_cfg = SamplerConfig(fanout=sampler.get("fanout", cfg["fanout"]), top_k=sampler.get("top_k", cfg["top_k"]),
                                num_hops=params.num_layers)
    seed = meta.get("train", {}).get("seed", cfg["seed"])
    nodes = np.arange(graph.num_nodes) if cfg["split"] == "all" else graph.nodes_in(cfg["split"])
    calls0 = LLM_CALLS.value
    pred = predict(params, graph, features, sampler_cfg, seed=seed, nodes=nodes)
    calls = LLM_CALLS.value - calls0
    if calls:
        raise RuntimeError(f"LLM-free inference issued {calls} LLM calls")
    out = _out_dir(cfg) / PREDICTIONS_FILE
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        for node, label in zip(nodes.tolist(), pred.tolist()):
            fh.write(json.dumps({"id": node, "pred": label}) + "\n")
    if len(nodes):
        print(f"accuracy {accuracy(pred, graph.labels[nodes]):.4f} on {len(nodes)} {cfg['split']} nodes")
    print(f"llm calls 0; predictions {out}")
    return EXIT_OK


def augmented_features(features, cache):
    """Feature rows with each cached node's embedding swapped in.

    A node with several cached enhancements uses the one with the smallest
    ``(prompt_id, input_hash)`` so the result does not depend on cache order.
    """
    aug = np.array(features, dtype=np.float64, copy=True)
    chosen = {}
    for rec in cache.records():
        key = (rec.prompt_id, rec.input_hash)
        if rec.node_id not in chosen or key < chosen[rec.node_id][0]:
            chosen[rec.node_id] = (key, rec.embedding)
    for node, (_, emb) in chosen.items():
        if len(emb) != aug.shape[1]:
            raise ValidationError(f"cached embedding for node {node} has dim {len(emb)}, features {aug.shape[1]}")
        aug[node] = emb
    return aug, sorted(chosen)


def cmd_eval(args, cfg):
    graph, features = _load_dataset(cfg)
    cache_path = _require_path(_out_path(cfg, "cache", CACHE_FILE), "enhancement cache")
    aug, nodes = augmented_features(features, EnhancementCache(cache_path))
    raw_report = intra_class_cosine(features, graph.labels, "raw")
    aug_report = intra_class_cosine(aug, graph.labels, "augmented")
    doc = {"augmented_nodes": len(nodes), "raw": raw_report.to_dict(), "augmented": aug_report.to_dict()}
    out = _out_dir(cfg) / EVAL_FILE
    out.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"{'class':>6} {'raw':>8} {'augmented':>10}")
    for c in sorted(set(raw_report.per_class) | set(aug_report.per_class)):
        r, a = raw_report.per_class.get(c), aug_report.per_class.get(c)
        print(f"{c:>6} {r if r is None else f'{r:.4f}':>8} {a if a is None else f'{a:.4f}':>10}")
    print(f"{len(nodes)} augmented nodes; report {out}")
    return EXIT_OK


HANDLERS = {
    "ingest": cmd_ingest,
    "select": cmd_select,
    "augment-cache": cmd_augment_cache,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        return HANDLERS[args.command](args, cfg)
    except UsageError as exc:
        print(f"ellagnn {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, GraphFormatError, GraphValidationError, ValueError) as exc:
        print(f"ellagnn {args.command}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (LLMError, EmbeddingError, OSError, RuntimeError, FloatingPointError) as exc:
        print(f"ellagnn {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
