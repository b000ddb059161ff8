"""Command-line tools: ``spnrank <command> [options]``.

Every option can also come from a JSON config file (``--config`` or the
``SPNRANK_CONFIG`` environment variable) laid out as sections, for example
``{"rng_seed": 7, "structure": {"k": 10}, "train": {"alpha1": 1e-6}}``.
Command-line flags override the file. Unknown keys are rejected.

Exit status: 0 success, 1 usage or configuration error, 2 data or format
error, 3 invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io, synth
from ._random import substream, substream_seed
from .clustering import ClusteringError, DiscoveryConfig, assign_attributes, discover, lda_transform
from .mtl import MtlSolverConfig, MtlTrainingError, labels_from_margins, mtl_margins, mtl_train
from .ranking import (
    NoPairsError,
    RankTrainConfig,
    RankTrainingError,
    evaluate_ranking,
    make_pairs,
    prune,
    rank_pair,
    scores,
    train,
)
from .spn import DimensionError, InvalidSpnError, SpnFormatError, load, log_evaluate, save
from .structure import StructureBudgetError, StructureConfig, hard_em_refine, init_structure, select_top_fraction

CONFIG_ENV = "SPNRANK_CONFIG"
logger = logging.getLogger("spnrank")


class ConfigError(Exception):
    pass


class UsageError(Exception):
    pass


def _int_or_none(s):
    return None if str(s).lower() in ("none", "null", "") else int(s)


def _float_or_none(s):
    return None if str(s).lower() in ("none", "null", "") else float(s)


def _bool(s):
    if isinstance(s, bool):
        return s
    v = str(s).lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError("expected a boolean, got %r" % s)


def _int_list(s):
    if isinstance(s, list):
        return [int(v) for v in s]
    return [int(v) for v in str(s).split(",") if v.strip()]


# section -> key -> (type, default, help)
OPTIONS = {
    "": {
        "rng_seed": (int, 0, "master seed; components draw from named sub-streams"),
        "threads": (int, 1, "upper bound on BLAS threads"),
    },
    "synth": {
        "kind": (str, "xor", "generator: separable, xor, planted-mtl, blobs or patches"),
        "n_items": (int, 2000, "items (xor, separable), samples (planted-mtl) or images (patches)"),
        "n_attributes": (int, 16, "attribute bits (xor, separable) or input dimension (planted-mtl)"),
        "holdout": (float, 0.5, "fraction of items written to test.csv"),
        "gain": (int, 20, "xor: likes added per unequal attribute pair"),
        "noise": (int, 9, "xor: uniform like noise upper bound"),
        "xor_pairs": (str, "0-1,2-3", "xor: designated attribute pairs"),
        "margin": (float, 1.0, "separable: score margin"),
        "K": (int, 3, "planted-mtl: latent dimension"),
        "M": (int, 6, "planted-mtl: number of tasks"),
        "centers": (int, 3, "blobs: number of blobs"),
        "dim": (int, 16, "blobs and patches: feature dimension"),
        "patterns": (int, 8, "patches: number of visual patterns"),
        "patches_per_image": (int, 12, "patches: patches per image"),
    },
    "structure": {
        "k": (int, 10, "sum nodes per region"),
        "num_decompositions": (int, 3, "random partitions per region"),
        "max_region_size_for_leaf": (int, 2, "regions this small are not split further"),
        "max_nodes": (int, 1_000_000, "node budget"),
    },
    "em": {
        "fraction": (float, 0.1, "top fraction of items by likes used for hard EM"),
        "iterations": (int, 10, "hard-EM iterations"),
        "smoothing": (float, 0.1, "count smoothing on all but the last iteration"),
    },
    "pairs": {
        "C1": (int, 10, "P1 pairs need a like gap above this"),
        "C2": (int, 0, "P2 pairs need a like gap of at most this"),
        "max_pairs": (_int_or_none, 5000, "cap per pair set (none for all)"),
    },
    "train": {
        "alpha1": (float, 1e-6, "P1 step size"),
        "alpha2": (float, 1e-7, "P2 step size"),
        "lambda1": (float, 1.0, "P1 objective weight"),
        "lambda2": (float, 1.0, "P2 objective weight"),
        "E0": (_int_or_none, None, "edge budget for pruning (none for no budget)"),
        "prune_weight_threshold": (float, 0.01, "edges below this weight are prune candidates"),
        "iterations": (int, 20, "training passes"),
        "min_weight_floor": (float, 1e-8, "weights never drop below this"),
        "delta_n_cap_percentile": (_float_or_none, None, "cap like gaps at this percentile"),
        "eval_pairs": (int, 1000, "pair subsample used by the prune rule"),
        "batch_size": (int, 10000, "pairs per weight update"),
        "prune": (_bool, True, "prune after every training pass"),
    },
    "eval": {
        "theta": (_int_list, [10, 20], "comma-separated like-gap thresholds"),
        "buckets": (int, 10, "like-gap buckets per report"),
    },
    "discovery": {
        "K_over": (int, 2000, "K-means over-segmentation size"),
        "N_c": (int, 1000, "clusters kept after agglomeration"),
        "coverage": (float, 0.9, "support fraction kept by the representativeness filter"),
        "drop_min_size": (int, 5, "clusters smaller than this may be dropped as outliers"),
        "drop_distance_factor": (float, 3.0, "outlier distance as a multiple of the median link"),
        "outer_iterations": (int, 1, "discovery rounds"),
        "radius_percentile": (float, 95.0, "activation radius percentile of member distances"),
        "lda": (_bool, False, "refit an LDA projection between rounds"),
    },
    "mtl": {
        "K": (_int_or_none, None, "latent dimension (none for min(d, 2M))"),
        "mu": (float, 0.1, "group penalty on S"),
        "gamma": (float, 0.01, "L1 penalty on L"),
        "lam": (float, 0.01, "ridge penalty on L"),
        "tol": (float, 1e-6, "relative objective decrease that stops training"),
        "max_outer": (int, 200, "outer iterations"),
        "inner_steps": (int, 5, "proximal steps per block per outer iteration"),
    },
}

# which option sections each command reads
COMMAND_SECTIONS = {
    "data-synth": ["synth"],
    "pairs": ["pairs"],
    "spn-init": ["structure"],
    "spn-em": ["em"],
    "spn-train": ["pairs", "train"],
    "spn-prune": ["pairs", "train"],
    "spn-eval": ["eval"],
    "spn-rank": [],
    "probe-attrset": [],
    "cluster-discover": ["discovery"],
    "cluster-assign": [],
    "mtl-train": ["mtl"],
    "mtl-predict": [],
}


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spnrank", description="Attribute-based likeability ranking with sum-product networks.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="JSON config file (default: $%s)" % CONFIG_ENV)
        p.add_argument("--log", help="write a JSON log of the run here")
        for section in ["", *COMMAND_SECTIONS[name]]:
            group = p.add_argument_group(section or "global")
            for key, (typ, default, text) in OPTIONS[section].items():
                group.add_argument(_flag(key), dest="%s.%s" % (section, key), type=typ, default=argparse.SUPPRESS,
                                   metavar=key.upper(), help="%s (default: %s)" % (text, default))
        return p

    p = command("data-synth", "write a seeded synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")

    p = command("pairs", "build P1/P2 training pairs")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = command("spn-init", "create the initial region-decomposition network")
    p.add_argument("--num-variables", type=int, help="number of attributes (or take it from --data)")
    p.add_argument("--data")
    p.add_argument("--out", required=True)

    p = command("spn-em", "refine weights by hard EM on the most-liked items")
    p.add_argument("--spn", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = command("spn-train", "learn ranking weights from like pairs")
    p.add_argument("--spn", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--pairs", help="pairs CSV (built from the data when omitted)")
    p.add_argument("--out", required=True)
    p.add_argument("--history", help="per-iteration history CSV")

    p = command("spn-prune", "cut low-weight edges that do not hurt the ranking objective")
    p.add_argument("--spn", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--pairs")
    p.add_argument("--out", required=True)

    p = command("spn-eval", "pairwise ranking accuracy at one or more like-gap thresholds")
    p.add_argument("--spn", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="report JSON (stdout when omitted)")
    p.add_argument("--curve", help="CSV of accuracy against theta")

    p = command("spn-rank", "compare two items")
    p.add_argument("--spn", required=True)
    p.add_argument("--data", help="dataset to look item ids up in")
    p.add_argument("--a", help="item id or bit string")
    p.add_argument("--b", help="item id or bit string")

    p = command("probe-attrset", "score attribute sets by the network's root value")
    p.add_argument("--spn", required=True)
    p.add_argument("--set", action="append", required=True, dest="sets",
                   help="comma-separated attribute indices; repeat to rank several sets")
    p.add_argument("--semantics", choices=["max", "sum"], default="max", help="root value to report (default: max)")
    p.add_argument("--out")

    p = command("cluster-discover", "discover data-driven attributes from patch features")
    p.add_argument("--features", required=True, help="feature CSV or binary file")
    p.add_argument("--out", required=True, help="cluster model JSON")

    p = command("cluster-assign", "turn patch features into a ranking dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--semantic", help="dataset CSV whose bits are appended and whose like counts are used")
    p.add_argument("--likes", help="CSV with id,like_count (when --semantic is not given)")
    p.add_argument("--out", required=True)

    p = command("mtl-train", "train the multi-task attribute classifiers")
    p.add_argument("--train", required=True, help="directory of task_NNN.csv files")
    p.add_argument("--groups", help="groups JSON (default: one group)")
    p.add_argument("--out", required=True)
    p.add_argument("--history", help="objective per outer iteration, CSV")

    p = command("mtl-predict", "predict attribute labels")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="directory of task_NNN.csv files")
    p.add_argument("--out", help="predictions CSV")
    return parser


# --------------------------------------------------------------------------
# configuration


def resolve_config(args: argparse.Namespace, command: str) -> dict:
    """Defaults, then the config file, then flags; returns ``{section: {key: value}}``."""
    sections = ["", *COMMAND_SECTIONS[command]]
    cfg = {s: {k: v[1] for k, v in OPTIONS[s].items()} for s in sections}
    path = args.config or os.environ.get(CONFIG_ENV)
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise ConfigError("cannot read config %s: %s" % (path, exc.strerror)) from exc
        except json.JSONDecodeError as exc:
            raise ConfigError("config %s:%d: %s" % (path, exc.lineno, exc.msg)) from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        for key, value in raw.items():
            if key in OPTIONS[""]:
                cfg[""][key] = _coerce("", key, value)
            elif key in OPTIONS and isinstance(value, dict):
                for k, v in value.items():
                    if k not in OPTIONS[key]:
                        raise ConfigError("unknown config key %s.%s" % (key, k))
                    if key in cfg:
                        cfg[key][k] = _coerce(key, k, v)
            else:
                raise ConfigError("unknown config key %r" % key)
    for dest, value in vars(args).items():
        if "." in dest:
            section, key = dest.split(".", 1)
            cfg[section][key] = value
    return cfg


def _coerce(section, key, value):
    typ = OPTIONS[section][key][0]
    if value is None:
        if typ in (_int_or_none, _float_or_none):
            return None
        raise ConfigError("%s.%s may not be null" % (section, key))
    try:
        return typ(value)
    except (TypeError, ValueError, argparse.ArgumentTypeError) as exc:
        raise ConfigError("bad value for %s.%s: %r" % (section, key, value)) from exc


def _configs(build):
    try:
        return build()
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def structure_config(cfg) -> StructureConfig:
    s = cfg["structure"]
    return _configs(lambda: StructureConfig(
        k=s["k"], num_decompositions_per_region=s["num_decompositions"],
        max_region_size_for_leaf=s["max_region_size_for_leaf"],
        rng_seed=substream_seed(cfg[""]["rng_seed"], "structure"), max_nodes=s["max_nodes"],
    ))


def train_config(cfg) -> RankTrainConfig:
    t = dict(cfg["train"])
    return _configs(lambda: RankTrainConfig(**t, seed=substream_seed(cfg[""]["rng_seed"], "train")))


def _pairs_for(cfg, data: io.Dataset, path):
    p = cfg["pairs"]
    if path:
        return io.read_pairs(path, data, p["C1"], p["C2"])
    return make_pairs(data.like_counts, p["C1"], p["C2"], p["max_pairs"], seed=substream_seed(cfg[""]["rng_seed"], "pairs"))


def _write_out(path, obj) -> None:
    if path:
        io.write_json(path, obj)


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")


# --------------------------------------------------------------------------
# commands


def cmd_data_synth(args, cfg):
    s = cfg["synth"]
    seed = cfg[""]["rng_seed"]
    out = Path(args.out)
    kind = s["kind"]
    written = []
    if kind in ("xor", "separable"):
        if kind == "xor":
            try:
                pairs = [tuple(int(v) for v in p.split("-")) for p in s["xor_pairs"].split(",")]
            except ValueError:
                raise ConfigError("xor_pairs must look like 0-1,2-3") from None
            if any(len(p) != 2 or not all(0 <= v < s["n_attributes"] for v in p) for p in pairs):
                raise ConfigError("xor_pairs must name two attributes below n_attributes")
            d = synth.make_xor_likes(s["n_items"], s["n_attributes"], pairs, s["gain"], s["noise"], seed=seed)
        else:
            d = synth.make_separable_likes(s["n_items"], s["n_attributes"], s["margin"], seed=seed)
        io.write_dataset(out / "dataset.csv", d.ids, d.like_counts, d.X)
        written.append("dataset.csv")
        if not 0 <= s["holdout"] < 1:
            raise ConfigError("holdout must be in [0, 1)")
        if s["holdout"] > 0:
            perm = substream(seed, "split").permutation(len(d.X))
            n_train = len(d.X) - int(round(s["holdout"] * len(d.X)))
            tr, te = np.sort(perm[:n_train]), np.sort(perm[n_train:])
            for name, idx in (("train.csv", tr), ("test.csv", te)):
                io.write_dataset(out / name, [d.ids[i] for i in idx], d.like_counts[idx], d.X[idx])
                written.append(name)
        io.write_json(out / "truth.json", d.truth)
    elif kind == "planted-mtl":
        p = synth.make_planted_mtl(2 * s["n_items"], s["n_attributes"], s["K"], s["M"], seed=seed)
        half = s["n_items"]
        io.write_task_dir(out / "train", p.X[:half], p.Y[:half])
        io.write_task_dir(out / "test", p.X[half:], p.Y[half:])
        io.write_groups(out / "groups.json", p.groups)
        io.write_json(out / "truth.json", {"kind": "planted-mtl", "L": p.L.tolist(), "S": p.S.tolist(), "groups": p.groups})
        written += ["train/", "test/", "groups.json"]
    elif kind == "blobs":
        X, labels = synth.make_blobs(s["n_items"] // s["centers"], s["centers"], s["dim"], seed=seed)
        io.write_features_csv(out / "features.csv", np.arange(len(X)), np.zeros(len(X), int), X)
        io.write_json(out / "truth.json", {"kind": "blobs", "labels": labels.tolist()})
        written.append("features.csv")
    elif kind == "patches":
        ps = synth.make_patch_patterns(s["n_items"], s["patches_per_image"], s["patterns"], s["dim"], seed=seed)
        io.write_features_csv(out / "features.csv", ps.image_ids, ps.patch_index, ps.features)
        io.write_json(out / "truth.json", {"kind": "patches", "pattern": ps.pattern.tolist()})
        written.append("features.csv")
    else:
        raise ConfigError("unknown synth kind %r" % kind)
    return {"command": "data-synth", "kind": kind, "files": written + ["truth.json"]}


def cmd_pairs(args, cfg):
    data = io.read_dataset(args.data)
    pairs = _pairs_for(cfg, data, None)
    io.write_pairs(args.out, pairs, data.ids)
    return {"command": "pairs", "p1": len(pairs.p1), "p2": len(pairs.p2)}


def cmd_spn_init(args, cfg):
    if args.num_variables is None and args.data is None:
        raise UsageError("give --num-variables or --data")
    d = args.num_variables if args.num_variables is not None else io.read_dataset(args.data).X.shape[1]
    if d < 2:
        raise ConfigError("need at least two variables")
    graph = init_structure(d, structure_config(cfg))
    save(graph, args.out)
    return {"command": "spn-init", "nodes": graph.node_count, "edges": graph.edge_count, "num_variables": d}


def cmd_spn_em(args, cfg):
    graph = load(args.spn)
    data = io.read_dataset(args.data)
    e = cfg["em"]
    top = select_top_fraction(data.like_counts, e["fraction"])
    history: list = []
    graph = hard_em_refine(graph, data.X[top], e["iterations"], e["smoothing"], history=history)
    save(graph, args.out)
    return {"command": "spn-em", "examples": len(top), "nodes": graph.node_count, "edges": graph.edge_count,
            "log_likelihood": history}


def cmd_spn_train(args, cfg):
    graph = load(args.spn)
    data = io.read_dataset(args.data)
    pairs = _pairs_for(cfg, data, args.pairs)
    graph, history = train(graph, data.X, data.like_counts, pairs, train_config(cfg))
    save(graph, args.out)
    if args.history:
        io.write_history(args.history, history)
    return {"command": "spn-train", "p1": len(pairs.p1), "p2": len(pairs.p2), "edges": graph.edge_count,
            "history": [r.__dict__ for r in history]}


def cmd_spn_prune(args, cfg):
    graph = load(args.spn)
    data = io.read_dataset(args.data)
    pairs = _pairs_for(cfg, data, args.pairs)
    cuts: list = []
    before = graph.edge_count
    graph = prune(graph, data.X, data.like_counts, pairs, train_config(cfg), log=cuts)
    report = graph.report()
    if not report.ok:
        raise InvalidSpnError(report)
    save(graph, args.out)
    return {"command": "spn-prune", "edges_before": before, "edges_after": graph.edge_count, "cuts": cuts}


def cmd_spn_eval(args, cfg):
    graph = load(args.spn)
    data = io.read_dataset(args.data)
    s = scores(graph, data.X)
    reports = [evaluate_ranking(s, data.like_counts, t, cfg["eval"]["buckets"]).as_dict() for t in cfg["eval"]["theta"]]
    out = {"command": "spn-eval", "reports": reports}
    if args.out:
        io.write_json(args.out, reports)
    else:
        _emit(reports)
    if args.curve:
        with io._open_out(args.curve) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["theta", "pair_count", "correct", "ties", "accuracy"])
            for r in reports:
                w.writerow([r["theta"], r["pair_count"], r["correct"], r["ties"], repr(r["accuracy"])])
    return out


def _item(value: str, data: io.Dataset | None, d: int) -> np.ndarray:
    if data is not None and value in data.index():
        return data.X[data.index()[value]]
    if value and set(value) <= {"0", "1"}:
        if len(value) != d:
            raise DimensionError("bit string has length %d, network has %d variables" % (len(value), d))
        return np.frombuffer(value.encode(), dtype=np.uint8) - ord("0")
    raise UsageError("%r is neither a known item id nor a bit string" % value)


def cmd_spn_rank(args, cfg):
    if not args.a or not args.b:
        raise UsageError("give --a and --b")
    graph = load(args.spn)
    data = io.read_dataset(args.data) if args.data else None
    a, b = _item(args.a, data, graph.num_variables), _item(args.b, data, graph.num_variables)
    order = rank_pair(graph, a, b)
    s = scores(graph, np.vstack([a, b]))
    result = {"order": order.name, "score_a": repr(float(s[0])), "score_b": repr(float(s[1]))}
    _emit(result)
    return dict(command="spn-rank", **result)


def cmd_probe_attrset(args, cfg):
    graph = load(args.spn)
    d = graph.num_variables
    vectors, sets = [], []
    for raw in args.sets:
        try:
            idx = sorted({int(v) for v in raw.split(",") if v.strip()})
        except ValueError:
            raise UsageError("attribute set %r must be comma-separated integers" % raw) from None
        bad = [i for i in idx if not 0 <= i < d]
        if bad:
            raise DimensionError("attribute index %d out of range for %d variables" % (bad[0], d))
        v = np.zeros(d, dtype=np.uint8)
        v[idx] = 1
        vectors.append(v)
        sets.append(idx)
    X = np.vstack(vectors)
    values = scores(graph, X) if args.semantics == "max" else np.atleast_1d(log_evaluate(graph, X))
    # rank 1 is the largest root value; tied sets share the better rank
    ranks = [1 + int(np.sum(values > v)) for v in values]
    rows = [{"set": s, "log_value": repr(float(v)), "rank": r} for s, v, r in zip(sets, values, ranks)]
    if args.out:
        io.write_json(args.out, rows)
    else:
        _emit(rows)
    return {"command": "probe-attrset", "results": rows}


def cmd_cluster_discover(args, cfg):
    feats = io.read_features(args.features)
    dcfg = dict(cfg["discovery"])
    use_lda = dcfg.pop("lda")
    config = _configs(lambda: DiscoveryConfig(**dcfg, rng_seed=substream_seed(cfg[""]["rng_seed"], "discovery")))
    model, log = discover(feats.features, feats.image_ids, config, lda_transform() if use_lda else None)
    counts = np.bincount(np.unique(feats.image_ids, return_inverse=True)[1])
    p = int(counts[0]) if np.all(counts == counts[0]) else None
    io.save_cluster_model(args.out, model, p)
    return {"command": "cluster-discover", "n_clusters": model.n_clusters, "rounds": log}


def cmd_cluster_assign(args, cfg):
    model, p = io.load_cluster_model(args.model)
    feats = io.read_features(args.features)
    try:
        images, blocks = feats.by_image(p)
    except ValueError as exc:
        raise io.DataFormatError(args.features, str(exc)) from exc
    bits = np.vstack([assign_attributes(model, block) for block in blocks])
    ids = [str(i) for i in images]
    likes = np.zeros(len(ids), dtype=np.int64)
    if args.semantic:
        sem = io.read_dataset(args.semantic)
        index = sem.index()
        missing = [i for i in ids if i not in index]
        if missing:
            raise io.DataFormatError(args.semantic, "no row for image id %s" % missing[0])
        rows = [index[i] for i in ids]
        bits = np.hstack([bits, sem.X[rows]])
        likes = sem.like_counts[rows]
    elif args.likes:
        table = {}
        rows = io._read_rows(args.likes, ["id", "like_count"])
        next(rows)
        for line, row in rows:
            try:
                table[row[0]] = int(row[1])
            except (ValueError, IndexError):
                raise io.DataFormatError(args.likes, "malformed row", line) from None
        missing = [i for i in ids if i not in table]
        if missing:
            raise io.DataFormatError(args.likes, "no like count for image id %s" % missing[0])
        likes = np.asarray([table[i] for i in ids], dtype=np.int64)
    io.write_dataset(args.out, ids, likes, bits)
    return {"command": "cluster-assign", "images": len(ids), "width": int(bits.shape[1])}


def cmd_mtl_train(args, cfg):
    data = io.load_train_set(args.train)
    groups = io.read_groups(args.groups, data.M) if args.groups else None
    m = cfg["mtl"]
    solver = _configs(lambda: MtlSolverConfig(tol=m["tol"], max_outer=m["max_outer"], inner_steps=m["inner_steps"],
                                              seed=substream_seed(cfg[""]["rng_seed"], "mtl")))
    result = mtl_train(data, groups, m["K"], m["mu"], m["gamma"], m["lam"], solver)
    io.save_mtl_model(args.out, result.model)
    if args.history:
        with io._open_out(args.history) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iteration", "objective"])
            for i, v in enumerate(result.history):
                w.writerow([i, repr(v)])
    acc = _mtl_accuracy(result.model, io.read_task_dir(args.train))
    return {"command": "mtl-train", "iterations": len(result.history) - 1, "converged": result.converged,
            "objective": result.history[-1], "train_accuracy": acc}


def _mtl_accuracy(model, tasks):
    if len(tasks) != model.M:
        raise DimensionError("data has %d tasks, model has %d" % (len(tasks), model.M))
    correct = total = 0
    for m, (X, y) in enumerate(tasks):
        pred = labels_from_margins(mtl_margins(model, X)[:, m])
        correct += int(np.sum(pred == y))
        total += len(y)
    return correct / total


def cmd_mtl_predict(args, cfg):
    model = io.load_mtl_model(args.model)
    tasks = io.read_task_dir(args.data)
    acc = _mtl_accuracy(model, tasks)
    if args.out:
        with io._open_out(args.out) as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["task", "row", "label", "margin", "tie"])
            for m, (X, _) in enumerate(tasks):
                margins = mtl_margins(model, X)[:, m]
                for i, (lab, mg) in enumerate(zip(labels_from_margins(margins), margins)):
                    w.writerow([m, i, int(lab), repr(float(mg)), int(mg == 0)])
    result = {"accuracy": acc}
    _emit(result)
    return dict(command="mtl-predict", **result)


COMMANDS = {
    "data-synth": cmd_data_synth,
    "pairs": cmd_pairs,
    "spn-init": cmd_spn_init,
    "spn-em": cmd_spn_em,
    "spn-train": cmd_spn_train,
    "spn-prune": cmd_spn_prune,
    "spn-eval": cmd_spn_eval,
    "spn-rank": cmd_spn_rank,
    "probe-attrset": cmd_probe_attrset,
    "cluster-discover": cmd_cluster_discover,
    "cluster-assign": cmd_cluster_assign,
    "mtl-train": cmd_mtl_train,
    "mtl-predict": cmd_mtl_predict,
}

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INVARIANT = 0, 1, 2, 3


def _run(argv) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("no command given; see --help")
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s", stream=sys.stderr)
    cfg = resolve_config(args, args.command)
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=max(1, cfg[""]["threads"])):
        result = COMMANDS[args.command](args, cfg)
    if args.log:
        io.write_json(args.log, {"config": {k or "global": v for k, v in cfg.items()}, "result": result})
    return EXIT_OK


def main(argv=None) -> int:
    try:
        return _run(argv)
    except (UsageError, ConfigError, StructureBudgetError) as exc:
        print("spnrank: error: %s" % exc, file=sys.stderr)
        return EXIT_USAGE
    except (InvalidSpnError, RankTrainingError, MtlTrainingError) as exc:
        print("spnrank: invariant violation: %s" % exc, file=sys.stderr)
        return EXIT_INVARIANT
    except (io.DataFormatError, SpnFormatError, DimensionError, NoPairsError, ClusteringError, OSError, ValueError) as exc:
        print("spnrank: data error: %s" % exc, file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
