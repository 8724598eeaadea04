"""Command line entry point: ``gane <command> [flags]``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import baseline, evaluation as ev, graph, model, synth
from .trainer import TrainConfig, TrainingDiverged, train

log = logging.getLogger("gane")

GANE_MODELS = ("gane", "gane-o1", "gane-o2")
LINE_MODELS = ("line-o1", "line-o2", "line-o1o2")
MODELS = GANE_MODELS + LINE_MODELS
OUTPUT_ENV = "GANE_OUTPUT_DIR"
DEFAULT_FRACTIONS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _float_list(text):
    try:
        return [float(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def read_config_file(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment. Values are typed by TrainConfig."""
    fields = {f.name: f for f in TrainConfig.__dataclass_fields__.values()}
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in fields:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        default = getattr(TrainConfig(), key)
        try:
            if isinstance(default, bool):
                if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError
                out[key] = value.lower() in ("true", "1", "yes")
            elif isinstance(default, int):
                out[key] = int(value)
            elif key == "variant":
                out[key] = value
            else:
                out[key] = float(value)
        except ValueError:
            raise UsageError(f"{path}:{lineno}: bad value {value!r} for {key}") from None
    return out


# flag name -> TrainConfig field
_CFG_FLAGS = {"dim": "dim", "seed": "seed", "iters": "max_iters", "lr": "lr", "gen_lr": "gen_lr",
              "clip": "clip", "batch": "batch", "fanout": "fanout", "disc_steps": "disc_steps",
              "neg_k": "neg_k", "line_lr": "line_lr", "eval_every": "eval_every",
              "convergence_window": "convergence_window", "convergence_tol": "convergence_tol"}


def _add_train_flags(p):
    p.add_argument("--config", help="key = value file of training hyperparameters")
    p.add_argument("--dim", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--iters", type=int, help="maximum training iterations")
    p.add_argument("--lr", type=float)
    p.add_argument("--gen-lr", type=float)
    p.add_argument("--clip", type=float)
    p.add_argument("--batch", type=int)
    p.add_argument("--fanout", type=int)
    p.add_argument("--disc-steps", type=int)
    p.add_argument("--neg-k", type=int)
    p.add_argument("--line-lr", type=float)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--convergence-window", type=int)
    p.add_argument("--convergence-tol", type=float)
    p.add_argument("--uniform-edges", action="store_true", help="sample training edges uniformly")


def build_config(args, model_name: str) -> TrainConfig:
    values = read_config_file(args.config) if args.config else {}
    if "variant" in values and model_name in GANE_MODELS and values["variant"] != model_name:
        raise UsageError(f"config variant {values['variant']!r} contradicts --model {model_name}")
    values.pop("variant", None)
    for flag, key in _CFG_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[key] = v
    if getattr(args, "uniform_edges", False):
        values["weighted_sampling"] = False
    if model_name in GANE_MODELS:
        values["variant"] = model_name
    try:
        return TrainConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gane", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="learn embeddings from an edge list or a saved partition")
    t.add_argument("--model", choices=MODELS, default="gane")
    src = t.add_mutually_exclusive_group(required=True)
    src.add_argument("--edges", help="tab-separated edge list")
    src.add_argument("--partition", help="directory written by 'split'; trains on its embedding part")
    t.add_argument("--labels")
    t.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./gane-out)")
    t.add_argument("--export", choices=("phi", "theta"), default="phi",
                   help="which GANE parameter matrix to export")
    t.add_argument("--binary", action="store_true", help="binary embedding export")
    _add_train_flags(t)

    e = sub.add_parser("eval", help="classification, ranking and clustering report")
    e.add_argument("--embeddings", required=True)
    e.add_argument("--partition", required=True)
    e.add_argument("--fractions", type=_float_list, default=list(DEFAULT_FRACTIONS))
    e.add_argument("--clusters", type=int, default=3)
    e.add_argument("--unfiltered", action="store_true")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")

    r = sub.add_parser("rank", help="link-prediction ranking metrics")
    r.add_argument("--embeddings", required=True)
    r.add_argument("--partition", required=True)
    r.add_argument("--k", type=_int_list, default=list(ev.RANK_KS))
    r.add_argument("--unfiltered", action="store_true")
    r.add_argument("--out")

    c = sub.add_parser("cluster", help="k-means clustering accuracy")
    c.add_argument("--embeddings", required=True)
    c.add_argument("--labels", required=True)
    c.add_argument("--k", type=int, default=3)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out")

    pc = sub.add_parser("pca", help="PCA coordinates as CSV")
    pc.add_argument("--embeddings", required=True)
    pc.add_argument("--n", type=int, default=3)
    pc.add_argument("--labels")
    pc.add_argument("--out", required=True)

    s = sub.add_parser("split", help="write an embedding/classification/ranking partition")
    s.add_argument("--edges", required=True)
    s.add_argument("--labels")
    s.add_argument("--fraction", type=float, default=0.9)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    y = sub.add_parser("synth", help="generate a synthetic benchmark graph")
    y.add_argument("--kind", choices=("sbm", "ba"), required=True)
    y.add_argument("--sizes", type=_int_list, default=[100, 100, 100], help="SBM block sizes")
    y.add_argument("--p-in", type=float, default=0.1)
    y.add_argument("--p-out", type=float, default=0.005)
    y.add_argument("--n", type=int, default=1000, help="BA vertex count")
    y.add_argument("--m", type=int, default=3, help="BA edges per new vertex")
    y.add_argument("--seed", type=int, default=0)
    y.add_argument("--out", required=True, help="edge list path; SBM labels go to <out>.labels")

    cm = sub.add_parser("compare", help="train several models on one partition and merge reports")
    cm.add_argument("--partition", required=True)
    cm.add_argument("--models", type=lambda s: s.split(","), default=["gane", "line-o1"])
    cm.add_argument("--fractions", type=_float_list, default=[0.5])
    cm.add_argument("--clusters", type=int, default=3)
    cm.add_argument("--out")
    _add_train_flags(cm)
    return p


def _output_dir(arg) -> Path:
    return Path(arg or os.environ.get(OUTPUT_ENV) or "gane-out")


@contextlib.contextmanager
def _staged_dir(target: Path):
    """Build a directory next to ``target`` and move it into place on success."""
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if target.exists():
        shutil.rmtree(target)
    os.replace(tmp, target)


@contextlib.contextmanager
def _staged_file(target: Path):
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{target.name}.", dir=target.parent)
    os.close(fd)
    try:
        yield Path(tmp)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    os.replace(tmp, target)


def _write_json(obj, out):
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    if out is None:
        sys.stdout.write(text)
        return
    with _staged_file(Path(out)) as tmp:
        tmp.write_text(text, encoding="utf-8")


def _require(path, what):
    if path is not None and not Path(path).exists():
        raise FileNotFoundError(f"{what} not found: {path}")


def _config_hash(model_name, cfg: TrainConfig | None, extra=None) -> str:
    blob = {"model": model_name, "config": cfg.to_dict() if cfg else None, "extra": extra}
    return hashlib.sha256(json.dumps(blob, sort_keys=True).encode()).hexdigest()[:16]


def train_model(net: graph.Network, model_name: str, cfg: TrainConfig, export: str = "phi"):
    """Returns ``(embeddings, train_result_or_None)``."""
    if model_name in GANE_MODELS:
        res = train(net, cfg)
        return (res.phi if export == "phi" else res.theta), res
    return baseline.line_train(net, cfg, model_name), None


def _embeddings_for(path, names) -> np.ndarray:
    emb, emb_names = model.load_embeddings(path)
    index = {nm: k for k, nm in enumerate(emb_names)}
    missing = [nm for nm in names if nm not in index]
    if missing:
        raise ValueError(f"embeddings lack vertex {missing[0]!r}")
    return emb[[index[nm] for nm in names]]


def _evaluate(emb, part: ev.DataPartition, fractions, clusters, seed, filtered=True) -> dict:
    rng = np.random.default_rng(seed)
    train_pairs = np.column_stack([part.embedding_train.src, part.embedding_train.dst])
    out = {"classification_accuracy": {f"{f:g}": ev.classify_links(emb, part, f, rng) for f in fractions}}
    out["ranking"] = ev.rank_links(emb, part.ranking_test, ev.RANK_KS, train_pairs, filtered=filtered) \
        if len(part.ranking_test) else {}
    if part.network.labels is not None:
        out["clustering"] = ev.cluster_accuracy(emb, part.network.labels, clusters, rng)
    else:
        out["clustering"] = []
    return out


def cmd_train(args) -> int:
    if args.model in LINE_MODELS and args.export == "theta":
        raise UsageError("--export theta only applies to GANE models")
    cfg = build_config(args, args.model)
    _require(args.edges, "edge list")
    _require(args.labels, "label file")
    if args.partition:
        net = ev.load_partition(args.partition).embedding_train
    else:
        net = graph.load_edge_list(args.edges, args.labels)
    out = _output_dir(args.out)
    with _staged_dir(out) as tmp:
        emb, res = train_model(net, args.model, cfg, args.export)
        ext = "bin" if args.binary else "txt"
        model.save_embeddings(tmp / f"embeddings.{ext}", emb, net.names, binary=args.binary)
        graph.write_id_map(net, tmp / "vertices.tsv")
        meta = {"model": args.model, "config": cfg.to_dict(), "config_hash": _config_hash(args.model, cfg),
                "export": args.export if res is not None else "vertex"}
        if res is not None:
            res.trace.write_csv(tmp / "trace.csv")
            ck = tmp / "checkpoint"
            ck.mkdir()
            model.save_embeddings(ck / "phi.bin", res.phi, net.names, binary=True)
            model.save_embeddings(ck / "theta.bin", res.theta, net.names, binary=True)
            res.phi_state.save(ck / "phi_state.npz")
            res.theta_state.save(ck / "theta_state.npz")
            meta["iterations"] = len(res.trace)
            meta["converged"] = res.converged
        (tmp / "run.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    log.info("wrote %s", out)
    return 0


def cmd_eval(args) -> int:
    _require(args.embeddings, "embeddings")
    part = ev.load_partition(args.partition)
    emb = _embeddings_for(args.embeddings, part.network.names)
    res = _evaluate(emb, part, args.fractions, args.clusters, args.seed, not args.unfiltered)
    report = ev.EvalReport(model=Path(args.embeddings).stem, seed=args.seed,
                           config_hash=_config_hash("eval", None, {"fractions": args.fractions,
                                                                   "seed": args.seed,
                                                                   "filtered": not args.unfiltered}),
                           classification_accuracy={float(k): v for k, v in res["classification_accuracy"].items()},
                           ranking=res["ranking"], clustering=res["clustering"],
                           metadata={"partition": part.digest()})
    _write_json(report.to_dict(), args.out)
    return 0


def cmd_rank(args) -> int:
    _require(args.embeddings, "embeddings")
    part = ev.load_partition(args.partition)
    emb = _embeddings_for(args.embeddings, part.network.names)
    train_pairs = np.column_stack([part.embedding_train.src, part.embedding_train.dst])
    metrics = ev.rank_links(emb, part.ranking_test, args.k, train_pairs, filtered=not args.unfiltered)
    _write_json({"ranking": metrics, "partition": part.digest(),
                 "config_hash": _config_hash("rank", None, {"k": args.k, "filtered": not args.unfiltered})},
                args.out)
    return 0


def cmd_cluster(args) -> int:
    _require(args.embeddings, "embeddings")
    labels = graph.load_labels(args.labels)
    emb, names = model.load_embeddings(args.embeddings)
    missing = [nm for nm in names if nm not in labels]
    if missing:
        raise ValueError(f"no label for vertex {missing[0]!r}")
    accs = ev.cluster_accuracy(emb, [labels[nm] for nm in names], args.k, np.random.default_rng(args.seed))
    _write_json({"clustering": accs, "mean": float(np.mean(accs)),
                 "config_hash": _config_hash("cluster", None, {"k": args.k, "seed": args.seed})}, args.out)
    return 0


def cmd_pca(args) -> int:
    _require(args.embeddings, "embeddings")
    emb, names = model.load_embeddings(args.embeddings)
    labels = None
    if args.labels:
        lab = graph.load_labels(args.labels)
        labels = [lab.get(nm, "") for nm in names]
    res = ev.pca_project(emb, args.n)
    with _staged_file(Path(args.out)) as tmp:
        ev.write_pca_csv(tmp, res.coords, names, labels)
    return 0


def cmd_split(args) -> int:
    _require(args.edges, "edge list")
    _require(args.labels, "label file")
    net = graph.load_edge_list(args.edges, args.labels)
    with _staged_dir(Path(args.out)) as tmp:
        part = ev.make_partition(net, np.random.default_rng(args.seed), args.fraction)
        ev.save_partition(part, tmp)
    return 0


def cmd_synth(args) -> int:
    rng = np.random.default_rng(args.seed)
    out = Path(args.out)
    if args.kind == "sbm":
        net = synth.sbm(args.sizes, args.p_in, args.p_out, rng)
        with _staged_file(out) as tmp, _staged_file(out.with_name(out.name + ".labels")) as tmp_lab:
            graph.dump_edge_list(net, tmp, labels_path=tmp_lab)
    else:
        net = synth.barabasi_albert(args.n, args.m, rng)
        with _staged_file(out) as tmp:
            graph.dump_edge_list(net, tmp)
    return 0


def cmd_compare(args) -> int:
    unknown = [m for m in args.models if m not in MODELS]
    if unknown:
        raise UsageError(f"unknown model {unknown[0]!r}; choose from {', '.join(MODELS)}")
    part = ev.load_partition(args.partition)
    blocks = {}
    for name in args.models:
        cfg = build_config(args, name)
        emb, _ = train_model(part.embedding_train, name, cfg)
        res = _evaluate(emb, part, args.fractions, args.clusters, cfg.seed)
        res["config_hash"] = _config_hash(name, cfg)
        blocks[name] = res
    _write_json({"partition": part.digest(), "models": blocks}, args.out)
    return 0


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "rank": cmd_rank, "cluster": cmd_cluster,
            "pca": cmd_pca, "split": cmd_split, "synth": cmd_synth, "compare": cmd_compare}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"gane {args.command}: {exc}", file=sys.stderr)
        return 1
    except TrainingDiverged as exc:
        print(f"gane {args.command}: {exc} after {len(exc.trace)} iterations", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"gane {args.command}: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
