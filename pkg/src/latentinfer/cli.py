"""Command-line entry point: ``latentinfer {generate,infer,eval,pipeline}``.

Configuration is a flat ``key = value`` file (``#`` starts a comment). Command-line
flags override file values and the effective configuration is written to the
output directory as ``config.txt``.
"""
from __future__ import annotations

import argparse
import ast
import json
import math
import operator
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import embed, evaluate, graphgen, isomap, model, rng, spectral
from .errors import LatentInferError, NumericalError, ValidationError

EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 2, 3, 4

DEFAULTS: dict[str, str] = {
    "model": "simplified",
    "distribution": "uniform",
    "c0": "1",
    "c1": "1",
    "delta": "2",
    "n": "2000",
    "m": "n*ceil(log^3)",
    "rho": "ceil(log^2)",
    "seed": "0",
    "t": "auto",
    "threshold_constant": "auto",
    "max_rank": "20",
    "theta": "-inf",
    "gap_exponent": "2/43",
    "gap_constant": "1",
    "degree_normalize": "false",
    "mode": "calibrated",
    "f": "auto",
    "ell": "10",
    "percentile": "10",
    "cutoff_fraction": "0.2",
    "min_cluster": "5",
    "grid_eps": "0.01",
    "follower_method": "mle",
    "alpha": "0.05",
    "beta": "0.1",
    "gamma": "0.1",
    "in_sample_fraction": "0.5",
    "scatter_max": "20000",
}

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_FUNCS = {"ceil": math.ceil, "floor": math.floor, "sqrt": math.sqrt, "log": math.log, "exp": math.exp}


def eval_expression(text: str, env: dict[str, float]) -> float:
    """Arithmetic over numbers, names in ``env`` and a few math functions.

    ``^`` means power, and a bare ``log`` is the natural log of ``n``,
    so ``1.5*log^2`` and ``ceil(log^2)`` are valid densities.
    """
    try:
        tree = ast.parse(text.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise ValidationError(f"cannot parse expression {text!r}") from exc

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return node.value
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            return -ev(node.operand) if isinstance(node.op, ast.USub) else ev(node.operand)
        if isinstance(node, ast.Name):
            if node.id == "log" and "n" in env:
                return math.log(env["n"])
            if node.id in env:
                return env[node.id]
            if node.id == "inf":
                return math.inf
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS
                and len(node.args) == 1 and not node.keywords):
            return _FUNCS[node.func.id](ev(node.args[0]))
        raise ValidationError(f"unsupported element in expression {text!r}")

    try:
        return float(ev(tree))
    except (ArithmeticError, ValueError) as exc:
        raise ValidationError(f"cannot evaluate expression {text!r}: {exc}") from exc


def parse_config(path) -> tuple[dict[str, str], dict[str, int]]:
    """Read a key=value file; returns values and the line each key came from."""
    values, lines = {}, {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in DEFAULTS:
                raise ValidationError(f"{path}:{lineno}: unknown key {key!r}")
            if key in values:
                raise ValidationError(f"{path}:{lineno}: duplicate key {key!r}")
            values[key] = val
            lines[key] = lineno
    return values, lines


class Config:
    """Typed view over the raw string configuration."""

    def __init__(self, raw: dict[str, str], origin: dict[str, str] | None = None):
        self.raw = dict(DEFAULTS)
        self.raw.update(raw)
        self.origin = origin or {}

    def _where(self, key):
        return self.origin.get(key, f"config key {key!r}")

    def _fail(self, key, msg):
        raise ValidationError(f"{self._where(key)}: {msg}")

    def str(self, key) -> str:
        return self.raw[key]

    def num(self, key, env=None) -> float:
        env = env if env is not None else {}
        try:
            return eval_expression(self.raw[key], env)
        except ValidationError as exc:
            self._fail(key, str(exc))

    def int(self, key, env=None, minimum=None) -> int:
        val = self.num(key, env)
        if val != int(val):
            self._fail(key, f"expected an integer, got {self.raw[key]!r}")
        val = int(val)
        if minimum is not None and val < minimum:
            self._fail(key, f"must be at least {minimum}, got {val}")
        return val

    def opt(self, key, env=None) -> float | None:
        return None if self.raw[key] == "auto" else self.num(key, env)

    def bool(self, key) -> bool:
        v = self.raw[key].lower()
        if v in ("true", "1", "yes"):
            return True
        if v in ("false", "0", "no"):
            return False
        self._fail(key, f"expected true/false, got {self.raw[key]!r}")

    def choice(self, key, options) -> str:
        v = self.raw[key]
        if v not in options:
            self._fail(key, f"must be one of {sorted(options)}, got {v!r}")
        return v

    # -- derived objects ----------------------------------------------------
    def kernel(self) -> model.Kernel:
        try:
            return model.Kernel(self.num("c0"), self.num("c1"), self.num("delta"))
        except ValidationError as exc:
            self._fail("c0", str(exc))

    def distribution(self) -> model.LatentDistribution:
        try:
            return model.LatentDistribution.parse(self.raw["distribution"])
        except ValidationError as exc:
            self._fail("distribution", str(exc))

    def n(self) -> int:
        return self.int("n", minimum=1)

    def env(self) -> dict[str, float]:
        return {"n": float(self.n())}

    def seed(self) -> int:
        try:
            return rng.check_seed(self.int("seed", minimum=0))
        except ValidationError as exc:
            self._fail("seed", str(exc))

    def isomap_params(self) -> isomap.IsomapParams:
        try:
            return isomap.IsomapParams(
                f=self.opt("f", self.env()), ell=self.num("ell"),
                mode=self.choice("mode", {"theory", "calibrated"}), percentile=self.num("percentile"),
                cutoff_fraction=self.num("cutoff_fraction"), min_cluster=self.int("min_cluster", minimum=1))
        except ValidationError as exc:
            raise ValidationError(f"isomap parameters: {exc}") from exc

    def threshold_params(self) -> spectral.ThresholdParams:
        const = self.opt("threshold_constant")
        if const is None:
            const = spectral.CALIBRATED_CONSTANT if self.raw["mode"] == "calibrated" else 10.0
        return spectral.ThresholdParams(t=self.opt("t", self.env()), constant=const,
                                        max_rank=self.int("max_rank", minimum=1))

    def dump(self) -> str:
        return "".join(f"{k} = {self.raw[k]}\n" for k in sorted(self.raw))


def load_config(args) -> Config:
    raw, origin = {}, {}
    if getattr(args, "config", None):
        raw, lines = parse_config(args.config)
        origin = {k: f"{args.config}:{ln}" for k, ln in lines.items()}
    overrides = {"seed": args.seed, "mode": args.mode, "theta": args.theta, "ell": args.ell,
                 "gap_exponent": args.gap_exponent}
    for key, val in overrides.items():
        if val is not None:
            raw[key] = str(val)
            origin[key] = f"--{key.replace('_', '-')}"
    if args.degree_normalize:
        raw["degree_normalize"] = "true"
        origin["degree_normalize"] = "--degree-normalize"
    cfg = Config(raw, origin)
    cfg.n()
    cfg.kernel()
    cfg.choice("model", {"simplified", "bipartite"})
    return cfg


# -- json helpers -------------------------------------------------------------

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n")


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except LatentInferError as exc:
        raise type(exc)(f"stage {name}: {exc}") from exc


# -- commands -----------------------------------------------------------------

def cmd_generate(cfg: Config, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    n, seed, kernel, dist = cfg.n(), cfg.seed(), cfg.kernel(), cfg.distribution()
    sample = model.sample_latents(dist, n, seed)
    model.write_latents_csv(out / "positions.csv", sample)
    if cfg.str("model") == "simplified":
        rho = cfg.num("rho", cfg.env())
        graph = graphgen.generate_simplified(sample, kernel, rho, seed)
        avg = 2.0 * graph.num_edges / n
        summary = {"model": "simplified", "n": n, "rho": rho, "edges": graph.num_edges, "avg_degree": avg}
    else:
        m = cfg.int("m", cfg.env(), minimum=1)
        followers = model.sample_latents(dist, m, seed, stream=rng.FOLLOWERS)
        model.write_latents_csv(out / "followers_positions.csv", followers)
        graph = graphgen.generate_bipartite(sample, followers, kernel, seed)
        summary = {"model": "bipartite", "n": n, "m": m, "edges": graph.num_edges,
                   "avg_follower_degree": graph.num_edges / m}
    graphgen.write_edge_list(out / "graph.tsv", graph)
    (out / "config.txt").write_text(cfg.dump())
    return summary


def cmd_infer(graph_path: Path, cfg: Config, out: Path) -> dict:
    graph = graphgen.read_edge_list(graph_path)
    out.mkdir(parents=True, exist_ok=True)
    kernel = cfg.kernel()
    iso_params = cfg.isomap_params()
    normalize = cfg.bool("degree_normalize")
    meta: dict = {"graph": os.path.relpath(graph_path, out), "mode": iso_params.mode,
                  "degree_normalize": normalize}
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        if isinstance(graph, graphgen.AdjacencyMatrix):
            n = graph.n
            rho = graph.rho if graph.rho is not None else cfg.num("rho", {"n": float(n)})
            emb = _stage("spectral", spectral.sm_est, graph, cfg.threshold_params(), rho=rho,
                         degree_normalize=normalize)
            meta.update(model="simplified", rho=rho)
        else:
            n = graph.n
            theta = cfg.num("theta")
            emb = _stage("spectral", spectral.bipartite_est, graph, theta=theta,
                         gap_exponent=cfg.num("gap_exponent"), max_rank=cfg.int("max_rank", minimum=1),
                         gap_constant=cfg.num("gap_constant"), degree_normalize=normalize)
            rho = None
            meta.update(model="bipartite", theta=theta, m=graph.m)
        f = cfg.opt("f", {"n": float(n)})
        if iso_params.mode == "theory" and f is None:
            if rho is None:
                raise ValidationError("theory mode on a bipartite graph needs an explicit f")
            f = iso_params.resolve_f(rho)
        cd = _stage("isomap", isomap.isomap_algo, emb.rows, iso_params, kernel, f)
        cd = cd.reindex(emb.index, n)
        feats = np.zeros((n, emb.rows.shape[1]))
        feats[emb.index] = emb.rows
        coords, labels, line = _stage("embed", embed.embed_clusters, cd, feats, kernel)
    methods = ["line" if np.isfinite(c) else embed.UNINFORMATIVE for c in coords]
    embed.write_coordinates(out / "coordinates.csv", coords, labels, methods)
    emb.write(out / "embedding.csv")
    cd.write(out)
    if isinstance(graph, graphgen.BipartiteMatrix):
        good = np.nonzero(np.isfinite(coords))[0]
        B = graph.matrix.tocsc()[:, good].tocsr()
        method = cfg.choice("follower_method", {"mle", "neighbor-mean"})
        if method == "mle":
            fy = _stage("embed", embed.follower_mle, B, coords[good], kernel, cfg.num("grid_eps"), n)
        else:
            fy = embed.follower_neighbor_mean(B, coords[good])
        fm = [method if np.isfinite(v) else embed.UNINFORMATIVE for v in fy]
        embed.write_coordinates(out / "followers.csv", fy, np.full(len(fy), -1), fm)
    meta.update(d=emb.rank, scale=emb.scale, f=f, radius=cd.meta["radius"], step=cd.meta["step"],
                clusters=len(cd.clusters), cluster_sizes=[len(c) for c in cd.clusters],
                left_out=len(cd.left_out), removed=cd.meta["removed"],
                stress=[e.stress for e in line], spectral=emb.meta,
                warnings=sorted({str(w.message) for w in caught}))
    write_json(out / "metadata.json", meta)
    (out / "config.txt").write_text(cfg.dump())
    return meta


def _pairs_sample(t, e, cap):
    if len(t) <= cap:
        return t, e
    idx = np.linspace(0, len(t) - 1, cap).astype(np.int64)
    return t[idx], e[idx]


def cmd_eval(truth_path: Path, infer_dir: Path, cfg: Config, out: Path,
             followers_truth: Path | None = None) -> dict:
    x = model.read_latents_csv(truth_path)
    cd = isomap.ClusterDistances.read(infer_dir)
    if cd.n != len(x):
        raise ValidationError(f"index mismatch: truth has {len(x)} nodes, inference has {cd.n}")
    out.mkdir(parents=True, exist_ok=True)
    dist = cfg.distribution()
    rep = evaluate.check_approximation(x, cd.clusters, cd.distances, cfg.num("alpha"), cfg.num("beta"),
                                       cfg.num("gamma"), dist)
    report: dict = {"approximation": rep.as_dict()}
    t, e = evaluate.in_cluster_pairs(cd.clusters, cd.distances, x)
    corr = evaluate.correlations(e, t) if len(t) >= 2 else {"pearson": None, "spearman": None,
                                                            "kendall": None, "defined": False}
    report.update(pearson=corr["pearson"], spearman=corr["spearman"], kendall=corr["kendall"],
                  pairs=int(len(t)))
    ts, es = _pairs_sample(t, e, cfg.int("scatter_max", minimum=1))
    with open(out / "scatter.csv", "w") as fh:
        fh.write("true_distance,estimated_distance\n")
        for a, b in zip(ts, es):
            fh.write(f"{float(a)!r},{float(b)!r}\n")

    coords, _, _ = embed.read_coordinates(infer_dir / "coordinates.csv")
    line = []
    for c in cd.clusters:
        if len(c) >= 2:
            r = evaluate.correlations(coords[c], x[c])["spearman"]
            line.append(None if r is None or not math.isfinite(r) else abs(r))
        else:
            line.append(None)
    report["line_spearman"] = line
    finite = np.isfinite(coords)
    report["coverage"] = float(finite.mean())
    labels = dist.interval_index(x) > 0
    seed = cfg.seed()
    frac = cfg.num("in_sample_fraction")
    has_classes = len(dist.support_intervals()) > 1
    if has_classes and labels[finite].any() and not labels[finite].all():
        report["classification"] = evaluate.classify_threshold(coords[finite], labels[finite], frac, seed)

    meta = json.loads((infer_dir / "metadata.json").read_text())
    graph_path = (infer_dir / meta["graph"]).resolve()
    baselines: dict = {}
    if meta.get("model") == "simplified" and graph_path.exists():
        graph = graphgen.read_edge_list(graph_path)
        if graph.n <= graphgen.DENSE_LIMIT and graph.num_edges > 0:
            part, structured = evaluate.modularity_baseline(graph)
            iu = np.triu_indices(graph.n, 1)
            truth_all = np.abs(x[:, None] - x[None, :])[iu]
            mc = evaluate.correlations(evaluate.partition_distance(part)[iu], truth_all)
            baselines["modularity"] = {"structure": structured, "pearson": mc["pearson"]}
            mds = evaluate.mds_baseline(graph, 1)
            mcoord = mds.coordinates[:, 0]
            mds_rep = {"spearman": abs(evaluate.correlations(mcoord, x)["spearman"] or 0.0),
                       "residual_fraction": mds.residual_fraction}
            if has_classes and labels.any() and not labels.all():
                mds_rep["classification"] = evaluate.classify_threshold(mcoord, labels, frac, seed)
            baselines["mds"] = mds_rep
    report["baselines"] = baselines

    if followers_truth is not None and (infer_dir / "followers.csv").exists():
        y = model.read_latents_csv(followers_truth)
        fy, _, _ = embed.read_coordinates(infer_dir / "followers.csv")
        ok = np.isfinite(fy)
        if len(y) != len(fy):
            raise ValidationError(f"index mismatch: {len(y)} follower positions, {len(fy)} estimates")
        report["followers"] = {"informative": int(ok.sum()),
                               **(evaluate.correlations(fy[ok], y[ok]) if ok.sum() >= 2 else {})}
    write_json(out / "report.json", report)
    return report


def cmd_pipeline(cfg: Config, out: Path) -> dict:
    summary = _stage("generate", cmd_generate, cfg, out)
    cmd_infer(out / "graph.tsv", cfg, out / "infer")
    ft = out / "followers_positions.csv"
    report = cmd_eval(out / "positions.csv", out / "infer", cfg, out / "eval", ft if ft.exists() else None)
    return {"generate": summary, "pearson": report["pearson"], "pass": report["approximation"]["pass"]}


# -- argument parsing -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value configuration file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--mode", choices=["theory", "calibrated"])
    common.add_argument("--theta", type=float, help="diagonal exponent for the bipartite path (-inf drops it)")
    common.add_argument("--ell", type=float)
    common.add_argument("--gap-exponent", type=float)
    common.add_argument("--degree-normalize", action="store_true")

    parser = argparse.ArgumentParser(prog="latentinfer", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="sample latent positions and a graph")
    p = sub.add_parser("infer", parents=[common], help="estimate latent distances from an edge list")
    p.add_argument("graph")
    p = sub.add_parser("eval", parents=[common], help="score an inference directory against the truth")
    p.add_argument("truth")
    p.add_argument("inference")
    p.add_argument("--followers-truth")
    sub.add_parser("pipeline", parents=[common], help="generate, infer and evaluate in one run")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        if args.command == "generate":
            result = cmd_generate(cfg, Path(args.out or "."))
        elif args.command == "infer":
            result = cmd_infer(Path(args.graph), cfg, Path(args.out or "."))
            result = {k: result[k] for k in ("model", "d", "clusters", "cluster_sizes", "left_out", "warnings")}
        elif args.command == "eval":
            out = Path(args.out) if args.out else Path(args.inference)
            ft = Path(args.followers_truth) if args.followers_truth else None
            rep = cmd_eval(Path(args.truth), Path(args.inference), cfg, out, ft)
            result = {"pass": rep["approximation"]["pass"], "pearson": rep["pearson"],
                      "alpha_achieved": rep["approximation"]["alpha_achieved"]}
        else:
            result = cmd_pipeline(cfg, Path(args.out or "."))
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(json.dumps(_clean(result), sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
