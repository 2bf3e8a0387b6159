"""Configuration, file formats, and subcommands wiring the modules together.

Commands: synth (write benchmark datasets + ground truth), fit (learn graphs
from a dataset directory), eval (metrics CSV against ground truth), cd
(graph-difference of two graph files), bench (sweep sample sizes / task
counts over methods and seeds into an aggregated CSV).

All files carry a format_version; every CSV output embeds the config hash and
seed as comment headers.  Float arrays are written with 17 significant digits
so a read-back reproduces them bit-for-bit.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import hashlib
import io
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .funcdata import FpcaConfig, FunctionalSampleSet, interval_average
from .core import NodeData, TaskData, assemble_embedding, block_weight_matrix
from .causaldiff import (
    CycleError,
    DirectedGraph,
    OverlapMap,
    causal_difference,
    dcd,
    edge_difference,
)
from .learner import DivergenceError, FitResult, HyperParams, SimilarityMatrix, fit
from .benchgen import (
    DEFAULT_GRID_POINTS,
    GroundTruth,
    MetricsReport,
    benchmark_task_spec,
    evaluate,
    fourier_basis,
    make_benchmark,
)
from .core import BlockTransitionMatrix

FORMAT_VERSION = 1
SEED_ENV_VAR = "MMDAG_SEED"
MVDAG_BINS = 10
FLOAT_FMT = "%.17g"

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4

METHODS = {
    "mmdag": {"coupling": "dcd", "mvdag": False},
    "matrix_diff": {"coupling": "matrix_diff", "mvdag": False},
    "separate": {"coupling": "none", "mvdag": False},
    "mvdag": {"coupling": "dcd", "mvdag": True},
}


class ConfigError(ValueError):
    """Invalid configuration; carries the offending field names."""

    def __init__(self, bad_fields):
        self.fields = sorted(bad_fields)
        super().__init__(f"invalid config fields: {', '.join(self.fields)}")


# ---------------------------------------------------------------------------
# configuration


@dataclass
class BenchmarkConfig:
    P: int = 10
    L: int = 4
    N: int = 50
    K: int | None = 3  # None selects per-node K by explained variance
    er_edge_prob: float = 0.3
    noise_std: float = 1.0
    seeds: tuple[int, ...] = (0,)
    grid_points: int = DEFAULT_GRID_POINTS
    fpca_threshold: float = 0.95

    def validate(self):
        bad = []
        if self.P < 2:
            bad.append("P")
        if self.L < 1:
            bad.append("L")
        if self.N < 1:
            bad.append("N")
        if self.K is not None and self.K < 1:
            bad.append("K")
        if not 0.0 < self.er_edge_prob < 1.0:
            bad.append("er_edge_prob")
        if self.noise_std < 0:
            bad.append("noise_std")
        if not self.seeds:
            bad.append("seeds")
        if self.grid_points < 2:
            bad.append("grid_points")
        if not 0.0 < self.fpca_threshold <= 1.0:
            bad.append("fpca_threshold")
        if bad:
            raise ConfigError(f"benchmark.{b}" for b in bad)
        return self


@dataclass
class SimilarityConfig:
    mode: str = "uniform"  # uniform | table | inverse_distance
    value: float = 1.0
    table: list | None = None
    coordinates: list | None = None

    def validate(self):
        bad = []
        if self.mode not in ("uniform", "table", "inverse_distance"):
            bad.append("mode")
        if self.mode == "uniform" and self.value < 0:
            bad.append("value")
        if self.mode == "table" and self.table is None:
            bad.append("table")
        if self.mode == "inverse_distance" and self.coordinates is None:
            bad.append("coordinates")
        if bad:
            raise ConfigError(f"similarity.{b}" for b in bad)
        return self

    def matrix(self, n_tasks: int) -> SimilarityMatrix:
        if self.mode == "uniform":
            return SimilarityMatrix.uniform(n_tasks, self.value)
        if self.mode == "table":
            arr = np.asarray(self.table, dtype=float)
            if arr.shape != (n_tasks, n_tasks):
                raise ConfigError(["similarity.table"])
            return SimilarityMatrix(values=arr)
        coords = np.asarray(self.coordinates, dtype=float)
        if coords.ndim != 2 or coords.shape[0] != n_tasks:
            raise ConfigError(["similarity.coordinates"])
        diff = coords[:, None, :] - coords[None, :, :]
        dist = np.sqrt((diff * diff).sum(axis=2))
        off = ~np.eye(n_tasks, dtype=bool)
        if np.any(dist[off] == 0):
            raise ConfigError(["similarity.coordinates"])
        values = np.zeros((n_tasks, n_tasks))
        values[off] = 1.0 / dist[off]
        return SimilarityMatrix(values=values)


_HP_JSON_KEYS = {"lambda_": "lambda"}


def hyperparams_to_dict(hp: HyperParams) -> dict:
    out = {}
    for f in fields(HyperParams):
        out[_HP_JSON_KEYS.get(f.name, f.name)] = getattr(hp, f.name)
    return out


def hyperparams_from_dict(data: dict) -> HyperParams:
    attr_by_key = {_HP_JSON_KEYS.get(f.name, f.name): f.name for f in fields(HyperParams)}
    unknown = set(data) - set(attr_by_key)
    if unknown:
        raise ConfigError(f"hyperparams.{k}" for k in unknown)
    hp = HyperParams(**{attr_by_key[k]: v for k, v in data.items()})
    try:
        hp.validate()
    except ValueError as exc:
        raise ConfigError(["hyperparams"]) from exc
    return hp


@dataclass
class ExperimentConfig:
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)
    hyperparams: HyperParams = field(default_factory=HyperParams)
    similarity: SimilarityConfig = field(default_factory=SimilarityConfig)
    output_dir: str = "out"
    format_version: int = FORMAT_VERSION

    def validate(self):
        self.benchmark.validate()
        self.similarity.validate()
        try:
            self.hyperparams.validate()
        except ValueError as exc:
            raise ConfigError(["hyperparams"]) from exc
        if not self.output_dir:
            raise ConfigError(["output_dir"])
        return self

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "benchmark": {**asdict(self.benchmark), "seeds": list(self.benchmark.seeds)},
            "hyperparams": hyperparams_to_dict(self.hyperparams),
            "similarity": asdict(self.similarity),
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {"format_version", "benchmark", "hyperparams", "similarity", "output_dir"}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(unknown)
        bench_data = dict(data.get("benchmark", {}))
        if "seeds" in bench_data:
            bench_data["seeds"] = tuple(bench_data["seeds"])
        try:
            benchmark = BenchmarkConfig(**bench_data)
        except TypeError as exc:
            raise ConfigError(["benchmark"]) from exc
        try:
            similarity = SimilarityConfig(**data.get("similarity", {}))
        except TypeError as exc:
            raise ConfigError(["similarity"]) from exc
        cfg = cls(
            benchmark=benchmark,
            hyperparams=hyperparams_from_dict(data.get("hyperparams", {})),
            similarity=similarity,
            output_dir=data.get("output_dir", "out"),
            format_version=data.get("format_version", FORMAT_VERSION),
        )
        return cfg.validate()


def config_hash(config: ExperimentConfig) -> str:
    payload = json.dumps(config.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def load_config(path: str) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    cfg = ExperimentConfig.from_dict(data)
    return apply_env_seed(cfg)


def apply_env_seed(config: ExperimentConfig) -> ExperimentConfig:
    """MMDAG_SEED overrides both the dataset seeds and the optimizer seed."""
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None:
        return config
    try:
        seed = int(raw)
    except ValueError:
        raise ConfigError([SEED_ENV_VAR])
    config.benchmark.seeds = (seed,)
    config.hyperparams.seed = seed
    return config


def save_config(path: str, config: ExperimentConfig):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# dataset files


def _write_matrix(path: str, arr: np.ndarray):
    np.savetxt(path, np.asarray(arr, dtype=float), fmt=FLOAT_FMT, delimiter=",")


def _read_matrix(path: str) -> np.ndarray:
    arr = np.loadtxt(path, delimiter=",", ndmin=2)
    return arr


def write_task_dir(dirpath: str, data: TaskData):
    os.makedirs(dirpath, exist_ok=True)
    nodes_meta = []
    for node in data.nodes:
        meta = {"global_id": node.global_id, "modality": node.modality}
        csv_name = f"node_{node.global_id:03d}.csv"
        if node.modality == "function":
            meta["grid_points"] = int(node.curves.n_points)
            _write_matrix(
                os.path.join(dirpath, csv_name),
                np.vstack([node.curves.grid, node.curves.values]),
            )
        else:
            meta["raw_dim"] = int(node.values.shape[1])
            _write_matrix(os.path.join(dirpath, csv_name), node.values)
        meta["file"] = csv_name
        nodes_meta.append(meta)
    spec = {
        "format_version": FORMAT_VERSION,
        "task_id": data.task_id,
        "sample_count": data.sample_count,
        "nodes": nodes_meta,
    }
    with open(os.path.join(dirpath, "spec.json"), "w", encoding="utf-8") as fh:
        json.dump(spec, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_task_dir(dirpath: str) -> TaskData:
    with open(os.path.join(dirpath, "spec.json"), encoding="utf-8") as fh:
        spec = json.load(fh)
    nodes = []
    for meta in spec["nodes"]:
        arr = _read_matrix(os.path.join(dirpath, meta["file"]))
        if meta["modality"] == "function":
            samples = FunctionalSampleSet(
                grid=arr[0], values=arr[1:], node_id=meta["global_id"]
            )
            nodes.append(NodeData.function(samples))
        elif meta["modality"] == "scalar":
            nodes.append(NodeData.scalar(meta["global_id"], arr))
        else:
            nodes.append(NodeData.vector(meta["global_id"], arr))
    return TaskData(task_id=spec["task_id"], nodes=tuple(nodes))


def write_ground_truth(path: str, truth: GroundTruth):
    payload = {
        "format_version": FORMAT_VERSION,
        "seed": truth.seed,
        "params": truth.params,
        "g0": {
            "nodes": list(truth.graph.nodes),
            "edges": sorted([list(e) for e in truth.graph.edges]),
        },
        "basis": {
            "grid": truth.basis.grid.tolist(),
            "values": truth.basis.basis.tolist(),
        },
        "tasks": [
            {
                "task_id": spec.task_id,
                "node_ids": list(spec.global_ids),
                "transition": trans.values.tolist(),
                "weights": w.values.tolist(),
            }
            for spec, trans, w in zip(
                truth.task_specs, truth.transitions, truth.weights
            )
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def read_ground_truth(path: str) -> GroundTruth:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    params = data["params"]
    graph = DirectedGraph(
        nodes=tuple(data["g0"]["nodes"]),
        edges=frozenset(tuple(e) for e in data["g0"]["edges"]),
    )
    from .funcdata import BasisSet

    basis = BasisSet(
        grid=np.asarray(data["basis"]["grid"]),
        basis=np.asarray(data["basis"]["values"]),
        explained_variance=np.ones(len(data["basis"]["values"])),
    )
    specs, transitions, weights = [], [], []
    for task in data["tasks"]:
        spec = benchmark_task_spec(
            task["node_ids"], params["P"], params["K"], params["N"], task["task_id"]
        )
        trans = BlockTransitionMatrix(
            values=np.asarray(task["transition"]), spec=spec
        )
        specs.append(spec)
        transitions.append(trans)
        weights.append(block_weight_matrix(trans))
    return GroundTruth(
        graph=graph,
        task_specs=tuple(specs),
        transitions=tuple(transitions),
        weights=tuple(weights),
        basis=basis,
        seed=data["seed"],
        params=params,
    )


# ---------------------------------------------------------------------------
# graph files


def read_graph_file(path: str):
    """Graph JSON: nodes + edge list, optional parallel edge weights."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    nodes = tuple(data["nodes"])
    edges = [tuple(e) for e in data["edges"]]
    graph = DirectedGraph(nodes=nodes, edges=frozenset(edges))
    weights = data.get("weights")
    matrix = np.zeros((len(nodes), len(nodes)))
    pos = {v: i for i, v in enumerate(nodes)}
    for k, (u, v) in enumerate(edges):
        matrix[pos[u], pos[v]] = 1.0 if weights is None else float(weights[k])
    return graph, matrix


# ---------------------------------------------------------------------------
# the in-process pipeline


def mvdag_preprocess(data: TaskData, n_bins: int = MVDAG_BINS) -> TaskData:
    """Replace each functional node by its per-interval averages (a vector node)."""
    nodes = []
    for node in data.nodes:
        if node.modality == "function":
            binned = interval_average(node.curves.values, n_bins)
            nodes.append(NodeData.vector(node.global_id, binned))
        else:
            nodes.append(node)
    return TaskData(task_id=data.task_id, nodes=tuple(nodes))


def embed_datasets(
    datasets,
    n_components: int | None,
    fpca_threshold: float = 0.95,
    mvdag: bool = False,
):
    """Assemble per-task embeddings (optionally after interval-average preprocessing)."""
    fpca = FpcaConfig(n_components=n_components, var_threshold=fpca_threshold)
    embeddings = []
    bases = []
    for data in datasets:
        if mvdag:
            data = mvdag_preprocess(data)
        emb, node_bases = assemble_embedding(data, fpca)
        embeddings.append(emb)
        bases.append(node_bases)
    return embeddings, bases


def fit_datasets(
    datasets,
    hp: HyperParams,
    similarity: SimilarityMatrix | None,
    n_components: int | None,
    fpca_threshold: float = 0.95,
    mvdag: bool = False,
) -> FitResult:
    embeddings, _ = embed_datasets(datasets, n_components, fpca_threshold, mvdag)
    return fit(embeddings, similarity, hp)


def run_benchmark_method(
    config: ExperimentConfig, method: str, seed: int, n_samples=None, n_tasks=None
):
    """Generate one benchmark instance and run one method on it.

    Returns (FitResult, MetricsReport, wall_seconds); wall time is reported as
    0 under deterministic mode so output files are reproducible byte-for-byte.
    """
    if method not in METHODS:
        raise ConfigError(["method"])
    bench = config.benchmark
    n_samples = bench.N if n_samples is None else n_samples
    n_tasks = bench.L if n_tasks is None else n_tasks
    truth, datasets = make_benchmark(
        p=bench.P,
        n_tasks=n_tasks,
        n_samples=n_samples,
        n_components=bench.K if bench.K is not None else 3,
        er_edge_prob=bench.er_edge_prob,
        noise_std=bench.noise_std,
        seed=seed,
        grid_points=bench.grid_points,
    )
    hp = replace(config.hyperparams, coupling=METHODS[method]["coupling"], seed=seed)
    started = time.perf_counter()
    result = fit_datasets(
        datasets,
        hp,
        config.similarity.matrix(n_tasks),
        bench.K,
        bench.fpca_threshold,
        mvdag=METHODS[method]["mvdag"],
    )
    wall = 0.0 if hp.deterministic else time.perf_counter() - started
    report = evaluate(result.adjacencies, truth, seed)
    return result, report, wall


# ---------------------------------------------------------------------------
# result files


def write_fit_result(
    dirpath: str,
    result: FitResult,
    digest: str,
    seed: int,
    method: str,
    wall_seconds: float,
):
    os.makedirs(dirpath, exist_ok=True)
    for l, (trans, weights, adjacency) in enumerate(
        zip(result.transitions, result.weights, result.adjacencies)
    ):
        _write_matrix(os.path.join(dirpath, f"C_task{l}.csv"), trans.values)
        _write_matrix(os.path.join(dirpath, f"W_task{l}.csv"), weights.values)
        np.savetxt(
            os.path.join(dirpath, f"adjacency_task{l}.csv"),
            adjacency,
            fmt="%d",
            delimiter=",",
        )
    with open(os.path.join(dirpath, "trace.csv"), "w", encoding="utf-8") as fh:
        fh.write(f"# format_version={FORMAT_VERSION}\n")
        fh.write(f"# config_hash={digest}\n")
        fh.write(f"# seed={seed}\n")
        fh.write("outer,inner,objective,sum_h,beta,alpha\n")
        for outer, inner, objective, sum_h, beta, alpha in result.objective_trace:
            fh.write(
                f"{outer},{inner},{objective:.17g},{sum_h:.17g},"
                f"{beta:.17g},{alpha:.17g}\n"
            )
    beta = result.beta
    meta = {
        "format_version": FORMAT_VERSION,
        "config_hash": digest,
        "seed": seed,
        "method": method,
        "n_tasks": len(result.transitions),
        "node_ids": [list(t.spec.global_ids) for t in result.transitions],
        "converged": result.converged,
        "outer_iterations": result.outer_iterations,
        "beta": beta.tolist() if isinstance(beta, np.ndarray) else beta,
        "wall_seconds": wall_seconds,
        "diagnostics": {
            "power_clamped": result.diagnostics["power_clamped"],
            "removed_edges": [
                [list(e) for e in edges]
                for edges in result.diagnostics["removed_edges"]
            ],
        },
    }
    with open(os.path.join(dirpath, "fit_meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_fit_adjacencies(dirpath: str):
    with open(os.path.join(dirpath, "fit_meta.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    adjacencies = []
    for l in range(meta["n_tasks"]):
        arr = np.loadtxt(
            os.path.join(dirpath, f"adjacency_task{l}.csv"), delimiter=",", ndmin=2
        )
        adjacencies.append(arr.astype(int))
    return adjacencies, meta


def write_metrics_csv(
    path: str,
    report: MetricsReport,
    digest: str,
    method: str,
    config: ExperimentConfig,
    wall_seconds: float,
    converged: bool,
):
    bench = config.benchmark
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# format_version={FORMAT_VERSION}\n")
        fh.write(f"# config_hash={digest}\n")
        fh.write(f"# seed={report.seed}\n")
        writer = csv.writer(fh)
        writer.writerow(
            [
                "method", "seed", "N", "L", "P", "task",
                "f1", "tpr", "fpr", "fdr", "tp", "fp", "fn", "tn",
                "wall_seconds", "converged",
            ]
        )
        rows = list(report.per_task) + [report.micro]
        for tm in rows:
            task_label = "micro" if tm.task_id < 0 else str(tm.task_id)
            writer.writerow(
                [
                    method, report.seed, bench.N, bench.L, bench.P, task_label,
                    f"{tm.f1:.17g}", f"{tm.tpr:.17g}", f"{tm.fpr:.17g}",
                    f"{tm.fdr:.17g}", tm.tp, tm.fp, tm.fn, tm.tn,
                    f"{wall_seconds:.17g}", converged,
                ]
            )


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    config = load_config(args.config)
    os.makedirs(config.output_dir, exist_ok=True)
    save_config(os.path.join(config.output_dir, "config.json"), config)
    bench = config.benchmark
    for seed in bench.seeds:
        truth, datasets = make_benchmark(
            p=bench.P,
            n_tasks=bench.L,
            n_samples=bench.N,
            n_components=bench.K if bench.K is not None else 3,
            er_edge_prob=bench.er_edge_prob,
            noise_std=bench.noise_std,
            seed=seed,
            grid_points=bench.grid_points,
        )
        seed_dir = os.path.join(config.output_dir, f"seed_{seed}")
        os.makedirs(seed_dir, exist_ok=True)
        write_ground_truth(os.path.join(seed_dir, "ground_truth.json"), truth)
        for data in datasets:
            write_task_dir(os.path.join(seed_dir, f"task_{data.task_id}"), data)
        sizes = [len(s.global_ids) for s in truth.task_specs]
        print(f"seed {seed}: {len(datasets)} tasks, node counts {sizes} -> {seed_dir}")
    return EXIT_OK


def cmd_fit(args) -> int:
    config = load_config(args.config)
    _apply_hp_overrides(config, args)
    if args.coupling:
        config.hyperparams.coupling = args.coupling
    config.hyperparams.validate()
    datasets = []
    task_dirs = sorted(
        d for d in os.listdir(args.data) if d.startswith("task_")
    )
    if not task_dirs:
        raise FileNotFoundError(f"no task_* directories under {args.data}")
    for name in task_dirs:
        datasets.append(read_task_dir(os.path.join(args.data, name)))
    if args.mvdag:
        method = "mvdag"
    else:
        method = {
            "dcd": "mmdag", "matrix_diff": "matrix_diff", "none": "separate"
        }[config.hyperparams.coupling]
    seed = config.hyperparams.seed
    digest = config_hash(config)
    started = time.perf_counter()
    try:
        result = fit_datasets(
            datasets,
            config.hyperparams,
            config.similarity.matrix(len(datasets)),
            config.benchmark.K,
            config.benchmark.fpca_threshold,
            mvdag=args.mvdag,
        )
    except DivergenceError as exc:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "trace.csv"), "w", encoding="utf-8") as fh:
            fh.write("outer,inner,objective,sum_h,beta,alpha\n")
            for row in exc.trace:
                fh.write(",".join(str(v) for v in row) + "\n")
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    wall = 0.0 if config.hyperparams.deterministic else time.perf_counter() - started
    write_fit_result(args.out, result, digest, seed, method, wall)
    print(
        f"fit {method}: {len(datasets)} tasks, converged={result.converged}, "
        f"outer={result.outer_iterations} -> {args.out}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    config = load_config(args.config)
    truth = read_ground_truth(args.truth)
    adjacencies, meta = read_fit_adjacencies(args.results)
    report = evaluate(adjacencies, truth, seed=meta["seed"])
    write_metrics_csv(
        args.out,
        report,
        meta["config_hash"],
        meta["method"],
        config,
        meta["wall_seconds"],
        meta["converged"],
    )
    print(
        f"eval {meta['method']}: micro F1={report.micro.f1:.4f} "
        f"TPR={report.micro.tpr:.4f} FPR={report.micro.fpr:.4f} "
        f"FDR={report.micro.fdr:.4f} -> {args.out}"
    )
    return EXIT_OK


def cmd_cd(args) -> int:
    graph_u, matrix_u = read_graph_file(args.graph_u)
    graph_v, matrix_v = read_graph_file(args.graph_v)
    if args.mode == "exact":
        value = causal_difference(graph_u, graph_v)
    else:
        overlap = OverlapMap.from_global_ids(graph_u.nodes, graph_v.nodes)
        value = dcd(matrix_u, matrix_v, overlap, c=args.c)
    record = {
        "format_version": FORMAT_VERSION,
        "mode": args.mode,
        "c": args.c if args.mode == "differentiable" else None,
        "graph_u": args.graph_u,
        "graph_v": args.graph_v,
        "value": value,
        "edge_difference": edge_difference(graph_u, graph_v),
    }
    print(f"{value:.17g}")
    print(json.dumps(record, sort_keys=True))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(record, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return EXIT_OK


def _bench_cell(payload):
    """One (method, N, L, seed) cell; returns a raw result row."""
    config_dict, method, n_samples, n_tasks, seed = payload
    config = ExperimentConfig.from_dict(config_dict)
    try:
        result, report, wall = run_benchmark_method(
            config, method, seed, n_samples=n_samples, n_tasks=n_tasks
        )
        return {
            "method": method, "N": n_samples, "L": n_tasks,
            "P": config.benchmark.P, "seed": seed,
            "f1": report.micro.f1, "tpr": report.micro.tpr,
            "fpr": report.micro.fpr, "fdr": report.micro.fdr,
            "wall_seconds": wall, "converged": result.converged, "error": "",
        }
    except Exception as exc:  # record the failure, keep sweeping
        return {
            "method": method, "N": n_samples, "L": n_tasks,
            "P": config.benchmark.P, "seed": seed,
            "f1": float("nan"), "tpr": float("nan"),
            "fpr": float("nan"), "fdr": float("nan"),
            "wall_seconds": 0.0, "converged": False,
            "error": f"{type(exc).__name__}: {exc}",
        }


def cmd_bench(args) -> int:
    config = load_config(args.config)
    n_values = [int(v) for v in args.n_values.split(",")] if args.n_values else [config.benchmark.N]
    l_values = [int(v) for v in args.l_values.split(",")] if args.l_values else [config.benchmark.L]
    methods = args.methods.split(",") if args.methods else list(METHODS)
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ConfigError(f"method:{m}" for m in unknown)
    seeds = config.benchmark.seeds
    digest = config_hash(config)

    cells = [
        (config.to_dict(), method, n, l, seed)
        for method in methods
        for n in n_values
        for l in l_values
        for seed in seeds
    ]
    if args.jobs > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
            rows = list(pool.map(_bench_cell, cells))
    else:
        rows = [_bench_cell(cell) for cell in cells]
    rows.sort(key=lambda r: (r["method"], r["N"], r["L"], r["seed"]))

    os.makedirs(os.path.dirname(os.path.abspath(args.out)) or ".", exist_ok=True)
    cells_path = args.cells_out or os.path.splitext(args.out)[0] + "_cells.csv"
    with open(cells_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# format_version={FORMAT_VERSION}\n")
        fh.write(f"# config_hash={digest}\n")
        fh.write(f"# seed={','.join(str(s) for s in seeds)}\n")
        writer = csv.writer(fh)
        header = [
            "method", "N", "L", "P", "seed", "f1", "tpr", "fpr", "fdr",
            "wall_seconds", "converged", "error",
        ]
        writer.writerow(header)
        for row in rows:
            writer.writerow([row[k] for k in header])

    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# format_version={FORMAT_VERSION}\n")
        fh.write(f"# config_hash={digest}\n")
        fh.write(f"# seed={','.join(str(s) for s in seeds)}\n")
        writer = csv.writer(fh)
        writer.writerow(
            ["method", "N", "L", "P"]
            + [f"{m}_{s}" for m in ("f1", "tpr", "fpr", "fdr") for s in ("mean", "std")]
            + ["count", "failures"]
        )
        for method in sorted(methods):
            for n in sorted(n_values):
                for l in sorted(l_values):
                    group = [
                        r for r in rows
                        if r["method"] == method and r["N"] == n and r["L"] == l
                    ]
                    ok = [r for r in group if not r["error"]]
                    stats = []
                    for metric in ("f1", "tpr", "fpr", "fdr"):
                        vals = np.array([r[metric] for r in ok])
                        if len(vals):
                            stats += [f"{vals.mean():.17g}", f"{vals.std(ddof=0):.17g}"]
                        else:
                            stats += ["nan", "nan"]
                    writer.writerow(
                        [method, n, l, config.benchmark.P]
                        + stats
                        + [len(ok), len(group) - len(ok)]
                    )
    print(f"bench: {len(rows)} cells -> {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _add_hp_overrides(parser: argparse.ArgumentParser):
    for f in fields(HyperParams):
        key = _HP_JSON_KEYS.get(f.name, f.name).replace("_", "-")
        parser.add_argument(f"--{key}", dest=f"hp_{f.name}", default=None)


def _apply_hp_overrides(config: ExperimentConfig, args):
    casts = {bool: lambda v: v.lower() in ("1", "true", "yes")}
    for f in fields(HyperParams):
        raw = getattr(args, f"hp_{f.name}", None)
        if raw is None:
            continue
        cast = casts.get(f.type if isinstance(f.type, type) else None)
        if cast is None:
            current = getattr(config.hyperparams, f.name)
            if isinstance(current, bool):
                cast = casts[bool]
            elif isinstance(current, int) and not isinstance(current, bool):
                cast = int
            elif isinstance(current, float):
                cast = float
            else:
                cast = str
        setattr(config.hyperparams, f.name, cast(raw))
    return config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mmdag", description="multi-task multi-modal DAG learning"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate benchmark datasets")
    p_synth.add_argument("--config", required=True)
    p_synth.set_defaults(func=cmd_synth)

    p_fit = sub.add_parser("fit", help="fit graphs on a dataset directory")
    p_fit.add_argument("--config", required=True)
    p_fit.add_argument("--data", required=True, help="a seed_<s> dataset directory")
    p_fit.add_argument("--out", required=True)
    p_fit.add_argument("--coupling", choices=("dcd", "matrix_diff", "none"))
    p_fit.add_argument("--mvdag", action="store_true", help="interval-average functional nodes first")
    _add_hp_overrides(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_eval = sub.add_parser("eval", help="score fitted graphs against ground truth")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--results", required=True)
    p_eval.add_argument("--truth", required=True)
    p_eval.add_argument("--out", required=True)
    p_eval.set_defaults(func=cmd_eval)

    p_cd = sub.add_parser("cd", help="causal difference of two graph files")
    p_cd.add_argument("graph_u")
    p_cd.add_argument("graph_v")
    p_cd.add_argument("--mode", choices=("exact", "differentiable"), default="exact")
    p_cd.add_argument("--c", type=float, default=50.0)
    p_cd.add_argument("--out")
    p_cd.set_defaults(func=cmd_cd)

    p_bench = sub.add_parser("bench", help="sweep N/L grids over methods and seeds")
    p_bench.add_argument("--config", required=True)
    p_bench.add_argument("--out", required=True)
    p_bench.add_argument("--cells-out")
    p_bench.add_argument("--n-values", help="comma-separated sample sizes")
    p_bench.add_argument("--l-values", help="comma-separated task counts")
    p_bench.add_argument("--methods", help="comma-separated subset of " + ",".join(METHODS))
    p_bench.add_argument("--jobs", type=int, default=1)
    p_bench.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except CycleError as exc:
        print(f"cycle error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
