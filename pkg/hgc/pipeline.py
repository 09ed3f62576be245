"""
Pipeline stages

Runs the stages pca -> segment -> graph -> partition -> train -> predict ->
eval against an output directory. Every stage records, in the directory's
manifest, the md5 hashes of the files it read and wrote together with the
configuration that produced them. A stage refuses to run on top of upstream
artifacts that no longer match their record, unless forced, and a full run
skips every stage whose record still matches.
"""

import csv
import io
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from itertools import product
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm  # type: ignore

from hgc import constants, evaluation, gcn, graph, hsi_io, partition, preprocess
from hgc import superpixel, trainer, utils
from hgc.hsi_io import HsiCube, RunConfig

# Config keys each stage depends on.
STAGE_KEYS: Dict[str, Tuple[str, ...]] = {
    "pca": ("cube", "pca_dim"),
    "segment": (
        "labels",
        "num_superpixels",
        "compactness",
        "slic_iters",
        "seed",
        "per_class",
        "per_class_small",
        "val_fraction",
    ),
    "graph": ("o", "k"),
    "partition": ("c", "balance_eps", "seed"),
    "train": ("hidden_units", "conv_dim", "epochs", "learning_rate", "seed"),
    "predict": (),
    "eval": ("class_names",),
}

SWEEP_KEYS = ("o", "k", "c", "per_class", "seed")


class StageError(RuntimeError):
    """A stage failure, carrying the stage name."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"Stage '{stage}' failed: {message}")
        self.stage = stage


@dataclass
class StageRecord:
    """Hashes of the files a stage read and wrote, and its config snapshot."""

    config: Dict[str, Any]
    inputs: Dict[str, str]
    outputs: Dict[str, str]
    meta: Dict[str, Any] = field(default_factory=dict)


@dataclass
class PipelineManifest:
    stages: Dict[str, StageRecord] = field(default_factory=dict)

    @classmethod
    def load(cls, out_dir: str) -> "PipelineManifest":
        path = os.path.join(out_dir, constants.NAME_MANIFEST)
        if not os.path.isfile(path):
            return cls()
        with open(path, "r", encoding="utf-8") as openfile:
            payload = json.load(openfile)
        return cls(
            stages={
                name: StageRecord(**record)
                for name, record in payload.get("stages", {}).items()
            }
        )

    def save(self, out_dir: str) -> None:
        payload = {
            "stages": {
                name: {
                    "config": record.config,
                    "inputs": record.inputs,
                    "outputs": record.outputs,
                    "meta": record.meta,
                }
                for name, record in self.stages.items()
            }
        }
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
        utils.atomic_write(os.path.join(out_dir, constants.NAME_MANIFEST), text)


@dataclass
class StageOutput:
    inputs: List[str]
    outputs: List[str]
    meta: Dict[str, Any] = field(default_factory=dict)


@dataclass
class StageContext:
    config: RunConfig
    out_dir: str
    manifest: PipelineManifest

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def meta(self, stage: str) -> Dict[str, Any]:
        return self.manifest.stages[stage].meta

    def subgraph_names(self) -> List[str]:
        clusters = int(self.meta("partition")["clusters"])
        return [
            os.path.join(constants.SUBGRAPH_DIR, constants.SUBGRAPH_FILENAME.format(i))
            for i in range(clusters)
        ]

    def load_reduced(self) -> HsiCube:
        data = utils.load_npy(self.path(constants.NAME_REDUCED))
        bands, height, width = data.shape
        return HsiCube(width=width, height=height, bands=bands, data=data)

    def load_subgraphs(self) -> List[partition.SubGraph]:
        return partition.load_subgraphs(
            [self.path(name) for name in self.subgraph_names()]
        )


##
# Stages:
##


def _stage_pca(ctx: StageContext) -> StageOutput:
    config = ctx.config
    cube = hsi_io.load_cube(config.cube)
    dim = config.pca_dim
    if dim > cube.bands:
        logging.warning(
            "pca_dim %s exceeds the %s bands, clipped.", dim, cube.bands
        )
        dim = cube.bands
    model = preprocess.fit_pca(cube, dim)
    reduced = preprocess.transform(cube, model)
    preprocess.save_pca_model(model, ctx.path(constants.NAME_PCA_MODEL))
    utils.save_npy(ctx.path(constants.NAME_REDUCED), reduced.data)
    return StageOutput(
        inputs=[os.path.abspath(p) for p in hsi_io.cube_files(config.cube)],
        outputs=[constants.NAME_PCA_MODEL, constants.NAME_REDUCED],
        meta={
            "width": cube.width,
            "height": cube.height,
            "bands": cube.bands,
            "pca_dim": dim,
        },
    )


def _stage_segment(ctx: StageContext) -> StageOutput:
    config = ctx.config
    reduced = ctx.load_reduced()
    labels = hsi_io.load_labels(config.labels, reduced)
    p_target = config.resolve_num_superpixels(reduced.width, reduced.height)
    smap = superpixel.segment(
        reduced, p_target, config.compactness, config.slic_iters, config.seed
    )
    if not superpixel.check_connectivity(smap):
        raise RuntimeError("Segmentation left a superpixel disconnected.")
    split = hsi_io.split_samples(
        labels,
        config.per_class,
        config.per_class_small,
        config.val_fraction,
        config.seed,
    )
    node_labels = superpixel.aggregate_labels(smap, split, labels)

    superpixel.save_segmentation(smap, ctx.path(constants.NAME_SEGMENTATION))
    hsi_io.save_split(split, ctx.path(constants.NAME_SPLIT))
    superpixel.save_node_labels(node_labels, ctx.path(constants.NAME_NODE_LABELS))
    superpixel.save_assignment_grid(smap, ctx.path(constants.NAME_SEGMENTATION_GRID))
    superpixel.save_boundary_overlay(
        smap, reduced, ctx.path(constants.NAME_SEGMENTATION_OVERLAY)
    )
    return StageOutput(
        inputs=[constants.NAME_REDUCED, os.path.abspath(config.labels)],
        outputs=[
            constants.NAME_SEGMENTATION,
            constants.NAME_SPLIT,
            constants.NAME_NODE_LABELS,
            constants.NAME_SEGMENTATION_GRID,
            constants.NAME_SEGMENTATION_OVERLAY,
        ],
        meta={
            "num_classes": labels.num_classes,
            "superpixels": smap.p,
            "impure": int(np.sum(node_labels.impure)),
        },
    )


def _stage_graph(ctx: StageContext) -> StageOutput:
    reduced = ctx.load_reduced()
    smap = superpixel.load_segmentation(ctx.path(constants.NAME_SEGMENTATION))
    attributes = superpixel.compute_attributes(smap, reduced)
    sp_graph = graph.build_graph(smap, attributes, ctx.config.o, ctx.config.k)
    graph.save_graph(sp_graph, ctx.path(constants.NAME_GRAPH))
    graph.export_edges(
        sp_graph,
        ctx.path(constants.NAME_GRAPH_EDGES),
        ctx.path(constants.NAME_GRAPH_ATTRIBUTES),
    )
    return StageOutput(
        inputs=[constants.NAME_REDUCED, constants.NAME_SEGMENTATION],
        outputs=[
            constants.NAME_GRAPH,
            constants.NAME_GRAPH_EDGES,
            constants.NAME_GRAPH_ATTRIBUTES,
        ],
        meta={"nodes": sp_graph.N, "edges": sp_graph.num_edges},
    )


def _stage_partition(ctx: StageContext) -> StageOutput:
    config = ctx.config
    sp_graph = graph.load_graph(ctx.path(constants.NAME_GRAPH))
    node_labels = superpixel.load_node_labels(ctx.path(constants.NAME_NODE_LABELS))
    assign = partition.partition(sp_graph, config.c, config.balance_eps, config.seed)
    partition.write_assignment(assign, ctx.path(constants.NAME_PARTITION))

    subgraph_dir = ctx.path(constants.SUBGRAPH_DIR)
    if os.path.isdir(subgraph_dir):
        for name in os.listdir(subgraph_dir):
            os.remove(os.path.join(subgraph_dir, name))
    subgraphs = partition.induce_subgraphs(sp_graph, assign, node_labels)
    paths = partition.save_subgraphs(subgraphs, subgraph_dir)
    unlabeled = [s.index for s in subgraphs if not s.has_role("train")]
    if unlabeled:
        logging.warning("Sub-graphs %s hold no train-labeled node.", unlabeled)
    return StageOutput(
        inputs=[constants.NAME_GRAPH, constants.NAME_NODE_LABELS],
        outputs=[constants.NAME_PARTITION]
        + [os.path.relpath(path, ctx.out_dir) for path in paths],
        meta={
            "clusters": assign.c,
            "sizes": assign.sizes.tolist(),
            "edge_cut": partition.edge_cut(sp_graph, assign),
        },
    )


def _stage_train(ctx: StageContext) -> StageOutput:
    config = ctx.config
    subgraphs = ctx.load_subgraphs()
    num_classes = int(ctx.meta("segment")["num_classes"])
    model, state, history = trainer.train(
        subgraphs, config, config.seed, num_classes
    )
    gcn.save_checkpoint(model, ctx.path(constants.NAME_CHECKPOINT), state)
    trainer.write_history_csv(history, ctx.path(constants.NAME_HISTORY))
    return StageOutput(
        inputs=ctx.subgraph_names(),
        outputs=[constants.NAME_CHECKPOINT, constants.NAME_HISTORY],
        meta={
            "best_epoch": history.best_epoch,
            "val_oa": history.val_accuracy[history.best_epoch],
        },
    )


def _stage_predict(ctx: StageContext) -> StageOutput:
    model, _ = gcn.load_checkpoint(ctx.path(constants.NAME_CHECKPOINT))
    subgraphs = ctx.load_subgraphs()
    smap = superpixel.load_segmentation(ctx.path(constants.NAME_SEGMENTATION))
    pred = evaluation.predict_pixels(model, subgraphs, smap)
    utils.save_npy(ctx.path(constants.NAME_PREDICTION), pred)
    palette = evaluation.default_palette(int(ctx.meta("segment")["num_classes"]))
    evaluation.export_map(pred, palette, ctx.path(constants.NAME_CLASSIFICATION_MAP))
    return StageOutput(
        inputs=[constants.NAME_CHECKPOINT, constants.NAME_SEGMENTATION]
        + ctx.subgraph_names(),
        outputs=[constants.NAME_PREDICTION, constants.NAME_CLASSIFICATION_MAP],
    )


def _stage_eval(ctx: StageContext) -> StageOutput:
    config = ctx.config
    pred = utils.load_npy(ctx.path(constants.NAME_PREDICTION))
    labels = hsi_io.load_labels(config.labels)
    split = hsi_io.load_split(ctx.path(constants.NAME_SPLIT))
    num_classes = int(ctx.meta("segment")["num_classes"])
    matrix = evaluation.confusion(pred, labels, split.test_pixels, num_classes)
    report = evaluation.metrics(matrix)
    names = config.class_names or None
    evaluation.write_metrics_json(report, ctx.path(constants.NAME_METRICS_JSON), names)
    evaluation.write_metrics_text(report, ctx.path(constants.NAME_METRICS_TEXT), names)
    logging.info("OA %.4f, AA %.4f, kappa %.4f.", report.oa, report.aa, report.kappa)
    return StageOutput(
        inputs=[
            constants.NAME_PREDICTION,
            constants.NAME_SPLIT,
            os.path.abspath(config.labels),
        ],
        outputs=[constants.NAME_METRICS_JSON, constants.NAME_METRICS_TEXT],
        meta={"oa": report.oa, "aa": report.aa, "kappa": report.kappa},
    )


STAGE_FUNCTIONS: Dict[str, Callable[[StageContext], StageOutput]] = {
    "pca": _stage_pca,
    "segment": _stage_segment,
    "graph": _stage_graph,
    "partition": _stage_partition,
    "train": _stage_train,
    "predict": _stage_predict,
    "eval": _stage_eval,
}


##
# Manifest checks:
##


def _hashes(out_dir: str, names: List[str]) -> Dict[str, str]:
    return {name: utils.hash_file(os.path.join(out_dir, name)) for name in names}


def record_problems(
    stage: str, record: StageRecord, out_dir: str, config: RunConfig
) -> List[str]:
    """Why a stage record no longer describes the files and config at hand."""
    problems = []
    for name, digest in sorted({**record.inputs, **record.outputs}.items()):
        full_path = os.path.join(out_dir, name)
        if not os.path.isfile(full_path):
            problems.append(f"{name} is missing")
        elif utils.hash_file(full_path) != digest:
            problems.append(f"{name} has changed")
    current = config.to_dict()
    for key in STAGE_KEYS[stage]:
        if record.config.get(key) != current.get(key):
            problems.append(f"config key '{key}' has changed")
    return problems


def check_upstream(
    manifest: PipelineManifest,
    stage: str,
    out_dir: str,
    config: RunConfig,
    force: bool = False,
) -> None:
    """Verify the records of every stage before `stage`.

    Raises:
        RuntimeError: If an upstream stage never ran, or its artifacts are
                      stale and force is not set.
    """
    for upstream in constants.STAGES[: constants.STAGES.index(stage)]:
        record = manifest.stages.get(upstream)
        if record is None:
            raise RuntimeError(
                f"missing upstream artifact: stage '{upstream}' "
                f"has not run in {out_dir}"
            )
        problems = record_problems(upstream, record, out_dir, config)
        if not problems:
            continue
        message = f"stale artifact from stage '{upstream}': " + "; ".join(problems)
        if not force:
            raise RuntimeError(message)
        logging.warning("FORCE: running %s on top of a %s", stage, message)


def run_stage(
    stage: str, config: RunConfig, out_dir: str, force: bool = False
) -> float:
    """Run exactly one stage and record it in the manifest.

    Raises:
        ValueError: If the stage name is unknown.
        StageError: If the upstream check or the stage itself fails.

    Returns:
        float: Wall-clock seconds spent in the stage.
    """
    if stage not in STAGE_FUNCTIONS:
        raise ValueError(f"Unknown stage {stage!r}; choose from {constants.STAGES}")
    utils.ensure_dir(out_dir)
    manifest = PipelineManifest.load(out_dir)
    logging.info("Running stage %s in %s", stage, out_dir)
    try:
        check_upstream(manifest, stage, out_dir, config, force)
        start = time.perf_counter()
        output = STAGE_FUNCTIONS[stage](StageContext(config, out_dir, manifest))
        elapsed = time.perf_counter() - start
        record = StageRecord(
            config=config.to_dict(),
            inputs=_hashes(out_dir, output.inputs),
            outputs=_hashes(out_dir, output.outputs),
            meta=output.meta,
        )
    except Exception as e:
        raise StageError(stage, str(e)) from e

    manifest.stages[stage] = record
    manifest.save(out_dir)
    logging.info("Stage %s finished in %.3f s.", stage, elapsed)
    return elapsed


def run_pipeline(
    config: RunConfig, out_dir: str, force: bool = False
) -> Tuple[evaluation.MetricsReport, Dict[str, Optional[float]]]:
    """Run every stage, skipping those whose record is still current.

    Args:
        config (RunConfig): Run configuration.
        out_dir (str): Output directory.
        force (bool): Re-run every stage even if its record is current.

    Returns:
        Tuple[evaluation.MetricsReport, Dict[str, Optional[float]]]: The test
        metrics and the seconds per stage (None for skipped stages).
    """
    timings: Dict[str, Optional[float]] = {}
    for stage in constants.STAGES:
        manifest = PipelineManifest.load(out_dir)
        record = manifest.stages.get(stage)
        if (
            not force
            and record is not None
            and not record_problems(stage, record, out_dir, config)
        ):
            logging.info("Stage %s is up to date, skipped.", stage)
            timings[stage] = None
            continue
        timings[stage] = run_stage(stage, config, out_dir)
    report = evaluation.read_metrics_json(
        os.path.join(out_dir, constants.NAME_METRICS_JSON)
    )
    return report, timings


##
# Sweeps:
##


def expand_grid(
    grid: Dict[str, List[int]], base_seed: int, num_seeds: int
) -> List[Tuple[Dict[str, int], int]]:
    """Every (grid point, seed) pair, grid keys in SWEEP_KEYS order.

    Without a `seed` grid the seeds are base_seed .. base_seed + num_seeds - 1.

    Raises:
        ValueError: On an empty grid, an empty value list or an unknown key.
    """
    if not grid:
        raise ValueError("Sweep grid is empty")
    for key, values in grid.items():
        if key not in SWEEP_KEYS:
            raise ValueError(f"Cannot sweep {key!r}; choose from {SWEEP_KEYS}")
        if not values:
            raise ValueError(f"Sweep grid for {key!r} has no values")
    seeds = grid.get("seed", list(range(base_seed, base_seed + num_seeds)))
    keys = [key for key in SWEEP_KEYS if key in grid and key != "seed"]
    jobs = []
    for combo in product(*(grid[key] for key in keys)):
        point = dict(zip(keys, combo))
        for seed in seeds:
            jobs.append((point, seed))
    return jobs


def point_name(point: Dict[str, int]) -> str:
    return "-".join(f"{key}{value}" for key, value in point.items()) or "base"


def _sweep_job(job: Tuple[Dict[str, Any], str]) -> Dict[str, Any]:
    config_values, run_dir = job
    report, _ = run_pipeline(RunConfig(**config_values), run_dir)
    return evaluation.report_to_dict(report)


def run_sweep(
    config: RunConfig,
    out_dir: str,
    grid: Dict[str, List[int]],
    num_seeds: int = constants.DEFAULT_SWEEP_SEEDS,
) -> List[Dict[str, Any]]:
    """Run the pipeline for every grid point and seed, then aggregate.

    Runs go to `<out_dir>/runs/<point>-seed<seed>` on a worker pool bounded by
    HGC_THREADS. Every point is summarised by the mean and population
    standard deviation of OA, AA and kappa over its seeds.

    Returns:
        List[Dict[str, Any]]: One summary row per grid point.
    """
    jobs = expand_grid(grid, config.seed, num_seeds)
    payloads = []
    for point, seed in jobs:
        overrides = dict(point)
        # A swept per_class below the configured small-class count caps it.
        if "per_class" in point:
            overrides["per_class_small"] = min(
                config.per_class_small, point["per_class"]
            )
        run_config = config.with_overrides(seed=seed, **overrides)
        run_dir = os.path.join(out_dir, "runs", f"{point_name(point)}-seed{seed}")
        payloads.append((run_config.to_dict(), run_dir))

    workers = utils.worker_count(len(payloads))
    logging.info("Sweeping %s runs on %s workers.", len(payloads), workers)
    print(f"Sweeping {len(payloads)} runs on {workers} workers")
    results: List[Optional[Dict[str, Any]]] = [None] * len(payloads)
    if workers == 1:
        for index, payload in enumerate(tqdm(payloads)):
            results[index] = _sweep_job(payload)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(_sweep_job, p): i for i, p in enumerate(payloads)}
            for future in tqdm(as_completed(futures), total=len(futures)):
                results[futures[future]] = future.result()

    rows: List[Dict[str, Any]] = []
    by_point: Dict[str, List[Dict[str, Any]]] = {}
    points: Dict[str, Dict[str, int]] = {}
    for (point, _), result in zip(jobs, results):
        name = point_name(point)
        points.setdefault(name, point)
        by_point.setdefault(name, []).append(result)  # type: ignore
    for name, point in points.items():
        row: Dict[str, Any] = dict(point)
        row["runs"] = len(by_point[name])
        for metric in ("oa", "aa", "kappa"):
            mean, std = evaluation.mean_std([r[metric] for r in by_point[name]])
            row[f"{metric}_mean"] = mean
            row[f"{metric}_std"] = std
        rows.append(row)
    write_sweep_summary(rows, out_dir)
    return rows


def write_sweep_summary(rows: List[Dict[str, Any]], out_dir: str) -> None:
    """Summary rows as CSV, JSON and an aligned text table."""
    columns: List[str] = []
    for row in rows:
        columns.extend(key for key in row if key not in columns)

    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    csv_path = os.path.join(out_dir, constants.NAME_SWEEP_CSV)
    utils.atomic_write(csv_path, buffer.getvalue())

    text = json.dumps(rows, indent=2, sort_keys=True) + "\n"
    utils.atomic_write(os.path.join(out_dir, constants.NAME_SWEEP_JSON), text)

    params = [c for c in columns if c in SWEEP_KEYS]
    header = params + ["runs", "OA", "AA", "Kappa"]
    lines = ["  ".join(f"{h:>16}" for h in header)]
    for row in rows:
        cells = [str(row.get(p, "")) for p in params] + [str(row["runs"])]
        for metric in ("oa", "aa"):
            cells.append(
                f"{100 * row[metric + '_mean']:.2f}+-{100 * row[metric + '_std']:.2f}"
            )
        cells.append(f"{row['kappa_mean']:.4f}+-{row['kappa_std']:.4f}")
        lines.append("  ".join(f"{cell:>16}" for cell in cells))
    utils.atomic_write(
        os.path.join(out_dir, constants.NAME_SWEEP_TEXT), "\n".join(lines) + "\n"
    )


##
# Inspection:
##


def describe_artifact(path: str) -> str:
    """Human-readable summary of a pipeline artifact or output directory.

    Raises:
        FileNotFoundError: If the path does not exist.
        ValueError: If the artifact type is not recognised.
    """
    if os.path.isdir(path):
        path = os.path.join(path, constants.NAME_MANIFEST)
    if not os.path.exists(path):
        raise FileNotFoundError(f"Artifact not found: {path}")
    name = os.path.basename(path)

    if name.endswith(constants.CUBE_HEADER_SUFFIX):
        cube = hsi_io.load_cube(path)
        pixels = cube.pixels()
        return (
            f"cube {cube.width}x{cube.height}, {cube.bands} bands, "
            f"values {pixels.min():.4g}..{pixels.max():.4g}"
        )
    if name == constants.NAME_MANIFEST:
        manifest = PipelineManifest.load(os.path.dirname(path))
        lines = [f"manifest with {len(manifest.stages)} stages"]
        for stage in constants.STAGES:
            if stage in manifest.stages:
                record = manifest.stages[stage]
                lines.append(
                    f"  {stage}: {len(record.inputs)} inputs, "
                    f"{len(record.outputs)} outputs, {record.meta}"
                )
        return "\n".join(lines)
    if name == constants.NAME_GRAPH:
        sp_graph = graph.load_graph(path)
        return (
            f"graph with {sp_graph.N} nodes, {sp_graph.num_edges} edges, "
            f"{sp_graph.X.shape[1]} attributes, o={sp_graph.o}, k={sp_graph.k}"
        )
    if name == constants.NAME_PARTITION:
        with open(path, "r", encoding="utf-8") as openfile:
            n = sum(1 for line in openfile if line.strip())
        assign = partition.read_assignment(path, n)
        return (
            f"partition of {n} nodes into {assign.c} clusters, "
            f"sizes {assign.sizes.tolist()}"
        )
    if name.startswith("subgraph_") and name.endswith(".npz"):
        sub = partition.load_subgraph(path)
        return (
            f"sub-graph {sub.index} with {sub.num_nodes} nodes, "
            f"{_subgraph_edges(sub)} edges"
        )
    if name == constants.NAME_CHECKPOINT:
        model, state = gcn.load_checkpoint(path)
        steps = state.t if state is not None else 0
        return f"checkpoint dims (F, d_c, d_h, C) = {model.dims}, adam steps {steps}"
    if name == constants.NAME_HISTORY:
        history = trainer.read_history_csv(path)
        return (
            f"history of {history.epochs} epochs, best epoch {history.best_epoch}, "
            f"final loss {history.loss[-1] if history.loss else None}"
        )
    if name == constants.NAME_METRICS_JSON:
        return evaluation.format_metrics_table(evaluation.read_metrics_json(path))
    raise ValueError(f"Unrecognised artifact {path}")


def _subgraph_edges(sub: partition.SubGraph) -> int:
    return int((sub.A.nnz - sub.A.diagonal().astype(bool).sum()) // 2)
