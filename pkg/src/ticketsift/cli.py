"""Command line front end.

Experiment parameters live in a JSON run configuration (schema-validated,
unknown keys rejected); command flags carry only paths and selections. Every
command exits 0 on success and nonzero with a single-line diagnostic on
stderr. Commands are deterministic given the configuration and its seeds.
"""

from __future__ import annotations

import argparse
import datetime
import json
import struct
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import reports
from .datasets import (
    CIFAR_RECORD_BYTES,
    IDX_LABEL_MAGIC,
    ImageGeometry,
    _read_idx,
    cluster_classes,
    generate_synthetic,
    load_cifar_binary,
    load_class_mapping,
    load_idx,
    rotate_images,
    save_cifar_binary,
    save_idx,
    split_train_val,
    subsample,
)
from .network import MaskSet, check_dims, init_params
from .observables import (
    binomial_reference,
    connectivity,
    effective_masks,
    locality_map,
    locality_map_binned,
    ablation_curve,
)
from .pruner import ImpConfig, density, init_seed, iteration_seed, run_imp
from .trainer import TrainConfig, train


# ---------------------------------------------------------------------------
# run configuration


def _check_section(name: str, section: dict, allowed, required) -> None:
    if not isinstance(section, dict):
        raise ValueError(f"config section {name!r} must be an object")
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ValueError(f"unknown config keys in {name!r}: {', '.join(unknown)}")
    missing = sorted(set(required) - set(section))
    if missing:
        raise ValueError(f"missing config keys in {name!r}: {', '.join(missing)}")


def _want(name: str, key: str, value, kinds, allow_none: bool = False):
    if value is None:
        if allow_none:
            return None
        raise ValueError(f"config {name}.{key} must not be null")
    if kinds is bool:
        if not isinstance(value, bool):
            raise ValueError(f"config {name}.{key} must be a boolean")
        return value
    if kinds is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValueError(f"config {name}.{key} must be an integer")
        return value
    if kinds is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"config {name}.{key} must be a number")
        return float(value)
    if kinds is str:
        if not isinstance(value, str):
            raise ValueError(f"config {name}.{key} must be a string")
        return value
    raise AssertionError(kinds)


def _int_list(name: str, key: str, value) -> list:
    if not isinstance(value, list) or not value or any(
        isinstance(v, bool) or not isinstance(v, int) for v in value
    ):
        raise ValueError(f"config {name}.{key} must be a non-empty list of integers")
    return list(value)


_SYNTH_KEYS = ("width", "height", "channels", "n_classes", "n_per_class", "patch", "noise_sd")


def load_run_config(path) -> dict:
    """Parse and validate a run configuration; returns it with defaults filled."""
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise ValueError(f"config {path} is not valid JSON: {e}") from None
    _check_section("(top level)", raw, ("dataset", "network", "train", "imp", "output"),
                   ("dataset", "network", "output"))

    d = raw["dataset"]
    _check_section("dataset", d,
                   ("format", "paths", "fraction", "cluster_mode", "mapping_path",
                    "rotate_degrees", "translate_augment", "n_val", "seed", "synthetic"),
                   ("format", "n_val"))
    fmt = _want("dataset", "format", d["format"], str)
    if fmt not in ("idx", "cifar", "synthetic"):
        raise ValueError(f"dataset.format must be idx, cifar, or synthetic, got {fmt!r}")
    paths = d.get("paths", [])
    if not isinstance(paths, list) or any(not isinstance(p, str) for p in paths):
        raise ValueError("config dataset.paths must be a list of strings")
    if fmt == "idx" and len(paths) != 2:
        raise ValueError("idx format needs dataset.paths = [images, labels]")
    if fmt == "cifar" and len(paths) < 1:
        raise ValueError("cifar format needs at least one batch file in dataset.paths")
    cluster_mode = d.get("cluster_mode")
    if cluster_mode is not None and cluster_mode not in ("random", "semantic"):
        raise ValueError(f"dataset.cluster_mode must be random or semantic, got {cluster_mode!r}")
    if cluster_mode == "semantic" and not d.get("mapping_path"):
        raise ValueError("semantic clustering needs dataset.mapping_path")
    synthetic = d.get("synthetic")
    if fmt == "synthetic":
        if synthetic is None:
            raise ValueError("synthetic format needs a dataset.synthetic section")
        _check_section("dataset.synthetic", synthetic, _SYNTH_KEYS, _SYNTH_KEYS)
        patch = synthetic["patch"]
        if not isinstance(patch, list) or len(patch) != 4:
            raise ValueError("dataset.synthetic.patch must be [x, y, width, height]")
        synthetic = {
            "width": _want("synthetic", "width", synthetic["width"], int),
            "height": _want("synthetic", "height", synthetic["height"], int),
            "channels": _want("synthetic", "channels", synthetic["channels"], int),
            "n_classes": _want("synthetic", "n_classes", synthetic["n_classes"], int),
            "n_per_class": _want("synthetic", "n_per_class", synthetic["n_per_class"], int),
            "patch": [_want("synthetic", "patch", p, int) for p in patch],
            "noise_sd": _want("synthetic", "noise_sd", synthetic["noise_sd"], float),
        }
    elif synthetic is not None:
        raise ValueError("dataset.synthetic is only valid with format = synthetic")

    dataset = {
        "format": fmt,
        "paths": paths,
        "fraction": _want("dataset", "fraction", d.get("fraction", 1.0), float),
        "cluster_mode": cluster_mode,
        "mapping_path": _want("dataset", "mapping_path", d.get("mapping_path"), str, allow_none=True),
        "rotate_degrees": _want("dataset", "rotate_degrees", d.get("rotate_degrees"), float, allow_none=True),
        "translate_augment": _want("dataset", "translate_augment", d.get("translate_augment", False), bool),
        "n_val": _want("dataset", "n_val", d["n_val"], int),
        "seed": _want("dataset", "seed", d.get("seed", 0), int),
        "synthetic": synthetic,
    }

    net = raw["network"]
    _check_section("network", net, ("dims",), ("dims",))
    network = {"dims": check_dims(_int_list("network", "dims", net["dims"]))}

    t = raw.get("train", {})
    _check_section("train", t,
                   ("batch_size", "lr", "optimizer", "adam_beta1", "adam_beta2",
                    "adam_eps", "steps", "eval_every", "rewind_step", "seed"), ())
    train_cfg = TrainConfig(translate_augment=dataset["translate_augment"], **t)

    imp = raw.get("imp")
    if imp is not None:
        _check_section("imp", imp,
                       ("prune_fraction", "rewind_step", "stop_node_fraction",
                        "max_iterations", "layers_to_prune"), ("max_iterations",))
        if "layers_to_prune" in imp and imp["layers_to_prune"] is not None:
            imp["layers_to_prune"] = _int_list("imp", "layers_to_prune", imp["layers_to_prune"])
        ImpConfig(train_cfg=train_cfg, **imp)  # validate now, before any work

    out = raw["output"]
    _check_section("output", out, ("run_dir",), ("run_dir",))

    cfg = {
        "dataset": dataset,
        "network": network,
        "train": asdict(train_cfg),
        "imp": imp,
        "output": {"run_dir": _want("output", "run_dir", out["run_dir"], str)},
    }
    cfg["train"].pop("translate_augment")  # lives in the dataset section
    return cfg


def build_dataset(cfg: dict):
    """Apply the dataset pipeline: load, cluster, rotate, subsample, split."""
    d = cfg["dataset"]
    if d["format"] == "idx":
        ds = load_idx(d["paths"][0], d["paths"][1])
    elif d["format"] == "cifar":
        ds = load_cifar_binary(d["paths"])
    else:
        s = d["synthetic"]
        geom = ImageGeometry(s["width"], s["height"], s["channels"])
        ds = generate_synthetic(
            geom, s["n_per_class"], tuple(s["patch"]), s["n_classes"], s["noise_sd"], d["seed"]
        )
    if d["cluster_mode"] == "random":
        ds = cluster_classes(ds, "random")
    elif d["cluster_mode"] == "semantic":
        ds = cluster_classes(ds, "semantic", load_class_mapping(d["mapping_path"]))
    if d["rotate_degrees"] is not None:
        ds = rotate_images(ds, d["rotate_degrees"])
    if d["fraction"] != 1.0:
        ds = subsample(ds, d["fraction"], d["seed"])
    train_ds, val_ds = split_train_val(ds, d["n_val"], d["seed"])
    return train_ds, val_ds


def _check_dims_fit(cfg: dict, train_ds) -> None:
    dims = cfg["network"]["dims"]
    if dims[0] != train_ds.geometry.input_size:
        raise ValueError(
            f"network input width {dims[0]} != image size {train_ds.geometry.input_size}"
        )
    if dims[-1] != train_ds.n_classes:
        raise ValueError(f"network output width {dims[-1]} != {train_ds.n_classes} classes")


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(translate_augment=cfg["dataset"]["translate_augment"], **cfg["train"])


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    train_ds, val_ds = build_dataset(cfg)
    _check_dims_fit(cfg, train_ds)
    dims = cfg["network"]["dims"]
    train_cfg = _train_config(cfg)
    run_dir = Path(cfg["output"]["run_dir"])
    run_dir.mkdir(parents=True, exist_ok=True)
    params = init_params(dims, init_seed(train_cfg.seed))
    masks = MaskSet.full(dims)
    cfg0 = TrainConfig(**{**asdict(train_cfg), "seed": iteration_seed(train_cfg.seed, 0)})
    result = train(params, masks, train_ds, val_ds, cfg0, capture_rewind=True)
    reports.save_checkpoint(run_dir / "rewind.tkts", result.rewind.params)
    (run_dir / "iters/000").mkdir(parents=True, exist_ok=True)
    reports.save_masks(run_dir / "iters/000/masks.tkms", masks)
    reports.save_checkpoint(run_dir / "iters/000/params.tkts", result.params)
    reports.export_train_curve_csv(result.records, run_dir / "iters/000/train_curve.csv")
    per_layer, u = density(masks)
    reports.write_manifest(run_dir, {
        "format_version": reports.FORMAT_VERSION,
        "kind": "train",
        "pixel_layout": reports.PIXEL_LAYOUT,
        "created_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "dims": dims,
        "run_config": cfg,
        "rewind_file": "rewind.tkts",
        "stopped_reason": "",
        "iterations": [{
            "n": 0, "u_per_layer": per_layer, "u_global": u, "best_val": result.best_val,
            "mask_file": "iters/000/masks.tkms", "params_file": "iters/000/params.tkts",
            "curve_file": "iters/000/train_curve.csv",
        }],
    })
    print(f"trained {train_cfg.steps} steps; best validation accuracy: {result.best_val}")
    return 0


def cmd_imp(args) -> int:
    cfg = load_run_config(args.config)
    if cfg["imp"] is None:
        raise ValueError("config has no imp section")
    train_ds, val_ds = build_dataset(cfg)
    _check_dims_fit(cfg, train_ds)
    train_cfg = _train_config(cfg)
    imp_cfg = ImpConfig(train_cfg=train_cfg, **cfg["imp"])
    run = run_imp(cfg["network"]["dims"], train_ds, val_ds, imp_cfg,
                  cfg["output"]["run_dir"], run_config=cfg)
    last = run.iterations[-1]
    print(f"completed {len(run.iterations)} iterations ({run.stopped_reason}); "
          f"final density {last.u_global:.6f}, best validation accuracy {last.best_val}")
    return 0


def _load_iteration(run_dir: Path, iteration: int):
    manifest = reports.load_manifest(run_dir)
    for entry in manifest["iterations"]:
        if entry["n"] == iteration:
            return manifest, entry
    have = [e["n"] for e in manifest["iterations"]]
    raise ValueError(f"run has no iteration {iteration} (available: {have})")


def _manifest_geometry(manifest: dict) -> ImageGeometry:
    cfg = manifest.get("run_config")
    if not cfg:
        raise ValueError("manifest carries no run configuration")
    d = cfg["dataset"]
    if d["format"] == "synthetic":
        s = d["synthetic"]
        return ImageGeometry(s["width"], s["height"], s["channels"])
    if d["format"] == "cifar":
        return ImageGeometry(32, 32, 3)
    dims = manifest["dims"]
    side = int(round(dims[0] ** 0.5))
    if side * side != dims[0]:
        raise ValueError("cannot infer a square single-channel geometry from the manifest")
    return ImageGeometry(side, side, 1)


def _analysis_dir(run_dir: Path) -> Path:
    out = run_dir / "analysis"
    out.mkdir(exist_ok=True)
    return out


def _scaled_count_image(values: np.ndarray, geom: ImageGeometry, path) -> None:
    planes = values.reshape(geom.channels, geom.height, geom.width).astype(np.float64)
    peak = planes.max()
    if peak <= 0:
        bytes_ = np.zeros(planes.shape, dtype=np.uint8)
    else:
        bytes_ = np.floor(planes * (255.0 / peak) + 0.5).astype(np.uint8)
    reports._write_netpbm(path, bytes_)


def cmd_analyze(args) -> int:
    run_dir = Path(args.run_dir)
    manifest, entry = _load_iteration(run_dir, args.iteration)
    masks = reports.load_masks(run_dir / entry["mask_file"])
    out_dir = _analysis_dir(run_dir)
    stem = f"iter{args.iteration:03d}"
    obs = args.observable

    if obs == "conn":
        hist = connectivity(masks, args.layer, args.direction, args.bin_width)
        base = out_dir / f"{stem}_conn_l{args.layer}_{args.direction}"
        lines = ["node,count"] + [f"{j},{int(v)}" for j, v in enumerate(hist.values)]
        Path(f"{base}.csv").write_text("\n".join(lines) + "\n")
        lines = ["lower,upper,count"] + [f"{lo},{hi},{c}" for c, lo, hi in hist.bins]
        Path(f"{base}_hist.csv").write_text("\n".join(lines) + "\n")
        print(f"wrote {base}.csv")
        return 0

    geom = _manifest_geometry(manifest)
    if obs in ("locality", "locality-binned"):
        if not 1 <= args.layer <= len(masks.masks):
            raise ValueError(f"layer must lie in [1, {len(masks.masks)}]")
        matrix = masks.masks[0] if args.layer == 1 else effective_masks(masks.masks[: args.layer])
        tag = "same" if args.channel == "same" else "diff"
        if obs == "locality":
            lmap = locality_map(matrix, geom, args.channel)
            base = out_dir / f"{stem}_locality_l{args.layer}_{tag}"
            reports.export_locality_csv(lmap, f"{base}.csv")
            reports.export_locality_image(lmap, f"{base}.pgm")
            print(f"wrote {base}.csv")
            return 0
        edges = [int(e) for e in args.bin_edges.split(",")]
        maps = locality_map_binned(matrix, geom, args.channel, edges)
        for i, lmap in enumerate(maps):
            lo = edges[i]
            hi = edges[i + 1] if i + 1 < len(edges) else "inf"
            base = out_dir / f"{stem}_locality_l{args.layer}_{tag}_bin{i}_{lo}-{hi}"
            reports.export_locality_csv(lmap, f"{base}.csv")
            reports.export_locality_image(lmap, f"{base}.pgm")
        print(f"wrote {len(maps)} binned maps to {out_dir}")
        return 0

    if obs == "effmask":
        if not 2 <= args.layer <= len(masks.masks):
            raise ValueError(f"effmask needs layer in [2, {len(masks.masks)}]")
        mu = effective_masks(masks.masks[: args.layer])
        path = out_dir / f"{stem}_effmask_l{args.layer}.tkms"
        reports.save_masks(path, MaskSet([mu]))
        print(f"wrote {path}")
        return 0

    if obs == "pixmap":
        values = masks.masks[0].sum(axis=1, dtype=np.int64)
        base = out_dir / f"{stem}_pixmap"
        xs, ys, cs = [], [], []
        lines = ["x,y,c,count"]
        plane = geom.height * geom.width
        for i, v in enumerate(values):
            c, rem = divmod(i, plane)
            y, x = divmod(rem, geom.width)
            lines.append(f"{x},{y},{c},{int(v)}")
        Path(f"{base}.csv").write_text("\n".join(lines) + "\n")
        ext = "ppm" if geom.channels == 3 else "pgm"
        _scaled_count_image(values, geom, f"{base}.{ext}")
        print(f"wrote {base}.csv")
        return 0

    if obs == "binomial":
        if not 1 <= args.layer <= len(masks.masks):
            raise ValueError(f"layer must lie in [1, {len(masks.masks)}]")
        m = masks.masks[args.layer - 1]
        u = float(m.sum(dtype=np.int64)) / m.size
        n_prev = m.shape[0]
        k_max = args.k_max if args.k_max is not None else n_prev
        pmf = binomial_reference(n_prev, u, k_max)
        base = out_dir / f"{stem}_binomial_l{args.layer}"
        lines = ["k,pmf"] + [f"{k},{float(p)!r}" for k, p in enumerate(pmf)]
        Path(f"{base}.csv").write_text("\n".join(lines) + "\n")
        print(f"wrote {base}.csv")
        return 0

    raise AssertionError(obs)


def cmd_ablate(args) -> int:
    run_dir = Path(args.run_dir)
    manifest, entry = _load_iteration(run_dir, args.iteration)
    if not manifest.get("run_config"):
        raise ValueError("manifest carries no run configuration; cannot rebuild the dataset")
    masks = reports.load_masks(run_dir / entry["mask_file"])
    params = reports.load_checkpoint(run_dir / entry["params_file"])
    _, val_ds = build_dataset(manifest["run_config"])
    if len(val_ds) == 0:
        raise ValueError("run has no validation split to evaluate on")
    n_nodes = masks.masks[0].shape[1]
    if args.counts:
        counts = [int(c) for c in args.counts.split(",")]
    else:
        counts = sorted(set(int(c) for c in np.linspace(0, n_nodes, 11)))
    orders = ("ascending", "descending") if args.order == "both" else (args.order,)
    lines = ["order,removed,accuracy"]
    for order in orders:
        for removed, acc in ablation_curve(params, masks, val_ds, order, counts):
            lines.append(f"{order},{removed},{acc!r}")
    out = _analysis_dir(run_dir) / f"iter{args.iteration:03d}_ablation.csv"
    out.write_text("\n".join(lines) + "\n")
    print(f"wrote {out}")
    return 0


def cmd_export_masks(args) -> int:
    run_dir = Path(args.run_dir)
    manifest, entry = _load_iteration(run_dir, args.iteration)
    masks = reports.load_masks(run_dir / entry["mask_file"])
    geom = _manifest_geometry(manifest)
    if not 1 <= args.layer <= len(masks.masks):
        raise ValueError(f"layer must lie in [1, {len(masks.masks)}]")
    if args.weighted and args.layer != 1:
        raise ValueError("weighted export is only defined for layer 1")
    matrix = masks.masks[0] if args.layer == 1 else effective_masks(masks.masks[: args.layer])
    n_nodes = matrix.shape[1]
    if not 0 <= args.top <= n_nodes:
        raise ValueError(f"--top must lie in [0, {n_nodes}]")
    ranked = np.argsort(-matrix.sum(axis=0, dtype=np.int64), kind="stable")[: args.top]
    out_dir = _analysis_dir(run_dir)
    ext = "ppm" if geom.channels == 3 else "pgm"
    weights = None
    if args.weighted:
        weights = reports.load_checkpoint(run_dir / entry["params_file"]).weights[0]
    for rank, node in enumerate(ranked):
        base = out_dir / f"iter{args.iteration:03d}_mask_l{args.layer}_rank{rank:02d}_node{node:04d}"
        reports.export_mask_image(matrix[:, node], geom, f"{base}.{ext}")
        if weights is not None:
            reports.export_weighted_mask_image(
                weights[:, node] * matrix[:, node], geom,
                f"{base}_weighted.{ext}", mask_row=matrix[:, node],
            )
    print(f"wrote {len(ranked)} mask images to {out_dir}")
    return 0


def cmd_synth(args) -> int:
    cfg = load_run_config(args.config)
    d = cfg["dataset"]
    if d["format"] != "synthetic":
        raise ValueError("synth needs a config with dataset.format = synthetic")
    s = d["synthetic"]
    geom = ImageGeometry(s["width"], s["height"], s["channels"])
    ds = generate_synthetic(
        geom, s["n_per_class"], tuple(s["patch"]), s["n_classes"], s["noise_sd"], d["seed"]
    )
    if args.out_cifar:
        save_cifar_binary(ds, args.out_cifar)
        print(f"wrote {len(ds)} images to {args.out_cifar}")
    else:
        if not (args.out_images and args.out_labels):
            raise ValueError("need --out-images and --out-labels (or --out-cifar)")
        save_idx(ds, args.out_images, args.out_labels)
        print(f"wrote {len(ds)} images to {args.out_images}")
    return 0


def _map_labels(labels: np.ndarray, mode: str, mapping_path) -> np.ndarray:
    if mode == "random":
        return labels % 10
    mapping = load_class_mapping(mapping_path) if mapping_path else None
    if mapping is None:
        raise ValueError("semantic clustering needs --mapping")
    if labels.size and int(labels.max()) >= len(mapping.table):
        raise ValueError(f"mapping covers labels < {len(mapping.table)}, found {int(labels.max())}")
    return np.asarray(mapping.table, dtype=np.int64)[labels]


def cmd_cluster(args) -> int:
    if args.format == "idx":
        if not args.labels:
            raise ValueError("idx clustering needs --labels")
        labels = _read_idx(args.labels, IDX_LABEL_MAGIC, 1).astype(np.int64)
        mapped = _map_labels(labels, args.mode, args.mapping)
        with open(args.out, "wb") as f:
            f.write(struct.pack(">II", IDX_LABEL_MAGIC, labels.size))
            f.write(mapped.astype(np.uint8).tobytes())
    else:
        if not args.data:
            raise ValueError("cifar clustering needs --data")
        data = Path(args.data).read_bytes()
        if len(data) == 0 or len(data) % CIFAR_RECORD_BYTES != 0:
            raise ValueError(f"{args.data} is not a CIFAR binary batch")
        recs = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES).copy()
        recs[:, 0] = _map_labels(recs[:, 0].astype(np.int64), args.mode, args.mapping).astype(np.uint8)
        Path(args.out).write_bytes(recs.tobytes())
    print(f"wrote {args.out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ticketsift",
        description="Train, iteratively prune, and structurally analyze fully "
                    "connected image classifiers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="dense training run")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("imp", help="iterative magnitude pruning run (resumable)")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_imp)

    p = sub.add_parser("analyze", help="export observables of a stored iteration")
    p.add_argument("run_dir")
    p.add_argument("observable",
                   choices=["conn", "locality", "locality-binned", "effmask", "pixmap", "binomial"])
    p.add_argument("--iteration", type=int, required=True)
    p.add_argument("--layer", type=int, default=1)
    p.add_argument("--direction", choices=["in", "out"], default="in")
    p.add_argument("--channel", choices=["same", "different"], default="same")
    p.add_argument("--bin-width", type=int, default=1)
    p.add_argument("--bin-edges", default="0", help="comma-separated ascending lower bounds")
    p.add_argument("--k-max", type=int, default=None)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("ablate", help="accuracy under connectivity-ordered node removal")
    p.add_argument("run_dir")
    p.add_argument("--iteration", type=int, required=True)
    p.add_argument("--order", choices=["ascending", "descending", "both"], default="both")
    p.add_argument("--counts", default="", help="comma-separated removal counts")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-masks", help="netpbm images of the most connected nodes")
    p.add_argument("run_dir")
    p.add_argument("--iteration", type=int, required=True)
    p.add_argument("--layer", type=int, default=1)
    p.add_argument("--top", type=int, required=True)
    p.add_argument("--weighted", action="store_true")
    p.set_defaults(func=cmd_export_masks)

    p = sub.add_parser("synth", help="write the configured synthetic dataset to disk")
    p.add_argument("--config", required=True)
    p.add_argument("--out-images")
    p.add_argument("--out-labels")
    p.add_argument("--out-cifar")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("cluster", help="rewrite dataset labels into macro classes")
    p.add_argument("--format", choices=["idx", "cifar"], required=True)
    p.add_argument("--mode", choices=["random", "semantic"], required=True)
    p.add_argument("--labels", help="input IDX label file")
    p.add_argument("--data", help="input CIFAR binary batch")
    p.add_argument("--mapping", help="class mapping JSON for semantic mode")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cluster)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:  # one-line diagnostic, nonzero exit
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
