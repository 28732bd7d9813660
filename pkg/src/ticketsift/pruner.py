"""Iterative magnitude pruning with weight rewinding.

Each pruning step removes, per layer, the floor(fraction * surviving) gated
weights of smallest trained magnitude (|w| ties broken by ascending flat row-
major index), so the surviving density follows u = (1 - fraction)^n up to the
accumulated floor rounding. After pruning, weights are rewound to the full
checkpoint captured early in the dense run and retrained under the new mask.
The loop stops once, in any pruned layer, more than stop_node_fraction of the
nodes have no incoming connection left.
"""

from __future__ import annotations

import datetime
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import reports
from .network import MaskSet, ParamSet, check_dims, init_params
from .trainer import Checkpoint, TrainConfig, train


@dataclass
class ImpConfig:
    train_cfg: TrainConfig
    prune_fraction: float = 0.3
    rewind_step: int = 1000
    stop_node_fraction: float = 0.8
    max_iterations: int = 20
    layers_to_prune: list | None = None  # hidden layer numbers (1-based); None = all

    def __post_init__(self) -> None:
        if not 0.0 < self.prune_fraction < 1.0:
            raise ValueError("prune_fraction must lie in (0, 1)")
        if not 0.0 < self.stop_node_fraction <= 1.0:
            raise ValueError("stop_node_fraction must lie in (0, 1]")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.rewind_step < 0:
            raise ValueError("rewind_step must be >= 0")


def prune_step(params: ParamSet, masks: MaskSet, fraction: float, layers=None) -> MaskSet:
    """Remove the floor(fraction * surviving) smallest-|w| surviving weights of
    each listed hidden layer (1-based; default all). Returns a new MaskSet."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    if layers is None:
        layers = range(1, len(masks.masks) + 1)
    out = masks.copy()
    for layer in layers:
        if not 1 <= layer <= len(masks.masks):
            raise ValueError(f"layer {layer} is not a prunable hidden layer")
        flat_mask = out.masks[layer - 1].ravel()
        surviving = np.flatnonzero(flat_mask)
        k = math.floor(fraction * surviving.size)
        if k == 0:
            continue
        magnitudes = np.abs(params.weights[layer - 1].ravel()[surviving])
        # stable sort on |w|: ties fall back to ascending flat index
        order = np.argsort(magnitudes, kind="stable")
        flat_mask[surviving[order[:k]]] = 0
    return out


def density(masks: MaskSet):
    """(per-layer densities, global density) of the gated weights."""
    per_layer = [float(m.sum(dtype=np.int64)) / m.size for m in masks.masks]
    total = sum(int(m.sum(dtype=np.int64)) for m in masks.masks)
    size = sum(m.size for m in masks.masks)
    return per_layer, total / size


def rewind(params: ParamSet, ckpt: Checkpoint, masks: MaskSet) -> ParamSet:
    """Full restore of the checkpoint state (weights, biases, batch norm).

    The mask is not touched; surviving weights come out bit-identical to the
    checkpoint.
    """
    if params.dims != ckpt.params.dims:
        raise ValueError(f"checkpoint dims {ckpt.params.dims} != network dims {params.dims}")
    if len(masks.masks) != len(params.weights) - 1:
        raise ValueError("mask count does not match the network")
    return ckpt.params.copy()


def stop_condition(masks: MaskSet, threshold: float = 0.8) -> bool:
    """True iff in any layer more than ``threshold`` of the nodes have no
    surviving incoming weight."""
    for m in masks.masks:
        dead = (m.sum(axis=0, dtype=np.int64) == 0).mean()
        if dead > threshold:
            return True
    return False


def random_prune(masks: MaskSet, fraction: float, seed: int, layers=None) -> MaskSet:
    """Like prune_step but removes uniformly random surviving weights."""
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    if layers is None:
        layers = range(1, len(masks.masks) + 1)
    rng = np.random.default_rng(seed)
    out = masks.copy()
    for layer in layers:
        if not 1 <= layer <= len(masks.masks):
            raise ValueError(f"layer {layer} is not a prunable hidden layer")
        flat_mask = out.masks[layer - 1].ravel()
        surviving = np.flatnonzero(flat_mask)
        k = math.floor(fraction * surviving.size)
        if k == 0:
            continue
        drop = rng.choice(surviving.size, size=k, replace=False)
        flat_mask[surviving[drop]] = 0
    return out


@dataclass
class ImpIteration:
    n: int
    u_per_layer: list
    u_global: float
    best_val: float | None
    masks: MaskSet
    mask_file: str
    params_file: str
    curve_file: str


@dataclass
class ImpRun:
    dims: list
    config: ImpConfig
    iterations: list
    rewind_ckpt: Checkpoint
    stopped_reason: str
    run_dir: Path


def init_seed(master_seed: int):
    """Seed material for weight initialization derived from the master seed."""
    return [int(master_seed), 0]


def iteration_seed(master_seed: int, n: int) -> int:
    """Per-iteration training seed; keeps resumed runs bit-identical."""
    return int(np.random.SeedSequence([int(master_seed), 1000 + int(n)]).generate_state(1)[0])


def _config_fingerprint(dims, cfg: ImpConfig) -> dict:
    d = asdict(cfg)
    d.pop("max_iterations")  # a completed run may be extended with more iterations
    d["dims"] = list(dims)
    return d


def _iteration_paths(n: int):
    stem = f"iters/{n:03d}"
    return f"{stem}/masks.tkms", f"{stem}/params.tkts", f"{stem}/train_curve.csv"


def _persist_iteration(run_dir: Path, it: ImpIteration, params: ParamSet, records) -> None:
    (run_dir / f"iters/{it.n:03d}").mkdir(parents=True, exist_ok=True)
    reports.save_masks(run_dir / it.mask_file, it.masks)
    reports.save_checkpoint(run_dir / it.params_file, params)
    reports.export_train_curve_csv(records, run_dir / it.curve_file)


def _write_run_manifest(run_dir: Path, dims, cfg: ImpConfig, iterations, stopped_reason, run_config) -> None:
    data = {
        "format_version": reports.FORMAT_VERSION,
        "kind": "imp",
        "pixel_layout": reports.PIXEL_LAYOUT,
        "created_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "dims": list(dims),
        "imp_config": asdict(cfg),
        "run_config": run_config,
        "rewind_file": "rewind.tkts",
        "stopped_reason": stopped_reason,
        "iterations": [
            {
                "n": it.n,
                "u_per_layer": it.u_per_layer,
                "u_global": it.u_global,
                "best_val": it.best_val,
                "mask_file": it.mask_file,
                "params_file": it.params_file,
                "curve_file": it.curve_file,
            }
            for it in iterations
        ],
    }
    reports.write_manifest(run_dir, data)
    reports.export_imp_curve_csv(
        [(it.n, it.u_global, it.best_val) for it in iterations], run_dir / "imp_curve.csv"
    )


def _resume_state(run_dir: Path, dims, cfg: ImpConfig):
    manifest = reports.load_manifest(run_dir)
    if manifest.get("kind") != "imp":
        raise ValueError(f"{run_dir} does not hold a pruning run")
    recorded = dict(manifest["imp_config"])
    recorded.pop("max_iterations", None)
    recorded["dims"] = manifest["dims"]
    if recorded != _config_fingerprint(dims, cfg):
        raise ValueError(f"existing run in {run_dir} was produced by a different configuration")
    iterations = []
    for entry in manifest["iterations"]:
        iterations.append(
            ImpIteration(
                n=entry["n"],
                u_per_layer=entry["u_per_layer"],
                u_global=entry["u_global"],
                best_val=entry["best_val"],
                masks=reports.load_masks(run_dir / entry["mask_file"]),
                mask_file=entry["mask_file"],
                params_file=entry["params_file"],
                curve_file=entry["curve_file"],
            )
        )
    rewind_ckpt = Checkpoint(cfg.rewind_step, reports.load_checkpoint(run_dir / manifest["rewind_file"]))
    return iterations, rewind_ckpt, manifest.get("stopped_reason", "")


def run_imp(dims, train_ds, val_ds, cfg: ImpConfig, run_dir, run_config=None) -> ImpRun:
    """Dense training followed by prune/rewind/retrain iterations.

    Every iteration's masks, final parameters, and training curve are written
    under run_dir, and manifest.json is updated after each one, so an
    interrupted run resumes from its last completed iteration (and a finished
    run can be extended by raising max_iterations).
    """
    dims = check_dims(dims)
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    master = cfg.train_cfg.seed

    if (run_dir / "manifest.json").is_file():
        iterations, rewind_ckpt, stopped_reason = _resume_state(run_dir, dims, cfg)
        if stopped_reason == "node_fraction" or len(iterations) > cfg.max_iterations:
            return ImpRun(dims, cfg, iterations, rewind_ckpt, stopped_reason, run_dir)
        final_params = reports.load_checkpoint(run_dir / iterations[-1].params_file)
    else:
        iterations = []
        params0 = init_params(dims, init_seed(master))
        masks0 = MaskSet.full(dims)
        cfg0 = replace(cfg.train_cfg, seed=iteration_seed(master, 0), rewind_step=cfg.rewind_step)
        result = train(params0, masks0, train_ds, val_ds, cfg0, capture_rewind=True)
        rewind_ckpt = result.rewind
        reports.save_checkpoint(run_dir / "rewind.tkts", rewind_ckpt.params)
        per_layer, u = density(masks0)
        mask_file, params_file, curve_file = _iteration_paths(0)
        it0 = ImpIteration(0, per_layer, u, result.best_val, masks0, mask_file, params_file, curve_file)
        _persist_iteration(run_dir, it0, result.params, result.records)
        iterations.append(it0)
        stopped_reason = "max_iterations"
        _write_run_manifest(run_dir, dims, cfg, iterations, stopped_reason, run_config)
        final_params = result.params

    for n in range(len(iterations), cfg.max_iterations + 1):
        masks = prune_step(final_params, iterations[-1].masks, cfg.prune_fraction, cfg.layers_to_prune)
        if stop_condition(masks, cfg.stop_node_fraction):
            stopped_reason = "node_fraction"
            _write_run_manifest(run_dir, dims, cfg, iterations, stopped_reason, run_config)
            break
        start = rewind(final_params, rewind_ckpt, masks)
        cfg_n = replace(cfg.train_cfg, seed=iteration_seed(master, n))
        result = train(start, masks, train_ds, val_ds, cfg_n)
        per_layer, u = density(masks)
        mask_file, params_file, curve_file = _iteration_paths(n)
        it = ImpIteration(n, per_layer, u, result.best_val, masks, mask_file, params_file, curve_file)
        _persist_iteration(run_dir, it, result.params, result.records)
        iterations.append(it)
        _write_run_manifest(run_dir, dims, cfg, iterations, stopped_reason, run_config)
        final_params = result.params

    return ImpRun(dims, cfg, iterations, rewind_ckpt, stopped_reason, run_dir)
