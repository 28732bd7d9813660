"""Structural observables of pruned networks: connectivity counts, spatial
locality of surviving inputs, effective input masks of deep nodes, ablation
curves, the binomial baseline for random pruning, and activation probes.

Displacement grids are indexed grid[dy + H - 1, dx + W - 1] and count ordered
pairs of distinct surviving inputs feeding the same node, so every grid is
symmetric under d -> -d.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .datasets import ImageGeometry
from .network import MaskSet, ParamSet, ablate_nodes, accuracy, forward


@dataclass
class ConnectivityHistogram:
    """Per-node surviving-weight counts plus a binned view.

    bins is a list of (count, lower, upper) with upper exclusive; the bins
    tile [0, max], so the counts sum to the number of nodes.
    """

    values: np.ndarray
    bins: list
    layer: int
    direction: str


def connectivity(masks: MaskSet, layer: int, direction: str, bin_width: int = 1) -> ConnectivityHistogram:
    """Surviving-weight counts per node of ``layer``.

    direction "in" counts the incoming weights of hidden layer >= 1;
    direction "out" counts the outgoing weights into the next hidden layer
    and accepts layer 0 for the per-pixel map over the input plane.
    """
    n_masked = len(masks.masks)
    if direction == "in":
        if not 1 <= layer <= n_masked:
            raise ValueError(f"in-connectivity needs layer in [1, {n_masked}], got {layer}")
        values = masks.masks[layer - 1].sum(axis=0, dtype=np.int64)
    elif direction == "out":
        if not 0 <= layer <= n_masked - 1:
            raise ValueError(f"out-connectivity needs layer in [0, {n_masked - 1}], got {layer}")
        values = masks.masks[layer].sum(axis=1, dtype=np.int64)
    else:
        raise ValueError(f"direction must be 'in' or 'out', got {direction!r}")
    if bin_width < 1:
        raise ValueError("bin_width must be >= 1")
    top = int(values.max()) if values.size else 0
    edges = np.arange(0, top + bin_width + 1, bin_width)
    counts, _ = np.histogram(values, bins=edges)
    bins = [(int(c), int(lo), int(hi)) for c, lo, hi in zip(counts, edges[:-1], edges[1:])]
    return ConnectivityHistogram(values, bins, layer, direction)


@dataclass
class LocalityMap:
    """Displacement histogram over ordered pairs of surviving inputs."""

    grid: np.ndarray  # (2H-1, 2W-1) int64
    channel_mode: str  # "same" or "different"
    width: int
    height: int


def locality_map(mask_matrix: np.ndarray, geom: ImageGeometry, channel_mode: str) -> LocalityMap:
    """Count, per displacement d = (x'-x, y'-y), ordered pairs of distinct
    surviving inputs that feed the same node.

    mask_matrix is any binary (input_size, n_nodes) matrix: the first hidden
    layer's mask or an effective deep-layer mask. Mode "same" pairs inputs of
    the same channel (d = 0 is impossible there); mode "different" pairs
    inputs of different channels and allows d = 0. Cost is quadratic in the
    per-node surviving count.
    """
    if channel_mode not in ("same", "different"):
        raise ValueError(f"channel_mode must be 'same' or 'different', got {channel_mode!r}")
    mask_matrix = np.asarray(mask_matrix)
    if mask_matrix.ndim != 2 or mask_matrix.shape[0] != geom.input_size:
        raise ValueError(f"mask matrix must be ({geom.input_size}, n_nodes)")
    w, h = geom.width, geom.height
    gw, gh = 2 * w - 1, 2 * h - 1
    plane = w * h
    flat = np.zeros(gh * gw, dtype=np.int64)
    for j in range(mask_matrix.shape[1]):
        idx = np.flatnonzero(mask_matrix[:, j])
        if idx.size < 2:
            continue
        c, rem = np.divmod(idx.astype(np.int64), plane)
        y, x = np.divmod(rem, w)
        dx = x[None, :] - x[:, None]
        dy = y[None, :] - y[:, None]
        same_c = c[None, :] == c[:, None]
        if channel_mode == "same":
            pick = same_c.copy()
            np.fill_diagonal(pick, False)
        else:
            pick = ~same_c
        offsets = (dy[pick] + h - 1) * gw + (dx[pick] + w - 1)
        flat += np.bincount(offsets, minlength=gh * gw)
    return LocalityMap(flat.reshape(gh, gw), channel_mode, w, h)


def locality_map_binned(
    mask_matrix: np.ndarray, geom: ImageGeometry, channel_mode: str, bin_edges
) -> list:
    """One LocalityMap per connectivity bin.

    bin_edges are ascending lower bounds; bin i holds nodes with surviving
    count in [edges[i], edges[i+1]), the last bin is unbounded above. Nodes
    below edges[0] belong to no bin.
    """
    edges = [int(e) for e in bin_edges]
    if not edges or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError("bin_edges must be non-empty and strictly ascending")
    mask_matrix = np.asarray(mask_matrix)
    counts = mask_matrix.sum(axis=0, dtype=np.int64)
    maps = []
    for i, lo in enumerate(edges):
        hi = edges[i + 1] if i + 1 < len(edges) else None
        pick = counts >= lo if hi is None else (counts >= lo) & (counts < hi)
        maps.append(locality_map(mask_matrix[:, pick], geom, channel_mode))
    return maps


def effective_masks(mask_chain) -> np.ndarray:
    """Binary reachability from input pixels to the nodes of a deeper layer.

    Entry (i, j) is 1 iff some chain of surviving weights connects input i to
    node j through the given consecutive masks (boolean matrix product).
    Returns a uint8 (input_size, n_nodes) matrix.
    """
    if not mask_chain:
        raise ValueError("need at least one mask")
    acc = np.ascontiguousarray(mask_chain[0], dtype=np.int64)
    for m in mask_chain[1:]:
        m = np.asarray(m)
        if m.shape[0] != acc.shape[1]:
            raise ValueError(f"mask shapes do not chain: {acc.shape} then {m.shape}")
        acc = (acc @ m.astype(np.int64) > 0).astype(np.int64)
    return (acc > 0).astype(np.uint8)


def ablation_curve(params: ParamSet, masks: MaskSet, ds, order: str, step_counts) -> list:
    """Accuracy after zeroing the first-hidden-layer nodes in connectivity order.

    order "ascending" removes least-connected nodes first, "descending" most-
    connected first; ties go to the lower node index. No retraining happens;
    each entry of step_counts gives one (removed_count, accuracy) point.
    """
    if order not in ("ascending", "descending"):
        raise ValueError(f"order must be 'ascending' or 'descending', got {order!r}")
    incoming = masks.masks[0].sum(axis=0, dtype=np.int64)
    ranked = np.argsort(incoming if order == "ascending" else -incoming, kind="stable")
    n_nodes = incoming.size
    curve = []
    for count in step_counts:
        count = int(count)
        if not 0 <= count <= n_nodes:
            raise ValueError(f"cannot remove {count} of {n_nodes} nodes")
        ablated = ablate_nodes(masks, 1, ranked[:count])
        curve.append((count, accuracy(params, ablated, ds)))
    return curve


def binomial_reference(n_prev: int, u: float, k_max: int) -> np.ndarray:
    """Binomial(n_prev, u) pmf for k = 0..k_max, computed in log space.

    This is the connectivity distribution a uniformly random mask of density
    u would give a node with n_prev potential inputs.
    """
    if n_prev < 1:
        raise ValueError("n_prev must be >= 1")
    if not 0.0 <= u <= 1.0:
        raise ValueError(f"u must lie in [0, 1], got {u}")
    if k_max < 0:
        raise ValueError("k_max must be >= 0")
    pmf = np.zeros(k_max + 1)
    if u == 0.0:
        pmf[0] = 1.0
        return pmf
    if u == 1.0:
        if n_prev <= k_max:
            pmf[n_prev] = 1.0
        return pmf
    log_u = math.log(u)
    log_1mu = math.log1p(-u)
    lg_n = math.lgamma(n_prev + 1)
    for k in range(min(k_max, n_prev) + 1):
        log_pk = (
            lg_n - math.lgamma(k + 1) - math.lgamma(n_prev - k + 1)
            + k * log_u + (n_prev - k) * log_1mu
        )
        pmf[k] = math.exp(log_pk)
    return pmf


def top_activations(params: ParamSet, masks: MaskSet, ds, layer: int, node: int, k: int) -> np.ndarray:
    """Indices of the k dataset images that excite one hidden node the most.

    Eval-mode post-ReLU activation, sorted descending; ties broken by the
    lower dataset index.
    """
    if not 1 <= layer <= params.n_hidden:
        raise ValueError(f"layer must lie in [1, {params.n_hidden}], got {layer}")
    width = params.dims[layer]
    if not 0 <= node < width:
        raise ValueError(f"node must lie in [0, {width}), got {node}")
    n = len(ds)
    if not 0 <= k <= n:
        raise ValueError(f"k must lie in [0, {n}], got {k}")
    acts = np.empty(n, dtype=np.float64)
    chunk = 1000
    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        _, cache = forward(params, masks, ds.images[sl], mode="eval")
        acts[sl] = cache.activations[layer][:, node]
    return np.argsort(-acts, kind="stable")[:k]
