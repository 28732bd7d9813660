"""Binary checkpoint/mask files, netpbm image exports, CSV curves, and the
run-directory manifest.

Both binary formats are little-endian with a 4-byte magic and a u32 format
version. Checkpoints store float32 arrays row-major; mask files store each
layer bit-packed LSB-first, padded to a byte boundary, with a per-layer
surviving-weight count that is verified against the payload popcount on load.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .network import MaskSet, ParamSet

CHECKPOINT_MAGIC = b"TKTS"
MASK_MAGIC = b"TKMS"
FORMAT_VERSION = 1
PIXEL_LAYOUT = "index = c*H*W + y*W + x"


class _Reader:
    """Strict byte cursor: raises on truncation and on trailing garbage."""

    def __init__(self, data: bytes, path):
        self.data = data
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise ValueError(f"truncated file {self.path}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype, count: int) -> np.ndarray:
        raw = self.take(count * np.dtype(dtype).itemsize)
        return np.frombuffer(raw, dtype=dtype).copy()

    def finish(self) -> None:
        if self.pos != len(self.data):
            raise ValueError(f"trailing bytes in {self.path}")


def _check_header(r: _Reader, magic: bytes) -> None:
    got = r.take(4)
    if got != magic:
        raise ValueError(f"bad magic {got!r} in {r.path}, expected {magic!r}")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported format version {version} in {r.path}")


def save_checkpoint(path, params: ParamSet) -> None:
    """Write a ParamSet; arrays are stored as float32."""
    dims = params.dims
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", FORMAT_VERSION, len(params.weights))]
    parts.append(struct.pack(f"<{len(dims)}I", *dims))
    for l in range(len(params.weights)):
        parts.append(np.ascontiguousarray(params.weights[l], dtype=np.float32).tobytes())
        parts.append(np.ascontiguousarray(params.biases[l], dtype=np.float32).tobytes())
        if l < params.n_hidden:
            for group in (params.gamma, params.beta, params.running_mean, params.running_var):
                parts.append(np.ascontiguousarray(group[l], dtype=np.float32).tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> ParamSet:
    r = _Reader(Path(path).read_bytes(), path)
    _check_header(r, CHECKPOINT_MAGIC)
    (n_layers,) = r.unpack("<I")
    if n_layers < 2:
        raise ValueError(f"checkpoint {path} must hold at least 2 weight layers")
    dims = list(r.unpack(f"<{n_layers + 1}I"))
    weights, biases = [], []
    gamma, beta, r_mean, r_var = [], [], [], []
    for l in range(n_layers):
        a, b = dims[l], dims[l + 1]
        weights.append(r.array(np.float32, a * b).reshape(a, b))
        biases.append(r.array(np.float32, b))
        if l < n_layers - 1:
            gamma.append(r.array(np.float32, b))
            beta.append(r.array(np.float32, b))
            r_mean.append(r.array(np.float32, b))
            r_var.append(r.array(np.float32, b))
    r.finish()
    return ParamSet(weights, biases, gamma, beta, r_mean, r_var)


def save_masks(path, masks: MaskSet) -> None:
    """Write a MaskSet bit-packed (LSB-first, each layer padded to a byte)."""
    dims = [masks.masks[0].shape[0]] + [m.shape[1] for m in masks.masks]
    for i, m in enumerate(masks.masks):
        if m.shape != (dims[i], dims[i + 1]):
            raise ValueError("mask shapes do not chain into consecutive layers")
    parts = [MASK_MAGIC, struct.pack("<II", FORMAT_VERSION, len(masks.masks))]
    parts.append(struct.pack(f"<{len(dims)}I", *dims))
    for m in masks.masks:
        flat = m.ravel()
        parts.append(struct.pack("<Q", int(flat.sum(dtype=np.int64))))
        parts.append(np.packbits(flat, bitorder="little").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_masks(path) -> MaskSet:
    r = _Reader(Path(path).read_bytes(), path)
    _check_header(r, MASK_MAGIC)
    (n_masks,) = r.unpack("<I")
    if n_masks < 1:
        raise ValueError(f"mask file {path} holds no layers")
    dims = list(r.unpack(f"<{n_masks + 1}I"))
    masks = []
    for i in range(n_masks):
        size = dims[i] * dims[i + 1]
        (stored_count,) = r.unpack("<Q")
        packed = np.frombuffer(r.take((size + 7) // 8), dtype=np.uint8)
        flat = np.unpackbits(packed, count=size, bitorder="little")
        if int(flat.sum(dtype=np.int64)) != stored_count:
            raise ValueError(
                f"mask file {path} layer {i + 1}: popcount does not match stored count"
            )
        masks.append(flat.reshape(dims[i], dims[i + 1]))
    r.finish()
    return MaskSet(masks)


def _image_planes(row: np.ndarray, geom) -> np.ndarray:
    row = np.asarray(row)
    if row.shape != (geom.input_size,):
        raise ValueError(f"need a flat row of {geom.input_size} entries, got {row.shape}")
    return row.reshape(geom.channels, geom.height, geom.width)


def _write_netpbm(path, byte_planes: np.ndarray) -> None:
    c, h, w = byte_planes.shape
    magic = b"P6" if c == 3 else b"P5"
    header = magic + b"\n# pixel layout: " + PIXEL_LAYOUT.encode() + b"\n"
    header += f"{w} {h}\n255\n".encode()
    if c == 3:
        payload = byte_planes.transpose(1, 2, 0).tobytes()  # interleave RGB per pixel
    else:
        payload = byte_planes[0].tobytes()
    Path(path).write_bytes(header + payload)


def export_mask_image(row, geom, path) -> None:
    """Binary netpbm of one mask row: surviving -> 255, pruned -> 0.

    RGB geometry gives P6 with the three channel planes interleaved; single
    channel gives P5.
    """
    planes = _image_planes(row, geom)
    if planes.size and not np.isin(planes, (0, 1)).all():
        raise ValueError("mask row entries must be 0 or 1")
    _write_netpbm(path, (planes * 255).astype(np.uint8))


def export_weighted_mask_image(values, geom, path, mask_row=None) -> None:
    """Netpbm of a weight-times-mask row, affinely mapped min -> 0, max -> 255.

    The affine map is fitted over surviving entries (mask_row == 1, or the
    nonzero entries when mask_row is omitted); pruned entries get the byte the
    map assigns to 0, clipped to [0, 255]. A constant surviving value maps
    everything to 128.
    """
    planes = _image_planes(values, geom).astype(np.float64)
    if mask_row is None:
        surviving = planes != 0
    else:
        surviving = _image_planes(mask_row, geom) != 0
    if not surviving.any():
        _write_netpbm(path, np.full(planes.shape, 128, dtype=np.uint8))
        return
    lo = planes[surviving].min()
    hi = planes[surviving].max()
    if lo == hi:
        byte_planes = np.full(planes.shape, 128, dtype=np.uint8)
    else:
        mapped = (planes - lo) * (255.0 / (hi - lo))
        mapped[~surviving] = (0.0 - lo) * (255.0 / (hi - lo))
        byte_planes = np.clip(np.floor(mapped + 0.5), 0, 255).astype(np.uint8)
    _write_netpbm(path, byte_planes)


def export_locality_csv(lmap, path) -> None:
    """CSV of every displacement cell, header dx,dy,count, zeros included."""
    grid = lmap.grid if hasattr(lmap, "grid") else np.asarray(lmap)
    gh, gw = grid.shape
    half_h, half_w = (gh - 1) // 2, (gw - 1) // 2
    lines = ["dx,dy,count"]
    for iy in range(gh):
        for ix in range(gw):
            lines.append(f"{ix - half_w},{iy - half_h},{int(grid[iy, ix])}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_locality_csv(path) -> np.ndarray:
    """Parse export_locality_csv output back into the displacement grid."""
    lines = Path(path).read_text().strip().splitlines()
    if not lines or lines[0] != "dx,dy,count":
        raise ValueError(f"{path} is not a displacement CSV")
    rows = []
    for line in lines[1:]:
        dx, dy, count = line.split(",")
        rows.append((int(dx), int(dy), int(count)))
    if not rows:
        raise ValueError(f"{path} holds no displacement cells")
    half_w = max(abs(r[0]) for r in rows)
    half_h = max(abs(r[1]) for r in rows)
    grid = np.zeros((2 * half_h + 1, 2 * half_w + 1), dtype=np.int64)
    for dx, dy, count in rows:
        grid[dy + half_h, dx + half_w] = count
    return grid


def export_locality_image(lmap, path) -> None:
    """P5 grayscale of the displacement grid, scaled 0 -> 0, max -> 255."""
    grid = lmap.grid if hasattr(lmap, "grid") else np.asarray(lmap)
    peak = int(grid.max())
    if peak == 0:
        bytes_ = np.zeros(grid.shape, dtype=np.uint8)
    else:
        bytes_ = np.floor(grid * (255.0 / peak) + 0.5).astype(np.uint8)
    _write_netpbm(path, bytes_[None, :, :])


def export_train_curve_csv(records, path) -> None:
    """CSV step,train_loss,val_accuracy at full float precision."""
    lines = ["step,train_loss,val_accuracy"]
    for r in records:
        lines.append(f"{r.step},{float(r.train_loss)!r},{float(r.val_accuracy)!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def export_imp_curve_csv(rows, path) -> None:
    """CSV iteration,u,best_val; rows are (iteration, density, best_val|None)."""
    lines = ["iteration,u,best_val"]
    for n, u, best in rows:
        best_txt = "" if best is None else repr(float(best))
        lines.append(f"{int(n)},{float(u)!r},{best_txt}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_manifest(run_dir, data: dict) -> None:
    """Atomically write manifest.json describing a run directory."""
    run_dir = Path(run_dir)
    tmp = run_dir / "manifest.json.tmp"
    tmp.write_text(json.dumps(data, indent=2) + "\n")
    tmp.replace(run_dir / "manifest.json")


def load_manifest(run_dir) -> dict:
    """Read manifest.json and verify every referenced file exists."""
    run_dir = Path(run_dir)
    path = run_dir / "manifest.json"
    if not path.is_file():
        raise ValueError(f"no manifest.json in {run_dir}")
    data = json.loads(path.read_text())
    referenced = []
    if data.get("rewind_file"):
        referenced.append(data["rewind_file"])
    for it in data.get("iterations", []):
        for key in ("mask_file", "params_file", "curve_file"):
            if it.get(key):
                referenced.append(it[key])
    for rel in referenced:
        if not (run_dir / rel).is_file():
            raise ValueError(f"manifest references missing file {rel}")
    return data
