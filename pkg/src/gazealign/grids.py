"""Dense 2-D grids and attention tensors: normalization, resizing and file I/O.

Maps are plain ``float64`` numpy arrays of shape ``(height, width)``; attention
tensors are 4-D arrays indexed ``(layer, head, token, patch)``.

On-disk formats
---------------
GAM1  ``b"GAM1 <height> <width>\\n"`` then ``height*width`` float32 LE, row-major.
ATN1  ``b"ATN1 <layers> <heads> <tokens> <patches>\\n"`` then float32 LE.
PGM   binary P5, maxval 255.
PNG   8-bit, heatmaps colored through :data:`HEATMAP_COLORMAP`.
"""
from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np
from PIL import Image

EPS_FLOOR = 1e-7

# Piecewise-linear blue -> cyan -> yellow -> red, 256 entries (uint8 RGB).
COLORMAP_ANCHORS = (
    (0.0, (0, 0, 255)),
    (1 / 3, (0, 255, 255)),
    (2 / 3, (255, 255, 0)),
    (1.0, (255, 0, 0)),
)


def _build_colormap():
    pos = np.array([p for p, _ in COLORMAP_ANCHORS])
    rgb = np.array([c for _, c in COLORMAP_ANCHORS], dtype=np.float64)
    t = np.linspace(0.0, 1.0, 256)
    table = np.stack([np.interp(t, pos, rgb[:, k]) for k in range(3)], axis=1)
    table = np.floor(table + 0.5).astype(np.uint8)
    table.flags.writeable = False
    return table


HEATMAP_COLORMAP = _build_colormap()


def as_map(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"expected a non-empty 2-D map, got shape {m.shape}")
    return m


def minmax_normalize(m) -> np.ndarray:
    """Affinely rescale ``m`` to [0, 1]. A flat map becomes all zeros."""
    m = np.asarray(m, dtype=np.float64)
    lo, hi = m.min(), m.max()
    if hi == lo:
        return np.zeros_like(m)
    out = (m - lo) / (hi - lo)
    # pin the endpoints exactly so argmax/argmin cells hold 1 and 0
    out[m == hi] = 1.0
    out[m == lo] = 0.0
    return out


def dist_normalize(m, eps_floor: float = EPS_FLOOR) -> np.ndarray:
    """``(m + eps_floor) / sum(m + eps_floor)`` over the last two axes."""
    if not eps_floor > 0:
        raise ValueError("eps_floor must be positive")
    m = np.asarray(m, dtype=np.float64)
    if np.any(m < 0):
        raise ValueError("dist_normalize needs a non-negative map")
    shifted = m + eps_floor
    return shifted / shifted.sum(axis=(-2, -1), keepdims=True)


def _resize_axis(n_in, n_out):
    """Corner-aligned sample positions -> (lower index, upper index, weight)."""
    if n_out == 1:
        src = np.array([(n_in - 1) / 2.0])
    else:
        src = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.clip(np.floor(src).astype(int), 0, n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, src - lo


def bilinear_resize(m, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize with corner-aligned sampling (corners map onto corners)."""
    m = as_map(m)
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be positive, got {out_h}x{out_w}")
    if m.shape == (out_h, out_w):
        return m.copy()
    y0, y1, fy = _resize_axis(m.shape[0], out_h)
    x0, x1, fx = _resize_axis(m.shape[1], out_w)
    fy = fy[:, None]
    top = m[y0][:, x0] * (1 - fx) + m[y0][:, x1] * fx
    bot = m[y1][:, x0] * (1 - fx) + m[y1][:, x1] * fx
    out = top * (1 - fy) + bot * fy
    # interpolation weights are convex; clip rounding drift outside the source range
    return np.clip(out, m.min(), m.max())


def parse_size(text: str) -> tuple[int, int]:
    """``"480x640"`` -> ``(480, 640)``."""
    try:
        a, b = text.lower().split("x")
        return int(a), int(b)
    except ValueError:
        raise ValueError(f"bad size {text!r}, expected <rows>x<cols>") from None


# -- binary formats ---------------------------------------------------------

def _read_header(fh, magic, n_dims):
    line = fh.readline()
    parts = line.decode("ascii", errors="replace").split()
    if len(parts) != n_dims + 1 or parts[0] != magic:
        raise ValueError(f"not a {magic} file (header {line[:40]!r})")
    dims = tuple(int(p) for p in parts[1:])
    if any(d < 1 for d in dims):
        raise ValueError(f"{magic} header has non-positive dims {dims}")
    return dims


def _read_payload(fh, dims, path):
    count = int(np.prod(dims))
    data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != count:
        raise ValueError(f"{path}: expected {count} float32 values, found {data.size}")
    return data.astype(np.float64).reshape(dims)


def write_gam(path, m) -> None:
    m = as_map(m)
    header = f"GAM1 {m.shape[0]} {m.shape[1]}\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(m.astype("<f4").tobytes())


def read_gam(path) -> np.ndarray:
    with open(path, "rb") as fh:
        dims = _read_header(fh, "GAM1", 2)
        m = _read_payload(fh, dims, path)
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{path}: map contains non-finite values")
    return m


def write_atn(path, t) -> None:
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 4:
        raise ValueError(f"attention tensor must be 4-D, got shape {t.shape}")
    header = "ATN1 " + " ".join(str(d) for d in t.shape) + "\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(t.astype("<f4").tobytes())


def check_attention(t, where="attention tensor") -> None:
    """Warn when ``t`` breaks the sub-distribution invariants."""
    if np.any(t < 0) or np.any(t > 1 + 1e-6):
        warnings.warn(f"{where}: values outside [0, 1]", stacklevel=2)
    if np.any(t.sum(axis=-1) > 1 + 1e-4):
        warnings.warn(f"{where}: some token rows sum above 1 over image patches", stacklevel=2)


def read_atn(path) -> np.ndarray:
    with open(path, "rb") as fh:
        dims = _read_header(fh, "ATN1", 4)
        t = _read_payload(fh, dims, path)
    if not np.all(np.isfinite(t)):
        raise ValueError(f"{path}: tensor contains non-finite values")
    check_attention(t, str(path))
    return t


# -- images -----------------------------------------------------------------

def to_uint8(m, normalize=True) -> np.ndarray:
    m = as_map(m)
    if normalize:
        m = minmax_normalize(m) * 255.0
    return np.clip(np.floor(m + 0.5), 0, 255).astype(np.uint8)


def write_pgm(path, m, normalize=True) -> None:
    """Binary P5 PGM. With ``normalize`` values are min-max mapped to [0, 255];
    otherwise they are taken as grey levels and rounded/clipped."""
    img = to_uint8(m, normalize)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def _pgm_tokens(data):
    # header tokens may be separated by whitespace and '#' comments
    tokens, i = [], 2
    while len(tokens) < 3:
        while data[i:i + 1].isspace():
            i += 1
        if data[i:i + 1] == b"#":
            while data[i:i + 1] not in (b"\n", b""):
                i += 1
            continue
        j = i
        while data[j:j + 1] and not data[j:j + 1].isspace():
            j += 1
        tokens.append(int(data[i:j]))
        i = j
    return tokens, i + 1


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise ValueError(f"{path}: not a binary PGM (P5)")
    (w, h, maxval), start = _pgm_tokens(data)
    if maxval > 255:
        raise ValueError(f"{path}: only 8-bit PGM is supported")
    pix = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=start)
    return pix.reshape(h, w).astype(np.float64)


def colorize(m) -> np.ndarray:
    """Map values (min-max normalized) through the heatmap colormap -> HxWx3 uint8."""
    return HEATMAP_COLORMAP[to_uint8(m, normalize=True)]


def overlay(heat_rgb, gray, alpha: float) -> np.ndarray:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("overlay alpha must be in [0, 1]")
    base = np.repeat(np.asarray(gray, dtype=np.float64)[..., None], 3, axis=2)
    out = alpha * heat_rgb.astype(np.float64) + (1 - alpha) * base
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def write_png(path, rgb_or_gray) -> None:
    arr = np.asarray(rgb_or_gray)
    if arr.dtype != np.uint8:
        raise ValueError("write_png expects uint8 pixels")
    Image.fromarray(arr).save(path, format="PNG")


def read_png(path) -> np.ndarray:
    """Returns HxW (grey) or HxWx3 (color) float64 in [0, 255]."""
    with Image.open(path) as im:
        if im.mode in ("L", "I;16", "I", "1"):
            return np.asarray(im.convert("L"), dtype=np.float64)
        return np.asarray(im.convert("RGB"), dtype=np.float64)


def load_map(path) -> np.ndarray:
    """Read a single plane from ``.gam``, ``.pgm`` or ``.png`` (luma for color)."""
    suffix = Path(path).suffix.lower()
    if suffix == ".gam":
        return read_gam(path)
    if suffix == ".pgm":
        return read_pgm(path)
    if suffix == ".png":
        img = read_png(path)
        if img.ndim == 3:
            img = img @ np.array([0.299, 0.587, 0.114])
        return img
    raise ValueError(f"unsupported map file type: {path}")


def save_map(path, m) -> None:
    """Write by extension: GAM1, min-max PGM, or colormapped PNG heatmap."""
    suffix = Path(path).suffix.lower()
    if suffix == ".gam":
        write_gam(path, m)
    elif suffix == ".pgm":
        write_pgm(path, m)
    elif suffix == ".png":
        write_png(path, colorize(m))
    else:
        raise ValueError(f"unsupported output type: {path}")
