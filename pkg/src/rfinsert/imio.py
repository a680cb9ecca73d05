"""Image file I/O: 8-bit PNG for color, 32-bit float PFM for depth/alpha."""

from __future__ import annotations

import numpy as np
from PIL import Image

__all__ = ["save_png", "load_png", "save_pfm", "load_pfm", "save_image"]


def save_png(image: np.ndarray, path) -> None:
    """Write an (h, w, 3) float image in [0, 1] (clamped) as 8-bit PNG."""
    arr = np.clip(np.asarray(image, dtype=float), 0.0, 1.0)
    if arr.ndim == 2:
        arr = np.repeat(arr[..., None], 3, axis=-1)
    data = np.round(arr * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path, format="PNG")


def load_png(path) -> np.ndarray:
    """Read a PNG into an (h, w, 3) float array in [0, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=float)
    return arr / 255.0


def save_pfm(values: np.ndarray, path) -> None:
    """Write a 2D array as grayscale PFM or (h, w, 3) as color PFM.

    Little-endian (scale header -1.0); rows stored bottom-up per the format.
    """
    arr = np.asarray(values, dtype="<f4")
    if arr.ndim == 2:
        tag = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        tag = b"PF"
    else:
        raise ValueError(f"PFM supports (h, w) or (h, w, 3), got shape {arr.shape}")
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(tag + b"\n")
        fh.write(f"{w} {h}\n".encode())
        fh.write(b"-1.0\n")
        fh.write(np.flipud(arr).tobytes())


def load_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        tag = fh.readline().strip()
        if tag not in (b"Pf", b"PF"):
            raise ValueError(f"{path} is not a PFM file")
        w, h = (int(v) for v in fh.readline().split())
        scale = float(fh.readline())
        channels = 3 if tag == b"PF" else 1
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(fh.read(w * h * channels * 4), dtype=dtype)
    if data.size != w * h * channels:
        raise ValueError(f"truncated PFM payload in {path}")
    arr = data.reshape(h, w, channels) if channels == 3 else data.reshape(h, w)
    return np.flipud(arr).astype(float)


def save_image(values: np.ndarray, path) -> None:
    """Dispatch on extension: .png -> 8-bit PNG, .pfm -> float PFM."""
    name = str(path).lower()
    if name.endswith(".png"):
        save_png(values, path)
    elif name.endswith(".pfm"):
        save_pfm(values, path)
    else:
        raise ValueError(f"unsupported image extension for {path}")
