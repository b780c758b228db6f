"""Masked image completion with a learned t-product dictionary.

An ``H x W x C`` image is cut into ``h x w x C`` patches; every patch
becomes a lateral signal ``h x 1 x w x C`` and all patches of an image are
stacked along mode 2 into one ``h x n x w x C`` tensor.  The masked l1
problem is solved jointly for that tensor, the patch estimates are averaged
back into the image, and only missing pixels take reconstructed values.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError
from .prox_solvers import DEFAULT_WINDOW, ProxProblem, solve
from .tensor_core import fnorm

PERFECT = "perfect"


@dataclass
class MaskedImage:
    data: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=np.float64)
        if self.data.shape != self.mask.shape:
            raise ShapeError(f"mask {self.mask.shape} differs from image {self.data.shape}")

    @property
    def observed_fraction(self) -> float:
        return float(self.mask.mean())

    @property
    def observed(self) -> np.ndarray:
        return self.data * self.mask


def random_mask(dims, rho: float, seed) -> np.ndarray:
    """Binary mask with exactly ``round(rho * total)`` ones at seeded positions."""
    if not 0 < rho <= 1:
        raise ConfigError(f"observed fraction must lie in (0, 1], got {rho}")
    dims = tuple(int(d) for d in dims)
    total = math.prod(dims)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    mask = np.zeros(total)
    mask[rng.choice(total, size=int(round(rho * total)), replace=False)] = 1.0
    return mask.reshape(dims)


def _starts(n: int, size: int, stride: int) -> list:
    # a step longer than the window would leave pixels uncovered
    starts = list(range(0, n - size + 1, min(stride, size)))
    if starts[-1] != n - size:
        starts.append(n - size)
    return starts


@dataclass
class PatchGrid:
    """Patches of one image as a stacked ``h x n x w x C`` signal tensor."""

    signals: np.ndarray
    positions: list
    image_shape: tuple
    h: int
    w: int
    stride: int

    @property
    def count(self) -> int:
        return len(self.positions)

    def coverage(self) -> np.ndarray:
        cov = np.zeros(self.image_shape[:2])
        for r, c in self.positions:
            cov[r:r + self.h, c:c + self.w] += 1
        return cov

    def patch(self, k: int) -> np.ndarray:
        """Patch ``k`` as an ``h x 1 x w x C`` lateral signal."""
        return self.signals[:, k:k + 1]


def extract_patches(img, h: int, w: int, stride: int) -> PatchGrid:
    """Sliding-window patches; the last window in each direction is edge aligned.

    A ``stride`` above the patch size is capped at the patch size so that
    every pixel is covered.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        img = img[:, :, None]
    H, W = img.shape[:2]
    if h > H or w > W or h < 1 or w < 1:
        raise ConfigError(f"patch {h}x{w} does not fit image {H}x{W}")
    if stride < 1:
        raise ConfigError(f"stride must be positive, got {stride}")
    positions = [(r, c) for r in _starts(H, h, stride) for c in _starts(W, w, stride)]
    signals = np.stack([img[r:r + h, c:c + w] for r, c in positions], axis=1)
    return PatchGrid(signals, positions, img.shape, h, w, stride)


def reassemble(grid: PatchGrid, signals=None) -> np.ndarray:
    """Average (possibly modified) patch signals back into an image."""
    signals = grid.signals if signals is None else np.asarray(signals)
    if signals.shape != grid.signals.shape:
        raise ShapeError(f"signals {signals.shape} do not match grid {grid.signals.shape}")
    acc = np.zeros(grid.image_shape)
    for k, (r, c) in enumerate(grid.positions):
        acc[r:r + grid.h, c:c + grid.w] += signals[:, k]
    return acc / grid.coverage()[:, :, None]


def sample_patches(img, h: int, w: int, count: int, rng: np.random.Generator) -> list:
    """``count`` patches at uniformly random positions, as ``h x 1 x w x C`` signals."""
    img = np.asarray(img, dtype=np.float64)
    H, W = img.shape[:2]
    if h > H or w > W:
        raise ConfigError(f"patch {h}x{w} does not fit image {H}x{W}")
    rows = rng.integers(0, H - h + 1, size=count)
    cols = rng.integers(0, W - w + 1, size=count)
    return [img[r:r + h, c:c + w][:, None] for r, c in zip(rows, cols)]


def rmse(rec, ori) -> float:
    rec = np.asarray(rec, dtype=np.float64)
    ori = np.asarray(ori, dtype=np.float64)
    if rec.shape != ori.shape:
        raise ShapeError(f"{rec.shape} vs {ori.shape}")
    return fnorm(rec - ori) / math.sqrt(ori.size)


def psnr(rec, ori):
    """``10 log10((max(ori) / rmse)^2)``; :data:`PERFECT` when the images agree."""
    err = rmse(rec, ori)
    if err == 0:
        return PERFECT
    return 10.0 * math.log10((float(np.max(ori)) / err) ** 2)


def relative_error(rec, ori) -> float:
    return fnorm(np.asarray(rec) - np.asarray(ori)) / fnorm(ori)


def complete_image(img: MaskedImage, dictionary, lam: float, solver: str = "ista_aa",
                   stride: int | None = None, max_iter: int = 300, tol: float = 1e-8,
                   m: int = DEFAULT_WINDOW, lipschitz_factor: float = 1.0,
                   track_error: bool = False):
    """Fill the missing pixels of ``img``.

    Returns ``(image, metrics, trace)``.  Metrics compare against
    ``img.data``; with ``track_error`` the trace also records the relative
    error of the merged image after every iteration.
    """
    d = np.asarray(dictionary, dtype=np.float64)
    H, W, C = img.data.shape
    if d.ndim != 4 or d.shape[3] != C:
        raise ShapeError(f"dictionary {d.shape} is not an h x d x w x {C} tensor")
    h, w = d.shape[0], d.shape[2]
    if stride is None:
        stride = max(1, int(round(h / 2)))
    t0 = time.perf_counter()
    obs = extract_patches(img.observed, h, w, stride)
    msk = extract_patches(img.mask, h, w, stride)
    problem = ProxProblem(d, obs.signals, lam, mask=msk.signals,
                          lipschitz_factor=lipschitz_factor)
    known = img.mask == 1

    def merge(x):
        rec = reassemble(obs, problem.apply(x))
        return np.where(known, img.data, np.clip(rec, 0.0, 1.0))

    monitor = (lambda x: relative_error(merge(x), img.data)) if track_error else None
    x, trace = solve(problem, solver, None, max_iter, tol, m, monitor)
    out = merge(x)
    metrics = {
        "rmse": rmse(out, img.data),
        "psnr": psnr(out, img.data),
        "relative_error": relative_error(out, img.data),
        "observed_fraction": img.observed_fraction,
        "seconds": time.perf_counter() - t0,
    }
    return out, metrics, trace


def load_image(path) -> np.ndarray:
    """8-bit RGB image as floats in [0, 1]."""
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0


def save_image(path, img) -> None:
    from PIL import Image

    arr = np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(Path(path), format="PNG")
