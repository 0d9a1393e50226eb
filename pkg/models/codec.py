"""
Linear latent codec: the fixed stand-in for an image autoencoder.

Grids are one-hot encoded per cell as [shape (5), color (8)], with the empty
cell as the zero vector, so the feature size is F = H * W * 13. A principal
component basis maps features to a D-dimensional latent, normalized per
dimension. Decoding is linear followed by per-cell argmax quantization, so
every finite latent decodes to a legal grid.
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from toyworld.entities import COLORS, SHAPES, GridImage
from utils.errors import ConfigurationError, RejectedInputError

CELL_FEATURES = len(SHAPES) + len(COLORS)
# An occupied cell needs a shape activation above this
EMPTY_THRESHOLD = 0.5
_ZERO_VARIANCE = 1e-8


def feature_dim(grid_h: int, grid_w: int) -> int:
    return grid_h * grid_w * CELL_FEATURES


def one_hot(img: GridImage) -> np.ndarray:
    """Flat float64 feature vector of one grid"""
    feats = np.zeros((img.grid_h, img.grid_w, CELL_FEATURES), dtype=np.float64)
    rows, cols = np.nonzero(img.shapes)
    feats[rows, cols, img.shapes[rows, cols].astype(np.int64) - 1] = 1.0
    feats[rows, cols, len(SHAPES) + img.colors[rows, cols].astype(np.int64) - 1] = 1.0
    return feats.reshape(-1)


def quantize(features: np.ndarray, grid_h: int, grid_w: int) -> GridImage:
    """Per-cell argmax onto the discrete alphabet"""
    cells = np.asarray(features, dtype=np.float64).reshape(grid_h, grid_w, CELL_FEATURES)
    shape_scores = np.concatenate([np.full((grid_h, grid_w, 1), EMPTY_THRESHOLD), cells[..., :len(SHAPES)]], axis=-1)
    shapes = np.argmax(shape_scores, axis=-1)
    colors = np.where(shapes > 0, np.argmax(cells[..., len(SHAPES):], axis=-1) + 1, 0)
    return GridImage(shapes, colors)


@dataclass(frozen=True)
class CodecParams:
    """Fitted codec. `components` is the F x D decode matrix; its transpose encodes."""

    mean: np.ndarray
    components: np.ndarray
    latent_mean: np.ndarray
    scale: np.ndarray
    grid_h: int
    grid_w: int

    @property
    def latent_dim(self) -> int:
        return int(self.components.shape[1])

    @property
    def feature_dim(self) -> int:
        return int(self.components.shape[0])

    @property
    def encode_matrix(self) -> np.ndarray:
        return self.components.T

    @property
    def decode_matrix(self) -> np.ndarray:
        return self.components

    def project(self, img: GridImage) -> np.ndarray:
        """Pre-normalization latent: an affine map of the one-hot features"""
        if (img.grid_h, img.grid_w) != (self.grid_h, self.grid_w):
            raise RejectedInputError(f"Codec expects {self.grid_h}x{self.grid_w} grids")
        return (one_hot(img) - self.mean) @ self.components

    def encode(self, img: GridImage) -> np.ndarray:
        return (self.project(img) - self.latent_mean) / self.scale

    def encode_many(self, images: Sequence[GridImage]) -> np.ndarray:
        if not images:
            return np.zeros((0, self.latent_dim))
        return np.stack([self.encode(img) for img in images])

    def decode(self, z: np.ndarray) -> GridImage:
        z = np.asarray(z, dtype=np.float64)
        if z.shape != (self.latent_dim,):
            raise RejectedInputError(f"Latent must have shape ({self.latent_dim},), got {z.shape}")
        if not np.all(np.isfinite(z)):
            raise RejectedInputError('Cannot decode a non-finite latent')
        features = self.mean + (z * self.scale + self.latent_mean) @ self.components.T
        return quantize(features, self.grid_h, self.grid_w)

    def round_trips(self, images: Iterable[GridImage]) -> bool:
        return all(self.decode(self.encode(img)) == img for img in images)

    def save(self, path: Path) -> None:
        np.savez(path, mean=self.mean, components=self.components, latent_mean=self.latent_mean,
                 scale=self.scale, grid=np.array([self.grid_h, self.grid_w]))

    @classmethod
    def load(cls, path: Path) -> 'CodecParams':
        with np.load(path) as data:
            grid_h, grid_w = (int(v) for v in data['grid'])
            return cls(data['mean'], data['components'], data['latent_mean'], data['scale'], grid_h, grid_w)


def _principal_axes(images: Sequence[GridImage]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Feature matrix, feature mean and all principal axes (columns, by decreasing variance)"""
    features = np.stack([one_hot(img) for img in images])
    mean = features.mean(axis=0)
    centered = features - mean
    covariance = centered.T @ centered / len(images)
    _, vectors = np.linalg.eigh(covariance)
    vectors = vectors[:, ::-1].copy()
    # Sign convention: the first nonzero loading of every axis is positive
    for j in range(vectors.shape[1]):
        nonzero = np.flatnonzero(np.abs(vectors[:, j]) > 1e-9)
        if nonzero.size and vectors[nonzero[0], j] < 0:
            vectors[:, j] = -vectors[:, j]
    return centered, mean, vectors


def _params_from_axes(centered: np.ndarray, mean: np.ndarray, vectors: np.ndarray, d: int,
                      grid_h: int, grid_w: int) -> CodecParams:
    components = vectors[:, :d].copy()
    projected = centered @ components
    latent_mean = projected.mean(axis=0)
    std = projected.std(axis=0)
    scale = np.where(std > _ZERO_VARIANCE, std, 1.0)
    return CodecParams(mean, components, latent_mean, scale, grid_h, grid_w)


def _check_corpus(corpus: Sequence[GridImage]) -> Tuple[int, int]:
    if not corpus:
        raise RejectedInputError('Codec fitting needs a non-empty corpus')
    dims = {(img.grid_h, img.grid_w) for img in corpus}
    if len(dims) != 1:
        raise RejectedInputError(f"Corpus mixes grid sizes {sorted(dims)}")
    return dims.pop()


def fit_codec(corpus: Sequence[GridImage], d: int) -> CodecParams:
    """
    Fit the principal-component codec

    Args:
        corpus: Non-empty list of equally sized grids
        d: Latent dimension, at most F

    Returns:
        Deterministic codec for (corpus order, d)
    """
    grid_h, grid_w = _check_corpus(corpus)
    f = feature_dim(grid_h, grid_w)
    if not 1 <= d <= f:
        raise ConfigurationError(f"Latent dimension {d} must lie in [1, {f}]")
    centered, mean, vectors = _principal_axes(corpus)
    return _params_from_axes(centered, mean, vectors, d, grid_h, grid_w)


def choose_latent_dim(corpus: Sequence[GridImage], fresh: Sequence[GridImage] = (),
                      start: int = 32) -> Tuple[int, CodecParams]:
    """
    Smallest doubling of `start` (capped at F) with exact round trips

    Args:
        corpus: Fitting corpus
        fresh: Extra grids the codec must also reproduce
        start: First dimension tried

    Returns:
        The chosen dimension and its codec
    """
    grid_h, grid_w = _check_corpus(corpus)
    f = feature_dim(grid_h, grid_w)
    centered, mean, vectors = _principal_axes(corpus)
    d = min(start, f)
    checks: List[GridImage] = list(corpus) + list(fresh)
    while True:
        params = _params_from_axes(centered, mean, vectors, d, grid_h, grid_w)
        if d == f or params.round_trips(checks):
            logger.info(f"Codec latent dimension {d} of {f} round-trips {len(checks)} grids")
            return d, params
        d = min(2 * d, f)


def encode(params: CodecParams, img: GridImage) -> np.ndarray:
    return params.encode(img)


def decode(params: CodecParams, z: np.ndarray) -> GridImage:
    return params.decode(z)
