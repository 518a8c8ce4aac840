# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Synthetic point clouds, test-time augmentations and file formats."""

import dataclasses
import io
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from errors import (
    ConfigError,
    EmptyFileError,
    MalformedHeaderError,
    NonNumericTokenError,
    PointCloudFormatError,
    VertexCountMismatchError,
)
from literals import (
    BOX_HALF_EXTENTS,
    CLUSTER_JITTER,
    CLUSTER_OFFSET,
    CLUSTERED_CONVENTIONS,
    MIN_SHAPE_POINTS,
    NORMAL_NEIGHBORS,
    SHAPE_CLASSES,
    TORUS_RADII,
)
from utils import atomic_write, derive_seed

logger = logging.getLogger(__name__)


@dataclass
class PointCloud:
    """Points of one object with optional normals.

    Attrs:
        points: N x 3 coordinates.
        normals: optional N x 3 unit normals.
        label: class id, -1 when unknown.
        inlier_mask: True for original object points, False for injected
            outliers.
    """

    points: np.ndarray
    normals: Optional[np.ndarray] = None
    label: int = -1
    inlier_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        """Coerce arrays and fill the inlier mask."""
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64)
            self.normals = self.normals.reshape(-1, 3)
        if self.inlier_mask is None:
            self.inlier_mask = np.ones(len(self.points), dtype=bool)
        else:
            self.inlier_mask = np.asarray(self.inlier_mask, dtype=bool)

    def __len__(self):
        """Number of points."""
        return len(self.points)

    @property
    def features(self):
        """Per-point network input: xyz, followed by normals if present."""
        if self.normals is None:
            return self.points
        return np.hstack([self.points, self.normals])

    def replace(self, **changes):
        """Return a copy with some fields changed.

        Args:
            changes: field values to override.

        Returns:
            PointCloud.
        """
        return dataclasses.replace(self, **changes)

    def take(self, rows):
        """Return the cloud restricted to some rows.

        Args:
            rows: row indices or boolean mask.

        Returns:
            PointCloud.
        """
        normals = None if self.normals is None else self.normals[rows]
        return PointCloud(
            self.points[rows], normals, self.label, self.inlier_mask[rows]
        )

    def extend(self, points, normals=None):
        """Append injected (outlier) points.

        Args:
            points: M x 3 coordinates.
            normals: M x 3 normals, required when the cloud has normals.

        Returns:
            PointCloud whose new rows carry inlier_mask False.
        """
        merged = None
        if self.normals is not None:
            merged = np.vstack([self.normals, normals])
        mask = np.concatenate(
            [self.inlier_mask, np.zeros(len(points), dtype=bool)]
        )
        return PointCloud(
            np.vstack([self.points, points]), merged, self.label, mask
        )


@dataclass(frozen=True)
class AugmentationSpec:
    """Declarative test-time perturbation of a cloud.

    Attrs:
        outlier_ratio: uniform outliers added per original point.
        noise_sigma: standard deviation of the coordinate noise.
        dropout_ratio: share of points removed.
        clustered: optional surface_count / points_per_surface / offset.
        seed: base seed; every step derives its own stream.
    """

    outlier_ratio: float = 0.0
    noise_sigma: float = 0.0
    dropout_ratio: float = 0.0
    clustered: Optional[dict] = None
    seed: int = 0

    def __post_init__(self):
        """Validate ranges.

        Raises:
            ConfigError: naming the first field out of range.
        """
        if not 0 <= self.outlier_ratio <= 1:
            raise ConfigError("outlier_ratio", "must be in [0, 1]")
        if not self.noise_sigma >= 0:
            raise ConfigError("noise_sigma", "must be >= 0")
        if not 0 <= self.dropout_ratio < 1:
            raise ConfigError("dropout_ratio", "must be in [0, 1)")

    def apply(self, cloud):
        """Perturb a cloud.

        Dropout acts on the original points, then outliers and surfaces are
        injected, then every point is jittered.

        Args:
            cloud: PointCloud.

        Returns:
            augmented PointCloud.
        """
        if self.dropout_ratio > 0:
            cloud = random_dropout(
                cloud, self.dropout_ratio, derive_seed(self.seed, "dropout")
            )
        if self.outlier_ratio > 0:
            cloud = add_uniform_outliers(
                cloud, self.outlier_ratio, derive_seed(self.seed, "outliers")
            )
        if self.clustered:
            cloud = add_clustered_outliers(
                cloud,
                seed=derive_seed(self.seed, "clustered"),
                **self.clustered,
            )
        if self.noise_sigma > 0:
            cloud = add_gaussian_noise(
                cloud, self.noise_sigma, derive_seed(self.seed, "noise")
            )
        return cloud


def _unit_vectors(rng, n):
    """Draw isotropic unit vectors.

    Args:
        rng: numpy Generator.
        n: count.

    Returns:
        n x 3 array.
    """
    v = rng.standard_normal((n, 3))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    return v / np.where(norms == 0, 1.0, norms)


def _disk(rng, n, radius, z):
    """Uniform samples on a horizontal disk.

    Args:
        rng: numpy Generator.
        n: count.
        radius: disk radius.
        z: disk height.

    Returns:
        n x 3 array.
    """
    r = radius * np.sqrt(rng.random(n))
    phi = rng.uniform(0, 2 * np.pi, n)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi), np.full(n, z)])


def _sample_sphere(rng, n):
    return 0.5 * _unit_vectors(rng, n)


def _sample_box(rng, n):
    half = np.asarray(BOX_HALF_EXTENTS)
    # Face pairs perpendicular to x, y, z and their areas.
    areas = np.array(
        [half[1] * half[2], half[0] * half[2], half[0] * half[1]]
    )
    axis = rng.choice(3, size=n, p=areas / areas.sum())
    points = rng.uniform(-half, half, size=(n, 3))
    side = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    points[np.arange(n), axis] = side * half[axis]
    return points


def _sample_cylinder(rng, n):
    radius, height = 0.5, 1.0
    lateral = 2 * np.pi * radius * height
    caps = 2 * np.pi * radius**2
    on_side = rng.random(n) < lateral / (lateral + caps)
    points = np.empty((n, 3))
    k = int(on_side.sum())
    phi = rng.uniform(0, 2 * np.pi, k)
    points[on_side] = np.column_stack(
        [
            radius * np.cos(phi),
            radius * np.sin(phi),
            rng.uniform(-height / 2, height / 2, k),
        ]
    )
    m = n - k
    top = rng.random(m) < 0.5
    disks = _disk(rng, m, radius, 0.0)
    disks[:, 2] = np.where(top, height / 2, -height / 2)
    points[~on_side] = disks
    return points


def _sample_cone(rng, n):
    radius, height = 0.5, 1.0
    lateral = np.pi * radius * math.hypot(radius, height)
    base = np.pi * radius**2
    on_side = rng.random(n) < lateral / (lateral + base)
    points = np.empty((n, 3))
    k = int(on_side.sum())
    # Distance fraction from the apex; area grows linearly with it.
    t = np.sqrt(rng.random(k))
    phi = rng.uniform(0, 2 * np.pi, k)
    points[on_side] = np.column_stack(
        [
            radius * t * np.cos(phi),
            radius * t * np.sin(phi),
            height / 2 - height * t,
        ]
    )
    points[~on_side] = _disk(rng, n - k, radius, -height / 2)
    return points


def _sample_torus(rng, n):
    major, minor = TORUS_RADII
    chunks = []
    total = 0
    while total < n:
        theta = rng.uniform(0, 2 * np.pi, 2 * n)
        phi = rng.uniform(0, 2 * np.pi, 2 * n)
        keep = rng.random(2 * n) < (major + minor * np.cos(theta)) / (
            major + minor
        )
        theta, phi = theta[keep], phi[keep]
        ring = major + minor * np.cos(theta)
        chunks.append(
            np.column_stack(
                [ring * np.cos(phi), ring * np.sin(phi), minor * np.sin(theta)]
            )
        )
        total += len(theta)
    return np.vstack(chunks)[:n]


_SAMPLERS = {
    "sphere": _sample_sphere,
    "box": _sample_box,
    "cylinder": _sample_cylinder,
    "cone": _sample_cone,
    "torus": _sample_torus,
}


def generate_shape(shape_class, n_points, seed, label=None):
    """Sample points uniformly on the surface of a canonical shape.

    Every shape is centered at the origin inside [-0.5, 0.5]^3; the sphere
    has radius 0.5.

    Args:
        shape_class: one of sphere, box, cylinder, cone, torus.
        n_points: number of points, at least 8.
        seed: generator seed.
        label: class id; defaults to the position in SHAPE_CLASSES.

    Returns:
        PointCloud.

    Raises:
        ConfigError: in case of an unknown class.
        ValueError: in case too few points are requested.
    """
    if shape_class not in _SAMPLERS:
        raise ConfigError("class", f"unknown shape class {shape_class!r}")
    if n_points < MIN_SHAPE_POINTS:
        raise ValueError(
            f"need at least {MIN_SHAPE_POINTS} points, got {n_points}"
        )
    rng = np.random.default_rng(seed)
    points = _SAMPLERS[shape_class](rng, int(n_points))
    if label is None:
        label = SHAPE_CLASSES.index(shape_class)
    return PointCloud(points, label=label)


def normalize_points(points):
    """Center the bounding box and scale its longest side to one.

    Args:
        points: N x 3 coordinates.

    Returns:
        N x 3 coordinates inside [-0.5, 0.5]^3.
    """
    points = np.asarray(points, dtype=np.float64)
    lo, hi = points.min(axis=0), points.max(axis=0)
    extent = float(np.max(hi - lo))
    centered = points - (lo + hi) / 2
    if extent == 0:
        return centered
    return np.clip(centered / extent, -0.5, 0.5)


def rotate_z(cloud, angle):
    """Rotate a cloud (and its normals) about the vertical axis.

    Args:
        cloud: PointCloud.
        angle: radians.

    Returns:
        PointCloud.
    """
    c, s = math.cos(angle), math.sin(angle)
    rotation = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    normals = None if cloud.normals is None else cloud.normals @ rotation.T
    return cloud.replace(points=cloud.points @ rotation.T, normals=normals)


def build_dataset(classes, per_class, n_points, seed, scale_jitter=0.2):
    """Build the synthetic shape suite.

    Every instance gets an anisotropic scale in [1 - jitter, 1] and a random
    rotation about z, and is shrunk back into the unit cube if needed.

    Args:
        classes: shape class names; labels follow this order.
        per_class: clouds per class.
        n_points: points per cloud.
        seed: base seed.
        scale_jitter: maximum per-axis shrink.

    Returns:
        list of PointCloud, class-major.
    """
    clouds = []
    for label, name in enumerate(classes):
        for index in range(per_class):
            instance_seed = derive_seed(seed, name, index)
            rng = np.random.default_rng(instance_seed)
            cloud = generate_shape(name, n_points, instance_seed, label)
            scale = rng.uniform(1.0 - scale_jitter, 1.0, size=3)
            cloud = rotate_z(
                cloud.replace(points=cloud.points * scale),
                rng.uniform(0, 2 * np.pi),
            )
            reach = 2 * float(np.max(np.abs(cloud.points)))
            if reach > 1:
                cloud = cloud.replace(points=cloud.points / reach)
            clouds.append(cloud)
    logger.debug(f"built {len(clouds)} clouds for {list(classes)}")
    return clouds


def _count(value):
    """Round a non-negative real count robustly against float error."""
    return round(value, 9)


def add_uniform_outliers(cloud, ratio, seed):
    """Append points drawn uniformly in the unit cube.

    Args:
        cloud: PointCloud.
        ratio: outliers per point, in [0, 1].
        seed: generator seed.

    Returns:
        PointCloud with floor(ratio * N) new points.

    Raises:
        ValueError: in case the ratio is out of range.
    """
    if not 0 <= ratio <= 1:
        raise ValueError(f"outlier ratio must be in [0, 1], got {ratio}")
    k = math.floor(_count(ratio * len(cloud)))
    if k == 0:
        return cloud.replace()
    rng = np.random.default_rng(seed)
    points = rng.uniform(-0.5, 0.5, size=(k, 3))
    normals = None if cloud.normals is None else _unit_vectors(rng, k)
    return cloud.extend(points, normals)


def add_gaussian_noise(cloud, sigma, seed):
    """Jitter every point with isotropic zero-mean Gaussian noise.

    Args:
        cloud: PointCloud.
        sigma: standard deviation.
        seed: generator seed.

    Returns:
        PointCloud.

    Raises:
        ValueError: in case sigma is negative.
    """
    if sigma < 0:
        raise ValueError(f"noise sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return cloud.replace()
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, sigma, size=cloud.points.shape)
    return cloud.replace(points=cloud.points + noise)


def random_dropout(cloud, ratio, seed):
    """Remove a random share of points, keeping the others in order.

    Args:
        cloud: PointCloud.
        ratio: share removed, in [0, 1).
        seed: generator seed.

    Returns:
        PointCloud with ceil((1 - ratio) * N) points.

    Raises:
        ValueError: in case the ratio is out of range.
    """
    if not 0 <= ratio < 1:
        raise ValueError(f"dropout ratio must be in [0, 1), got {ratio}")
    n = len(cloud)
    keep = max(1, math.ceil(_count((1.0 - ratio) * n)))
    if keep >= n:
        return cloud.replace()
    rng = np.random.default_rng(seed)
    rows = np.sort(rng.choice(n, size=keep, replace=False))
    return cloud.take(rows)


def clustered_counts(level, convention, surface_count=2):
    """Points per surface for a clustered-outlier level.

    Args:
        level: the level as written in the config.
        convention: total (level is the sum over surfaces) or per-surface.
        surface_count: number of surfaces.

    Returns:
        points per surface.

    Raises:
        ConfigError: in case of an unknown convention.
    """
    if convention not in CLUSTERED_CONVENTIONS:
        raise ConfigError(
            "clustered-convention", f"unknown convention {convention!r}"
        )
    if convention == "total":
        return int(level) // surface_count
    return int(level)


def add_clustered_outliers(
    cloud,
    surface_count=2,
    points_per_surface=100,
    seed=0,
    offset=CLUSTER_OFFSET,
    jitter=CLUSTER_JITTER,
):
    """Add planar background patches next to the object.

    Each patch lies on a distinct face of the object's bounding box, pushed
    out by offset plus a half-normal jitter, and spans the box in the two
    other axes.

    Args:
        cloud: PointCloud.
        surface_count: number of patches, 1 to 6.
        points_per_surface: points sampled on each patch.
        seed: generator seed.
        offset: minimum distance from the bounding box.
        jitter: scale of the extra outward displacement.

    Returns:
        PointCloud with surface_count * points_per_surface new points.

    Raises:
        ValueError: in case of an invalid surface or point count.
    """
    if not 1 <= surface_count <= 6:
        raise ValueError(f"surface count must be in [1, 6]: {surface_count}")
    if points_per_surface < 0:
        raise ValueError("points per surface must be >= 0")
    if points_per_surface == 0:
        return cloud.replace()

    rng = np.random.default_rng(seed)
    original = cloud.points[cloud.inlier_mask]
    lo, hi = original.min(axis=0), original.max(axis=0)
    faces = rng.permutation(6)[:surface_count]

    points, normals = [], []
    for face in faces:
        axis, outward = divmod(int(face), 2)
        patch = rng.uniform(lo, hi, size=(points_per_surface, 3))
        shift = offset + np.abs(rng.normal(0.0, jitter, points_per_surface))
        if outward:
            patch[:, axis] = hi[axis] + shift
        else:
            patch[:, axis] = lo[axis] - shift
        normal = np.zeros(3)
        normal[axis] = 1.0 if outward else -1.0
        points.append(patch)
        normals.append(np.tile(normal, (points_per_surface, 1)))

    return cloud.extend(
        np.vstack(points),
        None if cloud.normals is None else np.vstack(normals),
    )


def _parse_row(tokens, path, line_no):
    """Convert coordinate tokens to floats.

    Raises:
        NonNumericTokenError: in case a token is not a number.
    """
    try:
        return [float(t) for t in tokens]
    except ValueError:
        raise NonNumericTokenError(
            path, line_no, f"non-numeric token in {' '.join(tokens)!r}"
        ) from None


def _finish(points, normals, path, normalize, label):
    """Assemble a loaded cloud."""
    points = np.asarray(points, dtype=np.float64)
    if not np.all(np.isfinite(points)):
        raise NonNumericTokenError(path, None, "coordinates must be finite")
    if normalize:
        points = normalize_points(points)
    cloud = PointCloud(points, normals, label)
    logger.debug(f"loaded {len(cloud)} points from {path}")
    return cloud


def load_xyz(path, normalize=True, label=-1):
    """Read a whitespace-delimited XYZ file.

    Every data line holds "x y z" or "x y z nx ny nz"; blank lines and lines
    starting with '#' are skipped.

    Args:
        path: file location.
        normalize: fit the points into the unit cube.
        label: class id of the cloud.

    Returns:
        PointCloud.

    Raises:
        EmptyFileError: in case the file holds no points.
        NonNumericTokenError: in case a token is not a number.
        PointCloudFormatError: in case rows have an unexpected width.
    """
    rows, width = [], None
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            tokens = line.split()
            if not tokens or tokens[0].startswith("#"):
                continue
            if len(tokens) not in (3, 6) or width not in (None, len(tokens)):
                raise PointCloudFormatError(
                    path,
                    line_no,
                    f"expected 3 or 6 values per row, got {len(tokens)}",
                )
            width = len(tokens)
            rows.append(_parse_row(tokens, path, line_no))
    if not rows:
        raise EmptyFileError(path, None, "no points")

    data = np.asarray(rows, dtype=np.float64)
    normals = data[:, 3:] if width == 6 else None
    return _finish(data[:, :3], normals, path, normalize, label)


def save_xyz(cloud, path):
    """Write a cloud as XYZ text, with normals when present.

    Values are written with 17 significant digits so they read back
    identically.

    Args:
        cloud: PointCloud.
        path: destination file.
    """
    buffer = io.StringIO()
    np.savetxt(buffer, cloud.features, fmt="%.17g")
    atomic_write(path, buffer.getvalue())


def _off_lines(path):
    """Yield (line number, tokens) of an OFF file without comments."""
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            tokens = line.split("#", 1)[0].split()
            if tokens:
                yield line_no, tokens


def load_off(path, normalize=True, label=-1):
    """Read the vertices of an OFF mesh; faces are ignored.

    The header is "OFF" followed by "V F E" on the same or the next line.

    Args:
        path: file location.
        normalize: fit the points into the unit cube.
        label: class id of the cloud.

    Returns:
        PointCloud with one point per vertex.

    Raises:
        EmptyFileError: in case the file or the vertex list is empty.
        MalformedHeaderError: in case the header is missing or invalid.
        NonNumericTokenError: in case a coordinate is not a number.
        VertexCountMismatchError: in case vertices are missing.
    """
    lines = _off_lines(path)
    first = next(lines, None)
    if first is None:
        raise EmptyFileError(path, None, "empty file")
    line_no, tokens = first
    if tokens[0] != "OFF":
        raise MalformedHeaderError(path, line_no, "missing OFF keyword")
    counts = tokens[1:]
    if not counts:
        nxt = next(lines, None)
        if nxt is None:
            raise MalformedHeaderError(path, line_no, "missing counts")
        line_no, counts = nxt
    if len(counts) < 2:
        raise MalformedHeaderError(
            path, line_no, f"expected V F E counts, got {' '.join(counts)!r}"
        )
    try:
        n_vertices, *_ = [int(c) for c in counts[:3]]
    except ValueError:
        raise MalformedHeaderError(
            path, line_no, f"invalid counts {' '.join(counts)!r}"
        ) from None
    if n_vertices < 0:
        raise MalformedHeaderError(path, line_no, "negative vertex count")
    if n_vertices == 0:
        raise EmptyFileError(path, line_no, "no vertices")

    rows = []
    for line_no, tokens in lines:
        if len(rows) == n_vertices:
            break
        if len(tokens) < 3:
            raise PointCloudFormatError(
                path, line_no, f"expected 3 coordinates, got {len(tokens)}"
            )
        rows.append(_parse_row(tokens[:3], path, line_no))
    if len(rows) != n_vertices:
        raise VertexCountMismatchError(
            path,
            None,
            f"header declares {n_vertices} vertices, found {len(rows)}",
        )
    return _finish(rows, None, path, normalize, label)


def save_off(cloud, path):
    """Write a cloud as a vertex-only OFF file.

    Args:
        cloud: PointCloud.
        path: destination file.
    """
    buffer = io.StringIO()
    buffer.write(f"OFF\n{len(cloud)} 0 0\n")
    np.savetxt(buffer, cloud.points, fmt="%.17g")
    atomic_write(path, buffer.getvalue())


def load_cloud(path, normalize=True, label=-1):
    """Read a cloud, picking the parser from the file suffix.

    Args:
        path: .xyz or .off file.
        normalize: fit the points into the unit cube.
        label: class id of the cloud.

    Returns:
        PointCloud.

    Raises:
        ValueError: in case of an unsupported suffix.
    """
    suffix = Path(path).suffix.lower()
    if suffix == ".off":
        return load_off(path, normalize, label)
    if suffix == ".xyz":
        return load_xyz(path, normalize, label)
    raise ValueError(f"unsupported point cloud format {suffix!r}")


def estimate_normals(cloud, k=NORMAL_NEIGHBORS):
    """Estimate unit normals from local covariance.

    The normal of a point is the eigenvector of the smallest eigenvalue of
    the covariance of its k nearest neighbors (itself included), flipped to
    point away from the cloud centroid.

    Args:
        cloud: PointCloud.
        k: neighborhood size.

    Returns:
        PointCloud with normals.

    Raises:
        ValueError: in case k is not in [3, N].
    """
    n = len(cloud)
    if k > n:
        raise ValueError(f"k={k} exceeds the number of points {n}")
    if k < 3:
        raise ValueError(f"k must be >= 3, got {k}")

    points = cloud.points
    _, neighbors = cKDTree(points).query(points, k=k)
    local = points[neighbors]
    centered = local - local.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered) / k
    _, vectors = np.linalg.eigh(cov)
    normals = vectors[:, :, 0]

    outward = points - points.mean(axis=0)
    flip = np.einsum("ni,ni->n", normals, outward) < 0
    normals[flip] *= -1
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)
    return cloud.replace(normals=normals)
