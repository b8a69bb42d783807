"""Point cloud and box primitives shared by every other module."""

import logging
from dataclasses import dataclass

import numpy as np
import trimesh
from scipy.spatial import ConvexHull, cKDTree
from scipy.spatial.distance import cdist
from scipy.spatial.transform import Rotation

try:
    from scipy.spatial import QhullError
except ImportError:  # scipy < 1.8
    from scipy.spatial.qhull import QhullError

from . import autodiff as ad
from .util import InputError

log = logging.getLogger(__name__)

MIN_HALF_EXTENT = 1e-6
BRUTE_FORCE_LIMIT = 4096
_CHUNK = 1024

MOVING = 1
BASE = 0


class GeometryError(InputError):
    """Degenerate or empty geometry."""


@dataclass(frozen=True)
class PointCloud:
    """
    Points in model units with an optional per-point moving/base flag.

    Args:
        points: (N, 3) array.
        flags: optional (N,) array of MOVING / BASE.
    """
    points: np.ndarray
    flags: np.ndarray = None

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        object.__setattr__(self, 'points', points)
        if self.flags is not None:
            flags = np.asarray(self.flags, dtype=int).reshape(-1)
            if len(flags) != len(points):
                raise GeometryError('{} flags for {} points'.format(len(flags), len(points)))
            object.__setattr__(self, 'flags', flags)

    def __len__(self):
        return len(self.points)

    @property
    def centroid(self):
        return self.points.mean(axis=0)


@dataclass(frozen=True)
class OrientedBox:
    """A box with orthonormal right-handed axes stored as rows."""
    center: np.ndarray
    axes: np.ndarray
    half_extents: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, 'center', np.asarray(self.center, dtype=float).reshape(3))
        object.__setattr__(self, 'axes', np.asarray(self.axes, dtype=float).reshape(3, 3))
        object.__setattr__(self, 'half_extents',
                           np.asarray(self.half_extents, dtype=float).reshape(3))

    @property
    def volume(self):
        return float(np.prod(2 * self.half_extents))

    def face_centers(self):
        """Centers of the faces ordered +x, -x, +y, -y, +z, -z of the box frame."""
        out = []
        for i in range(3):
            offset = self.axes[i] * self.half_extents[i]
            out += [self.center + offset, self.center - offset]
        return np.array(out)

    def to_local(self, points):
        return (np.asarray(points, dtype=float) - self.center) @ self.axes.T

    def contains(self, points, tol=1e-9):
        local = self.to_local(points)
        return np.all(np.abs(local) <= self.half_extents + tol, axis=-1)

    def to_dict(self):
        return {
            'center': self.center.tolist(),
            'axes': self.axes.tolist(),
            'half_extents': self.half_extents.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(data['center'], data['axes'], data['half_extents'])


def as_points(cloud):
    """
    Accept a PointCloud, a Variable or an array-like of 3-vectors.

    A (K, N, 3) array is kept as a batch of K clouds.
    """
    if isinstance(cloud, PointCloud):
        return cloud.points
    if ad.is_variable(cloud):
        return cloud
    points = np.asarray(cloud, dtype=float)
    if points.ndim == 3:
        return points
    return points.reshape(-1, 3)


def _require_points(points, what='cloud'):
    if ad.value_of(points).size == 0:
        raise GeometryError('empty {}'.format(what))


def to_trimesh(mesh):
    """Build a trimesh from a Trimesh, a (vertices, faces) pair or (T, 3, 3) triangles."""
    if isinstance(mesh, trimesh.Trimesh):
        return mesh
    if isinstance(mesh, tuple) and len(mesh) == 2:
        vertices, faces = mesh
        return trimesh.Trimesh(np.asarray(vertices, dtype=float),
                               np.asarray(faces, dtype=int), process=False)
    triangles = np.asarray(mesh, dtype=float).reshape(-1, 3, 3)
    return trimesh.Trimesh(**trimesh.triangles.to_kwargs(triangles), process=False)


def sample_mesh_surface(mesh, n, seed):
    """
    Sample n points uniformly by area from a triangle mesh.

    Raises:
        GeometryError: n < 1 or every triangle has zero area.
    """
    if n < 1:
        raise GeometryError('sample count must be >= 1')
    mesh = to_trimesh(mesh)
    if len(mesh.faces) == 0 or not mesh.area > 0:
        raise GeometryError('degenerate surface')
    points, _ = trimesh.sample.sample_surface(mesh, int(n), seed=int(seed))
    return PointCloud(points)


def resample(points, n, seed):
    """Pick n points, without replacement when enough are available."""
    points = np.asarray(points, dtype=float)
    _require_points(points)
    rng = np.random.default_rng(seed)
    replace = len(points) < n
    return points[rng.choice(len(points), size=n, replace=replace)]


def nearest_neighbors(a, b):
    """
    Distance from every point of a to its nearest point of b.

    Brute force below BRUTE_FORCE_LIMIT points, a k-d tree above. Both paths
    recompute the distance from the chosen pair with the same formula.

    Returns:
        tuple: (distances, indices into b)
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    _require_points(a)
    _require_points(b)
    if max(len(a), len(b)) < BRUTE_FORCE_LIMIT:
        idx = np.concatenate([cdist(a[i:i + _CHUNK], b).argmin(axis=1)
                              for i in range(0, len(a), _CHUNK)])
    else:
        _, idx = cKDTree(b).query(a)
    dist = np.sqrt(np.sum((a - b[idx]) ** 2, axis=1))
    return dist, idx


def chamfer(a, b):
    """
    Bidirectional chamfer distance: mean nearest distance a to b plus b to a.

    Nearest-neighbor pairs are chosen on values and held fixed while
    differentiating, so gradients flow through the selected pairs only.
    Either cloud may be a (K, N, 3) batch; the result then has shape (K,).
    """
    a, b = as_points(a), as_points(b)
    _require_points(a)
    _require_points(b)
    av, bv = ad.value_of(a), ad.value_of(b)
    if av.ndim == 2 and bv.ndim == 2:
        _, ab = nearest_neighbors(av, bv)
        _, ba = nearest_neighbors(bv, av)
        d_ab = ad.norm(ad.sub(a, ad.getitem(b, ab)))
        d_ba = ad.norm(ad.sub(b, ad.getitem(a, ba)))
        return ad.add(ad.mean(d_ab), ad.mean(d_ba))

    k = av.shape[0] if av.ndim == 3 else bv.shape[0]
    if av.ndim == 2:
        a = ad.add(a, np.zeros((k, 1, 1)))
        av = ad.value_of(a)
    if bv.ndim == 2:
        b = ad.add(b, np.zeros((k, 1, 1)))
        bv = ad.value_of(b)
    rows = np.arange(k)[:, None]
    ab = np.stack([nearest_neighbors(av[i], bv[i])[1] for i in range(k)])
    ba = np.stack([nearest_neighbors(bv[i], av[i])[1] for i in range(k)])
    d_ab = ad.norm(ad.sub(a, ad.getitem(b, (rows, ab))))
    d_ba = ad.norm(ad.sub(b, ad.getitem(a, (rows, ba))))
    return ad.add(ad.mean(d_ab, axis=-1), ad.mean(d_ba, axis=-1))


def diag(cloud):
    """Length of the axis-aligned bounding-box diagonal, per cloud of a batch."""
    points = as_points(cloud)
    _require_points(points)
    return ad.norm(ad.sub(ad.amax(points, axis=-2), ad.amin(points, axis=-2)))


def aabb(points):
    points = np.asarray(as_points(points))
    return points.min(axis=0), points.max(axis=0)


def aabb_volume(points):
    lo, hi = aabb(points)
    return float(np.prod(hi - lo))


def principal_axes(cloud):
    """
    Covariance eigenvectors ordered by descending eigenvalue.

    Each axis has a positive leading component. Axes whose eigenvalues
    differ by less than 1e-9 are ordered by descending lexicographic order.

    Returns:
        (3, 3) array, one axis per row.
    """
    points = np.asarray(as_points(cloud))
    _require_points(points)
    centered = points - points.mean(axis=0)
    cov = centered.T @ centered / len(points)
    values, vectors = np.linalg.eigh(cov)
    values, vectors = values[::-1], vectors[:, ::-1].T.copy()
    for i, v in enumerate(vectors):
        lead = v[np.flatnonzero(np.abs(v) > 1e-12)[0]]
        if lead < 0:
            vectors[i] = -v

    order = []
    i = 0
    while i < 3:
        j = i + 1
        while j < 3 and values[j - 1] - values[j] < 1e-9:
            j += 1
        group = sorted(range(i, j), key=lambda k: tuple(vectors[k]), reverse=True)
        order += group
        i = j
    return vectors[order]


def _right_handed(frame):
    frame = np.array(frame, dtype=float)
    if np.linalg.det(frame) < 0:
        frame[2] = -frame[2]
    return frame


def _box_in_frame(points, frame):
    local = points @ frame.T
    lo, hi = local.min(axis=0), local.max(axis=0)
    half = np.maximum((hi - lo) / 2, MIN_HALF_EXTENT)
    center = ((lo + hi) / 2) @ frame
    return OrientedBox(center, frame, half)


def _hull_frames(points, hull, max_faces=24):
    """Frames with one axis along a hull face normal and one along a 2D hull edge."""
    normals = hull.equations[:, :3]
    areas = np.zeros(len(normals))
    for k, simplex in enumerate(hull.simplices):
        p0, p1, p2 = points[simplex]
        areas[k] = np.linalg.norm(np.cross(p1 - p0, p2 - p0))
    _, first = np.unique(np.round(normals, 6), axis=0, return_index=True)
    first = sorted(first, key=lambda k: -areas[k])[:max_faces]

    frames = []
    for k in first:
        n = normals[k] / np.linalg.norm(normals[k])
        helper = np.eye(3)[np.argmin(np.abs(n))]
        u = np.cross(n, helper)
        u /= np.linalg.norm(u)
        w = np.cross(n, u)
        flat = np.stack([points @ u, points @ w], axis=1)
        try:
            ring = flat[ConvexHull(flat).vertices]
        except (QhullError, ValueError):
            continue
        edges = np.roll(ring, -1, axis=0) - ring
        for e in edges:
            length = np.linalg.norm(e)
            if length < 1e-12:
                continue
            e = e / length
            a = e[0] * u + e[1] * w
            frames.append(_right_handed([n, a, np.cross(n, a)]))
    return frames


def min_volume_obb(cloud):
    """
    Approximate minimum-volume oriented bounding box.

    Candidate frames are the principal axes, the world axes and frames
    built on convex hull faces; the smallest is refined by a grid of
    rotations of +-15 degrees in 3 degree steps about each of its axes.
    Degenerate extents are clamped to MIN_HALF_EXTENT.
    """
    points = np.asarray(as_points(cloud), dtype=float)
    _require_points(points)

    frames = [_right_handed(principal_axes(points)), np.eye(3)]
    try:
        hull = ConvexHull(points)
        hull_points = points[hull.vertices]
        frames += _hull_frames(hull_points, ConvexHull(hull_points))
    except (QhullError, ValueError):
        hull_points = points

    best = min((_box_in_frame(hull_points, f) for f in frames), key=lambda b: b.volume)

    steps = np.radians(np.arange(-15, 16, 3))
    grid = np.array(np.meshgrid(steps, steps, steps, indexing='ij')).reshape(3, -1).T
    rotations = Rotation.from_euler('xyz', grid).as_matrix()
    for frame in rotations @ best.axes:
        box = _box_in_frame(hull_points, _right_handed(frame))
        if box.volume < best.volume - 1e-12:
            best = box
    return best


def signed_distance(points, center, axes, half_extents):
    """
    Exact signed distance of points to a box, negative inside.

    Works on arrays and variables; points may be (3,) or (N, 3), axes are
    the box axes as rows. A batch of K boxes, center (K, 3) with axes
    (K, 3, 3) or (3, 3), gives distances of shape (K, N).
    """
    single = np.ndim(ad.value_of(points)) == 1
    if single:
        points = ad.reshape(points, (1, 3))
    if np.ndim(ad.value_of(center)) == 2:
        center = ad.expand(center, -2)
    ndim = np.ndim(ad.value_of(axes))
    frame = ad.transpose(axes, tuple(range(ndim - 2)) + (ndim - 1, ndim - 2))
    local = ad.matmul(ad.sub(points, center), frame)
    q = ad.sub(ad.absolute(local), half_extents)
    outside = ad.norm(ad.maximum(q, 0.0))
    inside = ad.minimum(ad.amax(q, axis=-1), 0.0)
    out = ad.add(outside, inside)
    if single:
        return ad.getitem(out, (Ellipsis, 0))
    return out


def box_sdf(p, box):
    """Signed distance of one point to an OrientedBox."""
    return float(signed_distance(np.asarray(p, dtype=float), box.center,
                                 box.axes, box.half_extents))


def contact_indices(a, b, m):
    """Indices of the m points of a closest to b and of b closest to a, nearest first."""
    a, b = np.asarray(as_points(a)), np.asarray(as_points(b))
    d_a, _ = nearest_neighbors(a, b)
    d_b, _ = nearest_neighbors(b, a)
    order_a = np.argsort(d_a, kind='stable')[:min(m, len(a))]
    order_b = np.argsort(d_b, kind='stable')[:min(m, len(b))]
    return order_a, order_b


def contact_points(a, b, m):
    """The m points of a closest to b and the m of b closest to a, ranked by distance."""
    ia, ib = contact_indices(a, b, m)
    return np.asarray(as_points(a))[ia], np.asarray(as_points(b))[ib]


def nearest_to(points, reference, m):
    """The m points closest to any point of reference, nearest first."""
    points = np.asarray(as_points(points))
    d, _ = nearest_neighbors(points, np.asarray(as_points(reference)))
    return points[np.argsort(d, kind='stable')[:min(m, len(points))]]

