"""
Part-segmented shapes: loading, the part connectivity graph and joints.

A dataset directory holds one sub-directory per shape, each with a
``shape.json`` manifest::

    {
      "id": "cabinet_000",
      "category": "drawer_cabinet",
      "up": [0, 0, 1],
      "parts": [
        {"id": "body", "label": "body", "geometry": "body.obj",
         "ground_truth": {"type": "static"}},
        {"id": "drawer_0", "geometry": "drawer_0.json",
         "ground_truth": {"type": "prismatic", "axis": [0, -1, 0],
                          "center": null, "range": [0.0, 0.3]}}
      ]
    }

Geometry paths are relative to the manifest: ``.obj`` meshes or ``.json``
point lists (``{"points": [[x, y, z], ...]}``).
"""

import json
import logging
import os
from dataclasses import dataclass, field, replace
from glob import glob

import numpy as np
import trimesh
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from . import geometry as geo
from .autodiff import rotate
from .annotations import GroundTruthMotion, HINGE
from .geometry import PointCloud
from .util import InputError, derive_seed

log = logging.getLogger(__name__)

MANIFEST = 'shape.json'


class IngestError(InputError):
    """A shape or dataset that cannot be used."""


@dataclass(frozen=True)
class Part:
    """One segmented part: a triangle mesh or a point cloud."""
    id: str
    geometry: object
    label: str = None
    ground_truth: GroundTruthMotion = None

    def sample(self, n, seed):
        if isinstance(self.geometry, PointCloud):
            return PointCloud(geo.resample(self.geometry.points, n, seed))
        try:
            return geo.sample_mesh_surface(self.geometry, n, seed)
        except geo.GeometryError as e:
            raise IngestError('part {}: {}'.format(self.id, e))

    def vertices(self):
        if isinstance(self.geometry, PointCloud):
            return self.geometry.points
        return np.asarray(self.geometry.vertices)

    def mapped(self, func):
        """A copy with func applied to every vertex or point."""
        if isinstance(self.geometry, PointCloud):
            geometry = PointCloud(func(self.geometry.points))
        else:
            geometry = self.geometry.copy()
            geometry.vertices = func(np.asarray(geometry.vertices))
        return replace(self, geometry=geometry)


@dataclass(frozen=True)
class Shape:
    id: str
    parts: tuple
    up: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    category: str = None

    def __post_init__(self):
        up = np.asarray(self.up, dtype=float).reshape(3)
        if np.linalg.norm(up) == 0:
            raise IngestError('shape {}: zero up vector'.format(self.id))
        object.__setattr__(self, 'up', up / np.linalg.norm(up))
        object.__setattr__(self, 'parts', tuple(self.parts))
        ids = [p.id for p in self.parts]
        if len(set(ids)) != len(ids):
            raise IngestError('shape {}: duplicate part ids'.format(self.id))

    def part(self, part_id):
        for p in self.parts:
            if p.id == part_id:
                return p
        raise KeyError(part_id)

    @property
    def part_ids(self):
        return [p.id for p in self.parts]

    @property
    def ground_truth(self):
        return {p.id: p.ground_truth for p in self.parts if p.ground_truth is not None}

    def sampled(self, n, seed):
        """Sample every part, each with its own seed derived from seed and ids."""
        return {p.id: p.sample(n, derive_seed(seed, self.id, p.id, n)) for p in self.parts}

    def mapped(self, func, rotation=None, translation=None):
        """Apply a point map to every part; a rigid map also moves ground truth."""
        parts = []
        for p in self.parts:
            p = p.mapped(func)
            if p.ground_truth is not None and rotation is not None:
                p = replace(p, ground_truth=p.ground_truth.transformed(rotation, translation))
            parts.append(p)
        return replace(self, parts=tuple(parts))


@dataclass
class PartGraph:
    nodes: list
    edges: set = field(default_factory=set)

    def add_edge(self, p, q):
        if p == q:
            raise ValueError('self edge on {}'.format(p))
        if p not in self.nodes or q not in self.nodes:
            raise KeyError((p, q))
        self.edges.add(tuple(sorted((p, q))))

    def has_edge(self, p, q):
        return tuple(sorted((p, q))) in self.edges

    def neighbors(self, p):
        return sorted({a if b == p else b for a, b in self.edges if p in (a, b)})

    def components(self, exclude=()):
        """Connected components of the graph with the excluded nodes removed."""
        nodes = [n for n in self.nodes if n not in exclude]
        index = {n: i for i, n in enumerate(nodes)}
        rows, cols = [], []
        for a, b in self.edges:
            if a in index and b in index:
                rows.append(index[a])
                cols.append(index[b])
        matrix = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(nodes),) * 2)
        _, labels = connected_components(matrix, directed=False)
        groups = {}
        for n, label in zip(nodes, labels):
            groups.setdefault(label, []).append(n)
        return [groups[k] for k in sorted(groups)]


@dataclass(frozen=True)
class Joint:
    """
    A moving part paired with its base part, sampled at the rest pose.

    Contact sets are fixed at extraction: the moving and base points
    nearest to each other, ranked, and the base points nearest the moving
    part.
    """
    id: str
    shape_id: str
    moving: PointCloud
    base: PointCloud
    moving_part_ids: tuple
    base_part_id: str
    moving_obb: geo.OrientedBox
    base_obb: geo.OrientedBox
    component_counts: tuple
    moving_contacts: np.ndarray = None
    base_contacts: np.ndarray = None
    base_neighbors: np.ndarray = None
    up: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    category: str = None

    @property
    def part_id(self):
        return self.moving_part_ids[0]

    def flagged_points(self):
        """Moving and base points concatenated with a moving/base flag."""
        points = np.concatenate([self.moving.points, self.base.points])
        flags = np.concatenate([np.full(len(self.moving), geo.MOVING),
                                np.full(len(self.base), geo.BASE)])
        return PointCloud(points, flags)


def connected_component_count(part_cloud, eps):
    """Number of single-linkage components of the points at distance eps."""
    points = np.asarray(geo.as_points(part_cloud))
    if len(points) == 0:
        raise IngestError('empty cloud')
    pairs = cKDTree(points).query_pairs(eps, output_type='ndarray')
    matrix = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])),
                        shape=(len(points), len(points)))
    count, _ = connected_components(matrix, directed=False)
    return int(count)


def shape_diag(clouds):
    return float(geo.diag(np.concatenate([c.points for c in clouds.values()])))


def build_part_graph(shape, eps_connect=None, clouds=None, n=2048, seed=0):
    """
    Connect every pair of parts whose closest points are nearer than eps_connect.

    Args:
        shape (Shape): the shape.
        eps_connect (float): distance threshold, default 1% of the shape
            diagonal.
        clouds (dict): part id to PointCloud; sampled with n points per part
            when omitted.
    """
    if clouds is None:
        clouds = shape.sampled(n, seed)
    if eps_connect is None:
        eps_connect = 0.01 * shape_diag(clouds)
    graph = PartGraph(list(shape.part_ids))
    trees = {pid: cKDTree(clouds[pid].points) for pid in graph.nodes}
    for i, p in enumerate(graph.nodes):
        for q in graph.nodes[i + 1:]:
            d, _ = trees[q].query(clouds[p].points, distance_upper_bound=eps_connect)
            if np.any(d < eps_connect):
                graph.add_edge(p, q)
    return graph


def boundary_parts(clouds, eps):
    """Parts with any point within eps of the surface of the shape's bounding box."""
    lo, hi = geo.aabb(np.concatenate([c.points for c in clouds.values()]))
    out = set()
    for pid, cloud in clouds.items():
        gap = np.minimum(cloud.points - lo, hi - cloud.points).min(axis=1)
        if np.any(gap <= eps):
            out.add(pid)
    return out


def moving_set(part_id, graph, boundary):
    """
    The part plus every part left floating when it is removed.

    Floating parts are the components that no longer contain a boundary
    part. When the part is the only boundary part nothing counts as floating.
    """
    rest = [c for c in graph.components(exclude={part_id})]
    if not any(boundary & set(c) for c in rest):
        return [part_id]
    floating = [pid for c in rest if not boundary & set(c) for pid in c]
    return [part_id] + sorted(floating)


@dataclass(frozen=True)
class ExtractOptions:
    points_per_part: int = 512
    dense_factor: int = 4
    eps_connect: float = None
    component_eps: float = 0.05
    tiny_fraction: float = 0.02
    contact_count: int = 10
    neighbor_count: int = 50


def _connectivity(shape, graph, seed, options, dense):
    """Dense samples, shape diagonal, contact distance, part graph and boundary parts."""
    if dense is None:
        dense = shape.sampled(options.points_per_part * options.dense_factor, seed)
    diag = shape_diag(dense)
    eps = options.eps_connect if options.eps_connect is not None else 0.01 * diag
    if graph is None:
        graph = build_part_graph(shape, eps, clouds=dense)
    return dense, diag, eps, graph, boundary_parts(dense, eps)


def moving_sets(shape, seed=0, options=ExtractOptions()):
    """Part id to the ids of the parts that move with it."""
    if len(shape.parts) < 2:
        return {pid: [pid] for pid in shape.part_ids}
    _, _, _, graph, boundary = _connectivity(shape, None, seed, options, None)
    return {pid: moving_set(pid, graph, boundary) for pid in shape.part_ids}


def extract_joints(shape, graph=None, seed=0, options=ExtractOptions(), dense=None):
    """
    Build one joint per part that has a neighbor in the part graph.

    Args:
        shape (Shape): the shape.
        graph (PartGraph): its part graph, built from dense samples when
            omitted.
        seed (int): sampling seed.
        options (ExtractOptions): point budgets and thresholds.
        dense (dict): part id to densely sampled PointCloud, reused when given.

    Returns:
        list: Joint objects in part order.
    """
    if len(shape.parts) < 2:
        log.warning('shape %s has fewer than 2 parts, no joints', shape.id)
        return []
    n = options.points_per_part
    dense, diag, eps, graph, boundary = _connectivity(shape, graph, seed, options, dense)

    joints = []
    for part in shape.parts:
        if not graph.neighbors(part.id):
            log.warning('shape %s: part %s is isolated, skipped', shape.id, part.id)
            continue
        moving_ids = moving_set(part.id, graph, boundary)
        candidates = [q for q in graph.neighbors(part.id) if q not in moving_ids]
        if not candidates:
            candidates = sorted({q for m in moving_ids for q in graph.neighbors(m)
                                 if q not in moving_ids})
        if not candidates:
            log.warning('shape %s: part %s has no base part, skipped', shape.id, part.id)
            continue
        base_id = min(candidates, key=lambda q: (-geo.aabb_volume(dense[q].points), q))

        moving_dense = np.concatenate([dense[m].points for m in moving_ids])
        if float(geo.diag(moving_dense)) < options.tiny_fraction * diag:
            log.warning('shape %s: part %s is too small, skipped', shape.id, part.id)
            continue
        lo, hi = geo.aabb(dense[base_id].points)
        others = np.concatenate([dense[q].points for q in shape.part_ids if q not in moving_ids])
        inside = np.all((others >= lo - eps) & (others <= hi + eps), axis=1)
        base_dense = others[inside]

        jseed = derive_seed(seed, shape.id, part.id)
        moving = PointCloud(geo.resample(moving_dense, n, jseed))
        base = PointCloud(geo.resample(base_dense, n, jseed + 1))
        component_eps = options.component_eps * diag
        counts = (connected_component_count(moving_dense, component_eps),
                  connected_component_count(base_dense, component_eps))
        moving_contacts, base_contacts = geo.contact_points(moving, base, options.contact_count)
        joints.append(Joint(
            id='{}/{}'.format(shape.id, part.id),
            shape_id=shape.id,
            moving=moving,
            base=base,
            moving_part_ids=tuple(moving_ids),
            base_part_id=base_id,
            moving_obb=geo.min_volume_obb(moving),
            base_obb=geo.min_volume_obb(base),
            component_counts=counts,
            moving_contacts=moving_contacts,
            base_contacts=base_contacts,
            base_neighbors=geo.nearest_to(base, moving, options.neighbor_count),
            up=shape.up,
            category=shape.category,
        ))
    return joints


def _move_part(points, gt, amount):
    if gt.type == HINGE:
        return rotate(points - gt.center, gt.axis, amount) + gt.center
    return points + amount * gt.axis


def apply_pose_variation(shape, level, seed):
    """
    Pose every movable part within a level-scaled share of its range.

    The pose is drawn uniformly in [0.2 level min, 0.2 level max]; level 0
    keeps every part at pose 0. Ground-truth ranges are re-expressed
    relative to the new pose. Static parts and parts without ground truth
    stay where they are.

    Raises:
        IngestError: level outside 0..5.
    """
    if not 0 <= level <= 5:
        raise IngestError('pose level must be in 0..5, got {}'.format(level))
    rng = np.random.default_rng(derive_seed(seed, shape.id, 'pose'))
    parts = []
    for p in shape.parts:
        gt = p.ground_truth
        if gt is None or not gt.movable:
            parts.append(p)
            continue
        u = rng.uniform()
        if level == 0:
            pose = 0.0
        else:
            lo, hi = gt.range[0] * 0.2 * level, gt.range[1] * 0.2 * level
            pose = lo + u * (hi - lo)
        posed = p.mapped(lambda x, gt=gt, pose=pose: _move_part(x, gt, pose))
        parts.append(replace(posed, ground_truth=gt.shifted(pose)))
    return replace(shape, parts=tuple(parts))


def up_rotation(up, angle):
    return Rotation.from_rotvec(np.asarray(up, dtype=float) * angle).as_matrix()


def random_up_rotation(shape, seed, angle=None):
    """Rotate every part by one uniform angle in [0, 2 pi) about world up."""
    if angle is None:
        rng = np.random.default_rng(derive_seed(seed, shape.id, 'up'))
        angle = rng.uniform(0.0, 2 * np.pi)
    rotation = up_rotation(shape.up, angle)
    return shape.mapped(lambda x: x @ rotation.T, rotation, np.zeros(3))


def _load_geometry(path):
    if not os.path.exists(path):
        raise IngestError('missing geometry file {}'.format(path))
    if path.endswith('.json'):
        with open(path) as f:
            data = json.load(f)
        points = data['points'] if isinstance(data, dict) else data
        return PointCloud(points)
    try:
        mesh = trimesh.load(path, force='mesh', process=False)
    except Exception as e:
        raise IngestError('cannot load {}: {}'.format(path, e))
    if not isinstance(mesh, trimesh.Trimesh) or len(mesh.faces) == 0:
        raise IngestError('no triangles in {}'.format(path))
    return mesh


def load_shape(manifest):
    """Load one shape from its manifest path."""
    try:
        with open(manifest) as f:
            data = json.load(f)
    except (OSError, ValueError) as e:
        raise IngestError('cannot read {}: {}'.format(manifest, e))
    root = os.path.dirname(manifest)
    try:
        parts = []
        for entry in data['parts']:
            gt = entry.get('ground_truth')
            parts.append(Part(
                id=str(entry['id']),
                geometry=_load_geometry(os.path.join(root, entry['geometry'])),
                label=entry.get('label'),
                ground_truth=None if gt is None else GroundTruthMotion.from_json(
                    str(entry['id']), gt),
            ))
        return Shape(str(data['id']), parts, data.get('up', [0, 0, 1]), data.get('category'))
    except KeyError as e:
        raise IngestError('{}: missing key {}'.format(manifest, e))


def load_dataset(directory):
    """Load every shape below directory, ordered by shape id."""
    manifests = sorted(glob(os.path.join(directory, '*', MANIFEST)))
    if not manifests:
        raise IngestError('no {} manifests under {}'.format(MANIFEST, directory))
    shapes = sorted((load_shape(m) for m in manifests), key=lambda s: s.id)
    log.info('loaded %d shapes from %s', len(shapes), directory)
    return shapes


def write_shape(shape, directory):
    """Write a shape as a manifest plus one geometry file per part."""
    root = os.path.join(directory, shape.id)
    os.makedirs(root, exist_ok=True)
    entries = []
    for p in shape.parts:
        if isinstance(p.geometry, PointCloud):
            name = '{}.json'.format(p.id)
            with open(os.path.join(root, name), 'w') as f:
                json.dump({'points': p.geometry.points.tolist()}, f)
        else:
            name = '{}.obj'.format(p.id)
            p.geometry.export(os.path.join(root, name))
        entry = {'id': p.id, 'geometry': name}
        if p.label is not None:
            entry['label'] = p.label
        if p.ground_truth is not None:
            entry['ground_truth'] = p.ground_truth.to_json()
        entries.append(entry)
    manifest = {'id': shape.id, 'up': shape.up.tolist(), 'parts': entries}
    if shape.category is not None:
        manifest['category'] = shape.category
    path = os.path.join(root, MANIFEST)
    with open(path, 'w') as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return path


def write_dataset(shapes, directory):
    os.makedirs(directory, exist_ok=True)
    return [write_shape(s, directory) for s in shapes]
