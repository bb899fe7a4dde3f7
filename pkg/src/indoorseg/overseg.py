"""Normal estimation and supervoxel-style oversegmentation.

The clustering voxelizes the cloud, seeds patch centers on a coarse grid,
assigns every occupied voxel to the best seed within reach of a combined
spatial / normal / color distance, and finally splits any spatially
disconnected assignment into separate patches so that every surviving
patch is connected at voxel granularity (26-connectivity). The same voxel
adjacency yields the patch adjacency graph consumed by the MRF stage.

Everything is vectorized; results are deterministic for a given cloud and
parameter set regardless of thread count.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .cloud import FRAME_CAMERA, PointCloud
from .colorspace import srgb_to_lab
from .errors import InputError

_UP_CAMERA = np.array([0.0, -1.0, 0.0])
_UP_GRAVITY = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class OversegParams:
    voxel_resolution: float = 0.01
    seed_resolution: float = 0.1
    w_spatial: float = 0.4
    w_normal: float = 1.0
    w_color: float = 0.2
    min_patch_points: int = 10

    def __post_init__(self):
        if self.voxel_resolution <= 0 or self.seed_resolution <= 0:
            raise InputError("resolutions must be positive")
        if self.seed_resolution <= self.voxel_resolution:
            raise InputError(
                f"seed_resolution ({self.seed_resolution}) must exceed "
                f"voxel_resolution ({self.voxel_resolution})")
        if self.min_patch_points < 1:
            raise InputError("min_patch_points must be >= 1")


@dataclass(frozen=True)
class Patch:
    id: int
    point_indices: np.ndarray
    centroid: np.ndarray
    mean_normal: np.ndarray
    mean_color_lab: np.ndarray

    @property
    def n_points(self) -> int:
        return int(self.point_indices.shape[0])


@dataclass(frozen=True)
class PatchGraph:
    """Patches plus symmetric, irreflexive adjacency between them.

    ``edges`` is an (E, 2) int array with edges[i, 0] < edges[i, 1], sorted
    and unique. ``point_to_patch`` maps every cloud point to its patch id,
    -1 where the point belongs to no surviving patch.
    """

    patches: tuple[Patch, ...]
    edges: np.ndarray
    point_to_patch: np.ndarray
    params: OversegParams = field(default_factory=OversegParams)

    def __len__(self) -> int:
        return len(self.patches)

    @property
    def adjacency(self) -> set[tuple[int, int]]:
        return {(int(a), int(b)) for a, b in self.edges}

    def centroids(self) -> np.ndarray:
        if not self.patches:
            return np.zeros((0, 3))
        return np.stack([p.centroid for p in self.patches])


def up_vector(frame: str) -> np.ndarray:
    return _UP_CAMERA if frame == FRAME_CAMERA else _UP_GRAVITY


def canonicalize_hemisphere(normals: np.ndarray) -> np.ndarray:
    """Flip normals into the upper (+z) hemisphere; ties broken on y then x."""
    n = normals.copy()
    flip = (n[:, 2] < 0) | ((n[:, 2] == 0) & ((n[:, 1] < 0) | ((n[:, 1] == 0) & (n[:, 0] < 0))))
    n[flip] *= -1.0
    return n


def compute_normals(cloud: PointCloud, k: int = 15) -> PointCloud:
    """Per-point unit normals from the k-NN scatter matrix.

    The normal is the eigenvector of the smallest eigenvalue. In the camera
    frame it is flipped to point toward the sensor origin; in the gravity
    frame it is flipped into the upper hemisphere. Neighborhoods of rank < 2
    get the frame's up vector and a True entry in ``normal_flags``.
    """
    n_points = len(cloud)
    if n_points < k:
        raise InputError(f"cloud has {n_points} points, need at least k={k}")
    pos = cloud.positions
    tree = cKDTree(pos, leafsize=32, balanced_tree=False)
    _, idx = tree.query(pos, k=k, workers=-1)

    # accumulate neighbor moments in query-point-local coordinates, one
    # neighbor column at a time: same covariance, no (N, k, 3) temporaries
    s1 = np.zeros((n_points, 3))
    s2 = np.zeros((n_points, 6))  # xx, yy, zz, xy, xz, yz
    for col in range(k):
        g = pos[idx[:, col]] - pos
        s1 += g
        s2[:, 0] += g[:, 0] * g[:, 0]
        s2[:, 1] += g[:, 1] * g[:, 1]
        s2[:, 2] += g[:, 2] * g[:, 2]
        s2[:, 3] += g[:, 0] * g[:, 1]
        s2[:, 4] += g[:, 0] * g[:, 2]
        s2[:, 5] += g[:, 1] * g[:, 2]
    s1 /= float(k)
    s2 /= float(k)
    cov = np.empty((n_points, 3, 3))
    cov[:, 0, 0] = s2[:, 0] - s1[:, 0] * s1[:, 0]
    cov[:, 1, 1] = s2[:, 1] - s1[:, 1] * s1[:, 1]
    cov[:, 2, 2] = s2[:, 2] - s1[:, 2] * s1[:, 2]
    cov[:, 0, 1] = cov[:, 1, 0] = s2[:, 3] - s1[:, 0] * s1[:, 1]
    cov[:, 0, 2] = cov[:, 2, 0] = s2[:, 4] - s1[:, 0] * s1[:, 2]
    cov[:, 1, 2] = cov[:, 2, 1] = s2[:, 5] - s1[:, 1] * s1[:, 2]

    l0, l1, l2, vec, vec_ok = _smallest_eigenpair_3x3(cov)
    # the closed-form eigenvalues carry ~1e-8 relative rounding error, so the
    # rank test needs a matching tolerance
    degenerate = (~vec_ok) | (l1 <= np.maximum(l2 * 1e-6, 1e-16))

    if cloud.frame == FRAME_CAMERA:
        # flip toward the sensor at the origin
        toward = np.einsum("ij,ij->i", vec, pos)
        flip = (toward > 0) | ((toward == 0) & (vec[:, 1] > 0))
        vec[flip] *= -1.0
    else:
        vec = canonicalize_hemisphere(vec)

    up = up_vector(cloud.frame)
    vec[degenerate] = up
    return cloud.with_(normals=vec, normal_flags=degenerate)


def _smallest_eigenpair_3x3(cov: np.ndarray):
    """Closed-form eigenvalues (ascending) and smallest-eigenvalue eigenvector
    for a batch of symmetric 3x3 matrices. Returns (l0, l1, l2, vec, vec_ok);
    vec_ok is False where the null direction is not unique (rank < 2)."""
    a00, a01, a02 = cov[:, 0, 0], cov[:, 0, 1], cov[:, 0, 2]
    a11, a12, a22 = cov[:, 1, 1], cov[:, 1, 2], cov[:, 2, 2]

    q = (a00 + a11 + a22) / 3.0
    b00, b11, b22 = a00 - q, a11 - q, a22 - q
    p2 = b00**2 + b11**2 + b22**2 + 2.0 * (a01**2 + a02**2 + a12**2)
    p = np.sqrt(np.maximum(p2 / 6.0, 0.0))
    nonzero = p > 0
    p_safe = np.where(nonzero, p, 1.0)
    det_b = (b00 * (b11 * b22 - a12 * a12)
             - a01 * (a01 * b22 - a12 * a02)
             + a02 * (a01 * a12 - b11 * a02))
    r = np.clip(det_b / (2.0 * p_safe**3), -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    l2 = q + 2.0 * p * np.cos(phi)
    l0 = q + 2.0 * p * np.cos(phi + 2.0 * np.pi / 3.0)
    l1 = 3.0 * q - l0 - l2
    l0 = np.where(nonzero, l0, q)
    l1 = np.where(nonzero, l1, q)
    l2 = np.where(nonzero, l2, q)

    shifted = cov.copy()
    shifted[:, 0, 0] -= l0
    shifted[:, 1, 1] -= l0
    shifted[:, 2, 2] -= l0
    c01 = np.cross(shifted[:, 0], shifted[:, 1])
    c02 = np.cross(shifted[:, 0], shifted[:, 2])
    c12 = np.cross(shifted[:, 1], shifted[:, 2])
    norms = np.stack([
        np.einsum("ij,ij->i", c01, c01),
        np.einsum("ij,ij->i", c02, c02),
        np.einsum("ij,ij->i", c12, c12),
    ], axis=1)
    best = np.argmax(norms, axis=1)
    vec = np.where(best[:, None] == 0, c01, np.where(best[:, None] == 1, c02, c12))
    best_norm = np.take_along_axis(norms, best[:, None], axis=1)[:, 0]
    scale = np.maximum(l2, 1e-30) ** 2
    vec_ok = best_norm > (scale * 1e-24)
    length = np.sqrt(np.maximum(best_norm, 1e-300))
    vec = vec / length[:, None]
    return l0, l1, l2, vec, vec_ok


def _pack_grid(ijk: np.ndarray, dims: np.ndarray) -> np.ndarray:
    return (ijk[:, 0] * dims[1] + ijk[:, 1]) * dims[2] + ijk[:, 2]


# positive-halfspace 26-connectivity offsets (13 of 26; the rest are mirrors)
_OFFSETS = np.array([
    (0, 0, 1), (0, 1, -1), (0, 1, 0), (0, 1, 1),
    (1, -1, -1), (1, -1, 0), (1, -1, 1),
    (1, 0, -1), (1, 0, 0), (1, 0, 1),
    (1, 1, -1), (1, 1, 0), (1, 1, 1),
], dtype=np.int64)


def oversegment(cloud: PointCloud, params: OversegParams = OversegParams()) -> PatchGraph:
    """Cluster a cloud (with normals) into compact patches plus adjacency.

    Patches smaller than ``params.min_patch_points`` are discarded; their
    points map to -1 in ``point_to_patch``.
    """
    if len(cloud) == 0:
        return PatchGraph(patches=(), edges=np.zeros((0, 2), dtype=np.int64),
                          point_to_patch=np.zeros(0, dtype=np.int64), params=params)
    if cloud.normals is None:
        raise InputError("oversegment requires per-point normals (run compute_normals)")

    pos = cloud.positions
    res = params.voxel_resolution
    seed_res = params.seed_resolution

    ijk = np.floor(pos / res).astype(np.int64)
    ijk -= ijk.min(axis=0)
    dims = ijk.max(axis=0) + 2
    keys = _pack_grid(ijk, dims)
    uniq_keys, vox_of_point = np.unique(keys, return_inverse=True)
    n_vox = uniq_keys.shape[0]

    counts = np.bincount(vox_of_point, minlength=n_vox).astype(np.float64)
    vox_centroid = np.stack([
        np.bincount(vox_of_point, weights=pos[:, c], minlength=n_vox) for c in range(3)
    ], axis=1) / counts[:, None]

    canon = canonicalize_hemisphere(cloud.normals)
    vox_normal = np.stack([
        np.bincount(vox_of_point, weights=canon[:, c], minlength=n_vox) for c in range(3)
    ], axis=1)
    norm = np.linalg.norm(vox_normal, axis=1)
    weak = norm < 1e-12
    if weak.any():
        order = np.argsort(vox_of_point, kind="stable")
        starts = np.searchsorted(vox_of_point[order], np.arange(n_vox))
        vox_normal[weak] = canon[order[starts[weak]]]
        norm = np.linalg.norm(vox_normal, axis=1)
    vox_normal /= np.maximum(norm, 1e-300)[:, None]

    lab = srgb_to_lab(cloud.colors)
    vox_lab = np.stack([
        np.bincount(vox_of_point, weights=lab[:, c], minlength=n_vox) for c in range(3)
    ], axis=1) / counts[:, None]

    seed_vox = _select_seeds(vox_centroid, seed_res)
    assign = _assign_voxels(vox_centroid, vox_normal, vox_lab, seed_vox, params)

    # voxel adjacency (26-connectivity), as undirected index pairs
    ijk_vox = np.stack(np.unravel_index(uniq_keys, dims), axis=1)
    pairs = []
    for off in _OFFSETS:
        moved = ijk_vox + off
        inside = ((moved >= 0) & (moved < dims)).all(axis=1)
        cand_keys = _pack_grid(moved[inside], dims)
        loc = np.searchsorted(uniq_keys, cand_keys)
        loc = np.minimum(loc, n_vox - 1)
        hit = uniq_keys[loc] == cand_keys
        src = np.nonzero(inside)[0][hit]
        pairs.append(np.stack([src, loc[hit]], axis=1))
    vox_edges = np.concatenate(pairs) if pairs else np.zeros((0, 2), dtype=np.int64)

    # split spatially disconnected assignments into separate patches
    same = assign[vox_edges[:, 0]] == assign[vox_edges[:, 1]]
    same_edges = vox_edges[same]
    graph = sparse.csr_matrix(
        (np.ones(same_edges.shape[0], dtype=np.int8), (same_edges[:, 0], same_edges[:, 1])),
        shape=(n_vox, n_vox))
    _, comp = connected_components(graph, directed=False)

    point_comp = comp[vox_of_point]
    n_comp = comp.max() + 1
    comp_sizes = np.bincount(point_comp, minlength=n_comp)
    keep = comp_sizes >= params.min_patch_points

    # renumber surviving patches by their smallest member point index
    first_point = np.full(n_comp, len(cloud), dtype=np.int64)
    np.minimum.at(first_point, point_comp, np.arange(len(cloud)))
    kept_comps = np.nonzero(keep)[0]
    kept_comps = kept_comps[np.argsort(first_point[kept_comps], kind="stable")]
    comp_to_patch = np.full(n_comp, -1, dtype=np.int64)
    comp_to_patch[kept_comps] = np.arange(kept_comps.shape[0])

    point_to_patch = comp_to_patch[point_comp]
    patches = _build_patches(cloud, lab, point_to_patch, kept_comps.shape[0])

    patch_a = comp_to_patch[comp[vox_edges[:, 0]]]
    patch_b = comp_to_patch[comp[vox_edges[:, 1]]]
    cross = (patch_a != patch_b) & (patch_a >= 0) & (patch_b >= 0)
    ea = np.minimum(patch_a[cross], patch_b[cross])
    eb = np.maximum(patch_a[cross], patch_b[cross])
    edges = np.unique(np.stack([ea, eb], axis=1), axis=0) if ea.size else \
        np.zeros((0, 2), dtype=np.int64)

    return PatchGraph(patches=patches, edges=edges,
                      point_to_patch=point_to_patch, params=params)


def _select_seeds(vox_centroid: np.ndarray, seed_res: float) -> np.ndarray:
    """One seed voxel per occupied coarse cell: the voxel nearest the cell center."""
    cell = np.floor(vox_centroid / seed_res).astype(np.int64)
    cell -= cell.min(axis=0)
    cdims = cell.max(axis=0) + 2
    ckeys = _pack_grid(cell, cdims)
    center = (np.floor(vox_centroid / seed_res) + 0.5) * seed_res
    dist = np.linalg.norm(vox_centroid - center, axis=1)
    order = np.lexsort((np.arange(ckeys.shape[0]), dist, ckeys))
    sorted_keys = ckeys[order]
    firsts = np.ones(sorted_keys.shape[0], dtype=bool)
    firsts[1:] = sorted_keys[1:] != sorted_keys[:-1]
    return np.sort(order[firsts])


def _assign_voxels(vox_centroid, vox_normal, vox_lab, seed_vox, params) -> np.ndarray:
    """Nearest seed (in combined distance) within 2 seed resolutions; voxels
    out of reach of every seed fall back to the spatially nearest seed."""
    n_vox = vox_centroid.shape[0]
    n_seeds = seed_vox.shape[0]
    seed_res = params.seed_resolution
    tree = cKDTree(vox_centroid[seed_vox], leafsize=32, balanced_tree=False)
    k = min(12, n_seeds)
    dist, cand = tree.query(vox_centroid, k=k, distance_upper_bound=2.0 * seed_res,
                            workers=-1)
    if k == 1:
        dist = dist[:, None]
        cand = cand[:, None]
    valid = np.isfinite(dist)
    cand_safe = np.where(valid, cand, 0)

    # distances are O(1); float32 keeps the big gathers cheap
    seed_normal = vox_normal[seed_vox].astype(np.float32)
    seed_lab = vox_lab[seed_vox].astype(np.float32)
    vn = vox_normal.astype(np.float32)
    vl = vox_lab.astype(np.float32)
    d_spatial = (dist / (np.sqrt(3.0) * seed_res)).astype(np.float32)
    dots = np.abs(np.einsum("vkc,vc->vk", seed_normal[cand_safe], vn))
    d_normal = 1.0 - np.minimum(dots, 1.0)
    diff = seed_lab[cand_safe] - vl[:, None, :]
    d_color = np.sqrt(np.einsum("vkc,vkc->vk", diff, diff)) / 100.0

    score = (np.float32(params.w_spatial) * d_spatial
             + np.float32(params.w_normal) * d_normal
             + np.float32(params.w_color) * d_color)
    score[~valid] = np.inf
    best = np.argmin(score, axis=1)
    assign = cand_safe[np.arange(n_vox), best]

    unreached = ~valid[np.arange(n_vox), best]
    if unreached.any():
        _, nearest = tree.query(vox_centroid[unreached], k=1, workers=-1)
        assign[unreached] = nearest
    return assign


def _build_patches(cloud, lab, point_to_patch, n_patches) -> tuple[Patch, ...]:
    if n_patches == 0:
        return ()
    pos = cloud.positions
    canon = canonicalize_hemisphere(cloud.normals)
    member = point_to_patch >= 0
    pid = point_to_patch[member]
    idx = np.nonzero(member)[0]

    sizes = np.bincount(pid, minlength=n_patches).astype(np.float64)
    centroid = np.stack([
        np.bincount(pid, weights=pos[member, c], minlength=n_patches) for c in range(3)
    ], axis=1) / sizes[:, None]
    normal_sum = np.stack([
        np.bincount(pid, weights=canon[member, c], minlength=n_patches) for c in range(3)
    ], axis=1)
    nn = np.linalg.norm(normal_sum, axis=1)
    flat = nn < 1e-12
    normal_sum[flat] = _UP_GRAVITY
    mean_normal = normal_sum / np.maximum(np.linalg.norm(normal_sum, axis=1), 1e-300)[:, None]
    mean_lab = np.stack([
        np.bincount(pid, weights=lab[member, c], minlength=n_patches) for c in range(3)
    ], axis=1) / sizes[:, None]

    order = np.argsort(pid, kind="stable")
    starts = np.searchsorted(pid[order], np.arange(n_patches + 1))
    patches = []
    for p in range(n_patches):
        members = idx[order[starts[p]:starts[p + 1]]]
        patches.append(Patch(
            id=p, point_indices=members, centroid=centroid[p],
            mean_normal=mean_normal[p], mean_color_lab=mean_lab[p]))
    return tuple(patches)


def refresh_patch_stats(graph: PatchGraph, cloud: PointCloud) -> PatchGraph:
    """Recompute patch centroids/normals from the (possibly transformed) cloud."""
    lab = srgb_to_lab(cloud.colors)
    patches = _build_patches(cloud, lab, graph.point_to_patch, len(graph.patches))
    return PatchGraph(patches=patches, edges=graph.edges,
                      point_to_patch=graph.point_to_patch, params=graph.params)


def dump_patch_colors(graph: PatchGraph, cloud: PointCloud, seed: int = 0) -> PointCloud:
    """Debug view: each patch gets a random color; orphan points turn black."""
    rng = np.random.default_rng(seed)
    palette = rng.integers(32, 255, size=(max(len(graph.patches), 1), 3), dtype=np.uint8)
    colors = np.zeros((len(cloud), 3), dtype=np.uint8)
    mask = graph.point_to_patch >= 0
    colors[mask] = palette[graph.point_to_patch[mask]]
    return cloud.with_(colors=colors, normals=None, normal_flags=None)
