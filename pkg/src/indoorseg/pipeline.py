"""End-to-end segmentation pipeline and its resolved configuration.

Stage order: normals -> oversegmentation -> gravity alignment (pose or
label-based plane fit) -> per-patch features -> forest prediction -> MRF
smoothing -> per-point labels. Points of discarded patches come out as
`unknown`. Every stage is timed; the timing dict accompanies all results.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import mrf
from .cloud import FRAME_GRAVITY, PointCloud
from .errors import InputError
from .features import feature_matrix
from .forest import ForestModel, ForestParams, predict_batch
from .ground import (
    GroundPlane,
    estimate_ground_plane,
    gravity_align,
)
from .labels import NUM_TRAINABLE, Label
from .overseg import OversegParams, PatchGraph, compute_normals, oversegment, \
    refresh_patch_stats

GROUND_MODES = ("auto", "fit", "pose", "none")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    normals_k: int = 15
    voxel_resolution: float = 0.01
    seed_resolution: float = 0.1
    w_spatial: float = 0.4
    w_normal: float = 1.0
    w_color: float = 0.2
    min_patch_points: int = 10
    ground_mode: str = "auto"
    min_floor_points: int = 500
    ransac_iterations: int = 200
    ransac_threshold: float = 0.02
    num_trees: int = 8
    max_depth: int = 8
    candidates_per_node: int = 4
    thresholds_per_candidate: int = 10
    min_samples_split: int = 2
    class_balanced: bool = False
    mrf_lambda: float = 1.0
    mrf_sigma: float = 0.1
    lbp_max_iters: int = 50
    lbp_damping: float = 0.5
    lbp_tol: float = 1e-5
    table_cluster_radius: float = 0.05
    table_min_points: int = 200
    security_distance: float = 0.4
    workers: int = 1

    def __post_init__(self):
        if self.ground_mode not in GROUND_MODES:
            raise InputError(f"ground_mode must be one of {GROUND_MODES}")
        if self.normals_k < 3:
            raise InputError("normals_k must be >= 3")
        if self.workers < 1:
            raise InputError("workers must be >= 1")
        # remaining bounds are enforced by the stage parameter types
        self.overseg_params()
        self.forest_params()
        if self.mrf_lambda <= 0 or self.mrf_sigma <= 0:
            raise InputError("mrf_lambda and mrf_sigma must be positive")

    def overseg_params(self) -> OversegParams:
        return OversegParams(
            voxel_resolution=self.voxel_resolution,
            seed_resolution=self.seed_resolution,
            w_spatial=self.w_spatial,
            w_normal=self.w_normal,
            w_color=self.w_color,
            min_patch_points=self.min_patch_points,
        )

    def forest_params(self) -> ForestParams:
        return ForestParams(
            num_trees=self.num_trees,
            max_depth=self.max_depth,
            candidates_per_node=self.candidates_per_node,
            thresholds_per_candidate=self.thresholds_per_candidate,
            min_samples_split=self.min_samples_split,
            seed=self.seed,
            class_balanced=self.class_balanced,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise InputError(f"{path}: invalid config JSON at position {e.pos}") from None
        if not isinstance(data, dict):
            raise InputError(f"{path}: config must be a JSON object")
        return cls.from_dict(data)


@dataclass
class StageOutput:
    """Everything the classifier stage needs, in the gravity frame."""

    cloud: PointCloud           # aligned, with normals
    graph: PatchGraph           # patch stats refreshed on the aligned cloud
    feature_ids: np.ndarray     # patch ids that produced a feature vector
    features: np.ndarray        # (F, 14)
    point_to_feature: np.ndarray  # point index -> row in features, -1 if none
    timings: dict[str, float]


def resolve_ground_plane(cloud: PointCloud, config: PipelineConfig,
                         pose_plane: Optional[GroundPlane]) -> Optional[GroundPlane]:
    """Which plane to align with; None means the cloud is already aligned."""
    mode = config.ground_mode
    if mode == "auto":
        if pose_plane is not None:
            mode = "pose"
        elif cloud.frame == FRAME_GRAVITY:
            mode = "none"
        else:
            mode = "fit"
    if mode == "none":
        if cloud.frame != FRAME_GRAVITY:
            raise InputError("ground_mode 'none' needs a gravity-aligned cloud")
        return None
    if mode == "pose":
        if pose_plane is None:
            raise InputError("ground_mode 'pose' needs a camera pose file")
        return pose_plane
    return estimate_ground_plane(
        cloud,
        min_floor_points=config.min_floor_points,
        iterations=config.ransac_iterations,
        threshold=config.ransac_threshold,
        seed=config.seed,
    )


def run_stages(cloud: PointCloud, config: PipelineConfig,
               pose_plane: Optional[GroundPlane] = None) -> StageOutput:
    """Normals, oversegmentation, alignment and features for one cloud."""
    timings: dict[str, float] = {}

    t0 = time.perf_counter()
    cloud = compute_normals(cloud, k=config.normals_k)
    timings["normals"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    graph = oversegment(cloud, config.overseg_params())
    timings["oversegmentation"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    plane = resolve_ground_plane(cloud, config, pose_plane)
    if plane is not None:
        cloud = gravity_align(cloud, plane)
        graph = refresh_patch_stats(graph, cloud)
    elif cloud.frame != FRAME_GRAVITY:
        raise InputError("cloud is not gravity-aligned and no plane was resolved")
    timings["ground"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    feature_ids, features = feature_matrix(graph, cloud)
    timings["features"] = time.perf_counter() - t0

    point_to_feature = np.full(len(cloud), -1, dtype=np.int64)
    if feature_ids.shape[0]:
        patch_to_feature = np.full(len(graph.patches), -1, dtype=np.int64)
        patch_to_feature[feature_ids] = np.arange(feature_ids.shape[0])
        has_patch = graph.point_to_patch >= 0
        point_to_feature[has_patch] = patch_to_feature[graph.point_to_patch[has_patch]]

    return StageOutput(cloud=cloud, graph=graph, feature_ids=feature_ids,
                       features=features, point_to_feature=point_to_feature,
                       timings=timings)


def patch_majority_labels(graph: PatchGraph, cloud: PointCloud) -> np.ndarray:
    """Ground-truth label per patch by majority vote (ties: lowest label id)."""
    if cloud.labels is None:
        raise InputError("patch labels need a ground-truth labeled cloud")
    out = np.full(len(graph.patches), int(Label.UNKNOWN), dtype=np.int64)
    labels = cloud.labels
    for patch in graph.patches:
        hist = np.bincount(labels[patch.point_indices], minlength=len(Label))
        out[patch.id] = int(np.argmax(hist))
    return out


@dataclass
class SegmentResult:
    point_labels: np.ndarray        # (N,) uint8, `unknown` for orphan points
    unary_point_labels: np.ndarray  # same, before MRF smoothing
    feature_ids: np.ndarray         # patch ids with predictions
    distributions: np.ndarray       # (F, 7) forest output per predicted patch
    map_labels: np.ndarray          # (F,) MRF label per predicted patch
    labeling: mrf.Labeling
    stage_output: StageOutput
    timings: dict[str, float]


def segment_cloud(cloud: PointCloud, model: ForestModel, config: PipelineConfig,
                  pose_plane: Optional[GroundPlane] = None) -> SegmentResult:
    """Full pipeline on one cloud with a trained model."""
    stages = run_stages(cloud, config, pose_plane)
    timings = dict(stages.timings)

    t0 = time.perf_counter()
    distributions = predict_batch(model, stages.features) \
        if stages.features.shape[0] else np.zeros((0, NUM_TRAINABLE))
    timings["prediction"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    problem = _subset_problem(stages, distributions, config)
    labeling = mrf.solve_map_lbp(problem, max_iters=config.lbp_max_iters,
                                 damping=config.lbp_damping, tol=config.lbp_tol)
    timings["mrf"] = time.perf_counter() - t0

    unary_patch = np.argmin(problem.unary, axis=1) if problem.num_nodes \
        else np.zeros(0, dtype=np.int64)
    point_labels = _spread_to_points(stages, labeling.assignment)
    unary_point_labels = _spread_to_points(stages, unary_patch)
    timings["total"] = sum(timings.values())

    return SegmentResult(
        point_labels=point_labels,
        unary_point_labels=unary_point_labels,
        feature_ids=stages.feature_ids,
        distributions=distributions,
        map_labels=labeling.assignment.astype(np.int64),
        labeling=labeling,
        stage_output=stages,
        timings=timings,
    )


def _subset_problem(stages: StageOutput, distributions: np.ndarray,
                    config: PipelineConfig) -> mrf.MrfProblem:
    """MRF over the feature-bearing patches only, edges remapped."""
    n_patches = len(stages.graph.patches)
    feature_ids = stages.feature_ids
    index_of = np.full(n_patches, -1, dtype=np.int64)
    index_of[feature_ids] = np.arange(feature_ids.shape[0])

    unary = config.mrf_lambda * (1.0 - distributions)
    edges = stages.graph.edges
    if edges.shape[0]:
        a = index_of[edges[:, 0]]
        b = index_of[edges[:, 1]]
        keep = (a >= 0) & (b >= 0)
        sub_edges = np.stack([a[keep], b[keep]], axis=1)
        centroids = stages.graph.centroids()[feature_ids]
        d = np.linalg.norm(centroids[sub_edges[:, 0]] - centroids[sub_edges[:, 1]], axis=1)
        weights = np.exp(-d / config.mrf_sigma)
    else:
        sub_edges = np.zeros((0, 2), dtype=np.int64)
        weights = np.zeros(0)
    return mrf.MrfProblem(unary=unary, edges=sub_edges, weights=weights,
                          lam=config.mrf_lambda, sigma=config.mrf_sigma)


def _spread_to_points(stages: StageOutput, patch_labels: np.ndarray) -> np.ndarray:
    out = np.full(len(stages.cloud), int(Label.UNKNOWN), dtype=np.uint8)
    covered = stages.point_to_feature >= 0
    if patch_labels.shape[0]:
        out[covered] = patch_labels[stages.point_to_feature[covered]].astype(np.uint8)
    return out
