"""Top-K localization: retrieve database neighbors, estimate relative
poses against each, and solve for the absolute query pose.

The relative-pose source is pluggable (precomputed estimates, the
synthetic oracle, or the toy regressor); the pipeline itself is pure
geometry. Failures of individual queries are reported per query and never
abort a batch.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .averaging import (
    AveragingConfig,
    PairObservation,
    absolute_rotation_from_pair,
    average_rotations,
    center_ray_from_pair,
    condition_ratio,
    normal_system,
    rotation_spread_deg,
    triangulate_center,
)
from .errors import (
    InsufficientDatabaseError,
    MissingGroundTruthError,
    RelocError,
    UnknownIdError,
)
from .geometry import DirectionalPose, Pose, camera_center, rotation_angle
from .synthetic import NoiseModel, SyntheticScene, mix_seed, oracle_relative


@dataclasses.dataclass(frozen=True)
class SceneDatabase:
    """Map of image id -> absolute pose, with free-form string metadata."""

    entries: dict[str, Pose]
    metadata: dict[str, str] = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        for key, pose in self.entries.items():
            if not isinstance(pose, Pose):
                raise TypeError(f"entry '{key}' is not a Pose")

    def __len__(self) -> int:
        return len(self.entries)


def database_from_scene(scene: SyntheticScene) -> SceneDatabase:
    return SceneDatabase(dict(scene.database), {"layout": scene.layout})


def query_truth_from_scene(scene: SyntheticScene) -> dict[str, Pose]:
    return dict(scene.queries)


@dataclasses.dataclass(frozen=True)
class LocalizationResult:
    """Outcome for one query: a pose or an error tag, never both.

    ``error`` is the failure-class name (e.g. "DegenerateGeometry",
    "TooFewPairs"). ``condition_ratio`` and ``rotation_spread_deg`` are
    diagnostics from the solve and may be None when the failure happened
    before they could be measured.
    """

    query_id: str
    pose: Pose | None
    error: str | None
    pairs_used: int
    condition_ratio: float | None = None
    rotation_spread_deg: float | None = None

    def __post_init__(self):
        if (self.pose is None) == (self.error is None):
            raise ValueError("exactly one of pose / error must be set")


class EstimateTableProvider:
    """Relative poses looked up from a precomputed (query, database) table."""

    def __init__(self, estimates: dict[tuple[str, str], DirectionalPose]):
        self.estimates = dict(estimates)

    def estimate(self, query_id: str, database_id: str) -> DirectionalPose:
        try:
            return self.estimates[(query_id, database_id)]
        except KeyError:
            raise UnknownIdError(
                f"no estimate for pair ({query_id}, {database_id})") from None


class OracleProvider:
    """Relative poses from ground truth plus a seeded noise model.

    Each pair draws from its own stream seeded by
    ``mix_seed(noise.seed, query_id, database_id)``, so results do not
    depend on evaluation order or parallelism.
    """

    def __init__(self, database: SceneDatabase, query_truth: dict[str, Pose],
                 noise: NoiseModel | None = None):
        self.database = database
        self.query_truth = dict(query_truth)
        self.noise = noise or NoiseModel()

    def estimate(self, query_id: str, database_id: str) -> DirectionalPose:
        if query_id not in self.query_truth:
            raise MissingGroundTruthError(f"no ground-truth pose for query '{query_id}'")
        if database_id not in self.database.entries:
            raise UnknownIdError(f"unknown database id '{database_id}'")
        return oracle_relative(
            self.query_truth[query_id],
            self.database.entries[database_id],
            self.noise,
            seed=mix_seed(self.noise.seed, query_id, database_id),
        )


class ToyModelProvider:
    """Relative poses regressed by a toy two-view model on stored images."""

    def __init__(self, model, images: dict[str, np.ndarray]):
        self.model = model
        self.images = dict(images)

    def estimate(self, query_id: str, database_id: str) -> DirectionalPose:
        from .toy import forward_pair  # deferred: keeps torch optional at import
        for key in (query_id, database_id):
            if key not in self.images:
                raise UnknownIdError(f"no image for id '{key}'")
        query_to_db, _ = forward_pair(self.model, self.images[query_id],
                                      self.images[database_id])
        return query_to_db.to_directional_pose()


def retrieve_oracle(database: SceneDatabase, query_pose: Pose, k: int) -> list[str]:
    """Ids of the k database cameras nearest to the query camera center.

    Ties break by rotation angle to the query, then lexicographic id, so
    the result is fully deterministic.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if k > len(database):
        raise InsufficientDatabaseError(
            f"asked for {k} neighbors from a database of {len(database)}")
    center = camera_center(query_pose)
    ranked = sorted(
        database.entries.items(),
        key=lambda item: (
            float(np.linalg.norm(camera_center(item[1]) - center)),
            rotation_angle(item[1].rotation, query_pose.rotation),
            item[0],
        ),
    )
    return [image_id for image_id, _ in ranked[:k]]


def build_retrieval_plan(database: SceneDatabase, query_truth: dict[str, Pose],
                         k: int) -> dict[str, list[str]]:
    """Oracle retrieval for every query; preserves query order."""
    return {qid: retrieve_oracle(database, pose, k) for qid, pose in query_truth.items()}


def _localize_one(database: SceneDatabase, query_id: str, neighbor_ids,
                  provider, config: AveragingConfig) -> LocalizationResult:
    observations = []
    for db_id in neighbor_ids:
        try:
            rel = provider.estimate(query_id, db_id)
        except RelocError:
            continue  # drop this pair, keep the query alive
        observations.append(PairObservation(database.entries[db_id], rel))

    if len(observations) < config.min_pairs:
        return LocalizationResult(query_id, None, "TooFewPairs", len(observations))

    rotations = [absolute_rotation_from_pair(o) for o in observations]
    try:
        rotation = average_rotations(rotations, config.rotation_mode)
    except RelocError as exc:
        return LocalizationResult(query_id, None, type(exc).__name__.removesuffix("Error"),
                                  len(observations))
    spread = rotation_spread_deg(rotations, rotation)
    rays = [center_ray_from_pair(o) for o in observations]
    ratio = condition_ratio(normal_system(rays)[0])
    try:
        center = triangulate_center(rays, config)
    except RelocError as exc:
        return LocalizationResult(query_id, None, type(exc).__name__.removesuffix("Error"),
                                  len(observations), ratio, spread)
    pose = Pose(rotation, -rotation @ center)
    return LocalizationResult(query_id, pose, None, len(observations), ratio, spread)


def localize(
    database: SceneDatabase,
    plan: dict[str, list[str]],
    provider,
    config: AveragingConfig | None = None,
    max_workers: int | None = None,
) -> list[LocalizationResult]:
    """Localize every query in ``plan``; one result per query, input order.

    Per-pair provider errors drop the pair; queries failing outright get
    an error tag. Raises UnknownIdError up front when the plan references
    database ids that do not exist.

    ``max_workers`` > 1 localizes queries concurrently (the provider must
    be safe to call from multiple threads); output order is unaffected.
    """
    config = config or AveragingConfig()
    unknown = sorted({db_id for ids in plan.values() for db_id in ids}
                     - set(database.entries))
    if unknown:
        raise UnknownIdError(f"plan references unknown database ids: {', '.join(unknown)}")

    items = list(plan.items())
    if max_workers is not None and max_workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            return list(pool.map(
                lambda item: _localize_one(database, item[0], item[1], provider, config),
                items))
    return [_localize_one(database, qid, ids, provider, config) for qid, ids in items]
