//! Object-goal navigation over a voxel belief map.
//!
//! The stack builds a hierarchical semantic voxel map from depth and label
//! frames, scores voxels against target landmarks, discounts well-observed
//! space, evaluates frontiers by what their view would reveal and orders
//! them to minimize expected search distance.

pub mod belief;
pub mod error;
pub mod export;
pub mod frontier;
pub mod geometry;
pub mod navgrid;
pub mod observation;
pub mod planner;
pub mod providers;
pub mod runner;
pub mod semantic;
pub mod simenv;
pub mod voxel;

pub use belief::{
    compute_belief, pixel_confidence, posterior, BeliefMap, DetectionRange, Landmark, LandmarkLevel,
    LandmarkSet, PosteriorLookup, PosteriorView, VisibilityMap,
};
pub use error::{Error, Result};
pub use export::{read_semantic_snapshot, save_ply, save_semantic_snapshot, write_ply, SnapshotRecord, SnapshotSidecar};
pub use frontier::{
    aggregate_fov, detect_frontiers, evaluate_frontiers, AggregationConfig, Frontier, FrontierCandidate,
    FovCache,
};
pub use geometry::{
    back_project, project, ray_cast, world_to_voxel, CameraIntrinsics, CameraModel, GridConfig,
    ImagePoint, Pose, Vec3, VoxelCoord,
};
pub use navgrid::{CellState, GridCell, NavGrid, NavGridConfig, Passable, Traversability};
pub use observation::{ImageRegion, Label, Observation, PixelRect, NO_LABEL};
pub use planner::{
    anneal_plan, astar_distance, brute_force_plan, next_goal, plan_cost, AnnealConfig, PlanResult,
    PlanningInstance,
};
pub use providers::{
    ConceptWorldModel, Detection, DetectionVerifier, EmbeddingProvider, LandmarkProvider, ProviderSet,
    Segmenter, TargetDetector,
};
pub use semantic::{
    FeatureVector, HierarchicalFeatureCell, ScorerWeights, SemanticConfig, SemanticLevel, SemanticMap,
};
pub use voxel::{DenseOccupancy, Occupancy, VoxelGrid};
pub use runner::{
    run_batch, run_episode, BatchSummary, EpisodeConfig, EpisodeJob, EpisodeResult, PlannerMode, Termination,
};
pub use simenv::{generate_scene, Action, GeneratorConfig, Scene, SceneBox, SceneSpec, SimConfig};
