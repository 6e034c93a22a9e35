#pragma once

#include <array>
#include <limits>
#include <optional>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "rcnet/camera.hpp"
#include "rcnet/grid.hpp"
#include "rcnet/heads.hpp"
#include "rcnet/mesh.hpp"

namespace rcnet {

struct OptimizerOptions {
  double step_size = 0.15;  // radians per unit of per-vertex mean gradient
  double step_decay = 0.97;
  int max_iterations = 60;
  double gradient_tolerance = 1e-5;  // on the per-vertex mean gradient norm
  int refresh_every = 10;            // iterations between visibility refreshes

  void validate() const;
};

struct OptimizeResult {
  Pose pose;
  double nll = std::numeric_limits<double>::infinity();  // exact lattice nll at `pose`
  double init_nll = std::numeric_limits<double>::infinity();
  int iterations = 0;  // gradient evaluations
  bool valid = false;  // false when the initial pose renders no foreground
};

// Gradient descent on the vertex-sampled nll over (azimuth, elevation,
// theta) with distance frozen. The returned pose never has a larger exact
// nll than the initial pose.
OptimizeResult optimize_pose(const FeatureMap& features, const NeuralMeshModel& model,
                             const BackgroundModel& background, const Pose& init, const CameraIntrinsics& cam,
                             const OptimizerOptions& options);

struct InferenceOptions {
  CameraIntrinsics camera;
  double nominal_distance = 6.0;
  // Distance candidates as multiples of the nominal distance; earlier entries win ties.
  std::vector<double> distance_factors{1.0, 0.95, 1.05};
  PoseGridShape grid;
  PoseBands bands;
  OptimizerOptions optimizer;
  unsigned threads = 1;  // fan-out over classes

  void validate() const;
};

struct CascadeConfig {
  double tau1 = 0.95;
  double tau2 = 0.8;
  int top_k = 3;

  void validate() const;
};

enum class Stage { s1, s2, s3, full };
std::string_view stage_name(Stage stage);
Stage parse_stage(std::string_view name);

struct ClassOutcome {
  bool evaluated = false;
  double nll = std::numeric_limits<double>::infinity();
  double match_score = 0.0;
  double init_nll = std::numeric_limits<double>::infinity();
  Pose pose;
  int iterations = 0;
};

struct CostCounters {
  long iterations = 0;  // pose-optimisation iterations executed
  int full_runs = 0;    // multi-start searches over every class
  int class_proposals = 0;
  int pose_proposals = 0;
  long nll_evaluations = 0;
};

struct BranchOutcome {
  int class_id = -1;
  Pose pose;
  double nll = std::numeric_limits<double>::infinity();
  double match_score = 0.0;
  long iterations = 0;
};

// Outcome of every cascade branch for one sample, so thresholds can be
// replayed without rerunning inference.
struct BranchTrace {
  double head_confidence = 0.0;
  int head_class = -1;
  BranchOutcome s1;
  BranchOutcome s2;
  BranchOutcome full;
};

struct InferenceResult {
  int predicted_class = -1;
  Pose pose;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  std::vector<ClassOutcome> per_class;
  Stage stage = Stage::full;
  CostCounters cost;
  bool tie = false;
  double match_score = 0.0;
  std::optional<double> head_confidence;
  std::optional<BranchTrace> branches;
};

// Best grid pose (lowest exact nll) followed by the distance search at that pose.
struct Initialization {
  Pose pose;
  double nll = std::numeric_limits<double>::infinity();
  long evaluations = 0;
};
Initialization grid_initialization(const FeatureMap& features, const NeuralMeshModel& model,
                                   const BackgroundModel& background, const InferenceOptions& options);

InferenceResult infer_full(const FeatureMap& features, const ModelBank& bank, const InferenceOptions& options);

InferenceResult infer_cascade(const FeatureMap& features, const ModelBank& bank, const FeedForwardHeads* heads,
                              const CascadeConfig& cascade, const InferenceOptions& options,
                              bool record_branches = false);
InferenceResult infer_cascade(const Image& image, const ModelBank& bank, const FeedForwardHeads* heads,
                              const CascadeConfig& cascade, const InferenceOptions& options,
                              bool record_branches = false);

}  // namespace rcnet
