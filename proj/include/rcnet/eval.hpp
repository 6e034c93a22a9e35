#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rcnet/camera.hpp"
#include "rcnet/inference.hpp"
#include "rcnet/synth.hpp"

namespace rcnet {

inline constexpr double kCoarseThreshold = std::numbers::pi / 6.0;
inline constexpr double kFineThreshold = std::numbers::pi / 18.0;

// One inference outcome together with the ground truth it is scored against.
struct LogRecord {
  std::string id;
  int true_class = 0;
  Pose true_pose;
  std::string level = "L0";
  std::vector<std::string> nuisances;
  std::string mode = "full";  // "full" or "cascade"
  InferenceResult result;

  // Iterations infer_full executes on this sample, when known.
  std::optional<long> reference_iterations() const;
};

LogRecord make_log_record(const SceneRecord& truth, InferenceResult result, std::string mode);

// Class correct, pose within pi/6, either or both.
struct Correctness {
  bool cls = false;
  bool pose_coarse = false;
  bool pose_fine = false;
  bool aware = false;
  double pose_error = 0.0;
};
Correctness judge(int true_class, const Eigen::Matrix3d& true_rotation, int predicted_class,
                  const Eigen::Matrix3d& predicted_rotation);

struct MetricRow {
  std::string group;
  std::size_t count = 0;
  double classification = 0.0;
  double acc_coarse = 0.0;  // pose error < pi/6
  double acc_fine = 0.0;    // pose error < pi/18
  double aware = 0.0;       // class correct and pose error < pi/6
  double mean_pose_error = 0.0;
  long iterations = 0;
  std::optional<long> reference_iterations;
  std::optional<double> cost_percent;
  std::size_t s1 = 0, s2 = 0, s3 = 0, full = 0;
};

struct EvalReport {
  MetricRow overall;
  std::vector<MetricRow> by_level;     // records without nuisances, per occlusion level
  std::vector<MetricRow> by_nuisance;  // records with nuisances, per nuisance
};

EvalReport compute_metrics(std::span<const LogRecord> logs);
// Aligns results with truth records by id.
EvalReport compute_metrics(std::span<const std::pair<std::string, InferenceResult>> results,
                           std::span<const SceneRecord> truth);

struct CascadeSimulation {
  double tau1 = 0.0;
  double tau2 = 0.0;
  std::size_t count = 0;
  double classification = 0.0;
  double aware = 0.0;
  long iterations = 0;
  long reference_iterations = 0;
  double cost_percent = 0.0;
  std::size_t s1 = 0, s2 = 0, s3 = 0;
  // Among samples sent to S3 whose S2 answer was wrong, the fraction S3 got right.
  std::optional<double> s3_recovery;
};

// Replays the cascade decision rules on recorded branch outcomes.
CascadeSimulation simulate_cascade(std::span<const LogRecord> logs, double tau1, double tau2);

struct SweepPoint {
  std::string parameter;  // "tau1" or "tau2"
  double tau = 0.0;
  double tau1 = 0.0;
  double tau2 = 0.0;
  double tpr = 0.0;
  double fpr = 0.0;
  double accept_rate = 0.0;
  double aware = 0.0;
  double classification = 0.0;
  double cost_percent = 0.0;
  std::size_t full_runs = 0;
};

// tau1 points: accept = head confidence > tau, positive = S1 answer correct.
// tau2 points: accept = S2 match score > tau, positive = S2 answer correct.
// The other threshold stays at its default for the end-to-end columns.
std::vector<SweepPoint> threshold_sweep(std::span<const LogRecord> logs, std::span<const double> tau1_grid,
                                        std::span<const double> tau2_grid, double tau1_default, double tau2_default);

std::vector<double> default_sweep_grid();  // k / 40 for k = 0..40

struct SensitivityRow {
  std::string label;
  double tau1 = 0.0;
  double tau2 = 0.0;
  double aware = 0.0;
  double cost_percent = 0.0;
  double delta_aware = 0.0;
  double delta_cost = 0.0;
};

std::vector<SensitivityRow> sensitivity_report(std::span<const SweepPoint> sweep, double tau1, double tau2,
                                               double d_tau1 = 0.025, double d_tau2 = 0.1);

std::string report_csv(const EvalReport& report);
std::string report_json(const EvalReport& report);
std::string sweep_csv(std::span<const SweepPoint> sweep);
std::string sweep_svg(std::span<const SweepPoint> sweep, const std::string& parameter);
std::string sensitivity_csv(std::span<const SensitivityRow> rows);
std::string sensitivity_json(std::span<const SensitivityRow> rows);

}  // namespace rcnet
