#pragma once

#include <array>
#include <span>

#include <Eigen/Core>

#include "rcnet/camera.hpp"
#include "rcnet/grid.hpp"
#include "rcnet/mesh.hpp"

namespace rcnet {

struct ReconstructionReport {
  double nll = 0.0;
  std::size_t foreground_count = 0;
  std::size_t background_count = 0;
  double match_score = 0.0;
};

// Lattice negative log-likelihood with unit variances, constant dropped:
// 1/2 sum_fg |f_i - C_r(i)|^2 + 1/2 sum_bg |f_i - b|^2.
double nll(const FeatureMap& features, const ProjectedMesh& proj, const FeatureRows& texture,
           const BackgroundModel& background);

// Background half of `nll` alone.
double background_nll(const FeatureMap& features, const ProjectedMesh& proj,
                      const BackgroundModel& background);

// Mean over foreground of (1 + cos(f_i, C_r(i))) / 2; 0 on empty foreground.
double match_score(const FeatureMap& features, const ProjectedMesh& proj, const FeatureRows& texture);

ReconstructionReport reconstruct(const FeatureMap& features, const ProjectedMesh& proj,
                                 const FeatureRows& texture, const BackgroundModel& background);

struct BilinearSample {
  std::vector<double> value;
  std::vector<double> d_u;  // zero along an axis when the coordinate was clamped
  std::vector<double> d_v;
};

// Samples F at continuous lattice coordinates (u = column, v = row); the
// coordinates are clamped to [0, W-1] x [0, H-1].
void bilinear_sample(const FeatureMap& features, double u, double v, BilinearSample& out,
                     bool with_derivatives = true);

struct PoseGradient {
  double value = 0.0;
  std::array<double, 3> grad{};  // d/d azimuth, d/d elevation, d/d theta
  std::size_t sampled_vertices = 0;
};

// Differentiable surrogate: vertices visible in `frozen` are re-projected at
// `pose` and F is bilinearly sampled there; the background term uses the
// frozen mask and carries no pose dependence.
double vertex_sampled_nll(const FeatureMap& features, const ProjectedMesh& frozen,
                          std::span<const Eigen::Vector3d> vertices, const FeatureRows& texture,
                          const Pose& pose, const CameraIntrinsics& cam,
                          const BackgroundModel& background);

// Visibility and mask taken at `pose` itself.
double vertex_sampled_nll(const FeatureMap& features, const NeuralMeshModel& mesh, const Pose& pose,
                          const CameraIntrinsics& cam, const BackgroundModel& background);

PoseGradient pose_gradient(const FeatureMap& features, const ProjectedMesh& frozen,
                           std::span<const Eigen::Vector3d> vertices, const FeatureRows& texture,
                           const Pose& pose, const CameraIntrinsics& cam,
                           const BackgroundModel& background);

PoseGradient pose_gradient(const FeatureMap& features, const NeuralMeshModel& mesh, const Pose& pose,
                           const CameraIntrinsics& cam, const BackgroundModel& background);

// Renders the textured mesh at `pose`: foreground cells take their
// corresponding vertex texture, background cells take b.
FeatureMap render_features(const NeuralMeshModel& mesh, const Pose& pose, const CameraIntrinsics& cam,
                           const BackgroundModel& background);

}  // namespace rcnet
