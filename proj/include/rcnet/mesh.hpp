#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "rcnet/common.hpp"
#include "rcnet/extractor.hpp"

namespace rcnet {

inline constexpr int kModelFormatVersion = 1;

using Extents = std::array<double, 3>;  // full width, height, depth

// Regular surface lattice of a cuboid: intervals[a] cells along axis a.
// Surface nodes are lattice points with at least one index on the boundary.
struct CuboidLattice {
  Extents extents{};
  std::array<int, 3> intervals{};

  std::size_t vertex_count() const;
  // Vertices in lexicographic (i, j, k) order.
  std::vector<Eigen::Vector3d> vertices() const;
  // Dense (i, j, k) -> vertex index table; -1 for interior lattice points.
  std::vector<std::int32_t> index_table() const;
  Eigen::Vector3d node(int i, int j, int k) const;
};

// Picks per-axis interval counts so the node pitch is as uniform as possible
// and the vertex count is closest to the target.
CuboidLattice plan_cuboid(const Extents& extents, int target_vertex_count);

std::vector<Eigen::Vector3d> build_cuboid(const Extents& extents, int target_vertex_count);

// Unit-norm Gaussian-direction vectors.
FeatureRows init_textures(std::size_t vertex_count, std::size_t dim, Rng& rng);

struct NeuralMeshModel {
  int class_id = 0;
  Extents extents{};
  std::vector<Eigen::Vector3d> vertices;
  FeatureRows texture;

  std::size_t vertex_count() const { return vertices.size(); }
  std::size_t feature_dim() const { return texture.dim; }
  void validate() const;
};

NeuralMeshModel make_mesh_model(int class_id, const Extents& extents, int target_vertex_count,
                                std::size_t dim, Rng& rng);

std::vector<double> texture_class_mean(const NeuralMeshModel& model);

struct BackgroundModel {
  std::vector<double> mean;
  double sigma = 1.0;

  void validate(std::size_t dim) const;
};

struct ModelBank {
  std::vector<NeuralMeshModel> models;
  BackgroundModel background;
  FeatureExtractor extractor;
  int format_version = kModelFormatVersion;
  int trained_epochs = 0;

  std::size_t class_count() const { return models.size(); }
  std::size_t feature_dim() const { return models.empty() ? 0 : models.front().feature_dim(); }
  void validate() const;
  // Rounds every stored real through float32 so the bank equals its
  // persisted form bit for bit.
  void quantize_to_float();
};

}  // namespace rcnet
