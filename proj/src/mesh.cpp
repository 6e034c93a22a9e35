#include "rcnet/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "rcnet/kernels.hpp"

namespace rcnet {

namespace {

constexpr double kSurfaceTolerance = 1e-9;

std::size_t surface_count(const std::array<int, 3>& n) {
  const std::size_t outer = static_cast<std::size_t>(n[0] + 1) * (n[1] + 1) * (n[2] + 1);
  const std::size_t inner = static_cast<std::size_t>(n[0] - 1) * (n[1] - 1) * (n[2] - 1);
  return outer - inner;
}

double axis_coordinate(double extent, int i, int n) {
  const double half = extent / 2.0;
  if (i == 0) return -half;
  if (i == n) return half;
  return -half + extent * static_cast<double>(i) / static_cast<double>(n);
}

void check_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw InvalidArgument(std::string(what) + " has non-finite entries");
  }
}

}  // namespace

std::size_t CuboidLattice::vertex_count() const { return surface_count(intervals); }

Eigen::Vector3d CuboidLattice::node(int i, int j, int k) const {
  return {axis_coordinate(extents[0], i, intervals[0]), axis_coordinate(extents[1], j, intervals[1]),
          axis_coordinate(extents[2], k, intervals[2])};
}

std::vector<Eigen::Vector3d> CuboidLattice::vertices() const {
  std::vector<Eigen::Vector3d> out;
  out.reserve(vertex_count());
  const auto [nx, ny, nz] = intervals;
  for (int i = 0; i <= nx; ++i) {
    for (int j = 0; j <= ny; ++j) {
      for (int k = 0; k <= nz; ++k) {
        const bool boundary = i == 0 || i == nx || j == 0 || j == ny || k == 0 || k == nz;
        if (boundary) out.push_back(node(i, j, k));
      }
    }
  }
  return out;
}

std::vector<std::int32_t> CuboidLattice::index_table() const {
  const auto [nx, ny, nz] = intervals;
  std::vector<std::int32_t> table(static_cast<std::size_t>(nx + 1) * (ny + 1) * (nz + 1), -1);
  std::int32_t next = 0;
  for (int i = 0; i <= nx; ++i) {
    for (int j = 0; j <= ny; ++j) {
      for (int k = 0; k <= nz; ++k) {
        const bool boundary = i == 0 || i == nx || j == 0 || j == ny || k == 0 || k == nz;
        if (boundary) table[(static_cast<std::size_t>(i) * (ny + 1) + j) * (nz + 1) + k] = next++;
      }
    }
  }
  return table;
}

CuboidLattice plan_cuboid(const Extents& extents, int target_vertex_count) {
  for (double e : extents) {
    if (!(e > 0.0) || !std::isfinite(e)) throw InvalidArgument("cuboid extents must be positive");
  }
  if (target_vertex_count < 8) throw InvalidArgument("target vertex count must be at least 8");

  const double area = 2.0 * (extents[0] * extents[1] + extents[0] * extents[2] +
                             extents[1] * extents[2]);
  const double p0 = std::sqrt(area / target_vertex_count);
  const double e_max = *std::max_element(extents.begin(), extents.end());

  CuboidLattice best{extents, {1, 1, 1}};
  std::size_t best_gap = surface_count(best.intervals) > static_cast<std::size_t>(target_vertex_count)
                             ? surface_count(best.intervals) - target_vertex_count
                             : target_vertex_count - surface_count(best.intervals);
  // Log-spaced pitch scan from a single-cell cuboid down to a quarter of the ideal pitch.
  const double p_hi = std::max(2.0 * e_max, 4.0 * p0);
  const double p_lo = p0 / 4.0;
  constexpr int kSteps = 4000;
  for (int s = 0; s <= kSteps; ++s) {
    const double p = p_hi * std::pow(p_lo / p_hi, static_cast<double>(s) / kSteps);
    std::array<int, 3> n{};
    for (int a = 0; a < 3; ++a) n[a] = std::max(1, static_cast<int>(std::lround(extents[a] / p)));
    const std::size_t count = surface_count(n);
    const std::size_t gap = count > static_cast<std::size_t>(target_vertex_count)
                                ? count - target_vertex_count
                                : target_vertex_count - count;
    if (gap < best_gap) {
      best_gap = gap;
      best.intervals = n;
    }
  }
  return best;
}

std::vector<Eigen::Vector3d> build_cuboid(const Extents& extents, int target_vertex_count) {
  return plan_cuboid(extents, target_vertex_count).vertices();
}

FeatureRows init_textures(std::size_t vertex_count, std::size_t dim, Rng& rng) {
  if (vertex_count == 0 || dim == 0) throw InvalidArgument("texture shape must be non-empty");
  std::normal_distribution<double> normal(0.0, 1.0);
  FeatureRows out(vertex_count, dim);
  for (std::size_t r = 0; r < vertex_count; ++r) {
    auto row = out.row(r);
    double n2 = 0.0;
    while (n2 == 0.0) {
      for (double& x : row) x = normal(rng);
      n2 = kernels::dot(row, row);
    }
    const double norm = std::sqrt(n2);
    for (double& x : row) x /= norm;
  }
  return out;
}

void NeuralMeshModel::validate() const {
  if (vertices.empty()) throw InvalidArgument("mesh has no vertices");
  if (texture.rows != vertices.size()) throw InvalidArgument("texture length differs from vertex count");
  if (texture.dim == 0) throw InvalidArgument("texture dimension is zero");
  check_finite(texture.values, "texture");
  for (const auto& v : vertices) {
    bool on_face = false;
    for (int a = 0; a < 3; ++a) {
      const double half = extents[a] / 2.0;
      if (std::abs(v[a]) > half + kSurfaceTolerance) throw InvalidArgument("vertex outside cuboid");
      if (std::abs(std::abs(v[a]) - half) <= kSurfaceTolerance) on_face = true;
    }
    if (!on_face) throw InvalidArgument("vertex not on cuboid surface");
  }
}

NeuralMeshModel make_mesh_model(int class_id, const Extents& extents, int target_vertex_count,
                                std::size_t dim, Rng& rng) {
  NeuralMeshModel m;
  m.class_id = class_id;
  // Float-representable extents keep the +-half faces exact after persistence.
  for (int a = 0; a < 3; ++a) m.extents[a] = static_cast<double>(static_cast<float>(extents[a]));
  m.vertices = build_cuboid(m.extents, target_vertex_count);
  m.texture = init_textures(m.vertices.size(), dim, rng);
  return m;
}

std::vector<double> texture_class_mean(const NeuralMeshModel& model) {
  if (model.texture.rows == 0 || model.texture.dim == 0) throw InvalidState("empty neural texture");
  std::vector<double> mean(model.texture.dim, 0.0);
  for (std::size_t r = 0; r < model.texture.rows; ++r) {
    kernels::axpy(1.0, model.texture.row(r), mean);
  }
  const double inv = 1.0 / static_cast<double>(model.texture.rows);
  for (double& x : mean) x *= inv;
  return mean;
}

void BackgroundModel::validate(std::size_t dim) const {
  if (mean.size() != dim) throw InvalidArgument("background mean dimension mismatch");
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw InvalidArgument("background sigma must be positive");
  check_finite(mean, "background mean");
}

void ModelBank::validate() const {
  if (models.empty()) throw InvalidArgument("model bank has no classes");
  const std::size_t dim = models.front().feature_dim();
  for (std::size_t y = 0; y < models.size(); ++y) {
    if (models[y].class_id != static_cast<int>(y)) {
      throw InvalidArgument("class ids must be contiguous 0..Y-1");
    }
    if (models[y].feature_dim() != dim) throw InvalidArgument("texture dimensions differ across classes");
    models[y].validate();
  }
  background.validate(dim);
  extractor.validate();
  if (static_cast<std::size_t>(extractor.out_dim) != dim) {
    throw InvalidArgument("extractor output dimension differs from texture dimension");
  }
}

void ModelBank::quantize_to_float() {
  auto q = [](double& x) { x = static_cast<double>(static_cast<float>(x)); };
  for (auto& m : models) {
    for (double& e : m.extents) q(e);
    for (auto& v : m.vertices) {
      for (int a = 0; a < 3; ++a) q(v[a]);
    }
    for (double& x : m.texture.values) q(x);
  }
  for (double& x : background.mean) q(x);
  q(background.sigma);
  for (Eigen::Index i = 0; i < extractor.weight.size(); ++i) q(extractor.weight.data()[i]);
  for (Eigen::Index i = 0; i < extractor.bias.size(); ++i) q(extractor.bias.data()[i]);
  for (auto& k : extractor.conv) {
    for (Eigen::Index i = 0; i < k.size(); ++i) q(k.data()[i]);
  }
}

}  // namespace rcnet
