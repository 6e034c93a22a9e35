#pragma once

#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "rcnet/camera.hpp"
#include "rcnet/common.hpp"
#include "rcnet/grid.hpp"
#include "rcnet/mesh.hpp"

namespace rcnet {

enum class OcclusionLevel { l0 = 0, l1 = 1, l2 = 2, l3 = 3 };

struct OcclusionBracket {
  double lo = 0.0;
  double hi = 0.0;
};

OcclusionBracket bracket(OcclusionLevel level);
std::string_view level_name(OcclusionLevel level);
OcclusionLevel parse_level(std::string_view name);

enum class Nuisance { context, texture, shape, weather, pose };

std::string_view nuisance_name(Nuisance n);
Nuisance parse_nuisance(std::string_view name);

struct AppearanceConfig {
  int fourier_terms = 6;
  double frequency = 1.5;          // std of spatial frequencies over the unit half-extent cube
  double base_amplitude = 1.0;     // shared across classes
  double face_weight = 0.25;       // per-face constant colours
  double class_separation = 1.2;   // amplitude of the class-specific component
  int class_channels = 3;          // trailing channels carrying it; 0 means all
  double instance_noise = 0.25;    // per-vertex, per-scene
  double pixel_noise = 0.3;
  double background_amplitude = 1.0;

  void validate() const;
};

struct WorldConfig {
  std::vector<Extents> class_extents;
  int image_height = 128;
  int image_width = 128;
  int stride = 8;
  int channels = 8;
  double focal = 30.0;  // in feature-lattice cells
  double nominal_distance = 6.0;
  double distance_jitter = 0.05;
  double shape_jitter = 0.2;
  int vertex_target = 1100;
  PoseBands bands;
  AppearanceConfig appearance;
  std::uint64_t seed = 1;

  int class_count() const { return static_cast<int>(class_extents.size()); }
  int lattice_height() const { return image_height / stride; }
  int lattice_width() const { return image_width / stride; }
  CameraIntrinsics lattice_camera() const;
  CameraIntrinsics image_camera() const;
  void validate() const;

  // Built-in extents for `classes` classes of similar size.
  static WorldConfig with_classes(int classes, std::uint64_t seed);
};

struct SceneSpec {
  int class_id = 0;
  Pose pose;
  OcclusionLevel level = OcclusionLevel::l0;
  std::vector<Nuisance> nuisances;
  std::uint64_t seed = 0;

  bool has(Nuisance n) const;
};

struct SceneRecord {
  std::string id;
  std::string split = "eval";
  int class_id = 0;
  Pose pose;
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  OcclusionLevel level = OcclusionLevel::l0;
  std::vector<Nuisance> nuisances;
  double occlusion_ratio = 0.0;
  bool occlusion_flag = false;  // bracket could not be reached
  std::uint64_t seed = 0;
  Image image;
  std::vector<std::uint8_t> foreground;  // image resolution
  std::vector<std::uint8_t> occluder;    // image resolution
};

// Smooth random vector field sum_k a_k sin(w_k . p + phi_k).
struct FourierField {
  std::vector<Eigen::Vector3d> omega;
  std::vector<double> phase;
  FeatureRows amplitude;  // terms x channels

  static FourierField random(int terms, int channels, double frequency, double amplitude, Rng& rng);
  void add_to(const Eigen::Vector3d& p, double* out) const;
};

// Per-class, per-vertex appearance codes and the canonical lattices.
class SceneGenerator {
 public:
  explicit SceneGenerator(WorldConfig world);

  const WorldConfig& world() const { return world_; }
  const CuboidLattice& lattice(int class_id) const { return lattices_.at(static_cast<std::size_t>(class_id)); }
  const FeatureRows& codes(int class_id) const { return codes_.at(static_cast<std::size_t>(class_id)); }

  // Samples a pose in (or, with the pose nuisance, outside) the training band.
  SceneSpec sample_spec(int class_id, OcclusionLevel level, std::vector<Nuisance> nuisances, std::uint64_t seed,
                        double azimuth_lo = 0.0, double azimuth_hi = 2.0 * std::numbers::pi) const;

  SceneRecord generate(const SceneSpec& spec) const;

 private:
  FeatureRows make_codes(int class_id, Rng* override_rng) const;

  WorldConfig world_;
  std::vector<CuboidLattice> lattices_;
  std::vector<std::vector<std::int32_t>> tables_;
  std::vector<FeatureRows> codes_;
};

SceneRecord generate_scene(const SceneGenerator& generator, const SceneSpec& spec);

struct OcclusionResult {
  double ratio = 0.0;
  bool flag = false;
  std::vector<std::uint8_t> mask;
};

// Superimposes textured rectangles over the foreground until the covered
// fraction lies in the level's bracket.
OcclusionResult apply_occlusion(Image& image, std::span<const std::uint8_t> foreground, OcclusionLevel level,
                                Rng& rng, double amplitude = 1.0);

// Fraction of foreground pixels covered by the occluder mask.
double occlusion_ratio(std::span<const std::uint8_t> foreground, std::span<const std::uint8_t> occluder);

struct DatasetConfig {
  WorldConfig world;
  int per_class = 20;  // eval scenes per class, per level and per nuisance group
  std::vector<OcclusionLevel> levels{OcclusionLevel::l0};
  std::vector<Nuisance> nuisances;  // each adds an L0 group with that single nuisance
  int train_per_class = 0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct Dataset {
  WorldConfig world;
  std::vector<SceneRecord> records;
};

struct PlannedScene {
  std::string id;
  std::string split;
  SceneSpec spec;
};

// Train records first (L0, no nuisances), then eval records per level, then
// one L0 group per nuisance. Azimuths are stratified within each class group.
std::vector<PlannedScene> plan_dataset(const DatasetConfig& config, const SceneGenerator& generator);

Dataset generate_dataset(const DatasetConfig& config, unsigned threads = 1);

}  // namespace rcnet
