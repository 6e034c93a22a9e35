#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rcnet/camera.hpp"
#include "rcnet/extractor.hpp"
#include "rcnet/grid.hpp"
#include "rcnet/mesh.hpp"

namespace rcnet {

// cap == 0: exact value from first and second moments of the two partitions.
// cap > 0: at most `cap` uniformly drawn ordered pairs per term, rescaled to
// the full pair count; when a term has no more than `cap` pairs it is
// enumerated exhaustively.
struct PairSampling {
  std::size_t cap = 0;
  std::uint64_t seed = 0;
};

// -sum_{i,j in FG} |f_i - f_j|^2 - sum_{i in FG, j in BG} |f_i - f_j|^2
double con_loss(const FeatureMap& features, std::span<const std::uint8_t> foreground,
                const PairSampling& sampling = {});

// con_loss / (|FG|^2 + |FG||BG|) and its gradient with respect to every f_i.
double normalized_con_loss(const FeatureMap& features, std::span<const std::uint8_t> foreground,
                           FeatureRows* grad = nullptr);

// -sum_y sum_{ybar != y} |mu(y) - mu(ybar)|^2 over texture means.
double class_loss(const ModelBank& bank);
double class_loss(std::span<const std::vector<double>> class_means);

struct TextureUpdateOptions {
  double momentum = 0.5;  // eta in (0, 1]
  bool renormalize = true;
};

// C_r <- (1 - eta) C_r + eta * mean of the features assigned to r, over all
// maps given; vertices without assigned cells keep their texture bit for bit.
void update_textures_ma(NeuralMeshModel& model, std::span<const FeatureMap* const> features,
                        std::span<const std::vector<std::int32_t>* const> correspondences,
                        const TextureUpdateOptions& options);
void update_textures_ma(NeuralMeshModel& model, const FeatureMap& features,
                        const std::vector<std::int32_t>& correspondence, const TextureUpdateOptions& options);

struct TrainingSample {
  Image image;
  int class_id = 0;
  Pose pose;
};

struct BankSpec {
  std::vector<Extents> class_extents;
  int vertex_target = 1100;
  int feature_dim = 64;
  int input_channels = 8;
  int stride = 8;
  bool use_conv = false;
  CameraIntrinsics camera;  // feature-lattice camera
};

struct TrainConfig {
  double momentum = 0.5;
  double learning_rate = 0.5;
  int epochs = 3;
  int batch_size = 16;
  double con_weight = 1.0;
  double class_weight = 1.0;
  double stop_tolerance = 1e-3;  // relative increase of the joint loss that ends training
  std::uint64_t seed = 1;

  void validate() const;
};

struct LossRecord {
  int epoch = 0;
  double con = 0.0;
  double cls = 0.0;
  double joint = 0.0;
};

struct TrainResult {
  ModelBank bank;
  std::vector<LossRecord> trace;
  bool stopped_early = false;
};

// Fresh bank: cuboid meshes with unit random textures and a random extractor.
ModelBank init_bank(const BankSpec& spec, std::uint64_t seed);

// Value and extractor gradient of the joint objective on one batch, with
// textures held fixed. Class means come from the batch foreground features
// (classes absent from the batch fall back to their texture means).
struct BatchObjective {
  double con = 0.0;
  double cls = 0.0;
  double joint = 0.0;
  ExtractorGradient grad;
};

struct PreparedSample {
  const Image* image = nullptr;
  int class_id = 0;
  ProjectedMesh projection;  // at the annotated pose
};

BatchObjective batch_objective(const ModelBank& bank, std::span<const PreparedSample> batch,
                               const TrainConfig& config, bool with_gradient = true);

// Continues from `bank` (epoch index bank.trained_epochs) for config.epochs epochs.
TrainResult train_bank(const std::vector<TrainingSample>& dataset, ModelBank bank, const BankSpec& spec,
                       const TrainConfig& config);
TrainResult train_bank(const std::vector<TrainingSample>& dataset, const BankSpec& spec,
                       const TrainConfig& config);

// Smallest pairwise distance between class texture means.
double min_class_mean_distance(const ModelBank& bank);

}  // namespace rcnet
