#include "rcnet/pipeline.hpp"

#include "rcnet/extractor.hpp"

namespace rcnet {

BankSpec bank_spec_for(const WorldConfig& world, int feature_dim, bool use_conv) {
  world.validate();
  BankSpec spec;
  spec.class_extents = world.class_extents;
  spec.vertex_target = world.vertex_target;
  spec.feature_dim = feature_dim;
  spec.input_channels = world.channels;
  spec.stride = world.stride;
  spec.use_conv = use_conv;
  spec.camera = world.lattice_camera();
  return spec;
}

InferenceOptions inference_options_for(const WorldConfig& world) {
  InferenceOptions o;
  o.camera = world.lattice_camera();
  o.nominal_distance = world.nominal_distance;
  o.bands = world.bands;
  return o;
}

HeadTrainConfig head_config_for(const WorldConfig& world) {
  HeadTrainConfig c;
  c.bands = world.bands;
  return c;
}

std::vector<TrainingSample> training_samples(std::span<const SceneRecord> records) {
  std::vector<TrainingSample> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({r.image, r.class_id, r.pose});
  return out;
}

std::vector<HeadSample> head_samples(const ModelBank& bank, std::span<const TrainingSample> samples,
                                     const HeadTrainConfig& config, unsigned threads) {
  std::vector<HeadSample> out(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t i) {
    out[i].features = extract(samples[i].image, bank.extractor);
    out[i].class_id = samples[i].class_id;
    out[i].pose_bin = nearest_pose_bin(samples[i].pose, config.pose_shape, config.bands);
  });
  return out;
}

FeedForwardHeads fit_heads(const ModelBank& bank, std::span<const TrainingSample> samples,
                           const HeadTrainConfig& config, unsigned threads) {
  return train_heads(head_samples(bank, samples, config, threads), static_cast<int>(bank.class_count()), config);
}

std::vector<LogRecord> run_inference(std::span<const SceneRecord> records, const ModelBank& bank,
                                     const FeedForwardHeads* heads, const RunOptions& options) {
  if (options.mode != "full" && options.mode != "cascade") {
    throw InvalidArgument("mode must be 'full' or 'cascade', got '" + options.mode + "'");
  }
  if (options.mode == "cascade" && heads == nullptr) {
    throw InvalidArgument("cascade mode needs feed-forward heads");
  }
  options.cascade.validate();
  options.inference.validate();
  InferenceOptions inner = options.inference;
  inner.threads = 1;
  std::vector<LogRecord> logs(records.size());
  parallel_for(records.size(), options.threads, [&](std::size_t i) {
    const SceneRecord& rec = records[i];
    InferenceResult result;
    if (options.mode == "full") {
      result = infer_full(extract(rec.image, bank.extractor), bank, inner);
    } else {
      result = infer_cascade(rec.image, bank, heads, options.cascade, inner, options.record_branches);
    }
    logs[i] = make_log_record(rec, std::move(result), options.mode);
  });
  return logs;
}

}  // namespace rcnet
