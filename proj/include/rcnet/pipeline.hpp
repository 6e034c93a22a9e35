#pragma once

#include <span>
#include <string>
#include <vector>

#include "rcnet/eval.hpp"
#include "rcnet/heads.hpp"
#include "rcnet/inference.hpp"
#include "rcnet/synth.hpp"
#include "rcnet/training.hpp"

namespace rcnet {

BankSpec bank_spec_for(const WorldConfig& world, int feature_dim = 64, bool use_conv = false);
InferenceOptions inference_options_for(const WorldConfig& world);
HeadTrainConfig head_config_for(const WorldConfig& world);

std::vector<TrainingSample> training_samples(std::span<const SceneRecord> records);

// Features under the bank's extractor, labelled with the nearest grid bin.
std::vector<HeadSample> head_samples(const ModelBank& bank, std::span<const TrainingSample> samples,
                                     const HeadTrainConfig& config, unsigned threads = 1);
FeedForwardHeads fit_heads(const ModelBank& bank, std::span<const TrainingSample> samples,
                           const HeadTrainConfig& config, unsigned threads = 1);

struct RunOptions {
  std::string mode = "full";  // "full" or "cascade"
  CascadeConfig cascade;
  InferenceOptions inference;
  bool record_branches = false;
  unsigned threads = 1;  // fan-out over records
};

// One log per record, in record order.
std::vector<LogRecord> run_inference(std::span<const SceneRecord> records, const ModelBank& bank,
                                     const FeedForwardHeads* heads, const RunOptions& options);

}  // namespace rcnet
