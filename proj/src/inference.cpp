#include "rcnet/inference.hpp"

#include <algorithm>
#include <cmath>

#include "rcnet/extractor.hpp"
#include "rcnet/likelihood.hpp"

namespace rcnet {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double exact_nll(const FeatureMap& features, const NeuralMeshModel& model, const BackgroundModel& background,
                 const Pose& pose, const CameraIntrinsics& cam) {
  const ProjectedMesh proj = project(model, pose, cam);
  if (proj.foreground_count == 0) return kInf;
  return nll(features, proj, model.texture, background);
}

double score_at(const FeatureMap& features, const NeuralMeshModel& model, const Pose& pose,
                const CameraIntrinsics& cam) {
  return match_score(features, project(model, pose, cam), model.texture);
}

// Lowest exact nll over the distance candidates at fixed angles.
Initialization distance_search(const FeatureMap& features, const NeuralMeshModel& model,
                               const BackgroundModel& background, Pose angles, const InferenceOptions& options) {
  Initialization best;
  best.pose = angles;
  best.pose.distance = options.nominal_distance * options.distance_factors.front();
  for (double factor : options.distance_factors) {
    angles.distance = options.nominal_distance * factor;
    const double e = exact_nll(features, model, background, angles, options.camera);
    ++best.evaluations;
    if (e < best.nll) {
      best.nll = e;
      best.pose = angles;
    }
  }
  return best;
}

ClassOutcome to_outcome(const OptimizeResult& r, const FeatureMap& features, const NeuralMeshModel& model,
                        const CameraIntrinsics& cam) {
  ClassOutcome c;
  c.evaluated = true;
  c.nll = r.nll;
  c.init_nll = r.init_nll;
  c.pose = r.pose;
  c.iterations = r.iterations;
  c.match_score = r.valid ? score_at(features, model, r.pose, cam) : 0.0;
  return c;
}

BranchOutcome to_branch(int class_id, const ClassOutcome& c) {
  return {class_id, c.pose, c.nll, c.match_score, c.iterations};
}

void finish(InferenceResult& res) {
  res.rotation = rotation_from_pose(res.pose);
}

struct Branch {
  int class_id = -1;
  ClassOutcome outcome;
  long evaluations = 0;
};

Branch s1_branch(const FeatureMap& features, const ModelBank& bank, const HeadOutput& head,
                 const FeedForwardHeads& heads, const InferenceOptions& options) {
  Branch b;
  b.class_id = top_k(head.class_probs, 1).front();
  const int bin = top_k(head.pose_probs, 1).front();
  const auto grid = pose_grid(heads.pose_shape, options.nominal_distance, heads.bands);
  const auto& model = bank.models[static_cast<std::size_t>(b.class_id)];
  const Initialization init = distance_search(features, model, bank.background, grid[static_cast<std::size_t>(bin)],
                                              options);
  b.evaluations = init.evaluations;
  const OptimizeResult r =
      optimize_pose(features, model, bank.background, init.pose, options.camera, options.optimizer);
  b.outcome = to_outcome(r, features, model, options.camera);
  return b;
}

Branch s2_branch(const FeatureMap& features, const ModelBank& bank, const HeadOutput& head,
                 const FeedForwardHeads& heads, const CascadeConfig& cascade, const InferenceOptions& options) {
  const auto classes = top_k(head.class_probs, cascade.top_k);
  const auto bins = top_k(head.pose_probs, cascade.top_k);
  const auto grid = pose_grid(heads.pose_shape, options.nominal_distance, heads.bands);
  Branch b;
  Initialization best;
  for (int c : classes) {
    const auto& model = bank.models[static_cast<std::size_t>(c)];
    for (int bin : bins) {
      const Initialization init =
          distance_search(features, model, bank.background, grid[static_cast<std::size_t>(bin)], options);
      b.evaluations += init.evaluations;
      if (b.class_id < 0 || init.nll < best.nll) {
        best = init;
        b.class_id = c;
      }
    }
  }
  const auto& model = bank.models[static_cast<std::size_t>(b.class_id)];
  const OptimizeResult r =
      optimize_pose(features, model, bank.background, best.pose, options.camera, options.optimizer);
  b.outcome = to_outcome(r, features, model, options.camera);
  return b;
}

}  // namespace

void OptimizerOptions::validate() const {
  if (!(step_size > 0.0) || !std::isfinite(step_size)) throw InvalidArgument("optimizer step size must be positive");
  if (!(step_decay > 0.0 && step_decay <= 1.0)) throw InvalidArgument("optimizer step decay must lie in (0, 1]");
  if (max_iterations < 0) throw InvalidArgument("optimizer iteration cap must be non-negative");
  if (!(gradient_tolerance >= 0.0)) throw InvalidArgument("gradient tolerance must be non-negative");
  if (refresh_every < 1) throw InvalidArgument("visibility refresh period must be positive");
}

void InferenceOptions::validate() const {
  camera.validate();
  if (!(nominal_distance > 0.0)) throw InvalidArgument("nominal distance must be positive");
  if (distance_factors.empty()) throw InvalidArgument("at least one distance candidate is required");
  for (double f : distance_factors) {
    if (!(f > 0.0) || !std::isfinite(f)) throw InvalidArgument("distance factors must be positive");
  }
  if (grid.azimuths < 1 || grid.elevations < 1 || grid.thetas < 1) throw InvalidArgument("pose grid counts must be >= 1");
  optimizer.validate();
}

void CascadeConfig::validate() const {
  if (!(tau1 >= 0.0 && tau1 <= 1.0)) throw InvalidArgument("tau1 must lie in [0, 1]");
  if (!(tau2 >= 0.0 && tau2 <= 1.0)) throw InvalidArgument("tau2 must lie in [0, 1]");
  if (top_k < 1) throw InvalidArgument("top_k must be positive");
}

std::string_view stage_name(Stage stage) {
  switch (stage) {
    case Stage::s1: return "S1";
    case Stage::s2: return "S2";
    case Stage::s3: return "S3";
    case Stage::full: return "full";
  }
  return "full";
}

Stage parse_stage(std::string_view name) {
  if (name == "S1") return Stage::s1;
  if (name == "S2") return Stage::s2;
  if (name == "S3") return Stage::s3;
  if (name == "full") return Stage::full;
  throw FormatError("unknown cascade stage '" + std::string(name) + "'");
}

OptimizeResult optimize_pose(const FeatureMap& features, const NeuralMeshModel& model,
                             const BackgroundModel& background, const Pose& init, const CameraIntrinsics& cam,
                             const OptimizerOptions& options) {
  options.validate();
  init.validate();
  OptimizeResult out;
  out.pose = init;
  ProjectedMesh proj = project(model, init, cam);
  if (proj.foreground_count == 0) return out;
  out.valid = true;
  out.init_nll = out.nll = nll(features, proj, model.texture, background);

  Pose best = init;
  double best_nll = out.init_nll;
  Pose pose = init;
  double step = options.step_size;
  for (int it = 0; it < options.max_iterations; ++it) {
    if (it > 0 && it % options.refresh_every == 0) {
      proj = project(model, pose, cam);
      if (proj.foreground_count == 0) break;
      const double e = nll(features, proj, model.texture, background);
      if (e < best_nll) {
        best_nll = e;
        best = pose;
      }
    }
    const PoseGradient g = pose_gradient(features, proj, model.vertices, model.texture, pose, cam, background);
    ++out.iterations;
    const double n = static_cast<double>(std::max<std::size_t>(1, g.sampled_vertices));
    const double ga = g.grad[0] / n, ge = g.grad[1] / n, gt = g.grad[2] / n;
    if (std::sqrt(ga * ga + ge * ge + gt * gt) < options.gradient_tolerance) break;
    pose.azimuth -= step * ga;
    pose.elevation -= step * ge;
    pose.theta -= step * gt;
    pose = canonical(pose);
    step *= options.step_decay;
  }
  if (out.iterations == 0) return out;
  const double final_nll = exact_nll(features, model, background, pose, cam);
  if (final_nll <= out.init_nll) {
    out.pose = pose;
    out.nll = final_nll;
  } else {
    out.pose = best;
    out.nll = best_nll;
  }
  return out;
}

Initialization grid_initialization(const FeatureMap& features, const NeuralMeshModel& model,
                                   const BackgroundModel& background, const InferenceOptions& options) {
  const auto grid = pose_grid(options.grid, options.nominal_distance, options.bands);
  std::size_t best = 0;
  double best_nll = kInf;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double e = exact_nll(features, model, background, grid[g], options.camera);
    if (e < best_nll) {
      best_nll = e;
      best = g;
    }
  }
  Initialization init = distance_search(features, model, background, grid[best], options);
  init.evaluations += static_cast<long>(grid.size());
  return init;
}

InferenceResult infer_full(const FeatureMap& features, const ModelBank& bank, const InferenceOptions& options) {
  options.validate();
  if (bank.models.empty()) throw InvalidArgument("model bank has no classes");
  if (features.dim() != bank.feature_dim()) throw InvalidArgument("feature dimension differs from the bank");
  const std::size_t classes = bank.class_count();
  std::vector<ClassOutcome> outcomes(classes);
  std::vector<long> evaluations(classes, 0);
  parallel_for(classes, options.threads, [&](std::size_t y) {
    const auto& model = bank.models[y];
    const Initialization init = grid_initialization(features, model, bank.background, options);
    evaluations[y] = init.evaluations;
    const OptimizeResult r =
        optimize_pose(features, model, bank.background, init.pose, options.camera, options.optimizer);
    outcomes[y] = to_outcome(r, features, model, options.camera);
  });

  InferenceResult res;
  res.stage = Stage::full;
  res.per_class = std::move(outcomes);
  std::size_t best = 0;
  for (std::size_t y = 1; y < classes; ++y) {
    if (res.per_class[y].nll < res.per_class[best].nll) best = y;
  }
  for (std::size_t y = 0; y < classes; ++y) {
    if (y != best && res.per_class[y].nll == res.per_class[best].nll) res.tie = true;
  }
  res.predicted_class = static_cast<int>(best);
  res.pose = res.per_class[best].pose;
  res.match_score = res.per_class[best].match_score;
  res.cost.full_runs = 1;
  for (std::size_t y = 0; y < classes; ++y) {
    res.cost.iterations += res.per_class[y].iterations;
    res.cost.nll_evaluations += evaluations[y];
  }
  finish(res);
  return res;
}

InferenceResult infer_cascade(const FeatureMap& features, const ModelBank& bank, const FeedForwardHeads* heads,
                              const CascadeConfig& cascade, const InferenceOptions& options, bool record_branches) {
  if (!heads) throw InvalidArgument("cascade inference requires trained heads");
  cascade.validate();
  options.validate();
  heads->validate();
  if (heads->class_head.outputs() != static_cast<int>(bank.class_count())) {
    throw InvalidArgument("heads were trained for a different number of classes");
  }
  if (static_cast<std::size_t>(heads->class_head.inputs()) != features.dim()) {
    throw InvalidArgument("heads were trained on a different feature dimension");
  }

  const HeadOutput head = heads->predict(features);
  const int head_class = top_k(head.class_probs, 1).front();
  const double confidence = head.class_probs[static_cast<std::size_t>(head_class)];
  const bool accept_s1 = confidence > cascade.tau1;

  std::optional<Branch> s1, s2;
  std::optional<InferenceResult> full;
  if (accept_s1 || record_branches) s1 = s1_branch(features, bank, head, *heads, options);
  if (!accept_s1 || record_branches) s2 = s2_branch(features, bank, head, *heads, cascade, options);
  const bool accept_s2 = !accept_s1 && s2->outcome.match_score > cascade.tau2;
  if ((!accept_s1 && !accept_s2) || record_branches) full = infer_full(features, bank, options);

  InferenceResult res;
  res.head_confidence = confidence;
  res.per_class.assign(bank.class_count(), ClassOutcome{});
  auto adopt = [&](const Branch& b, Stage stage) {
    res.stage = stage;
    res.predicted_class = b.class_id;
    res.pose = b.outcome.pose;
    res.match_score = b.outcome.match_score;
    res.per_class[static_cast<std::size_t>(b.class_id)] = b.outcome;
    res.cost.iterations = b.outcome.iterations;
    res.cost.nll_evaluations = b.evaluations;
  };
  if (accept_s1) {
    adopt(*s1, Stage::s1);
  } else if (accept_s2) {
    adopt(*s2, Stage::s2);
    res.cost.class_proposals = static_cast<int>(top_k(head.class_probs, cascade.top_k).size());
    res.cost.pose_proposals = static_cast<int>(top_k(head.pose_probs, cascade.top_k).size());
  } else {
    const InferenceResult& f = *full;
    res.stage = Stage::s3;
    res.predicted_class = f.predicted_class;
    res.pose = f.pose;
    res.match_score = f.match_score;
    res.per_class = f.per_class;
    res.tie = f.tie;
    res.cost.iterations = s2->outcome.iterations + f.cost.iterations;
    res.cost.nll_evaluations = s2->evaluations + f.cost.nll_evaluations;
    res.cost.full_runs = 1;
    res.cost.class_proposals = static_cast<int>(top_k(head.class_probs, cascade.top_k).size());
    res.cost.pose_proposals = static_cast<int>(top_k(head.pose_probs, cascade.top_k).size());
  }
  if (record_branches) {
    BranchTrace t;
    t.head_confidence = confidence;
    t.head_class = head_class;
    t.s1 = to_branch(s1->class_id, s1->outcome);
    t.s2 = to_branch(s2->class_id, s2->outcome);
    t.full = {full->predicted_class, full->pose, full->per_class[static_cast<std::size_t>(full->predicted_class)].nll,
              full->match_score, full->cost.iterations};
    res.branches = t;
  }
  finish(res);
  return res;
}

InferenceResult infer_cascade(const Image& image, const ModelBank& bank, const FeedForwardHeads* heads,
                              const CascadeConfig& cascade, const InferenceOptions& options, bool record_branches) {
  if (!heads) throw InvalidArgument("cascade inference requires trained heads");
  return infer_cascade(extract(image, bank.extractor), bank, heads, cascade, options, record_branches);
}

}  // namespace rcnet
