#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "rcnet/inference.hpp"
#include "rcnet/likelihood.hpp"
#include "rcnet/pipeline.hpp"

using namespace rcnet;

namespace {

constexpr int kDim = 6;

struct Setup {
  WorldConfig world = WorldConfig::with_classes(3, 1);
  InferenceOptions io = inference_options_for(world);
  ModelBank bank;
};

// Bank whose textures are smooth functions of the vertex position, with an
// identity extractor so rendered maps can be fed in directly.
Setup smooth_bank(int classes = 3) {
  Setup s;
  s.world = WorldConfig::with_classes(classes, 1);
  s.io = inference_options_for(s.world);
  for (int y = 0; y < classes; ++y) {
    Rng r(static_cast<std::uint64_t>(y) + 1);
    s.bank.models.push_back(make_mesh_model(y, s.world.class_extents[static_cast<std::size_t>(y)], 1100, kDim, r));
    Rng rf(static_cast<std::uint64_t>(y) + 50);
    const FourierField field = FourierField::random(4, kDim, 1.0, 1.0, rf);
    auto& m = s.bank.models.back();
    for (std::size_t v = 0; v < m.vertices.size(); ++v) {
      auto row = m.texture.row(v);
      std::fill(row.begin(), row.end(), 0.0);
      field.add_to(m.vertices[v], row.data());
    }
  }
  s.bank.background = {std::vector<double>(kDim, 0.0), 1.0};
  s.bank.extractor = FeatureExtractor::identity(kDim, 8);
  return s;
}

// Smooth lattice field on the object's silhouette at `gt`, background mean
// elsewhere, and textures equal to the field sampled at the projections, so
// the vertex-sampled objective is minimised at `gt` exactly.
FeatureMap consistent_scene(NeuralMeshModel& m, const Pose& gt, const CameraIntrinsics& cam, std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  FeatureMap f(cam.height, cam.width, kDim);
  std::vector<std::array<double, 5>> c(kDim);
  for (auto& x : c) x = {n(rng), 0.35 * n(rng), 0.35 * n(rng), 3 * n(rng), 0.4 * n(rng)};
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x)
      for (std::size_t d = 0; d < kDim; ++d)
        f.cells.row(static_cast<std::size_t>(y) * cam.width + x)[d] =
            c[d][0] * std::sin(c[d][1] * x + c[d][2] * y + c[d][3]) + c[d][4] * std::cos(0.3 * x - 0.2 * y + d);
  const ProjectedMesh p = project(m, gt, cam);
  for (std::size_t i = 0; i < f.size(); ++i)
    if (!p.foreground[i])
      for (double& x : f.at(i)) x = 0.0;
  for (std::size_t v = 0; v < m.vertices.size(); ++v) {
    const Eigen::Vector2d uv = oracle::project_point(m.vertices[v], gt, cam);
    const auto s = oracle::bilinear(f, uv.x(), uv.y());
    std::copy(s.begin(), s.end(), m.texture.row(v).begin());
  }
  return f;
}

FeedForwardHeads flat_heads(int classes, int pool = 2) {
  FeedForwardHeads h;
  h.pose_pool = pool;
  h.class_head = LinearSoftmax::zeros(classes, kDim);
  h.pose_head = LinearSoftmax::zeros(PoseGridShape{}.size(), kDim * pool * pool);
  return h;
}

double rot_error(const Pose& a, const Pose& b) { return pose_error(rotation_from_pose(a), rotation_from_pose(b)); }

}  // namespace

TEST_CASE("optimize_pose started at the truth stays there") {
  const Setup s = smooth_bank();
  for (int k = 0; k < 6; ++k) {
    const Pose gt{0.5 + k, 0.2 + 0.05 * k, 0.1 - 0.04 * k, 6.0};
    const auto& m = s.bank.models[static_cast<std::size_t>(k % 3)];
    const FeatureMap f = render_features(m, gt, s.io.camera, s.bank.background);
    const OptimizeResult r = optimize_pose(f, m, s.bank.background, gt, s.io.camera, s.io.optimizer);
    CHECK(r.valid);
    CHECK(rot_error(r.pose, gt) < 1e-4);
    CHECK(r.nll == doctest::Approx(0.0));
    CHECK(r.nll <= r.init_nll);
  }
}

TEST_CASE("optimize_pose recovers a 0.1 rad azimuth offset on a consistent scene") {
  const Setup s = smooth_bank();
  OptimizerOptions opts = s.io.optimizer;
  opts.max_iterations = 300;
  std::mt19937_64 rng(1);
  for (int k = 0; k < 20; ++k) {
    Rng r(static_cast<std::uint64_t>(k) + 1);
    NeuralMeshModel m = make_mesh_model(0, s.world.class_extents[static_cast<std::size_t>(k % 3)], 1100, kDim, r);
    const Pose gt{0.5 + 0.7 * k, 0.2 + 0.05 * (k % 8), 0.1 - 0.03 * (k % 8), 6.0};
    const FeatureMap f = consistent_scene(m, gt, s.io.camera, rng);
    Pose init = gt;
    init.azimuth += 0.1;
    const OptimizeResult res = optimize_pose(f, m, s.bank.background, init, s.io.camera, opts);
    CHECK(rot_error(res.pose, gt) < std::numbers::pi / 180);
    CHECK(res.nll <= res.init_nll);
    CHECK(res.iterations <= opts.max_iterations);
  }
}

TEST_CASE("iteration cap 0 returns the initial pose and its nll") {
  const Setup s = smooth_bank();
  const Pose gt{1.0, 0.3, 0.0, 6.0};
  const auto& m = s.bank.models[1];
  const FeatureMap f = render_features(m, gt, s.io.camera, s.bank.background);
  OptimizerOptions opts = s.io.optimizer;
  opts.max_iterations = 0;
  const Pose init{1.2, 0.25, 0.05, 6.0};
  const OptimizeResult r = optimize_pose(f, m, s.bank.background, init, s.io.camera, opts);
  CHECK(r.pose == init);
  CHECK(r.iterations == 0);
  CHECK(r.nll == r.init_nll);
  CHECK(r.nll == doctest::Approx(nll(f, project(m, init, s.io.camera), m.texture, s.bank.background)));
}

TEST_CASE("empty foreground at the initial pose is flagged") {
  const Setup s = smooth_bank();
  CameraIntrinsics off = s.io.camera;
  off.u0 = 500.0;
  const FeatureMap f(off.height, off.width, kDim);
  const Pose init{0.0, 0.0, 0.0, 6.0};
  const OptimizeResult r = optimize_pose(f, s.bank.models[0], s.bank.background, init, off, s.io.optimizer);
  CHECK_FALSE(r.valid);
  CHECK(std::isinf(r.nll));
  CHECK(r.pose == init);
}

TEST_CASE("infer_full on a noiseless grid-pose scene") {
  const Setup s = smooth_bank();
  const auto grid = pose_grid(s.io.grid, s.io.nominal_distance, s.io.bands);
  for (std::size_t g : {5u, 40u, 101u}) {
    const FeatureMap f = render_features(s.bank.models[2], grid[g], s.io.camera, s.bank.background);
    const InferenceResult r = infer_full(f, s.bank, s.io);
    CHECK(r.predicted_class == 2);
    CHECK(r.stage == Stage::full);
    CHECK(pose_error(r.rotation, rotation_from_pose(grid[g])) < 1e-9);
    CHECK_FALSE(r.tie);
    CHECK(r.cost.full_runs == 1);
    CHECK(r.cost.nll_evaluations >= 3 * 144);
    for (const auto& c : r.per_class) {
      CHECK(c.evaluated);
      CHECK(c.nll <= c.init_nll);
    }
    std::size_t argmin = 0;
    for (std::size_t y = 1; y < r.per_class.size(); ++y)
      if (r.per_class[y].nll < r.per_class[argmin].nll) argmin = y;
    CHECK(static_cast<int>(argmin) == r.predicted_class);
  }
}

TEST_CASE("identical class models tie and the lower index wins") {
  Setup s = smooth_bank(2);
  s.bank.models[1] = s.bank.models[0];
  s.bank.models[1].class_id = 1;
  const Pose gt{2.0, 0.4, 0.1, 6.0};
  const FeatureMap f = render_features(s.bank.models[1], gt, s.io.camera, s.bank.background);
  const InferenceResult r = infer_full(f, s.bank, s.io);
  CHECK(r.tie);
  CHECK(r.predicted_class == 0);
  CHECK(r.per_class[0].nll == r.per_class[1].nll);
}

TEST_CASE("class fan-out does not change results") {
  const Setup s = smooth_bank();
  std::mt19937_64 rng(3);
  FeatureMap f = render_features(s.bank.models[1], {3.0, 0.5, -0.2, 6.1}, s.io.camera, s.bank.background);
  for (double& x : f.cells.values) x += 0.3 * std::normal_distribution<double>()(rng);
  InferenceOptions par = s.io;
  par.threads = 3;
  const InferenceResult a = infer_full(f, s.bank, s.io), b = infer_full(f, s.bank, par), c = infer_full(f, s.bank, s.io);
  for (const InferenceResult* o : {&b, &c}) {
    CHECK(o->predicted_class == a.predicted_class);
    CHECK(o->pose == a.pose);
    CHECK(o->cost.iterations == a.cost.iterations);
    for (std::size_t y = 0; y < 3; ++y) CHECK(o->per_class[y].nll == a.per_class[y].nll);
  }
}

TEST_CASE("cascade stages") {
  const Setup s = smooth_bank();
  const Pose gt{1.5, 0.3, 0.0, 6.0};
  const FeatureMap f = render_features(s.bank.models[2], gt, s.io.camera, s.bank.background);

  SUBCASE("confident head resolves at S1 without a multi-start search") {
    FeedForwardHeads h = flat_heads(3);
    h.class_head.bias[2] = 6.0;  // softmax(0, 0, 6) gives 0.995 on class 2
    const InferenceResult r = infer_cascade(f, s.bank, &h, CascadeConfig{}, s.io);
    CHECK(r.stage == Stage::s1);
    CHECK(r.predicted_class == 2);
    CHECK(*r.head_confidence > 0.95);
    CHECK(r.cost.full_runs == 0);
    CHECK(r.cost.class_proposals == 0);
  }
  SUBCASE("uncertain head goes through S2 with top-3 proposals") {
    FeedForwardHeads h = flat_heads(3);
    h.class_head.bias[2] = 0.5;  // about 0.45 on class 2
    Eigen::Index bin = nearest_pose_bin(gt, s.io.grid, s.io.bands);
    h.pose_head.bias[bin] = 3.0;
    const InferenceResult r = infer_cascade(f, s.bank, &h, CascadeConfig{}, s.io);
    CHECK(*r.head_confidence < 0.95);
    CHECK(r.stage == Stage::s2);
    CHECK(r.predicted_class == 2);
    CHECK(r.cost.class_proposals == 3);
    CHECK(r.cost.pose_proposals == 3);
    CHECK(r.cost.full_runs == 0);
    CHECK(r.match_score > 0.8);
  }
  SUBCASE("poor S2 match falls back to the full search") {
    std::mt19937_64 rng(9);
    const FeatureMap noise = oracle::random_map(s.io.camera.height, s.io.camera.width, kDim, rng);
    const FeedForwardHeads h = flat_heads(3);
    const InferenceResult r = infer_cascade(noise, s.bank, &h, CascadeConfig{}, s.io, true);
    REQUIRE(r.branches);
    CHECK(r.branches->s2.match_score < 0.8);
    CHECK(r.stage == Stage::s3);
    CHECK(r.cost.full_runs == 1);
    const InferenceResult full = infer_full(noise, s.bank, s.io);
    CHECK(r.predicted_class == full.predicted_class);
    CHECK(r.pose == full.pose);
  }
  SUBCASE("missing heads") {
    CHECK_THROWS_AS(infer_cascade(f, s.bank, nullptr, CascadeConfig{}, s.io), InvalidArgument);
    Image img(128, 128, kDim);
    CHECK_THROWS_AS(infer_cascade(img, s.bank, nullptr, CascadeConfig{}, s.io), InvalidArgument);
  }
}

TEST_CASE("cascade degenerates to the full search and to the head") {
  const Setup s = smooth_bank();
  std::mt19937_64 rng(4);
  FeedForwardHeads h = flat_heads(3);
  std::normal_distribution<double> g;
  for (Eigen::Index i = 0; i < h.class_head.weight.size(); ++i) h.class_head.weight.data()[i] = g(rng);
  for (Eigen::Index i = 0; i < h.pose_head.weight.size(); ++i) h.pose_head.weight.data()[i] = g(rng);
  for (int k = 0; k < 4; ++k) {
    const Pose gt{0.9 * k + 0.3, 0.1 + 0.1 * k, 0.05, 6.0};
    FeatureMap f = render_features(s.bank.models[static_cast<std::size_t>(k % 3)], gt, s.io.camera, s.bank.background);
    for (double& x : f.cells.values) x += 0.2 * g(rng);

    const InferenceResult full = infer_full(f, s.bank, s.io);
    const InferenceResult strict = infer_cascade(f, s.bank, &h, {1.0, 1.0, 3}, s.io);
    CHECK(strict.stage == Stage::s3);
    CHECK(strict.predicted_class == full.predicted_class);
    CHECK(strict.pose == full.pose);
    for (std::size_t y = 0; y < 3; ++y) CHECK(strict.per_class[y].nll == full.per_class[y].nll);

    const InferenceResult loose = infer_cascade(f, s.bank, &h, {0.0, 0.8, 3}, s.io);
    CHECK(loose.stage == Stage::s1);
    CHECK(loose.predicted_class == top_k(h.predict(f).class_probs, 1)[0]);

    int previous_full = -1;
    for (double tau2 : {0.0, 0.5, 0.8, 0.9, 0.99, 1.0}) {
      const InferenceResult r = infer_cascade(f, s.bank, &h, {1.0, tau2, 3}, s.io);
      CHECK(r.cost.full_runs >= previous_full);  // full runs are non-decreasing in tau2
      previous_full = r.cost.full_runs;
    }

    const InferenceResult rec = infer_cascade(f, s.bank, &h, CascadeConfig{}, s.io, true);
    const InferenceResult plain = infer_cascade(f, s.bank, &h, CascadeConfig{}, s.io);
    CHECK(rec.predicted_class == plain.predicted_class);
    CHECK(rec.pose == plain.pose);
    CHECK(rec.stage == plain.stage);
    REQUIRE(rec.branches);
    CHECK(rec.branches->full.class_id == full.predicted_class);
  }
}

TEST_CASE("option validation and stage names") {
  CascadeConfig c;
  c.tau1 = 1.5;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = {};
  c.top_k = 0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  OptimizerOptions o;
  o.refresh_every = 0;
  CHECK_THROWS_AS(o.validate(), InvalidArgument);
  o = {};
  o.max_iterations = -1;
  CHECK_THROWS_AS(o.validate(), InvalidArgument);
  InferenceOptions io;
  io.camera = CameraIntrinsics::centered(30.0, 16, 16);
  io.distance_factors.clear();
  CHECK_THROWS_AS(io.validate(), InvalidArgument);

  for (Stage st : {Stage::s1, Stage::s2, Stage::s3, Stage::full}) CHECK(parse_stage(stage_name(st)) == st);
  CHECK_THROWS_AS(parse_stage("s4"), FormatError);

  Setup s = smooth_bank();
  const FeatureMap wrong(16, 16, kDim + 1);
  CHECK_THROWS_AS(infer_full(wrong, s.bank, s.io), InvalidArgument);
}
