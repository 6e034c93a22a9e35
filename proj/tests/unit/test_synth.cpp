#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "rcnet/synth.hpp"

using namespace rcnet;

namespace {

WorldConfig small_world(int classes, std::uint64_t seed) {
  WorldConfig w = WorldConfig::with_classes(classes, seed);
  w.image_height = 64;
  w.image_width = 64;
  w.focal = 15.0;
  w.vertex_target = 300;
  return w;
}

std::size_t count(const std::vector<std::uint8_t>& m) { return static_cast<std::size_t>(std::count(m.begin(), m.end(), 1)); }

double oracle_ratio(const std::vector<std::uint8_t>& fg, const std::vector<std::uint8_t>& occ) {
  double n = 0, hit = 0;
  for (std::size_t i = 0; i < fg.size(); ++i) {
    n += fg[i];
    hit += fg[i] && occ[i];
  }
  return n == 0 ? 0.0 : hit / n;
}

using Code = std::vector<float>;

std::set<Code> code_set(const FeatureRows& codes) {
  std::set<Code> s;
  for (std::size_t r = 0; r < codes.rows; ++r) {
    Code c;
    for (double x : codes.row(r)) c.push_back(static_cast<float>(x));
    s.insert(c);
  }
  return s;
}

// Fraction of foreground pixels whose value is one of the given codes.
double code_hits(const SceneRecord& rec, const std::set<Code>& codes) {
  std::size_t fg = 0, hit = 0;
  const auto c = static_cast<std::size_t>(rec.image.channels);
  for (std::size_t p = 0; p < rec.foreground.size(); ++p) {
    if (!rec.foreground[p]) continue;
    ++fg;
    const float* v = rec.image.values.data() + p * c;
    hit += codes.count(Code(v, v + c));
  }
  return fg == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(fg);
}

}  // namespace

TEST_CASE("level brackets and names") {
  CHECK(bracket(OcclusionLevel::l0).hi == 0.0);
  CHECK(bracket(OcclusionLevel::l1).lo == doctest::Approx(0.2));
  CHECK(bracket(OcclusionLevel::l1).hi == doctest::Approx(0.4));
  CHECK(bracket(OcclusionLevel::l2).lo == doctest::Approx(0.4));
  CHECK(bracket(OcclusionLevel::l3).hi == doctest::Approx(0.8));
  for (OcclusionLevel l : {OcclusionLevel::l0, OcclusionLevel::l1, OcclusionLevel::l2, OcclusionLevel::l3})
    CHECK(parse_level(level_name(l)) == l);
  for (Nuisance n : {Nuisance::context, Nuisance::texture, Nuisance::shape, Nuisance::weather, Nuisance::pose})
    CHECK(parse_nuisance(nuisance_name(n)) == n);
  CHECK_THROWS_AS(parse_level("L9"), InvalidArgument);
  CHECK_THROWS_AS(parse_nuisance("fog"), InvalidArgument);
}

TEST_CASE("occlusion ratios land in their brackets and match a recount") {
  const SceneGenerator gen(small_world(3, 7));
  std::map<OcclusionLevel, int> flagged;
  for (OcclusionLevel l : {OcclusionLevel::l0, OcclusionLevel::l1, OcclusionLevel::l2, OcclusionLevel::l3}) {
    for (int k = 0; k < 30; ++k) {
      const SceneRecord r = gen.generate(gen.sample_spec(k % 3, l, {}, 1000 + k));
      const double recount = oracle_ratio(r.foreground, r.occluder);
      CHECK(r.occlusion_ratio == doctest::Approx(recount).epsilon(1e-12));
      CHECK(occlusion_ratio(r.foreground, r.occluder) == doctest::Approx(recount).epsilon(1e-12));
      if (l == OcclusionLevel::l0) {
        CHECK(r.occlusion_ratio == 0.0);
        CHECK(count(r.occluder) == 0);
        continue;
      }
      const OcclusionBracket b = bracket(l);
      if (r.occlusion_flag) {
        ++flagged[l];
      } else {
        CHECK(r.occlusion_ratio >= b.lo - 0.02);
        CHECK(r.occlusion_ratio <= b.hi + 0.02);
      }
    }
  }
  for (auto [l, n] : flagged) CHECK_MESSAGE(n <= 3, level_name(l));
}

TEST_CASE("apply_occlusion edge cases") {
  Image img(8, 8, 2, 1.5f);
  std::vector<std::uint8_t> fg(64, 0);
  for (int y = 2; y < 6; ++y)
    for (int x = 2; x < 6; ++x) fg[static_cast<std::size_t>(y) * 8 + x] = 1;
  Rng rng(1);
  const Image before = img;
  const OcclusionResult none = apply_occlusion(img, fg, OcclusionLevel::l0, rng);
  CHECK(img == before);
  CHECK(none.ratio == 0.0);
  CHECK(count(none.mask) == 0);

  std::vector<std::uint8_t> half(64, 0);
  for (int y = 2; y < 4; ++y)
    for (int x = 2; x < 6; ++x) half[static_cast<std::size_t>(y) * 8 + x] = 1;
  CHECK(occlusion_ratio(fg, half) == doctest::Approx(0.5));
  CHECK(occlusion_ratio(fg, std::vector<std::uint8_t>(64, 1)) == doctest::Approx(1.0));
  CHECK_THROWS_AS(occlusion_ratio(fg, std::vector<std::uint8_t>(3, 0)), InvalidArgument);

  const OcclusionResult mid = apply_occlusion(img, fg, OcclusionLevel::l2, rng);
  CHECK(mid.ratio == doctest::Approx(oracle_ratio(fg, mid.mask)));
  for (std::size_t p = 0; p < 64; ++p)
    if (!mid.mask[p]) CHECK(img.values[2 * p] == 1.5f);
  CHECK_THROWS_AS(apply_occlusion(img, std::vector<std::uint8_t>(64, 0), OcclusionLevel::l1, rng), InvalidArgument);
  CHECK_THROWS_AS(apply_occlusion(img, std::vector<std::uint8_t>(10, 1), OcclusionLevel::l1, rng), InvalidArgument);
}

TEST_CASE("mean occluded fraction increases strictly with level") {
  DatasetConfig cfg;
  cfg.world = small_world(4, 11);
  cfg.per_class = 25;
  cfg.levels = {OcclusionLevel::l0, OcclusionLevel::l1, OcclusionLevel::l2, OcclusionLevel::l3};
  const Dataset ds = generate_dataset(cfg, 2);
  std::map<OcclusionLevel, std::pair<double, int>> acc;
  for (const auto& r : ds.records) {
    acc[r.level].first += r.occlusion_ratio;
    acc[r.level].second += 1;
  }
  double prev = -1.0;
  for (auto& [l, v] : acc) {
    CHECK(v.second == 100);
    const double mean = v.first / v.second;
    CHECK(mean > prev);
    prev = mean;
  }
}

TEST_CASE("generation is deterministic and seed dependent") {
  const SceneGenerator a(small_world(3, 5)), b(small_world(3, 5));
  const SceneSpec s = a.sample_spec(1, OcclusionLevel::l2, {Nuisance::weather, Nuisance::context}, 42);
  const SceneRecord ra = a.generate(s), rb = b.generate(s);
  CHECK(ra.image == rb.image);
  CHECK(ra.foreground == rb.foreground);
  CHECK(ra.occluder == rb.occluder);
  CHECK(ra.occlusion_ratio == rb.occlusion_ratio);
  const SceneRecord rc = a.generate(a.sample_spec(1, OcclusionLevel::l2, {Nuisance::weather, Nuisance::context}, 43));
  CHECK_FALSE(ra.image == rc.image);
  CHECK(a.sample_spec(0, OcclusionLevel::l0, {}, 9).pose == a.sample_spec(0, OcclusionLevel::l0, {}, 9).pose);

  DatasetConfig cfg;
  cfg.world = small_world(2, 5);
  cfg.per_class = 3;
  cfg.levels = {OcclusionLevel::l1};
  const Dataset d1 = generate_dataset(cfg, 1), d3 = generate_dataset(cfg, 3);
  REQUIRE(d1.records.size() == d3.records.size());
  for (std::size_t i = 0; i < d1.records.size(); ++i) {
    CHECK(d1.records[i].id == d3.records[i].id);
    CHECK(d1.records[i].image == d3.records[i].image);
  }
}

TEST_CASE("dataset layout and counts") {
  DatasetConfig cfg;
  cfg.world = small_world(3, 2);
  cfg.per_class = 20;
  const SceneGenerator gen(cfg.world);
  CHECK(plan_dataset(cfg, gen).size() == 60);

  cfg.levels = {OcclusionLevel::l0, OcclusionLevel::l2};
  cfg.nuisances = {Nuisance::texture};
  cfg.train_per_class = 4;
  const auto plan = plan_dataset(cfg, gen);
  CHECK(plan.size() == 12 + 120 + 60);
  std::map<std::string, int> groups;
  std::set<std::string> ids;
  for (const auto& p : plan) {
    ids.insert(p.id);
    if (p.split == "train") {
      CHECK(p.spec.level == OcclusionLevel::l0);
      CHECK(p.spec.nuisances.empty());
      CHECK(p.id.rfind("train-", 0) == 0);
    }
    groups[p.id.substr(0, p.id.find("-c"))] += 1;
  }
  CHECK(ids.size() == plan.size());
  CHECK(groups["train"] == 12);
  CHECK(groups["eval-L0"] == 60);
  CHECK(groups["eval-L2"] == 60);
  CHECK(groups["eval-ood-texture"] == 60);
  CHECK(plan.front().split == "train");

  // Azimuths are stratified: one sample per equal slice within a class group.
  std::vector<double> az;
  for (const auto& p : plan)
    if (p.id.rfind("eval-L0-c1-", 0) == 0) az.push_back(p.spec.pose.azimuth);
  REQUIRE(az.size() == 20);
  std::sort(az.begin(), az.end());
  for (std::size_t k = 0; k < az.size(); ++k) {
    CHECK(az[k] >= k * 2.0 * std::numbers::pi / 20 - 1e-12);
    CHECK(az[k] <= (k + 1) * 2.0 * std::numbers::pi / 20 + 1e-12);
  }
}

TEST_CASE("nuisances change only their own factor") {
  WorldConfig w = small_world(3, 9);
  w.appearance.instance_noise = 0.0;
  w.appearance.pixel_noise = 0.0;
  const SceneGenerator gen(w);
  for (int k = 0; k < 6; ++k) {
    const int y = k % 3;
    const SceneSpec plain = gen.sample_spec(y, OcclusionLevel::l0, {}, 500 + k);
    const std::set<Code> codes = code_set(gen.codes(y));
    const SceneRecord base = gen.generate(plain);
    CHECK(code_hits(base, codes) == 1.0);

    SceneSpec tex = plain;
    tex.nuisances = {Nuisance::texture};
    const SceneRecord rt = gen.generate(tex);
    CHECK(rt.foreground == base.foreground);
    CHECK(code_hits(rt, codes) < 0.05);
    for (std::size_t p = 0; p < base.foreground.size(); ++p)
      if (!base.foreground[p]) CHECK(rt.image.values[p * 8] == base.image.values[p * 8]);

    SceneSpec shape = plain;
    shape.nuisances = {Nuisance::shape};
    const SceneRecord rs = gen.generate(shape);
    CHECK(rs.class_id == y);
    CHECK(rs.foreground != base.foreground);
    CHECK(code_hits(rs, codes) == 1.0);

    SceneSpec ctx = plain;
    ctx.nuisances = {Nuisance::context};
    const SceneRecord rc = gen.generate(ctx);
    CHECK(rc.foreground == base.foreground);
    CHECK(code_hits(rc, codes) == 1.0);
    CHECK_FALSE(rc.image == base.image);

    SceneSpec weather = plain;
    weather.nuisances = {Nuisance::weather};
    const SceneRecord rw = gen.generate(weather);
    CHECK(rw.foreground == base.foreground);
    CHECK(code_hits(rw, codes) < 0.05);
  }
}

TEST_CASE("pose nuisance leaves the training band") {
  const SceneGenerator gen(small_world(2, 4));
  const PoseBands& b = gen.world().bands;
  for (int k = 0; k < 200; ++k) {
    const Pose in = gen.sample_spec(k % 2, OcclusionLevel::l0, {}, k).pose;
    CHECK(in.elevation >= b.elevation_lo - 1e-12);
    CHECK(in.elevation <= b.elevation_hi + 1e-12);
    CHECK(std::abs(in.theta) <= b.theta_hi + 1e-12);
    const Pose out = gen.sample_spec(k % 2, OcclusionLevel::l0, {Nuisance::pose}, k).pose;
    CHECK((out.elevation > b.elevation_hi || std::abs(out.theta) > b.theta_hi));
  }
}

TEST_CASE("generator and dataset validation") {
  WorldConfig w = small_world(2, 1);
  CHECK_NOTHROW(w.validate());
  WorldConfig bad = w;
  bad.image_width = 60;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = w;
  bad.class_extents.clear();
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = w;
  bad.class_extents[0][1] = -1.0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = w;
  bad.appearance.pixel_noise = -0.1;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);

  const SceneGenerator gen(w);
  CHECK_THROWS_AS(gen.sample_spec(2, OcclusionLevel::l0, {}, 1), InvalidArgument);
  SceneSpec s = gen.sample_spec(0, OcclusionLevel::l0, {}, 1);
  s.class_id = -1;
  CHECK_THROWS_AS(gen.generate(s), InvalidArgument);

  DatasetConfig cfg;
  cfg.world = w;
  cfg.per_class = -1;
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
  cfg.per_class = 5;
  cfg.levels.clear();
  CHECK_THROWS_AS(cfg.validate(), InvalidArgument);
}
