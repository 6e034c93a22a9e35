#include "rcnet/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

namespace rcnet {

namespace {

constexpr double kPi = std::numbers::pi;

std::string padded(int value, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%0*d", width, value);
  return buf;
}

std::vector<double> random_vector(int dim, double scale, Rng& rng) {
  std::normal_distribution<double> normal(0.0, scale);
  std::vector<double> v(static_cast<std::size_t>(dim));
  for (double& x : v) x = normal(rng);
  return v;
}

FeatureRows face_colours(int channels, double scale, Rng& rng) {
  FeatureRows out(6, static_cast<std::size_t>(channels));
  std::normal_distribution<double> normal(0.0, scale);
  for (double& x : out.values) x = normal(rng);
  return out;
}

// Face of a lattice node: lowest axis on the boundary, 2 * axis + (positive side).
int node_face(int i, int j, int k, const std::array<int, 3>& n) {
  const int idx[3] = {i, j, k};
  for (int a = 0; a < 3; ++a) {
    if (idx[a] == 0) return 2 * a;
    if (idx[a] == n[a]) return 2 * a + 1;
  }
  return 0;
}

struct ClassComponent {
  FourierField field;
  FeatureRows faces;
};

ClassComponent random_component(const AppearanceConfig& a, int channels, double amplitude, Rng& rng) {
  ClassComponent c;
  c.field = FourierField::random(a.fourier_terms, channels, a.frequency, amplitude, rng);
  c.faces = face_colours(channels, amplitude * a.face_weight, rng);
  return c;
}

void add_component(const ClassComponent& c, const Eigen::Vector3d& p_hat, int face, double weight, double* out,
                   std::size_t channels, std::size_t first = 0) {
  std::vector<double> tmp(channels, 0.0);
  c.field.add_to(p_hat, tmp.data());
  const double* f = c.faces.data(static_cast<std::size_t>(face));
  for (std::size_t d = first; d < channels; ++d) out[d] += weight * (tmp[d] + f[d]);
}

}  // namespace

OcclusionBracket bracket(OcclusionLevel level) {
  switch (level) {
    case OcclusionLevel::l0: return {0.0, 0.0};
    case OcclusionLevel::l1: return {0.2, 0.4};
    case OcclusionLevel::l2: return {0.4, 0.6};
    case OcclusionLevel::l3: return {0.6, 0.8};
  }
  return {0.0, 0.0};
}

std::string_view level_name(OcclusionLevel level) {
  static constexpr std::string_view names[] = {"L0", "L1", "L2", "L3"};
  return names[static_cast<int>(level)];
}

OcclusionLevel parse_level(std::string_view name) {
  for (int l = 0; l < 4; ++l) {
    if (level_name(static_cast<OcclusionLevel>(l)) == name) return static_cast<OcclusionLevel>(l);
  }
  throw InvalidArgument("unknown occlusion level '" + std::string(name) + "'");
}

std::string_view nuisance_name(Nuisance n) {
  switch (n) {
    case Nuisance::context: return "context";
    case Nuisance::texture: return "texture";
    case Nuisance::shape: return "shape";
    case Nuisance::weather: return "weather";
    case Nuisance::pose: return "pose";
  }
  return "context";
}

Nuisance parse_nuisance(std::string_view name) {
  for (Nuisance n : {Nuisance::context, Nuisance::texture, Nuisance::shape, Nuisance::weather, Nuisance::pose}) {
    if (nuisance_name(n) == name) return n;
  }
  throw InvalidArgument("unknown nuisance '" + std::string(name) + "'");
}

void AppearanceConfig::validate() const {
  if (fourier_terms < 1) throw InvalidArgument("appearance needs at least one Fourier term");
  for (double v : {frequency, base_amplitude, face_weight, class_separation, instance_noise, pixel_noise,
                   background_amplitude}) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw InvalidArgument("appearance parameters must be non-negative");
  }
}

CameraIntrinsics WorldConfig::lattice_camera() const {
  return CameraIntrinsics::centered(focal, lattice_height(), lattice_width());
}

CameraIntrinsics WorldConfig::image_camera() const { return lattice_camera().upsampled(stride); }

void WorldConfig::validate() const {
  if (class_extents.empty()) throw InvalidArgument("world needs at least one class");
  for (const auto& e : class_extents) {
    for (double x : e) {
      if (!(x > 0.0) || !std::isfinite(x)) throw InvalidArgument("class extents must be positive");
    }
  }
  if (stride < 1 || image_height < stride || image_width < stride || image_height % stride != 0 ||
      image_width % stride != 0) {
    throw InvalidArgument("image size must be a positive multiple of the stride");
  }
  if (channels < 1) throw InvalidArgument("image channels must be positive");
  if (!(focal > 0.0) || !(nominal_distance > 0.0)) throw InvalidArgument("camera parameters must be positive");
  if (!(distance_jitter >= 0.0 && distance_jitter < 1.0)) throw InvalidArgument("distance jitter must lie in [0, 1)");
  if (!(shape_jitter >= 0.0 && shape_jitter < 1.0)) throw InvalidArgument("shape jitter must lie in [0, 1)");
  if (vertex_target < 8) throw InvalidArgument("vertex target must be at least 8");
  appearance.validate();
}

WorldConfig WorldConfig::with_classes(int classes, std::uint64_t seed) {
  if (classes < 1) throw InvalidArgument("world needs at least one class");
  static const Extents table[] = {{2.0, 1.0, 1.3}, {1.8, 1.15, 1.2}, {2.2, 0.9, 1.25}, {1.9, 1.05, 1.45},
                                  {2.1, 1.2, 1.1}, {1.7, 1.0, 1.5},  {2.3, 1.1, 1.0},  {2.0, 1.3, 1.2}};
  WorldConfig w;
  w.seed = seed;
  for (int y = 0; y < classes; ++y) {
    if (y < 8) {
      w.class_extents.push_back(table[y]);
    } else {
      Rng rng(derive_seed(seed, "extents", static_cast<std::uint64_t>(y)));
      std::uniform_real_distribution<double> u(0.85, 1.15);
      w.class_extents.push_back({2.0 * u(rng), 1.1 * u(rng), 1.25 * u(rng)});
    }
  }
  for (auto& e : w.class_extents) {
    for (double& x : e) x = static_cast<double>(static_cast<float>(x));
  }
  return w;
}

bool SceneSpec::has(Nuisance n) const { return std::find(nuisances.begin(), nuisances.end(), n) != nuisances.end(); }

FourierField FourierField::random(int terms, int channels, double frequency, double amplitude, Rng& rng) {
  FourierField f;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * kPi);
  f.amplitude = FeatureRows(static_cast<std::size_t>(terms), static_cast<std::size_t>(channels));
  // Each term contributes variance a^2 / 2, so this scale gives unit-amplitude fields.
  const double scale = amplitude * std::sqrt(2.0 / terms);
  for (int k = 0; k < terms; ++k) {
    f.omega.emplace_back(frequency * normal(rng), frequency * normal(rng), frequency * normal(rng));
    f.phase.push_back(phase(rng));
    for (double& a : f.amplitude.row(static_cast<std::size_t>(k))) a = scale * normal(rng);
  }
  return f;
}

void FourierField::add_to(const Eigen::Vector3d& p, double* out) const {
  for (std::size_t k = 0; k < omega.size(); ++k) {
    const double s = std::sin(omega[k].dot(p) + phase[k]);
    const double* a = amplitude.data(k);
    for (std::size_t d = 0; d < amplitude.dim; ++d) out[d] += s * a[d];
  }
}

SceneGenerator::SceneGenerator(WorldConfig world) : world_(std::move(world)) {
  world_.validate();
  for (int y = 0; y < world_.class_count(); ++y) {
    Extents e = world_.class_extents[static_cast<std::size_t>(y)];
    for (double& x : e) x = static_cast<double>(static_cast<float>(x));
    lattices_.push_back(plan_cuboid(e, world_.vertex_target));
    tables_.push_back(lattices_.back().index_table());
  }
  for (int y = 0; y < world_.class_count(); ++y) codes_.push_back(make_codes(y, nullptr));
}

FeatureRows SceneGenerator::make_codes(int class_id, Rng* override_rng) const {
  const AppearanceConfig& a = world_.appearance;
  const int c = world_.channels;
  ClassComponent base, specific;
  if (override_rng) {
    base = random_component(a, c, a.base_amplitude, *override_rng);
    specific = random_component(a, c, 1.0, *override_rng);
  } else {
    Rng base_rng(derive_seed(world_.seed, "appearance-base"));
    Rng class_rng(derive_seed(world_.seed, "appearance-class", static_cast<std::uint64_t>(class_id)));
    base = random_component(a, c, a.base_amplitude, base_rng);
    specific = random_component(a, c, 1.0, class_rng);
  }
  const CuboidLattice& lat = lattices_[static_cast<std::size_t>(class_id)];
  const auto& n = lat.intervals;
  FeatureRows codes(lat.vertex_count(), static_cast<std::size_t>(c));
  const std::size_t first_specific =
      a.class_channels > 0 ? static_cast<std::size_t>(c - std::min(a.class_channels, c)) : 0;
  std::size_t r = 0;
  for (int i = 0; i <= n[0]; ++i) {
    for (int j = 0; j <= n[1]; ++j) {
      for (int k = 0; k <= n[2]; ++k) {
        if (!(i == 0 || i == n[0] || j == 0 || j == n[1] || k == 0 || k == n[2])) continue;
        const Eigen::Vector3d p = lat.node(i, j, k);
        const Eigen::Vector3d p_hat(2.0 * p.x() / lat.extents[0], 2.0 * p.y() / lat.extents[1],
                                    2.0 * p.z() / lat.extents[2]);
        const int face = node_face(i, j, k, n);
        add_component(base, p_hat, face, 1.0, codes.data(r), codes.dim);
        add_component(specific, p_hat, face, a.class_separation, codes.data(r), codes.dim, first_specific);
        ++r;
      }
    }
  }
  return codes;
}

SceneSpec SceneGenerator::sample_spec(int class_id, OcclusionLevel level, std::vector<Nuisance> nuisances,
                                      std::uint64_t seed, double azimuth_lo, double azimuth_hi) const {
  if (class_id < 0 || class_id >= world_.class_count()) throw InvalidArgument("class id outside the world");
  SceneSpec s;
  s.class_id = class_id;
  s.level = level;
  std::sort(nuisances.begin(), nuisances.end());
  nuisances.erase(std::unique(nuisances.begin(), nuisances.end()), nuisances.end());
  s.nuisances = std::move(nuisances);
  s.seed = seed;
  Rng rng(derive_seed(seed, "pose"));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const PoseBands& b = world_.bands;
  s.pose.azimuth = azimuth_lo + (azimuth_hi - azimuth_lo) * u(rng);
  s.pose.elevation = b.elevation_lo + (b.elevation_hi - b.elevation_lo) * u(rng);
  s.pose.theta = b.theta_lo + (b.theta_hi - b.theta_lo) * u(rng);
  s.pose.distance = world_.nominal_distance * (1.0 + world_.distance_jitter * (2.0 * u(rng) - 1.0));
  if (s.has(Nuisance::pose)) {
    if (u(rng) < 0.5) {
      s.pose.elevation = std::min(b.elevation_hi + (kPi / 9.0) * (0.25 + 0.75 * u(rng)), 0.45 * kPi);
    } else {
      const double mag = b.theta_hi + (kPi / 6.0) * (0.25 + 0.75 * u(rng));
      s.pose.theta = u(rng) < 0.5 ? -mag : mag;
    }
  }
  s.pose = canonical(s.pose);
  return s;
}

SceneRecord SceneGenerator::generate(const SceneSpec& spec) const {
  if (spec.class_id < 0 || spec.class_id >= world_.class_count()) throw InvalidArgument("class id outside the world");
  spec.pose.validate();
  const AppearanceConfig& a = world_.appearance;
  const auto y = static_cast<std::size_t>(spec.class_id);
  const CuboidLattice& lat = lattices_[y];
  const auto& table = tables_[y];
  const auto& n = lat.intervals;
  const auto c = static_cast<std::size_t>(world_.channels);

  FeatureRows codes;
  if (spec.has(Nuisance::texture)) {
    Rng rng(derive_seed(spec.seed, "texture"));
    codes = make_codes(spec.class_id, &rng);
  } else {
    codes = codes_[y];
  }
  {
    Rng rng(derive_seed(spec.seed, "instance"));
    std::normal_distribution<double> normal(0.0, a.instance_noise);
    for (double& x : codes.values) x += normal(rng);
  }

  Extents inst = lat.extents;
  if (spec.has(Nuisance::shape)) {
    Rng rng(derive_seed(spec.seed, "shape"));
    std::uniform_real_distribution<double> u(1.0 - world_.shape_jitter, 1.0 + world_.shape_jitter);
    for (double& x : inst) x *= u(rng);
  }

  SceneRecord rec;
  rec.class_id = spec.class_id;
  rec.pose = spec.pose;
  rec.rotation = rotation_from_pose(spec.pose);
  rec.level = spec.level;
  rec.nuisances = spec.nuisances;
  rec.seed = spec.seed;
  const int h = world_.image_height, w = world_.image_width;
  rec.image = Image(h, w, world_.channels);
  rec.foreground.assign(static_cast<std::size_t>(h) * w, 0);
  rec.occluder.assign(static_cast<std::size_t>(h) * w, 0);

  // Background clutter: the context nuisance swaps in a second, busier family.
  const bool context = spec.has(Nuisance::context);
  FourierField clutter;
  std::vector<double> offset;
  {
    Rng rng(derive_seed(spec.seed, "background"));
    clutter = FourierField::random(a.fourier_terms, world_.channels, context ? 6.0 : 2.0, a.background_amplitude, rng);
    Rng family(derive_seed(world_.seed, context ? "background-context" : "background-default"));
    offset = random_vector(world_.channels, 0.5 * a.background_amplitude, family);
  }

  const CameraIntrinsics cam = world_.image_camera();
  const Eigen::Matrix3d rt = rec.rotation.transpose();
  const Eigen::Vector3d eye = camera_center(rec.rotation, spec.pose.distance);
  std::vector<double> px(c);
  for (int yy = 0; yy < h; ++yy) {
    for (int xx = 0; xx < w; ++xx) {
      const std::size_t pix = static_cast<std::size_t>(yy) * w + xx;
      float* out = rec.image.pixel(yy, xx);
      const Eigen::Vector3d dir = rt * Eigen::Vector3d((xx - cam.u0) / cam.focal, (yy - cam.v0) / cam.focal, 1.0);
      const auto t = ray_cuboid_entry(eye, dir, inst);
      if (t && *t > 0.0) {
        const Eigen::Vector3d hit = eye + *t * dir;
        Eigen::Vector3d q;
        int face_axis = 0;
        double face_score = -1.0;
        for (int ax = 0; ax < 3; ++ax) {
          q[ax] = hit[ax] * lat.extents[ax] / inst[ax];
          const double s = std::abs(hit[ax]) / (inst[ax] / 2.0);
          if (s > face_score) {
            face_score = s;
            face_axis = ax;
          }
        }
        int idx[3];
        for (int ax = 0; ax < 3; ++ax) {
          if (ax == face_axis) {
            idx[ax] = q[ax] > 0.0 ? n[ax] : 0;
          } else {
            const double pitch = lat.extents[ax] / n[ax];
            idx[ax] = std::clamp(static_cast<int>(std::lround((q[ax] + lat.extents[ax] / 2.0) / pitch)), 0, n[ax]);
          }
        }
        const std::int32_t r = table[(static_cast<std::size_t>(idx[0]) * (n[1] + 1) + idx[1]) * (n[2] + 1) + idx[2]];
        const double* code = codes.data(static_cast<std::size_t>(r));
        for (std::size_t d = 0; d < c; ++d) out[d] = static_cast<float>(code[d]);
        rec.foreground[pix] = 1;
      } else {
        std::fill(px.begin(), px.end(), 0.0);
        const Eigen::Vector3d p(2.0 * xx / w - 1.0, 2.0 * yy / h - 1.0, 0.0);
        clutter.add_to(p, px.data());
        for (std::size_t d = 0; d < c; ++d) out[d] = static_cast<float>(px[d] + offset[d]);
      }
    }
  }

  if (spec.level != OcclusionLevel::l0) {
    Rng rng(derive_seed(spec.seed, "occluder"));
    OcclusionResult occ = apply_occlusion(rec.image, rec.foreground, spec.level, rng, a.background_amplitude);
    rec.occlusion_ratio = occ.ratio;
    rec.occlusion_flag = occ.flag;
    rec.occluder = std::move(occ.mask);
  }

  {
    Rng rng(derive_seed(spec.seed, "pixel-noise"));
    std::normal_distribution<double> normal(0.0, a.pixel_noise);
    for (float& v : rec.image.values) v = static_cast<float>(v + normal(rng));
  }
  if (spec.has(Nuisance::weather)) {
    std::vector<double> mean(c, 0.0);
    const std::size_t pixels = static_cast<std::size_t>(h) * w;
    for (std::size_t p = 0; p < pixels; ++p) {
      for (std::size_t d = 0; d < c; ++d) mean[d] += rec.image.values[p * c + d];
    }
    for (double& m : mean) m /= static_cast<double>(pixels);
    Rng rng(derive_seed(spec.seed, "weather"));
    std::normal_distribution<double> normal(0.0, 0.5);
    for (std::size_t p = 0; p < pixels; ++p) {
      for (std::size_t d = 0; d < c; ++d) {
        float& v = rec.image.values[p * c + d];
        v = static_cast<float>(mean[d] + 0.5 * (v - mean[d]) + normal(rng));
      }
    }
  }
  return rec;
}

SceneRecord generate_scene(const SceneGenerator& generator, const SceneSpec& spec) { return generator.generate(spec); }

double occlusion_ratio(std::span<const std::uint8_t> foreground, std::span<const std::uint8_t> occluder) {
  if (foreground.size() != occluder.size()) throw InvalidArgument("mask sizes differ");
  std::size_t fg = 0, hit = 0;
  for (std::size_t i = 0; i < foreground.size(); ++i) {
    if (!foreground[i]) continue;
    ++fg;
    if (occluder[i]) ++hit;
  }
  return fg == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(fg);
}

OcclusionResult apply_occlusion(Image& image, std::span<const std::uint8_t> foreground, OcclusionLevel level,
                                Rng& rng, double amplitude) {
  const int h = image.height, w = image.width;
  if (foreground.size() != static_cast<std::size_t>(h) * w) throw InvalidArgument("foreground mask size mismatch");
  OcclusionResult res;
  res.mask.assign(foreground.size(), 0);
  if (level == OcclusionLevel::l0) return res;

  std::vector<int> fg_pixels;
  int x_lo = w, x_hi = -1, y_lo = h, y_hi = -1;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!foreground[static_cast<std::size_t>(y) * w + x]) continue;
      fg_pixels.push_back(y * w + x);
      x_lo = std::min(x_lo, x);
      x_hi = std::max(x_hi, x);
      y_lo = std::min(y_lo, y);
      y_hi = std::max(y_hi, y);
    }
  }
  if (fg_pixels.empty()) throw InvalidArgument("occlusion needs a nonempty foreground");
  const OcclusionBracket br = bracket(level);
  const double total = static_cast<double>(fg_pixels.size());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double target = br.lo + (br.hi - br.lo) * (0.25 + 0.5 * u(rng));
  const int bw = x_hi - x_lo + 1, bh = y_hi - y_lo + 1;

  struct Rect {
    int x0, y0, x1, y1;  // inclusive
  };
  std::vector<Rect> rects;
  std::size_t covered = 0;
  constexpr int kAttempts = 400;
  for (int attempt = 0; attempt < kAttempts && covered < target * total; ++attempt) {
    const int centre = fg_pixels[static_cast<std::size_t>(u(rng) * fg_pixels.size()) % fg_pixels.size()];
    const int cx = centre % w, cy = centre / w;
    double rw = bw * (0.15 + 0.4 * u(rng)), rh = bh * (0.15 + 0.4 * u(rng));
    for (int shrink = 0; shrink < 6; ++shrink, rw *= 0.5, rh *= 0.5) {
      Rect r{std::max(0, cx - static_cast<int>(rw / 2)), std::max(0, cy - static_cast<int>(rh / 2)),
             std::min(w - 1, cx + static_cast<int>(rw / 2)), std::min(h - 1, cy + static_cast<int>(rh / 2))};
      std::size_t fresh = 0;
      for (int y = r.y0; y <= r.y1; ++y) {
        for (int x = r.x0; x <= r.x1; ++x) {
          const std::size_t p = static_cast<std::size_t>(y) * w + x;
          if (foreground[p] && !res.mask[p]) ++fresh;
        }
      }
      if (fresh == 0) break;
      if (static_cast<double>(covered + fresh) > br.hi * total) continue;
      for (int y = r.y0; y <= r.y1; ++y) {
        for (int x = r.x0; x <= r.x1; ++x) res.mask[static_cast<std::size_t>(y) * w + x] = 1;
      }
      covered += fresh;
      rects.push_back(r);
      break;
    }
  }

  // Each rectangle gets its own clutter texture; later rectangles paint over earlier ones.
  std::vector<double> px(static_cast<std::size_t>(image.channels));
  for (const Rect& r : rects) {
    const FourierField tex = FourierField::random(4, image.channels, 3.0, amplitude, rng);
    const std::vector<double> offset = random_vector(image.channels, 0.5 * amplitude, rng);
    for (int y = r.y0; y <= r.y1; ++y) {
      for (int x = r.x0; x <= r.x1; ++x) {
        std::fill(px.begin(), px.end(), 0.0);
        tex.add_to(Eigen::Vector3d(2.0 * x / w - 1.0, 2.0 * y / h - 1.0, 0.0), px.data());
        float* out = image.pixel(y, x);
        for (int d = 0; d < image.channels; ++d) out[d] = static_cast<float>(px[d] + offset[d]);
      }
    }
  }
  res.ratio = static_cast<double>(covered) / total;
  res.flag = res.ratio < br.lo || res.ratio > br.hi;
  return res;
}

void DatasetConfig::validate() const {
  world.validate();
  if (per_class < 0 || train_per_class < 0) throw InvalidArgument("scene counts must be non-negative");
  if (levels.empty() && nuisances.empty() && train_per_class == 0) throw InvalidArgument("dataset would be empty");
}

std::vector<PlannedScene> plan_dataset(const DatasetConfig& config, const SceneGenerator& generator) {
  config.validate();
  std::vector<PlannedScene> out;
  const int classes = config.world.class_count();
  auto group = [&](const std::string& prefix, const std::string& split, OcclusionLevel level,
                   std::vector<Nuisance> nuisances, int count) {
    for (int y = 0; y < classes; ++y) {
      for (int k = 0; k < count; ++k) {
        PlannedScene p;
        p.id = prefix + "-c" + std::to_string(y) + "-" + padded(k, 4);
        p.split = split;
        const std::uint64_t seed = derive_seed(config.seed, p.id);
        const double width = 2.0 * kPi / count;
        p.spec = generator.sample_spec(y, level, nuisances, seed, k * width, (k + 1) * width);
        out.push_back(std::move(p));
      }
    }
  };
  if (config.train_per_class > 0) group("train", "train", OcclusionLevel::l0, {}, config.train_per_class);
  for (OcclusionLevel l : config.levels) group("eval-" + std::string(level_name(l)), "eval", l, {}, config.per_class);
  for (Nuisance n : config.nuisances) {
    group("eval-ood-" + std::string(nuisance_name(n)), "eval", OcclusionLevel::l0, {n}, config.per_class);
  }
  return out;
}

Dataset generate_dataset(const DatasetConfig& config, unsigned threads) {
  const SceneGenerator generator(config.world);
  const auto plan = plan_dataset(config, generator);
  Dataset ds;
  ds.world = config.world;
  ds.records.resize(plan.size());
  parallel_for(plan.size(), threads, [&](std::size_t i) {
    SceneRecord r = generator.generate(plan[i].spec);
    r.id = plan[i].id;
    r.split = plan[i].split;
    ds.records[i] = std::move(r);
  });
  return ds;
}

}  // namespace rcnet
