#include "rcnet/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace rcnet::io {

static_assert(std::endian::native == std::endian::little, "persistence assumes a little-endian host");

namespace {

class Writer {
 public:
  void i32(std::int64_t v) {
    if (v < std::numeric_limits<std::int32_t>::min() || v > std::numeric_limits<std::int32_t>::max()) {
      throw InvalidArgument("value does not fit a 32-bit field");
    }
    put(static_cast<std::int32_t>(v));
  }
  void u32(std::uint32_t v) { put(v); }
  void f32(double v) { put(static_cast<float>(v)); }
  void f64(double v) { put(v); }
  const std::string& bytes() const { return buf_; }

 private:
  template <class T>
  void put(T v) {
    char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    buf_.append(b, sizeof(T));
  }
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string data, std::string origin) : data_(std::move(data)), origin_(std::move(origin)) {}
  std::int32_t i32() { return get<std::int32_t>(); }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  double f32() { return static_cast<double>(get<float>()); }
  double f64() { return get<double>(); }
  std::size_t remaining() const { return data_.size() - pos_; }
  void expect_end() const {
    if (pos_ != data_.size()) throw FormatError(origin_ + ": trailing bytes after payload");
  }
  [[noreturn]] void fail(const std::string& what) const { throw FormatError(origin_ + ": " + what); }

 private:
  template <class T>
  T get() {
    if (data_.size() - pos_ < sizeof(T)) fail("truncated file");
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

int checked_count(Reader& r, const char* what, std::int64_t max = 1 << 28) {
  const std::int32_t v = r.i32();
  if (v < 0 || v > max) r.fail(std::string("implausible ") + what + " " + std::to_string(v));
  return v;
}

void write_binary(const fs::path& path, const std::string& bytes) {
  std::error_code ec;
  if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::string read_binary(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  if (in.bad()) throw IoError("failed reading '" + path.string() + "'");
  return ss.str();
}

Json finite_or_null(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }
double number_or_inf(const Json& j) {
  return j.is_null() ? std::numeric_limits<double>::infinity() : j.get<double>();
}

Json head_to_json(const LinearSoftmax&) = delete;

void put_softmax(Writer& w, const LinearSoftmax& h) {
  w.i32(h.outputs());
  w.i32(h.inputs());
  w.f64(h.temperature);
  for (Eigen::Index i = 0; i < h.weight.rows(); ++i) {
    for (Eigen::Index j = 0; j < h.weight.cols(); ++j) w.f64(h.weight(i, j));
  }
  for (Eigen::Index i = 0; i < h.bias.size(); ++i) w.f64(h.bias(i));
  for (Eigen::Index i = 0; i < h.input_mean.size(); ++i) w.f64(h.input_mean(i));
  for (Eigen::Index i = 0; i < h.input_scale.size(); ++i) w.f64(h.input_scale(i));
}

LinearSoftmax get_softmax(Reader& r) {
  const int k = checked_count(r, "head outputs", 1 << 16);
  const int d = checked_count(r, "head inputs", 1 << 20);
  if (static_cast<std::size_t>(k) * d * 8 > r.remaining()) r.fail("truncated head weights");
  LinearSoftmax h = LinearSoftmax::zeros(k, d);
  h.temperature = r.f64();
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < d; ++j) h.weight(i, j) = r.f64();
  }
  for (int i = 0; i < k; ++i) h.bias(i) = r.f64();
  for (int i = 0; i < d; ++i) h.input_mean(i) = r.f64();
  for (int i = 0; i < d; ++i) h.input_scale(i) = r.f64();
  return h;
}

template <class T>
T field(const Json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw FormatError(where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + ": field '" + key + "' has the wrong type");
  }
}

Json class_outcome_json(const ClassOutcome& c, std::size_t y) {
  Json j;
  j["class_id"] = y;
  j["evaluated"] = c.evaluated;
  j["nll"] = finite_or_null(c.nll);
  j["init_nll"] = finite_or_null(c.init_nll);
  j["match_score"] = c.match_score;
  j["pose"] = pose_to_json(c.pose);
  j["iterations"] = c.iterations;
  return j;
}

Json branch_json(const BranchOutcome& b) {
  return {{"class_id", b.class_id},
          {"pose", pose_to_json(b.pose)},
          {"nll", finite_or_null(b.nll)},
          {"match_score", b.match_score},
          {"iterations", b.iterations}};
}

BranchOutcome branch_from_json(const Json& j, const std::string& where) {
  BranchOutcome b;
  b.class_id = field<int>(j, "class_id", where);
  b.pose = pose_from_json(j.at("pose"));
  b.nll = number_or_inf(j.at("nll"));
  b.match_score = field<double>(j, "match_score", where);
  b.iterations = field<long>(j, "iterations", where);
  return b;
}

}  // namespace

std::string read_text(const fs::path& path) { return read_binary(path); }

void write_text(const fs::path& path, const std::string& content) { write_binary(path, content); }

void write_image(const fs::path& path, const Image& image) {
  if (image.values.size() != static_cast<std::size_t>(image.height) * image.width * image.channels) {
    throw InvalidArgument("image payload size disagrees with its shape");
  }
  Writer w;
  w.u32(kImageMagic);
  w.i32(kImageVersion);
  w.i32(image.height);
  w.i32(image.width);
  w.i32(image.channels);
  std::string bytes = w.bytes();
  const std::size_t off = bytes.size();
  bytes.resize(off + image.values.size() * sizeof(float));
  std::memcpy(bytes.data() + off, image.values.data(), image.values.size() * sizeof(float));
  write_binary(path, bytes);
}

Image read_image(const fs::path& path) {
  Reader r(read_binary(path), path.string());
  if (r.u32() != kImageMagic) r.fail("not an image file (bad magic)");
  const int version = r.i32();
  if (version != kImageVersion) r.fail("unsupported image version " + std::to_string(version));
  const int h = checked_count(r, "height", 1 << 16), w = checked_count(r, "width", 1 << 16);
  const int c = checked_count(r, "channels", 1 << 12);
  const std::size_t n = static_cast<std::size_t>(h) * w * c;
  if (r.remaining() != n * sizeof(float)) r.fail("image payload size disagrees with its header");
  Image img(h, w, c);
  for (float& v : img.values) v = static_cast<float>(r.f32());
  r.expect_end();
  return img;
}

void write_bank(const fs::path& path, const ModelBank& original) {
  ModelBank bank = original;
  bank.validate();
  bank.quantize_to_float();
  Writer w;
  w.u32(kBankMagic);
  w.i32(bank.format_version);
  w.i32(static_cast<std::int64_t>(bank.class_count()));
  for (const auto& m : bank.models) w.i32(static_cast<std::int64_t>(m.vertex_count()));
  w.i32(static_cast<std::int64_t>(bank.feature_dim()));
  for (const auto& m : bank.models) {
    for (double e : m.extents) w.f32(e);
    for (const auto& v : m.vertices) {
      for (int a = 0; a < 3; ++a) w.f32(v[a]);
    }
    for (double x : m.texture.values) w.f32(x);
  }
  for (double x : bank.background.mean) w.f32(x);
  w.f32(bank.background.sigma);
  const FeatureExtractor& ex = bank.extractor;
  w.i32(ex.in_dim);
  w.i32(ex.out_dim);
  w.i32(ex.stride);
  w.i32(ex.normalize ? 1 : 0);
  w.i32(ex.use_conv ? 1 : 0);
  for (Eigen::Index i = 0; i < ex.weight.rows(); ++i) {
    for (Eigen::Index j = 0; j < ex.weight.cols(); ++j) w.f32(ex.weight(i, j));
  }
  for (Eigen::Index i = 0; i < ex.bias.size(); ++i) w.f32(ex.bias(i));
  if (ex.use_conv) {
    for (const auto& k : ex.conv) {
      for (Eigen::Index i = 0; i < k.rows(); ++i) {
        for (Eigen::Index j = 0; j < k.cols(); ++j) w.f32(k(i, j));
      }
    }
  }
  w.i32(bank.trained_epochs);
  write_binary(path, w.bytes());
}

ModelBank read_bank(const fs::path& path) {
  Reader r(read_binary(path), path.string());
  if (r.u32() != kBankMagic) r.fail("not a model bank (bad magic)");
  ModelBank bank;
  bank.format_version = r.i32();
  if (bank.format_version != kModelFormatVersion) {
    r.fail("model format version " + std::to_string(bank.format_version) + " is not supported (expected " +
           std::to_string(kModelFormatVersion) + ")");
  }
  const int classes = checked_count(r, "class count", 1 << 16);
  std::vector<int> counts(static_cast<std::size_t>(classes));
  for (int& c : counts) c = checked_count(r, "vertex count");
  const int dim = checked_count(r, "feature dimension", 1 << 16);
  for (int y = 0; y < classes; ++y) {
    const auto rows = static_cast<std::size_t>(counts[static_cast<std::size_t>(y)]);
    if ((rows * (3 + static_cast<std::size_t>(dim)) + 3) * 4 > r.remaining()) r.fail("truncated class payload");
    NeuralMeshModel m;
    m.class_id = y;
    for (double& e : m.extents) e = r.f32();
    m.vertices.resize(rows);
    for (auto& v : m.vertices) {
      for (int a = 0; a < 3; ++a) v[a] = r.f32();
    }
    m.texture = FeatureRows(rows, static_cast<std::size_t>(dim));
    for (double& x : m.texture.values) x = r.f32();
    bank.models.push_back(std::move(m));
  }
  bank.background.mean.resize(static_cast<std::size_t>(dim));
  for (double& x : bank.background.mean) x = r.f32();
  bank.background.sigma = r.f32();
  FeatureExtractor& ex = bank.extractor;
  ex.in_dim = checked_count(r, "extractor input", 1 << 16);
  ex.out_dim = checked_count(r, "extractor output", 1 << 16);
  ex.stride = checked_count(r, "stride", 1 << 12);
  ex.normalize = r.i32() != 0;
  ex.use_conv = r.i32() != 0;
  const std::size_t weights = static_cast<std::size_t>(ex.in_dim) * ex.out_dim + ex.out_dim +
                              (ex.use_conv ? 9 * static_cast<std::size_t>(ex.in_dim) * ex.in_dim : 0);
  if (weights * 4 > r.remaining()) r.fail("truncated extractor payload");
  ex.weight.resize(ex.out_dim, ex.in_dim);
  for (int i = 0; i < ex.out_dim; ++i) {
    for (int j = 0; j < ex.in_dim; ++j) ex.weight(i, j) = r.f32();
  }
  ex.bias.resize(ex.out_dim);
  for (int i = 0; i < ex.out_dim; ++i) ex.bias(i) = r.f32();
  for (int t = 0; t < 9; ++t) {
    if (ex.use_conv) {
      ex.conv[t].resize(ex.in_dim, ex.in_dim);
      for (int i = 0; i < ex.in_dim; ++i) {
        for (int j = 0; j < ex.in_dim; ++j) ex.conv[t](i, j) = r.f32();
      }
    } else if (t == 4) {
      ex.conv[t] = Eigen::MatrixXd::Identity(ex.in_dim, ex.in_dim);
    } else {
      ex.conv[t] = Eigen::MatrixXd::Zero(ex.in_dim, ex.in_dim);
    }
  }
  bank.trained_epochs = checked_count(r, "trained epochs");
  r.expect_end();
  try {
    bank.validate();
  } catch (const InvalidArgument& e) {
    r.fail(std::string("invalid bank contents: ") + e.what());
  }
  return bank;
}

void write_heads(const fs::path& path, const FeedForwardHeads& heads) {
  heads.validate();
  Writer w;
  w.u32(kHeadsMagic);
  w.i32(kHeadsVersion);
  w.i32(heads.pose_shape.azimuths);
  w.i32(heads.pose_shape.elevations);
  w.i32(heads.pose_shape.thetas);
  w.i32(heads.pose_pool);
  w.f64(heads.bands.elevation_lo);
  w.f64(heads.bands.elevation_hi);
  w.f64(heads.bands.theta_lo);
  w.f64(heads.bands.theta_hi);
  put_softmax(w, heads.class_head);
  put_softmax(w, heads.pose_head);
  write_binary(path, w.bytes());
}

FeedForwardHeads read_heads(const fs::path& path) {
  Reader r(read_binary(path), path.string());
  if (r.u32() != kHeadsMagic) r.fail("not a heads file (bad magic)");
  const int version = r.i32();
  if (version != kHeadsVersion) r.fail("heads format version " + std::to_string(version) + " is not supported");
  FeedForwardHeads h;
  h.pose_shape.azimuths = checked_count(r, "azimuth bins", 1 << 12);
  h.pose_shape.elevations = checked_count(r, "elevation bins", 1 << 12);
  h.pose_shape.thetas = checked_count(r, "theta bins", 1 << 12);
  h.pose_pool = checked_count(r, "pose pooling", 1 << 12);
  h.bands.elevation_lo = r.f64();
  h.bands.elevation_hi = r.f64();
  h.bands.theta_lo = r.f64();
  h.bands.theta_hi = r.f64();
  h.class_head = get_softmax(r);
  h.pose_head = get_softmax(r);
  r.expect_end();
  try {
    h.validate();
  } catch (const InvalidArgument& e) {
    r.fail(std::string("invalid heads contents: ") + e.what());
  }
  return h;
}

Json pose_to_json(const Pose& p) {
  return {{"azimuth", p.azimuth}, {"elevation", p.elevation}, {"theta", p.theta}, {"distance", p.distance}};
}

Pose pose_from_json(const Json& j) {
  Pose p;
  p.azimuth = field<double>(j, "azimuth", "pose");
  p.elevation = field<double>(j, "elevation", "pose");
  p.theta = field<double>(j, "theta", "pose");
  p.distance = field<double>(j, "distance", "pose");
  return p;
}

Json world_to_json(const WorldConfig& w) {
  Json j;
  j["class_extents"] = Json::array();
  for (const auto& e : w.class_extents) j["class_extents"].push_back({e[0], e[1], e[2]});
  j["image_height"] = w.image_height;
  j["image_width"] = w.image_width;
  j["stride"] = w.stride;
  j["channels"] = w.channels;
  j["focal"] = w.focal;
  j["nominal_distance"] = w.nominal_distance;
  j["distance_jitter"] = w.distance_jitter;
  j["shape_jitter"] = w.shape_jitter;
  j["vertex_target"] = w.vertex_target;
  j["bands"] = {{"elevation_lo", w.bands.elevation_lo},
                {"elevation_hi", w.bands.elevation_hi},
                {"theta_lo", w.bands.theta_lo},
                {"theta_hi", w.bands.theta_hi}};
  const auto& a = w.appearance;
  j["appearance"] = {{"fourier_terms", a.fourier_terms},
                     {"frequency", a.frequency},
                     {"base_amplitude", a.base_amplitude},
                     {"face_weight", a.face_weight},
                     {"class_separation", a.class_separation},
                     {"class_channels", a.class_channels},
                     {"instance_noise", a.instance_noise},
                     {"pixel_noise", a.pixel_noise},
                     {"background_amplitude", a.background_amplitude}};
  j["seed"] = w.seed;
  return j;
}

WorldConfig world_from_json(const Json& j) {
  const std::string where = "manifest world";
  WorldConfig w;
  for (const auto& e : j.at("class_extents")) w.class_extents.push_back({e.at(0), e.at(1), e.at(2)});
  w.image_height = field<int>(j, "image_height", where);
  w.image_width = field<int>(j, "image_width", where);
  w.stride = field<int>(j, "stride", where);
  w.channels = field<int>(j, "channels", where);
  w.focal = field<double>(j, "focal", where);
  w.nominal_distance = field<double>(j, "nominal_distance", where);
  w.distance_jitter = field<double>(j, "distance_jitter", where);
  w.shape_jitter = field<double>(j, "shape_jitter", where);
  w.vertex_target = field<int>(j, "vertex_target", where);
  const Json& b = j.at("bands");
  w.bands.elevation_lo = field<double>(b, "elevation_lo", where);
  w.bands.elevation_hi = field<double>(b, "elevation_hi", where);
  w.bands.theta_lo = field<double>(b, "theta_lo", where);
  w.bands.theta_hi = field<double>(b, "theta_hi", where);
  const Json& a = j.at("appearance");
  w.appearance.fourier_terms = field<int>(a, "fourier_terms", where);
  w.appearance.frequency = field<double>(a, "frequency", where);
  w.appearance.base_amplitude = field<double>(a, "base_amplitude", where);
  w.appearance.face_weight = field<double>(a, "face_weight", where);
  w.appearance.class_separation = field<double>(a, "class_separation", where);
  w.appearance.class_channels = field<int>(a, "class_channels", where);
  w.appearance.instance_noise = field<double>(a, "instance_noise", where);
  w.appearance.pixel_noise = field<double>(a, "pixel_noise", where);
  w.appearance.background_amplitude = field<double>(a, "background_amplitude", where);
  w.seed = field<std::uint64_t>(j, "seed", where);
  w.validate();
  return w;
}

std::string manifest_json(const Manifest& m) {
  Json j;
  j["schema_version"] = kManifestSchema;
  j["seed"] = m.seed;
  j["world"] = world_to_json(m.world);
  j["records"] = Json::array();
  for (const auto& e : m.records) {
    Json r;
    r["id"] = e.id;
    r["file"] = e.file;
    r["mask_file"] = e.mask_file.empty() ? Json(nullptr) : Json(e.mask_file);
    r["split"] = e.split;
    r["class_id"] = e.class_id;
    r["pose"] = pose_to_json(e.pose);
    r["level"] = e.level;
    r["nuisances"] = e.nuisances;
    r["occlusion_ratio"] = e.occlusion_ratio;
    r["occlusion_flag"] = e.occlusion_flag;
    r["seed"] = e.seed;
    j["records"].push_back(std::move(r));
  }
  return j.dump(2) + "\n";
}

void write_dataset(const fs::path& dir, const Dataset& dataset, std::uint64_t seed) {
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  if (ec) throw IoError("cannot create '" + (dir / "images").string() + "': " + ec.message());
  Manifest m;
  m.world = dataset.world;
  m.seed = seed;
  for (const auto& rec : dataset.records) {
    ManifestEntry e;
    e.id = rec.id;
    e.file = "images/" + rec.id + ".rcim";
    e.split = rec.split;
    e.class_id = rec.class_id;
    e.pose = rec.pose;
    e.level = std::string(level_name(rec.level));
    for (Nuisance n : rec.nuisances) e.nuisances.emplace_back(nuisance_name(n));
    e.occlusion_ratio = rec.occlusion_ratio;
    e.occlusion_flag = rec.occlusion_flag;
    e.seed = rec.seed;
    write_image(dir / e.file, rec.image);
    if (rec.level != OcclusionLevel::l0) {
      e.mask_file = "masks/" + rec.id + ".rcim";
      Image mask(rec.image.height, rec.image.width, 2);
      for (std::size_t p = 0; p < rec.foreground.size(); ++p) {
        mask.values[2 * p] = rec.foreground[p] ? 1.0f : 0.0f;
        mask.values[2 * p + 1] = rec.occluder[p] ? 1.0f : 0.0f;
      }
      write_image(dir / e.mask_file, mask);
    }
    m.records.push_back(std::move(e));
  }
  write_text(dir / "manifest.json", manifest_json(m));
}

Manifest read_manifest(const fs::path& path) {
  Json j;
  try {
    j = Json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": manifest is not valid JSON");
  }
  const std::string where = path.string();
  const int schema = field<int>(j, "schema_version", where);
  if (schema != kManifestSchema) {
    throw FormatError(where + ": manifest schema version " + std::to_string(schema) + " is not supported");
  }
  Manifest m;
  m.seed = field<std::uint64_t>(j, "seed", where);
  try {
    m.world = world_from_json(j.at("world"));
    for (const auto& r : j.at("records")) {
      ManifestEntry e;
      e.id = field<std::string>(r, "id", where);
      e.file = field<std::string>(r, "file", where);
      if (r.contains("mask_file") && !r.at("mask_file").is_null()) e.mask_file = r.at("mask_file").get<std::string>();
      e.split = field<std::string>(r, "split", where);
      e.class_id = field<int>(r, "class_id", where);
      e.pose = pose_from_json(r.at("pose"));
      e.level = field<std::string>(r, "level", where);
      e.nuisances = field<std::vector<std::string>>(r, "nuisances", where);
      e.occlusion_ratio = field<double>(r, "occlusion_ratio", where);
      e.occlusion_flag = field<bool>(r, "occlusion_flag", where);
      e.seed = field<std::uint64_t>(r, "seed", where);
      m.records.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(where + ": malformed manifest (" + e.what() + ")");
  }
  return m;
}

SceneRecord load_record(const fs::path& dir, const ManifestEntry& e) {
  SceneRecord rec;
  rec.id = e.id;
  rec.split = e.split;
  rec.class_id = e.class_id;
  rec.pose = e.pose;
  rec.rotation = rotation_from_pose(e.pose);
  rec.level = parse_level(e.level);
  for (const auto& n : e.nuisances) rec.nuisances.push_back(parse_nuisance(n));
  rec.occlusion_ratio = e.occlusion_ratio;
  rec.occlusion_flag = e.occlusion_flag;
  rec.seed = e.seed;
  rec.image = read_image(dir / e.file);
  const std::size_t pixels = static_cast<std::size_t>(rec.image.height) * rec.image.width;
  rec.foreground.assign(pixels, 0);
  rec.occluder.assign(pixels, 0);
  if (!e.mask_file.empty()) {
    const Image mask = read_image(dir / e.mask_file);
    if (mask.height != rec.image.height || mask.width != rec.image.width || mask.channels != 2) {
      throw FormatError(e.mask_file + ": mask shape disagrees with its image");
    }
    for (std::size_t p = 0; p < pixels; ++p) {
      rec.foreground[p] = mask.values[2 * p] > 0.5f;
      rec.occluder[p] = mask.values[2 * p + 1] > 0.5f;
    }
  }
  return rec;
}

Json log_to_json(const LogRecord& log) {
  const InferenceResult& r = log.result;
  Json j;
  j["schema_version"] = kLogSchema;
  j["id"] = log.id;
  j["mode"] = log.mode;
  j["truth"] = {{"class_id", log.true_class},
                {"pose", pose_to_json(log.true_pose)},
                {"level", log.level},
                {"nuisances", log.nuisances}};
  Json rot = Json::array();
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) rot.push_back(r.rotation(a, b));
  }
  j["prediction"] = {{"class_id", r.predicted_class},
                     {"pose", pose_to_json(r.pose)},
                     {"rotation", rot},
                     {"stage", std::string(stage_name(r.stage))},
                     {"tie", r.tie},
                     {"match_score", r.match_score}};
  j["per_class"] = Json::array();
  for (std::size_t y = 0; y < r.per_class.size(); ++y) j["per_class"].push_back(class_outcome_json(r.per_class[y], y));
  j["cost"] = {{"iterations", r.cost.iterations},
               {"full_runs", r.cost.full_runs},
               {"class_proposals", r.cost.class_proposals},
               {"pose_proposals", r.cost.pose_proposals},
               {"nll_evaluations", r.cost.nll_evaluations}};
  j["head_confidence"] = r.head_confidence ? Json(*r.head_confidence) : Json(nullptr);
  if (r.branches) {
    const BranchTrace& b = *r.branches;
    j["branches"] = {{"head_confidence", b.head_confidence},
                     {"head_class", b.head_class},
                     {"s1", branch_json(b.s1)},
                     {"s2", branch_json(b.s2)},
                     {"full", branch_json(b.full)}};
  } else {
    j["branches"] = nullptr;
  }
  return j;
}

LogRecord log_from_json(const Json& j) {
  const std::string where = "log record";
  const int schema = field<int>(j, "schema_version", where);
  if (schema != kLogSchema) {
    throw FormatError("log schema version " + std::to_string(schema) + " is not supported (expected " +
                      std::to_string(kLogSchema) + ")");
  }
  LogRecord log;
  try {
    log.id = field<std::string>(j, "id", where);
    log.mode = field<std::string>(j, "mode", where);
    const Json& t = j.at("truth");
    log.true_class = field<int>(t, "class_id", where);
    log.true_pose = pose_from_json(t.at("pose"));
    log.level = field<std::string>(t, "level", where);
    log.nuisances = field<std::vector<std::string>>(t, "nuisances", where);
    InferenceResult& r = log.result;
    const Json& p = j.at("prediction");
    r.predicted_class = field<int>(p, "class_id", where);
    r.pose = pose_from_json(p.at("pose"));
    const auto rot = field<std::vector<double>>(p, "rotation", where);
    if (rot.size() != 9) throw FormatError("log rotation must have 9 entries");
    for (int a = 0; a < 3; ++a) {
      for (int b = 0; b < 3; ++b) r.rotation(a, b) = rot[static_cast<std::size_t>(3 * a + b)];
    }
    r.stage = parse_stage(field<std::string>(p, "stage", where));
    r.tie = field<bool>(p, "tie", where);
    r.match_score = field<double>(p, "match_score", where);
    for (const auto& c : j.at("per_class")) {
      ClassOutcome o;
      o.evaluated = field<bool>(c, "evaluated", where);
      o.nll = number_or_inf(c.at("nll"));
      o.init_nll = number_or_inf(c.at("init_nll"));
      o.match_score = field<double>(c, "match_score", where);
      o.pose = pose_from_json(c.at("pose"));
      o.iterations = field<int>(c, "iterations", where);
      r.per_class.push_back(o);
    }
    const Json& cost = j.at("cost");
    r.cost.iterations = field<long>(cost, "iterations", where);
    r.cost.full_runs = field<int>(cost, "full_runs", where);
    r.cost.class_proposals = field<int>(cost, "class_proposals", where);
    r.cost.pose_proposals = field<int>(cost, "pose_proposals", where);
    r.cost.nll_evaluations = field<long>(cost, "nll_evaluations", where);
    if (!j.at("head_confidence").is_null()) r.head_confidence = j.at("head_confidence").get<double>();
    if (!j.at("branches").is_null()) {
      const Json& b = j.at("branches");
      BranchTrace t2;
      t2.head_confidence = field<double>(b, "head_confidence", where);
      t2.head_class = field<int>(b, "head_class", where);
      t2.s1 = branch_from_json(b.at("s1"), where);
      t2.s2 = branch_from_json(b.at("s2"), where);
      t2.full = branch_from_json(b.at("full"), where);
      r.branches = t2;
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed log record: ") + e.what());
  }
  return log;
}

std::string logs_jsonl(std::span<const LogRecord> logs) {
  std::string out;
  for (const auto& l : logs) out += log_to_json(l).dump() + "\n";
  return out;
}

void write_logs(const fs::path& path, std::span<const LogRecord> logs) { write_text(path, logs_jsonl(logs)); }

std::vector<LogRecord> read_logs(const fs::path& path) {
  const std::string text = read_text(path);
  std::vector<LogRecord> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": not valid JSON");
    }
    try {
      out.push_back(log_from_json(j));
    } catch (const FormatError& e) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace rcnet::io
