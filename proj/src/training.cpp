#include "rcnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "rcnet/kernels.hpp"

namespace rcnet {

namespace {

struct Partition {
  std::vector<std::size_t> fg;
  std::vector<std::size_t> bg;
};

Partition split(const FeatureMap& features, std::span<const std::uint8_t> foreground) {
  if (foreground.size() != features.size()) throw InvalidArgument("foreground mask size differs from feature map");
  Partition p;
  for (std::size_t i = 0; i < foreground.size(); ++i) (foreground[i] ? p.fg : p.bg).push_back(i);
  if (p.fg.empty()) throw InvalidState("contrastive loss needs a nonempty foreground");
  return p;
}

std::vector<double> mean_of(const FeatureMap& features, const std::vector<std::size_t>& idx) {
  std::vector<double> m(features.dim(), 0.0);
  if (idx.empty()) return m;
  for (std::size_t i : idx) kernels::axpy(1.0, features.at(i), m);
  for (double& x : m) x /= static_cast<double>(idx.size());
  return m;
}

double spread(const FeatureMap& features, const std::vector<std::size_t>& idx, const std::vector<double>& m) {
  const auto& k = kernels::active();
  double s = 0.0;
  for (std::size_t i : idx) s += k.squared_distance(features.cells.data(i), m.data(), m.size());
  return s;
}

struct Moments {
  double n_f = 0, n_b = 0;
  std::vector<double> m_f, m_b;
  double s_f = 0, s_b = 0;  // centred second moments
};

Moments moments(const FeatureMap& features, const Partition& p) {
  Moments m;
  m.n_f = static_cast<double>(p.fg.size());
  m.n_b = static_cast<double>(p.bg.size());
  m.m_f = mean_of(features, p.fg);
  m.m_b = mean_of(features, p.bg);
  m.s_f = spread(features, p.fg, m.m_f);
  m.s_b = spread(features, p.bg, m.m_b);
  return m;
}

double exact_con_loss(const FeatureMap& features, const Partition& p) {
  const Moments m = moments(features, p);
  const double within = 2.0 * m.n_f * m.s_f;
  double across = 0.0;
  if (m.n_b > 0) {
    const double gap = kernels::active().squared_distance(m.m_f.data(), m.m_b.data(), m.m_f.size());
    across = m.n_b * m.s_f + m.n_f * m.s_b + m.n_f * m.n_b * gap;
  }
  return -within - across;
}

double pair_term(const FeatureMap& features, const std::vector<std::size_t>& a, const std::vector<std::size_t>& b,
                 std::size_t cap, Rng& rng) {
  if (a.empty() || b.empty()) return 0.0;
  const auto& k = kernels::active();
  const std::size_t dim = features.dim();
  const double total = static_cast<double>(a.size()) * static_cast<double>(b.size());
  if (total <= static_cast<double>(cap)) {
    double s = 0.0;
    for (std::size_t i : a) {
      for (std::size_t j : b) s += k.squared_distance(features.cells.data(i), features.cells.data(j), dim);
    }
    return s;
  }
  std::uniform_int_distribution<std::size_t> pick_a(0, a.size() - 1), pick_b(0, b.size() - 1);
  double s = 0.0;
  for (std::size_t t = 0; t < cap; ++t) {
    const std::size_t i = a[pick_a(rng)], j = b[pick_b(rng)];
    s += k.squared_distance(features.cells.data(i), features.cells.data(j), dim);
  }
  return s * total / static_cast<double>(cap);
}

double pair_count(const Partition& p) {
  const double nf = static_cast<double>(p.fg.size()), nb = static_cast<double>(p.bg.size());
  return nf * nf + nf * nb;
}

void check_momentum(double eta) {
  if (!(eta > 0.0 && eta <= 1.0)) throw InvalidArgument("moving-average momentum must lie in (0, 1]");
}

void normalize_row(std::span<double> v) {
  const double n = std::sqrt(kernels::dot(v, v));
  if (n > 0.0) {
    for (double& x : v) x /= n;
  }
}

}  // namespace

double con_loss(const FeatureMap& features, std::span<const std::uint8_t> foreground, const PairSampling& sampling) {
  const Partition p = split(features, foreground);
  if (sampling.cap == 0) return exact_con_loss(features, p);
  Rng rng(sampling.seed);
  const double within = pair_term(features, p.fg, p.fg, sampling.cap, rng);
  const double across = pair_term(features, p.fg, p.bg, sampling.cap, rng);
  return -within - across;
}

double normalized_con_loss(const FeatureMap& features, std::span<const std::uint8_t> foreground,
                           FeatureRows* grad) {
  const Partition p = split(features, foreground);
  const double norm = 1.0 / pair_count(p);
  const double value = exact_con_loss(features, p) * norm;
  if (!grad) return value;
  const Moments m = moments(features, p);
  const std::size_t dim = features.dim();
  *grad = FeatureRows(features.size(), dim);
  // d/df_k of -(within + across), scaled by 1 / pair count.
  for (std::size_t i : p.fg) {
    const double* f = features.cells.data(i);
    double* g = grad->data(i);
    for (std::size_t d = 0; d < dim; ++d) {
      double v = 4.0 * m.n_f * (f[d] - m.m_f[d]);
      if (m.n_b > 0) v += 2.0 * m.n_b * (f[d] - m.m_b[d]);
      g[d] = -v * norm;
    }
  }
  for (std::size_t i : p.bg) {
    const double* f = features.cells.data(i);
    double* g = grad->data(i);
    for (std::size_t d = 0; d < dim; ++d) g[d] = -2.0 * m.n_f * (f[d] - m.m_f[d]) * norm;
  }
  return value;
}

double class_loss(std::span<const std::vector<double>> means) {
  if (means.size() < 2) throw InvalidState("class contrastive loss needs at least two classes");
  const auto& k = kernels::active();
  double s = 0.0;
  for (std::size_t a = 0; a < means.size(); ++a) {
    for (std::size_t b = 0; b < means.size(); ++b) {
      if (a == b) continue;
      if (means[a].size() != means[b].size()) throw InvalidArgument("class means differ in dimension");
      s += k.squared_distance(means[a].data(), means[b].data(), means[a].size());
    }
  }
  return -s;
}

double class_loss(const ModelBank& bank) {
  std::vector<std::vector<double>> means;
  means.reserve(bank.models.size());
  for (const auto& m : bank.models) means.push_back(texture_class_mean(m));
  return class_loss(means);
}

void update_textures_ma(NeuralMeshModel& model, std::span<const FeatureMap* const> features,
                        std::span<const std::vector<std::int32_t>* const> correspondences,
                        const TextureUpdateOptions& options) {
  check_momentum(options.momentum);
  if (features.size() != correspondences.size()) throw InvalidArgument("one correspondence per feature map");
  const std::size_t dim = model.texture.dim;
  FeatureRows sum(model.vertex_count(), dim);
  std::vector<std::size_t> count(model.vertex_count(), 0);
  for (std::size_t m = 0; m < features.size(); ++m) {
    const FeatureMap& f = *features[m];
    const auto& corr = *correspondences[m];
    if (f.dim() != dim) throw InvalidArgument("feature dimension differs from texture dimension");
    if (corr.size() != f.size()) throw InvalidArgument("correspondence size differs from feature map");
    for (std::size_t i = 0; i < corr.size(); ++i) {
      if (corr[i] < 0) continue;
      const auto r = static_cast<std::size_t>(corr[i]);
      if (r >= model.vertex_count()) throw InvalidArgument("correspondence indexes past the mesh");
      kernels::axpy(1.0, f.at(i), sum.row(r));
      ++count[r];
    }
  }
  const double eta = options.momentum;
  for (std::size_t r = 0; r < model.vertex_count(); ++r) {
    if (count[r] == 0) continue;
    auto c = model.texture.row(r);
    const auto s = sum.row(r);
    const double inv = 1.0 / static_cast<double>(count[r]);
    for (std::size_t d = 0; d < dim; ++d) c[d] = (1.0 - eta) * c[d] + eta * s[d] * inv;
    if (options.renormalize) normalize_row(c);
  }
}

void update_textures_ma(NeuralMeshModel& model, const FeatureMap& features,
                        const std::vector<std::int32_t>& correspondence, const TextureUpdateOptions& options) {
  const FeatureMap* f[1] = {&features};
  const std::vector<std::int32_t>* c[1] = {&correspondence};
  update_textures_ma(model, f, c, options);
}

void TrainConfig::validate() const {
  check_momentum(momentum);
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw InvalidArgument("learning rate must be positive");
  if (epochs < 0) throw InvalidArgument("epochs must be non-negative");
  if (batch_size < 1) throw InvalidArgument("batch size must be positive");
  if (!(con_weight >= 0.0) || !(class_weight >= 0.0)) throw InvalidArgument("loss weights must be non-negative");
  if (!(stop_tolerance >= 0.0)) throw InvalidArgument("stop tolerance must be non-negative");
}

ModelBank init_bank(const BankSpec& spec, std::uint64_t seed) {
  if (spec.class_extents.empty()) throw InvalidArgument("bank needs at least one class");
  if (spec.feature_dim < 1 || spec.input_channels < 1) throw InvalidArgument("bank dimensions must be positive");
  spec.camera.validate();
  ModelBank bank;
  for (std::size_t y = 0; y < spec.class_extents.size(); ++y) {
    Rng rng(derive_seed(seed, "texture", y));
    bank.models.push_back(make_mesh_model(static_cast<int>(y), spec.class_extents[y], spec.vertex_target,
                                          static_cast<std::size_t>(spec.feature_dim), rng));
  }
  Rng rng(derive_seed(seed, "extractor"));
  bank.extractor = FeatureExtractor::random(spec.input_channels, spec.feature_dim, spec.stride, rng);
  bank.extractor.use_conv = spec.use_conv;
  bank.background.mean.assign(static_cast<std::size_t>(spec.feature_dim), 0.0);
  bank.background.sigma = 1.0;
  bank.quantize_to_float();
  return bank;
}

BatchObjective batch_objective(const ModelBank& bank, std::span<const PreparedSample> batch,
                               const TrainConfig& config, bool with_gradient) {
  if (batch.empty()) throw InvalidArgument("empty training batch");
  const std::size_t classes = bank.class_count();
  const std::size_t dim = bank.feature_dim();
  const double batch_inv = 1.0 / static_cast<double>(batch.size());

  std::vector<FeatureMap> feats(batch.size());
  std::vector<ExtractionCache> caches(with_gradient ? batch.size() : 0);
  std::vector<FeatureRows> grads(batch.size());
  BatchObjective out;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    feats[b] = extract(*batch[b].image, bank.extractor, with_gradient ? &caches[b] : nullptr);
    out.con += normalized_con_loss(feats[b], batch[b].projection.foreground, with_gradient ? &grads[b] : nullptr) *
               batch_inv;
  }

  std::vector<std::vector<double>> mu(classes, std::vector<double>(dim, 0.0));
  std::vector<std::size_t> cells(classes, 0);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto y = static_cast<std::size_t>(batch[b].class_id);
    const auto& fg = batch[b].projection.foreground;
    for (std::size_t i = 0; i < fg.size(); ++i) {
      if (!fg[i]) continue;
      kernels::axpy(1.0, feats[b].at(i), mu[y]);
      ++cells[y];
    }
  }
  for (std::size_t y = 0; y < classes; ++y) {
    if (cells[y] == 0) {
      mu[y] = texture_class_mean(bank.models[y]);
    } else {
      for (double& x : mu[y]) x /= static_cast<double>(cells[y]);
    }
  }
  const double pair_norm = classes >= 2 ? 1.0 / static_cast<double>(classes * (classes - 1)) : 0.0;
  if (classes >= 2) out.cls = class_loss(mu) * pair_norm;
  out.joint = config.con_weight * out.con + config.class_weight * out.cls;
  if (!with_gradient) return out;

  // dL/dmu_y = -4 sum_{ybar != y} (mu_y - mu_ybar), then spread over class-y foreground cells.
  std::vector<std::vector<double>> d_mu(classes, std::vector<double>(dim, 0.0));
  for (std::size_t y = 0; y < classes && classes >= 2; ++y) {
    if (cells[y] == 0) continue;
    for (std::size_t o = 0; o < classes; ++o) {
      if (o == y) continue;
      for (std::size_t d = 0; d < dim; ++d) d_mu[y][d] -= 4.0 * (mu[y][d] - mu[o][d]);
    }
    const double s = config.class_weight * pair_norm / static_cast<double>(cells[y]);
    for (double& x : d_mu[y]) x *= s;
  }

  out.grad = ExtractorGradient::zeros_like(bank.extractor);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    FeatureRows& g = grads[b];
    for (double& x : g.values) x *= config.con_weight * batch_inv;
    const auto y = static_cast<std::size_t>(batch[b].class_id);
    if (cells[y] > 0) {
      const auto& fg = batch[b].projection.foreground;
      for (std::size_t i = 0; i < fg.size(); ++i) {
        if (fg[i]) kernels::axpy(1.0, d_mu[y], g.row(i));
      }
    }
    backprop(bank.extractor, caches[b], g, out.grad);
  }
  return out;
}

namespace {

std::vector<PreparedSample> prepare(const std::vector<TrainingSample>& dataset, const ModelBank& bank,
                                    const BankSpec& spec) {
  std::vector<std::size_t> per_class(bank.class_count(), 0);
  std::vector<PreparedSample> out(dataset.size());
  for (std::size_t s = 0; s < dataset.size(); ++s) {
    const auto& d = dataset[s];
    if (d.class_id < 0 || static_cast<std::size_t>(d.class_id) >= bank.class_count()) {
      throw InvalidDataset("training sample has a class id outside the bank");
    }
    ++per_class[static_cast<std::size_t>(d.class_id)];
  }
  for (std::size_t y = 0; y < per_class.size(); ++y) {
    if (per_class[y] == 0) throw InvalidDataset("training set has no sample of class " + std::to_string(y));
  }
  parallel_for(dataset.size(), default_threads(), [&](std::size_t s) {
    const auto& d = dataset[s];
    out[s].image = &d.image;
    out[s].class_id = d.class_id;
    out[s].projection = project(bank.models[static_cast<std::size_t>(d.class_id)], d.pose, spec.camera);
  });
  for (const auto& p : out) {
    if (p.projection.foreground_count == 0) throw InvalidDataset("training sample has an empty foreground");
  }
  return out;
}

LossRecord epoch_loss(const ModelBank& bank, const std::vector<PreparedSample>& prepared, const TrainConfig& config,
                      int epoch) {
  std::vector<double> con(prepared.size());
  parallel_for(prepared.size(), default_threads(), [&](std::size_t s) {
    const FeatureMap f = extract(*prepared[s].image, bank.extractor);
    con[s] = normalized_con_loss(f, prepared[s].projection.foreground);
  });
  LossRecord rec;
  rec.epoch = epoch;
  for (double c : con) rec.con += c;
  rec.con /= static_cast<double>(prepared.size());
  const std::size_t y = bank.class_count();
  rec.cls = y >= 2 ? class_loss(bank) / static_cast<double>(y * (y - 1)) : 0.0;
  rec.joint = config.con_weight * rec.con + config.class_weight * rec.cls;
  return rec;
}

}  // namespace

TrainResult train_bank(const std::vector<TrainingSample>& dataset, ModelBank bank, const BankSpec& spec,
                       const TrainConfig& config) {
  config.validate();
  bank.validate();
  if (dataset.empty()) throw InvalidDataset("training set is empty");
  const std::vector<PreparedSample> prepared = prepare(dataset, bank, spec);

  TrainResult result;
  LossRecord last = epoch_loss(bank, prepared, config, bank.trained_epochs);
  result.trace.push_back(last);
  const TextureUpdateOptions ma{config.momentum, true};
  const auto batch = static_cast<std::size_t>(config.batch_size);
  std::vector<std::size_t> order(prepared.size());

  for (int e = 0; e < config.epochs; ++e) {
    const int epoch = bank.trained_epochs + 1;
    ModelBank snapshot = bank;
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(config.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      std::vector<PreparedSample> items;
      items.reserve(end - start);
      for (std::size_t t = start; t < end; ++t) items.push_back(prepared[order[t]]);

      const BatchObjective obj = batch_objective(bank, items, config, true);
      apply_gradient_step(bank.extractor, obj.grad, config.learning_rate);

      std::vector<FeatureMap> feats(items.size());
      for (std::size_t b = 0; b < items.size(); ++b) feats[b] = extract(*items[b].image, bank.extractor);
      for (std::size_t y = 0; y < bank.class_count(); ++y) {
        std::vector<const FeatureMap*> maps;
        std::vector<const std::vector<std::int32_t>*> corr;
        for (std::size_t b = 0; b < items.size(); ++b) {
          if (static_cast<std::size_t>(items[b].class_id) != y) continue;
          maps.push_back(&feats[b]);
          corr.push_back(&items[b].projection.correspondence);
        }
        if (!maps.empty()) update_textures_ma(bank.models[y], maps, corr, ma);
      }
      std::vector<double> bg(bank.feature_dim(), 0.0);
      std::size_t bg_cells = 0;
      for (std::size_t b = 0; b < items.size(); ++b) {
        const auto& fg = items[b].projection.foreground;
        for (std::size_t i = 0; i < fg.size(); ++i) {
          if (fg[i]) continue;
          kernels::axpy(1.0, feats[b].at(i), bg);
          ++bg_cells;
        }
      }
      if (bg_cells > 0) {
        for (std::size_t d = 0; d < bg.size(); ++d) {
          bank.background.mean[d] = (1.0 - config.momentum) * bank.background.mean[d] +
                                    config.momentum * bg[d] / static_cast<double>(bg_cells);
        }
      }
    }
    bank.quantize_to_float();
    bank.trained_epochs = epoch;

    const LossRecord rec = epoch_loss(bank, prepared, config, epoch);
    if (rec.joint > last.joint + config.stop_tolerance * std::max(1.0, std::abs(last.joint))) {
      bank = std::move(snapshot);
      result.stopped_early = true;
      break;
    }
    result.trace.push_back(rec);
    last = rec;
  }
  result.bank = std::move(bank);
  return result;
}

TrainResult train_bank(const std::vector<TrainingSample>& dataset, const BankSpec& spec, const TrainConfig& config) {
  return train_bank(dataset, init_bank(spec, config.seed), spec, config);
}

double min_class_mean_distance(const ModelBank& bank) {
  if (bank.class_count() < 2) throw InvalidState("mean distance needs at least two classes");
  std::vector<std::vector<double>> means;
  for (const auto& m : bank.models) means.push_back(texture_class_mean(m));
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < means.size(); ++a) {
    for (std::size_t b = a + 1; b < means.size(); ++b) {
      best = std::min(best, std::sqrt(kernels::squared_distance(means[a], means[b])));
    }
  }
  return best;
}

}  // namespace rcnet
