#include "rcnet/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

namespace rcnet {

namespace {

std::string fmt(double v, int precision = 6) {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, v);
  return buf;
}

struct Tally {
  std::size_t count = 0, cls = 0, coarse = 0, fine = 0, aware = 0;
  std::vector<double> errors;
  long iterations = 0;
  long reference = 0;
  bool reference_known = true;
  std::size_t s1 = 0, s2 = 0, s3 = 0, full = 0;

  void add(const LogRecord& log) {
    const Correctness c = judge(log.true_class, rotation_from_pose(log.true_pose), log.result.predicted_class,
                                log.result.rotation);
    ++count;
    cls += c.cls;
    coarse += c.pose_coarse;
    fine += c.pose_fine;
    aware += c.aware;
    errors.push_back(c.pose_error);
    iterations += log.result.cost.iterations;
    if (const auto r = log.reference_iterations()) {
      reference += *r;
    } else {
      reference_known = false;
    }
    switch (log.result.stage) {
      case Stage::s1: ++s1; break;
      case Stage::s2: ++s2; break;
      case Stage::s3: ++s3; break;
      case Stage::full: ++full; break;
    }
  }

  MetricRow row(std::string group) const {
    MetricRow r;
    r.group = std::move(group);
    r.count = count;
    const double n = count == 0 ? 1.0 : static_cast<double>(count);
    r.classification = cls / n;
    r.acc_coarse = coarse / n;
    r.acc_fine = fine / n;
    r.aware = aware / n;
    // Sorted so the sum does not depend on record order.
    std::vector<double> sorted = errors;
    std::sort(sorted.begin(), sorted.end());
    double error_sum = 0.0;
    for (double e : sorted) error_sum += e;
    r.mean_pose_error = error_sum / n;
    r.iterations = iterations;
    if (reference_known && count > 0) {
      r.reference_iterations = reference;
      r.cost_percent = reference == 0 ? (iterations == 0 ? 100.0 : std::numeric_limits<double>::infinity())
                                      : 100.0 * static_cast<double>(iterations) / static_cast<double>(reference);
    }
    r.s1 = s1;
    r.s2 = s2;
    r.s3 = s3;
    r.full = full;
    return r;
  }
};

nlohmann::ordered_json row_json(const MetricRow& r) {
  nlohmann::ordered_json j;
  j["group"] = r.group;
  j["count"] = r.count;
  j["classification"] = r.classification;
  j["acc_pi_6"] = r.acc_coarse;
  j["acc_pi_18"] = r.acc_fine;
  j["aware_3d"] = r.aware;
  j["mean_pose_error"] = r.mean_pose_error;
  j["iterations"] = r.iterations;
  j["reference_iterations"] = r.reference_iterations ? nlohmann::ordered_json(*r.reference_iterations) : nullptr;
  j["cost_percent"] = r.cost_percent ? nlohmann::ordered_json(*r.cost_percent) : nullptr;
  j["stages"] = {{"S1", r.s1}, {"S2", r.s2}, {"S3", r.s3}, {"full", r.full}};
  return j;
}

const BranchTrace& branches_of(const LogRecord& log) {
  if (!log.result.branches) {
    throw InvalidArgument("record '" + log.id + "' has no cached branch outcomes; rerun inference with branch recording");
  }
  return *log.result.branches;
}

bool branch_correct(const LogRecord& log, const BranchOutcome& b) {
  return judge(log.true_class, rotation_from_pose(log.true_pose), b.class_id, rotation_from_pose(b.pose)).aware;
}

const SweepPoint* find_point(std::span<const SweepPoint> sweep, const std::string& parameter, double tau1,
                             double tau2) {
  constexpr double kTol = 1e-9;
  for (const auto& p : sweep) {
    if (p.parameter == parameter && std::abs(p.tau1 - tau1) < kTol && std::abs(p.tau2 - tau2) < kTol) return &p;
  }
  return nullptr;
}

}  // namespace

std::optional<long> LogRecord::reference_iterations() const {
  if (mode == "full") return result.cost.iterations;
  if (result.branches) return result.branches->full.iterations;
  return std::nullopt;
}

LogRecord make_log_record(const SceneRecord& truth, InferenceResult result, std::string mode) {
  LogRecord log;
  log.id = truth.id;
  log.true_class = truth.class_id;
  log.true_pose = truth.pose;
  log.level = std::string(level_name(truth.level));
  for (Nuisance n : truth.nuisances) log.nuisances.emplace_back(nuisance_name(n));
  log.mode = std::move(mode);
  log.result = std::move(result);
  return log;
}

Correctness judge(int true_class, const Eigen::Matrix3d& true_rotation, int predicted_class,
                  const Eigen::Matrix3d& predicted_rotation) {
  Correctness c;
  c.cls = predicted_class == true_class;
  c.pose_error = pose_error(predicted_rotation, true_rotation);
  c.pose_coarse = c.pose_error < kCoarseThreshold;
  c.pose_fine = c.pose_error < kFineThreshold;
  c.aware = c.cls && c.pose_coarse;
  return c;
}

EvalReport compute_metrics(std::span<const LogRecord> logs) {
  if (logs.empty()) throw InvalidArgument("no records to evaluate");
  std::set<std::string> ids;
  Tally overall;
  std::map<std::string, Tally> levels, nuisances;
  for (const auto& log : logs) {
    if (!ids.insert(log.id).second) throw InvalidArgument("duplicate record id '" + log.id + "'");
    overall.add(log);
    if (log.nuisances.empty()) {
      levels[log.level].add(log);
    } else {
      for (const auto& n : log.nuisances) nuisances[n].add(log);
    }
  }
  EvalReport rep;
  rep.overall = overall.row("overall");
  for (const auto& [name, t] : levels) rep.by_level.push_back(t.row(name));
  for (const auto& [name, t] : nuisances) rep.by_nuisance.push_back(t.row(name));
  return rep;
}

EvalReport compute_metrics(std::span<const std::pair<std::string, InferenceResult>> results,
                           std::span<const SceneRecord> truth) {
  if (results.size() != truth.size()) throw InvalidArgument("result and truth counts differ");
  std::unordered_map<std::string, const SceneRecord*> by_id;
  for (const auto& t : truth) by_id[t.id] = &t;
  std::vector<LogRecord> logs;
  logs.reserve(results.size());
  for (const auto& [id, res] : results) {
    const auto it = by_id.find(id);
    if (it == by_id.end()) throw InvalidArgument("result id '" + id + "' has no truth record");
    logs.push_back(make_log_record(*it->second, res, res.stage == Stage::full ? "full" : "cascade"));
  }
  return compute_metrics(logs);
}

CascadeSimulation simulate_cascade(std::span<const LogRecord> logs, double tau1, double tau2) {
  if (logs.empty()) throw InvalidArgument("no records to simulate");
  CascadeSimulation sim;
  sim.tau1 = tau1;
  sim.tau2 = tau2;
  std::size_t cls = 0, aware = 0, wrong_s2_routed = 0, recovered = 0;
  for (const auto& log : logs) {
    const BranchTrace& b = branches_of(log);
    const BranchOutcome* pick;
    long iters;
    if (b.head_confidence > tau1) {
      pick = &b.s1;
      iters = b.s1.iterations;
      ++sim.s1;
    } else if (b.s2.match_score > tau2) {
      pick = &b.s2;
      iters = b.s2.iterations;
      ++sim.s2;
    } else {
      pick = &b.full;
      iters = b.s2.iterations + b.full.iterations;
      ++sim.s3;
      if (!branch_correct(log, b.s2)) {
        ++wrong_s2_routed;
        recovered += branch_correct(log, b.full);
      }
    }
    const Correctness c =
        judge(log.true_class, rotation_from_pose(log.true_pose), pick->class_id, rotation_from_pose(pick->pose));
    cls += c.cls;
    aware += c.aware;
    sim.iterations += iters;
    sim.reference_iterations += b.full.iterations;
  }
  sim.count = logs.size();
  sim.classification = static_cast<double>(cls) / static_cast<double>(sim.count);
  sim.aware = static_cast<double>(aware) / static_cast<double>(sim.count);
  sim.cost_percent = sim.reference_iterations == 0
                         ? 100.0
                         : 100.0 * static_cast<double>(sim.iterations) / static_cast<double>(sim.reference_iterations);
  if (wrong_s2_routed > 0) sim.s3_recovery = static_cast<double>(recovered) / static_cast<double>(wrong_s2_routed);
  return sim;
}

std::vector<SweepPoint> threshold_sweep(std::span<const LogRecord> logs, std::span<const double> tau1_grid,
                                        std::span<const double> tau2_grid, double tau1_default, double tau2_default) {
  if (tau1_grid.empty() && tau2_grid.empty()) throw InvalidArgument("threshold grid is empty");
  if (logs.empty()) throw InvalidArgument("no records to sweep");
  struct Item {
    double s1_conf, s2_score;
    bool s1_ok, s2_ok;
  };
  std::vector<Item> items;
  items.reserve(logs.size());
  for (const auto& log : logs) {
    const BranchTrace& b = branches_of(log);
    items.push_back({b.head_confidence, b.s2.match_score, branch_correct(log, b.s1), branch_correct(log, b.s2)});
  }
  auto rates = [&](double tau, bool first, SweepPoint& p) {
    std::size_t pos = 0, neg = 0, tp = 0, fp = 0;
    for (const auto& it : items) {
      const bool ok = first ? it.s1_ok : it.s2_ok;
      const bool accept = (first ? it.s1_conf : it.s2_score) > tau;
      (ok ? pos : neg)++;
      if (accept) (ok ? tp : fp)++;
    }
    p.tpr = pos == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(pos);
    p.fpr = neg == 0 ? 0.0 : static_cast<double>(fp) / static_cast<double>(neg);
    p.accept_rate = static_cast<double>(tp + fp) / static_cast<double>(items.size());
  };
  std::vector<SweepPoint> out;
  auto emit = [&](const std::string& parameter, double tau, double t1, double t2, bool first) {
    SweepPoint p;
    p.parameter = parameter;
    p.tau = tau;
    p.tau1 = t1;
    p.tau2 = t2;
    rates(tau, first, p);
    const CascadeSimulation sim = simulate_cascade(logs, t1, t2);
    p.aware = sim.aware;
    p.classification = sim.classification;
    p.cost_percent = sim.cost_percent;
    p.full_runs = sim.s3;
    out.push_back(p);
  };
  for (double t : tau1_grid) emit("tau1", t, t, tau2_default, true);
  for (double t : tau2_grid) emit("tau2", t, tau1_default, t, false);
  return out;
}

std::vector<double> default_sweep_grid() {
  std::vector<double> g;
  for (int k = 0; k <= 40; ++k) g.push_back(k / 40.0);
  return g;
}

std::vector<SensitivityRow> sensitivity_report(std::span<const SweepPoint> sweep, double tau1, double tau2,
                                               double d_tau1, double d_tau2) {
  const SweepPoint* base = find_point(sweep, "tau1", tau1, tau2);
  if (!base) base = find_point(sweep, "tau2", tau1, tau2);
  if (!base) throw InvalidArgument("sweep does not contain the default thresholds");
  struct Want {
    std::string label, parameter;
    double t1, t2;
  };
  const std::vector<Want> wants = {
      {"tau1-" + fmt(d_tau1, 3), "tau1", tau1 - d_tau1, tau2},
      {"tau1+" + fmt(d_tau1, 3), "tau1", tau1 + d_tau1, tau2},
      {"tau2-" + fmt(d_tau2, 3), "tau2", tau1, tau2 - d_tau2},
      {"tau2+" + fmt(d_tau2, 3), "tau2", tau1, tau2 + d_tau2},
  };
  std::vector<SensitivityRow> rows;
  rows.push_back({"default", tau1, tau2, base->aware, base->cost_percent, 0.0, 0.0});
  for (const auto& w : wants) {
    const SweepPoint* p = find_point(sweep, w.parameter, w.t1, w.t2);
    if (!p && d_tau1 == 0.0 && w.parameter == "tau1") p = base;
    if (!p && d_tau2 == 0.0 && w.parameter == "tau2") p = base;
    if (!p) throw InvalidArgument("sweep is missing the point " + w.label);
    rows.push_back({w.label, w.t1, w.t2, p->aware, p->cost_percent, p->aware - base->aware,
                    p->cost_percent - base->cost_percent});
  }
  return rows;
}

std::string report_csv(const EvalReport& report) {
  std::ostringstream os;
  os << "group,count,classification,acc_pi_6,acc_pi_18,aware_3d,mean_pose_error,iterations,cost_percent,"
        "s1,s2,s3,full\n";
  auto line = [&](const MetricRow& r) {
    os << r.group << ',' << r.count << ',' << fmt(r.classification) << ',' << fmt(r.acc_coarse) << ','
       << fmt(r.acc_fine) << ',' << fmt(r.aware) << ',' << fmt(r.mean_pose_error) << ',' << r.iterations << ','
       << (r.cost_percent ? fmt(*r.cost_percent, 3) : std::string()) << ',' << r.s1 << ',' << r.s2 << ',' << r.s3
       << ',' << r.full << '\n';
  };
  line(report.overall);
  for (const auto& r : report.by_level) line(r);
  for (const auto& r : report.by_nuisance) line(r);
  return os.str();
}

std::string report_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  j["overall"] = row_json(report.overall);
  j["by_level"] = nlohmann::ordered_json::array();
  for (const auto& r : report.by_level) j["by_level"].push_back(row_json(r));
  j["by_nuisance"] = nlohmann::ordered_json::array();
  for (const auto& r : report.by_nuisance) j["by_nuisance"].push_back(row_json(r));
  return j.dump(2) + "\n";
}

std::string sweep_csv(std::span<const SweepPoint> sweep) {
  std::ostringstream os;
  os << "parameter,tau,tau1,tau2,tpr,fpr,accept_rate,aware_3d,classification,cost_percent,full_runs\n";
  for (const auto& p : sweep) {
    os << p.parameter << ',' << fmt(p.tau, 4) << ',' << fmt(p.tau1, 4) << ',' << fmt(p.tau2, 4) << ',' << fmt(p.tpr)
       << ',' << fmt(p.fpr) << ',' << fmt(p.accept_rate) << ',' << fmt(p.aware) << ',' << fmt(p.classification) << ','
       << fmt(p.cost_percent, 3) << ',' << p.full_runs << '\n';
  }
  return os.str();
}

std::string sweep_svg(std::span<const SweepPoint> sweep, const std::string& parameter) {
  constexpr double kSize = 400, kPad = 50;
  auto sx = [&](double fpr) { return kPad + fpr * kSize; };
  auto sy = [&](double tpr) { return kPad + (1.0 - tpr) * kSize; };
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kSize + 2 * kPad << "\" height=\"" << kSize + 2 * kPad
     << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  os << "<rect x=\"" << kPad << "\" y=\"" << kPad << "\" width=\"" << kSize << "\" height=\"" << kSize
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << sx(0) << "\" y1=\"" << sy(0) << "\" x2=\"" << sx(1) << "\" y2=\"" << sy(1)
     << "\" stroke=\"#bbb\" stroke-dasharray=\"4 4\"/>\n";
  os << "<text x=\"" << kPad + kSize / 2 << "\" y=\"" << kPad + kSize + 35 << "\" text-anchor=\"middle\">FPR</text>\n";
  os << "<text x=\"15\" y=\"" << kPad + kSize / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 15 "
     << kPad + kSize / 2 << ")\">TPR</text>\n";
  os << "<text x=\"" << kPad + kSize / 2 << "\" y=\"30\" text-anchor=\"middle\">ROC, " << parameter << "</text>\n";
  for (int t = 0; t <= 4; ++t) {
    const double v = t / 4.0;
    os << "<text x=\"" << sx(v) << "\" y=\"" << kPad + kSize + 15 << "\" text-anchor=\"middle\">" << fmt(v, 2)
       << "</text>\n";
    os << "<text x=\"" << kPad - 5 << "\" y=\"" << sy(v) + 3 << "\" text-anchor=\"end\">" << fmt(v, 2) << "</text>\n";
  }
  std::vector<const SweepPoint*> pts;
  for (const auto& p : sweep) {
    if (p.parameter == parameter) pts.push_back(&p);
  }
  os << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"";
  for (const auto* p : pts) os << fmt(sx(p->fpr), 2) << ',' << fmt(sy(p->tpr), 2) << ' ';
  os << "\"/>\n";
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto* p = pts[i];
    os << "<circle cx=\"" << fmt(sx(p->fpr), 2) << "\" cy=\"" << fmt(sy(p->tpr), 2)
       << "\" r=\"2\" fill=\"#1f77b4\"/>\n";
    if (i % 4 == 0) {
      os << "<text x=\"" << fmt(sx(p->fpr) + 4, 2) << "\" y=\"" << fmt(sy(p->tpr) - 4, 2) << "\">" << fmt(p->tau, 3)
         << "</text>\n";
    }
  }
  os << "</svg>\n";
  return os.str();
}

std::string sensitivity_csv(std::span<const SensitivityRow> rows) {
  std::ostringstream os;
  os << "setting,tau1,tau2,aware_3d,cost_percent,delta_aware_3d,delta_cost_percent\n";
  for (const auto& r : rows) {
    os << r.label << ',' << fmt(r.tau1, 4) << ',' << fmt(r.tau2, 4) << ',' << fmt(r.aware) << ','
       << fmt(r.cost_percent, 3) << ',' << fmt(r.delta_aware) << ',' << fmt(r.delta_cost, 3) << '\n';
  }
  return os.str();
}

std::string sensitivity_json(std::span<const SensitivityRow> rows) {
  nlohmann::ordered_json j = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    j.push_back({{"setting", r.label},
                 {"tau1", r.tau1},
                 {"tau2", r.tau2},
                 {"aware_3d", r.aware},
                 {"cost_percent", r.cost_percent},
                 {"delta_aware_3d", r.delta_aware},
                 {"delta_cost_percent", r.delta_cost}});
  }
  return j.dump(2) + "\n";
}

}  // namespace rcnet
