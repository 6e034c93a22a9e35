#include "rcnet/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "rcnet/config.hpp"
#include "rcnet/io.hpp"
#include "rcnet/pipeline.hpp"

namespace rcnet::cli {

namespace fs = std::filesystem;

unsigned effective_threads(unsigned requested) {
  const unsigned base = requested == 0 ? default_threads() : requested;
  if (const char* env = std::getenv("RCNET_THREADS")) {
    char* end = nullptr;
    const long cap = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && cap >= 1) return std::min(base, static_cast<unsigned>(cap));
  }
  return std::max(1u, base);
}

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

struct SynthArgs {
  std::string out;
  int classes = 3;
  int per_class = 20;
  std::string levels = "L0";
  std::string nuisances;
  int train_per_class = 0;
  int image_size = 128;
  int stride = 8;
  int channels = 8;
  int vertices = 1100;
  double focal = 30.0;
  double distance = 6.0;
  double class_separation = AppearanceConfig{}.class_separation;
  int class_channels = AppearanceConfig{}.class_channels;
  double instance_noise = AppearanceConfig{}.instance_noise;
  double pixel_noise = AppearanceConfig{}.pixel_noise;
};

struct TrainArgs {
  std::string data;
  std::string out;
  std::string split = "auto";
  int epochs = TrainConfig{}.epochs;
  double learning_rate = TrainConfig{}.learning_rate;
  double momentum = TrainConfig{}.momentum;
  int batch_size = TrainConfig{}.batch_size;
  double con_weight = TrainConfig{}.con_weight;
  double class_weight = TrainConfig{}.class_weight;
  double stop_tolerance = TrainConfig{}.stop_tolerance;
  int feature_dim = 64;
  bool conv = false;
  int head_iterations = HeadTrainConfig{}.iterations;
  bool force = false;
  bool resume = false;
};

struct InferArgs {
  std::string data;
  std::string model;
  std::string out;
  std::string mode = "full";
  std::string split = "eval";
  double tau1 = CascadeConfig{}.tau1;
  double tau2 = CascadeConfig{}.tau2;
  int top_k = CascadeConfig{}.top_k;
  int max_iterations = OptimizerOptions{}.max_iterations;
  double step_size = OptimizerOptions{}.step_size;
  int refresh_every = OptimizerOptions{}.refresh_every;
  int limit = 0;
  bool record_branches = false;
};

struct EvalArgs {
  std::string logs;
  std::string out;
};

struct SweepArgs {
  std::string logs;
  std::string out;
  double tau1 = CascadeConfig{}.tau1;
  double tau2 = CascadeConfig{}.tau2;
  double d_tau1 = 0.025;
  double d_tau2 = 0.1;
};

struct Common {
  std::string config;
  std::uint64_t seed = 1;
  unsigned parallel = 0;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "key = value file; its keys are the long flag names");
  sub->add_option("--seed", c.seed, "root seed");
  sub->add_option("--parallel", c.parallel, "worker threads (0: all cores, capped by RCNET_THREADS)");
}

// Fills every option not given on the command line from the config file.
void apply_config(CLI::App* sub, const std::string& path) {
  if (path.empty()) return;
  const KeyValueConfig cfg = load_config(path);
  for (const auto& [key, value] : cfg.entries) {
    CLI::Option* opt = key == "config" || key == "help" ? nullptr : sub->get_option_no_throw("--" + key);
    if (!opt) throw InvalidArgument(path + ": unknown key '" + key + "' for command '" + sub->get_name() + "'");
    if (opt->count() > 0) continue;
    opt->add_result(value);
    try {
      opt->run_callback();
    } catch (const CLI::ParseError& e) {
      throw InvalidArgument(path + ": bad value for '" + key + "': " + e.what());
    }
  }
}

std::vector<SceneRecord> load_split(const fs::path& dir, const std::string& split, int limit, WorldConfig* world) {
  const io::Manifest m = io::read_manifest(dir / "manifest.json");
  if (world) *world = m.world;
  std::vector<SceneRecord> out;
  for (const auto& e : m.records) {
    if (split != "all" && e.split != split) continue;
    if (limit > 0 && static_cast<int>(out.size()) >= limit) break;
    out.push_back(io::load_record(dir, e));
  }
  return out;
}

std::string loss_csv(const std::vector<LossRecord>& trace) {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,L_con,L_class,L_joint\n";
  for (const auto& r : trace) os << r.epoch << ',' << r.con << ',' << r.cls << ',' << r.joint << '\n';
  return os.str();
}

std::vector<LossRecord> read_loss_csv(const fs::path& path) {
  std::vector<LossRecord> out;
  std::istringstream in(io::read_text(path));
  std::string line;
  std::getline(in, line);
  if (line != "epoch,L_con,L_class,L_joint") throw FormatError(path.string() + ": unexpected loss header");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    LossRecord r;
    char c1 = 0, c2 = 0, c3 = 0;
    std::istringstream ls(line);
    if (!(ls >> r.epoch >> c1 >> r.con >> c2 >> r.cls >> c3 >> r.joint) || c1 != ',' || c2 != ',' || c3 != ',') {
      throw FormatError(path.string() + ": malformed loss row '" + line + "'");
    }
    out.push_back(r);
  }
  return out;
}

int cmd_synth(const SynthArgs& a, const Common& c, std::ostream& out) {
  DatasetConfig cfg;
  cfg.world = WorldConfig::with_classes(a.classes, c.seed);
  cfg.world.image_height = cfg.world.image_width = a.image_size;
  cfg.world.stride = a.stride;
  cfg.world.channels = a.channels;
  cfg.world.vertex_target = a.vertices;
  cfg.world.focal = a.focal;
  cfg.world.nominal_distance = a.distance;
  cfg.world.appearance.class_separation = a.class_separation;
  cfg.world.appearance.class_channels = a.class_channels;
  cfg.world.appearance.instance_noise = a.instance_noise;
  cfg.world.appearance.pixel_noise = a.pixel_noise;
  cfg.per_class = a.per_class;
  cfg.levels.clear();
  for (const auto& l : split_list(a.levels)) cfg.levels.push_back(parse_level(l));
  for (const auto& n : split_list(a.nuisances)) cfg.nuisances.push_back(parse_nuisance(n));
  cfg.train_per_class = a.train_per_class;
  cfg.seed = c.seed;
  cfg.validate();

  std::error_code ec;
  fs::create_directories(a.out, ec);
  if (ec || !fs::is_directory(a.out)) throw IoError("cannot create output directory '" + a.out + "'");
  const Dataset ds = generate_dataset(cfg, effective_threads(c.parallel));
  io::write_dataset(a.out, ds, c.seed);
  out << "wrote " << ds.records.size() << " records to " << a.out << "\n";
  return kExitOk;
}

int cmd_train(const TrainArgs& a, const Common& c, std::ostream& out) {
  TrainConfig tc;
  tc.epochs = a.epochs;
  tc.learning_rate = a.learning_rate;
  tc.momentum = a.momentum;
  tc.batch_size = a.batch_size;
  tc.con_weight = a.con_weight;
  tc.class_weight = a.class_weight;
  tc.stop_tolerance = a.stop_tolerance;
  tc.seed = c.seed;
  tc.validate();
  if (a.feature_dim < 1) throw InvalidArgument("--feature-dim must be positive");
  if (a.head_iterations < 0) throw InvalidArgument("--head-iterations must be non-negative");
  if (a.force && a.resume) throw InvalidArgument("--force and --resume are mutually exclusive");

  const fs::path dir(a.out);
  const fs::path bank_path = dir / kBankFile, heads_path = dir / kHeadsFile, loss_path = dir / kLossFile;
  const bool exists = fs::exists(bank_path) || fs::exists(heads_path) || fs::exists(loss_path);
  if (exists && !a.force && !a.resume) {
    throw InvalidArgument("'" + a.out + "' already holds a model; pass --force to overwrite or --resume");
  }
  if (a.resume && !fs::exists(bank_path)) throw InvalidArgument("--resume: no bank at '" + bank_path.string() + "'");

  WorldConfig world;
  const fs::path data(a.data);
  const io::Manifest manifest = io::read_manifest(data / "manifest.json");
  std::string split = a.split;
  if (split == "auto") {
    const bool has_train =
        std::any_of(manifest.records.begin(), manifest.records.end(), [](const auto& e) { return e.split == "train"; });
    split = has_train ? "train" : "all";
  }
  const std::vector<SceneRecord> records = load_split(data, split, 0, &world);
  if (records.empty()) throw InvalidDataset("no records in split '" + split + "'");
  const std::vector<TrainingSample> samples = training_samples(records);
  const BankSpec spec = bank_spec_for(world, a.feature_dim, a.conv);

  std::vector<LossRecord> history;
  ModelBank bank;
  if (a.resume) {
    bank = io::read_bank(bank_path);
    if (bank.class_count() != spec.class_extents.size() || bank.feature_dim() != static_cast<std::size_t>(a.feature_dim) ||
        bank.extractor.in_dim != spec.input_channels || bank.extractor.stride != spec.stride) {
      throw InvalidArgument("--resume: saved bank does not match the dataset and flags");
    }
    if (fs::exists(loss_path)) {
      for (const auto& r : read_loss_csv(loss_path)) {
        if (r.epoch < bank.trained_epochs) history.push_back(r);
      }
    }
  } else {
    bank = init_bank(spec, c.seed);
  }

  TrainResult result = train_bank(samples, std::move(bank), spec, tc);
  history.insert(history.end(), result.trace.begin(), result.trace.end());

  HeadTrainConfig hc = head_config_for(world);
  hc.iterations = a.head_iterations;
  const FeedForwardHeads heads = fit_heads(result.bank, samples, hc, effective_threads(c.parallel));

  io::write_bank(bank_path, result.bank);
  io::write_heads(heads_path, heads);
  io::write_text(loss_path, loss_csv(history));
  out << "trained to epoch " << result.bank.trained_epochs << (result.stopped_early ? " (stopped early)" : "")
      << " on " << samples.size() << " samples; wrote " << a.out << "\n";
  return kExitOk;
}

int cmd_infer(const InferArgs& a, const Common& c, std::ostream& out) {
  RunOptions ro;
  ro.mode = a.mode;
  ro.cascade.tau1 = a.tau1;
  ro.cascade.tau2 = a.tau2;
  ro.cascade.top_k = a.top_k;
  ro.cascade.validate();
  ro.record_branches = a.record_branches;
  ro.threads = effective_threads(c.parallel);
  if (a.mode != "full" && a.mode != "cascade") throw InvalidArgument("--mode must be full or cascade");
  if (a.limit < 0) throw InvalidArgument("--limit must be non-negative");

  const fs::path model(a.model);
  const ModelBank bank = io::read_bank(model / kBankFile);
  std::optional<FeedForwardHeads> heads;
  if (a.mode == "cascade") {
    if (!fs::exists(model / kHeadsFile)) {
      throw InvalidArgument("cascade mode needs heads; '" + (model / kHeadsFile).string() + "' is missing");
    }
    heads = io::read_heads(model / kHeadsFile);
  }

  WorldConfig world;
  const std::vector<SceneRecord> records = load_split(a.data, a.split, a.limit, &world);
  if (records.empty()) throw InvalidDataset("no records in split '" + a.split + "'");
  if (static_cast<int>(bank.class_count()) != world.class_count()) {
    throw InvalidArgument("bank has " + std::to_string(bank.class_count()) + " classes, dataset has " +
                          std::to_string(world.class_count()));
  }
  ro.inference = inference_options_for(world);
  ro.inference.optimizer.max_iterations = a.max_iterations;
  ro.inference.optimizer.step_size = a.step_size;
  ro.inference.optimizer.refresh_every = a.refresh_every;

  const std::vector<LogRecord> logs = run_inference(records, bank, heads ? &*heads : nullptr, ro);
  io::write_logs(a.out, logs);
  out << "wrote " << logs.size() << " logs to " << a.out << "\n";
  return kExitOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const std::vector<LogRecord> logs = io::read_logs(a.logs);
  if (logs.empty()) throw InvalidDataset("no records in '" + a.logs + "'");
  const EvalReport report = compute_metrics(logs);
  const fs::path dir(a.out);
  io::write_text(dir / "report.csv", report_csv(report));
  io::write_text(dir / "report.json", report_json(report));
  out << report_csv(report);
  return kExitOk;
}

std::vector<double> grid_with(std::vector<double> grid, std::initializer_list<double> extra) {
  for (double v : extra) {
    if (v >= 0.0 && v <= 1.0) grid.push_back(v);
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end(), [](double x, double y) { return std::abs(x - y) < 1e-9; }),
             grid.end());
  return grid;
}

int cmd_sweep(const SweepArgs& a, std::ostream& out) {
  const std::vector<LogRecord> logs = io::read_logs(a.logs);
  if (logs.empty()) throw InvalidDataset("no records in '" + a.logs + "'");
  const std::vector<double> grid1 = grid_with(default_sweep_grid(), {a.tau1, a.tau1 - a.d_tau1, a.tau1 + a.d_tau1});
  const std::vector<double> grid2 = grid_with(default_sweep_grid(), {a.tau2, a.tau2 - a.d_tau2, a.tau2 + a.d_tau2});
  const std::vector<SweepPoint> sweep = threshold_sweep(logs, grid1, grid2, a.tau1, a.tau2);
  const std::vector<SensitivityRow> rows = sensitivity_report(sweep, a.tau1, a.tau2, a.d_tau1, a.d_tau2);
  const fs::path dir(a.out);
  io::write_text(dir / "sweep.csv", sweep_csv(sweep));
  io::write_text(dir / "sweep_tau1.svg", sweep_svg(sweep, "tau1"));
  io::write_text(dir / "sweep_tau2.svg", sweep_svg(sweep, "tau2"));
  io::write_text(dir / "sensitivity.csv", sensitivity_csv(rows));
  io::write_text(dir / "sensitivity.json", sensitivity_json(rows));
  out << sensitivity_csv(rows);
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"render-and-compare classification on synthetic scenes", "rcnet"};
  app.require_subcommand(1);

  Common common;
  SynthArgs sa;
  TrainArgs ta;
  InferArgs ia;
  EvalArgs ea;
  SweepArgs wa;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  add_common(synth, common);
  synth->add_option("--out", sa.out, "output directory")->required();
  synth->add_option("--classes", sa.classes, "number of classes");
  synth->add_option("--per-class", sa.per_class, "eval scenes per class and group");
  synth->add_option("--levels", sa.levels, "comma-separated occlusion levels (L0..L3)");
  synth->add_option("--nuisances", sa.nuisances, "comma-separated nuisances (context,texture,shape,weather,pose)");
  synth->add_option("--train-per-class", sa.train_per_class, "training scenes per class");
  synth->add_option("--image-size", sa.image_size, "image height and width");
  synth->add_option("--stride", sa.stride, "pixels per feature cell");
  synth->add_option("--channels", sa.channels, "image channels");
  synth->add_option("--vertices", sa.vertices, "target vertices per mesh");
  synth->add_option("--focal", sa.focal, "focal length in feature cells");
  synth->add_option("--distance", sa.distance, "nominal camera distance");
  synth->add_option("--class-separation", sa.class_separation, "class-specific appearance amplitude");
  synth->add_option("--class-channels", sa.class_channels, "trailing channels carrying the class-specific part (0: all)");
  synth->add_option("--instance-noise", sa.instance_noise, "per-vertex appearance noise");
  synth->add_option("--pixel-noise", sa.pixel_noise, "per-pixel noise");

  auto* train = app.add_subcommand("train", "train a model bank and feed-forward heads");
  add_common(train, common);
  train->add_option("--data", ta.data, "dataset directory")->required();
  train->add_option("--out", ta.out, "model directory")->required();
  train->add_option("--split", ta.split, "train, eval, all or auto");
  train->add_option("--epochs", ta.epochs, "training epochs");
  train->add_option("--learning-rate", ta.learning_rate, "extractor step size");
  train->add_option("--momentum", ta.momentum, "texture moving-average rate");
  train->add_option("--batch-size", ta.batch_size, "samples per batch");
  train->add_option("--con-weight", ta.con_weight, "contrastive loss weight");
  train->add_option("--class-weight", ta.class_weight, "class separation loss weight (0 disables)");
  train->add_option("--stop-tolerance", ta.stop_tolerance, "relative loss increase that stops training");
  train->add_option("--feature-dim", ta.feature_dim, "feature dimension");
  train->add_flag("--conv", ta.conv, "add a 3x3 convolution stage to the extractor");
  train->add_option("--head-iterations", ta.head_iterations, "feed-forward head optimisation steps");
  train->add_flag("--force", ta.force, "overwrite an existing model");
  train->add_flag("--resume", ta.resume, "continue training the saved bank");

  auto* infer = app.add_subcommand("infer", "run inference and write per-sample logs");
  add_common(infer, common);
  infer->add_option("--data", ia.data, "dataset directory")->required();
  infer->add_option("--model", ia.model, "model directory")->required();
  infer->add_option("--out", ia.out, "output JSONL file")->required();
  infer->add_option("--mode", ia.mode, "full or cascade");
  infer->add_option("--split", ia.split, "train, eval or all");
  infer->add_option("--tau1", ia.tau1, "feed-forward confidence threshold");
  infer->add_option("--tau2", ia.tau2, "match score threshold");
  infer->add_option("--top-k", ia.top_k, "class and pose proposals verified in S2");
  infer->add_option("--max-iterations", ia.max_iterations, "pose optimisation iteration cap");
  infer->add_option("--step-size", ia.step_size, "initial pose step size");
  infer->add_option("--refresh-every", ia.refresh_every, "iterations between visibility refreshes");
  infer->add_option("--limit", ia.limit, "process at most this many records (0: all)");
  infer->add_flag("--record-branches", ia.record_branches, "log every cascade branch for offline sweeps");

  auto* eval = app.add_subcommand("eval", "compute metrics from logs");
  add_common(eval, common);
  eval->add_option("--logs", ea.logs, "JSONL logs")->required();
  eval->add_option("--out", ea.out, "report directory")->required();

  auto* sweep = app.add_subcommand("sweep", "threshold sweep and sensitivity report from logs");
  add_common(sweep, common);
  sweep->add_option("--logs", wa.logs, "JSONL logs recorded with --record-branches")->required();
  sweep->add_option("--out", wa.out, "report directory")->required();
  sweep->add_option("--tau1", wa.tau1, "default feed-forward threshold");
  sweep->add_option("--tau2", wa.tau2, "default match score threshold");
  sweep->add_option("--d-tau1", wa.d_tau1, "tau1 perturbation");
  sweep->add_option("--d-tau2", wa.d_tau2, "tau2 perturbation");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitBadArguments;
  }

  try {
    CLI::App* sub = app.get_subcommands().front();
    apply_config(sub, common.config);
    if (sub == synth) return cmd_synth(sa, common, out);
    if (sub == train) return cmd_train(ta, common, out);
    if (sub == infer) return cmd_infer(ia, common, out);
    if (sub == eval) return cmd_eval(ea, out);
    return cmd_sweep(wa, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace rcnet::cli
