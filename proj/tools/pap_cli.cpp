// Command-line front end: scene generation, training, evaluation, pair
// statistics, ablation plans and affinity dumps.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pap/pap.hpp"

namespace fs = std::filesystem;
using namespace pap;

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
  std::string data;
};

PapConfig load_config(const CommonOptions& o) {
  PapConfig cfg;
  if (!o.config.empty()) {
    cfg = parse_config(o.config);
  } else if (!o.seed) {
    throw ConfigError("either --config or --seed is required");
  }
  if (o.seed) cfg.seed = *o.seed;
  cfg.validate();
  return cfg;
}

/// Creates `dir`, refusing a non-empty existing one unless forced.
void prepare_out_dir(const std::string& dir, bool force) {
  if (dir.empty()) throw ConfigError("--out is required");
  if (fs::exists(dir) && !fs::is_empty(dir) && !force) {
    throw ConfigError("output directory " + dir + " exists and is not empty; pass --force to overwrite");
  }
  fs::create_directories(dir);
}

fs::path dataset_path(const std::string& data) {
  const fs::path p(data);
  return fs::is_directory(p) ? p / "dataset.papd" : p;
}

/// Samples from --data when given, otherwise generated from the config.
std::vector<SceneSample> load_samples(const CommonOptions& o, const PapConfig& cfg) {
  if (o.data.empty()) return generate_dataset(cfg.scene_spec(), cfg.samples);
  Dataset ds = read_dataset(dataset_path(o.data));
  if (ds.height != cfg.image_height || ds.width != cfg.image_width) {
    throw ConfigError("dataset is " + std::to_string(ds.height) + "x" + std::to_string(ds.width) + " but the config says " +
                      std::to_string(cfg.image_height) + "x" + std::to_string(cfg.image_width));
  }
  if (ds.classes > cfg.classes) {
    throw ConfigError("dataset has " + std::to_string(ds.classes) + " classes, config allows " + std::to_string(cfg.classes));
  }
  return std::move(ds.samples);
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p);
  if (!f) throw Error("cannot write " + p.string());
  f << text;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoull(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("bad seed '" + item + "' in --seeds");
    }
  }
  return out;
}

int cmd_gen_data(const CommonOptions& o, std::size_t previews) {
  const PapConfig cfg = load_config(o);
  prepare_out_dir(o.out, o.force);
  Dataset ds;
  ds.height = cfg.image_height;
  ds.width = cfg.image_width;
  ds.classes = cfg.classes;
  ds.samples = generate_dataset(cfg.scene_spec(), cfg.samples);
  write_dataset(fs::path(o.out) / "dataset.papd", ds);
  write_text(fs::path(o.out) / "config.cfg", cfg.emit());
  if (previews > 0) {
    fs::create_directories(fs::path(o.out) / "preview");
    for (std::size_t i = 0; i < std::min(previews, ds.samples.size()); ++i) {
      export_sample(ds.samples[i], fs::path(o.out) / "preview", "scene_" + std::to_string(i));
    }
  }
  std::cout << "wrote " << ds.samples.size() << " scenes to " << (fs::path(o.out) / "dataset.papd").string() << "\n";
  return 0;
}

int cmd_train(const CommonOptions& o) {
  const PapConfig cfg = load_config(o);
  const auto samples = load_samples(o, cfg);
  prepare_out_dir(o.out, o.force);
  const auto [train_set, val_set] = split(samples, cfg.train_fraction, cfg.seed);
  PapNet model(cfg);
  std::cerr << "training on " << train_set.size() << " scenes, " << model.parameter_count() << " weights\n";
  const TrainResult r = train(model, prepare_samples(train_set), [&](std::size_t epoch, double mean) {
    std::cerr << "epoch " << epoch + 1 << "/" << cfg.epochs << " mean loss " << mean << "\n";
  });
  checkpoint_save(model, fs::path(o.out) / "model.ckpt");
  write_text(fs::path(o.out) / "config.cfg", cfg.emit());
  std::ostringstream losses;
  losses << "step,loss\n";
  for (std::size_t i = 0; i < r.losses.size(); ++i) losses << i << ',' << MetricsReport::format_value(r.losses[i]) << '\n';
  write_text(fs::path(o.out) / "losses.csv", losses.str());
  std::cout << "trained " << r.losses.size() << " steps in " << r.seconds << " s; checkpoint "
            << (fs::path(o.out) / "model.ckpt").string() << "\n";
  return 0;
}

int cmd_eval(const CommonOptions& o, const std::string& checkpoint) {
  const PapConfig cfg = load_config(o);
  const auto samples = load_samples(o, cfg);
  PapNet model(cfg);
  checkpoint_load(model, checkpoint);
  const auto [train_set, val_set] = split(samples, cfg.train_fraction, cfg.seed);
  const MetricsReport report = evaluate(model, val_set);
  std::ostringstream csv;
  report.write_csv(csv);
  if (!o.out.empty()) {
    prepare_out_dir(o.out, o.force);
    write_text(fs::path(o.out) / "metrics.csv", csv.str());
  }
  std::cout << csv.str();
  return 0;
}

int cmd_stats(const CommonOptions& o) {
  const PapConfig cfg = load_config(o);
  const auto samples = load_samples(o, cfg);
  PairMatchConfig pm = cfg.stats;
  pm.seed = cfg.seed;
  const MatchTable table = pair_match_stats(samples, pm);
  std::ostringstream csv;
  table.write_csv(csv);
  if (!o.out.empty()) {
    prepare_out_dir(o.out, o.force);
    write_text(fs::path(o.out) / "ratios.csv", csv.str());
  }
  std::cout << csv.str();
  return 0;
}

int cmd_ablate(const CommonOptions& o, const std::string& plans, const std::string& seeds) {
  const PapConfig cfg = load_config(o);
  if (o.out.empty()) throw ConfigError("--out is required");
  if (fs::exists(o.out) && !o.force) throw ConfigError("output directory " + o.out + " exists; pass --force to overwrite");
  std::vector<PlanKind> kinds;
  if (plans == "all") {
    kinds.assign(std::begin(kAllPlanKinds), std::end(kAllPlanKinds));
  } else {
    std::stringstream ss(plans);
    std::string item;
    while (std::getline(ss, item, ',')) kinds.push_back(parse_plan_kind(item));
  }
  std::vector<ExperimentPlan> todo;
  for (PlanKind k : kinds) {
    ExperimentPlan p;
    p.kind = k;
    p.seeds = parse_seeds(seeds);
    p.base = cfg;
    p.validate();
    todo.push_back(p);
  }
  std::optional<std::vector<SceneSample>> data;
  if (!o.data.empty()) data = load_samples(o, cfg);
  std::vector<ExperimentResult> results;
  for (const auto& p : todo) {
    results.push_back(run_experiment(p, data ? &*data : nullptr, [](const RunRecord& r) {
      std::cerr << r.run_id << (r.ok() ? " ok " : " FAILED ") << r.train_seconds << " s";
      if (!r.ok()) std::cerr << ": " << r.error;
      std::cerr << "\n";
    }));
  }
  export_report(results, o.out, o.force);
  const bool complete = std::all_of(results.begin(), results.end(), [](const auto& r) { return r.complete(); });
  std::cout << "report written to " << o.out << (complete ? "" : " (some runs failed)") << "\n";
  return complete ? 0 : 1;
}

int cmd_dump_affinity(const CommonOptions& o, const std::string& checkpoint, std::size_t index, std::vector<std::size_t> rows) {
  const PapConfig cfg = load_config(o);
  if (!cfg.diffusion_active()) throw ConfigError("dump-affinity needs propagation enabled with iterations > 0 and beta > 0");
  const auto samples = load_samples(o, cfg);
  if (index >= samples.size()) throw ConfigError("--index " + std::to_string(index) + " out of range");
  PapNet model(cfg);
  if (!checkpoint.empty()) checkpoint_load(model, checkpoint);
  prepare_out_dir(o.out, o.force);
  Tape t;
  const ForwardResult fr = model.forward(t, samples[index].image, false);
  const std::size_t pool = cfg.diffusion.subsampled ? 2 : 1;
  for (const auto& task : fr.tasks) {
    const std::size_t h = task.branch.dim(1), w = task.branch.dim(2);
    if (rows.empty()) rows = {h * w / 2 + w / 2};
    for (std::size_t r : rows) {
      const auto path = dump_affinity(task.combined, r, h / pool, w / pool, o.out);
      std::cout << path.string() << "\n";
    }
  }
  export_sample(samples[index], o.out, "scene");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-task scene prediction with cross-task affinity propagation"};
  app.require_subcommand(1);
  CommonOptions o;
  auto add_common = [&](CLI::App* sub, bool needs_out) {
    sub->add_option("--config", o.config, "Config file (key = value)");
    sub->add_option("--seed", o.seed, "Override the config seed");
    auto* out = sub->add_option("--out", o.out, "Output directory");
    if (needs_out) out->required();
    sub->add_flag("--force", o.force, "Overwrite an existing output directory");
  };

  std::size_t previews = 4;
  auto* gen = app.add_subcommand("gen-data", "Generate synthetic scenes into OUT/dataset.papd");
  add_common(gen, true);
  gen->add_option("--previews", previews, "Number of scenes exported as images");

  auto* tr = app.add_subcommand("train", "Train on the training split; writes OUT/model.ckpt");
  add_common(tr, true);
  tr->add_option("--data", o.data, "Dataset file or gen-data directory (default: generate from config)");

  std::string checkpoint;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the validation split");
  add_common(ev, false);
  ev->add_option("--data", o.data, "Dataset file or gen-data directory");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint written by train")->required();

  auto* st = app.add_subcommand("stats", "Cross-task similar/dissimilar pair match ratios on ground truth");
  add_common(st, false);
  st->add_option("--data", o.data, "Dataset file or gen-data directory");

  std::string plans = "module-ablation", seeds = "1,2,3,4,5";
  auto* ab = app.add_subcommand("ablate", "Run experiment plans and export a report");
  add_common(ab, true);
  ab->add_option("--data", o.data, "Dataset file or gen-data directory (default: generate per seed)");
  ab->add_option("--plan", plans,
                 "Comma list of joint-vs-single, iteration-sweep, scale-sweep, similarity-sweep, module-ablation, or all");
  ab->add_option("--seeds", seeds, "Comma list of seeds (at least 3)");

  std::size_t index = 0;
  std::vector<std::size_t> rows;
  auto* da = app.add_subcommand("dump-affinity", "Write affinity rows of one scene as PGM heat maps");
  add_common(da, true);
  da->add_option("--data", o.data, "Dataset file or gen-data directory");
  da->add_option("--checkpoint", checkpoint, "Checkpoint (default: untrained weights)");
  da->add_option("--index", index, "Scene index");
  da->add_option("--row", rows, "Affinity row(s) to dump (default: the centre position)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 2;
  }

  try {
    if (*gen) return cmd_gen_data(o, previews);
    if (*tr) return cmd_train(o);
    if (*ev) return cmd_eval(o, checkpoint);
    if (*st) return cmd_stats(o);
    if (*ab) return cmd_ablate(o, plans, seeds);
    if (*da) return cmd_dump_affinity(o, checkpoint, index, rows);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
