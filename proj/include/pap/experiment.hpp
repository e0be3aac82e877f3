#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pap/config.hpp"
#include "pap/image_io.hpp"
#include "pap/papnet.hpp"
#include "pap/stats.hpp"

namespace pap {

enum class PlanKind { JointVsSingle, IterationSweep, ScaleSweep, SimilarityFnSweep, ModuleAblation };

inline constexpr PlanKind kAllPlanKinds[] = {PlanKind::JointVsSingle, PlanKind::IterationSweep, PlanKind::ScaleSweep,
                                             PlanKind::SimilarityFnSweep, PlanKind::ModuleAblation};

inline std::string_view plan_kind_name(PlanKind k) {
  switch (k) {
    case PlanKind::JointVsSingle: return "joint-vs-single";
    case PlanKind::IterationSweep: return "iteration-sweep";
    case PlanKind::ScaleSweep: return "scale-sweep";
    case PlanKind::SimilarityFnSweep: return "similarity-sweep";
    case PlanKind::ModuleAblation: return "module-ablation";
  }
  return "?";
}

inline PlanKind parse_plan_kind(std::string_view s) {
  for (PlanKind k : kAllPlanKinds)
    if (plan_kind_name(k) == s) return k;
  throw ConfigError("unknown plan '" + std::string(s) +
                    "' (expected joint-vs-single, iteration-sweep, scale-sweep, similarity-sweep or module-ablation)");
}

struct ExperimentPlan {
  PlanKind kind = PlanKind::ModuleAblation;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  PapConfig base{};

  /// Directional claims need at least three seeds.
  void validate() const {
    if (seeds.size() < 3) throw ConfigError("an experiment plan needs at least 3 seeds, got " + std::to_string(seeds.size()));
    for (std::size_t i = 0; i < seeds.size(); ++i)
      for (std::size_t j = i + 1; j < seeds.size(); ++j)
        if (seeds[i] == seeds[j]) throw ConfigError("duplicate seed " + std::to_string(seeds[i]) + " in plan");
    base.validate();
  }
};

struct Variant {
  std::string label;
  PapConfig config;
};

/// The configurations compared by a plan, all derived from the base config.
inline std::vector<Variant> plan_variants(const ExperimentPlan& plan) {
  std::vector<Variant> out;
  const PapConfig& b = plan.base;
  switch (plan.kind) {
    case PlanKind::JointVsSingle: {
      PapConfig joint = b;
      joint.tasks = {kAllTasks.begin(), kAllTasks.end()};
      out.push_back({"three tasks jointly", joint});
      for (TaskKind t : kAllTasks) {
        PapConfig c = b;
        c.tasks = {t};
        out.push_back({std::string(task_name(t)) + " only", c});
      }
      break;
    }
    case PlanKind::IterationSweep:
      for (std::size_t it : {0, 1, 2, 4, 8}) {
        PapConfig c = b;
        c.diffusion.iterations = it;
        out.push_back({"iterations=" + std::to_string(it), c});
      }
      break;
    case PlanKind::ScaleSweep:
      for (AffinityScale s : {AffinityScale::Sixteenth, AffinityScale::Eighth, AffinityScale::Quarter}) {
        PapConfig c = b;
        c.scale = s;
        out.push_back({"affinity at " + std::string(scale_name(s)), c});
      }
      break;
    case PlanKind::SimilarityFnSweep:
      for (SimilarityKind s : {SimilarityKind::DotProduct, SimilarityKind::L1Distance}) {
        PapConfig c = b;
        c.similarity = s;
        out.push_back({s == SimilarityKind::DotProduct ? "inner product" : "negative L1 distance", c});
      }
      break;
    case PlanKind::ModuleAblation: {
      PapConfig c = b;
      c.propagation = false;
      c.reconstruction = false;
      c.loss.xi = {0.0, 0.0, 0.0};
      out.push_back({"initial prediction", c});
      c.propagation = true;
      out.push_back({"+ propagation", c});
      c.reconstruction = true;
      out.push_back({"+ reconstruction", c});
      c.loss.xi = b.loss.xi;
      if (c.loss.xi == std::array<double, 3>{0.0, 0.0, 0.0}) c.loss.xi = LossWeights{}.xi;
      out.push_back({"+ pair-wise loss", c});
      break;
    }
  }
  return out;
}

struct RunRecord {
  std::string run_id;
  std::string variant;
  std::uint64_t seed = 0;
  std::uint64_t config_digest = 0;
  MetricsReport metrics;
  std::vector<double> losses;
  double train_seconds = 0.0;
  double median_step_seconds = 0.0;
  std::string error;  // empty on success

  // Preview of the first validation sample, for image dumps.
  Tensor preview_depth;
  Tensor preview_affinity;  // combined matrix of the first task; empty without propagation
  TaskKind affinity_task = TaskKind::Depth;
  AffinityScale affinity_scale = AffinityScale::Eighth;
  std::size_t affinity_height = 0, affinity_width = 0;  // grid of the matrix columns

  bool ok() const { return error.empty(); }
};

inline double median(std::vector<double> v) {
  if (v.empty()) throw UndefinedError("median of an empty sequence");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : (v[m - 1] + v[m]) / 2.0;
}

/// Trains on the training split of `samples` (or of a freshly generated set)
/// and evaluates on the rest. Errors are caught and stored in the record.
inline RunRecord run_configuration(const PapConfig& cfg, std::string run_id, std::string variant,
                                   const std::vector<SceneSample>* samples = nullptr) {
  RunRecord rec;
  rec.run_id = std::move(run_id);
  rec.variant = std::move(variant);
  rec.seed = cfg.seed;
  rec.config_digest = cfg.digest();
  try {
    const std::vector<SceneSample> generated = samples ? std::vector<SceneSample>{} : generate_dataset(cfg.scene_spec(), cfg.samples);
    const std::vector<SceneSample>& data = samples ? *samples : generated;
    const auto [train_set, val_set] = split(data, cfg.train_fraction, cfg.seed);
    if (train_set.empty() || val_set.empty()) throw ConfigError("train/validation split leaves an empty side");
    PapNet model(cfg);
    const TrainResult tr = train(model, prepare_samples(train_set));
    rec.losses = tr.losses;
    rec.train_seconds = tr.seconds;
    rec.median_step_seconds = median(tr.step_seconds);
    rec.metrics = evaluate(model, val_set);

    const Prediction p = predict(model, val_set[0].image);
    rec.preview_depth = p.depth;
    if (cfg.diffusion_active()) {
      Tape t;
      const ForwardResult fr = model.forward(t, val_set[0].image, false);
      const TaskOutputs& o = fr.tasks.front();
      rec.preview_affinity = o.combined.values.value();
      rec.affinity_task = o.task;
      rec.affinity_scale = cfg.scale;
      const std::size_t pool = cfg.diffusion.subsampled ? 2 : 1;
      rec.affinity_height = o.branch.dim(1) / pool;
      rec.affinity_width = o.branch.dim(2) / pool;
    }
  } catch (const std::exception& e) {
    rec.error = e.what();
  }
  return rec;
}

struct ExperimentResult {
  PlanKind kind = PlanKind::ModuleAblation;
  std::vector<std::string> variants;
  std::vector<RunRecord> runs;
  std::optional<MatchTable> ratios;

  bool complete() const {
    return std::all_of(runs.begin(), runs.end(), [](const RunRecord& r) { return r.ok(); });
  }

  std::vector<const RunRecord*> runs_of(const std::string& variant) const {
    std::vector<const RunRecord*> out;
    for (const auto& r : runs)
      if (r.variant == variant && r.ok()) out.push_back(&r);
    return out;
  }

  /// Mean of a metric over the successful seeds of a variant.
  std::optional<double> mean(const std::string& variant, TaskKind task, std::string_view metric) const {
    double sum = 0.0;
    std::size_t n = 0;
    for (const RunRecord* r : runs_of(variant)) {
      if (!r->metrics.has(task, metric)) continue;
      sum += r->metrics.get(task, metric);
      ++n;
    }
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
  }
};

/// Every variant under every seed, in (variant, seed) order. A failing run is
/// recorded and the remaining runs still execute.
inline ExperimentResult run_experiment(const ExperimentPlan& plan, const std::vector<SceneSample>* samples = nullptr,
                                       const std::function<void(const RunRecord&)>& on_run = {}) {
  plan.validate();
  ExperimentResult out;
  out.kind = plan.kind;
  const auto variants = plan_variants(plan);
  for (std::size_t v = 0; v < variants.size(); ++v) {
    out.variants.push_back(variants[v].label);
    for (std::uint64_t seed : plan.seeds) {
      PapConfig cfg = variants[v].config;
      cfg.seed = seed;
      const std::string id = std::string(plan_kind_name(plan.kind)) + "-v" + std::to_string(v) + "-s" + std::to_string(seed);
      out.runs.push_back(run_configuration(cfg, id, variants[v].label, samples));
      if (on_run) on_run(out.runs.back());
    }
  }
  PapConfig first = plan.base;
  first.seed = plan.seeds.front();
  PairMatchConfig pm = first.stats;
  pm.seed = first.seed;
  out.ratios = pair_match_stats(samples ? *samples : generate_dataset(first.scene_spec(), first.samples), pm);
  return out;
}

/// Fastest of `reps` training steps on a fixed batch, after one warm-up step.
inline double measure_step_seconds(const PapConfig& cfg, const std::vector<PreparedSample>& batch, std::size_t reps) {
  if (batch.empty() || reps == 0) throw ContractError("measure_step_seconds: empty batch or zero repetitions");
  PapNet model(cfg);
  std::vector<const PreparedSample*> ptrs;
  for (const auto& s : batch) ptrs.push_back(&s);
  train_step(model, ptrs);
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < reps; ++r) best = std::min(best, train_step(model, ptrs).seconds);
  return best;
}

inline std::string hex_digest(std::uint64_t d) {
  std::ostringstream o;
  o << std::hex << std::setw(16) << std::setfill('0') << d;
  return o.str();
}

inline void write_metrics_csv(std::ostream& os, const std::vector<ExperimentResult>& results) {
  os << "run_id,seed,config_digest,task,metric,value\n";
  for (const auto& res : results)
    for (const auto& r : res.runs) {
      if (!r.ok()) continue;
      for (const auto& row : r.metrics.rows()) {
        os << r.run_id << ',' << r.seed << ',' << hex_digest(r.config_digest) << ',' << task_name(row.task) << ','
           << row.metric << ',' << MetricsReport::format_value(row.value) << '\n';
      }
    }
}

inline void write_summary_md(std::ostream& os, const std::vector<ExperimentResult>& results) {
  os << "# Experiment summary\n";
  const std::pair<TaskKind, const char*> columns[] = {{TaskKind::Depth, "rmse"},      {TaskKind::Depth, "rel"},
                                                      {TaskKind::Depth, "delta1"},    {TaskKind::Normal, "mean"},
                                                      {TaskKind::Normal, "within_30"}, {TaskKind::Segmentation, "iou"},
                                                      {TaskKind::Segmentation, "pixel_acc"}};
  for (const auto& res : results) {
    os << "\n## " << plan_kind_name(res.kind) << "\n\n";
    os << "Means over seeds. Depth in meters, normal angles in degrees.\n\n";
    os << "| variant | seeds |";
    for (const auto& [task, metric] : columns) os << ' ' << task_name(task) << ' ' << metric << " |";
    os << " train s | step ms |\n|---|---|";
    for (std::size_t i = 0; i < std::size(columns); ++i) os << "---|";
    os << "---|---|\n";
    for (const auto& v : res.variants) {
      const auto runs = res.runs_of(v);
      os << "| " << v << " | " << runs.size() << " |";
      for (const auto& [task, metric] : columns) {
        const auto m = res.mean(v, task, metric);
        os << ' ' << (m ? MetricsReport::format_value(*m) : std::string("-")) << " |";
      }
      double secs = 0.0, step = 0.0;
      for (const RunRecord* r : runs) {
        secs += r->train_seconds;
        step += r->median_step_seconds;
      }
      const double n = runs.empty() ? 1.0 : static_cast<double>(runs.size());
      os << ' ' << MetricsReport::format_value(secs / n) << " | " << MetricsReport::format_value(1000.0 * step / n) << " |\n";
    }
    for (const auto& r : res.runs)
      if (!r.ok()) os << "\nRun " << r.run_id << " failed: " << r.error << "\n";
  }
}

/// Writes metrics.csv, ratios.csv, summary.md and PGM previews into `out_dir`.
/// An existing directory is refused unless `force` is set, before anything is written.
inline void export_report(const std::vector<ExperimentResult>& results, const std::filesystem::path& out_dir, bool force) {
  namespace fs = std::filesystem;
  if (fs::exists(out_dir) && !force) {
    throw ConfigError("output directory " + out_dir.string() + " exists; pass --force to overwrite");
  }
  fs::create_directories(out_dir / "dumps");
  auto open = [&](const char* name) {
    std::ofstream f(out_dir / name);
    if (!f) throw Error("cannot write " + (out_dir / name).string());
    return f;
  };
  {
    auto f = open("metrics.csv");
    write_metrics_csv(f, results);
  }
  {
    auto f = open("ratios.csv");
    for (const auto& res : results)
      if (res.ratios) {
        res.ratios->write_csv(f);
        break;
      }
  }
  {
    auto f = open("summary.md");
    write_summary_md(f, results);
  }
  for (const auto& res : results)
    for (const auto& r : res.runs) {
      if (!r.ok() || r.preview_depth.empty()) continue;
      const std::size_t h = r.preview_depth.dim(0), w = r.preview_depth.dim(1);
      write_pgm(out_dir / "dumps" / (r.run_id + "_depth.pgm"), h, w, heat_map(r.preview_depth));
      if (!r.preview_affinity.empty()) {
        const fs::path dir = out_dir / "dumps" / r.run_id;
        fs::create_directories(dir);
        Tape t;
        const AffinityMatrix m(t.constant(r.preview_affinity), r.affinity_task, r.affinity_scale);
        dump_affinity(m, m.rows() / 2, r.affinity_height, r.affinity_width, dir);
      }
    }
}

}  // namespace pap
