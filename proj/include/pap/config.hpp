#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include "pap/diffusion.hpp"
#include "pap/errors.hpp"
#include "pap/objectives.hpp"
#include "pap/random.hpp"
#include "pap/scenes.hpp"
#include "pap/stats.hpp"
#include "pap/types.hpp"

namespace pap {

/// Learning-rate multiplier over the run: constant, or cosine decay to 0 at the last step.
enum class LrSchedule { Constant, Cosine };

/// Everything a run depends on. Defaults are desk-scale: 64x64 scenes, narrow
/// layers, a few epochs.
struct PapConfig {
  std::uint64_t seed = 0;

  // Model
  std::vector<TaskKind> tasks{TaskKind::Depth, TaskKind::Normal, TaskKind::Segmentation};
  AffinityScale scale = AffinityScale::Eighth;
  SimilarityKind similarity = SimilarityKind::DotProduct;
  bool propagation = true;
  DiffusionConfig diffusion{};
  bool reconstruction = true;
  std::size_t encoder_width = 8;
  std::size_t branch_width = 8;
  int classes = 8;

  // Objective
  LossWeights loss{};
  std::size_t pairs = 300;

  // Optimizer and schedule
  double lr_fresh = 0.03;
  double lr_pretrained = 0.03;
  double momentum = 0.9;
  double grad_clip = 5.0;  // global gradient L2 norm cap; 0 disables
  LrSchedule lr_schedule = LrSchedule::Cosine;
  std::size_t batch_size = 4;
  std::size_t epochs = 16;

  // Data
  std::size_t image_height = 64;
  std::size_t image_width = 64;
  std::size_t samples = 200;
  double train_fraction = 0.75;
  std::size_t min_planes = 3;
  std::size_t max_planes = 8;
  double noise_sigma = 0.02;

  // Pair-match statistics
  PairMatchConfig stats{};

  bool has_task(TaskKind t) const { return std::find(tasks.begin(), tasks.end(), t) != tasks.end(); }

  std::size_t output_channels(TaskKind t) const {
    switch (t) {
      case TaskKind::Depth: return 1;
      case TaskKind::Normal: return 3;
      case TaskKind::Segmentation: return static_cast<std::size_t>(classes);
    }
    return 0;
  }

  /// Propagation has an effect only with at least one iteration and beta > 0.
  bool diffusion_active() const { return propagation && diffusion.iterations > 0 && diffusion.beta > 0.0; }

  SceneSpec scene_spec() const {
    SceneSpec s = SceneSpec::sized(image_height, image_width, seed);
    s.classes = classes;
    s.min_planes = min_planes;
    s.max_planes = max_planes;
    s.noise_sigma = noise_sigma;
    return s;
  }

  inline void validate() const;
  inline std::string emit() const;
  /// Digest of the keys that determine parameter shapes.
  inline std::uint64_t architecture_digest() const;
  /// Digest of the full emitted configuration.
  std::uint64_t digest() const { return fnv1a(emit()); }

  bool operator==(const PapConfig&) const = default;
};

namespace detail {

inline std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

inline std::string join_tasks(const std::vector<TaskKind>& tasks) {
  std::string out;
  for (std::size_t i = 0; i < tasks.size(); ++i) out += (i ? "," : "") + std::string(task_name(tasks[i]));
  return out;
}

}  // namespace detail

inline void PapConfig::validate() const {
  if (tasks.empty()) throw ConfigError("tasks: at least one task must be active");
  for (std::size_t i = 0; i < tasks.size(); ++i)
    for (std::size_t j = i + 1; j < tasks.size(); ++j)
      if (tasks[i] == tasks[j]) throw ConfigError("tasks: duplicate task " + std::string(task_name(tasks[i])));
  try {
    diffusion.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("beta out of range: ") + e.what());
  }
  if (encoder_width == 0) throw ConfigError("encoder_width must be positive");
  if (branch_width < 4 || branch_width % 4 != 0) throw ConfigError("branch_width must be a positive multiple of 4");
  if (classes < 2) throw ConfigError("classes must be at least 2");
  loss.validate();
  if (pairs == 0) throw ConfigError("pairs must be positive");
  if (!(lr_fresh > 0.0) || !(lr_pretrained >= 0.0)) throw ConfigError("learning rates must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (!(grad_clip >= 0.0)) throw ConfigError("grad_clip must be >= 0");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (image_height % 16 != 0 || image_width % 16 != 0 || image_height == 0 || image_width == 0) {
    throw ConfigError("image size must be a positive multiple of 16, got " + std::to_string(image_height) + "x" +
                      std::to_string(image_width));
  }
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction must be in (0, 1)");
  scene_spec().validate();
  stats.validate();
}

inline std::string PapConfig::emit() const {
  std::ostringstream o;
  const auto bool_str = [](bool b) { return b ? "true" : "false"; };
  o << "seed = " << seed << '\n';
  o << "tasks = " << detail::join_tasks(tasks) << '\n';
  o << "scale = " << scale_name(scale) << '\n';
  o << "similarity = " << similarity_name(similarity) << '\n';
  o << "propagation = " << bool_str(propagation) << '\n';
  o << "iterations = " << diffusion.iterations << '\n';
  o << "beta = " << detail::format_double(diffusion.beta) << '\n';
  o << "subsampled = " << bool_str(diffusion.subsampled) << '\n';
  o << "pooling = " << (diffusion.pooling == Pooling::Average ? "average" : "max") << '\n';
  o << "reconstruction = " << bool_str(reconstruction) << '\n';
  o << "encoder_width = " << encoder_width << '\n';
  o << "branch_width = " << branch_width << '\n';
  o << "classes = " << classes << '\n';
  for (TaskKind t : kAllTasks) o << "lambda." << task_name(t) << " = " << detail::format_double(loss.lambda[task_index(t)]) << '\n';
  for (TaskKind t : kAllTasks) o << "xi." << task_name(t) << " = " << detail::format_double(loss.xi[task_index(t)]) << '\n';
  o << "pairs = " << pairs << '\n';
  o << "lr_fresh = " << detail::format_double(lr_fresh) << '\n';
  o << "lr_pretrained = " << detail::format_double(lr_pretrained) << '\n';
  o << "momentum = " << detail::format_double(momentum) << '\n';
  o << "grad_clip = " << detail::format_double(grad_clip) << '\n';
  o << "lr_schedule = " << (lr_schedule == LrSchedule::Cosine ? "cosine" : "constant") << '\n';
  o << "batch_size = " << batch_size << '\n';
  o << "epochs = " << epochs << '\n';
  o << "image_height = " << image_height << '\n';
  o << "image_width = " << image_width << '\n';
  o << "samples = " << samples << '\n';
  o << "train_fraction = " << detail::format_double(train_fraction) << '\n';
  o << "min_planes = " << min_planes << '\n';
  o << "max_planes = " << max_planes << '\n';
  o << "noise_sigma = " << detail::format_double(noise_sigma) << '\n';
  o << "stats.depth_rel = " << detail::format_double(stats.depth_rel) << '\n';
  o << "stats.normal_similar = " << detail::format_double(stats.normal_similar) << '\n';
  o << "stats.normal_dissimilar = " << detail::format_double(stats.normal_dissimilar) << '\n';
  o << "stats.pairs_per_image = " << stats.pairs_per_image << '\n';
  return o.str();
}

inline std::uint64_t PapConfig::architecture_digest() const {
  std::ostringstream o;
  o << detail::join_tasks(tasks) << '|' << scale_name(scale) << '|' << encoder_width << '|' << branch_width << '|'
    << classes << '|' << propagation << '|' << reconstruction;
  return fnv1a(o.str());
}

namespace detail {

class ConfigParser {
 public:
  ConfigParser(PapConfig& cfg, std::size_t line) : cfg_(cfg), line_(line) {}

  void apply(const std::string& key, const std::string& value) {
    using Setter = std::function<void(ConfigParser&, const std::string&)>;
    static const std::map<std::string, Setter> setters = {
        {"seed", [](ConfigParser& p, const std::string& v) { p.cfg_.seed = p.u64(v); }},
        {"tasks", [](ConfigParser& p, const std::string& v) { p.cfg_.tasks = p.task_list(v); }},
        {"scale", [](ConfigParser& p, const std::string& v) { p.cfg_.scale = p.wrap([&] { return parse_scale(v); }); }},
        {"similarity", [](ConfigParser& p, const std::string& v) { p.cfg_.similarity = p.similarity(v); }},
        {"propagation", [](ConfigParser& p, const std::string& v) { p.cfg_.propagation = p.boolean(v); }},
        {"iterations", [](ConfigParser& p, const std::string& v) { p.cfg_.diffusion.iterations = p.size(v); }},
        {"beta", [](ConfigParser& p, const std::string& v) { p.cfg_.diffusion.beta = p.real(v); }},
        {"subsampled", [](ConfigParser& p, const std::string& v) { p.cfg_.diffusion.subsampled = p.boolean(v); }},
        {"pooling", [](ConfigParser& p, const std::string& v) { p.cfg_.diffusion.pooling = p.pooling(v); }},
        {"reconstruction", [](ConfigParser& p, const std::string& v) { p.cfg_.reconstruction = p.boolean(v); }},
        {"encoder_width", [](ConfigParser& p, const std::string& v) { p.cfg_.encoder_width = p.size(v); }},
        {"branch_width", [](ConfigParser& p, const std::string& v) { p.cfg_.branch_width = p.size(v); }},
        {"classes", [](ConfigParser& p, const std::string& v) { p.cfg_.classes = static_cast<int>(p.size(v)); }},
        {"lambda.depth", [](ConfigParser& p, const std::string& v) { p.cfg_.loss.lambda[0] = p.real(v); }},
        {"lambda.normal", [](ConfigParser& p, const std::string& v) { p.cfg_.loss.lambda[1] = p.real(v); }},
        {"lambda.seg", [](ConfigParser& p, const std::string& v) { p.cfg_.loss.lambda[2] = p.real(v); }},
        {"xi.depth", [](ConfigParser& p, const std::string& v) { p.cfg_.loss.xi[0] = p.real(v); }},
        {"xi.normal", [](ConfigParser& p, const std::string& v) { p.cfg_.loss.xi[1] = p.real(v); }},
        {"xi.seg", [](ConfigParser& p, const std::string& v) { p.cfg_.loss.xi[2] = p.real(v); }},
        {"pairs", [](ConfigParser& p, const std::string& v) { p.cfg_.pairs = p.size(v); }},
        {"lr_fresh", [](ConfigParser& p, const std::string& v) { p.cfg_.lr_fresh = p.real(v); }},
        {"lr_pretrained", [](ConfigParser& p, const std::string& v) { p.cfg_.lr_pretrained = p.real(v); }},
        {"momentum", [](ConfigParser& p, const std::string& v) { p.cfg_.momentum = p.real(v); }},
        {"grad_clip", [](ConfigParser& p, const std::string& v) { p.cfg_.grad_clip = p.real(v); }},
        {"lr_schedule", [](ConfigParser& p, const std::string& v) { p.cfg_.lr_schedule = p.schedule(v); }},
        {"batch_size", [](ConfigParser& p, const std::string& v) { p.cfg_.batch_size = p.size(v); }},
        {"epochs", [](ConfigParser& p, const std::string& v) { p.cfg_.epochs = p.size(v); }},
        {"image_height", [](ConfigParser& p, const std::string& v) { p.cfg_.image_height = p.size(v); }},
        {"image_width", [](ConfigParser& p, const std::string& v) { p.cfg_.image_width = p.size(v); }},
        {"samples", [](ConfigParser& p, const std::string& v) { p.cfg_.samples = p.size(v); }},
        {"train_fraction", [](ConfigParser& p, const std::string& v) { p.cfg_.train_fraction = p.real(v); }},
        {"min_planes", [](ConfigParser& p, const std::string& v) { p.cfg_.min_planes = p.size(v); }},
        {"max_planes", [](ConfigParser& p, const std::string& v) { p.cfg_.max_planes = p.size(v); }},
        {"noise_sigma", [](ConfigParser& p, const std::string& v) { p.cfg_.noise_sigma = p.real(v); }},
        {"stats.depth_rel", [](ConfigParser& p, const std::string& v) { p.cfg_.stats.depth_rel = p.real(v); }},
        {"stats.normal_similar", [](ConfigParser& p, const std::string& v) { p.cfg_.stats.normal_similar = p.real(v); }},
        {"stats.normal_dissimilar", [](ConfigParser& p, const std::string& v) { p.cfg_.stats.normal_dissimilar = p.real(v); }},
        {"stats.pairs_per_image", [](ConfigParser& p, const std::string& v) { p.cfg_.stats.pairs_per_image = p.size(v); }},
    };
    auto it = setters.find(key);
    if (it == setters.end()) fail("unknown key '" + key + "'");
    it->second(*this, value);
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const {
    throw ConfigError("line " + std::to_string(line_) + ": " + msg);
  }

  template <class F>
  std::invoke_result_t<F> wrap(F f) const {
    try {
      return f();
    } catch (const Error& e) {
      fail(e.what());
    }
  }

  std::uint64_t u64(const std::string& v) const {
    std::uint64_t out = 0;
    auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || end != v.data() + v.size()) fail("expected a non-negative integer, got '" + v + "'");
    return out;
  }

  std::size_t size(const std::string& v) const { return static_cast<std::size_t>(u64(v)); }

  /// Decimal or a fraction such as 1/3.
  double real(const std::string& v) const {
    const auto slash = v.find('/');
    if (slash != std::string::npos) {
      const double num = real(trim(v.substr(0, slash))), den = real(trim(v.substr(slash + 1)));
      if (den == 0.0) fail("zero denominator in '" + v + "'");
      return num / den;
    }
    double out = 0.0;
    auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || end != v.data() + v.size() || !std::isfinite(out)) fail("expected a number, got '" + v + "'");
    return out;
  }

  bool boolean(const std::string& v) const {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    fail("expected true or false, got '" + v + "'");
  }

  std::vector<TaskKind> task_list(const std::string& v) const {
    std::vector<TaskKind> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(wrap([&] { return parse_task(trim(item)); }));
    return out;
  }

  SimilarityKind similarity(const std::string& v) const {
    if (v == "dot") return SimilarityKind::DotProduct;
    if (v == "l1") return SimilarityKind::L1Distance;
    fail("similarity must be dot or l1, got '" + v + "'");
  }

  LrSchedule schedule(const std::string& v) const {
    if (v == "constant") return LrSchedule::Constant;
    if (v == "cosine") return LrSchedule::Cosine;
    fail("lr_schedule must be constant or cosine, got '" + v + "'");
  }

  Pooling pooling(const std::string& v) const {
    if (v == "average") return Pooling::Average;
    if (v == "max") return Pooling::Max;
    fail("pooling must be average or max, got '" + v + "'");
  }

  PapConfig& cfg_;
  std::size_t line_;
};

}  // namespace detail

/// Flat `key = value` text; `#` starts a comment. Unknown keys are errors and
/// `seed` is mandatory. Values not given keep their defaults.
inline PapConfig parse_config_text(const std::string& text) {
  PapConfig cfg;
  std::istringstream in(text);
  std::string raw;
  std::size_t line = 0;
  bool seen_seed = false;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string body = detail::trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line) + ": expected 'key = value'");
    const std::string key = detail::trim(body.substr(0, eq));
    const std::string value = detail::trim(body.substr(eq + 1));
    if (key.empty() || value.empty()) throw ConfigError("line " + std::to_string(line) + ": empty key or value");
    if (auto prev = seen.find(key); prev != seen.end()) {
      throw ConfigError("line " + std::to_string(line) + ": '" + key + "' already set on line " + std::to_string(prev->second));
    }
    seen[key] = line;
    detail::ConfigParser(cfg, line).apply(key, value);
    seen_seed = seen_seed || key == "seed";
  }
  if (!seen_seed) throw ConfigError("missing mandatory key 'seed'");
  cfg.validate();
  return cfg;
}

inline PapConfig parse_config(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return parse_config_text(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

}  // namespace pap
