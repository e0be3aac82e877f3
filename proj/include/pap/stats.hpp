#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "pap/errors.hpp"
#include "pap/metrics.hpp"
#include "pap/objectives.hpp"
#include "pap/scenes.hpp"
#include "pap/types.hpp"

namespace pap {

struct PairMatchConfig {
  double depth_rel = 0.20;
  double normal_similar = 0.26;
  double normal_dissimilar = 0.40;
  std::size_t pairs_per_image = 1000;
  std::uint64_t seed = 0;

  void validate() const {
    auto in_unit = [](double v) { return v > 0.0 && v < 1.0; };
    if (!in_unit(depth_rel)) throw ConfigError("stats depth REL threshold must be in (0, 1)");
    if (!in_unit(normal_similar) || !in_unit(normal_dissimilar)) {
      throw ConfigError("stats normal RMSE thresholds must be in (0, 1)");
    }
    if (normal_dissimilar < normal_similar) throw ConfigError("dissimilar normal threshold must be >= the similar one");
    if (pairs_per_image == 0) throw ConfigError("stats pair count must be positive");
  }

  bool operator==(const PairMatchConfig&) const = default;
};

enum class PairRelation { Similar, Neither, Dissimilar };

/// Per-task relation of one pixel pair. Symmetric in (i, j).
inline std::array<PairRelation, 3> classify_pair(const SceneSample& s, std::size_t i, std::size_t j,
                                                 const PairMatchConfig& cfg) {
  std::array<PairRelation, 3> out{};
  const double zi = s.depth[i], zj = s.depth[j];
  const double rel = std::abs(zi - zj) / ((zi + zj) / 2.0);
  out[0] = rel < cfg.depth_rel ? PairRelation::Similar : PairRelation::Dissimilar;

  const std::size_t n = s.labels.size();
  double sq = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    const double d = s.normal[c * n + i] - s.normal[c * n + j];
    sq += d * d;
  }
  const double rms = std::sqrt(sq / 3.0);
  out[1] = rms < cfg.normal_similar ? PairRelation::Similar
           : rms > cfg.normal_dissimilar ? PairRelation::Dissimilar
                                         : PairRelation::Neither;
  out[2] = s.labels[i] == s.labels[j] ? PairRelation::Similar : PairRelation::Dissimilar;
  return out;
}

/// Counts of similar / dissimilar pairs per task and jointly per ordered task pair.
class MatchTable {
 public:
  void add(const std::array<PairRelation, 3>& rel) {
    ++pairs_;
    for (std::size_t a = 0; a < 3; ++a) {
      for (std::size_t b = 0; b < 3; ++b) {
        if (rel[a] == PairRelation::Similar && rel[b] == PairRelation::Similar) ++similar_[a][b];
        if (rel[a] == PairRelation::Dissimilar && rel[b] == PairRelation::Dissimilar) ++dissimilar_[a][b];
      }
    }
  }

  std::uint64_t pairs() const { return pairs_; }
  std::uint64_t similar_count(TaskKind a) const { return similar_[task_index(a)][task_index(a)]; }
  std::uint64_t dissimilar_count(TaskKind a) const { return dissimilar_[task_index(a)][task_index(a)]; }

  /// |similar in ref and other| / |similar in ref|; nullopt when ref has no similar pairs.
  std::optional<double> similar_ratio(TaskKind ref, TaskKind other) const {
    return ratio(similar_, task_index(ref), task_index(other));
  }

  std::optional<double> dissimilar_ratio(TaskKind ref, TaskKind other) const {
    return ratio(dissimilar_, task_index(ref), task_index(other));
  }

  /// Columns regime,reference,other,ratio,matched,reference_count. Undefined ratios print as "undefined".
  void write_csv(std::ostream& os) const {
    os << "regime,reference,other,ratio,matched,reference_count\n";
    for (int regime = 0; regime < 2; ++regime) {
      const auto& counts = regime == 0 ? similar_ : dissimilar_;
      for (TaskKind a : kAllTasks)
        for (TaskKind b : kAllTasks) {
          const auto r = ratio(counts, task_index(a), task_index(b));
          os << (regime == 0 ? "similar" : "dissimilar") << ',' << task_name(a) << ',' << task_name(b) << ','
             << (r ? MetricsReport::format_value(*r) : std::string("undefined")) << ','
             << counts[task_index(a)][task_index(b)] << ',' << counts[task_index(a)][task_index(a)] << '\n';
        }
    }
  }

 private:
  using Counts = std::array<std::array<std::uint64_t, 3>, 3>;

  static std::optional<double> ratio(const Counts& c, std::size_t a, std::size_t b) {
    if (c[a][a] == 0) return std::nullopt;
    return static_cast<double>(c[a][b]) / static_cast<double>(c[a][a]);
  }

  std::uint64_t pairs_ = 0;
  Counts similar_{};
  Counts dissimilar_{};
};

/// Cross-task pair statistics: the same sampled pixel pairs are classified in every
/// task and cross-task agreement is accumulated over all images.
inline MatchTable pair_match_stats(const std::vector<SceneSample>& samples, const PairMatchConfig& cfg) {
  cfg.validate();
  MatchTable table;
  for (const auto& s : samples) {
    const std::size_t n = s.labels.size();
    if (s.depth.size() != n || s.normal.size() != 3 * n) {
      throw DimensionError("pair_match_stats: sample " + std::to_string(s.id) + " is missing a task map");
    }
    const std::size_t total = n * (n - 1) / 2;
    const PairSample pairs = sample_pairs(n, std::min(cfg.pairs_per_image, total), derive_seed({cfg.seed, s.id, 0x57a7ULL}));
    for (const auto& [i, j] : pairs.pairs) table.add(classify_pair(s, i, j, cfg));
  }
  return table;
}

}  // namespace pap
