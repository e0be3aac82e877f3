#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <string_view>

#include "pap/errors.hpp"

namespace pap {

enum class TaskKind { Depth = 0, Normal = 1, Segmentation = 2 };

inline constexpr std::array<TaskKind, 3> kAllTasks{TaskKind::Depth, TaskKind::Normal, TaskKind::Segmentation};

inline std::string_view task_name(TaskKind t) {
  switch (t) {
    case TaskKind::Depth: return "depth";
    case TaskKind::Normal: return "normal";
    case TaskKind::Segmentation: return "seg";
  }
  return "?";
}

inline TaskKind parse_task(std::string_view s) {
  if (s == "depth") return TaskKind::Depth;
  if (s == "normal") return TaskKind::Normal;
  if (s == "seg" || s == "segmentation") return TaskKind::Segmentation;
  throw ConfigError("unknown task '" + std::string(s) + "'");
}

inline std::size_t task_index(TaskKind t) { return static_cast<std::size_t>(t); }

enum class SimilarityKind { DotProduct, L1Distance };

inline std::string_view similarity_name(SimilarityKind s) {
  return s == SimilarityKind::DotProduct ? "dot" : "l1";
}

/// Resolution at which affinities are learned, as the input-size divisor.
enum class AffinityScale { Sixteenth = 16, Eighth = 8, Quarter = 4 };

inline std::size_t scale_divisor(AffinityScale s) { return static_cast<std::size_t>(s); }

/// Reconstruction stages needed to get from the affinity scale back to half resolution.
inline std::size_t upsampling_stages(AffinityScale s) {
  switch (s) {
    case AffinityScale::Sixteenth: return 3;
    case AffinityScale::Eighth: return 2;
    case AffinityScale::Quarter: return 1;
  }
  return 0;
}

inline std::string scale_name(AffinityScale s) { return "1/" + std::to_string(scale_divisor(s)); }

inline AffinityScale parse_scale(std::string_view s) {
  if (s == "1/16" || s == "16") return AffinityScale::Sixteenth;
  if (s == "1/8" || s == "8") return AffinityScale::Eighth;
  if (s == "1/4" || s == "4") return AffinityScale::Quarter;
  throw ConfigError("affinity scale must be 1/16, 1/8 or 1/4, got '" + std::string(s) + "'");
}

}  // namespace pap
