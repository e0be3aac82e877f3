#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "pap/errors.hpp"
#include "pap/image_io.hpp"
#include "pap/random.hpp"
#include "pap/tensor.hpp"

namespace pap {

struct Intrinsics {
  double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;

  /// Focal length equal to the image width, principal point at the center.
  static Intrinsics centered(std::size_t height, std::size_t width) {
    const double w = static_cast<double>(width), h = static_cast<double>(height);
    return {w, w, w / 2.0, h / 2.0};
  }

  /// Direction (x, y, -1) of the ray through the center of pixel (row, col).
  /// The camera looks down -z with y up, so surfaces facing it have positive z normals.
  std::array<double, 3> ray(std::size_t row, std::size_t col) const {
    return {(static_cast<double>(col) + 0.5 - cx) / fx, -(static_cast<double>(row) + 0.5 - cy) / fy, -1.0};
  }
};

struct SceneSpec {
  std::size_t height = 64;
  std::size_t width = 64;
  std::size_t min_planes = 3;
  std::size_t max_planes = 8;
  int classes = 8;
  Intrinsics intrinsics = Intrinsics::centered(64, 64);
  double noise_sigma = 0.02;
  double max_tilt_deg = 55.0;
  /// Minimum angle between the normals of any two cells.
  double min_normal_separation_deg = 30.0;
  double min_depth = 1.1;
  double max_depth = 9.0;
  std::uint64_t seed = 0;

  static SceneSpec sized(std::size_t h, std::size_t w, std::uint64_t seed) {
    SceneSpec s;
    s.height = h;
    s.width = w;
    s.intrinsics = Intrinsics::centered(h, w);
    s.seed = seed;
    return s;
  }

  void validate() const {
    if (height == 0 || width == 0) throw ConfigError("scene size must be positive");
    if (min_planes < 1 || max_planes < min_planes || max_planes > 16) {
      throw ConfigError("scene plane count range must satisfy 1 <= min <= max <= 16");
    }
    if (classes < 2 || classes > 65535) throw ConfigError("scene class count must be in [2, 65535]");
    if (!(intrinsics.fx > 0.0) || !(intrinsics.fy > 0.0)) throw ConfigError("focal lengths must be positive");
    if (!(noise_sigma >= 0.0)) throw ConfigError("noise sigma must be non-negative");
    if (!(max_tilt_deg >= 0.0 && max_tilt_deg < 80.0)) throw ConfigError("max tilt must be in [0, 80) degrees");
    if (!(min_depth >= 0.5 && max_depth <= 10.0 && min_depth <= max_depth)) {
      throw ConfigError("depth band must lie within [0.5, 10] meters");
    }
  }
};

struct SceneSample {
  Tensor image;   // 3 x H x W
  Tensor depth;   // H x W, meters
  Tensor normal;  // 3 x H x W, unit length
  std::vector<int> labels;
  std::uint64_t id = 0;

  std::size_t height() const { return depth.dim(0); }
  std::size_t width() const { return depth.dim(1); }
  bool operator==(const SceneSample&) const = default;
};

/// A sample plus the cell index of every pixel.
struct RenderedScene {
  SceneSample sample;
  std::vector<int> cells;
  std::size_t cell_count = 0;
};

namespace detail {

struct Line {
  double a, b, c;  // points with a*u + b*v <= c fall on the first side
};

struct BspNode {
  Line line{};
  int first = -1, second = -1;  // children, -1 for a leaf
  int leaf = -1;
};

inline std::vector<int> bsp_cells(const std::vector<BspNode>& nodes, std::size_t h, std::size_t w) {
  std::vector<int> out(h * w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const double u = static_cast<double>(c) + 0.5, v = static_cast<double>(r) + 0.5;
      int n = 0;
      while (nodes[static_cast<std::size_t>(n)].leaf < 0) {
        const Line& l = nodes[static_cast<std::size_t>(n)].line;
        n = l.a * u + l.b * v <= l.c ? nodes[static_cast<std::size_t>(n)].first : nodes[static_cast<std::size_t>(n)].second;
      }
      out[r * w + c] = nodes[static_cast<std::size_t>(n)].leaf;
    }
  return out;
}

/// Random binary space partition into exactly `target` cells, each covering at
/// least `min_pixels` pixels.
inline std::vector<int> partition(std::size_t h, std::size_t w, std::size_t target, std::mt19937_64& rng) {
  const std::size_t min_pixels = std::max<std::size_t>(1, h * w / 40);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int attempt = 0; attempt < 200; ++attempt) {
    std::vector<BspNode> nodes{BspNode{{}, -1, -1, 0}};
    std::vector<int> cells(h * w, 0);
    std::size_t leaves = 1;
    int failures = 0;
    while (leaves < target && failures < 100) {
      std::vector<std::size_t> area(leaves, 0);
      for (int c : cells) ++area[static_cast<std::size_t>(c)];
      // Split a leaf chosen in proportion to its area.
      double pick = unit(rng) * static_cast<double>(h * w);
      std::size_t leaf = 0;
      while (leaf + 1 < leaves && pick >= static_cast<double>(area[leaf])) pick -= static_cast<double>(area[leaf++]);
      double su = 0, sv = 0;
      std::size_t count = 0;
      std::vector<std::pair<double, double>> members;
      for (std::size_t i = 0; i < h * w; ++i) {
        if (cells[i] != static_cast<int>(leaf)) continue;
        const double u = static_cast<double>(i % w) + 0.5, v = static_cast<double>(i / w) + 0.5;
        su += u;
        sv += v;
        ++count;
        members.emplace_back(u, v);
      }
      const auto& anchor = members[static_cast<std::size_t>(unit(rng) * static_cast<double>(members.size()))];
      const double pu = 0.5 * (su / static_cast<double>(count) + anchor.first);
      const double pv = 0.5 * (sv / static_cast<double>(count) + anchor.second);
      const double theta = unit(rng) * std::numbers::pi;
      const Line line{std::cos(theta), std::sin(theta), std::cos(theta) * pu + std::sin(theta) * pv};
      std::size_t first = 0;
      for (const auto& [u, v] : members) first += line.a * u + line.b * v <= line.c ? 1 : 0;
      if (first < min_pixels || count - first < min_pixels) {
        ++failures;
        continue;
      }
      auto it = std::find_if(nodes.begin(), nodes.end(), [&](const BspNode& n) { return n.leaf == static_cast<int>(leaf); });
      const int a = static_cast<int>(nodes.size());
      BspNode& split = *it;
      split.line = line;
      split.leaf = -1;
      split.first = a;
      split.second = a + 1;
      nodes.push_back(BspNode{{}, -1, -1, static_cast<int>(leaf)});
      nodes.push_back(BspNode{{}, -1, -1, static_cast<int>(leaves)});
      ++leaves;
      cells = bsp_cells(nodes, h, w);
    }
    if (leaves == target) return cells;
  }
  throw NumericError("scene partition failed to reach " + std::to_string(target) + " cells");
}

inline double angle_deg(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  const double d = std::clamp(a[0] * b[0] + a[1] * b[1] + a[2] * b[2], -1.0, 1.0);
  return std::acos(d) * 180.0 / std::numbers::pi;
}

inline std::array<double, 3> random_normal(double max_tilt_deg, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // Uniform over the spherical cap around +z.
  const double cmin = std::cos(max_tilt_deg * std::numbers::pi / 180.0);
  const double z = 1.0 - unit(rng) * (1.0 - cmin);
  const double phi = unit(rng) * 2.0 * std::numbers::pi;
  const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {s * std::cos(phi), s * std::sin(phi), z};
}

/// Class reflectance: a fixed color per class index.
inline std::array<double, 3> class_albedo(int label) {
  static constexpr std::array<std::array<double, 3>, 8> kBase{{{0.90, 0.30, 0.30},
                                                               {0.30, 0.85, 0.35},
                                                               {0.30, 0.40, 0.95},
                                                               {0.95, 0.85, 0.30},
                                                               {0.85, 0.35, 0.90},
                                                               {0.35, 0.90, 0.90},
                                                               {0.95, 0.95, 0.95},
                                                               {0.55, 0.55, 0.35}}};
  if (label < 8) return kBase[static_cast<std::size_t>(label)];
  const std::uint64_t h = mix64(static_cast<std::uint64_t>(label));
  return {0.3 + 0.65 * static_cast<double>(h & 0xff) / 255.0, 0.3 + 0.65 * static_cast<double>((h >> 8) & 0xff) / 255.0,
          0.3 + 0.65 * static_cast<double>((h >> 16) & 0xff) / 255.0};
}

/// Labels for `n` cells: all distinct when there are enough classes, otherwise
/// a random greedy coloring of the adjacency graph. Empty on failure.
inline std::vector<int> assign_labels(std::size_t n, int classes, const std::vector<std::vector<bool>>& adjacent,
                                      std::mt19937_64& rng) {
  std::vector<int> pool(static_cast<std::size_t>(classes));
  for (int k = 0; k < classes; ++k) pool[static_cast<std::size_t>(k)] = k;
  std::shuffle(pool.begin(), pool.end(), rng);
  if (static_cast<std::size_t>(classes) >= n) return {pool.begin(), pool.begin() + static_cast<long>(n)};
  std::vector<int> out(n, -1);
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng);
  std::uniform_int_distribution<int> any(0, classes - 1);
  for (std::size_t i : order) {
    std::vector<int> options;
    for (int k : pool) {
      bool clash = false;
      for (std::size_t j = 0; j < n; ++j) clash = clash || (adjacent[i][j] && out[j] == k);
      if (!clash) options.push_back(k);
    }
    if (options.empty()) return {};
    out[i] = options[static_cast<std::size_t>(std::uniform_int_distribution<std::size_t>(0, options.size() - 1)(rng))];
  }
  return out;
}

}  // namespace detail

/// Renders one scene: a convex partition of the image, one 3D plane per cell at
/// its own depth band, shaded with a per-class albedo under a random light.
/// Deterministic in (spec.seed, id).
inline RenderedScene render_scene(const SceneSpec& spec, std::uint64_t id) {
  spec.validate();
  const std::size_t h = spec.height, w = spec.width, n_px = h * w;
  std::mt19937_64 rng(derive_seed({spec.seed, id}));
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  for (int attempt = 0; attempt < 100; ++attempt) {
    const std::size_t n_cells =
        std::uniform_int_distribution<std::size_t>(spec.min_planes, spec.max_planes)(rng);
    const std::vector<int> cells = detail::partition(h, w, n_cells, rng);

    std::vector<std::vector<bool>> adjacent(n_cells, std::vector<bool>(n_cells, false));
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) {
        const auto a = static_cast<std::size_t>(cells[r * w + c]);
        if (c + 1 < w) {
          const auto b = static_cast<std::size_t>(cells[r * w + c + 1]);
          adjacent[a][b] = adjacent[b][a] = adjacent[a][b] || a != b;
        }
        if (r + 1 < h) {
          const auto b = static_cast<std::size_t>(cells[(r + 1) * w + c]);
          adjacent[a][b] = adjacent[b][a] = adjacent[a][b] || a != b;
        }
      }
    const std::vector<int> cell_label = detail::assign_labels(n_cells, spec.classes, adjacent, rng);
    if (cell_label.empty()) continue;

    // Depth bands spread log-uniformly over [min_depth, max_depth] in random cell order.
    std::vector<std::size_t> band(n_cells);
    for (std::size_t i = 0; i < n_cells; ++i) band[i] = i;
    std::shuffle(band.begin(), band.end(), rng);

    std::vector<double> row_sum(n_cells, 0.0), col_sum(n_cells, 0.0), area(n_cells, 0.0);
    for (std::size_t i = 0; i < n_px; ++i) {
      const auto k = static_cast<std::size_t>(cells[i]);
      row_sum[k] += static_cast<double>(i / w);
      col_sum[k] += static_cast<double>(i % w);
      area[k] += 1.0;
    }

    std::vector<std::array<double, 3>> normals;
    Tensor depth({h, w}, 0.0);
    bool ok = true;
    for (std::size_t k = 0; k < n_cells && ok; ++k) {
      const double t = n_cells == 1 ? 0.5 : static_cast<double>(band[k]) / static_cast<double>(n_cells - 1);
      const double jitter = n_cells == 1 ? 0.0 : (unit(rng) - 0.5) * 0.3 / static_cast<double>(n_cells - 1);
      const double z0 = spec.min_depth * std::pow(spec.max_depth / spec.min_depth, std::clamp(t + jitter, 0.0, 1.0));
      const auto ray0 = spec.intrinsics.ray(static_cast<std::size_t>(row_sum[k] / area[k]), static_cast<std::size_t>(col_sum[k] / area[k]));
      const std::array<double, 3> p0{ray0[0] * z0, ray0[1] * z0, -z0};
      bool placed = false;
      for (int tries = 0; tries < 500 && !placed; ++tries) {
        const auto nrm = spec.max_tilt_deg == 0.0 ? std::array<double, 3>{0.0, 0.0, 1.0}
                                                  : detail::random_normal(spec.max_tilt_deg, rng);
        bool separated = true;
        for (const auto& other : normals) separated = separated && detail::angle_deg(nrm, other) >= spec.min_normal_separation_deg;
        if (!separated && spec.max_tilt_deg > 0.0) continue;
        const double offset = nrm[0] * p0[0] + nrm[1] * p0[1] + nrm[2] * p0[2];
        bool in_range = true;
        for (std::size_t i = 0; i < n_px && in_range; ++i) {
          if (cells[i] != static_cast<int>(k)) continue;
          const auto r = spec.intrinsics.ray(i / w, i % w);
          const double denom = nrm[0] * r[0] + nrm[1] * r[1] + nrm[2] * r[2];
          // Rays close to parallel with the plane, or planes facing away, are rejected.
          if (denom > -0.15) {
            in_range = false;
            break;
          }
          const double z = offset / denom;
          in_range = z >= 0.5 && z <= 10.0;
          depth[i] = z;
        }
        if (in_range) {
          normals.push_back(nrm);
          placed = true;
        }
      }
      ok = placed;
    }
    if (!ok) continue;

    // Light roughly from the camera side.
    auto light = detail::random_normal(40.0, rng);
    std::normal_distribution<double> noise(0.0, 1.0);
    RenderedScene out;
    out.cells = cells;
    out.cell_count = n_cells;
    SceneSample& s = out.sample;
    s.id = id;
    s.depth = std::move(depth);
    s.normal = Tensor({3, h, w}, 0.0);
    s.image = Tensor({3, h, w}, 0.0);
    s.labels.resize(n_px);
    for (std::size_t i = 0; i < n_px; ++i) {
      const auto k = static_cast<std::size_t>(cells[i]);
      const auto& nrm = normals[k];
      s.labels[i] = cell_label[k];
      for (std::size_t c = 0; c < 3; ++c) s.normal[c * n_px + i] = nrm[c];
      const double lambert = std::max(0.0, nrm[0] * light[0] + nrm[1] * light[1] + nrm[2] * light[2]);
      // Distance falloff is the photometric depth cue; it dominates the Lambert term.
      const double shade = (0.5 + 0.5 * lambert) * std::exp(-0.2 * s.depth[i]);
      const auto albedo = detail::class_albedo(cell_label[k]);
      for (std::size_t c = 0; c < 3; ++c) {
        s.image[c * n_px + i] = albedo[c] * shade + spec.noise_sigma * noise(rng);
      }
    }
    return out;
  }
  throw NumericError("scene generation did not converge for id " + std::to_string(id));
}

inline SceneSample generate_scene(const SceneSpec& spec, std::uint64_t id) { return render_scene(spec, id).sample; }

inline std::vector<SceneSample> generate_dataset(const SceneSpec& spec, std::size_t count) {
  std::vector<SceneSample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(generate_scene(spec, i));
  return out;
}

/// Normals from a depth map: back-projects every pixel, fits a plane to each
/// 3x3 neighborhood (clipped at the border) by least squares, and orients it
/// toward the camera.
inline Tensor derive_normals_from_depth(const Tensor& depth, const Intrinsics& k) {
  if (depth.rank() != 2) throw DimensionError("derive_normals_from_depth: expected H x W depth, got " + shape_str(depth.shape()));
  const std::size_t h = depth.dim(0), w = depth.dim(1), n = h * w;
  std::vector<Eigen::Vector3d> pts(n);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const double z = depth[r * w + c];
      if (!(z > 0.0)) throw ContractError("derive_normals_from_depth: depth must be positive");
      const auto ray = k.ray(r, c);
      pts[r * w + c] = Eigen::Vector3d(ray[0] * z, ray[1] * z, -z);
    }
  Tensor out({3, h, w}, 0.0);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      Eigen::Vector3d mean = Eigen::Vector3d::Zero();
      int count = 0;
      for (std::size_t rr = r > 0 ? r - 1 : 0; rr <= std::min(r + 1, h - 1); ++rr)
        for (std::size_t cc = c > 0 ? c - 1 : 0; cc <= std::min(c + 1, w - 1); ++cc) {
          mean += pts[rr * w + cc];
          ++count;
        }
      mean /= count;
      Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
      for (std::size_t rr = r > 0 ? r - 1 : 0; rr <= std::min(r + 1, h - 1); ++rr)
        for (std::size_t cc = c > 0 ? c - 1 : 0; cc <= std::min(c + 1, w - 1); ++cc) {
          const Eigen::Vector3d d = pts[rr * w + cc] - mean;
          cov += d * d.transpose();
        }
      Eigen::Vector3d nrm(0.0, 0.0, 1.0);
      if (count >= 3) {
        Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> eig(cov);
        nrm = eig.eigenvectors().col(0).normalized();
      }
      if (nrm.dot(-pts[r * w + c]) < 0.0) nrm = -nrm;
      for (std::size_t ch = 0; ch < 3; ++ch) out[ch * n + r * w + c] = nrm[static_cast<Eigen::Index>(ch)];
    }
  return out;
}

// Dataset file: "PAPD", u32 version, u32 count, u32 H, W, K, then per sample
// u64 id, image f64s, depth f64s, normal f64s, labels u16. Little-endian.

inline constexpr std::uint32_t kDatasetVersion = 1;

struct Dataset {
  std::size_t height = 0, width = 0;
  int classes = 0;
  std::vector<SceneSample> samples;
};

namespace detail {

class ByteWriter {
 public:
  void raw(const char* s, std::size_t n) { bytes_.insert(bytes_.end(), s, s + n); }
  template <class T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    le(bits);
  }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}
  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  void need(std::size_t n, const char* what) const {
    if (remaining() < n) throw FormatError(std::string("truncated while reading ") + what, pos_);
  }
  template <class T>
  T le(const char* what) {
    need(sizeof(T), what);
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      v |= static_cast<T>(static_cast<T>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i));
    }
    pos_ += sizeof(T);
    return v;
  }
  double f64(const char* what) {
    const auto bits = le<std::uint64_t>(what);
    double v;
    std::memcpy(&v, &bits, sizeof v);
    return v;
  }
  const char* peek() const { return bytes_.data() + pos_; }
  void skip(std::size_t n) { pos_ += n; }

 private:
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
  detail::ByteWriter out;
  out.raw("PAPD", 4);
  out.le<std::uint32_t>(kDatasetVersion);
  out.le<std::uint32_t>(static_cast<std::uint32_t>(ds.samples.size()));
  out.le<std::uint32_t>(static_cast<std::uint32_t>(ds.height));
  out.le<std::uint32_t>(static_cast<std::uint32_t>(ds.width));
  out.le<std::uint32_t>(static_cast<std::uint32_t>(ds.classes));
  const std::size_t n = ds.height * ds.width;
  for (const auto& s : ds.samples) {
    if (s.height() != ds.height || s.width() != ds.width || s.image.size() != 3 * n || s.normal.size() != 3 * n ||
        s.labels.size() != n) {
      throw DimensionError("write_dataset: sample " + std::to_string(s.id) + " does not match the dataset size");
    }
    out.le<std::uint64_t>(s.id);
    for (double v : s.image.data()) out.f64(v);
    for (double v : s.depth.data()) out.f64(v);
    for (double v : s.normal.data()) out.f64(v);
    for (int l : s.labels) {
      if (l < 0 || l >= ds.classes) throw ContractError("write_dataset: label out of range");
      out.le<std::uint16_t>(static_cast<std::uint16_t>(l));
    }
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string() + " for writing");
  f.write(out.bytes().data(), static_cast<std::streamsize>(out.bytes().size()));
  if (!f) throw Error("write failed: " + path.string());
}

inline Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open " + path.string());
  detail::ByteReader in(std::vector<char>(std::istreambuf_iterator<char>(f), {}));
  in.need(4, "magic");
  if (std::memcmp(in.peek(), "PAPD", 4) != 0) throw FormatError("bad magic, not a PAPD dataset", 0);
  in.skip(4);
  const std::size_t version_at = in.offset();
  const auto version = in.le<std::uint32_t>("version");
  if (version != kDatasetVersion) {
    throw FormatError("unsupported dataset version " + std::to_string(version), version_at);
  }
  const auto count = in.le<std::uint32_t>("count");
  Dataset ds;
  ds.height = in.le<std::uint32_t>("height");
  ds.width = in.le<std::uint32_t>("width");
  ds.classes = static_cast<int>(in.le<std::uint32_t>("class count"));
  const std::size_t n = ds.height * ds.width;
  if (count > 0 && n == 0) throw FormatError("zero image size", 12);
  ds.samples.reserve(count);
  for (std::uint32_t k = 0; k < count; ++k) {
    SceneSample s;
    s.id = in.le<std::uint64_t>("sample id");
    in.need(8 * 7 * n + 2 * n, "sample payload");
    s.image = Tensor({3, ds.height, ds.width});
    for (double& v : s.image.data()) v = in.f64("image");
    s.depth = Tensor({ds.height, ds.width});
    for (double& v : s.depth.data()) v = in.f64("depth");
    s.normal = Tensor({3, ds.height, ds.width});
    for (double& v : s.normal.data()) v = in.f64("normal");
    s.labels.resize(n);
    for (int& l : s.labels) {
      const std::size_t at = in.offset();
      l = in.le<std::uint16_t>("labels");
      if (l >= ds.classes) throw FormatError("label " + std::to_string(l) + " out of range", at);
    }
    ds.samples.push_back(std::move(s));
  }
  if (in.remaining() != 0) throw FormatError("trailing bytes after last sample", in.offset());
  return ds;
}

/// Deterministic shuffled split; the train part gets round(frac * n) samples.
inline std::pair<std::vector<SceneSample>, std::vector<SceneSample>> split(const std::vector<SceneSample>& samples,
                                                                           double train_frac, std::uint64_t seed) {
  if (!(train_frac > 0.0 && train_frac < 1.0)) throw ConfigError("train fraction must be in (0, 1)");
  std::vector<std::size_t> order(samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::mt19937_64 rng(derive_seed({seed, 0x5b1175ULL}));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(samples.size())));
  std::pair<std::vector<SceneSample>, std::vector<SceneSample>> out;
  for (std::size_t i = 0; i < order.size(); ++i) (i < n_train ? out.first : out.second).push_back(samples[order[i]]);
  return out;
}

/// Writes <stem>_image.ppm, <stem>_depth.pgm, <stem>_normal.ppm and <stem>_labels.ppm.
inline std::vector<std::filesystem::path> export_sample(const SceneSample& s, const std::filesystem::path& dir,
                                                        const std::string& stem) {
  const std::size_t h = s.height(), w = s.width(), n = h * w;
  std::vector<std::uint8_t> rgb(3 * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < 3; ++c) rgb[3 * i + c] = to_byte(s.image[c * n + i]);
  std::vector<std::filesystem::path> paths{dir / (stem + "_image.ppm"), dir / (stem + "_depth.pgm"),
                                           dir / (stem + "_normal.ppm"), dir / (stem + "_labels.ppm")};
  write_ppm(paths[0], h, w, rgb);
  write_pgm(paths[1], h, w, heat_map(s.depth));
  write_ppm(paths[2], h, w, normal_rgb(s.normal));
  write_ppm(paths[3], h, w, label_rgb(s.labels));
  return paths;
}

}  // namespace pap
