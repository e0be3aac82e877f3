#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pap/affinity.hpp"
#include "pap/config.hpp"
#include "pap/diffusion.hpp"
#include "pap/metrics.hpp"
#include "pap/objectives.hpp"
#include "pap/ops.hpp"
#include "pap/random.hpp"
#include "pap/scenes.hpp"

namespace pap {

/// Kernel [Cout x Cin x k x k] and bias [Cout]; k = 3 is padded to keep the size.
struct ConvWeights {
  Var w;
  Var b;
};

inline Var conv_layer(Var x, const ConvWeights& c) {
  return add_bias(conv2d(x, c.w, 1, c.w.dim(2) == 3 ? 1 : 0), c.b);
}

/// x + conv2(relu(conv1(x))).
inline Var residual_block(Var x, const ConvWeights& conv1, const ConvWeights& conv2) {
  return add(x, conv_layer(relu(conv_layer(x, conv1)), conv2));
}

struct UpProjectionWeights {
  ConvWeights main1, main2, residual;
};

/// Bilinear x2, then relu(main + residual) with main = conv(relu(conv(u))) and residual = conv(u).
inline Var up_projection(Var x, const UpProjectionWeights& p) {
  Var u = bilinear_resize(x, Resize::Up2);
  Var main = conv_layer(relu(conv_layer(u, p.main1)), p.main2);
  return relu(add(main, conv_layer(u, p.residual)));
}

struct EncoderFeatures {
  Var quarter;    // C   x H/4  x W/4
  Var eighth;     // 2C  x H/8  x W/8
  Var sixteenth;  // 4C  x H/16 x W/16
};

struct TaskOutputs {
  TaskKind task = TaskKind::Depth;
  Var branch;            // branch_width x h x w at the affinity scale
  Var initial;           // initial prediction at the affinity scale
  Var diffused_branch;
  Var diffused_initial;
  Var final;             // prediction at H/2 x W/2
  AffinityMatrix affinity;  // own matrix, when propagation ran
  AffinityMatrix combined;  // after mixing across tasks
};

struct ForwardResult {
  std::vector<TaskOutputs> tasks;

  const TaskOutputs& of(TaskKind t) const {
    for (const auto& o : tasks)
      if (o.task == t) return o;
    throw ContractError("task " + std::string(task_name(t)) + " is not active");
  }
};

/// The three-task network: shared encoder, per-task branches, affinity
/// propagation across tasks, and per-task reconstruction with shared
/// up-projection blocks.
class PapNet {
 public:
  explicit PapNet(PapConfig cfg) : cfg_(std::move(cfg)), rng_(derive_seed({cfg_.seed, 0x0b7ULL})) {
    cfg_.validate();
    build();
    velocity_.reserve(params_.size());
    for (const auto& p : params_) velocity_.emplace_back(p.value.shape(), 0.0);
  }

  PapNet(const PapNet&) = delete;
  PapNet& operator=(const PapNet&) = delete;

  const PapConfig& config() const { return cfg_; }
  std::deque<Parameter>& parameters() { return params_; }
  const std::deque<Parameter>& parameters() const { return params_; }

  bool has_param(const std::string& name) const { return index_.count(name) != 0; }

  Parameter& param(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("no parameter named " + name);
    return params_[it->second];
  }

  /// Number of scalar weights.
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  std::uint64_t step() const { return step_; }
  std::mt19937_64& rng() { return rng_; }
  std::vector<Tensor>& velocity() { return velocity_; }

  /// Output size of the reconstruction: half the input.
  std::size_t stages() const { return upsampling_stages(cfg_.scale); }

  /// When `training` is false parameters enter the tape as constants.
  ForwardResult forward(Tape& t, const Tensor& image, bool training = true) {
    training_ = training;
    if (image.rank() != 3 || image.dim(0) != 3) throw DimensionError("forward: expected a 3 x H x W image, got " + shape_str(image.shape()));
    const std::size_t h = image.dim(1), w = image.dim(2);
    if (h % 16 != 0 || w % 16 != 0) {
      throw ConfigError("forward: image " + std::to_string(h) + "x" + std::to_string(w) + " is not divisible by 16");
    }
    const EncoderFeatures enc = encoder_forward(t, t.constant(image));
    const std::size_t div = scale_divisor(cfg_.scale), hs = h / div, ws = w / div;
    Var skip = concat({resize_to(enc.quarter, hs, ws), resize_to(enc.eighth, hs, ws), resize_to(enc.sixteenth, hs, ws)});

    ForwardResult out;
    for (TaskKind task : cfg_.tasks) {
      TaskOutputs o;
      o.task = task;
      std::tie(o.branch, o.initial) = branch_forward(t, skip, task);
      o.diffused_branch = o.branch;
      o.diffused_initial = o.initial;
      out.tasks.push_back(o);
    }

    if (cfg_.diffusion_active()) propagate(t, out, hs, ws);

    for (auto& o : out.tasks) {
      Var base = o.diffused_initial;
      for (std::size_t s = 0; s < stages(); ++s) base = bilinear_resize(base, Resize::Up2);
      if (!cfg_.reconstruction) {
        o.final = base;
        continue;
      }
      const std::string tn(task_name(o.task));
      Var x = o.diffused_branch;
      for (std::size_t s = 0; s < stages(); ++s) {
        Var shared = up_projection(t, x, "recon.shared.stage" + std::to_string(s));
        Var own = up_projection(t, x, "recon." + tn + ".stage" + std::to_string(s));
        x = concat({shared, own});
      }
      x = residual_block(t, x, "recon." + tn + ".final");
      o.final = add(conv(t, x, "recon." + tn + ".head", 1), base);
    }
    return out;
  }

  /// Stride-2 stages: a stem at 1/2, then C, 2C, 4C channels at 1/4, 1/8, 1/16.
  EncoderFeatures encoder_forward(Tape& t, Var image) {
    Var s = relu(conv(t, bilinear_resize(image, Resize::Down2), "encoder.stem", 3));
    Var q = relu(conv(t, bilinear_resize(s, Resize::Down2), "encoder.stage1", 3));
    Var e = relu(conv(t, bilinear_resize(q, Resize::Down2), "encoder.stage2", 3));
    Var x = relu(conv(t, bilinear_resize(e, Resize::Down2), "encoder.stage3", 3));
    return {q, e, x};
  }

  /// Input conv, two residual blocks, and a 1x1 prediction head.
  std::pair<Var, Var> branch_forward(Tape& t, Var skip, TaskKind task) {
    const std::string p = "branch." + std::string(task_name(task));
    Var x = relu(conv(t, skip, p + ".in", 3));
    x = residual_block(t, x, p + ".res1");
    x = residual_block(t, x, p + ".res2");
    return {x, conv(t, x, p + ".head", 1)};
  }

  Var residual_block(Tape& t, Var x, const std::string& prefix) {
    return pap::residual_block(x, conv_weights(t, prefix + ".conv1"), conv_weights(t, prefix + ".conv2"));
  }

  Var up_projection(Tape& t, Var x, const std::string& prefix) {
    return pap::up_projection(
        x, {conv_weights(t, prefix + ".main1"), conv_weights(t, prefix + ".main2"), conv_weights(t, prefix + ".residual")});
  }

  /// Binds a parameter on the tape.
  Var bind(Tape& t, const std::string& name) {
    Parameter& p = param(name);
    return training_ ? t.parameter(p) : t.constant(p.value);
  }

  /// Global L2 norm of the accumulated gradients.
  double gradient_norm() const {
    double sq = 0.0;
    for (const auto& p : params_)
      for (double g : p.grad.data()) sq += g * g;
    return std::sqrt(sq);
  }

  /// SGD with momentum; each learning-rate group has its own step size. The
  /// gradient is rescaled first when its global norm exceeds grad_clip.
  void apply_gradients() {
    const double norm = gradient_norm();
    const double factor = cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip ? cfg_.grad_clip / norm : 1.0;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Parameter& p = params_[i];
      const double lr = lr_scale_ * (p.group == LrGroup::PretrainedAnalog ? cfg_.lr_pretrained : cfg_.lr_fresh);
      Tensor& v = velocity_[i];
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        v[k] = cfg_.momentum * v[k] + factor * p.grad[k];
        p.value[k] -= lr * v[k];
      }
      p.zero_grad();
    }
    ++step_;
  }

  void set_step(std::uint64_t s) { step_ = s; }

  /// Multiplies both learning rates; the training loop drives it from the schedule.
  void set_lr_scale(double s) { lr_scale_ = s; }
  double lr_scale() const { return lr_scale_; }

 private:
  ConvWeights conv_weights(Tape& t, const std::string& prefix) { return {bind(t, prefix + ".w"), bind(t, prefix + ".b")}; }

  Var conv(Tape& t, Var x, const std::string& prefix, std::size_t) { return conv_layer(x, conv_weights(t, prefix)); }

  static Var resize_to(Var x, std::size_t h, std::size_t w) {
    while (x.dim(1) > h || x.dim(2) > w) x = bilinear_resize(x, Resize::Down2);
    while (x.dim(1) < h || x.dim(2) < w) x = bilinear_resize(x, Resize::Up2);
    return x;
  }

  void propagate(Tape& t, ForwardResult& out, std::size_t hs, std::size_t ws) {
    const std::size_t n = out.tasks.size();
    std::vector<AffinityMatrix> own;
    for (auto& o : out.tasks) {
      Var z = shrink_features(o.branch, bind(t, "affinity." + std::string(task_name(o.task)) + ".shrink"));
      Var q = normalize_rows(to_positions(z));
      if (cfg_.diffusion.subsampled) {
        Var pooled = cfg_.diffusion.pooling == Pooling::Average ? bilinear_resize(z, Resize::Down2) : max_pool2(z);
        o.affinity = compute_cross_affinity(q, normalize_rows(to_positions(pooled)), cfg_.similarity, o.task, cfg_.scale);
      } else {
        o.affinity = compute_affinity(q, cfg_.similarity, o.task, cfg_.scale);
      }
      own.push_back(o.affinity);
    }
    for (auto& o : out.tasks) {
      o.combined = n == 1 ? o.affinity
                          : combine_affinities(own, bind(t, "ensemble." + std::string(task_name(o.task)) + ".logits"), o.task);
      o.diffused_branch = from_positions(diffuse(o.combined, to_positions(o.branch), cfg_.diffusion, hs, ws), hs, ws);
      o.diffused_initial = from_positions(diffuse(o.combined, to_positions(o.initial), cfg_.diffusion, hs, ws), hs, ws);
    }
  }

  void add_param(const std::string& name, Tensor value, LrGroup group) {
    if (index_.count(name) != 0) throw ContractError("parameter registered twice: " + name);
    index_[name] = params_.size();
    params_.emplace_back(name, std::move(value), group);
  }

  /// He-normal weights from a stream keyed by (seed, name); zero bias.
  void add_conv(const std::string& prefix, std::size_t cin, std::size_t cout, std::size_t k, LrGroup group,
                double gain = 1.0, double bias = 0.0) {
    const std::string wname = prefix + ".w";
    Tensor w({cout, cin, k, k});
    std::mt19937_64 g(derive_seed({cfg_.seed, fnv1a(wname)}));
    std::normal_distribution<double> normal(0.0, gain * std::sqrt(2.0 / static_cast<double>(cin * k * k)));
    for (double& v : w.data()) v = normal(g);
    add_param(wname, std::move(w), group);
    add_param(prefix + ".b", Tensor({cout}, bias), group);
  }

  void add_up_projection(const std::string& prefix, std::size_t cin, std::size_t cout) {
    add_conv(prefix + ".main1", cin, cout, 3, LrGroup::Fresh);
    add_conv(prefix + ".main2", cout, cout, 3, LrGroup::Fresh);
    add_conv(prefix + ".residual", cin, cout, 3, LrGroup::Fresh);
  }

  /// Channel width entering reconstruction stage s (and leaving stage s - 1).
  std::size_t recon_width(std::size_t s) const { return std::max<std::size_t>(cfg_.branch_width >> s, 4); }

  void build() {
    const std::size_t c = cfg_.encoder_width, b = cfg_.branch_width;
    add_conv("encoder.stem", 3, c, 3, LrGroup::PretrainedAnalog);
    add_conv("encoder.stage1", c, c, 3, LrGroup::PretrainedAnalog);
    add_conv("encoder.stage2", c, 2 * c, 3, LrGroup::PretrainedAnalog);
    add_conv("encoder.stage3", 2 * c, 4 * c, 3, LrGroup::PretrainedAnalog);
    for (TaskKind task : cfg_.tasks) {
      const std::string p = "branch." + std::string(task_name(task));
      const std::size_t out = cfg_.output_channels(task);
      add_conv(p + ".in", 7 * c, b, 3, LrGroup::Fresh);
      for (const char* r : {".res1", ".res2"}) {
        add_conv(p + r + ".conv1", b, b, 3, LrGroup::Fresh);
        add_conv(p + r + ".conv2", b, b, 3, LrGroup::Fresh);
      }
      add_conv(p + ".head", b, out, 1, LrGroup::Fresh, 0.5, task == TaskKind::Depth ? 3.0 : 0.0);
    }
    if (cfg_.propagation) {
      for (TaskKind task : cfg_.tasks) {
        const std::string tn(task_name(task));
        Tensor proj({b / 2, b, 1, 1});
        std::mt19937_64 g(derive_seed({cfg_.seed, fnv1a("affinity." + tn + ".shrink")}));
        std::normal_distribution<double> normal(0.0, std::sqrt(1.0 / static_cast<double>(b)));
        for (double& v : proj.data()) v = normal(g);
        add_param("affinity." + tn + ".shrink", std::move(proj), LrGroup::Fresh);
      }
      if (cfg_.tasks.size() > 1) {
        for (std::size_t k = 0; k < cfg_.tasks.size(); ++k) {
          add_param("ensemble." + std::string(task_name(cfg_.tasks[k])) + ".logits",
                    AffinityEnsemble::initial_logits(cfg_.tasks.size(), k), LrGroup::Fresh);
        }
      }
    }
    if (cfg_.reconstruction) {
      for (std::size_t s = 0; s < stages(); ++s) {
        add_up_projection("recon.shared.stage" + std::to_string(s), recon_width(s), recon_width(s + 1) / 2);
      }
      for (TaskKind task : cfg_.tasks) {
        const std::string tn(task_name(task));
        for (std::size_t s = 0; s < stages(); ++s) {
          add_up_projection("recon." + tn + ".stage" + std::to_string(s), recon_width(s), recon_width(s + 1) / 2);
        }
        const std::size_t w = recon_width(stages());
        add_conv("recon." + tn + ".final.conv1", w, w, 3, LrGroup::Fresh);
        add_conv("recon." + tn + ".final.conv2", w, w, 3, LrGroup::Fresh);
        add_conv("recon." + tn + ".head", w, cfg_.output_channels(task), 1, LrGroup::Fresh, 0.5);
      }
    }
  }

  PapConfig cfg_;
  std::deque<Parameter> params_;
  std::map<std::string, std::size_t> index_;
  std::vector<Tensor> velocity_;
  std::uint64_t step_ = 0;
  double lr_scale_ = 1.0;
  std::mt19937_64 rng_;
  bool training_ = true;
};

/// Image plus ground truth at the supervision resolution (H/2 x W/2): area
/// mean for depth, renormalized area mean for normals, nearest for labels.
struct PreparedSample {
  std::uint64_t id = 0;
  Tensor image;
  TaskTarget depth;
  TaskTarget normal;
  TaskTarget seg;
  const SceneSample* source = nullptr;
};

inline PreparedSample prepare_sample(const SceneSample& s) {
  const std::size_t h = s.height(), w = s.width(), ho = h / 2, wo = w / 2, n = ho * wo;
  if (h % 2 != 0 || w % 2 != 0) throw DimensionError("prepare_sample: odd image size");
  PreparedSample p;
  p.id = s.id;
  p.image = s.image;
  p.source = &s;
  p.depth.dense = Tensor({1, ho, wo});
  p.normal.dense = Tensor({3, ho, wo});
  p.seg.labels.resize(n);
  for (std::size_t y = 0; y < ho; ++y)
    for (std::size_t x = 0; x < wo; ++x) {
      const std::size_t o = y * wo + x;
      double dsum = 0.0;
      std::array<double, 3> nsum{};
      for (std::size_t dy = 0; dy < 2; ++dy)
        for (std::size_t dx = 0; dx < 2; ++dx) {
          const std::size_t i = (2 * y + dy) * w + 2 * x + dx;
          dsum += s.depth[i];
          for (std::size_t c = 0; c < 3; ++c) nsum[c] += s.normal[c * h * w + i];
        }
      p.depth.dense[o] = dsum / 4.0;
      const double len = std::max(std::sqrt(nsum[0] * nsum[0] + nsum[1] * nsum[1] + nsum[2] * nsum[2]), 1e-12);
      for (std::size_t c = 0; c < 3; ++c) p.normal.dense[c * n + o] = nsum[c] / len;
      p.seg.labels[o] = s.labels[(2 * y) * w + 2 * x];
    }
  return p;
}

inline std::vector<PreparedSample> prepare_samples(const std::vector<SceneSample>& samples) {
  std::vector<PreparedSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(prepare_sample(s));
  return out;
}

struct StepResult {
  double loss = 0.0;
  std::array<double, 3> task_loss{};
  std::array<double, 3> pair_loss{};
  double seconds = 0.0;
};

namespace detail {

inline Var sum_all(const std::vector<Var>& xs) {
  Var acc = xs.at(0);
  for (std::size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
  return acc;
}

[[noreturn]] inline void report_non_finite(PapNet& model, const std::vector<ForwardResult>& results) {
  for (const auto& p : model.parameters()) {
    if (!p.value.all_finite()) throw NumericError("non-finite loss: parameter " + p.name + " holds non-finite values");
  }
  for (std::size_t b = 0; b < results.size(); ++b)
    for (const auto& o : results[b].tasks) {
      const std::string tn(task_name(o.task));
      const std::pair<const char*, Var> stages[] = {{"branch", o.branch},
                                                    {"initial", o.initial},
                                                    {"diffused_initial", o.diffused_initial},
                                                    {"final", o.final}};
      for (const auto& [what, v] : stages) {
        if (!v.value().all_finite()) {
          throw NumericError("non-finite loss: first non-finite tensor is " + tn + "." + what + " of batch item " +
                             std::to_string(b));
        }
      }
    }
  throw NumericError("non-finite loss: every prediction is finite, the loss itself overflowed");
}

}  // namespace detail

/// Forward passes and the weighted multi-task loss of a batch, on one tape.
struct BatchLoss {
  Var total;
  std::vector<TaskLossTerms> terms;
  std::vector<ForwardResult> results;
};

inline BatchLoss batch_loss(PapNet& model, Tape& t, std::span<const PreparedSample* const> batch) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  const PapConfig& cfg = model.config();
  BatchLoss out;
  for (const PreparedSample* s : batch) out.results.push_back(model.forward(t, s->image, true));
  const auto& results = out.results;

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  for (TaskKind task : cfg.tasks) {
    const std::size_t k = task_index(task);
    TaskLossTerms term{task, {}, {}};
    if (task == TaskKind::Depth) {
      // The berHu cutoff is taken over the whole batch.
      std::vector<Var> preds;
      Tensor gt({batch.size(), batch[0]->depth.dense.dim(1), batch[0]->depth.dense.dim(2)});
      const std::size_t n = batch[0]->depth.dense.size();
      for (std::size_t b = 0; b < batch.size(); ++b) {
        preds.push_back(results[b].of(task).final);
        std::copy(batch[b]->depth.dense.data().begin(), batch[b]->depth.dense.data().end(), gt.data().begin() + static_cast<long>(b * n));
      }
      term.loss = berhu_loss(concat(preds), gt);
    } else {
      std::vector<Var> losses;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const TaskTarget& gt = task == TaskKind::Normal ? batch[b]->normal : batch[b]->seg;
        losses.push_back(task_loss(results[b].of(task).final, gt, task));
      }
      term.loss = scale(detail::sum_all(losses), inv_b);
    }
    if (cfg.loss.xi[k] != 0.0) {
      std::vector<Var> pl;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const Var pred = results[b].of(task).final;
        const std::size_t positions = pred.dim(1) * pred.dim(2);
        const PairSample ps = sample_pairs(positions, std::min(cfg.pairs, positions * (positions - 1) / 2),
                                           derive_seed({cfg.seed, model.step(), k, b}));
        const TaskTarget& gt = task == TaskKind::Depth ? batch[b]->depth : task == TaskKind::Normal ? batch[b]->normal : batch[b]->seg;
        pl.push_back(pairwise_loss(pred, gt, ps, task));
      }
      term.pairwise = scale(detail::sum_all(pl), inv_b);
    }
    out.terms.push_back(term);
  }
  out.total = total_loss(out.terms, cfg.loss);
  return out;
}

/// Forward, weighted multi-task loss, backward and one optimizer update.
inline StepResult train_step(PapNet& model, std::span<const PreparedSample* const> batch) {
  const auto start = std::chrono::steady_clock::now();
  Tape t;
  const BatchLoss bl = batch_loss(model, t, batch);
  StepResult r;
  r.loss = bl.total.value()[0];
  if (!std::isfinite(r.loss)) detail::report_non_finite(model, bl.results);
  for (const auto& term : bl.terms) {
    r.task_loss[task_index(term.task)] = term.loss.value()[0];
    if (term.pairwise.valid()) r.pair_loss[task_index(term.task)] = term.pairwise.value()[0];
  }
  t.backward(bl.total);
  model.apply_gradients();
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

struct TrainResult {
  std::vector<double> losses;
  std::vector<double> step_seconds;
  double seconds = 0.0;
};

/// Shuffled mini-batches for `epochs` passes; the shuffle draws from the model's generator.
inline TrainResult train(PapNet& model, const std::vector<PreparedSample>& data,
                         const std::function<void(std::size_t epoch, double mean_loss)>& on_epoch = {}) {
  if (data.empty()) throw ContractError("train: no training samples");
  const auto start = std::chrono::steady_clock::now();
  const PapConfig& cfg = model.config();
  TrainResult out;
  std::vector<std::size_t> order(data.size());
  const std::size_t per_epoch = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
  const double total = static_cast<double>(per_epoch * cfg.epochs);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), model.rng());
    double sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t at = 0; at < order.size(); at += cfg.batch_size) {
      std::vector<const PreparedSample*> batch;
      for (std::size_t k = at; k < std::min(at + cfg.batch_size, order.size()); ++k) batch.push_back(&data[order[k]]);
      if (cfg.lr_schedule == LrSchedule::Cosine) {
        const double done = static_cast<double>(out.losses.size()) / total;
        model.set_lr_scale(0.5 * (1.0 + std::cos(std::numbers::pi * done)));
      }
      const StepResult r = train_step(model, batch);
      out.losses.push_back(r.loss);
      out.step_seconds.push_back(r.seconds);
      sum += r.loss;
      ++steps;
    }
    if (on_epoch) on_epoch(epoch, sum / static_cast<double>(steps));
  }
  model.set_lr_scale(1.0);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

/// Full-resolution predictions of one sample: depth H x W, normals 3 x H x W, labels.
struct Prediction {
  Tensor depth;
  Tensor normal;
  std::vector<int> labels;
};

inline Prediction predict(PapNet& model, const Tensor& image) {
  Tape t;
  const ForwardResult fr = model.forward(t, image, false);
  Prediction p;
  const std::size_t h = image.dim(1), w = image.dim(2), n = h * w;
  for (const auto& o : fr.tasks) {
    const Tensor up = bilinear_resize(o.final, Resize::Up2).value();
    switch (o.task) {
      case TaskKind::Depth: p.depth = up.reshaped({h, w}); break;
      case TaskKind::Normal: p.normal = up; break;
      case TaskKind::Segmentation: {
        const std::size_t k = up.dim(0);
        p.labels.assign(n, 0);
        for (std::size_t i = 0; i < n; ++i) {
          std::size_t best = 0;
          for (std::size_t c = 1; c < k; ++c)
            if (up[c * n + i] > up[best * n + i]) best = c;
          p.labels[i] = static_cast<int>(best);
        }
        break;
      }
    }
  }
  return p;
}

/// Metrics of every active task pooled over all pixels of all samples.
inline MetricsReport evaluate(PapNet& model, const std::vector<SceneSample>& samples) {
  if (samples.empty()) throw UndefinedError("evaluate: no samples");
  const PapConfig& cfg = model.config();
  const std::size_t h = samples[0].height(), w = samples[0].width(), n = h * w, m = samples.size();
  Tensor dp({m, h, w}), dg({m, h, w});
  Tensor np({3, m * h, w}), ng({3, m * h, w});
  std::vector<int> lp, lg;
  for (std::size_t s = 0; s < m; ++s) {
    const Prediction p = predict(model, samples[s].image);
    if (cfg.has_task(TaskKind::Depth)) {
      std::copy(p.depth.data().begin(), p.depth.data().end(), dp.data().begin() + static_cast<long>(s * n));
      std::copy(samples[s].depth.data().begin(), samples[s].depth.data().end(), dg.data().begin() + static_cast<long>(s * n));
    }
    if (cfg.has_task(TaskKind::Normal)) {
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < n; ++i) {
          np[c * m * n + s * n + i] = p.normal[c * n + i];
          ng[c * m * n + s * n + i] = samples[s].normal[c * n + i];
        }
    }
    if (cfg.has_task(TaskKind::Segmentation)) {
      lp.insert(lp.end(), p.labels.begin(), p.labels.end());
      lg.insert(lg.end(), samples[s].labels.begin(), samples[s].labels.end());
    }
  }
  MetricsReport report;
  if (cfg.has_task(TaskKind::Depth)) report.add(depth_metrics(dp, dg));
  if (cfg.has_task(TaskKind::Normal)) report.add(normal_metrics(np, ng));
  if (cfg.has_task(TaskKind::Segmentation)) report.add(seg_metrics(lp, lg, cfg.classes));
  return report;
}

// Checkpoint: "PAPC", u32 version, u64 architecture digest, u64 step, u32-length
// generator state text, u32 parameter count, then per parameter a u32-length
// name, u32 rank, u64 dims, f64 values and f64 momentum. Little-endian.

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void checkpoint_save(PapNet& model, const std::filesystem::path& path) {
  detail::ByteWriter out;
  out.raw("PAPC", 4);
  out.le<std::uint32_t>(kCheckpointVersion);
  out.le<std::uint64_t>(model.config().architecture_digest());
  out.le<std::uint64_t>(model.step());
  std::ostringstream rs;
  rs << model.rng();
  const std::string rng_text = rs.str();
  out.le<std::uint32_t>(static_cast<std::uint32_t>(rng_text.size()));
  out.raw(rng_text.data(), rng_text.size());
  out.le<std::uint32_t>(static_cast<std::uint32_t>(model.parameters().size()));
  for (std::size_t i = 0; i < model.parameters().size(); ++i) {
    const Parameter& p = model.parameters()[i];
    out.le<std::uint32_t>(static_cast<std::uint32_t>(p.name.size()));
    out.raw(p.name.data(), p.name.size());
    out.le<std::uint32_t>(static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t d : p.value.shape()) out.le<std::uint64_t>(d);
    for (double v : p.value.data()) out.f64(v);
    for (double v : model.velocity()[i].data()) out.f64(v);
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open " + path.string() + " for writing");
  f.write(out.bytes().data(), static_cast<std::streamsize>(out.bytes().size()));
  if (!f) throw CheckpointError("write failed: " + path.string());
}

/// Restores parameters, momentum, step and generator state. The whole file is
/// validated before the model is touched.
inline void checkpoint_load(PapNet& model, const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open " + path.string());
  detail::ByteReader in(std::vector<char>(std::istreambuf_iterator<char>(f), {}));
  auto fail = [&](const std::string& msg) -> CheckpointError {
    return CheckpointError(path.string() + ": " + msg + " (byte " + std::to_string(in.offset()) + ")");
  };
  try {
    in.need(4, "magic");
    if (std::memcmp(in.peek(), "PAPC", 4) != 0) throw fail("bad magic, not a checkpoint");
    in.skip(4);
    const auto version = in.le<std::uint32_t>("version");
    if (version != kCheckpointVersion) throw fail("unsupported checkpoint version " + std::to_string(version));
    const auto digest = in.le<std::uint64_t>("config digest");
    const auto step = in.le<std::uint64_t>("step");
    const auto rng_len = in.le<std::uint32_t>("generator state");
    in.need(rng_len, "generator state");
    const std::string rng_text(in.peek(), rng_len);
    in.skip(rng_len);
    const auto count = in.le<std::uint32_t>("parameter count");
    std::vector<Tensor> values, velocities;
    for (std::uint32_t k = 0; k < count; ++k) {
      const auto len = in.le<std::uint32_t>("parameter name");
      in.need(len, "parameter name");
      const std::string name(in.peek(), len);
      in.skip(len);
      const auto rank = in.le<std::uint32_t>("parameter rank");
      Shape shape;
      for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<std::size_t>(in.le<std::uint64_t>("parameter shape")));
      if (k >= model.parameters().size()) {
        throw fail("shape mismatch: checkpoint has more parameters than the model (" + std::to_string(count) + " vs " +
                   std::to_string(model.parameters().size()) + "), extra '" + name + "'");
      }
      const Parameter& p = model.parameters()[k];
      if (p.name != name || p.value.shape() != shape) {
        throw fail("shape mismatch at parameter " + std::to_string(k) + ": checkpoint '" + name + "' " + shape_str(shape) +
                   ", model '" + p.name + "' " + shape_str(p.value.shape()));
      }
      Tensor v(shape), m(shape);
      for (double& x : v.data()) x = in.f64("parameter values");
      for (double& x : m.data()) x = in.f64("momentum values");
      values.push_back(std::move(v));
      velocities.push_back(std::move(m));
    }
    if (count != model.parameters().size()) {
      throw fail("shape mismatch: checkpoint has " + std::to_string(count) + " parameters, model has " +
                 std::to_string(model.parameters().size()));
    }
    if (digest != model.config().architecture_digest()) throw fail("configuration digest does not match the model");
    if (in.remaining() != 0) throw fail("trailing bytes");
    std::mt19937_64 rng;
    std::istringstream rs(rng_text);
    rs >> rng;
    if (!rs) throw fail("corrupt generator state");
    for (std::size_t k = 0; k < values.size(); ++k) {
      model.parameters()[k].value = std::move(values[k]);
      model.parameters()[k].zero_grad();
      model.velocity()[k] = std::move(velocities[k]);
    }
    model.set_step(step);
    model.rng() = rng;
  } catch (const FormatError& e) {
    throw CheckpointError(path.string() + ": " + e.what() + " (byte " + std::to_string(e.offset()) + ")");
  }
}

}  // namespace pap
