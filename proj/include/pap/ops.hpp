#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "pap/autodiff.hpp"

namespace pap {

using detail::axpy;

/// [m x k] * [k x n]
inline Var matmul(Var a, Var b) {
  detail::require_rank(a, 2, "matmul");
  detail::require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " * " +
                         shape_str(b.shape()));
  }
  Tensor out({m, n}, 0.0);
  detail::gemm_nn(m, k, n, a.value().data().data(), b.value().data().data(), out.data().data());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib, m, k, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      detail::gemm_nt(m, n, k, g.data().data(), t.value(ib).data().data(), t.grad_buffer(ia).data().data());
    }
    if (t.requires_grad(ib)) {
      detail::gemm_tn(k, m, n, t.value(ia).data().data(), g.data().data(), t.grad_buffer(ib).data().data());
    }
  });
}

/// [m x k] * [n x k]^T, the Gram-style product.
inline Var matmul_nt(Var a, Var b) {
  detail::require_rank(a, 2, "matmul_nt");
  detail::require_rank(b, 2, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_nt: inner dimensions disagree, " + shape_str(a.shape()) + " * " +
                         shape_str(b.shape()) + "^T");
  }
  Tensor out({m, n}, 0.0);
  detail::gemm_nt(m, k, n, a.value().data().data(), b.value().data().data(), out.data().data());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib, m, k, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      detail::gemm_nn(m, n, k, g.data().data(), t.value(ib).data().data(), t.grad_buffer(ia).data().data());
    }
    if (t.requires_grad(ib)) {
      detail::gemm_tn(n, m, k, g.data().data(), t.value(ia).data().data(), t.grad_buffer(ib).data().data());
    }
  });
}

inline Var transpose(Var a) {
  detail::require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  Tensor out({c, r});
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia, r, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& dx = t.grad_buffer(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += g[j * r + i];
  });
}

inline Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  const std::size_t ia = a.id();
  return a.tape()->record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    axpy(t.grad_buffer(ia), t.grad(self));
  });
}

namespace detail {

struct ConvGeometry {
  std::size_t cin, h, w, cout, k, stride, pad, ho, wo;
};

inline ConvGeometry conv_geometry(const Shape& in, const Shape& kernel, std::size_t stride, std::size_t pad) {
  if (in.size() != 3) throw DimensionError("conv2d: input must be C x H x W, got " + shape_str(in));
  if (kernel.size() != 4) throw DimensionError("conv2d: kernel must be Cout x Cin x k x k, got " + shape_str(kernel));
  if (kernel[1] != in[0]) {
    throw DimensionError("conv2d: kernel " + shape_str(kernel) + " does not match input " + shape_str(in));
  }
  const std::size_t k = kernel[2];
  if (kernel[3] != k || (k != 1 && k != 3)) throw ConfigError("conv2d: kernel must be 1x1 or 3x3");
  if (stride != 1 && stride != 2) throw ConfigError("conv2d: stride must be 1 or 2");
  const std::size_t hp = in[1] + 2 * pad, wp = in[2] + 2 * pad;
  if (hp < k || wp < k || (hp - k) % stride != 0 || (wp - k) % stride != 0) {
    throw ConfigError("conv2d: non-integral output size for input " + shape_str(in) + ", k=" + std::to_string(k) +
                      ", stride=" + std::to_string(stride) + ", pad=" + std::to_string(pad));
  }
  return {in[0], in[1], in[2], kernel[0], k, stride, pad, (hp - k) / stride + 1, (wp - k) / stride + 1};
}

// col[(c*k + ky)*k + kx][oy*wo + ox]
inline std::vector<double> im2col(const Tensor& x, const ConvGeometry& g) {
  const std::size_t p = g.ho * g.wo;
  std::vector<double> col(g.cin * g.k * g.k * p, 0.0);
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        double* row = col.data() + ((c * g.k + ky) * g.k + kx) * p;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            row[oy * g.wo + ox] = x.at(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
          }
        }
      }
  return col;
}

inline void col2im_add(const std::vector<double>& col, const ConvGeometry& g, Tensor& dx) {
  const std::size_t p = g.ho * g.wo;
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ky = 0; ky < g.k; ++ky)
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const double* row = col.data() + ((c * g.k + ky) * g.k + kx) * p;
        for (std::size_t oy = 0; oy < g.ho; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          for (std::size_t ox = 0; ox < g.wo; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kx) - static_cast<long>(g.pad);
            if (ix < 0 || ix >= static_cast<long>(g.w)) continue;
            dx.at(c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)) += row[oy * g.wo + ox];
          }
        }
      }
}

}  // namespace detail

/// Zero-padded cross-correlation of a C_in x H x W map with a C_out x C_in x k x k kernel.
inline Var conv2d(Var input, Var kernel, std::size_t stride = 1, std::size_t pad = 0) {
  const detail::ConvGeometry g = detail::conv_geometry(input.shape(), kernel.shape(), stride, pad);
  const std::size_t kk = g.cin * g.k * g.k, p = g.ho * g.wo;
  std::vector<double> col;
  const double* colp = nullptr;
  if (g.k == 1 && g.stride == 1 && g.pad == 0) {
    colp = input.value().data().data();
  } else {
    col = detail::im2col(input.value(), g);
    colp = col.data();
  }
  Tensor out({g.cout, g.ho, g.wo}, 0.0);
  detail::gemm_nn(g.cout, kk, p, kernel.value().data().data(), colp, out.data().data());
  const std::size_t ix = input.id(), iw = kernel.id();
  return input.tape()->record(
      std::move(out), {input, kernel}, [ix, iw, g, kk, p, col = std::move(col)](Tape& t, std::size_t self) {
        const Tensor& dout = t.grad(self);
        const bool direct = col.empty();
        if (t.requires_grad(iw)) {
          const double* c = direct ? t.value(ix).data().data() : col.data();
          detail::gemm_nt(g.cout, p, kk, dout.data().data(), c, t.grad_buffer(iw).data().data());
        }
        if (t.requires_grad(ix)) {
          if (direct) {
            detail::gemm_tn(kk, g.cout, p, t.value(iw).data().data(), dout.data().data(),
                            t.grad_buffer(ix).data().data());
          } else {
            std::vector<double> dcol(kk * p, 0.0);
            detail::gemm_tn(kk, g.cout, p, t.value(iw).data().data(), dout.data().data(), dcol.data());
            detail::col2im_add(dcol, g, t.grad_buffer(ix));
          }
        }
      });
}

/// Adds a per-channel bias to a C x H x W map.
inline Var add_bias(Var x, Var bias) {
  detail::require_rank(x, 3, "add_bias");
  const std::size_t c = x.dim(0), hw = x.dim(1) * x.dim(2);
  if (bias.value().size() != c) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match " + shape_str(x.shape()));
  }
  Tensor out = x.value();
  const Tensor& b = bias.value();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < hw; ++i) out[ch * hw + i] += b[ch];
  const std::size_t ix = x.id(), ib = bias.id();
  return x.tape()->record(std::move(out), {x, bias}, [ix, ib, c, hw](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ix)) axpy(t.grad_buffer(ix), g);
    if (t.requires_grad(ib)) {
      Tensor& db = t.grad_buffer(ib);
      for (std::size_t ch = 0; ch < c; ++ch) {
        double s = 0.0;
        for (std::size_t i = 0; i < hw; ++i) s += g[ch * hw + i];
        db[ch] += s;
      }
    }
  });
}

/// Rectifier; the subgradient at exactly 0 is 0.
inline Var relu(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = v < 0.0 ? 0.0 : v;  // NaN passes through
  const std::size_t ix = x.id();
  return x.tape()->record(std::move(out), {x}, [ix](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& in = t.value(ix);
    Tensor& dx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (in[i] > 0.0) dx[i] += g[i];
  });
}

inline Var add(Var a, Var b) {
  detail::require_same(a, b, "add");
  Tensor out = a.value();
  axpy(out, b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) axpy(t.grad_buffer(ia), g);
    if (t.requires_grad(ib)) axpy(t.grad_buffer(ib), g);
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same(a, b, "sub");
  Tensor out = a.value();
  axpy(out, b.value(), -1.0);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) axpy(t.grad_buffer(ia), g);
    if (t.requires_grad(ib)) axpy(t.grad_buffer(ib), g, -1.0);
  });
}

/// Elementwise product.
inline Var mul(Var a, Var b) {
  detail::require_same(a, b, "mul");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      Tensor& da = t.grad_buffer(ia);
      const Tensor& bv = t.value(ib);
      for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      Tensor& db = t.grad_buffer(ib);
      const Tensor& av = t.value(ia);
      for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * av[i];
    }
  });
}

inline Var scale(Var x, double s) {
  Tensor out = x.value();
  for (double& v : out.data()) v *= s;
  const std::size_t ix = x.id();
  return x.tape()->record(std::move(out), {x}, [ix, s](Tape& t, std::size_t self) {
    axpy(t.grad_buffer(ix), t.grad(self), s);
  });
}

/// Concatenates C_k x H x W maps along the channel axis.
inline Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  std::size_t channels = 0;
  for (const Var& p : parts) {
    detail::require_rank(p, 3, "concat");
    if (p.dim(1) != parts[0].dim(1) || p.dim(2) != parts[0].dim(2)) {
      throw DimensionError("concat: spatial dims differ, " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    }
    channels += p.dim(0);
  }
  Tensor out({channels, parts[0].dim(1), parts[0].dim(2)});
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data().begin(), p.value().data().end(), out.data().begin() + static_cast<long>(off));
    ids.push_back(p.id());
    offsets.push_back(off);
    off += p.value().size();
  }
  return parts[0].tape()->record(std::move(out), parts, [ids, offsets](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      Tensor& d = t.grad_buffer(ids[k]);
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[offsets[k] + i];
    }
  });
}

inline Var reduce_sum(Var x) {
  Tensor out({1}, x.value().sum());
  const std::size_t ix = x.id();
  return x.tape()->record(std::move(out), {x}, [ix](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (double& v : t.grad_buffer(ix).data()) v += g;
  });
}

inline Var reduce_mean(Var x) {
  const double n = static_cast<double>(x.value().size());
  Tensor out({1}, x.value().sum() / n);
  const std::size_t ix = x.id();
  return x.tape()->record(std::move(out), {x}, [ix, n](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0] / n;
    for (double& v : t.grad_buffer(ix).data()) v += g;
  });
}

/// exp followed by row normalization, stabilized by subtracting each row's max.
inline Var row_softmax(Var m) {
  detail::require_rank(m, 2, "row_softmax");
  const std::size_t r = m.dim(0), c = m.dim(1);
  Tensor out = m.value();
  for (std::size_t i = 0; i < r; ++i) {
    double* row = out.data().data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      row[j] = std::exp(row[j] - mx);
      s += row[j];
    }
    for (std::size_t j = 0; j < c; ++j) row[j] /= s;
  }
  const std::size_t im = m.id();
  return m.tape()->record(std::move(out), {m}, [im, r, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& dx = t.grad_buffer(im);
    for (std::size_t i = 0; i < r; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += y[i * c + j] * (g[i * c + j] - dot);
    }
  });
}

enum class Resize { Up2, Down2 };

namespace detail {

struct Tap {
  std::size_t i0, i1;
  double w1;
};

// Half-pixel-centred linear taps from n_in samples to n_out samples.
inline std::vector<Tap> linear_taps(std::size_t n_in, std::size_t n_out) {
  std::vector<Tap> taps(n_out);
  const double ratio = static_cast<double>(n_in) / static_cast<double>(n_out);
  for (std::size_t o = 0; o < n_out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(n_in - 1));
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    const std::size_t i1 = std::min(i0 + 1, n_in - 1);
    taps[o] = {i0, i1, src - static_cast<double>(i0)};
  }
  return taps;
}

}  // namespace detail

/// Bilinear x2 resize with half-pixel centres (align_corners = false).
inline Var bilinear_resize(Var x, Resize mode) {
  detail::require_rank(x, 3, "bilinear_resize");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  std::size_t ho = 0, wo = 0;
  if (mode == Resize::Up2) {
    ho = 2 * h;
    wo = 2 * w;
  } else {
    if (h % 2 != 0 || w % 2 != 0) {
      throw DimensionError("bilinear_resize: downscale needs even dims, got " + shape_str(x.shape()));
    }
    ho = h / 2;
    wo = w / 2;
  }
  auto ty = detail::linear_taps(h, ho);
  auto tx = detail::linear_taps(w, wo);
  Tensor out({c, ho, wo});
  const Tensor& in = x.value();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t oy = 0; oy < ho; ++oy) {
      const auto& a = ty[oy];
      for (std::size_t ox = 0; ox < wo; ++ox) {
        const auto& b = tx[ox];
        const double top = (1.0 - b.w1) * in.at(ch, a.i0, b.i0) + b.w1 * in.at(ch, a.i0, b.i1);
        const double bot = (1.0 - b.w1) * in.at(ch, a.i1, b.i0) + b.w1 * in.at(ch, a.i1, b.i1);
        out.at(ch, oy, ox) = (1.0 - a.w1) * top + a.w1 * bot;
      }
    }
  const std::size_t ix = x.id();
  return x.tape()->record(std::move(out), {x}, [ix, c, ho, wo, ty = std::move(ty), tx = std::move(tx)](
                                                   Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& dx = t.grad_buffer(ix);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t oy = 0; oy < ho; ++oy) {
        const auto& a = ty[oy];
        for (std::size_t ox = 0; ox < wo; ++ox) {
          const auto& b = tx[ox];
          const double v = g.at(ch, oy, ox);
          dx.at(ch, a.i0, b.i0) += (1.0 - a.w1) * (1.0 - b.w1) * v;
          dx.at(ch, a.i0, b.i1) += (1.0 - a.w1) * b.w1 * v;
          dx.at(ch, a.i1, b.i0) += a.w1 * (1.0 - b.w1) * v;
          dx.at(ch, a.i1, b.i1) += a.w1 * b.w1 * v;
        }
      }
  });
}

/// 2x2 max pooling; gradient routes to the first maximal element of each window.
inline Var max_pool2(Var x) {
  detail::require_rank(x, 3, "max_pool2");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h % 2 != 0 || w % 2 != 0) throw DimensionError("max_pool2: odd dims " + shape_str(x.shape()));
  const std::size_t ho = h / 2, wo = w / 2;
  Tensor out({c, ho, wo});
  std::vector<std::size_t> arg(out.size());
  const Tensor& in = x.value();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t oy = 0; oy < ho; ++oy)
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = (ch * h + 2 * oy) * w + 2 * ox;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = (ch * h + 2 * oy + dy) * w + 2 * ox + dx;
            if (in[idx] > in[best]) best = idx;
          }
        const std::size_t o = (ch * ho + oy) * wo + ox;
        out[o] = in[best];
        arg[o] = best;
      }
  const std::size_t ix = x.id();
  return x.tape()->record(std::move(out), {x}, [ix, arg = std::move(arg)](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& dx = t.grad_buffer(ix);
    for (std::size_t o = 0; o < g.size(); ++o) dx[arg[o]] += g[o];
  });
}

/// C x H x W map to an (H*W) x C matrix with one row per position.
inline Var to_positions(Var x) {
  detail::require_rank(x, 3, "to_positions");
  const std::size_t c = x.dim(0), n = x.dim(1) * x.dim(2);
  Tensor out({n, c});
  const Tensor& in = x.value();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < n; ++i) out[i * c + ch] = in[ch * n + i];
  const std::size_t ix = x.id();
  return x.tape()->record(std::move(out), {x}, [ix, c, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& dx = t.grad_buffer(ix);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < n; ++i) dx[ch * n + i] += g[i * c + ch];
  });
}

/// Inverse of to_positions.
inline Var from_positions(Var h, std::size_t height, std::size_t width) {
  detail::require_rank(h, 2, "from_positions");
  const std::size_t n = h.dim(0), c = h.dim(1);
  if (n != height * width) {
    throw DimensionError("from_positions: " + shape_str(h.shape()) + " cannot fill " + std::to_string(height) +
                         "x" + std::to_string(width));
  }
  Tensor out({c, height, width});
  const Tensor& in = h.value();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < n; ++i) out[ch * n + i] = in[i * c + ch];
  const std::size_t ih = h.id();
  return h.tape()->record(std::move(out), {h}, [ih, c, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& dh = t.grad_buffer(ih);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < n; ++i) dh[i * c + ch] += g[ch * n + i];
  });
}

/// Scales each row to unit L2 norm; rows with norm below eps are divided by eps.
inline Var normalize_rows(Var x, double eps = 1e-8) {
  detail::require_rank(x, 2, "normalize_rows");
  const std::size_t r = x.dim(0), c = x.dim(1);
  Tensor out = x.value();
  std::vector<double> norms(r);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += out[i * c + j] * out[i * c + j];
    norms[i] = std::max(std::sqrt(s), eps);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= norms[i];
  }
  const std::size_t ix = x.id();
  return x.tape()->record(std::move(out), {x}, [ix, r, c, eps, norms = std::move(norms)](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& dx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < r; ++i) {
      if (norms[i] <= eps) {
        for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += g[i * c + j] / eps;
        continue;
      }
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += g[i * c + j] * y[i * c + j];
      for (std::size_t j = 0; j < c; ++j) dx[i * c + j] += (g[i * c + j] - y[i * c + j] * dot) / norms[i];
    }
  });
}

/// S[i][j] = -||x_i - y_j||_1 for rows of x [N x C] and y [M x C].
inline Var neg_l1_distance(Var x, Var y) {
  detail::require_rank(x, 2, "neg_l1_distance");
  detail::require_rank(y, 2, "neg_l1_distance");
  const std::size_t n = x.dim(0), m = y.dim(0), c = x.dim(1);
  if (y.dim(1) != c) {
    throw DimensionError("neg_l1_distance: feature widths differ, " + shape_str(x.shape()) + " vs " +
                         shape_str(y.shape()));
  }
  Tensor out({n, m});
  const Tensor& a = x.value();
  const Tensor& b = y.value();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < c; ++k) s += std::abs(a[i * c + k] - b[j * c + k]);
      out[i * m + j] = -s;
    }
  const std::size_t ix = x.id(), iy = y.id();
  return x.tape()->record(std::move(out), {x, y}, [ix, iy, n, m, c](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& a = t.value(ix);
    const Tensor& b = t.value(iy);
    const bool gx = t.requires_grad(ix), gy = t.requires_grad(iy);
    Tensor* dx = gx ? &t.grad_buffer(ix) : nullptr;
    Tensor* dy = gy ? &t.grad_buffer(iy) : nullptr;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double gij = g[i * m + j];
        for (std::size_t k = 0; k < c; ++k) {
          const double d = a[i * c + k] - b[j * c + k];
          const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
          if (gx) (*dx)[i * c + k] -= gij * s;
          if (gy) (*dy)[j * c + k] += gij * s;
        }
      }
  });
}

/// Sum_k weights[k] * terms[k] for equally shaped terms.
inline Var weighted_sum(const std::vector<Var>& terms, Var weights) {
  if (terms.empty()) throw ContractError("weighted_sum: no terms");
  if (weights.value().size() != terms.size()) {
    throw DimensionError("weighted_sum: " + std::to_string(terms.size()) + " terms but weights " +
                         shape_str(weights.shape()));
  }
  for (const Var& t : terms) detail::require_same(terms[0], t, "weighted_sum");
  Tensor out(terms[0].shape(), 0.0);
  const Tensor& w = weights.value();
  for (std::size_t k = 0; k < terms.size(); ++k) axpy(out, terms[k].value(), w[k]);
  std::vector<std::size_t> ids;
  std::vector<Var> inputs = terms;
  inputs.push_back(weights);
  for (const Var& t : terms) ids.push_back(t.id());
  const std::size_t iw = weights.id();
  return weights.tape()->record(std::move(out), inputs, [ids, iw](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor w = t.value(iw);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (t.requires_grad(ids[k])) axpy(t.grad_buffer(ids[k]), g, w[k]);
    }
    if (t.requires_grad(iw)) {
      Tensor& dw = t.grad_buffer(iw);
      for (std::size_t k = 0; k < ids.size(); ++k) {
        const Tensor& m = t.value(ids[k]);
        double s = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * m[i];
        dw[k] += s;
      }
    }
  });
}

/// Softmax of a flat vector (used for simplex weights).
inline Var softmax(Var v) {
  const Shape original = v.shape();
  return reshape(row_softmax(reshape(v, {1, v.value().size()})), original);
}

}  // namespace pap
