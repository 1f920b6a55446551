#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "itnet/autodiff.hpp"
#include "itnet/random.hpp"
#include "itnet/tensor.hpp"

namespace itnet {

enum class Mode { Train, Infer };

enum class Padding { Same, Valid, Causal };

struct ConvSpec {
  std::size_t kernel_extent = 1;
  std::size_t dilation = 1;
  Padding padding = Padding::Same;
  bool depthwise = false;
  std::size_t filter_count = 1;

  std::size_t span() const noexcept { return dilation * (kernel_extent - 1); }

  // Zero samples added before the first input sample.
  std::size_t leading_pad() const noexcept {
    switch (padding) {
      case Padding::Same: return span() / 2;
      case Padding::Causal: return span();
      case Padding::Valid: return 0;
    }
    return 0;
  }

  void validate() const {
    if (kernel_extent < 1) throw std::invalid_argument("conv: kernel extent must be >= 1");
    if (dilation < 1) throw std::invalid_argument("conv: dilation must be >= 1");
    if (filter_count < 1) throw std::invalid_argument("conv: filter count must be >= 1");
  }
};

template <Real T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels)
      : running_mean(Shape{channels}, T(0)), running_var(Shape{channels}, T(1)) {}
};

struct BatchNormOptions {
  double eps = 1e-3;
  double momentum = 0.99;
};

namespace detail {

template <Real T>
void add_into(Tensor<T>* dst, const Tensor<T>& src) {
  if (!dst) return;
  auto& d = dst->values();
  const auto& s = src.values();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

// Dot product over eight interleaved partial sums. The fixed lane structure lets
// the compiler vectorize without reassociation flags and keeps results reproducible.
template <Real T>
T dot(const T* a, const T* b, long n) {
  T lane[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  long i = 0;
  for (; i + 8 <= n; i += 8)
    for (int j = 0; j < 8; ++j) lane[j] += a[i + j] * b[i + j];
  T acc = ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7]));
  for (; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace detail

// Convolution along the time axis of x (N, F_in, C, S).
//   full:      weights (filter_count, F_in, 1, K); every output filter sees every input filter
//   depthwise: weights (filter_count, 1, 1, K) with filter_count a multiple of F_in; output
//              filter o reads input filter o / (filter_count / F_in)
// Tap k multiplies x[t - leading_pad + k * dilation], so in causal mode the last tap
// is the current sample and tap 0 reaches (K-1)*dilation samples into the past.
template <Real T>
Var<T> conv_temporal(const Var<T>& x, const ConvSpec& spec, const Var<T>& weights,
                     const std::optional<Var<T>>& bias = std::nullopt) {
  spec.validate();
  const auto& xs = x.shape();
  require_rank(xs, 4, "conv_temporal input");
  const std::size_t N = xs[0], Fin = xs[1], C = xs[2], S = xs[3];
  const std::size_t K = spec.kernel_extent, Fout = spec.filter_count, d = spec.dilation;
  const auto& ws = weights.shape();
  require_rank(ws, 4, "conv_temporal weights");
  require_extent(ws[0], Fout, "conv_temporal weights", "filter");
  require_extent(ws[1], spec.depthwise ? 1 : Fin, "conv_temporal weights", "input-filter");
  require_extent(ws[2], 1, "conv_temporal weights", "electrode");
  require_extent(ws[3], K, "conv_temporal weights", "time");
  std::size_t mult = 1;
  if (spec.depthwise) {
    if (Fout % Fin != 0) {
      throw std::invalid_argument("conv_temporal: depthwise filter count " + std::to_string(Fout) +
                                  " is not a multiple of input filter axis extent " + std::to_string(Fin));
    }
    mult = Fout / Fin;
  }
  if (bias) {
    require_rank(bias->shape(), 1, "conv_temporal bias");
    require_extent(bias->shape()[0], Fout, "conv_temporal bias", "filter");
  }
  if (spec.padding == Padding::Valid && spec.span() >= S) {
    throw std::invalid_argument("conv_temporal: dilation*(kernel-1) = " + std::to_string(spec.span()) +
                                " must be below time axis extent " + std::to_string(S) +
                                " for valid padding");
  }
  const std::size_t Sout = spec.padding == Padding::Valid ? S - spec.span() : S;
  const long lead = static_cast<long>(spec.leading_pad());
  const std::size_t fin_per_out = spec.depthwise ? 1 : Fin;

  auto input_of = [=](std::size_t o, std::size_t j) { return spec.depthwise ? o / mult : j; };
  // Valid output range [lo, hi) for a tap whose input offset is `shift`.
  auto range = [=](long shift) {
    const long lo = std::max<long>(0, -shift);
    const long hi = std::min<long>(static_cast<long>(Sout), static_cast<long>(S) - shift);
    return std::pair<long, long>(lo, std::max(lo, hi));
  };

  const auto& xv = x.value();
  const auto& wv = weights.value();
  Tensor<T> y(Shape{N, Fout, C, Sout});
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t o = 0; o < Fout; ++o) {
      const T b = bias ? bias->value()[o] : T(0);
      for (std::size_t c = 0; c < C; ++c) {
        T* yr = &y.at(n, o, c, 0);
        std::fill(yr, yr + Sout, b);
        for (std::size_t j = 0; j < fin_per_out; ++j) {
          const T* xr = &xv.at(n, input_of(o, j), c, 0);
          const T* wr = &wv.at(o, j, 0, 0);
          for (std::size_t k = 0; k < K; ++k) {
            const long shift = static_cast<long>(k * d) - lead;
            const auto [lo, hi] = range(shift);
            const T w = wr[k];
            for (long t = lo; t < hi; ++t) yr[t] += w * xr[t + shift];
          }
        }
      }
    }
  }

  std::vector<std::size_t> parents{x.id(), weights.id()};
  if (bias) parents.push_back(bias->id());
  const std::size_t xid = x.id(), wid = weights.id();
  const std::optional<std::size_t> bid = bias ? std::optional(bias->id()) : std::nullopt;
  return x.tape().record(std::move(y), std::move(parents), [=](Tape<T>& tape, std::size_t self) {
    const auto& dy = tape.grad(self);
    const auto& xv = tape.value(xid);
    const auto& wv = tape.value(wid);
    Tensor<T>* dx = tape.grad_sink(xid);
    Tensor<T>* dw = tape.grad_sink(wid);
    Tensor<T>* db = bid ? tape.grad_sink(*bid) : nullptr;
    for (std::size_t n = 0; n < N; ++n) {
      for (std::size_t o = 0; o < Fout; ++o) {
        for (std::size_t c = 0; c < C; ++c) {
          const T* gr = &dy.at(n, o, c, 0);
          if (db) {
            T acc = 0;
            for (std::size_t t = 0; t < Sout; ++t) acc += gr[t];
            (*db)[o] += acc;
          }
          for (std::size_t j = 0; j < fin_per_out; ++j) {
            const std::size_t i = input_of(o, j);
            const T* xr = &xv.at(n, i, c, 0);
            T* dxr = dx ? &dx->at(n, i, c, 0) : nullptr;
            for (std::size_t k = 0; k < K; ++k) {
              const long shift = static_cast<long>(k * d) - lead;
              const auto [lo, hi] = range(shift);
              if (dw && hi > lo) dw->at(o, j, 0, k) += detail::dot(gr + lo, xr + lo + shift, hi - lo);
              if (dxr) {
                const T w = wv.at(o, j, 0, k);
                for (long t = lo; t < hi; ++t) dxr[t + shift] += w * gr[t];
              }
            }
          }
        }
      }
    }
  });
}

// Depthwise convolution over the electrode axis with valid padding; weights
// (F, kernel_height). With kernel_height == C the electrode axis collapses to 1,
// which is a per-filter spatial filter.
template <Real T>
Var<T> conv_spatial(const Var<T>& x, const Var<T>& weights) {
  const auto& xs = x.shape();
  require_rank(xs, 4, "conv_spatial input");
  const std::size_t N = xs[0], F = xs[1], C = xs[2], S = xs[3];
  require_rank(weights.shape(), 2, "conv_spatial weights");
  require_extent(weights.shape()[0], F, "conv_spatial weights", "filter");
  const std::size_t H = weights.shape()[1];
  if (H < 1 || H > C) {
    throw std::invalid_argument("conv_spatial: electrode kernel extent " + std::to_string(H) +
                                " does not fit electrode axis extent " + std::to_string(C));
  }
  const std::size_t Cout = C - H + 1;
  const auto& xv = x.value();
  const auto& wv = weights.value();
  Tensor<T> y(Shape{N, F, Cout, S});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t co = 0; co < Cout; ++co) {
        T* yr = &y.at(n, f, co, 0);
        for (std::size_t h = 0; h < H; ++h) {
          const T w = wv[f * H + h];
          const T* xr = &xv.at(n, f, co + h, 0);
          for (std::size_t t = 0; t < S; ++t) yr[t] += w * xr[t];
        }
      }
  const std::size_t xid = x.id(), wid = weights.id();
  return x.tape().record(std::move(y), {xid, wid}, [=](Tape<T>& tape, std::size_t self) {
    const auto& dy = tape.grad(self);
    const auto& xv = tape.value(xid);
    const auto& wv = tape.value(wid);
    Tensor<T>* dx = tape.grad_sink(xid);
    Tensor<T>* dw = tape.grad_sink(wid);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t f = 0; f < F; ++f)
        for (std::size_t co = 0; co < Cout; ++co) {
          const T* gr = &dy.at(n, f, co, 0);
          for (std::size_t h = 0; h < H; ++h) {
            const T* xr = &xv.at(n, f, co + h, 0);
            if (dw) {
              T acc = 0;
              for (std::size_t t = 0; t < S; ++t) acc += gr[t] * xr[t];
              (*dw)[f * H + h] += acc;
            }
            if (dx) {
              const T w = wv[f * H + h];
              T* dxr = &dx->at(n, f, co + h, 0);
              for (std::size_t t = 0; t < S; ++t) dxr[t] += w * gr[t];
            }
          }
        }
  });
}

// 1x1 convolution mixing the filter axis: weights (F_out, F_in), bias (F_out).
template <Real T>
Var<T> conv_pointwise(const Var<T>& x, const Var<T>& weights, const std::optional<Var<T>>& bias) {
  const auto& xs = x.shape();
  require_rank(xs, 4, "conv_pointwise input");
  const std::size_t N = xs[0], Fin = xs[1], C = xs[2], S = xs[3];
  require_rank(weights.shape(), 2, "conv_pointwise weights");
  require_extent(weights.shape()[1], Fin, "conv_pointwise weights", "input-filter");
  const std::size_t Fout = weights.shape()[0];
  if (bias) require_extent(bias->value().size(), Fout, "conv_pointwise bias", "filter");
  const std::size_t plane = C * S;
  const auto& xv = x.value();
  const auto& wv = weights.value();
  Tensor<T> y(Shape{N, Fout, C, S});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < Fout; ++o) {
      T* yr = &y[(n * Fout + o) * plane];
      std::fill(yr, yr + plane, bias ? bias->value()[o] : T(0));
      for (std::size_t i = 0; i < Fin; ++i) {
        const T w = wv[o * Fin + i];
        const T* xr = &xv[(n * Fin + i) * plane];
        for (std::size_t p = 0; p < plane; ++p) yr[p] += w * xr[p];
      }
    }
  std::vector<std::size_t> parents{x.id(), weights.id()};
  if (bias) parents.push_back(bias->id());
  const std::size_t xid = x.id(), wid = weights.id();
  const std::optional<std::size_t> bid = bias ? std::optional(bias->id()) : std::nullopt;
  return x.tape().record(std::move(y), std::move(parents), [=](Tape<T>& tape, std::size_t self) {
    const auto& dy = tape.grad(self);
    const auto& xv = tape.value(xid);
    const auto& wv = tape.value(wid);
    Tensor<T>* dx = tape.grad_sink(xid);
    Tensor<T>* dw = tape.grad_sink(wid);
    Tensor<T>* db = bid ? tape.grad_sink(*bid) : nullptr;
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t o = 0; o < Fout; ++o) {
        const T* gr = &dy[(n * Fout + o) * plane];
        if (db) {
          T acc = 0;
          for (std::size_t p = 0; p < plane; ++p) acc += gr[p];
          (*db)[o] += acc;
        }
        for (std::size_t i = 0; i < Fin; ++i) {
          const T* xr = &xv[(n * Fin + i) * plane];
          if (dw) {
            T acc = 0;
            for (std::size_t p = 0; p < plane; ++p) acc += gr[p] * xr[p];
            (*dw)[o * Fin + i] += acc;
          }
          if (dx) {
            const T w = wv[o * Fin + i];
            T* dxr = &(*dx)[(n * Fin + i) * plane];
            for (std::size_t p = 0; p < plane; ++p) dxr[p] += w * gr[p];
          }
        }
      }
  });
}

// Batch normalization over axis 1 of a (N, F, ...) tensor. Train mode normalizes
// with the batch moments and folds them into `state` by exponential moving
// average; infer mode uses the running moments.
template <Real T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, BatchNormState<T>& state,
                  Mode mode, const BatchNormOptions& opt = {}) {
  const auto& xs = x.shape();
  if (xs.size() < 2) throw std::invalid_argument("batch_norm: input needs a channel axis");
  const std::size_t N = xs[0], F = xs[1];
  const std::size_t inner = shape_size(xs) / (N * F);
  require_extent(gamma.value().size(), F, "batch_norm gamma", "channel");
  require_extent(beta.value().size(), F, "batch_norm beta", "channel");
  require_extent(state.running_mean.size(), F, "batch_norm running mean", "channel");
  if (mode == Mode::Train && N < 2) {
    throw std::invalid_argument("batch_norm: train mode needs a batch of at least 2");
  }
  const std::size_t M = N * inner;
  const auto& xv = x.value();
  const auto& g = gamma.value();
  const auto& b = beta.value();

  std::vector<T> mean(F), invstd(F);
  if (mode == Mode::Train) {
    for (std::size_t f = 0; f < F; ++f) {
      double s = 0, ss = 0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* xr = &xv[(n * F + f) * inner];
        for (std::size_t p = 0; p < inner; ++p) s += xr[p];
      }
      const double mu = s / static_cast<double>(M);
      for (std::size_t n = 0; n < N; ++n) {
        const T* xr = &xv[(n * F + f) * inner];
        for (std::size_t p = 0; p < inner; ++p) ss += (xr[p] - mu) * (xr[p] - mu);
      }
      const double var = ss / static_cast<double>(M);
      mean[f] = static_cast<T>(mu);
      invstd[f] = static_cast<T>(1.0 / std::sqrt(var + opt.eps));
      const double unbiased = M > 1 ? var * static_cast<double>(M) / static_cast<double>(M - 1) : var;
      state.running_mean[f] =
          static_cast<T>(opt.momentum * state.running_mean[f] + (1.0 - opt.momentum) * mu);
      state.running_var[f] =
          static_cast<T>(opt.momentum * state.running_var[f] + (1.0 - opt.momentum) * unbiased);
    }
  } else {
    for (std::size_t f = 0; f < F; ++f) {
      mean[f] = state.running_mean[f];
      invstd[f] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(state.running_var[f]) + opt.eps));
    }
  }

  Tensor<T> xhat(xs);
  Tensor<T> y(xs);
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t f = 0; f < F; ++f) {
      const std::size_t base = (n * F + f) * inner;
      for (std::size_t p = 0; p < inner; ++p) {
        const T h = (xv[base + p] - mean[f]) * invstd[f];
        xhat[base + p] = h;
        y[base + p] = g[f] * h + b[f];
      }
    }

  const std::size_t xid = x.id(), gid = gamma.id(), bid = beta.id();
  const bool train = mode == Mode::Train;
  return x.tape().record(
      std::move(y), {xid, gid, bid},
      [=, xhat = std::move(xhat), invstd = std::move(invstd)](Tape<T>& tape, std::size_t self) {
        const auto& dy = tape.grad(self);
        const auto& g = tape.value(gid);
        Tensor<T>* dx = tape.grad_sink(xid);
        Tensor<T>* dg = tape.grad_sink(gid);
        Tensor<T>* db = tape.grad_sink(bid);
        for (std::size_t f = 0; f < F; ++f) {
          double sum_dy = 0, sum_dy_h = 0;
          for (std::size_t n = 0; n < N; ++n) {
            const std::size_t base = (n * F + f) * inner;
            for (std::size_t p = 0; p < inner; ++p) {
              sum_dy += dy[base + p];
              sum_dy_h += dy[base + p] * xhat[base + p];
            }
          }
          if (dg) (*dg)[f] += static_cast<T>(sum_dy_h);
          if (db) (*db)[f] += static_cast<T>(sum_dy);
          if (!dx) continue;
          const T scale = g[f] * invstd[f];
          if (train) {
            const T mdy = static_cast<T>(sum_dy / static_cast<double>(M));
            const T mdyh = static_cast<T>(sum_dy_h / static_cast<double>(M));
            for (std::size_t n = 0; n < N; ++n) {
              const std::size_t base = (n * F + f) * inner;
              for (std::size_t p = 0; p < inner; ++p)
                (*dx)[base + p] += scale * (dy[base + p] - mdy - xhat[base + p] * mdyh);
            }
          } else {
            for (std::size_t n = 0; n < N; ++n) {
              const std::size_t base = (n * F + f) * inner;
              for (std::size_t p = 0; p < inner; ++p) (*dx)[base + p] += scale * dy[base + p];
            }
          }
        }
      });
}

template <Real T>
Var<T> elu(const Var<T>& x) {
  Tensor<T> y(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = xv[i] > 0 ? xv[i] : std::expm1(xv[i]);
  const std::size_t xid = x.id();
  return x.tape().record(std::move(y), {xid}, [xid](Tape<T>& tape, std::size_t self) {
    Tensor<T>* dx = tape.grad_sink(xid);
    if (!dx) return;
    const auto& dy = tape.grad(self);
    const auto& xv = tape.value(xid);
    const auto& yv = tape.value(self);
    for (std::size_t i = 0; i < dy.size(); ++i) (*dx)[i] += dy[i] * (xv[i] > 0 ? T(1) : yv[i] + T(1));
  });
}

// Mean over non-overlapping windows of `pool` samples along the last axis; a
// trailing partial window is dropped.
template <Real T>
Var<T> avg_pool_time(const Var<T>& x, std::size_t pool) {
  if (pool < 1) throw std::invalid_argument("avg_pool_time: pool must be >= 1");
  const auto& xs = x.shape();
  if (xs.empty()) throw std::invalid_argument("avg_pool_time: scalar input");
  const std::size_t S = xs.back();
  const std::size_t Sout = S / pool;
  if (Sout == 0) {
    throw std::invalid_argument("avg_pool_time: pool " + std::to_string(pool) +
                                " exceeds time axis extent " + std::to_string(S));
  }
  const std::size_t rows = shape_size(xs) / S;
  Shape ys = xs;
  ys.back() = Sout;
  Tensor<T> y(ys);
  const auto& xv = x.value();
  const T inv = T(1) / static_cast<T>(pool);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 0; t < Sout; ++t) {
      T acc = 0;
      for (std::size_t k = 0; k < pool; ++k) acc += xv[r * S + t * pool + k];
      y[r * Sout + t] = acc * inv;
    }
  const std::size_t xid = x.id();
  return x.tape().record(std::move(y), {xid}, [=](Tape<T>& tape, std::size_t self) {
    Tensor<T>* dx = tape.grad_sink(xid);
    if (!dx) return;
    const auto& dy = tape.grad(self);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t t = 0; t < Sout; ++t) {
        const T g = dy[r * Sout + t] * inv;
        for (std::size_t k = 0; k < pool; ++k) (*dx)[r * S + t * pool + k] += g;
      }
  });
}

// Inverted dropout: survivors are scaled by 1/(1-rate). Identity in infer mode.
template <Real T>
Var<T> dropout(const Var<T>& x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw std::invalid_argument("dropout: rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (mode == Mode::Infer || rate == 0.0) return x;
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  Tensor<T> mask(x.shape());
  Tensor<T> y(x.shape());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < y.size(); ++i) {
    mask[i] = uniform01(rng) < rate ? T(0) : scale;
    y[i] = xv[i] * mask[i];
  }
  const std::size_t xid = x.id();
  return x.tape().record(std::move(y), {xid},
                         [xid, mask = std::move(mask)](Tape<T>& tape, std::size_t self) {
                           Tensor<T>* dx = tape.grad_sink(xid);
                           if (!dx) return;
                           const auto& dy = tape.grad(self);
                           for (std::size_t i = 0; i < dy.size(); ++i) (*dx)[i] += dy[i] * mask[i];
                         });
}

// x (N, D) times W (D, K) plus b (K).
template <Real T>
Var<T> dense(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  require_rank(x.shape(), 2, "dense input");
  require_rank(w.shape(), 2, "dense weights");
  const std::size_t N = x.shape()[0], D = x.shape()[1], K = w.shape()[1];
  require_extent(w.shape()[0], D, "dense weights", "input");
  require_extent(b.value().size(), K, "dense bias", "output");
  const auto& xv = x.value();
  const auto& wv = w.value();
  const auto& bv = b.value();
  Tensor<T> y(Shape{N, K});
  for (std::size_t n = 0; n < N; ++n) {
    T* yr = &y[n * K];
    for (std::size_t k = 0; k < K; ++k) yr[k] = bv[k];
    for (std::size_t i = 0; i < D; ++i) {
      const T xi = xv[n * D + i];
      const T* wr = &wv[i * K];
      for (std::size_t k = 0; k < K; ++k) yr[k] += xi * wr[k];
    }
  }
  const std::size_t xid = x.id(), wid = w.id(), bid = b.id();
  return x.tape().record(std::move(y), {xid, wid, bid}, [=](Tape<T>& tape, std::size_t self) {
    const auto& dy = tape.grad(self);
    const auto& xv = tape.value(xid);
    const auto& wv = tape.value(wid);
    Tensor<T>* dx = tape.grad_sink(xid);
    Tensor<T>* dw = tape.grad_sink(wid);
    Tensor<T>* db = tape.grad_sink(bid);
    for (std::size_t n = 0; n < N; ++n) {
      const T* gr = &dy[n * K];
      if (db)
        for (std::size_t k = 0; k < K; ++k) (*db)[k] += gr[k];
      for (std::size_t i = 0; i < D; ++i) {
        const T* wr = &wv[i * K];
        if (dw) {
          const T xi = xv[n * D + i];
          for (std::size_t k = 0; k < K; ++k) (*dw)[i * K + k] += xi * gr[k];
        }
        if (dx) {
          T acc = 0;
          for (std::size_t k = 0; k < K; ++k) acc += wr[k] * gr[k];
          (*dx)[n * D + i] += acc;
        }
      }
    }
  });
}

template <Real T>
Var<T> softmax_rows(const Var<T>& x) {
  require_rank(x.shape(), 2, "softmax_rows input");
  const std::size_t N = x.shape()[0], K = x.shape()[1];
  const auto& xv = x.value();
  Tensor<T> y(x.shape());
  for (std::size_t n = 0; n < N; ++n) {
    const T* xr = &xv[n * K];
    const T mx = *std::max_element(xr, xr + K);
    T z = 0;
    for (std::size_t k = 0; k < K; ++k) z += (y[n * K + k] = std::exp(xr[k] - mx));
    for (std::size_t k = 0; k < K; ++k) y[n * K + k] /= z;
  }
  const std::size_t xid = x.id();
  return x.tape().record(std::move(y), {xid}, [=](Tape<T>& tape, std::size_t self) {
    Tensor<T>* dx = tape.grad_sink(xid);
    if (!dx) return;
    const auto& dy = tape.grad(self);
    const auto& yv = tape.value(self);
    for (std::size_t n = 0; n < N; ++n) {
      T dot = 0;
      for (std::size_t k = 0; k < K; ++k) dot += dy[n * K + k] * yv[n * K + k];
      for (std::size_t k = 0; k < K; ++k) (*dx)[n * K + k] += yv[n * K + k] * (dy[n * K + k] - dot);
    }
  });
}

template <Real T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("add: shapes " + shape_string(a.shape()) + " and " +
                                shape_string(b.shape()) + " differ");
  }
  Tensor<T> y = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  const std::size_t aid = a.id(), bid = b.id();
  return a.tape().record(std::move(y), {aid, bid}, [=](Tape<T>& tape, std::size_t self) {
    const auto& dy = tape.grad(self);
    detail::add_into(tape.grad_sink(aid), dy);
    detail::add_into(tape.grad_sink(bid), dy);
  });
}

// Concatenation of 4-D tensors along the filter axis.
template <Real T>
Var<T> concat_filters(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_filters: no inputs");
  const Shape first = parts.front().shape();
  require_rank(first, 4, "concat_filters input");
  std::size_t F = 0;
  for (const auto& p : parts) {
    require_rank(p.shape(), 4, "concat_filters input");
    require_extent(p.shape()[0], first[0], "concat_filters", "batch");
    require_extent(p.shape()[2], first[2], "concat_filters", "electrode");
    require_extent(p.shape()[3], first[3], "concat_filters", "time");
    F += p.shape()[1];
  }
  const std::size_t N = first[0], plane = first[2] * first[3];
  Tensor<T> y(Shape{N, F, first[2], first[3]});
  std::vector<std::size_t> ids, offsets, widths;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[1];
    const auto& pv = p.value();
    for (std::size_t n = 0; n < N; ++n)
      std::copy_n(&pv[n * w * plane], w * plane, &y[(n * F + off) * plane]);
    ids.push_back(p.id());
    offsets.push_back(off);
    widths.push_back(w);
    off += w;
  }
  return parts.front().tape().record(std::move(y), ids, [=](Tape<T>& tape, std::size_t self) {
    const auto& dy = tape.grad(self);
    for (std::size_t j = 0; j < ids.size(); ++j) {
      Tensor<T>* dp = tape.grad_sink(ids[j]);
      if (!dp) continue;
      for (std::size_t n = 0; n < N; ++n) {
        const T* src = &dy[(n * F + offsets[j]) * plane];
        T* dst = &(*dp)[n * widths[j] * plane];
        for (std::size_t i = 0; i < widths[j] * plane; ++i) dst[i] += src[i];
      }
    }
  });
}

// (N, ...) -> (N, prod(...)) in row-major order.
template <Real T>
Var<T> flatten(const Var<T>& x) {
  const auto& xs = x.shape();
  if (xs.empty()) throw std::invalid_argument("flatten: scalar input");
  Tensor<T> y = x.value();
  y.reshape(Shape{xs[0], shape_size(xs) / xs[0]});
  const std::size_t xid = x.id();
  return x.tape().record(std::move(y), {xid}, [xid](Tape<T>& tape, std::size_t self) {
    detail::add_into(tape.grad_sink(xid), tape.grad(self));
  });
}

// Mean negative log-likelihood of integer labels under row probabilities,
// with probabilities clipped to [eps, 1 - eps].
template <Real T>
Var<T> nll_loss(const Var<T>& probs, const std::vector<std::uint32_t>& labels, double eps = 1e-7) {
  require_rank(probs.shape(), 2, "nll_loss probabilities");
  const std::size_t N = probs.shape()[0], K = probs.shape()[1];
  require_extent(labels.size(), N, "nll_loss labels", "batch");
  const auto& pv = probs.value();
  double loss = 0;
  for (std::size_t n = 0; n < N; ++n) {
    if (labels[n] >= K) throw std::invalid_argument("nll_loss: label out of range");
    const double p = std::clamp<double>(pv[n * K + labels[n]], eps, 1.0 - eps);
    loss -= std::log(p);
  }
  Tensor<T> y(Shape{1}, static_cast<T>(loss / static_cast<double>(N)));
  const std::size_t pid = probs.id();
  return probs.tape().record(std::move(y), {pid}, [=](Tape<T>& tape, std::size_t self) {
    Tensor<T>* dp = tape.grad_sink(pid);
    if (!dp) return;
    const T g = tape.grad(self)[0];
    const auto& pv = tape.value(pid);
    for (std::size_t n = 0; n < N; ++n) {
      const double p = pv[n * K + labels[n]];
      if (p <= eps || p >= 1.0 - eps) continue;
      (*dp)[n * K + labels[n]] -= static_cast<T>(g / (static_cast<double>(N) * p));
    }
  });
}

template <Real T>
Var<T> sum_squares(const Var<T>& x) {
  const auto& xv = x.value();
  T s = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i] * xv[i];
  const std::size_t xid = x.id();
  return x.tape().record(Tensor<T>(Shape{1}, s), {xid}, [xid](Tape<T>& tape, std::size_t self) {
    Tensor<T>* dx = tape.grad_sink(xid);
    if (!dx) return;
    const T g = tape.grad(self)[0];
    const auto& xv = tape.value(xid);
    for (std::size_t i = 0; i < xv.size(); ++i) (*dx)[i] += 2 * g * xv[i];
  });
}

// sum(x * weights) for a fixed weight tensor of the same shape.
template <Real T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& weights) {
  if (x.shape() != weights.shape()) {
    throw std::invalid_argument("weighted_sum: shapes " + shape_string(x.shape()) + " and " +
                                shape_string(weights.shape()) + " differ");
  }
  const auto& xv = x.value();
  T s = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i] * weights[i];
  const std::size_t xid = x.id();
  return x.tape().record(Tensor<T>(Shape{1}, s), {xid}, [xid, weights](Tape<T>& tape, std::size_t self) {
    Tensor<T>* dx = tape.grad_sink(xid);
    if (!dx) return;
    const T g = tape.grad(self)[0];
    for (std::size_t i = 0; i < weights.size(); ++i) (*dx)[i] += g * weights[i];
  });
}

}  // namespace itnet
