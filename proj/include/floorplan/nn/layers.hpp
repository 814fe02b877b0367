#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "floorplan/errors.hpp"
#include "floorplan/nn/tensor.hpp"

// Per-sample layer primitives with hand-written backward passes. Backward
// functions accumulate (+=) into parameter gradients and overwrite input
// gradients.
namespace floorplan::nn {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

// Column matrix for a same-padded k x k convolution: row (ci*k + ky)*k + kx,
// column y*W + x.
template <typename T>
void im2col(const FeatureMap<T>& x, int k, std::vector<T>& col) {
  const int pad = k / 2, h = x.height, w = x.width;
  const std::size_t hw = x.plane();
  col.assign(static_cast<std::size_t>(x.channels) * k * k * hw, T{});
  for (int ci = 0; ci < x.channels; ++ci) {
    const T* src = x.channel(ci);
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* dst = col.data() + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * hw;
        const int dx = kx - pad;
        const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          const T* s = src + static_cast<std::size_t>(sy) * w + dx;
          T* d = dst + static_cast<std::size_t>(y) * w;
          for (int xx = x0; xx < x1; ++xx) d[xx] = s[xx];
        }
      }
  }
}

template <typename T>
void col2im_add(const std::vector<T>& col, int k, FeatureMap<T>& dx) {
  const int pad = k / 2, h = dx.height, w = dx.width;
  const std::size_t hw = dx.plane();
  for (int ci = 0; ci < dx.channels; ++ci) {
    T* dst = dx.channel(ci);
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* src = col.data() + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * hw;
        const int ox = kx - pad;
        const int x0 = std::max(0, -ox), x1 = std::min(w, w - ox);
        for (int y = 0; y < h; ++y) {
          const int sy = y + ky - pad;
          if (sy < 0 || sy >= h) continue;
          T* d = dst + static_cast<std::size_t>(sy) * w + ox;
          const T* s = src + static_cast<std::size_t>(y) * w;
          for (int xx = x0; xx < x1; ++xx) d[xx] += s[xx];
        }
      }
  }
}

// weight: [out, in, k, k]; bias may be null.
template <typename T>
FeatureMap<T> conv2d(const FeatureMap<T>& x, const Tensor<T>& weight, const Tensor<T>* bias) {
  const int out_c = weight.shape[0], in_c = weight.shape[1], k = weight.shape[2];
  if (in_c != x.channels)
    throw DimensionError("conv " + weight.name + " expects " + std::to_string(in_c) +
                         " input channels, got " + std::to_string(x.channels));
  FeatureMap<T> y(out_c, x.height, x.width);
  const auto hw = static_cast<Eigen::Index>(x.plane());
  ConstMatMap<T> wm(weight.data.data(), out_c, static_cast<Eigen::Index>(in_c) * k * k);
  MatMap<T> ym(y.data.data(), out_c, hw);
  if (k == 1) {
    ym.noalias() = wm * ConstMatMap<T>(x.data.data(), in_c, hw);
  } else {
    std::vector<T> col;
    im2col(x, k, col);
    ym.noalias() = wm * ConstMatMap<T>(col.data(), static_cast<Eigen::Index>(in_c) * k * k, hw);
  }
  if (bias)
    for (int c = 0; c < out_c; ++c) {
      const T b = bias->data[c];
      T* p = y.channel(c);
      for (Eigen::Index i = 0; i < hw; ++i) p[i] += b;
    }
  return y;
}

template <typename T>
FeatureMap<T> conv2d_backward(const FeatureMap<T>& x, const Tensor<T>& weight,
                              const FeatureMap<T>& dy, Tensor<T>& dweight, Tensor<T>* dbias) {
  const int out_c = weight.shape[0], in_c = weight.shape[1], k = weight.shape[2];
  const auto hw = static_cast<Eigen::Index>(x.plane());
  const auto rows = static_cast<Eigen::Index>(in_c) * k * k;
  ConstMatMap<T> wm(weight.data.data(), out_c, rows);
  ConstMatMap<T> dym(dy.data.data(), out_c, hw);
  MatMap<T> dwm(dweight.data.data(), out_c, rows);
  if (dbias)
    for (int c = 0; c < out_c; ++c) {
      const T* p = dy.channel(c);
      T s{};
      for (Eigen::Index i = 0; i < hw; ++i) s += p[i];
      dbias->data[c] += s;
    }
  FeatureMap<T> dx(in_c, x.height, x.width);
  if (k == 1) {
    dwm.noalias() += dym * ConstMatMap<T>(x.data.data(), in_c, hw).transpose();
    MatMap<T>(dx.data.data(), in_c, hw).noalias() = wm.transpose() * dym;
  } else {
    std::vector<T> col;
    im2col(x, k, col);
    dwm.noalias() += dym * ConstMatMap<T>(col.data(), rows, hw).transpose();
    MatMap<T>(col.data(), rows, hw).noalias() = wm.transpose() * dym;
    col2im_add(col, k, dx);
  }
  return dx;
}

// Largest divisor of `channels` not exceeding `groups`.
inline int effective_groups(int channels, int groups) {
  for (int g = std::min(groups, channels); g > 1; --g)
    if (channels % g == 0) return g;
  return 1;
}

template <typename T>
struct GroupNormCache {
  FeatureMap<T> normalized;
  std::vector<T> inv_std;  // per group
};

inline constexpr double kNormEpsilon = 1e-5;

template <typename T>
FeatureMap<T> group_norm(const FeatureMap<T>& x, const Tensor<T>& scale, const Tensor<T>& shift,
                         int groups, GroupNormCache<T>* cache) {
  const int g = effective_groups(x.channels, groups);
  const int per = x.channels / g;
  const std::size_t m = static_cast<std::size_t>(per) * x.plane();
  FeatureMap<T> y(x.channels, x.height, x.width);
  FeatureMap<T> xhat(x.channels, x.height, x.width);
  std::vector<T> inv_std(g);
  for (int gi = 0; gi < g; ++gi) {
    const T* src = x.data.data() + gi * m;
    double mean = 0.0;
    for (std::size_t i = 0; i < m; ++i) mean += static_cast<double>(src[i]);
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      const double d = static_cast<double>(src[i]) - mean;
      var += d * d;
    }
    var /= static_cast<double>(m);
    const T rstd = static_cast<T>(1.0 / std::sqrt(var + kNormEpsilon));
    inv_std[gi] = rstd;
    T* xh = xhat.data.data() + gi * m;
    const T mu = static_cast<T>(mean);
    for (std::size_t i = 0; i < m; ++i) xh[i] = (src[i] - mu) * rstd;
  }
  const std::size_t hw = x.plane();
  for (int c = 0; c < x.channels; ++c) {
    const T a = scale.data[c], b = shift.data[c];
    const T* xh = xhat.channel(c);
    T* out = y.channel(c);
    for (std::size_t i = 0; i < hw; ++i) out[i] = a * xh[i] + b;
  }
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename T>
FeatureMap<T> group_norm_backward(const GroupNormCache<T>& cache, const Tensor<T>& scale,
                                  const FeatureMap<T>& dy, Tensor<T>& dscale, Tensor<T>& dshift) {
  const auto& xhat = cache.normalized;
  const int g = static_cast<int>(cache.inv_std.size());
  const int per = xhat.channels / g;
  const std::size_t hw = xhat.plane();
  const std::size_t m = static_cast<std::size_t>(per) * hw;
  FeatureMap<T> dx(xhat.channels, xhat.height, xhat.width);
  // dxhat stored in dx first.
  for (int c = 0; c < xhat.channels; ++c) {
    const T* d = dy.channel(c);
    const T* xh = xhat.channel(c);
    T* out = dx.channel(c);
    T sg{}, sb{};
    for (std::size_t i = 0; i < hw; ++i) {
      sg += d[i] * xh[i];
      sb += d[i];
      out[i] = d[i] * scale.data[c];
    }
    dscale.data[c] += sg;
    dshift.data[c] += sb;
  }
  for (int gi = 0; gi < g; ++gi) {
    T* d = dx.data.data() + gi * m;
    const T* xh = xhat.data.data() + gi * m;
    T mean_d{}, mean_dx{};
    for (std::size_t i = 0; i < m; ++i) {
      mean_d += d[i];
      mean_dx += d[i] * xh[i];
    }
    mean_d /= static_cast<T>(m);
    mean_dx /= static_cast<T>(m);
    const T rstd = cache.inv_std[gi];
    for (std::size_t i = 0; i < m; ++i) d[i] = rstd * (d[i] - mean_d - xh[i] * mean_dx);
  }
  return dx;
}

template <typename T>
void relu_inplace(FeatureMap<T>& x) {
  for (auto& v : x.data) v = v > T{} ? v : T{};
}

// Gradient through a rectifier given its output.
template <typename T>
void relu_backward_inplace(const FeatureMap<T>& y, FeatureMap<T>& dy) {
  for (std::size_t i = 0; i < dy.size(); ++i)
    if (!(y.data[i] > T{})) dy.data[i] = T{};
}

// 2x2 stride-2 max pooling; ties go to the first element in scan order.
template <typename T>
FeatureMap<T> max_pool2(const FeatureMap<T>& x, std::vector<int>* argmax) {
  if (x.height % 2 || x.width % 2) throw DimensionError("max_pool2 needs even dimensions");
  const int h = x.height / 2, w = x.width / 2;
  FeatureMap<T> y(x.channels, h, w);
  if (argmax) argmax->assign(y.size(), 0);
  for (int c = 0; c < x.channels; ++c)
    for (int r = 0; r < h; ++r)
      for (int q = 0; q < w; ++q) {
        int best = 0;
        T bv = x.at(c, 2 * r, 2 * q);
        for (int t = 1; t < 4; ++t) {
          const T v = x.at(c, 2 * r + t / 2, 2 * q + t % 2);
          if (v > bv) {
            bv = v;
            best = t;
          }
        }
        const std::size_t o = c * y.plane() + static_cast<std::size_t>(r) * w + q;
        y.data[o] = bv;
        if (argmax) (*argmax)[o] = best;
      }
  return y;
}

template <typename T>
FeatureMap<T> max_pool2_backward(const FeatureMap<T>& dy, const std::vector<int>& argmax) {
  FeatureMap<T> dx(dy.channels, dy.height * 2, dy.width * 2);
  for (int c = 0; c < dy.channels; ++c)
    for (int r = 0; r < dy.height; ++r)
      for (int q = 0; q < dy.width; ++q) {
        const std::size_t o = c * dy.plane() + static_cast<std::size_t>(r) * dy.width + q;
        const int t = argmax[o];
        dx.at(c, 2 * r + t / 2, 2 * q + t % 2) = dy.data[o];
      }
  return dx;
}

template <typename T>
FeatureMap<T> upsample2(const FeatureMap<T>& x) {
  FeatureMap<T> y(x.channels, x.height * 2, x.width * 2);
  for (int c = 0; c < x.channels; ++c)
    for (int r = 0; r < y.height; ++r)
      for (int q = 0; q < y.width; ++q) y.at(c, r, q) = x.at(c, r / 2, q / 2);
  return y;
}

template <typename T>
FeatureMap<T> upsample2_backward(const FeatureMap<T>& dy) {
  FeatureMap<T> dx(dy.channels, dy.height / 2, dy.width / 2);
  for (int c = 0; c < dy.channels; ++c)
    for (int r = 0; r < dy.height; ++r)
      for (int q = 0; q < dy.width; ++q) dx.at(c, r / 2, q / 2) += dy.at(c, r, q);
  return dx;
}

template <typename T>
FeatureMap<T> concat_channels(std::initializer_list<const FeatureMap<T>*> parts) {
  const auto* first = *parts.begin();
  int total = 0;
  for (const auto* p : parts) {
    if (p->height != first->height || p->width != first->width)
      throw DimensionError("concat of maps with different spatial size");
    total += p->channels;
  }
  FeatureMap<T> y(total, first->height, first->width);
  auto it = y.data.begin();
  for (const auto* p : parts) it = std::copy(p->data.begin(), p->data.end(), it);
  return y;
}

template <typename T>
FeatureMap<T> slice_channels(const FeatureMap<T>& x, int begin, int count) {
  FeatureMap<T> y(count, x.height, x.width);
  std::copy(x.channel(begin), x.channel(begin) + y.size(), y.data.begin());
  return y;
}

// Per-pixel softmax over channels.
template <typename T>
FeatureMap<T> softmax_channels(const FeatureMap<T>& logits) {
  FeatureMap<T> p(logits.channels, logits.height, logits.width);
  const std::size_t hw = logits.plane();
  for (std::size_t i = 0; i < hw; ++i) {
    T mx = logits.data[i];
    for (int c = 1; c < logits.channels; ++c) mx = std::max(mx, logits.data[c * hw + i]);
    T sum{};
    for (int c = 0; c < logits.channels; ++c) {
      const T e = std::exp(logits.data[c * hw + i] - mx);
      p.data[c * hw + i] = e;
      sum += e;
    }
    for (int c = 0; c < logits.channels; ++c) p.data[c * hw + i] /= sum;
  }
  return p;
}

}  // namespace floorplan::nn
