#pragma once

#include <Eigen/Core>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "stad/rng.hpp"
#include "stad/tensor.hpp"

namespace stad {

template <typename T>
struct ParamRef {
  std::string name;
  Tensor<T>* value;
  Tensor<T>* grad;
};

template <typename T>
using MatX = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace init {

template <typename T>
void xavier_uniform(Tensor<T>& w, int fan_in, int fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  for (auto& v : w.data) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
void normal(Tensor<T>& w, double stddev, Rng& rng) {
  for (auto& v : w.data) v = static_cast<T>(rng.normal(0.0, stddev));
}

}  // namespace init

// 3D convolution over [C, T, H, W] input, weights flattened to
// [cout, cin*kt*kh*kw]. Forward caches the im2col matrix on a stack so the
// same layer instance can run several times per step (shared heads); backward
// must pop in reverse order.
template <typename T>
class Conv3d {
 public:
  Conv3d() = default;
  Conv3d(int cin, int cout, int kt, int kh, int kw, int st, int sh, int sw, int pt, int ph, int pw)
      : cin_(cin), cout_(cout), kt_(kt), kh_(kh), kw_(kw), st_(st), sh_(sh), sw_(sw), pt_(pt),
        ph_(ph), pw_(pw) {
    const int k = cin * kt * kh * kw;
    w.resize({cout, k});
    b.resize({cout});
    gw.resize({cout, k});
    gb.resize({cout});
  }

  void init_xavier(Rng& rng) {
    init::xavier_uniform(w, cin_ * kt_ * kh_ * kw_, cout_, rng);
    b.zero();
  }
  void init_head(Rng& rng, double stddev, double bias_value) {
    init::normal(w, stddev, rng);
    b.fill(static_cast<T>(bias_value));
  }

  Tensor<T> forward(const Tensor<T>& x, bool keep_cache) {
    if (x.ndim() != 4 || x.dim(0) != cin_)
      throw std::invalid_argument("conv3d: bad input shape " + shape_str(x.shape));
    const int ti = x.dim(1), hi = x.dim(2), wi = x.dim(3);
    const int to = (ti + 2 * pt_ - kt_) / st_ + 1;
    const int ho = (hi + 2 * ph_ - kh_) / sh_ + 1;
    const int wo = (wi + 2 * pw_ - kw_) / sw_ + 1;
    if (to <= 0 || ho <= 0 || wo <= 0) throw std::invalid_argument("conv3d: input too small");
    const int k = cin_ * kt_ * kh_ * kw_;
    const std::size_t n = static_cast<std::size_t>(to) * ho * wo;

    Cache cache;
    cache.in_shape = x.shape;
    cache.out_t = to;
    cache.out_h = ho;
    cache.out_w = wo;
    cache.col.assign(static_cast<std::size_t>(k) * n, T(0));
    im2col(x.ptr(), ti, hi, wi, to, ho, wo, cache.col.data());

    Tensor<T> y({cout_, to, ho, wo});
    Eigen::Map<const MatX<T>> wm(w.ptr(), cout_, k);
    Eigen::Map<const MatX<T>> cm(cache.col.data(), k, static_cast<Eigen::Index>(n));
    Eigen::Map<MatX<T>> ym(y.ptr(), cout_, static_cast<Eigen::Index>(n));
    ym.noalias() = wm * cm;
    for (int c = 0; c < cout_; ++c) ym.row(c).array() += b[static_cast<std::size_t>(c)];

    if (keep_cache) stack_.push_back(std::move(cache));
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    if (stack_.empty()) throw std::logic_error("conv3d: backward without cached forward");
    Cache cache = std::move(stack_.back());
    stack_.pop_back();
    const int k = cin_ * kt_ * kh_ * kw_;
    const std::size_t n = static_cast<std::size_t>(cache.out_t) * cache.out_h * cache.out_w;

    Eigen::Map<const MatX<T>> dym(dy.ptr(), cout_, static_cast<Eigen::Index>(n));
    Eigen::Map<const MatX<T>> cm(cache.col.data(), k, static_cast<Eigen::Index>(n));
    Eigen::Map<MatX<T>> gwm(gw.ptr(), cout_, k);
    gwm.noalias() += dym * cm.transpose();
    for (int c = 0; c < cout_; ++c) gb[static_cast<std::size_t>(c)] += dym.row(c).sum();

    AlignedVec<T> dcol(static_cast<std::size_t>(k) * n);
    Eigen::Map<const MatX<T>> wm(w.ptr(), cout_, k);
    Eigen::Map<MatX<T>> dcm(dcol.data(), k, static_cast<Eigen::Index>(n));
    dcm.noalias() = wm.transpose() * dym;

    Tensor<T> dx(cache.in_shape);
    col2im(dcol.data(), cache.in_shape[1], cache.in_shape[2], cache.in_shape[3], cache.out_t,
           cache.out_h, cache.out_w, dx.ptr());
    return dx;
  }

  void clear_cache() { stack_.clear(); }
  void zero_grad() {
    gw.zero();
    gb.zero();
  }
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    out.push_back({prefix + ".weight", &w, &gw});
    out.push_back({prefix + ".bias", &b, &gb});
  }

  Tensor<T> w, b, gw, gb;

 private:
  struct Cache {
    std::vector<int> in_shape;
    int out_t = 0, out_h = 0, out_w = 0;
    AlignedVec<T> col;
  };

  void im2col(const T* x, int ti, int hi, int wi, int to, int ho, int wo, T* col) const {
    const std::size_t n = static_cast<std::size_t>(to) * ho * wo;
    std::size_t row = 0;
    for (int ci = 0; ci < cin_; ++ci) {
      const T* xc = x + static_cast<std::size_t>(ci) * ti * hi * wi;
      for (int dt = 0; dt < kt_; ++dt) {
        for (int dy = 0; dy < kh_; ++dy) {
          for (int dx = 0; dx < kw_; ++dx, ++row) {
            T* dst = col + row * n;
            for (int t = 0; t < to; ++t) {
              const int it = t * st_ - pt_ + dt;
              if (it < 0 || it >= ti) {
                dst += static_cast<std::size_t>(ho) * wo;
                continue;
              }
              const T* xt = xc + static_cast<std::size_t>(it) * hi * wi;
              for (int y = 0; y < ho; ++y) {
                const int iy = y * sh_ - ph_ + dy;
                if (iy < 0 || iy >= hi) {
                  dst += wo;
                  continue;
                }
                const T* xr = xt + static_cast<std::size_t>(iy) * wi;
                for (int xo = 0; xo < wo; ++xo, ++dst) {
                  const int ix = xo * sw_ - pw_ + dx;
                  *dst = (ix >= 0 && ix < wi) ? xr[ix] : T(0);
                }
              }
            }
          }
        }
      }
    }
  }

  void col2im(const T* col, int ti, int hi, int wi, int to, int ho, int wo, T* dx) const {
    const std::size_t n = static_cast<std::size_t>(to) * ho * wo;
    std::size_t row = 0;
    for (int ci = 0; ci < cin_; ++ci) {
      T* xc = dx + static_cast<std::size_t>(ci) * ti * hi * wi;
      for (int dt = 0; dt < kt_; ++dt) {
        for (int dy = 0; dy < kh_; ++dy) {
          for (int dx_ = 0; dx_ < kw_; ++dx_, ++row) {
            const T* src = col + row * n;
            for (int t = 0; t < to; ++t) {
              const int it = t * st_ - pt_ + dt;
              if (it < 0 || it >= ti) {
                src += static_cast<std::size_t>(ho) * wo;
                continue;
              }
              T* xt = xc + static_cast<std::size_t>(it) * hi * wi;
              for (int y = 0; y < ho; ++y) {
                const int iy = y * sh_ - ph_ + dy;
                if (iy < 0 || iy >= hi) {
                  src += wo;
                  continue;
                }
                T* xr = xt + static_cast<std::size_t>(iy) * wi;
                for (int xo = 0; xo < wo; ++xo, ++src) {
                  const int ix = xo * sw_ - pw_ + dx_;
                  if (ix >= 0 && ix < wi) xr[ix] += *src;
                }
              }
            }
          }
        }
      }
    }
  }

  int cin_ = 0, cout_ = 0;
  int kt_ = 1, kh_ = 1, kw_ = 1;
  int st_ = 1, sh_ = 1, sw_ = 1;
  int pt_ = 0, ph_ = 0, pw_ = 0;
  std::vector<Cache> stack_;
};

// 2D convolution over [C, H, W]; delegates to Conv3d with a unit time axis.
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int cin, int cout, int k, int stride, int pad)
      : impl_(cin, cout, 1, k, k, 1, stride, stride, 0, pad, pad) {}

  Tensor<T> forward(const Tensor<T>& x, bool keep_cache) {
    Tensor<T> x3;
    x3.shape = {x.dim(0), 1, x.dim(1), x.dim(2)};
    x3.data = x.data;
    Tensor<T> y3 = impl_.forward(x3, keep_cache);
    Tensor<T> y;
    y.shape = {y3.dim(0), y3.dim(2), y3.dim(3)};
    y.data = std::move(y3.data);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    Tensor<T> dy3;
    dy3.shape = {dy.dim(0), 1, dy.dim(1), dy.dim(2)};
    dy3.data = dy.data;
    Tensor<T> dx3 = impl_.backward(dy3);
    Tensor<T> dx;
    dx.shape = {dx3.dim(0), dx3.dim(2), dx3.dim(3)};
    dx.data = std::move(dx3.data);
    return dx;
  }

  void init_xavier(Rng& rng) { impl_.init_xavier(rng); }
  void init_head(Rng& rng, double stddev, double bias) { impl_.init_head(rng, stddev, bias); }
  void clear_cache() { impl_.clear_cache(); }
  void zero_grad() { impl_.zero_grad(); }
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    impl_.collect(prefix, out);
  }
  Tensor<T>& weight() { return impl_.w; }
  Tensor<T>& bias() { return impl_.b; }

 private:
  Conv3d<T> impl_;
};

// Channel group normalization over all non-channel axes. No running
// statistics, so inference equals training and results do not depend on the
// batch composition.
template <typename T>
class GroupNorm {
 public:
  GroupNorm() = default;
  GroupNorm(int channels, int groups, double eps = 1e-5)
      : channels_(channels), groups_(groups), eps_(eps) {
    if (channels % groups != 0) throw std::invalid_argument("groupnorm: groups must divide channels");
    gamma.resize({channels});
    beta.resize({channels});
    gamma.fill(T(1));
    ggamma.resize({channels});
    gbeta.resize({channels});
  }

  Tensor<T> forward(const Tensor<T>& x, bool keep_cache) {
    if (x.dim(0) != channels_) throw std::invalid_argument("groupnorm: channel mismatch");
    const std::size_t spatial = x.numel() / static_cast<std::size_t>(channels_);
    const int cpg = channels_ / groups_;
    const std::size_t gsize = static_cast<std::size_t>(cpg) * spatial;

    Cache cache;
    cache.shape = x.shape;
    cache.xhat.resize(x.numel());
    cache.inv_std.resize(static_cast<std::size_t>(groups_));

    Tensor<T> y(x.shape);
    for (int g = 0; g < groups_; ++g) {
      const T* xg = x.ptr() + static_cast<std::size_t>(g) * gsize;
      double mean = 0.0;
      for (std::size_t i = 0; i < gsize; ++i) mean += static_cast<double>(xg[i]);
      mean /= static_cast<double>(gsize);
      double var = 0.0;
      for (std::size_t i = 0; i < gsize; ++i) {
        const double d = static_cast<double>(xg[i]) - mean;
        var += d * d;
      }
      var /= static_cast<double>(gsize);
      const double inv = 1.0 / std::sqrt(var + eps_);
      cache.inv_std[static_cast<std::size_t>(g)] = inv;
      for (int c = 0; c < cpg; ++c) {
        const int ch = g * cpg + c;
        const T* xr = xg + static_cast<std::size_t>(c) * spatial;
        T* xh = cache.xhat.data() + static_cast<std::size_t>(ch) * spatial;
        T* yr = y.ptr() + static_cast<std::size_t>(ch) * spatial;
        const T gm = gamma[static_cast<std::size_t>(ch)];
        const T bt = beta[static_cast<std::size_t>(ch)];
        for (std::size_t i = 0; i < spatial; ++i) {
          const T v = static_cast<T>((static_cast<double>(xr[i]) - mean) * inv);
          xh[i] = v;
          yr[i] = gm * v + bt;
        }
      }
    }
    if (keep_cache) stack_.push_back(std::move(cache));
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    if (stack_.empty()) throw std::logic_error("groupnorm: backward without cached forward");
    Cache cache = std::move(stack_.back());
    stack_.pop_back();
    const std::size_t spatial = dy.numel() / static_cast<std::size_t>(channels_);
    const int cpg = channels_ / groups_;
    const std::size_t gsize = static_cast<std::size_t>(cpg) * spatial;

    Tensor<T> dx(cache.shape);
    for (int ch = 0; ch < channels_; ++ch) {
      const T* dyr = dy.ptr() + static_cast<std::size_t>(ch) * spatial;
      const T* xh = cache.xhat.data() + static_cast<std::size_t>(ch) * spatial;
      double dg = 0.0, db = 0.0;
      for (std::size_t i = 0; i < spatial; ++i) {
        dg += static_cast<double>(dyr[i]) * static_cast<double>(xh[i]);
        db += static_cast<double>(dyr[i]);
      }
      ggamma[static_cast<std::size_t>(ch)] += static_cast<T>(dg);
      gbeta[static_cast<std::size_t>(ch)] += static_cast<T>(db);
    }
    for (int g = 0; g < groups_; ++g) {
      double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
      for (int c = 0; c < cpg; ++c) {
        const int ch = g * cpg + c;
        const T* dyr = dy.ptr() + static_cast<std::size_t>(ch) * spatial;
        const T* xh = cache.xhat.data() + static_cast<std::size_t>(ch) * spatial;
        const double gm = static_cast<double>(gamma[static_cast<std::size_t>(ch)]);
        for (std::size_t i = 0; i < spatial; ++i) {
          const double dxh = static_cast<double>(dyr[i]) * gm;
          sum_dxhat += dxh;
          sum_dxhat_xhat += dxh * static_cast<double>(xh[i]);
        }
      }
      const double inv = cache.inv_std[static_cast<std::size_t>(g)];
      const double n = static_cast<double>(gsize);
      for (int c = 0; c < cpg; ++c) {
        const int ch = g * cpg + c;
        const T* dyr = dy.ptr() + static_cast<std::size_t>(ch) * spatial;
        const T* xh = cache.xhat.data() + static_cast<std::size_t>(ch) * spatial;
        T* dxr = dx.ptr() + static_cast<std::size_t>(ch) * spatial;
        const double gm = static_cast<double>(gamma[static_cast<std::size_t>(ch)]);
        for (std::size_t i = 0; i < spatial; ++i) {
          const double dxh = static_cast<double>(dyr[i]) * gm;
          dxr[i] = static_cast<T>(
              inv / n * (n * dxh - sum_dxhat - static_cast<double>(xh[i]) * sum_dxhat_xhat));
        }
      }
    }
    return dx;
  }

  void clear_cache() { stack_.clear(); }
  void zero_grad() {
    ggamma.zero();
    gbeta.zero();
  }
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    out.push_back({prefix + ".gamma", &gamma, &ggamma});
    out.push_back({prefix + ".beta", &beta, &gbeta});
  }

  Tensor<T> gamma, beta, ggamma, gbeta;

 private:
  struct Cache {
    std::vector<int> shape;
    std::vector<T> xhat;
    std::vector<double> inv_std;
  };
  int channels_ = 0, groups_ = 1;
  double eps_ = 1e-5;
  std::vector<Cache> stack_;
};

template <typename T>
class ReLU {
 public:
  Tensor<T> forward(const Tensor<T>& x, bool keep_cache) {
    Tensor<T> y(x.shape);
    std::vector<char> mask(x.numel());
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const bool pos = x[i] > T(0);
      mask[i] = pos;
      y[i] = pos ? x[i] : T(0);
    }
    if (keep_cache) stack_.push_back(std::move(mask));
    return y;
  }
  Tensor<T> backward(const Tensor<T>& dy) {
    if (stack_.empty()) throw std::logic_error("relu: backward without cached forward");
    std::vector<char> mask = std::move(stack_.back());
    stack_.pop_back();
    Tensor<T> dx(dy.shape);
    for (std::size_t i = 0; i < dy.numel(); ++i) dx[i] = mask[i] ? dy[i] : T(0);
    return dx;
  }
  void clear_cache() { stack_.clear(); }

 private:
  std::vector<std::vector<char>> stack_;
};

// Fully connected layer on [n, in] row batches.
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(int in, int out) : in_(in), out_(out) {
    w.resize({out, in});
    b.resize({out});
    gw.resize({out, in});
    gb.resize({out});
  }

  void init_xavier(Rng& rng) {
    init::xavier_uniform(w, in_, out_, rng);
    b.zero();
  }

  Tensor<T> forward(const Tensor<T>& x, bool keep_cache) {
    const int n = x.dim(0);
    Tensor<T> y({n, out_});
    Eigen::Map<const MatX<T>> xm(x.ptr(), n, in_);
    Eigen::Map<const MatX<T>> wm(w.ptr(), out_, in_);
    Eigen::Map<MatX<T>> ym(y.ptr(), n, out_);
    ym.noalias() = xm * wm.transpose();
    for (int i = 0; i < n; ++i) ym.row(i) += Eigen::Map<const MatX<T>>(b.ptr(), 1, out_);
    if (keep_cache) {
      Tensor<T> xc = x;
      stack_.push_back(std::move(xc));
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& dy) {
    if (stack_.empty()) throw std::logic_error("linear: backward without cached forward");
    Tensor<T> x = std::move(stack_.back());
    stack_.pop_back();
    const int n = x.dim(0);
    Eigen::Map<const MatX<T>> xm(x.ptr(), n, in_);
    Eigen::Map<const MatX<T>> dym(dy.ptr(), n, out_);
    Eigen::Map<MatX<T>> gwm(gw.ptr(), out_, in_);
    gwm.noalias() += dym.transpose() * xm;
    for (int o = 0; o < out_; ++o) gb[static_cast<std::size_t>(o)] += dym.col(o).sum();
    Tensor<T> dx({n, in_});
    Eigen::Map<MatX<T>> dxm(dx.ptr(), n, in_);
    Eigen::Map<const MatX<T>> wm(w.ptr(), out_, in_);
    dxm.noalias() = dym * wm;
    return dx;
  }

  void clear_cache() { stack_.clear(); }
  void zero_grad() {
    gw.zero();
    gb.zero();
  }
  void collect(const std::string& prefix, std::vector<ParamRef<T>>& out) {
    out.push_back({prefix + ".weight", &w, &gw});
    out.push_back({prefix + ".bias", &b, &gb});
  }

  Tensor<T> w, b, gw, gb;

 private:
  int in_ = 0, out_ = 0;
  std::vector<Tensor<T>> stack_;
};

// Nearest-neighbour upsampling of [C, H, W] to an explicit output size.
template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, int out_h, int out_w) {
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<T> y({c, out_h, out_w});
  for (int ch = 0; ch < c; ++ch)
    for (int iy = 0; iy < out_h; ++iy) {
      const int sy = iy * h / out_h;
      for (int ix = 0; ix < out_w; ++ix) {
        const int sx = ix * w / out_w;
        y[(static_cast<std::size_t>(ch) * out_h + iy) * out_w + ix] =
            x[(static_cast<std::size_t>(ch) * h + sy) * w + sx];
      }
    }
  return y;
}

template <typename T>
Tensor<T> upsample_nearest_backward(const Tensor<T>& dy, int in_h, int in_w) {
  const int c = dy.dim(0), oh = dy.dim(1), ow = dy.dim(2);
  Tensor<T> dx({c, in_h, in_w});
  for (int ch = 0; ch < c; ++ch)
    for (int iy = 0; iy < oh; ++iy) {
      const int sy = iy * in_h / oh;
      for (int ix = 0; ix < ow; ++ix) {
        const int sx = ix * in_w / ow;
        dx[(static_cast<std::size_t>(ch) * in_h + sy) * in_w + sx] +=
            dy[(static_cast<std::size_t>(ch) * oh + iy) * ow + ix];
      }
    }
  return dx;
}

// Mean over the time axis: [C, T, H, W] -> [C, H, W].
template <typename T>
Tensor<T> temporal_mean(const Tensor<T>& x) {
  const int c = x.dim(0), t = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor<T> y({c, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int ch = 0; ch < c; ++ch) {
    T* yp = y.ptr() + static_cast<std::size_t>(ch) * plane;
    for (int ti = 0; ti < t; ++ti) {
      const T* xp = x.ptr() + (static_cast<std::size_t>(ch) * t + ti) * plane;
      for (std::size_t i = 0; i < plane; ++i) yp[i] += xp[i];
    }
    for (std::size_t i = 0; i < plane; ++i) yp[i] /= static_cast<T>(t);
  }
  return y;
}

template <typename T>
Tensor<T> temporal_mean_backward(const Tensor<T>& dy, int t) {
  const int c = dy.dim(0), h = dy.dim(1), w = dy.dim(2);
  Tensor<T> dx({c, t, h, w});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int ch = 0; ch < c; ++ch) {
    const T* dyp = dy.ptr() + static_cast<std::size_t>(ch) * plane;
    for (int ti = 0; ti < t; ++ti) {
      T* dxp = dx.ptr() + (static_cast<std::size_t>(ch) * t + ti) * plane;
      for (std::size_t i = 0; i < plane; ++i) dxp[i] = dyp[i] / static_cast<T>(t);
    }
  }
  return dx;
}

struct RoiBox {
  double x1, y1, x2, y2;  // feature-map coordinates
};

namespace detail {

struct BilinearTap {
  int u0, u1, v0, v1;
  double ax, ay;
};

inline BilinearTap bilinear_tap(double sx, double sy, int w, int h) {
  const double gx = std::min(std::max(sx - 0.5, 0.0), static_cast<double>(w - 1));
  const double gy = std::min(std::max(sy - 0.5, 0.0), static_cast<double>(h - 1));
  BilinearTap t;
  t.u0 = static_cast<int>(gx);
  t.v0 = static_cast<int>(gy);
  t.u0 = std::min(t.u0, w - 1);
  t.v0 = std::min(t.v0, h - 1);
  t.u1 = std::min(t.u0 + 1, w - 1);
  t.v1 = std::min(t.v0 + 1, h - 1);
  t.ax = gx - t.u0;
  t.ay = gy - t.v0;
  return t;
}

}  // namespace detail

// ROI align with one bilinear sample per output cell. Boxes narrower than a
// cell collapse onto the nearest cell instead of failing.
template <typename T>
Tensor<T> roi_align(const Tensor<T>& feat, const std::vector<RoiBox>& boxes, int out_size) {
  const int c = feat.dim(0), h = feat.dim(1), w = feat.dim(2);
  const int n = static_cast<int>(boxes.size());
  Tensor<T> out({n, c, out_size, out_size});
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int bi = 0; bi < n; ++bi) {
    const RoiBox& box = boxes[static_cast<std::size_t>(bi)];
    const double bw = std::max(box.x2 - box.x1, 1e-6);
    const double bh = std::max(box.y2 - box.y1, 1e-6);
    for (int iy = 0; iy < out_size; ++iy) {
      const double sy = box.y1 + (iy + 0.5) * bh / out_size;
      for (int ix = 0; ix < out_size; ++ix) {
        const double sx = box.x1 + (ix + 0.5) * bw / out_size;
        const auto tap = detail::bilinear_tap(sx, sy, w, h);
        for (int ch = 0; ch < c; ++ch) {
          const T* f = feat.ptr() + static_cast<std::size_t>(ch) * plane;
          const double v00 = f[static_cast<std::size_t>(tap.v0) * w + tap.u0];
          const double v01 = f[static_cast<std::size_t>(tap.v0) * w + tap.u1];
          const double v10 = f[static_cast<std::size_t>(tap.v1) * w + tap.u0];
          const double v11 = f[static_cast<std::size_t>(tap.v1) * w + tap.u1];
          const double val = (1.0 - tap.ay) * ((1.0 - tap.ax) * v00 + tap.ax * v01) +
                             tap.ay * ((1.0 - tap.ax) * v10 + tap.ax * v11);
          out[((static_cast<std::size_t>(bi) * c + ch) * out_size + iy) * out_size + ix] =
              static_cast<T>(val);
        }
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> roi_align_backward(const Tensor<T>& dout, const std::vector<RoiBox>& boxes, int feat_c,
                             int feat_h, int feat_w) {
  const int n = dout.dim(0), c = dout.dim(1), out_size = dout.dim(2);
  (void)feat_c;
  Tensor<T> dfeat({c, feat_h, feat_w});
  const std::size_t plane = static_cast<std::size_t>(feat_h) * feat_w;
  for (int bi = 0; bi < n; ++bi) {
    const RoiBox& box = boxes[static_cast<std::size_t>(bi)];
    const double bw = std::max(box.x2 - box.x1, 1e-6);
    const double bh = std::max(box.y2 - box.y1, 1e-6);
    for (int iy = 0; iy < out_size; ++iy) {
      const double sy = box.y1 + (iy + 0.5) * bh / out_size;
      for (int ix = 0; ix < out_size; ++ix) {
        const double sx = box.x1 + (ix + 0.5) * bw / out_size;
        const auto tap = detail::bilinear_tap(sx, sy, feat_w, feat_h);
        for (int ch = 0; ch < c; ++ch) {
          const T g =
              dout[((static_cast<std::size_t>(bi) * c + ch) * out_size + iy) * out_size + ix];
          T* df = dfeat.ptr() + static_cast<std::size_t>(ch) * plane;
          df[static_cast<std::size_t>(tap.v0) * feat_w + tap.u0] +=
              static_cast<T>((1.0 - tap.ay) * (1.0 - tap.ax)) * g;
          df[static_cast<std::size_t>(tap.v0) * feat_w + tap.u1] +=
              static_cast<T>((1.0 - tap.ay) * tap.ax) * g;
          df[static_cast<std::size_t>(tap.v1) * feat_w + tap.u0] +=
              static_cast<T>(tap.ay * (1.0 - tap.ax)) * g;
          df[static_cast<std::size_t>(tap.v1) * feat_w + tap.u1] +=
              static_cast<T>(tap.ay * tap.ax) * g;
        }
      }
    }
  }
  return dfeat;
}

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

}  // namespace stad
