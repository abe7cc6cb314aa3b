#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "meshdens/nn.hpp"

namespace meshdens {

namespace {

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapM = Eigen::Map<Mat<T>>;
template <class T>
using CMapM = Eigen::Map<const Mat<T>>;

// Patch geometry of a convolution from (h, w) down to (oh, ow).
struct Geom {
  int c, h, w, k, s, p, oh, ow;
  std::size_t rows() const { return static_cast<std::size_t>(c) * k * k; }
  std::size_t cols() const { return static_cast<std::size_t>(oh) * ow; }
};

template <class T>
void im2col(const T* x, const Geom& g, T* cols) {
  std::size_t r = 0;
  for (int ci = 0; ci < g.c; ++ci)
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx, ++r) {
        T* row = cols + r * g.cols();
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * g.s - g.p + ky;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * g.s - g.p + kx;
            const bool in = iy >= 0 && iy < g.h && ix >= 0 && ix < g.w;
            row[oy * g.ow + ox] = in ? x[(static_cast<std::size_t>(ci) * g.h + iy) * g.w + ix] : T(0);
          }
        }
      }
}

template <class T>
void col2im(const T* cols, const Geom& g, T* x) {
  std::size_t r = 0;
  for (int ci = 0; ci < g.c; ++ci)
    for (int ky = 0; ky < g.k; ++ky)
      for (int kx = 0; kx < g.k; ++kx, ++r) {
        const T* row = cols + r * g.cols();
        for (int oy = 0; oy < g.oh; ++oy) {
          const int iy = oy * g.s - g.p + ky;
          if (iy < 0 || iy >= g.h) continue;
          for (int ox = 0; ox < g.ow; ++ox) {
            const int ix = ox * g.s - g.p + kx;
            if (ix >= 0 && ix < g.w) x[(static_cast<std::size_t>(ci) * g.h + iy) * g.w + ix] += row[oy * g.ow + ox];
          }
        }
      }
}

// Plain loop: Eigen reductions reorder by pointer alignment, which breaks run-to-run reproducibility.
template <class T>
void add_row_sums(const T* g, int rows, std::size_t cols, std::vector<T>& out) {
  for (int r = 0; r < rows; ++r) {
    T s = T(0);
    for (std::size_t j = 0; j < cols; ++j) s += g[static_cast<std::size_t>(r) * cols + j];
    out[static_cast<std::size_t>(r)] += s;
  }
}

template <class T>
void check_finite([[maybe_unused]] const Tensor4<T>& t, [[maybe_unused]] const char* where) {
#ifndef NDEBUG
  for (T v : t.data)
    if (!std::isfinite(v)) throw NnError(std::string("non-finite activation in ") + where);
#endif
}

}  // namespace

int conv_out_size(int in, int k, int stride, int pad) {
  if (stride < 1 || k < 1 || pad < 0) throw NnError("invalid convolution hyperparameters");
  const int span = in - k + 2 * pad;
  if (span < 0) throw NnError("convolution kernel larger than padded input");
  return span / stride + 1;
}

int conv_transpose_out_size(int in, int k, int stride, int pad, int output_pad) {
  if (stride < 1 || k < 1 || pad < 0 || output_pad < 0 || output_pad >= stride)
    throw NnError("invalid transposed convolution hyperparameters");
  const int out = (in - 1) * stride - 2 * pad + k + output_pad;
  if (out < 1) throw NnError("transposed convolution output is empty");
  return out;
}

template <class T>
Param<T>::Param(std::string n, std::vector<int> s) : name(std::move(n)), shape(std::move(s)) {
  std::size_t size = 1;
  for (int d : shape) size *= static_cast<std::size_t>(d);
  value.assign(size, T(0));
  grad.assign(size, T(0));
}

template <class T>
void Param<T>::zero_grad() {
  std::fill(grad.begin(), grad.end(), T(0));
}

template <class T>
void kaiming_uniform(Param<T>& p, int fan_in, Rng& rng) {
  const double b = std::sqrt(6.0 / fan_in);
  for (auto& v : p.value) v = static_cast<T>(rng.uniform(-b, b));
}

// ---------------------------------------------------------------------------

template <class T>
Conv2d<T>::Conv2d(int in_c_, int out_c_, int k_, int stride_, int pad_, const std::string& name)
    : in_c(in_c_), out_c(out_c_), k(k_), stride(stride_), pad(pad_),
      weight(name + ".weight", {out_c_, in_c_, k_, k_}), bias(name + ".bias", {out_c_}) {}

template <class T>
void Conv2d<T>::init(Rng& rng) {
  kaiming_uniform(weight, in_c * k * k, rng);
  std::fill(bias.value.begin(), bias.value.end(), T(0));
}

template <class T>
Tensor4<T> Conv2d<T>::forward(const Tensor4<T>& x) {
  if (x.c != in_c)
    throw NnError(weight.name + ": expected " + std::to_string(in_c) + " input channels, got " + x.shape_str());
  const Geom g{in_c, x.h, x.w, k, stride, pad, out_size(x.h), out_size(x.w)};
  Tensor4<T> y(x.n, out_c, g.oh, g.ow);
  std::vector<T> cols(g.rows() * g.cols());
  const CMapM<T> W(weight.value.data(), out_c, static_cast<Eigen::Index>(g.rows()));
  for (int i = 0; i < x.n; ++i) {
    im2col(x.sample(i), g, cols.data());
    MapM<T> Y(y.sample(i), out_c, static_cast<Eigen::Index>(g.cols()));
    Y.noalias() = W * CMapM<T>(cols.data(), static_cast<Eigen::Index>(g.rows()), static_cast<Eigen::Index>(g.cols()));
    for (int o = 0; o < out_c; ++o) Y.row(o).array() += bias.value[static_cast<std::size_t>(o)];
  }
  x_ = x;
  check_finite(y, weight.name.c_str());
  return y;
}

template <class T>
Tensor4<T> Conv2d<T>::backward(const Tensor4<T>& go) {
  const Geom g{in_c, x_.h, x_.w, k, stride, pad, out_size(x_.h), out_size(x_.w)};
  if (go.n != x_.n || go.c != out_c || go.h != g.oh || go.w != g.ow)
    throw NnError(weight.name + ": gradient shape " + go.shape_str() + " does not match forward output");
  Tensor4<T> gx(x_.n, in_c, x_.h, x_.w);
  std::vector<T> cols(g.rows() * g.cols()), gcols(cols.size());
  const CMapM<T> W(weight.value.data(), out_c, static_cast<Eigen::Index>(g.rows()));
  MapM<T> gW(weight.grad.data(), out_c, static_cast<Eigen::Index>(g.rows()));
  const auto R = static_cast<Eigen::Index>(g.rows()), C = static_cast<Eigen::Index>(g.cols());
  for (int i = 0; i < x_.n; ++i) {
    im2col(x_.sample(i), g, cols.data());
    const CMapM<T> G(go.sample(i), out_c, C);
    gW.noalias() += G * CMapM<T>(cols.data(), R, C).transpose();
    add_row_sums(go.sample(i), out_c, g.cols(), bias.grad);
    MapM<T>(gcols.data(), R, C).noalias() = W.transpose() * G;
    col2im(gcols.data(), g, gx.sample(i));
  }
  return gx;
}

// ---------------------------------------------------------------------------

template <class T>
ConvTranspose2d<T>::ConvTranspose2d(int in_c_, int out_c_, int k_, int stride_, int pad_, int output_pad_,
                                    const std::string& name)
    : in_c(in_c_), out_c(out_c_), k(k_), stride(stride_), pad(pad_), output_pad(output_pad_),
      weight(name + ".weight", {in_c_, out_c_, k_, k_}), bias(name + ".bias", {out_c_}) {
  if (stride < 1 || output_pad < 0 || output_pad >= stride)
    throw NnError(name + ": output padding must lie in [0, stride)");
}

template <class T>
void ConvTranspose2d<T>::init(Rng& rng) {
  kaiming_uniform(weight, out_c * k * k, rng);
  std::fill(bias.value.begin(), bias.value.end(), T(0));
}

template <class T>
Tensor4<T> ConvTranspose2d<T>::forward(const Tensor4<T>& x) {
  if (x.c != in_c)
    throw NnError(weight.name + ": expected " + std::to_string(in_c) + " input channels, got " + x.shape_str());
  const int oh = out_size(x.h), ow = out_size(x.w);
  const Geom g{out_c, oh, ow, k, stride, pad, x.h, x.w};
  Tensor4<T> y(x.n, out_c, oh, ow);
  std::vector<T> cols(g.rows() * g.cols());
  const auto R = static_cast<Eigen::Index>(g.rows()), C = static_cast<Eigen::Index>(g.cols());
  const CMapM<T> W(weight.value.data(), in_c, R);
  for (int i = 0; i < x.n; ++i) {
    MapM<T>(cols.data(), R, C).noalias() = W.transpose() * CMapM<T>(x.sample(i), in_c, C);
    col2im(cols.data(), g, y.sample(i));
    MapM<T> Y(y.sample(i), out_c, static_cast<Eigen::Index>(y.plane_size()));
    for (int o = 0; o < out_c; ++o) Y.row(o).array() += bias.value[static_cast<std::size_t>(o)];
  }
  x_ = x;
  check_finite(y, weight.name.c_str());
  return y;
}

template <class T>
Tensor4<T> ConvTranspose2d<T>::backward(const Tensor4<T>& go) {
  const int oh = out_size(x_.h), ow = out_size(x_.w);
  if (go.n != x_.n || go.c != out_c || go.h != oh || go.w != ow)
    throw NnError(weight.name + ": gradient shape " + go.shape_str() + " does not match forward output");
  const Geom g{out_c, oh, ow, k, stride, pad, x_.h, x_.w};
  Tensor4<T> gx(x_.n, in_c, x_.h, x_.w);
  std::vector<T> gcols(g.rows() * g.cols());
  const auto R = static_cast<Eigen::Index>(g.rows()), C = static_cast<Eigen::Index>(g.cols());
  const CMapM<T> W(weight.value.data(), in_c, R);
  MapM<T> gW(weight.grad.data(), in_c, R);
  for (int i = 0; i < x_.n; ++i) {
    im2col(go.sample(i), g, gcols.data());
    const CMapM<T> Gc(gcols.data(), R, C);
    MapM<T>(gx.sample(i), in_c, C).noalias() = W * Gc;
    gW.noalias() += CMapM<T>(x_.sample(i), in_c, C) * Gc.transpose();
    add_row_sums(go.sample(i), out_c, go.plane_size(), bias.grad);
  }
  return gx;
}

// ---------------------------------------------------------------------------

template <class T>
BatchNorm2d<T>::BatchNorm2d(int ch, const std::string& n)
    : channels(ch), gamma(n + ".gamma", {ch}), beta(n + ".beta", {ch}),
      running_mean(static_cast<std::size_t>(ch), T(0)), running_var(static_cast<std::size_t>(ch), T(1)), name(n) {
  std::fill(gamma.value.begin(), gamma.value.end(), T(1));
}

template <class T>
Tensor4<T> BatchNorm2d<T>::forward(const Tensor4<T>& x, bool train) {
  if (x.c != channels) throw NnError(name + ": channel mismatch, got " + x.shape_str());
  if (train && x.n < 2) throw NnError(name + ": train mode needs a batch of at least 2");
  train_ = train;
  Tensor4<T> y(x.n, x.c, x.h, x.w);
  xhat_ = Tensor4<T>(x.n, x.c, x.h, x.w);
  inv_std_.assign(static_cast<std::size_t>(channels), T(0));
  const std::size_t plane = x.plane_size();
  const double count = static_cast<double>(x.n) * static_cast<double>(plane);
  for (int c = 0; c < channels; ++c) {
    const auto cu = static_cast<std::size_t>(c);
    double mean, var;
    if (train) {
      double s = 0.0;
      for (int i = 0; i < x.n; ++i) {
        const T* p = x.sample(i) + cu * plane;
        for (std::size_t j = 0; j < plane; ++j) s += p[j];
      }
      mean = s / count;
      double ss = 0.0;
      for (int i = 0; i < x.n; ++i) {
        const T* p = x.sample(i) + cu * plane;
        for (std::size_t j = 0; j < plane; ++j) ss += (p[j] - mean) * (p[j] - mean);
      }
      var = ss / count;
      running_mean[cu] = static_cast<T>(momentum * running_mean[cu] + (1 - momentum) * mean);
      running_var[cu] = static_cast<T>(momentum * running_var[cu] + (1 - momentum) * var);
    } else {
      mean = running_mean[cu];
      var = running_var[cu];
    }
    const T inv = static_cast<T>(1.0 / std::sqrt(var + eps));
    inv_std_[cu] = inv;
    const T m = static_cast<T>(mean), gm = gamma.value[cu], bt = beta.value[cu];
    for (int i = 0; i < x.n; ++i) {
      const T* p = x.sample(i) + cu * plane;
      T* xh = xhat_.sample(i) + cu * plane;
      T* q = y.sample(i) + cu * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        xh[j] = (p[j] - m) * inv;
        q[j] = gm * xh[j] + bt;
      }
    }
  }
  check_finite(y, name.c_str());
  return y;
}

template <class T>
Tensor4<T> BatchNorm2d<T>::backward(const Tensor4<T>& go) {
  if (!go.same_shape(xhat_)) throw NnError(name + ": gradient shape " + go.shape_str() + " does not match forward");
  Tensor4<T> gx(go.n, go.c, go.h, go.w);
  const std::size_t plane = go.plane_size();
  const double count = static_cast<double>(go.n) * static_cast<double>(plane);
  for (int c = 0; c < channels; ++c) {
    const auto cu = static_cast<std::size_t>(c);
    double sg = 0.0, sgx = 0.0;
    for (int i = 0; i < go.n; ++i) {
      const T* g = go.sample(i) + cu * plane;
      const T* xh = xhat_.sample(i) + cu * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        sg += g[j];
        sgx += g[j] * xh[j];
      }
    }
    gamma.grad[cu] += static_cast<T>(sgx);
    beta.grad[cu] += static_cast<T>(sg);
    const T scale = gamma.value[cu] * inv_std_[cu];
    const T mg = static_cast<T>(sg / count), mgx = static_cast<T>(sgx / count);
    for (int i = 0; i < go.n; ++i) {
      const T* g = go.sample(i) + cu * plane;
      const T* xh = xhat_.sample(i) + cu * plane;
      T* out = gx.sample(i) + cu * plane;
      for (std::size_t j = 0; j < plane; ++j)
        out[j] = train_ ? scale * (g[j] - mg - xh[j] * mgx) : scale * g[j];
    }
  }
  return gx;
}

// ---------------------------------------------------------------------------

template <class T>
Tensor4<T> ReLU<T>::forward(const Tensor4<T>& x) {
  x_ = x;
  Tensor4<T> y = x;
  for (auto& v : y.data) v = std::max(v, T(0));
  return y;
}

template <class T>
Tensor4<T> ReLU<T>::backward(const Tensor4<T>& go) {
  Tensor4<T> g = go;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (!(x_.data[i] > T(0))) g.data[i] = T(0);
  return g;
}

template <class T>
Tensor4<T> Sigmoid<T>::forward(const Tensor4<T>& x) {
  Tensor4<T> y = x;
  for (auto& v : y.data) v = T(1) / (T(1) + std::exp(-v));
  y_ = y;
  return y;
}

template <class T>
Tensor4<T> Sigmoid<T>::backward(const Tensor4<T>& go) {
  Tensor4<T> g = go;
  for (std::size_t i = 0; i < g.size(); ++i) g.data[i] *= y_.data[i] * (T(1) - y_.data[i]);
  return g;
}

template <class T>
Tensor4<T> MaxPool2d<T>::forward(const Tensor4<T>& x) {
  const int oh = conv_out_size(x.h, k, stride, 0), ow = conv_out_size(x.w, k, stride, 0);
  Tensor4<T> y(x.n, x.c, oh, ow);
  argmax_.assign(y.size(), 0);
  std::size_t o = 0;
  for (int i = 0; i < x.n; ++i)
    for (int c = 0; c < x.c; ++c)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox, ++o) {
          std::size_t best = x.index(i, c, oy * stride, ox * stride);
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const std::size_t idx = x.index(i, c, oy * stride + ky, ox * stride + kx);
              if (x.data[idx] > x.data[best]) best = idx;
            }
          argmax_[o] = best;
          y.data[o] = x.data[best];
        }
  x_ = Tensor4<T>(x.n, x.c, x.h, x.w);
  return y;
}

template <class T>
Tensor4<T> MaxPool2d<T>::backward(const Tensor4<T>& go) {
  if (go.size() != argmax_.size()) throw NnError("maxpool: gradient shape " + go.shape_str() + " does not match forward");
  Tensor4<T> gx = x_;
  for (std::size_t o = 0; o < go.size(); ++o) gx.data[argmax_[o]] += go.data[o];
  return gx;
}

template <class T>
Tensor4<T> concat_channels(const Tensor4<T>& a, const Tensor4<T>& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w)
    throw NnError("concat: shapes " + a.shape_str() + " and " + b.shape_str() + " differ");
  Tensor4<T> y(a.n, a.c + b.c, a.h, a.w);
  for (int i = 0; i < a.n; ++i) {
    std::copy_n(a.sample(i), a.sample_size(), y.sample(i));
    std::copy_n(b.sample(i), b.sample_size(), y.sample(i) + a.sample_size());
  }
  return y;
}

template <class T>
void split_channels(const Tensor4<T>& g, int ca, Tensor4<T>& ga, Tensor4<T>& gb) {
  if (ca < 0 || ca > g.c) throw NnError("split: channel index out of range");
  ga = Tensor4<T>(g.n, ca, g.h, g.w);
  gb = Tensor4<T>(g.n, g.c - ca, g.h, g.w);
  for (int i = 0; i < g.n; ++i) {
    std::copy_n(g.sample(i), ga.sample_size(), ga.sample(i));
    std::copy_n(g.sample(i) + ga.sample_size(), gb.sample_size(), gb.sample(i));
  }
}

template <class T>
Loss<T> mse_loss(const Tensor4<T>& pred, const Tensor4<T>& target) {
  if (!pred.same_shape(target))
    throw NnError("mse: shapes " + pred.shape_str() + " and " + target.shape_str() + " differ");
  Loss<T> out{T(0), Tensor4<T>(pred.n, pred.c, pred.h, pred.w)};
  const double n = static_cast<double>(pred.size());
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred.data[i]) - static_cast<double>(target.data[i]);
    s += d * d;
    out.grad.data[i] = static_cast<T>(2.0 * d / n);
  }
  out.value = static_cast<T>(s / n);
  return out;
}

double mse(const GrayImage& pred, const GrayImage& target) {
  if (!pred.same_shape(target)) throw NnError("mse: image shapes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    s += d * d;
  }
  return s / static_cast<double>(pred.size());
}

#define MESHDENS_NN_INSTANTIATE(T)                                                      \
  template struct Param<T>;                                                             \
  template void kaiming_uniform<T>(Param<T>&, int, Rng&);                               \
  template class Conv2d<T>;                                                             \
  template class ConvTranspose2d<T>;                                                    \
  template class BatchNorm2d<T>;                                                        \
  template class ReLU<T>;                                                               \
  template class Sigmoid<T>;                                                            \
  template class MaxPool2d<T>;                                                          \
  template Tensor4<T> concat_channels<T>(const Tensor4<T>&, const Tensor4<T>&);         \
  template void split_channels<T>(const Tensor4<T>&, int, Tensor4<T>&, Tensor4<T>&);    \
  template Loss<T> mse_loss<T>(const Tensor4<T>&, const Tensor4<T>&);

MESHDENS_NN_INSTANTIATE(float)
MESHDENS_NN_INSTANTIATE(double)

}  // namespace meshdens
