#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace meshdens {

class NnError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dense (batch, channels, height, width) tensor, row-major.
template <class T>
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_, T fill = T(0))
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {
    if (n_ < 0 || c_ < 0 || h_ < 0 || w_ < 0) throw NnError("negative tensor dimension");
  }

  std::size_t size() const { return data.size(); }
  std::size_t plane_size() const { return static_cast<std::size_t>(h) * w; }
  std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }

  std::size_t index(int in, int ic, int iy, int ix) const {
    return ((static_cast<std::size_t>(in) * c + ic) * h + iy) * w + ix;
  }
  T& operator()(int in, int ic, int iy, int ix) { return data[index(in, ic, iy, ix)]; }
  T operator()(int in, int ic, int iy, int ix) const { return data[index(in, ic, iy, ix)]; }

  T* sample(int in) { return data.data() + static_cast<std::size_t>(in) * sample_size(); }
  const T* sample(int in) const { return data.data() + static_cast<std::size_t>(in) * sample_size(); }

  bool same_shape(const Tensor4& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
  std::string shape_str() const {
    return std::to_string(n) + "x" + std::to_string(c) + "x" + std::to_string(h) + "x" + std::to_string(w);
  }

  template <class U>
  Tensor4<U> cast() const {
    Tensor4<U> out(n, c, h, w);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

}  // namespace meshdens
