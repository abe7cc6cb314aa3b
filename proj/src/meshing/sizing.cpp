#include <algorithm>
#include <limits>

#include "meshdens/sizing.hpp"

namespace meshdens {

double SizeBounds::clamp(double h) const { return std::clamp(h, h_min, h_max); }

double SizeBounds::to_density(double h) const { return std::clamp((h - h_min) / (h_max - h_min), 0.0, 1.0); }

double SizeBounds::from_density(double d) const {
  d = std::clamp(d, 0.0, 1.0);
  return (1.0 - d) * h_min + d * h_max;
}

SizingField SizingField::constant(double h, SizeBounds bounds) {
  return SizingField(h, nullptr, bounds);
}

SizingField SizingField::from_function(Fn fn, SizeBounds bounds) {
  return SizingField(std::nullopt, std::move(fn), bounds);
}

SizingField SizingField::from_elements(const QuadMesh& mesh, std::vector<double> values, SizeBounds bounds) {
  if (values.size() != mesh.quads.size()) throw GeometryError("from_elements: one value per quad required");
  struct Data {
    QuadMesh mesh;
    std::vector<double> values;
    std::unique_ptr<MeshLocator> locator;
  };
  auto data = std::make_shared<Data>();
  data->mesh = mesh;
  data->values = std::move(values);
  data->locator = std::make_unique<MeshLocator>(data->mesh);
  return from_function(
      [data](Vec2 p) {
        const auto hit = data->locator->locate(p);
        return hit.quad < 0 ? std::numeric_limits<double>::infinity()
                            : data->values[static_cast<std::size_t>(hit.quad)];
      },
      bounds);
}

SizingField SizingField::from_image(const GrayImage& density, const GrayImage& mask, SizeBounds bounds) {
  if (!density.same_shape(mask)) throw ImageError("from_image: density and mask resolution differ");
  const int w = density.width(), h = density.height();
  const std::size_t n = density.size();
  bool any_inside = false;
  for (std::size_t i = 0; i < n; ++i) any_inside = any_inside || mask[i] > 0.5f;
  if (!any_inside) throw ImageError("from_image: mask has no inside pixels");

  // Nearest inside pixel for every pixel (brute force; images are small).
  std::vector<std::size_t> nearest(n);
  std::vector<std::size_t> inside;
  for (std::size_t i = 0; i < n; ++i)
    if (mask[i] > 0.5f) inside.push_back(i);
  for (std::size_t i = 0; i < n; ++i) {
    if (mask[i] > 0.5f) {
      nearest[i] = i;
      continue;
    }
    const long r = static_cast<long>(i) / w, c = static_cast<long>(i) % w;
    long best = std::numeric_limits<long>::max();
    for (std::size_t j : inside) {
      const long rr = static_cast<long>(j) / w - r, cc = static_cast<long>(j) % w - c;
      const long d = rr * rr + cc * cc;
      if (d < best) {
        best = d;
        nearest[i] = j;
      }
    }
  }

  struct Data {
    std::vector<double> h;
    std::vector<char> inside;
    std::vector<std::size_t> nearest;
    int w, h_px;
  };
  auto data = std::make_shared<Data>();
  data->h.resize(n);
  data->inside.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    data->h[i] = bounds.from_density(density[i]);
    data->inside[i] = mask[i] > 0.5f;
  }
  data->nearest = std::move(nearest);
  data->w = w;
  data->h_px = h;

  bool uniform = true;
  for (std::size_t j : inside) uniform = uniform && data->h[j] == data->h[inside.front()];
  if (uniform) return constant(data->h[inside.front()], bounds);

  return from_function(
      [data](Vec2 p) {
        const double u = p.x * data->w - 0.5;
        const double v = (1.0 - p.y) * data->h_px - 0.5;
        const int c0 = static_cast<int>(std::floor(u)), r0 = static_cast<int>(std::floor(v));
        const double fu = u - c0, fv = v - r0;
        double sum = 0.0, wsum = 0.0;
        for (int dr = 0; dr < 2; ++dr) {
          for (int dc = 0; dc < 2; ++dc) {
            const int r = r0 + dr, c = c0 + dc;
            if (r < 0 || c < 0 || r >= data->h_px || c >= data->w) continue;
            const auto idx = static_cast<std::size_t>(r * data->w + c);
            if (!data->inside[idx]) continue;
            const double wt = (dr ? fv : 1.0 - fv) * (dc ? fu : 1.0 - fu);
            sum += wt * data->h[idx];
            wsum += wt;
          }
        }
        if (wsum > 1e-12) return sum / wsum;
        const int r = std::clamp(static_cast<int>(std::lround(v)), 0, data->h_px - 1);
        const int c = std::clamp(static_cast<int>(std::lround(u)), 0, data->w - 1);
        return data->h[data->nearest[static_cast<std::size_t>(r * data->w + c)]];
      },
      bounds);
}

double SizingField::operator()(Vec2 p) const { return bounds_.clamp(scale_ * raw(p)); }

std::optional<double> SizingField::constant_value() const {
  if (!constant_) return std::nullopt;
  return bounds_.clamp(scale_ * *constant_);
}

SizingField SizingField::scaled(double s) const {
  SizingField f = *this;
  f.scale_ *= s;
  return f;
}

SizingField SizingField::graded(double rate, int grid) const {
  if (constant_) return *this;
  const int n = std::max(grid, 2);
  const double step = 1.0 / (n - 1);
  std::vector<double> h(static_cast<std::size_t>(n * n));
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) h[static_cast<std::size_t>(j * n + i)] = (*this)({i * step, j * step});

  const double lim_axis = rate * step, lim_diag = rate * step * std::sqrt(2.0);
  auto relax = [&](int i, int j, int di, int dj) {
    const int a = i + di, b = j + dj;
    if (a < 0 || b < 0 || a >= n || b >= n) return false;
    double& hv = h[static_cast<std::size_t>(j * n + i)];
    const double cand = h[static_cast<std::size_t>(b * n + a)] + ((di != 0 && dj != 0) ? lim_diag : lim_axis);
    if (cand < hv) {
      hv = cand;
      return true;
    }
    return false;
  };
  for (int sweep = 0; sweep < 64; ++sweep) {
    bool changed = false;
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i)
        for (auto [di, dj] : {std::pair{-1, 0}, {0, -1}, {-1, -1}, {1, -1}}) changed |= relax(i, j, di, dj);
    for (int j = n - 1; j >= 0; --j)
      for (int i = n - 1; i >= 0; --i)
        for (auto [di, dj] : {std::pair{1, 0}, {0, 1}, {1, 1}, {-1, 1}}) changed |= relax(i, j, di, dj);
    if (!changed) break;
  }

  const auto [mn, mx] = std::minmax_element(h.begin(), h.end());
  if (*mn == *mx) return constant(*mn, bounds_);

  auto table = std::make_shared<std::vector<double>>(std::move(h));
  return from_function(
      [table, n, step](Vec2 p) {
        const double u = std::clamp(p.x / step, 0.0, n - 1.0);
        const double v = std::clamp(p.y / step, 0.0, n - 1.0);
        const int i = std::min(static_cast<int>(u), n - 2), j = std::min(static_cast<int>(v), n - 2);
        const double fu = u - i, fv = v - j;
        const auto& t = *table;
        auto at = [&](int a, int b) { return t[static_cast<std::size_t>(b * n + a)]; };
        return (1 - fu) * (1 - fv) * at(i, j) + fu * (1 - fv) * at(i + 1, j) + fu * fv * at(i + 1, j + 1) +
               (1 - fu) * fv * at(i, j + 1);
      },
      bounds_);
}

}  // namespace meshdens
