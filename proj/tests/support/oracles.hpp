#pragma once

// Independent reference computations used by the unit tests and the
// acceptance binary. Deliberately naive: explicit loops, no shared helpers
// with the library beyond the data types.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "memmeter/image.hpp"
#include "memmeter/metrics.hpp"
#include "memmeter/random.hpp"
#include "memmeter/tensor.hpp"

namespace oracle {

using memmeter::ImageTensor;
using memmeter::PredictionRecord;
using memmeter::Tensor;

// ---------------------------------------------------------------------------
// Central finite differences against backward().

struct GradCheck {
  std::size_t checked = 0;
  double max_rel_error = 0.0;
};

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / denom;
}

// `loss_fn` must rebuild the scalar loss from the current parameter values.
inline GradCheck check_gradients(const std::function<Tensor()>& loss_fn, std::vector<Tensor> params,
                                 std::size_t coords, std::uint64_t seed, double h = 1e-5) {
  for (auto& p : params) p.zero_grad();
  memmeter::backward(loss_fn());
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) {
    if (p.has_grad()) {
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    } else {
      analytic.emplace_back(p.numel(), 0.0);
    }
  }
  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (std::size_t t = 0; t < params.size(); ++t)
    for (std::size_t i = 0; i < params[t].numel(); ++i) all.emplace_back(t, i);
  memmeter::Rng rng(seed);
  rng.shuffle(std::span<std::pair<std::size_t, std::size_t>>(all));
  if (all.size() > coords) all.resize(coords);

  GradCheck out;
  memmeter::NoGradGuard no_grad;
  for (auto [t, i] : all) {
    auto data = params[t].data();
    const double saved = data[i];
    data[i] = saved + h;
    const double up = loss_fn().item();
    data[i] = saved - h;
    const double down = loss_fn().item();
    data[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    out.max_rel_error = std::max(out.max_rel_error, relative_error(analytic[t][i], numeric));
    ++out.checked;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Calibration: materialize every bin, then apply the formula.

inline double naive_rms_calibration(const std::vector<PredictionRecord>& records,
                                    std::optional<std::size_t> forced_bins = std::nullopt) {
  struct Item {
    double conf;
    std::string id;
    double correct;
  };
  std::vector<Item> items;
  for (const auto& r : records) {
    double conf = r.probs[0];
    std::size_t arg = 0;
    for (std::size_t k = 1; k < r.probs.size(); ++k) {
      if (r.probs[k] > conf) {
        conf = r.probs[k];
        arg = k;
      }
    }
    items.push_back({conf, r.image_id, arg == *r.true_class ? 1.0 : 0.0});
  }
  std::sort(items.begin(), items.end(),
            [](const Item& a, const Item& b) { return a.conf != b.conf ? a.conf < b.conf : a.id < b.id; });
  const std::size_t n = items.size();
  std::size_t b = 1;
  while (b * b < n) ++b;  // ceil(sqrt(n))
  b = std::min(b, n);
  if (forced_bins) b = *forced_bins;

  std::vector<std::vector<Item>> bins(b);
  std::size_t pos = 0;
  for (std::size_t k = 0; k < b; ++k) {
    std::size_t size = n / b + (k < n % b ? 1 : 0);
    for (std::size_t i = 0; i < size; ++i) bins[k].push_back(items[pos++]);
  }
  double total = 0.0;
  for (const auto& bin : bins) {
    double conf = 0.0, acc = 0.0;
    for (const auto& it : bin) conf += it.conf;
    for (const auto& it : bin) acc += it.correct;
    conf /= static_cast<double>(bin.size());
    acc /= static_cast<double>(bin.size());
    total += static_cast<double>(bin.size()) / static_cast<double>(n) * (conf - acc) * (conf - acc);
  }
  return std::sqrt(total);
}

// ---------------------------------------------------------------------------
// Ranks by counting: rank_i = #{j: x_j < x_i} + (#{j: x_j == x_i} + 1) / 2.

inline std::vector<double> counting_ranks(const std::vector<double>& xs) {
  std::vector<double> ranks(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    std::size_t less = 0, equal = 0;
    for (double x : xs) {
      less += x < xs[i] ? 1 : 0;
      equal += x == xs[i] ? 1 : 0;
    }
    ranks[i] = static_cast<double>(2 * less + equal + 1) / 2.0;
  }
  return ranks;
}

// Textbook Pearson: means first, then centered sums.
inline std::optional<double> textbook_pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

inline std::optional<double> brute_spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  return textbook_pearson(counting_ranks(xs), counting_ranks(ys));
}

// ---------------------------------------------------------------------------
// Attribute oracles: scalar loops straight from the definitions.

inline double gray601(const ImageTensor& img, std::size_t y, std::size_t x) {
  if (img.channels == 1) return img.at(0, y, x);
  return 0.299 * img.at(0, y, x) + 0.587 * img.at(1, y, x) + 0.114 * img.at(2, y, x);
}

inline double histogram_entropy(const ImageTensor& img) {
  std::map<long, double> counts;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      long level = static_cast<long>(std::floor(gray601(img, y, x) * 255.0 + 0.5));
      level = std::clamp(level, 0L, 255L);
      counts[level] += 1.0;
    }
  const double n = static_cast<double>(img.height * img.width);
  double h = 0.0;
  for (const auto& [level, c] : counts) h -= (c / n) * std::log2(c / n);
  return h;
}

inline double scalar_colorfulness(const ImageTensor& img) {
  std::vector<double> rg, yb;
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const double r = 255.0 * img.at(0, y, x), g = 255.0 * img.at(1, y, x), b = 255.0 * img.at(2, y, x);
      rg.push_back(r - g);
      yb.push_back(0.5 * (r + g) - b);
    }
  auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
  auto var = [&](const std::vector<double>& v) {
    const double m = mean(v);
    double s = 0.0;
    for (double e : v) s += (e - m) * (e - m);
    return s / v.size();
  };
  const double mrg = mean(rg), myb = mean(yb);
  return std::sqrt(var(rg) + var(yb)) + 0.3 * std::sqrt(mrg * mrg + myb * myb);
}

struct HsvOracle {
  std::optional<double> hue;
  double saturation;
  double value;
};

inline HsvOracle scalar_hsv(const ImageTensor& img) {
  const double pi = std::acos(-1.0);
  double sx = 0.0, sy = 0.0, ssat = 0.0, sval = 0.0;
  const double n = static_cast<double>(img.height * img.width);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const double r = img.at(0, y, x), g = img.at(1, y, x), b = img.at(2, y, x);
      const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
      const double delta = mx - mn;
      sval += mx;
      ssat += mx > 0.0 ? delta / mx : 0.0;
      if (delta > 0.0) {
        double h;
        if (mx == r) {
          h = 60.0 * std::fmod((g - b) / delta, 6.0);
        } else if (mx == g) {
          h = 60.0 * ((b - r) / delta + 2.0);
        } else {
          h = 60.0 * ((r - g) / delta + 4.0);
        }
        if (h < 0.0) h += 360.0;
        sx += std::cos(h * pi / 180.0);
        sy += std::sin(h * pi / 180.0);
      }
    }
  HsvOracle out{std::nullopt, ssat / n, sval / n};
  sx /= n;
  sy /= n;
  if (std::hypot(sx, sy) >= 1e-9) {
    double h = std::atan2(sy, sx) * 180.0 / pi;
    if (h < 0.0) h += 360.0;
    if (h >= 360.0) h -= 360.0;
    out.hue = h;
  }
  return out;
}

// Global contrast factor written out level by level.
inline double scalar_gcf(const ImageTensor& img) {
  std::size_t h = img.height, w = img.width;
  std::vector<double> lin(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) lin[y * w + x] = std::pow(gray601(img, y, x), 2.2);
  double gcf = 0.0;
  for (std::size_t level = 1; level <= 9; ++level) {
    if (h < 2 || w < 2) break;  // grid below 2x2 contributes nothing
    double total = 0.0;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double l = 100.0 * std::sqrt(lin[y * w + x]);
        double diff = 0.0;
        int count = 0;
        const long dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
          const long ny = static_cast<long>(y) + dy[k], nx = static_cast<long>(x) + dx[k];
          if (ny < 0 || nx < 0 || ny >= static_cast<long>(h) || nx >= static_cast<long>(w)) continue;
          diff += std::abs(l - 100.0 * std::sqrt(lin[ny * w + nx]));
          ++count;
        }
        if (count > 0) total += diff / count;
      }
    const double c = total / static_cast<double>(h * w);
    const double t = static_cast<double>(level) / 9.0;
    gcf += ((-0.406385 * t + 0.334573) * t + 0.0877526) * c;
    // next level: 2x2 block average of linear luminance
    const std::size_t nh = h / 2, nw = w / 2;
    std::vector<double> next(nh * nw, 0.0);
    for (std::size_t y = 0; y < nh; ++y)
      for (std::size_t x = 0; x < nw; ++x) {
        double s = 0.0;
        for (std::size_t yy = 2 * y; yy < 2 * y + 2; ++yy)
          for (std::size_t xx = 2 * x; xx < 2 * x + 2; ++xx) s += lin[yy * w + xx];
        next[y * nw + x] = s / 4.0;
      }
    lin = std::move(next);
    h = nh;
    w = nw;
  }
  return gcf;
}

}  // namespace oracle
