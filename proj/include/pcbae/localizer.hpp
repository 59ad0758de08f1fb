#pragma once

// Board-vs-reconstruction comparison: windowed SSIM, Gaussian smoothing,
// binarization of the dissimilarity, 8-connected components and the
// area-sum difference score.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pcbae/image_io.hpp"
#include "pcbae/model.hpp"
#include "pcbae/tensor.hpp"

namespace pcbae {

struct SsimParams {
  std::size_t window = 11;
  double gaussian_sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;

  void validate() const {
    if (window < 3 || window % 2 == 0) throw Error("SSIM window must be odd and >= 3");
    if (!(gaussian_sigma > 0)) throw Error("SSIM sigma must be > 0");
    if (!(k1 > 0) || !(k2 > 0)) throw Error("SSIM constants k1, k2 must be > 0");
  }
  double c1() const { return (k1 * dynamic_range) * (k1 * dynamic_range); }
  double c2() const { return (k2 * dynamic_range) * (k2 * dynamic_range); }
};

struct LocalizerParams {
  SsimParams ssim;
  double smooth_sigma = 1.0;
  double cutoff = 0.4;        // on normalized dissimilarity (1 - ssim) / 2
  std::size_t min_area = 4;   // pixels
};

/// Operating-point thresholds are expressed in contour-area pixels at this
/// native resolution and rescaled to the working resolution.
inline constexpr double kNativeArea = 512.0 * 512.0;

inline double area_scale(std::size_t height, std::size_t width) {
  return static_cast<double>(height) * static_cast<double>(width) / kNativeArea;
}

/// Symmetric border reflection: ... c b a | a b c ... | c b a ...
inline long reflect_index(long i, long n) {
  if (n == 1) return 0;
  const long period = 2 * n;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - 1 - i;
}

/// Normalized 1-D Gaussian of the given odd size.
inline std::vector<double> gaussian_kernel(std::size_t size, double sigma) {
  std::vector<double> k(size);
  const double c = static_cast<double>(size / 2);
  for (std::size_t i = 0; i < size; ++i) {
    const double d = static_cast<double>(i) - c;
    k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
  }
  const double s = std::accumulate(k.begin(), k.end(), 0.0);
  for (double& v : k) v /= s;
  return k;
}

namespace detail {

inline std::pair<std::size_t, std::size_t> image_hw(const Tensor& img, const char* what) {
  if (img.rank() < 2) throw ShapeError(std::string(what) + ": need an image tensor");
  const std::size_t h = img.dim(img.rank() - 2), w = img.dim(img.rank() - 1);
  if (img.size() != h * w) throw ShapeError(std::string(what) + ": expected a single-channel image");
  return {h, w};
}

// Separable filtering with reflected borders, in double precision.
inline std::vector<double> filter_separable(const std::vector<double>& src, std::size_t h,
                                            std::size_t w, const std::vector<double>& k) {
  const long r = static_cast<long>(k.size() / 2);
  const long H = static_cast<long>(h), W = static_cast<long>(w);
  std::vector<double> tmp(h * w), out(h * w);
  for (long y = 0; y < H; ++y) {
    for (long x = 0; x < W; ++x) {
      double s = 0.0;
      for (long d = -r; d <= r; ++d) s += k[static_cast<std::size_t>(d + r)] * src[static_cast<std::size_t>(y * W + reflect_index(x + d, W))];
      tmp[static_cast<std::size_t>(y * W + x)] = s;
    }
  }
  for (long y = 0; y < H; ++y) {
    for (long x = 0; x < W; ++x) {
      double s = 0.0;
      for (long d = -r; d <= r; ++d) s += k[static_cast<std::size_t>(d + r)] * tmp[static_cast<std::size_t>(reflect_index(y + d, H) * W + x)];
      out[static_cast<std::size_t>(y * W + x)] = s;
    }
  }
  return out;
}

}  // namespace detail

struct SsimResult {
  Tensor map;        // same shape as the inputs
  double mean = 0.0;
};

/// Per-pixel SSIM with Gaussian-weighted local statistics. Computed in
/// double precision; the map is stored as float, the mean from the doubles.
inline SsimResult ssim(const Tensor& a, const Tensor& b, const SsimParams& params = {}) {
  params.validate();
  require_shape(b, a.shape(), "ssim_map");
  const auto [h, w] = detail::image_hw(a, "ssim_map");
  const std::size_t n = h * w;
  std::vector<double> da(n), db(n), aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    da[i] = a[i];
    db[i] = b[i];
    aa[i] = da[i] * da[i];
    bb[i] = db[i] * db[i];
    ab[i] = da[i] * db[i];
  }
  const auto k = gaussian_kernel(params.window, params.gaussian_sigma);
  const auto mu_a = detail::filter_separable(da, h, w, k);
  const auto mu_b = detail::filter_separable(db, h, w, k);
  const auto e_aa = detail::filter_separable(aa, h, w, k);
  const auto e_bb = detail::filter_separable(bb, h, w, k);
  const auto e_ab = detail::filter_separable(ab, h, w, k);
  const double c1 = params.c1(), c2 = params.c2();
  SsimResult r{Tensor(a.shape()), 0.0};
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = e_aa[i] - ma * ma, vb = e_bb[i] - mb * mb, cov = e_ab[i] - ma * mb;
    const double s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    r.map[i] = static_cast<float>(s);
    sum += s;
  }
  r.mean = sum / static_cast<double>(n);
  return r;
}

inline Tensor ssim_map(const Tensor& a, const Tensor& b, const SsimParams& params = {}) {
  return ssim(a, b, params).map;
}

/// Gaussian blur, kernel radius ceil(3 sigma), reflected borders. sigma 0
/// returns the input unchanged.
inline Tensor smooth(const Tensor& img, double sigma) {
  if (sigma < 0) throw Error("smooth: sigma must be >= 0");
  if (sigma == 0) return img;
  const auto [h, w] = detail::image_hw(img, "smooth");
  const auto radius = static_cast<std::size_t>(std::ceil(3.0 * sigma));
  const auto k = gaussian_kernel(2 * radius + 1, sigma);
  std::vector<double> src(img.values().begin(), img.values().end());
  const auto out = detail::filter_separable(src, h, w, k);
  Tensor t(img.shape());
  for (std::size_t i = 0; i < out.size(); ++i) t[i] = static_cast<float>(out[i]);
  return t;
}

/// 1 where the normalized dissimilarity (1 - s) / 2 exceeds the cutoff.
inline Tensor binarize_diff(const Tensor& smoothed_ssim, double cutoff) {
  if (!(cutoff > 0.0 && cutoff < 1.0)) throw Error("binarize_diff: cutoff must be in (0, 1)");
  Tensor m(smoothed_ssim.shape());
  for (std::size_t i = 0; i < m.size(); ++i) {
    m[i] = (1.0 - static_cast<double>(smoothed_ssim[i])) / 2.0 > cutoff ? 1.0f : 0.0f;
  }
  return m;
}

struct Contour {
  std::size_t x = 0, y = 0, w = 0, h = 0;  // tight bounding box
  std::size_t area = 0;                    // pixel count

  bool intersects(std::size_t ox, std::size_t oy, std::size_t ow, std::size_t oh) const {
    return x < ox + ow && ox < x + w && y < oy + oh && oy < y + h;
  }
  bool contains(std::size_t ox, std::size_t oy, std::size_t ow, std::size_t oh) const {
    return ox >= x && oy >= y && ox + ow <= x + w && oy + oh <= y + h;
  }
  friend bool operator==(const Contour&, const Contour&) = default;
};

struct Labeling {
  std::vector<std::uint32_t> labels;  // 0 = background, components numbered from 1
  std::vector<Contour> components;    // components[label - 1]
};

/// 8-connected component labeling of a binary mask (nonzero = foreground),
/// two-pass with union-find. Labels are assigned in raster order of each
/// component's first pixel.
inline Labeling label_components(const Tensor& mask) {
  const auto [h, w] = detail::image_hw(mask, "label_components");
  std::vector<std::uint32_t> provisional(h * w, 0);
  std::vector<std::uint32_t> parent{0};
  auto find = [&](std::uint32_t v) {
    while (parent[v] != v) v = parent[v] = parent[parent[v]];
    return v;
  };
  auto unite = [&](std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a < b) parent[b] = a;
    else if (b < a) parent[a] = b;
  };
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      if (mask[y * w + x] == 0.0f) continue;
      std::uint32_t found = 0;
      auto visit = [&](std::size_t nx, std::size_t ny) {
        const std::uint32_t l = provisional[ny * w + nx];
        if (!l) return;
        if (!found) found = l;
        else unite(found, l);
      };
      if (x > 0) visit(x - 1, y);
      if (y > 0) {
        if (x > 0) visit(x - 1, y - 1);
        visit(x, y - 1);
        if (x + 1 < w) visit(x + 1, y - 1);
      }
      if (!found) {
        found = static_cast<std::uint32_t>(parent.size());
        parent.push_back(found);
      }
      provisional[y * w + x] = found;
    }
  }
  Labeling out;
  out.labels.assign(h * w, 0);
  std::vector<std::uint32_t> final_label(parent.size(), 0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const std::uint32_t p = provisional[y * w + x];
      if (!p) continue;
      const std::uint32_t root = find(p);
      if (!final_label[root]) {
        out.components.push_back(Contour{x, y, 1, 1, 0});
        final_label[root] = static_cast<std::uint32_t>(out.components.size());
      }
      const std::uint32_t l = final_label[root];
      out.labels[y * w + x] = l;
      Contour& c = out.components[l - 1];
      const std::size_t x0 = std::min(c.x, x), x1 = std::max(c.x + c.w, x + 1);
      const std::size_t y1 = std::max(c.y + c.h, y + 1);
      c.x = x0;
      c.w = x1 - x0;
      c.h = y1 - c.y;
      ++c.area;
    }
  }
  return out;
}

/// Connected components with area >= min_area, in label order.
inline std::vector<Contour> find_contours(const Tensor& mask, std::size_t min_area) {
  std::vector<Contour> out;
  for (const auto& c : label_components(mask).components) {
    if (c.area >= min_area) out.push_back(c);
  }
  return out;
}

enum class Verdict { intact, defective };

inline std::string to_string(Verdict v) { return v == Verdict::defective ? "defective" : "intact"; }

struct DiffReport {
  std::string id;
  double ssim_mean = 1.0;
  Tensor ssim_map;
  Tensor defect_mask;
  std::vector<Contour> contours;
  double score = 0.0;              // sum of contour areas, working-resolution pixels
  double threshold = 0.0;          // operating threshold, native-resolution pixels
  double effective_threshold = 0;  // threshold rescaled to the working resolution
  Verdict verdict = Verdict::intact;
};

inline Verdict decide(double score, double effective_threshold) {
  return score > effective_threshold ? Verdict::defective : Verdict::intact;
}

/// Compare a board against a reconstruction of it. `threshold` is in
/// contour-area pixels at 512 x 512 and is rescaled to the board's size.
inline DiffReport compare_to_reconstruction(const Tensor& board, const Tensor& reconstruction,
                                            double threshold, const LocalizerParams& params = {},
                                            std::string id = {}) {
  const auto [h, w] = detail::image_hw(board, "inspect");
  auto s = ssim(board, reconstruction, params.ssim);
  DiffReport r;
  r.id = std::move(id);
  r.ssim_mean = s.mean;
  r.defect_mask = binarize_diff(smooth(s.map, params.smooth_sigma), params.cutoff);
  r.ssim_map = std::move(s.map);
  r.contours = find_contours(r.defect_mask, params.min_area);
  std::size_t total = 0;
  for (const auto& c : r.contours) total += c.area;
  r.score = static_cast<double>(total);
  r.threshold = threshold;
  r.effective_threshold = threshold * area_scale(h, w);
  r.verdict = decide(r.score, r.effective_threshold);
  return r;
}

/// Reconstruct the board with the model and compare. The board must match
/// the model input size.
inline Tensor reconstruct(const Autoencoder& model, const Tensor& board) {
  const auto& cfg = model.config();
  if (board.size() != cfg.input_height * cfg.input_width ||
      board.dim(board.rank() - 2) != cfg.input_height || board.dim(board.rank() - 1) != cfg.input_width) {
    throw ShapeError("inspect: board of shape " + shape_str(board.shape()) + " does not match model input " +
                     std::to_string(cfg.input_height) + "x" + std::to_string(cfg.input_width));
  }
  return model.infer(board.reshaped(model.input_shape(1))).reshaped(board.shape());
}

inline DiffReport inspect(const Autoencoder& model, const Tensor& board, double threshold,
                          const LocalizerParams& params = {}, std::string id = {}) {
  return compare_to_reconstruction(board, reconstruct(model, board), threshold, params, std::move(id));
}

/// |board - reconstruction|, for debugging.
inline Tensor abs_difference(const Tensor& a, const Tensor& b) {
  require_shape(b, a.shape(), "abs_difference");
  Tensor d(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) d[i] = std::abs(a[i] - b[i]);
  return d;
}

inline nlohmann::ordered_json report_to_json(const DiffReport& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["score"] = r.score;
  j["verdict"] = to_string(r.verdict);
  j["ssim_mean"] = r.ssim_mean;
  auto contours = nlohmann::ordered_json::array();
  for (const auto& c : r.contours) {
    contours.push_back({{"x", c.x}, {"y", c.y}, {"w", c.w}, {"h", c.h}, {"area", c.area}});
  }
  j["contours"] = std::move(contours);
  return j;
}

/// The board in gray with a red rectangle around every contour.
inline Raster8 render_overlay(const Tensor& board, const std::vector<Contour>& contours) {
  const Raster8 gray = gray_to_raster(board);
  Raster8 out(gray.width, gray.height, 3);
  for (std::size_t i = 0; i < gray.pixels.size(); ++i) {
    out.pixels[3 * i] = out.pixels[3 * i + 1] = out.pixels[3 * i + 2] = gray.pixels[i];
  }
  auto red = [&](std::size_t x, std::size_t y) {
    std::uint8_t* p = out.at(x, y);
    p[0] = 255;
    p[1] = 0;
    p[2] = 0;
  };
  for (const auto& c : contours) {
    const std::size_t x1 = c.x + c.w - 1, y1 = c.y + c.h - 1;
    for (std::size_t x = c.x; x <= x1; ++x) {
      red(x, c.y);
      red(x, y1);
    }
    for (std::size_t y = c.y; y <= y1; ++y) {
      red(c.x, y);
      red(x1, y);
    }
  }
  return out;
}

}  // namespace pcbae
