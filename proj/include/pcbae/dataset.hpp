#pragma once

// Image-pair manifests, noise injection, splitting, a DeepPCB directory
// scanner and a synthetic PCB generator with exact ground-truth masks.

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pcbae/image_io.hpp"
#include "pcbae/rng.hpp"
#include "pcbae/tensor.hpp"

namespace pcbae {

namespace fs = std::filesystem;

class DatasetError : public Error {
 public:
  using Error::Error;
};

enum class Label { unknown, defective, intact };

inline std::string to_string(Label l) {
  switch (l) {
    case Label::defective: return "defective";
    case Label::intact: return "intact";
    default: return "";
  }
}

inline Label parse_label(const std::string& s) {
  if (s == "defective") return Label::defective;
  if (s == "intact") return Label::intact;
  if (s.empty()) return Label::unknown;
  throw DatasetError("unknown label '" + s + "' (expected defective, intact or empty)");
}

struct ManifestEntry {
  std::string id;
  fs::path defective;
  fs::path templ;
  Label label = Label::unknown;
  std::string split;

  friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// Ordered list of image pairs. Relative paths resolve against base_dir.
struct Manifest {
  std::vector<ManifestEntry> entries;
  fs::path base_dir;

  fs::path resolve(const fs::path& p) const { return p.is_absolute() || base_dir.empty() ? p : base_dir / p; }

  std::vector<ManifestEntry> split(const std::string& name) const {
    std::vector<ManifestEntry> out;
    for (const auto& e : entries) {
      if (name == "all" || e.split == name) out.push_back(e);
    }
    return out;
  }

  Manifest subset(const std::string& name) const {
    Manifest m;
    m.base_dir = base_dir;
    m.entries = split(name);
    return m;
  }

  bool labeled() const {
    return !entries.empty() && std::all_of(entries.begin(), entries.end(),
                                           [](const auto& e) { return e.label != Label::unknown; });
  }
};

inline constexpr const char* kManifestHeader = "id,defective,template,label,split";

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

}  // namespace detail

inline std::string manifest_to_csv(const Manifest& m) {
  std::ostringstream os;
  os << kManifestHeader << '\n';
  for (const auto& e : m.entries) {
    os << detail::csv_field(e.id) << ',' << detail::csv_field(e.defective.generic_string()) << ','
       << detail::csv_field(e.templ.generic_string()) << ',' << to_string(e.label) << ','
       << detail::csv_field(e.split) << '\n';
  }
  return os.str();
}

inline void write_manifest(const fs::path& path, const Manifest& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DatasetError("cannot write manifest '" + path.string() + "'");
  out << manifest_to_csv(m);
}

/// Parse a manifest CSV. With check_files, every referenced image must exist.
inline Manifest read_manifest(const fs::path& path, bool check_files = true) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("cannot open manifest '" + path.string() + "'");
  Manifest m;
  m.base_dir = path.parent_path();
  std::string line;
  if (!std::getline(in, line)) throw DatasetError("manifest '" + path.string() + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kManifestHeader) {
    throw DatasetError("manifest '" + path.string() + "' has header '" + line + "', expected '" +
                       kManifestHeader + "'");
  }
  std::size_t lineno = 1;
  std::map<std::string, std::size_t> seen;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto f = detail::split_csv_line(line);
    if (f.size() != 5) {
      throw DatasetError("manifest line " + std::to_string(lineno) + ": expected 5 fields, got " +
                         std::to_string(f.size()));
    }
    ManifestEntry e{f[0], fs::path(f[1]), fs::path(f[2]), parse_label(f[3]), f[4]};
    if (e.id.empty() || e.defective.empty() || e.templ.empty()) {
      throw DatasetError("manifest line " + std::to_string(lineno) + ": id and both image paths are required");
    }
    if (!seen.emplace(e.id, lineno).second) {
      throw DatasetError("manifest line " + std::to_string(lineno) + ": duplicate id '" + e.id + "'");
    }
    if (check_files) {
      for (const auto& p : {e.defective, e.templ}) {
        if (!fs::exists(m.resolve(p))) {
          throw DatasetError("manifest entry '" + e.id + "': missing image '" + m.resolve(p).string() + "'");
        }
      }
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

struct ImagePair {
  std::string id;
  Tensor defective;  // 1 x H x W
  Tensor templ;      // 1 x H x W
};

inline ImagePair load_pair(const Manifest& m, const ManifestEntry& e, std::size_t height,
                           std::size_t width) {
  const auto dp = m.resolve(e.defective), tp = m.resolve(e.templ);
  const Raster8 dr = read_raster(dp), tr = read_raster(tp);
  if (dr.width != tr.width || dr.height != tr.height) {
    throw DatasetError("pair '" + e.id + "': defective image is " + std::to_string(dr.width) + "x" +
                       std::to_string(dr.height) + " but template is " + std::to_string(tr.width) +
                       "x" + std::to_string(tr.height));
  }
  return ImagePair{e.id, resize_bilinear(raster_to_gray(dr), height, width),
                   resize_bilinear(raster_to_gray(tr), height, width)};
}

// ---------------------------------------------------------------------------
// Salt-and-pepper noise

/// Set exactly round(density * numel) distinct, uniformly chosen pixels to 0
/// or 1 (fair coin each); every other pixel is untouched.
inline Tensor add_salt_pepper(const Tensor& img, double density, std::uint64_t seed) {
  if (!(density >= 0.0 && density <= 1.0)) {
    throw DatasetError("salt-and-pepper density must be in [0, 1], got " + std::to_string(density));
  }
  Tensor out = img;
  const std::size_t n = img.size();
  const auto k = static_cast<std::size_t>(std::llround(density * static_cast<double>(n)));
  if (k == 0) return out;
  Rng rng(seed);
  std::vector<std::uint32_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = static_cast<std::uint32_t>(i);
  // Partial Fisher-Yates: the first k slots are a uniform k-subset.
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
    out[idx[i]] = rng.coin() ? 1.0f : 0.0f;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitRatios {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
};

/// Assign train/val/test tags: a seeded shuffle, the first round(train*n)
/// entries to train, the next round(val*n) to val and the rest to test.
/// Entries keep their manifest order.
inline Manifest split_manifest(const Manifest& manifest, const SplitRatios& r, std::uint64_t seed) {
  if (manifest.entries.empty()) throw DatasetError("cannot split an empty manifest");
  if (r.train < 0 || r.val < 0 || r.test < 0 || std::abs(r.train + r.val + r.test - 1.0) > 1e-6) {
    throw DatasetError("split ratios must be nonnegative and sum to 1");
  }
  const std::size_t n = manifest.entries.size();
  std::size_t n_train = std::min<std::size_t>(n, static_cast<std::size_t>(std::llround(r.train * n)));
  std::size_t n_val = std::min<std::size_t>(n - n_train, static_cast<std::size_t>(std::llround(r.val * n)));
  if (r.test == 0.0) n_val = n - n_train;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order.begin(), order.end());
  Manifest out = manifest;
  for (std::size_t rank = 0; rank < n; ++rank) {
    out.entries[order[rank]].split = rank < n_train ? "train" : rank < n_train + n_val ? "val" : "test";
  }
  return out;
}

/// Same entries with paths rewritten relative to `base` (absolute when no
/// relative form exists), for writing the manifest into another directory.
inline Manifest rebase_manifest(const Manifest& m, const fs::path& base) {
  const fs::path abs_base = fs::absolute(base).lexically_normal();
  auto rebase = [&](const fs::path& p) {
    const fs::path abs = fs::absolute(m.resolve(p)).lexically_normal();
    fs::path rel = abs.lexically_relative(abs_base);
    return rel.empty() ? abs : rel;
  };
  Manifest out;
  out.base_dir = base;
  for (auto e : m.entries) {
    e.defective = rebase(e.defective);
    e.templ = rebase(e.templ);
    out.entries.push_back(std::move(e));
  }
  return out;
}

// ---------------------------------------------------------------------------
// DeepPCB directory layout: <name>_test.<ext> next to <name>_temp.<ext>.

inline Manifest scan_deeppcb(const fs::path& root) {
  if (!fs::is_directory(root)) throw DatasetError("'" + root.string() + "' is not a directory");
  std::map<std::string, std::pair<fs::path, fs::path>> pairs;
  for (const auto& de : fs::recursive_directory_iterator(root)) {
    if (!de.is_regular_file()) continue;
    const std::string stem = de.path().stem().string();
    auto ends = [&](const std::string& suf) {
      return stem.size() > suf.size() && stem.compare(stem.size() - suf.size(), suf.size(), suf) == 0;
    };
    if (!ends("_test")) continue;
    const std::string base = stem.substr(0, stem.size() - 5);
    const fs::path temp = de.path().parent_path() / (base + "_temp" + de.path().extension().string());
    if (!fs::exists(temp)) continue;
    pairs[fs::relative(de.path(), root).generic_string()] = {fs::relative(de.path(), root),
                                                             fs::relative(temp, root)};
  }
  Manifest m;
  m.base_dir = root;
  for (const auto& [key, p] : pairs) {
    std::string id = p.first.parent_path().generic_string();
    const std::string stem = p.first.stem().string();
    id = (id.empty() ? "" : id + "/") + stem.substr(0, stem.size() - 5);
    m.entries.push_back({id, p.first, p.second, Label::defective, ""});
  }
  return m;
}

// ---------------------------------------------------------------------------
// Synthetic PCB boards

enum class DefectKind { open, short_circuit, spur, spurious_copper, mousebite, flip };

struct DefectPlacement {
  DefectKind kind = DefectKind::flip;
  std::size_t x = 0, y = 0, w = 1, h = 1;  // affected rectangle
};

/// How defects are injected into synthetic boards. `none` leaves the
/// defective image equal to its template; `random` draws between
/// min_count and max_count defects with extents in [min_size, max_size]
/// pixels; `explicit_list` applies the given placements.
struct DefectSpec {
  enum class Mode { none, random, explicit_list } mode = Mode::random;
  std::size_t min_count = 1;
  std::size_t max_count = 3;
  std::size_t min_size = 3;
  std::size_t max_size = 30;
  std::vector<DefectPlacement> placements;

  static DefectSpec none() {
    DefectSpec s;
    s.mode = Mode::none;
    return s;
  }
  static DefectSpec random() { return DefectSpec{}; }
  static DefectSpec single(DefectPlacement p) {
    DefectSpec s;
    s.mode = Mode::explicit_list;
    s.placements.push_back(p);
    return s;
  }

  /// "none", "random" or "random:<min_count>-<max_count>:<min_size>-<max_size>".
  static DefectSpec parse(const std::string& text) {
    if (text == "none") return none();
    if (text == "random") return random();
    DefectSpec s;
    unsigned a, b, c, d;
    char tail;
    if (std::sscanf(text.c_str(), "random:%u-%u:%u-%u%c", &a, &b, &c, &d, &tail) == 4 && a <= b &&
        c <= d && c >= 1) {
      s.min_count = a;
      s.max_count = b;
      s.min_size = c;
      s.max_size = d;
      return s;
    }
    throw DatasetError("bad defect spec '" + text + "' (expected none, random or random:A-B:C-D)");
  }
};

struct SyntheticPair {
  std::string id;
  Tensor defective;  // 1 x S x S, values in {0, 1}
  Tensor templ;
  Tensor mask;       // 1 where defective != templ
  std::vector<DefectPlacement> defects;
};

namespace detail {

struct Canvas {
  std::size_t size;
  Tensor& img;
  float& px(long x, long y) { return img[static_cast<std::size_t>(y) * size + static_cast<std::size_t>(x)]; }
  bool inside(long x, long y) const {
    return x >= 0 && y >= 0 && x < static_cast<long>(size) && y < static_cast<long>(size);
  }
  void rect(long x0, long y0, long x1, long y1, float v) {  // inclusive corners
    for (long y = std::max(0L, y0); y <= std::min<long>(y1, size - 1); ++y)
      for (long x = std::max(0L, x0); x <= std::min<long>(x1, size - 1); ++x) px(x, y) = v;
  }
  void disc(double cx, double cy, double r, float v) {
    for (long y = static_cast<long>(std::floor(cy - r)); y <= static_cast<long>(std::ceil(cy + r)); ++y)
      for (long x = static_cast<long>(std::floor(cx - r)); x <= static_cast<long>(std::ceil(cx + r)); ++x)
        if (inside(x, y) && (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r) px(x, y) = v;
  }
};

}  // namespace detail

/// Circuit-like binary board: grid-aligned traces with square pads and
/// drilled vias. Copper is 1, substrate 0.
inline Tensor make_synthetic_template(std::size_t size, std::uint64_t seed) {
  if (size < 16 || size % 8 != 0) throw DatasetError("synthetic board size must be a multiple of 8 and >= 16");
  Tensor img({1, size, size});
  detail::Canvas cv{size, img};
  Rng rng(seed);
  const double scale = static_cast<double>(size) / 128.0;
  const long grid = std::max(4L, std::lround(8 * scale));
  const long cells = static_cast<long>(size) / grid;
  const long margin = 1;
  const long traces = std::max(4L, std::lround(10 * scale * scale));
  for (long t = 0; t < traces; ++t) {
    const long half = std::max(1L, std::lround(rng.between(1, 2) * scale));
    long gx = rng.between(margin, cells - 1 - margin), gy = rng.between(margin, cells - 1 - margin);
    const long segments = rng.between(1, 3);
    bool horizontal = rng.coin();
    auto pad = [&](long cx, long cy) {
      const long r = std::max(2L, std::lround(rng.between(3, 4) * scale));
      cv.rect(cx - r, cy - r, cx + r, cy + r, 1.0f);
      if (rng.coin()) cv.disc(static_cast<double>(cx), static_cast<double>(cy), std::max(1.0, 1.5 * scale), 0.0f);
    };
    pad(gx * grid, gy * grid);
    for (long s = 0; s < segments; ++s) {
      const long len = rng.between(2, std::max(3L, cells / 2));
      const long dir = rng.coin() ? 1 : -1;
      long nx = gx, ny = gy;
      if (horizontal) nx = std::clamp(gx + dir * len, margin, cells - 1 - margin);
      else ny = std::clamp(gy + dir * len, margin, cells - 1 - margin);
      cv.rect(std::min(gx, nx) * grid - half, std::min(gy, ny) * grid - half,
              std::max(gx, nx) * grid + half, std::max(gy, ny) * grid + half, 1.0f);
      gx = nx;
      gy = ny;
      horizontal = !horizontal;
    }
    pad(gx * grid, gy * grid);
  }
  return img;
}

namespace detail {

inline std::vector<std::pair<long, long>> pixels_with(const Tensor& img, std::size_t size, float v,
                                                      bool need_edge) {
  std::vector<std::pair<long, long>> out;
  const long S = static_cast<long>(size);
  for (long y = 0; y < S; ++y) {
    for (long x = 0; x < S; ++x) {
      if (img[static_cast<std::size_t>(y * S + x)] != v) continue;
      if (need_edge) {
        bool edge = false;
        for (auto [dx, dy] : {std::pair{1L, 0L}, {-1L, 0L}, {0L, 1L}, {0L, -1L}}) {
          const long ax = x + dx, ay = y + dy;
          if (ax >= 0 && ay >= 0 && ax < S && ay < S && img[static_cast<std::size_t>(ay * S + ax)] != v) edge = true;
        }
        if (!edge) continue;
      }
      out.emplace_back(x, y);
    }
  }
  return out;
}

// Applies one defect; returns its rectangle.
inline DefectPlacement apply_random_defect(Tensor& img, std::size_t size, const DefectSpec& spec, Rng& rng) {
  Canvas cv{size, img};
  const auto kind = static_cast<DefectKind>(rng.below(5));
  const long extent = rng.between(static_cast<long>(spec.min_size), static_cast<long>(spec.max_size));
  const double r = extent / 2.0;
  const bool on_copper = kind == DefectKind::open || kind == DefectKind::mousebite;
  const bool edge = kind != DefectKind::open && kind != DefectKind::spurious_copper;
  auto candidates = pixels_with(img, size, on_copper || edge ? 1.0f : 0.0f, edge);
  if (candidates.empty()) candidates = pixels_with(img, size, on_copper ? 1.0f : 0.0f, false);
  if (candidates.empty()) {  // tiny boards can lack copper or bare substrate entirely
    for (long y = 0; y < static_cast<long>(size); ++y)
      for (long x = 0; x < static_cast<long>(size); ++x) candidates.emplace_back(x, y);
  }
  const auto [cx, cy] = candidates[rng.below(candidates.size())];
  const long x0 = cx - extent / 2, y0 = cy - extent / 2;
  switch (kind) {
    case DefectKind::open:  // cut copper across a square
      cv.rect(x0, y0, x0 + extent - 1, y0 + extent - 1, 0.0f);
      break;
    case DefectKind::mousebite:
      cv.disc(static_cast<double>(cx), static_cast<double>(cy), r, 0.0f);
      break;
    case DefectKind::spur:
      cv.disc(static_cast<double>(cx), static_cast<double>(cy), r, 1.0f);
      break;
    case DefectKind::spurious_copper:
      cv.disc(static_cast<double>(cx), static_cast<double>(cy), r, 1.0f);
      break;
    case DefectKind::short_circuit: {  // thin bridge from an edge outward
      const long thick = std::max(1L, extent / 6);
      if (rng.coin()) cv.rect(cx, cy - thick, cx + (rng.coin() ? extent : -extent), cy + thick, 1.0f);
      else cv.rect(cx - thick, cy, cx + thick, cy + (rng.coin() ? extent : -extent), 1.0f);
      break;
    }
    default:
      break;
  }
  const long S = static_cast<long>(size);
  const long bx0 = std::clamp(x0 - extent, 0L, S - 1), by0 = std::clamp(y0 - extent, 0L, S - 1);
  const long bx1 = std::clamp(x0 + 2 * extent, 0L, S - 1), by1 = std::clamp(y0 + 2 * extent, 0L, S - 1);
  return {kind, static_cast<std::size_t>(bx0), static_cast<std::size_t>(by0),
          static_cast<std::size_t>(bx1 - bx0 + 1), static_cast<std::size_t>(by1 - by0 + 1)};
}

}  // namespace detail

inline Tensor difference_mask(const Tensor& a, const Tensor& b) {
  require_shape(b, a.shape(), "difference_mask");
  Tensor m(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) m[i] = a[i] != b[i] ? 1.0f : 0.0f;
  return m;
}

/// Inject defects into a template. The returned mask marks exactly the
/// pixels where the defective image differs from the template.
inline SyntheticPair inject_defects(const Tensor& templ, const DefectSpec& spec, std::uint64_t seed,
                                    std::string id = {}) {
  require_rank(templ, 3, "inject_defects");
  const std::size_t size = templ.dim(2);
  if (templ.dim(1) != size) throw DatasetError("inject_defects: board must be square");
  SyntheticPair p{std::move(id), templ, templ, Tensor(templ.shape()), {}};
  Rng rng(seed);
  if (spec.mode == DefectSpec::Mode::explicit_list) {
    for (const auto& d : spec.placements) {
      detail::Canvas cv{size, p.defective};
      for (std::size_t y = d.y; y < std::min(size, d.y + d.h); ++y) {
        for (std::size_t x = d.x; x < std::min(size, d.x + d.w); ++x) {
          float& v = cv.px(static_cast<long>(x), static_cast<long>(y));
          switch (d.kind) {
            case DefectKind::flip: v = 1.0f - v; break;
            case DefectKind::open:
            case DefectKind::mousebite: v = 0.0f; break;
            default: v = 1.0f; break;
          }
        }
      }
      p.defects.push_back(d);
    }
  } else if (spec.mode == DefectSpec::Mode::random) {
    const long count = rng.between(static_cast<long>(spec.min_count), static_cast<long>(spec.max_count));
    for (long i = 0; i < count; ++i) {
      // Redraw a defect that happens to change nothing.
      for (int attempt = 0; attempt < 16; ++attempt) {
        Tensor before = p.defective;
        auto placed = detail::apply_random_defect(p.defective, size, spec, rng);
        if (before != p.defective) {
          p.defects.push_back(placed);
          break;
        }
      }
    }
  }
  p.mask = difference_mask(p.defective, p.templ);
  return p;
}

inline SyntheticPair make_synthetic_pair(std::size_t size, const DefectSpec& spec, std::uint64_t seed,
                                         std::string id = {}) {
  return inject_defects(make_synthetic_template(size, derive_seed(seed, "template")), spec,
                        derive_seed(seed, "defects"), std::move(id));
}

inline std::string synthetic_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "syn%05zu", i);
  return buf;
}

inline fs::path mask_path_for(const fs::path& defective_path) {
  std::string stem = defective_path.stem().string();
  if (stem.size() > 5 && stem.compare(stem.size() - 5, 5, "_test") == 0) stem.resize(stem.size() - 5);
  return defective_path.parent_path() / (stem + "_mask.png");
}

/// Generate n synthetic pairs under out_dir (<id>_test.png, <id>_temp.png,
/// <id>_mask.png) and return the manifest (paths relative to out_dir, no
/// split tags). Pair i uses seed derive_seed(seed, id).
inline Manifest make_synthetic_dataset(std::size_t n, std::size_t size, const DefectSpec& spec,
                                       std::uint64_t seed, const fs::path& out_dir) {
  if (size % 8 != 0) throw DatasetError("synthetic board size must be divisible by 8");
  fs::create_directories(out_dir);
  Manifest m;
  m.base_dir = out_dir;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string id = synthetic_id(i);
    const SyntheticPair p = make_synthetic_pair(size, spec, derive_seed(seed, id), id);
    const fs::path test = id + "_test.png", temp = id + "_temp.png";
    save_gray_png(out_dir / test, p.defective);
    save_gray_png(out_dir / temp, p.templ);
    save_gray_png(out_dir / mask_path_for(test), p.mask);
    const bool defective = p.defective != p.templ;
    m.entries.push_back({id, test, temp, defective ? Label::defective : Label::intact, ""});
  }
  return m;
}

}  // namespace pcbae
