#pragma once

// Image decoding/encoding (PNG, JPEG, binary PGM/PPM) and the grayscale
// conversions used by the loaders. Images inside the library are Tensors of
// shape 1 x H x W with values in [0, 1].

#include <jpeglib.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <cctype>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "pcbae/tensor.hpp"

namespace pcbae {

class ImageError : public Error {
 public:
  using Error::Error;
};

/// 8-bit interleaved raster, 1 (gray) or 3 (RGB) channels.
struct Raster8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<std::uint8_t> pixels;

  Raster8() = default;
  Raster8(std::size_t w, std::size_t h, std::size_t c, std::uint8_t fill = 0)
      : width(w), height(h), channels(c), pixels(w * h * c, fill) {}

  std::uint8_t* at(std::size_t x, std::size_t y) { return &pixels[(y * width + x) * channels]; }
};

namespace detail {

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ImageError("cannot open image '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Raster8 decode_png(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw ImageError("corrupt PNG '" + name + "': " + image.message);
  }
  const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
  image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Raster8 r(image.width, image.height, color ? 3 : 1);
  if (!png_image_finish_read(&image, nullptr, r.pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw ImageError("corrupt PNG '" + name + "': " + msg);
  }
  return r;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

inline Raster8 decode_jpeg(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  Raster8 r;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw ImageError("corrupt JPEG '" + name + "': " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  r = Raster8(cinfo.output_width, cinfo.output_height,
              static_cast<std::size_t>(cinfo.output_components));
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = r.pixels.data() + static_cast<std::size_t>(cinfo.output_scanline) * r.width * r.channels;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return r;
}

// Binary PGM (P5) and PPM (P6), maxval up to 65535.
inline Raster8 decode_pnm(const std::vector<std::uint8_t>& bytes, const std::string& name) {
  std::size_t pos = 2;
  auto fail = [&](const std::string& why) -> ImageError {
    return ImageError("corrupt PNM '" + name + "': " + why);
  };
  auto next_int = [&]() -> long {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    long v = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      any = true;
      if (v > 1'000'000) throw fail("header value too large");
    }
    if (!any) throw fail("malformed header");
    return v;
  };
  const std::size_t channels = bytes[1] == '6' ? 3 : 1;
  const long w = next_int(), h = next_int(), maxval = next_int();
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) throw fail("bad dimensions or maxval");
  ++pos;  // single whitespace before the raster
  const std::size_t bps = maxval > 255 ? 2 : 1;
  const std::size_t count = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * channels;
  if (pos + count * bps > bytes.size()) throw fail("truncated raster");
  Raster8 r(static_cast<std::size_t>(w), static_cast<std::size_t>(h), channels);
  for (std::size_t i = 0; i < count; ++i) {
    unsigned v = bps == 1 ? bytes[pos + i] : (bytes[pos + 2 * i] << 8u) | bytes[pos + 2 * i + 1];
    r.pixels[i] = static_cast<std::uint8_t>(std::lround(255.0 * v / static_cast<double>(maxval)));
  }
  return r;
}

}  // namespace detail

/// Decode a PNG, JPEG or binary PGM/PPM file, sniffed by content.
inline Raster8 read_raster(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  const std::string name = path.string();
  if (bytes.size() >= 8 && bytes[0] == 0x89 && bytes[1] == 'P' && bytes[2] == 'N' && bytes[3] == 'G') {
    return detail::decode_png(bytes, name);
  }
  if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8) return detail::decode_jpeg(bytes, name);
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6')) {
    return detail::decode_pnm(bytes, name);
  }
  throw ImageError("unsupported or unreadable image '" + name + "'");
}

inline void write_png(const std::filesystem::path& path, const Raster8& r) {
  if (r.channels != 1 && r.channels != 3) throw ImageError("write_png: need 1 or 3 channels");
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(r.width);
  image.height = static_cast<png_uint_32>(r.height);
  image.format = r.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, r.pixels.data(), 0, nullptr)) {
    throw ImageError("cannot write PNG '" + path.string() + "': " + image.message);
  }
}

inline void write_pgm(const std::filesystem::path& path, const Raster8& r) {
  if (r.channels != 1) throw ImageError("write_pgm: need a single-channel raster");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ImageError("cannot write PGM '" + path.string() + "'");
  out << "P5\n" << r.width << ' ' << r.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(r.pixels.data()), static_cast<std::streamsize>(r.pixels.size()));
}

/// Luminance in [0, 1] as a 1 x H x W tensor (ITU-R BT.601 weights for RGB).
inline Tensor raster_to_gray(const Raster8& r) {
  Tensor t({1, r.height, r.width});
  const std::size_t n = r.width * r.height;
  for (std::size_t i = 0; i < n; ++i) {
    if (r.channels == 1) {
      t[i] = r.pixels[i] / 255.0f;
    } else {
      const std::uint8_t* p = &r.pixels[i * r.channels];
      t[i] = static_cast<float>((0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]) / 255.0);
    }
  }
  return t;
}

/// Quantize a [0, 1] image (1 x H x W or H x W) to 8-bit gray.
inline Raster8 gray_to_raster(const Tensor& img) {
  const std::size_t h = img.dim(img.rank() - 2), w = img.dim(img.rank() - 1);
  if (img.size() != h * w) throw ShapeError("gray_to_raster: expected a single-channel image");
  Raster8 r(w, h, 1);
  for (std::size_t i = 0; i < h * w; ++i) {
    r.pixels[i] = static_cast<std::uint8_t>(std::lround(std::clamp(img[i], 0.0f, 1.0f) * 255.0f));
  }
  return r;
}

inline void save_gray_png(const std::filesystem::path& path, const Tensor& img) {
  write_png(path, gray_to_raster(img));
}

/// Bilinear resize with half-pixel centers (no antialiasing). Input and
/// output are 1 x H x W.
inline Tensor resize_bilinear(const Tensor& img, std::size_t out_h, std::size_t out_w) {
  require_rank(img, 3, "resize_bilinear");
  const std::size_t in_h = img.dim(1), in_w = img.dim(2);
  if (in_h == out_h && in_w == out_w) return img;
  Tensor out({1, out_h, out_w});
  const double sy = static_cast<double>(in_h) / out_h, sx = static_cast<double>(in_w) / out_w;
  auto src_coord = [](std::size_t o, double scale, std::size_t n, std::size_t& i0, std::size_t& i1,
                      double& frac) {
    double c = (o + 0.5) * scale - 0.5;
    c = std::clamp(c, 0.0, static_cast<double>(n - 1));
    i0 = static_cast<std::size_t>(std::floor(c));
    i1 = std::min(i0 + 1, n - 1);
    frac = c - static_cast<double>(i0);
  };
  for (std::size_t y = 0; y < out_h; ++y) {
    std::size_t y0, y1;
    double fy;
    src_coord(y, sy, in_h, y0, y1, fy);
    for (std::size_t x = 0; x < out_w; ++x) {
      std::size_t x0, x1;
      double fx;
      src_coord(x, sx, in_w, x0, x1, fx);
      const double top = img[y0 * in_w + x0] * (1.0 - fx) + img[y0 * in_w + x1] * fx;
      const double bot = img[y1 * in_w + x0] * (1.0 - fx) + img[y1 * in_w + x1] * fx;
      out[y * out_w + x] = static_cast<float>(top * (1.0 - fy) + bot * fy);
    }
  }
  return out;
}

/// Decode, convert to luminance, resize to (height, width) and scale to [0, 1].
inline Tensor load_image(const std::filesystem::path& path, std::size_t height, std::size_t width) {
  Raster8 r;
  try {
    r = read_raster(path);
  } catch (const ImageError&) {
    throw;
  } catch (const std::exception& e) {
    throw ImageError("cannot decode '" + path.string() + "': " + e.what());
  }
  return resize_bilinear(raster_to_gray(r), height, width);
}

inline Tensor load_image(const std::filesystem::path& path, std::size_t size) {
  return load_image(path, size, size);
}

}  // namespace pcbae
