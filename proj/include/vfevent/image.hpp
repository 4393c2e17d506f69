#pragma once

#include "vfevent/core.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

namespace vfevent {

/// Canonical in-memory image: three channels in [-1, 1], stored channel-major
/// (all of R, then G, then B; each row-major).
struct ImageArray {
  int height = 0;
  int width = 0;
  Vector pixels;

  static ImageArray zeros(int resolution) {
    return ImageArray{resolution, resolution, Vector::Zero(3 * resolution * resolution)};
  }

  static ImageArray from_pixels(int resolution, Vector values) {
    if (values.size() != 3 * resolution * resolution) {
      throw Error(ErrorKind::kInput, "pixel count does not match resolution " +
                                         std::to_string(resolution));
    }
    return ImageArray{resolution, resolution, std::move(values)};
  }

  Eigen::Index size() const { return pixels.size(); }

  double& at(int channel, int y, int x) { return pixels[(channel * height + y) * width + x]; }
  double at(int channel, int y, int x) const {
    return pixels[(channel * height + y) * width + x];
  }

  double channel_mean(int channel) const {
    const Eigen::Index plane = Eigen::Index(height) * width;
    return pixels.segment(channel * plane, plane).mean();
  }

  bool operator==(const ImageArray& other) const {
    return height == other.height && width == other.width && pixels == other.pixels;
  }
};

/// Checks the ImageArray invariants against a working resolution.
inline void validate_image(const ImageArray& image, int resolution) {
  if (image.height != resolution || image.width != resolution) {
    throw Error(ErrorKind::kInput, "image is " + std::to_string(image.height) + "x" +
                                       std::to_string(image.width) + ", expected " +
                                       std::to_string(resolution) + "x" +
                                       std::to_string(resolution));
  }
  if (image.pixels.size() != 3 * Eigen::Index(resolution) * resolution) {
    throw Error(ErrorKind::kInput, "image pixel buffer has the wrong size");
  }
  if (!all_finite(image.pixels) || image.pixels.maxCoeff() > 1.0 ||
      image.pixels.minCoeff() < -1.0) {
    throw Error(ErrorKind::kInput, "image values must be finite and within [-1, 1]");
  }
}

namespace detail {

struct RgbBuffer {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> data;  // interleaved RGB
};

inline bool has_png_signature(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  unsigned char sig[8] = {};
  in.read(reinterpret_cast<char*>(sig), 8);
  return in.gcount() == 8 && png_sig_cmp(sig, 0, 8) == 0;
}

inline RgbBuffer read_png(const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw Error(ErrorKind::kDecode, path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  RgbBuffer out;
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  out.data.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.data.data(), 0, nullptr)) {
    std::string message = image.message;
    png_image_free(&image);
    throw Error(ErrorKind::kDecode, path.string() + ": " + message);
  }
  return out;
}

// Reads the next whitespace-separated header token of a netpbm file, skipping
// '#' comments.
inline std::string next_pnm_token(std::istream& in) {
  std::string token;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!token.empty()) break;
      continue;
    }
    token.push_back(static_cast<char>(c));
  }
  return token;
}

inline RgbBuffer read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kDecode, path.string() + ": cannot open");
  const std::string magic = next_pnm_token(in);
  if (magic != "P6" && magic != "P3") {
    throw Error(ErrorKind::kDecode, path.string() + ": unsupported image format");
  }
  RgbBuffer out;
  int maxval = 0;
  try {
    out.width = std::stoi(next_pnm_token(in));
    out.height = std::stoi(next_pnm_token(in));
    maxval = std::stoi(next_pnm_token(in));
  } catch (const std::exception&) {
    throw Error(ErrorKind::kDecode, path.string() + ": corrupt pixmap header");
  }
  if (out.width < 0 || out.height < 0 || maxval <= 0 || maxval > 255) {
    throw Error(ErrorKind::kDecode, path.string() + ": unsupported pixmap header");
  }
  const std::size_t count = std::size_t(out.width) * std::size_t(out.height) * 3;
  out.data.resize(count);
  if (magic == "P6") {
    in.read(reinterpret_cast<char*>(out.data.data()), std::streamsize(count));
    if (std::size_t(in.gcount()) != count) {
      throw Error(ErrorKind::kDecode, path.string() + ": truncated pixel data");
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      const std::string tok = next_pnm_token(in);
      if (tok.empty()) throw Error(ErrorKind::kDecode, path.string() + ": truncated pixel data");
      out.data[i] = static_cast<std::uint8_t>(std::stoi(tok));
    }
  }
  if (maxval != 255) {
    for (auto& v : out.data) v = static_cast<std::uint8_t>(std::lround(v * 255.0 / maxval));
  }
  return out;
}

// Area-weighted resampling of an 8-bit RGB buffer onto a square grid, mapped
// into [-1, 1].
inline ImageArray resample(const RgbBuffer& src, int resolution) {
  ImageArray out = ImageArray::zeros(resolution);
  const double sy = double(src.height) / resolution;
  const double sx = double(src.width) / resolution;
  for (int oy = 0; oy < resolution; ++oy) {
    const double y0 = oy * sy, y1 = (oy + 1) * sy;
    for (int ox = 0; ox < resolution; ++ox) {
      const double x0 = ox * sx, x1 = (ox + 1) * sx;
      double acc[3] = {0, 0, 0};
      double area = 0;
      for (int y = int(y0); y < std::min(src.height, int(std::ceil(y1))); ++y) {
        const double wy = std::min<double>(y + 1, y1) - std::max<double>(y, y0);
        if (wy <= 0) continue;
        for (int x = int(x0); x < std::min(src.width, int(std::ceil(x1))); ++x) {
          const double wx = std::min<double>(x + 1, x1) - std::max<double>(x, x0);
          if (wx <= 0) continue;
          const std::size_t base = (std::size_t(y) * src.width + x) * 3;
          for (int c = 0; c < 3; ++c) acc[c] += wx * wy * src.data[base + c];
          area += wx * wy;
        }
      }
      for (int c = 0; c < 3; ++c) {
        out.at(c, oy, ox) = std::clamp(2.0 * (acc[c] / area) / 255.0 - 1.0, -1.0, 1.0);
      }
    }
  }
  return out;
}

}  // namespace detail

/// Decodes a PNG or binary/ASCII pixmap and resamples it to resolution x resolution.
inline ImageArray load_image(const std::filesystem::path& path, int resolution) {
  if (resolution <= 0) throw Error(ErrorKind::kInput, "resolution must be positive");
  if (!std::filesystem::exists(path)) {
    throw Error(ErrorKind::kDecode, path.string() + ": file not found");
  }
  const detail::RgbBuffer buffer =
      detail::has_png_signature(path) ? detail::read_png(path) : detail::read_ppm(path);
  if (buffer.width == 0 || buffer.height == 0) {
    throw Error(ErrorKind::kValidation, path.string() + ": zero-size image");
  }
  return detail::resample(buffer, resolution);
}

inline std::uint8_t quantize(double value) {
  return static_cast<std::uint8_t>(
      std::lround(std::clamp((value + 1.0) * 0.5 * 255.0, 0.0, 255.0)));
}

inline void save_png(const ImageArray& image, const std::filesystem::path& path) {
  std::vector<std::uint8_t> rgb(std::size_t(image.width) * image.height * 3);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      for (int c = 0; c < 3; ++c) {
        rgb[(std::size_t(y) * image.width + x) * 3 + c] = quantize(image.at(c, y, x));
      }
    }
  }
  png_image out{};
  out.version = PNG_IMAGE_VERSION;
  out.width = static_cast<png_uint_32>(image.width);
  out.height = static_cast<png_uint_32>(image.height);
  out.format = PNG_FORMAT_RGB;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!png_image_write_to_file(&out, path.string().c_str(), 0, rgb.data(), 0, nullptr)) {
    throw Error(ErrorKind::kIo, path.string() + ": " + out.message);
  }
}

}  // namespace vfevent
