#pragma once

// Portable float maps ("Pf" gray, "PF" color) and binary 8-bit PPM ("P6").

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "nanodepth/arch/serialize.hpp"
#include "nanodepth/engine/tensor.hpp"
#include "nanodepth/errors.hpp"

namespace nanodepth::io {

struct PfmImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  double scale = -1.0;        // magnitude kept; sign selects byte order
  std::vector<float> pixels;  // top row first, channels interleaved

  friend bool operator==(const PfmImage&, const PfmImage&) = default;
};

namespace detail {

/// Header tokenizer: whitespace-separated tokens, then exactly one
/// whitespace byte before the payload.
class HeaderReader {
 public:
  HeaderReader(std::string_view bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  std::string token() {
    while (pos_ < bytes_.size() && is_space(bytes_[pos_])) ++pos_;
    const std::size_t start = pos_;
    while (pos_ < bytes_.size() && !is_space(bytes_[pos_])) ++pos_;
    if (start == pos_) throw FormatError(what_ + ": truncated header");
    return std::string(bytes_.substr(start, pos_ - start));
  }
  std::size_t positive(const char* field) {
    const std::string t = token();
    const std::size_t v = arch::parse_count(t, what_ + " " + field);
    if (v == 0) throw FormatError(what_ + ": " + field + " must be positive");
    return v;
  }
  std::string_view payload() {
    if (pos_ >= bytes_.size() || !is_space(bytes_[pos_])) throw FormatError(what_ + ": missing separator before payload");
    return bytes_.substr(pos_ + 1);
  }

 private:
  static bool is_space(char c) { return c == ' ' || c == '\n' || c == '\r' || c == '\t'; }
  std::string_view bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_pfm(const PfmImage& img) {
  if (img.channels != 1 && img.channels != 3) throw FormatError("pfm: channels must be 1 or 3");
  if (img.width == 0 || img.height == 0) throw FormatError("pfm: dimensions must be positive");
  if (img.pixels.size() != img.width * img.height * img.channels) throw FormatError("pfm: pixel count mismatch");
  if (!(img.scale != 0.0) || !std::isfinite(img.scale)) throw FormatError("pfm: scale must be finite and nonzero");
  const bool little = img.scale < 0.0;
  std::string out = img.channels == 1 ? "Pf\n" : "PF\n";
  out += std::to_string(img.width) + " " + std::to_string(img.height) + "\n";
  std::string scale = arch::format_real(img.scale);
  if (scale.find_first_of(".e") == std::string::npos) scale += ".0";
  out += scale + "\n";
  const std::size_t row = img.width * img.channels;
  for (std::size_t y = img.height; y-- > 0;) {
    for (std::size_t i = 0; i < row; ++i) {
      const std::uint32_t bits = std::bit_cast<std::uint32_t>(img.pixels[y * row + i]);
      for (int b = 0; b < 4; ++b) {
        const int shift = little ? 8 * b : 8 * (3 - b);
        out.push_back(static_cast<char>((bits >> shift) & 0xff));
      }
    }
  }
  return out;
}

inline PfmImage decode_pfm(std::string_view bytes) {
  detail::HeaderReader h(bytes, "pfm");
  const std::string magic = h.token();
  PfmImage img;
  if (magic == "Pf") {
    img.channels = 1;
  } else if (magic == "PF") {
    img.channels = 3;
  } else {
    throw FormatError("pfm: bad magic '" + magic.substr(0, 8) + "'");
  }
  img.width = h.positive("width");
  img.height = h.positive("height");
  img.scale = arch::parse_real(h.token(), "pfm scale");
  if (!(img.scale != 0.0) || !std::isfinite(img.scale)) throw FormatError("pfm: scale must be finite and nonzero");
  const std::string_view payload = h.payload();
  const std::size_t row = img.width * img.channels;
  if (img.width > payload.size() || img.height > payload.size() || row * img.height * 4 != payload.size()) {
    throw FormatError("pfm: payload has " + std::to_string(payload.size()) + " bytes, header implies " +
                      std::to_string(row * img.height * 4));
  }
  const bool little = img.scale < 0.0;
  img.pixels.resize(row * img.height);
  std::size_t k = 0;
  for (std::size_t y = img.height; y-- > 0;) {
    for (std::size_t i = 0; i < row; ++i, ++k) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        const auto byte = static_cast<std::uint32_t>(static_cast<unsigned char>(payload[4 * k + b]));
        bits |= byte << (little ? 8 * b : 8 * (3 - b));
      }
      img.pixels[y * row + i] = std::bit_cast<float>(bits);
    }
  }
  return img;
}

inline void write_pfm(const std::string& path, const PfmImage& img) { arch::write_text_file(path, encode_pfm(img)); }
inline PfmImage read_pfm(const std::string& path) { return decode_pfm(arch::read_text_file(path)); }

/// Depth map of image `n` of an N x 1 x H x W tensor.
template <typename T>
PfmImage depth_to_pfm(const Tensor<T>& t, std::size_t n = 0) {
  if (t.c() != 1) throw ShapeError("depth_to_pfm: expected one channel, got " + t.shape().str());
  PfmImage img{t.w(), t.h(), 1, -1.0, {}};
  for (std::size_t y = 0; y < t.h(); ++y) {
    for (std::size_t x = 0; x < t.w(); ++x) img.pixels.push_back(static_cast<float>(t.at(n, 0, y, x)));
  }
  return img;
}

/// 1 x C x H x W tensor from a PFM (channels de-interleaved).
template <typename T = float>
Tensor<T> pfm_to_tensor(const PfmImage& img) {
  Tensor<T> t(Shape{1, img.channels, img.height, img.width});
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < img.channels; ++c) {
        t.at(0, c, y, x) = static_cast<T>(img.pixels[(y * img.width + x) * img.channels + c]);
      }
    }
  }
  return t;
}

// ---------------------------------------------------------------------------
// PPM

struct PpmImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;  // interleaved, top row first

  friend bool operator==(const PpmImage&, const PpmImage&) = default;
};

inline std::string encode_ppm(const PpmImage& img) {
  if (img.width == 0 || img.height == 0) throw FormatError("ppm: dimensions must be positive");
  if (img.rgb.size() != img.width * img.height * 3) throw FormatError("ppm: pixel count mismatch");
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(img.rgb.begin(), img.rgb.end());
  return out;
}

inline PpmImage decode_ppm(std::string_view bytes) {
  detail::HeaderReader h(bytes, "ppm");
  const std::string magic = h.token();
  if (magic != "P6") throw FormatError("ppm: bad magic '" + magic.substr(0, 8) + "' (only binary P6 is supported)");
  PpmImage img;
  img.width = h.positive("width");
  img.height = h.positive("height");
  const std::size_t maxval = h.positive("maxval");
  if (maxval != 255) throw FormatError("ppm: maxval must be 255, got " + std::to_string(maxval));
  const std::string_view payload = h.payload();
  if (img.width > payload.size() || img.height > payload.size() || img.width * img.height * 3 != payload.size()) {
    throw FormatError("ppm: payload has " + std::to_string(payload.size()) + " bytes, header implies " +
                      std::to_string(img.width * img.height * 3));
  }
  img.rgb.assign(payload.begin(), payload.end());
  return img;
}

inline void write_ppm(const std::string& path, const PpmImage& img) { arch::write_text_file(path, encode_ppm(img)); }
inline PpmImage read_ppm_image(const std::string& path) { return decode_ppm(arch::read_text_file(path)); }

/// 1 x 3 x H x W tensor with v / 255.
template <typename T = float>
Tensor<T> ppm_to_tensor(const PpmImage& img) {
  Tensor<T> t(Shape{1, 3, img.height, img.width});
  for (std::size_t y = 0; y < img.height; ++y) {
    for (std::size_t x = 0; x < img.width; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        t.at(0, c, y, x) = static_cast<T>(img.rgb[(y * img.width + x) * 3 + c]) / static_cast<T>(255);
      }
    }
  }
  return t;
}

template <typename T = float>
Tensor<T> read_ppm(const std::string& path) {
  return ppm_to_tensor<T>(read_ppm_image(path));
}

/// Quantizes a 1 x 3 x H x W tensor in [0, 1] to 8 bits (rounded, clamped).
template <typename T>
PpmImage tensor_to_ppm(const Tensor<T>& t) {
  if (t.c() != 3) throw ShapeError("tensor_to_ppm: expected three channels, got " + t.shape().str());
  PpmImage img{t.w(), t.h(), {}};
  for (std::size_t y = 0; y < t.h(); ++y) {
    for (std::size_t x = 0; x < t.w(); ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(static_cast<double>(t.at(0, c, y, x)), 0.0, 1.0);
        img.rgb.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
      }
    }
  }
  return img;
}

}  // namespace nanodepth::io
