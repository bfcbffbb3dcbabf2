#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace anyres {

inline constexpr int kChannels = 3;

/// H x W x 3 floating-point image, interleaved row-major. Values are nominally
/// in [0,1] but are only clamped when written to disk.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(int h, int w, double fill = 0.0)
      : height(h), width(w), pixels(static_cast<std::size_t>(h) * w * kChannels, fill) {}

  std::size_t index(int y, int x, int c) const {
    return (static_cast<std::size_t>(y) * width + x) * kChannels + c;
  }
  double& at(int y, int x, int c) { return pixels[index(y, x, c)]; }
  double at(int y, int x, int c) const { return pixels[index(y, x, c)]; }
  int short_side() const { return height < width ? height : width; }
  bool empty() const { return pixels.empty(); }

  friend bool operator==(const Image&, const Image&) = default;
};

struct MaskedImage {
  Image image;
  std::vector<std::uint8_t> mask;  // H x W, entries in {0,1}

  int covered() const {
    int n = 0;
    for (auto m : mask) n += m;
    return n;
  }
};

double max_abs_diff(const Image& a, const Image& b);
double mean_abs_diff(const Image& a, const Image& b);

/// Decodes PNG or JPEG (by content). Throws std::runtime_error on any decoder
/// error or warning, including truncated data.
Image read_image(const std::filesystem::path& path);

/// 8-bit RGB PNG, values clamped to [0,1] and rounded. Optional tEXt entries
/// are written in the order given. Output bytes are a pure function of input.
void write_png(const std::filesystem::path& path, const Image& img,
               const std::vector<std::pair<std::string, std::string>>& text = {});

/// Quantizes like write_png does, without touching the filesystem.
Image quantize8(const Image& img);

}  // namespace anyres
