#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace creward {

/// Interleaved RGB image, values in [0, 1], row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> rgb;  // width * height * 3

  float at(int x, int y, int c) const {
    return rgb[(static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) * 3 +
               static_cast<std::size_t>(c)];
  }
  float& at(int x, int y, int c) {
    return rgb[(static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) * 3 +
               static_cast<std::size_t>(c)];
  }
  bool empty() const { return width == 0 || height == 0; }
};

Image make_image(int width, int height);

/// Binary PPM (P6, maxval 255). Throws Error{"decode"} on malformed input.
Image decode_ppm(std::string_view bytes);
std::string encode_ppm(const Image& image);

/// Binary PGM (P5) of a map already scaled to [0, 1].
std::string encode_pgm(const Eigen::MatrixXd& values);

Image load_image(const std::filesystem::path& path);
void save_image(const std::filesystem::path& path, const Image& image);

/// Deterministic procedural image: a centered object silhouette whose shape,
/// material sheen and surface pattern are driven by `seed`. `plain` yields the
/// unadorned silhouette used for normal ("a {obj}") prompts.
Image synthesize_image(std::uint64_t seed, int size, bool plain);

}  // namespace creward
