#include "creward/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>

#include "creward/core.hpp"
#include "creward/rng.hpp"

namespace creward {

Image make_image(int width, int height) {
  Image img;
  img.width = width;
  img.height = height;
  img.rgb.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3, 0.0f);
  return img;
}

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string_view next_token(std::string_view bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    const unsigned char c = static_cast<unsigned char>(bytes[pos]);
    if (c == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(c)) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  return bytes.substr(start, pos - start);
}

int parse_int(std::string_view tok) {
  if (tok.empty() || tok.size() > 6) throw Error("decode", "bad PPM header field");
  int v = 0;
  for (char c : tok) {
    if (c < '0' || c > '9') throw Error("decode", "bad PPM header field");
    v = v * 10 + (c - '0');
  }
  return v;
}

}  // namespace

Image decode_ppm(std::string_view bytes) {
  std::size_t pos = 0;
  if (next_token(bytes, pos) != "P6") throw Error("decode", "not a binary PPM (P6) image");
  const int w = parse_int(next_token(bytes, pos));
  const int h = parse_int(next_token(bytes, pos));
  const int maxval = parse_int(next_token(bytes, pos));
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw Error("decode", "unsupported PPM dimensions");
  ++pos;  // single whitespace before raster
  const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * 3;
  if (bytes.size() < pos + need) throw Error("decode", "truncated PPM raster");
  Image img = make_image(w, h);
  for (std::size_t i = 0; i < need; ++i) {
    img.rgb[i] = static_cast<float>(static_cast<unsigned char>(bytes[pos + i])) / static_cast<float>(maxval);
  }
  return img;
}

std::string encode_ppm(const Image& image) {
  std::string out = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  out.reserve(out.size() + image.rgb.size());
  for (float v : image.rgb) {
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f))));
  }
  return out;
}

std::string encode_pgm(const Eigen::MatrixXd& values) {
  std::string out = "P5\n" + std::to_string(values.cols()) + " " + std::to_string(values.rows()) + "\n255\n";
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      out.push_back(static_cast<char>(
          static_cast<unsigned char>(std::lround(std::clamp(values(r, c), 0.0, 1.0) * 255.0))));
    }
  }
  return out;
}

Image load_image(const std::filesystem::path& path) { return decode_ppm(read_text(path)); }

void save_image(const std::filesystem::path& path, const Image& image) { write_text(path, encode_ppm(image)); }

Image synthesize_image(std::uint64_t seed, int size, bool plain) {
  Rng rng(seed);
  Image img = make_image(size, size);
  const double lobes = plain ? 0.0 : std::floor(rng.uniform(0.0, 7.0));
  const double lobe_depth = plain ? 0.0 : rng.uniform(0.0, 0.35);
  const double twist = plain ? 0.0 : rng.uniform(-1.5, 1.5);
  const double radius = rng.uniform(0.28, 0.4);
  const double sheen = plain ? 0.1 : rng.uniform(0.0, 1.0);
  const double stripes = plain ? 0.0 : std::floor(rng.uniform(0.0, 9.0));
  const double pattern_amp = plain ? 0.0 : rng.uniform(0.0, 0.5);
  const std::array<double, 3> base = plain ? std::array<double, 3>{0.55, 0.5, 0.45}
                                           : std::array<double, 3>{rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9),
                                                                   rng.uniform(0.1, 0.9)};
  const std::array<double, 3> accent = {rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)};

  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double u = (x + 0.5) / size - 0.5;
      const double v = (y + 0.5) / size - 0.5;
      const double r = std::hypot(u, v);
      const double theta = std::atan2(v, u) + twist * r;
      const double boundary = radius * (1.0 + lobe_depth * std::cos(lobes * theta));
      const bool inside = r < boundary;
      for (int c = 0; c < 3; ++c) {
        double value = 0.95;  // clean background
        if (inside) {
          const double highlight = sheen * std::exp(-((u + 0.1) * (u + 0.1) + (v + 0.1) * (v + 0.1)) * 40.0);
          const double pattern = pattern_amp * 0.5 * (1.0 + std::sin(stripes * std::numbers::pi * (u + v) * 4.0));
          value = base[static_cast<std::size_t>(c)] * (1.0 - pattern) +
                  accent[static_cast<std::size_t>(c)] * pattern + highlight;
        }
        img.at(x, y, c) = static_cast<float>(std::clamp(value, 0.0, 1.0));
      }
    }
  }
  return img;
}

}  // namespace creward
