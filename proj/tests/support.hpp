#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>

#include "creward/rng.hpp"

namespace creward::testing {

// Scratch directory removed on scope exit.
class TempDir {
 public:
  TempDir() {
    std::string pattern = (std::filesystem::temp_directory_path() / "creward-test-XXXXXX").string();
    if (!mkdtemp(pattern.data())) throw std::runtime_error("mkdtemp failed");
    path_ = pattern;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline std::string random_word(Rng& rng, std::size_t max_len = 10) {
  static constexpr std::string_view alphabet = "abcdefghijklmnopqrstuvwxyz0123456789-_ ";
  std::string s;
  const std::size_t n = 1 + rng.uniform_index(max_len);
  for (std::size_t i = 0; i < n; ++i) s += alphabet[rng.uniform_index(alphabet.size())];
  return s;
}

}  // namespace creward::testing
