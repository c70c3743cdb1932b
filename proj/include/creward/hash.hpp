#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>

#include <Eigen/Core>

namespace creward {

/// 64-bit FNV-1a. Used for content addressing and parameter fingerprints.
class Fnv1a {
 public:
  Fnv1a& update(std::span<const std::byte> bytes) {
    for (std::byte b : bytes) {
      state_ ^= static_cast<std::uint64_t>(b);
      state_ *= 0x100000001b3ULL;
    }
    return *this;
  }
  Fnv1a& update(std::string_view s) {
    return update(std::as_bytes(std::span(s.data(), s.size())));
  }
  template <typename Derived>
  Fnv1a& update(const Eigen::DenseBase<Derived>& m) {
    const auto plain = m.eval();
    return update(std::as_bytes(std::span(plain.data(), static_cast<std::size_t>(plain.size()))));
  }
  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

inline std::uint64_t fnv1a(std::string_view s) { return Fnv1a{}.update(s).digest(); }

std::string to_hex(std::uint64_t v, int digits = 16);

}  // namespace creward
