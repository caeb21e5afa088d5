#pragma once

// Seeded input generators for property tests.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace gen {

class Source {
 public:
  explicit Source(std::uint64_t seed) : rng_(seed) {}

  std::uint64_t below(std::uint64_t n) { return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(rng_); }
  std::int64_t between(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(rng_);
  }
  double real(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  bool coin(double p = 0.5) { return real(0.0, 1.0) < p; }
  std::uint64_t raw() { return rng_(); }

  // Short strings over a small alphabet (with two non-ASCII letters) so
  // edit-distance cases collide often.
  std::string word(std::size_t max_len) {
    static const char* const kAlphabet[] = {"a", "b", "c", "x", "\xC3\xA9", "\xC3\xB1"};
    std::string s;
    const std::size_t len = below(max_len + 1);
    for (std::size_t i = 0; i < len; ++i) s += kAlphabet[below(6)];
    return s;
  }

  std::vector<double> reals(std::size_t n, double lo, double hi) {
    std::vector<double> v(n);
    for (auto& x : v) x = real(lo, hi);
    return v;
  }

  // Values drawn from a handful of levels, so ties are common.
  std::vector<double> tied(std::size_t n, std::size_t levels) {
    std::vector<double> v(n);
    for (auto& x : v) x = static_cast<double>(below(levels));
    return v;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 rng_;
};

}  // namespace gen
