#pragma once

#include <cstdint>
#include <numeric>
#include <string>

#include "m2mrf/errors.hpp"

namespace m2mrf {

// Exact sample rate. Keeps rates like 1/2 or 4 free of float rounding so
// patch-level output sizes stay well defined.
struct Rational {
  int64_t num = 1;
  int64_t den = 1;

  Rational() = default;
  Rational(int64_t n, int64_t d) : num(n), den(d) {
    if (d <= 0 || n <= 0) throw ConfigError("sample rate must be positive, got " + str());
    const int64_t g = std::gcd(num, den);
    num /= g;
    den /= g;
  }

  // r * x, valid only when the product is an integer.
  int64_t scale_exact(int64_t x) const {
    const int64_t p = num * x;
    if (p % den != 0)
      throw ConfigError("rate " + str() + " does not scale " + std::to_string(x) + " to an integer");
    return p / den;
  }

  bool scales_to_integer(int64_t x) const { return (num * x) % den == 0; }

  // round-half-up of r * x; used when cropping padded outputs back.
  int64_t scale_round(int64_t x) const { return (num * x + den / 2) / den; }

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  bool is_one() const { return num == den; }

  friend bool operator==(const Rational& a, const Rational& b) {
    return a.num == b.num && a.den == b.den;
  }

  std::string str() const {
    return den == 1 ? std::to_string(num) : std::to_string(num) + "/" + std::to_string(den);
  }
};

}  // namespace m2mrf
