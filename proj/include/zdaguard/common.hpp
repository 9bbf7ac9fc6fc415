#pragma once

#include <cstdint>
#include <charconv>
#include <numeric>
#include <stdexcept>
#include <string>

namespace zdaguard {

/// Raised on malformed configuration / schema violations. `path` names the
/// offending config field (JSON-pointer style, e.g. "$.sampling.dt_u").
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& path, const std::string& what)
      : std::runtime_error(path + ": " + what), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

/// Raised when an optimization problem has no admissible solution.
class InfeasibleError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Raised on numerical breakdown (non-finite data, solver failure).
class NumericalError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Exact rational arithmetic for the sampling grid. Actuation instants
/// l*dt_u and sensing instants k*dt_y must be compared exactly: a float
/// comparison at a window edge can flip a hold integral on or off.
class Rational {
 public:
  Rational() : num_(0), den_(1) {}
  Rational(std::int64_t num, std::int64_t den) : num_(num), den_(den) {
    if (den_ == 0) throw std::invalid_argument("Rational: zero denominator");
    if (den_ < 0) {
      num_ = -num_;
      den_ = -den_;
    }
    const std::int64_t g = std::gcd(num_ < 0 ? -num_ : num_, den_);
    if (g > 1) {
      num_ /= g;
      den_ /= g;
    }
  }
  static Rational from_int(std::int64_t v) { return Rational(v, 1); }

  /// Parses a plain decimal string ("0.5", "-3", "10.25"). No exponents.
  static Rational parse_decimal(const std::string& text);

  /// Converts a double through its shortest round-trip decimal form, so
  /// JSON numbers like 0.5 or 0.0001 become the small rationals a user
  /// meant, not 53-bit binary fractions.
  static Rational from_double(double v);

  std::int64_t num() const { return num_; }
  std::int64_t den() const { return den_; }
  double to_double() const {
    return static_cast<double>(num_) / static_cast<double>(den_);
  }

  Rational operator*(std::int64_t k) const { return Rational(mul_checked(num_, k), den_); }
  Rational operator+(const Rational& o) const {
    return Rational(mul_checked(num_, o.den_) + mul_checked(o.num_, den_),
                    mul_checked(den_, o.den_));
  }
  Rational operator-(const Rational& o) const {
    return Rational(mul_checked(num_, o.den_) - mul_checked(o.num_, den_),
                    mul_checked(den_, o.den_));
  }

  int compare(const Rational& o) const {
    const __int128 lhs = static_cast<__int128>(num_) * o.den_;
    const __int128 rhs = static_cast<__int128>(o.num_) * den_;
    return lhs < rhs ? -1 : (lhs > rhs ? 1 : 0);
  }
  bool operator<(const Rational& o) const { return compare(o) < 0; }
  bool operator<=(const Rational& o) const { return compare(o) <= 0; }
  bool operator==(const Rational& o) const { return compare(o) == 0; }
  bool operator>(const Rational& o) const { return compare(o) > 0; }
  bool operator>=(const Rational& o) const { return compare(o) >= 0; }

  /// floor(this / o) for o > 0.
  std::int64_t floor_div(const Rational& o) const {
    const __int128 a = static_cast<__int128>(num_) * o.den_;
    const __int128 b = static_cast<__int128>(o.num_) * den_;
    __int128 q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return static_cast<std::int64_t>(q);
  }
  /// ceil(this / o) for o > 0.
  std::int64_t ceil_div(const Rational& o) const {
    const __int128 a = static_cast<__int128>(num_) * o.den_;
    const __int128 b = static_cast<__int128>(o.num_) * den_;
    __int128 q = a / b;
    if ((a % b != 0) && ((a < 0) == (b < 0))) ++q;
    return static_cast<std::int64_t>(q);
  }

 private:
  static std::int64_t mul_checked(std::int64_t a, std::int64_t b) {
    std::int64_t out = 0;
    if (__builtin_mul_overflow(a, b, &out))
      throw NumericalError("Rational: 64-bit overflow in exact time arithmetic");
    return out;
  }
  std::int64_t num_;
  std::int64_t den_;
};

inline Rational Rational::parse_decimal(const std::string& text) {
  std::size_t pos = 0;
  bool negative = false;
  if (pos < text.size() && (text[pos] == '+' || text[pos] == '-')) {
    negative = text[pos] == '-';
    ++pos;
  }
  std::int64_t intpart = 0, frac = 0, den = 1;
  bool any = false;
  while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
    if (__builtin_mul_overflow(intpart, 10, &intpart) ||
        __builtin_add_overflow(intpart, text[pos] - '0', &intpart))
      throw std::invalid_argument("decimal too long: " + text);
    ++pos;
    any = true;
  }
  if (pos < text.size() && text[pos] == '.') {
    ++pos;
    while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
      if (__builtin_mul_overflow(frac, 10, &frac) ||
          __builtin_add_overflow(frac, text[pos] - '0', &frac) ||
          __builtin_mul_overflow(den, 10, &den))
        throw std::invalid_argument("decimal too long: " + text);
      ++pos;
      any = true;
    }
  }
  if (!any || pos != text.size())
    throw std::invalid_argument("not a plain decimal: '" + text + "'");
  std::int64_t num = 0;
  if (__builtin_mul_overflow(intpart, den, &num) ||
      __builtin_add_overflow(num, frac, &num))
    throw std::invalid_argument("decimal too long: " + text);
  return Rational(negative ? -num : num, den);
}

inline Rational Rational::from_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  std::string text(buf, res.ptr);
  // Shortest round-trip form may use exponent notation; fold the exponent
  // into the numerator or denominator.
  int exponent = 0;
  const auto epos = text.find_first_of("eE");
  if (epos != std::string::npos) {
    exponent = std::stoi(text.substr(epos + 1));
    text = text.substr(0, epos);
  }
  Rational r = parse_decimal(text);
  std::int64_t shift = 1;
  for (int i = 0; i < (exponent < 0 ? -exponent : exponent); ++i)
    shift = mul_checked(shift, 10);
  if (exponent >= 0) return Rational(mul_checked(r.num_, shift), r.den_);
  return Rational(r.num_, mul_checked(r.den_, shift));
}

}  // namespace zdaguard
