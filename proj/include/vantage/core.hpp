#pragma once
// Deterministic plumbing shared across the library: seeded random streams,
// fixed-precision CSV emission and the fault type thrown when a simulation
// produces non-finite numbers. Everything here must behave identically for
// identical seeds so that whole runs are reproducible byte for byte.

#include <cstdint>
#include <cstdio>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace vantage {

/// Thrown when an integration or estimation step produces NaN/Inf.
struct NumericalFault : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown on malformed configuration input; carries a 1-based line number.
struct ConfigError : std::runtime_error {
  int line;
  ConfigError(int line_, const std::string& what_)
      : std::runtime_error(what_), line(line_) {}
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& s) {
  s += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = s;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : text) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// xoshiro256++ stream with named sub-stream forking. One root stream is
/// created per run; every consumer forks its own child by a fixed label so
/// that adding a consumer never shifts the draws seen by the others.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) { reseed(seed); }

  void reseed(std::uint64_t seed) {
    seed_tag_ = seed;
    std::uint64_t s = seed;
    for (auto& w : state_) w = detail::splitmix64(s);
    spare_valid_ = false;
  }

  /// Child stream derived from this stream's seed and a label. Same label,
  /// same child; different labels give statistically independent children.
  Rng fork(std::string_view label) const {
    return Rng(seed_tag_ ^ detail::fnv1a64(label));
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Gaussian draw via Box-Muller; a spare value is cached, so draws come in
  /// deterministic pairs.
  double normal(double mean = 0.0, double sigma = 1.0) {
    if (spare_valid_) {
      spare_valid_ = false;
      return mean + sigma * spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1], keeps the log finite
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    spare_valid_ = true;
    return mean + sigma * r * std::cos(a);
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::uint64_t state_[4]{};
  std::uint64_t seed_tag_ = 0;  // original seed; fork() must not depend on
                                // how far this stream has been consumed
  double spare_ = 0.0;
  bool spare_valid_ = false;
};

/// Locale-independent number formatting used for every logged value:
/// 9 significant digits, shortest form.
inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return std::string(buf);
}

/// Line-buffered CSV emitter. All cells go through format_number so files
/// compare byte for byte across identical runs.
class CsvWriter {
 public:
  CsvWriter() = default;

  CsvWriter(const std::string& path, const std::vector<std::string>& columns) {
    open(path, columns);
  }

  void open(const std::string& path, const std::vector<std::string>& columns) {
    out_.open(path, std::ios::binary);
    if (!out_) throw std::runtime_error("cannot open " + path);
    ncols_ = columns.size();
    for (std::size_t i = 0; i < columns.size(); ++i) {
      if (i) out_ << ',';
      out_ << columns[i];
    }
    out_ << '\n';
  }

  bool is_open() const { return out_.is_open(); }

  void row(const std::vector<double>& cells) {
    if (cells.size() != ncols_)
      throw std::logic_error("csv row width mismatch");
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      out_ << format_number(cells[i]);
    }
    out_ << '\n';
  }

  void close() { out_.close(); }

 private:
  std::ofstream out_;
  std::size_t ncols_ = 0;
};

}  // namespace vantage
