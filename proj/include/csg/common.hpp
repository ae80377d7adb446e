#pragma once

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace csg {

// Error taxonomy. The CLI maps ConfigError to exit code 2 and
// ArtifactError to exit code 3.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SchemaError : ConfigError {
  using ConfigError::ConfigError;
};
struct ParseError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConsistencyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ArtifactError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

// Literal token written in place of masked words.
inline constexpr std::string_view kUnkToken = "UNK";

// Lowercase, whitespace-split, punctuation-stripped. The literal "UNK" is
// preserved so masked corpora survive a save/load cycle.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  };
  std::size_t i = 0;
  while (i < text.size()) {
    unsigned char c = static_cast<unsigned char>(text[i]);
    if (std::isspace(c)) {
      flush();
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    std::string_view raw = text.substr(i, j - i);
    if (raw == kUnkToken) {
      out.emplace_back(kUnkToken);
    } else {
      for (char ch : raw) {
        unsigned char u = static_cast<unsigned char>(ch);
        if (std::ispunct(u)) continue;
        cur.push_back(static_cast<char>(std::tolower(u)));
      }
      flush();
    }
    i = j;
  }
  return out;
}

inline std::string join(const std::vector<std::string>& words, std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += sep;
    out += words[i];
  }
  return out;
}

inline std::string format_fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

// Uniform integer in [0, n) drawn with a fixed reduction so results do not
// depend on the standard library's distribution implementation.
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: n == 0");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return static_cast<std::size_t>(x % n);
}

// Uniform real in [0, 1) using the top 53 bits.
inline double uniform_real(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline bool bernoulli(Rng& rng, double p) { return uniform_real(rng) < p; }

template <typename It>
void shuffle(It first, It last, Rng& rng) {
  auto n = static_cast<std::size_t>(last - first);
  for (std::size_t i = n; i > 1; --i) {
    std::size_t j = uniform_index(rng, i);
    std::swap(first[i - 1], first[j]);
  }
}

}  // namespace csg
