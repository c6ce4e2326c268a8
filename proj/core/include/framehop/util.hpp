// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace framehop {

// 64-bit FNV-1a over raw bytes. Used for prompt hashes in trajectory logs.
std::uint64_t fnv1a64(std::string_view bytes);
std::string fnv1a64_hex(std::string_view bytes);

std::string_view trim(std::string_view s);
std::string to_lower(std::string_view s);
bool iequals(std::string_view a, std::string_view b);
std::vector<std::string> split(std::string_view s, char sep);

// Token accounting for text: ceil(bytes / 4). Keeps budget math reproducible
// without a real tokenizer.
long long default_text_cost(std::string_view text);

// "Frame 17 @ 0.57s" needs a locale-independent fixed-point formatter; this
// renders seconds with two decimals using integer math only.
std::string format_seconds_centis(double seconds);

// Replaces "{name}" placeholders. Unknown placeholders are left intact so a
// template author can spot typos in the rendered output.
std::string apply_template(std::string_view text,
                           const std::vector<std::pair<std::string, std::string>>& values);

std::string join_ints(const std::vector<int>& xs, std::string_view sep = ",");

// Deterministic RNG. mt19937_64 output is pinned by the standard; the helpers
// below avoid std::uniform_*_distribution, whose mapping is
// implementation-defined, so every stream here reproduces across compilers.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Unbiased integer in [0, n) via rejection sampling.
  std::uint64_t below(std::uint64_t n);

  // Double in [0, 1) with 53 random bits.
  double real01();

  // k distinct integers from [0, n), ascending.
  std::vector<int> pick_distinct(int k, int n);

  template <typename T>
  void shuffle(std::vector<T>& xs) {
    for (std::size_t i = xs.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(xs[i - 1], xs[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// Wall-clock helpers for run directories and latency accounting.
double monotonic_ms();
std::string utc_run_stamp();  // e.g. "20260818-153021"

}  // namespace framehop
