// SPDX-License-Identifier: Apache-2.0
#include "framehop/util.hpp"

#include <cctype>
#include <chrono>
#include <cstdio>
#include <ctime>

namespace framehop {

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string fnv1a64_hex(std::string_view bytes) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(bytes)));
  return std::string(buf);
}

std::string_view trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool iequals(std::string_view a, std::string_view b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(a[i])) !=
        std::tolower(static_cast<unsigned char>(b[i]))) return false;
  }
  return true;
}

std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.emplace_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

long long default_text_cost(std::string_view text) {
  return static_cast<long long>((text.size() + 3) / 4);
}

std::string format_seconds_centis(double seconds) {
  if (seconds < 0) seconds = 0;
  long long centis = static_cast<long long>(seconds * 100.0 + 0.5);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%lld.%02lld", centis / 100, centis % 100);
  return std::string(buf);
}

std::string apply_template(std::string_view text,
                           const std::vector<std::pair<std::string, std::string>>& values) {
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '{') {
      std::size_t close = text.find('}', i + 1);
      if (close != std::string_view::npos) {
        std::string_view name = text.substr(i + 1, close - i - 1);
        bool matched = false;
        for (const auto& [k, v] : values) {
          if (name == k) {
            out += v;
            matched = true;
            break;
          }
        }
        if (matched) {
          i = close + 1;
          continue;
        }
      }
    }
    out += text[i];
    ++i;
  }
  return out;
}

std::string join_ints(const std::vector<int>& xs, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += sep;
    out += std::to_string(xs[i]);
  }
  return out;
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) return 0;
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::real01() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::vector<int> Rng::pick_distinct(int k, int n) {
  // Floyd's algorithm keeps this O(k) draws regardless of n.
  std::vector<int> chosen;
  std::vector<bool> used(static_cast<std::size_t>(n), false);
  for (int j = n - k; j < n; ++j) {
    int t = static_cast<int>(below(static_cast<std::uint64_t>(j) + 1));
    if (used[static_cast<std::size_t>(t)]) t = j;
    used[static_cast<std::size_t>(t)] = true;
    chosen.push_back(t);
  }
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(k));
  for (int i = 0; i < n; ++i) {
    if (used[static_cast<std::size_t>(i)]) out.push_back(i);
  }
  return out;
}

double monotonic_ms() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double, std::milli>(clock::now().time_since_epoch()).count();
}

std::string utc_run_stamp() {
  std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d%02d%02d-%02d%02d%02d", tm.tm_year + 1900,
                tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
  return std::string(buf);
}

}  // namespace framehop
