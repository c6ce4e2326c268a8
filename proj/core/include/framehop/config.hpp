// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "framehop/controller.hpp"
#include "framehop/grpo.hpp"
#include "framehop/http_backend.hpp"
#include "framehop/reward.hpp"
#include "framehop/synth.hpp"

namespace framehop {

// Raised for unreadable files, unknown keys, and unparseable values. The
// message names the key and the origin (file/env/flag).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Everything a run needs, merged from defaults, a flat key=value file, the
// FRAMEHOP_* environment, and command-line flags (in ascending precedence).
// Credentials never live here: the API key is read from the environment
// variable named by api_key_env at backend construction time.
struct RunConfig {
  EpisodeConfig episode;
  OracleRules oracle;
  HttpBackendConfig http;
  RewardWeights reward;
  GrpoConfig grpo;
  std::string backend = "oracle";  // "oracle" or "http"
  std::string api_key_env = "FRAMEHOP_API_KEY";
  int parallelism = 1;
  std::uint64_t seed = 1;
  std::string out_dir = "runs";
};

using KeyValues = std::map<std::string, std::string>;

// Parses `key = value` lines; '#' starts a comment, blanks are skipped.
// `origin` names the source in error messages.
KeyValues parse_kv_text(const std::string& text, const std::string& origin);

KeyValues load_kv_file(const std::string& path);

// Values of FRAMEHOP_<UPPERCASE KEY> for the known keys. Unrelated
// FRAMEHOP_-prefixed variables are ignored.
KeyValues env_key_values();

// Applies layers over the defaults, later layers winning, validating every
// key and value. Throws ConfigError on unknown keys or bad values.
RunConfig merge_config(const std::vector<KeyValues>& layers);

// The full effective configuration, one `key=value` per line in registry
// order — what run directories echo for reproducibility.
std::string effective_config_text(const RunConfig& config);

std::vector<std::string> known_config_keys();

}  // namespace framehop
