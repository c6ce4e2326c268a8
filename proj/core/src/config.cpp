// SPDX-License-Identifier: Apache-2.0
#include "framehop/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "framehop/util.hpp"

namespace framehop {

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& want) {
  throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " + want);
}

long long parse_ll(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const long long out = std::stoll(value, &used);
    if (used != value.size()) bad_value(key, value, "an integer");
    return out;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    bad_value(key, value, "an integer");
  }
}

int parse_int(const std::string& key, const std::string& value) {
  const long long out = parse_ll(key, value);
  if (out < INT32_MIN || out > INT32_MAX) bad_value(key, value, "a 32-bit integer");
  return static_cast<int>(out);
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const unsigned long long out = std::stoull(value, &used);
    if (used != value.size() || value.front() == '-') bad_value(key, value, "an unsigned integer");
    return out;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    bad_value(key, value, "an unsigned integer");
  }
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double out = std::stod(value, &used);
    if (used != value.size()) bad_value(key, value, "a number");
    return out;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    bad_value(key, value, "a number");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  const std::string v = to_lower(value);
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  bad_value(key, value, "a boolean");
}

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

struct KeyInfo {
  const char* key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<KeyInfo>& registry() {
  auto set_template_file = [](RunConfig& c, const std::string& v) {
    if (v.empty()) {
      c.episode.prompt_template.reset();
      return;
    }
    std::ifstream in(v);
    if (!in) throw ConfigError("config key 'prompt_template_file': cannot read " + v);
    std::ostringstream buf;
    buf << in.rdbuf();
    c.episode.prompt_template = buf.str();
  };

  static const std::vector<KeyInfo> keys = {
      // episode
      {"max_rounds", [](RunConfig& c, const std::string& v) { c.episode.max_rounds = parse_int("max_rounds", v); },
       [](const RunConfig& c) { return std::to_string(c.episode.max_rounds); }},
      {"max_frames_per_round",
       [](RunConfig& c, const std::string& v) { c.episode.max_frames_per_round = parse_int("max_frames_per_round", v); },
       [](const RunConfig& c) { return std::to_string(c.episode.max_frames_per_round); }},
      {"initial_frames",
       [](RunConfig& c, const std::string& v) { c.episode.initial_frame_count = parse_int("initial_frames", v); },
       [](const RunConfig& c) { return std::to_string(c.episode.initial_frame_count); }},
      {"token_budget",
       [](RunConfig& c, const std::string& v) { c.episode.token_budget = parse_ll("token_budget", v); },
       [](const RunConfig& c) { return std::to_string(c.episode.token_budget); }},
      {"retry_on_invalid",
       [](RunConfig& c, const std::string& v) { c.episode.retry_on_invalid = parse_int("retry_on_invalid", v); },
       [](const RunConfig& c) { return std::to_string(c.episode.retry_on_invalid); }},
      {"force_answer_at_end",
       [](RunConfig& c, const std::string& v) { c.episode.force_answer_at_end = parse_bool("force_answer_at_end", v); },
       [](const RunConfig& c) { return c.episode.force_answer_at_end ? "true" : "false"; }},
      {"lenient_parsing",
       [](RunConfig& c, const std::string& v) { c.episode.lenient_parsing = parse_bool("lenient_parsing", v); },
       [](const RunConfig& c) { return c.episode.lenient_parsing ? "true" : "false"; }},
      {"carry_state",
       [](RunConfig& c, const std::string& v) { c.episode.carry_state = parse_bool("carry_state", v); },
       [](const RunConfig& c) { return c.episode.carry_state ? "true" : "false"; }},
      {"structured_summary",
       [](RunConfig& c, const std::string& v) { c.episode.structured_summary = parse_bool("structured_summary", v); },
       [](const RunConfig& c) { return c.episode.structured_summary ? "true" : "false"; }},
      {"collect_option_scores",
       [](RunConfig& c, const std::string& v) { c.episode.collect_option_scores = parse_bool("collect_option_scores", v); },
       [](const RunConfig& c) { return c.episode.collect_option_scores ? "true" : "false"; }},
      {"temperature",
       [](RunConfig& c, const std::string& v) { c.episode.sampling.temperature = parse_double("temperature", v); },
       [](const RunConfig& c) { return format_double(c.episode.sampling.temperature); }},
      {"top_p", [](RunConfig& c, const std::string& v) { c.episode.sampling.top_p = parse_double("top_p", v); },
       [](const RunConfig& c) { return format_double(c.episode.sampling.top_p); }},
      {"max_response_tokens",
       [](RunConfig& c, const std::string& v) { c.episode.sampling.max_tokens = parse_int("max_response_tokens", v); },
       [](const RunConfig& c) { return std::to_string(c.episode.sampling.max_tokens); }},
      {"sampling_seed",
       [](RunConfig& c, const std::string& v) { c.episode.sampling.seed = parse_u64("sampling_seed", v); },
       [](const RunConfig& c) { return std::to_string(c.episode.sampling.seed); }},
      {"per_frame_cost",
       [](RunConfig& c, const std::string& v) { c.episode.cost.per_frame_cost = parse_int("per_frame_cost", v); },
       [](const RunConfig& c) { return std::to_string(c.episode.cost.per_frame_cost); }},
      {"prompt_template_file", set_template_file,
       [](const RunConfig&) { return std::string(); }},
      // oracle
      {"answer_threshold",
       [](RunConfig& c, const std::string& v) { c.oracle.answer_threshold = parse_double("answer_threshold", v); },
       [](const RunConfig& c) { return format_double(c.oracle.answer_threshold); }},
      {"logit_intercept",
       [](RunConfig& c, const std::string& v) { c.oracle.logit_intercept = parse_double("logit_intercept", v); },
       [](const RunConfig& c) { return format_double(c.oracle.logit_intercept); }},
      {"logit_slope",
       [](RunConfig& c, const std::string& v) { c.oracle.logit_slope = parse_double("logit_slope", v); },
       [](const RunConfig& c) { return format_double(c.oracle.logit_slope); }},
      {"request_size",
       [](RunConfig& c, const std::string& v) { c.oracle.request_size = parse_int("request_size", v); },
       [](const RunConfig& c) { return std::to_string(c.oracle.request_size); }},
      {"blob_ledger_capacity",
       [](RunConfig& c, const std::string& v) { c.oracle.blob_ledger_capacity = parse_int("blob_ledger_capacity", v); },
       [](const RunConfig& c) { return std::to_string(c.oracle.blob_ledger_capacity); }},
      // http backend
      {"endpoint", [](RunConfig& c, const std::string& v) { c.http.endpoint = v; },
       [](const RunConfig& c) { return c.http.endpoint; }},
      {"http_path", [](RunConfig& c, const std::string& v) { c.http.path = v; },
       [](const RunConfig& c) { return c.http.path; }},
      {"model", [](RunConfig& c, const std::string& v) { c.http.model = v; },
       [](const RunConfig& c) { return c.http.model; }},
      {"timeout_ms", [](RunConfig& c, const std::string& v) { c.http.timeout_ms = parse_int("timeout_ms", v); },
       [](const RunConfig& c) { return std::to_string(c.http.timeout_ms); }},
      {"max_retries", [](RunConfig& c, const std::string& v) { c.http.max_retries = parse_int("max_retries", v); },
       [](const RunConfig& c) { return std::to_string(c.http.max_retries); }},
      {"backoff_ms",
       [](RunConfig& c, const std::string& v) { c.http.backoff_base_ms = parse_int("backoff_ms", v); },
       [](const RunConfig& c) { return std::to_string(c.http.backoff_base_ms); }},
      {"max_concurrency",
       [](RunConfig& c, const std::string& v) { c.http.max_concurrency = parse_int("max_concurrency", v); },
       [](const RunConfig& c) { return std::to_string(c.http.max_concurrency); }},
      {"score_samples",
       [](RunConfig& c, const std::string& v) { c.http.score_samples = parse_int("score_samples", v); },
       [](const RunConfig& c) { return std::to_string(c.http.score_samples); }},
      {"use_logprobs",
       [](RunConfig& c, const std::string& v) { c.http.use_logprobs = parse_bool("use_logprobs", v); },
       [](const RunConfig& c) { return c.http.use_logprobs ? "true" : "false"; }},
      {"debug_log", [](RunConfig& c, const std::string& v) { c.http.debug_log = parse_bool("debug_log", v); },
       [](const RunConfig& c) { return c.http.debug_log ? "true" : "false"; }},
      {"debug_log_path", [](RunConfig& c, const std::string& v) { c.http.debug_log_path = v; },
       [](const RunConfig& c) { return c.http.debug_log_path; }},
      // reward
      {"lambda1", [](RunConfig& c, const std::string& v) { c.reward.lambda1 = parse_double("lambda1", v); },
       [](const RunConfig& c) { return format_double(c.reward.lambda1); }},
      {"lambda2", [](RunConfig& c, const std::string& v) { c.reward.lambda2 = parse_double("lambda2", v); },
       [](const RunConfig& c) { return format_double(c.reward.lambda2); }},
      {"lambda3", [](RunConfig& c, const std::string& v) { c.reward.lambda3 = parse_double("lambda3", v); },
       [](const RunConfig& c) { return format_double(c.reward.lambda3); }},
      {"alpha", [](RunConfig& c, const std::string& v) { c.reward.alpha = parse_double("alpha", v); },
       [](const RunConfig& c) { return format_double(c.reward.alpha); }},
      {"beta", [](RunConfig& c, const std::string& v) { c.reward.beta = parse_double("beta", v); },
       [](const RunConfig& c) { return format_double(c.reward.beta); }},
      {"t_stop", [](RunConfig& c, const std::string& v) { c.reward.t_stop = parse_int("t_stop", v); },
       [](const RunConfig& c) { return std::to_string(c.reward.t_stop); }},
      {"gamma", [](RunConfig& c, const std::string& v) { c.reward.gamma = parse_double("gamma", v); },
       [](const RunConfig& c) { return format_double(c.reward.gamma); }},
      {"margin_temperature",
       [](RunConfig& c, const std::string& v) { c.reward.margin_temperature = parse_double("margin_temperature", v); },
       [](const RunConfig& c) { return format_double(c.reward.margin_temperature); }},
      // grpo
      {"clip_epsilon",
       [](RunConfig& c, const std::string& v) { c.grpo.clip_epsilon = parse_double("clip_epsilon", v); },
       [](const RunConfig& c) { return format_double(c.grpo.clip_epsilon); }},
      {"group_size", [](RunConfig& c, const std::string& v) { c.grpo.group_size = parse_int("group_size", v); },
       [](const RunConfig& c) { return std::to_string(c.grpo.group_size); }},
      {"learning_rate",
       [](RunConfig& c, const std::string& v) { c.grpo.learning_rate = parse_double("learning_rate", v); },
       [](const RunConfig& c) { return format_double(c.grpo.learning_rate); }},
      {"kl_coeff", [](RunConfig& c, const std::string& v) { c.grpo.kl_coeff = parse_double("kl_coeff", v); },
       [](const RunConfig& c) { return format_double(c.grpo.kl_coeff); }},
      {"iterations", [](RunConfig& c, const std::string& v) { c.grpo.iterations = parse_int("iterations", v); },
       [](const RunConfig& c) { return std::to_string(c.grpo.iterations); }},
      // top level
      {"backend",
       [](RunConfig& c, const std::string& v) {
         if (v != "oracle" && v != "http") {
           throw ConfigError("config key 'backend': expected 'oracle' or 'http', got '" + v + "'");
         }
         c.backend = v;
       },
       [](const RunConfig& c) { return c.backend; }},
      {"api_key_env", [](RunConfig& c, const std::string& v) { c.api_key_env = v; },
       [](const RunConfig& c) { return c.api_key_env; }},
      {"parallelism", [](RunConfig& c, const std::string& v) { c.parallelism = parse_int("parallelism", v); },
       [](const RunConfig& c) { return std::to_string(c.parallelism); }},
      {"seed", [](RunConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
      {"out_dir", [](RunConfig& c, const std::string& v) { c.out_dir = v; },
       [](const RunConfig& c) { return c.out_dir; }},
  };
  return keys;
}

const KeyInfo* find_key(const std::string& key) {
  for (const KeyInfo& info : registry()) {
    if (key == info.key) return &info;
  }
  return nullptr;
}

void validate(const RunConfig& c) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid configuration: " + what);
  };
  require(c.episode.max_rounds >= 1, "max_rounds must be at least 1");
  require(c.episode.max_frames_per_round >= 1, "max_frames_per_round must be at least 1");
  require(c.episode.initial_frame_count >= 1 &&
              c.episode.initial_frame_count <= c.episode.max_frames_per_round,
          "initial_frames must lie in [1, max_frames_per_round]");
  require(c.episode.token_budget >= 1, "token_budget must be at least 1");
  require(c.episode.retry_on_invalid >= 0, "retry_on_invalid must be non-negative");
  require(c.episode.cost.per_frame_cost >= 0, "per_frame_cost must be non-negative");
  require(c.oracle.answer_threshold >= 0.0, "answer_threshold must be non-negative");
  require(c.oracle.request_size >= 1, "request_size must be at least 1");
  require(c.oracle.blob_ledger_capacity >= 1, "blob_ledger_capacity must be at least 1");
  require(c.http.timeout_ms >= 1, "timeout_ms must be positive");
  require(c.http.max_retries >= 0, "max_retries must be non-negative");
  require(c.http.backoff_base_ms >= 0, "backoff_ms must be non-negative");
  require(c.reward.lambda1 >= 0 && c.reward.lambda2 >= 0 && c.reward.lambda3 >= 0,
          "reward weights must be non-negative");
  require(c.reward.t_stop >= 1, "t_stop must be at least 1");
  require(c.reward.gamma >= 0.0 && c.reward.gamma <= 1.0, "gamma must lie in [0, 1]");
  require(c.reward.margin_temperature > 0.0, "margin_temperature must be positive");
  require(c.grpo.clip_epsilon > 0.0 && c.grpo.clip_epsilon < 1.0,
          "clip_epsilon must lie in (0, 1)");
  require(c.grpo.group_size >= 2, "group_size must be at least 2");
  require(c.grpo.iterations >= 0, "iterations must be non-negative");
  require(c.parallelism >= 1, "parallelism must be at least 1");
}

}  // namespace

KeyValues parse_kv_text(const std::string& text, const std::string& origin) {
  KeyValues out;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string trimmed{trim(line)};
    if (trimmed.empty()) continue;
    const std::size_t eq = trimmed.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + " line " + std::to_string(line_no) + ": expected key=value");
    }
    const std::string key{trim(trimmed.substr(0, eq))};
    const std::string value{trim(trimmed.substr(eq + 1))};
    if (key.empty()) {
      throw ConfigError(origin + " line " + std::to_string(line_no) + ": empty key");
    }
    out[key] = value;
  }
  return out;
}

KeyValues load_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_kv_text(buf.str(), path);
}

KeyValues env_key_values() {
  KeyValues out;
  for (const KeyInfo& info : registry()) {
    std::string var = "FRAMEHOP_";
    for (const char* p = info.key; *p; ++p) {
      var += static_cast<char>(std::toupper(static_cast<unsigned char>(*p)));
    }
    if (const char* value = std::getenv(var.c_str())) out[info.key] = value;
  }
  return out;
}

RunConfig merge_config(const std::vector<KeyValues>& layers) {
  RunConfig config;
  for (const KeyValues& layer : layers) {
    for (const auto& [key, value] : layer) {
      const KeyInfo* info = find_key(key);
      if (info == nullptr) throw ConfigError("unknown config key '" + key + "'");
      info->set(config, value);
    }
  }
  validate(config);
  return config;
}

std::string effective_config_text(const RunConfig& config) {
  std::string out;
  for (const KeyInfo& info : registry()) {
    out += info.key;
    out += '=';
    out += info.get(config);
    out += '\n';
  }
  return out;
}

std::vector<std::string> known_config_keys() {
  std::vector<std::string> keys;
  for (const KeyInfo& info : registry()) keys.push_back(info.key);
  return keys;
}

}  // namespace framehop
