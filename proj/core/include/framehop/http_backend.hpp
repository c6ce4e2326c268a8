// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>

#include "framehop/backend.hpp"

namespace framehop {

// Chat-completions-style HTTP client settings. The endpoint, model id, and
// credentials are all injected; the API key arrives through the environment
// (see api_key_env in the run configuration) and is never logged.
struct HttpBackendConfig {
  std::string endpoint = "http://127.0.0.1:8080";  // scheme://host[:port]
  std::string path = "/v1/chat/completions";
  std::string model = "default";
  std::string api_key;        // empty: no Authorization header
  int timeout_ms = 30000;     // per-attempt budget; also bounds the whole call
  int max_retries = 2;        // extra attempts after the first
  int backoff_base_ms = 200;  // sleep before retry k is base * 2^k, capped by
                              // the remaining deadline
  int max_concurrency = 4;    // in-flight request limit; <= 0 disables
  int score_samples = 8;      // sampling-fallback draw count; <= 0 disables
  bool use_logprobs = true;   // try first-token log-probs before sampling
  bool debug_log = false;     // append redacted request/response records
  std::string debug_log_path = "http_debug.jsonl";
};

// Networked ModelBackend. Transient failures (timeout, 429, 5xx) retry with
// exponential backoff; every call — sleeps included — finishes within
// (max_retries + 1) * timeout_ms. Authentication failures and malformed
// replies surface immediately as BackendError. Safe to share across episodes:
// each attempt uses its own connection; a semaphore enforces max_concurrency.
class HttpBackend : public ModelBackend {
 public:
  explicit HttpBackend(HttpBackendConfig config);
  ~HttpBackend() override;

  std::string generate(const GenerateRequest& request) override;

  // Primary path: ask for one answer token with log-probs and read each
  // option letter's log-probability; if the reply lacks log-probs or misses
  // an option, fall back to Laplace-smoothed sampled answers. Throws
  // BackendError{ScoringUnavailable} when both paths are disabled or fail.
  OptionScores score_options(const GenerateRequest& request,
                             const OptionSet& options) override;

  const HttpBackendConfig& config() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace framehop
