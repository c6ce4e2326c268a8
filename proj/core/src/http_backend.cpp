// SPDX-License-Identifier: Apache-2.0
#include "framehop/http_backend.hpp"

#include <chrono>
#include <condition_variable>
#include <fstream>
#include <mutex>
#include <thread>

#include "framehop/util.hpp"
#include "httplib.h"
#include "json.hpp"

namespace framehop {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
  static constexpr char kTable[] =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 3 <= bytes.size(); i += 3) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    out += kTable[(v >> 18) & 63];
    out += kTable[(v >> 12) & 63];
    out += kTable[(v >> 6) & 63];
    out += kTable[v & 63];
  }
  const std::size_t rest = bytes.size() - i;
  if (rest == 1) {
    const std::uint32_t v = bytes[i] << 16;
    out += kTable[(v >> 18) & 63];
    out += kTable[(v >> 12) & 63];
    out += "==";
  } else if (rest == 2) {
    const std::uint32_t v = (bytes[i] << 16) | (bytes[i + 1] << 8);
    out += kTable[(v >> 18) & 63];
    out += kTable[(v >> 12) & 63];
    out += kTable[(v >> 6) & 63];
    out += '=';
  }
  return out;
}

std::string excerpt(const std::string& text, std::size_t limit = 200) {
  if (text.size() <= limit) return text;
  return text.substr(0, limit) + "...";
}

json build_body(const HttpBackendConfig& config, const GenerateRequest& request) {
  json content = json::array();
  content.push_back({{"type", "text"}, {"text", request.prompt}});
  for (const ImagePayload& image : request.images) {
    const std::string uri =
        "data:" + image.media_type + ";base64," + base64_encode(image.bytes);
    content.push_back({{"type", "image_url"}, {"image_url", {{"url", uri}}}});
  }
  json body = {
      {"model", config.model},
      {"messages", json::array({{{"role", "user"}, {"content", std::move(content)}}})},
      {"temperature", request.sampling.temperature},
      {"top_p", request.sampling.top_p},
      {"max_tokens", request.sampling.max_tokens},
  };
  if (request.sampling.seed != 0) body["seed"] = request.sampling.seed;
  return body;
}

// Counting semaphore with a runtime-configurable limit.
class Gate {
 public:
  explicit Gate(int slots) : slots_(slots) {}

  void acquire() {
    if (slots_ <= 0) return;
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return in_flight_ < slots_; });
    ++in_flight_;
  }

  void release() {
    if (slots_ <= 0) return;
    {
      std::lock_guard lock(mu_);
      --in_flight_;
    }
    cv_.notify_one();
  }

 private:
  int slots_;
  int in_flight_ = 0;
  std::mutex mu_;
  std::condition_variable cv_;
};

struct GateHold {
  explicit GateHold(Gate& gate) : gate_(gate) { gate_.acquire(); }
  ~GateHold() { gate_.release(); }
  Gate& gate_;
};

}  // namespace

struct HttpBackend::Impl {
  HttpBackendConfig config;
  Gate gate;
  std::mutex log_mu;

  explicit Impl(HttpBackendConfig cfg) : config(std::move(cfg)), gate(config.max_concurrency) {}

  void debug_write(const char* event, int attempt, int status, const std::string& detail) {
    if (!config.debug_log) return;
    json row = {
        {"ts", utc_run_stamp()},
        {"event", event},
        {"endpoint", config.endpoint + config.path},
        {"attempt", attempt},
        {"status", status},
        {"detail", excerpt(detail)},
        {"authorization", config.api_key.empty() ? "none" : "Bearer [redacted]"},
    };
    std::lock_guard lock(log_mu);
    std::ofstream out(config.debug_log_path, std::ios::app);
    if (out) out << row.dump() << '\n';
  }

  // One POST with the retry/backoff loop. The whole call — attempts plus
  // backoff sleeps — stays within (max_retries + 1) * timeout_ms.
  json post_with_retries(const json& body) {
    const std::string payload = body.dump();
    const int attempts_allowed = std::max(config.max_retries, 0) + 1;
    const auto deadline =
        Clock::now() + std::chrono::milliseconds(
                           static_cast<long long>(attempts_allowed) * config.timeout_ms);

    BackendErrorKind last_kind = BackendErrorKind::Timeout;
    std::string last_message = "no attempt made";

    for (int attempt = 0; attempt < attempts_allowed; ++attempt) {
      const auto now = Clock::now();
      if (now >= deadline) break;
      const long long remaining_ms =
          std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count();
      const long long attempt_ms = std::min<long long>(config.timeout_ms, remaining_ms);

      httplib::Client client(config.endpoint);
      client.set_connection_timeout(std::chrono::milliseconds(attempt_ms));
      client.set_read_timeout(std::chrono::milliseconds(attempt_ms));
      client.set_write_timeout(std::chrono::milliseconds(attempt_ms));

      httplib::Headers headers;
      if (!config.api_key.empty()) {
        headers.emplace("Authorization", "Bearer " + config.api_key);
      }
      debug_write("request", attempt, 0, excerpt(payload));
      httplib::Result res = client.Post(config.path, headers, payload, "application/json");

      if (!res) {
        last_kind = BackendErrorKind::Timeout;
        last_message = "transport failure: " + httplib::to_string(res.error());
        debug_write("transport_error", attempt, -1, last_message);
      } else if (res->status == 200) {
        debug_write("response", attempt, res->status, res->body);
        try {
          return json::parse(res->body);
        } catch (const json::exception& e) {
          throw BackendError(BackendErrorKind::MalformedReply,
                             std::string("response is not JSON: ") + e.what(), attempt + 1);
        }
      } else if (res->status == 401 || res->status == 403) {
        debug_write("response", attempt, res->status, res->body);
        throw BackendError(BackendErrorKind::Auth,
                           "authentication rejected (HTTP " + std::to_string(res->status) + ")",
                           attempt + 1);
      } else if (res->status == 429) {
        last_kind = BackendErrorKind::RateLimited;
        last_message = "rate limited (HTTP 429)";
        debug_write("response", attempt, res->status, res->body);
      } else if (res->status >= 500) {
        last_kind = BackendErrorKind::Server;
        last_message = "server error (HTTP " + std::to_string(res->status) + ")";
        debug_write("response", attempt, res->status, res->body);
      } else {
        debug_write("response", attempt, res->status, res->body);
        throw BackendError(BackendErrorKind::MalformedReply,
                           "request rejected (HTTP " + std::to_string(res->status) + "): " +
                               excerpt(res->body),
                           attempt + 1);
      }

      if (attempt + 1 < attempts_allowed) {
        const long long backoff =
            static_cast<long long>(config.backoff_base_ms) * (1LL << attempt);
        const auto after = Clock::now();
        if (after >= deadline) break;
        const long long left =
            std::chrono::duration_cast<std::chrono::milliseconds>(deadline - after).count();
        const long long sleep_ms = std::min(backoff, left);
        if (sleep_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(sleep_ms));
      }
    }
    throw BackendError(last_kind, last_message + " after " +
                                      std::to_string(attempts_allowed) + " attempt(s)",
                       attempts_allowed);
  }
};

HttpBackend::HttpBackend(HttpBackendConfig config)
    : impl_(std::make_unique<Impl>(std::move(config))) {
  if (impl_->config.timeout_ms < 1) {
    throw std::invalid_argument("timeout_ms must be positive");
  }
}

HttpBackend::~HttpBackend() = default;

const HttpBackendConfig& HttpBackend::config() const { return impl_->config; }

std::string HttpBackend::generate(const GenerateRequest& request) {
  GateHold hold(impl_->gate);
  const json reply = impl_->post_with_retries(build_body(impl_->config, request));
  try {
    const json& message = reply.at("choices").at(0).at("message");
    const json& content = message.at("content");
    if (content.is_string()) return content.get<std::string>();
    if (content.is_array()) {  // some servers return content parts
      std::string text;
      for (const json& part : content) {
        if (part.contains("text")) text += part.at("text").get<std::string>();
      }
      return text;
    }
  } catch (const json::exception&) {
    // fall through to the error below
  }
  throw BackendError(BackendErrorKind::MalformedReply,
                     "reply lacks choices[0].message.content: " + excerpt(reply.dump()));
}

OptionScores HttpBackend::score_options(const GenerateRequest& request,
                                        const OptionSet& options) {
  const HttpBackendConfig& config = impl_->config;
  if (config.use_logprobs) {
    GenerateRequest probe = request;
    probe.prompt += "\n\nReply with the single letter of the best option and nothing else.";
    probe.sampling.max_tokens = 1;
    json body = build_body(config, probe);
    body["logprobs"] = true;
    body["top_logprobs"] = 20;

    json reply;
    {
      GateHold hold(impl_->gate);
      reply = impl_->post_with_retries(body);
    }
    // Capability gaps (no logprobs, missing letters) fall back to sampling;
    // transport/auth problems already threw above.
    OptionScores scores;
    scores.source = ScoreSource::TokenLogprobs;
    scores.logprobs.assign(static_cast<std::size_t>(options.size()), 0.0);
    bool usable = true;
    try {
      const json& top = reply.at("choices").at(0).at("logprobs").at("content").at(0).at(
          "top_logprobs");
      for (int i = 0; i < options.size() && usable; ++i) {
        const std::string want = options.label(i);
        bool found = false;
        for (const json& cand : top) {
          if (trim(cand.at("token").get<std::string>()) == want) {
            scores.logprobs[static_cast<std::size_t>(i)] = cand.at("logprob").get<double>();
            found = true;
            break;
          }
        }
        usable = found;
      }
    } catch (const json::exception&) {
      usable = false;
    }
    if (usable) return scores;
  }

  if (config.score_samples > 0) {
    return sample_based_scores(*this, request, options, config.score_samples);
  }
  throw BackendError(BackendErrorKind::ScoringUnavailable,
                     "log-prob scoring unusable and the sampling fallback is disabled");
}

}  // namespace framehop
