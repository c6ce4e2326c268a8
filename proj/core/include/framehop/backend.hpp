// SPDX-License-Identifier: Apache-2.0
#pragma once

// Model plumbing. A ModelBackend turns (prompt, images, sampling) into raw
// response text and can score the answer options at a decision state. The
// scripted PlaybackBackend replays canned turns for tests; the HTTP client
// lives in http_backend.hpp.

#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "framehop/protocol.hpp"
#include "framehop/video.hpp"

namespace framehop {

struct SamplingParams {
  double temperature = 0.2;
  double top_p = 0.9;
  int max_tokens = 256;
  std::uint64_t seed = 0;
};

enum class ScoreSource { Scripted, TokenLogprobs, SampledFrequency };

// Per-option log-probabilities, aligned with the OptionSet by position so the
// key set always equals the option set.
struct OptionScores {
  std::vector<double> logprobs;
  ScoreSource source = ScoreSource::Scripted;

  int size() const { return static_cast<int>(logprobs.size()); }
  double at(int i) const { return logprobs[static_cast<std::size_t>(i)]; }
  // Index of the strictly greatest score, or nullopt on a tie for the top.
  std::optional<int> strict_argmax() const;
};

enum class BackendErrorKind { Auth, RateLimited, Timeout, MalformedReply, Server, ScoringUnavailable };

std::string_view to_string(BackendErrorKind kind);

class BackendError : public std::runtime_error {
 public:
  BackendError(BackendErrorKind kind, const std::string& message, int attempts = 1)
      : std::runtime_error(message), kind_(kind), attempts_(attempts) {}
  BackendErrorKind kind() const { return kind_; }
  int attempts() const { return attempts_; }

 private:
  BackendErrorKind kind_;
  int attempts_;
};

struct GenerateRequest {
  std::string prompt;
  std::vector<ImagePayload> images;
  SamplingParams sampling;
};

class ModelBackend {
 public:
  virtual ~ModelBackend() = default;

  // Raw response text for one turn. Throws BackendError.
  virtual std::string generate(const GenerateRequest& request) = 0;

  // Log-probability per option at this decision state. Throws BackendError
  // (kind ScoringUnavailable when the backend cannot score).
  virtual OptionScores score_options(const GenerateRequest& request,
                                     const OptionSet& options) = 0;

  virtual bool supports_scoring() const { return true; }
};

// Laplace-smoothed log-frequencies from sampled answers:
// log((count_i + 1) / (n + |options|)). The fallback scoring path.
OptionScores scores_from_sample_counts(const std::vector<int>& counts, int n_samples);

// Runs the fallback path against any backend: draws `n_samples` generations,
// resolves each against the options (leniently), and smooths the counts.
OptionScores sample_based_scores(ModelBackend& backend, const GenerateRequest& request,
                                 const OptionSet& options, int n_samples);

// Deterministic scripted backend: replays a fixed sequence of responses (one
// per generate call, in order) and a fixed sequence of option scores. Pure:
// call n always yields response n. Throws BackendError{MalformedReply} when
// the script runs out.
class PlaybackBackend : public ModelBackend {
 public:
  struct Turn {
    std::string response;
    std::optional<std::vector<double>> scores;  // used by score_options when set
  };

  explicit PlaybackBackend(std::vector<Turn> turns) : turns_(std::move(turns)) {}

  std::string generate(const GenerateRequest& request) override;
  OptionScores score_options(const GenerateRequest& request,
                             const OptionSet& options) override;
  bool supports_scoring() const override;

  int calls() const { return generate_calls_; }

 private:
  std::vector<Turn> turns_;
  int generate_calls_ = 0;
  int score_calls_ = 0;
};

}  // namespace framehop
