// SPDX-License-Identifier: Apache-2.0
#include "framehop/backend.hpp"

#include <cmath>

namespace framehop {

std::optional<int> OptionScores::strict_argmax() const {
  if (logprobs.empty()) return std::nullopt;
  int best = 0;
  bool tie = false;
  for (int i = 1; i < size(); ++i) {
    if (at(i) > at(best)) {
      best = i;
      tie = false;
    } else if (at(i) == at(best)) {
      tie = true;
    }
  }
  return tie ? std::nullopt : std::optional<int>(best);
}

std::string_view to_string(BackendErrorKind kind) {
  switch (kind) {
    case BackendErrorKind::Auth: return "AuthError";
    case BackendErrorKind::RateLimited: return "RateLimited";
    case BackendErrorKind::Timeout: return "Timeout";
    case BackendErrorKind::MalformedReply: return "MalformedReply";
    case BackendErrorKind::Server: return "ServerError";
    case BackendErrorKind::ScoringUnavailable: return "ScoringUnavailable";
  }
  return "BackendError";
}

OptionScores scores_from_sample_counts(const std::vector<int>& counts, int n_samples) {
  OptionScores scores;
  scores.source = ScoreSource::SampledFrequency;
  const double denom = static_cast<double>(n_samples) + static_cast<double>(counts.size());
  scores.logprobs.reserve(counts.size());
  for (int c : counts) {
    scores.logprobs.push_back(std::log((static_cast<double>(c) + 1.0) / denom));
  }
  return scores;
}

OptionScores sample_based_scores(ModelBackend& backend, const GenerateRequest& request,
                                 const OptionSet& options, int n_samples) {
  std::vector<int> counts(static_cast<std::size_t>(options.size()), 0);
  for (int s = 0; s < n_samples; ++s) {
    GenerateRequest sampled = request;
    sampled.sampling.seed = request.sampling.seed + static_cast<std::uint64_t>(s) + 1;
    std::string raw = backend.generate(sampled);
    ParseResult parsed = parse_response_lenient(raw, options);
    std::optional<int> idx;
    if (parsed.ok() && parsed.value().is_answer()) {
      idx = parsed.value().answer().option_index;
    } else {
      idx = options.resolve(raw);  // bare-label replies are fine for scoring
    }
    if (idx) counts[static_cast<std::size_t>(*idx)]++;
  }
  return scores_from_sample_counts(counts, n_samples);
}

std::string PlaybackBackend::generate(const GenerateRequest&) {
  if (generate_calls_ >= static_cast<int>(turns_.size())) {
    throw BackendError(BackendErrorKind::MalformedReply,
                       "playback script exhausted after " +
                           std::to_string(generate_calls_) + " calls");
  }
  return turns_[static_cast<std::size_t>(generate_calls_++)].response;
}

OptionScores PlaybackBackend::score_options(const GenerateRequest&,
                                            const OptionSet& options) {
  // Scores are consumed in turn order, independently of generate's cursor,
  // because the controller scores each decision state before generating.
  while (score_calls_ < static_cast<int>(turns_.size())) {
    const Turn& turn = turns_[static_cast<std::size_t>(score_calls_++)];
    if (turn.scores) {
      if (static_cast<int>(turn.scores->size()) != options.size()) {
        throw BackendError(BackendErrorKind::ScoringUnavailable,
                           "scripted scores do not match the option count");
      }
      OptionScores scores;
      scores.logprobs = *turn.scores;
      scores.source = ScoreSource::Scripted;
      return scores;
    }
  }
  throw BackendError(BackendErrorKind::ScoringUnavailable,
                     "playback script has no scores left");
}

bool PlaybackBackend::supports_scoring() const {
  for (const Turn& turn : turns_) {
    if (turn.scores) return true;
  }
  return false;
}

}  // namespace framehop
