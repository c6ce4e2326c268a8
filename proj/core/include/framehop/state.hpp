// SPDX-License-Identifier: Apache-2.0
#pragma once

// Episode bookkeeping: which frames have been admitted, which summaries were
// committed, and what everything costs against the token budget. State ops
// are functional (they return the updated state) so property tests can diff
// before/after cheaply.

#include <functional>
#include <string_view>
#include <vector>

#include "framehop/protocol.hpp"

namespace framehop {

// Token accounting. Every admitted frame costs a flat amount; text costs
// ceil(bytes/4) unless a caller swaps in a real tokenizer.
struct CostModel {
  int per_frame_cost = 256;
  std::function<long long(std::string_view)> text_cost;  // null -> default_text_cost

  long long text(std::string_view s) const;
  long long frames(long long n) const { return static_cast<long long>(per_frame_cost) * n; }
};

struct EpisodeState {
  int round_index = 0;                            // rounds completed so far
  std::vector<SummaryState> committed_summaries;  // one per non-terminal round
  std::vector<int> admitted_frames;               // insertion order, no duplicates
  long long visual_cost = 0;                      // per_frame_cost * |admitted|

  bool has_frame(int index) const;
  // The only state the next round may condition on.
  const SummaryState& latest_summary() const;
};

enum class RejectReason {
  OutOfRange,
  AlreadyAdmitted,
  DuplicateInRequest,
  OverRoundCap,
  OverBudget,  // set by the controller's budget pass, not by admit_frames
};

std::string_view to_string(RejectReason reason);

struct RejectedFrame {
  int index = 0;
  RejectReason reason = RejectReason::OutOfRange;
};

struct AdmitResult {
  EpisodeState state;
  std::vector<int> admitted;            // newly admitted, request order
  std::vector<RejectedFrame> rejected;  // everything filtered out, with cause
};

// Filters a frame request against the current state: drops out-of-range
// indices, already-admitted indices, and duplicates within the request, then
// truncates to `round_cap` in first-come order. An empty `admitted` vector is
// the no-progress signal the controller turns into a reprompt.
AdmitResult admit_frames(const EpisodeState& state, const std::vector<int>& request,
                         int video_length, int round_cap, const CostModel& cost);

// Appends the round's summary. Called once per non-terminal round.
EpisodeState commit_summary(EpisodeState state, SummaryState summary);

// True iff visual cost plus the prompt's text cost fits the budget
// (inclusive: cost == budget passes).
bool within_budget(const EpisodeState& state, std::string_view next_prompt,
                   const CostModel& cost, long long token_budget);

}  // namespace framehop
