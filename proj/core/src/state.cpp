// SPDX-License-Identifier: Apache-2.0
#include "framehop/state.hpp"

#include <algorithm>

#include "framehop/util.hpp"

namespace framehop {

long long CostModel::text(std::string_view s) const {
  return text_cost ? text_cost(s) : default_text_cost(s);
}

bool EpisodeState::has_frame(int index) const {
  return std::find(admitted_frames.begin(), admitted_frames.end(), index) !=
         admitted_frames.end();
}

const SummaryState& EpisodeState::latest_summary() const {
  static const SummaryState kEmpty{};
  return committed_summaries.empty() ? kEmpty : committed_summaries.back();
}

std::string_view to_string(RejectReason reason) {
  switch (reason) {
    case RejectReason::OutOfRange: return "out of range";
    case RejectReason::AlreadyAdmitted: return "already admitted";
    case RejectReason::DuplicateInRequest: return "duplicate in request";
    case RejectReason::OverRoundCap: return "over the per-round cap";
    case RejectReason::OverBudget: return "over the token budget";
  }
  return "rejected";
}

AdmitResult admit_frames(const EpisodeState& state, const std::vector<int>& request,
                         int video_length, int round_cap, const CostModel& cost) {
  AdmitResult out;
  out.state = state;
  for (int index : request) {
    if (index < 0 || index >= video_length) {
      out.rejected.push_back({index, RejectReason::OutOfRange});
      continue;
    }
    if (state.has_frame(index)) {
      out.rejected.push_back({index, RejectReason::AlreadyAdmitted});
      continue;
    }
    if (std::find(out.admitted.begin(), out.admitted.end(), index) != out.admitted.end()) {
      out.rejected.push_back({index, RejectReason::DuplicateInRequest});
      continue;
    }
    if (static_cast<int>(out.admitted.size()) >= round_cap) {
      out.rejected.push_back({index, RejectReason::OverRoundCap});
      continue;
    }
    out.admitted.push_back(index);
  }
  for (int index : out.admitted) out.state.admitted_frames.push_back(index);
  out.state.visual_cost =
      cost.frames(static_cast<long long>(out.state.admitted_frames.size()));
  return out;
}

EpisodeState commit_summary(EpisodeState state, SummaryState summary) {
  state.committed_summaries.push_back(std::move(summary));
  return state;
}

bool within_budget(const EpisodeState& state, std::string_view next_prompt,
                   const CostModel& cost, long long token_budget) {
  return state.visual_cost + cost.text(next_prompt) <= token_budget;
}

}  // namespace framehop
