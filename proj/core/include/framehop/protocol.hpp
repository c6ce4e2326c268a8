// SPDX-License-Identifier: Apache-2.0
#pragma once

// Wire protocol between the controller and a model. Every model turn must
// carry a five-field summary block plus exactly one action tag:
//
//   <summary>
//   P: <what has been inspected so far>
//   O: <observations from the current frames>
//   H: <current hypotheses>
//   U: <remaining uncertainties>
//   R: <reasons for the chosen action>
//   </summary>
//   <frames>i1,i2,...</frames>     (request more frames)
//   -- or --
//   <answer>LABEL</answer>         (commit to an option)
//
// The summary is the only state carried between rounds, so the serializer is
// canonical (byte-exact) and the strict parser accepts nothing but the
// grammar above. A lenient tier exists for models that wrap their output in
// prose; the reward code never uses it.

#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace framehop {

// Answer options for one question. Each option gets a letter label by
// position: 'A' + index. Between 2 and 26 options are supported.
class OptionSet {
 public:
  OptionSet() = default;
  explicit OptionSet(std::vector<std::string> texts) : texts_(std::move(texts)) {}

  int size() const { return static_cast<int>(texts_.size()); }
  const std::string& text(int i) const { return texts_[static_cast<std::size_t>(i)]; }
  const std::vector<std::string>& texts() const { return texts_; }
  static char letter(int i) { return static_cast<char>('A' + i); }
  std::string label(int i) const { return std::string(1, letter(i)); }

  // Accepts a single option letter (case-insensitive) or the exact option
  // text (case-insensitive, surrounding whitespace ignored).
  std::optional<int> resolve(std::string_view raw) const;

  bool operator==(const OptionSet&) const = default;

 private:
  std::vector<std::string> texts_;
};

// The cumulative scratchpad the model rewrites every round. Field order is
// fixed: P, O, H, U, R.
struct SummaryState {
  std::string previously_seen;
  std::string observations;
  std::string hypotheses;
  std::string uncertainties;
  std::string reasons;

  bool empty() const {
    return previously_seen.empty() && observations.empty() && hypotheses.empty() &&
           uncertainties.empty() && reasons.empty();
  }
  bool operator==(const SummaryState&) const = default;
};

struct FrameRequest {
  std::vector<int> indices;  // distinct, non-negative, in written order
  bool operator==(const FrameRequest&) const = default;
};

struct FinalAnswer {
  int option_index = 0;   // resolved position in the OptionSet
  std::string raw_text;   // the text as written inside <answer>...</answer>
  bool operator==(const FinalAnswer&) const = default;
};

struct AgentResponse {
  SummaryState summary;
  std::variant<FrameRequest, FinalAnswer> action;

  bool is_request() const { return std::holds_alternative<FrameRequest>(action); }
  bool is_answer() const { return std::holds_alternative<FinalAnswer>(action); }
  const FrameRequest& request() const { return std::get<FrameRequest>(action); }
  const FinalAnswer& answer() const { return std::get<FinalAnswer>(action); }
  bool operator==(const AgentResponse&) const = default;
};

enum class ParseErrorKind {
  MissingSummary,
  MissingAction,
  BothActions,
  MalformedField,
  MalformedIndexList,
  TrailingContent,
};

std::string_view to_string(ParseErrorKind kind);

// The first grammar rule violated in document order, with the byte span of
// the offending region in the raw text.
struct ParseError {
  ParseErrorKind kind = ParseErrorKind::MissingSummary;
  std::size_t begin = 0;
  std::size_t end = 0;
  std::string message;
};

struct ParseResult {
  std::optional<AgentResponse> response;
  std::optional<ParseError> error;

  bool ok() const { return response.has_value(); }
  const AgentResponse& value() const { return *response; }
  const ParseError& err() const { return *error; }
};

// Strict tier: positional grammar, nothing but whitespace outside the tags.
ParseResult parse_response(std::string_view raw, const OptionSet& options);

// Lenient tier: tolerates surrounding prose, case-insensitive tags, missing
// field labels (positional assignment), and sloppy index lists. Never used by
// the reward code.
ParseResult parse_response_lenient(std::string_view raw, const OptionSet& options);

// Freeform tier for the unstructured-summary ablation: the summary body is
// captured verbatim into `observations` with the other fields empty.
ParseResult parse_response_freeform(std::string_view raw, const OptionSet& options);

// Canonical serializer: UTF-8, LF line endings, fields in P,O,H,U,R order,
// answers rendered as their option letter. Precondition: field values contain
// no newline and no "</summary>", indices are distinct and non-negative, and
// the answer index is within the option set.
std::string serialize_response(const AgentResponse& response, const OptionSet& options);

// Just the five labeled lines, no tags. Used when embedding a summary in a
// prompt.
std::string serialize_summary_body(const SummaryState& summary);

// True iff the strict tier accepts the text: tags plus whitespace only, in
// grammar order. This is the referee used by the format reward.
bool format_is_valid(std::string_view raw, const OptionSet& options);

// True when `response` satisfies the serializer preconditions above.
bool response_is_serializable(const AgentResponse& response, const OptionSet& options);

}  // namespace framehop
