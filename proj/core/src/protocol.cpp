// SPDX-License-Identifier: Apache-2.0
#include "framehop/protocol.hpp"

#include <algorithm>
#include <cctype>

#include "framehop/util.hpp"

namespace framehop {
namespace {

constexpr std::string_view kSummaryOpen = "<summary>";
constexpr std::string_view kSummaryClose = "</summary>";
constexpr std::string_view kFramesOpen = "<frames>";
constexpr std::string_view kFramesClose = "</frames>";
constexpr std::string_view kAnswerOpen = "<answer>";
constexpr std::string_view kAnswerClose = "</answer>";

constexpr std::string_view kFieldLabels[5] = {"P:", "O:", "H:", "U:", "R:"};

std::size_t skip_ws(std::string_view s, std::size_t i) {
  while (i < s.size() && std::isspace(static_cast<unsigned char>(s[i]))) ++i;
  return i;
}

bool has_at(std::string_view s, std::size_t i, std::string_view token) {
  return s.compare(i, token.size(), token) == 0;
}

ParseResult fail(ParseErrorKind kind, std::size_t begin, std::size_t end,
                 std::string message) {
  ParseResult out;
  out.error = ParseError{kind, begin, end, std::move(message)};
  return out;
}

// Case-insensitive find, for the lenient tier.
std::size_t ifind(std::string_view haystack, std::string_view needle, std::size_t from) {
  if (needle.empty() || haystack.size() < needle.size()) return std::string_view::npos;
  for (std::size_t i = from; i + needle.size() <= haystack.size(); ++i) {
    bool hit = true;
    for (std::size_t j = 0; j < needle.size(); ++j) {
      if (std::tolower(static_cast<unsigned char>(haystack[i + j])) !=
          std::tolower(static_cast<unsigned char>(needle[j]))) {
        hit = false;
        break;
      }
    }
    if (hit) return i;
  }
  return std::string_view::npos;
}

// One field value: everything after the label, minus exactly one leading
// space (the canonical separator).
std::string field_value(std::string_view line_after_label) {
  if (!line_after_label.empty() && line_after_label.front() == ' ') {
    line_after_label.remove_prefix(1);
  }
  return std::string(line_after_label);
}

void assign_field(SummaryState& s, int idx, std::string value) {
  switch (idx) {
    case 0: s.previously_seen = std::move(value); break;
    case 1: s.observations = std::move(value); break;
    case 2: s.hypotheses = std::move(value); break;
    case 3: s.uncertainties = std::move(value); break;
    default: s.reasons = std::move(value); break;
  }
}

// Strict field grammar: five labeled lines in P,O,H,U,R order. Blank lines
// are skipped; anything else is a violation. `base` is the byte offset of the
// body within the raw text so error spans land on the offending line.
std::optional<ParseError> parse_fields_strict(std::string_view body, std::size_t base,
                                              SummaryState& out) {
  int next_field = 0;
  std::size_t pos = 0;
  while (pos <= body.size()) {
    std::size_t eol = body.find('\n', pos);
    std::size_t line_end = (eol == std::string_view::npos) ? body.size() : eol;
    std::string_view line = body.substr(pos, line_end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    std::string_view stripped = line;
    std::size_t indent = 0;
    while (indent < stripped.size() &&
           (stripped[indent] == ' ' || stripped[indent] == '\t')) ++indent;
    stripped.remove_prefix(indent);

    if (!stripped.empty()) {
      if (next_field >= 5) {
        return ParseError{ParseErrorKind::MalformedField, base + pos, base + line_end,
                          "unexpected content after the R field"};
      }
      std::string_view label = kFieldLabels[next_field];
      if (stripped.size() < label.size() || stripped.substr(0, label.size()) != label) {
        return ParseError{ParseErrorKind::MalformedField, base + pos, base + line_end,
                          std::string("expected field label ") + std::string(label)};
      }
      assign_field(out, next_field, field_value(stripped.substr(label.size())));
      ++next_field;
    }
    if (eol == std::string_view::npos) break;
    pos = eol + 1;
  }
  if (next_field < 5) {
    return ParseError{ParseErrorKind::MalformedField, base, base + body.size(),
                      std::string("missing field label ") +
                          std::string(kFieldLabels[next_field])};
  }
  return std::nullopt;
}

// Index list grammar: comma-separated decimal integers, optional whitespace
// around each. Duplicates, signs, and non-digits are violations.
std::optional<ParseError> parse_index_list(std::string_view content, std::size_t base,
                                           std::vector<int>& out) {
  std::size_t start = 0;
  bool any = false;
  for (std::size_t i = 0; i <= content.size(); ++i) {
    if (i < content.size() && content[i] != ',') continue;
    std::string_view token = trim(content.substr(start, i - start));
    std::size_t token_begin = base + start;
    if (token.empty()) {
      return ParseError{ParseErrorKind::MalformedIndexList, token_begin, base + i,
                        any ? "empty index entry" : "empty index list"};
    }
    if (token.size() > 9 ||
        !std::all_of(token.begin(), token.end(),
                     [](char c) { return std::isdigit(static_cast<unsigned char>(c)); })) {
      return ParseError{ParseErrorKind::MalformedIndexList, token_begin, base + i,
                        "index is not a non-negative decimal integer: '" +
                            std::string(token) + "'"};
    }
    int value = 0;
    for (char c : token) value = value * 10 + (c - '0');
    if (std::find(out.begin(), out.end(), value) != out.end()) {
      return ParseError{ParseErrorKind::MalformedIndexList, token_begin, base + i,
                        "duplicate index " + std::to_string(value)};
    }
    out.push_back(value);
    any = true;
    start = i + 1;
  }
  return std::nullopt;
}

}  // namespace

std::string_view to_string(ParseErrorKind kind) {
  switch (kind) {
    case ParseErrorKind::MissingSummary: return "MissingSummary";
    case ParseErrorKind::MissingAction: return "MissingAction";
    case ParseErrorKind::BothActions: return "BothActions";
    case ParseErrorKind::MalformedField: return "MalformedField";
    case ParseErrorKind::MalformedIndexList: return "MalformedIndexList";
    case ParseErrorKind::TrailingContent: return "TrailingContent";
  }
  return "UnknownParseError";
}

std::optional<int> OptionSet::resolve(std::string_view raw) const {
  std::string_view t = trim(raw);
  if (t.empty()) return std::nullopt;
  if (t.size() == 1) {
    char c = static_cast<char>(std::toupper(static_cast<unsigned char>(t[0])));
    int idx = c - 'A';
    if (idx >= 0 && idx < size()) return idx;
  }
  for (int i = 0; i < size(); ++i) {
    if (iequals(t, texts_[static_cast<std::size_t>(i)])) return i;
  }
  return std::nullopt;
}

ParseResult parse_response(std::string_view raw, const OptionSet& options) {
  AgentResponse response;

  // 1. Summary block, first thing after optional whitespace.
  std::size_t i = skip_ws(raw, 0);
  if (!has_at(raw, i, kSummaryOpen)) {
    return fail(ParseErrorKind::MissingSummary, i, std::min(raw.size(), i + 9),
                "expected <summary> at the start of the response");
  }
  std::size_t body_begin = i + kSummaryOpen.size();
  std::size_t close = raw.find(kSummaryClose, body_begin);
  if (close == std::string_view::npos) {
    return fail(ParseErrorKind::MissingSummary, i, raw.size(), "unclosed <summary>");
  }
  std::string_view body = raw.substr(body_begin, close - body_begin);
  if (auto err = parse_fields_strict(body, body_begin, response.summary)) {
    ParseResult out;
    out.error = std::move(*err);
    return out;
  }

  // 2. Exactly one action tag.
  std::size_t j = skip_ws(raw, close + kSummaryClose.size());
  bool is_frames = has_at(raw, j, kFramesOpen);
  bool is_answer = has_at(raw, j, kAnswerOpen);
  if (!is_frames && !is_answer) {
    return fail(ParseErrorKind::MissingAction, j, raw.size(),
                "expected <frames> or <answer> after </summary>");
  }
  std::size_t after_action = 0;
  if (is_frames) {
    std::size_t content_begin = j + kFramesOpen.size();
    std::size_t frames_close = raw.find(kFramesClose, content_begin);
    if (frames_close == std::string_view::npos) {
      return fail(ParseErrorKind::MissingAction, j, raw.size(), "unclosed <frames>");
    }
    FrameRequest request;
    if (auto err = parse_index_list(raw.substr(content_begin, frames_close - content_begin),
                                    content_begin, request.indices)) {
      ParseResult out;
      out.error = std::move(*err);
      return out;
    }
    response.action = std::move(request);
    after_action = frames_close + kFramesClose.size();
  } else {
    std::size_t content_begin = j + kAnswerOpen.size();
    std::size_t answer_close = raw.find(kAnswerClose, content_begin);
    if (answer_close == std::string_view::npos) {
      return fail(ParseErrorKind::MissingAction, j, raw.size(), "unclosed <answer>");
    }
    std::string_view content = raw.substr(content_begin, answer_close - content_begin);
    std::optional<int> idx = options.resolve(content);
    if (!idx) {
      return fail(ParseErrorKind::MalformedField, content_begin, answer_close,
                  "answer does not resolve to an option: '" + std::string(trim(content)) +
                      "'");
    }
    response.action = FinalAnswer{*idx, std::string(trim(content))};
    after_action = answer_close + kAnswerClose.size();
  }

  // 3. Nothing but whitespace may follow. A second action tag is the
  // exactly-one-action rule failing; anything else is trailing content.
  std::string_view rest = raw.substr(after_action);
  std::size_t extra_frames = rest.find(kFramesOpen);
  std::size_t extra_answer = rest.find(kAnswerOpen);
  std::size_t extra_action = std::min(extra_frames, extra_answer);
  std::size_t trailing = skip_ws(raw, after_action);
  if (trailing < raw.size()) {
    if (extra_action != std::string_view::npos) {
      return fail(ParseErrorKind::BothActions, after_action + extra_action, raw.size(),
                  "more than one action tag");
    }
    return fail(ParseErrorKind::TrailingContent, trailing, raw.size(),
                "unexpected content after the action tag");
  }

  ParseResult out;
  out.response = std::move(response);
  return out;
}

ParseResult parse_response_lenient(std::string_view raw, const OptionSet& options) {
  AgentResponse response;

  std::size_t open = ifind(raw, kSummaryOpen, 0);
  if (open == std::string_view::npos) {
    return fail(ParseErrorKind::MissingSummary, 0, raw.size(), "no <summary> tag found");
  }
  std::size_t body_begin = open + kSummaryOpen.size();
  std::size_t close = ifind(raw, kSummaryClose, body_begin);
  std::size_t body_end = close;
  if (body_end == std::string_view::npos) {
    // Unclosed summary: take the body up to the first action tag.
    std::size_t f = ifind(raw, kFramesOpen, body_begin);
    std::size_t a = ifind(raw, kAnswerOpen, body_begin);
    body_end = std::min(f, a);
    if (body_end == std::string_view::npos) {
      return fail(ParseErrorKind::MissingSummary, open, raw.size(), "unclosed <summary>");
    }
  }
  std::string_view body = raw.substr(body_begin, body_end - body_begin);

  // Labeled lines win; unlabeled non-blank lines fill the earliest empty
  // field; leftovers are folded into R.
  std::string fields[5];
  bool taken[5] = {false, false, false, false, false};
  std::vector<std::string> unlabeled;
  for (std::string_view line_raw : split(body, '\n')) {
    std::string_view line = trim(line_raw);
    if (line.empty()) continue;
    bool labeled = false;
    for (int f = 0; f < 5; ++f) {
      std::string_view label = kFieldLabels[f];
      if (line.size() >= label.size() && iequals(line.substr(0, label.size()), label)) {
        if (!taken[f]) {
          fields[f] = field_value(line.substr(label.size()));
          taken[f] = true;
        }
        labeled = true;
        break;
      }
    }
    if (!labeled) unlabeled.emplace_back(line);
  }
  std::size_t u = 0;
  for (int f = 0; f < 5 && u < unlabeled.size(); ++f) {
    if (!taken[f]) {
      fields[f] = unlabeled[u++];
      taken[f] = true;
    }
  }
  for (; u < unlabeled.size(); ++u) {
    if (!fields[4].empty()) fields[4] += ' ';
    fields[4] += unlabeled[u];
  }
  for (int f = 0; f < 5; ++f) assign_field(response.summary, f, std::move(fields[f]));

  // First action tag after the summary body.
  std::size_t search_from = (close == std::string_view::npos)
                                ? body_end
                                : close + kSummaryClose.size();
  std::size_t f_at = ifind(raw, kFramesOpen, search_from);
  std::size_t a_at = ifind(raw, kAnswerOpen, search_from);
  if (f_at == std::string_view::npos && a_at == std::string_view::npos) {
    return fail(ParseErrorKind::MissingAction, search_from, raw.size(),
                "no action tag found");
  }
  if (f_at < a_at) {
    std::size_t content_begin = f_at + kFramesOpen.size();
    std::size_t frames_close = ifind(raw, kFramesClose, content_begin);
    std::size_t content_end = (frames_close == std::string_view::npos) ? raw.size()
                                                                       : frames_close;
    std::string_view content = raw.substr(content_begin, content_end - content_begin);
    FrameRequest request;
    // Salvage digit runs token by token; drop everything else.
    std::size_t pos = 0;
    while (pos < content.size()) {
      if (std::isdigit(static_cast<unsigned char>(content[pos]))) {
        std::size_t end = pos;
        while (end < content.size() &&
               std::isdigit(static_cast<unsigned char>(content[end]))) ++end;
        if (end - pos <= 9) {
          int value = 0;
          for (std::size_t p = pos; p < end; ++p) value = value * 10 + (content[p] - '0');
          if (std::find(request.indices.begin(), request.indices.end(), value) ==
              request.indices.end()) {
            request.indices.push_back(value);
          }
        }
        pos = end;
      } else {
        ++pos;
      }
    }
    if (request.indices.empty()) {
      return fail(ParseErrorKind::MalformedIndexList, content_begin, content_end,
                  "no usable indices in <frames>");
    }
    response.action = std::move(request);
  } else {
    std::size_t content_begin = a_at + kAnswerOpen.size();
    std::size_t answer_close = ifind(raw, kAnswerClose, content_begin);
    std::size_t content_end = (answer_close == std::string_view::npos) ? raw.size()
                                                                       : answer_close;
    std::string_view content = trim(raw.substr(content_begin, content_end - content_begin));
    std::optional<int> idx = options.resolve(content);
    if (!idx) {
      // Try the first token with trailing punctuation stripped ("B)" -> "B").
      std::string_view token = content.substr(0, content.find_first_of(" \t"));
      while (!token.empty() && (token.back() == ')' || token.back() == '.' ||
                                token.back() == ':' || token.back() == ';' ||
                                token.back() == ','))
        token.remove_suffix(1);
      idx = options.resolve(token);
    }
    if (!idx) {
      // Unique case-insensitive substring match against option texts.
      std::string content_lower = to_lower(content);
      int hit = -1;
      int hits = 0;
      for (int k = 0; k < options.size(); ++k) {
        if (content_lower.find(to_lower(options.text(k))) != std::string::npos) {
          hit = k;
          ++hits;
        }
      }
      if (hits == 1) idx = hit;
    }
    if (!idx) {
      return fail(ParseErrorKind::MalformedField, content_begin, content_end,
                  "answer does not resolve to an option: '" + std::string(content) + "'");
    }
    response.action = FinalAnswer{*idx, std::string(content)};
  }

  ParseResult out;
  out.response = std::move(response);
  return out;
}

ParseResult parse_response_freeform(std::string_view raw, const OptionSet& options) {
  std::size_t open = ifind(raw, kSummaryOpen, 0);
  if (open == std::string_view::npos) {
    return fail(ParseErrorKind::MissingSummary, 0, raw.size(), "no <summary> tag found");
  }
  std::size_t body_begin = open + kSummaryOpen.size();
  std::size_t close = ifind(raw, kSummaryClose, body_begin);
  if (close == std::string_view::npos) {
    return fail(ParseErrorKind::MissingSummary, open, raw.size(), "unclosed <summary>");
  }

  // Reuse the lenient action handling by substituting a canonical summary
  // body, then transplant the verbatim blob.
  std::string rewritten = "<summary>\nP: \nO: \nH: \nU: \nR: \n</summary>";
  rewritten += raw.substr(close + kSummaryClose.size());
  ParseResult inner = parse_response_lenient(rewritten, options);
  if (!inner.ok()) {
    ParseResult out;
    out.error = inner.error;
    out.error->begin = 0;
    out.error->end = raw.size();
    return out;
  }
  AgentResponse response = std::move(*inner.response);
  response.summary = SummaryState{};
  response.summary.observations = std::string(trim(raw.substr(body_begin, close - body_begin)));
  ParseResult out;
  out.response = std::move(response);
  return out;
}

std::string serialize_summary_body(const SummaryState& summary) {
  std::string out;
  out.reserve(64 + summary.previously_seen.size() + summary.observations.size() +
              summary.hypotheses.size() + summary.uncertainties.size() +
              summary.reasons.size());
  out += "P: ";
  out += summary.previously_seen;
  out += "\nO: ";
  out += summary.observations;
  out += "\nH: ";
  out += summary.hypotheses;
  out += "\nU: ";
  out += summary.uncertainties;
  out += "\nR: ";
  out += summary.reasons;
  return out;
}

std::string serialize_response(const AgentResponse& response, const OptionSet& options) {
  std::string out = "<summary>\n";
  out += serialize_summary_body(response.summary);
  out += "\n</summary>\n";
  if (response.is_request()) {
    out += "<frames>";
    out += join_ints(response.request().indices);
    out += "</frames>";
  } else {
    out += "<answer>";
    out += options.label(response.answer().option_index);
    out += "</answer>";
  }
  return out;
}

bool format_is_valid(std::string_view raw, const OptionSet& options) {
  return parse_response(raw, options).ok();
}

bool response_is_serializable(const AgentResponse& response, const OptionSet& options) {
  const SummaryState& s = response.summary;
  for (const std::string* field : {&s.previously_seen, &s.observations, &s.hypotheses,
                                   &s.uncertainties, &s.reasons}) {
    if (field->find('\n') != std::string::npos) return false;
    if (field->find("</summary>") != std::string::npos) return false;
  }
  if (response.is_request()) {
    const auto& idx = response.request().indices;
    if (idx.empty()) return false;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] < 0) return false;
      for (std::size_t j = i + 1; j < idx.size(); ++j) {
        if (idx[i] == idx[j]) return false;
      }
    }
  } else {
    int i = response.answer().option_index;
    if (i < 0 || i >= options.size()) return false;
  }
  return true;
}

}  // namespace framehop
