// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <string>
#include <vector>

#include "framehop/protocol.hpp"
#include "framehop/util.hpp"

using namespace framehop;

namespace {

const OptionSet kOptions({"a red ball", "a blue cube", "a green cone", "a black disk"});

AgentResponse select_response(std::vector<int> indices) {
  AgentResponse r;
  r.summary = {"frames 0,3", "a ball appears", "it may roll left", "color unclear",
               "need frames near the end"};
  r.action = FrameRequest{std::move(indices)};
  return r;
}

AgentResponse answer_response(int index) {
  AgentResponse r;
  r.summary = {"frames 0,3,7", "ball rolls left", "", "", "left roll matches option A"};
  r.action = FinalAnswer{index, kOptions.label(index)};
  return r;
}

}  // namespace

TEST_CASE("strict round-trips the canonical serialization") {
  for (const AgentResponse& original :
       {select_response({3, 5, 9}), select_response({0}), answer_response(0),
        answer_response(3)}) {
    const std::string text = serialize_response(original, kOptions);
    ParseResult parsed = parse_response(text, kOptions);
    REQUIRE(parsed.ok());
    CHECK(parsed.value() == original);
    CHECK(format_is_valid(text, kOptions));
  }
}

TEST_CASE("strict rejects prose outside the tags") {
  const std::string valid = serialize_response(answer_response(1), kOptions);

  ParseResult leading = parse_response("Sure! " + valid, kOptions);
  REQUIRE_FALSE(leading.ok());
  CHECK(leading.err().kind == ParseErrorKind::MissingSummary);

  ParseResult trailing = parse_response(valid + " hope that helps", kOptions);
  REQUIRE_FALSE(trailing.ok());
  CHECK(trailing.err().kind == ParseErrorKind::TrailingContent);

  // Whitespace padding is the one allowance.
  CHECK(parse_response("\n  " + valid + "\n\n", kOptions).ok());
}

TEST_CASE("strict reports the first grammar violation with a span") {
  struct Case {
    std::string text;
    ParseErrorKind kind;
  };
  const std::string fields = "P: a\nO: b\nH: c\nU: d\nR: e\n";
  const std::vector<Case> cases = {
      {"", ParseErrorKind::MissingSummary},
      {"<summary>\n" + fields, ParseErrorKind::MissingSummary},  // unclosed
      {"<summary>\n" + fields + "</summary>", ParseErrorKind::MissingAction},
      {"<summary>\n" + fields + "</summary><frames>1,2", ParseErrorKind::MissingAction},
      {"<summary>\nO: b\nP: a\nH: c\nU: d\nR: e\n</summary><answer>A</answer>",
       ParseErrorKind::MalformedField},  // wrong order
      {"<summary>\nP: a\nO: b\nH: c\nU: d\n</summary><answer>A</answer>",
       ParseErrorKind::MalformedField},  // missing R
      {"<summary>\n" + fields + "extra line\n</summary><answer>A</answer>",
       ParseErrorKind::MalformedField},
      {"<summary>\n" + fields + "</summary><answer>E</answer>", ParseErrorKind::MalformedField},
      {"<summary>\n" + fields + "</summary><answer>A</answer><frames>1</frames>",
       ParseErrorKind::BothActions},
      {"<summary>\n" + fields + "</summary><frames>1</frames><frames>2</frames>",
       ParseErrorKind::BothActions},
      {"<summary>\n" + fields + "</summary><frames>1,2</frames> trailing",
       ParseErrorKind::TrailingContent},
  };
  for (const Case& c : cases) {
    CAPTURE(c.text);
    ParseResult parsed = parse_response(c.text, kOptions);
    REQUIRE_FALSE(parsed.ok());
    CHECK(parsed.err().kind == c.kind);
    CHECK(parsed.err().begin <= parsed.err().end);
    CHECK(parsed.err().end <= c.text.size());
    CHECK_FALSE(parsed.err().message.empty());
  }
}

TEST_CASE("strict index lists: comma-separated decimals, no duplicates") {
  auto wrap = [](const std::string& list) {
    return "<summary>\nP: a\nO: b\nH: c\nU: d\nR: e\n</summary><frames>" + list + "</frames>";
  };
  ParseResult ok = parse_response(wrap(" 3 , 5,9 "), kOptions);
  REQUIRE(ok.ok());
  CHECK(ok.value().request().indices == std::vector<int>{3, 5, 9});

  for (const std::string bad : {"", "3,,5", "3;5", "-1", "+2", "1.5", "3,3", "9999999999"}) {
    CAPTURE(bad);
    ParseResult parsed = parse_response(wrap(bad), kOptions);
    REQUIRE_FALSE(parsed.ok());
    CHECK(parsed.err().kind == ParseErrorKind::MalformedIndexList);
  }
}

TEST_CASE("answers resolve by letter or exact text, case-insensitively") {
  CHECK(kOptions.resolve("B") == 1);
  CHECK(kOptions.resolve("b") == 1);
  CHECK(kOptions.resolve(" a blue cube ") == 1);
  CHECK(kOptions.resolve("A BLUE CUBE") == 1);
  CHECK(kOptions.resolve("E") == std::nullopt);
  CHECK(kOptions.resolve("") == std::nullopt);
  CHECK(kOptions.resolve("blue") == std::nullopt);  // substrings are a lenient-only favor

  // A single letter wins over an option text of the same letter.
  OptionSet tricky({"B", "x"});
  CHECK(tricky.resolve("B") == 1);
}

TEST_CASE("lenient accepts prose, case, and sloppy lists") {
  const std::string text =
      "Sure, here is my reasoning.\n"
      "<SUMMARY>\n"
      "P: frames 0 and 3\n"
      "looked like a ball\n"
      "U: color?\n"
      "</SUMMARY>\n"
      "I want more frames: <frames>5, 5; 7 then 12</frames>\n"
      "Thanks!";
  ParseResult parsed = parse_response_lenient(text, kOptions);
  REQUIRE(parsed.ok());
  CHECK(parsed.value().summary.previously_seen == "frames 0 and 3");
  // Unlabeled line fills the earliest empty field (observations).
  CHECK(parsed.value().summary.observations == "looked like a ball");
  CHECK(parsed.value().summary.uncertainties == "color?");
  CHECK(parsed.value().request().indices == std::vector<int>{5, 7, 12});

  CHECK_FALSE(format_is_valid(text, kOptions));  // the strict referee still says no
}

TEST_CASE("lenient answer salvaging") {
  auto wrap = [](const std::string& answer) {
    return "<summary>\nP: a\nO: b\nH: c\nU: d\nR: e\n</summary><answer>" + answer +
           "</answer>";
  };
  CHECK(parse_response_lenient(wrap("B)"), kOptions).value().answer().option_index == 1);
  CHECK(parse_response_lenient(wrap("C. the green one"), kOptions).value().answer().option_index ==
        2);
  CHECK(parse_response_lenient(wrap("I think it is a black disk"), kOptions)
            .value()
            .answer()
            .option_index == 3);
  // "a" matches several option texts as a substring: ambiguous, so rejected.
  ParseResult ambiguous = parse_response_lenient(wrap("it could be anything"), kOptions);
  REQUIRE_FALSE(ambiguous.ok());
  CHECK(ambiguous.err().kind == ParseErrorKind::MalformedField);
}

TEST_CASE("lenient still requires a summary and an action") {
  CHECK(parse_response_lenient("no tags at all", kOptions).err().kind ==
        ParseErrorKind::MissingSummary);
  CHECK(parse_response_lenient("<summary>P: a</summary> nothing else", kOptions).err().kind ==
        ParseErrorKind::MissingAction);
  CHECK(parse_response_lenient("<summary>x</summary><frames>none</frames>", kOptions)
            .err()
            .kind == ParseErrorKind::MalformedIndexList);
}

TEST_CASE("freeform keeps the summary body verbatim in observations") {
  const std::string text =
      "<summary>The clip shows a ball rolling left.\nColor is unclear.</summary>\n"
      "<answer>a red ball</answer>";
  ParseResult parsed = parse_response_freeform(text, kOptions);
  REQUIRE(parsed.ok());
  CHECK(parsed.value().summary.observations ==
        "The clip shows a ball rolling left.\nColor is unclear.");
  CHECK(parsed.value().summary.previously_seen.empty());
  CHECK(parsed.value().summary.hypotheses.empty());
  CHECK(parsed.value().answer().option_index == 0);
}

TEST_CASE("serializability preconditions") {
  CHECK(response_is_serializable(select_response({1, 2}), kOptions));
  CHECK(response_is_serializable(answer_response(3), kOptions));

  AgentResponse newline = select_response({1});
  newline.summary.observations = "two\nlines";
  CHECK_FALSE(response_is_serializable(newline, kOptions));

  AgentResponse close_tag = select_response({1});
  close_tag.summary.reasons = "sneaky </summary> here";
  CHECK_FALSE(response_is_serializable(close_tag, kOptions));

  CHECK_FALSE(response_is_serializable(select_response({}), kOptions));
  CHECK_FALSE(response_is_serializable(select_response({2, 2}), kOptions));
  CHECK_FALSE(response_is_serializable(select_response({-1}), kOptions));
  CHECK_FALSE(response_is_serializable(answer_response(3), OptionSet({"a", "b"})));

  AgentResponse bad_answer;
  bad_answer.summary = answer_response(0).summary;
  bad_answer.action = FinalAnswer{7, "H"};
  CHECK_FALSE(response_is_serializable(bad_answer, kOptions));
}

namespace {

// Random printable text without newlines or tag fragments.
std::string random_field(Rng& rng) {
  static const std::string alphabet =
      "abcdefghijklmnopqrstuvwxyz ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 .,;:!?()-";
  std::string out;
  const int len = static_cast<int>(rng.below(40));
  for (int i = 0; i < len; ++i) out.push_back(alphabet[rng.below(alphabet.size())]);
  // A field that is pure whitespace round-trips to "" after trimming; keep the
  // generator in the fixed-point set by trimming here.
  return std::string(trim(out));
}

AgentResponse random_response(Rng& rng) {
  AgentResponse r;
  r.summary.previously_seen = random_field(rng);
  r.summary.observations = random_field(rng);
  r.summary.hypotheses = random_field(rng);
  r.summary.uncertainties = random_field(rng);
  r.summary.reasons = random_field(rng);
  if (rng.below(2) == 0) {
    const int k = 1 + static_cast<int>(rng.below(6));
    std::vector<int> indices = rng.pick_distinct(k, 500);
    rng.shuffle(indices);
    r.action = FrameRequest{std::move(indices)};
  } else {
    const int idx = static_cast<int>(rng.below(kOptions.size()));
    r.action = FinalAnswer{idx, kOptions.label(idx)};
  }
  return r;
}

}  // namespace

TEST_CASE("random valid responses round-trip exactly") {
  Rng rng(0x5eed0001);
  for (int i = 0; i < 1000; ++i) {
    const AgentResponse original = random_response(rng);
    REQUIRE(response_is_serializable(original, kOptions));
    const std::string text = serialize_response(original, kOptions);
    ParseResult strict = parse_response(text, kOptions);
    REQUIRE(strict.ok());
    CHECK(strict.value() == original);
    ParseResult lenient = parse_response_lenient(text, kOptions);
    REQUIRE(lenient.ok());
    CHECK(lenient.value().summary == original.summary);
  }
}

TEST_CASE("fuzz: parsers never crash and accepted strict output is a fixed point") {
  Rng rng(0xf0220f);
  const std::string pieces[] = {
      "<summary>", "</summary>", "<frames>", "</frames>", "<answer>", "</answer>",
      "P:", "O:", "H:", "U:", "R:", "\n", ",", " ", "1", "23", "999999999999", "-4",
      "A", "b", "a red ball", "\t", "<", ">", "</", "\r\n", "x", "<sum", "mary>"};
  for (int i = 0; i < 2000; ++i) {
    std::string text;
    const int n = static_cast<int>(rng.below(24));
    for (int j = 0; j < n; ++j) {
      if (rng.below(5) == 0) {
        text.push_back(static_cast<char>(rng.below(256)));
      } else {
        text += pieces[rng.below(std::size(pieces))];
      }
    }
    ParseResult strict = parse_response(text, kOptions);
    if (strict.ok()) {
      REQUIRE(response_is_serializable(strict.value(), kOptions));
      const std::string canon = serialize_response(strict.value(), kOptions);
      ParseResult again = parse_response(canon, kOptions);
      REQUIRE(again.ok());
      CHECK(again.value() == strict.value());
    } else {
      CHECK(strict.err().begin <= strict.err().end);
      CHECK(strict.err().end <= text.size());
    }
    ParseResult lenient = parse_response_lenient(text, kOptions);
    if (lenient.ok()) REQUIRE(response_is_serializable(lenient.value(), kOptions));
    parse_response_freeform(text, kOptions);  // must not crash
  }
}
