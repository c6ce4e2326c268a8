// SPDX-License-Identifier: Apache-2.0
#include "framehop/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <stdexcept>

#include "json.hpp"

#include "framehop/controller.hpp"
#include "framehop/util.hpp"

namespace framehop {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kSubjects[] = {
    "lantern", "bicycle", "turtle",  "violin", "umbrella", "rocket",  "teapot",  "falcon",
    "cactus",  "anchor",  "compass", "drum",   "engine",   "flask",   "glacier", "hammer",
    "island",  "jigsaw",  "kettle",  "ladder", "magnet",   "needle",  "orchid",  "pylon",
    "quilt",   "ribbon",  "saddle",  "tripod", "vulture",  "walnut",  "zeppelin", "beacon",
};
constexpr int kSubjectCount = static_cast<int>(std::size(kSubjects));

constexpr const char* kBackdrops[] = {"corridor", "street", "meadow", "office",
                                      "harbor",   "kitchen", "forest"};
constexpr int kBackdropCount = static_cast<int>(std::size(kBackdrops));

constexpr const char* kCategories[] = {"recall", "locate", "compare", "count"};
constexpr int kCategoryCount = static_cast<int>(std::size(kCategories));

SyntheticTask finish_task(std::string id, std::uint64_t seed, int video_length,
                          std::vector<int> evidence, int n_options, Rng& rng) {
  if (n_options < 2 || n_options > kSubjectCount) {
    throw std::invalid_argument("option count outside [2, " +
                                std::to_string(kSubjectCount) + "]");
  }
  SyntheticTask task;
  task.id = std::move(id);
  task.seed = seed;
  task.video_length = video_length;
  task.evidence = std::move(evidence);
  std::vector<int> words = rng.pick_distinct(n_options, kSubjectCount);
  std::vector<std::string> texts;
  texts.reserve(words.size());
  for (int w : words) texts.emplace_back(kSubjects[w]);
  task.options = OptionSet(std::move(texts));
  task.correct_index = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_options)));
  task.subject = task.options.text(task.correct_index);
  task.category = kCategories[rng.below(kCategoryCount)];
  return task;
}

// Integer lists written as "marker=1,2,3" inside summaries. Collects every
// occurrence of the marker in `text`; "none" (or any non-digit) ends a list.
std::set<int> parse_marked_ints(std::string_view text, std::string_view marker) {
  std::set<int> out;
  std::size_t pos = 0;
  while ((pos = text.find(marker, pos)) != std::string_view::npos) {
    std::size_t i = pos + marker.size();
    std::string digits;
    while (i < text.size()) {
      char c = text[i];
      if (c >= '0' && c <= '9') {
        digits += c;
      } else if (c == ',' || digits.size() > 9) {
        if (!digits.empty() && digits.size() <= 9) out.insert(std::stoi(digits));
        digits.clear();
        if (c != ',') break;
      } else {
        break;
      }
      ++i;
    }
    if (!digits.empty() && digits.size() <= 9) out.insert(std::stoi(digits));
    pos = i;
  }
  return out;
}

std::vector<int> to_vector(const std::set<int>& xs) {
  return std::vector<int>(xs.begin(), xs.end());
}

std::vector<int> keep_last(const std::vector<int>& xs, int capacity) {
  if (capacity < 0 || static_cast<int>(xs.size()) <= capacity) return xs;
  return std::vector<int>(xs.end() - capacity, xs.end());
}

std::string list_or_none(const std::vector<int>& xs) {
  return xs.empty() ? "none" : join_ints(xs);
}

// What the oracle can recover at one decision state: its ledgers from the
// prompt-embedded summary plus the frames currently in front of it.
struct OracleView {
  bool structured = true;  // the prompt carries the five-field summary block
  bool forced = false;
  std::set<int> probed;       // every frame it knows was inspected
  std::set<int> found;        // evidence frames it knows about
  std::set<int> seen_now;     // found + evidence among shown frames
  double fraction = 0.0;      // f = |seen_now| / k
};

OracleView inspect_prompt(const SyntheticTask& task, const std::string& prompt,
                          const std::vector<int>& shown_frames) {
  OracleView view;
  std::string header_structured = std::string(kSummaryHeaderLine) + "\nP:";
  view.structured = prompt.find(header_structured) != std::string::npos;
  view.forced = prompt.find(kForcedAnswerNotice) != std::string::npos;
  view.probed = parse_marked_ints(prompt, "probed=");
  view.found = parse_marked_ints(prompt, "found=");
  // Defensive: only real evidence counts toward f.
  std::set<int> seen;
  for (int i : view.found) {
    if (task.is_evidence(i)) seen.insert(i);
  }
  for (int i : shown_frames) {
    view.probed.insert(i);
    if (task.is_evidence(i)) seen.insert(i);
  }
  view.seen_now = std::move(seen);
  view.fraction = task.k() > 0
                      ? static_cast<double>(view.seen_now.size()) / task.k()
                      : 0.0;
  return view;
}

std::vector<double> option_logits(const SyntheticTask& task, const OracleRules& rules,
                                  double fraction) {
  std::vector<double> logits(static_cast<std::size_t>(task.options.size()), 0.0);
  logits[static_cast<std::size_t>(task.correct_index)] =
      rules.logit_intercept + rules.logit_slope * fraction;
  return logits;
}

OptionScores log_softmax_scores(const std::vector<double>& logits) {
  double max_logit = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double l : logits) sum += std::exp(l - max_logit);
  double lse = max_logit + std::log(sum);
  OptionScores scores;
  scores.source = ScoreSource::Scripted;
  scores.logprobs.reserve(logits.size());
  for (double l : logits) scores.logprobs.push_back(l - lse);
  return scores;
}

}  // namespace

bool SyntheticTask::is_evidence(int frame) const {
  return std::binary_search(evidence.begin(), evidence.end(), frame);
}

std::string SyntheticTask::frame_label(int frame) const {
  if (is_evidence(frame)) return "EVID:" + subject;
  return std::string("BG:") + kBackdrops[frame % kBackdropCount];
}

std::string SyntheticTask::question() const {
  return "Which subject is revealed by the marked frames in this clip?";
}

SyntheticTask generate_task(std::uint64_t seed, int video_length, int k, int n_options) {
  if (video_length < 1) throw std::invalid_argument("video_length must be >= 1");
  if (k < 1 || k > video_length) {
    throw std::invalid_argument("evidence count outside [1, video_length]");
  }
  Rng rng(seed);
  std::vector<int> evidence = rng.pick_distinct(k, video_length);
  return finish_task("synth-" + std::to_string(seed), seed, video_length,
                     std::move(evidence), n_options, rng);
}

SyntheticTask generate_task_clustered(std::uint64_t seed, int video_length, int k,
                                      int n_options, int cluster_width) {
  if (video_length < 1) throw std::invalid_argument("video_length must be >= 1");
  if (k < 1 || k > cluster_width || cluster_width > video_length) {
    throw std::invalid_argument("need 1 <= k <= cluster_width <= video_length");
  }
  Rng rng(seed);
  int start = static_cast<int>(
      rng.below(static_cast<std::uint64_t>(video_length - cluster_width + 1)));
  std::vector<int> evidence = rng.pick_distinct(k, cluster_width);
  for (int& e : evidence) e += start;
  return finish_task("synthc-" + std::to_string(seed), seed, video_length,
                     std::move(evidence), n_options, rng);
}

std::unique_ptr<MemoryVideoSource> make_video_source(const SyntheticTask& task) {
  VideoMeta meta;
  meta.source_id = task.id;
  meta.frame_count = task.video_length;
  meta.fps = task.fps;
  meta.duration_s = task.video_length / task.fps;
  std::vector<ImagePayload> frames;
  frames.reserve(static_cast<std::size_t>(task.video_length));
  for (int i = 0; i < task.video_length; ++i) {
    frames.push_back(
        encode_synthetic_frame(i, task.is_evidence(i), task.frame_label(i), task.fps));
  }
  return std::make_unique<MemoryVideoSource>(std::move(meta), std::move(frames));
}

OptionScores oracle_assess(const SyntheticTask& task, const OracleRules& rules,
                           const std::string& prompt,
                           const std::vector<int>& shown_frames) {
  OracleView view = inspect_prompt(task, prompt, shown_frames);
  return log_softmax_scores(option_logits(task, rules, view.fraction));
}

OracleReply oracle_respond(const SyntheticTask& task, const OracleRules& rules,
                           const std::string& prompt,
                           const std::vector<int>& shown_frames, int round) {
  OracleView view = inspect_prompt(task, prompt, shown_frames);
  OracleReply reply;
  reply.scores = log_softmax_scores(option_logits(task, rules, view.fraction));

  const bool answers = view.forced || view.fraction >= rules.answer_threshold;

  // Answer from what was actually seen: confident once the correct option's
  // logit clears the distractors, otherwise commit to the lowest distractor.
  int answer_index = task.correct_index;
  if (rules.logit_intercept + rules.logit_slope * view.fraction <= 0.0) {
    answer_index = task.correct_index == 0 ? 1 : 0;
  }

  // Next request: unseen evidence in ascending order. The freeform summarizer
  // plans only from its written notes (the structured O-field discipline is
  // what folds the current screenful into the plan), so in blob mode the
  // shown frames do not inform targeting. With nothing (believed) left
  // unseen it re-asks the first evidence indices and lets the admission
  // filter arbitrate.
  std::vector<int> request;
  if (!answers) {
    const std::set<int>& targeting_seen =
        view.structured ? view.seen_now : view.found;
    for (int e : task.evidence) {
      if (static_cast<int>(request.size()) >= rules.request_size) break;
      if (!targeting_seen.count(e)) request.push_back(e);
    }
    if (request.empty()) {
      for (int e : task.evidence) {
        if (static_cast<int>(request.size()) >= rules.request_size) break;
        request.push_back(e);
      }
    }
  }

  // Ledgers as carried forward in the summary. The structured protocol keeps
  // them whole; the single-paragraph summary retains only the most recent
  // entries (its capacity handicap).
  std::vector<int> probed = to_vector(view.probed);
  std::vector<int> found = to_vector(view.seen_now);
  if (!view.structured) {
    probed = keep_last(probed, rules.blob_ledger_capacity);
    found = keep_last(found, rules.blob_ledger_capacity);
  }
  const int seen_count = static_cast<int>(view.seen_now.size());
  std::string hypothesis =
      (rules.logit_intercept + rules.logit_slope * view.fraction > 0.0)
          ? "likely " + task.subject
          : "no option confirmed yet";

  if (view.structured) {
    AgentResponse response;
    response.summary.previously_seen = "probed=" + list_or_none(probed);
    response.summary.observations = "found=" + list_or_none(found);
    response.summary.hypotheses = hypothesis;
    response.summary.uncertainties = "seen " + std::to_string(seen_count) + " of " +
                                     std::to_string(task.k()) + " markers (round " +
                                     std::to_string(round) + ")";
    response.summary.reasons = view.forced  ? "answering under instruction"
                               : answers    ? "confident enough to answer"
                                            : "requesting unseen marker frames";
    if (answers) {
      response.action = FinalAnswer{answer_index, task.options.label(answer_index)};
    } else {
      response.action = FrameRequest{request};
    }
    reply.text = serialize_response(response, task.options);
  } else {
    std::string blob = "Notes round " + std::to_string(round) + ": probed=" +
                       list_or_none(probed) + "; found=" + list_or_none(found) + "; " +
                       hypothesis + ".";
    reply.text = "<summary>\n" + blob + "\n</summary>\n";
    if (answers) {
      reply.text += "<answer>" + task.options.label(answer_index) + "</answer>";
    } else {
      reply.text += "<frames>" + join_ints(request) + "</frames>";
    }
  }
  return reply;
}

OracleBackend::OracleBackend(SyntheticTask task, OracleRules rules)
    : task_(std::move(task)), rules_(rules) {}

namespace {

std::vector<int> shown_from_images(const std::vector<ImagePayload>& images) {
  std::vector<int> shown;
  shown.reserve(images.size());
  for (const ImagePayload& img : images) shown.push_back(img.frame_index);
  return shown;
}

// Offline re-scoring passes prompts without image payloads; the frame list is
// recovered from the "Frame N @ ..." lines the controller renders.
std::vector<int> shown_from_prompt(const std::string& prompt) {
  std::vector<int> shown;
  std::size_t pos = 0;
  while ((pos = prompt.find("Frame ", pos)) != std::string::npos) {
    std::size_t p = pos + 6;
    long value = 0;
    std::size_t digits = 0;
    while (p < prompt.size() && prompt[p] >= '0' && prompt[p] <= '9' && digits < 9) {
      value = value * 10 + (prompt[p] - '0');
      ++p;
      ++digits;
    }
    if (digits > 0 && prompt.compare(p, 3, " @ ") == 0) shown.push_back(static_cast<int>(value));
    pos = p;
  }
  return shown;
}

std::vector<int> shown_frames_of(const GenerateRequest& request) {
  if (!request.images.empty()) return shown_from_images(request.images);
  return shown_from_prompt(request.prompt);
}

int round_from_prompt(const std::string& prompt) {
  std::size_t pos = prompt.find("Round ");
  if (pos == std::string::npos) return 1;
  pos += 6;
  int value = 0;
  bool any = false;
  while (pos < prompt.size() && prompt[pos] >= '0' && prompt[pos] <= '9' && value < 100000) {
    value = value * 10 + (prompt[pos] - '0');
    any = true;
    ++pos;
  }
  return any ? value : 1;
}

}  // namespace

std::string OracleBackend::generate(const GenerateRequest& request) {
  return oracle_respond(task_, rules_, request.prompt, shown_frames_of(request),
                        round_from_prompt(request.prompt))
      .text;
}

OptionScores OracleBackend::score_options(const GenerateRequest& request,
                                          const OptionSet& options) {
  if (options.size() != task_.options.size()) {
    throw BackendError(BackendErrorKind::ScoringUnavailable,
                       "option set does not match the scripted task");
  }
  return oracle_assess(task_, rules_, request.prompt, shown_frames_of(request));
}

std::string export_dataset(const std::vector<SyntheticTask>& tasks,
                           const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::string manifest_path = (fs::path(out_dir) / "manifest.jsonl").string();
  std::ofstream manifest(manifest_path, std::ios::trunc);
  if (!manifest) throw std::runtime_error("cannot write " + manifest_path);

  for (const SyntheticTask& task : tasks) {
    fs::path item_dir = fs::path(out_dir) / "items" / task.id;
    fs::create_directories(item_dir);

    for (int i = 0; i < task.video_length; ++i) {
      ImagePayload frame =
          encode_synthetic_frame(i, task.is_evidence(i), task.frame_label(i), task.fps);
      char name[32];
      std::snprintf(name, sizeof(name), "%06d.ppm", i);
      std::ofstream out(item_dir / name, std::ios::binary | std::ios::trunc);
      out.write(reinterpret_cast<const char*>(frame.bytes.data()),
                static_cast<std::streamsize>(frame.bytes.size()));
      if (!out) throw std::runtime_error("cannot write frame " + (item_dir / name).string());
    }

    {
      std::ofstream meta(item_dir / "meta.txt", std::ios::trunc);
      meta << "fps=" << format_seconds_centis(task.fps) << "\n";
      meta << "source_id=" << task.id << "\n";
      meta << "duration=" << format_seconds_centis(task.video_length / task.fps) << "\n";
    }
    {
      std::ofstream labels(item_dir / "labels.txt", std::ios::trunc);
      for (int i = 0; i < task.video_length; ++i) {
        labels << i << '\t' << task.frame_label(i) << '\n';
      }
    }
    {
      json j;
      j["id"] = task.id;
      j["seed"] = task.seed;
      j["video_length"] = task.video_length;
      j["evidence"] = task.evidence;
      j["options"] = task.options.texts();
      j["correct_index"] = task.correct_index;
      j["subject"] = task.subject;
      j["fps"] = task.fps;
      j["category"] = task.category;
      std::ofstream out(item_dir / "task.json", std::ios::trunc);
      out << j.dump(2) << '\n';
    }

    json row;
    row["id"] = task.id;
    row["video_path"] = "items/" + task.id;
    row["question"] = task.question();
    row["options"] = task.options.texts();
    row["answer_index"] = task.correct_index;
    row["category"] = task.category;
    row["task_json"] = "items/" + task.id + "/task.json";
    manifest << row.dump() << '\n';
  }
  manifest.close();
  if (!manifest) throw std::runtime_error("cannot finish " + manifest_path);
  return manifest_path;
}

SyntheticTask load_task_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  json j = json::parse(in);
  SyntheticTask task;
  task.id = j.at("id").get<std::string>();
  task.seed = j.at("seed").get<std::uint64_t>();
  task.video_length = j.at("video_length").get<int>();
  task.evidence = j.at("evidence").get<std::vector<int>>();
  task.options = OptionSet(j.at("options").get<std::vector<std::string>>());
  task.correct_index = j.at("correct_index").get<int>();
  task.subject = j.at("subject").get<std::string>();
  task.fps = j.at("fps").get<double>();
  task.category = j.at("category").get<std::string>();
  if (!std::is_sorted(task.evidence.begin(), task.evidence.end())) {
    std::sort(task.evidence.begin(), task.evidence.end());
  }
  return task;
}

std::vector<int> SyntheticEnv::bin_members(int b) const {
  if (b < 0 || b >= bins) throw std::invalid_argument("bin index out of range");
  int length = task.video_length;
  int base = length / bins;
  int rem = length % bins;
  int size = base + (b < rem ? 1 : 0);
  int start = b * base + std::min(b, rem);
  std::vector<int> members;
  members.reserve(static_cast<std::size_t>(size));
  for (int i = 0; i < size; ++i) members.push_back(start + i);
  return members;
}

SyntheticEnv make_toy_env(std::uint64_t seed) {
  // 48 frames in 16 bins of 3; the evidence fills exactly one bin, so one
  // targeted probe reveals everything. Bins holding an initial sample frame
  // ({0, 23, 47}) are excluded so the probe is always informative.
  constexpr int kLength = 48;
  constexpr int kBins = 16;
  Rng rng(seed);
  std::vector<int> allowed;
  std::vector<int> initial = sample_initial_frames(kLength, 3);
  for (int b = 0; b < kBins; ++b) {
    bool clashes = false;
    for (int f : initial) {
      if (f / 3 == b) clashes = true;
    }
    if (!clashes) allowed.push_back(b);
  }
  int bin = allowed[rng.below(allowed.size())];
  std::vector<int> evidence = {bin * 3, bin * 3 + 1, bin * 3 + 2};

  SyntheticEnv env;
  env.task = finish_task("toy-" + std::to_string(seed), seed, kLength,
                         std::move(evidence), 4, rng);
  env.bins = kBins;
  env.max_rounds = 4;
  env.frames_per_request = 3;
  env.initial_frames = 3;
  env.logit_intercept = -1.0;
  env.logit_slope = 3.0;
  return env;
}

}  // namespace framehop
