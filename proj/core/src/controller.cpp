// SPDX-License-Identifier: Apache-2.0
#include "framehop/controller.hpp"

#include <atomic>
#include <stdexcept>
#include <thread>

#include "framehop/util.hpp"

namespace framehop {
namespace {

constexpr std::string_view kDefaultTemplate =
    R"(You are answering a multiple-choice question about a video by inspecting a few frames at a time.
Video {source_id}: {frame_count} frames at {fps} fps, {duration}s total.
Round {round} of {max_rounds}; rounds remaining after this one: {rounds_remaining}.

Question: {question}
Options:
{options}

Current summary state:
{summary}

Frames shown this round:
{frames}
{notice}{forced}{format_guide})";

constexpr std::string_view kStructuredGuide =
    R"(Reply with exactly one of the two forms below and nothing else.
Form 1 - request more frames:
<summary>
P: <cumulative account of what has been inspected>
O: <observations from the current frames>
H: <current hypotheses about the answer>
U: <remaining uncertainties>
R: <reason for this action>
</summary>
<frames>i1,i2,...</frames>
Form 2 - final answer:
<summary>
(the same five fields)
</summary>
<answer>LETTER</answer>
Frame indices are 0-based integers below {frame_count}. Request at most {max_frames_per_round} new frames per round and never repeat an admitted frame.)";

constexpr std::string_view kFreeformGuide =
    R"(Reply with exactly one of the two forms below and nothing else.
Form 1 - request more frames:
<summary>
<one free-text paragraph summarizing everything learned so far>
</summary>
<frames>i1,i2,...</frames>
Form 2 - final answer:
<summary>
<the same free-text paragraph>
</summary>
<answer>LETTER</answer>
Frame indices are 0-based integers below {frame_count}. Request at most {max_frames_per_round} new frames per round and never repeat an admitted frame.)";

std::string render_option_lines(const OptionSet& options) {
  std::string out;
  for (int i = 0; i < options.size(); ++i) {
    if (i) out += '\n';
    out += options.label(i);
    out += ". ";
    out += options.text(i);
  }
  return out;
}

std::string render_frame_lines(const std::vector<int>& shown, const VideoMeta& meta) {
  if (shown.empty()) return std::string(kNoNewFramesLine);
  std::string out;
  for (std::size_t i = 0; i < shown.size(); ++i) {
    if (i) out += '\n';
    out += "Frame " + std::to_string(shown[i]) + " @ " +
           format_seconds_centis(shown[i] / meta.fps) + "s";
  }
  return out;
}

std::string render_rejection_notice(const std::vector<RejectedFrame>& rejected) {
  std::string out = "Note: none of your requested frames could be admitted:";
  for (std::size_t i = 0; i < rejected.size(); ++i) {
    out += (i ? "; " : " ");
    out += "index " + std::to_string(rejected[i].index) + " (" +
           std::string(to_string(rejected[i].reason)) + ")";
  }
  out += ". Request different frames or answer.";
  return out;
}

ParseResult parse_per_config(std::string_view raw, const OptionSet& options,
                             const EpisodeConfig& config) {
  if (!config.structured_summary) return parse_response_freeform(raw, options);
  if (config.lenient_parsing) return parse_response_lenient(raw, options);
  return parse_response(raw, options);
}

// Outcome of deciding which requested frames actually get shown next round:
// the filtered/budgeted admission plus the exact prompt that will be sent.
struct AdmissionOutcome {
  EpisodeState state;
  std::vector<int> admitted;
  std::vector<RejectedFrame> rejected;
  std::string prompt;
  bool fits = false;  // false: not even a zero-frame prompt fits the budget
};

AdmissionOutcome admit_with_budget(const EpisodeState& state, const std::vector<int>& request,
                                   int video_length, int round_cap,
                                   const std::string& question, const OptionSet& options,
                                   const VideoMeta& meta, const EpisodeConfig& config,
                                   const PromptContext& ctx_base) {
  AdmitResult filtered =
      admit_frames(state, request, video_length, round_cap, config.cost);

  // Largest prefix of the filtered request whose prompt still fits the
  // budget. Each candidate is checked against the prompt that would really be
  // sent, including the rejection notice a no-progress round carries.
  for (int len = static_cast<int>(filtered.admitted.size()); len >= 0; --len) {
    std::vector<int> prefix(filtered.admitted.begin(), filtered.admitted.begin() + len);
    AdmitResult trial = admit_frames(state, prefix, video_length, round_cap, config.cost);
    std::vector<RejectedFrame> rejected = filtered.rejected;
    for (std::size_t i = static_cast<std::size_t>(len); i < filtered.admitted.size(); ++i) {
      rejected.push_back({filtered.admitted[i], RejectReason::OverBudget});
    }
    PromptContext ctx = ctx_base;
    if (trial.admitted.empty() && !request.empty() && !rejected.empty()) {
      ctx.rejection_notice = render_rejection_notice(rejected);
    }
    std::string prompt =
        build_prompt(question, options, trial.state, trial.admitted, meta, config, ctx);
    if (within_budget(trial.state, prompt, config.cost, config.token_budget)) {
      return {std::move(trial.state), std::move(trial.admitted), std::move(rejected),
              std::move(prompt), true};
    }
  }

  AdmissionOutcome out;
  out.state = state;
  out.rejected = filtered.rejected;
  for (int index : filtered.admitted) {
    out.rejected.push_back({index, RejectReason::OverBudget});
  }
  return out;
}

std::vector<ImagePayload> fetch_frames(VideoSource& video, const std::vector<int>& indices) {
  std::vector<ImagePayload> out;
  out.reserve(indices.size());
  for (int index : indices) out.push_back(video.frame_at(index));
  return out;
}

}  // namespace

std::vector<int> sample_initial_frames(int video_length, int n, std::uint64_t) {
  if (n < 1 || n > video_length) {
    throw std::invalid_argument("initial frame count " + std::to_string(n) +
                                " outside [1, " + std::to_string(video_length) + "]");
  }
  if (n == 1) return {(video_length - 1) / 2};
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int j = 0; j < n; ++j) {
    out.push_back(static_cast<int>(static_cast<long long>(j) * (video_length - 1) / (n - 1)));
  }
  return out;
}

std::string build_prompt(const std::string& question, const OptionSet& options,
                         const EpisodeState& state, const std::vector<int>& shown_frames,
                         const VideoMeta& meta, const EpisodeConfig& config,
                         const PromptContext& ctx) {
  static const SummaryState kEmptySummary{};
  const SummaryState& latest =
      config.carry_state ? state.latest_summary() : kEmptySummary;
  std::string summary_text;
  if (config.structured_summary) {
    summary_text = serialize_summary_body(latest);
  } else {
    summary_text = latest.observations.empty() ? "(none yet)" : latest.observations;
  }

  std::string format_guide;
  if (ctx.round == 1 && !ctx.forced_answer) {
    format_guide = apply_template(
        config.structured_summary ? kStructuredGuide : kFreeformGuide,
        {{"frame_count", std::to_string(meta.frame_count)},
         {"max_frames_per_round", std::to_string(config.max_frames_per_round)}});
  }

  std::string_view tpl =
      config.prompt_template ? std::string_view(*config.prompt_template) : kDefaultTemplate;
  return apply_template(
      tpl,
      {{"source_id", meta.source_id},
       {"frame_count", std::to_string(meta.frame_count)},
       {"fps", format_seconds_centis(meta.fps)},
       {"duration", format_seconds_centis(meta.duration_s)},
       {"round", std::to_string(ctx.round)},
       {"max_rounds", std::to_string(config.max_rounds)},
       {"rounds_remaining", std::to_string(config.max_rounds - ctx.round)},
       {"question", question},
       {"options", render_option_lines(options)},
       {"summary", summary_text},
       {"frames", render_frame_lines(shown_frames, meta)},
       {"notice", ctx.rejection_notice.empty() ? "" : ctx.rejection_notice + "\n"},
       {"forced", ctx.forced_answer
                      ? std::string(kForcedAnswerNotice) +
                            " Reply with the summary block followed by <answer>LETTER</answer>.\n"
                      : ""},
       {"format_guide", format_guide}});
}

std::string build_summary_only_prompt(const std::string& question, const OptionSet& options,
                                      const SummaryState& summary, bool structured_summary) {
  std::string body = structured_summary
                         ? serialize_summary_body(summary)
                         : (summary.observations.empty() ? "(none)" : summary.observations);
  std::string out =
      "Answer the question using only this summary of the video; no frames are "
      "available.\n";
  out += "Question: " + question + "\n";
  out += "Options:\n" + render_option_lines(options) + "\n";
  out += "Summary:\n" + body + "\n";
  out += "Reply with <answer>LETTER</answer> only.";
  return out;
}

std::string_view to_string(EpisodeStatus status) {
  switch (status) {
    case EpisodeStatus::Answered: return "answered";
    case EpisodeStatus::ForcedAnswer: return "forced_answer";
    case EpisodeStatus::Unanswered: return "unanswered";
    case EpisodeStatus::ProtocolFailure: return "protocol_failure";
    case EpisodeStatus::BackendFailure: return "backend_failure";
  }
  return "unknown";
}

const SummaryState* Trajectory::final_summary() const {
  for (auto it = rounds.rbegin(); it != rounds.rend(); ++it) {
    if (it->summary) return &*it->summary;
  }
  return nullptr;
}

namespace {

enum class TurnResult { Ok, Unusable, BackendFail };

struct EpisodeRunner {
  VideoSource& video;
  ModelBackend& backend;
  const EpisodeConfig& config;
  Trajectory& traj;
  EpisodeState state;

  std::optional<OptionScores> score_state(const std::string& prompt,
                                          const std::vector<ImagePayload>& images) {
    if (!config.collect_option_scores || !backend.supports_scoring()) return std::nullopt;
    try {
      return backend.score_options({prompt, images, config.sampling}, traj.options);
    } catch (const BackendError&) {
      return std::nullopt;  // scores are an optional enrichment
    }
  }

  // Generates with format-reminder reprompts. On Unusable/BackendFail the
  // record and trajectory are already annotated.
  TurnResult generate_with_retries(RoundRecord& rec, const std::vector<ImagePayload>& images,
                                   bool answer_only) {
    std::string gen_prompt = rec.prompt;
    int attempts = 0;
    while (true) {
      std::string raw;
      try {
        raw = backend.generate({gen_prompt, images, config.sampling});
      } catch (const BackendError& e) {
        traj.status = EpisodeStatus::BackendFailure;
        traj.error = std::string(to_string(e.kind())) + ": " + e.what();
        rec.action = "invalid";
        rec.retries = attempts;
        return TurnResult::BackendFail;
      }
      rec.raw_response = raw;
      rec.format_valid = format_is_valid(raw, traj.options);
      ParseResult parsed = parse_per_config(raw, traj.options, config);
      std::string violation;
      if (!parsed.ok()) {
        violation = std::string(to_string(parsed.err().kind)) + ": " + parsed.err().message;
      } else if (answer_only && parsed.value().is_request()) {
        violation = "frame requests are not permitted in this round";
      }
      if (violation.empty()) {
        rec.parse_ok = true;
        rec.summary = parsed.value().summary;
        rec.retries = attempts;
        if (parsed.value().is_answer()) {
          rec.action = "answer";
          traj.answer_index = parsed.value().answer().option_index;
        } else {
          rec.action = "select";
          rec.requested = parsed.value().request().indices;
        }
        return TurnResult::Ok;
      }
      if (attempts >= config.retry_on_invalid) {
        rec.action = "invalid";
        rec.parse_error = violation;
        rec.retries = attempts;
        traj.error = "unusable response after " + std::to_string(attempts + 1) +
                     " attempts (" + violation + ")";
        return TurnResult::Unusable;
      }
      ++attempts;
      gen_prompt = rec.prompt +
                   "\n\nYour previous reply did not match the required format (" + violation +
                   "). Reply again using exactly the required format.";
    }
  }

  // The forced final exchange: answer-only prompt. The round's frames stay in
  // view (they belong to the same round's context); no new ones are admitted.
  // Guarantees a label: if the model still will not answer, the controller
  // commits the argmax of the option scores at this state (option 0 when no
  // scores are available) so every MCQ episode ends scoreable.
  void forced_exchange(int round, const std::vector<int>& shown) {
    traj.tau = round;
    RoundRecord rec;
    rec.round = round;
    rec.forced_round = true;
    rec.shown_frames = shown;
    PromptContext ctx;
    ctx.round = round;
    ctx.forced_answer = true;
    rec.prompt =
        build_prompt(traj.question, traj.options, state, shown, video.meta(), config, ctx);
    rec.prompt_hash = fnv1a64_hex(rec.prompt);
    rec.prompt_text_cost = config.cost.text(rec.prompt);
    rec.visual_cost_after = state.visual_cost;

    std::vector<ImagePayload> images;
    try {
      images = fetch_frames(video, shown);
    } catch (const VideoError& e) {
      traj.status = EpisodeStatus::BackendFailure;
      traj.error = std::string("video error: ") + e.what();
      traj.rounds.push_back(std::move(rec));
      return;
    }
    rec.decision_scores = score_state(rec.prompt, images);

    TurnResult result = generate_with_retries(rec, images, /*answer_only=*/true);
    if (result == TurnResult::Ok) {
      traj.status = EpisodeStatus::ForcedAnswer;
      traj.error.clear();
    } else if (result == TurnResult::Unusable) {
      int fallback = 0;
      if (rec.decision_scores && rec.decision_scores->size() == traj.options.size()) {
        for (int i = 1; i < rec.decision_scores->size(); ++i) {
          if (rec.decision_scores->at(i) > rec.decision_scores->at(fallback)) fallback = i;
        }
      }
      traj.answer_index = fallback;
      traj.status = EpisodeStatus::ForcedAnswer;
      traj.error += "; fallback label from option scores";
    }
    traj.rounds.push_back(std::move(rec));
  }

  void run(const std::vector<int>& initial_request) {
    const VideoMeta& meta = video.meta();
    const int video_length = meta.frame_count;
    const int n0 = static_cast<int>(initial_request.size());

    PromptContext first_ctx;
    first_ctx.round = 1;
    AdmissionOutcome adm =
        admit_with_budget(state, initial_request, video_length, n0, traj.question,
                          traj.options, meta, config, first_ctx);

    for (int t = 1; t <= config.max_rounds; ++t) {
      if (!adm.fits) {
        // Not even a frame-free prompt fits the budget: resolve immediately.
        if (config.force_answer_at_end) {
          forced_exchange(t, {});
        } else {
          traj.status = EpisodeStatus::Unanswered;
          traj.tau = t;
        }
        return;
      }
      state = adm.state;

      RoundRecord rec;
      rec.round = t;
      rec.shown_frames = adm.admitted;
      rec.prompt = adm.prompt;
      rec.prompt_hash = fnv1a64_hex(rec.prompt);
      rec.prompt_text_cost = config.cost.text(rec.prompt);
      if (t == 1) {
        // The initial sample is the controller's own request; its filtering
        // outcome is recorded on round 1.
        rec.requested = initial_request;
        rec.admitted = adm.admitted;
        rec.rejected = adm.rejected;
      }

      std::vector<ImagePayload> images;
      try {
        images = fetch_frames(video, rec.shown_frames);
      } catch (const VideoError& e) {
        traj.status = EpisodeStatus::BackendFailure;
        traj.error = std::string("video error: ") + e.what();
        traj.tau = t;
        traj.rounds.push_back(std::move(rec));
        return;
      }
      rec.decision_scores = score_state(rec.prompt, images);

      TurnResult result = generate_with_retries(rec, images, /*answer_only=*/false);
      if (result == TurnResult::BackendFail) {
        rec.visual_cost_after = state.visual_cost;
        traj.tau = t;
        traj.rounds.push_back(std::move(rec));
        return;
      }
      if (result == TurnResult::Unusable) {
        rec.visual_cost_after = state.visual_cost;
        std::vector<int> shown = rec.shown_frames;
        traj.rounds.push_back(std::move(rec));
        if (config.force_answer_at_end) {
          forced_exchange(t, shown);  // recovery: the episode still ends with a label
        } else {
          traj.status = EpisodeStatus::ProtocolFailure;
          traj.tau = t;
        }
        return;
      }

      if (rec.action == "answer") {
        rec.visual_cost_after = state.visual_cost;
        traj.status = EpisodeStatus::Answered;
        traj.tau = t;
        traj.rounds.push_back(std::move(rec));
        return;
      }

      // Select: the summary is committed (non-terminal round), then the
      // request is filtered, capped, and budget-checked for the next round.
      state = commit_summary(state, *rec.summary);
      if (t == config.max_rounds) {
        rec.visual_cost_after = state.visual_cost;
        std::vector<int> shown = rec.shown_frames;
        traj.rounds.push_back(std::move(rec));
        if (config.force_answer_at_end) {
          forced_exchange(t, shown);
        } else {
          traj.status = EpisodeStatus::Unanswered;
          traj.tau = t;
        }
        return;
      }

      PromptContext next_ctx;
      next_ctx.round = t + 1;
      AdmissionOutcome next =
          admit_with_budget(state, rec.requested, video_length, config.max_frames_per_round,
                            traj.question, traj.options, meta, config, next_ctx);
      rec.admitted = next.admitted;
      rec.rejected = next.rejected;
      if (next.fits) state = next.state;
      rec.visual_cost_after = state.visual_cost;
      traj.rounds.push_back(std::move(rec));

      if (!next.fits) {
        // Budget exhausted: no continuation prompt fits, so the episode
        // resolves at round t+1 without new frames.
        if (config.force_answer_at_end) {
          forced_exchange(t + 1, {});
        } else {
          traj.status = EpisodeStatus::Unanswered;
          traj.tau = t + 1;
        }
        return;
      }
      adm = std::move(next);
    }
  }
};

}  // namespace

Trajectory run_episode(VideoSource& video, const EpisodeInputs& inputs,
                       ModelBackend& backend, const EpisodeConfig& config) {
  if (config.max_rounds < 1) throw std::invalid_argument("max_rounds must be >= 1");
  if (config.max_frames_per_round < 1) {
    throw std::invalid_argument("max_frames_per_round must be >= 1");
  }
  if (config.initial_frame_count < 1 ||
      config.initial_frame_count > config.max_frames_per_round) {
    throw std::invalid_argument(
        "initial_frame_count must be in [1, max_frames_per_round]");
  }
  if (config.token_budget < 1) throw std::invalid_argument("token_budget must be >= 1");
  const int video_length = video.meta().frame_count;
  if (video_length < 1) throw std::invalid_argument("video has no frames");

  const double t0 = monotonic_ms();
  Trajectory traj;
  traj.id = inputs.id;
  traj.question = inputs.question;
  traj.category = inputs.category;
  traj.options = inputs.options;
  traj.truth_index = inputs.truth_index;

  int n0 = std::min(config.initial_frame_count, video_length);
  std::vector<int> initial = sample_initial_frames(video_length, n0, config.sampling.seed);

  EpisodeRunner runner{video, backend, config, traj, EpisodeState{}};
  runner.run(initial);

  // Cache the summary-only scores so the sufficiency reward replays offline.
  if (traj.answered()) {
    if (const SummaryState* final_summary = traj.final_summary()) {
      std::string prompt = build_summary_only_prompt(
          traj.question, traj.options, *final_summary, config.structured_summary);
      traj.summary_only_scores = runner.score_state(prompt, {});
    }
  }

  traj.frames_used = static_cast<long long>(runner.state.admitted_frames.size());
  long long text_total = 0;
  for (const RoundRecord& r : traj.rounds) text_total += r.prompt_text_cost;
  traj.prompt_tokens = text_total + config.cost.frames(traj.frames_used);
  traj.wall_ms = monotonic_ms() - t0;
  return traj;
}

std::vector<Trajectory> run_batch(const std::vector<QaItem>& items,
                                  const EpisodeConfig& config, int parallelism) {
  std::vector<Trajectory> out(items.size());
  if (items.empty()) return out;
  int n_threads = std::max(1, std::min<int>(parallelism, static_cast<int>(items.size())));

  std::atomic<std::size_t> cursor{0};
  auto worker = [&]() {
    while (true) {
      std::size_t i = cursor.fetch_add(1);
      if (i >= items.size()) return;
      const QaItem& item = items[i];
      try {
        out[i] = run_episode(*item.video, item.inputs, *item.backend, config);
      } catch (const std::exception& e) {
        Trajectory failed;
        failed.id = item.inputs.id;
        failed.question = item.inputs.question;
        failed.category = item.inputs.category;
        failed.options = item.inputs.options;
        failed.truth_index = item.inputs.truth_index;
        failed.status = EpisodeStatus::BackendFailure;
        failed.error = e.what();
        out[i] = std::move(failed);
      }
    }
  };

  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(n_threads));
    for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (std::thread& th : pool) th.join();
  }
  return out;
}

}  // namespace framehop
