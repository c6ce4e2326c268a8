// SPDX-License-Identifier: Apache-2.0
#pragma once

// Frame access. A VideoSource hands out per-frame payloads plus stable
// metadata; the two shipped implementations are a directory of numbered image
// files (real data) and an in-memory source (synthetic data). Synthetic
// frames are tiny PPM images whose pixels encode the frame's identity and
// label, so tests can verify content end to end without a real decoder.

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace framehop {

struct ImagePayload {
  std::string media_type;           // e.g. "image/jpeg", "image/x-portable-pixmap"
  std::vector<std::uint8_t> bytes;  // encoded image
  int frame_index = 0;
  double timestamp_s = 0.0;
  std::string label;  // sidecar label when the source has one ("" otherwise)
};

struct VideoMeta {
  std::string source_id;
  int frame_count = 0;
  double fps = 1.0;
  double duration_s = 0.0;
};

enum class VideoErrorKind {
  MissingMetadata,
  GapInIndices,
  IndexOutOfRange,
  UnreadableFrame,
};

class VideoError : public std::runtime_error {
 public:
  VideoError(VideoErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}
  VideoErrorKind kind() const { return kind_; }

 private:
  VideoErrorKind kind_;
};

class VideoSource {
 public:
  virtual ~VideoSource() = default;
  virtual const VideoMeta& meta() const = 0;
  // Throws VideoError{IndexOutOfRange} outside [0, frame_count).
  virtual ImagePayload frame_at(int index) const = 0;

  double timestamp_of(int index) const { return index / meta().fps; }
};

class MemoryVideoSource : public VideoSource {
 public:
  MemoryVideoSource(VideoMeta meta, std::vector<ImagePayload> frames)
      : meta_(std::move(meta)), frames_(std::move(frames)) {}

  const VideoMeta& meta() const override { return meta_; }
  ImagePayload frame_at(int index) const override;

 private:
  VideoMeta meta_;
  std::vector<ImagePayload> frames_;
};

// Reads "<dir>/%06d.<ext>" plus "<dir>/meta.txt" (flat key=value: fps
// required; source_id, duration optional) and an optional "<dir>/labels.txt"
// ("<index>\t<label>" per line). Frame indices must be contiguous from 0.
class FrameDirSource : public VideoSource {
 public:
  // Throws VideoError{MissingMetadata | GapInIndices}.
  static std::unique_ptr<FrameDirSource> open(const std::string& dir);

  const VideoMeta& meta() const override { return meta_; }
  ImagePayload frame_at(int index) const override;

 private:
  FrameDirSource() = default;
  std::string dir_;
  std::string extension_;  // includes the dot
  VideoMeta meta_;
  std::vector<std::string> labels_;  // empty when no labels.txt
};

// ---- Synthetic frame codec -------------------------------------------------
// 32x32 PPM (P6). The first pixel bytes carry a magic, the frame index, an
// evidence flag, and the label text; the remainder is a deterministic pattern
// so payloads differ per frame.

struct SyntheticFrameContent {
  int frame_index = 0;
  bool evidence = false;
  std::string label;
};

ImagePayload encode_synthetic_frame(int frame_index, bool evidence,
                                    const std::string& label, double fps);

// Throws VideoError{UnreadableFrame} when the payload is not a synthetic
// frame produced by encode_synthetic_frame.
SyntheticFrameContent decode_synthetic_frame(const ImagePayload& payload);

}  // namespace framehop
