// SPDX-License-Identifier: Apache-2.0
#include "framehop/video.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "framehop/util.hpp"

namespace fs = std::filesystem;

namespace framehop {
namespace {

constexpr int kSynthSide = 32;
constexpr std::string_view kSynthMagic = "FH1";

[[noreturn]] void throw_out_of_range(int index, int count) {
  throw VideoError(VideoErrorKind::IndexOutOfRange,
                   "frame index " + std::to_string(index) + " outside [0, " +
                       std::to_string(count) + ")");
}

std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw VideoError(VideoErrorKind::UnreadableFrame, "cannot read " + path.string());
  }
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return bytes;
}

std::string media_type_for_extension(std::string_view ext) {
  std::string e = to_lower(ext);
  if (e == ".jpg" || e == ".jpeg") return "image/jpeg";
  if (e == ".png") return "image/png";
  if (e == ".ppm") return "image/x-portable-pixmap";
  if (e == ".bmp") return "image/bmp";
  return "application/octet-stream";
}

// meta.txt: flat key=value lines, '#' comments, blank lines ignored.
std::map<std::string, std::string> read_flat_kv(const fs::path& path) {
  std::map<std::string, std::string> kv;
  std::ifstream in(path);
  if (!in) {
    throw VideoError(VideoErrorKind::MissingMetadata, "missing " + path.string());
  }
  std::string line;
  while (std::getline(in, line)) {
    std::string_view v = trim(line);
    if (v.empty() || v.front() == '#') continue;
    std::size_t eq = v.find('=');
    if (eq == std::string_view::npos) continue;
    kv[std::string(trim(v.substr(0, eq)))] = std::string(trim(v.substr(eq + 1)));
  }
  return kv;
}

}  // namespace

ImagePayload MemoryVideoSource::frame_at(int index) const {
  if (index < 0 || index >= static_cast<int>(frames_.size())) {
    throw_out_of_range(index, static_cast<int>(frames_.size()));
  }
  return frames_[static_cast<std::size_t>(index)];
}

std::unique_ptr<FrameDirSource> FrameDirSource::open(const std::string& dir) {
  fs::path root(dir);
  if (!fs::is_directory(root)) {
    throw VideoError(VideoErrorKind::MissingMetadata, dir + " is not a directory");
  }
  auto kv = read_flat_kv(root / "meta.txt");
  auto fps_it = kv.find("fps");
  if (fps_it == kv.end()) {
    throw VideoError(VideoErrorKind::MissingMetadata, "meta.txt has no fps key in " + dir);
  }

  // Collect %06d.<ext> entries; the extension of frame 000000 is canonical.
  std::map<int, std::string> frames;  // index -> extension
  for (const auto& entry : fs::directory_iterator(root)) {
    if (!entry.is_regular_file()) continue;
    std::string stem = entry.path().stem().string();
    if (stem.size() != 6 ||
        !std::all_of(stem.begin(), stem.end(),
                     [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }))
      continue;
    frames[std::stoi(stem)] = entry.path().extension().string();
  }
  if (frames.empty() || frames.begin()->first != 0) {
    throw VideoError(VideoErrorKind::GapInIndices, "no frame 000000 in " + dir);
  }
  const std::string extension = frames.begin()->second;
  int expected = 0;
  for (const auto& [index, ext] : frames) {
    if (ext != extension) continue;  // stray files with other extensions are ignored
    if (index != expected) {
      throw VideoError(VideoErrorKind::GapInIndices,
                       "missing frame index " + std::to_string(expected) + " in " + dir);
    }
    ++expected;
  }

  auto source = std::unique_ptr<FrameDirSource>(new FrameDirSource());
  source->dir_ = dir;
  source->extension_ = extension;
  source->meta_.source_id = kv.count("source_id") ? kv["source_id"]
                                                  : root.filename().string();
  source->meta_.frame_count = expected;
  source->meta_.fps = std::stod(fps_it->second);
  source->meta_.duration_s = kv.count("duration") ? std::stod(kv["duration"])
                                                  : expected / source->meta_.fps;

  std::ifstream labels_in(root / "labels.txt");
  if (labels_in) {
    source->labels_.assign(static_cast<std::size_t>(expected), "");
    std::string line;
    while (std::getline(labels_in, line)) {
      std::size_t tab = line.find('\t');
      if (tab == std::string::npos) continue;
      int index = std::atoi(line.substr(0, tab).c_str());
      if (index >= 0 && index < expected) {
        source->labels_[static_cast<std::size_t>(index)] = line.substr(tab + 1);
      }
    }
  }
  return source;
}

ImagePayload FrameDirSource::frame_at(int index) const {
  if (index < 0 || index >= meta_.frame_count) {
    throw_out_of_range(index, meta_.frame_count);
  }
  char name[16];
  std::snprintf(name, sizeof(name), "%06d", index);
  ImagePayload payload;
  payload.bytes = read_file_bytes(fs::path(dir_) / (std::string(name) + extension_));
  payload.media_type = media_type_for_extension(extension_);
  payload.frame_index = index;
  payload.timestamp_s = index / meta_.fps;
  if (!labels_.empty()) payload.label = labels_[static_cast<std::size_t>(index)];
  return payload;
}

ImagePayload encode_synthetic_frame(int frame_index, bool evidence,
                                    const std::string& label, double fps) {
  std::string header = "P6\n" + std::to_string(kSynthSide) + " " +
                       std::to_string(kSynthSide) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(kSynthSide) * kSynthSide * 3);

  // Deterministic backdrop so every frame's raster differs.
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    pixels[i] = static_cast<std::uint8_t>((i * 7 + static_cast<std::size_t>(frame_index) * 31) & 0xFF);
  }
  // Machine-readable strip at the start of the raster.
  std::size_t at = 0;
  for (char c : kSynthMagic) pixels[at++] = static_cast<std::uint8_t>(c);
  for (int shift = 24; shift >= 0; shift -= 8) {
    pixels[at++] = static_cast<std::uint8_t>((static_cast<std::uint32_t>(frame_index) >> shift) & 0xFF);
  }
  pixels[at++] = evidence ? 1 : 0;
  std::size_t label_len = std::min<std::size_t>(label.size(), 200);
  pixels[at++] = static_cast<std::uint8_t>(label_len);
  for (std::size_t i = 0; i < label_len; ++i) {
    pixels[at++] = static_cast<std::uint8_t>(label[i]);
  }

  bytes.insert(bytes.end(), pixels.begin(), pixels.end());
  ImagePayload payload;
  payload.media_type = "image/x-portable-pixmap";
  payload.bytes = std::move(bytes);
  payload.frame_index = frame_index;
  payload.timestamp_s = frame_index / fps;
  payload.label = label;
  return payload;
}

SyntheticFrameContent decode_synthetic_frame(const ImagePayload& payload) {
  // Skip the three whitespace-terminated PPM header fields after "P6".
  const auto& b = payload.bytes;
  std::size_t i = 0;
  auto fail = [&]() -> VideoError {
    return VideoError(VideoErrorKind::UnreadableFrame, "not a synthetic PPM frame");
  };
  if (b.size() < 2 || b[0] != 'P' || b[1] != '6') throw fail();
  i = 2;
  for (int field = 0; field < 3; ++field) {
    while (i < b.size() && std::isspace(b[i])) ++i;
    while (i < b.size() && !std::isspace(b[i])) ++i;
  }
  if (i >= b.size()) throw fail();
  ++i;  // single whitespace after maxval
  if (b.size() - i < static_cast<std::size_t>(kSynthSide) * kSynthSide * 3) throw fail();

  std::size_t at = i;
  for (char c : kSynthMagic) {
    if (at >= b.size() || b[at++] != static_cast<std::uint8_t>(c)) throw fail();
  }
  SyntheticFrameContent content;
  std::uint32_t index = 0;
  for (int k = 0; k < 4; ++k) index = (index << 8) | b[at++];
  content.frame_index = static_cast<int>(index);
  content.evidence = b[at++] != 0;
  std::size_t label_len = b[at++];
  content.label.assign(b.begin() + static_cast<std::ptrdiff_t>(at),
                       b.begin() + static_cast<std::ptrdiff_t>(at + label_len));
  return content;
}

}  // namespace framehop
