#pragma once

// Corpus persistence.
//
// Blob layout, one matrix per file, all integers little-endian:
//
//   offset  size  field
//   0       4     magic "MQVR"
//   4       4     u32 version (= 1)
//   8       4     u32 rows
//   12      4     u32 dim
//   16      4*rows*dim  IEEE-754 binary32 payload, row-major
//
// A corpus directory holds manifest.json, videos.bin (n x m) and captions.bin
// (sum(k_i) x m, captions of video 0 first). captions_per_video in the manifest
// splits the caption blob back into per-video matrices.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mqvr/matrix.hpp"

namespace mqvr {

inline constexpr std::uint32_t kBlobVersion = 1;
inline constexpr std::uint32_t kManifestVersion = 1;
inline constexpr std::size_t kBlobHeaderBytes = 16;

/// Row-major embedding rows held at storage precision (binary32).
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  EmbeddingMatrix(std::size_t rows, std::size_t dim) : rows_(rows), dim_(dim), data_(rows * dim) {}
  /// Throws ShapeError if data.size() != rows*dim, InvariantError on NaN/Inf.
  EmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<float> data);

  /// Rounds each entry to binary32.
  static EmbeddingMatrix from_matrix(const Matrix& m);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t dim() const noexcept { return dim_; }
  std::span<const float> row(std::size_t r) const noexcept { return {data_.data() + r * dim_, dim_}; }
  std::span<float> row(std::size_t r) noexcept { return {data_.data() + r * dim_, dim_}; }
  std::span<const float> data() const noexcept { return data_; }

  /// Widens to the 64-bit compute representation.
  Matrix to_matrix() const;

  /// Bitwise comparison of the payload (distinguishes -0.0 from 0.0).
  bool bit_equal(const EmbeddingMatrix& other) const;

 private:
  std::size_t rows_ = 0;
  std::size_t dim_ = 0;
  std::vector<float> data_;
};

enum class CaptionQuality { informative, generic };

std::string_view to_string(CaptionQuality q);
CaptionQuality parse_caption_quality(std::string_view s);

struct Corpus {
  std::vector<std::string> video_ids;
  EmbeddingMatrix videos;
  std::vector<EmbeddingMatrix> captions;
  /// Per video, per caption. Present only for synthetic corpora.
  std::optional<std::vector<std::vector<CaptionQuality>>> quality;
  std::optional<std::uint64_t> seed;
  /// Free-form provenance written to the manifest verbatim (generator config echo).
  nlohmann::json provenance = nlohmann::json::object();

  std::size_t size() const noexcept { return video_ids.size(); }
  std::size_t dim() const noexcept { return videos.dim(); }

  /// Throws ShapeError / InvariantError describing the first violated invariant.
  void validate() const;

  /// Field-for-field equality, float payload compared bitwise.
  bool identical(const Corpus& other) const;
};

/// Corpus restricted to `indices` (in the given order).
Corpus subset(const Corpus& corpus, std::span<const std::size_t> indices);

struct Manifest {
  std::uint32_t format_version = kManifestVersion;
  std::size_t dim = 0;
  std::size_t n_videos = 0;
  std::vector<std::size_t> captions_per_video;
  std::vector<std::string> video_ids;
  std::string videos_blob = "videos.bin";
  std::string captions_blob = "captions.bin";
  std::optional<std::vector<std::vector<CaptionQuality>>> quality;
  std::optional<std::uint64_t> seed;
  nlohmann::json provenance = nlohmann::json::object();

  nlohmann::json to_json() const;
  static Manifest from_json(const nlohmann::json& j);
};

void write_blob(const std::filesystem::path& path, const EmbeddingMatrix& m);
EmbeddingMatrix read_blob(const std::filesystem::path& path);

/// Serializes to the exact on-disk byte sequence.
std::vector<std::uint8_t> encode_blob(const EmbeddingMatrix& m);
EmbeddingMatrix decode_blob(std::span<const std::uint8_t> bytes);

Manifest save_corpus(const Corpus& corpus, const std::filesystem::path& directory);
Corpus load_corpus(const std::filesystem::path& directory);

/// Writes `text` to `path` through a temporary sibling and rename.
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace mqvr
