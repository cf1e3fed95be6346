#include "mqvr/embedding_store.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>
#include <unordered_set>

#include "mqvr/errors.hpp"

namespace mqvr {

namespace fs = std::filesystem;

namespace {

constexpr std::uint8_t kMagic[4] = {'M', 'Q', 'V', 'R'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(std::span<const std::uint8_t> bytes, std::size_t offset) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[offset + i]) << (8 * i);
  return v;
}

void check_finite(std::span<const float> data, const char* what) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!std::isfinite(data[i])) {
      throw InvariantError(std::string(what) + ": non-finite value at flat index " +
                           std::to_string(i));
    }
  }
}

std::uint32_t checked_u32(std::size_t v, const char* what) {
  if (v > 0xffffffffULL) throw ShapeError(std::string(what) + " exceeds u32 range");
  return static_cast<std::uint32_t>(v);
}

}  // namespace

EmbeddingMatrix::EmbeddingMatrix(std::size_t rows, std::size_t dim, std::vector<float> data)
    : rows_(rows), dim_(dim), data_(std::move(data)) {
  if (data_.size() != rows_ * dim_) {
    throw ShapeError("embedding data length " + std::to_string(data_.size()) + " != " +
                     std::to_string(rows_) + "x" + std::to_string(dim_));
  }
  check_finite(data_, "embedding matrix");
}

EmbeddingMatrix EmbeddingMatrix::from_matrix(const Matrix& m) {
  std::vector<float> data(m.data().size());
  std::transform(m.data().begin(), m.data().end(), data.begin(),
                 [](double v) { return static_cast<float>(v); });
  return EmbeddingMatrix(m.rows(), m.cols(), std::move(data));
}

Matrix EmbeddingMatrix::to_matrix() const {
  std::vector<double> out(data_.begin(), data_.end());
  return Matrix(rows_, dim_, std::move(out));
}

bool EmbeddingMatrix::bit_equal(const EmbeddingMatrix& other) const {
  if (rows_ != other.rows_ || dim_ != other.dim_) return false;
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (std::bit_cast<std::uint32_t>(data_[i]) != std::bit_cast<std::uint32_t>(other.data_[i]))
      return false;
  }
  return true;
}

std::string_view to_string(CaptionQuality q) {
  return q == CaptionQuality::generic ? "generic" : "informative";
}

CaptionQuality parse_caption_quality(std::string_view s) {
  if (s == "generic") return CaptionQuality::generic;
  if (s == "informative") return CaptionQuality::informative;
  throw FormatError("unknown caption quality label '" + std::string(s) + "'");
}

void Corpus::validate() const {
  const std::size_t n = video_ids.size();
  if (videos.rows() != n) {
    throw ShapeError("corpus has " + std::to_string(n) + " ids but " +
                     std::to_string(videos.rows()) + " video rows");
  }
  if (captions.size() != n) {
    throw ShapeError("corpus has " + std::to_string(n) + " videos but " +
                     std::to_string(captions.size()) + " caption lists");
  }
  std::unordered_set<std::string> seen;
  for (const auto& id : video_ids) {
    if (!seen.insert(id).second) throw InvariantError("duplicate video id '" + id + "'");
  }
  check_finite(videos.data(), "video embeddings");
  for (std::size_t i = 0; i < n; ++i) {
    if (captions[i].rows() == 0) {
      throw InvariantError("video '" + video_ids[i] + "' has no captions");
    }
    if (captions[i].dim() != videos.dim()) {
      throw ShapeError("caption dim " + std::to_string(captions[i].dim()) + " of video '" +
                       video_ids[i] + "' != video dim " + std::to_string(videos.dim()));
    }
    check_finite(captions[i].data(), "caption embeddings");
  }
  if (quality) {
    if (quality->size() != n) throw ShapeError("quality labels: per-video count mismatch");
    for (std::size_t i = 0; i < n; ++i) {
      if ((*quality)[i].size() != captions[i].rows()) {
        throw ShapeError("quality labels of video '" + video_ids[i] +
                         "' do not match its caption count");
      }
    }
  }
}

bool Corpus::identical(const Corpus& other) const {
  if (video_ids != other.video_ids || quality != other.quality || seed != other.seed ||
      provenance != other.provenance || captions.size() != other.captions.size()) {
    return false;
  }
  if (!videos.bit_equal(other.videos)) return false;
  for (std::size_t i = 0; i < captions.size(); ++i) {
    if (!captions[i].bit_equal(other.captions[i])) return false;
  }
  return true;
}

Corpus subset(const Corpus& corpus, std::span<const std::size_t> indices) {
  Corpus out;
  out.seed = corpus.seed;
  out.provenance = corpus.provenance;
  const std::size_t m = corpus.dim();
  std::vector<float> vdata;
  vdata.reserve(indices.size() * m);
  if (corpus.quality) out.quality.emplace();
  for (std::size_t idx : indices) {
    if (idx >= corpus.size()) throw ShapeError("subset: video index out of range");
    out.video_ids.push_back(corpus.video_ids[idx]);
    auto r = corpus.videos.row(idx);
    vdata.insert(vdata.end(), r.begin(), r.end());
    out.captions.push_back(corpus.captions[idx]);
    if (corpus.quality) out.quality->push_back((*corpus.quality)[idx]);
  }
  out.videos = EmbeddingMatrix(indices.size(), m, std::move(vdata));
  return out;
}

nlohmann::json Manifest::to_json() const {
  nlohmann::json j;
  j["format_version"] = format_version;
  j["dim"] = dim;
  j["n_videos"] = n_videos;
  j["captions_per_video"] = captions_per_video;
  j["video_ids"] = video_ids;
  j["blobs"] = {{"videos", videos_blob}, {"captions", captions_blob}};
  if (quality) {
    nlohmann::json q = nlohmann::json::array();
    for (const auto& per_video : *quality) {
      nlohmann::json row = nlohmann::json::array();
      for (auto label : per_video) row.push_back(std::string(to_string(label)));
      q.push_back(std::move(row));
    }
    j["quality_labels"] = std::move(q);
  }
  if (seed) j["seed"] = *seed;
  j["provenance"] = provenance;
  return j;
}

Manifest Manifest::from_json(const nlohmann::json& j) {
  Manifest m;
  try {
    m.format_version = j.at("format_version").get<std::uint32_t>();
    if (m.format_version != kManifestVersion) {
      throw FormatError("unsupported manifest format_version " +
                        std::to_string(m.format_version));
    }
    m.dim = j.at("dim").get<std::size_t>();
    m.n_videos = j.at("n_videos").get<std::size_t>();
    m.captions_per_video = j.at("captions_per_video").get<std::vector<std::size_t>>();
    m.video_ids = j.at("video_ids").get<std::vector<std::string>>();
    m.videos_blob = j.at("blobs").at("videos").get<std::string>();
    m.captions_blob = j.at("blobs").at("captions").get<std::string>();
    if (j.contains("quality_labels")) {
      std::vector<std::vector<CaptionQuality>> q;
      for (const auto& row : j.at("quality_labels")) {
        std::vector<CaptionQuality> labels;
        for (const auto& s : row) labels.push_back(parse_caption_quality(s.get<std::string>()));
        q.push_back(std::move(labels));
      }
      m.quality = std::move(q);
    }
    if (j.contains("seed")) m.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("provenance")) m.provenance = j.at("provenance");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  if (m.video_ids.size() != m.n_videos || m.captions_per_video.size() != m.n_videos) {
    throw ShapeError("manifest: n_videos=" + std::to_string(m.n_videos) +
                     " disagrees with video_ids/captions_per_video lengths");
  }
  return m;
}

std::vector<std::uint8_t> encode_blob(const EmbeddingMatrix& m) {
  std::vector<std::uint8_t> out;
  out.reserve(kBlobHeaderBytes + 4 * m.data().size());
  for (auto b : kMagic) out.push_back(static_cast<std::uint8_t>(b));
  put_u32(out, kBlobVersion);
  put_u32(out, checked_u32(m.rows(), "rows"));
  put_u32(out, checked_u32(m.dim(), "dim"));
  for (float v : m.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

EmbeddingMatrix decode_blob(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kBlobHeaderBytes) {
    throw FormatError("blob shorter than its 16-byte header");
  }
  if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw FormatError("blob magic is not 'MQVR'");
  }
  const std::uint32_t version = get_u32(bytes, 4);
  if (version != kBlobVersion) {
    throw FormatError("unsupported blob version " + std::to_string(version));
  }
  const std::size_t rows = get_u32(bytes, 8);
  const std::size_t dim = get_u32(bytes, 12);
  const std::size_t expected = kBlobHeaderBytes + 4 * rows * dim;
  if (bytes.size() != expected) {
    throw FormatError("blob holds " + std::to_string(bytes.size()) + " bytes, header implies " +
                      std::to_string(expected));
  }
  std::vector<float> data(rows * dim);
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = std::bit_cast<float>(get_u32(bytes, kBlobHeaderBytes + 4 * i));
  }
  return EmbeddingMatrix(rows, dim, std::move(data));
}

void write_blob(const fs::path& path, const EmbeddingMatrix& m) {
  const auto bytes = encode_blob(m);
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

EmbeddingMatrix read_blob(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return decode_blob(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_text_file(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out << text;
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Manifest save_corpus(const Corpus& corpus, const fs::path& directory) {
  corpus.validate();
  std::error_code ec;
  fs::create_directories(directory, ec);
  if (ec) throw IoError("cannot create " + directory.string() + ": " + ec.message());

  Manifest m;
  m.dim = corpus.dim();
  m.n_videos = corpus.size();
  m.video_ids = corpus.video_ids;
  m.quality = corpus.quality;
  m.seed = corpus.seed;
  m.provenance = corpus.provenance;

  std::size_t total = 0;
  for (const auto& c : corpus.captions) {
    m.captions_per_video.push_back(c.rows());
    total += c.rows();
  }
  std::vector<float> flat;
  flat.reserve(total * m.dim);
  for (const auto& c : corpus.captions) flat.insert(flat.end(), c.data().begin(), c.data().end());

  write_blob(directory / m.videos_blob, corpus.videos);
  write_blob(directory / m.captions_blob, EmbeddingMatrix(total, m.dim, std::move(flat)));
  write_text_file(directory / "manifest.json", m.to_json().dump(2) + "\n");
  return m;
}

Corpus load_corpus(const fs::path& directory) {
  const fs::path manifest_path = directory / "manifest.json";
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(manifest_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(manifest_path.string() + ": " + e.what());
  }
  const Manifest m = Manifest::from_json(j);

  Corpus c;
  c.video_ids = m.video_ids;
  c.quality = m.quality;
  c.seed = m.seed;
  c.provenance = m.provenance;
  c.videos = read_blob(directory / m.videos_blob);
  if (c.videos.rows() != m.n_videos) {
    throw ShapeError("manifest n_videos=" + std::to_string(m.n_videos) + " but video blob has " +
                     std::to_string(c.videos.rows()) + " rows");
  }
  if (c.videos.dim() != m.dim) {
    throw ShapeError("manifest dim=" + std::to_string(m.dim) + " but video blob dim is " +
                     std::to_string(c.videos.dim()));
  }

  const EmbeddingMatrix all = read_blob(directory / m.captions_blob);
  std::size_t total = 0;
  for (std::size_t k : m.captions_per_video) total += k;
  if (all.rows() != total || (total > 0 && all.dim() != m.dim)) {
    throw ShapeError("caption blob is " + std::to_string(all.rows()) + "x" +
                     std::to_string(all.dim()) + ", manifest implies " + std::to_string(total) +
                     "x" + std::to_string(m.dim));
  }
  std::size_t offset = 0;
  for (std::size_t k : m.captions_per_video) {
    auto begin = all.data().begin() + static_cast<std::ptrdiff_t>(offset * m.dim);
    std::vector<float> rows(begin, begin + static_cast<std::ptrdiff_t>(k * m.dim));
    c.captions.emplace_back(k, m.dim, std::move(rows));
    offset += k;
  }
  c.validate();
  return c;
}

}  // namespace mqvr
