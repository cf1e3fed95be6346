#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>
#include <random>

#include <nlohmann/json.hpp>

#include "mqvr/embedding_store.hpp"
#include "mqvr/errors.hpp"
#include "unit/test_util.hpp"

using namespace mqvr;
namespace fs = std::filesystem;

namespace {

Corpus tiny_corpus() {
  Corpus c;
  c.video_ids = {"a", "b"};
  c.videos = EmbeddingMatrix(2, 3, {1, 0, 0, 0, 1, 0});
  c.captions.emplace_back(1, 3, std::vector<float>{1, 0.5f, 0});
  c.captions.emplace_back(2, 3, std::vector<float>{0, 1, 0.25f, -0.0f, 2, 1e-30f});
  c.quality = std::vector<std::vector<CaptionQuality>>{
      {CaptionQuality::informative}, {CaptionQuality::generic, CaptionQuality::informative}};
  c.seed = 42;
  c.provenance = {{"note", "tiny"}};
  return c;
}

}  // namespace

TEST(Blob, GoldenFixtureParsesToKnownValues) {
  const EmbeddingMatrix m = read_blob(fs::path(MQVR_FIXTURE_DIR) / "golden_2x3.bin");
  ASSERT_EQ(m.rows(), 2u);
  ASSERT_EQ(m.dim(), 3u);
  const std::vector<float> expected{1.0f, -2.0f, 0.5f, 0.25f, 0.0f, 3.0f};
  for (std::size_t i = 0; i < expected.size(); ++i) EXPECT_EQ(m.data()[i], expected[i]);
}

TEST(Blob, EncodeReproducesGoldenBytes) {
  const EmbeddingMatrix m(2, 3, {1.0f, -2.0f, 0.5f, 0.25f, 0.0f, 3.0f});
  const std::vector<std::uint8_t> expected{
      0x4d, 0x51, 0x56, 0x52, 0x01, 0x00, 0x00, 0x00, 0x02, 0x00, 0x00, 0x00, 0x03, 0x00,
      0x00, 0x00, 0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0, 0x00, 0x00, 0x00, 0x3f,
      0x00, 0x00, 0x80, 0x3e, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x40, 0x40};
  EXPECT_EQ(encode_blob(m), expected);
}

TEST(Blob, OneByTwoIsHeaderPlusEightBytes) {
  EXPECT_EQ(encode_blob(EmbeddingMatrix(1, 2, {0.5f, 0.5f})).size(), 16u + 8u);
}

TEST(Blob, WrongMagicIsFormatError) {
  auto bytes = encode_blob(EmbeddingMatrix(1, 2, {0.5f, 0.5f}));
  bytes[0] = 'X';
  EXPECT_THROW(decode_blob(bytes), FormatError);
}

TEST(Blob, WrongVersionAndTruncationAreFormatErrors) {
  auto bytes = encode_blob(EmbeddingMatrix(1, 2, {0.5f, 0.5f}));
  auto v2 = bytes;
  v2[4] = 2;
  EXPECT_THROW(decode_blob(v2), FormatError);
  bytes.pop_back();
  EXPECT_THROW(decode_blob(bytes), FormatError);
  bytes.resize(10);
  EXPECT_THROW(decode_blob(bytes), FormatError);
}

TEST(Blob, NonFinitePayloadRejected) {
  auto bytes = encode_blob(EmbeddingMatrix(1, 2, {0.5f, 0.5f}));
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(bytes.data() + 16, &nan, 4);
  EXPECT_THROW(decode_blob(bytes), InvariantError);
  EXPECT_THROW(EmbeddingMatrix(1, 1, {std::numeric_limits<float>::infinity()}), InvariantError);
}

TEST(Blob, RandomRoundTripIsBitExact) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 20; ++t) {
    const auto m = EmbeddingMatrix::from_matrix(testutil::random_matrix(1 + t % 5, 1 + t % 7, rng));
    EXPECT_TRUE(decode_blob(encode_blob(m)).bit_equal(m));
  }
}

TEST(Corpus, SaveLoadIsIdentical) {
  testutil::TempDir dir("store");
  const Corpus c = tiny_corpus();
  const Manifest m = save_corpus(c, dir.path());
  EXPECT_EQ(m.n_videos, 2u);
  EXPECT_EQ(m.captions_per_video, (std::vector<std::size_t>{1, 2}));
  const Corpus back = load_corpus(dir.path());
  EXPECT_TRUE(back.identical(c));
  EXPECT_EQ(back.seed, c.seed);
  EXPECT_EQ(back.provenance, c.provenance);
}

TEST(Corpus, LoadThenSaveReproducesBytes) {
  testutil::TempDir a("store_a"), b("store_b");
  save_corpus(tiny_corpus(), a.path());
  save_corpus(load_corpus(a.path()), b.path());
  for (const char* f : {"videos.bin", "captions.bin", "manifest.json"}) {
    EXPECT_EQ(read_text_file(a / f), read_text_file(b / f)) << f;
  }
}

TEST(Corpus, CaptionDimMismatchRejected) {
  Corpus c = tiny_corpus();
  c.captions[1] = EmbeddingMatrix(1, 2, {1, 0});
  EXPECT_THROW(c.validate(), ShapeError);
  testutil::TempDir dir("store");
  EXPECT_THROW(save_corpus(c, dir.path()), ShapeError);
}

TEST(Corpus, DuplicateIdsAndEmptyCaptionsRejected) {
  Corpus c = tiny_corpus();
  c.video_ids[1] = "a";
  EXPECT_THROW(c.validate(), InvariantError);
  Corpus d = tiny_corpus();
  d.captions[0] = EmbeddingMatrix(0, 3);
  EXPECT_THROW(d.validate(), InvariantError);
}

TEST(Corpus, ManifestCountBeyondBlobIsShapeError) {
  testutil::TempDir dir("store");
  save_corpus(tiny_corpus(), dir.path());
  auto j = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
  j["n_videos"] = 3;
  j["video_ids"].push_back("c");
  j["captions_per_video"].push_back(1);
  j.erase("quality_labels");
  write_text_file(dir / "manifest.json", j.dump());
  EXPECT_THROW(load_corpus(dir.path()), ShapeError);
}

TEST(Corpus, MissingFilesAreIoErrors) {
  testutil::TempDir dir("store");
  EXPECT_THROW(load_corpus(dir.path()), IoError);
  save_corpus(tiny_corpus(), dir.path());
  fs::remove(dir / "captions.bin");
  EXPECT_THROW(load_corpus(dir.path()), IoError);
}

TEST(Corpus, SubsetKeepsRequestedOrder) {
  const Corpus c = tiny_corpus();
  const std::vector<std::size_t> idx{1, 0};
  const Corpus s = subset(c, idx);
  EXPECT_EQ(s.video_ids, (std::vector<std::string>{"b", "a"}));
  EXPECT_TRUE(s.captions[0].bit_equal(c.captions[1]));
  EXPECT_EQ((*s.quality)[1], (*c.quality)[0]);
}

TEST(CaptionQuality, ParsesBothLabels) {
  EXPECT_EQ(parse_caption_quality("generic"), CaptionQuality::generic);
  EXPECT_EQ(parse_caption_quality(to_string(CaptionQuality::informative)),
            CaptionQuality::informative);
  EXPECT_THROW(parse_caption_quality("bogus"), FormatError);
}
