#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "fusegram/codec.hpp"

using namespace fusegram;

namespace {

FusedSample sample_of(std::initializer_list<double> v) {
  FusedSample s;
  std::copy(v.begin(), v.end(), s.channels.begin());
  return s;
}

} // namespace

TEST(Codec, ScalesOverPaddedVector) {
  auto s = sample_of({1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14});
  const auto img = encode(s);
  EXPECT_EQ(img.scale_min, 0.0); // the pads are zeros
  EXPECT_EQ(img.scale_max, 14.0);
  EXPECT_EQ(img.pixels[13], 255);
  EXPECT_EQ(img.pixels[14], 0);
  EXPECT_EQ(img.pixels[15], 0);
  // 255 * 7 / 14 = 127.5 rounds away from zero
  EXPECT_EQ(img.pixels[6], 128);
}

TEST(Codec, RoundTripWithinHalfStep) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 50.0);
  for (int t = 0; t < 500; ++t) {
    FusedSample s;
    for (auto& c : s.channels) c = n(rng);
    const auto img = encode(s);
    const auto back = decode(img);
    const double bound = (img.scale_max - img.scale_min) / 510.0 * (1 + 1e-12);
    for (std::size_t k = 0; k < kFusedChannels; ++k) EXPECT_LE(std::fabs(back.channels[k] - s.channels[k]), bound);
    const auto padded = decode_padded(img);
    EXPECT_LE(std::fabs(padded[14]), bound);
    EXPECT_LE(std::fabs(padded[15]), bound);
  }
}

TEST(Codec, ConstantZeroSignalIsExact) {
  const FusedSample s{};
  const auto img = encode(s);
  EXPECT_EQ(img.scale_min, 0.0);
  EXPECT_EQ(img.scale_max, 0.0);
  EXPECT_EQ(decode(img).channels, s.channels);
}

TEST(Codec, NonFiniteChannelIsNumericError) {
  auto s = sample_of({1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14});
  s.channels[3] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(encode(s), NumericError);
}

TEST(Codec, FromPixelsValidatesRange) {
  std::vector<int> bad(16, 0);
  bad[2] = 256;
  EXPECT_THROW(EncodedImage::from_pixels(bad, 0, 1), DataError);
  std::vector<int> ok(16, 255);
  EXPECT_NO_THROW(EncodedImage::from_pixels(ok, 0, 1));
}

TEST(Codec, SieContainerRoundTrip) {
  auto s = sample_of({-3, 2.5, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14});
  const auto img = encode(s);
  const auto bytes = to_sie(img);
  ASSERT_EQ(bytes.size(), kSieSize);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "SIE1");
  EXPECT_EQ(from_sie(bytes), img);

  auto corrupt = bytes;
  corrupt[0] = 'X';
  EXPECT_THROW(from_sie(corrupt), DataError);
  corrupt = bytes;
  corrupt.pop_back();
  EXPECT_THROW(from_sie(corrupt), DataError);
}

TEST(Codec, PgmRoundTripThroughFiles) {
  auto s = sample_of({1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14.5});
  const auto img = encode(s);
  const auto dir = std::filesystem::temp_directory_path() / "fusegram_codec_test";
  std::filesystem::create_directories(dir);
  write_pgm(img, (dir / "a.pgm").string(), (dir / "a.json").string());
  EXPECT_EQ(read_pgm((dir / "a.pgm").string(), (dir / "a.json").string()), img);
  write_sie(img, (dir / "a.sie").string());
  EXPECT_EQ(read_sie((dir / "a.sie").string()), img);
  std::filesystem::remove_all(dir);
}
