#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <set>

#include "support.hpp"

using namespace tdcmn;
using namespace tdcmn::testing;

namespace {

Dataset tiny_dataset() {
  Dataset d;
  d.types = {{"scene", 2}, {"object", 3}};
  d.clips = 4;
  d.num_classes = 2;
  Rng rng(1);
  for (std::size_t i = 0; i < 4; ++i) {
    VideoSample s;
    s.id = "vid" + std::to_string(i);
    s.labels = {i % 2};
    s.sequences = {{"scene", random_tensor({2, 4}, rng)}, {"object", random_tensor({3, 4}, rng)}};
    d.samples.push_back(std::move(s));
  }
  return d;
}

}  // namespace

TEST(ScoreFormat, ByteLayout) {
  const std::string bytes = encode_scores(Tensor::matrix({{1.5, -2.0}}));
  ASSERT_EQ(bytes.size(), 32u);
  EXPECT_EQ(bytes.substr(0, 8), "TDCSCORE");
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 1);
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 2);
  double first = 0.0;
  std::memcpy(&first, bytes.data() + 16, 8);
  EXPECT_EQ(first, 1.5);
}

TEST(ScoreFormat, RoundTripIsBitExact) {
  Rng rng(2);
  Tensor t = random_tensor({5, 7}, rng, -1e300, 1e300);
  t.data[0] = 5e-324;
  t.data[1] = -0.0;
  const Tensor back = decode_scores(encode_scores(t), "mem");
  for (std::size_t i = 0; i < t.numel(); ++i) {
    EXPECT_EQ(std::bit_cast<std::uint64_t>(back.data[i]), std::bit_cast<std::uint64_t>(t.data[i]));
  }
}

TEST(ScoreFormat, MalformedInputsNameOffsets) {
  const std::string good = encode_scores(Tensor::matrix({{1, 2}}));
  try {
    decode_scores(good.substr(0, 20), "f.bin");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("f.bin: offset 20"), std::string::npos) << e.what();
  }
  std::string bad = good;
  bad[0] = 'X';
  EXPECT_THROW(decode_scores(bad, "f"), ParseError);
  EXPECT_THROW(decode_scores("short", "f"), ParseError);
  EXPECT_THROW(decode_scores_json("[[1,2],[3]]", "f"), ParseError);
  EXPECT_EQ(decode_scores_json("[[1,2],[3,4]]", "f"), Tensor::matrix({{1, 2}, {3, 4}}));
}

TEST(LoadDataset, EmptyManifestIsEmptyDataset) {
  TempDir dir("empty");
  detail::write_file(dir / "manifest.jsonl", "");
  const Dataset d = load_dataset(dir.path());
  EXPECT_TRUE(d.empty());
}

TEST(LoadDataset, RoundTrip) {
  TempDir dir("rt");
  const Dataset d = tiny_dataset();
  save_dataset(d, dir.path());
  const Dataset back = load_dataset(dir.path());
  EXPECT_EQ(back.types, d.types);
  EXPECT_EQ(back.clips, 4u);
  EXPECT_EQ(back.num_classes, 2u);
  ASSERT_EQ(back.size(), d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    EXPECT_EQ(back.samples[i].id, d.samples[i].id);
    EXPECT_EQ(back.samples[i].labels, d.samples[i].labels);
    for (std::size_t k = 0; k < 2; ++k) {
      EXPECT_EQ(back.samples[i].sequences[k].scores, d.samples[i].sequences[k].scores);
    }
  }
  // The manifest file path works as well as its directory.
  EXPECT_EQ(load_dataset(dir / "manifest.jsonl").size(), 4u);
}

TEST(LoadDataset, JsonScoresAccepted) {
  TempDir dir("json");
  detail::write_file(dir / "a.json", "[[0.5, 1.0, 0.0]]");
  detail::write_file(dir / "manifest.jsonl",
                     "{\"id\":\"x\",\"label\":1,\"sequences\":[{\"type\":\"scene\",\"path\":\"a.json\"}]}\n");
  const Dataset d = load_dataset(dir.path());
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d.num_classes, 2u);
  EXPECT_EQ(d.samples[0].sequences[0].scores, Tensor::matrix({{0.5, 1.0, 0.0}}));
}

TEST(LoadDataset, MissingFileIsNamed) {
  TempDir dir("missing");
  detail::write_file(dir / "manifest.jsonl",
                     "{\"id\":\"x\",\"label\":0,\"sequences\":[{\"type\":\"scene\",\"path\":\"nope.bin\"}]}\n");
  try {
    load_dataset(dir.path());
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("nope.bin"), std::string::npos);
  }
  EXPECT_THROW(load_dataset(dir / "absent"), IoError);
}

TEST(LoadDataset, InconsistentClipsIsDataError) {
  TempDir dir("clips");
  detail::write_file(dir / "a.bin", encode_scores(Tensor({2, 4}, 0.0)));
  detail::write_file(dir / "b.bin", encode_scores(Tensor({2, 5}, 0.0)));
  detail::write_file(dir / "manifest.jsonl",
                     "{\"id\":\"a\",\"label\":0,\"sequences\":[{\"type\":\"s\",\"path\":\"a.bin\"}]}\n"
                     "{\"id\":\"b\",\"label\":0,\"sequences\":[{\"type\":\"s\",\"path\":\"b.bin\"}]}\n");
  EXPECT_THROW(load_dataset(dir.path()), DataError);
}

TEST(LoadDataset, MalformedManifestLineReportsOffset) {
  TempDir dir("bad");
  detail::write_file(dir / "manifest.jsonl", "{\"format\":\"tdcmn-manifest\"}\n{oops\n");
  try {
    load_dataset(dir.path());
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos) << e.what();
  }
}

TEST(Synthetic, NoiselessBurstHasOneHotClip) {
  SyntheticSpec spec = SyntheticSpec::standard(3);
  spec.noise = 0.0;
  const Dataset d = generate_synthetic(spec, 9);
  for (const auto& s : d.samples) {
    const Tensor& x = s.sequences[0].scores;
    std::size_t hot = 0;
    for (double v : x.data) {
      if (v != 0.0) {
        EXPECT_EQ(v, 1.0);
        ++hot;
      }
    }
    EXPECT_EQ(hot, pattern_duration(spec.plants[s.label()].kind, 16));
    for (double v : s.sequences[1].scores.data) EXPECT_EQ(v, 0.0);
  }
  EXPECT_EQ(pattern_duration(PatternKind::burst, 16), 1u);
  EXPECT_EQ(pattern_duration(PatternKind::position_variant, 16), 3u);
  EXPECT_EQ(pattern_duration(PatternKind::sustained, 16), 8u);
}

TEST(Synthetic, DeterministicAndOracleSeparable) {
  const SyntheticSpec spec = SyntheticSpec::standard(4);
  const Dataset a = generate_synthetic(spec, 60), b = generate_synthetic(spec, 60);
  for (std::size_t i = 0; i < 60; ++i) {
    EXPECT_EQ(a.samples[i].sequences[0].scores, b.samples[i].sequences[0].scores);
  }
  SyntheticSpec clean = spec;
  clean.noise = 0.0;
  EXPECT_EQ(planted_oracle_accuracy(clean, generate_synthetic(clean, 300).samples), 1.0);
  EXPECT_GE(planted_oracle_accuracy(spec, generate_synthetic(spec, 600).samples), 0.95);
}

TEST(Synthetic, InvalidSpecs) {
  SyntheticSpec s = SyntheticSpec::standard();
  s.plants[0].channel = 8;
  EXPECT_THROW(generate_synthetic(s, 3), ConfigError);
  s = SyntheticSpec::standard();
  s.types[1].channels = 0;
  EXPECT_THROW(generate_synthetic(s, 3), ConfigError);
  s = SyntheticSpec::standard();
  s.plants[2].kind = PatternKind::burst;
  EXPECT_THROW(generate_synthetic(s, 3), ConfigError);
  s = SyntheticSpec::standard();
  s.noise = -1;
  EXPECT_THROW(generate_synthetic(s, 3), ConfigError);
}

TEST(Split, BalancedDisjointExhaustiveDeterministic) {
  SyntheticSpec spec = SyntheticSpec::standard();
  spec.num_classes = 2;
  spec.plants.resize(2);
  const Dataset d = generate_synthetic(spec, 10);
  const SplitResult a = split(d, 0.5, 7), b = split(d, 0.5, 7);
  EXPECT_EQ(a.train.size(), 5u);
  EXPECT_EQ(a.test.size(), 5u);
  std::size_t train_c0 = 0;
  for (const auto& s : a.train.samples) train_c0 += s.label() == 0;
  EXPECT_TRUE(train_c0 == 2 || train_c0 == 3);
  std::set<std::string> ids;
  for (const auto* part : {&a.train, &a.test})
    for (const auto& s : part->samples) EXPECT_TRUE(ids.insert(s.id).second);
  EXPECT_EQ(ids.size(), 10u);
  for (std::size_t i = 0; i < a.train.size(); ++i) EXPECT_EQ(a.train.samples[i].id, b.train.samples[i].id);
}

TEST(Split, TotalFollowsFractionAcrossClasses) {
  SyntheticSpec spec = SyntheticSpec::standard();
  const Dataset d = generate_synthetic(spec, 600);
  for (double f : {0.5, 0.3, 0.77}) {
    const SplitResult r = split(d, f, 2);
    EXPECT_EQ(r.train.size(), static_cast<std::size_t>(std::llround(f * 600.0))) << f;
    std::vector<std::size_t> per_class(3, 0);
    for (const auto& s : r.train.samples) ++per_class[s.label()];
    for (std::size_t c : per_class) {
      EXPECT_LE(std::abs(static_cast<double>(c) - f * 200.0), 1.0) << f;
    }
  }
}

TEST(Split, Errors) {
  Dataset d = tiny_dataset();
  d.samples.pop_back();  // class 1 keeps one sample
  EXPECT_THROW(split(d, 0.5, 0), DataError);
  EXPECT_THROW(split(tiny_dataset(), 1.0, 0), ConfigError);
}
