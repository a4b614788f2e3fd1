#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "telescopic/core/errors.hpp"
#include "telescopic/core/serialize.hpp"
#include "telescopic/data/synthdata.hpp"
#include "telescopic/data/tokenizer.hpp"
#include "telescopic/model/model_spec.hpp"
#include "test_util.hpp"

namespace telescopic {
namespace {

TEST(Tokenizer, EncodesWithSpecialTokensAndPadding) {
  const auto ids = Tokenizer::encode("segment the disk");
  ASSERT_EQ(ids.size(), Tokenizer::kContextLength);
  EXPECT_EQ(ids[0], kBosToken);
  EXPECT_EQ(ids[1], Tokenizer::id_of("segment"));
  EXPECT_EQ(ids[3], Tokenizer::id_of("disk"));
  EXPECT_EQ(ids[4], kEosToken);
  for (std::size_t i = 5; i < ids.size(); ++i) EXPECT_EQ(ids[i], kPadToken);
}

TEST(Tokenizer, TruncationKeepsEos) {
  std::string long_prompt;
  for (int i = 0; i < 40; ++i) long_prompt += "the ";
  const auto ids = Tokenizer::encode(long_prompt);
  ASSERT_EQ(ids.size(), Tokenizer::kContextLength);
  EXPECT_EQ(ids.back(), kEosToken);
}

TEST(Tokenizer, VocabularyIsUniqueAndClosed) {
  const auto& v = Tokenizer::vocabulary();
  EXPECT_EQ(v.size(), Tokenizer::kVocabSize);
  EXPECT_EQ(std::set<std::string>(v.begin(), v.end()).size(), v.size());
  EXPECT_THROW(Tokenizer::encode("segment the hexagon"), InputError);
}

TEST(Synth, GenerationIsDeterministicAndPrefixStable) {
  const SceneSpec scene;
  const Dataset a = generate_samples(scene, {}, 30, 9), b = generate_samples(scene, {}, 30, 9);
  for (std::size_t i = 0; i < 30; ++i) {
    EXPECT_EQ(io::tensor_checksum(a.samples[i].image), io::tensor_checksum(b.samples[i].image));
    EXPECT_EQ(a.samples[i].split, b.samples[i].split);
  }
  const Dataset c = generate_samples(scene, {}, 30, 10);
  EXPECT_NE(io::tensor_checksum(a.samples[0].image), io::tensor_checksum(c.samples[0].image));
}

TEST(Synth, SamplesAreWellFormed) {
  const SceneSpec scene;
  const Dataset d = generate_samples(scene, {}, 60, 4);
  std::size_t per_class[kShapeClasses] = {};
  for (const Sample& s : d.samples) {
    ASSERT_EQ(s.image.shape(), (Shape{1, 32, 32}));
    for (Real v : s.image.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      EXPECT_EQ(v * 256, std::round(v * 256));
    }
    // The mask is exactly the rasterized target shape.
    std::vector<Real> expect(32 * 32, 0);
    std::size_t targets = 0;
    for (const ShapeRecord& r : s.shapes) {
      if (!r.target) continue;
      ++targets;
      EXPECT_EQ(r.shape, s.target);
      expect = rasterize(r, 32);
    }
    EXPECT_EQ(targets, 1u);
    for (std::size_t i = 0; i < expect.size(); ++i) ASSERT_EQ(s.mask[i], expect[i]);
    EXPECT_EQ(s.prompt, "segment the " + to_string(s.target));
    EXPECT_GE(s.shapes.size(), scene.min_shapes);
    EXPECT_LE(s.shapes.size(), scene.max_shapes);
    ++per_class[static_cast<int>(s.target)];
  }
  for (std::size_t c = 0; c < kShapeClasses; ++c) EXPECT_EQ(per_class[c], 20u);
}

TEST(Synth, ShapesDoNotOverlap) {
  const Dataset d = generate_samples(SceneSpec{}, {}, 80, 5);
  for (const Sample& s : d.samples)
    for (std::size_t a = 0; a < s.shapes.size(); ++a)
      for (std::size_t b = a + 1; b < s.shapes.size(); ++b) {
        const auto ma = rasterize(s.shapes[a], 32), mb = rasterize(s.shapes[b], 32);
        for (std::size_t i = 0; i < ma.size(); ++i) ASSERT_FALSE(ma[i] > 0 && mb[i] > 0);
      }
}

TEST(Synth, SplitIsSeventyFifteenFifteen) {
  const Dataset d = generate_samples(SceneSpec{}, {}, 200, 6);
  EXPECT_EQ(d.indices(Split::kTrain).size(), 140u);
  EXPECT_EQ(d.indices(Split::kVal).size(), 30u);
  EXPECT_EQ(d.indices(Split::kTest).size(), 30u);
}

TEST(Synth, ShiftLeavesMasksAndTransformsImages) {
  const ShiftChain shift = parse_shift_chain("invert+gaussian_noise:0.1");
  EXPECT_EQ(shift, default_finetune_shift());
  const Dataset base = generate_samples(SceneSpec{}, {}, 20, 7);
  const Dataset moved = generate_samples(SceneSpec{}, shift, 20, 7);
  for (std::size_t i = 0; i < 20; ++i) {
    EXPECT_EQ(io::tensor_checksum(base.samples[i].mask), io::tensor_checksum(moved.samples[i].mask));
    const Tensor expect = apply_shift_chain(base.samples[i].image, shift);
    EXPECT_EQ(io::tensor_checksum(expect), io::tensor_checksum(moved.samples[i].image));
  }
}

TEST(Synth, ShiftKinds) {
  RngStream rng(8);
  Tensor img = testing::random_tensor({1, 8, 8}, rng, 0, 1);
  Tensor inv = apply_domain_shift(img, {ShiftKind::kInvert, 0});
  for (std::size_t i = 0; i < img.numel(); ++i) EXPECT_NEAR(inv[i], 1 - img[i], 1e-15);
  Tensor same = apply_domain_shift(img, {ShiftKind::kNone, 0});
  for (std::size_t i = 0; i < img.numel(); ++i) EXPECT_EQ(same[i], img[i]);
  for (ShiftKind k : {ShiftKind::kGaussianNoise, ShiftKind::kBlur, ShiftKind::kContrastDrop}) {
    Tensor a = apply_domain_shift(img, {k, 0.5}), b = apply_domain_shift(img, {k, 0.5});
    for (std::size_t i = 0; i < img.numel(); ++i) {
      EXPECT_EQ(a[i], b[i]);
      EXPECT_GE(a[i], 0.0);
      EXPECT_LE(a[i], 1.0);
    }
  }
  EXPECT_THROW(parse_shift_chain("sepia"), UsageError);
  EXPECT_THROW(parse_shift_chain("blur:x"), UsageError);
  EXPECT_TRUE(parse_shift_chain("none").empty() || parse_shift_chain("none")[0].kind == ShiftKind::kNone);
}

TEST(Synth, DatasetRoundTripsThroughDisk) {
  const auto dir = testing::temp_dir("dataset");
  const Dataset d = generate_dataset(dir, SceneSpec{}, default_finetune_shift(), 12, 3);
  const Dataset back = load_dataset(dir);
  ASSERT_EQ(back.samples.size(), 12u);
  EXPECT_EQ(back.scene, d.scene);
  EXPECT_EQ(back.shift, d.shift);
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_EQ(io::tensor_checksum(back.samples[i].image), io::tensor_checksum(d.samples[i].image));
    EXPECT_EQ(back.samples[i].tokens, d.samples[i].tokens);
    EXPECT_EQ(back.samples[i].split, d.samples[i].split);
  }
}

TEST(Synth, CorruptImageIsNamed) {
  const auto dir = testing::temp_dir("dataset_corrupt");
  generate_dataset(dir, SceneSpec{}, {}, 4, 3);
  const auto victim = dir / "images" / "000002.tensor";
  ASSERT_TRUE(std::filesystem::exists(victim));
  {
    std::fstream f(victim, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-3, std::ios::end);
    f.put('\x7f');
  }
  try {
    load_dataset(dir);
    FAIL() << "expected CorruptionError";
  } catch (const CorruptionError& e) {
    EXPECT_NE(std::string(e.what()).find("000002"), std::string::npos);
  }
  EXPECT_THROW(load_dataset(dir / "missing"), IoError);
}

TEST(Synth, SceneSpecJson) {
  SceneSpec s;
  s.max_shapes = 2;
  EXPECT_EQ(scene_spec_from_json(to_json(s)), s);
  EXPECT_THROW(scene_spec_from_json({{"colour", 1}}), ConfigError);
  SceneSpec bad;
  bad.max_size = 40;
  EXPECT_THROW(bad.validate(), ConfigError);
}

}  // namespace
}  // namespace telescopic
