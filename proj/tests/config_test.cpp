#include "refseg/config.hpp"

#include <gtest/gtest.h>

namespace refseg {
namespace {

TEST(ConfigTest, ParsesKeyValueLines) {
  const auto m = parse_config("# comment\ntrain.max_iters = 7\n\n  model.profile=toy  # trailing\n");
  EXPECT_EQ(m.at("train.max_iters"), "7");
  EXPECT_EQ(m.at("model.profile"), "toy");
  EXPECT_THROW(parse_config("a = 1\na = 2\n"), ConfigError);
  EXPECT_THROW(parse_config("just words\n"), ConfigError);
}

TEST(ConfigTest, RunConfigRoundTrip) {
  RunConfig rc;
  rc.train.max_iters = 123;
  rc.train.batch_size = 4;
  rc.train.precision = Precision::f64;
  rc.train.init = InitScheme::calibrated;
  rc.train.calibration_samples = 5;
  rc.train.mirror = true;
  rc.dims = ModelDims::toy();
  rc.dims.vocab_size = 9;
  rc.data = "train_dir";
  rc.out = "run_dir";
  const auto back = RunConfig::from(parse_config(format_config(rc.to_map())));
  EXPECT_EQ(back.train.max_iters, 123);
  EXPECT_EQ(back.train.batch_size, 4);
  EXPECT_EQ(back.train.precision, Precision::f64);
  EXPECT_EQ(back.train.init, InitScheme::calibrated);
  EXPECT_EQ(back.train.calibration_samples, 5);
  EXPECT_TRUE(back.train.mirror);
  EXPECT_EQ(back.dims.embed, rc.dims.embed);
  EXPECT_EQ(back.dims.image_size, 32);
  EXPECT_EQ(back.data, rc.data);
  EXPECT_EQ(back.out, rc.out);
}

TEST(ConfigTest, ProfilesMatchDeclaredSizes) {
  const auto desk = ModelDims::desk();
  EXPECT_EQ(desk.visual, 32);
  EXPECT_EQ(desk.word_features(), 32);
  EXPECT_EQ(desk.encoder_hidden, 32);
  EXPECT_EQ(desk.decoder_hidden, 16);
  EXPECT_EQ(desk.image_size, 64);
  EXPECT_EQ(desk.feature_size(), 16);
  EXPECT_EQ(desk.max_length, 12);
  const auto paper = ModelDims::paper();
  EXPECT_EQ(paper.visual, 1000);
  EXPECT_EQ(paper.word_features(), 1000);
  EXPECT_EQ(paper.encoder_hidden, 1000);
  EXPECT_EQ(paper.decoder_hidden, 500);
  EXPECT_EQ(paper.image_size, 320);
  EXPECT_EQ(paper.feature_size(), 40);
  EXPECT_EQ(paper.max_length, 20);
  EXPECT_THROW(ModelDims::profile("laptop"), std::invalid_argument);
}

TEST(ConfigTest, RejectsUnknownAndInvalid) {
  EXPECT_THROW(RunConfig::from({{"model.colour", "3"}}), ConfigError);
  EXPECT_THROW(RunConfig::from({{"train.batch_size", "0"}}), std::invalid_argument);
  EXPECT_THROW(RunConfig::from({{"train.max_iters", "ten"}}), ConfigError);
  EXPECT_THROW(RunConfig::from({{"train.precision", "f16"}}), std::invalid_argument);
  EXPECT_THROW(RunConfig::from({{"model.conv_kernel", "4"}}), std::invalid_argument);
  EXPECT_THROW(RunConfig::from({{"train.init", "orthogonal"}}), ConfigError);
  EXPECT_THROW(RunConfig::from({{"train.mirror", "sometimes"}}), ConfigError);
}

TEST(ConfigTest, PaperDefaultsInTrainConfig) {
  const TrainConfig t;
  EXPECT_EQ(t.base_lr, 0.00025);
  EXPECT_EQ(t.power, 0.9);
  EXPECT_EQ(t.adam.weight_decay, 0.0005);
  EXPECT_EQ(t.adam.beta1, 0.9);
  EXPECT_EQ(t.adam.beta2, 0.999);
  EXPECT_EQ(t.batch_size, 1);
  EXPECT_EQ(t.init, InitScheme::uniform);
  EXPECT_FALSE(t.mirror);
}

}  // namespace
}  // namespace refseg
