#include <gtest/gtest.h>

#include <filesystem>

#include "semimemes/checkpoint.hpp"
#include "semimemes/rng.hpp"

namespace ck = semimemes::checkpoint;
using semimemes::Matrix;

TEST(Checkpoint, RoundTripIsBitExact) {
  semimemes::Rng rng(3);
  ck::Checkpoint c;
  c.header["kind"] = "stage1";
  c.header["seed"] = 42;
  c.header["schedule"] = {{"initial_lr", 1e-4}, {"gamma", 0.93}};
  Matrix<float> f(3, 4);
  for (auto& v : f.values()) v = static_cast<float>(rng.normal());
  Matrix<double> d(2, 2);
  for (auto& v : d.values()) v = rng.normal();
  c.add("ae_image.encoder.weight", f);
  c.add("ae_image.activation.slope", d);
  const auto bytes = ck::encode(c);
  const auto back = ck::decode(bytes, "mem");
  EXPECT_EQ(back.tensors, c.tensors);
  EXPECT_EQ(back.header, c.header);
  EXPECT_EQ(ck::encode(back), bytes);

  Matrix<float> f2(3, 4);
  back.load("ae_image.encoder.weight", f2);
  EXPECT_EQ(f2, f);
}

TEST(Checkpoint, ShapeMismatchAndMissingTensor) {
  ck::Checkpoint c;
  c.add("w", Matrix<double>(2, 3));
  Matrix<double> wrong(3, 2);
  EXPECT_THROW(c.load("w", wrong), semimemes::DataError);
  EXPECT_THROW(c.find("nope"), semimemes::DataError);
  EXPECT_THROW(c.add("w", Matrix<double>(1, 1)), semimemes::DataError);
}

TEST(Checkpoint, CorruptionDetected) {
  ck::Checkpoint c;
  c.add("w", Matrix<double>(2, 3, 1.5));
  auto bytes = ck::encode(c);
  bytes[bytes.size() - 12] ^= 1;
  EXPECT_THROW(ck::decode(bytes, "mem"), semimemes::DataError);
  bytes = ck::encode(c);
  bytes[1] = 'X';
  EXPECT_THROW(ck::decode(bytes, "mem"), semimemes::DataError);
}

TEST(Checkpoint, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "semimemes_ck_test.ckpt";
  ck::Checkpoint c;
  c.header["epoch"] = 200;
  c.add("head.bias", Matrix<float>(1, 4, 0.25f));
  ck::write(c, path);
  EXPECT_EQ(ck::read(path).tensors, c.tensors);
  EXPECT_THROW(ck::read(path.string() + ".missing"), semimemes::DataError);
}
