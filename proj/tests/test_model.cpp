#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <thread>

#include "scalenet/core/rng.hpp"
#include "scalenet/net/checkpoint.hpp"
#include "scalenet/net/model.hpp"

using namespace scalenet;
using namespace scalenet::net;

namespace {

using T = double;
using Model = ScaleRatioNet<T>;

Model::Options desk_options(int resolution = 64) {
  Model::Options o;
  o.encoder.output_channels = 16;
  o.input_resolution = resolution;
  o.regressor_conv_channels = 8;
  o.regressor_fc_width = 8;
  return o;
}

Image random_image(int h, int w, uint64_t seed) {
  Rng rng(seed);
  Image img(h, w);
  for (auto& p : img.px) p = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace

TEST(Fusion, PerLocationNormsAreUnit) {
  Model m = Model::create(desk_options(), 1);
  const Tensor<T> f = m.fused_features(random_image(64, 64, 2));
  const int c = f.dim(2);
  EXPECT_EQ(c, 16);
  EXPECT_EQ(f.dim(0), 4);
  for (int p = 0; p < f.dim(0) * f.dim(1); ++p) {
    double sq = 0;
    for (int ch = 0; ch < c; ++ch) sq += f.v[p * c + ch] * f.v[p * c + ch];
    EXPECT_NEAR(std::sqrt(sq), 1.0, 1e-5);
  }
}

TEST(Fusion, MiddleOnlyWeightsDegenerateToEncoderOutput) {
  Model m = Model::create(desk_options(), 3);
  m.params().value("fusion.w1")[0] = 0;
  m.params().value("fusion.w2")[0] = 1;
  m.params().value("fusion.w3")[0] = 0;
  const Image img = random_image(64, 64, 4);

  const Tensor<T> fused = m.fused_features(img);

  Tape<T> tape;
  TapeBinding<T> bind(tape, m.params());
  auto enc = m.encoder().forward(tape, bind, img);
  std::vector<uint8_t> mask;
  const Tensor<T> expect = l2_normalize_locations(tape.val(enc), &mask);
  ASSERT_EQ(fused.shape, expect.shape);
  for (int64_t i = 0; i < fused.size(); ++i) EXPECT_DOUBLE_EQ(fused[i], expect[i]);
}

TEST(Fusion, ConstantImageWithPointwiseEncoderGivesIdenticalVectors) {
  // identity-like 1x1 conv encoder: channel c copies input channel c % 3
  Tensor<T> w({1, 1, 3, 8}, 0.0);
  for (int oc = 0; oc < 8; ++oc) w.v[static_cast<size_t>((oc % 3) * 8 + oc)] = 1.0;
  Tensor<T> b({8}, 0.0);
  auto encode = [&](Tape<T>& t, const Image& level) {
    return t.conv2d(t.input(image_to_tensor<T>(level)), t.input(w), t.input(b), 1, 0);
  };
  Image img(64, 64, 0.f);
  for (size_t i = 0; i < img.px.size(); i += 3) {
    img.px[i] = 0.2f;
    img.px[i + 1] = 0.5f;
    img.px[i + 2] = 0.8f;
  }
  Tape<T> tape;
  Tensor<T> third({1}, 1.0 / 3.0);
  auto fv = fused_features_graph(tape, img, encode, tape.input(third), tape.input(third), tape.input(third));
  const Tensor<T>& f = tape.val(fv);
  const int c = f.dim(2);
  for (int p = 0; p < f.dim(0) * f.dim(1); ++p)
    for (int ch = 0; ch < c; ++ch) EXPECT_NEAR(f.v[p * c + ch], f.v[ch], 1e-9);
  double sq = 0;
  for (int ch = 0; ch < c; ++ch) sq += f.v[ch] * f.v[ch];
  EXPECT_NEAR(sq, 1.0, 1e-9);
}

TEST(Regressor, ZeroHeadPredictsIdentityRatio) {
  Model m = Model::create(desk_options(), 5);  // final layer is zero-initialized
  const ScaleRatio r = m.estimate(random_image(80, 100, 6), random_image(64, 64, 7));
  EXPECT_DOUBLE_EQ(r.log2_value, 0.0);
  EXPECT_DOUBLE_EQ(r.value(), 1.0);
}

TEST(Regressor, OutputClampedToInferenceRange) {
  Model m = Model::create(desk_options(), 8);
  m.params().value("regressor.fc1.b")[0] = 1e6;
  const ScaleRatio hi = m.estimate(random_image(64, 64, 9), random_image(64, 64, 10));
  EXPECT_DOUBLE_EQ(hi.log2_value, 9.0);
  m.params().value("regressor.fc1.b")[0] = -1e6;
  const ScaleRatio lo = m.estimate(random_image(64, 64, 9), random_image(64, 64, 10));
  EXPECT_DOUBLE_EQ(lo.log2_value, -9.0);
}

TEST(Regressor, RejectsNonFiniteActivations) {
  Model m = Model::create(desk_options(), 11);
  m.params().value("regressor.fc1.w")[0] = std::numeric_limits<T>::quiet_NaN();
  Tensor<T> volume({4, 4, 16}, 0.1);
  EXPECT_THROW(m.regress(volume), std::runtime_error);
}

TEST(Regressor, BitStableAcrossCalls) {
  Model m = Model::create(desk_options(), 12);
  Rng rng(13);
  for (auto& x : m.params().value("regressor.fc1.w").v) x = rng.uniform(-0.1, 0.1);
  const Image a = random_image(70, 90, 14), b = random_image(90, 70, 15);
  const ScaleRatio first = m.estimate(a, b);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(m.estimate(a, b).log2_value, first.log2_value);
}

TEST(Model, EagerMasksMatchGraphMasks) {
  Model m = Model::create(desk_options(), 16);
  Rng rng(17);
  Tensor<T> vol({4, 4, 16});
  for (auto& x : vol.v) x = rng.uniform(-1, 1);
  const auto [m1, m2] = covisibility_masks(vol, m.attention_params());

  Tape<T> tape;
  TapeBinding<T> bind(tape, m.params());
  auto c = tape.input(vol);
  auto g1 = tape.sigmoid(tape.conv2d(tape.channel_max(c), bind("attention.cab1.w"), bind("attention.cab1.b"), 1, 2));
  auto g2 =
      tape.sigmoid(tape.conv2d(tape.spatial_max_grid(c), bind("attention.cab2.w"), bind("attention.cab2.b"), 1, 2));
  EXPECT_EQ(m1.v, tape.val(g1).v);
  EXPECT_EQ(m2.v, tape.val(g2).v);
}

TEST(Model, ConcurrentInferenceIsConsistent) {
  Model m = Model::create(desk_options(), 18);
  Rng rng(19);
  for (auto& x : m.params().value("regressor.fc1.w").v) x = rng.uniform(-0.1, 0.1);
  const Image a = random_image(64, 64, 20), b = random_image(64, 64, 21);
  const double expect = m.estimate(a, b).log2_value;
  double r1 = 0, r2 = 0;
  std::thread t1([&] { r1 = m.estimate(a, b).log2_value; });
  std::thread t2([&] { r2 = m.estimate(a, b).log2_value; });
  t1.join();
  t2.join();
  EXPECT_EQ(r1, expect);
  EXPECT_EQ(r2, expect);
}

TEST(Model, RejectsTinyInputs) {
  Model m = Model::create(desk_options(), 22);
  EXPECT_THROW(m.estimate(Image(16, 64, 0.5f), Image(64, 64, 0.5f)), std::invalid_argument);
}

TEST(Model, InvalidOptionsRejected) {
  auto opts = desk_options();
  opts.input_resolution = 100;  // not divisible by 2 * stride
  EXPECT_THROW(Model::create(opts, 1), std::invalid_argument);
  opts = desk_options();
  opts.encoder.output_channels = 4;  // below the minimum channel count
  EXPECT_THROW(Model::create(opts, 1), std::invalid_argument);
}

TEST(Checkpoint, RoundTripIsExact) {
  Model m = Model::create(desk_options(), 23);
  Rng rng(24);
  for (auto& x : m.params().value("regressor.fc1.w").v) x = rng.uniform(-0.1, 0.1);
  const std::string path = testing::TempDir() + "roundtrip.ckpt";
  save_checkpoint(path, m, nullptr, 0.125);

  auto loaded = load_checkpoint<T>(path);
  EXPECT_EQ(loaded.model.input_resolution(), m.input_resolution());
  ASSERT_TRUE(loaded.final_loss.has_value());
  EXPECT_DOUBLE_EQ(*loaded.final_loss, 0.125);
  for (const auto& name : m.params().names()) {
    const auto& a = m.params().value(name);
    const auto& b = loaded.model.params().value(name);
    ASSERT_EQ(a.shape, b.shape) << name;
    ASSERT_EQ(a.v, b.v) << name;
  }
  const Image i1 = random_image(64, 64, 25), i2 = random_image(64, 64, 26);
  EXPECT_EQ(m.estimate(i1, i2).log2_value, loaded.model.estimate(i1, i2).log2_value);
  std::remove(path.c_str());
}

TEST(Checkpoint, RejectsGarbageFiles) {
  const std::string path = testing::TempDir() + "garbage.ckpt";
  {
    std::ofstream f(path);
    f << "not a checkpoint";
  }
  EXPECT_THROW(load_checkpoint<T>(path), std::runtime_error);
  std::remove(path.c_str());
}

TEST(Model, DeepEncoderVariantRuns) {
  Model::Options o;
  o.encoder.id = EncoderId::pretrained_deep;
  o.input_resolution = 64;
  o.regressor_conv_channels = 8;
  o.regressor_fc_width = 8;
  Model m = Model::create(o, 27);
  EXPECT_EQ(m.options().encoder.output_channels, 256);
  const Tensor<T> f = m.fused_features(random_image(64, 64, 28));
  EXPECT_EQ(f.dim(0), 4);
  EXPECT_EQ(f.dim(2), 256);
  EXPECT_DOUBLE_EQ(m.estimate(random_image(64, 64, 29), random_image(64, 64, 30)).value(), 1.0);
}

TEST(ModelGrad, HeadPathMatchesFiniteDifferences) {
  // gradient of the regressed log2 ratio w.r.t. both feature maps and the
  // attention filters, h=w=4, c=8
  auto opts = desk_options();
  opts.encoder.output_channels = 8;
  Model m = Model::create(opts, 31);
  Rng rng(32);
  for (auto& x : m.params().value("regressor.fc1.w").v) x = rng.uniform(-0.5, 0.5);
  m.params().value("regressor.fc1.b")[0] = 0.05;

  Tensor<T> f1({4, 4, 8}), f2({4, 4, 8});
  for (auto& x : f1.v) x = rng.uniform(-1, 1);
  for (auto& x : f2.v) x = rng.uniform(-1, 1);

  auto forward = [&](const Tensor<T>& a, const Tensor<T>& b, bool want_grads, Tensor<T>* ga, Tensor<T>* gb,
                     Tensor<T>* gw1) {
    Tape<T> tape;
    TapeBinding<T> bind(tape, m.params());
    auto va = tape.input(a), vb = tape.input(b);
    auto r = m.ratio_log2_graph(tape, bind, va, vb);
    if (want_grads) {
      m.params().zero_grads();
      tape.backward(r);
      tape.export_param_grads();
      *ga = tape.grad(va);
      *gb = tape.grad(vb);
      *gw1 = m.params().grad("attention.cab1.w");
    }
    return tape.val(r)[0];
  };

  Tensor<T> ga, gb, gw1;
  forward(f1, f2, true, &ga, &gb, &gw1);

  const double eps = 1e-6;
  auto check = [&](Tensor<T>& target, const Tensor<T>& analytic, const char* what) {
    for (int64_t i = 0; i < target.size(); i += 7) {  // sampled elements
      const double orig = target[i];
      target[i] = orig + eps;
      const double fp = forward(f1, f2, false, nullptr, nullptr, nullptr);
      target[i] = orig - eps;
      const double fm = forward(f1, f2, false, nullptr, nullptr, nullptr);
      target[i] = orig;
      const double fd = (fp - fm) / (2 * eps);
      ASSERT_LT(std::abs(fd - analytic[i]), 1e-4 * std::max(std::abs(fd), std::abs(analytic[i])) + 1e-7)
          << what << " element " << i;
    }
  };
  check(f1, ga, "f1");
  check(f2, gb, "f2");
  check(m.params().value("attention.cab1.w"), gw1, "cab1.w");
}
