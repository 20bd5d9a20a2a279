#include <gtest/gtest.h>

#include <cmath>

#include "oat/pipeline.hpp"

namespace {

oat::ScanConfig scan16() {
  oat::ScanConfig c;
  c.image_size = 16;
  c.pixel_size = 8 * c.pixel_size;
  c.rng_seed = 3;
  return c;
}

oat::DatasetSpec spec(std::size_t n_train) {
  oat::DatasetSpec s;
  s.n_train = n_train;
  s.n_val = 2;
  s.n_test = 3;
  s.seed = 17;
  return s;
}

struct Tiny {
  oat::CipConfig cip;
  oat::DenoiserConfig den;
  Tiny() {
    cip.input_dim = 16;
    cip.hidden = {8, 8, 4};
    den.patch_size = 8;
    den.base_channels = 4;
    den.n_scales = 2;
    den.resnet_blocks = 1;
    den.attention_heads = 2;
    den.cond_tokens = 4;
    den.cond_token_dim = 4;
    den.time_embed_dim = 8;
    den.norm_groups = 2;
  }
};

TEST(Dataset, DeterministicAndSplitIndependent) {
  const auto a = oat::synthesize_dataset(spec(4), scan16());
  EXPECT_EQ(a, oat::synthesize_dataset(spec(4), scan16()));
  const auto b = oat::synthesize_dataset(spec(6), scan16());
  EXPECT_EQ(a.test, b.test);
  EXPECT_EQ(a.train[3], b.train[3]);
  for (const auto& s : a.train) {
    EXPECT_TRUE(s.das.valid());
    EXPECT_GE(s.snr_db, 35.0);
    EXPECT_LE(s.snr_db, 75.0);
  }
  auto bad = spec(1);
  bad.snr_min_db = 80;
  EXPECT_THROW(oat::synthesize_dataset(bad, scan16()), oat::ConfigError);
}

TEST(Dataset, SubpatchVectorsForConditioningEncoder) {
  const auto d = oat::synthesize_dataset(spec(2), scan16());
  const Tiny t;
  const auto v = oat::cip_training_vectors(d.train, t.cip);
  ASSERT_EQ(v.size(), 2u * 16u);
  EXPECT_EQ(v[0].size(), 16u);
  EXPECT_EQ(v[0][0], d.train[0].das.at(0, 0));
  EXPECT_EQ(v[1][0], d.train[0].das.at(0, 4));
}

TEST(Space, DiffusionMappingAndPatchAssembly) {
  EXPECT_EQ(oat::to_diffusion_space(0.0), -1.0);
  EXPECT_EQ(oat::to_diffusion_space(1.0), 1.0);
  EXPECT_EQ(oat::from_diffusion_space(3.0), 1.0);
  EXPECT_EQ(oat::from_diffusion_space(0.0), 0.5);
  oat::Image img(8, 8);
  for (std::size_t k = 0; k < 64; ++k) img.data[k] = static_cast<double>(k) / 64.0;
  const auto x = oat::detail::stack_quadrants<double>({&img}, true);
  EXPECT_EQ(x.shape(), (oat::nn::Shape{4, 1, 4, 4}));
  const auto back = oat::patches_to_images(x);
  ASSERT_EQ(back.size(), 1u);
  for (std::size_t k = 0; k < 64; ++k) EXPECT_NEAR(back[0].data[k], img.data[k], 1e-15);
}

TEST(Sampler, AlgebraicOracleIsAFixedPoint) {
  const auto sch = oat::diffusion::make_schedule(1000, 1e-4, 0.02);
  oat::Rng rng(4);
  std::vector<double> target(32);
  for (double& v : target) v = rng.uniform(-1.0, 1.0);
  const auto oracle = [&](const oat::nn::Tensor<double>& x, int t) {
    const double a = sch.alpha_bar_at(t);
    oat::nn::Tensor<double> e(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) e.data()[i] = (x.data()[i] - std::sqrt(a) * target[i]) / std::sqrt(1 - a);
    return e;
  };
  for (int nis : {1, 5, 50})
    for (double eta : {0.0, 1.0}) {
      const auto x0 = oat::sample_ddim<double>({2, 1, 4, 4}, oracle, sch, nis, eta, oat::Rng(9));
      double err = 0.0;
      for (std::size_t i = 0; i < 32; ++i) err = std::max(err, std::abs(x0.data()[i] - target[i]));
      EXPECT_LE(err, 1e-6) << "nis " << nis << " eta " << eta;
    }
}

TEST(Sampler, ImpliedCleanEstimateIsClipped) {
  const auto sch = oat::diffusion::make_schedule(100, 1e-3, 0.05);
  const std::vector<double> x{0.3, -0.2, 0.1};
  std::vector<double> e{-5.0, 4.0, 0.05};
  oat::clip_implied_x0<double>(x, e, 60, sch);
  const double a = sch.alpha_bar_at(60);
  const auto implied = [&](std::size_t i) { return (x[i] - std::sqrt(1 - a) * e[i]) / std::sqrt(a); };
  EXPECT_NEAR(implied(0), 1.0, 1e-12);
  EXPECT_NEAR(implied(1), -1.0, 1e-12);
  EXPECT_EQ(e[2], 0.05);
}

TEST(Training, ShortRunIsDeterministicAndLeavesEncoderFrozen) {
  const auto data = oat::synthesize_dataset(spec(8), scan16());
  const Tiny t;
  oat::CipTrainConfig ct;
  ct.epochs = 2;
  ct.lr = 1e-3;
  ct.seed = 1;
  auto cip = oat::train_cip<float>(oat::cip_training_vectors(data.train, t.cip), t.cip, ct).encoder;
  const auto sch = oat::diffusion::make_schedule(100, 1e-3, 0.05);
  oat::TrainConfig tc;
  tc.lr = 1e-3;
  tc.epochs = 10;
  tc.max_steps = 6;
  tc.batch = 8;
  tc.seed = 2;
  tc.val_every = 3;
  tc.val_count = 1;
  tc.val_nis = 2;

  const auto run = [&] {
    oat::Rng init(5);
    oat::Denoiser<float> d(t.den, init);
    const auto cip_hash = cip.params().hash();
    const auto rep = oat::train_diffusion(data, d, cip, sch, tc);
    EXPECT_EQ(cip.params().hash(), cip_hash);
    return std::make_pair(rep, d.params().hash());
  };
  const auto [r1, h1] = run();
  const auto [r2, h2] = run();
  EXPECT_EQ(h1, h2);
  EXPECT_EQ(r1.train_losses, r2.train_losses);
  EXPECT_EQ(r1.steps, 6);
  EXPECT_EQ(r1.train_losses.size(), 6u);
  EXPECT_TRUE(r1.best_step == 3 || r1.best_step == 6);
  std::size_t val_rows = 0;
  for (const auto& p : r1.curve) val_rows += p.split == "val_psnr";
  EXPECT_EQ(val_rows, 2u);
  EXPECT_EQ(oat::curve_csv(r1.curve).substr(0, 16), "step,loss,split\n");
}

TEST(Training, InferenceProducesValidImage) {
  const auto data = oat::synthesize_dataset(spec(2), scan16());
  const Tiny t;
  oat::Rng init(6);
  oat::CipEncoder<float> cip(t.cip, init);
  oat::Denoiser<float> d(t.den, init);
  const auto sch = oat::diffusion::make_schedule(50, 1e-3, 0.05);
  oat::InferOptions o;
  o.nis = 5;
  o.seed = 3;
  const auto a = oat::infer_image(data.test[0].das, d, cip, sch, o);
  EXPECT_TRUE(a.valid());
  EXPECT_EQ(a, oat::infer_image(data.test[0].das, d, cip, sch, o));
  EXPECT_THROW(oat::infer_image(oat::Image(32, 32), d, cip, sch, o), oat::DataError);
}

TEST(Training, BaselineRegressionLowersLoss) {
  const auto data = oat::synthesize_dataset(spec(16), scan16());
  oat::BaselineConfig bc;
  bc.image_size = 16;
  bc.base_channels = 4;
  bc.n_scales = 2;
  bc.resnet_blocks = 1;
  bc.norm_groups = 2;
  oat::Rng init(7);
  oat::BaselineUNet<float> net(bc, init);
  oat::TrainConfig tc;
  tc.lr = 3e-3;
  tc.epochs = 30;
  tc.batch = 16;
  tc.seed = 4;
  const auto rep = oat::train_baseline(data.train, net, tc);
  ASSERT_EQ(rep.train_losses.size(), 120u);
  double head = 0, tail = 0;
  for (int i = 0; i < 10; ++i) {
    head += rep.train_losses[i];
    tail += rep.train_losses[rep.train_losses.size() - 1 - i];
  }
  EXPECT_LT(tail, 0.5 * head);
  EXPECT_TRUE(oat::baseline_reconstruct(data.test[0].das, net).valid());
}

}  // namespace
