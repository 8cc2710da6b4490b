#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "ssd/evaluation.hpp"
#include "ssd/training.hpp"
#include "test_support.hpp"

using namespace ssd;

TEST(Entropy, KnownDistributions) {
  const std::vector<double> uniform4(4, 0.25);
  EXPECT_NEAR(entropy(uniform4), std::log(4.0), 1e-15);
  EXPECT_NEAR(entropy(uniform4), 1.386294, 1e-6);
  EXPECT_EQ(entropy(std::vector<double>{0.0, 1.0, 0.0}), 0.0);
  EXPECT_NEAR(entropy(std::vector<double>{0.5, 0.5}), 0.693147, 1e-6);
}

TEST(Entropy, ZeroParametersGiveMaximumEntropy) {
  const ModelSpec spec{{3, 5, 6}};
  const ParameterVector zero{ParameterLayout::for_spec(spec), std::vector<double>(ParameterLayout::for_spec(spec).total(), 0.0)};
  EXPECT_NEAR(output_entropy(spec, zero, std::vector<double>{1.0, 2.0, 3.0}), std::log(6.0), 1e-15);
}

TEST(EntropyProperty, BoundedByLogClassCount) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t classes = 2 + rng.index(9);
    const ModelSpec spec{{3, 1 + rng.index(10), classes}, Activation::relu, rng.next_u64()};
    auto theta = init_model(spec);
    const double spread = std::exp(rng.uniform(-2.0, 4.0));
    for (double& v : theta.values) v *= spread;
    std::vector<double> x(3);
    for (double& v : x) v = 3.0 * rng.normal();
    const double h = output_entropy(spec, theta, x);
    ASSERT_GE(h, 0.0);
    ASSERT_LE(h, std::log(static_cast<double>(classes)) + 1e-12);
  }
}

namespace {

MiaConfig quick() {
  MiaConfig c;
  c.iterations = 500;
  return c;
}

}  // namespace

TEST(Logistic, SeparatedClustersAreClassifiedPerfectly) {
  Rng rng(2);
  std::vector<double> x;
  std::vector<int> y;
  for (int i = 0; i < 100; ++i) {
    x.push_back(rng.uniform(0.0, 1.0));
    y.push_back(1);
    x.push_back(rng.uniform(3.0, 4.0));
    y.push_back(0);
  }
  const auto m = fit_logistic_1d(x, y, quick());
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(m.probability(x[i]) > 0.5, y[i] == 1) << x[i];
  EXPECT_GT(m.boundary(), 1.0);
  EXPECT_LT(m.boundary(), 3.0);
}

TEST(Logistic, FlippedLabelsFlipTheSign) {
  Rng rng(3);
  std::vector<double> x;
  std::vector<int> y, flipped;
  for (int i = 0; i < 60; ++i) {
    x.push_back(rng.normal() + (i % 2 ? 1.0 : -1.0));
    y.push_back(i % 2);
    flipped.push_back(1 - i % 2);
  }
  for (std::uint32_t iterations : {1u, 10u, 300u}) {
    MiaConfig c = quick();
    c.iterations = iterations;
    const auto a = fit_logistic_1d(x, y, c);
    const auto b = fit_logistic_1d(x, flipped, c);
    EXPECT_NEAR(b.weight, -a.weight, 1e-12 * std::abs(a.weight));
    EXPECT_NEAR(b.bias, -a.bias, 1e-12);
    EXPECT_NEAR(b.boundary(), a.boundary(), 1e-9);
  }
}

TEST(Logistic, UntrainedModelSaysOneHalf) {
  const LogisticModel m;
  for (double x : {-100.0, 0.0, 3.5, 1e6}) EXPECT_EQ(m.probability(x), 0.5);
  EXPECT_TRUE(std::isnan(m.boundary()));
}

TEST(Logistic, Errors) {
  const std::vector<double> x{1.0, 2.0};
  expect_error(Errc::degenerate, [&] { fit_logistic_1d(x, std::vector<int>{1, 1}, quick()); });
  expect_error(Errc::length_mismatch, [&] { fit_logistic_1d(x, std::vector<int>{1}, quick()); });
  expect_error(Errc::invalid_argument, [&] { fit_logistic_1d(x, std::vector<int>{0, 2}, quick()); });
  MiaConfig bad = quick();
  bad.iterations = 0;
  expect_error(Errc::invalid_argument, [&] { fit_logistic_1d(x, std::vector<int>{0, 1}, bad); });
  bad = quick();
  bad.members_per_class = 0;
  expect_error(Errc::invalid_argument, [&] { bad.validate(); });
}

TEST(Mia, ConstantEntropyIsFlaggedDegenerate) {
  const std::vector<double> seen(50, std::log(4.0)), unseen(50, std::log(4.0)), forget(10, std::log(4.0));
  const auto r = mia_from_entropies(seen, unseen, forget, quick());
  EXPECT_TRUE(r.degenerate);
  EXPECT_NEAR(r.attack_train_accuracy, 50.0, 1e-12);
  EXPECT_GE(r.mia_score, 0.0);
  EXPECT_LE(r.mia_score, 100.0);
  EXPECT_EQ(r.attack_members, 100u);
}

TEST(Mia, UniformModelOnRealSplit) {
  const auto ds = synthesize_blobs({3, 20, 4, 5.0, 1, std::nullopt});
  const auto test = synthesize_blobs({3, 10, 4, 5.0, 2, std::nullopt});
  const ModelSpec spec{{4, 8, 3}};
  const ParameterVector zero{ParameterLayout::for_spec(spec), std::vector<double>(ParameterLayout::for_spec(spec).total(), 0.0)};
  const auto r = mia(spec, zero, ds, make_split(ds, FullClass{0}), test, quick());
  EXPECT_TRUE(r.degenerate);
  EXPECT_NEAR(r.attack_train_accuracy, 50.0, 1e-12);
}

TEST(Mia, ForgetEntropiesFarAboveTheBoundaryScoreZero) {
  Rng rng(4);
  std::vector<double> seen, unseen, forget;
  for (int i = 0; i < 100; ++i) {
    seen.push_back(rng.uniform(0.0, 0.1));
    unseen.push_back(rng.uniform(0.5, 0.7));
  }
  for (int i = 0; i < 20; ++i) forget.push_back(rng.uniform(1.5, 2.0));
  const auto r = mia_from_entropies(seen, unseen, forget, quick());
  EXPECT_EQ(r.mia_score, 0.0);
  EXPECT_FALSE(r.degenerate);
  EXPECT_EQ(r.attack_train_accuracy, 100.0);
  // and forget rows that look like training rows score 100
  std::vector<double> familiar(20, 0.01);
  EXPECT_EQ(mia_from_entropies(seen, unseen, familiar, quick()).mia_score, 100.0);
}

TEST(Mia, Errors) {
  const std::vector<double> some{0.1, 0.2};
  expect_error(Errc::empty_input, [&] { mia_from_entropies(some, some, {}, quick()); });
  expect_error(Errc::degenerate, [&] { mia_from_entropies({}, some, some, quick()); });
  const auto ds = synthesize_blobs({2, 10, 2, 5.0, 1, std::nullopt});
  const ModelSpec spec{{2, 2}};
  auto split = make_split(ds, FullClass{0});
  split.forget_indices.clear();
  expect_error(Errc::empty_input, [&] { mia(spec, init_model(spec), ds, split, ds, quick()); });
}

namespace {

struct TrainedSetup {
  Dataset ds = synthesize_blobs({4, 50, 6, 6.0, 7, std::nullopt});
  Dataset test = synthesize_blobs({4, 50, 6, 6.0, 8, std::nullopt});
  ModelSpec spec{{6, 32, 32, 4}, Activation::relu, 9};
  ForgetSplit split = make_split(ds, FullClass{1});
  TrainConfig cfg = [] {
    TrainConfig c;
    c.epochs = 20;
    c.learning_rate = 0.02;
    c.shuffle_seed = 10;
    return c;
  }();
};

}  // namespace

TEST(Mia, DeterministicGivenSeed) {
  TrainedSetup s;
  const auto theta = train(s.spec, init_model(s.spec), s.ds, all_indices(s.ds), s.cfg).params;
  MiaConfig c = quick();
  c.attack_seed = 11;
  c.members_per_class = 60;
  const auto a = mia(s.spec, theta, s.ds, s.split, s.test, c);
  const auto b = mia(s.spec, theta, s.ds, s.split, s.test, c);
  EXPECT_EQ(a.mia_score, b.mia_score);
  EXPECT_EQ(a.attack_train_accuracy, b.attack_train_accuracy);
  EXPECT_TRUE(bit_equal({a.threshold_entropy}, {b.threshold_entropy}));
  EXPECT_EQ(a.attack_members, 120u);
}

TEST(Mia, BaselineScoresAboveRetrain) {
  TrainedSetup s;
  const auto baseline = train(s.spec, init_model(s.spec), s.ds, all_indices(s.ds), s.cfg).params;
  const auto retrained = retrain_baseline(s.spec, s.ds, s.split, s.cfg).params;
  MiaConfig c = quick();
  c.attack_seed = 12;
  const double base = mia(s.spec, baseline, s.ds, s.split, s.test, c).mia_score;
  const double retrain = mia(s.spec, retrained, s.ds, s.split, s.test, c).mia_score;
  EXPECT_GT(base, retrain);
}
