#include "safe/errors.hpp"
#include "safe/localmodel.hpp"
#include "safe/metrics.hpp"

#include <doctest.h>

#include <random>

using namespace safe;

namespace {

struct Instance {
  Matrix x;
  std::vector<int> y;
  Matrix w;
  Vector b;
};

Instance random_instance(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Instance in;
  in.x = Matrix::NullaryExpr(5, 4, [&] { return g(rng); });
  in.w = Matrix::NullaryExpr(4, 3, [&] { return g(rng); });
  in.b = Vector::NullaryExpr(3, [&] { return g(rng); });
  std::uniform_int_distribution<int> label(0, 2);
  for (int i = 0; i < 5; ++i) in.y.push_back(label(rng));
  return in;
}

double rel_error(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); }

LocalLRModel zero_model(int features, int classes) {
  LocalLRModel m;
  m.weights = Matrix::Zero(features, classes);
  m.bias = Vector::Zero(classes);
  m.feature_mean = Vector::Zero(features);
  m.feature_scale = Vector::Ones(features);
  m.train_samples = 1;
  return m;
}

std::size_t exact_zeros(const Matrix& w) { return static_cast<std::size_t>((w.array() == 0.0).count()); }

}  // namespace

TEST_CASE("analytic gradient matches central differences") {
  const double h = 1e-5;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto in = random_instance(seed);
    const double reg = 0.3, l1 = 0.5;
    const auto grad = lr_smooth_gradient(in.x, in.y, in.w, in.b, reg, l1);
    for (Eigen::Index i = 0; i < in.w.rows(); ++i)
      for (Eigen::Index j = 0; j < in.w.cols(); ++j) {
        Matrix wp = in.w, wm = in.w;
        wp(i, j) += h;
        wm(i, j) -= h;
        const double fd = (lr_smooth_loss(in.x, in.y, wp, in.b, reg, l1) -
                           lr_smooth_loss(in.x, in.y, wm, in.b, reg, l1)) /
                          (2 * h);
        CHECK(rel_error(fd, grad.weights(i, j)) < 1e-4);
      }
    for (Eigen::Index j = 0; j < in.b.size(); ++j) {
      Vector bp = in.b, bm = in.b;
      bp(j) += h;
      bm(j) -= h;
      const double fd =
          (lr_smooth_loss(in.x, in.y, in.w, bp, reg, l1) - lr_smooth_loss(in.x, in.y, in.w, bm, reg, l1)) /
          (2 * h);
      CHECK(rel_error(fd, grad.bias(j)) < 1e-4);
    }
  }
}

TEST_CASE("objective is non-increasing") {
  for (Seed seed : {1u, 2u, 3u}) {
    const auto ds = generate_synthetic(120, 6, 3, 1.5, seed);
    LRConfig c;
    c.reg_strength = 0.01;
    const auto fit = fit_lr(ds, c);
    REQUIRE(fit.objective.size() >= 2);
    for (std::size_t k = 1; k < fit.objective.size(); ++k)
      CHECK(fit.objective[k] <= fit.objective[k - 1] + 1e-8);
  }
}

TEST_CASE("separable two-class data is fit perfectly") {
  const auto ds = generate_synthetic(200, 5, 2, 6.0, 4);
  const auto m = train_lr(ds, LRConfig{});
  CHECK(accuracy(predict_proba(m, ds.features), ds.labels) >= 0.99);
}

TEST_CASE("huge penalty drives weights to zero and predictions to the prior") {
  const auto ds = generate_synthetic(90, 4, 3, 3.0, 4);
  LRConfig c;
  c.reg_strength = 1e6;
  const auto m = train_lr(ds, c);
  CHECK(m.weights.cwiseAbs().maxCoeff() < 1e-3);
  const Matrix p = predict_proba(m, ds.features);
  // Balanced classes, unpenalized bias: the prior is uniform.
  CHECK((p.array() - 1.0 / 3.0).abs().maxCoeff() < 1e-3);
}

TEST_CASE("elastic-net endpoints") {
  const auto ds = generate_synthetic(200, 12, 3, 1.0, 6);
  LRConfig l2, l1;
  l2.reg_strength = l1.reg_strength = 0.05;
  l2.l1_ratio = 0.0;
  l1.l1_ratio = 1.0;
  const auto dense = train_lr(ds, l2);
  const auto sparse = train_lr(ds, l1);
  CHECK(exact_zeros(dense.weights) == 0);
  CHECK(exact_zeros(sparse.weights) >= exact_zeros(dense.weights));
  CHECK(exact_zeros(sparse.weights) > 0);
}

TEST_CASE("training is deterministic") {
  const auto ds = generate_synthetic(100, 5, 3, 2.0, 9);
  LRConfig c;
  c.seed = 5;
  CHECK(train_lr(ds, c, 2) == train_lr(ds, c, 2));
}

TEST_CASE("single-class shard yields a flagged constant predictor") {
  auto ds = generate_synthetic(30, 3, 3, 2.0, 1);
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.labels[i] == 2) rows.push_back(i);
  const auto only2 = ds.subset(rows);
  const auto m = train_lr(only2, LRConfig{}, 4);
  REQUIRE(m.degenerate_class.has_value());
  CHECK(*m.degenerate_class == 2);
  CHECK(m.institution_id == 4);
  const Matrix p = predict_proba(m, ds.features);
  CHECK(p.col(2).isOnes(0.0));
  CHECK(p.col(0).isZero(0.0));
}

TEST_CASE("empty input is rejected") {
  LabeledDataset empty;
  empty.features = Matrix(0, 3);
  empty.num_classes = 2;
  CHECK_THROWS_AS(train_lr(empty, LRConfig{}), ArgumentError);
}

TEST_CASE("predict_proba contract") {
  SUBCASE("zero model is uniform") {
    const Matrix p = predict_proba(zero_model(3, 4), Matrix::Random(6, 3));
    CHECK((p.array() - 0.25).abs().maxCoeff() < 1e-15);
  }
  SUBCASE("shifting all scores leaves probabilities unchanged") {
    auto m = zero_model(2, 3);
    m.weights << 1, -2, 0.5, 0.3, 0.1, -1;
    m.bias << 0.2, 0.1, -0.3;
    const Matrix x = Matrix::Random(4, 2);
    const Matrix p = predict_proba(m, x);
    m.bias.array() += 700.0;
    CHECK((predict_proba(m, x) - p).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("shape and normalization") {
    const auto ds = generate_synthetic(40, 5, 3, 2.0, 2);
    const auto m = train_lr(ds, LRConfig{});
    const Matrix p = predict_proba(m, ds.features.topRows(4));
    CHECK(p.rows() == 4);
    CHECK(p.cols() == 3);
    CHECK(((p.rowwise().sum().array() - 1.0).abs() < 1e-9).all());
  }
  SUBCASE("dimension mismatch") { CHECK_THROWS_AS(predict_proba(zero_model(3, 2), Matrix::Zero(2, 4)), ArgumentError); }
}

TEST_CASE("constant features do not break standardization") {
  auto ds = generate_synthetic(60, 3, 2, 3.0, 2);
  ds.features.col(1).setConstant(4.0);
  const auto m = train_lr(ds, LRConfig{});
  CHECK(m.feature_scale(1) == 1.0);
  CHECK(m.weights.allFinite());
}

TEST_CASE("LR config validation") {
  LRConfig c;
  c.l1_ratio = 1.5;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = LRConfig{};
  c.reg_strength = -1.0;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
  c = LRConfig{};
  c.tolerance = 0.0;
  CHECK_THROWS_AS(c.validate(), ArgumentError);
}
