#include "safe/errors.hpp"
#include "safe/localmodel.hpp"
#include "safe/metrics.hpp"
#include "safe/seed.hpp"
#include "safe/valuation.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

using namespace safe;

namespace {

UtilityTable table_of(int n, const std::function<double(Coalition)>& v) {
  UtilityTable t(n, Metric::accuracy);
  for (Coalition s = 1; s <= grand_coalition(n); ++s) t.set(s, v(s));
  return t;
}

UtilityTable random_table(int n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  return table_of(n, [&](Coalition) { return u(rng); });
}

// Factorial-weight form in long double, written independently of the library.
std::vector<double> shapley_oracle(const UtilityTable& t) {
  const int n = t.players();
  auto fact = [](int k) {
    long double f = 1;
    for (int i = 2; i <= k; ++i) f *= i;
    return f;
  };
  std::vector<double> phi(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    long double acc = 0;
    for (Coalition s = 0; s <= grand_coalition(n); ++s) {
      if (s >> i & 1) continue;
      const int k = std::popcount(s);
      const long double w = fact(k) * fact(n - k - 1) / fact(n);
      const long double without = s == 0 ? 0.0L : t.at(s);
      acc += w * (static_cast<long double>(t.at(s | Coalition{1} << i)) - without);
    }
    phi[static_cast<std::size_t>(i)] = static_cast<double>(acc);
  }
  return phi;
}

LocalLRModel constant_model(const std::vector<double>& probs, int features = 2) {
  LocalLRModel m;
  const auto c = static_cast<Eigen::Index>(probs.size());
  m.weights = Matrix::Zero(features, c);
  m.bias.resize(c);
  for (Eigen::Index k = 0; k < c; ++k) m.bias(k) = std::log(probs[static_cast<std::size_t>(k)]);
  m.feature_mean = Vector::Zero(features);
  m.feature_scale = Vector::Ones(features);
  m.train_samples = 1;
  return m;
}

struct Fixture {
  std::vector<LocalLRModel> models;
  LabeledDataset test;
};

Fixture trained_models(int n, Seed seed, std::size_t test_size = 200) {
  const auto ds = generate_synthetic(150 * static_cast<std::size_t>(n) + test_size, 6, 4, 1.2, seed);
  SplitSpec s;
  s.num_institutions = n;
  s.seed = seed;
  s.test_fraction = static_cast<double>(test_size) / static_cast<double>(ds.size());
  auto r = split(ds, s);
  Fixture f;
  f.test = r.test_set;
  for (auto& sh : r.shards) f.models.push_back(train_lr(sh.data, LRConfig{}, sh.institution_id));
  return f;
}

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

}  // namespace

TEST_CASE("utility table bookkeeping") {
  UtilityTable t(3, Metric::accuracy);
  CHECK(t.size() == 8);
  CHECK(t.at(0) == 0.0);
  CHECK(!t.contains(5));
  CHECK(t.first_missing() == Coalition{1});
  CHECK_THROWS_AS(t.set(8, 0.5), ArgumentError);
  CHECK_THROWS_AS(t.set(3, 1.5), ArgumentError);
  CHECK_THROWS_AS(t.set(0, 0.2), ArgumentError);
  t.set(5, 0.25);
  CHECK(t.find(5) == 0.25);
  try {
    t.at(6);
    FAIL("expected ArgumentError");
  } catch (const ArgumentError& e) {
    CHECK(std::string(e.what()).find("6") != std::string::npos);
  }
}

TEST_CASE("exact Shapley on closed-form games") {
  SUBCASE("single player") {
    const auto phi = exact_shapley(table_of(1, [](Coalition) { return 0.8; })).values;
    CHECK(phi == std::vector<double>{0.8});
  }
  SUBCASE("additive game") {
    const std::vector<double> c{0.1, 0.2, 0.3};
    const auto t = table_of(3, [&](Coalition s) {
      double v = 0;
      for (int i = 0; i < 3; ++i)
        if (s >> i & 1) v += c[static_cast<std::size_t>(i)];
      return v;
    });
    const auto phi = exact_shapley(t).values;
    for (int i = 0; i < 3; ++i) CHECK(std::abs(phi[static_cast<std::size_t>(i)] - c[static_cast<std::size_t>(i)]) < 1e-12);
  }
  SUBCASE("two symmetric players") {
    const auto t = table_of(2, [](Coalition s) { return s == 3 ? 0.8 : 0.5; });
    for (const auto& phi : {exact_shapley(t).values, permutation_shapley_exact(t).values}) {
      CHECK(phi[0] == doctest::Approx(0.4).epsilon(1e-14));
      CHECK(phi[1] == doctest::Approx(0.4).epsilon(1e-14));
    }
  }
  SUBCASE("unanimity game") {
    const auto t = table_of(3, [](Coalition s) { return s == 7 ? 1.0 : 0.0; });
    for (double x : permutation_shapley_exact(t).values) CHECK(std::abs(x - 1.0 / 3.0) < 1e-15);
    for (double x : exact_shapley(t).values) CHECK(std::abs(x - 1.0 / 3.0) < 1e-15);
  }
  SUBCASE("null player gets exactly zero") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> base(8);
    for (auto& b : base) b = u(rng);
    base[0] = 0;
    // Player 3 never changes the utility.
    const auto t = table_of(4, [&](Coalition s) {
      const double v = base[s & 7];
      return s == 8 ? 0.0 : v;
    });
    CHECK(exact_shapley(t).values[3] == 0.0);
  }
}

TEST_CASE("exact Shapley matches the factorial-weight oracle") {
  std::mt19937_64 rng(11);
  for (int n = 1; n <= 8; ++n) {
    const auto t = random_table(n, rng);
    const auto phi = exact_shapley(t);
    const auto oracle = shapley_oracle(t);
    for (int i = 0; i < n; ++i) CHECK(std::abs(phi.values[static_cast<std::size_t>(i)] - oracle[static_cast<std::size_t>(i)]) < 1e-12);
    CHECK(std::abs(sum(phi.values) - t.at(grand_coalition(n))) < 1e-12);
    CHECK(phi.grand_utility == t.at(grand_coalition(n)));
  }
}

TEST_CASE("dual forms agree on random tables") {
  std::mt19937_64 rng(12);
  for (int n = 2; n <= 7; ++n)
    for (int trial = 0; trial < 20; ++trial) {
      const auto t = random_table(n, rng);
      const auto a = exact_shapley(t).values;
      const auto b = permutation_shapley_exact(t).values;
      for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-12);
    }
}

TEST_CASE("exact Shapley errors") {
  UtilityTable t(3, Metric::accuracy);
  t.set(1, 0.5);
  try {
    exact_shapley(t);
    FAIL("expected ArgumentError");
  } catch (const ArgumentError& e) {
    CHECK(std::string(e.what()).find("2") != std::string::npos);
  }
  std::mt19937_64 rng(1);
  CHECK_THROWS_AS(permutation_shapley_exact(random_table(11, rng)), CapacityError);
  ValuationLimits tight;
  tight.max_permutation_players = 3;
  CHECK_THROWS_AS(permutation_shapley_exact(random_table(4, rng), tight), CapacityError);
}

TEST_CASE("ensemble_predict averages member probabilities") {
  const Matrix x = Matrix::Random(3, 2);
  SUBCASE("single model") {
    const auto f = trained_models(1, 3);
    const Matrix test = f.test.features.topRows(10);
    CHECK(ensemble_predict(f.models, test) == predict_proba(f.models[0], test));
  }
  SUBCASE("hand arithmetic") {
    std::vector<LocalLRModel> m{constant_model({0.6, 0.4}), constant_model({0.2, 0.8})};
    const Matrix p = ensemble_predict(m, x);
    CHECK(p(1, 0) == doctest::Approx(0.4).epsilon(1e-14));
    CHECK(p(1, 1) == doctest::Approx(0.6).epsilon(1e-14));
  }
  SUBCASE("identical members") {
    const auto one = constant_model({0.3, 0.3, 0.4});
    std::vector<LocalLRModel> many(5, one);
    CHECK((ensemble_predict(many, x) - predict_proba(one, x)).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("weighted option") {
    auto a = constant_model({0.6, 0.4});
    auto b = constant_model({0.2, 0.8});
    a.train_samples = 3;
    b.train_samples = 1;
    std::vector<LocalLRModel> m{a, b};
    CHECK(ensemble_predict(m, x, true)(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
  }
  SUBCASE("empty") { CHECK_THROWS_AS(ensemble_predict(std::span<const LocalLRModel>{}, x), ArgumentError); }
}

TEST_CASE("ensemble rows sum to one for every coalition size") {
  const auto f = trained_models(6, 21);
  for (Coalition s = 1; s <= grand_coalition(6); ++s) {
    std::vector<LocalLRModel> members;
    for (int i = 0; i < 6; ++i)
      if (s >> i & 1) members.push_back(f.models[static_cast<std::size_t>(i)]);
    const Matrix p = ensemble_predict(members, f.test.features);
    REQUIRE(((p.rowwise().sum().array() - 1.0).abs() < 1e-9).all());
  }
}

TEST_CASE("utility definitions") {
  const auto f = trained_models(3, 4);
  CHECK(utility(0, f.models, f.test, Metric::accuracy) == 0.0);

  // A model that reproduces the labels through a one-hot feature.
  LabeledDataset test;
  test.num_classes = 3;
  test.labels = {0, 1, 2, 1};
  test.features = Matrix::Zero(4, 3);
  for (int i = 0; i < 4; ++i) test.features(i, test.labels[static_cast<std::size_t>(i)]) = 1.0;
  LocalLRModel oracle;
  oracle.weights = 10.0 * Matrix::Identity(3, 3);
  oracle.bias = Vector::Zero(3);
  oracle.feature_mean = Vector::Zero(3);
  oracle.feature_scale = Vector::Ones(3);
  oracle.train_samples = 1;
  std::vector<LocalLRModel> one{oracle};
  CHECK(utility(1, one, test, Metric::accuracy) == 1.0);
  CHECK(utility(1, one, test, Metric::macro_auroc) == 1.0);

  std::vector<LocalLRModel> flat{constant_model({1.0 / 3, 1.0 / 3, 1.0 / 3}, 3)};
  CHECK(utility(1, flat, test, Metric::macro_auroc) == 0.5);
  CHECK_THROWS_AS(utility(2, one, test, Metric::accuracy), ArgumentError);
}

TEST_CASE("complete table evaluates every coalition identically on every path") {
  const auto f = trained_models(5, 6);
  for (auto metric : {Metric::accuracy, Metric::macro_auroc}) {
    const CoalitionEvaluator eval(f.models, f.test, metric);
    const auto serial = eval.complete_table(1);
    CHECK(serial.complete());
    CHECK(serial.size() == 32);
    const auto parallel = eval.complete_table(8);
    for (Coalition s = 0; s < 32; ++s) {
      REQUIRE(serial.at(s) == parallel.at(s));
      REQUIRE(serial.at(s) == eval.utility(s));
      REQUIRE(serial.at(s) == utility(s, f.models, f.test, metric));
    }
  }
  const auto three = trained_models(3, 6);
  CHECK(complete_utility_table(three.models, three.test, Metric::accuracy, 2).size() == 8);
}

TEST_CASE("complete table respects the player cap") {
  const auto f = trained_models(5, 6);
  ValuationLimits limits;
  limits.max_ensemble_players = 4;
  try {
    complete_utility_table(f.models, f.test, Metric::accuracy, 1, limits);
    FAIL("expected CapacityError");
  } catch (const CapacityError& e) {
    CHECK(std::string(e.what()).find("TMC") != std::string::npos);
  }
}

TEST_CASE("safe_shapley: efficiency and symmetry for duplicate members") {
  auto f = trained_models(3, 8);
  std::vector<LocalLRModel> models{f.models[0], f.models[1], f.models[1], f.models[2], f.models[1]};
  const auto phi = safe_shapley(models, f.test, Metric::accuracy, 2);
  CHECK(phi.method == ShapleyMethod::exact_ensemble);
  CHECK(phi.values[1] == phi.values[2]);
  CHECK(phi.values[1] == phi.values[4]);
  CHECK(std::abs(sum(phi.values) - utility(31, models, f.test, Metric::accuracy)) < 1e-9);

  std::vector<LocalLRModel> same(5, f.models[0]);
  const auto eq = safe_shapley(same, f.test, Metric::macro_auroc, 1);
  for (double x : eq.values) CHECK(std::abs(x - eq.values[0]) < 1e-12);
}

TEST_CASE("exact_shapley_retrain") {
  const auto ds = generate_synthetic(400, 4, 3, 3.0, 2);
  SplitSpec s;
  s.num_institutions = 2;
  s.seed = 2;
  const auto r = split(ds, s);
  FedConfig c;
  c.rounds = 2;
  c.local_epochs = 2;
  c.hidden_dim = 8;
  c.seed = 9;

  SUBCASE("one institution") {
    std::vector<LabeledDataset> one{r.shards[0].data};
    const auto phi = exact_shapley_retrain(one, r.test_set, c, Metric::accuracy);
    FedConfig coalition = c;
    coalition.seed = derive_seed(c.seed, "retrain", {1});
    const auto g = train_federated(one, coalition);
    CHECK(phi.values[0] == accuracy(predict_proba(g, r.test_set.features), r.test_set.labels));
    CHECK(phi.method == ShapleyMethod::exact_retrain);
  }
  SUBCASE("duplicate shards get close values") {
    std::vector<LabeledDataset> twins{r.shards[0].data, r.shards[0].data};
    const auto phi = exact_shapley_retrain(twins, r.test_set, c, Metric::accuracy);
    CHECK(std::abs(phi.values[0] - phi.values[1]) < 0.05);
    CHECK(std::abs(sum(phi.values) - phi.grand_utility) < 1e-9);
  }
  SUBCASE("parallel table equals serial") {
    std::vector<LabeledDataset> shards{r.shards[0].data, r.shards[1].data};
    const auto a = retrain_utility_table(shards, r.test_set, c, Metric::accuracy);
    c.parallelism = 3;
    const auto b = retrain_utility_table(shards, r.test_set, c, Metric::accuracy);
    for (Coalition m = 0; m < 4; ++m) CHECK(a.at(m) == b.at(m));
  }
  SUBCASE("cap") {
    std::vector<LabeledDataset> many(9, r.shards[0].data);
    CHECK_THROWS_AS(exact_shapley_retrain(many, r.test_set, c, Metric::accuracy), CapacityError);
  }
}

TEST_CASE("TMC exhaustive mode equals the permutation oracle") {
  const auto f = trained_models(4, 13);
  const CoalitionEvaluator eval(f.models, f.test, Metric::accuracy);
  TmcOptions o;
  o.truncation_tolerance = 0.0;
  o.exhaustive = true;
  const auto tmc = tmc_shapley(eval, o);
  CHECK(tmc.permutations_used == 24);
  const auto exact = permutation_shapley_exact(eval.complete_table(1));
  for (std::size_t i = 0; i < 4; ++i) CHECK(std::abs(tmc.values[i] - exact.values[i]) < 1e-12);
}

TEST_CASE("TMC is deterministic per seed and respects its budget") {
  const auto f = trained_models(5, 14);
  const CoalitionEvaluator eval(f.models, f.test, Metric::accuracy);
  TmcOptions o;
  o.seed = 3;
  o.max_permutations = 150;
  const auto a = tmc_shapley(eval, o);
  const auto b = tmc_shapley(eval, o);
  CHECK(a.values == b.values);
  CHECK(a.permutations_used == b.permutations_used);
  CHECK(a.permutations_used <= 150);
  CHECK(a.permutations_used > 0);
  CHECK(a.method == ShapleyMethod::tmc);
  o.seed = 4;
  CHECK(tmc_shapley(eval, o).values != a.values);
}

TEST_CASE("TMC without truncation is unbiased") {
  const auto f = trained_models(5, 15);
  const CoalitionEvaluator eval(f.models, f.test, Metric::accuracy);
  const auto exact = exact_shapley(eval.complete_table(1)).values;
  UtilityCache cache;
  std::vector<double> mean(5, 0.0);
  for (Seed seed = 0; seed < 50; ++seed) {
    TmcOptions o;
    o.seed = seed;
    o.truncation_tolerance = 0.0;
    o.max_permutations = 200;
    o.convergence_tolerance = 1e-300;
    const auto v = tmc_shapley(eval, o, {}, &cache);
    REQUIRE(v.permutations_used == 200);
    for (std::size_t i = 0; i < 5; ++i) mean[i] += v.values[i] / 50.0;
  }
  for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(mean[i] - exact[i]) < 0.01);
}

TEST_CASE("TMC truncation skips the tail of a permutation") {
  const auto f = trained_models(4, 16);
  const CoalitionEvaluator eval(f.models, f.test, Metric::accuracy);
  TmcOptions o;
  o.truncation_tolerance = 2.0;  // every marginal is truncated
  o.max_permutations = 10;
  for (double x : tmc_shapley(eval, o).values) CHECK(x == 0.0);
}

TEST_CASE("TMC options validation") {
  TmcOptions o;
  o.truncation_tolerance = -1.0;
  CHECK_THROWS_AS(o.validate(), ArgumentError);
  o = TmcOptions{};
  o.convergence_window = 0;
  CHECK_THROWS_AS(o.validate(), ArgumentError);
  o = TmcOptions{};
  o.max_permutations = 0;
  CHECK_THROWS_AS(o.validate(), ArgumentError);
}

TEST_CASE("cached utilities are bit-identical to recomputation under contention") {
  const auto f = trained_models(6, 17);
  const CoalitionEvaluator eval(f.models, f.test, Metric::macro_auroc);
  UtilityCache cache;
  const std::function<double(Coalition)> compute = [&](Coalition s) { return eval.utility(s); };
  {
    std::vector<std::jthread> threads;
    for (int t = 0; t < 4; ++t)
      threads.emplace_back([&, t] {
        for (Coalition s = 1; s < 64; ++s) cache.get_or_compute((s * (t + 1)) % 63 + 1, compute);
      });
  }
  CHECK(cache.size() == 63);
  for (Coalition s = 1; s < 64; ++s) CHECK(*cache.find(s) == eval.utility(s));
}

TEST_CASE("cosine similarity") {
  const std::vector<double> a{0.197, 0.197, 0.196, 0.196, 0.196};
  const std::vector<double> b{0.196, 0.197, 0.196, 0.197, 0.196};
  CHECK(cosine_similarity(a, a) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(cosine_similarity(a, b) >= 0.999);
  const std::vector<double> x{1, 0}, y{0, 1}, z{0, 0};
  CHECK(cosine_similarity(x, y) == 0.0);
  CHECK_THROWS_AS(cosine_similarity(x, z), NumericError);
  CHECK_THROWS_AS(cosine_similarity(a, x), ArgumentError);
  CHECK(l2_distance(x, y) == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("method names round-trip") {
  for (auto m : {ShapleyMethod::exact_ensemble, ShapleyMethod::exact_retrain, ShapleyMethod::tmc,
                 ShapleyMethod::permutation_exact})
    CHECK(shapley_method_from_string(to_string(m)) == m);
  CHECK_THROWS_AS(shapley_method_from_string("banzhaf"), ArgumentError);
}
