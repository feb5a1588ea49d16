#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <set>

#include "framecast/vocabulary.hpp"
#include "test_util.hpp"

using namespace framecast;

TEST_CASE("generalized states: backward differences, first frame dropped") {
  std::vector<std::vector<double>> mu{{0, 0}, {1, 2}, {3, 3}};
  auto gs = build_generalized_states(mu);
  REQUIRE(gs.size() == 2);
  CHECK(gs[0].mu == std::vector<double>{1, 2});
  CHECK(gs[0].mu_dot == std::vector<double>{1, 2});
  CHECK(gs[1].mu == std::vector<double>{3, 3});
  CHECK(gs[1].mu_dot == std::vector<double>{2, 1});

  CHECK_THROWS_AS(build_generalized_states({{1.0}}), DataError);
}

TEST_CASE("generalized states: constant and arithmetic sequences") {
  std::vector<std::vector<double>> constant(5, std::vector<double>{2.0, -1.0});
  for (const auto& gs : build_generalized_states(constant))
    CHECK(gs.mu_dot == std::vector<double>{0.0, 0.0});

  std::vector<std::vector<double>> arith;
  for (int k = 0; k < 6; ++k) arith.push_back({0.5 * k, -0.25 * k});
  auto gs = build_generalized_states(arith);
  CHECK(gs.size() == arith.size() - 1);
  for (const auto& g : gs) {
    CHECK(g.mu_dot[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(g.mu_dot[1] == doctest::Approx(-0.25).epsilon(1e-15));
  }
  // mu_{k-1} + mu_dot_k reconstructs mu_k exactly.
  for (std::size_t k = 1; k < gs.size(); ++k)
    for (std::size_t l = 0; l < 2; ++l)
      CHECK(gs[k - 1].mu[l] + gs[k].mu_dot[l] == gs[k].mu[l]);
}

TEST_CASE("kmeans: C=1 gives the mean; C=n gives zero WCSS") {
  std::vector<std::vector<double>> pts{{0, 0}, {2, 0}, {0, 2}, {2, 2}};
  auto one = kmeans(pts, 1, 3);
  CHECK(one.centroids[0] == std::vector<double>{1.0, 1.0});
  CHECK(one.wcss == doctest::Approx(8.0));

  auto all = kmeans(pts, 4, 3);
  CHECK(all.wcss == 0.0);
  std::set<std::size_t> labels(all.labels.begin(), all.labels.end());
  CHECK(labels.size() == 4);
}

TEST_CASE("kmeans separates two blobs and matches exhaustive assignment") {
  Rng rng(17);
  std::vector<std::vector<double>> pts;
  for (int i = 0; i < 40; ++i)
    pts.push_back({0.0 + rng.uniform(-0.1, 0.1), 0.0 + rng.uniform(-0.1, 0.1)});
  for (int i = 0; i < 40; ++i)
    pts.push_back({10.0 + rng.uniform(-0.1, 0.1), 10.0 + rng.uniform(-0.1, 0.1)});

  auto result = kmeans(pts, 2, 5);
  // Centroids land on the blob centers (order-free check).
  auto near = [](const std::vector<double>& c, double x, double y) {
    return std::hypot(c[0] - x, c[1] - y) < 0.2;
  };
  const bool direct = near(result.centroids[0], 0, 0) && near(result.centroids[1], 10, 10);
  const bool swapped = near(result.centroids[0], 10, 10) && near(result.centroids[1], 0, 0);
  CHECK((direct || swapped));

  // Every label agrees with the exhaustive nearest-centroid assignment.
  for (std::size_t i = 0; i < pts.size(); ++i) {
    double d0 = std::hypot(pts[i][0] - result.centroids[0][0], pts[i][1] - result.centroids[0][1]);
    double d1 = std::hypot(pts[i][0] - result.centroids[1][0], pts[i][1] - result.centroids[1][1]);
    CHECK(result.labels[i] == (d1 < d0 ? 1u : 0u));
  }
}

TEST_CASE("kmeans is deterministic and never returns an empty cluster") {
  Rng rng(23);
  std::vector<std::vector<double>> pts;
  for (int i = 0; i < 60; ++i) pts.push_back({rng.normal(), rng.normal(), rng.normal()});

  auto a = kmeans(pts, 7, 11);
  auto b = kmeans(pts, 7, 11);
  CHECK(a.labels == b.labels);
  CHECK(a.centroids == b.centroids);
  CHECK(a.wcss == b.wcss);

  std::vector<std::size_t> counts(7, 0);
  for (std::size_t l : a.labels) counts[l]++;
  for (std::size_t c : counts) CHECK(c >= 1);

  CHECK_THROWS_AS(kmeans(pts, 61, 1), DataError);
}

TEST_CASE("transition matrix hand cases") {
  Matrix t1 = transition_matrix({0, 0, 0}, 1);
  CHECK(t1(0, 0) == 1.0);

  // labels 1,1,2,2,1 -> transitions 1->1, 1->2, 2->2, 2->1.
  Matrix t2 = transition_matrix({0, 0, 1, 1, 0}, 2);
  CHECK(t2(0, 0) == 0.5);
  CHECK(t2(0, 1) == 0.5);
  CHECK(t2(1, 0) == 0.5);
  CHECK(t2(1, 1) == 0.5);

  // Unvisited row 3 becomes uniform.
  Matrix t3 = transition_matrix({0, 1}, 3);
  CHECK(t3(2, 0) == doctest::Approx(1.0 / 3));
  CHECK(t3(2, 1) == doctest::Approx(1.0 / 3));
  CHECK(t3(2, 2) == doctest::Approx(1.0 / 3));

  CHECK_THROWS_AS(transition_matrix({0, 3}, 2), DataError);
  CHECK_THROWS_AS(transition_matrix({0}, 2), DataError);
}

TEST_CASE("transition matrix rows always sum to one") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t c = 1 + rng.uniform_index(6);
    std::vector<std::size_t> labels;
    for (int i = 0; i < 50; ++i) labels.push_back(rng.uniform_index(c));
    Matrix t = transition_matrix(labels, c);
    for (std::size_t s = 0; s < c; ++s) {
      double sum = 0.0;
      for (std::size_t j = 0; j < c; ++j) {
        CHECK(t(s, j) >= 0.0);
        CHECK(t(s, j) <= 1.0);
        sum += t(s, j);
      }
      CHECK(std::abs(sum - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("cluster_stats degenerate and symmetric cases") {
  ClusterGeometry single = cluster_stats({{1.5, -2.0}});
  CHECK(single.centroid == std::vector<double>{1.5, -2.0});
  CHECK(single.radius == 1e-3);
  CHECK(single.covariance(0, 0) == 1e-6);
  CHECK(single.covariance(1, 1) == 1e-6);
  CHECK(single.covariance(0, 1) == 0.0);

  ClusterGeometry sym = cluster_stats({{2.0, -1.0}, {-2.0, 1.0}});
  CHECK(sym.centroid[0] == 0.0);
  CHECK(sym.centroid[1] == 0.0);

  CHECK_THROWS_AS(cluster_stats({}), DataError);
}

TEST_CASE("cluster_stats covariance matches a two-pass reference") {
  Rng rng(31);
  std::vector<std::vector<double>> members;
  for (int i = 0; i < 25; ++i) members.push_back({rng.normal(), rng.normal(), rng.normal()});
  ClusterGeometry geo = cluster_stats(members);

  // Two-pass population covariance, written independently.
  const std::size_t n = members.size();
  std::vector<double> mean(3, 0.0);
  for (const auto& m : members)
    for (int j = 0; j < 3; ++j) mean[j] += m[j] / static_cast<double>(n);
  Matrix ref(3, 3);
  for (const auto& m : members)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        ref(i, j) += (m[i] - mean[i]) * (m[j] - mean[j]) / static_cast<double>(n);
  for (int i = 0; i < 3; ++i) ref(i, i) += 1e-6;
  CHECK(testutil::max_abs_diff(geo.covariance, ref) <= 1e-10);

  // Radius never exceeds the farthest member.
  double max_dist = 0.0;
  for (const auto& m : members) {
    double d = 0.0;
    for (int j = 0; j < 3; ++j) d += (m[j] - mean[j]) * (m[j] - mean[j]);
    max_dist = std::max(max_dist, std::sqrt(d));
  }
  CHECK(geo.radius <= max_dist);
  CHECK(geo.radius > 0.0);
}

TEST_CASE("dynamics net: zero targets collapse the output") {
  Rng rng(3);
  std::vector<std::pair<std::vector<double>, std::vector<double>>> pairs;
  for (int i = 0; i < 200; ++i)
    pairs.push_back({{rng.uniform(-1, 1), rng.uniform(-1, 1)}, {0.0, 0.0}});
  DynamicsConfig cfg;
  cfg.hidden = 8;
  cfg.epochs = 200;
  cfg.seed = 5;
  DynamicsNet dyn = train_dynamics_net(pairs, 2, cfg);
  for (int i = 0; i < 20; ++i) {
    auto out = mlp_forward(dyn.net, std::vector<double>{rng.uniform(-1, 1), rng.uniform(-1, 1)});
    CHECK(std::hypot(out[0], out[1]) <= 1e-3);
  }
  for (double v : dyn.residual_var) CHECK(v <= 2e-6);
}

TEST_CASE("dynamics net learns a linear map") {
  Rng rng(13);
  // Ground truth mu_dot = G mu with a well-conditioned G.
  const double g[2][2] = {{0.5, -0.2}, {0.1, 0.4}};
  std::vector<std::pair<std::vector<double>, std::vector<double>>> train, test;
  for (int i = 0; i < 500; ++i) {
    std::vector<double> x{rng.uniform(-1, 1), rng.uniform(-1, 1)};
    std::vector<double> y{g[0][0] * x[0] + g[0][1] * x[1], g[1][0] * x[0] + g[1][1] * x[1]};
    (i < 400 ? train : test).push_back({x, y});
  }
  DynamicsConfig cfg;
  cfg.epochs = 400;
  cfg.seed = 7;
  DynamicsNet dyn = train_dynamics_net(train, 2, cfg);

  double mse = 0.0;
  for (const auto& [x, y] : test) {
    auto p = mlp_forward(dyn.net, x);
    for (int l = 0; l < 2; ++l) mse += (p[l] - y[l]) * (p[l] - y[l]);
  }
  mse /= static_cast<double>(test.size() * 2);
  CHECK(mse <= 1e-3);
}

TEST_CASE("dynamics MSE gradient matches finite differences") {
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    Rng rng(seed);
    Mlp net = make_mlp({3, 6, 3}, Activation::Tanh, Activation::Identity, rng);
    std::vector<double> x(3), target(3);
    for (double& v : x) v = rng.uniform(-1, 1);
    for (double& v : target) v = rng.uniform(-1, 1);

    auto loss = [&]() {
      auto p = mlp_forward(net, x);
      double s = 0.0;
      for (int l = 0; l < 3; ++l) s += (p[l] - target[l]) * (p[l] - target[l]);
      return s / 3.0;
    };
    auto p = mlp_forward(net, x);
    std::vector<double> upstream(3);
    for (int l = 0; l < 3; ++l) upstream[l] = 2.0 * (p[l] - target[l]) / 3.0;
    MlpGradients g = mlp_backward(net, x, upstream);
    CHECK(testutil::fd_worst_error(testutil::parameter_view(net),
                                   testutil::gradient_view(g), loss) <= 1e-4);
  }
}

TEST_CASE("empty pair set yields the zero function with floor residuals") {
  DynamicsNet dyn = train_dynamics_net({}, 4, DynamicsConfig{});
  auto out = mlp_forward(dyn.net, std::vector<double>{1.0, -1.0, 0.5, 2.0});
  for (double v : out) CHECK(v == 0.0);
  CHECK(dyn.residual_var == std::vector<double>(4, 1e-6));
}

TEST_CASE("build_vocabulary composes and round-trips") {
  // Constant-velocity latent walk: C=1 means T = [[1]] and one net that
  // should approximate the constant velocity.
  std::vector<std::vector<double>> mu;
  for (int k = 0; k < 80; ++k) mu.push_back({0.01 * k, -0.02 * k});
  auto gs = build_generalized_states(mu);

  VocabularyConfig cfg;
  cfg.cluster_count = 1;
  cfg.dynamics.epochs = 300;
  cfg.dynamics.hidden = 8;
  cfg.seed = 9;
  VocabularyBundle vocab = build_vocabulary(gs, cfg);
  REQUIRE(vocab.clusters.size() == 1);
  CHECK(vocab.transition(0, 0) == 1.0);
  auto pred = mlp_forward(vocab.clusters[0].dynamics, std::vector<double>{0.4, -0.8});
  CHECK(pred[0] == doctest::Approx(0.01).epsilon(0.2));
  CHECK(pred[1] == doctest::Approx(-0.02).epsilon(0.2));

  // Deterministic under one seed, including serialization.
  VocabularyBundle again = build_vocabulary(gs, cfg);
  const auto dir_a = testutil::fresh_dir("vocab_a");
  const auto dir_b = testutil::fresh_dir("vocab_b");
  save_vocabulary(vocab, dir_a);
  save_vocabulary(again, dir_b);
  std::ifstream fa(dir_a / "vocab.json"), fb(dir_b / "vocab.json");
  std::string sa((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);

  // Load-back reproduces values and net outputs bit-exactly.
  VocabularyBundle loaded = load_vocabulary(dir_a);
  CHECK(loaded.latent_dim == vocab.latent_dim);
  CHECK(loaded.transition.data == vocab.transition.data);
  CHECK(loaded.clusters[0].centroid == vocab.clusters[0].centroid);
  CHECK(loaded.clusters[0].radius == vocab.clusters[0].radius);
  CHECK(loaded.clusters[0].residual_var == vocab.clusters[0].residual_var);
  CHECK(mlp_forward(loaded.clusters[0].dynamics, std::vector<double>{0.3, 0.3}) ==
        mlp_forward(vocab.clusters[0].dynamics, std::vector<double>{0.3, 0.3}));
  std::filesystem::remove_all(dir_a);
  std::filesystem::remove_all(dir_b);
}

TEST_CASE("build_vocabulary invariants on a noisy multi-regime sequence") {
  Rng rng(19);
  std::vector<std::vector<double>> mu;
  std::vector<double> x{0.0, 0.0};
  for (int k = 0; k < 150; ++k) {
    const double phase = k < 75 ? 0.05 : -0.08;
    x[0] += phase + 0.002 * rng.normal();
    x[1] += -phase + 0.002 * rng.normal();
    mu.push_back(x);
  }
  auto gs = build_generalized_states(mu);

  VocabularyConfig cfg;
  cfg.cluster_count = 4;
  cfg.dynamics.epochs = 30;
  cfg.seed = 21;
  VocabularyBundle vocab = build_vocabulary(gs, cfg);

  REQUIRE(vocab.clusters.size() == 4);
  std::size_t total_members = 0;
  for (const auto& c : vocab.clusters) {
    CHECK(c.member_count >= 1);
    CHECK(c.radius > 0.0);
    total_members += c.member_count;
    for (double v : c.residual_var) CHECK(v >= 1e-6);
  }
  CHECK(total_members == gs.size());
  for (std::size_t s = 0; s < 4; ++s) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 4; ++j) sum += vocab.transition(s, j);
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
}
