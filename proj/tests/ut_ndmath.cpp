#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <fstream>

#include "framecast/ndmath.hpp"
#include "test_util.hpp"

using namespace framecast;

static Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Matrix m(r, c);
  for (double& x : m.data) x = rng.uniform(lo, hi);
  return m;
}

static Matrix random_spd(std::size_t n, Rng& rng) {
  Matrix g = random_matrix(n, n, rng);
  Matrix spd = matmul_nt(g, g);
  for (std::size_t i = 0; i < n; ++i) spd(i, i) += 1.0;
  return spd;
}

TEST_CASE("matmul identity and hand cases") {
  Rng rng(7);
  Matrix m = random_matrix(2, 3, rng);
  Matrix im = matmul(Matrix::identity(2), m);
  CHECK(testutil::max_abs_diff(im, m) == 0.0);

  Matrix a(2, 2);
  a(0, 0) = 1; a(0, 1) = 2; a(1, 0) = 3; a(1, 1) = 4;
  Matrix b(2, 1);
  b(0, 0) = 0; b(1, 0) = 1;
  Matrix c = matmul(a, b);
  CHECK(c.rows == 2);
  CHECK(c.cols == 1);
  CHECK(c(0, 0) == 2.0);
  CHECK(c(1, 0) == 4.0);
}

TEST_CASE("matmul matches triple-loop reference") {
  Rng rng(11);
  Matrix a = random_matrix(5, 7, rng);
  Matrix b = random_matrix(7, 3, rng);
  CHECK(testutil::max_abs_diff(matmul(a, b), testutil::reference_matmul(a, b)) <= 1e-12);

  // Random dimensions up to 16, including the transposed kernels.
  for (int trial = 0; trial < 12; ++trial) {
    const std::size_t m = 1 + rng.uniform_index(16);
    const std::size_t k = 1 + rng.uniform_index(16);
    const std::size_t n = 1 + rng.uniform_index(16);
    Matrix x = random_matrix(m, k, rng);
    Matrix y = random_matrix(k, n, rng);
    CHECK(testutil::max_abs_diff(matmul(x, y), testutil::reference_matmul(x, y)) <= 1e-12);
    CHECK(testutil::max_abs_diff(matmul_nt(x, transpose(y)), testutil::reference_matmul(x, y)) <= 1e-12);
    CHECK(testutil::max_abs_diff(matmul_tn(transpose(x), y), testutil::reference_matmul(x, y)) <= 1e-12);
  }
}

TEST_CASE("matmul shape error") {
  Matrix a(2, 3), b(4, 2);
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("invert_spd diagonal and identity") {
  Matrix d(2, 2);
  d(0, 0) = 2.0; d(1, 1) = 4.0;
  Matrix inv = invert_spd(d);
  CHECK(inv(0, 0) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(inv(1, 1) == doctest::Approx(0.25).epsilon(1e-14));
  CHECK(inv(0, 1) == 0.0);

  Matrix i6 = Matrix::identity(6);
  CHECK(testutil::max_abs_diff(invert_spd(i6), i6) <= 1e-14);
}

TEST_CASE("invert_spd residual against identity") {
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    Rng rng(seed);
    Matrix spd = random_spd(6, rng);
    Matrix inv = invert_spd(spd);
    Matrix prod = matmul(spd, inv);
    CHECK(testutil::max_abs_diff(prod, Matrix::identity(6)) <= 1e-8);
  }
}

TEST_CASE("invert_spd symmetrizes slightly asymmetric input") {
  Rng rng(3);
  Matrix spd = random_spd(4, rng);
  Matrix skewed = spd;
  skewed(0, 1) += 1e-13;
  Matrix inv = invert_spd(skewed);
  Matrix sym = spd;
  sym(0, 1) += 0.5e-13;
  sym(1, 0) += 0.5e-13;
  CHECK(testutil::max_abs_diff(matmul(sym, inv), Matrix::identity(4)) <= 1e-8);
}

TEST_CASE("invert_spd reports the failing pivot") {
  Matrix m(2, 2);
  m(0, 0) = 1.0;
  m(1, 1) = -1.0;
  try {
    invert_spd(m);
    FAIL("expected SingularMatrixError");
  } catch (const SingularMatrixError& e) {
    CHECK(e.pivot == 1);
  }
}

TEST_CASE("cholesky reproduces the input") {
  Rng rng(5);
  Matrix spd = random_spd(5, rng);
  Matrix l = cholesky(spd);
  CHECK(testutil::max_abs_diff(matmul_nt(l, l), spd) <= 1e-10);
}

TEST_CASE("symmetric_eigen reconstructs and clamp_psd floors") {
  Rng rng(9);
  Matrix spd = random_spd(5, rng);
  SymmetricEigen eig = symmetric_eigen(spd);
  // V diag(lambda) V^T == input
  Matrix scaled = eig.vectors;
  for (std::size_t j = 0; j < 5; ++j)
    for (std::size_t i = 0; i < 5; ++i) scaled(i, j) *= eig.values[j];
  CHECK(testutil::max_abs_diff(matmul_nt(scaled, eig.vectors), spd) <= 1e-9);

  // Indefinite input gets its negative eigenvalue lifted.
  Matrix indef(2, 2);
  indef(0, 0) = 1.0; indef(1, 1) = -0.5;
  double min_eig = 0.0;
  Matrix fixed = clamp_psd(indef, 1e-12, &min_eig);
  CHECK(min_eig == doctest::Approx(-0.5));
  SymmetricEigen after = symmetric_eigen(fixed);
  for (double v : after.values) CHECK(v >= -1e-15);

  // PSD input passes through (symmetrized only).
  double min2 = 0.0;
  Matrix same = clamp_psd(spd, 1e-12, &min2);
  CHECK(min2 > 0.0);
  CHECK(testutil::max_abs_diff(same, spd) <= 1e-12);
}

TEST_CASE("mlp_forward zero net and identity layer") {
  Mlp zero = make_zero_mlp({3, 4, 2}, Activation::Tanh, Activation::Identity);
  auto out = mlp_forward(zero, std::vector<double>{0.3, -0.2, 0.9});
  REQUIRE(out.size() == 2);
  CHECK(out[0] == 0.0);
  CHECK(out[1] == 0.0);

  Mlp lin = make_zero_mlp({3, 3}, Activation::Tanh, Activation::Identity);
  lin.weights[0] = Matrix::identity(3);
  std::vector<double> x{0.5, -1.25, 2.0};
  auto y = mlp_forward(lin, x);
  CHECK(y == x);
}

TEST_CASE("mlp_forward deterministic under one seed") {
  std::vector<double> x{0.1, 0.2, 0.3, 0.4};
  Rng rng_a(42);
  Mlp a = make_mlp({4, 8, 2}, Activation::Tanh, Activation::Sigmoid, rng_a);
  Rng rng_b(42);
  Mlp b = make_mlp({4, 8, 2}, Activation::Tanh, Activation::Sigmoid, rng_b);
  auto ya = mlp_forward(a, x);
  auto yb = mlp_forward(b, x);
  CHECK(ya == yb);  // bit-exact
}

TEST_CASE("mlp dimension mismatch") {
  Mlp net = make_zero_mlp({3, 2}, Activation::Tanh, Activation::Identity);
  CHECK_THROWS_AS(mlp_forward(net, std::vector<double>{1.0, 2.0}), ShapeError);
  CHECK_THROWS_AS(mlp_backward(net, std::vector<double>{1.0, 2.0, 3.0},
                               std::vector<double>{1.0, 2.0, 3.0}),
                  ShapeError);
}

TEST_CASE("mlp_backward trivial cases") {
  Rng rng(17);
  Mlp net = make_mlp({3, 5, 2}, Activation::Tanh, Activation::Identity, rng);
  std::vector<double> x{0.2, -0.4, 0.6};
  auto zero_up = std::vector<double>{0.0, 0.0};
  MlpGradients g = mlp_backward(net, x, zero_up);
  for (double v : testutil::gradient_view(g)) CHECK(v == 0.0);

  Mlp lin = make_zero_mlp({3, 1}, Activation::Tanh, Activation::Identity);
  MlpGradients g2 = mlp_backward(lin, x, std::vector<double>{1.0});
  CHECK(g2.weights[0](0, 0) == x[0]);
  CHECK(g2.weights[0](0, 1) == x[1]);
  CHECK(g2.weights[0](0, 2) == x[2]);
  CHECK(g2.biases[0](0, 0) == 1.0);
}

TEST_CASE("mlp_backward matches finite differences across seeds") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    Rng rng(seed);
    const Activation out_act = seed % 2 ? Activation::Identity : Activation::Sigmoid;
    Mlp net = make_mlp({4, 6, 3}, Activation::Tanh, out_act, rng);
    std::vector<double> x(4), c(3);
    for (double& v : x) v = rng.uniform(-1.0, 1.0);
    for (double& v : c) v = rng.uniform(-1.0, 1.0);

    // Scalar loss: dot(c, forward(x)); upstream gradient is c itself.
    std::vector<double> input_grad;
    MlpGradients g = mlp_backward(net, x, c, &input_grad);
    auto analytic = testutil::gradient_view(g);

    auto loss = [&]() {
      auto y = mlp_forward(net, x);
      double s = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) s += c[i] * y[i];
      return s;
    };
    CHECK(testutil::fd_worst_error(testutil::parameter_view(net), analytic, loss) <= 1e-4);

    // Input gradient too.
    std::vector<double*> xparams;
    for (double& v : x) xparams.push_back(&v);
    CHECK(testutil::fd_worst_error(xparams, input_grad, loss) <= 1e-4);
  }
}

TEST_CASE("relu backward matches finite differences") {
  for (std::uint64_t seed = 100; seed < 105; ++seed) {
    Rng rng(seed);
    Mlp net = make_mlp({3, 8, 2}, Activation::Relu, Activation::Identity, rng);
    std::vector<double> x{0.4, -0.7, 0.2}, c{1.3, -0.8};
    MlpGradients g = mlp_backward(net, x, c);
    auto analytic = testutil::gradient_view(g);
    auto loss = [&]() {
      auto y = mlp_forward(net, x);
      return c[0] * y[0] + c[1] * y[1];
    };
    CHECK(testutil::fd_worst_error(testutil::parameter_view(net), analytic, loss) <= 1e-4);
  }
}

TEST_CASE("optimizer_step basics") {
  Rng rng(23);
  Mlp net = make_mlp({2, 2}, Activation::Tanh, Activation::Identity, rng);
  Mlp before = net;
  OptimizerState st = make_optimizer(net, 1e-3);
  optimizer_step(st, net, zero_gradients(net));
  CHECK(st.step_count == 1);
  for (std::size_t l = 0; l < net.layer_count(); ++l)
    CHECK(testutil::max_abs_diff(net.weights[l], before.weights[l]) == 0.0);

  // Constant positive gradient pushes the parameter down.
  Mlp scalar = make_zero_mlp({1, 1}, Activation::Tanh, Activation::Identity);
  OptimizerState st2 = make_optimizer(scalar, 1e-2);
  MlpGradients g = zero_gradients(scalar);
  g.weights[0](0, 0) = 3.0;
  for (int i = 0; i < 50; ++i) optimizer_step(st2, scalar, g);
  CHECK(scalar.weights[0](0, 0) < 0.0);
}

TEST_CASE("optimizer_step converges on the quadratic bowl") {
  Mlp scalar = make_zero_mlp({1, 1}, Activation::Tanh, Activation::Identity);
  scalar.weights[0](0, 0) = 1.0;
  OptimizerState st = make_optimizer(scalar, 0.05);
  MlpGradients g = zero_gradients(scalar);
  for (int i = 0; i < 500; ++i) {
    g.weights[0](0, 0) = 2.0 * scalar.weights[0](0, 0);  // d/dw of w^2
    optimizer_step(st, scalar, g);
  }
  CHECK(std::abs(scalar.weights[0](0, 0)) < 1e-2);
}

TEST_CASE("optimizer_step rejects non-finite gradients") {
  Mlp net = make_zero_mlp({2, 2}, Activation::Tanh, Activation::Identity);
  OptimizerState st = make_optimizer(net, 1e-3);
  MlpGradients g = zero_gradients(net);
  g.weights[0](1, 1) = std::nan("");
  CHECK_THROWS_AS(optimizer_step(st, net, g), TrainingError);
}

TEST_CASE("mlp serialization round-trips bit-exactly") {
  Rng rng(31);
  Mlp net = make_mlp({5, 7, 3}, Activation::Relu, Activation::Sigmoid, rng);
  const auto dir = testutil::fresh_dir("mlp_io");
  const auto bin = dir / "net.bin";
  nlohmann::json manifest = save_mlp(net, bin);
  Mlp loaded = load_mlp(manifest, bin);

  CHECK(loaded.layer_sizes == net.layer_sizes);
  CHECK(loaded.hidden_activation == net.hidden_activation);
  CHECK(loaded.output_activation == net.output_activation);
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    CHECK(loaded.weights[l].data == net.weights[l].data);
    CHECK(loaded.biases[l].data == net.biases[l].data);
  }
  std::vector<double> x{0.1, 0.2, 0.3, 0.4, 0.5};
  CHECK(mlp_forward(loaded, x) == mlp_forward(net, x));
  std::filesystem::remove_all(dir);
}

TEST_CASE("batched forward equals per-sample forward") {
  Rng rng(41);
  Mlp net = make_mlp({3, 6, 2}, Activation::Tanh, Activation::Sigmoid, rng);
  Matrix batch = random_matrix(5, 3, rng);
  Matrix out = mlp_forward_batch(net, batch);
  for (std::size_t i = 0; i < 5; ++i) {
    auto yi = mlp_forward(net, std::span<const double>(batch.row(i), 3));
    CHECK(yi[0] == out(i, 0));
    CHECK(yi[1] == out(i, 1));
  }
}
