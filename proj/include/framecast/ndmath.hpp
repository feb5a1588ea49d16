#pragma once

// Dense row-major matrices, fully connected networks with explicit
// reverse-mode gradients, and an adaptive-moment optimizer. Everything is
// 64-bit and deterministic given identical inputs.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "framecast/common.hpp"

namespace framecast {

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major, rows * cols entries

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  static Matrix identity(std::size_t n);
  static Matrix diagonal(std::span<const double> d);

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  double* row(std::size_t i) { return data.data() + i * cols; }
  const double* row(std::size_t i) const { return data.data() + i * cols; }
};

bool all_finite(const Matrix& m);
bool all_finite(std::span<const double> v);

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a * b^T
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // a^T * b
Matrix transpose(const Matrix& m);
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
std::vector<double> matvec(const Matrix& a, std::span<const double> x);

// Lower Cholesky factor of an SPD matrix. Throws SingularMatrixError with
// the offending pivot index when a pivot is not strictly positive.
Matrix cholesky(const Matrix& m);

// Inverse of an SPD matrix via Cholesky. The input is symmetrized as
// (m + m^T)/2 first; round-off from covariance arithmetic routinely breaks
// exact symmetry.
Matrix invert_spd(const Matrix& m);

// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
// Columns of `vectors` are the eigenvectors, paired with `values`.
struct SymmetricEigen {
  std::vector<double> values;
  Matrix vectors;
};
SymmetricEigen symmetric_eigen(const Matrix& m);

// Symmetrize, then lift negative eigenvalues to `floor_value`. The matrix is
// reconstructed only when some eigenvalue is actually negative. If
// `min_eigen_out` is given it receives the smallest eigenvalue before
// clamping.
Matrix clamp_psd(const Matrix& m, double floor_value,
                 double* min_eigen_out = nullptr);

enum class Activation { Tanh, Relu, Identity, Sigmoid };

Activation activation_from_name(const std::string& name);
const char* activation_name(Activation a);

struct Mlp {
  std::vector<std::size_t> layer_sizes;  // input, hidden..., output
  std::vector<Matrix> weights;           // per layer, (out x in)
  std::vector<Matrix> biases;            // per layer, (out x 1)
  Activation hidden_activation = Activation::Tanh;
  Activation output_activation = Activation::Identity;

  std::size_t input_size() const { return layer_sizes.front(); }
  std::size_t output_size() const { return layer_sizes.back(); }
  std::size_t layer_count() const { return weights.size(); }
};

// Fan-in-scaled (Glorot-style) uniform init, biases zero.
Mlp make_mlp(const std::vector<std::size_t>& layer_sizes, Activation hidden,
             Activation output, Rng& rng);
Mlp make_zero_mlp(const std::vector<std::size_t>& layer_sizes, Activation hidden,
                  Activation output);

std::size_t parameter_count(const Mlp& net);

std::vector<double> mlp_forward(const Mlp& net, std::span<const double> x);

// Batched forward; rows of `inputs` are samples. The cache stores the
// post-activation output of every layer (entry 0 is the input itself) and is
// what the batched backward pass consumes.
struct MlpCache {
  std::vector<Matrix> activations;
};
Matrix mlp_forward_batch(const Mlp& net, const Matrix& inputs,
                         MlpCache* cache = nullptr);

struct MlpGradients {
  std::vector<Matrix> weights;
  std::vector<Matrix> biases;
};
MlpGradients zero_gradients(const Mlp& net);

// Exact reverse-mode gradients of the forward composition given
// dLoss/dOutput. `input_grad` receives dLoss/dInput when non-null.
MlpGradients mlp_backward(const Mlp& net, std::span<const double> x,
                          std::span<const double> upstream,
                          std::vector<double>* input_grad = nullptr);
MlpGradients mlp_backward_batch(const Mlp& net, const MlpCache& cache,
                                const Matrix& upstream,
                                Matrix* input_grad = nullptr);

// Adaptive-moment optimizer state; accumulators mirror the parameter list
// [W0, b0, W1, b1, ...].
struct OptimizerState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t step_count = 0;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
};

OptimizerState make_optimizer(const Mlp& net, double learning_rate);

// One bias-corrected adaptive-moment update in place. Non-finite gradients
// raise TrainingError naming the parameter.
void optimizer_step(OptimizerState& state, Mlp& net, const MlpGradients& grads);

// Parameter serialization: raw little-endian doubles in a .bin file plus a
// JSON manifest fragment (layer sizes, activations, byte offsets).
// Round-trips are bit-exact.
nlohmann::json save_mlp(const Mlp& net, const std::filesystem::path& bin_path);
Mlp load_mlp(const nlohmann::json& manifest, const std::filesystem::path& bin_path);

}  // namespace framecast
