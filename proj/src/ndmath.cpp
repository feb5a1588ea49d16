#include "framecast/ndmath.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

namespace framecast {

static_assert(std::endian::native == std::endian::little,
              "parameter files are little-endian");

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::diagonal(std::span<const double> d) {
  Matrix m(d.size(), d.size());
  for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
  return m;
}

bool all_finite(const Matrix& m) { return all_finite(std::span<const double>(m.data)); }

bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows)
    throw ShapeError("matmul: " + std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                     " * " + std::to_string(b.rows) + "x" + std::to_string(b.cols));
  Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* ai = a.row(i);
    double* ci = c.row(i);
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = ai[k];
      const double* bk = b.row(k);
      for (std::size_t j = 0; j < b.cols; ++j) ci[j] += aik * bk[j];
    }
  }
  return c;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols)
    throw ShapeError("matmul_nt: inner dimensions " + std::to_string(a.cols) + " vs " +
                     std::to_string(b.cols));
  Matrix c(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* ai = a.row(i);
    double* ci = c.row(i);
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* bj = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) s += ai[k] * bj[k];
      ci[j] = s;
    }
  }
  return c;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows)
    throw ShapeError("matmul_tn: inner dimensions " + std::to_string(a.rows) + " vs " +
                     std::to_string(b.rows));
  Matrix c(a.cols, b.cols);
  for (std::size_t k = 0; k < a.rows; ++k) {
    const double* ak = a.row(k);
    const double* bk = b.row(k);
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double aki = ak[i];
      double* ci = c.row(i);
      for (std::size_t j = 0; j < b.cols; ++j) ci[j] += aki * bk[j];
    }
  }
  return c;
}

Matrix transpose(const Matrix& m) {
  Matrix t(m.cols, m.rows);
  for (std::size_t i = 0; i < m.rows; ++i)
    for (std::size_t j = 0; j < m.cols; ++j) t(j, i) = m(i, j);
  return t;
}

static void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows != b.rows || a.cols != b.cols)
    throw ShapeError(std::string(op) + ": shape mismatch");
}

Matrix add(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "add");
  Matrix c = a;
  for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] += b.data[i];
  return c;
}

Matrix sub(const Matrix& a, const Matrix& b) {
  require_same_shape(a, b, "sub");
  Matrix c = a;
  for (std::size_t i = 0; i < c.data.size(); ++i) c.data[i] -= b.data[i];
  return c;
}

Matrix scale(const Matrix& a, double s) {
  Matrix c = a;
  for (double& x : c.data) x *= s;
  return c;
}

std::vector<double> matvec(const Matrix& a, std::span<const double> x) {
  if (a.cols != x.size()) throw ShapeError("matvec: dimension mismatch");
  std::vector<double> y(a.rows, 0.0);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* ai = a.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols; ++j) s += ai[j] * x[j];
    y[i] = s;
  }
  return y;
}

Matrix cholesky(const Matrix& m) {
  if (m.rows != m.cols) throw ShapeError("cholesky: matrix not square");
  const std::size_t n = m.rows;
  Matrix l(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double d = m(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= l(j, k) * l(j, k);
    if (!(d > 0.0))
      throw SingularMatrixError(j, "cholesky: non-positive pivot " + std::to_string(d) +
                                       " at index " + std::to_string(j));
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = m(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
      l(i, j) = s / ljj;
    }
  }
  return l;
}

Matrix invert_spd(const Matrix& m) {
  if (m.rows != m.cols) throw ShapeError("invert_spd: matrix not square");
  const std::size_t n = m.rows;
  Matrix sym(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) sym(i, j) = 0.5 * (m(i, j) + m(j, i));
  const Matrix l = cholesky(sym);
  // Invert the lower triangular factor by forward substitution.
  Matrix linv(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    linv(j, j) = 1.0 / l(j, j);
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = 0.0;
      for (std::size_t k = j; k < i; ++k) s += l(i, k) * linv(k, j);
      linv(i, j) = -s / l(i, i);
    }
  }
  // inv = L^-T * L^-1
  Matrix inv(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) {
      double s = 0.0;
      for (std::size_t k = i; k < n; ++k) s += linv(k, i) * linv(k, j);
      inv(i, j) = s;
      inv(j, i) = s;
    }
  return inv;
}

SymmetricEigen symmetric_eigen(const Matrix& m) {
  if (m.rows != m.cols) throw ShapeError("symmetric_eigen: matrix not square");
  const std::size_t n = m.rows;
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) = 0.5 * (m(i, j) + m(j, i));
  Matrix v = Matrix::identity(n);

  const int max_sweeps = 64;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    if (off < 1e-26) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  SymmetricEigen out;
  out.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.values[i] = a(i, i);
  out.vectors = std::move(v);
  return out;
}

Matrix clamp_psd(const Matrix& m, double floor_value, double* min_eigen_out) {
  const std::size_t n = m.rows;
  Matrix sym(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) sym(i, j) = 0.5 * (m(i, j) + m(j, i));
  SymmetricEigen eig = symmetric_eigen(sym);
  double min_eig = eig.values.empty() ? 0.0 : eig.values[0];
  for (double v : eig.values) min_eig = std::min(min_eig, v);
  if (min_eigen_out) *min_eigen_out = min_eig;
  if (min_eig >= 0.0) return sym;
  // Rebuild V * diag(max(lambda, floor)) * V^T.
  Matrix scaled = eig.vectors;
  for (std::size_t j = 0; j < n; ++j) {
    const double lam = eig.values[j] < 0.0 ? floor_value : eig.values[j];
    for (std::size_t i = 0; i < n; ++i) scaled(i, j) *= lam;
  }
  Matrix rebuilt = matmul_nt(scaled, eig.vectors);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double avg = 0.5 * (rebuilt(i, j) + rebuilt(j, i));
      rebuilt(i, j) = avg;
      rebuilt(j, i) = avg;
    }
  return rebuilt;
}

Activation activation_from_name(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  if (name == "identity") return Activation::Identity;
  if (name == "sigmoid") return Activation::Sigmoid;
  throw IoError("unknown activation: " + name);
}

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
    case Activation::Identity: return "identity";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "identity";
}

static double apply_activation(Activation a, double z) {
  switch (a) {
    case Activation::Tanh: return std::tanh(z);
    case Activation::Relu: return z > 0.0 ? z : 0.0;
    case Activation::Identity: return z;
    case Activation::Sigmoid: return 1.0 / (1.0 + std::exp(-z));
  }
  return z;
}

// Derivative expressed through the post-activation value.
static double activation_grad(Activation a, double out) {
  switch (a) {
    case Activation::Tanh: return 1.0 - out * out;
    case Activation::Relu: return out > 0.0 ? 1.0 : 0.0;
    case Activation::Identity: return 1.0;
    case Activation::Sigmoid: return out * (1.0 - out);
  }
  return 1.0;
}

static void validate_layer_sizes(const std::vector<std::size_t>& sizes) {
  if (sizes.size() < 2) throw ShapeError("mlp: need at least input and output sizes");
  for (std::size_t s : sizes)
    if (s == 0) throw ShapeError("mlp: zero-sized layer");
}

Mlp make_mlp(const std::vector<std::size_t>& layer_sizes, Activation hidden,
             Activation output, Rng& rng) {
  validate_layer_sizes(layer_sizes);
  Mlp net;
  net.layer_sizes = layer_sizes;
  net.hidden_activation = hidden;
  net.output_activation = output;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    const std::size_t fan_in = layer_sizes[l];
    const std::size_t fan_out = layer_sizes[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Matrix w(fan_out, fan_in);
    for (double& x : w.data) x = rng.uniform(-limit, limit);
    net.weights.push_back(std::move(w));
    net.biases.emplace_back(fan_out, 1);
  }
  return net;
}

Mlp make_zero_mlp(const std::vector<std::size_t>& layer_sizes, Activation hidden,
                  Activation output) {
  validate_layer_sizes(layer_sizes);
  Mlp net;
  net.layer_sizes = layer_sizes;
  net.hidden_activation = hidden;
  net.output_activation = output;
  for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
    net.weights.emplace_back(layer_sizes[l + 1], layer_sizes[l]);
    net.biases.emplace_back(layer_sizes[l + 1], 1);
  }
  return net;
}

std::size_t parameter_count(const Mlp& net) {
  std::size_t n = 0;
  for (std::size_t l = 0; l < net.layer_count(); ++l)
    n += net.weights[l].data.size() + net.biases[l].data.size();
  return n;
}

Matrix mlp_forward_batch(const Mlp& net, const Matrix& inputs, MlpCache* cache) {
  if (inputs.cols != net.input_size())
    throw ShapeError("mlp_forward: input size " + std::to_string(inputs.cols) +
                     ", expected " + std::to_string(net.input_size()));
  if (cache) {
    cache->activations.clear();
    cache->activations.push_back(inputs);
  }
  Matrix a = inputs;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    Matrix z = matmul_nt(a, net.weights[l]);  // (batch x out)
    const Matrix& b = net.biases[l];
    const Activation act =
        (l + 1 == net.layer_count()) ? net.output_activation : net.hidden_activation;
    for (std::size_t i = 0; i < z.rows; ++i) {
      double* zi = z.row(i);
      for (std::size_t j = 0; j < z.cols; ++j)
        zi[j] = apply_activation(act, zi[j] + b.data[j]);
    }
    a = std::move(z);
    if (cache) cache->activations.push_back(a);
  }
  return a;
}

std::vector<double> mlp_forward(const Mlp& net, std::span<const double> x) {
  Matrix in(1, x.size());
  std::copy(x.begin(), x.end(), in.data.begin());
  Matrix out = mlp_forward_batch(net, in);
  return out.data;
}

MlpGradients zero_gradients(const Mlp& net) {
  MlpGradients g;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    g.weights.emplace_back(net.weights[l].rows, net.weights[l].cols);
    g.biases.emplace_back(net.biases[l].rows, net.biases[l].cols);
  }
  return g;
}

MlpGradients mlp_backward_batch(const Mlp& net, const MlpCache& cache,
                                const Matrix& upstream, Matrix* input_grad) {
  if (cache.activations.size() != net.layer_count() + 1)
    throw ShapeError("mlp_backward: cache does not match network");
  if (upstream.rows != cache.activations.back().rows ||
      upstream.cols != net.output_size())
    throw ShapeError("mlp_backward: upstream gradient shape mismatch");

  MlpGradients grads = zero_gradients(net);
  Matrix delta = upstream;
  for (std::size_t li = net.layer_count(); li-- > 0;) {
    const Matrix& out = cache.activations[li + 1];
    const Activation act =
        (li + 1 == net.layer_count()) ? net.output_activation : net.hidden_activation;
    for (std::size_t i = 0; i < delta.rows; ++i) {
      double* di = delta.row(i);
      const double* oi = out.row(i);
      for (std::size_t j = 0; j < delta.cols; ++j)
        di[j] *= activation_grad(act, oi[j]);
    }
    grads.weights[li] = matmul_tn(delta, cache.activations[li]);
    Matrix& db = grads.biases[li];
    for (std::size_t i = 0; i < delta.rows; ++i) {
      const double* di = delta.row(i);
      for (std::size_t j = 0; j < delta.cols; ++j) db.data[j] += di[j];
    }
    if (li > 0 || input_grad) delta = matmul(delta, net.weights[li]);
  }
  if (input_grad) *input_grad = std::move(delta);
  return grads;
}

MlpGradients mlp_backward(const Mlp& net, std::span<const double> x,
                          std::span<const double> upstream,
                          std::vector<double>* input_grad) {
  Matrix in(1, x.size());
  std::copy(x.begin(), x.end(), in.data.begin());
  MlpCache cache;
  mlp_forward_batch(net, in, &cache);
  if (upstream.size() != net.output_size())
    throw ShapeError("mlp_backward: upstream size mismatch");
  Matrix up(1, upstream.size());
  std::copy(upstream.begin(), upstream.end(), up.data.begin());
  Matrix dx;
  MlpGradients g = mlp_backward_batch(net, cache, up, input_grad ? &dx : nullptr);
  if (input_grad) *input_grad = std::move(dx.data);
  return g;
}

OptimizerState make_optimizer(const Mlp& net, double learning_rate) {
  OptimizerState st;
  st.learning_rate = learning_rate;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    st.first_moment.emplace_back(net.weights[l].rows, net.weights[l].cols);
    st.first_moment.emplace_back(net.biases[l].rows, net.biases[l].cols);
    st.second_moment.emplace_back(net.weights[l].rows, net.weights[l].cols);
    st.second_moment.emplace_back(net.biases[l].rows, net.biases[l].cols);
  }
  return st;
}

static void adam_update(Matrix& param, const Matrix& grad, Matrix& m, Matrix& v,
                        const OptimizerState& st, double bc1, double bc2,
                        const char* where, std::size_t layer) {
  if (param.rows != grad.rows || param.cols != grad.cols)
    throw ShapeError("optimizer_step: gradient shape mismatch");
  for (std::size_t i = 0; i < param.data.size(); ++i) {
    const double g = grad.data[i];
    if (!std::isfinite(g))
      throw TrainingError("optimizer_step: non-finite gradient in " + std::string(where) +
                          " of layer " + std::to_string(layer) + " at entry " +
                          std::to_string(i));
    m.data[i] = st.beta1 * m.data[i] + (1.0 - st.beta1) * g;
    v.data[i] = st.beta2 * v.data[i] + (1.0 - st.beta2) * g * g;
    const double mhat = m.data[i] / bc1;
    const double vhat = v.data[i] / bc2;
    param.data[i] -= st.learning_rate * mhat / (std::sqrt(vhat) + st.epsilon);
  }
}

void optimizer_step(OptimizerState& state, Mlp& net, const MlpGradients& grads) {
  if (state.first_moment.size() != 2 * net.layer_count())
    throw ShapeError("optimizer_step: state does not match network");
  state.step_count += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    adam_update(net.weights[l], grads.weights[l], state.first_moment[2 * l],
                state.second_moment[2 * l], state, bc1, bc2, "weights", l);
    adam_update(net.biases[l], grads.biases[l], state.first_moment[2 * l + 1],
                state.second_moment[2 * l + 1], state, bc1, bc2, "biases", l);
  }
}

static void write_doubles(std::ofstream& os, const std::vector<double>& v) {
  os.write(reinterpret_cast<const char*>(v.data()),
           static_cast<std::streamsize>(v.size() * sizeof(double)));
}

nlohmann::json save_mlp(const Mlp& net, const std::filesystem::path& bin_path) {
  std::ofstream os(bin_path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + bin_path.string());
  nlohmann::json manifest;
  manifest["layer_sizes"] = net.layer_sizes;
  manifest["hidden_activation"] = activation_name(net.hidden_activation);
  manifest["output_activation"] = activation_name(net.output_activation);
  manifest["file"] = bin_path.filename().string();
  nlohmann::json arrays = nlohmann::json::array();
  std::size_t offset = 0;
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    arrays.push_back({{"name", "W" + std::to_string(l)},
                      {"offset", offset},
                      {"rows", net.weights[l].rows},
                      {"cols", net.weights[l].cols}});
    write_doubles(os, net.weights[l].data);
    offset += net.weights[l].data.size() * sizeof(double);
    arrays.push_back({{"name", "b" + std::to_string(l)},
                      {"offset", offset},
                      {"rows", net.biases[l].rows},
                      {"cols", net.biases[l].cols}});
    write_doubles(os, net.biases[l].data);
    offset += net.biases[l].data.size() * sizeof(double);
  }
  manifest["arrays"] = arrays;
  if (!os) throw IoError("write failed: " + bin_path.string());
  return manifest;
}

Mlp load_mlp(const nlohmann::json& manifest, const std::filesystem::path& bin_path) {
  Mlp net;
  net.layer_sizes = manifest.at("layer_sizes").get<std::vector<std::size_t>>();
  validate_layer_sizes(net.layer_sizes);
  net.hidden_activation =
      activation_from_name(manifest.at("hidden_activation").get<std::string>());
  net.output_activation =
      activation_from_name(manifest.at("output_activation").get<std::string>());

  std::ifstream is(bin_path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + bin_path.string());
  const auto& arrays = manifest.at("arrays");
  const std::size_t layer_count = net.layer_sizes.size() - 1;
  if (arrays.size() != 2 * layer_count)
    throw IoError("manifest arrays do not match layer sizes");
  for (std::size_t l = 0; l < layer_count; ++l) {
    for (int part = 0; part < 2; ++part) {
      const auto& entry = arrays.at(2 * l + part);
      const std::size_t rows = entry.at("rows").get<std::size_t>();
      const std::size_t cols = entry.at("cols").get<std::size_t>();
      const std::size_t expect_rows = net.layer_sizes[l + 1];
      const std::size_t expect_cols = part == 0 ? net.layer_sizes[l] : 1;
      if (rows != expect_rows || cols != expect_cols)
        throw IoError("manifest array shape does not match layer sizes");
      Matrix m(rows, cols);
      is.seekg(static_cast<std::streamoff>(entry.at("offset").get<std::size_t>()));
      is.read(reinterpret_cast<char*>(m.data.data()),
              static_cast<std::streamsize>(m.data.size() * sizeof(double)));
      if (!is) throw IoError("truncated parameter file: " + bin_path.string());
      if (part == 0)
        net.weights.push_back(std::move(m));
      else
        net.biases.push_back(std::move(m));
    }
  }
  return net;
}

}  // namespace framecast
