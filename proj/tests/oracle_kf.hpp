#pragma once

// Closed-form linear Kalman oracle used to check the unscented machinery.
// Deliberately self-contained: plain nested-vector math, no framecast
// kernels. For a linear dynamics net N(mu) = G mu, the generalized state
// propagates exactly as F = [[I+G, 0], [G, 0]], so prediction is F z and
// F P F^T plus process noise, and the update follows the paper-style gain
// [P_mu; I] (P_mu + Sigma)^-1 with a symmetrize-and-eigen-floor step.

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<std::vector<double>>;

inline Mat zeros(std::size_t r, std::size_t c) { return Mat(r, Vec(c, 0.0)); }

inline Mat eye(std::size_t n) {
  Mat m = zeros(n, n);
  for (std::size_t i = 0; i < n; ++i) m[i][i] = 1.0;
  return m;
}

inline Mat mul(const Mat& a, const Mat& b) {
  Mat c = zeros(a.size(), b[0].size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline Vec mul(const Mat& a, const Vec& x) {
  Vec y(a.size(), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < x.size(); ++j) y[i] += a[i][j] * x[j];
  return y;
}

inline Mat tr(const Mat& a) {
  Mat t = zeros(a[0].size(), a.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) t[j][i] = a[i][j];
  return t;
}

inline Mat add(const Mat& a, const Mat& b) {
  Mat c = a;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) c[i][j] += b[i][j];
  return c;
}

inline Mat sub(const Mat& a, const Mat& b) {
  Mat c = a;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) c[i][j] -= b[i][j];
  return c;
}

// Gauss-Jordan inverse with partial pivoting; fine for the tiny systems here.
inline Mat inv(Mat a) {
  const std::size_t n = a.size();
  Mat out = eye(n);
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    if (a[pivot][col] == 0.0) throw std::runtime_error("oracle inv: singular");
    std::swap(a[col], a[pivot]);
    std::swap(out[col], out[pivot]);
    const double d = a[col][col];
    for (std::size_t j = 0; j < n; ++j) {
      a[col][j] /= d;
      out[col][j] /= d;
    }
    for (std::size_t r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = a[r][col];
      for (std::size_t j = 0; j < n; ++j) {
        a[r][j] -= f * a[col][j];
        out[r][j] -= f * out[col][j];
      }
    }
  }
  return out;
}

// Symmetrize and lift negative eigenvalues to `floor_value`; closed form for
// the 2x2 case, which is all the L=1 oracle needs.
inline Mat clamp_psd_2x2(const Mat& p, double floor_value) {
  const double a = p[0][0];
  const double b = 0.5 * (p[0][1] + p[1][0]);
  const double c = p[1][1];
  const double mean = 0.5 * (a + c);
  const double disc = std::sqrt(0.25 * (a - c) * (a - c) + b * b);
  const double l1 = mean + disc;
  const double l2 = mean - disc;
  Mat sym = {{a, b}, {b, c}};
  if (l2 >= 0.0) return sym;

  // Eigenvectors: for lambda, direction (b, lambda - a), or the axis when b
  // vanishes.
  auto unit_for = [&](double lam) -> Vec {
    double vx = b, vy = lam - a;
    if (std::abs(b) < 1e-300) {
      vx = lam == a ? 1.0 : 0.0;
      vy = lam == a ? 0.0 : 1.0;
    }
    const double norm = std::hypot(vx, vy);
    return {vx / norm, vy / norm};
  };
  const Vec v1 = unit_for(l1);
  const Vec v2 = unit_for(l2);
  const double c1 = l1 < 0.0 ? floor_value : l1;
  const double c2 = floor_value;  // l2 < 0 here
  Mat out = zeros(2, 2);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) out[i][j] = c1 * v1[i] * v1[j] + c2 * v2[i] * v2[j];
  return out;
}

struct LinearKf {
  std::size_t latent;
  Mat f;        // 2L x 2L state transition for N(mu) = G mu
  Vec q;        // process noise per latent dimension
  Vec state;    // 2L
  Mat cov;      // 2L x 2L

  LinearKf(const Mat& g, const Vec& process_noise, const Vec& mu0, const Vec& sigma2_0)
      : latent(g.size()), q(process_noise) {
    f = zeros(2 * latent, 2 * latent);
    for (std::size_t i = 0; i < latent; ++i) {
      f[i][i] = 1.0;
      for (std::size_t j = 0; j < latent; ++j) {
        f[i][j] += g[i][j];
        f[latent + i][j] = g[i][j];
      }
    }
    state.assign(2 * latent, 0.0);
    for (std::size_t i = 0; i < latent; ++i) state[i] = mu0[i];
    cov = zeros(2 * latent, 2 * latent);
    for (std::size_t i = 0; i < latent; ++i) {
      cov[i][i] = sigma2_0[i];
      cov[latent + i][latent + i] = sigma2_0[i];
    }
  }

  struct StepOut {
    Vec mu_predicted;
    Vec mu_updated;
  };

  StepOut step(const Vec& obs_mu, const Vec& obs_sigma2) {
    // Predict.
    state = mul(f, state);
    cov = mul(mul(f, cov), tr(f));
    for (std::size_t i = 0; i < latent; ++i) {
      cov[i][i] += q[i];
      cov[latent + i][latent + i] += q[i];
    }
    StepOut out;
    out.mu_predicted.assign(state.begin(), state.begin() + static_cast<long>(latent));

    // Update with the paper-style gain.
    Mat s = zeros(latent, latent);
    for (std::size_t i = 0; i < latent; ++i)
      for (std::size_t j = 0; j < latent; ++j)
        s[i][j] = cov[i][j] + (i == j ? obs_sigma2[i] : 0.0);
    const Mat s_inv = inv(s);
    Mat k = zeros(2 * latent, latent);
    for (std::size_t i = 0; i < latent; ++i)
      for (std::size_t j = 0; j < latent; ++j) {
        double top = 0.0;
        for (std::size_t m = 0; m < latent; ++m) top += cov[i][m] * s_inv[m][j];
        k[i][j] = top;
        k[latent + i][j] = s_inv[i][j];
      }
    Vec residual(latent);
    for (std::size_t i = 0; i < latent; ++i) residual[i] = obs_mu[i] - state[i];
    const Vec delta = mul(k, residual);
    for (std::size_t i = 0; i < state.size(); ++i) state[i] += delta[i];
    cov = sub(cov, mul(mul(k, s), tr(k)));
    if (latent == 1) cov = clamp_psd_2x2(cov, 1e-12);

    out.mu_updated.assign(state.begin(), state.begin() + static_cast<long>(latent));
    return out;
  }
};

}  // namespace oracle
