#include "framecast/amjpf.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace framecast {

SigmaPoints sigma_points(std::span<const double> mean, const Matrix& cov,
                         const UkfParams& params) {
  const std::size_t n = mean.size();
  if (cov.rows != n || cov.cols != n)
    throw ShapeError("sigma_points: covariance does not match mean dimension");

  const double nd = static_cast<double>(n);
  const double lambda = params.alpha * params.alpha * (nd + params.kappa) - nd;

  Matrix jittered(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      jittered(i, j) = 0.5 * (cov(i, j) + cov(j, i)) + (i == j ? 1e-9 : 0.0);

  Matrix chol;
  try {
    chol = cholesky(jittered);
  } catch (const SingularMatrixError& e) {
    throw DivergenceError(std::string("sigma_points: covariance not SPD after jitter (") +
                          e.what() + ")");
  }

  const double scale = std::sqrt(nd + lambda);
  SigmaPoints sp;
  sp.points = Matrix(2 * n + 1, n);
  for (std::size_t j = 0; j < n; ++j) sp.points(0, j) = mean[j];
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double offset = scale * chol(j, i);  // column i of the factor
      sp.points(1 + i, j) = mean[j] + offset;
      sp.points(1 + n + i, j) = mean[j] - offset;
    }

  sp.mean_weights.assign(2 * n + 1, 1.0 / (2.0 * (nd + lambda)));
  sp.cov_weights = sp.mean_weights;
  sp.mean_weights[0] = lambda / (nd + lambda);
  sp.cov_weights[0] = lambda / (nd + lambda) + (1.0 - params.alpha * params.alpha + params.beta);
  return sp;
}

GainMode gain_mode_from_name(const std::string& name) {
  if (name == "paper") return GainMode::Paper;
  if (name == "textbook") return GainMode::Textbook;
  throw ConfigError("unknown gain mode: " + name);
}

const char* gain_mode_name(GainMode mode) {
  return mode == GainMode::Paper ? "paper" : "textbook";
}

PredictedState ukf_predict(std::span<const double> state, const Matrix& cov,
                           const Mlp& net, std::span<const double> process_noise,
                           const UkfParams& params) {
  const std::size_t latent = net.input_size();
  if (net.output_size() != latent)
    throw ShapeError("ukf_predict: dynamics net must map L -> L");
  if (state.size() != 2 * latent)
    throw ShapeError("ukf_predict: state dimension must be 2L");
  if (process_noise.size() != latent)
    throw ShapeError("ukf_predict: process noise must have L entries");

  const SigmaPoints sp = sigma_points(state, cov, params);
  const std::size_t count = sp.points.rows;

  Matrix mu_part(count, latent);
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t l = 0; l < latent; ++l) mu_part(i, l) = sp.points(i, l);
  const Matrix velocity = mlp_forward_batch(net, mu_part);

  // f(z) = A z + B N(mu): new mu = mu + N(mu), new mu_dot = N(mu).
  Matrix propagated(count, 2 * latent);
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t l = 0; l < latent; ++l) {
      propagated(i, l) = mu_part(i, l) + velocity(i, l);
      propagated(i, latent + l) = velocity(i, l);
    }

  // Weighted mean in deviation form around point 0; the sum of mean weights
  // is 1, which keeps the huge small-alpha weights from cancelling badly.
  PredictedState out;
  out.state.assign(2 * latent, 0.0);
  for (std::size_t i = 1; i < count; ++i)
    for (std::size_t j = 0; j < 2 * latent; ++j)
      out.state[j] += sp.mean_weights[i] * (propagated(i, j) - propagated(0, j));
  for (std::size_t j = 0; j < 2 * latent; ++j) out.state[j] += propagated(0, j);

  out.cov = Matrix(2 * latent, 2 * latent);
  std::vector<double> dev(2 * latent);
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t j = 0; j < 2 * latent; ++j) dev[j] = propagated(i, j) - out.state[j];
    const double w = sp.cov_weights[i];
    for (std::size_t r = 0; r < 2 * latent; ++r)
      for (std::size_t c = 0; c < 2 * latent; ++c)
        out.cov(r, c) += w * dev[r] * dev[c];
  }
  for (std::size_t l = 0; l < latent; ++l) {
    out.cov(l, l) += process_noise[l];
    out.cov(latent + l, latent + l) += process_noise[l];
  }

  if (!all_finite(out.state) || !all_finite(out.cov))
    throw DivergenceError("ukf_predict: non-finite propagation");

  out.cov_mu = Matrix(latent, latent);
  for (std::size_t r = 0; r < latent; ++r)
    for (std::size_t c = 0; c < latent; ++c) out.cov_mu(r, c) = out.cov(r, c);
  out.mu_predicted.assign(out.state.begin(),
                          out.state.begin() + static_cast<std::ptrdiff_t>(latent));
  return out;
}

UpdatedState kf_update(const PredictedState& predicted, const LatentCode& observation,
                       GainMode mode) {
  const std::size_t latent = observation.mu.size();
  if (observation.sigma2.size() != latent)
    throw ShapeError("kf_update: observation mu/sigma2 size mismatch");
  if (predicted.cov_mu.rows != latent || predicted.state.size() != 2 * latent)
    throw ShapeError("kf_update: predicted state does not match observation");

  Matrix s = predicted.cov_mu;
  for (std::size_t l = 0; l < latent; ++l) s(l, l) += observation.sigma2[l];
  Matrix s_inv;
  try {
    s_inv = invert_spd(s);
  } catch (const SingularMatrixError& e) {
    throw DivergenceError(std::string("kf_update: singular innovation covariance (") +
                          e.what() + ")");
  }

  // Gain: paper form stacks [P_mu; I_L]; textbook form uses the full
  // predicted cross-covariance block P[:, 1..L].
  Matrix gain(2 * latent, latent);
  if (mode == GainMode::Paper) {
    const Matrix top = matmul(predicted.cov_mu, s_inv);
    for (std::size_t r = 0; r < latent; ++r)
      for (std::size_t c = 0; c < latent; ++c) {
        gain(r, c) = top(r, c);
        gain(latent + r, c) = s_inv(r, c);
      }
  } else {
    Matrix cross(2 * latent, latent);
    for (std::size_t r = 0; r < 2 * latent; ++r)
      for (std::size_t c = 0; c < latent; ++c) cross(r, c) = predicted.cov(r, c);
    gain = matmul(cross, s_inv);
  }

  std::vector<double> residual(latent);
  for (std::size_t l = 0; l < latent; ++l)
    residual[l] = observation.mu[l] - predicted.mu_predicted[l];

  UpdatedState out;
  out.state = predicted.state;
  const std::vector<double> delta = matvec(gain, residual);
  for (std::size_t j = 0; j < out.state.size(); ++j) out.state[j] += delta[j];

  const Matrix ksk = matmul(matmul(gain, s), transpose(gain));
  out.cov = clamp_psd(sub(predicted.cov, ksk), 1e-12, &out.min_eigen_before_clamp);

  if (!all_finite(out.state) || !all_finite(out.cov))
    throw DivergenceError("kf_update: non-finite update");

  out.mu_updated.assign(out.state.begin(),
                        out.state.begin() + static_cast<std::ptrdiff_t>(latent));
  return out;
}

double innovation(const std::vector<std::vector<double>>& updated_mu,
                  const std::vector<std::vector<double>>& predicted_mu) {
  if (updated_mu.empty() || updated_mu.size() != predicted_mu.size())
    throw DataError("innovation: empty or mismatched particle set");
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < updated_mu.size(); ++p) {
    const auto& u = updated_mu[p];
    const auto& q = predicted_mu[p];
    if (u.size() != q.size() || u.empty())
      throw ShapeError("innovation: latent size mismatch");
    double sum = 0.0;
    for (std::size_t l = 0; l < u.size(); ++l) sum += std::abs(u[l] - q[l]);
    best = std::min(best, sum / static_cast<double>(u.size()));
  }
  return best;
}

double compute_threshold(const std::vector<double>& innovations) {
  if (innovations.size() < 2)
    throw DataError("compute_threshold: need at least 2 innovations");
  const double n = static_cast<double>(innovations.size());
  double mean = 0.0;
  for (double y : innovations) mean += y;
  mean /= n;
  double var = 0.0;
  for (double y : innovations) var += (y - mean) * (y - mean);
  var /= n;  // population variance
  return mean + 3.0 * std::sqrt(var);
}

Detection detect_new_situations(const std::vector<double>& innovations,
                                double threshold) {
  Detection det;
  det.flags.assign(innovations.size(), false);
  std::size_t run_start = 0;
  std::size_t run_len = 0;
  auto close_run = [&](std::size_t end_exclusive) {
    if (run_len >= 3) {
      det.segments.emplace_back(run_start, end_exclusive - 1);
      for (std::size_t i = run_start; i < end_exclusive; ++i) det.flags[i] = true;
    }
    run_len = 0;
  };
  for (std::size_t i = 0; i < innovations.size(); ++i) {
    if (innovations[i] > threshold) {
      if (run_len == 0) run_start = i;
      ++run_len;
    } else {
      close_run(i);
    }
  }
  close_run(innovations.size());
  return det;
}

namespace {

double euclidean2(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

std::size_t nearest_cluster(const VocabularyBundle& vocab,
                            std::span<const double> gs, double* dist_out) {
  std::size_t best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < vocab.clusters.size(); ++c) {
    const double d2 = euclidean2(gs, vocab.clusters[c].centroid);
    if (d2 < best_d2) {
      best_d2 = d2;
      best = c;
    }
  }
  if (dist_out) *dist_out = std::sqrt(best_d2);
  return best;
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

Amjpf::Amjpf(std::vector<BundleRef> bundles, const FilterOptions& options,
             const std::vector<LatentCode>& first_observation_per_bundle)
    : bundles_(std::move(bundles)), options_(options), rng_(options.seed) {
  if (bundles_.empty()) throw DataError("amjpf: need at least one bundle");
  if (options_.particle_count == 0) throw ConfigError("amjpf: particle count must be >= 1");
  if (first_observation_per_bundle.size() != bundles_.size())
    throw ShapeError("amjpf: need one first observation per bundle");

  // Keep bundles ordered by id; observations ride along.
  std::vector<std::size_t> perm(bundles_.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::sort(perm.begin(), perm.end(), [this](std::size_t a, std::size_t b) {
    return bundles_[a].id < bundles_[b].id;
  });
  std::vector<BundleRef> sorted_bundles;
  std::vector<LatentCode> first_obs;
  for (std::size_t i : perm) {
    sorted_bundles.push_back(bundles_[i]);
    first_obs.push_back(first_observation_per_bundle[i]);
  }
  bundles_ = std::move(sorted_bundles);

  const std::size_t latent = bundles_.front().vocab ? bundles_.front().vocab->latent_dim : 0;
  for (const BundleRef& b : bundles_) {
    if (!b.vocab) throw DataError("amjpf: bundle without vocabulary");
    if (b.vocab->latent_dim != latent)
      throw ShapeError("amjpf: bundles disagree on the latent dimension");
  }

  const std::size_t p_total = options_.particle_count;
  const std::size_t base = p_total / bundles_.size();
  const std::size_t remainder = p_total % bundles_.size();
  const double w0 = 1.0 / static_cast<double>(p_total);

  for (std::size_t b = 0; b < bundles_.size(); ++b) {
    const LatentCode& obs = first_obs[b];
    if (obs.mu.size() != latent || obs.sigma2.size() != latent)
      throw ShapeError("amjpf: first observation has the wrong latent dimension");

    std::vector<double> gs0(2 * latent, 0.0);
    std::copy(obs.mu.begin(), obs.mu.end(), gs0.begin());
    const std::size_t start_cluster = nearest_cluster(*bundles_[b].vocab, gs0, nullptr);

    Matrix cov0(2 * latent, 2 * latent);
    for (std::size_t l = 0; l < latent; ++l) {
      cov0(l, l) = obs.sigma2[l];
      cov0(latent + l, latent + l) = obs.sigma2[l];
    }

    const std::size_t count = base + (b < remainder ? 1 : 0);
    for (std::size_t i = 0; i < count; ++i) {
      Particle p;
      p.bundle_id = bundles_[b].id;
      p.bundle_index = b;
      p.cluster = start_cluster;
      p.state = gs0;
      p.cov = cov0;
      p.weight = w0;
      p.mu_predicted = obs.mu;
      p.mu_updated = obs.mu;
      particles_.push_back(std::move(p));
    }
  }
}

static std::vector<LatentCode> encode_first(const std::vector<BundleRef>& bundles,
                                            const Frame& frame) {
  std::vector<LatentCode> obs;
  obs.reserve(bundles.size());
  for (const BundleRef& b : bundles) {
    if (!b.vae) throw DataError("amjpf: bundle has no VAE for frame input");
    obs.push_back(encode(*b.vae, frame));
  }
  return obs;
}

Amjpf::Amjpf(std::vector<BundleRef> bundles, const FilterOptions& options,
             const Frame& first_frame)
    : Amjpf(bundles, options, encode_first(bundles, first_frame)) {}

std::vector<LatentCode> Amjpf::encode_all(const Frame& frame) const {
  return encode_first(bundles_, frame);
}

StepRecord Amjpf::step(const Frame& frame) { return step_latent(encode_all(frame)); }

StepRecord Amjpf::step_latent(const std::vector<LatentCode>& observation_per_bundle) {
  if (observation_per_bundle.size() != bundles_.size())
    throw ShapeError("amjpf: need one observation per bundle");

  const std::size_t p_count = particles_.size();
  StepRecord record;
  record.frame_index = ++frame_counter_;
  record.per_particle.resize(p_count);
  std::vector<std::size_t> observed_cluster(p_count, 0);

  for (std::size_t pi = 0; pi < p_count; ++pi) {
    Particle& p = particles_[pi];
    const VocabularyBundle& vocab = *bundles_[p.bundle_index].vocab;
    const ClusterInfo& cluster = vocab.clusters[p.cluster];
    const LatentCode& obs = observation_per_bundle[p.bundle_index];

    const PredictedState pred =
        ukf_predict(p.state, p.cov, cluster.dynamics, cluster.residual_var, options_.ukf);
    const UpdatedState upd = kf_update(pred, obs, options_.gain);
    stats_.min_cov_eigen_before_clamp =
        std::min(stats_.min_cov_eigen_before_clamp, upd.min_eigen_before_clamp);

    double innov = 0.0;
    for (std::size_t l = 0; l < upd.mu_updated.size(); ++l)
      innov += std::abs(upd.mu_updated[l] - pred.mu_predicted[l]);
    innov /= static_cast<double>(upd.mu_updated.size());
    record.per_particle[pi] = innov;

    p.state = upd.state;
    p.cov = upd.cov;
    p.mu_predicted = pred.mu_predicted;
    p.mu_updated = upd.mu_updated;

    // Reassign to the nearest centroid of the same bundle; leaving every
    // radius of acceptance only increments the out-of-vocabulary counter.
    double dist = 0.0;
    const std::size_t nearest = nearest_cluster(vocab, p.state, &dist);
    observed_cluster[pi] = nearest;
    if (dist > vocab.clusters[nearest].radius) {
      ++record.out_of_radius_count;
      ++stats_.out_of_radius_total;
    }

    // Discrete transition from the reassigned label's row.
    const double u = rng_.uniform();
    double cum = 0.0;
    std::size_t next = vocab.clusters.size() - 1;
    for (std::size_t c = 0; c < vocab.clusters.size(); ++c) {
      cum += vocab.transition(nearest, c);
      if (u < cum) {
        next = c;
        break;
      }
    }
    p.cluster = next;
  }

  record.innovation = std::numeric_limits<double>::infinity();
  for (std::size_t pi = 0; pi < p_count; ++pi) {
    if (record.per_particle[pi] < record.innovation) {
      record.innovation = record.per_particle[pi];
      record.argmin_particle = pi;
    }
  }
  record.argmin_bundle = particles_[record.argmin_particle].bundle_id;
  record.argmin_cluster = observed_cluster[record.argmin_particle];

  // Reweight from the innovations; tau follows the per-frame median.
  const double tau = std::max(median_of(record.per_particle), 1e-6);
  double weight_sum = 0.0;
  for (std::size_t pi = 0; pi < p_count; ++pi) {
    particles_[pi].weight = std::exp(-record.per_particle[pi] / tau);
    weight_sum += particles_[pi].weight;
  }
  if (!(weight_sum > 0.0) || !std::isfinite(weight_sum)) {
    ++stats_.zero_weight_resets;
    for (Particle& p : particles_) p.weight = 1.0 / static_cast<double>(p_count);
  } else {
    for (Particle& p : particles_) p.weight /= weight_sum;
  }

  double check_sum = 0.0;
  double ess_denom = 0.0;
  for (const Particle& p : particles_) {
    check_sum += p.weight;
    ess_denom += p.weight * p.weight;
  }
  stats_.max_weight_sum_error =
      std::max(stats_.max_weight_sum_error, std::abs(check_sum - 1.0));
  const double ess = 1.0 / ess_denom;
  if (ess < static_cast<double>(p_count) / 2.0) {
    resample_within_bundles();
    ++stats_.resamples;
  }

  ++stats_.steps;
  return record;
}

void Amjpf::resample_within_bundles() {
  // Systematic resampling inside each bundle's slice so that per-bundle
  // counts never change and no particle migrates between bundles.
  const std::size_t p_count = particles_.size();
  std::vector<Particle> next = particles_;
  for (std::size_t b = 0; b < bundles_.size(); ++b) {
    std::vector<std::size_t> slots;
    double bundle_weight = 0.0;
    for (std::size_t pi = 0; pi < p_count; ++pi) {
      if (particles_[pi].bundle_index == b) {
        slots.push_back(pi);
        bundle_weight += particles_[pi].weight;
      }
    }
    if (slots.empty()) continue;
    const std::size_t m = slots.size();
    std::vector<double> w(m);
    if (bundle_weight > 0.0) {
      for (std::size_t i = 0; i < m; ++i) w[i] = particles_[slots[i]].weight / bundle_weight;
    } else {
      std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(m));
    }
    const double u0 = rng_.uniform() / static_cast<double>(m);
    std::size_t src = 0;
    double cum = w[0];
    for (std::size_t j = 0; j < m; ++j) {
      const double target = u0 + static_cast<double>(j) / static_cast<double>(m);
      while (cum < target && src + 1 < m) cum += w[++src];
      next[slots[j]] = particles_[slots[src]];
    }
  }
  particles_ = std::move(next);
  const double w0 = 1.0 / static_cast<double>(p_count);
  for (Particle& p : particles_) p.weight = w0;
}

std::vector<TraceRow> make_trace(const std::vector<StepRecord>& records,
                                 double threshold) {
  std::vector<double> innovations(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) innovations[i] = records[i].innovation;
  const Detection det = detect_new_situations(innovations, threshold);

  std::vector<TraceRow> trace(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    trace[i].frame_idx = records[i].frame_index;
    trace[i].innovation = records[i].innovation;
    trace[i].threshold = threshold;
    trace[i].exceeds = records[i].innovation > threshold;
    trace[i].flagged_new = det.flags[i];
    trace[i].argmin_bundle = records[i].argmin_bundle;
    trace[i].argmin_cluster = records[i].argmin_cluster;
    trace[i].oov_count = records[i].out_of_radius_count;
  }
  return trace;
}

void write_trace_csv(const std::vector<TraceRow>& trace,
                     const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write: " + path.string());
  os << "frame_idx,innovation,threshold,exceeds,flagged_new,argmin_bundle,"
        "argmin_cluster,oov_count\n";
  for (const TraceRow& row : trace) {
    os << row.frame_idx << ',' << format_real(row.innovation) << ','
       << format_real(row.threshold) << ',' << (row.exceeds ? 1 : 0) << ','
       << (row.flagged_new ? 1 : 0) << ',' << row.argmin_bundle << ','
       << row.argmin_cluster + 1 << ',' << row.oov_count << '\n';
  }
  if (!os) throw IoError("write failed: " + path.string());
}

std::vector<TraceRow> read_trace_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open: " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw IoError("empty trace: " + path.string());
  std::vector<TraceRow> trace;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    TraceRow row;
    auto next = [&]() {
      if (!std::getline(ss, field, ',')) throw IoError("short trace row: " + line);
      return field;
    };
    row.frame_idx = std::stoul(next());
    row.innovation = parse_real(next());
    row.threshold = parse_real(next());
    row.exceeds = next() == "1";
    row.flagged_new = next() == "1";
    row.argmin_bundle = std::stoul(next());
    row.argmin_cluster = std::stoul(next()) - 1;
    row.oov_count = std::stoul(next());
    trace.push_back(row);
  }
  return trace;
}

}  // namespace framecast
