#pragma once

// Adapted Markov jump particle filter: a particle filter over cluster labels
// where every particle carries an unscented Kalman filter over its
// generalized state. Observations are latent codes; the VAE variance acts as
// the measurement noise. Produces one innovation value per frame and the
// threshold/window machinery that turns innovations into novelty flags.

#include <cstddef>
#include <filesystem>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "framecast/ndmath.hpp"
#include "framecast/vae.hpp"
#include "framecast/vocabulary.hpp"

namespace framecast {

struct UkfParams {
  double alpha = 1e-3;
  double beta = 2.0;
  double kappa = 0.0;
};

struct SigmaPoints {
  Matrix points;  // (2n+1) x n, row 0 is the mean
  std::vector<double> mean_weights;
  std::vector<double> cov_weights;
};

// Scaled sigma-point set: row 0 = mean, rows i and i+n = mean +/- column i
// of the Cholesky factor of (n + lambda) * cov. A 1e-9 jitter is added to
// the diagonal first; Cholesky failure after the jitter throws
// DivergenceError.
SigmaPoints sigma_points(std::span<const double> mean, const Matrix& cov,
                         const UkfParams& params);

// Kalman gain variant: the paper-style gain stacks [P_mu; I] while the
// textbook variant uses the full predicted cross-covariance column block.
enum class GainMode { Paper, Textbook };

GainMode gain_mode_from_name(const std::string& name);
const char* gain_mode_name(GainMode mode);

struct PredictedState {
  std::vector<double> state;     // 2L
  Matrix cov;                    // 2L x 2L, process noise included
  Matrix cov_mu;                 // top-left L x L block
  std::vector<double> mu_predicted;  // first L entries of state
};

// Unscented propagation of f(z) = A z + B N(mu): the new mu is mu + N(mu)
// and the new mu_dot is N(mu). Process noise is the dynamics-net residual
// variance, applied to both blocks of the diagonal.
PredictedState ukf_predict(std::span<const double> state, const Matrix& cov,
                           const Mlp& net, std::span<const double> process_noise,
                           const UkfParams& params);

struct UpdatedState {
  std::vector<double> state;
  Matrix cov;
  std::vector<double> mu_updated;
  double min_eigen_before_clamp = 0.0;
};

// Observation-space update without an observation matrix: the latent mean is
// observed directly with noise Sigma = diag(sigma2). The posterior
// covariance is symmetrized and eigen-floored.
UpdatedState kf_update(const PredictedState& predicted, const LatentCode& observation,
                       GainMode mode = GainMode::Paper);

// Minimum over particles of the mean absolute difference between updated and
// predicted latent means.
double innovation(const std::vector<std::vector<double>>& updated_mu,
                  const std::vector<std::vector<double>>& predicted_mu);

// mean + 3 * population standard deviation; needs at least two values.
double compute_threshold(const std::vector<double>& innovations);

struct Detection {
  std::vector<bool> flags;  // one per innovation
  std::vector<std::pair<std::size_t, std::size_t>> segments;  // inclusive
};

// A frame is flagged only when it belongs to a run of >= 3 consecutive
// frames above the threshold.
Detection detect_new_situations(const std::vector<double>& innovations,
                                double threshold);

struct Particle {
  std::size_t bundle_id = 0;     // external id, immutable for the particle's life
  std::size_t bundle_index = 0;  // index into the filter's bundle list
  std::size_t cluster = 0;       // 0-based label in the bundle's vocabulary
  std::vector<double> state;     // 2L
  Matrix cov;                    // 2L x 2L
  double weight = 0.0;
  std::vector<double> mu_predicted;
  std::vector<double> mu_updated;
};

// One model bundle as seen by the filter. `vae` may be null when the filter
// is driven at the latent level.
struct BundleRef {
  std::size_t id = 0;
  const VaeModel* vae = nullptr;
  const VocabularyBundle* vocab = nullptr;
};

struct FilterOptions {
  UkfParams ukf;
  GainMode gain = GainMode::Paper;
  std::size_t particle_count = 50;
  std::uint64_t seed = 0;
};

struct StepRecord {
  std::size_t frame_index = 0;
  double innovation = 0.0;
  std::size_t argmin_particle = 0;
  std::size_t argmin_bundle = 0;   // external bundle id
  std::size_t argmin_cluster = 0;  // 0-based
  std::size_t out_of_radius_count = 0;
  std::vector<double> per_particle;
};

class Amjpf {
 public:
  // Particles are split as evenly as possible across bundles (remainder to
  // the lowest bundle ids) and pinned to their bundle for life. Within a
  // bundle every particle starts at the cluster nearest to the encoded first
  // frame with zero initial velocity and covariance diag(sigma2, sigma2).
  Amjpf(std::vector<BundleRef> bundles, const FilterOptions& options,
        const std::vector<LatentCode>& first_observation_per_bundle);
  Amjpf(std::vector<BundleRef> bundles, const FilterOptions& options,
        const Frame& first_frame);

  // Advance one frame: UKF predict with each particle's cluster net, encode
  // the frame through the particle's bundle, update, reassign the cluster to
  // the nearest centroid, sample the next label from the transition row, and
  // reweight/resample.
  StepRecord step(const Frame& frame);
  StepRecord step_latent(const std::vector<LatentCode>& observation_per_bundle);

  const std::vector<Particle>& particles() const { return particles_; }
  std::size_t bundle_count() const { return bundles_.size(); }

  struct RunStats {
    std::size_t steps = 0;
    std::size_t resamples = 0;
    std::size_t zero_weight_resets = 0;
    std::size_t out_of_radius_total = 0;
    double min_cov_eigen_before_clamp = std::numeric_limits<double>::infinity();
    double max_weight_sum_error = 0.0;
  };
  const RunStats& stats() const { return stats_; }

 private:
  std::vector<LatentCode> encode_all(const Frame& frame) const;
  void resample_within_bundles();

  std::vector<BundleRef> bundles_;
  FilterOptions options_;
  std::vector<Particle> particles_;
  Rng rng_;
  RunStats stats_;
  std::size_t frame_counter_ = 0;
};

// Innovation trace rows as exported to CSV. Cluster labels are written
// 1-based to match the dyn_<S>.bin naming.
struct TraceRow {
  std::size_t frame_idx = 0;
  double innovation = 0.0;
  double threshold = 0.0;
  bool exceeds = false;
  bool flagged_new = false;
  std::size_t argmin_bundle = 0;
  std::size_t argmin_cluster = 0;  // 0-based in memory
  std::size_t oov_count = 0;
};

// Applies the threshold and the 3-frame window to raw step records.
std::vector<TraceRow> make_trace(const std::vector<StepRecord>& records,
                                 double threshold);

void write_trace_csv(const std::vector<TraceRow>& trace,
                     const std::filesystem::path& path);
std::vector<TraceRow> read_trace_csv(const std::filesystem::path& path);

}  // namespace framecast
