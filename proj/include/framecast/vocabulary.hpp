#pragma once

// Builds the discrete vocabulary over generalized-state space: k-means
// clusters with centroid/covariance/radius, a row-stochastic transition
// matrix over time-ordered labels, and one dynamics network per cluster
// mapping the latent mean to the next-step latent velocity.

#include <cstddef>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "framecast/ndmath.hpp"

namespace framecast {

// Latent mean paired with its first-order time derivative.
struct GeneralizedState {
  std::vector<double> mu;
  std::vector<double> mu_dot;
};

// Backward differences with unit time step; the first frame is dropped
// because its derivative is undefined. Output length = input length - 1.
std::vector<GeneralizedState> build_generalized_states(
    const std::vector<std::vector<double>>& mu_seq);

// [mu, mu_dot] concatenated into one 2L vector.
std::vector<double> gs_vector(const GeneralizedState& gs);

struct KmeansResult {
  std::vector<std::size_t> labels;  // 0-based
  std::vector<std::vector<double>> centroids;
  double wcss = 0.0;
};

// Lloyd iterations with k-means++ seeding, 10 restarts, at most 300
// iterations each; the lowest within-cluster sum of squares wins. Empty
// clusters are reseeded to the point farthest from its assigned centroid.
// Deterministic given the seed.
KmeansResult kmeans(const std::vector<std::vector<double>>& points,
                    std::size_t cluster_count, std::uint64_t seed);

// Row-normalized transition counts over a time-ordered label sequence.
// Rows without outgoing transitions become uniform.
Matrix transition_matrix(const std::vector<std::size_t>& labels,
                         std::size_t cluster_count);

struct ClusterGeometry {
  std::vector<double> centroid;  // mean of members
  Matrix covariance;             // population-normalized, +1e-6 I
  double radius = 0.0;           // 95th percentile of member distances
};

ClusterGeometry cluster_stats(const std::vector<std::vector<double>>& members);

struct DynamicsConfig {
  std::size_t hidden = 32;
  std::size_t epochs = 300;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
};

struct DynamicsNet {
  Mlp net;                          // L -> hidden -> L, tanh hidden
  std::vector<double> residual_var;  // per-dimension, floored at 1e-6
};

// MSE regression of pairs (mu_k -> mu_dot_{k+1}). An empty pair set yields
// the zero function with floor residuals.
DynamicsNet train_dynamics_net(
    const std::vector<std::pair<std::vector<double>, std::vector<double>>>& pairs,
    std::size_t latent_dim, const DynamicsConfig& config);

struct ClusterInfo {
  std::vector<double> centroid;      // 2L
  Matrix covariance;                 // 2L x 2L
  double radius = 0.0;
  std::size_t member_count = 0;
  Mlp dynamics;                      // L -> L
  std::vector<double> residual_var;  // L
};

struct VocabularyBundle {
  std::size_t latent_dim = 0;
  std::vector<ClusterInfo> clusters;
  Matrix transition;  // C x C, rows sum to 1
};

struct VocabularyConfig {
  std::size_t cluster_count = 8;
  DynamicsConfig dynamics;
  std::uint64_t seed = 1;
};

// kmeans -> transition matrix -> per-cluster stats and dynamics nets.
// The pair (mu_k, mu_dot_{k+1}) trains the cluster that contains GS_k.
VocabularyBundle build_vocabulary(const std::vector<GeneralizedState>& gs_seq,
                                  const VocabularyConfig& config);

// vocab.json (reals as 17-significant-digit decimal strings) plus one
// dyn_<S>.bin per cluster, S counted from 1.
void save_vocabulary(const VocabularyBundle& vocab, const std::filesystem::path& dir);
VocabularyBundle load_vocabulary(const std::filesystem::path& dir);

}  // namespace framecast
