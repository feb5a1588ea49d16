#include "framecast/vocabulary.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <limits>
#include <numeric>

namespace framecast {

std::vector<GeneralizedState> build_generalized_states(
    const std::vector<std::vector<double>>& mu_seq) {
  if (mu_seq.size() < 2)
    throw DataError("build_generalized_states: need at least 2 states");
  const std::size_t latent = mu_seq.front().size();
  std::vector<GeneralizedState> out;
  out.reserve(mu_seq.size() - 1);
  for (std::size_t k = 1; k < mu_seq.size(); ++k) {
    if (mu_seq[k].size() != latent)
      throw ShapeError("build_generalized_states: inconsistent latent dimension");
    GeneralizedState gs;
    gs.mu = mu_seq[k];
    gs.mu_dot.resize(latent);
    for (std::size_t l = 0; l < latent; ++l)
      gs.mu_dot[l] = mu_seq[k][l] - mu_seq[k - 1][l];
    out.push_back(std::move(gs));
  }
  return out;
}

std::vector<double> gs_vector(const GeneralizedState& gs) {
  std::vector<double> v;
  v.reserve(gs.mu.size() + gs.mu_dot.size());
  v.insert(v.end(), gs.mu.begin(), gs.mu.end());
  v.insert(v.end(), gs.mu_dot.begin(), gs.mu_dot.end());
  return v;
}

namespace {

double dist2(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

std::vector<std::vector<double>> kmeanspp_seed(
    const std::vector<std::vector<double>>& points, std::size_t k, Rng& rng) {
  const std::size_t n = points.size();
  std::vector<std::vector<double>> centroids;
  centroids.push_back(points[rng.uniform_index(n)]);
  std::vector<double> best_d2(n);
  while (centroids.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double d = dist2(points[i], centroids[0]);
      for (std::size_t c = 1; c < centroids.size(); ++c)
        d = std::min(d, dist2(points[i], centroids[c]));
      best_d2[i] = d;
      total += d;
    }
    std::size_t pick = 0;
    if (total <= 0.0) {
      pick = rng.uniform_index(n);
    } else {
      const double r = rng.uniform() * total;
      double cum = 0.0;
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        cum += best_d2[i];
        if (cum > r) {
          pick = i;
          break;
        }
      }
    }
    centroids.push_back(points[pick]);
  }
  return centroids;
}

}  // namespace

KmeansResult kmeans(const std::vector<std::vector<double>>& points,
                    std::size_t cluster_count, std::uint64_t seed) {
  const std::size_t n = points.size();
  if (cluster_count == 0) throw DataError("kmeans: cluster count must be >= 1");
  if (cluster_count > n)
    throw DataError("kmeans: more clusters than points (" +
                    std::to_string(cluster_count) + " > " + std::to_string(n) + ")");
  const std::size_t dim = points.front().size();
  for (const auto& p : points)
    if (p.size() != dim) throw ShapeError("kmeans: inconsistent point dimension");

  Rng rng(seed);
  KmeansResult best;
  best.wcss = std::numeric_limits<double>::infinity();

  const int restarts = 10;
  const int max_iters = 300;
  for (int restart = 0; restart < restarts; ++restart) {
    auto centroids = kmeanspp_seed(points, cluster_count, rng);
    std::vector<std::size_t> labels(n, 0);
    std::vector<std::size_t> counts(cluster_count, 0);

    for (int iter = 0; iter < max_iters; ++iter) {
      bool changed = iter == 0;
      for (std::size_t i = 0; i < n; ++i) {
        std::size_t nearest = 0;
        double nd = dist2(points[i], centroids[0]);
        for (std::size_t c = 1; c < cluster_count; ++c) {
          const double d = dist2(points[i], centroids[c]);
          if (d < nd) {
            nd = d;
            nearest = c;
          }
        }
        if (labels[i] != nearest) changed = true;
        labels[i] = nearest;
      }

      std::fill(counts.begin(), counts.end(), 0);
      for (std::size_t l : labels) counts[l]++;

      // Reseed empty clusters to the point farthest from its own centroid.
      for (std::size_t c = 0; c < cluster_count; ++c) {
        if (counts[c] != 0) continue;
        double far_d = -1.0;
        std::size_t far_i = 0;
        for (std::size_t i = 0; i < n; ++i) {
          if (counts[labels[i]] <= 1) continue;  // never empty another cluster
          const double d = dist2(points[i], centroids[labels[i]]);
          if (d > far_d) {
            far_d = d;
            far_i = i;
          }
        }
        counts[labels[far_i]]--;
        labels[far_i] = c;
        counts[c] = 1;
        centroids[c] = points[far_i];
        changed = true;
      }

      std::vector<std::vector<double>> sums(cluster_count,
                                            std::vector<double>(dim, 0.0));
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dim; ++j) sums[labels[i]][j] += points[i][j];
      for (std::size_t c = 0; c < cluster_count; ++c) {
        if (counts[c] == 0) continue;  // keep the old centroid
        for (std::size_t j = 0; j < dim; ++j)
          centroids[c][j] = sums[c][j] / static_cast<double>(counts[c]);
      }

      if (!changed) break;
    }

    double wcss = 0.0;
    for (std::size_t i = 0; i < n; ++i) wcss += dist2(points[i], centroids[labels[i]]);
    if (wcss < best.wcss) {
      best.wcss = wcss;
      best.labels = labels;
      best.centroids = centroids;
    }
  }
  return best;
}

Matrix transition_matrix(const std::vector<std::size_t>& labels,
                         std::size_t cluster_count) {
  if (labels.size() < 2) throw DataError("transition_matrix: need at least 2 labels");
  for (std::size_t l : labels)
    if (l >= cluster_count)
      throw DataError("transition_matrix: label " + std::to_string(l) +
                      " out of range (C = " + std::to_string(cluster_count) + ")");
  Matrix t(cluster_count, cluster_count);
  for (std::size_t k = 0; k + 1 < labels.size(); ++k) t(labels[k], labels[k + 1]) += 1.0;
  for (std::size_t s = 0; s < cluster_count; ++s) {
    double total = 0.0;
    for (std::size_t j = 0; j < cluster_count; ++j) total += t(s, j);
    if (total == 0.0) {
      // Dead-end row: uniform keeps the discrete chain ergodic.
      for (std::size_t j = 0; j < cluster_count; ++j)
        t(s, j) = 1.0 / static_cast<double>(cluster_count);
    } else {
      for (std::size_t j = 0; j < cluster_count; ++j) t(s, j) /= total;
    }
  }
  return t;
}

ClusterGeometry cluster_stats(const std::vector<std::vector<double>>& members) {
  if (members.empty()) throw DataError("cluster_stats: empty member set");
  const std::size_t n = members.size();
  const std::size_t dim = members.front().size();

  ClusterGeometry geo;
  geo.centroid.assign(dim, 0.0);
  for (const auto& m : members)
    for (std::size_t j = 0; j < dim; ++j) geo.centroid[j] += m[j];
  for (double& v : geo.centroid) v /= static_cast<double>(n);

  geo.covariance = Matrix(dim, dim);
  for (const auto& m : members)
    for (std::size_t i = 0; i < dim; ++i) {
      const double di = m[i] - geo.centroid[i];
      for (std::size_t j = 0; j < dim; ++j)
        geo.covariance(i, j) += di * (m[j] - geo.centroid[j]);
    }
  for (double& v : geo.covariance.data) v /= static_cast<double>(n);
  for (std::size_t i = 0; i < dim; ++i) geo.covariance(i, i) += 1e-6;

  std::vector<double> dists(n);
  for (std::size_t i = 0; i < n; ++i) dists[i] = std::sqrt(dist2(members[i], geo.centroid));
  std::sort(dists.begin(), dists.end());
  // 95th percentile with linear interpolation, floored for degenerate sets.
  const double pos = 0.95 * static_cast<double>(n - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  const double frac = pos - static_cast<double>(lo);
  const double p95 =
      lo + 1 < n ? dists[lo] + frac * (dists[lo + 1] - dists[lo]) : dists[lo];
  geo.radius = std::max(p95, 1e-3);
  return geo;
}

DynamicsNet train_dynamics_net(
    const std::vector<std::pair<std::vector<double>, std::vector<double>>>& pairs,
    std::size_t latent_dim, const DynamicsConfig& config) {
  DynamicsNet result;
  if (pairs.empty()) {
    // Cluster with no successor: zero function, floor residuals.
    result.net = make_zero_mlp({latent_dim, config.hidden, latent_dim}, Activation::Tanh,
                               Activation::Identity);
    result.residual_var.assign(latent_dim, 1e-6);
    return result;
  }
  for (const auto& [in, target] : pairs)
    if (in.size() != latent_dim || target.size() != latent_dim)
      throw ShapeError("train_dynamics_net: pair dimension mismatch");

  Rng rng(config.seed);
  result.net = make_mlp({latent_dim, config.hidden, latent_dim}, Activation::Tanh,
                        Activation::Identity, rng);
  // Zero-init the readout layer: the net starts as the zero-velocity map and
  // a constant-zero target stays at its exact optimum.
  std::fill(result.net.weights.back().data.begin(), result.net.weights.back().data.end(),
            0.0);
  OptimizerState opt = make_optimizer(result.net, config.learning_rate);

  const std::size_t n = pairs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    // Cosine decay; plain Adam keeps orbiting the minimum at lr scale.
    opt.learning_rate =
        config.learning_rate * 0.5 *
        (1.0 + std::cos(std::numbers::pi * static_cast<double>(epoch) /
                        static_cast<double>(config.epochs)));
    for (std::size_t i = n - 1; i > 0; --i)
      std::swap(order[i], order[rng.uniform_index(i + 1)]);
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t b = std::min(config.batch_size, n - start);
      Matrix x(b, latent_dim);
      Matrix t(b, latent_dim);
      for (std::size_t i = 0; i < b; ++i) {
        const auto& [in, target] = pairs[order[start + i]];
        std::copy(in.begin(), in.end(), x.row(i));
        std::copy(target.begin(), target.end(), t.row(i));
      }
      MlpCache cache;
      Matrix pred = mlp_forward_batch(result.net, x, &cache);
      // loss = sum (pred - t)^2 / (B * L)
      Matrix upstream(b, latent_dim);
      const double scale = 2.0 / static_cast<double>(b * latent_dim);
      double loss = 0.0;
      for (std::size_t i = 0; i < upstream.data.size(); ++i) {
        const double d = pred.data[i] - t.data[i];
        upstream.data[i] = scale * d;
        loss += d * d;
      }
      if (!std::isfinite(loss))
        throw TrainingError("train_dynamics_net: diverged at epoch " +
                            std::to_string(epoch));
      MlpGradients grads = mlp_backward_batch(result.net, cache, upstream);
      optimizer_step(opt, result.net, grads);
    }
  }

  // Residual variance on the training pairs, per dimension.
  std::vector<double> mean(latent_dim, 0.0);
  std::vector<std::vector<double>> residuals(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto pred = mlp_forward(result.net, pairs[i].first);
    residuals[i].resize(latent_dim);
    for (std::size_t l = 0; l < latent_dim; ++l) {
      residuals[i][l] = pairs[i].second[l] - pred[l];
      mean[l] += residuals[i][l];
    }
  }
  for (double& v : mean) v /= static_cast<double>(n);
  result.residual_var.assign(latent_dim, 0.0);
  for (const auto& r : residuals)
    for (std::size_t l = 0; l < latent_dim; ++l) {
      const double d = r[l] - mean[l];
      result.residual_var[l] += d * d;
    }
  for (double& v : result.residual_var)
    v = std::max(v / static_cast<double>(n), 1e-6);
  return result;
}

VocabularyBundle build_vocabulary(const std::vector<GeneralizedState>& gs_seq,
                                  const VocabularyConfig& config) {
  const std::size_t n = gs_seq.size();
  if (config.cluster_count == 0) throw DataError("build_vocabulary: C must be >= 1");
  if (n < config.cluster_count)
    throw DataError("build_vocabulary: fewer states than clusters");
  const std::size_t latent = gs_seq.front().mu.size();

  std::vector<std::vector<double>> points(n);
  for (std::size_t i = 0; i < n; ++i) points[i] = gs_vector(gs_seq[i]);

  KmeansResult km = kmeans(points, config.cluster_count, split_seed(config.seed, "kmeans"));

  VocabularyBundle vocab;
  vocab.latent_dim = latent;
  vocab.transition = transition_matrix(km.labels, config.cluster_count);

  std::vector<std::vector<std::vector<double>>> members(config.cluster_count);
  std::vector<std::vector<std::pair<std::vector<double>, std::vector<double>>>> pairs(
      config.cluster_count);
  for (std::size_t k = 0; k < n; ++k) {
    members[km.labels[k]].push_back(points[k]);
    if (k + 1 < n) pairs[km.labels[k]].push_back({gs_seq[k].mu, gs_seq[k + 1].mu_dot});
  }

  for (std::size_t s = 0; s < config.cluster_count; ++s) {
    ClusterGeometry geo = cluster_stats(members[s]);
    DynamicsConfig dyn_cfg = config.dynamics;
    dyn_cfg.seed = split_seed(config.seed, "dyn-" + std::to_string(s + 1));
    DynamicsNet dyn = train_dynamics_net(pairs[s], latent, dyn_cfg);

    ClusterInfo info;
    info.centroid = std::move(geo.centroid);
    info.covariance = std::move(geo.covariance);
    info.radius = geo.radius;
    info.member_count = members[s].size();
    info.dynamics = std::move(dyn.net);
    info.residual_var = std::move(dyn.residual_var);
    vocab.clusters.push_back(std::move(info));
  }
  return vocab;
}

namespace {

nlohmann::json reals_to_json(std::span<const double> v) {
  nlohmann::json arr = nlohmann::json::array();
  for (double x : v) arr.push_back(format_real(x));
  return arr;
}

std::vector<double> reals_from_json(const nlohmann::json& arr) {
  std::vector<double> out;
  out.reserve(arr.size());
  for (const auto& s : arr) out.push_back(parse_real(s.get<std::string>()));
  return out;
}

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t i = 0; i < m.rows; ++i)
    rows.push_back(reals_to_json(std::span<const double>(m.row(i), m.cols)));
  return rows;
}

Matrix matrix_from_json(const nlohmann::json& rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.at(0).size();
  Matrix m(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    const auto row = reals_from_json(rows.at(i));
    if (row.size() != c) throw IoError("vocab.json: ragged matrix");
    std::copy(row.begin(), row.end(), m.row(i));
  }
  return m;
}

}  // namespace

void save_vocabulary(const VocabularyBundle& vocab, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json doc;
  doc["latent_dim"] = vocab.latent_dim;
  doc["cluster_count"] = vocab.clusters.size();
  doc["transition"] = matrix_to_json(vocab.transition);
  nlohmann::json clusters = nlohmann::json::array();
  for (std::size_t s = 0; s < vocab.clusters.size(); ++s) {
    const ClusterInfo& info = vocab.clusters[s];
    const std::string dyn_file = "dyn_" + std::to_string(s + 1) + ".bin";
    nlohmann::json entry;
    entry["label"] = s + 1;
    entry["member_count"] = info.member_count;
    entry["centroid"] = reals_to_json(info.centroid);
    entry["covariance"] = matrix_to_json(info.covariance);
    entry["radius"] = format_real(info.radius);
    entry["residual_var"] = reals_to_json(info.residual_var);
    entry["dynamics"] = save_mlp(info.dynamics, dir / dyn_file);
    clusters.push_back(std::move(entry));
  }
  doc["clusters"] = std::move(clusters);
  std::ofstream os(dir / "vocab.json", std::ios::trunc);
  if (!os) throw IoError("cannot write: " + (dir / "vocab.json").string());
  os << doc.dump(2) << "\n";
}

VocabularyBundle load_vocabulary(const std::filesystem::path& dir) {
  std::ifstream is(dir / "vocab.json");
  if (!is) throw IoError("cannot open: " + (dir / "vocab.json").string());
  nlohmann::json doc = nlohmann::json::parse(is);

  VocabularyBundle vocab;
  vocab.latent_dim = doc.at("latent_dim").get<std::size_t>();
  vocab.transition = matrix_from_json(doc.at("transition"));
  for (const auto& entry : doc.at("clusters")) {
    ClusterInfo info;
    info.member_count = entry.at("member_count").get<std::size_t>();
    info.centroid = reals_from_json(entry.at("centroid"));
    info.covariance = matrix_from_json(entry.at("covariance"));
    info.radius = parse_real(entry.at("radius").get<std::string>());
    info.residual_var = reals_from_json(entry.at("residual_var"));
    const auto dyn_manifest = entry.at("dynamics");
    info.dynamics = load_mlp(dyn_manifest, dir / dyn_manifest.at("file").get<std::string>());
    vocab.clusters.push_back(std::move(info));
  }
  if (vocab.transition.rows != vocab.clusters.size())
    throw IoError("vocab.json: transition size does not match clusters");
  return vocab;
}

}  // namespace framecast
