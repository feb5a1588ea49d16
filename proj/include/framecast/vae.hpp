#pragma once

// Variational autoencoder over grayscale frames: probabilistic latent codes
// (mu, sigma^2), Bernoulli reconstruction, closed-form KL against the unit
// prior, and a seeded mini-batch trainer.

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "framecast/ndmath.hpp"

namespace framecast {

struct Frame {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;  // row-major, values in [0, 1]
};

// Throws DataError when sizes disagree or a pixel leaves [0, 1].
void validate_frame(const Frame& frame);

// Binary PGM (P5, maxval 255); pixel value v maps to the real v/255.
Frame read_pgm(const std::filesystem::path& path);
void write_pgm(const Frame& frame, const std::filesystem::path& path);

struct LatentCode {
  std::vector<double> mu;
  std::vector<double> sigma2;
};

struct VaeModel {
  Mlp encoder;  // D -> 2L: mu then log-variance
  Mlp decoder;  // L -> D, sigmoid output
  std::size_t latent_dim = 0;
  std::size_t frame_width = 0;
  std::size_t frame_height = 0;
  std::size_t bundle_id = 0;
};

struct VaeConfig {
  std::size_t latent_dim = 8;
  std::vector<std::size_t> hidden = {256, 128};  // encoder; decoder mirrors
  std::size_t epochs = 300;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
};

VaeModel make_vae(std::size_t frame_width, std::size_t frame_height,
                  const VaeConfig& config, Rng& rng);

LatentCode encode(const VaeModel& model, const Frame& frame);
Frame decode(const VaeModel& model, std::span<const double> z);

struct ElboValue {
  double loss = 0.0;            // reconstruction + kl
  double reconstruction = 0.0;  // summed Bernoulli NLL
  double kl = 0.0;
};
struct ElboGradients {
  MlpGradients encoder;
  MlpGradients decoder;
};

// One-sample ELBO loss with reparameterization z = mu + sigma * noise.
// Gradients flow through both the reconstruction and the KL term.
ElboValue elbo_loss(const VaeModel& model, const Frame& frame,
                    std::span<const double> noise,
                    ElboGradients* gradients = nullptr);

struct TrainingHistory {
  std::vector<double> epoch_loss;  // mean per epoch
};

// Seeded, reproducible mini-batch training. Throws DataError on fewer than
// 32 frames or non-uniform dimensions, TrainingError on divergence.
VaeModel train_vae(const std::vector<Frame>& frames, const VaeConfig& config,
                   TrainingHistory* history = nullptr);

// Bundle directory layout: manifest.json + encoder.bin + decoder.bin.
void save_vae(const VaeModel& model, const std::filesystem::path& dir);
VaeModel load_vae(const std::filesystem::path& dir);

}  // namespace framecast
