#include "framecast/vae.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace framecast {

namespace {

constexpr double kProbClamp = 1e-7;

void check_frame_matches(const VaeModel& model, const Frame& frame) {
  if (frame.width != model.frame_width || frame.height != model.frame_height)
    throw ShapeError("frame " + std::to_string(frame.width) + "x" +
                     std::to_string(frame.height) + " does not match model " +
                     std::to_string(model.frame_width) + "x" +
                     std::to_string(model.frame_height));
}

}  // namespace

void validate_frame(const Frame& frame) {
  if (frame.pixels.size() != frame.width * frame.height)
    throw DataError("frame: pixel count does not match dimensions");
  for (double p : frame.pixels)
    if (!(p >= 0.0 && p <= 1.0))
      throw DataError("frame: pixel outside [0, 1]");
}

Frame read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open: " + path.string());

  auto next_token = [&is, &path]() {
    std::string tok;
    while (is) {
      int c = is.get();
      if (c == '#') {  // comment to end of line
        while (is && is.get() != '\n') {}
        continue;
      }
      if (std::isspace(c)) {
        if (!tok.empty()) break;
        continue;
      }
      if (c == EOF) break;
      tok.push_back(static_cast<char>(c));
    }
    if (tok.empty()) throw IoError("truncated PGM header: " + path.string());
    return tok;
  };

  if (next_token() != "P5") throw IoError("not a binary PGM (P5): " + path.string());
  const std::size_t width = std::stoul(next_token());
  const std::size_t height = std::stoul(next_token());
  const std::size_t maxval = std::stoul(next_token());
  if (maxval != 255) throw IoError("expected 8-bit PGM (maxval 255): " + path.string());

  std::vector<unsigned char> raw(width * height);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!is) throw IoError("truncated PGM data: " + path.string());

  Frame frame{width, height, std::vector<double>(width * height)};
  for (std::size_t i = 0; i < raw.size(); ++i)
    frame.pixels[i] = static_cast<double>(raw[i]) / 255.0;
  return frame;
}

void write_pgm(const Frame& frame, const std::filesystem::path& path) {
  validate_frame(frame);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path.string());
  os << "P5\n" << frame.width << " " << frame.height << "\n255\n";
  std::vector<unsigned char> raw(frame.pixels.size());
  for (std::size_t i = 0; i < raw.size(); ++i)
    raw[i] = static_cast<unsigned char>(std::lround(frame.pixels[i] * 255.0));
  os.write(reinterpret_cast<const char*>(raw.data()),
           static_cast<std::streamsize>(raw.size()));
  if (!os) throw IoError("write failed: " + path.string());
}

VaeModel make_vae(std::size_t frame_width, std::size_t frame_height,
                  const VaeConfig& config, Rng& rng) {
  if (config.latent_dim == 0) throw ConfigError("latent_dim must be >= 1");
  const std::size_t input_dim = frame_width * frame_height;
  std::vector<std::size_t> enc_sizes{input_dim};
  enc_sizes.insert(enc_sizes.end(), config.hidden.begin(), config.hidden.end());
  enc_sizes.push_back(2 * config.latent_dim);
  std::vector<std::size_t> dec_sizes{config.latent_dim};
  dec_sizes.insert(dec_sizes.end(), config.hidden.rbegin(), config.hidden.rend());
  dec_sizes.push_back(input_dim);

  VaeModel model;
  model.encoder = make_mlp(enc_sizes, Activation::Tanh, Activation::Identity, rng);
  model.decoder = make_mlp(dec_sizes, Activation::Tanh, Activation::Sigmoid, rng);
  model.latent_dim = config.latent_dim;
  model.frame_width = frame_width;
  model.frame_height = frame_height;
  return model;
}

LatentCode encode(const VaeModel& model, const Frame& frame) {
  check_frame_matches(model, frame);
  const std::vector<double> out = mlp_forward(model.encoder, frame.pixels);
  const std::size_t latent = model.latent_dim;
  LatentCode code;
  code.mu.assign(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(latent));
  code.sigma2.resize(latent);
  for (std::size_t l = 0; l < latent; ++l) code.sigma2[l] = std::exp(out[latent + l]);
  return code;
}

Frame decode(const VaeModel& model, std::span<const double> z) {
  if (z.size() != model.latent_dim)
    throw ShapeError("decode: latent size " + std::to_string(z.size()) + ", expected " +
                     std::to_string(model.latent_dim));
  Frame frame;
  frame.width = model.frame_width;
  frame.height = model.frame_height;
  frame.pixels = mlp_forward(model.decoder, z);
  return frame;
}

namespace {

// Batched ELBO: rows of `inputs` are frames, rows of `noise` are the
// standard-normal draws. Returns the mean loss over the batch; gradients are
// scaled accordingly.
ElboValue elbo_batch(const VaeModel& model, const Matrix& inputs, const Matrix& noise,
                     ElboGradients* gradients) {
  const std::size_t batch = inputs.rows;
  const std::size_t latent = model.latent_dim;
  const double inv_batch = 1.0 / static_cast<double>(batch);

  MlpCache enc_cache;
  const Matrix enc_out = mlp_forward_batch(model.encoder, inputs, &enc_cache);

  // Split mu / log-variance, reparameterize.
  Matrix z(batch, latent);
  Matrix sigma(batch, latent);
  double kl_total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const double* eo = enc_out.row(i);
    for (std::size_t l = 0; l < latent; ++l) {
      const double mu = eo[l];
      const double lv = eo[latent + l];
      const double sd = std::exp(0.5 * lv);
      sigma(i, l) = sd;
      z(i, l) = mu + sd * noise(i, l);
      kl_total += 0.5 * (mu * mu + std::exp(lv) - 1.0 - lv);
    }
  }

  MlpCache dec_cache;
  const Matrix dec_out = mlp_forward_batch(model.decoder, z, &dec_cache);

  // Bernoulli NLL with clamped probabilities.
  double recon_total = 0.0;
  Matrix d_dec(batch, dec_out.cols);
  for (std::size_t i = 0; i < batch; ++i) {
    const double* x = inputs.row(i);
    const double* p = dec_out.row(i);
    double* dp = d_dec.row(i);
    for (std::size_t j = 0; j < dec_out.cols; ++j) {
      const double pc = std::clamp(p[j], kProbClamp, 1.0 - kProbClamp);
      recon_total -= x[j] * std::log(pc) + (1.0 - x[j]) * std::log(1.0 - pc);
      const bool clamped = p[j] < kProbClamp || p[j] > 1.0 - kProbClamp;
      dp[j] = clamped ? 0.0 : (-x[j] / pc + (1.0 - x[j]) / (1.0 - pc)) * inv_batch;
    }
  }

  ElboValue value;
  value.reconstruction = recon_total * inv_batch;
  value.kl = kl_total * inv_batch;
  value.loss = value.reconstruction + value.kl;
  if (!gradients) return value;

  Matrix dz;
  gradients->decoder = mlp_backward_batch(model.decoder, dec_cache, d_dec, &dz);

  // Upstream for the encoder: [d mu | d logvar], combining the
  // reparameterized reconstruction path with the closed-form KL.
  Matrix d_enc(batch, 2 * latent);
  for (std::size_t i = 0; i < batch; ++i) {
    const double* eo = enc_out.row(i);
    double* de = d_enc.row(i);
    for (std::size_t l = 0; l < latent; ++l) {
      const double mu = eo[l];
      const double lv = eo[latent + l];
      de[l] = dz(i, l) + mu * inv_batch;
      de[latent + l] = dz(i, l) * noise(i, l) * 0.5 * sigma(i, l) +
                       0.5 * (std::exp(lv) - 1.0) * inv_batch;
    }
  }
  gradients->encoder = mlp_backward_batch(model.encoder, enc_cache, d_enc);
  return value;
}

}  // namespace

ElboValue elbo_loss(const VaeModel& model, const Frame& frame,
                    std::span<const double> noise, ElboGradients* gradients) {
  check_frame_matches(model, frame);
  if (noise.size() != model.latent_dim)
    throw ShapeError("elbo_loss: noise length must equal the latent dimension");
  Matrix x(1, frame.pixels.size());
  std::copy(frame.pixels.begin(), frame.pixels.end(), x.data.begin());
  Matrix eps(1, noise.size());
  std::copy(noise.begin(), noise.end(), eps.data.begin());
  ElboValue value = elbo_batch(model, x, eps, gradients);
  if (!std::isfinite(value.loss)) throw TrainingError("elbo_loss: non-finite loss");
  return value;
}

VaeModel train_vae(const std::vector<Frame>& frames, const VaeConfig& config,
                   TrainingHistory* history) {
  if (frames.empty()) throw DataError("train_vae: empty input");
  if (frames.size() < 32) throw DataError("train_vae: need at least 32 frames");
  const std::size_t width = frames.front().width;
  const std::size_t height = frames.front().height;
  for (const Frame& f : frames) {
    validate_frame(f);
    if (f.width != width || f.height != height)
      throw DataError("train_vae: frames have non-uniform dimensions");
  }

  Rng rng(config.seed);
  VaeModel model = make_vae(width, height, config, rng);
  OptimizerState enc_opt = make_optimizer(model.encoder, config.learning_rate);
  OptimizerState dec_opt = make_optimizer(model.decoder, config.learning_rate);

  const std::size_t n = frames.size();
  const std::size_t input_dim = width * height;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  if (history) history->epoch_loss.clear();
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    // Fisher-Yates with the training stream.
    for (std::size_t i = n - 1; i > 0; --i)
      std::swap(order[i], order[rng.uniform_index(i + 1)]);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t b = std::min(config.batch_size, n - start);
      Matrix x(b, input_dim);
      for (std::size_t i = 0; i < b; ++i) {
        const Frame& f = frames[order[start + i]];
        std::copy(f.pixels.begin(), f.pixels.end(), x.row(i));
      }
      Matrix eps(b, model.latent_dim);
      for (double& e : eps.data) e = rng.normal();

      ElboGradients grads;
      const ElboValue value = elbo_batch(model, x, eps, &grads);
      if (!std::isfinite(value.loss))
        throw TrainingError("train_vae: diverged (non-finite loss) at epoch " +
                            std::to_string(epoch));
      optimizer_step(enc_opt, model.encoder, grads.encoder);
      optimizer_step(dec_opt, model.decoder, grads.decoder);
      epoch_loss += value.loss * static_cast<double>(b);
    }
    if (history) history->epoch_loss.push_back(epoch_loss / static_cast<double>(n));
  }
  return model;
}

void save_vae(const VaeModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["frame"] = {{"width", model.frame_width}, {"height", model.frame_height}};
  manifest["latent_dim"] = model.latent_dim;
  manifest["bundle_id"] = model.bundle_id;
  manifest["encoder"] = save_mlp(model.encoder, dir / "encoder.bin");
  manifest["decoder"] = save_mlp(model.decoder, dir / "decoder.bin");
  std::ofstream os(dir / "manifest.json", std::ios::trunc);
  if (!os) throw IoError("cannot write manifest: " + (dir / "manifest.json").string());
  os << manifest.dump(2) << "\n";
}

VaeModel load_vae(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw IoError("cannot open manifest: " + (dir / "manifest.json").string());
  nlohmann::json manifest = nlohmann::json::parse(is);

  VaeModel model;
  model.frame_width = manifest.at("frame").at("width").get<std::size_t>();
  model.frame_height = manifest.at("frame").at("height").get<std::size_t>();
  model.latent_dim = manifest.at("latent_dim").get<std::size_t>();
  model.bundle_id = manifest.at("bundle_id").get<std::size_t>();
  model.encoder = load_mlp(manifest.at("encoder"), dir / "encoder.bin");
  model.decoder = load_mlp(manifest.at("decoder"), dir / "decoder.bin");

  if (model.encoder.input_size() != model.frame_width * model.frame_height ||
      model.encoder.output_size() != 2 * model.latent_dim ||
      model.decoder.input_size() != model.latent_dim ||
      model.decoder.output_size() != model.frame_width * model.frame_height)
    throw IoError("vae manifest is inconsistent: " + dir.string());
  return model;
}

}  // namespace framecast
