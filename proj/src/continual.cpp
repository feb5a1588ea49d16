#include "framecast/continual.hpp"

#include <algorithm>
#include <fstream>

namespace framecast {

std::size_t ExperienceStore::total_frames() const {
  std::size_t n = 0;
  for (const ExperienceSegment& s : segments) n += s.frames.size();
  return n;
}

namespace {

// Filter self-run over one contiguous sequence; innovations for frames
// 1..N-1 with the first `burn_in` entries dropped.
std::vector<double> self_run_innovations(const ModelBundle& bundle,
                                         const std::vector<Frame>& frames,
                                         FilterOptions options, std::size_t burn_in) {
  BundleRef ref{bundle.id, &bundle.vae, &bundle.vocabulary};
  Amjpf filter({ref}, options, frames.front());
  std::vector<double> innovations;
  for (std::size_t k = 1; k < frames.size(); ++k)
    innovations.push_back(filter.step(frames[k]).innovation);
  if (innovations.size() <= burn_in) return {};
  innovations.erase(innovations.begin(),
                    innovations.begin() + static_cast<std::ptrdiff_t>(burn_in));
  return innovations;
}

std::vector<std::vector<double>> encode_mu_sequence(const VaeModel& vae,
                                                    const std::vector<Frame>& frames) {
  std::vector<std::vector<double>> mu;
  mu.reserve(frames.size());
  for (const Frame& f : frames) mu.push_back(encode(vae, f).mu);
  return mu;
}

}  // namespace

LearnResult learn_initial(const std::vector<Frame>& frames, const LearnConfig& config) {
  if (frames.size() < 100)
    throw DataError("learn_initial: need at least 100 frames, got " +
                    std::to_string(frames.size()));

  LearnResult result;
  result.bundle.id = 1;

  VaeConfig vae_cfg = config.vae;
  vae_cfg.seed = split_seed(config.seed, "vae-1");
  result.bundle.vae = train_vae(frames, vae_cfg, &result.vae_history);
  result.bundle.vae.bundle_id = 1;

  const auto mu_seq = encode_mu_sequence(result.bundle.vae, frames);
  const auto gs = build_generalized_states(mu_seq);

  VocabularyConfig vocab_cfg = config.vocabulary;
  vocab_cfg.seed = split_seed(config.seed, "vocab-1");
  result.bundle.vocabulary = build_vocabulary(gs, vocab_cfg);

  FilterOptions filter_opts = config.filter;
  filter_opts.seed = split_seed(config.seed, "filter-train-1");
  result.train_innovations =
      self_run_innovations(result.bundle, frames, filter_opts, 3);
  result.bundle.threshold = compute_threshold(result.train_innovations);
  return result;
}

ExperienceStore harvest_new_frames(const std::vector<TraceRow>& trace,
                                   const std::vector<Frame>& frames) {
  ExperienceStore store;
  ExperienceSegment current;
  bool open = false;
  std::size_t prev_idx = 0;
  for (const TraceRow& row : trace) {
    if (row.frame_idx >= frames.size())
      throw DataError("harvest_new_frames: trace frame " + std::to_string(row.frame_idx) +
                      " beyond the " + std::to_string(frames.size()) + "-frame run");
    const bool contiguous = open && row.frame_idx == prev_idx + 1;
    if (row.flagged_new) {
      if (!contiguous && open) {
        store.segments.push_back(std::move(current));
        current = ExperienceSegment{};
        open = false;
      }
      if (!open) {
        current.span.begin = row.frame_idx;
        open = true;
      }
      current.span.end = row.frame_idx;
      current.frames.push_back(frames[row.frame_idx]);
      prev_idx = row.frame_idx;
    } else if (open) {
      store.segments.push_back(std::move(current));
      current = ExperienceSegment{};
      open = false;
    }
  }
  if (open) store.segments.push_back(std::move(current));
  return store;
}

LearnResult learn_new_situation(const ExperienceStore& store, const LearnConfig& config,
                                std::size_t new_bundle_id) {
  if (store.total_frames() < 32)
    throw DataError("learn_new_situation: insufficient novel data (" +
                    std::to_string(store.total_frames()) + " frames, need 32)");

  std::vector<Frame> all_frames;
  for (const ExperienceSegment& seg : store.segments)
    all_frames.insert(all_frames.end(), seg.frames.begin(), seg.frames.end());

  LearnResult result;
  result.bundle.id = new_bundle_id;
  const std::string tag = std::to_string(new_bundle_id);

  VaeConfig vae_cfg = config.vae;
  vae_cfg.seed = split_seed(config.seed, "vae-" + tag);
  result.bundle.vae = train_vae(all_frames, vae_cfg, &result.vae_history);
  result.bundle.vae.bundle_id = new_bundle_id;

  // Generalized states per contiguous segment; no derivative across a
  // boundary.
  std::vector<GeneralizedState> gs;
  for (const ExperienceSegment& seg : store.segments) {
    if (seg.frames.size() < 2) continue;
    const auto mu_seq = encode_mu_sequence(result.bundle.vae, seg.frames);
    auto seg_gs = build_generalized_states(mu_seq);
    gs.insert(gs.end(), seg_gs.begin(), seg_gs.end());
  }
  if (gs.size() < config.vocabulary.cluster_count)
    throw DataError("learn_new_situation: not enough generalized states");

  VocabularyConfig vocab_cfg = config.vocabulary;
  vocab_cfg.seed = split_seed(config.seed, "vocab-" + tag);
  result.bundle.vocabulary = build_vocabulary(gs, vocab_cfg);

  // Threshold from per-segment self-runs, each with its own burn-in.
  std::size_t run_index = 0;
  for (const ExperienceSegment& seg : store.segments) {
    if (seg.frames.size() < 2) continue;
    FilterOptions filter_opts = config.filter;
    filter_opts.seed =
        split_seed(config.seed, "filter-train-" + tag + "-" + std::to_string(run_index++));
    const auto innovations = self_run_innovations(result.bundle, seg.frames, filter_opts, 3);
    result.train_innovations.insert(result.train_innovations.end(), innovations.begin(),
                                    innovations.end());
  }
  result.bundle.threshold = compute_threshold(result.train_innovations);
  return result;
}

CombinedFilter combine(const std::vector<const ModelBundle*>& bundles) {
  if (bundles.empty()) throw DataError("combine: need at least one bundle");
  CombinedFilter combined;
  combined.bundles = bundles;
  std::sort(combined.bundles.begin(), combined.bundles.end(),
            [](const ModelBundle* a, const ModelBundle* b) { return a->id < b->id; });
  combined.threshold = combined.bundles.front()->threshold;
  for (const ModelBundle* b : combined.bundles)
    combined.threshold = std::max(combined.threshold, b->threshold);
  return combined;
}

std::vector<BundleRef> bundle_refs(const CombinedFilter& combined) {
  std::vector<BundleRef> refs;
  refs.reserve(combined.bundles.size());
  for (const ModelBundle* b : combined.bundles)
    refs.push_back(BundleRef{b->id, &b->vae, &b->vocabulary});
  return refs;
}

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& registry,
                 const nlohmann::json& provenance) {
  const auto dir = registry / "bundles" / ("bundle_" + std::to_string(bundle.id));
  std::filesystem::create_directories(dir);
  save_vae(bundle.vae, dir);
  save_vocabulary(bundle.vocabulary, dir);
  nlohmann::json doc;
  doc["id"] = bundle.id;
  doc["threshold"] = format_real(bundle.threshold);
  doc["provenance"] = provenance;
  std::ofstream os(dir / "bundle.json", std::ios::trunc);
  if (!os) throw IoError("cannot write: " + (dir / "bundle.json").string());
  os << doc.dump(2) << "\n";
}

ModelBundle load_bundle(const std::filesystem::path& bundle_dir) {
  std::ifstream is(bundle_dir / "bundle.json");
  if (!is) throw IoError("cannot open: " + (bundle_dir / "bundle.json").string());
  nlohmann::json doc = nlohmann::json::parse(is);

  ModelBundle bundle;
  bundle.id = doc.at("id").get<std::size_t>();
  bundle.threshold = parse_real(doc.at("threshold").get<std::string>());
  bundle.vae = load_vae(bundle_dir);
  bundle.vocabulary = load_vocabulary(bundle_dir);
  if (bundle.vae.latent_dim != bundle.vocabulary.latent_dim)
    throw IoError("bundle " + std::to_string(bundle.id) +
                  ": VAE and vocabulary disagree on the latent dimension");
  return bundle;
}

std::vector<ModelBundle> load_registry(const std::filesystem::path& registry) {
  const auto bundles_dir = registry / "bundles";
  if (!std::filesystem::is_directory(bundles_dir))
    throw DataError("no bundle registry at " + registry.string());
  std::vector<std::filesystem::path> dirs;
  for (const auto& entry : std::filesystem::directory_iterator(bundles_dir))
    if (entry.is_directory() && entry.path().filename().string().starts_with("bundle_"))
      dirs.push_back(entry.path());
  if (dirs.empty()) throw DataError("empty bundle registry at " + registry.string());

  std::vector<ModelBundle> bundles;
  for (const auto& dir : dirs) bundles.push_back(load_bundle(dir));
  std::sort(bundles.begin(), bundles.end(),
            [](const ModelBundle& a, const ModelBundle& b) { return a.id < b.id; });
  return bundles;
}

}  // namespace framecast
