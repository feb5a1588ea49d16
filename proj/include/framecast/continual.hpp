#pragma once

// Lifecycle orchestration: train the first model bundle, self-run the filter
// to fit the novelty threshold, harvest flagged frames, train additional
// bundles on them, and combine bundles into one filter without touching
// anything already learned.

#include <cstddef>
#include <filesystem>
#include <vector>

#include "framecast/amjpf.hpp"
#include "framecast/vae.hpp"
#include "framecast/vocabulary.hpp"

namespace framecast {

struct ModelBundle {
  std::size_t id = 0;  // 1-based; bundle_<id> on disk
  VaeModel vae;
  VocabularyBundle vocabulary;
  double threshold = 0.0;  // fitted on this bundle's own training data
};

struct SegmentMeta {
  std::size_t begin = 0;  // inclusive frame indices into the source run
  std::size_t end = 0;
};

struct ExperienceSegment {
  SegmentMeta span;
  std::vector<Frame> frames;
};

struct ExperienceStore {
  std::vector<ExperienceSegment> segments;
  std::size_t total_frames() const;
};

struct LearnConfig {
  VaeConfig vae;
  VocabularyConfig vocabulary;
  FilterOptions filter;
  std::uint64_t seed = 1;  // per-component streams are split from this
};

struct LearnResult {
  ModelBundle bundle;
  std::vector<double> train_innovations;  // after the 3-frame burn-in
  TrainingHistory vae_history;
};

// Train VAE^1 and V^1 on the full sequence, run the filter over the same
// sequence, and fit the threshold on the resulting innovations.
LearnResult learn_initial(const std::vector<Frame>& frames, const LearnConfig& config);

// Store exactly the flagged frames, grouped into contiguous segments.
ExperienceStore harvest_new_frames(const std::vector<TraceRow>& trace,
                                   const std::vector<Frame>& frames);

// Same pipeline as learn_initial but over harvested segments: generalized
// states never cross a segment boundary and the self-run restarts per
// segment. Requires at least 32 harvested frames.
LearnResult learn_new_situation(const ExperienceStore& store, const LearnConfig& config,
                                std::size_t new_bundle_id);

struct CombinedFilter {
  std::vector<const ModelBundle*> bundles;
  double threshold = 0.0;  // max over bundle thresholds
};

CombinedFilter combine(const std::vector<const ModelBundle*>& bundles);

std::vector<BundleRef> bundle_refs(const CombinedFilter& combined);

// Registry layout: <registry>/bundles/bundle_<id>/ holding the VAE files,
// the vocabulary files, and bundle.json (threshold + provenance). Writes are
// byte-deterministic for identical inputs.
void save_bundle(const ModelBundle& bundle, const std::filesystem::path& registry,
                 const nlohmann::json& provenance);
ModelBundle load_bundle(const std::filesystem::path& bundle_dir);
std::vector<ModelBundle> load_registry(const std::filesystem::path& registry);

}  // namespace framecast
