// framecast: learn predictive frame models, run the jump particle filter,
// detect new situations, and grow the bundle registry without touching what
// was already learned.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "framecast/config.hpp"
#include "framecast/continual.hpp"
#include "framecast/eval.hpp"
#include "framecast/synthworld.hpp"

namespace fs = std::filesystem;
using namespace framecast;

namespace {

struct CommonArgs {
  std::string config_file;
  std::vector<std::string> overrides;
  std::string dataset;
  std::string registry;
  std::string out;
};

RunConfig resolve_config(const CommonArgs& args) {
  std::optional<fs::path> file;
  if (!args.config_file.empty()) file = fs::path(args.config_file);
  RunConfig cfg = load_run_config(file, args.overrides);
  if (!args.dataset.empty()) cfg.paths.dataset = args.dataset;
  if (!args.registry.empty()) cfg.paths.registry = args.registry;
  if (!args.out.empty()) cfg.paths.out = args.out;
  return cfg;
}

fs::path need_path(const std::string& value, const char* what) {
  if (value.empty()) throw ConfigError(std::string("missing required path: ") + what);
  return fs::path(value);
}

std::vector<ModelBundle> load_selected_bundles(const fs::path& registry,
                                               const std::string& selection) {
  std::vector<ModelBundle> all = load_registry(registry);
  if (selection.empty()) return all;
  std::vector<ModelBundle> picked;
  std::stringstream ss(selection);
  std::string token;
  while (std::getline(ss, token, ',')) {
    const std::size_t id = std::stoul(token);
    bool found = false;
    for (auto& b : all) {
      if (b.id == id) {
        picked.push_back(std::move(b));
        found = true;
        break;
      }
    }
    if (!found) throw DataError("bundle " + token + " not in registry");
  }
  return picked;
}

// Runs the combined filter over a dataset and writes trace.csv plus
// segments.json under `out`.
void run_test_command(const RunConfig& cfg, const fs::path& dataset, const fs::path& out,
                      const std::string& bundles_arg) {
  std::vector<ModelBundle> bundles =
      load_selected_bundles(need_path(cfg.paths.registry, "registry"), bundles_arg);
  std::vector<const ModelBundle*> ptrs;
  for (const ModelBundle& b : bundles) ptrs.push_back(&b);
  const CombinedFilter combined = combine(ptrs);

  const std::vector<Frame> frames = load_dataset_frames(dataset);
  if (frames.size() < 2) throw DataError("test: need at least 2 frames");

  FilterOptions opts = make_filter_options(cfg, "filter-test");
  Amjpf filter(bundle_refs(combined), opts, frames.front());
  std::vector<StepRecord> records;
  records.reserve(frames.size() - 1);
  for (std::size_t k = 1; k < frames.size(); ++k) records.push_back(filter.step(frames[k]));

  const std::vector<TraceRow> trace = make_trace(records, combined.threshold);
  fs::create_directories(out);
  write_trace_csv(trace, out / "trace.csv");

  nlohmann::json segments = nlohmann::json::array();
  for (std::size_t i = 0; i < trace.size(); ++i) {
    if (trace[i].flagged_new && (i == 0 || !trace[i - 1].flagged_new)) {
      std::size_t j = i;
      while (j + 1 < trace.size() && trace[j + 1].flagged_new) ++j;
      segments.push_back({{"begin", trace[i].frame_idx}, {"end", trace[j].frame_idx}});
    }
  }
  nlohmann::json doc;
  doc["threshold"] = format_real(combined.threshold);
  doc["segments"] = segments;
  doc["out_of_radius_total"] = filter.stats().out_of_radius_total;
  doc["resamples"] = filter.stats().resamples;
  doc["zero_weight_resets"] = filter.stats().zero_weight_resets;
  std::ofstream os(out / "segments.json", std::ios::trunc);
  os << doc.dump(2) << "\n";

  std::size_t flagged = 0;
  for (const TraceRow& row : trace) flagged += row.flagged_new;
  std::printf("test: %zu frames, %zu flagged, threshold %.6g\n", trace.size(), flagged,
              combined.threshold);
}

void print_report(const EvalReport& r) {
  std::printf("false_positive_rate    %.4f\n", r.false_positive_rate);
  std::printf("segment_recall         %.4f\n", r.segment_recall);
  std::printf("frame_precision        %.4f\n", r.frame_precision);
  std::printf("frame_recall           %.4f\n", r.frame_recall);
  std::printf("mean_innovation_known  %.6g\n", r.mean_innovation_known);
  std::printf("mean_innovation_novel  %.6g\n", r.mean_innovation_novel);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"predictive frame models with continual novelty integration"};
  app.require_subcommand(1);
  app.fallthrough();  // --config/--set may follow the subcommand

  CommonArgs args;
  app.add_option("--config", args.config_file, "JSON config file")
      ->check(CLI::ExistingFile);
  app.add_option("--set", args.overrides, "override config keys, key=value");

  auto* synth = app.add_subcommand("synth", "generate a synthetic scenario dataset");
  synth->add_option("--out", args.out, "output dataset directory");

  auto* train = app.add_subcommand("train", "train bundle 1 on a dataset");
  train->add_option("--dataset", args.dataset, "dataset directory");
  train->add_option("--registry", args.registry, "bundle registry directory");

  std::string bundles_arg;
  auto* test = app.add_subcommand("test", "run the filter and write the innovation trace");
  test->add_option("--dataset", args.dataset, "dataset directory");
  test->add_option("--registry", args.registry, "bundle registry directory");
  test->add_option("--out", args.out, "trace output directory");
  test->add_option("--bundles", bundles_arg, "comma-separated bundle ids (default all)");

  std::string trace_arg;
  auto* learn = app.add_subcommand("learn", "harvest flagged frames and train a new bundle");
  learn->add_option("--dataset", args.dataset, "dataset directory");
  learn->add_option("--registry", args.registry, "bundle registry directory");
  learn->add_option("--trace", trace_arg, "trace.csv from a test run")->required();

  std::string labels_arg;
  auto* eval_cmd = app.add_subcommand("eval", "score a trace against ground-truth labels");
  eval_cmd->add_option("--trace", trace_arg, "trace.csv")->required();
  eval_cmd->add_option("--labels", labels_arg, "labels.csv")->required();
  eval_cmd->add_option("--out", args.out, "report JSON path");

  std::string frames_arg;
  std::size_t stride = 50;
  auto* recon = app.add_subcommand("reconstruct",
                                "dump inputs, reconstructions, and one-step predictions");
  recon->add_option("--dataset", args.dataset, "dataset directory");
  recon->add_option("--registry", args.registry, "bundle registry directory");
  recon->add_option("--out", args.out, "output directory");
  recon->add_option("--frames", frames_arg, "comma-separated frame indices");
  recon->add_option("--stride", stride, "sample every n-th frame when --frames is absent");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    const RunConfig cfg = resolve_config(args);

    if (synth->parsed()) {
      const fs::path out = need_path(cfg.paths.out, "out");
      const LabeledSequence seq = generate_scenario(make_world_config(cfg));
      save_dataset(seq, out);
      std::size_t novel = 0;
      for (int l : seq.labels) novel += l;
      std::printf("synth: scenario %d, %zu frames (%zu novel) -> %s\n", cfg.world.scenario,
                  seq.frames.size(), novel, out.string().c_str());
    } else if (train->parsed()) {
      const fs::path dataset = need_path(cfg.paths.dataset, "dataset");
      const fs::path registry = need_path(cfg.paths.registry, "registry");
      const std::vector<Frame> frames = load_dataset_frames(dataset);
      const LearnResult result = learn_initial(frames, make_learn_config(cfg));
      nlohmann::json provenance;
      provenance["dataset"] = dataset.string();
      provenance["frame_count"] = frames.size();
      provenance["source_segments"] = {{0, frames.size() - 1}};
      provenance["seed"] = cfg.seed;
      save_bundle(result.bundle, registry, provenance);
      std::printf("train: bundle 1, %zu frames, threshold %.6g, final loss %.4f\n",
                  frames.size(), result.bundle.threshold,
                  result.vae_history.epoch_loss.back());
    } else if (test->parsed()) {
      run_test_command(cfg, need_path(cfg.paths.dataset, "dataset"),
                       need_path(cfg.paths.out, "out"), bundles_arg);
    } else if (learn->parsed()) {
      const fs::path dataset = need_path(cfg.paths.dataset, "dataset");
      const fs::path registry = need_path(cfg.paths.registry, "registry");
      const std::vector<Frame> frames = load_dataset_frames(dataset);
      const std::vector<TraceRow> trace = read_trace_csv(fs::path(trace_arg));
      const ExperienceStore store = harvest_new_frames(trace, frames);

      std::vector<ModelBundle> existing = load_registry(registry);
      std::size_t next_id = 0;
      for (const ModelBundle& b : existing) next_id = std::max(next_id, b.id);
      ++next_id;

      const LearnResult result = learn_new_situation(store, make_learn_config(cfg), next_id);
      nlohmann::json provenance;
      provenance["dataset"] = dataset.string();
      provenance["seed"] = cfg.seed;
      nlohmann::json segs = nlohmann::json::array();
      for (const ExperienceSegment& s : store.segments)
        segs.push_back({s.span.begin, s.span.end});
      provenance["source_segments"] = segs;
      save_bundle(result.bundle, registry, provenance);
      std::printf("learn: bundle %zu from %zu harvested frames in %zu segments, "
                  "threshold %.6g\n",
                  next_id, store.total_frames(), store.segments.size(),
                  result.bundle.threshold);
    } else if (eval_cmd->parsed()) {
      const std::vector<TraceRow> trace = read_trace_csv(fs::path(trace_arg));
      const std::vector<int> labels = read_labels_csv(fs::path(labels_arg));
      const EvalReport report = evaluate(trace, labels);
      print_report(report);
      if (!cfg.paths.out.empty()) {
        std::ofstream os(cfg.paths.out, std::ios::trunc);
        if (!os) throw IoError("cannot write report: " + cfg.paths.out);
        os << report_json(report).dump(2) << "\n";
      }
    } else if (recon->parsed()) {
      const fs::path dataset = need_path(cfg.paths.dataset, "dataset");
      const fs::path registry = need_path(cfg.paths.registry, "registry");
      const fs::path out = need_path(cfg.paths.out, "out");
      const std::vector<Frame> frames = load_dataset_frames(dataset);
      const std::vector<ModelBundle> bundles = load_registry(registry);

      std::vector<std::size_t> selected;
      if (!frames_arg.empty()) {
        std::stringstream ss(frames_arg);
        std::string token;
        while (std::getline(ss, token, ',')) selected.push_back(std::stoul(token));
      } else {
        for (std::size_t k = stride; k < frames.size(); k += stride) selected.push_back(k);
      }

      fs::create_directories(out);
      char name[64];
      for (std::size_t k : selected) {
        if (k == 0 || k >= frames.size())
          throw DataError("reconstruct: frame index " + std::to_string(k) +
                          " out of range (need 1 <= k < frame count)");
        std::snprintf(name, sizeof(name), "x_%06zu.pgm", k);
        write_pgm(frames[k], out / name);
        for (const ModelBundle& b : bundles) {
          const LatentCode code = encode(b.vae, frames[k]);
          std::snprintf(name, sizeof(name), "recon_b%zu_%06zu.pgm", b.id, k);
          write_pgm(decode(b.vae, code.mu), out / name);

          // One-step prediction: velocity from the nearest cluster's net,
          // cluster chosen by the current generalized state.
          const LatentCode prev = encode(b.vae, frames[k - 1]);
          std::vector<double> gs(2 * code.mu.size());
          for (std::size_t l = 0; l < code.mu.size(); ++l) {
            gs[l] = code.mu[l];
            gs[code.mu.size() + l] = code.mu[l] - prev.mu[l];
          }
          std::size_t best = 0;
          double best_d = std::numeric_limits<double>::infinity();
          for (std::size_t c = 0; c < b.vocabulary.clusters.size(); ++c) {
            double d = 0.0;
            for (std::size_t j = 0; j < gs.size(); ++j) {
              const double diff = gs[j] - b.vocabulary.clusters[c].centroid[j];
              d += diff * diff;
            }
            if (d < best_d) {
              best_d = d;
              best = c;
            }
          }
          const auto velocity = mlp_forward(b.vocabulary.clusters[best].dynamics, code.mu);
          std::vector<double> mu_next(code.mu);
          for (std::size_t l = 0; l < mu_next.size(); ++l) mu_next[l] += velocity[l];
          std::snprintf(name, sizeof(name), "pred_b%zu_%06zu.pgm", b.id, k);
          write_pgm(decode(b.vae, mu_next), out / name);
        }
      }
      std::printf("reconstruct: %zu frames x %zu bundles -> %s\n", selected.size(),
                  bundles.size(), out.string().c_str());
    }
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 3;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const TrainingError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  } catch (const DivergenceError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  } catch (const SingularMatrixError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
