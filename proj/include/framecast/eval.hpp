#pragma once

// Scores an innovation trace against ground-truth labels.

#include <vector>

#include "json.hpp"

#include "framecast/amjpf.hpp"

namespace framecast {

struct EvalReport {
  double false_positive_rate = 0.0;  // flagged & known / known
  double segment_recall = 0.0;       // novel segments with >= 1 flag / segments
  double frame_precision = 0.0;
  double frame_recall = 0.0;
  double mean_innovation_known = 0.0;
  double mean_innovation_novel = 0.0;
};

// Trace rows are matched to labels by frame_idx; an index beyond the label
// sequence is a length mismatch.
EvalReport evaluate(const std::vector<TraceRow>& trace, const std::vector<int>& labels);

nlohmann::json report_json(const EvalReport& report);

}  // namespace framecast
