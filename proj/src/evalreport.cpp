#include "framecast/eval.hpp"

namespace framecast {

EvalReport evaluate(const std::vector<TraceRow>& trace, const std::vector<int>& labels) {
  for (const TraceRow& row : trace)
    if (row.frame_idx >= labels.size())
      throw DataError("evaluate: trace frame " + std::to_string(row.frame_idx) +
                      " beyond the " + std::to_string(labels.size()) + "-frame labels");

  std::size_t known = 0, novel = 0, fp = 0, tp = 0, flagged = 0;
  double innov_known = 0.0, innov_novel = 0.0;
  for (const TraceRow& row : trace) {
    const bool is_novel = labels[row.frame_idx] != 0;
    if (is_novel) {
      ++novel;
      innov_novel += row.innovation;
      if (row.flagged_new) ++tp;
    } else {
      ++known;
      innov_known += row.innovation;
      if (row.flagged_new) ++fp;
    }
    if (row.flagged_new) ++flagged;
  }

  // Novel segments from the label sequence, detected when any trace row
  // inside is flagged.
  std::size_t segments = 0, detected = 0;
  std::size_t seg_begin = 0;
  bool in_segment = false;
  auto close_segment = [&](std::size_t end_exclusive) {
    if (!in_segment) return;
    ++segments;
    for (const TraceRow& row : trace) {
      if (row.frame_idx >= seg_begin && row.frame_idx < end_exclusive && row.flagged_new) {
        ++detected;
        break;
      }
    }
    in_segment = false;
  };
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && !in_segment) {
      seg_begin = i;
      in_segment = true;
    } else if (labels[i] == 0) {
      close_segment(i);
    }
  }
  close_segment(labels.size());

  EvalReport report;
  report.false_positive_rate = known ? static_cast<double>(fp) / known : 0.0;
  report.segment_recall = segments ? static_cast<double>(detected) / segments : 0.0;
  report.frame_precision = flagged ? static_cast<double>(tp) / flagged : 0.0;
  report.frame_recall = novel ? static_cast<double>(tp) / novel : 0.0;
  report.mean_innovation_known = known ? innov_known / known : 0.0;
  report.mean_innovation_novel = novel ? innov_novel / novel : 0.0;
  return report;
}

nlohmann::json report_json(const EvalReport& report) {
  return nlohmann::json{
      {"false_positive_rate", report.false_positive_rate},
      {"segment_recall", report.segment_recall},
      {"frame_precision", report.frame_precision},
      {"frame_recall", report.frame_recall},
      {"mean_innovation_known", report.mean_innovation_known},
      {"mean_innovation_novel", report.mean_innovation_novel},
  };
}

}  // namespace framecast
