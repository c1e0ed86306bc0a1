#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fmms/config.hpp"
#include "fmms/data.hpp"
#include "fmms/fmms.hpp"
#include "fmms/model.hpp"

namespace fmms {

enum class Direction { ImageToText, TextToImage };
enum class Subtask { TR, IR };

// TR: fraction of images whose top-k captions intersect their ground truth.
// IR: fraction of captions whose top-k images contain the owner.
double recall_at_k(const Ranker& ranker, const Dataset& d, int k, Direction dir);
double recall_at_k(const RetrievalModel& m, const Dataset& d, int k, Direction dir);

// Numerator: clean-correct pairs whose subtask flag is set. Denominator:
// clean-correct pairs. Throws EmptyDenominatorError when no pair was
// correctly retrieved to begin with.
double attack_success_rate(const std::vector<AttackOutcome>& outcomes,
                           const std::vector<char>& clean_correct,
                           Subtask subtask);

struct ReportRow {
  std::string surrogate;
  std::string target;
  std::string method;
  std::string strategy;  // "-" for single-round baselines
  int rounds = 1;
  uint64_t seed = 0;
  double tr_r1_clean = 0.0;
  double ir_r1_clean = 0.0;
  double tr_asr = 0.0;
  int tr_denom = 0;
  double ir_asr = 0.0;
  int ir_denom = 0;
  double mean_target_queries = 0.0;
  double runtime_s = 0.0;  // diagnostic; not part of the persisted report
};

struct Report {
  std::vector<ReportRow> rows;
};

// Runs the full surrogate x target x method x T x seed grid and writes the
// CSV report plus a JSON sidecar with the effective config. All persisted
// bytes are deterministic in (config, seed); wall-clock timings go to stderr
// only.
Report run_experiment(const Config& cfg, const std::string& report_path,
                      bool verbose = false);

std::string report_csv_header();
std::string format_report_row(const ReportRow& row);
Report read_report_csv(const std::string& path);

}  // namespace fmms
