#pragma once

#include <array>
#include <string>
#include <vector>

#include "picnet/network.hpp"
#include "picnet/synthdata.hpp"

namespace picnet {

// Argmax match rate; score ties resolve to the lowest class index.
double accuracy(const Tensor& logits, const std::vector<int>& labels);

struct ApReport {
  double map = 0.0;
  std::vector<double> per_class;  // NaN for excluded classes
  std::vector<int> excluded;      // classes with no positives
};

// Raw precision at positive ranks, no interpolation; per-class ranking sorts
// scores descending with sample index as the stable tie-break. Classes
// without positives are excluded and reported; no positives at all is an
// error.
ApReport mean_average_precision(const Tensor& scores, const Tensor& targets);

// Logits for a sample list, evaluated in fixed-size chunks; `threads` > 1
// fans chunks out across workers with results written to per-sample slots, so
// the output is bitwise identical to the serial run.
Tensor model_logits(CascadeModel& m, const std::vector<Sample>& samples, Mode mode,
                    int threads = 1);

// Task metric from the model config: accuracy or mAP.
double model_metric(CascadeModel& m, const std::vector<Sample>& samples, int threads = 1);

struct ProtocolResult {
  Protocol protocol;
  std::vector<double> per_seed;
  double mean_metric = 0.0;
  double drop = 0.0;  // uniform metric minus mean_metric
};

struct RobustnessReport {
  double uniform_metric = 0.0;
  std::vector<ProtocolResult> protocols;
};

RobustnessReport permutation_robustness(CascadeModel& m, const Dataset& data,
                                        const std::vector<Protocol>& protocols,
                                        int perm_seeds, int threads = 1);

struct DepthProfile {
  std::string variant;
  int depth = 0;
  int64_t params = 0;
  int64_t flops = 0;
  double median_ms = 0.0;
};

// Closed-form counts for one forward pass of a single sample of
// cfg.dataset.length timesteps, with the stated depth. The multiply-add
// convention: a fused multiply-add is 2, a standalone add (bias, residual) 1,
// batch-norm application 2 per element; comparisons, activations and pooling
// are free.
int64_t analytic_param_count(const RunConfig& cfg, int depth);
int64_t analytic_flop_count(const RunConfig& cfg, int depth);
int64_t analytic_head_flops(const RunConfig& cfg);

// Instrumented counter over one single-sample forward pass.
int64_t instrumented_flop_count(const RunConfig& cfg, int depth);

DepthProfile profile_depth(const RunConfig& cfg, int depth, int timing_runs);
std::vector<DepthProfile> profile(const RunConfig& cfg, const std::vector<int>& depths,
                                  const std::vector<std::string>& variants,
                                  int timing_runs);

struct RetrievalHit {
  int sample = 0;
  int timestep = 0;
  double score = 0.0;
};

struct RetrievalReport {
  int layer = 0;
  std::vector<std::vector<RetrievalHit>> per_key;
  bool truncated = false;
  std::string note;
};

// Top-k per-key max-similarity activations across the sample list, with
// provenance; descending by score, ties stable in (sample, timestep) order.
// Only layers with stored keys (pic, pic_global) support this.
RetrievalReport concept_retrieval(CascadeModel& m, const std::vector<Sample>& samples,
                                  int layer, int k);

// CSV emitters (one row per record, header line included).
void write_history_csv(const std::string& path,
                       const std::vector<std::array<double, 3>>& rows);
void write_profile_csv(const std::string& path, const std::vector<DepthProfile>& rows);
void write_robustness_csv(const std::string& path, const RobustnessReport& report);
void write_retrieval_csv(const std::string& path, const RetrievalReport& report);

}  // namespace picnet
