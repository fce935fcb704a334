#pragma once

#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "cwss/capsule.hpp"
#include "cwss/dataset.hpp"
#include "cwss/loss.hpp"

namespace cwss {

struct TrainConfig {
  int epochs = 10;
  int batch_size = 16;
  float learning_rate = 1e-3f;
  std::uint64_t seed = 42;
  int threads = 1;
  bool deterministic = true;
  float threshold = 0.5f;       // presence threshold for the accuracy log
  int checkpoint_every = 0;     // epochs between checkpoints; 0 = final only
  std::string checkpoint_path;  // empty = no checkpoints written
  LossConfig loss;

  void validate() const;
};

struct EpochStats {
  int epoch;
  float loss;
  float accuracy;
  float alpha;
};

std::string format_epoch_line(const EpochStats& s);

struct ClassificationMetrics {
  long long tp = 0, tn = 0, fp = 0, fn = 0;
  double accuracy() const;  // percent over all class-instance decisions
};

// Aggregates thresholded per-class decisions over the batch. When
// `class_subset` is given, only those classes are counted; restricting to
// the classes a dataset actually uses avoids inflating accuracy with
// vacuous true negatives.
ClassificationMetrics classification_metrics(const std::vector<Tensor>& scores,
                                             const std::vector<Tensor>& targets,
                                             float threshold,
                                             const std::vector<int>* class_subset = nullptr);

struct AdamState {
  std::map<std::string, Tensor> m;
  std::map<std::string, Tensor> v;
  std::int64_t step = 0;
};

void adam_update(CapsNetParams& params, const std::map<std::string, Tensor>& grads,
                 AdamState& state, float learning_rate);

// Batch-gradient training. Reconstruction is masked with ground-truth
// labels; the batch loss is the mean over samples of
// margin + alpha_epoch * reconstruction. Deterministic for a fixed seed
// and thread count. Aborts with NumericError on non-finite loss.
std::vector<EpochStats> train(const std::vector<PatchRecord>& data, CapsNetParams& params,
                              const TrainConfig& cfg, std::ostream* log = nullptr,
                              AdamState* opt = nullptr);

}  // namespace cwss
