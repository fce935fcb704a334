#include "cwss/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <thread>

#include "cwss/checkpoint.hpp"
#include "cwss/decoder.hpp"
#include "cwss/rng.hpp"

namespace cwss {

void TrainConfig::validate() const {
  if (epochs < 1) throw ValueError("epochs must be >= 1");
  if (batch_size < 1) throw ValueError("batch size must be >= 1");
  if (learning_rate < 0.0f) throw ValueError("learning rate must be >= 0");
  if (!(threshold >= 0.0f && threshold <= 1.0f)) throw ValueError("threshold must lie in [0,1]");
  if (checkpoint_every < 0) throw ValueError("checkpoint cadence must be >= 0");
  loss.validate();
}

std::string format_epoch_line(const EpochStats& s) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), "epoch=%d loss=%.6f accuracy=%.2f alpha=%.6e", s.epoch,
                static_cast<double>(s.loss), static_cast<double>(s.accuracy),
                static_cast<double>(s.alpha));
  return buf;
}

double ClassificationMetrics::accuracy() const {
  long long total = tp + tn + fp + fn;
  if (total == 0) return 0.0;
  return 100.0 * static_cast<double>(tp + tn) / static_cast<double>(total);
}

ClassificationMetrics classification_metrics(const std::vector<Tensor>& scores,
                                             const std::vector<Tensor>& targets,
                                             float threshold,
                                             const std::vector<int>* class_subset) {
  if (scores.size() != targets.size())
    throw ShapeError("classification_metrics: batch size mismatch");
  ClassificationMetrics m;
  for (size_t i = 0; i < scores.size(); ++i) {
    require_same_shape(scores[i], targets[i], "classification_metrics");
    auto count = [&](int j) {
      bool pred = scores[i].data[static_cast<size_t>(j)] >= threshold;
      bool truth = targets[i].data[static_cast<size_t>(j)] > 0.5f;
      if (pred && truth)
        ++m.tp;
      else if (!pred && !truth)
        ++m.tn;
      else if (pred)
        ++m.fp;
      else
        ++m.fn;
    };
    if (class_subset)
      for (int j : *class_subset) count(j);
    else
      for (int j = 0; j < static_cast<int>(scores[i].size()); ++j) count(j);
  }
  return m;
}

void adam_update(CapsNetParams& params, const std::map<std::string, Tensor>& grads,
                 AdamState& state, float learning_rate) {
  constexpr float kBeta1 = 0.9f;
  constexpr float kBeta2 = 0.999f;
  constexpr float kEps = 1e-8f;
  ++state.step;
  float t = static_cast<float>(state.step);
  float corr1 = 1.0f - std::pow(kBeta1, t);
  float corr2 = 1.0f - std::pow(kBeta2, t);
  for (const auto& [name, g] : grads) {
    Tensor& p = params.get(name);
    require_same_shape(p, g, "adam_update");
    Tensor& m = state.m.try_emplace(name, Tensor(p.shape)).first->second;
    Tensor& v = state.v.try_emplace(name, Tensor(p.shape)).first->second;
    for (size_t i = 0; i < p.data.size(); ++i) {
      float gi = g.data[i];
      m.data[i] = kBeta1 * m.data[i] + (1.0f - kBeta1) * gi;
      v.data[i] = kBeta2 * v.data[i] + (1.0f - kBeta2) * gi * gi;
      float mhat = m.data[i] / corr1;
      float vhat = v.data[i] / corr2;
      p.data[i] -= learning_rate * mhat / (std::sqrt(vhat) + kEps);
    }
  }
}

namespace {

struct SampleResult {
  double loss = 0.0;
  Tensor scores;
};

// One forward/backward pass; gradients are accumulated into `grads`.
SampleResult run_sample(const PatchRecord& rec, const CapsNetParams& params, float alpha,
                        const LossConfig& loss_cfg,
                        std::map<std::string, Tensor>& grads) {
  Tape tape;
  Var image = tape.constant(rec.image);
  std::map<std::string, Var> param_vars;
  ClassifyGraph g = build_classify_graph(tape, image, params, &param_vars);

  Var total = tape.margin_loss(g.v, rec.labels, loss_cfg.m_plus, loss_cfg.m_minus,
                               loss_cfg.lambda_down);
  if (params.arch.has_decoder()) {
    // Reconstruction is masked with the ground-truth labels.
    Var recon{-1};
    bool any = false;
    for (int j = 0; j < static_cast<int>(rec.labels.size()); ++j) {
      if (rec.labels.data[static_cast<size_t>(j)] <= 0.5f) continue;
      Var map = build_decoder_graph(tape, tape.select_row(g.v, j), params, &param_vars);
      recon = any ? tape.add(recon, map) : map;
      any = true;
    }
    if (any) {
      Var rec_loss = tape.sse(recon, image);
      total = tape.add(total, tape.scale(rec_loss, alpha));
    }
  }
  tape.backward(total);

  for (const auto& [name, var] : param_vars) {
    const Tensor& g_param = tape.grad(var);
    auto it = grads.find(name);
    if (it == grads.end())
      grads.emplace(name, g_param);
    else
      for (size_t i = 0; i < g_param.data.size(); ++i) it->second.data[i] += g_param.data[i];
  }
  SampleResult out;
  out.loss = tape.value(total).scalar_value();
  out.scores = tape.value(g.scores);
  return out;
}

}  // namespace

std::vector<EpochStats> train(const std::vector<PatchRecord>& data, CapsNetParams& params,
                              const TrainConfig& cfg, std::ostream* log, AdamState* opt) {
  cfg.validate();
  if (data.empty()) throw DataError("training dataset is empty");
  for (const auto& rec : data)
    if (rec.labels.size() != static_cast<size_t>(params.arch.digit.classes))
      throw ShapeError("record " + rec.name + " has wrong label vector length");

  AdamState local_opt;
  AdamState& adam = opt ? *opt : local_opt;

  int threads = cfg.deterministic ? 1 : std::max(1, cfg.threads);
  std::vector<EpochStats> stats;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    float alpha = alpha_at_epoch(cfg.loss, epoch);

    std::vector<int> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng = Rng::fork(cfg.seed, 0xA5A50000ULL + static_cast<std::uint64_t>(epoch));
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i) {
      int j = shuffle_rng.uniform_int(0, i);
      std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
    }

    double epoch_loss = 0.0;
    std::vector<Tensor> epoch_scores(data.size());
    std::vector<Tensor> epoch_targets(data.size());

    for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
      size_t end = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
      int count = static_cast<int>(end - start);

      std::map<std::string, Tensor> grads;
      double batch_loss = 0.0;
      if (threads <= 1) {
        for (size_t k = start; k < end; ++k) {
          const PatchRecord& rec = data[static_cast<size_t>(order[k])];
          SampleResult r = run_sample(rec, params, alpha, cfg.loss, grads);
          batch_loss += r.loss;
          epoch_scores[k] = std::move(r.scores);
          epoch_targets[k] = rec.labels;
        }
      } else {
        // Contiguous chunks, merged in chunk order, keep results independent
        // of scheduling for a fixed thread count.
        int chunks = std::min<int>(threads, count);
        std::vector<std::map<std::string, Tensor>> chunk_grads(static_cast<size_t>(chunks));
        std::vector<double> chunk_loss(static_cast<size_t>(chunks), 0.0);
        std::vector<std::thread> pool;
        int per = (count + chunks - 1) / chunks;
        for (int c = 0; c < chunks; ++c) {
          size_t lo = start + static_cast<size_t>(c) * static_cast<size_t>(per);
          size_t hi = std::min(end, lo + static_cast<size_t>(per));
          if (lo >= hi) break;
          pool.emplace_back([&, c, lo, hi] {
            for (size_t k = lo; k < hi; ++k) {
              const PatchRecord& rec = data[static_cast<size_t>(order[k])];
              SampleResult r = run_sample(rec, params, alpha, cfg.loss,
                                          chunk_grads[static_cast<size_t>(c)]);
              chunk_loss[static_cast<size_t>(c)] += r.loss;
              epoch_scores[k] = std::move(r.scores);
              epoch_targets[k] = rec.labels;
            }
          });
        }
        for (auto& th : pool) th.join();
        for (int c = 0; c < chunks; ++c) {
          batch_loss += chunk_loss[static_cast<size_t>(c)];
          for (auto& [name, g] : chunk_grads[static_cast<size_t>(c)]) {
            auto it = grads.find(name);
            if (it == grads.end())
              grads.emplace(name, std::move(g));
            else
              for (size_t i = 0; i < g.data.size(); ++i) it->second.data[i] += g.data[i];
          }
        }
      }

      if (!std::isfinite(batch_loss))
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(start / static_cast<size_t>(cfg.batch_size)));

      float inv = 1.0f / static_cast<float>(count);
      for (auto& [name, g] : grads)
        for (float& v : g.data) v *= inv;
      adam_update(params, grads, adam, cfg.learning_rate);
      epoch_loss += batch_loss;
    }

    ClassificationMetrics m =
        classification_metrics(epoch_scores, epoch_targets, cfg.threshold);
    EpochStats s;
    s.epoch = epoch;
    s.loss = static_cast<float>(epoch_loss / static_cast<double>(data.size()));
    s.accuracy = static_cast<float>(m.accuracy());
    s.alpha = alpha;
    stats.push_back(s);
    if (log) (*log) << format_epoch_line(s) << "\n" << std::flush;

    bool final_epoch = epoch + 1 == cfg.epochs;
    bool cadence_hit = cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0;
    if (!cfg.checkpoint_path.empty() && (final_epoch || cadence_hit)) {
      Checkpoint ckpt;
      ckpt.arch = params.arch;
      ckpt.state.epoch = epoch + 1;
      ckpt.state.alpha = alpha;
      ckpt.state.adam_step = adam.step;
      ckpt.blocks = params.tensors;
      for (const auto& [name, t] : adam.m) ckpt.blocks.emplace("adam.m." + name, t);
      for (const auto& [name, t] : adam.v) ckpt.blocks.emplace("adam.v." + name, t);
      save_checkpoint(ckpt, cfg.checkpoint_path);
    }
  }
  return stats;
}

}  // namespace cwss
