#pragma once

// Adam with a Noam warmup schedule, one optimizer step per batch.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "perceivers/error.hpp"
#include "perceivers/model.hpp"
#include "perceivers/segmentation.hpp"

namespace perceivers {

struct TrainConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;
  int warmup = 4000;
  double lr_scale = 0.03125;
  int steps = 1000;
  int batch_size = 1;
  std::uint64_t seed = 1;
  SamplerConfig sampler;

  void validate() const {
    if (warmup < 1) throw InvalidArgument("warmup must be >= 1");
    if (!(lr_scale > 0.0)) throw InvalidArgument("lr_scale must be positive");
    if (steps < 0) throw InvalidArgument("steps must be >= 0");
    if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
    sampler.validate();
  }
};

/// scale * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5), step >= 1.
inline double noam_rate(std::int64_t step, int d_model, int warmup, double scale) {
  if (step < 1) throw InvalidArgument("Noam schedule is defined for step >= 1");
  const double t = double(step);
  return scale / std::sqrt(double(d_model)) * std::min(1.0 / std::sqrt(t), t * std::pow(double(warmup), -1.5));
}

template <class T>
struct AdamState {
  std::vector<T> first, second;
  std::int64_t step = 0;

  explicit AdamState(std::size_t size = 0) : first(size, T(0)), second(size, T(0)) {}
};

struct StepResult {
  double loss;
  double learning_rate;
};

/// One Adam update on the mean loss of `batch`.
template <class T>
StepResult train_step(Parameters<T>& params, AdamState<T>& opt, std::span<const SegmentSample> batch,
                      const TrainConfig& cfg, std::mt19937_64* dropout_rng = nullptr) {
  if (opt.first.size() != params.values.size()) opt = AdamState<T>(params.values.size());
  Parameters<T> grads(params.config);
  DropoutContext drop{params.config.dropout, dropout_rng};
  const T l = batch_loss(params, batch, &grads, &drop);
  for (T g : grads.values)
    if (!std::isfinite(g)) throw NumericError("non-finite gradient", -1);

  opt.step += 1;
  const double lr = noam_rate(opt.step, params.config.d_model, cfg.warmup, cfg.lr_scale);
  const double c1 = 1.0 - std::pow(cfg.beta1, double(opt.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(opt.step));
  for (std::size_t k = 0; k < params.values.size(); ++k) {
    const T g = grads.values[k];
    opt.first[k] = T(cfg.beta1) * opt.first[k] + T(1 - cfg.beta1) * g;
    opt.second[k] = T(cfg.beta2) * opt.second[k] + T(1 - cfg.beta2) * g * g;
    const T mhat = opt.first[k] / T(c1);
    const T vhat = opt.second[k] / T(c2);
    params.values[k] -= T(lr) * mhat / (std::sqrt(vhat) + T(cfg.epsilon));
  }
  return {double(l), lr};
}

/// Draws training batches from a corpus under the configured sampler.
/// Sequences too short for the regime are skipped.
class BatchSource {
 public:
  BatchSource(std::span<const TokenSequence> corpus, const TrainConfig& cfg)
      : corpus_(corpus), cfg_(cfg), rng_(cfg.seed) {
    cfg_.validate();
    const std::size_t min_len = cfg_.sampler.mode == SamplerMode::Effective
                                    ? std::size_t(min_effective_endpoint(cfg_.sampler))
                                    : 2;
    for (std::size_t k = 0; k < corpus_.size(); ++k)
      if (corpus_[k].tokens.size() >= min_len) eligible_.push_back(k);
    if (eligible_.empty()) throw InvalidArgument("no sequence in the corpus is long enough to sample");
    skipped_ = corpus_.size() - eligible_.size();
  }

  std::size_t skipped() const { return skipped_; }

  std::vector<SegmentSample> next_batch() {
    std::vector<SegmentSample> batch;
    while (int(batch.size()) < cfg_.batch_size) {
      SegmentSample s = next_sample();
      if (s.supervised_count() > 0) batch.push_back(std::move(s));
    }
    return batch;
  }

 private:
  SegmentSample next_sample() {
    const auto& sc = cfg_.sampler;
    if (sc.access == SamplerAccess::Random) {
      std::uniform_int_distribution<std::size_t> pick(0, eligible_.size() - 1);
      const auto& seq = corpus_[eligible_[pick(rng_)]].tokens;
      return sc.mode == SamplerMode::Effective ? effective_sample_random(std::span<const Token>(seq), sc, rng_)
                                               : baseline_sample(std::span<const Token>(seq), sc, rng_);
    }
    for (;;) {
      if (!sequential_) {
        sequential_.emplace(std::span<const Token>(corpus_[eligible_[cursor_]].tokens), sc);
        cursor_ = (cursor_ + 1) % eligible_.size();
      }
      if (auto s = sequential_->next()) return std::move(*s);
      sequential_.reset();
    }
  }

  std::span<const TokenSequence> corpus_;
  TrainConfig cfg_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> eligible_;
  std::size_t skipped_ = 0;
  std::size_t cursor_ = 0;
  std::optional<SequentialSampler> sequential_;
};

struct TrainTrace {
  std::vector<double> losses;
  std::vector<double> learning_rates;
};

/// Runs cfg.steps optimizer steps. `on_step(step, loss)` is called after each.
template <class T>
TrainTrace train(Parameters<T>& params, std::span<const TokenSequence> corpus, const TrainConfig& cfg,
                 const std::function<void(int, double)>& on_step = {}) {
  cfg.validate();
  if (cfg.sampler.m != params.config.m || cfg.sampler.n != params.config.n)
    throw InvalidArgument("sampler (m, n) must match the model");
  BatchSource source(corpus, cfg);
  AdamState<T> opt(params.values.size());
  std::mt19937_64 dropout_rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  TrainTrace trace;
  for (int step = 1; step <= cfg.steps; ++step) {
    auto batch = source.next_batch();
    StepResult r = train_step(params, opt, std::span<const SegmentSample>(batch), cfg, &dropout_rng);
    trace.losses.push_back(r.loss);
    trace.learning_rates.push_back(r.learning_rate);
    if (on_step) on_step(step, r.loss);
  }
  return trace;
}

}  // namespace perceivers
