#pragma once

// Unconditional autoregressive decoding with temperature and nucleus (top-p) filtering.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "perceivers/error.hpp"
#include "perceivers/model.hpp"

namespace perceivers {

struct SamplingConfig {
  double top_p = 0.75;
  double temperature = 1.3;
  int max_tokens = 8192;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(top_p > 0.0 && top_p <= 1.0)) throw InvalidArgument("top_p must be in (0, 1]");
    if (!(temperature > 0.0)) throw InvalidArgument("temperature must be positive");
    if (max_tokens < 0) throw InvalidArgument("max_tokens must be >= 0");
  }
};

/// softmax(logits / temperature), computed stably.
inline std::vector<double> tempered_softmax(std::span<const double> logits, double temperature) {
  if (!(temperature > 0.0)) throw InvalidArgument("temperature must be positive");
  if (logits.empty()) throw InvalidArgument("empty logit vector");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p[k] = std::exp((logits[k] - mx) / temperature);
    sum += p[k];
  }
  for (auto& v : p) v /= sum;
  return p;
}

/// Smallest set of indices (most probable first, ties by index) whose mass reaches top_p.
inline std::vector<std::size_t> nucleus_set(std::span<const double> probs, double top_p) {
  if (!(top_p > 0.0 && top_p <= 1.0)) throw InvalidArgument("top_p must be in (0, 1]");
  std::vector<std::size_t> order(probs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
  double mass = 0;
  std::size_t keep = 0;
  while (keep < order.size()) {
    mass += probs[order[keep++]];
    if (mass >= top_p) break;
  }
  order.resize(keep);
  return order;
}

/// Draws one index: temperature, nucleus filter, renormalise, sample.
template <class Rng>
std::size_t sample_token(std::span<const double> logits, double temperature, double top_p, Rng& rng) {
  const auto probs = tempered_softmax(logits, temperature);
  const auto keep = nucleus_set(probs, top_p);
  double mass = 0;
  for (auto k : keep) mass += probs[k];
  std::uniform_real_distribution<double> uni(0.0, mass);
  double u = uni(rng);
  for (auto k : keep) {
    u -= probs[k];
    if (u < 0) return k;
  }
  return keep.back();
}

/// Generates from an empty (all-PAD) context until TOKEN_END or max_tokens.
/// The returned sequence includes TOKEN_END when it was drawn.
template <class T, class Rng>
TokenSequence generate(const Parameters<T>& params, const SamplingConfig& cfg, Rng& rng) {
  cfg.validate();
  const ModelConfig& c = params.config;
  TokenSequence out;
  std::vector<Token> context(c.m, vocab::kPad);
  std::vector<double> last(c.vocab_size);
  while (int(out.tokens.size()) < cfg.max_tokens) {
    const int have = std::min<int>(int(out.tokens.size()), c.m);
    std::fill(context.begin(), context.end(), Token(vocab::kPad));
    std::copy(out.tokens.end() - have, out.tokens.end(), context.end() - have);
    Matrix<T> logits = forward(params, std::span<const Token>(context), c.m - have);
    for (int j = 0; j < c.vocab_size; ++j) last[j] = double(logits(c.n - 1, j));
    const auto next = static_cast<Token>(sample_token(std::span<const double>(last), cfg.temperature, cfg.top_p, rng));
    out.tokens.push_back(next);
    if (next == vocab::kTokenEnd) break;
  }
  return out;
}

}  // namespace perceivers
