#pragma once

// Flat `key = value` run configuration. Lines starting with '#' are comments.
// Unknown keys are rejected.

#include <charconv>
#include <filesystem>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "perceivers/error.hpp"
#include "perceivers/evaluation.hpp"
#include "perceivers/model.hpp"
#include "perceivers/sampling.hpp"
#include "perceivers/training.hpp"

namespace perceivers {

struct DataConfig {
  std::string corpus;      // token JSON-lines file
  std::string checkpoint;  // parameter file written by train, read by generate
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SamplingConfig sample;
  DataConfig data;
  EvalConfig eval;

  /// Copies (m, n) from the model into the sampler and validates every section.
  void finalize() {
    train.sampler.m = model.m;
    train.sampler.n = model.n;
    model.validate();
    train.validate();
    sample.validate();
    eval.validate();
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class N>
N parse_number(std::string_view key, std::string_view v) {
  N out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw InvalidArgument("config key '" + std::string(key) + "': cannot parse '" + std::string(v) + "'");
  return out;
}

inline std::vector<int> parse_int_list(std::string_view key, std::string_view v) {
  std::vector<int> out;
  while (!v.empty()) {
    auto comma = v.find(',');
    out.push_back(parse_number<int>(key, trim(v.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    v.remove_prefix(comma + 1);
  }
  if (out.empty()) throw InvalidArgument("config key '" + std::string(key) + "' needs at least one value");
  return out;
}

inline void apply_key(RunConfig& c, std::string_view key, std::string_view v) {
  auto i = [&] { return parse_number<int>(key, v); };
  auto r = [&] { return parse_number<double>(key, v); };
  auto u = [&] { return parse_number<std::uint64_t>(key, v); };
  if (key == "model.vocab_size") c.model.vocab_size = i();
  else if (key == "model.d_model") c.model.d_model = i();
  else if (key == "model.n_heads") c.model.n_heads = i();
  else if (key == "model.d_head") c.model.d_head = i();
  else if (key == "model.n_self_layers") c.model.n_self_layers = i();
  else if (key == "model.cross_windows") c.model.cross_windows = parse_int_list(key, v);
  else if (key == "model.m") c.model.m = i();
  else if (key == "model.n") c.model.n = i();
  else if (key == "model.ffn_multiplier") c.model.ffn_multiplier = i();
  else if (key == "model.dropout") c.model.dropout = r();
  else if (key == "model.seed") c.model.seed = u();
  else if (key == "train.beta1") c.train.beta1 = r();
  else if (key == "train.beta2") c.train.beta2 = r();
  else if (key == "train.epsilon") c.train.epsilon = r();
  else if (key == "train.warmup") c.train.warmup = i();
  else if (key == "train.lr_scale") c.train.lr_scale = r();
  else if (key == "train.steps") c.train.steps = i();
  else if (key == "train.batch_size") c.train.batch_size = i();
  else if (key == "train.seed") c.train.seed = u();
  else if (key == "sample.top_p") c.sample.top_p = r();
  else if (key == "sample.temperature") c.sample.temperature = r();
  else if (key == "sample.max_tokens") c.sample.max_tokens = i();
  else if (key == "sample.seed") c.sample.seed = u();
  else if (key == "data.corpus") c.data.corpus = std::string(v);
  else if (key == "data.checkpoint") c.data.checkpoint = std::string(v);
  else if (key == "data.mode") {
    if (v == "baseline") c.train.sampler.mode = SamplerMode::Baseline;
    else if (v == "effective") c.train.sampler.mode = SamplerMode::Effective;
    else throw InvalidArgument("data.mode must be 'baseline' or 'effective'");
  } else if (key == "data.access") {
    if (v == "random") c.train.sampler.access = SamplerAccess::Random;
    else if (v == "sequential") c.train.sampler.access = SamplerAccess::Sequential;
    else throw InvalidArgument("data.access must be 'random' or 'sequential'");
  } else if (key == "eval.segments") c.eval.segments = i();
  else if (key == "eval.length_bins") c.eval.length_bins = i();
  else if (key == "eval.min_length") c.eval.min_length = r();
  else if (key == "eval.max_length") c.eval.max_length = r();
  else if (key == "eval.grid_points") c.eval.grid_points = i();
  else throw InvalidArgument("unknown config key '" + std::string(key) + "'");
}

}  // namespace detail

/// Parses config text on top of `base`, then finalizes.
inline RunConfig parse_run_config(std::string_view text, RunConfig base = {}) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = detail::trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw InvalidArgument("config line " + std::to_string(line_no) + ": expected key = value");
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    try {
      detail::apply_key(base, key, value);
    } catch (const InvalidArgument& e) {
      throw InvalidArgument("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  base.finalize();
  return base;
}

}  // namespace perceivers
