// Command-line front end. Each subcommand parses its flags, calls the library
// and writes results atomically. Exit codes: 0 success, 1 usage, 2 data.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "perceivers/perceivers.hpp"

namespace fs = std::filesystem;
using namespace perceivers;
using nlohmann::json;

namespace {

/// Bad flags, bad config text, or missing required settings.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Prefixes library errors with the stage that raised them.
template <class F>
auto stage(const std::string& name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const UsageError&) {
    throw;
  } catch (const ParseError& e) {
    throw ParseError(name + ": " + e.what(), e.offset());
  } catch (const NumericError& e) {
    throw Error(name + ": " + e.what());
  } catch (const std::exception& e) {
    throw Error(name + ": " + e.what());
  }
}

fs::path out_path(const std::string& given) {
  fs::path p(given);
  if (const char* dir = std::getenv("PERCEIVERS_OUT_DIR"); dir && *dir && p.is_relative()) return fs::path(dir) / p;
  return p;
}

/// Writes to --out when given, otherwise to stdout.
void emit(const std::string& out, const std::string& text) {
  if (out.empty()) {
    std::cout << text;
  } else {
    write_file_atomic(out_path(out), std::string_view(text));
  }
}

std::string lower_ext(const fs::path& p) {
  std::string e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return char(std::tolower(c)); });
  return e;
}

bool is_midi(const fs::path& p) { return lower_ext(p) == ".mid" || lower_ext(p) == ".midi"; }
bool is_jsonl(const fs::path& p) { return lower_ext(p) == ".jsonl"; }
bool is_token_binary(const fs::path& p) { return lower_ext(p) == ".tok"; }

void require_file(const fs::path& p) {
  if (!fs::exists(p) || fs::is_directory(p)) throw Error("no such file: " + p.string());
}

std::vector<TokenSequence> read_token_file(const fs::path& p) {
  require_file(p);
  if (is_token_binary(p)) return decode_tokens_binary(read_file_bytes(p), p.stem().string());
  std::ifstream in(p, std::ios::binary);
  return read_tokens_jsonl(in);
}

/// Pieces from a MIDI file (one piece) or a token file (one per sequence).
std::vector<std::vector<MidiNote>> read_pieces(const fs::path& p) {
  require_file(p);
  if (is_midi(p)) return {parse_midi(read_file_bytes(p)).notes};
  if (is_jsonl(p) || is_token_binary(p)) {
    std::vector<std::vector<MidiNote>> out;
    for (const auto& s : read_token_file(p)) out.push_back(detokenize(s).notes);
    return out;
  }
  throw UsageError("unsupported input type: " + p.string() + " (expected .mid, .midi, .jsonl or .tok)");
}

Corpus read_piece_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && (is_midi(e.path()) || is_jsonl(e.path()) || is_token_binary(e.path())))
      files.push_back(e.path());
  std::sort(files.begin(), files.end());
  Corpus out;
  for (const auto& f : files)
    for (auto& piece : read_pieces(f)) out.push_back(std::move(piece));
  return out;
}

RunConfig load_config(const std::string& path) {
  if (path.empty()) return parse_run_config("");
  require_file(path);
  const std::string text = read_file_text(path);
  try {
    return parse_run_config(text);
  } catch (const InvalidArgument& e) {
    throw UsageError(path + ": " + e.what());
  }
}

void finalize_or_usage(RunConfig& c) {
  try {
    c.finalize();
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
}

std::string csv_row(const std::vector<double>& v) {
  std::ostringstream os;
  os << std::setprecision(10);
  for (std::size_t k = 0; k < v.size(); ++k) os << (k ? "," : "") << v[k];
  return os.str();
}

// ---------------------------------------------------------------------------

struct Common {
  std::string out;
  std::string config;
  std::optional<std::uint64_t> seed;
};

int cmd_tokenize(const std::vector<std::string>& inputs, const std::string& out) {
  std::vector<TokenSequence> seqs;
  for (const auto& in : inputs) {
    const fs::path p(in);
    if (!is_midi(p)) throw UsageError("tokenize expects MIDI input: " + in);
    require_file(p);
    auto parsed = stage("parse " + in, [&] { return parse_midi(read_file_bytes(p)); });
    if (parsed.unmatched_note_offs)
      std::cerr << in << ": ignored " << parsed.unmatched_note_offs << " note-off events without a note-on\n";
    seqs.push_back(tokenize(parsed.notes, p.stem().string()));
  }
  std::ostringstream os;
  write_tokens_jsonl(os, seqs);
  emit(out, os.str());
  return 0;
}

int cmd_detokenize(const std::string& in, std::size_t index, const std::string& out) {
  if (out.empty()) throw UsageError("detokenize needs --out");
  const auto seqs = stage("read tokens", [&] { return read_token_file(in); });
  if (index >= seqs.size()) throw UsageError("--index " + std::to_string(index) + " is past the last sequence");
  const auto decoded = detokenize(seqs[index]);
  if (decoded.dangling_note_offs)
    std::cerr << "skipped " << decoded.dangling_note_offs << " note-off tokens without a sounding note\n";
  write_file_atomic(out_path(out), write_midi(decoded.notes));
  return 0;
}

json sample_json(const SegmentSample& s, const std::string& id) {
  return {{"source_id", id},          {"pad_count", s.pad_count},       {"inputs", s.inputs},
          {"targets", s.targets},     {"target_positions", s.target_positions}, {"ignore", s.ignore}};
}

int cmd_sample_segments(const std::string& in, const Common& c, const std::string& mode, const std::string& access,
                        std::optional<int> m, std::optional<int> n, int count) {
  RunConfig cfg = load_config(c.config);
  if (m) cfg.model.m = *m;
  if (n) cfg.model.n = *n;
  if (!mode.empty()) cfg.train.sampler.mode = mode == "baseline" ? SamplerMode::Baseline : SamplerMode::Effective;
  if (!access.empty())
    cfg.train.sampler.access = access == "sequential" ? SamplerAccess::Sequential : SamplerAccess::Random;
  if (m || n) {
    // Segment dumps need only the window sizes; keep the model windows consistent.
    for (auto& w : cfg.model.cross_windows)
      if (w != 0) w = std::clamp(w, cfg.model.n, cfg.model.m);
  }
  finalize_or_usage(cfg);
  const auto& sc = cfg.train.sampler;
  const auto seqs = stage("read tokens", [&] { return read_token_file(in); });
  std::mt19937_64 rng(c.seed.value_or(cfg.train.seed));
  std::ostringstream os;
  for (const auto& seq : seqs) {
    const std::span<const Token> t(seq.tokens);
    if (sc.access == SamplerAccess::Sequential) {
      SequentialSampler sampler(t, sc);
      int k = 0;
      while (auto s = sampler.next()) {
        if (count > 0 && k++ >= count) break;
        os << sample_json(*s, seq.source_id).dump() << '\n';
      }
      continue;
    }
    if (sc.mode == SamplerMode::Effective && std::int64_t(t.size()) < min_effective_endpoint(sc)) {
      std::cerr << "skipping " << seq.source_id << ": shorter than the query length\n";
      continue;
    }
    if (t.empty()) continue;
    for (int k = 0; k < std::max(count, 1); ++k) {
      auto s = sc.mode == SamplerMode::Effective ? effective_sample_random(t, sc, rng) : baseline_sample(t, sc, rng);
      os << sample_json(s, seq.source_id).dump() << '\n';
    }
  }
  emit(c.out, os.str());
  return 0;
}

int cmd_mask_dump(const std::string& kind, int n, int m, int w, int pad, const std::string& out) {
  auto build = [&]() -> AttentionMask {
    if (kind == "vanilla") return vanilla_causal(n);
    if (kind == "final-block") return final_block_causal(n, m);
    if (kind == "scale") return scale_mask(n, m, w);
    if (kind == "multi-scale") return combine(final_block_causal(n, m), scale_mask(n, m, w));
    if (kind == "padding") return padding_mask(pad, n, m);
    if (kind == "query-padding") return query_padding_mask(pad, n, m);
    if (kind == "cross") return cross_block_mask(n, m, pad, w);
    if (kind == "latent") return latent_mask(n, m, pad);
    throw UsageError("unknown mask kind '" + kind + "'");
  };
  AttentionMask mask = [&] {
    try {
      return build();
    } catch (const InvalidArgument& e) {
      throw UsageError(e.what());
    }
  }();
  std::ostringstream os;
  os << mask;
  emit(out, os.str());
  return 0;
}

int cmd_train(const Common& c, std::optional<int> steps, const std::string& corpus_flag, const std::string& loss_csv) {
  RunConfig cfg = load_config(c.config);
  if (steps) cfg.train.steps = *steps;
  if (c.seed) {
    cfg.train.seed = *c.seed;
    cfg.model.seed = *c.seed;
  }
  finalize_or_usage(cfg);
  const std::string corpus_path = corpus_flag.empty() ? cfg.data.corpus : corpus_flag;
  if (corpus_path.empty()) throw UsageError("train needs a corpus (--corpus or data.corpus)");
  const std::string ckpt = c.out.empty() ? cfg.data.checkpoint : c.out;
  if (ckpt.empty()) throw UsageError("train needs an output checkpoint (--out or data.checkpoint)");
  require_file(corpus_path);

  const auto corpus = stage("read corpus", [&] { return read_token_file(corpus_path); });
  auto params = init_parameters<double>(cfg.model);
  const int every = std::max(1, cfg.train.steps / 20);
  const auto trace = stage("train", [&] {
    return train(params, std::span<const TokenSequence>(corpus), cfg.train, [&](int step, double loss) {
      if (step == 1 || step % every == 0 || step == cfg.train.steps)
        std::cerr << "step " << step << " loss " << std::setprecision(6) << loss << '\n';
    });
  });
  write_file_atomic(out_path(ckpt), encode_checkpoint(params));
  std::ostringstream os;
  os << "step,loss,learning_rate\n" << std::setprecision(10);
  for (std::size_t k = 0; k < trace.losses.size(); ++k)
    os << k + 1 << ',' << trace.losses[k] << ',' << trace.learning_rates[k] << '\n';
  write_file_atomic(out_path(loss_csv.empty() ? ckpt + ".loss.csv" : loss_csv), std::string_view(os.str()));
  return 0;
}

int cmd_generate(const Common& c, const std::string& checkpoint_flag, std::optional<double> top_p,
                 std::optional<double> temperature, std::optional<int> max_tokens, const std::string& tokens_out) {
  RunConfig cfg = load_config(c.config);
  if (top_p) cfg.sample.top_p = *top_p;
  if (temperature) cfg.sample.temperature = *temperature;
  if (max_tokens) cfg.sample.max_tokens = *max_tokens;
  if (c.seed) cfg.sample.seed = *c.seed;
  finalize_or_usage(cfg);
  if (c.out.empty()) throw UsageError("generate needs --out");
  const std::string ckpt = checkpoint_flag.empty() ? cfg.data.checkpoint : checkpoint_flag;

  Parameters<double> params = [&] {
    if (ckpt.empty()) {
      std::cerr << "no checkpoint configured: sampling from freshly initialised weights\n";
      return init_parameters<double>(cfg.model);
    }
    require_file(ckpt);
    return stage("load checkpoint", [&] { return decode_checkpoint(read_file_bytes(ckpt)); });
  }();
  std::mt19937_64 rng(cfg.sample.seed);
  auto seq = stage("generate", [&] { return generate(params, cfg.sample, rng); });
  seq.source_id = "generated-seed-" + std::to_string(cfg.sample.seed);
  write_file_atomic(out_path(c.out), write_midi(detokenize(seq).notes));
  if (!tokens_out.empty()) {
    std::ostringstream os;
    write_tokens_jsonl(os, std::span<const TokenSequence>(&seq, 1));
    write_file_atomic(out_path(tokens_out), std::string_view(os.str()));
  }
  return 0;
}

std::vector<std::int64_t> read_lengths(const fs::path& p) {
  require_file(p);
  std::vector<std::int64_t> out;
  if (is_jsonl(p) || is_token_binary(p)) {
    for (const auto& s : read_token_file(p)) out.push_back(std::int64_t(s.tokens.size()));
    return out;
  }
  std::ifstream in(p);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      std::size_t used = 0;
      const long long v = std::stoll(line, &used);
      if (line.find_first_not_of(" \t\r", used) != std::string::npos) throw std::invalid_argument("trailing text");
      out.push_back(v);
    } catch (const std::logic_error&) {
      throw Error(p.string() + " line " + std::to_string(line_no) + ": expected one integer length");
    }
  }
  return out;
}

int cmd_efficiency(const std::string& lengths_path, std::optional<std::int64_t> query, std::optional<std::int64_t> max,
                   const std::string& out) {
  const auto lengths = stage("read lengths", [&] { return read_lengths(lengths_path); });
  std::ostringstream os;
  if (query || max) {
    if (!(query && max)) throw UsageError("--query and --max must be given together");
    const auto cell = stage("efficiency", [&] { return token_efficiency(lengths, *query, *max); });
    os << "query_length,max_input_length,non_contributing,total,rate\n"
       << cell.query_length << ',' << cell.max_input_length << ',' << cell.non_contributing << ',' << cell.total
       << ',' << std::fixed << std::setprecision(6) << cell.rate << '\n';
  } else {
    const auto grid = stage("efficiency", [&] { return efficiency_matrix(lengths, kTableLengths, kTableLengths); });
    os << "query_length";
    for (auto m : kTableLengths) os << ',' << m;
    os << '\n';
    for (std::size_t i = 0; i < grid.size(); ++i) {
      os << kTableLengths[i];
      for (const auto& cell : grid[i])
        os << ',' << cell.non_contributing << " (" << std::fixed << std::setprecision(2) << 100.0 * cell.rate << "%)";
      os << '\n';
    }
  }
  emit(out, os.str());
  return 0;
}

int cmd_autocorrelation(const std::string& in, std::size_t max_lag, const std::string& series, std::size_t index,
                        int segments, const std::string& out) {
  std::vector<double> values;
  if (series == "tokens") {
    const auto seqs = stage("read tokens", [&] { return read_token_file(in); });
    if (index >= seqs.size()) throw UsageError("--index is past the last sequence");
    values = token_values(seqs[index].tokens);
  } else if (series == "notes") {
    const auto pieces = stage("read piece", [&] { return read_pieces(in); });
    if (index >= pieces.size()) throw UsageError("--index is past the last piece");
    values = note_count_series(pieces[index], segments);
  } else {
    throw UsageError("--series must be 'tokens' or 'notes'");
  }
  if (values.size() < 2) throw Error("series has fewer than two values");
  const std::size_t top = std::min(max_lag, values.size() - 1);
  std::ostringstream os;
  os << "lag,rho\n" << std::setprecision(10);
  for (std::size_t k = 1; k <= top; ++k)
    os << k << ',' << stage("autocorrelation", [&] { return autocorrelation(values, k); }) << '\n';
  emit(out, os.str());
  return 0;
}

int cmd_repetition(const std::vector<std::string>& inputs, const RepetitionConfig& rc, const std::string& out) {
  std::ostringstream os;
  os << "piece";
  for (int k = 0; k < rc.segments; ++k) os << ",segment_" << k;
  os << '\n';
  for (const auto& in : inputs) {
    const auto pieces = stage("read " + in, [&] { return read_pieces(in); });
    for (std::size_t k = 0; k < pieces.size(); ++k) {
      const auto d = stage("repetition", [&] { return repetition_density(pieces[k], rc); });
      os << fs::path(in).stem().string() << (pieces.size() > 1 ? "#" + std::to_string(k) : "") << ','
         << csv_row(d) << '\n';
    }
  }
  emit(out, os.str());
  return 0;
}

int cmd_evaluate(const std::string& generated, const std::string& reference, const Common& c) {
  if (c.out.empty()) throw UsageError("evaluate needs --out");
  RunConfig cfg = load_config(c.config);
  finalize_or_usage(cfg);
  const auto gen = stage("read generated", [&] { return read_piece_dir(generated); });
  const auto ref = stage("read reference", [&] { return read_piece_dir(reference); });
  const auto reports = stage("evaluate", [&] { return evaluate_sets(gen, ref, cfg.eval); });

  json j;
  j["generated_pieces"] = gen.size();
  j["reference_pieces"] = ref.size();
  j["metadata"] = {{"distance", "absolute difference for scalars, Euclidean on flattened values otherwise"},
                   {"density", "Gaussian KDE, Scott bandwidth floored at two grid steps, unit trapezoidal area"},
                   {"grid_points", cfg.eval.grid_points},
                   {"kld_direction", "inter || intra"},
                   {"segments", cfg.eval.segments},
                   {"length_bins", cfg.eval.length_bins}};
  const fs::path report_path = out_path(c.out);
  for (const auto& r : reports) {
    const std::string name(feature_name(r.kind));
    j["features"][name] = {{"kld", r.kld},
                           {"oa", r.oa},
                           {"intra_count", r.intra_count},
                           {"inter_count", r.inter_count},
                           {"intra_bandwidth", r.intra.bandwidth},
                           {"inter_bandwidth", r.inter.bandwidth}};
    std::ostringstream os;
    os << "x,intra,inter\n" << std::setprecision(10);
    for (std::size_t k = 0; k < r.intra.grid.x.size(); ++k)
      os << r.intra.grid.x[k] << ',' << r.intra.density[k] << ',' << r.inter.density[k] << '\n';
    fs::path csv = report_path;
    std::string safe = name;
    std::replace(safe.begin(), safe.end(), '/', '_');
    csv.replace_filename(report_path.stem().string() + "_" + safe + ".csv");
    write_file_atomic(csv, std::string_view(os.str()));
  }
  write_file_atomic(report_path, std::string_view(j.dump(2) + "\n"));
  return 0;
}

int cmd_pianoroll(const std::string& in, std::size_t index, const std::string& out) {
  if (out.empty()) throw UsageError("pianoroll needs --out");
  const auto pieces = stage("read piece", [&] { return read_pieces(in); });
  if (index >= pieces.size()) throw UsageError("--index is past the last piece");
  write_file_atomic(out_path(out), std::string_view(render_pianoroll_svg(pieces[index])));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Long-context symbolic music modelling toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every subcommand");

  Common common;
  auto add_out = [&](CLI::App* sub, const std::string& what) {
    sub->add_option("--out", common.out, what + " (relative paths honour PERCEIVERS_OUT_DIR)");
  };
  auto add_config = [&](CLI::App* sub) { sub->add_option("--config", common.config, "Run configuration file"); };
  auto add_seed = [&](CLI::App* sub) { sub->add_option("--seed", common.seed, "Random seed"); };

  std::vector<std::string> inputs;
  std::string input, mode, access, kind, corpus, checkpoint, loss_csv, tokens_out, series = "tokens", generated,
      reference;
  std::optional<int> opt_m, opt_n, steps, max_tokens;
  std::optional<double> top_p, temperature;
  std::optional<std::int64_t> query, max_len;
  int count = 1, mask_n = 5, mask_m = 10, mask_w = 5, mask_pad = 0, segments = 64;
  std::size_t index = 0, max_lag = 16;
  RepetitionConfig rep;

  auto* tok = app.add_subcommand("tokenize", "MIDI files to a token JSON-lines corpus");
  tok->add_option("--in", inputs, "MIDI files")->required()->expected(1, -1);
  add_out(tok, "Token corpus (stdout when omitted)");

  auto* detok = app.add_subcommand("detokenize", "One token sequence to a MIDI file");
  detok->add_option("--in", input, "Token corpus (.jsonl or .tok)")->required();
  detok->add_option("--index", index, "Sequence index within the corpus");
  add_out(detok, "MIDI file");

  auto* seg = app.add_subcommand("sample-segments", "Dump training samples as JSON lines");
  seg->add_option("--in", input, "Token corpus")->required();
  seg->add_option("--mode", mode, "baseline or effective")->check(CLI::IsMember({"baseline", "effective"}));
  seg->add_option("--access", access, "random or sequential")->check(CLI::IsMember({"random", "sequential"}));
  seg->add_option("--m", opt_m, "Input slots");
  seg->add_option("--n", opt_n, "Query slots");
  seg->add_option("--count", count, "Random samples per sequence, or a cap on sequential samples (0 = all)");
  add_config(seg);
  add_seed(seg);
  add_out(seg, "Sample file (stdout when omitted)");

  auto* mask = app.add_subcommand("mask-dump", "Print an attention mask as a 0/1 grid");
  mask->add_option("--kind", kind, "vanilla, final-block, scale, multi-scale, padding, query-padding, cross, latent")
      ->required();
  mask->add_option("--n", mask_n, "Query rows");
  mask->add_option("--m", mask_m, "Context columns");
  mask->add_option("--window", mask_w, "Scale window (cross: 0 = full)");
  mask->add_option("--pad", mask_pad, "Leading padded slots");
  add_out(mask, "Output file (stdout when omitted)");

  auto* tr = app.add_subcommand("train", "Train a model and write a checkpoint");
  add_config(tr);
  add_seed(tr);
  tr->add_option("--steps", steps, "Optimizer steps");
  tr->add_option("--corpus", corpus, "Token corpus (overrides data.corpus)");
  tr->add_option("--loss-csv", loss_csv, "Loss curve CSV (default: <checkpoint>.loss.csv)");
  add_out(tr, "Checkpoint (overrides data.checkpoint)");

  auto* gen = app.add_subcommand("generate", "Sample a piece unconditionally");
  add_config(gen);
  add_seed(gen);
  gen->add_option("--checkpoint", checkpoint, "Checkpoint (overrides data.checkpoint)");
  gen->add_option("--top-p", top_p, "Nucleus mass");
  gen->add_option("--temperature", temperature, "Softmax temperature");
  gen->add_option("--max-tokens", max_tokens, "Token budget");
  gen->add_option("--tokens-out", tokens_out, "Also write the sampled tokens as JSON lines");
  add_out(gen, "MIDI file");

  auto* eff = app.add_subcommand("efficiency", "Non-contributing token counts per (query, max input) pair");
  eff->add_option("--lengths", input, "Token corpus, or a text file with one length per line")->required();
  eff->add_option("--query", query, "Query length");
  eff->add_option("--max", max_len, "Maximum input length");
  add_out(eff, "CSV (stdout when omitted)");

  auto* ac = app.add_subcommand("autocorrelation", "Autocorrelation for lags 1..max-lag");
  ac->add_option("--in", input, "Token corpus, or a MIDI file with --series notes")->required();
  ac->add_option("--max-lag", max_lag, "Largest lag");
  ac->add_option("--series", series, "tokens (raw indices) or notes (note counts per window)");
  ac->add_option("--index", index, "Sequence index within the input");
  ac->add_option("--segments", segments, "Windows for the notes series");
  add_out(ac, "CSV (stdout when omitted)");

  auto* re = app.add_subcommand("repetition", "Repetitive-note density per window");
  re->add_option("--in", inputs, "MIDI or token files")->required()->expected(1, -1);
  re->add_option("--segments", rep.segments, "Windows per piece");
  re->add_option("--gram", rep.gram, "Pitch n-gram length");
  re->add_option("--min-repeats", rep.min_repeats, "Back-to-back repeats that count as repetitive");
  add_out(re, "CSV (stdout when omitted)");

  auto* ev = app.add_subcommand("evaluate", "Feature-distribution similarity between two piece sets");
  ev->add_option("--generated", generated, "Directory of generated pieces")->required();
  ev->add_option("--reference", reference, "Directory of reference pieces")->required();
  add_config(ev);
  add_out(ev, "JSON report; per-feature density CSVs are written beside it");

  auto* pr = app.add_subcommand("pianoroll", "Render a piece as an SVG piano roll");
  pr->add_option("--in", input, "MIDI or token file")->required();
  pr->add_option("--index", index, "Piece index within a token file");
  add_out(pr, "SVG file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*tok) return cmd_tokenize(inputs, common.out);
    if (*detok) return cmd_detokenize(input, index, common.out);
    if (*seg) return cmd_sample_segments(input, common, mode, access, opt_m, opt_n, count);
    if (*mask) return cmd_mask_dump(kind, mask_n, mask_m, mask_w, mask_pad, common.out);
    if (*tr) return cmd_train(common, steps, corpus, loss_csv);
    if (*gen) return cmd_generate(common, checkpoint, top_p, temperature, max_tokens, tokens_out);
    if (*eff) return cmd_efficiency(input, query, max_len, common.out);
    if (*ac) return cmd_autocorrelation(input, max_lag, series, index, segments, common.out);
    if (*re) return cmd_repetition(inputs, rep, common.out);
    if (*ev) return cmd_evaluate(generated, reference, common);
    if (*pr) return cmd_pianoroll(input, index, common.out);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
