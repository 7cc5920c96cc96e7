#pragma once

// Single-file little-endian checkpoint:
//   "PRCVCKPT" | u32 version | u32 config-length | config (key=value text)
//   | u64 value count | f64 values | u64 FNV-1a checksum of all preceding bytes

#include <bit>
#include <cstdint>
#include <cstring>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "perceivers/error.hpp"
#include "perceivers/model.hpp"

namespace perceivers {

inline constexpr char kCheckpointMagic[8] = {'P', 'R', 'C', 'V', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::uint64_t fnv1a(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

namespace detail {

template <class U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t k = 0; k < sizeof(U); ++k) out.push_back(std::uint8_t(v >> (8 * k)));
}

template <class U>
U get_le(std::span<const std::uint8_t> in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) throw ParseError("checkpoint truncated", pos);
  U v = 0;
  for (std::size_t k = 0; k < sizeof(U); ++k) v |= U(in[pos + k]) << (8 * k);
  pos += sizeof(U);
  return v;
}

inline std::string config_text(const ModelConfig& c) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "vocab_size=" << c.vocab_size << "\nd_model=" << c.d_model << "\nn_heads=" << c.n_heads
     << "\nd_head=" << c.d_head << "\nn_self_layers=" << c.n_self_layers << "\ncross_windows=";
  for (std::size_t k = 0; k < c.cross_windows.size(); ++k) os << (k ? "," : "") << c.cross_windows[k];
  os << "\nm=" << c.m << "\nn=" << c.n << "\nffn_multiplier=" << c.ffn_multiplier << "\ndropout=" << c.dropout
     << "\nseed=" << c.seed << "\n";
  return os.str();
}

inline ModelConfig parse_config_text(const std::string& text, std::size_t offset) {
  ModelConfig c;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("malformed checkpoint config line", offset);
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    try {
      if (key == "vocab_size") c.vocab_size = std::stoi(val);
      else if (key == "d_model") c.d_model = std::stoi(val);
      else if (key == "n_heads") c.n_heads = std::stoi(val);
      else if (key == "d_head") c.d_head = std::stoi(val);
      else if (key == "n_self_layers") c.n_self_layers = std::stoi(val);
      else if (key == "m") c.m = std::stoi(val);
      else if (key == "n") c.n = std::stoi(val);
      else if (key == "ffn_multiplier") c.ffn_multiplier = std::stoi(val);
      else if (key == "dropout") c.dropout = std::stod(val);
      else if (key == "seed") c.seed = std::stoull(val);
      else if (key == "cross_windows") {
        c.cross_windows.clear();
        std::istringstream ws(val);
        std::string item;
        while (std::getline(ws, item, ',')) c.cross_windows.push_back(std::stoi(item));
      } else {
        throw ParseError("unknown checkpoint config key '" + key + "'", offset);
      }
    } catch (const std::logic_error&) {
      throw ParseError("bad value for checkpoint config key '" + key + "'", offset);
    }
  }
  return c;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_checkpoint(const Parameters<double>& p) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  const std::string cfg = detail::config_text(p.config);
  detail::put_le<std::uint32_t>(out, std::uint32_t(cfg.size()));
  out.insert(out.end(), cfg.begin(), cfg.end());
  detail::put_le<std::uint64_t>(out, p.values.size());
  for (double v : p.values) detail::put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  detail::put_le<std::uint64_t>(out, fnv1a(out));
  return out;
}

inline Parameters<double> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) + 8 ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw ParseError("not a checkpoint file", 0);
  std::size_t tail = bytes.size() - 8;
  std::size_t pos = tail;
  const auto stored = detail::get_le<std::uint64_t>(bytes, pos);
  if (stored != fnv1a(bytes.first(tail))) throw ParseError("checkpoint checksum mismatch", tail);

  const auto body = bytes.first(tail);
  pos = sizeof(kCheckpointMagic);
  const auto version = detail::get_le<std::uint32_t>(body, pos);
  if (version != kCheckpointVersion) throw ParseError("unsupported checkpoint version", pos - 4);
  const auto cfg_len = detail::get_le<std::uint32_t>(body, pos);
  if (pos + cfg_len > body.size()) throw ParseError("checkpoint truncated", pos);
  const std::string cfg(reinterpret_cast<const char*>(body.data() + pos), cfg_len);
  const std::size_t cfg_at = pos;
  pos += cfg_len;
  ModelConfig c = detail::parse_config_text(cfg, cfg_at);
  try {
    c.validate();
  } catch (const InvalidArgument& e) {
    throw ParseError(std::string("invalid checkpoint config: ") + e.what(), cfg_at);
  }
  Parameters<double> p(c);
  const auto count = detail::get_le<std::uint64_t>(body, pos);
  if (count != p.values.size()) throw ParseError("parameter count does not match config", pos - 8);
  if (body.size() - pos != count * 8) throw ParseError("parameter blob has the wrong length", pos);
  for (auto& v : p.values) v = std::bit_cast<double>(detail::get_le<std::uint64_t>(body, pos));
  return p;
}

}  // namespace perceivers
