#pragma once

// Token corpus files.
//
// JSON lines: one {"source_id": "...", "tokens": [..]} object per line.
// Binary: a sequence of records, each a little-endian u32 token count
// followed by that many little-endian u16 indices. Source ids are not
// stored; readers name records "<prefix>#<index>".

#include <cstdint>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "perceivers/error.hpp"
#include "perceivers/midi_io.hpp"

namespace perceivers {

inline void write_tokens_jsonl(std::ostream& os, std::span<const TokenSequence> seqs) {
  for (const auto& s : seqs) {
    nlohmann::json j;
    j["source_id"] = s.source_id;
    j["tokens"] = s.tokens;
    os << j.dump() << '\n';
  }
}

inline std::vector<TokenSequence> read_tokens_jsonl(std::istream& is) {
  std::vector<TokenSequence> out;
  std::string line;
  std::size_t offset = 0;
  while (std::getline(is, line)) {
    std::size_t at = offset;
    offset += line.size() + 1;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("invalid JSON line: ") + e.what(), at);
    }
    if (!j.is_object() || !j.contains("tokens") || !j["tokens"].is_array())
      throw ParseError("token record without a tokens array", at);
    TokenSequence s;
    s.source_id = j.value("source_id", std::string{});
    for (const auto& t : j["tokens"]) {
      if (!t.is_number_integer()) throw ParseError("non-integer token", at);
      auto v = t.get<std::int64_t>();
      if (v < 0 || v >= vocab::kSize) throw ParseError("token index outside vocabulary", at);
      s.tokens.push_back(static_cast<Token>(v));
    }
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<std::uint8_t> encode_tokens_binary(std::span<const TokenSequence> seqs) {
  std::vector<std::uint8_t> out;
  for (const auto& s : seqs) {
    auto n = static_cast<std::uint32_t>(s.tokens.size());
    for (int i = 0; i < 4; ++i) out.push_back((n >> (8 * i)) & 0xFF);
    for (Token t : s.tokens) {
      out.push_back(t & 0xFF);
      out.push_back(t >> 8);
    }
  }
  return out;
}

inline std::vector<TokenSequence> decode_tokens_binary(std::span<const std::uint8_t> bytes,
                                                       const std::string& id_prefix = "seq") {
  std::vector<TokenSequence> out;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    if (bytes.size() - pos < 4) throw ParseError("truncated record length", pos);
    std::uint32_t n = 0;
    for (int i = 0; i < 4; ++i) n |= std::uint32_t(bytes[pos + i]) << (8 * i);
    pos += 4;
    if ((bytes.size() - pos) / 2 < n) throw ParseError("truncated token record", pos);
    TokenSequence s;
    s.source_id = id_prefix + "#" + std::to_string(out.size());
    s.tokens.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i, pos += 2) {
      Token t = static_cast<Token>(bytes[pos] | (bytes[pos + 1] << 8));
      if (t >= vocab::kSize) throw ParseError("token index outside vocabulary", pos);
      s.tokens.push_back(t);
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace perceivers
