#pragma once

// Standard MIDI File parsing/writing and the performance-event token vocabulary.
//
// Vocabulary layout (390 entries):
//   0         PAD
//   1..128    NOTE_ON  pitch 0..127
//   129..256  NOTE_OFF pitch 0..127
//   257..356  TIME_SHIFT 1..100 steps of 10 ms
//   357..388  VELOCITY bin 0..31 (bin = velocity / 4)
//   389       TOKEN_END

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "perceivers/error.hpp"

namespace perceivers {

struct MidiNote {
  int pitch = 60;
  double onset = 0.0;   // seconds
  double offset = 0.0;  // seconds, > onset
  int velocity = 64;

  friend bool operator==(const MidiNote&, const MidiNote&) = default;
};

/// Orders notes by (onset, pitch), the canonical piece order.
inline bool note_before(const MidiNote& a, const MidiNote& b) {
  if (a.onset != b.onset) return a.onset < b.onset;
  return a.pitch < b.pitch;
}

inline void sort_notes(std::vector<MidiNote>& notes) {
  std::stable_sort(notes.begin(), notes.end(), note_before);
}

using Token = std::uint16_t;

namespace vocab {

inline constexpr int kPad = 0;
inline constexpr int kNoteOnBase = 1;
inline constexpr int kNoteOffBase = 129;
inline constexpr int kTimeShiftBase = 256;  // TIME_SHIFT(s) = base + s, s >= 1
inline constexpr int kVelocityBase = 357;
inline constexpr int kTokenEnd = 389;
inline constexpr int kSize = 390;

inline constexpr int kMaxShiftSteps = 100;
inline constexpr int kVelocityBins = 32;
inline constexpr double kStepsPerSecond = 100.0;

enum class EventKind { Pad, NoteOn, NoteOff, TimeShift, Velocity, End };

struct Event {
  EventKind kind;
  int value;  // pitch, shift steps, or velocity bin; 0 for Pad/End

  friend bool operator==(const Event&, const Event&) = default;
};

constexpr Token note_on(int pitch) { return static_cast<Token>(kNoteOnBase + pitch); }
constexpr Token note_off(int pitch) { return static_cast<Token>(kNoteOffBase + pitch); }
constexpr Token time_shift(int steps) { return static_cast<Token>(kTimeShiftBase + steps); }
constexpr Token velocity(int bin) { return static_cast<Token>(kVelocityBase + bin); }

constexpr int velocity_bin(int velocity) { return std::clamp(velocity, 0, 127) / 4; }
/// Bin centre; stays inside the bin and is never 0.
constexpr int bin_velocity(int bin) { return bin * 4 + 2; }

inline Event decode(int index) {
  if (index < 0 || index >= kSize)
    throw InvalidArgument("token index " + std::to_string(index) + " outside vocabulary");
  if (index == kPad) return {EventKind::Pad, 0};
  if (index < kNoteOffBase) return {EventKind::NoteOn, index - kNoteOnBase};
  if (index <= kTimeShiftBase) return {EventKind::NoteOff, index - kNoteOffBase};
  if (index < kVelocityBase) return {EventKind::TimeShift, index - kTimeShiftBase};
  if (index < kTokenEnd) return {EventKind::Velocity, index - kVelocityBase};
  return {EventKind::End, 0};
}

inline Token encode(Event e) {
  switch (e.kind) {
    case EventKind::Pad: return kPad;
    case EventKind::NoteOn: return note_on(e.value);
    case EventKind::NoteOff: return note_off(e.value);
    case EventKind::TimeShift: return time_shift(e.value);
    case EventKind::Velocity: return velocity(e.value);
    case EventKind::End: return kTokenEnd;
  }
  return kPad;
}

}  // namespace vocab

struct TokenSequence {
  std::vector<Token> tokens;
  std::string source_id;
};

// ---------------------------------------------------------------------------
// SMF parsing

struct ParsedMidi {
  std::vector<MidiNote> notes;
  std::size_t unmatched_note_offs = 0;
  std::size_t dropped_zero_length = 0;
};

namespace detail {

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  bool at_end() const { return pos_ >= bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  std::uint8_t u8() {
    need(1);
    return bytes_[pos_++];
  }
  std::uint8_t peek() const {
    if (at_end()) throw ParseError("unexpected end of data", pos_);
    return bytes_[pos_];
  }
  std::uint16_t u16be() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>((bytes_[pos_] << 8) | bytes_[pos_ + 1]);
    pos_ += 2;
    return v;
  }
  std::uint32_t u32be() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | bytes_[pos_ + i];
    pos_ += 4;
    return v;
  }
  std::uint32_t varlen() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      std::uint8_t b = u8();
      v = (v << 7) | (b & 0x7F);
      if (!(b & 0x80)) return v;
    }
    throw ParseError("variable-length quantity longer than 4 bytes", pos_);
  }
  std::string tag() {
    need(4);
    std::string t(reinterpret_cast<const char*>(bytes_.data() + pos_), 4);
    pos_ += 4;
    return t;
  }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw ParseError("unexpected end of data", pos_);
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

enum class RawKind { NoteOn, NoteOff, Pedal, Tempo };

struct RawEvent {
  std::uint64_t tick;
  int track;
  std::size_t seq;
  RawKind kind;
  int a;  // pitch / controller value / tempo (us per quarter)
  int b;  // velocity
};

inline void parse_track(ByteReader& r, std::size_t end, int track,
                        std::vector<RawEvent>& out, std::uint64_t& last_tick) {
  std::uint64_t tick = 0;
  std::uint8_t running = 0;
  std::size_t seq = 0;
  while (r.offset() < end) {
    tick += r.varlen();
    std::size_t at = r.offset();
    std::uint8_t status = r.peek();
    if (status & 0x80) {
      r.u8();
    } else if (running) {
      status = running;
    } else {
      throw ParseError("data byte without running status", at);
    }

    if (status == 0xFF) {
      std::uint8_t type = r.u8();
      std::uint32_t len = r.varlen();
      if (r.offset() + len > end) throw ParseError("meta event overruns track", r.offset());
      if (type == 0x51 && len == 3) {
        int us = r.u8() << 16;
        us |= r.u8() << 8;
        us |= r.u8();
        out.push_back({tick, track, seq++, RawKind::Tempo, us, 0});
      } else {
        r.skip(len);
      }
      last_tick = std::max(last_tick, tick);
      if (type == 0x2F) break;
      continue;
    }
    if (status == 0xF0 || status == 0xF7) {
      std::uint32_t len = r.varlen();
      if (r.offset() + len > end) throw ParseError("sysex overruns track", r.offset());
      r.skip(len);
      continue;
    }
    if (status >= 0xF0) throw ParseError("unsupported system message in file", at);

    running = status;
    std::uint8_t hi = status & 0xF0;
    int nbytes = (hi == 0xC0 || hi == 0xD0) ? 1 : 2;
    std::array<int, 2> data{0, 0};
    for (int i = 0; i < nbytes; ++i) {
      std::size_t dat = r.offset();
      std::uint8_t d = r.u8();
      if (d & 0x80) throw ParseError("status byte where data byte expected", dat);
      data[i] = d;
    }
    last_tick = std::max(last_tick, tick);
    if (hi == 0x90 && data[1] > 0) {
      out.push_back({tick, track, seq++, RawKind::NoteOn, data[0], data[1]});
    } else if (hi == 0x80 || hi == 0x90) {
      out.push_back({tick, track, seq++, RawKind::NoteOff, data[0], 0});
    } else if (hi == 0xB0 && data[0] == 64) {
      out.push_back({tick, track, seq++, RawKind::Pedal, data[1], 0});
    }
  }
  if (r.offset() > end) throw ParseError("event overruns track chunk", end);
}

/// Converts ticks to seconds through a piecewise-constant tempo map.
class TempoMap {
 public:
  TempoMap(std::uint16_t division, const std::vector<RawEvent>& events) {
    if (division & 0x8000) {
      int fps = -static_cast<std::int8_t>(division >> 8);
      int tpf = division & 0xFF;
      double rate = (fps == 29 ? 29.97 : fps) * tpf;
      smpte_ticks_per_second_ = rate;
      return;
    }
    ppq_ = division;
    for (const auto& e : events) {
      if (e.kind != RawKind::Tempo) continue;
      if (!changes_.empty() && changes_.back().tick == e.tick) {
        changes_.back().us_per_quarter = e.a;
      } else {
        changes_.push_back({e.tick, e.a, 0.0});
      }
    }
    if (changes_.empty() || changes_.front().tick != 0) {
      changes_.insert(changes_.begin(), {0, 500000, 0.0});
    }
    for (std::size_t i = 1; i < changes_.size(); ++i) {
      const auto& p = changes_[i - 1];
      changes_[i].seconds =
          p.seconds + seconds_per_tick(p.us_per_quarter) * double(changes_[i].tick - p.tick);
    }
  }

  double seconds(std::uint64_t tick) const {
    if (smpte_ticks_per_second_ > 0) return double(tick) / smpte_ticks_per_second_;
    auto it = std::upper_bound(changes_.begin(), changes_.end(), tick,
                               [](std::uint64_t t, const Change& c) { return t < c.tick; });
    const Change& c = *std::prev(it);
    return c.seconds + seconds_per_tick(c.us_per_quarter) * double(tick - c.tick);
  }

 private:
  struct Change {
    std::uint64_t tick;
    int us_per_quarter;
    double seconds;
  };

  double seconds_per_tick(int us_per_quarter) const { return us_per_quarter * 1e-6 / ppq_; }

  int ppq_ = 480;
  double smpte_ticks_per_second_ = 0.0;
  std::vector<Change> changes_;
};

}  // namespace detail

/// Parses a format 0/1 SMF into notes. Sustain pedal (CC64 >= 64) extends a
/// released note until the pedal lifts; re-striking a sounding pitch ends the
/// previous instance at the re-strike instant. Pedal events are discarded.
inline ParsedMidi parse_midi(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes);
  if (r.remaining() < 14 || r.tag() != "MThd") throw ParseError("missing MThd header", 0);
  std::uint32_t hlen = r.u32be();
  if (hlen < 6) throw ParseError("MThd length below 6", 4);
  std::uint16_t format = r.u16be();
  std::uint16_t ntracks = r.u16be();
  std::uint16_t division = r.u16be();
  if (format > 1) throw ParseError("unsupported SMF format " + std::to_string(format), 8);
  if (division == 0) throw ParseError("zero time division", 12);
  r.skip(hlen - 6);

  std::vector<detail::RawEvent> events;
  std::uint64_t last_tick = 0;
  int found = 0;
  while (found < ntracks) {
    if (r.remaining() < 8) throw ParseError("missing MTrk chunk", r.offset());
    std::size_t chunk_at = r.offset();
    std::string tag = r.tag();
    std::uint32_t len = r.u32be();
    if (len > r.remaining()) throw ParseError("chunk length exceeds file size", chunk_at);
    std::size_t end = r.offset() + len;
    if (tag == "MTrk") {
      detail::parse_track(r, end, found, events, last_tick);
      ++found;
    }
    r.skip(end - r.offset());
  }

  std::stable_sort(events.begin(), events.end(), [](const auto& a, const auto& b) {
    if (a.tick != b.tick) return a.tick < b.tick;
    if (a.track != b.track) return a.track < b.track;
    return a.seq < b.seq;
  });
  detail::TempoMap tempo(division, events);

  struct Active {
    double onset;
    int velocity;
    bool key_down;
  };
  std::map<int, Active> active;
  bool pedal = false;
  ParsedMidi out;

  auto close = [&](int pitch, double at) {
    const Active& a = active.at(pitch);
    if (at > a.onset) {
      out.notes.push_back({pitch, a.onset, at, a.velocity});
    } else {
      ++out.dropped_zero_length;
    }
    active.erase(pitch);
  };

  for (const auto& e : events) {
    double t = tempo.seconds(e.tick);
    switch (e.kind) {
      case detail::RawKind::NoteOn:
        if (active.count(e.a)) close(e.a, t);
        active[e.a] = {t, e.b, true};
        break;
      case detail::RawKind::NoteOff: {
        auto it = active.find(e.a);
        if (it == active.end() || !it->second.key_down) {
          ++out.unmatched_note_offs;
        } else if (pedal) {
          it->second.key_down = false;
        } else {
          close(e.a, t);
        }
        break;
      }
      case detail::RawKind::Pedal: {
        bool down = e.a >= 64;
        if (pedal && !down) {
          std::vector<int> released;
          for (const auto& [p, a] : active)
            if (!a.key_down) released.push_back(p);
          for (int p : released) close(p, t);
        }
        pedal = down;
        break;
      }
      case detail::RawKind::Tempo:
        break;
    }
  }
  double end_time = tempo.seconds(last_tick);
  while (!active.empty()) close(active.begin()->first, end_time);

  sort_notes(out.notes);
  return out;
}

// ---------------------------------------------------------------------------
// Tokenization

namespace detail {

/// Nearest 10 ms step, ties rounded up.
inline std::int64_t to_step(double seconds) {
  return static_cast<std::int64_t>(std::floor(seconds * vocab::kStepsPerSecond + 0.5 + 1e-9));
}

}  // namespace detail

/// Encodes notes as performance events. Velocity tokens are emitted only when
/// the bin changes; at equal timestamps NOTE_OFFs precede NOTE_ONs, each group
/// in ascending pitch. Notes shorter than one step are held for one step.
inline TokenSequence tokenize(const std::vector<MidiNote>& notes, std::string source_id = {}) {
  struct Ev {
    std::int64_t step;
    int kind;  // 0 = off, 1 = on
    int pitch;
    int velocity;
  };
  std::vector<Ev> evs;
  evs.reserve(notes.size() * 2);
  for (const auto& n : notes) {
    if (n.pitch < 0 || n.pitch > 127) throw InvalidArgument("pitch outside 0..127");
    if (!std::isfinite(n.onset) || !std::isfinite(n.offset))
      throw InvalidArgument("non-finite note time");
    std::int64_t on = std::max<std::int64_t>(0, detail::to_step(n.onset));
    std::int64_t off = std::max(on + 1, detail::to_step(n.offset));
    evs.push_back({on, 1, n.pitch, n.velocity});
    evs.push_back({off, 0, n.pitch, 0});
  }
  std::stable_sort(evs.begin(), evs.end(), [](const Ev& a, const Ev& b) {
    if (a.step != b.step) return a.step < b.step;
    if (a.kind != b.kind) return a.kind < b.kind;
    return a.pitch < b.pitch;
  });

  TokenSequence seq;
  seq.source_id = std::move(source_id);
  std::int64_t now = 0;
  int last_bin = -1;
  for (const auto& e : evs) {
    for (std::int64_t gap = e.step - now; gap > 0;) {
      int s = static_cast<int>(std::min<std::int64_t>(gap, vocab::kMaxShiftSteps));
      seq.tokens.push_back(vocab::time_shift(s));
      gap -= s;
    }
    now = e.step;
    if (e.kind == 1) {
      int bin = vocab::velocity_bin(e.velocity);
      if (bin != last_bin) {
        seq.tokens.push_back(vocab::velocity(bin));
        last_bin = bin;
      }
      seq.tokens.push_back(vocab::note_on(e.pitch));
    } else {
      seq.tokens.push_back(vocab::note_off(e.pitch));
    }
  }
  seq.tokens.push_back(vocab::kTokenEnd);
  return seq;
}

struct DecodedNotes {
  std::vector<MidiNote> notes;
  std::size_t dangling_note_offs = 0;
};

/// Inverse of tokenize. Decoding stops at TOKEN_END; PAD is skipped; notes
/// still sounding at the end are closed there (held at least one step).
inline DecodedNotes detokenize(std::span<const Token> tokens) {
  constexpr double kStep = 1.0 / vocab::kStepsPerSecond;
  DecodedNotes out;
  std::map<int, std::pair<std::int64_t, int>> active;  // pitch -> (onset step, velocity)
  std::int64_t now = 0;
  int velocity = vocab::bin_velocity(16);

  auto emit = [&](int pitch, std::int64_t on, std::int64_t off, int vel) {
    out.notes.push_back({pitch, double(on) * kStep, double(std::max(off, on + 1)) * kStep, vel});
  };

  for (Token t : tokens) {
    vocab::Event e = vocab::decode(t);
    if (e.kind == vocab::EventKind::End) break;
    switch (e.kind) {
      case vocab::EventKind::TimeShift:
        now += e.value;
        break;
      case vocab::EventKind::Velocity:
        velocity = vocab::bin_velocity(e.value);
        break;
      case vocab::EventKind::NoteOn: {
        auto it = active.find(e.value);
        if (it != active.end()) {
          if (now > it->second.first) emit(e.value, it->second.first, now, it->second.second);
          active.erase(it);
        }
        active[e.value] = {now, velocity};
        break;
      }
      case vocab::EventKind::NoteOff: {
        auto it = active.find(e.value);
        if (it == active.end()) {
          ++out.dangling_note_offs;
        } else {
          emit(e.value, it->second.first, now, it->second.second);
          active.erase(it);
        }
        break;
      }
      default:
        break;
    }
  }
  for (const auto& [pitch, st] : active) emit(pitch, st.first, now, st.second);
  sort_notes(out.notes);
  return out;
}

inline DecodedNotes detokenize(const TokenSequence& seq) { return detokenize(seq.tokens); }

// ---------------------------------------------------------------------------
// SMF writing

inline constexpr int kWriteDivision = 480;
inline constexpr int kWriteTempo = 500000;  // 120 bpm -> 960 ticks per second

/// Emits a format-0 SMF at 480 ticks per quarter and 120 bpm.
inline std::vector<std::uint8_t> write_midi(const std::vector<MidiNote>& notes) {
  constexpr double kTicksPerSecond = kWriteDivision * 1e6 / kWriteTempo;
  struct Ev {
    std::int64_t tick;
    int kind;  // 0 = off, 1 = on
    int pitch;
    int velocity;
  };
  std::vector<Ev> evs;
  for (const auto& n : notes) {
    if (n.pitch < 0 || n.pitch > 127) throw InvalidArgument("pitch outside 0..127");
    std::int64_t on = std::llround(std::max(0.0, n.onset) * kTicksPerSecond);
    std::int64_t off = std::max<std::int64_t>(on + 1, std::llround(n.offset * kTicksPerSecond));
    evs.push_back({on, 1, n.pitch, std::clamp(n.velocity, 1, 127)});
    evs.push_back({off, 0, n.pitch, 0});
  }
  std::stable_sort(evs.begin(), evs.end(), [](const Ev& a, const Ev& b) {
    if (a.tick != b.tick) return a.tick < b.tick;
    if (a.kind != b.kind) return a.kind < b.kind;
    return a.pitch < b.pitch;
  });

  std::vector<std::uint8_t> track;
  auto varlen = [&](std::uint32_t v) {
    std::uint8_t buf[5];
    int n = 0;
    buf[n++] = v & 0x7F;
    while (v >>= 7) buf[n++] = static_cast<std::uint8_t>((v & 0x7F) | 0x80);
    while (n) track.push_back(buf[--n]);
  };
  varlen(0);
  track.insert(track.end(), {0xFF, 0x51, 0x03, (kWriteTempo >> 16) & 0xFF,
                             (kWriteTempo >> 8) & 0xFF, kWriteTempo & 0xFF});
  std::int64_t now = 0;
  for (const auto& e : evs) {
    varlen(static_cast<std::uint32_t>(e.tick - now));
    now = e.tick;
    if (e.kind == 1) {
      track.insert(track.end(), {0x90, static_cast<std::uint8_t>(e.pitch),
                                 static_cast<std::uint8_t>(e.velocity)});
    } else {
      track.insert(track.end(), {0x80, static_cast<std::uint8_t>(e.pitch), 0x40});
    }
  }
  varlen(0);
  track.insert(track.end(), {0xFF, 0x2F, 0x00});

  std::vector<std::uint8_t> out = {'M', 'T', 'h', 'd', 0, 0, 0, 6, 0, 0, 0, 1,
                                   kWriteDivision >> 8, kWriteDivision & 0xFF,
                                   'M', 'T', 'r', 'k'};
  std::uint32_t len = static_cast<std::uint32_t>(track.size());
  for (int s = 24; s >= 0; s -= 8) out.push_back((len >> s) & 0xFF);
  out.insert(out.end(), track.begin(), track.end());
  return out;
}

}  // namespace perceivers
