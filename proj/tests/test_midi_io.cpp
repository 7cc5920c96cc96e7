#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "perceivers/midi_io.hpp"
#include "support/smf_builder.hpp"

using namespace perceivers;
namespace v = perceivers::vocab;

namespace {

std::vector<Token> toks(std::initializer_list<int> xs) { return {xs.begin(), xs.end()}; }

void expect_note(const MidiNote& n, int pitch, double on, double off, double tol = 1e-9) {
  EXPECT_EQ(n.pitch, pitch);
  EXPECT_NEAR(n.onset, on, tol);
  EXPECT_NEAR(n.offset, off, tol);
}

}  // namespace

TEST(Vocabulary, LayoutBoundaries) {
  EXPECT_EQ(v::note_on(0), 1);
  EXPECT_EQ(v::note_on(127), 128);
  EXPECT_EQ(v::note_off(0), 129);
  EXPECT_EQ(v::note_off(127), 256);
  EXPECT_EQ(v::time_shift(1), 257);
  EXPECT_EQ(v::time_shift(100), 356);
  EXPECT_EQ(v::velocity(0), 357);
  EXPECT_EQ(v::velocity(31), 388);
  EXPECT_EQ(v::kTokenEnd, 389);
  EXPECT_EQ(v::kSize, 390);
}

TEST(Vocabulary, DecodeEncodeIsBijective) {
  for (int k = 0; k < v::kSize; ++k) EXPECT_EQ(v::encode(v::decode(k)), k) << k;
  EXPECT_THROW(v::decode(-1), InvalidArgument);
  EXPECT_THROW(v::decode(390), InvalidArgument);
}

TEST(Vocabulary, VelocityBinsAreQuarterSteps) {
  EXPECT_EQ(v::velocity_bin(0), 0);
  EXPECT_EQ(v::velocity_bin(3), 0);
  EXPECT_EQ(v::velocity_bin(4), 1);
  EXPECT_EQ(v::velocity_bin(127), 31);
  for (int b = 0; b < v::kVelocityBins; ++b) EXPECT_EQ(v::velocity_bin(v::bin_velocity(b)), b);
}

TEST(Tokenize, TwoNoteExample) {
  auto seq = tokenize({{60, 0.0, 0.5, 80}, {64, 0.5, 1.0, 80}});
  EXPECT_EQ(seq.tokens, toks({v::velocity(20), v::note_on(60), v::time_shift(50), v::note_off(60), v::note_on(64),
                              v::time_shift(50), v::note_off(64), v::kTokenEnd}));
}

TEST(Tokenize, OffsBeforeOnsAndAscendingPitchAtEqualTimes) {
  auto seq = tokenize({{67, 0.0, 0.1, 64}, {60, 0.0, 0.1, 64}, {62, 0.1, 0.2, 64}, {59, 0.1, 0.2, 64}});
  EXPECT_EQ(seq.tokens, toks({v::velocity(16), v::note_on(60), v::note_on(67), v::time_shift(10), v::note_off(60),
                              v::note_off(67), v::note_on(59), v::note_on(62), v::time_shift(10), v::note_off(59),
                              v::note_off(62), v::kTokenEnd}));
}

TEST(Tokenize, LongGapsSplitIntoMaximalShifts) {
  auto seq = tokenize({{60, 2.5, 2.6, 64}});
  EXPECT_EQ(seq.tokens, toks({v::time_shift(100), v::time_shift(100), v::time_shift(50), v::velocity(16),
                              v::note_on(60), v::time_shift(10), v::note_off(60), v::kTokenEnd}));
}

TEST(Tokenize, RoundsToNearestStepWithTiesUp) {
  EXPECT_EQ(tokenize({{60, 0.005, 0.1, 64}}).tokens.front(), v::time_shift(1));
  EXPECT_EQ(tokenize({{60, 0.0049, 0.1, 64}}).tokens.front(), v::velocity(16));
}

TEST(Tokenize, SubStepNoteIsHeldOneStep) {
  auto seq = tokenize({{60, 1.0, 1.002, 64}});
  auto notes = detokenize(seq).notes;
  ASSERT_EQ(notes.size(), 1u);
  expect_note(notes[0], 60, 1.0, 1.01);
}

TEST(Tokenize, VelocityTokenOnlyOnBinChange) {
  auto seq = tokenize({{60, 0.0, 0.1, 80}, {62, 0.1, 0.2, 81}, {64, 0.2, 0.3, 84}});
  EXPECT_EQ(std::count_if(seq.tokens.begin(), seq.tokens.end(),
                          [](Token t) { return v::decode(t).kind == v::EventKind::Velocity; }),
            2);
}

TEST(Tokenize, EmptyPieceIsJustEnd) { EXPECT_EQ(tokenize({}).tokens, toks({v::kTokenEnd})); }

TEST(Tokenize, RejectsBadPitch) { EXPECT_THROW(tokenize({{128, 0, 1, 64}}), InvalidArgument); }

TEST(Detokenize, ReconstructsBinCentreVelocity) {
  auto notes = detokenize(toks({v::velocity(20), v::note_on(60), v::time_shift(5), v::note_off(60)})).notes;
  ASSERT_EQ(notes.size(), 1u);
  EXPECT_EQ(notes[0].velocity, 82);
}

TEST(Detokenize, CountsDanglingOffsAndClosesOpenNotes) {
  auto out = detokenize(toks({v::note_off(61), v::note_on(60), v::time_shift(20)}));
  EXPECT_EQ(out.dangling_note_offs, 1u);
  ASSERT_EQ(out.notes.size(), 1u);
  expect_note(out.notes[0], 60, 0.0, 0.2);
}

TEST(Detokenize, StopsAtEndAndSkipsPad) {
  auto out = detokenize(toks({v::kPad, v::note_on(60), v::time_shift(10), v::note_off(60), v::kTokenEnd,
                              v::note_on(70), v::time_shift(10), v::note_off(70)}));
  ASSERT_EQ(out.notes.size(), 1u);
  expect_note(out.notes[0], 60, 0.0, 0.1);
}

// Random pieces with arbitrary real times; per pitch, notes never overlap and
// last at least one step. Oracle: each time rounded independently to 10 ms.
TEST(RoundTrip, RandomPiecesWithinHalfStep) {
  std::mt19937_64 rng(2024);
  for (int piece = 0; piece < 200; ++piece) {
    std::vector<MidiNote> notes;
    const int count = std::uniform_int_distribution<int>(1, 60)(rng);
    for (int k = 0; k < count; ++k) {
      MidiNote n{std::uniform_int_distribution<int>(21, 108)(rng), std::uniform_real_distribution<double>(0, 30)(rng),
                 0.0, std::uniform_int_distribution<int>(1, 127)(rng)};
      n.offset = n.onset + std::uniform_real_distribution<double>(0.011, 3.0)(rng);
      bool clash = std::any_of(notes.begin(), notes.end(), [&](const MidiNote& o) {
        return o.pitch == n.pitch && n.onset < o.offset + 0.011 && o.onset < n.offset + 0.011;
      });
      if (!clash) notes.push_back(n);
    }
    auto decoded = detokenize(tokenize(notes)).notes;
    ASSERT_EQ(decoded.size(), notes.size());
    auto key = [](const MidiNote& n) { return std::pair(std::llround(n.onset * 100), n.pitch); };
    std::sort(notes.begin(), notes.end(), [&](auto& a, auto& b) { return key(a) < key(b); });
    for (std::size_t k = 0; k < notes.size(); ++k) {
      EXPECT_EQ(decoded[k].pitch, notes[k].pitch);
      EXPECT_LE(std::abs(decoded[k].onset - notes[k].onset), 0.005 + 1e-9);
      EXPECT_LE(std::abs(decoded[k].offset - notes[k].offset), 0.005 + 1e-9);
      EXPECT_EQ(v::velocity_bin(decoded[k].velocity), v::velocity_bin(notes[k].velocity));
    }
  }
}

TEST(RoundTrip, TokensSurviveDetokenizeTokenize) {
  std::mt19937_64 rng(7);
  std::vector<MidiNote> notes;
  for (int k = 0; k < 40; ++k) {
    int on = std::uniform_int_distribution<int>(0, 2000)(rng);
    notes.push_back({48 + k, on / 100.0, (on + 1 + k) / 100.0, 10 + 3 * k});
  }
  auto first = tokenize(notes);
  auto second = tokenize(detokenize(first).notes);
  EXPECT_EQ(first.tokens, second.tokens);
}

// ---------------------------------------------------------------------------
// SMF parsing

TEST(ParseMidi, SustainPedalFixture) {
  // 480 ticks per quarter at the default 120 bpm: 960 ticks per second.
  smf::Track t;
  t.pedal(0, 127).on(480, 60, 90).off(192, 60).on(288, 60, 90).on(96, 64, 90).off(96, 60).off(288, 64).pedal(480, 0).end();
  auto parsed = parse_midi(smf::file(0, 480, {t}));
  ASSERT_EQ(parsed.notes.size(), 3u);
  expect_note(parsed.notes[0], 60, 0.5, 1.0);
  expect_note(parsed.notes[1], 60, 1.0, 2.0);
  expect_note(parsed.notes[2], 64, 1.1, 2.0);
  EXPECT_EQ(parsed.unmatched_note_offs, 0u);
}

TEST(ParseMidi, TempoChangesAcrossTracks) {
  smf::Track conductor;
  conductor.tempo(0, 1000000).tempo(480, 500000).end();
  smf::Track music;
  music.on(960, 60, 100).off(480, 60).end();
  auto parsed = parse_midi(smf::file(1, 480, {conductor, music}));
  ASSERT_EQ(parsed.notes.size(), 1u);
  expect_note(parsed.notes[0], 60, 1.5, 2.0);
}

TEST(ParseMidi, RunningStatusAndZeroVelocityOff) {
  smf::Track t;
  t.on(0, 60, 100).raw(240, {62, 100}).raw(240, {60, 0}).raw(240, {62, 0}).end();
  auto parsed = parse_midi(smf::file(0, 480, {t}));
  ASSERT_EQ(parsed.notes.size(), 2u);
  expect_note(parsed.notes[0], 60, 0.0, 0.5);
  expect_note(parsed.notes[1], 62, 0.25, 0.75);
  EXPECT_EQ(parsed.notes[0].velocity, 100);
}

TEST(ParseMidi, CountsUnmatchedOffsAndZeroLengthNotes) {
  smf::Track t;
  t.off(0, 50).on(10, 60, 100).off(0, 60).on(10, 61, 100).off(480, 61).end();
  auto parsed = parse_midi(smf::file(0, 480, {t}));
  EXPECT_EQ(parsed.unmatched_note_offs, 1u);
  EXPECT_EQ(parsed.dropped_zero_length, 1u);
  ASSERT_EQ(parsed.notes.size(), 1u);
  EXPECT_EQ(parsed.notes[0].pitch, 61);
}

TEST(ParseMidi, RestrikeTruncatesPreviousInstance) {
  smf::Track t;
  t.on(0, 60, 100).on(480, 60, 80).off(480, 60).off(0, 60).end();
  auto parsed = parse_midi(smf::file(0, 480, {t}));
  ASSERT_EQ(parsed.notes.size(), 2u);
  expect_note(parsed.notes[0], 60, 0.0, 0.5);
  expect_note(parsed.notes[1], 60, 0.5, 1.0);
  EXPECT_EQ(parsed.unmatched_note_offs, 1u);
}

TEST(ParseMidi, PedalHeldNoteReleasedOnPedalUpOnly) {
  smf::Track t;
  t.on(0, 60, 100).pedal(240, 100).off(240, 60).pedal(480, 10).end();
  auto parsed = parse_midi(smf::file(0, 480, {t}));
  ASSERT_EQ(parsed.notes.size(), 1u);
  expect_note(parsed.notes[0], 60, 0.0, 1.0);
}

TEST(ParseMidi, MalformedInputReportsOffset) {
  smf::Bytes junk{'R', 'I', 'F', 'F', 0, 0, 0, 6, 0, 0, 0, 1, 1, 0xE0};
  try {
    parse_midi(junk);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  smf::Track t;
  t.on(0, 60, 100).end();
  auto bytes = smf::file(0, 480, {t});
  bytes.resize(bytes.size() - 3);
  EXPECT_THROW(parse_midi(bytes), ParseError);
  EXPECT_THROW(parse_midi(smf::file(2, 480, {t})), ParseError);
}

TEST(WriteMidi, ParseInvertsWrite) {
  std::vector<MidiNote> notes{{60, 0.0, 0.5, 100}, {64, 0.25, 1.75, 50}, {67, 1.0, 1.01, 1}};
  auto parsed = parse_midi(write_midi(notes));
  ASSERT_EQ(parsed.notes.size(), notes.size());
  for (std::size_t k = 0; k < notes.size(); ++k) {
    expect_note(parsed.notes[k], notes[k].pitch, notes[k].onset, notes[k].offset, 1.0 / 1920);
    EXPECT_EQ(parsed.notes[k].velocity, notes[k].velocity);
  }
}

TEST(WriteMidi, IsDeterministic) {
  std::vector<MidiNote> notes{{60, 0.0, 0.5, 100}, {64, 0.25, 1.75, 50}};
  EXPECT_EQ(write_midi(notes), write_midi(notes));
}
