#pragma once

// SVG piano roll: one rectangle per note, time on x, pitch on y (high at top).

#include <algorithm>
#include <sstream>
#include <string>
#include <vector>

#include "perceivers/midi_io.hpp"

namespace perceivers {

struct PianoRollStyle {
  double pixels_per_second = 100.0;
  double pixels_per_pitch = 6.0;
  double margin = 10.0;
};

inline std::string render_pianoroll_svg(const std::vector<MidiNote>& notes, const PianoRollStyle& style = {}) {
  int lo = 127, hi = 0;
  double end = 0;
  for (const auto& n : notes) {
    lo = std::min(lo, n.pitch);
    hi = std::max(hi, n.pitch);
    end = std::max(end, n.offset);
  }
  if (notes.empty()) lo = hi = 60;
  const double width = end * style.pixels_per_second + 2 * style.margin;
  const double height = (hi - lo + 1) * style.pixels_per_pitch + 2 * style.margin;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
  os << "<rect class=\"background\" x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height
     << "\" fill=\"white\"/>\n";
  for (const auto& n : notes) {
    const double x = style.margin + n.onset * style.pixels_per_second;
    const double y = style.margin + (hi - n.pitch) * style.pixels_per_pitch;
    const double w = std::max(0.5, (n.offset - n.onset) * style.pixels_per_second);
    const int shade = 40 + int(n.velocity * 150 / 127);
    os << "<rect class=\"note\" x=\"" << x << "\" y=\"" << y << "\" width=\"" << w << "\" height=\""
       << style.pixels_per_pitch << "\" fill=\"rgb(30,60," << shade << ")\"><title>pitch " << n.pitch
       << "</title></rect>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace perceivers
