#pragma once

// 16-bit grayscale PNG export with a JSON colorbar describing the value map.

#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "grid.hpp"

namespace solid::image {

struct Range {
  double lo = 0.0;
  double hi = 1.0;
};

/// Finite min/max of a field; a constant field gets a unit-width range.
Range value_range(const Field& f);

/// Gray level g encodes lo + (hi - lo) * g / 65535; values outside the range clamp.
std::string encode_png16(const Field& f, Range r);
/// Gray levels mapped back to values through the same range.
Field decode_png16(std::string_view png, Range r);

nlohmann::json colorbar(Range r, const std::string& quantity, const std::string& units);

/// Bar chart raster (white bars on black), one bar per value, scaled to the maximum.
Field bar_chart(const std::vector<double>& values, int height = 96, int bar_width = 12);

}  // namespace solid::image
