#pragma once

#include <array>
#include <string_view>

#include "rhrseg/taxonomy.hpp"

namespace rhrseg {

// Reference per-class IoU rows (percent, 19 classes in taxonomy order) with
// their printed mean, kept to check our report format and mean arithmetic.
struct ReferenceRow {
  std::string_view method;
  std::array<double, kNumTrainClasses> per_class;
  double printed_miou;
};

inline constexpr std::array<ReferenceRow, 2> kRhrsegReferenceRows{{
    {"reference-cityscapes",
     {92.59, 58.56, 78.65, 5.83, 10.11, 30.48, 16.33, 32.45, 78.97, 30.35, 80.25, 52.98,
      14.57, 80.77, 0.46, 0.02, 0.02, 0.11, 49.52},
     37.53},
    {"reference-nightcity-fine",
     {87.25, 37.63, 77.84, 23.79, 32.72, 23.58, 9.87, 28.06, 49.62, 14.63, 82.82, 29.76,
      0.01, 70.84, 20.65, 24.55, 0.0, 0.0, 20.01},
     33.35},
}};

}  // namespace rhrseg
