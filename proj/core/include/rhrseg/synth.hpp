#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "rhrseg/dataset.hpp"
#include "rhrseg/image_io.hpp"
#include "rhrseg/taxonomy.hpp"

namespace rhrseg {

struct SynthRegion {
  enum class Kind { kRectangle, kEllipse };
  Kind kind = Kind::kRectangle;
  int class_id = 0;
  // Rectangle: [x0, x1) x [y0, y1). Ellipse: center (cx, cy), radii (rx, ry).
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  double cx = 0, cy = 0, rx = 0, ry = 0;
  Color color{};

  bool contains(int x, int y) const;
};

struct SynthLamp {
  double cx = 0, cy = 0, sigma = 1, amplitude = 0;
};

// Full geometry and photometry of one scene; painted back to front.
struct SynthScene {
  int size = 0;
  int background_class = 0;
  Color background_color{};
  std::vector<SynthRegion> regions;
  std::vector<SynthLamp> lamps;  // used by the night rendering only
  std::uint64_t noise_seed = 0;
};

inline constexpr double kNightGamma = 2.5;
inline constexpr double kNightBrightness = 0.35;
inline constexpr double kNightNoiseSigma = 8.0;  // in 8-bit units

// Base color of a class in synthetic scenes (not the display palette).
Color synth_class_color(int class_id);

// Deterministic in (seed, index, size, num_classes).
SynthScene synth_scene(std::uint64_t seed, int index, int image_size, int num_classes);
LabelMap render_scene_labels(const SynthScene& scene);
RgbImage render_scene_image(const SynthScene& scene, bool night);

// Writes images/<split>/<index>.png and labels/<split>/<index>.png under
// out_root. image_size must be a multiple of 32 and num_classes in 1..19.
// Throws InvalidConfig or IOError.
std::vector<Sample> synth_generate(const std::filesystem::path& out_root, int num_pairs,
                                   int image_size, int num_classes, std::uint64_t seed,
                                   bool night, Split split = Split::kTrain);

std::string synth_file_name(int index);

}  // namespace rhrseg
