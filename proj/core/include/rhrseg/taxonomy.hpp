#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rhrseg/image_io.hpp"

namespace rhrseg {

inline constexpr int kNumTrainClasses = 19;
inline constexpr std::uint8_t kIgnoreLabel = 255;

// Per-pixel train-ids in {0..K-1} U {255}.
struct LabelMap {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;

  LabelMap() = default;
  LabelMap(int h, int w, std::uint8_t fill = kIgnoreLabel)
      : height(h), width(w), values(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int y, int x) { return values[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const {
    return values[static_cast<std::size_t>(y) * width + x];
  }
  // Throws InvalidPrediction when a value is neither < num_classes nor 255.
  void validate(int num_classes = kNumTrainClasses) const;

  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

using Color = std::array<std::uint8_t, 3>;

// The 19-class urban-scene taxonomy with the Cityscapes raw-id table and
// display palette.
struct ClassTaxonomy {
  std::array<std::string, kNumTrainClasses> names;
  std::array<std::uint8_t, 256> raw_to_train;
  std::array<Color, kNumTrainClasses> colors;

  static const ClassTaxonomy& cityscapes();
  int size() const { return kNumTrainClasses; }
};

LabelMap encode_labels(const GrayImage& raw, const ClassTaxonomy& taxonomy);
// Use when the file already stores train-ids (synthetic layout).
LabelMap labels_from_train_ids(const GrayImage& raw, int num_classes);
GrayImage labels_to_image(const LabelMap& labels);

// Ignore pixels render black.
RgbImage colorize_prediction(const LabelMap& pred, const ClassTaxonomy& taxonomy);
// Inverse palette lookup; colors outside the palette map to 255.
LabelMap decode_colors(const RgbImage& image, const ClassTaxonomy& taxonomy);

}  // namespace rhrseg
