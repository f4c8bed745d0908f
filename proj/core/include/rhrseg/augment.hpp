#pragma once

#include <array>
#include <cstdint>

#include "rhrseg/image_io.hpp"
#include "rhrseg/taxonomy.hpp"
#include "rhrseg/tensor.hpp"

namespace rhrseg {

struct AugConfig {
  int crop_height = 512;
  int crop_width = 1024;
  double hflip_probability = 0.5;
  std::array<double, 2> scale_range{0.75, 1.25};
  std::array<double, 3> normalize_mean{0.485, 0.456, 0.406};
  std::array<double, 3> normalize_std{0.229, 0.224, 0.225};

  // Throws InvalidConfig.
  void validate() const;
};

// Every random choice augment() makes, drawn up front from the seed.
struct AugmentPlan {
  double scale = 1.0;
  int scaled_height = 0;
  int scaled_width = 0;
  int crop_top = 0;
  int crop_left = 0;
  bool flipped = false;
};

struct AugmentedSample {
  Tensor<float> image;  // (1, 3, crop_height, crop_width), normalized
  LabelMap label;
  AugmentPlan plan;
};

AugmentPlan plan_augment(int height, int width, const AugConfig& cfg, std::uint64_t seed);

// scale (bilinear image / nearest label) -> crop with padding (image: mean
// color, label: 255) -> horizontal flip -> per-channel normalization.
// Throws AlignmentError when image and label sizes differ.
AugmentedSample apply_augment(const RgbImage& image, const LabelMap& label,
                              const AugConfig& cfg, const AugmentPlan& plan);

AugmentedSample augment(const RgbImage& image, const LabelMap& label,
                        const AugConfig& cfg, std::uint64_t seed);

// (pixel / 255 - mean) / std, as a (1, 3, H, W) tensor.
Tensor<float> normalize_image(const RgbImage& image, const AugConfig& cfg);
// Inverse of normalize_image for sample n, clamped to [0, 255] and rounded.
RgbImage denormalize_image(const Tensor<float>& image, int n, const AugConfig& cfg);

LabelMap resize_nearest(const LabelMap& label, int height, int width);

// Largest centered window of at most (height, width) whose sides are
// multiples of `multiple`. Throws ShapeError if the image is smaller than
// one multiple.
struct CropWindow {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;
};
CropWindow center_window(int image_height, int image_width, int height, int width,
                         int multiple = 32);
RgbImage crop(const RgbImage& image, const CropWindow& window);
LabelMap crop(const LabelMap& label, const CropWindow& window);

}  // namespace rhrseg
