#include "rhrseg/augment.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "rhrseg/errors.hpp"
#include "rhrseg/netcore.hpp"

namespace rhrseg {

void AugConfig::validate() const {
  if (crop_height < 32 || crop_width < 32 || crop_height % 32 != 0 ||
      crop_width % 32 != 0) {
    throw InvalidConfig("crop dims must be positive multiples of 32, got " +
                        std::to_string(crop_height) + "x" + std::to_string(crop_width));
  }
  if (!(hflip_probability >= 0.0 && hflip_probability <= 1.0)) {
    throw InvalidConfig("hflip_probability must be in [0,1]");
  }
  if (!(scale_range[0] > 0.0) || scale_range[0] > scale_range[1]) {
    throw InvalidConfig("scale_range must satisfy 0 < min <= max");
  }
  for (double s : normalize_std) {
    if (!(s > 0.0)) throw InvalidConfig("normalize_std entries must be > 0");
  }
}

AugmentPlan plan_augment(int height, int width, const AugConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  AugmentPlan plan;
  const double lo = cfg.scale_range[0];
  const double hi = cfg.scale_range[1];
  const double u = unit(rng);
  plan.scale = lo == hi ? lo : lo + (hi - lo) * u;
  plan.scaled_height = std::max(1, static_cast<int>(std::lround(height * plan.scale)));
  plan.scaled_width = std::max(1, static_cast<int>(std::lround(width * plan.scale)));
  const int padded_h = std::max(plan.scaled_height, cfg.crop_height);
  const int padded_w = std::max(plan.scaled_width, cfg.crop_width);
  plan.crop_top = std::uniform_int_distribution<int>(0, padded_h - cfg.crop_height)(rng);
  plan.crop_left = std::uniform_int_distribution<int>(0, padded_w - cfg.crop_width)(rng);
  plan.flipped = unit(rng) < cfg.hflip_probability;
  return plan;
}

LabelMap resize_nearest(const LabelMap& label, int height, int width) {
  if (label.height == height && label.width == width) return label;
  LabelMap out(height, width);
  std::vector<int> xs(width);
  for (int x = 0; x < width; ++x) {
    xs[x] = std::min(label.width - 1,
                     static_cast<int>(std::floor((x + 0.5) * label.width / width)));
  }
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(label.height - 1,
                            static_cast<int>(std::floor((y + 0.5) * label.height / height)));
    for (int x = 0; x < width; ++x) out.at(y, x) = label.at(sy, xs[x]);
  }
  return out;
}

namespace {

Tensor<float> to_pixel_tensor(const RgbImage& image) {
  Tensor<float> t(TensorShape{1, 3, image.height, image.width});
  for (int c = 0; c < 3; ++c) {
    float* plane = t.plane_ptr(0, c);
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) {
        plane[static_cast<std::size_t>(y) * image.width + x] = image.at(y, x, c);
      }
    }
  }
  return t;
}

}  // namespace

AugmentedSample apply_augment(const RgbImage& image, const LabelMap& label,
                              const AugConfig& cfg, const AugmentPlan& plan) {
  if (image.height != label.height || image.width != label.width) {
    throw AlignmentError("image " + std::to_string(image.height) + "x" +
                         std::to_string(image.width) + " vs label " +
                         std::to_string(label.height) + "x" + std::to_string(label.width));
  }
  const Tensor<float> scaled =
      bilinear_resize(to_pixel_tensor(image), plan.scaled_height, plan.scaled_width);
  const LabelMap scaled_label = resize_nearest(label, plan.scaled_height, plan.scaled_width);

  const int ch = cfg.crop_height;
  const int cw = cfg.crop_width;
  AugmentedSample out;
  out.plan = plan;
  out.image = Tensor<float>(TensorShape{1, 3, ch, cw});
  out.label = LabelMap(ch, cw, kIgnoreLabel);
  for (int y = 0; y < ch; ++y) {
    const int sy = y + plan.crop_top;
    for (int x = 0; x < cw; ++x) {
      const int dx = plan.flipped ? cw - 1 - x : x;
      const int sx = dx + plan.crop_left;
      const bool inside = sy < plan.scaled_height && sx < plan.scaled_width;
      for (int c = 0; c < 3; ++c) {
        // Padding pixels take the mean color, so they normalize to 0.
        const double pixel = inside ? scaled.at(0, c, sy, sx) / 255.0 : cfg.normalize_mean[c];
        out.image.at(0, c, y, x) =
            static_cast<float>((pixel - cfg.normalize_mean[c]) / cfg.normalize_std[c]);
      }
      if (inside) out.label.at(y, x) = scaled_label.at(sy, sx);
    }
  }
  return out;
}

AugmentedSample augment(const RgbImage& image, const LabelMap& label,
                        const AugConfig& cfg, std::uint64_t seed) {
  return apply_augment(image, label, cfg, plan_augment(image.height, image.width, cfg, seed));
}

Tensor<float> normalize_image(const RgbImage& image, const AugConfig& cfg) {
  Tensor<float> t(TensorShape{1, 3, image.height, image.width});
  for (int c = 0; c < 3; ++c) {
    float* plane = t.plane_ptr(0, c);
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) {
        plane[static_cast<std::size_t>(y) * image.width + x] = static_cast<float>(
            (image.at(y, x, c) / 255.0 - cfg.normalize_mean[c]) / cfg.normalize_std[c]);
      }
    }
  }
  return t;
}

RgbImage denormalize_image(const Tensor<float>& image, int n, const AugConfig& cfg) {
  const auto& s = image.shape();
  RgbImage out(s.height, s.width);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < s.height; ++y) {
      for (int x = 0; x < s.width; ++x) {
        double v = image.at(n, c, y, x) * cfg.normalize_std[c] + cfg.normalize_mean[c];
        v = std::clamp(v, 0.0, 1.0) * 255.0;
        out.at(y, x, c) = static_cast<std::uint8_t>(std::lround(v));
      }
    }
  }
  return out;
}

CropWindow center_window(int image_height, int image_width, int height, int width,
                         int multiple) {
  CropWindow w;
  w.height = std::min(height, image_height) / multiple * multiple;
  w.width = std::min(width, image_width) / multiple * multiple;
  if (w.height < multiple || w.width < multiple) {
    throw ShapeError("image " + std::to_string(image_height) + "x" +
                     std::to_string(image_width) + " is smaller than " +
                     std::to_string(multiple) + "x" + std::to_string(multiple));
  }
  w.top = (image_height - w.height) / 2;
  w.left = (image_width - w.width) / 2;
  return w;
}

RgbImage crop(const RgbImage& image, const CropWindow& window) {
  RgbImage out(window.height, window.width);
  for (int y = 0; y < window.height; ++y) {
    const auto* src = &image.pixels[(static_cast<std::size_t>(y + window.top) * image.width +
                                     window.left) * 3];
    std::copy_n(src, static_cast<std::size_t>(window.width) * 3,
                &out.pixels[static_cast<std::size_t>(y) * window.width * 3]);
  }
  return out;
}

LabelMap crop(const LabelMap& label, const CropWindow& window) {
  LabelMap out(window.height, window.width);
  for (int y = 0; y < window.height; ++y) {
    for (int x = 0; x < window.width; ++x) {
      out.at(y, x) = label.at(y + window.top, x + window.left);
    }
  }
  return out;
}

}  // namespace rhrseg
