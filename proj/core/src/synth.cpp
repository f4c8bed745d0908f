#include "rhrseg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "rhrseg/errors.hpp"
#include "rhrseg/hashing.hpp"

namespace rhrseg {

namespace {

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
}

Color jitter(const Color& base, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(-12, 12);
  Color c;
  for (int i = 0; i < 3; ++i) c[i] = to_byte(base[i] + d(rng));
  return c;
}

}  // namespace

bool SynthRegion::contains(int x, int y) const {
  const double px = x + 0.5;
  const double py = y + 0.5;
  if (kind == Kind::kRectangle) return px >= x0 && px < x1 && py >= y0 && py < y1;
  const double dx = (px - cx) / rx;
  const double dy = (py - cy) / ry;
  return dx * dx + dy * dy <= 1.0;
}

Color synth_class_color(int class_id) {
  // Saturated colors spread over the hue circle; stay separable after the
  // night transform crushes dark channels.
  const double hue = std::fmod(class_id * 7.0 / kNumTrainClasses, 1.0) * 6.0;
  const double sat = class_id % 2 == 0 ? 0.8 : 0.55;
  const double val = 1.0 - 0.1 * (class_id % 3);
  const int sector = static_cast<int>(hue) % 6;
  const double f = hue - std::floor(hue);
  const double p = val * (1 - sat), q = val * (1 - sat * f), t = val * (1 - sat * (1 - f));
  double r = 0, g = 0, b = 0;
  switch (sector) {
    case 0: r = val; g = t; b = p; break;
    case 1: r = q; g = val; b = p; break;
    case 2: r = p; g = val; b = t; break;
    case 3: r = p; g = q; b = val; break;
    case 4: r = t; g = p; b = val; break;
    default: r = val; g = p; b = q; break;
  }
  return {to_byte(r * 255), to_byte(g * 255), to_byte(b * 255)};
}

SynthScene synth_scene(std::uint64_t seed, int index, int image_size, int num_classes) {
  std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(index)));
  std::uniform_int_distribution<int> cls(0, num_classes - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double s = image_size;

  SynthScene scene;
  scene.size = image_size;
  scene.background_class = cls(rng);
  scene.background_color = jitter(synth_class_color(scene.background_class), rng);
  const int shapes = std::uniform_int_distribution<int>(2, 4)(rng);
  for (int i = 0; i < shapes; ++i) {
    SynthRegion r;
    r.kind = unit(rng) < 0.5 ? SynthRegion::Kind::kRectangle : SynthRegion::Kind::kEllipse;
    r.class_id = cls(rng);
    if (r.kind == SynthRegion::Kind::kRectangle) {
      const double w = s * (0.2 + 0.3 * unit(rng));
      const double h = s * (0.2 + 0.3 * unit(rng));
      r.x0 = (s - w) * unit(rng);
      r.y0 = (s - h) * unit(rng);
      r.x1 = r.x0 + w;
      r.y1 = r.y0 + h;
    } else {
      r.rx = s * (0.1 + 0.15 * unit(rng));
      r.ry = s * (0.1 + 0.15 * unit(rng));
      r.cx = r.rx + (s - 2 * r.rx) * unit(rng);
      r.cy = r.ry + (s - 2 * r.ry) * unit(rng);
    }
    r.color = jitter(synth_class_color(r.class_id), rng);
    scene.regions.push_back(r);
  }
  const int lamps = std::uniform_int_distribution<int>(1, 3)(rng);
  for (int i = 0; i < lamps; ++i) {
    SynthLamp lamp;
    lamp.cx = s * unit(rng);
    lamp.cy = s * unit(rng);
    lamp.sigma = s * (1.0 / 16 + unit(rng) / 16);
    lamp.amplitude = 40.0 + 50.0 * unit(rng);
    scene.lamps.push_back(lamp);
  }
  scene.noise_seed = rng();
  return scene;
}

LabelMap render_scene_labels(const SynthScene& scene) {
  LabelMap out(scene.size, scene.size, static_cast<std::uint8_t>(scene.background_class));
  for (const auto& r : scene.regions) {
    for (int y = 0; y < scene.size; ++y) {
      for (int x = 0; x < scene.size; ++x) {
        if (r.contains(x, y)) out.at(y, x) = static_cast<std::uint8_t>(r.class_id);
      }
    }
  }
  return out;
}

RgbImage render_scene_image(const SynthScene& scene, bool night) {
  RgbImage img(scene.size, scene.size);
  for (int y = 0; y < scene.size; ++y) {
    for (int x = 0; x < scene.size; ++x) {
      const Color* color = &scene.background_color;
      for (const auto& r : scene.regions) {
        if (r.contains(x, y)) color = &r.color;
      }
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = (*color)[c];
    }
  }
  if (!night) return img;

  std::mt19937_64 rng(scene.noise_seed);
  std::normal_distribution<double> noise(0.0, kNightNoiseSigma);
  // Warm lamp tint per channel.
  const std::array<double, 3> tint{1.0, 0.9, 0.7};
  for (int y = 0; y < scene.size; ++y) {
    for (int x = 0; x < scene.size; ++x) {
      double glow = 0.0;
      for (const auto& lamp : scene.lamps) {
        const double dx = x + 0.5 - lamp.cx;
        const double dy = y + 0.5 - lamp.cy;
        glow += lamp.amplitude * std::exp(-(dx * dx + dy * dy) / (2 * lamp.sigma * lamp.sigma));
      }
      for (int c = 0; c < 3; ++c) {
        const double base = img.at(y, x, c) / 255.0;
        const double dark = 255.0 * kNightBrightness * std::pow(base, kNightGamma);
        img.at(y, x, c) = to_byte(dark + tint[c] * glow + noise(rng));
      }
    }
  }
  return img;
}

std::string synth_file_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%05d.png", index);
  return buf;
}

std::vector<Sample> synth_generate(const std::filesystem::path& out_root, int num_pairs,
                                   int image_size, int num_classes, std::uint64_t seed,
                                   bool night, Split split) {
  if (image_size < 32 || image_size % 32 != 0) {
    throw InvalidConfig("synthetic image size must be a positive multiple of 32, got " +
                        std::to_string(image_size));
  }
  if (num_classes < 1 || num_classes > kNumTrainClasses) {
    throw InvalidConfig("synthetic num_classes must be in 1..19");
  }
  if (num_pairs < 0) throw InvalidConfig("synthetic num_pairs must be >= 0");
  const LayoutTemplate tpl = layout_template(Layout::kSynthetic, split);
  std::vector<Sample> samples;
  for (int i = 0; i < num_pairs; ++i) {
    const SynthScene scene = synth_scene(seed, i, image_size, num_classes);
    const auto image_path = out_root / tpl.image_dir / synth_file_name(i);
    const auto label_path = out_root / tpl.label_dir / synth_file_name(i);
    try {
      write_png(image_path, render_scene_image(scene, night));
      write_png(label_path, labels_to_image(render_scene_labels(scene)));
    } catch (const std::filesystem::filesystem_error& e) {
      throw IOError(e.what());
    }
    samples.push_back({image_path, label_path, DomainTag::kSynthetic});
  }
  return samples;
}

}  // namespace rhrseg
