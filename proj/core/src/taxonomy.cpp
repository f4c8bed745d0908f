#include "rhrseg/taxonomy.hpp"

#include "rhrseg/errors.hpp"

namespace rhrseg {

void LabelMap::validate(int num_classes) const {
  if (values.size() != static_cast<std::size_t>(height) * width) {
    throw InvalidPrediction("label map storage does not match its dimensions");
  }
  for (std::uint8_t v : values) {
    if (v != kIgnoreLabel && v >= num_classes) {
      throw InvalidPrediction("label value " + std::to_string(v) + " outside 0.." +
                              std::to_string(num_classes - 1) + " and not 255");
    }
  }
}

const ClassTaxonomy& ClassTaxonomy::cityscapes() {
  static const ClassTaxonomy taxonomy = [] {
    ClassTaxonomy t;
    t.names = {"road",       "sidewalk",      "building",     "wall",    "fence",
               "pole",       "traffic light", "traffic sign", "vegetation", "terrain",
               "sky",        "person",        "rider",        "car",     "truck",
               "bus",        "train",         "motorcycle",   "bicycle"};
    t.raw_to_train.fill(kIgnoreLabel);
    // Raw labelIds of the evaluated classes, in train-id order.
    const std::array<int, kNumTrainClasses> raw = {7,  8,  11, 12, 13, 17, 19, 20, 21, 22,
                                                   23, 24, 25, 26, 27, 28, 31, 32, 33};
    for (int i = 0; i < kNumTrainClasses; ++i) {
      t.raw_to_train[raw[i]] = static_cast<std::uint8_t>(i);
    }
    t.colors = {Color{128, 64, 128}, Color{244, 35, 232}, Color{70, 70, 70},
                Color{102, 102, 156}, Color{190, 153, 153}, Color{153, 153, 153},
                Color{250, 170, 30},  Color{220, 220, 0},   Color{107, 142, 35},
                Color{152, 251, 152}, Color{70, 130, 180},  Color{220, 20, 60},
                Color{255, 0, 0},     Color{0, 0, 142},     Color{0, 0, 70},
                Color{0, 60, 100},    Color{0, 80, 100},    Color{0, 0, 230},
                Color{119, 11, 32}};
    return t;
  }();
  return taxonomy;
}

LabelMap encode_labels(const GrayImage& raw, const ClassTaxonomy& taxonomy) {
  LabelMap out(raw.height, raw.width);
  for (std::size_t i = 0; i < raw.pixels.size(); ++i) {
    out.values[i] = taxonomy.raw_to_train[raw.pixels[i]];
  }
  return out;
}

LabelMap labels_from_train_ids(const GrayImage& raw, int num_classes) {
  LabelMap out(raw.height, raw.width);
  out.values = raw.pixels;
  out.validate(num_classes);
  return out;
}

GrayImage labels_to_image(const LabelMap& labels) {
  GrayImage img(labels.height, labels.width);
  img.pixels = labels.values;
  return img;
}

RgbImage colorize_prediction(const LabelMap& pred, const ClassTaxonomy& taxonomy) {
  pred.validate(taxonomy.size());
  RgbImage out(pred.height, pred.width, 0);
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const std::uint8_t v = pred.values[i];
    if (v == kIgnoreLabel) continue;
    for (int c = 0; c < 3; ++c) out.pixels[i * 3 + c] = taxonomy.colors[v][c];
  }
  return out;
}

LabelMap decode_colors(const RgbImage& image, const ClassTaxonomy& taxonomy) {
  LabelMap out(image.height, image.width);
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    const Color px{image.pixels[i * 3], image.pixels[i * 3 + 1], image.pixels[i * 3 + 2]};
    for (int k = 0; k < taxonomy.size(); ++k) {
      if (taxonomy.colors[k] == px) {
        out.values[i] = static_cast<std::uint8_t>(k);
        break;
      }
    }
  }
  return out;
}

}  // namespace rhrseg
