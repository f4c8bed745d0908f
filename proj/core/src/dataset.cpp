#include "rhrseg/dataset.hpp"

#include <algorithm>

#include "rhrseg/errors.hpp"

namespace fs = std::filesystem;

namespace rhrseg {

std::string to_string(Layout layout) {
  switch (layout) {
    case Layout::kCityscapes: return "cityscapes";
    case Layout::kDarkZurich: return "darkzurich";
    case Layout::kNightCity: return "nightcity";
    case Layout::kSynthetic: return "synthetic";
  }
  return "?";
}

std::string to_string(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

std::string to_string(DomainTag tag) {
  switch (tag) {
    case DomainTag::kSource: return "source";
    case DomainTag::kTarget: return "target";
    case DomainTag::kSynthetic: return "synthetic";
  }
  return "?";
}

Layout parse_layout(const std::string& name) {
  for (Layout l : {Layout::kCityscapes, Layout::kDarkZurich, Layout::kNightCity,
                   Layout::kSynthetic}) {
    if (to_string(l) == name) return l;
  }
  throw ConfigError("unknown dataset layout '" + name + "'");
}

Split parse_split(const std::string& name) {
  for (Split s : {Split::kTrain, Split::kVal, Split::kTest}) {
    if (to_string(s) == name) return s;
  }
  throw ConfigError("unknown split '" + name + "'");
}

LayoutTemplate layout_template(Layout layout, Split split) {
  const std::string s = to_string(split);
  switch (layout) {
    case Layout::kCityscapes:
      return {fs::path("leftImg8bit") / s, fs::path("gtFine") / s, "_leftImg8bit.png",
              "_gtFine_labelIds.png", true};
    case Layout::kDarkZurich:
      return {fs::path("rgb_anon") / s / "night", fs::path("gt") / s / "night",
              "_rgb_anon.png", "_gt_labelIds.png", true};
    case Layout::kNightCity:
      return {fs::path("images") / s, fs::path("labels") / s, ".png", "_labelIds.png", true};
    case Layout::kSynthetic:
      return {fs::path("images") / s, fs::path("labels") / s, ".png", ".png", false};
  }
  throw ConfigError("unknown layout");
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

DatasetIndex index_dataset(const fs::path& root, Layout layout, Split split,
                           bool supervised, std::optional<DomainTag> tag) {
  const LayoutTemplate tpl = layout_template(layout, split);
  const fs::path image_root = root / tpl.image_dir;
  if (!fs::is_directory(image_root)) {
    throw LayoutError("missing image directory " + image_root.string());
  }
  const fs::path label_root = root / tpl.label_dir;
  if (supervised && !fs::is_directory(label_root)) {
    throw LayoutError("missing label directory " + label_root.string());
  }
  const DomainTag domain =
      tag.value_or(layout == Layout::kSynthetic ? DomainTag::kSynthetic : DomainTag::kSource);

  std::vector<fs::path> images;
  for (const auto& entry : fs::recursive_directory_iterator(image_root)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    // Label files may live next to the images; skip them.
    if (ends_with(name, tpl.image_suffix) &&
        (tpl.image_suffix == tpl.label_suffix || !ends_with(name, tpl.label_suffix))) {
      images.push_back(entry.path());
    }
  }
  if (images.empty()) {
    throw LayoutError("no '*" + tpl.image_suffix + "' images under " + image_root.string());
  }
  std::sort(images.begin(), images.end());

  DatasetIndex index;
  for (const auto& img : images) {
    const fs::path rel = fs::relative(img, image_root);
    std::string stem = rel.filename().string();
    stem.resize(stem.size() - tpl.image_suffix.size());
    const fs::path label = label_root / rel.parent_path() / (stem + tpl.label_suffix);
    Sample sample{img, std::nullopt, domain};
    if (fs::is_regular_file(label)) sample.label_path = label;
    if (supervised && !sample.label_path) {
      index.orphans.push_back(img);
      continue;
    }
    index.samples.push_back(std::move(sample));
  }
  return index;
}

LoadedSample load_sample(const Sample& sample, Layout layout, const ClassTaxonomy& taxonomy,
                         int num_classes) {
  LoadedSample out;
  out.image = read_rgb_png(sample.image_path);
  if (sample.label_path) {
    const GrayImage raw = read_gray_png(*sample.label_path);
    if (raw.height != out.image.height || raw.width != out.image.width) {
      throw AlignmentError("label " + sample.label_path->string() +
                           " does not match its image size");
    }
    const bool raw_ids = layout_template(layout, Split::kTrain).raw_label_ids;
    out.label = raw_ids ? encode_labels(raw, taxonomy) : labels_from_train_ids(raw, num_classes);
  }
  return out;
}

}  // namespace rhrseg
