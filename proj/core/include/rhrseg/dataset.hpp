#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "rhrseg/image_io.hpp"
#include "rhrseg/taxonomy.hpp"

namespace rhrseg {

enum class Layout { kCityscapes, kDarkZurich, kNightCity, kSynthetic };
enum class Split { kTrain, kVal, kTest };
enum class DomainTag { kSource, kTarget, kSynthetic };

std::string to_string(Layout layout);
std::string to_string(Split split);
std::string to_string(DomainTag tag);
// Throw ConfigError on unknown names.
Layout parse_layout(const std::string& name);
Split parse_split(const std::string& name);

struct Sample {
  std::filesystem::path image_path;
  std::optional<std::filesystem::path> label_path;
  DomainTag domain = DomainTag::kSource;

  friend bool operator==(const Sample&, const Sample&) = default;
};

struct DatasetIndex {
  std::vector<Sample> samples;
  // Images without a label in a supervised index; not part of `samples`.
  std::vector<std::filesystem::path> orphans;
};

// Directory and filename conventions of one on-disk layout.
struct LayoutTemplate {
  std::filesystem::path image_dir;  // relative to root, contains <split>
  std::filesystem::path label_dir;
  std::string image_suffix;
  std::string label_suffix;
  bool raw_label_ids = true;  // false: files already hold train-ids
};

LayoutTemplate layout_template(Layout layout, Split split);

// Lexicographically ordered (by image path) samples of one split.
// supervised=false keeps unlabeled images (adaptation target domain).
// Throws LayoutError when the split directory is missing or holds no images.
DatasetIndex index_dataset(const std::filesystem::path& root, Layout layout, Split split,
                           bool supervised = true,
                           std::optional<DomainTag> tag = std::nullopt);

struct LoadedSample {
  RgbImage image;
  std::optional<LabelMap> label;
};

// Reads the image and, when present, the label encoded to train-ids.
LoadedSample load_sample(const Sample& sample, Layout layout,
                         const ClassTaxonomy& taxonomy = ClassTaxonomy::cityscapes(),
                         int num_classes = kNumTrainClasses);

}  // namespace rhrseg
