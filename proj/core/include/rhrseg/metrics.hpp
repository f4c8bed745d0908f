#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rhrseg/taxonomy.hpp"
#include "rhrseg/tensor.hpp"

namespace rhrseg {

// K x K pixel counts, row = ground truth, column = prediction.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int num_classes = kNumTrainClasses);

  int num_classes() const { return num_classes_; }
  std::uint64_t count(int gt, int pred) const {
    return counts_[static_cast<std::size_t>(gt) * num_classes_ + pred];
  }
  std::uint64_t total_pixels() const { return total_; }
  std::uint64_t row_sum(int c) const;
  std::uint64_t col_sum(int c) const;
  std::uint64_t trace() const;

  // Adds every pixel whose gt != 255. Throws ShapeError on size mismatch and
  // InvalidPrediction when pred holds 255 or ids >= K.
  void update(const LabelMap& pred, const LabelMap& gt);

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;

 private:
  friend ConfusionMatrix merge_confusions(const ConfusionMatrix&, const ConfusionMatrix&);
  int num_classes_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

ConfusionMatrix update_confusion(ConfusionMatrix conf, const LabelMap& pred,
                                 const LabelMap& gt);
// Throws SizeMismatch.
ConfusionMatrix merge_confusions(const ConfusionMatrix& a, const ConfusionMatrix& b);

// nullopt where the class has an empty union.
std::vector<std::optional<double>> iou_per_class(const ConfusionMatrix& conf);
// Mean over present classes. Throws NoClassesPresent.
double mean_iou(const std::vector<std::optional<double>>& per_class);
double pixel_accuracy(const ConfusionMatrix& conf);

// Argmax over channels for each sample; ties go to the lower class index.
template <typename T>
std::vector<LabelMap> argmax_labels(const Tensor<T>& logits);

struct MetricsReport {
  std::vector<std::string> class_names;
  std::vector<std::optional<double>> per_class_iou;
  double miou = 0.0;
  double pixel_accuracy = 0.0;
  std::uint64_t total_pixels = 0;
};

MetricsReport make_report(const ConfusionMatrix& conf,
                          const ClassTaxonomy& taxonomy = ClassTaxonomy::cityscapes());
// JSON record; IoU values in percent rounded to 2 decimals, absent classes null.
std::string report_to_json(const MetricsReport& report);
// One header line of class names plus one row, like a per-class results table.
std::string report_to_table(const MetricsReport& report, const std::string& row_label);

}  // namespace rhrseg
