#include "rhrseg/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <sstream>

#include "rhrseg/errors.hpp"

namespace rhrseg {

ConfusionMatrix::ConfusionMatrix(int num_classes)
    : num_classes_(num_classes),
      counts_(static_cast<std::size_t>(num_classes) * num_classes, 0) {
  if (num_classes < 1) throw SizeMismatch("confusion matrix needs >= 1 class");
}

std::uint64_t ConfusionMatrix::row_sum(int c) const {
  std::uint64_t s = 0;
  for (int j = 0; j < num_classes_; ++j) s += count(c, j);
  return s;
}

std::uint64_t ConfusionMatrix::col_sum(int c) const {
  std::uint64_t s = 0;
  for (int i = 0; i < num_classes_; ++i) s += count(i, c);
  return s;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t s = 0;
  for (int i = 0; i < num_classes_; ++i) s += count(i, i);
  return s;
}

void ConfusionMatrix::update(const LabelMap& pred, const LabelMap& gt) {
  if (pred.height != gt.height || pred.width != gt.width ||
      pred.values.size() != gt.values.size()) {
    throw ShapeError("prediction and ground truth sizes differ");
  }
  for (std::uint8_t p : pred.values) {
    if (p >= num_classes_) {
      throw InvalidPrediction("prediction holds id " + std::to_string(p) + " outside 0.." +
                              std::to_string(num_classes_ - 1));
    }
  }
  for (std::size_t i = 0; i < gt.values.size(); ++i) {
    const std::uint8_t g = gt.values[i];
    if (g == kIgnoreLabel) continue;
    if (g >= num_classes_) {
      throw InvalidPrediction("ground truth holds id " + std::to_string(g));
    }
    ++counts_[static_cast<std::size_t>(g) * num_classes_ + pred.values[i]];
    ++total_;
  }
}

ConfusionMatrix update_confusion(ConfusionMatrix conf, const LabelMap& pred,
                                 const LabelMap& gt) {
  conf.update(pred, gt);
  return conf;
}

ConfusionMatrix merge_confusions(const ConfusionMatrix& a, const ConfusionMatrix& b) {
  if (a.num_classes_ != b.num_classes_) {
    throw SizeMismatch("cannot merge " + std::to_string(a.num_classes_) + "-class and " +
                       std::to_string(b.num_classes_) + "-class matrices");
  }
  ConfusionMatrix out = a;
  for (std::size_t i = 0; i < out.counts_.size(); ++i) out.counts_[i] += b.counts_[i];
  out.total_ += b.total_;
  return out;
}

std::vector<std::optional<double>> iou_per_class(const ConfusionMatrix& conf) {
  std::vector<std::optional<double>> out(conf.num_classes());
  for (int c = 0; c < conf.num_classes(); ++c) {
    const std::uint64_t tp = conf.count(c, c);
    const std::uint64_t uni = conf.row_sum(c) + conf.col_sum(c) - tp;
    if (uni > 0) out[c] = static_cast<double>(tp) / static_cast<double>(uni);
  }
  return out;
}

double mean_iou(const std::vector<std::optional<double>>& per_class) {
  double sum = 0.0;
  int present = 0;
  for (const auto& v : per_class) {
    if (!v) continue;
    sum += *v;
    ++present;
  }
  if (present == 0) throw NoClassesPresent("no class occurs in prediction or ground truth");
  return sum / present;
}

double pixel_accuracy(const ConfusionMatrix& conf) {
  if (conf.total_pixels() == 0) return 0.0;
  return static_cast<double>(conf.trace()) / static_cast<double>(conf.total_pixels());
}

template <typename T>
std::vector<LabelMap> argmax_labels(const Tensor<T>& logits) {
  const auto& s = logits.shape();
  std::vector<LabelMap> out;
  const std::size_t plane = s.plane();
  for (int n = 0; n < s.batch; ++n) {
    LabelMap m(s.height, s.width, 0);
    const T* base = logits.sample_ptr(n);
    for (std::size_t i = 0; i < plane; ++i) {
      int best = 0;
      T best_v = base[i];
      for (int c = 1; c < s.channels; ++c) {
        const T v = base[c * plane + i];
        if (v > best_v) {
          best_v = v;
          best = c;
        }
      }
      m.values[i] = static_cast<std::uint8_t>(best);
    }
    out.push_back(std::move(m));
  }
  return out;
}

template std::vector<LabelMap> argmax_labels(const Tensor<float>&);
template std::vector<LabelMap> argmax_labels(const Tensor<double>&);

MetricsReport make_report(const ConfusionMatrix& conf, const ClassTaxonomy& taxonomy) {
  MetricsReport r;
  for (int c = 0; c < conf.num_classes(); ++c) {
    r.class_names.push_back(c < taxonomy.size() ? taxonomy.names[c] : "class" + std::to_string(c));
  }
  r.per_class_iou = iou_per_class(conf);
  r.miou = mean_iou(r.per_class_iou);
  r.pixel_accuracy = pixel_accuracy(conf);
  r.total_pixels = conf.total_pixels();
  return r;
}

namespace {

double percent2(double v) { return std::round(v * 10000.0) / 100.0; }

}  // namespace

std::string report_to_json(const MetricsReport& report) {
  nlohmann::ordered_json j;
  j["classes"] = report.class_names;
  auto& per = j["per_class_iou"] = nlohmann::ordered_json::array();
  for (const auto& v : report.per_class_iou) {
    per.push_back(v ? nlohmann::ordered_json(percent2(*v)) : nlohmann::ordered_json(nullptr));
  }
  j["miou"] = percent2(report.miou);
  j["pixel_accuracy"] = percent2(report.pixel_accuracy);
  j["total_pixels"] = report.total_pixels;
  return j.dump(2);
}

std::string report_to_table(const MetricsReport& report, const std::string& row_label) {
  std::ostringstream out;
  char cell[32];
  std::snprintf(cell, sizeof(cell), "%-24s", "Method");
  out << cell;
  for (const auto& name : report.class_names) {
    std::snprintf(cell, sizeof(cell), " %8.8s", name.c_str());
    out << cell;
  }
  out << "     mIoU\n";
  std::snprintf(cell, sizeof(cell), "%-24.24s", row_label.c_str());
  out << cell;
  for (const auto& v : report.per_class_iou) {
    if (v) {
      std::snprintf(cell, sizeof(cell), " %8.2f", percent2(*v));
    } else {
      std::snprintf(cell, sizeof(cell), " %8s", "-");
    }
    out << cell;
  }
  std::snprintf(cell, sizeof(cell), " %8.2f\n", percent2(report.miou));
  out << cell;
  return out.str();
}

}  // namespace rhrseg
