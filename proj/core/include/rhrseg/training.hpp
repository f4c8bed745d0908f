#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "rhrseg/checkpoint.hpp"
#include "rhrseg/config.hpp"
#include "rhrseg/dataset.hpp"
#include "rhrseg/hrseg.hpp"
#include "rhrseg/layers.hpp"
#include "rhrseg/metrics.hpp"
#include "rhrseg/relight.hpp"

namespace rhrseg {

// Discriminator targets for the two domains.
inline constexpr double kSourceDomainLabel = 0.0;
inline constexpr double kTargetDomainLabel = 1.0;

// Output-space domain classifier: five 4x4 stride-2 convolutions over
// softmax maps, channels c, 2c, 4c, 8c, 1, leaky ReLU 0.2 in between.
// Inputs need H, W >= 32.
template <typename T>
class Discriminator {
 public:
  static Discriminator build(int num_classes, int channels, std::uint64_t seed);

  Var<T> forward(const Var<T>& probabilities) const;
  const std::vector<ConvLayer<T>>& layers() const { return layers_; }
  ParamSet<T> parameters();

 private:
  std::vector<ConvLayer<T>> layers_;
};

// Labels of a batch, laid out (batch, height, width).
struct LabelBatch {
  int batch = 0;
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> values;

  static LabelBatch from_maps(const std::vector<LabelMap>& maps);
};

struct LossValue {
  double value = 0.0;
  std::int64_t valid_pixels = 0;
  // Set when every pixel carried the ignore label; value is then 0.
  bool all_ignored = false;
};

// Mean cross-entropy over non-ignore pixels. Throws ShapeError.
template <typename T>
LossValue cross_entropy_loss(const Tensor<T>& logits, const LabelBatch& labels);

// base_lr * (1 - iteration / max_iterations)^poly_power.
double poly_lr(int iteration, const TrainConfig& cfg);
double poly_lr(int iteration, int max_iterations, double base_lr, double power);

// buffer = momentum * buffer + grad + wd * param; param -= lr * buffer.
// Entries with decay == false skip the wd term; a missing gradient counts
// as zero. Buffers are allocated on first use. Throws ShapeError.
template <typename T>
void sgd_step(ParamSet<T>& params, std::vector<Tensor<T>>& buffers, double lr,
              double momentum, double weight_decay);

struct Batch {
  Tensor<float> images;  // (B, 3, H, W), normalized
  LabelBatch labels;
  std::vector<int> sample_indices;
  std::uint64_t hash = 0;  // of the sample indices and augmentation seeds
};

// Epoch-permuted, augmented batches from one dataset. Sample n of epoch e
// is augmented with seed mix(seed, n, e), so results never depend on the
// number of workers.
class BatchLoader {
 public:
  BatchLoader(const DatasetSpec& spec, bool supervised, const AugConfig& aug, int batch_size,
              std::uint64_t seed, int num_classes, int workers = 1);

  Batch next();
  std::size_t size() const { return index_.samples.size(); }
  const DatasetIndex& index() const { return index_; }

 private:
  void start_epoch();

  DatasetIndex index_;
  Layout layout_;
  bool supervised_;
  AugConfig aug_;
  int batch_size_;
  std::uint64_t seed_;
  int num_classes_;
  int workers_;
  std::vector<int> order_;
  std::size_t cursor_ = 0;
  std::uint64_t epoch_ = 0;
  bool started_ = false;
};

struct StepLog {
  int iteration = 0;  // after the step
  double lr = 0.0;
  double loss_ce = 0.0;
  double loss_adv = 0.0;
  double loss_disc = 0.0;
  double loss_total = 0.0;
  bool all_ignored = false;
  std::uint64_t batch_hash = 0;
};

class TrainState {
 public:
  static TrainState create(const ExperimentConfig& config);
  // Rebuilds the networks from the echoed config and loads every tensor.
  static TrainState restore(const Checkpoint& ckpt);

  TrainState(TrainState&&) noexcept = default;
  TrainState& operator=(TrainState&&) noexcept = default;

  Checkpoint snapshot();
  void set_mode(Mode mode);
  // Relight (when enabled) and segmenter parameters under one optimizer.
  ParamSet<float> main_parameters();
  ParamSet<float> discriminator_parameters();

  // Tensor-level inference with the checkpointed relight setting.
  Tensor<float> predict(const Tensor<float>& images);

  ExperimentConfig config;
  int iteration = 0;
  RelightNet<float> relight;
  SegNet<float> seg;
  std::optional<Discriminator<float>> discriminator;
  std::vector<Tensor<float>> main_momentum;
  std::vector<Tensor<float>> disc_momentum;
  std::uint64_t order_hash = 0;

 private:
  TrainState(ExperimentConfig cfg, RelightNet<float> relight_net, SegNet<float> seg_net)
      : config(std::move(cfg)), relight(std::move(relight_net)), seg(std::move(seg_net)) {}
};

// Detached softmax maps of both domains, kept for the discriminator step.
struct SegmenterPass {
  StepLog log;
  std::optional<Tensor<float>> source_probabilities;
  std::optional<Tensor<float>> target_probabilities;
};

// Segmentation loss plus, with adaptation on, adv_weight times the BCE of
// D(softmax(target)) against the source label, with D frozen. Gradients
// accumulate into the main parameters only.
SegmenterPass accumulate_segmenter_gradients(TrainState& state, const Batch& source,
                                             const Batch* target);
// 0.5 * (BCE(D(p_src), source) + BCE(D(p_tgt), target)) on detached maps.
// Gradients accumulate into the discriminator only.
double accumulate_discriminator_gradients(TrainState& state, const SegmenterPass& pass);

// One optimization step of the main nets and, with adaptation on, of the
// discriminator at poly-decayed disc_lr.
StepLog train_step(TrainState& state, const Batch& source, const Batch* target);

// Center-cropped eval-mode confusion over the given samples.
ConfusionMatrix evaluate_samples(TrainState& state, const std::vector<Sample>& samples,
                                 Layout layout);

struct FitResult {
  std::filesystem::path run_dir;
  std::filesystem::path final_checkpoint;
  std::optional<std::filesystem::path> best_checkpoint;
  std::filesystem::path log_path;
  std::vector<std::pair<int, double>> miou_trajectory;
  std::optional<double> final_miou;
  std::optional<double> best_miou;
  std::uint64_t order_hash = 0;
  std::uint64_t seed = 0;
};

// Writes config.json, train_log.jsonl, final.ckpt and best.ckpt into
// run_dir. `overrides` are only echoed into the log header.
FitResult fit(const ExperimentConfig& config, const std::filesystem::path& run_dir,
              const std::vector<std::string>& overrides = {}, std::ostream* progress = nullptr);

struct AblationReport {
  FitResult with_relight;
  FitResult without_relight;
  std::optional<double> delta;  // with - without, final mIoU
  bool identical_orderings = false;
};

// Runs fit with relight on and off under the same seed into
// out_dir/with_relight and out_dir/without_relight, then writes
// out_dir/ablation_report.json.
AblationReport ablation_run(const ExperimentConfig& config, const std::filesystem::path& out_dir,
                            std::ostream* progress = nullptr);
std::string ablation_report_json(const AblationReport& report);

std::string hex64(std::uint64_t value);

extern template class Discriminator<float>;
extern template class Discriminator<double>;
extern template LossValue cross_entropy_loss(const Tensor<float>&, const LabelBatch&);
extern template LossValue cross_entropy_loss(const Tensor<double>&, const LabelBatch&);
extern template void sgd_step(ParamSet<float>&, std::vector<Tensor<float>>&, double, double,
                              double);
extern template void sgd_step(ParamSet<double>&, std::vector<Tensor<double>>&, double, double,
                              double);

}  // namespace rhrseg
