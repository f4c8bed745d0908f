#include "rhrseg/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <nlohmann/json.hpp>
#include <numeric>
#include <ostream>

#include "rhrseg/augment.hpp"
#include "rhrseg/errors.hpp"
#include "rhrseg/hashing.hpp"

namespace rhrseg {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

constexpr std::uint64_t kRelightStream = 1;
constexpr std::uint64_t kSegStream = 2;
constexpr std::uint64_t kDiscStream = 3;
constexpr std::uint64_t kSourceStream = 11;
constexpr std::uint64_t kTargetStream = 12;
constexpr double kLeakySlope = 0.2;

// Restores requires_grad on scope exit.
class FreezeGuard {
 public:
  explicit FreezeGuard(ParamSet<float> params) : params_(std::move(params)) {
    params_.set_requires_grad(false);
  }
  ~FreezeGuard() { params_.set_requires_grad(true); }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  ParamSet<float> params_;
};

void append(ParamSet<float>& into, ParamSet<float> from) {
  for (auto& p : from.params) into.params.push_back(std::move(p));
  for (auto& b : from.buffers) into.buffers.push_back(std::move(b));
}

std::vector<std::int64_t> dims(const TensorShape& s) {
  return {s.batch, s.channels, s.height, s.width};
}

void put_tensor(Checkpoint& ckpt, const std::string& name, const Tensor<float>& t) {
  ckpt.tensors.push_back({name, dims(t.shape()), t.storage()});
}

const CheckpointTensor& need(const Checkpoint& ckpt, const std::string& name,
                             std::size_t count) {
  const CheckpointTensor* t = ckpt.find(name);
  if (!t) throw CheckpointError("checkpoint has no tensor " + name);
  if (t->values.size() != count) {
    throw CheckpointError("checkpoint tensor " + name + " holds " +
                          std::to_string(t->values.size()) + " values, expected " +
                          std::to_string(count));
  }
  return *t;
}

void save_params(Checkpoint& ckpt, ParamSet<float> set) {
  for (const auto& p : set.params) put_tensor(ckpt, p.name, p.var->value);
  for (const auto& b : set.buffers) {
    ckpt.tensors.push_back({b.name, {static_cast<std::int64_t>(b.values->size())}, *b.values});
  }
}

void load_params(const Checkpoint& ckpt, ParamSet<float> set) {
  for (auto& p : set.params) {
    const auto& t = need(ckpt, p.name, p.var->value.size());
    std::copy(t.values.begin(), t.values.end(), p.var->value.storage().begin());
  }
  for (auto& b : set.buffers) {
    const auto& t = need(ckpt, b.name, b.values->size());
    std::copy(t.values.begin(), t.values.end(), b.values->begin());
  }
}

void save_momentum(Checkpoint& ckpt, const std::string& prefix, const ParamSet<float>& set,
                   const std::vector<Tensor<float>>& buffers) {
  if (buffers.empty()) return;
  for (std::size_t i = 0; i < set.params.size(); ++i) {
    put_tensor(ckpt, prefix + set.params[i].name, buffers[i]);
  }
}

void load_momentum(const Checkpoint& ckpt, const std::string& prefix, const ParamSet<float>& set,
                   std::vector<Tensor<float>>& buffers) {
  if (set.params.empty() || !ckpt.find(prefix + set.params.front().name)) return;
  buffers.clear();
  for (const auto& p : set.params) {
    const auto& t = need(ckpt, prefix + p.name, p.var->value.size());
    buffers.emplace_back(p.var->value.shape(), t.values);
  }
}

Json dataset_json(const DatasetSpec& d) {
  return Json{{"root", d.root}, {"layout", to_string(d.layout)}, {"split", to_string(d.split)}};
}

void write_record(std::ofstream& log, const Json& record) {
  log << record.dump() << '\n';
  log.flush();
}

}  // namespace

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

template <typename T>
Discriminator<T> Discriminator<T>::build(int num_classes, int channels, std::uint64_t seed) {
  if (num_classes < 1 || channels < 1) {
    throw InvalidConfig("discriminator needs positive class and channel counts");
  }
  InitRng rng(seed);
  const int widths[] = {num_classes, channels, 2 * channels, 4 * channels, 8 * channels, 1};
  Discriminator d;
  for (int i = 0; i < 5; ++i) {
    ConvSpec spec;
    spec.in_channels = widths[i];
    spec.out_channels = widths[i + 1];
    spec.kernel = 4;
    spec.stride = 2;
    spec.padding = 1;
    spec.has_bias = true;
    d.layers_.emplace_back(spec, rng);
  }
  return d;
}

template <typename T>
Var<T> Discriminator<T>::forward(const Var<T>& probabilities) const {
  Var<T> x = probabilities;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i].forward(x);
    if (i + 1 < layers_.size()) x = ops::leaky_relu(x, kLeakySlope);
  }
  return x;
}

template <typename T>
ParamSet<T> Discriminator<T>::parameters() {
  ParamSet<T> set;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].collect("disc.l" + std::to_string(i), set);
  }
  return set;
}

LabelBatch LabelBatch::from_maps(const std::vector<LabelMap>& maps) {
  LabelBatch b;
  b.batch = static_cast<int>(maps.size());
  if (maps.empty()) return b;
  b.height = maps.front().height;
  b.width = maps.front().width;
  for (const auto& m : maps) {
    if (m.height != b.height || m.width != b.width) {
      throw ShapeError("label maps in a batch differ in size");
    }
    b.values.insert(b.values.end(), m.values.begin(), m.values.end());
  }
  return b;
}

template <typename T>
LossValue cross_entropy_loss(const Tensor<T>& logits, const LabelBatch& labels) {
  const auto& s = logits.shape();
  if (s.batch != labels.batch || s.height != labels.height || s.width != labels.width) {
    throw ShapeError("logits " + s.str() + " do not align with labels (" +
                     std::to_string(labels.batch) + ", " + std::to_string(labels.height) + ", " +
                     std::to_string(labels.width) + ")");
  }
  NoGradGuard no_grad;
  LossValue out;
  auto loss = ops::cross_entropy(make_leaf(logits), std::span<const std::uint8_t>(labels.values),
                                 kIgnoreLabel, &out.valid_pixels);
  out.value = static_cast<double>(loss->value[0]);
  out.all_ignored = out.valid_pixels == 0;
  return out;
}

double poly_lr(int iteration, int max_iterations, double base_lr, double power) {
  if (iteration < 0 || iteration > max_iterations) {
    throw InvalidConfig("iteration " + std::to_string(iteration) + " outside [0, " +
                        std::to_string(max_iterations) + "]");
  }
  if (max_iterations == 0) return base_lr;
  const double remaining = 1.0 - static_cast<double>(iteration) / max_iterations;
  return base_lr * std::pow(remaining, power);
}

double poly_lr(int iteration, const TrainConfig& cfg) {
  return poly_lr(iteration, cfg.max_iterations, cfg.base_lr, cfg.poly_power);
}

template <typename T>
void sgd_step(ParamSet<T>& params, std::vector<Tensor<T>>& buffers, double lr, double momentum,
              double weight_decay) {
  if (buffers.empty()) {
    for (const auto& p : params.params) buffers.emplace_back(p.var->value.shape());
  }
  if (buffers.size() != params.params.size()) {
    throw ShapeError("optimizer has " + std::to_string(buffers.size()) + " buffers for " +
                     std::to_string(params.params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < buffers.size(); ++i) {
    auto& node = *params.params[i].var;
    auto& buf = buffers[i];
    if (buf.shape() != node.value.shape()) {
      throw ShapeError("momentum buffer of " + params.params[i].name + " has shape " +
                       buf.shape().str() + ", parameter " + node.value.shape().str());
    }
    const bool has_grad = node.has_grad();
    const double wd = params.params[i].decay ? weight_decay : 0.0;
    for (std::size_t k = 0; k < buf.size(); ++k) {
      const double g = has_grad ? static_cast<double>(node.grad[k]) : 0.0;
      const double p = node.value[k];
      buf[k] = static_cast<T>(momentum * buf[k] + g + wd * p);
      node.value[k] = static_cast<T>(p - lr * buf[k]);
    }
  }
}

BatchLoader::BatchLoader(const DatasetSpec& spec, bool supervised, const AugConfig& aug,
                         int batch_size, std::uint64_t seed, int num_classes, int workers)
    : index_(index_dataset(spec.root, spec.layout, spec.split, supervised)),
      layout_(spec.layout),
      supervised_(supervised),
      aug_(aug),
      batch_size_(batch_size),
      seed_(seed),
      num_classes_(num_classes),
      workers_(std::max(1, workers)) {
  if (index_.samples.empty()) {
    throw LayoutError(std::string(supervised ? "no labeled samples" : "no samples") + " under " +
                      spec.root + " (" + to_string(spec.split) +
                      ")");
  }
  if (batch_size_ < 1) throw InvalidConfig("batch_size must be >= 1");
  aug_.validate();
}

void BatchLoader::start_epoch() {
  order_.resize(index_.samples.size());
  std::iota(order_.begin(), order_.end(), 0);
  std::mt19937_64 rng(mix_seed(seed_, epoch_));
  for (std::size_t i = order_.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(order_[i - 1], order_[j]);
  }
  cursor_ = 0;
}

Batch BatchLoader::next() {
  if (!started_) {
    start_epoch();
    started_ = true;
  }
  struct Pick {
    int index;
    std::uint64_t seed;
  };
  std::vector<Pick> picks;
  for (int b = 0; b < batch_size_; ++b) {
    if (cursor_ == order_.size()) {
      ++epoch_;
      start_epoch();
    }
    const int index = order_[cursor_++];
    picks.push_back({index, mix_seed(mix_seed(seed_, static_cast<std::uint64_t>(index)), epoch_)});
  }

  auto produce = [this](const Pick& pick) {
    const Sample& sample = index_.samples[static_cast<std::size_t>(pick.index)];
    LoadedSample loaded = load_sample(sample, layout_, ClassTaxonomy::cityscapes(), num_classes_);
    LabelMap label = loaded.label && supervised_ ? std::move(*loaded.label)
                                  : LabelMap(loaded.image.height, loaded.image.width);
    return augment(loaded.image, label, aug_, pick.seed);
  };
  std::vector<AugmentedSample> done(picks.size());
  if (workers_ == 1) {
    for (std::size_t i = 0; i < picks.size(); ++i) done[i] = produce(picks[i]);
  } else {
    std::vector<std::future<void>> jobs;
    const std::size_t stride = static_cast<std::size_t>(workers_);
    for (std::size_t w = 0; w < stride; ++w) {
      jobs.push_back(std::async(std::launch::async, [&, w] {
        for (std::size_t i = w; i < picks.size(); i += stride) done[i] = produce(picks[i]);
      }));
    }
    for (auto& j : jobs) j.get();
  }

  Batch batch;
  batch.images = Tensor<float>({batch_size_, 3, aug_.crop_height, aug_.crop_width});
  std::vector<LabelMap> labels;
  std::uint64_t h = kFnvOffset;
  for (std::size_t i = 0; i < picks.size(); ++i) {
    const auto& src = done[i].image.storage();
    std::copy(src.begin(), src.end(), batch.images.sample_ptr(static_cast<int>(i)));
    labels.push_back(std::move(done[i].label));
    batch.sample_indices.push_back(picks[i].index);
    h = fnv1a_u64(static_cast<std::uint64_t>(picks[i].index), h);
    h = fnv1a_u64(picks[i].seed, h);
  }
  batch.labels = LabelBatch::from_maps(labels);
  batch.hash = h;
  return batch;
}

TrainState TrainState::create(const ExperimentConfig& config) {
  config.validate();
  const std::uint64_t seed = config.train.seed;
  TrainState s(config, RelightNet<float>::build(config.relight, mix_seed(seed, kRelightStream)),
               SegNet<float>::build(config.seg, mix_seed(seed, kSegStream)));
  if (config.train.adaptation) {
    s.discriminator = Discriminator<float>::build(
        config.seg.num_classes, config.train.adaptation->disc_channels,
        mix_seed(seed, kDiscStream));
  }
  s.order_hash = kFnvOffset;
  s.set_mode(Mode::kTrain);
  return s;
}

TrainState TrainState::restore(const Checkpoint& ckpt) {
  TrainState s = create(config_from_json(ckpt.config_json));
  if (ckpt.iteration < 0 || ckpt.iteration > s.config.train.max_iterations) {
    throw CheckpointError("checkpoint iteration " + std::to_string(ckpt.iteration) +
                          " is outside the configured schedule");
  }
  s.iteration = static_cast<int>(ckpt.iteration);
  load_params(ckpt, s.relight.parameters());
  load_params(ckpt, s.seg.parameters());
  if (s.discriminator) load_params(ckpt, s.discriminator->parameters());
  load_momentum(ckpt, "opt.main.", s.main_parameters(), s.main_momentum);
  if (s.discriminator) {
    load_momentum(ckpt, "opt.disc.", s.discriminator_parameters(), s.disc_momentum);
  }
  return s;
}

Checkpoint TrainState::snapshot() {
  Checkpoint ckpt;
  ckpt.iteration = iteration;
  ckpt.config_json = config_to_json(config);
  save_params(ckpt, relight.parameters());
  save_params(ckpt, seg.parameters());
  if (discriminator) save_params(ckpt, discriminator->parameters());
  save_momentum(ckpt, "opt.main.", main_parameters(), main_momentum);
  if (discriminator) save_momentum(ckpt, "opt.disc.", discriminator_parameters(), disc_momentum);
  return ckpt;
}

void TrainState::set_mode(Mode mode) {
  relight.set_mode(mode);
  seg.set_mode(mode);
}

ParamSet<float> TrainState::main_parameters() {
  ParamSet<float> set;
  if (config.train.relight_enabled) append(set, relight.parameters());
  append(set, seg.parameters());
  return set;
}

ParamSet<float> TrainState::discriminator_parameters() {
  return discriminator ? discriminator->parameters() : ParamSet<float>{};
}

Tensor<float> TrainState::predict(const Tensor<float>& images) {
  set_mode(Mode::kEval);
  if (!config.train.relight_enabled) return seg.seg_forward(images);
  return seg.seg_forward(relight.relight_forward(images));
}

SegmenterPass accumulate_segmenter_gradients(TrainState& state, const Batch& source,
                                             const Batch* target) {
  const TrainConfig& cfg = state.config.train;
  if (cfg.adaptation && !target) throw InvalidConfig("adaptation is on but no target batch given");
  const bool adapt = cfg.adaptation.has_value();

  SegmenterPass pass;
  auto run = [&](const Tensor<float>& images) {
    Var<float> x = make_leaf(images);
    if (cfg.relight_enabled) x = state.relight.forward(x);
    return state.seg.forward(x);
  };
  Var<float> logits = run(source.images);
  std::int64_t valid = 0;
  Var<float> ce = ops::cross_entropy(logits, std::span<const std::uint8_t>(source.labels.values),
                                     kIgnoreLabel, &valid);
  pass.log.loss_ce = ce->value[0];
  pass.log.all_ignored = valid == 0;
  Var<float> total = ce;
  // D stays frozen until backward has run; its closures test requires_grad.
  std::optional<FreezeGuard> frozen;
  if (adapt) {
    frozen.emplace(state.discriminator->parameters());
    Var<float> target_probs = ops::softmax_channels(run(target->images));
    Var<float> adv = ops::bce_with_logits(state.discriminator->forward(target_probs),
                                          kSourceDomainLabel);
    pass.log.loss_adv = adv->value[0];
    total = ops::add(ce, ops::scale(adv, cfg.adaptation->adv_weight));
    NoGradGuard no_grad;
    pass.source_probabilities = ops::softmax_channels(make_leaf(logits->value))->value;
    pass.target_probabilities = target_probs->value;
  }
  pass.log.loss_total = total->value[0];
  if (total->requires_grad) backward(total);
  return pass;
}

double accumulate_discriminator_gradients(TrainState& state, const SegmenterPass& pass) {
  if (!state.discriminator || !pass.source_probabilities || !pass.target_probabilities) {
    return 0.0;
  }
  auto& d = *state.discriminator;
  Var<float> src = ops::bce_with_logits(d.forward(make_leaf(*pass.source_probabilities)),
                                        kSourceDomainLabel);
  Var<float> tgt = ops::bce_with_logits(d.forward(make_leaf(*pass.target_probabilities)),
                                        kTargetDomainLabel);
  Var<float> loss = ops::scale(ops::add(src, tgt), 0.5);
  backward(loss);
  return loss->value[0];
}

StepLog train_step(TrainState& state, const Batch& source, const Batch* target) {
  const TrainConfig& cfg = state.config.train;
  if (state.iteration >= cfg.max_iterations) {
    throw InvalidConfig("training already reached max_iterations");
  }
  state.set_mode(Mode::kTrain);
  ParamSet<float> main = state.main_parameters();
  ParamSet<float> disc = state.discriminator_parameters();
  main.zero_grad();
  disc.zero_grad();

  const double lr = poly_lr(state.iteration, cfg);
  SegmenterPass pass = accumulate_segmenter_gradients(state, source, target);
  const double disc_loss = accumulate_discriminator_gradients(state, pass);

  sgd_step(main, state.main_momentum, lr, cfg.momentum, cfg.weight_decay);
  if (state.discriminator) {
    const double disc_lr = poly_lr(state.iteration, cfg.max_iterations, cfg.adaptation->disc_lr,
                                   cfg.poly_power);
    sgd_step(disc, state.disc_momentum, disc_lr, cfg.momentum, cfg.weight_decay);
  }
  ++state.iteration;

  StepLog log = pass.log;
  log.iteration = state.iteration;
  log.lr = lr;
  log.loss_disc = disc_loss;
  log.batch_hash = target ? fnv1a_u64(target->hash, source.hash) : source.hash;
  state.order_hash = fnv1a_u64(log.batch_hash, state.order_hash);
  return log;
}

ConfusionMatrix evaluate_samples(TrainState& state, const std::vector<Sample>& samples,
                                 Layout layout) {
  const int k = state.config.seg.num_classes;
  const AugConfig& aug = state.config.train.aug;
  ConfusionMatrix conf(k);
  for (const auto& sample : samples) {
    LoadedSample loaded = load_sample(sample, layout, ClassTaxonomy::cityscapes(), k);
    if (!loaded.label) {
      throw LayoutError("evaluation sample " + sample.image_path.string() + " has no label");
    }
    const CropWindow window =
        center_window(loaded.image.height, loaded.image.width, aug.crop_height, aug.crop_width);
    const Tensor<float> images = normalize_image(crop(loaded.image, window), aug);
    const auto pred = argmax_labels(state.predict(images));
    conf.update(pred.front(), crop(*loaded.label, window));
  }
  return conf;
}

FitResult fit(const ExperimentConfig& config, const fs::path& run_dir,
              const std::vector<std::string>& overrides, std::ostream* progress) {
  config.validate();
  const TrainConfig& cfg = config.train;
  fs::create_directories(run_dir);
  {
    std::ofstream echo(run_dir / "config.json", std::ios::trunc);
    if (!echo) throw IOError("cannot write " + (run_dir / "config.json").string());
    echo << config_to_json(config) << '\n';
  }

  FitResult result;
  result.run_dir = run_dir;
  result.seed = cfg.seed;
  result.log_path = run_dir / "train_log.jsonl";
  result.final_checkpoint = run_dir / "final.ckpt";
  std::ofstream log(result.log_path, std::ios::trunc);
  if (!log) throw IOError("cannot write " + result.log_path.string());
  write_record(log, Json{{"type", "header"},
                         {"config_hash", config_hash(config)},
                         {"overrides", overrides},
                         {"seed", cfg.seed},
                         {"relight_enabled", cfg.relight_enabled},
                         {"adaptation", cfg.adaptation.has_value()},
                         {"source", dataset_json(cfg.source)},
                         {"max_iterations", cfg.max_iterations}});

  TrainState state = TrainState::create(config);
  const int k = config.seg.num_classes;
  std::optional<BatchLoader> source;
  std::optional<BatchLoader> target;
  std::vector<Sample> val_samples;
  Layout val_layout = cfg.source.layout;
  if (cfg.max_iterations > 0) {
    source.emplace(cfg.source, true, cfg.aug, cfg.batch_size, mix_seed(cfg.seed, kSourceStream),
                   k, cfg.workers);
    if (cfg.adaptation) {
      target.emplace(*cfg.target, false, cfg.aug, cfg.batch_size,
                     mix_seed(cfg.seed, kTargetStream), k, cfg.workers);
    }
    if (cfg.val) {
      val_samples = index_dataset(cfg.val->root, cfg.val->layout, cfg.val->split).samples;
      val_layout = cfg.val->layout;
    } else {
      val_samples = source->index().samples;
    }
  }

  while (state.iteration < cfg.max_iterations) {
    const Batch src = source->next();
    std::optional<Batch> tgt;
    if (target) tgt = target->next();
    const StepLog step = train_step(state, src, tgt ? &*tgt : nullptr);
    write_record(log, Json{{"type", "step"},
                           {"iteration", step.iteration},
                           {"lr", step.lr},
                           {"loss", {{"ce", step.loss_ce},
                                     {"adv", step.loss_adv},
                                     {"disc", step.loss_disc},
                                     {"total", step.loss_total}}},
                           {"all_ignored", step.all_ignored},
                           {"batch_hash", hex64(step.batch_hash)}});
    const bool eval_now =
        step.iteration % cfg.eval_interval == 0 || step.iteration == cfg.max_iterations;
    if (eval_now) {
      const ConfusionMatrix conf = evaluate_samples(state, val_samples, val_layout);
      const double miou = mean_iou(iou_per_class(conf));
      result.miou_trajectory.emplace_back(step.iteration, miou);
      write_record(log, Json{{"type", "eval"},
                             {"iteration", step.iteration},
                             {"miou", miou},
                             {"pixel_accuracy", pixel_accuracy(conf)}});
      if (!result.best_miou || miou > *result.best_miou) {
        result.best_miou = miou;
        result.best_checkpoint = run_dir / "best.ckpt";
        save_checkpoint(*result.best_checkpoint, state.snapshot());
      }
      result.final_miou = miou;
    }
    if (progress && (eval_now || step.iteration % 10 == 0)) {
      char line[160];
      std::snprintf(line, sizeof(line), "iter %d/%d lr %.5f ce %.4f total %.4f", step.iteration,
                    cfg.max_iterations, step.lr, step.loss_ce, step.loss_total);
      *progress << line;
      if (eval_now) *progress << " val_miou " << result.miou_trajectory.back().second;
      *progress << '\n';
    }
  }

  save_checkpoint(result.final_checkpoint, state.snapshot());
  result.order_hash = state.order_hash;
  Json final_record{{"type", "final"},
                    {"iteration", state.iteration},
                    {"order_hash", hex64(state.order_hash)}};
  final_record["final_miou"] = result.final_miou ? Json(*result.final_miou) : Json(nullptr);
  final_record["best_miou"] = result.best_miou ? Json(*result.best_miou) : Json(nullptr);
  write_record(log, final_record);
  return result;
}

namespace {

Json run_json(const FitResult& r, const fs::path& out_dir, bool relight) {
  Json traj = Json::array();
  for (const auto& [it, miou] : r.miou_trajectory) {
    traj.push_back(Json{{"iteration", it}, {"miou", miou}});
  }
  return Json{{"relight_enabled", relight},
              {"run_dir", fs::relative(r.run_dir, out_dir).generic_string()},
              {"log", fs::relative(r.log_path, out_dir).generic_string()},
              {"final_checkpoint", fs::relative(r.final_checkpoint, out_dir).generic_string()},
              {"final_miou", r.final_miou ? Json(*r.final_miou) : Json(nullptr)},
              {"miou_trajectory", traj},
              {"order_hash", hex64(r.order_hash)},
              {"seed", r.seed}};
}

}  // namespace

AblationReport ablation_run(const ExperimentConfig& config, const fs::path& out_dir,
                            std::ostream* progress) {
  ExperimentConfig on = config;
  on.train.relight_enabled = true;
  ExperimentConfig off = config;
  off.train.relight_enabled = false;

  AblationReport report;
  if (progress) *progress << "ablation: with_relight\n";
  report.with_relight = fit(on, out_dir / "with_relight", {"train.relight_enabled=true"}, progress);
  if (progress) *progress << "ablation: without_relight\n";
  report.without_relight =
      fit(off, out_dir / "without_relight", {"train.relight_enabled=false"}, progress);
  if (report.with_relight.final_miou && report.without_relight.final_miou) {
    report.delta = *report.with_relight.final_miou - *report.without_relight.final_miou;
  }
  report.identical_orderings = report.with_relight.order_hash == report.without_relight.order_hash;

  std::ofstream out(out_dir / "ablation_report.json", std::ios::trunc);
  if (!out) throw IOError("cannot write " + (out_dir / "ablation_report.json").string());
  out << ablation_report_json(report) << '\n';
  return report;
}

std::string ablation_report_json(const AblationReport& report) {
  const fs::path base = report.with_relight.run_dir.parent_path();
  Json j;
  j["runs"] = Json{{"with_relight", run_json(report.with_relight, base, true)},
                   {"without_relight", run_json(report.without_relight, base, false)}};
  j["delta"] = report.delta ? Json(*report.delta) : Json(nullptr);
  j["identical_orderings"] = report.identical_orderings;
  return j.dump(2);
}

template class Discriminator<float>;
template class Discriminator<double>;
template LossValue cross_entropy_loss(const Tensor<float>&, const LabelBatch&);
template LossValue cross_entropy_loss(const Tensor<double>&, const LabelBatch&);
template void sgd_step(ParamSet<float>&, std::vector<Tensor<float>>&, double, double, double);
template void sgd_step(ParamSet<double>&, std::vector<Tensor<double>>&, double, double, double);

}  // namespace rhrseg
