// Acceptance suite: one PASS/FAIL line per criterion. Arguments, when
// given, select criterion numbers to run.
#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "commands.hpp"
#include "rhrseg/augment.hpp"
#include "rhrseg/checkpoint.hpp"
#include "rhrseg/hrseg.hpp"
#include "rhrseg/metrics.hpp"
#include "rhrseg/reference_tables.hpp"
#include "rhrseg/relight.hpp"
#include "rhrseg/synth.hpp"
#include "rhrseg/training.hpp"
#include "test_support.hpp"

namespace {

using namespace rhrseg;
namespace fs = std::filesystem;
using Json = nlohmann::json;

struct Verdict {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  std::function<Verdict()> body;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<Json> read_log(const fs::path& p) {
  std::vector<Json> records;
  std::ifstream in(p);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) records.push_back(Json::parse(line));
  }
  return records;
}

int cli(std::vector<std::string> args, std::string* out = nullptr) {
  std::ostringstream o, e;
  const int code = cli::run(args, o, e);
  if (out) *out = o.str();
  if (code != 0) std::cerr << e.str();
  return code;
}

// Shared scratch space; the overfit run feeds criteria 7 and 8.
struct Workspace {
  testing::TempDir dir{"rhrseg-accept"};
  fs::path data() const { return dir.path() / "synth"; }
  bool synthesized = false;
  std::optional<fs::path> first_run;

  void ensure_data() {
    if (synthesized) return;
    if (cli({"synth", "--out", data().string(), "--pairs", "16", "--size", "64", "--classes", "4",
             "--night"}) != 0) {
      throw std::runtime_error("synth failed");
    }
    synthesized = true;
  }
  fs::path train_run(const std::string& name) {
    ensure_data();
    const fs::path run = dir.path() / name;
    if (cli({"train", "--data", data().string(), "--run-dir", run.string(), "--quiet"}) != 0) {
      throw std::runtime_error("train failed");
    }
    return run;
  }
};

Workspace* ws = nullptr;

Verdict metric_oracle() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> cls(0, kNumTrainClasses - 1), coin(0, 9);
  std::vector<LabelMap> preds, gts;
  ConfusionMatrix conf;
  for (int i = 0; i < 1000; ++i) {
    LabelMap pred(8, 8), gt(8, 8);
    for (std::size_t k = 0; k < gt.values.size(); ++k) {
      pred.values[k] = static_cast<std::uint8_t>(cls(rng));
      gt.values[k] = coin(rng) == 0 ? kIgnoreLabel : static_cast<std::uint8_t>(cls(rng));
    }
    conf.update(pred, gt);
    preds.push_back(std::move(pred));
    gts.push_back(std::move(gt));
  }
  const auto counts = testing::brute_force_counts(preds, gts, kNumTrainClasses);
  for (int k = 0; k < kNumTrainClasses; ++k) {
    if (conf.count(k, k) != counts[k].intersection ||
        conf.row_sum(k) + conf.col_sum(k) - conf.count(k, k) != counts[k].union_size) {
      return {false, "count mismatch for class " + std::to_string(k)};
    }
  }
  const auto iou = iou_per_class(conf);
  const auto oracle = testing::brute_force_iou(preds, gts, kNumTrainClasses);
  if (iou != oracle) return {false, "per-class IoU differs from the oracle"};
  const double a = mean_iou(iou), b = mean_iou(oracle);
  return {a == b, "19 classes equal, mIoU " + fmt("%.6f", a)};
}

Verdict table_consistency() {
  bool ok = true;
  std::string detail;
  for (const auto& row : kRhrsegReferenceRows) {
    std::vector<std::optional<double>> per(row.per_class.begin(), row.per_class.end());
    const double mean = mean_iou(per);
    const double gap = std::abs(mean - row.printed_miou);
    ok = ok && gap <= 0.35;
    if (!detail.empty()) detail += "; ";
    detail += std::string(row.method) + " " + fmt("%.4f", mean) + " vs " +
              fmt("%.2f", row.printed_miou);
  }
  return {ok, detail};
}

Verdict gradient_checks() {
  std::mt19937_64 rng(7);
  // (a) cross-entropy on 2x3x4x4 logits.
  auto logits = make_leaf(testing::random_tensor<double>({2, 3, 4, 4}, rng, -2, 2), true);
  std::vector<std::uint8_t> labels(32);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i] = i % 5 == 0 ? kIgnoreLabel : static_cast<std::uint8_t>(rng() % 3);
  }
  const auto ce = testing::check_gradients(
      [&] { return ops::cross_entropy<double>(logits, labels, kIgnoreLabel); },
      testing::all_probes({{"logits", logits}}));

  // (b) relight on 1x3x4x4 with reduced channels.
  RelightConfig rc;
  rc.base_channels = 2;
  rc.num_res_blocks = 1;
  rc.zero_init_last = false;
  auto relight = RelightNet<double>::build(rc, 3);
  auto rset = relight.parameters();
  testing::randomize_norm_state(rset, rng);
  relight.set_mode(Mode::kEval);
  auto x = make_leaf(testing::random_tensor<double>({1, 3, 4, 4}, rng), true);
  const auto rw = testing::random_tensor<double>({1, 3, 4, 4}, rng);
  std::vector<std::pair<std::string, Var<double>>> vars{{"input", x}};
  for (const auto& p : rset.params) vars.emplace_back(p.name, p.var);
  const auto rl = testing::check_gradients(
      [&] { return ops::weighted_sum(relight.forward(x), rw); }, testing::all_probes(vars));

  // (c) reduced segmenter on 1x3x32x32, 200 sampled parameters.
  SegConfig sc;
  sc.stem_channels = 8;
  sc.branch_channels = {4, 8, 16, 32};
  sc.blocks_per_branch = 1;
  sc.modules_per_stage = {1, 1, 1, 1};
  sc.head_mid_channels = 8;
  auto seg = SegNet<double>::build(sc, 5);
  auto sset = seg.parameters();
  testing::randomize_norm_state(sset, rng);
  seg.set_mode(Mode::kEval);
  const auto img = make_leaf(testing::random_tensor<double>({1, 3, 32, 32}, rng));
  const auto sw = testing::random_tensor<double>({1, 19, 32, 32}, rng);
  const auto sg = testing::check_gradients(
      [&] { return ops::weighted_sum(seg.forward(img), sw); },
      testing::sampled_probes(sset, 200, rng));

  const bool ok = ce.max_relative_error < 1e-4 && rl.max_relative_error < 1e-3 &&
                  sg.max_relative_error < 1e-3 && sg.checked >= 200;
  return {ok, "ce " + fmt("%.2e", ce.max_relative_error) + ", relight " +
                  fmt("%.2e", rl.max_relative_error) + " (" + std::to_string(rl.checked) +
                  " probes), seg " + fmt("%.2e", sg.max_relative_error) + " (" +
                  std::to_string(sg.checked) + " probes)"};
}

Verdict identity_at_init() {
  auto net = RelightNet<float>::build(RelightConfig{}, 17);
  net.set_mode(Mode::kEval);
  std::mt19937_64 rng(4);
  double worst = 0.0;
  for (int i = 0; i < 10; ++i) {
    const int h = 4 * (4 + static_cast<int>(rng() % 12)), w = 4 * (4 + static_cast<int>(rng() % 12));
    const auto in = testing::random_tensor<float>({1 + i % 2, 3, h, w}, rng, -3, 3);
    const auto out = net.relight_forward(in);
    for (std::size_t k = 0; k < in.size(); ++k) {
      worst = std::max(worst, static_cast<double>(std::abs(out[k] - in[k])));
    }
  }
  return {worst == 0.0, "max |relight(I) - I| = " + fmt("%g", worst)};
}

Verdict shape_suite() {
  auto seg = SegNet<float>::build(SegConfig{}, 1);
  seg.set_mode(Mode::kEval);
  std::mt19937_64 rng(6);
  std::string detail;
  for (int size : {32, 64, 96}) {
    for (int batch : {1, 2}) {
      const auto x = make_leaf(testing::random_tensor<float>({batch, 3, size, size}, rng));
      NoGradGuard guard;
      std::vector<std::vector<Var<float>>> per_stage;
      const auto branches = seg.backbone(x, &per_stage);
      for (std::size_t s = 0; s < per_stage.size(); ++s) {
        if (per_stage[s].size() != s + 1) return {false, "stage branch count"};
        for (std::size_t j = 0; j < per_stage[s].size(); ++j) {
          const auto sh = per_stage[s][j]->value.shape();
          const int expect = size / (4 << j);
          if (sh.height != expect || sh.width != expect || sh.batch != batch ||
              sh.channels != SegConfig{}.branch_channels[j]) {
            return {false, "branch " + std::to_string(j) + " of stage " + std::to_string(s + 1) +
                               " is " + sh.str()};
          }
        }
      }
      const auto y = seg.head_forward(branches, size, size)->value.shape();
      if (!(y == TensorShape{batch, 19, size, size})) return {false, "output " + y.str()};
    }
    detail += std::to_string(size) + " ";
  }
  const TensorShape in64{1, 3, 64, 64};
  const bool formulas =
      conv_output_shape(in64, ConvSpec{3, 8, 3, 1, 1}) == TensorShape{1, 8, 64, 64} &&
      conv_output_shape(in64, ConvSpec{3, 8, 3, 2, 1}) == TensorShape{1, 8, 32, 32} &&
      transconv_output_shape({1, 128, 16, 16}, ConvSpec{128, 8, 4, 2, 1, true}) ==
          TensorShape{1, 8, 32, 32} &&
      transconv_output_shape({1, 64, 32, 32}, ConvSpec{64, 8, 1, 1, 0, true}) ==
          TensorShape{1, 8, 32, 32} &&
      transconv_output_shape({1, 64, 1, 1}, ConvSpec{64, 8, 4, 2, 1, true}) ==
          TensorShape{1, 8, 2, 2};
  return {formulas, "sizes " + detail + "ladder 1/4..1/32, conv formulas " +
                        (formulas ? "ok" : "wrong")};
}

Verdict overfit() {
  const fs::path run = ws->train_run("overfit_a");
  ws->first_run = run;
  std::string printed;
  const fs::path report = ws->dir.path() / "overfit_eval.json";
  if (cli({"eval", "--checkpoint", (run / "final.ckpt").string(), "--split", "train", "--out",
           report.string()},
          &printed) != 0) {
    return {false, "eval failed"};
  }
  // Exact value from the same checkpoint; the printed figure is rounded.
  TrainState state = TrainState::restore(load_checkpoint(run / "final.ckpt"));
  const auto index = index_dataset(ws->data().string(), Layout::kSynthetic, Split::kTrain);
  const double miou = mean_iou(iou_per_class(evaluate_samples(state, index.samples,
                                                              Layout::kSynthetic)));
  const double reported = Json::parse(read_text(report))["miou"].get<double>();
  const bool consistent = std::abs(reported - 100.0 * miou) <= 0.005 + 1e-9;
  return {miou >= 0.85 && consistent,
          "train-split mIoU " + fmt("%.4f", miou) + " over " + std::to_string(index.samples.size()) +
              " images (threshold 0.85)"};
}

Verdict determinism() {
  if (!ws->first_run) ws->first_run = ws->train_run("overfit_a");
  const fs::path second = ws->train_run("overfit_b");
  const bool ckpt = read_text(*ws->first_run / "final.ckpt") == read_text(second / "final.ckpt");
  const bool log =
      read_text(*ws->first_run / "train_log.jsonl") == read_text(second / "train_log.jsonl");
  return {ckpt && log, std::string("final checkpoints ") + (ckpt ? "identical" : "differ") +
                           ", logs " + (log ? "identical" : "differ")};
}

Verdict ablation() {
  ws->ensure_data();
  const fs::path out = ws->dir.path() / "ablation";
  if (cli({"ablate", "--data", ws->data().string(), "--out", out.string(), "--quiet"}) != 0) {
    return {false, "ablate failed"};
  }
  const Json report = Json::parse(read_text(out / "ablation_report.json"));
  if (report["runs"].size() != 2) return {false, "report does not hold two runs"};
  double last[2] = {-1, -1};
  std::vector<std::string> hashes[2];
  std::string order[2];
  int k = 0;
  for (const char* key : {"with_relight", "without_relight"}) {
    for (const auto& r : read_log(out / report["runs"][key]["log"].get<std::string>())) {
      if (r["type"] == "eval") last[k] = r["miou"].get<double>();
      if (r["type"] == "step") hashes[k].push_back(r["batch_hash"]);
      if (r["type"] == "final") order[k] = r["order_hash"];
    }
    ++k;
  }
  const double delta = last[0] - last[1];
  const bool delta_ok = !report["delta"].is_null() && report["delta"].get<double>() == delta;
  const bool same_order = hashes[0] == hashes[1] && order[0] == order[1] && !hashes[0].empty() &&
                          report["identical_orderings"].get<bool>();
  return {delta_ok && same_order, "delta " + fmt("%+.4f", delta) + " recomputed from logs, " +
                                      std::to_string(hashes[0].size()) + " batch hashes " +
                                      (same_order ? "identical" : "differ")};
}

Verdict augmentation() {
  std::mt19937_64 rng(99);
  int flipped = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const int h = 24 + static_cast<int>(rng() % 90), w = 24 + static_cast<int>(rng() % 90);
    RgbImage image(h, w);
    for (auto& p : image.pixels) p = static_cast<std::uint8_t>(rng() & 0xff);
    LabelMap label(h, w);
    const int block = 1 + static_cast<int>(rng() % 8);
    std::uint8_t palette[16];
    for (auto& v : palette) {
      const int c = static_cast<int>(rng() % 20);
      v = c == 19 ? kIgnoreLabel : static_cast<std::uint8_t>(c);
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) label.at(y, x) = palette[((y / block) * 3 + x / block) % 16];
    }
    AugConfig cfg;
    cfg.crop_height = cfg.crop_width = trial % 2 ? 64 : 32;
    cfg.scale_range = {0.5, 2.0};
    cfg.hflip_probability = 0.5;
    const std::uint64_t seed = rng();
    const auto out = augment(image, label, cfg, seed);
    const auto again = augment(image, label, cfg, seed);
    if (!bitwise_equal(out.image, again.image) || !(out.label == again.label)) {
      return {false, "seed repeatability broken at trial " + std::to_string(trial)};
    }
    AugConfig never = cfg, always = cfg;
    never.hflip_probability = 0.0;
    always.hflip_probability = 1.0;
    const auto plain = augment(image, label, never, seed);
    const auto mirror = augment(image, label, always, seed);
    const int c = cfg.crop_width;
    for (int y = 0; y < cfg.crop_height; ++y) {
      for (int x = 0; x < c; ++x) {
        if (mirror.label.at(y, x) != plain.label.at(y, c - 1 - x)) {
          return {false, "label flip not paired at trial " + std::to_string(trial)};
        }
        for (int ch = 0; ch < 3; ++ch) {
          if (mirror.image.at(0, ch, y, x) != plain.image.at(0, ch, y, c - 1 - x)) {
            return {false, "image flip not paired at trial " + std::to_string(trial)};
          }
        }
      }
    }
    const auto& expect = out.plan.flipped ? mirror : plain;
    if (!bitwise_equal(out.image, expect.image) || !(out.label == expect.label)) {
      return {false, "flip applied to only one of image and label"};
    }
    flipped += out.plan.flipped;
    std::set<std::uint8_t> allowed(label.values.begin(), label.values.end());
    allowed.insert(kIgnoreLabel);
    for (auto v : out.label.values) {
      if (!allowed.count(v)) return {false, "label value " + std::to_string(v) + " invented"};
    }
  }
  return {true, "500 pairs, " + std::to_string(flipped) + " flipped"};
}

Verdict checkpoint_round_trip() {
  ExperimentConfig c = toy_config("unused");
  c.train.adaptation = AdaptConfig{};
  c.train.target = DatasetSpec{"unused"};
  TrainState state = TrainState::create(c);
  std::mt19937_64 rng(12);
  auto params = state.main_parameters();
  testing::randomize_norm_state(params, rng);
  for (auto& p : params.params) {
    for (auto& v : p.var->value.storage()) v += static_cast<float>((rng() % 1000) * 1e-5);
  }
  state.iteration = 3;
  const fs::path path = ws->dir.path() / "roundtrip.ckpt";
  save_checkpoint(path, state.snapshot());
  TrainState loaded = TrainState::restore(load_checkpoint(path));
  int identical = 0;
  for (int i = 0; i < 5; ++i) {
    const auto x = testing::random_tensor<float>({1 + i % 2, 3, 64, 64}, rng, -2, 2);
    identical += bitwise_equal(state.predict(x), loaded.predict(x));
  }
  return {identical == 5, std::to_string(identical) + " of 5 forwards bitwise identical"};
}

Verdict gradient_isolation() {
  testing::TempDir dir{"rhrseg-iso"};
  synth_generate(dir.path() / "src", 4, 64, 4, 31, false);
  synth_generate(dir.path() / "tgt", 4, 64, 4, 32, true);
  ExperimentConfig c = toy_config((dir.path() / "src").string());
  c.train.val.reset();
  c.train.adaptation = AdaptConfig{};
  c.train.adaptation->disc_channels = 8;
  c.train.target = DatasetSpec{(dir.path() / "tgt").string()};
  c.validate();
  BatchLoader src(c.train.source, true, c.train.aug, 2, 1, c.seg.num_classes);
  BatchLoader tgt(*c.train.target, false, c.train.aug, 2, 2, c.seg.num_classes);
  const Batch s = src.next(), t = tgt.next();

  TrainState state = TrainState::create(c);
  state.set_mode(Mode::kTrain);
  auto main = state.main_parameters();
  auto disc = state.discriminator_parameters();
  auto all_zero = [](const ParamSet<float>& set) {
    for (const auto& p : set.params) {
      for (std::size_t i = 0; i < p.var->grad.size(); ++i) {
        if (p.var->grad[i] != 0.0f) return false;
      }
    }
    return true;
  };
  main.zero_grad();
  disc.zero_grad();
  const auto pass = accumulate_segmenter_gradients(state, s, &t);
  const bool disc_clean = all_zero(disc);
  const bool main_moved = !all_zero(main);
  main.zero_grad();
  accumulate_discriminator_gradients(state, pass);
  const bool main_clean = all_zero(main);
  const bool disc_moved = !all_zero(disc);
  return {disc_clean && main_moved && main_clean && disc_moved,
          std::string("discriminator grad from segmenter pass ") +
              (disc_clean ? "zero" : "NONZERO") + ", segmenter grad from discriminator step " +
              (main_clean ? "zero" : "NONZERO")};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  Workspace workspace;
  ws = &workspace;
  const std::vector<Criterion> criteria{
      {1, "metric oracle equivalence", 10, metric_oracle},
      {2, "reference table consistency", 1, table_consistency},
      {3, "gradient checks", 300, gradient_checks},
      {4, "relight identity at init", 10, identity_at_init},
      {5, "shape suite", 60, shape_suite},
      {6, "overfit acceptance", 600, overfit},
      {7, "training determinism", 1200, determinism},
      {8, "ablation harness", 1200, ablation},
      {9, "augmentation equivariance", 30, augmentation},
      {10, "checkpoint round trip", 30, checkpoint_round_trip},
      {11, "adaptation gradient isolation", 60, gradient_isolation},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.body();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs < c.budget_seconds;
    const bool pass = v.pass && in_time;
    failed += !pass;
    std::printf("%s  %2d  %-30s %s [%.2fs of %.0fs]%s\n", pass ? "PASS" : "FAIL", c.id, c.name,
                v.detail.c_str(), secs, c.budget_seconds, in_time ? "" : " over budget");
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
