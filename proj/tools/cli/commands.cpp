#include "commands.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <nlohmann/json.hpp>
#include <optional>
#include <ostream>

#include "rhrseg/augment.hpp"
#include "rhrseg/checkpoint.hpp"
#include "rhrseg/config.hpp"
#include "rhrseg/errors.hpp"
#include "rhrseg/hashing.hpp"
#include "rhrseg/image_io.hpp"
#include "rhrseg/metrics.hpp"
#include "rhrseg/synth.hpp"
#include "rhrseg/taxonomy.hpp"
#include "rhrseg/training.hpp"

namespace rhrseg::cli {
namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

constexpr std::uint64_t kValSeedStream = 0x76616c;  // "val"

struct SynthArgs {
  std::string out;
  int pairs = 16;
  int val_pairs = -1;
  int size = 64;
  int classes = 4;
  bool night = false;
  std::uint64_t seed = 1;
};

struct ConfigArgs {
  std::string config;
  std::string data;
  std::vector<std::string> overrides;
  int workers = 0;
};

struct TrainArgs {
  ConfigArgs cfg;
  std::string run_dir;
  std::string run_root;
  bool quiet = false;
};

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string layout;
  std::string split = "train";
  std::string out;
  std::string config;
  std::string label = "rhrseg";
};

struct InferArgs {
  std::string checkpoint;
  std::string out;
  std::vector<std::string> images;
  bool relight_preview = false;
  bool auto_pad = false;
};

struct AblateArgs {
  ConfigArgs cfg;
  std::string out;
  std::string run_root;
  bool quiet = false;
};

void add_config_options(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("--config", a.config, "Experiment config (JSON); the toy config when omitted");
  cmd->add_option("--data", a.data, "Dataset root for the source and validation splits");
  cmd->add_option("--override", a.overrides, "key=value, dotted path or unique leaf key")
      ->take_all();
  cmd->add_option("--workers", a.workers, "Data-loading threads")->check(CLI::PositiveNumber);
}

ExperimentConfig resolve_config(const ConfigArgs& a) {
  ExperimentConfig c = a.config.empty() ? toy_config(a.data.empty() ? "data" : a.data)
                                        : load_config(a.config);
  if (!a.data.empty()) {
    c.train.source.root = a.data;
    if (c.train.val) c.train.val->root = a.data;
  }
  if (a.workers > 0) c.train.workers = a.workers;
  for (const auto& o : a.overrides) apply_override(c, o);
  c.validate();
  return c;
}

fs::path run_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kRunRootEnv); env && *env) return env;
  return "runs";
}

// <root>/<UTC timestamp>-<config hash prefix>, suffixed on collision.
fs::path fresh_run_dir(const fs::path& root, const ExperimentConfig& c) {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char stamp[32];
  std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm);
  const std::string base = std::string(stamp) + "-" + config_hash(c).substr(0, 8);
  fs::path dir = root / base;
  for (int i = 2; fs::exists(dir); ++i) dir = root / (base + "-" + std::to_string(i));
  return dir;
}

std::string fmt_miou(const std::optional<double>& v) {
  if (!v) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", *v);
  return buf;
}

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  const int val_pairs = a.val_pairs < 0 ? a.pairs : a.val_pairs;
  const std::uint64_t val_seed = mix_seed(a.seed, kValSeedStream);
  const auto train =
      synth_generate(a.out, a.pairs, a.size, a.classes, a.seed, a.night, Split::kTrain);
  const auto val = synth_generate(a.out, val_pairs, a.size, a.classes, val_seed, a.night,
                                  Split::kVal);
  auto split_json = [&](const std::vector<Sample>& samples, std::uint64_t seed) {
    Json files = Json::array();
    for (const auto& s : samples) {
      files.push_back(fs::relative(s.image_path, a.out).generic_string());
    }
    return Json{{"pairs", samples.size()}, {"seed", seed}, {"images", files}};
  };
  Json manifest{{"layout", "synthetic"},
                {"size", a.size},
                {"classes", a.classes},
                {"night", a.night},
                {"splits", {{"train", split_json(train, a.seed)}, {"val", split_json(val, val_seed)}}}};
  const std::string text = manifest.dump(2);
  std::ofstream file(fs::path(a.out) / "manifest.json", std::ios::trunc);
  if (!file) throw IOError("cannot write " + (fs::path(a.out) / "manifest.json").string());
  file << text << '\n';
  out << text << '\n';
  return kOk;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const ExperimentConfig c = resolve_config(a.cfg);
  const fs::path dir = a.run_dir.empty() ? fresh_run_dir(run_root(a.run_root), c) : fs::path(a.run_dir);
  out << "run directory: " << dir.string() << '\n';
  const FitResult r = fit(c, dir, a.cfg.overrides, a.quiet ? nullptr : &out);
  out << "final checkpoint: " << r.final_checkpoint.string() << '\n';
  out << "final val mIoU: " << fmt_miou(r.final_miou) << '\n';
  return kOk;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  TrainState state = TrainState::restore(load_checkpoint(a.checkpoint));
  if (!a.config.empty()) {
    const ExperimentConfig other = load_config(a.config);
    if (other.seg.num_classes != state.config.seg.num_classes) {
      throw ConfigError("class count mismatch: checkpoint has " +
                        std::to_string(state.config.seg.num_classes) + " classes, config " +
                        a.config + " has " + std::to_string(other.seg.num_classes));
    }
  }
  DatasetSpec spec = state.config.train.source;
  if (!a.data.empty()) spec.root = a.data;
  if (!a.layout.empty()) spec.layout = parse_layout(a.layout);
  spec.split = parse_split(a.split);
  const auto index = index_dataset(spec.root, spec.layout, spec.split);
  const ConfusionMatrix conf = evaluate_samples(state, index.samples, spec.layout);
  const MetricsReport report = make_report(conf);
  if (!a.out.empty()) {
    const fs::path path(a.out);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream file(path, std::ios::trunc);
    if (!file) throw IOError("cannot write " + path.string());
    file << report_to_json(report) << '\n';
  }
  out << report_to_table(report, a.label);
  char line[64];
  std::snprintf(line, sizeof(line), "mIoU %.4f over %zu images\n", report.miou,
                index.samples.size());
  out << line;
  return kOk;
}

Tensor<float> pad_to_multiple(const Tensor<float>& x, int multiple) {
  const auto& s = x.shape();
  const int h = (s.height + multiple - 1) / multiple * multiple;
  const int w = (s.width + multiple - 1) / multiple * multiple;
  if (h == s.height && w == s.width) return x;
  // Zero is the normalized mean color.
  Tensor<float> padded({s.batch, s.channels, h, w});
  for (int n = 0; n < s.batch; ++n) {
    for (int c = 0; c < s.channels; ++c) {
      for (int y = 0; y < s.height; ++y) {
        const float* src = x.plane_ptr(n, c) + static_cast<std::size_t>(y) * s.width;
        std::copy(src, src + s.width, padded.plane_ptr(n, c) + static_cast<std::size_t>(y) * w);
      }
    }
  }
  return padded;
}

int cmd_infer(const InferArgs& a, std::ostream& out, std::ostream& err) {
  TrainState state = TrainState::restore(load_checkpoint(a.checkpoint));
  const AugConfig& aug = state.config.train.aug;
  const ClassTaxonomy& taxonomy = ClassTaxonomy::cityscapes();
  const fs::path out_dir(a.out);
  int failures = 0;
  for (const auto& name : a.images) {
    try {
      const RgbImage image = read_rgb_png(name);
      if (!a.auto_pad && (image.height % 32 != 0 || image.width % 32 != 0)) {
        throw ShapeError(name + " is " + std::to_string(image.height) + "x" +
                         std::to_string(image.width) +
                         "; sides must be multiples of 32 (or pass --auto-pad)");
      }
      const Tensor<float> input = pad_to_multiple(normalize_image(image, aug), 32);
      const LabelMap full = argmax_labels(state.predict(input)).front();
      const LabelMap pred = crop(full, CropWindow{0, 0, image.height, image.width});
      const std::string stem = fs::path(name).stem().string();
      write_png(out_dir / (stem + "_trainid.png"), labels_to_image(pred));
      write_png(out_dir / (stem + "_color.png"), colorize_prediction(pred, taxonomy));
      out << name << " -> " << (out_dir / (stem + "_trainid.png")).string();
      if (a.relight_preview) {
        state.relight.set_mode(Mode::kEval);
        const Tensor<float> relit = state.relight.relight_forward(input);
        const RgbImage preview = crop(denormalize_image(relit, 0, aug),
                                      CropWindow{0, 0, image.height, image.width});
        write_png(out_dir / (stem + "_relit.png"), preview);
        out << ", " << (out_dir / (stem + "_relit.png")).string();
      }
      out << '\n';
    } catch (const std::exception& e) {
      ++failures;
      err << "error: " << name << ": " << e.what() << '\n';
    }
  }
  out << (a.images.size() - failures) << " of " << a.images.size() << " images processed\n";
  return failures == 0 ? kOk : kFailure;
}

int cmd_ablate(const AblateArgs& a, std::ostream& out) {
  const ExperimentConfig c = resolve_config(a.cfg);
  const fs::path dir = a.out.empty() ? fresh_run_dir(run_root(a.run_root), c) : fs::path(a.out);
  out << "ablation directory: " << dir.string() << '\n';
  const AblationReport r = ablation_run(c, dir, a.quiet ? nullptr : &out);
  out << "with_relight final mIoU: " << fmt_miou(r.with_relight.final_miou) << '\n';
  out << "without_relight final mIoU: " << fmt_miou(r.without_relight.final_miou) << '\n';
  out << "delta: " << fmt_miou(r.delta) << '\n';
  out << "report: " << (dir / "ablation_report.json").string() << '\n';
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Relight + high-resolution segmentation toolkit", "rhrseg"};
  app.require_subcommand(1);

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Write a synthetic paired dataset (train and val)");
  s->add_option("--out", synth.out, "Output root")->required();
  s->add_option("--pairs", synth.pairs, "Training pairs")->check(CLI::PositiveNumber);
  s->add_option("--val-pairs", synth.val_pairs, "Validation pairs (default: --pairs)")
      ->check(CLI::PositiveNumber);
  s->add_option("--size", synth.size, "Square image side, a multiple of 32");
  s->add_option("--classes", synth.classes, "Classes used, 1..19");
  s->add_flag("--night", synth.night, "Darken and add lamps and sensor noise");
  s->add_option("--seed", synth.seed, "Generator seed");

  TrainArgs train;
  auto* t = app.add_subcommand("train", "Train relight + segmenter");
  add_config_options(t, train.cfg);
  t->add_option("--run-dir", train.run_dir, "Exact run directory");
  t->add_option("--run-root", train.run_root,
                std::string("Parent of generated run directories (default $") + kRunRootEnv +
                    " or ./runs)");
  t->add_flag("--quiet", train.quiet, "No per-iteration progress");

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a labeled split");
  e->add_option("--checkpoint", eval.checkpoint, "Checkpoint file")->required();
  e->add_option("--data", eval.data, "Dataset root (default: the training source root)");
  e->add_option("--layout", eval.layout, "cityscapes, darkzurich, nightcity or synthetic");
  e->add_option("--split", eval.split, "train, val or test");
  e->add_option("--out", eval.out, "Write the metrics report (JSON) here");
  e->add_option("--config", eval.config, "Config whose class count must match the checkpoint");
  e->add_option("--label", eval.label, "Row label of the printed table");

  InferArgs infer;
  auto* i = app.add_subcommand("infer", "Predict label maps for images");
  i->add_option("--checkpoint", infer.checkpoint, "Checkpoint file")->required();
  i->add_option("--out", infer.out, "Output directory")->required();
  i->add_option("images", infer.images, "PNG images")->required();
  i->add_flag("--relight-preview", infer.relight_preview, "Also write the relit image");
  i->add_flag("--auto-pad", infer.auto_pad, "Pad sides up to a multiple of 32");

  AblateArgs ablate;
  auto* a = app.add_subcommand("ablate", "Train with and without relighting and compare");
  add_config_options(a, ablate.cfg);
  a->add_option("--out", ablate.out, "Ablation directory");
  a->add_option("--run-root", ablate.run_root, "Parent of the generated ablation directory");
  a->add_flag("--quiet", ablate.quiet, "No per-iteration progress");

  ConfigArgs show;
  auto* c = app.add_subcommand("config", "Print the resolved config");
  add_config_options(c, show);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& pe) {
    const int code = app.exit(pe, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (s->parsed()) return cmd_synth(synth, out);
    if (t->parsed()) return cmd_train(train, out);
    if (e->parsed()) return cmd_eval(eval, out);
    if (i->parsed()) return cmd_infer(infer, out, err);
    if (a->parsed()) return cmd_ablate(ablate, out);
    if (c->parsed()) {
      out << config_to_json(resolve_config(show)) << '\n';
      return kOk;
    }
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kFailure;
  }
  return kUsage;
}

}  // namespace rhrseg::cli
