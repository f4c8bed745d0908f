#include "rhrseg/config.hpp"

#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "rhrseg/errors.hpp"
#include "rhrseg/hashing.hpp"

namespace rhrseg {

using Json = nlohmann::ordered_json;

void AdaptConfig::validate() const {
  if (!(adv_weight >= 0.0)) throw InvalidConfig("adaptation adv_weight must be >= 0");
  if (!(disc_lr > 0.0)) throw InvalidConfig("adaptation disc_lr must be > 0");
  if (disc_channels < 1) throw InvalidConfig("adaptation disc_channels must be >= 1");
}

void TrainConfig::validate() const {
  if (max_iterations < 0) throw InvalidConfig("max_iterations must be >= 0");
  if (batch_size < 1) throw InvalidConfig("batch_size must be >= 1");
  if (!(base_lr > 0.0)) throw InvalidConfig("base_lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidConfig("momentum must be in [0,1)");
  if (!(weight_decay >= 0.0)) throw InvalidConfig("weight_decay must be >= 0");
  if (!(poly_power >= 0.0)) throw InvalidConfig("poly_power must be >= 0");
  if (eval_interval < 1) throw InvalidConfig("eval_interval must be >= 1");
  if (workers < 1) throw InvalidConfig("workers must be >= 1");
  if (adaptation) {
    adaptation->validate();
    if (!target) throw InvalidConfig("adaptation requires a target dataset");
  }
  aug.validate();
}

void ExperimentConfig::validate() const {
  if (version != kConfigVersion) {
    throw ConfigError("config version " + std::to_string(version) + " unsupported");
  }
  train.validate();
  relight.validate();
  seg.validate();
}

ExperimentConfig toy_config(const std::string& data_root) {
  ExperimentConfig c;
  c.train.max_iterations = 200;
  c.train.batch_size = 4;
  c.train.base_lr = 0.05;
  c.train.eval_interval = 100;
  c.train.seed = 1;
  c.train.source = {data_root, Layout::kSynthetic, Split::kTrain};
  c.train.val = DatasetSpec{data_root, Layout::kSynthetic, Split::kVal};
  c.train.aug.crop_height = 64;
  c.train.aug.crop_width = 64;
  c.train.aug.scale_range = {0.75, 1.25};
  c.relight.base_channels = 8;
  c.relight.num_res_blocks = 3;
  c.seg.stem_channels = 32;
  c.seg.branch_channels = {16, 32, 64, 128};
  c.seg.blocks_per_branch = 1;
  c.seg.modules_per_stage = {1, 1, 1, 1};
  c.seg.head_mid_channels = 64;
  return c;
}

namespace {

Json dataset_to_json(const DatasetSpec& d) {
  return Json{{"root", d.root}, {"layout", to_string(d.layout)}, {"split", to_string(d.split)}};
}

Json to_json(const ExperimentConfig& c) {
  const auto& t = c.train;
  Json j;
  j["version"] = c.version;
  j["train"] = Json{{"max_iterations", t.max_iterations}, {"batch_size", t.batch_size},
                    {"base_lr", t.base_lr},               {"momentum", t.momentum},
                    {"weight_decay", t.weight_decay},     {"poly_power", t.poly_power},
                    {"seed", t.seed},                     {"relight_enabled", t.relight_enabled},
                    {"eval_interval", t.eval_interval},   {"workers", t.workers}};
  j["adaptation"] = t.adaptation ? Json{{"adv_weight", t.adaptation->adv_weight},
                                        {"disc_lr", t.adaptation->disc_lr},
                                        {"disc_channels", t.adaptation->disc_channels}}
                                 : Json(nullptr);
  j["data"] = Json{{"source", dataset_to_json(t.source)},
                   {"target", t.target ? dataset_to_json(*t.target) : Json(nullptr)},
                   {"val", t.val ? dataset_to_json(*t.val) : Json(nullptr)}};
  j["aug"] = Json{{"crop_height", t.aug.crop_height},
                  {"crop_width", t.aug.crop_width},
                  {"hflip_probability", t.aug.hflip_probability},
                  {"scale_range", t.aug.scale_range},
                  {"normalize_mean", t.aug.normalize_mean},
                  {"normalize_std", t.aug.normalize_std}};
  j["relight"] = Json{{"base_channels", c.relight.base_channels},
                      {"num_res_blocks", c.relight.num_res_blocks},
                      {"zero_init_last", c.relight.zero_init_last}};
  j["seg"] = Json{{"stem_channels", c.seg.stem_channels},
                  {"branch_channels", c.seg.branch_channels},
                  {"blocks_per_branch", c.seg.blocks_per_branch},
                  {"modules_per_stage", c.seg.modules_per_stage},
                  {"head_mid_channels", c.seg.head_mid_channels},
                  {"num_classes", c.seg.num_classes}};
  return j;
}

// Reads keys out of one JSON object and rejects whatever it did not read.
class StrictObject {
 public:
  StrictObject(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + " must be an object");
  }
  ~StrictObject() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError("unknown config key '" + path_ + "." + key + "'");
    }
  }

  template <typename V>
  void read(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<V>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("bad value for '" + path_ + "." + key + "': " + e.what());
    }
  }
  const Json* child(const char* key) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return nullptr;
    return &j_.at(key);
  }
  std::string path(const char* key) const { return path_ + "." + key; }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

DatasetSpec dataset_from_json(const Json& j, const std::string& path) {
  DatasetSpec d;
  StrictObject o(j, path);
  std::string layout = to_string(d.layout), split = to_string(d.split);
  o.read("root", d.root);
  o.read("layout", layout);
  o.read("split", split);
  d.layout = parse_layout(layout);
  d.split = parse_split(split);
  return d;
}

ExperimentConfig from_json(const Json& j) {
  ExperimentConfig c;
  StrictObject root(j, "config");
  root.read("version", c.version);
  if (c.version != kConfigVersion) {
    throw ConfigError("config version " + std::to_string(c.version) + " unsupported (expected " +
                      std::to_string(kConfigVersion) + ")");
  }
  auto& t = c.train;
  if (const Json* tj = root.child("train")) {
    StrictObject o(*tj, root.path("train"));
    o.read("max_iterations", t.max_iterations);
    o.read("batch_size", t.batch_size);
    o.read("base_lr", t.base_lr);
    o.read("momentum", t.momentum);
    o.read("weight_decay", t.weight_decay);
    o.read("poly_power", t.poly_power);
    o.read("seed", t.seed);
    o.read("relight_enabled", t.relight_enabled);
    o.read("eval_interval", t.eval_interval);
    o.read("workers", t.workers);
  }
  if (const Json* aj = root.child("adaptation")) {
    StrictObject o(*aj, root.path("adaptation"));
    AdaptConfig a;
    o.read("adv_weight", a.adv_weight);
    o.read("disc_lr", a.disc_lr);
    o.read("disc_channels", a.disc_channels);
    t.adaptation = a;
  }
  if (const Json* dj = root.child("data")) {
    StrictObject o(*dj, root.path("data"));
    if (const Json* s = o.child("source")) t.source = dataset_from_json(*s, o.path("source"));
    if (const Json* s = o.child("target")) t.target = dataset_from_json(*s, o.path("target"));
    if (const Json* s = o.child("val")) t.val = dataset_from_json(*s, o.path("val"));
  }
  if (const Json* gj = root.child("aug")) {
    StrictObject o(*gj, root.path("aug"));
    o.read("crop_height", t.aug.crop_height);
    o.read("crop_width", t.aug.crop_width);
    o.read("hflip_probability", t.aug.hflip_probability);
    o.read("scale_range", t.aug.scale_range);
    o.read("normalize_mean", t.aug.normalize_mean);
    o.read("normalize_std", t.aug.normalize_std);
  }
  if (const Json* rj = root.child("relight")) {
    StrictObject o(*rj, root.path("relight"));
    o.read("base_channels", c.relight.base_channels);
    o.read("num_res_blocks", c.relight.num_res_blocks);
    o.read("zero_init_last", c.relight.zero_init_last);
  }
  if (const Json* sj = root.child("seg")) {
    StrictObject o(*sj, root.path("seg"));
    o.read("stem_channels", c.seg.stem_channels);
    o.read("branch_channels", c.seg.branch_channels);
    o.read("blocks_per_branch", c.seg.blocks_per_branch);
    o.read("modules_per_stage", c.seg.modules_per_stage);
    o.read("head_mid_channels", c.seg.head_mid_channels);
    o.read("num_classes", c.seg.num_classes);
  }
  return c;
}

Json parse_text(const std::string& text) {
  try {
    return Json::parse(text, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
}

void collect_paths(const Json& j, const std::string& prefix, std::vector<std::string>& out) {
  for (const auto& [key, value] : j.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    out.push_back(path);
    if (value.is_object()) collect_paths(value, path, out);
  }
}

std::string leaf_name(const std::string& path) {
  const auto dot = path.rfind('.');
  return dot == std::string::npos ? path : path.substr(dot + 1);
}

}  // namespace

std::string config_to_json(const ExperimentConfig& config) { return to_json(config).dump(2); }

ExperimentConfig config_from_json(const std::string& text) {
  ExperimentConfig c = from_json(parse_text(text));
  c.validate();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return config_from_json(buf.str());
}

void apply_override(ExperimentConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not key=value");
  }
  std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  Json j = to_json(config);

  std::vector<std::string> paths;
  collect_paths(j, "", paths);
  if (key.find('.') == std::string::npos) {
    std::vector<std::string> hits;
    for (const auto& p : paths) {
      if (leaf_name(p) == key) hits.push_back(p);
    }
    if (hits.size() > 1) {
      throw ConfigError("override key '" + key + "' is ambiguous; use a dotted path");
    }
    if (hits.size() == 1) key = hits[0];
  }
  Json value;
  try {
    value = Json::parse(raw);
  } catch (const nlohmann::json::parse_error&) {
    value = raw;
  }
  Json::json_pointer ptr("/" + [&] {
    std::string p = key;
    for (auto& ch : p) {
      if (ch == '.') ch = '/';
    }
    return p;
  }());
  // Parents must exist; the leaf must already exist unless its parent was null.
  if (!j.contains(ptr.parent_pointer())) {
    throw ConfigError("unknown config key '" + key + "'");
  }
  if (j[ptr.parent_pointer()].is_null()) {
    j[ptr.parent_pointer()] = Json::object();
  } else if (!j.contains(ptr)) {
    throw ConfigError("unknown config key '" + key + "'");
  }
  j[ptr] = value;
  ExperimentConfig updated = from_json(j);
  updated.validate();
  config = updated;
}

std::string config_hash(const ExperimentConfig& config) {
  const std::string text = to_json(config).dump();
  const std::uint64_t h = fnv1a(text);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace rhrseg
