#include "rhrseg/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>

#include "rhrseg/errors.hpp"

namespace rhrseg {
namespace {

constexpr char kMagic[8] = {'R', 'H', 'R', 'S', 'C', 'K', 'P', 'T'};

template <typename U>
void put(std::ostream& out, U v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get(std::istream& in, const std::string& what) {
  U v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(U))) {
    throw CheckpointError("checkpoint truncated reading " + what);
  }
  return v;
}

}  // namespace

const CheckpointTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::ordered_json header;
  header["iteration"] = ckpt.iteration;
  header["config"] = ckpt.config_json;
  auto table = nlohmann::ordered_json::array();
  for (const auto& t : ckpt.tensors) {
    std::int64_t n = 1;
    for (auto d : t.shape) n *= d;
    if (n != static_cast<std::int64_t>(t.values.size())) {
      throw CheckpointError("tensor " + t.name + " shape does not match its data");
    }
    table.push_back({{"name", t.name}, {"shape", t.shape}});
  }
  header["tensors"] = table;
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IOError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : ckpt.tensors) {
    out.write(reinterpret_cast<const char*>(t.values.data()),
              static_cast<std::streamsize>(t.values.size() * sizeof(float)));
  }
  if (!out) throw IOError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IOError("cannot open checkpoint " + path.string());
  char magic[sizeof(kMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(path.string() + " is not a checkpoint");
  }
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw CheckpointError("checkpoint version " + std::to_string(version) + " unsupported");
  }
  const auto length = get<std::uint64_t>(in, "header length");
  if (length > (1ULL << 30)) throw CheckpointError("checkpoint header length is implausible");
  std::string text(length, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(length))) {
    throw CheckpointError("checkpoint truncated in header");
  }
  Checkpoint ckpt;
  try {
    const auto header = nlohmann::json::parse(text);
    ckpt.iteration = header.at("iteration").get<std::int64_t>();
    ckpt.config_json = header.at("config").get<std::string>();
    for (const auto& entry : header.at("tensors")) {
      CheckpointTensor t;
      t.name = entry.at("name").get<std::string>();
      t.shape = entry.at("shape").get<std::vector<std::int64_t>>();
      ckpt.tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint header is malformed: ") + e.what());
  }
  for (auto& t : ckpt.tensors) {
    std::int64_t n = 1;
    for (auto d : t.shape) {
      if (d < 0) throw CheckpointError("negative extent in " + t.name);
      n *= d;
    }
    t.values.resize(static_cast<std::size_t>(n));
    if (!in.read(reinterpret_cast<char*>(t.values.data()),
                 static_cast<std::streamsize>(n * sizeof(float)))) {
      throw CheckpointError("checkpoint truncated in tensor " + t.name);
    }
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw CheckpointError("trailing bytes after checkpoint payload");
  }
  return ckpt;
}

}  // namespace rhrseg
