#include "revlab/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace revlab {

namespace {

constexpr char kMagic[4] = {'R', 'L', 'C', 'K'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

template <typename T>
T get(std::istream& is, const char* what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(v)))
    throw std::runtime_error(std::string("checkpoint truncated reading ") + what);
  return v;
}

std::string get_string(std::istream& is, const char* what) {
  uint64_t len = get<uint64_t>(is, what);
  if (len > (1ull << 30)) throw std::runtime_error(std::string("checkpoint: absurd length for ") + what);
  std::string s(len, '\0');
  if (len && !is.read(s.data(), static_cast<std::streamsize>(len)))
    throw std::runtime_error(std::string("checkpoint truncated reading ") + what);
  return s;
}

}  // namespace

void save_checkpoint(const std::string& path, const Params& ps) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 4);
  put(os, kVersion);
  std::string cfg = to_json(ps.config).dump();
  put(os, static_cast<uint64_t>(cfg.size()));
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  put(os, static_cast<uint64_t>(ps.layout.size()));
  for (const auto& pi : ps.layout) {
    put(os, static_cast<uint64_t>(pi.name.size()));
    os.write(pi.name.data(), static_cast<std::streamsize>(pi.name.size()));
    put(os, pi.rows);
    put(os, pi.cols);
    os.write(reinterpret_cast<const char*>(ps.flat.data() + pi.offset),
             static_cast<std::streamsize>(pi.size() * sizeof(float)));
  }
  if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

Params load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("not a checkpoint file: " + path);
  uint32_t version = get<uint32_t>(is, "version");
  if (version != kVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  ModelConfig cfg = model_config_from_json(nlohmann::json::parse(get_string(is, "config")));
  Params ps = init_params<float>(cfg, 0);
  uint64_t n_tensors = get<uint64_t>(is, "tensor count");
  if (n_tensors != ps.layout.size())
    throw std::runtime_error("checkpoint tensor count does not match config layout");
  for (const auto& pi : ps.layout) {
    std::string name = get_string(is, "tensor name");
    if (name != pi.name)
      throw std::runtime_error("checkpoint tensor order mismatch: expected " + pi.name + ", got " +
                               name);
    int32_t rows = get<int32_t>(is, "rows");
    int32_t cols = get<int32_t>(is, "cols");
    if (rows != pi.rows || cols != pi.cols)
      throw std::runtime_error("checkpoint tensor shape mismatch for " + pi.name);
    if (!is.read(reinterpret_cast<char*>(ps.flat.data() + pi.offset),
                 static_cast<std::streamsize>(pi.size() * sizeof(float))))
      throw std::runtime_error("checkpoint truncated reading values of " + pi.name);
  }
  return ps;
}

}  // namespace revlab
