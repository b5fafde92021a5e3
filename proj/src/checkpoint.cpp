#include "uavpd/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "uavpd/errors.hpp"

namespace fs = std::filesystem;

namespace uavpd {

namespace {
constexpr char kMagic[9] = "UAVPDCK1";

struct Entry {
  std::string name;
  std::vector<int> shape;
  bool buffer;
  int64_t offset;  // float index into the data section
};

nlohmann::ordered_json directory_json(const nn::ParamStore& store) {
  nlohmann::ordered_json dir = nlohmann::ordered_json::array();
  int64_t off = 0;
  auto push = [&](const std::string& name, const Tensor& t, bool buffer) {
    nlohmann::ordered_json e;
    e["name"] = name;
    e["shape"] = t.shape();
    e["buffer"] = buffer;
    e["offset"] = off;
    off += t.numel();
    dir.push_back(e);
  };
  for (const auto& [name, v] : store.params()) push(name, v->value, false);
  for (const auto& [name, t] : store.buffers()) push(name, *t, true);
  return dir;
}
}  // namespace

void save_checkpoint(const fs::path& path, const nn::ParamStore& store,
                     const nlohmann::ordered_json& config) {
  nlohmann::ordered_json header;
  header["format"] = 1;
  header["config"] = config;
  header["tensors"] = directory_json(store);
  std::string hs = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint: " + path.string());
  out.write(kMagic, 8);
  uint64_t hlen = hs.size();
  out.write(reinterpret_cast<const char*>(&hlen), 8);
  out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
  auto write_tensor = [&](const Tensor& t) {
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.numel() * sizeof(float)));
  };
  for (const auto& [name, v] : store.params()) write_tensor(v->value);
  for (const auto& [name, t] : store.buffers()) write_tensor(*t);
  if (!out) throw IoError("write failed: " + path.string());
}

namespace {
nlohmann::json read_header(std::ifstream& in, const fs::path& path) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("bad checkpoint magic: " + path.string());
  uint64_t hlen = 0;
  in.read(reinterpret_cast<char*>(&hlen), 8);
  std::string hs(hlen, '\0');
  in.read(hs.data(), static_cast<std::streamsize>(hlen));
  if (!in) throw IoError("truncated checkpoint header: " + path.string());
  return nlohmann::json::parse(hs);
}
}  // namespace

nlohmann::json read_checkpoint_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("checkpoint not found: " + path.string());
  return read_header(in, path)["config"];
}

nlohmann::json load_checkpoint(const fs::path& path, nn::ParamStore& store) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("checkpoint not found: " + path.string());
  nlohmann::json header = read_header(in, path);
  std::streampos data_start = in.tellg();
  auto tensors = header["tensors"];
  size_t idx = 0;
  auto load_into = [&](const std::string& name, Tensor& dst) {
    if (idx >= tensors.size()) throw IoError("checkpoint directory too short: " + path.string());
    const auto& e = tensors[idx++];
    if (e["name"].get<std::string>() != name)
      throw IoError("checkpoint tensor order mismatch at '" + name + "' in " + path.string());
    std::vector<int> shape = e["shape"].get<std::vector<int>>();
    if (shape != dst.shape())
      throw IoError("checkpoint shape mismatch for '" + name + "' in " + path.string());
    in.seekg(data_start + std::streampos(e["offset"].get<int64_t>() * sizeof(float)));
    in.read(reinterpret_cast<char*>(dst.data()),
            static_cast<std::streamsize>(dst.numel() * sizeof(float)));
    if (!in) throw IoError("truncated checkpoint data: " + path.string());
  };
  for (const auto& [name, v] : store.params()) load_into(name, v->value);
  for (const auto& [name, t] : store.buffers()) load_into(name, *t);
  return header["config"];
}

int load_checkpoint_prefix(const fs::path& path, nn::ParamStore& store,
                           const std::string& prefix) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("checkpoint not found: " + path.string());
  nlohmann::json header = read_header(in, path);
  std::streampos data_start = in.tellg();
  std::map<std::string, std::pair<std::vector<int>, int64_t>> dir;
  for (const auto& e : header["tensors"])
    dir[e["name"].get<std::string>()] = {e["shape"].get<std::vector<int>>(),
                                         e["offset"].get<int64_t>()};
  int loaded = 0;
  auto try_load = [&](const std::string& name, Tensor& dst) {
    if (name.rfind(prefix, 0) != 0) return;
    auto it = dir.find(name);
    if (it == dir.end() || it->second.first != dst.shape()) return;
    in.seekg(data_start + std::streampos(it->second.second * sizeof(float)));
    in.read(reinterpret_cast<char*>(dst.data()),
            static_cast<std::streamsize>(dst.numel() * sizeof(float)));
    ++loaded;
  };
  for (const auto& [name, v] : store.params()) try_load(name, v->value);
  for (const auto& [name, t] : store.buffers()) try_load(name, *t);
  return loaded;
}

}  // namespace uavpd
