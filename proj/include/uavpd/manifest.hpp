#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace uavpd {

std::string sha256_hex(const void* data, size_t len);
std::string sha256_hex(const std::string& s);
std::string sha256_file(const std::filesystem::path& path);

// Run provenance: configuration hash, seed and content digests of every input
// and output artifact. Serialized deterministically (sorted keys, no
// timestamps) so identical reruns produce byte-identical manifests.
struct RunManifest {
  std::string command;
  std::string config_hash;
  uint64_t seed = 0;
  std::vector<std::pair<std::string, std::string>> inputs;
  std::vector<std::pair<std::string, std::string>> outputs;

  void add_input(const std::string& name, const std::filesystem::path& file);
  void add_output(const std::string& name, const std::filesystem::path& file);
  void write(const std::filesystem::path& path) const;
  static RunManifest read(const std::filesystem::path& path);
};

// Advisory lock file guarding an output directory against concurrent writers.
class DirLock {
 public:
  explicit DirLock(const std::filesystem::path& dir);
  ~DirLock();
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  std::filesystem::path lock_path_;
  bool held_ = false;
};

}  // namespace uavpd
