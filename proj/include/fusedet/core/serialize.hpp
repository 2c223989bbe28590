#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <string>

#include "fusedet/core/error.hpp"
#include "fusedet/core/tensor.hpp"

namespace fusedet {

// Versioned checkpoint container: named float64 arrays plus a config-text
// snapshot. Training state (optimizer slots, epoch counter) rides along as
// ordinary named arrays.
namespace ckpt {

constexpr char kMagic[8] = {'F', 'D', 'C', 'K', 'P', 'T', '0', '1'};

inline void save(const std::string& path, const std::string& config_text,
                 const std::map<std::string, Tensor<double>>& arrays) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw IoError("cannot write checkpoint: " + path);
    f.write(kMagic, 8);
    const uint32_t version = 1;
    f.write(reinterpret_cast<const char*>(&version), 4);
    const uint64_t clen = config_text.size();
    f.write(reinterpret_cast<const char*>(&clen), 8);
    f.write(config_text.data(), static_cast<std::streamsize>(clen));
    const uint64_t n = arrays.size();
    f.write(reinterpret_cast<const char*>(&n), 8);
    for (const auto& [name, t] : arrays) {
      const uint32_t nlen = static_cast<uint32_t>(name.size());
      f.write(reinterpret_cast<const char*>(&nlen), 4);
      f.write(name.data(), nlen);
      const uint32_t nd = static_cast<uint32_t>(t.shape.size());
      f.write(reinterpret_cast<const char*>(&nd), 4);
      for (int64_t d : t.shape) f.write(reinterpret_cast<const char*>(&d), 8);
      f.write(reinterpret_cast<const char*>(t.ptr()),
              static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(t.numel())));
    }
  }
  std::remove(path.c_str());
  std::rename(tmp.c_str(), path.c_str());
}

inline std::map<std::string, Tensor<double>> load(const std::string& path,
                                                  std::string* config_text = nullptr) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  if (std::memcmp(magic, kMagic, 8) != 0) throw IoError("bad checkpoint magic: " + path);
  uint32_t version = 0;
  f.read(reinterpret_cast<char*>(&version), 4);
  if (version != 1) throw IoError("unsupported checkpoint version");
  uint64_t clen = 0;
  f.read(reinterpret_cast<char*>(&clen), 8);
  std::string cfg(clen, '\0');
  f.read(cfg.data(), static_cast<std::streamsize>(clen));
  if (config_text) *config_text = cfg;
  uint64_t n = 0;
  f.read(reinterpret_cast<char*>(&n), 8);
  std::map<std::string, Tensor<double>> out;
  for (uint64_t i = 0; i < n; ++i) {
    uint32_t nlen = 0;
    f.read(reinterpret_cast<char*>(&nlen), 4);
    std::string name(nlen, '\0');
    f.read(name.data(), nlen);
    uint32_t nd = 0;
    f.read(reinterpret_cast<char*>(&nd), 4);
    Shape shape(nd);
    for (auto& d : shape) f.read(reinterpret_cast<char*>(&d), 8);
    Tensor<double> t(shape);
    f.read(reinterpret_cast<char*>(t.ptr()),
           static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(t.numel())));
    out.emplace(std::move(name), std::move(t));
  }
  if (!f) throw IoError("truncated checkpoint: " + path);
  return out;
}

}  // namespace ckpt
}  // namespace fusedet
