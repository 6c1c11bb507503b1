#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "stad/io.hpp"
#include "stad/tensor.hpp"

namespace stad {

// Checkpoint archive: a JSON manifest followed by named float32 tensors.
//   "STADCKP1" | u64 manifest_len | manifest | n | {u32 name_len, name,
//   u32 ndim, i32 dims..., f32 data...} x n
struct Checkpoint {
  nlohmann::json manifest;
  std::map<std::string, Tensor<float>> tensors;

  std::string serialize() const {
    std::ostringstream os(std::ios::binary);
    os.write("STADCKP1", 8);
    const std::string m = manifest.dump();
    write_u64(os, m.size());
    os.write(m.data(), static_cast<std::streamsize>(m.size()));
    write_u64(os, tensors.size());
    for (const auto& [name, t] : tensors) {
      write_u32(os, static_cast<std::uint32_t>(name.size()));
      os.write(name.data(), static_cast<std::streamsize>(name.size()));
      write_u32(os, static_cast<std::uint32_t>(t.shape.size()));
      for (int d : t.shape) write_u32(os, static_cast<std::uint32_t>(d));
      os.write(reinterpret_cast<const char*>(t.data.data()),
               static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    }
    return os.str();
  }

  static Checkpoint deserialize(const std::string& blob) {
    Checkpoint ck;
    std::istringstream is(blob, std::ios::binary);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, "STADCKP1", 8) != 0)
      throw std::runtime_error("checkpoint: bad magic");
    const std::uint64_t mlen = read_u64(is);
    std::string m(mlen, '\0');
    is.read(m.data(), static_cast<std::streamsize>(mlen));
    ck.manifest = nlohmann::json::parse(m);
    const std::uint64_t n = read_u64(is);
    for (std::uint64_t i = 0; i < n; ++i) {
      const std::uint32_t nlen = read_u32(is);
      std::string name(nlen, '\0');
      is.read(name.data(), nlen);
      const std::uint32_t ndim = read_u32(is);
      std::vector<int> shape(ndim);
      for (auto& d : shape) d = static_cast<int>(read_u32(is));
      Tensor<float> t(shape);
      is.read(reinterpret_cast<char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(float)));
      if (!is) throw std::runtime_error("checkpoint: truncated tensor " + name);
      ck.tensors.emplace(std::move(name), std::move(t));
    }
    return ck;
  }

  void save(const std::filesystem::path& path) const { atomic_write_file(path, serialize()); }

  static Checkpoint load(const std::filesystem::path& path) {
    return deserialize(read_file(path));
  }

 private:
  static void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  static void write_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  static std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw std::runtime_error("checkpoint: truncated");
    return v;
  }
  static std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw std::runtime_error("checkpoint: truncated");
    return v;
  }
};

}  // namespace stad
