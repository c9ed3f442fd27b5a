#pragma once

// Versioned, self-describing binary checkpoint container: a JSON metadata
// block plus named float tensors (parameters, normalization buffers,
// optimizer moments) and named serialized RNG streams. Writing the same
// contents yields bit-identical files.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "icell/common.hpp"
#include "icell/image.hpp"  // detail::write_u64 / read_u64
#include "icell/tensor.hpp"

namespace icell {

inline constexpr char kCheckpointMagic[] = "ICCKPT1\n";
inline constexpr std::uint32_t kCheckpointVersion = 1;

class Checkpoint {
 public:
  nlohmann::json meta;

  void add_tensor(const std::string& name, Tensor<float> t) {
    for (const auto& [n, _] : tensors_)
      check_value(n != name, "checkpoint: duplicate tensor name " + name);
    tensors_.emplace_back(name, std::move(t));
  }

  const Tensor<float>& tensor(const std::string& name) const {
    for (const auto& [n, t] : tensors_)
      if (n == name) return t;
    throw io_error("checkpoint: missing tensor " + name);
  }

  bool has_tensor(const std::string& name) const {
    for (const auto& [n, _] : tensors_)
      if (n == name) return true;
    return false;
  }

  void add_rng(const std::string& name, const std::string& state) {
    rngs_.emplace_back(name, state);
  }

  const std::string& rng(const std::string& name) const {
    for (const auto& [n, s] : rngs_)
      if (n == name) return s;
    throw io_error("checkpoint: missing rng stream " + name);
  }

  const std::vector<std::pair<std::string, Tensor<float>>>& tensors() const {
    return tensors_;
  }

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw io_error("cannot open for writing: " + path);
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic) - 1);
    write_u32(os, kCheckpointVersion);
    const std::string m = meta.dump();
    detail::write_u64(os, m.size());
    os.write(m.data(), static_cast<std::streamsize>(m.size()));
    detail::write_u64(os, tensors_.size());
    for (const auto& [name, t] : tensors_) {
      write_string(os, name);
      write_u32(os, static_cast<std::uint32_t>(t.rank()));
      for (int d : t.shape()) write_u32(os, static_cast<std::uint32_t>(d));
      os.write(reinterpret_cast<const char*>(t.data()),
               static_cast<std::streamsize>(t.numel() * sizeof(float)));
    }
    detail::write_u64(os, rngs_.size());
    for (const auto& [name, state] : rngs_) {
      write_string(os, name);
      write_string(os, state);
    }
    if (!os) throw io_error("write failed: " + path);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open checkpoint: " + path);
    char magic[sizeof(kCheckpointMagic) - 1];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
      throw io_error("not a checkpoint file: " + path);
    const std::uint32_t version = read_u32(is);
    if (version != kCheckpointVersion)
      throw io_error("unsupported checkpoint version " +
                     std::to_string(version) + " in " + path);
    Checkpoint ck;
    const std::uint64_t mlen = detail::read_u64(is);
    std::string m(mlen, '\0');
    is.read(m.data(), static_cast<std::streamsize>(mlen));
    if (!is) throw io_error("truncated checkpoint metadata: " + path);
    try {
      ck.meta = nlohmann::json::parse(m);
    } catch (const nlohmann::json::exception& e) {
      throw io_error("corrupt checkpoint metadata in " + path + ": " + e.what());
    }
    const std::uint64_t nt = detail::read_u64(is);
    for (std::uint64_t i = 0; i < nt; ++i) {
      const std::string name = read_string(is);
      const std::uint32_t rank = read_u32(is);
      std::vector<int> shape;
      for (std::uint32_t d = 0; d < rank; ++d)
        shape.push_back(static_cast<int>(read_u32(is)));
      Tensor<float> t(shape);
      is.read(reinterpret_cast<char*>(t.data()),
              static_cast<std::streamsize>(t.numel() * sizeof(float)));
      if (!is) throw io_error("truncated tensor data in " + path);
      ck.tensors_.emplace_back(name, std::move(t));
    }
    const std::uint64_t nr = detail::read_u64(is);
    for (std::uint64_t i = 0; i < nr; ++i) {
      const std::string name = read_string(is);
      ck.rngs_.emplace_back(name, read_string(is));
    }
    return ck;
  }

 private:
  static void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 4);
  }
  static std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw io_error("unexpected end of checkpoint stream");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }
  static void write_string(std::ostream& os, const std::string& s) {
    detail::write_u64(os, s.size());
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  static std::string read_string(std::istream& is) {
    const std::uint64_t n = detail::read_u64(is);
    std::string s(n, '\0');
    is.read(s.data(), static_cast<std::streamsize>(n));
    if (!is) throw io_error("unexpected end of checkpoint stream");
    return s;
  }

  std::vector<std::pair<std::string, Tensor<float>>> tensors_;
  std::vector<std::pair<std::string, std::string>> rngs_;
};

}  // namespace icell
