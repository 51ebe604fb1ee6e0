#pragma once

// Tensor archive used for every checkpoint-like artifact (generators,
// encoders, prototype sets, latent files).
//
// Layout, all integers little-endian:
//   8 bytes   magic "SMISARC1"
//   u64       metadata byte length N
//   N bytes   metadata, UTF-8 JSON
//   u32       tensor count
//   per tensor, in ascending name order:
//     u32     name byte length, then the name bytes
//     u32     rank R, then R x u32 dimensions
//     f32[]   prod(dims) values, IEEE-754 binary32 little-endian, row-major

#include <openssl/evp.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "smis/nn/layers.hpp"
#include "smis/tensor.hpp"

namespace smis {

static_assert(std::endian::native == std::endian::little, "archive I/O assumes a little-endian host");

using json = nlohmann::json;

struct TensorBlob {
  std::vector<int> shape;
  std::vector<float> data;
};

struct Archive {
  json meta = json::object();
  std::map<std::string, TensorBlob> tensors;

  template <typename T>
  void put(const std::string& name, std::vector<int> shape, const std::vector<T>& values) {
    TensorBlob b;
    b.shape = std::move(shape);
    b.data.assign(values.begin(), values.end());
    tensors[name] = std::move(b);
  }

  template <typename T>
  void put(const nn::Param<T>& p) {
    put(p.name, p.shape, p.value);
  }

  template <typename T>
  void put_params(const nn::ParamRefs<T>& ps) {
    for (auto* p : ps) put(*p);
  }

  const TensorBlob& get(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw InputError("archive is missing tensor '" + name + "'");
    return it->second;
  }

  template <typename T>
  void load(nn::Param<T>& p) const {
    const auto& b = get(p.name);
    if (b.data.size() != p.size())
      throw InputError("tensor '" + p.name + "' has " + std::to_string(b.data.size()) + " values, expected " +
                       std::to_string(p.size()));
    p.value.assign(b.data.begin(), b.data.end());
  }

  template <typename T>
  void load_params(const nn::ParamRefs<T>& ps) const {
    for (auto* p : ps) load(*p);
  }
};

namespace detail {

template <typename U>
void put_le(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

template <typename U>
U get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) throw InputError("archive truncated");
  U v;
  std::memcpy(&v, in.data() + pos, sizeof(U));
  pos += sizeof(U);
  return v;
}

}  // namespace detail

inline constexpr char kArchiveMagic[] = "SMISARC1";

inline std::string serialize(const Archive& a) {
  std::string out(kArchiveMagic, 8);
  const std::string meta = a.meta.dump(2);
  detail::put_le<std::uint64_t>(out, meta.size());
  out += meta;
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.tensors.size()));
  for (const auto& [name, blob] : a.tensors) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(blob.shape.size()));
    for (int d : blob.shape) detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    const auto* bytes = reinterpret_cast<const char*>(blob.data.data());
    out.append(bytes, blob.data.size() * sizeof(float));
  }
  return out;
}

inline Archive deserialize(const std::string& in) {
  if (in.size() < 8 || in.compare(0, 8, kArchiveMagic, 8) != 0) throw InputError("not a tensor archive (bad magic)");
  std::size_t pos = 8;
  Archive a;
  const auto meta_len = detail::get_le<std::uint64_t>(in, pos);
  if (pos + meta_len > in.size()) throw InputError("archive truncated");
  a.meta = json::parse(in.substr(pos, meta_len));
  pos += meta_len;
  const auto count = detail::get_le<std::uint32_t>(in, pos);
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = detail::get_le<std::uint32_t>(in, pos);
    if (pos + name_len > in.size()) throw InputError("archive truncated");
    std::string name = in.substr(pos, name_len);
    pos += name_len;
    TensorBlob b;
    const auto rank = detail::get_le<std::uint32_t>(in, pos);
    std::size_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      b.shape.push_back(static_cast<int>(detail::get_le<std::uint32_t>(in, pos)));
      n *= static_cast<std::size_t>(b.shape.back());
    }
    if (pos + n * sizeof(float) > in.size()) throw InputError("archive truncated");
    b.data.resize(n);
    std::memcpy(b.data.data(), in.data() + pos, n * sizeof(float));
    pos += n * sizeof(float);
    a.tensors.emplace(std::move(name), std::move(b));
  }
  return a;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

inline void save_archive(const Archive& a, const std::filesystem::path& path) { write_file(path, serialize(a)); }
inline Archive load_archive(const std::filesystem::path& path) { return deserialize(read_file(path)); }

// Lowercase hex SHA-256.
inline std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr);
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 0xf];
  }
  return out;
}

inline std::string archive_hash(const Archive& a) { return sha256_hex(serialize(a)); }

}  // namespace smis
