#include "egoattn/checkpoint.h"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include "egoattn/errors.h"

namespace egoattn {

namespace {

constexpr char kMagic[8] = {'E', 'G', 'O', 'A', 'T', 'T', 'N', '1'};

template <class T>
void put(std::ostream& os, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  os.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::filesystem::path& path) {
  unsigned char bytes[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw IoError("truncated checkpoint: " + path.string());
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamList& params) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write checkpoint: " + path.string());
  os.write(kMagic, sizeof kMagic);
  put<std::uint64_t>(os, params.size());
  for (const auto& [name, t] : params) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(os, d);
    for (double v : t.data()) put<double>(os, v);
  }
  if (!os) throw IoError("failed writing checkpoint: " + path.string());
}

ParamList load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path.string());
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw IoError("not an EGOATTN1 checkpoint: " + path.string());
  }
  const auto count = get<std::uint64_t>(is, path);
  ParamList out;
  for (std::uint64_t r = 0; r < count; ++r) {
    const auto len = get<std::uint32_t>(is, path);
    if (len > 4096) throw IoError("corrupt parameter name in checkpoint: " + path.string());
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw IoError("truncated checkpoint: " + path.string());
    const auto rank = get<std::uint32_t>(is, path);
    if (rank > 8) throw IoError("corrupt rank in checkpoint: " + path.string());
    Shape shape(rank);
    for (auto& d : shape) d = get<std::uint64_t>(is, path);
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = get<double>(is, path);
    out.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  return out;
}

void assign_params(const ParamList& target, const ParamList& source) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& p : source) by_name[p.name] = &p.tensor;
  for (const auto& [name, t] : target) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError("checkpoint lacks parameter '" + name + "'");
    if (it->second->shape() != t.shape()) {
      throw ConfigError("checkpoint/config shape mismatch for '" + name + "': checkpoint " +
                        shape_str(it->second->shape()) + ", model " + shape_str(t.shape()));
    }
    Tensor dst = t;
    std::copy(it->second->data().begin(), it->second->data().end(), dst.data().begin());
  }
}

std::uint64_t param_checksum(const ParamList& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& [name, t] : params) {
    feed(name.data(), name.size());
    for (auto d : t.shape()) feed(&d, sizeof d);
    feed(t.data().data(), t.numel() * sizeof(double));
  }
  return h;
}

ParamList with_prefix(const std::string& prefix, ParamList params) {
  for (auto& p : params) p.name = prefix + p.name;
  return params;
}

}  // namespace egoattn
