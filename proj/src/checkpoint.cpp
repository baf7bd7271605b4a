#include "awmoe/checkpoint.hpp"

#include <cstring>
#include <stdexcept>

#include "awmoe/bytes.hpp"

namespace awmoe::ckpt {

namespace {
constexpr char kMagic[4] = {'A', 'W', 'C', 'K'};
constexpr uint32_t kVersion = 1;
}  // namespace

std::vector<uint8_t> serialize(const NamedTensors& entries) {
  bytes::Writer w;
  w.raw(kMagic, 4);
  w.u32(kVersion);
  w.u64(entries.size());
  for (const auto& [name, t] : entries) {
    if (name.size() > 0xffff) throw std::invalid_argument("checkpoint: tensor name too long");
    w.u16(static_cast<uint16_t>(name.size()));
    w.raw(name.data(), name.size());
    w.u8(static_cast<uint8_t>(t.shape.size()));
    for (int d : t.shape) w.u32(static_cast<uint32_t>(d));
    for (float v : t.data) w.f32(v);
  }
  return w.take();
}

NamedTensors deserialize(const std::vector<uint8_t>& raw) {
  bytes::Reader r(raw);
  char magic[4];
  for (char& c : magic) c = static_cast<char>(r.u8());
  if (std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("checkpoint: bad magic");
  if (r.u32() != kVersion) throw std::runtime_error("checkpoint: unsupported version");
  const uint64_t count = r.u64();
  NamedTensors entries;
  entries.reserve(count);
  for (uint64_t i = 0; i < count; ++i) {
    std::string name = r.str(r.u16());
    const uint8_t ndim = r.u8();
    std::vector<int> shape(ndim);
    for (auto& d : shape) d = static_cast<int>(r.u32());
    nn::Tensor t(shape);
    for (auto& v : t.data) v = r.f32();
    entries.emplace_back(std::move(name), std::move(t));
  }
  return entries;
}

void save(const std::string& path, const NamedTensors& entries) {
  bytes::write_file(path, serialize(entries));
}

NamedTensors load(const std::string& path) { return deserialize(bytes::read_file(path)); }

uint64_t fnv1a64(const uint8_t* data, size_t len) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < len; ++i) {
    h ^= data[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t hash_tensors(const NamedTensors& entries) {
  const auto raw = serialize(entries);
  return fnv1a64(raw.data(), raw.size());
}

uint64_t hash_tensor(const nn::Tensor& t) {
  NamedTensors one;
  one.emplace_back("t", t);
  return hash_tensors(one);
}

}  // namespace awmoe::ckpt
