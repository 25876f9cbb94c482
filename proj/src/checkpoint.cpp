#include "transzero/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace tz {

namespace {

constexpr char kMagic[4] = {'T', 'Z', 'C', 'K'};

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename T>
  void le(T v) {
    std::uint8_t buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    bytes(buf, sizeof(T));
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}
  void bytes(void* p, std::size_t n) {
    if (pos_ + n > in_.size()) throw ResourceError("checkpoint truncated at byte " + std::to_string(pos_));
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T le() {
    std::uint8_t buf[sizeof(T)];
    bytes(buf, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(buf, buf + sizeof(T));
    T v;
    std::memcpy(&v, buf, sizeof(T));
    return v;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::uint64_t fnv1a64(const void* data, std::size_t size, std::uint64_t seed) {
  const auto* b = static_cast<const std::uint8_t*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= b[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, sizeof kMagic);
  w.le<std::uint32_t>(ckpt.version);
  w.le<std::uint64_t>(ckpt.config_hash);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(ckpt.records.size()));
  for (const auto& r : ckpt.records) {
    std::uint64_t count = 1;
    for (auto d : r.dims) count *= d;
    if (count != r.values.size()) {
      throw DimensionError("checkpoint record " + r.name + " has " + std::to_string(r.values.size()) +
                           " values for its shape");
    }
    w.le<std::uint32_t>(static_cast<std::uint32_t>(r.name.size()));
    w.bytes(r.name.data(), r.name.size());
    w.le<std::uint32_t>(static_cast<std::uint32_t>(r.dims.size()));
    for (auto d : r.dims) w.le<std::uint64_t>(d);
    for (float v : r.values) w.le<float>(v);
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw ResourceError("not a checkpoint file (bad magic)");
  Checkpoint ckpt;
  ckpt.version = r.le<std::uint32_t>();
  if (ckpt.version != kCheckpointVersion) {
    throw ResourceError("unsupported checkpoint version " + std::to_string(ckpt.version));
  }
  ckpt.config_hash = r.le<std::uint64_t>();
  const auto count = r.le<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointRecord rec;
    rec.name.resize(r.le<std::uint32_t>());
    r.bytes(rec.name.data(), rec.name.size());
    const auto rank = r.le<std::uint32_t>();
    std::uint64_t total = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      rec.dims.push_back(r.le<std::uint64_t>());
      total *= rec.dims.back();
    }
    if (total > bytes.size()) throw ResourceError("checkpoint record " + rec.name + " claims too many values");
    rec.values.resize(static_cast<std::size_t>(total));
    for (auto& v : rec.values) v = r.le<float>();
    ckpt.records.push_back(std::move(rec));
  }
  if (!r.done()) throw ResourceError("trailing bytes after checkpoint records");
  return ckpt;
}

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ResourceError("cannot open " + tmp + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ResourceError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ResourceError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace tz
