#include "anyres/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "anyres/errors.hpp"
#include "anyres/rng.hpp"

namespace anyres {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'A', 'N', 'Y', 'R', 'E', 'S', 'C', 'K'};

std::uint64_t fnv_bytes(const std::uint8_t* data, std::size_t n) {
  std::uint64_t h = 1469598103934665603ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= data[i];
    h *= 1099511628211ULL;
  }
  return h;
}

class Writer {
 public:
  template <class T>
  void pod(const T& v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + sizeof(T));
  }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    out.insert(out.end(), p, p + n);
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : bytes(b) {}
  template <class T>
  T pod() {
    T v;
    std::memcpy(&v, take(sizeof(T)), sizeof(T));
    return v;
  }
  const std::uint8_t* take(std::size_t n) {
    if (n > bytes.size() - pos) throw FormatError("checkpoint is truncated");
    const std::uint8_t* p = bytes.data() + pos;
    pos += n;
    return p;
  }
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;
};

}  // namespace

void Checkpoint::put(const std::string& prefix, const nn::ParamSet& params) {
  for (const auto& p : params.all()) blobs[prefix + p.name] = p.data;
}

bool Checkpoint::has(const std::string& prefix, const nn::ParamSet& params) const {
  for (const auto& p : params.all()) {
    auto it = blobs.find(prefix + p.name);
    if (it == blobs.end() || it->second.size() != p.data.size()) return false;
  }
  return true;
}

void Checkpoint::get(const std::string& prefix, nn::ParamSet& params) const {
  for (auto& p : params.all()) {
    auto it = blobs.find(prefix + p.name);
    if (it == blobs.end()) throw FormatError("checkpoint lacks tensor " + prefix + p.name);
    if (it->second.size() != p.data.size()) {
      throw FormatError("checkpoint tensor " + prefix + p.name + " has " + std::to_string(it->second.size()) +
                        " values, expected " + std::to_string(p.data.size()));
    }
    p.data = it->second;
  }
}

std::vector<std::uint8_t> serialize(const Checkpoint& ck) {
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.pod(kCheckpointVersion);
  w.pod(ck.config_hash);
  w.pod(static_cast<std::uint64_t>(ck.meta.size()));
  w.raw(ck.meta.data(), ck.meta.size());
  w.pod(static_cast<std::uint32_t>(ck.blobs.size()));
  for (const auto& [name, data] : ck.blobs) {
    w.pod(static_cast<std::uint32_t>(name.size()));
    w.raw(name.data(), name.size());
    w.pod(static_cast<std::uint64_t>(data.size()));
    w.raw(data.data(), data.size() * sizeof(double));
  }
  w.pod(fnv_bytes(w.out.data(), w.out.size()));
  return std::move(w.out);
}

Checkpoint deserialize(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (std::memcmp(r.take(sizeof(kMagic)), kMagic, sizeof(kMagic)) != 0) throw FormatError("not a checkpoint file");
  const auto version = r.pod<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint format version " + std::to_string(version) + " is not supported (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  }
  if (bytes.size() < sizeof(std::uint64_t) + r.pos) throw FormatError("checkpoint is truncated");
  std::uint64_t stored;
  std::memcpy(&stored, bytes.data() + bytes.size() - sizeof(stored), sizeof(stored));
  Checkpoint ck;
  ck.config_hash = r.pod<std::uint64_t>();
  const auto meta_len = r.pod<std::uint64_t>();
  if (meta_len > bytes.size()) throw FormatError("checkpoint is truncated");
  const auto* meta = r.take(meta_len);
  ck.meta.assign(reinterpret_cast<const char*>(meta), meta_len);
  const auto count = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.pod<std::uint32_t>();
    const auto* name = r.take(name_len);
    const auto n = r.pod<std::uint64_t>();
    if (n > bytes.size() / sizeof(double)) throw FormatError("checkpoint is truncated");
    std::vector<double> data(n);
    std::memcpy(data.data(), r.take(n * sizeof(double)), n * sizeof(double));
    ck.blobs.emplace(std::string(reinterpret_cast<const char*>(name), name_len), std::move(data));
  }
  const std::size_t body = r.pos;
  if (r.pod<std::uint64_t>() != stored || r.pos != bytes.size()) throw FormatError("checkpoint has trailing or missing bytes");
  if (fnv_bytes(bytes.data(), body) != stored) throw FormatError("checkpoint checksum mismatch");
  return ck;
}

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  const auto bytes = serialize(ck);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::invalid_argument("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace anyres
