#include "prockd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <zlib.h>

#include "prockd/error.hpp"

namespace prockd::harness {
namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

constexpr std::uint8_t kDtypeF64 = 1;

template <typename T>
void put(std::string& out, T value) {
  char buf[sizeof(T)];
  std::memcpy(buf, &value, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) fail(Errc::FormatError, "checkpoint truncated");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size()));
  return static_cast<std::uint32_t>(crc);
}

}  // namespace

std::string serialize_checkpoint(const ParamList& tensors) {
  std::set<std::string> names;
  std::string out(kCheckpointMagic, 8);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  std::string payload;
  for (const auto& [name, t] : tensors) {
    if (!names.insert(name).second) fail(Errc::FormatError, "duplicate checkpoint entry " + name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, kDtypeF64);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(out, d);
    for (double v : t.data()) put<double>(payload, v);
  }
  out += payload;
  put<std::uint32_t>(out, crc32_of(payload));
  return out;
}

ParamList deserialize_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(8) != std::string_view(kCheckpointMagic, 8)) fail(Errc::FormatError, "bad checkpoint magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    fail(Errc::VersionUnsupported, "checkpoint version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  struct Entry {
    std::string name;
    Shape shape;
  };
  std::vector<Entry> entries;
  std::set<std::string> names;
  std::size_t values = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    Entry e;
    e.name = std::string(r.take(r.get<std::uint32_t>()));
    if (!names.insert(e.name).second) fail(Errc::FormatError, "duplicate checkpoint entry " + e.name);
    if (r.get<std::uint8_t>() != kDtypeF64) fail(Errc::FormatError, "unsupported dtype for " + e.name);
    const auto rank = r.get<std::uint32_t>();
    if (rank == 0) fail(Errc::FormatError, "zero-rank entry " + e.name);
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto dim = r.get<std::uint64_t>();
      if (dim == 0) fail(Errc::FormatError, "zero dimension in " + e.name);
      e.shape.push_back(dim);
    }
    values += shape_numel(e.shape);
    entries.push_back(std::move(e));
  }
  if (r.remaining() != values * sizeof(double) + sizeof(std::uint32_t))
    fail(Errc::FormatError, "checkpoint payload size mismatch");
  const auto payload = r.take(values * sizeof(double));
  const auto stored = r.get<std::uint32_t>();
  if (stored != crc32_of(payload)) fail(Errc::ChecksumMismatch, "checkpoint payload CRC mismatch");

  ParamList out;
  std::size_t offset = 0;
  for (auto& e : entries) {
    std::vector<double> data(shape_numel(e.shape));
    std::memcpy(data.data(), payload.data() + offset, data.size() * sizeof(double));
    offset += data.size() * sizeof(double);
    out.push_back({std::move(e.name), Tensor(std::move(e.shape), std::move(data))});
  }
  return out;
}

void save_checkpoint(const std::string& path, const ParamList& tensors) {
  const auto bytes = serialize_checkpoint(tensors);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(Errc::IoError, "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(Errc::IoError, "write failed for " + path);
}

ParamList load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::IoError, "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str());
}

const Tensor* find_tensor(const ParamList& tensors, std::string_view name) {
  for (const auto& p : tensors)
    if (p.name == name) return &p.tensor;
  return nullptr;
}

void restore(const ParamList& target, const ParamList& source, const std::string& prefix) {
  for (const auto& p : target) {
    const Tensor* src = find_tensor(source, prefix + p.name);
    if (src == nullptr) fail(Errc::FormatError, "checkpoint lacks " + prefix + p.name);
    if (src->shape() != p.tensor.shape())
      fail(Errc::FormatError, "shape mismatch for " + prefix + p.name + ": " + shape_str(src->shape()) + " vs " +
                                  shape_str(p.tensor.shape()));
    Tensor dst = p.tensor;
    auto out = dst.mutable_data();
    std::copy(src->data().begin(), src->data().end(), out.begin());
  }
}

Tensor text_tensor(std::string_view text) {
  std::vector<double> bytes;
  for (unsigned char c : text) bytes.push_back(static_cast<double>(c));
  if (bytes.empty()) bytes.push_back(0.0);
  const std::size_t n = bytes.size();
  return Tensor({n}, std::move(bytes));
}

std::string tensor_text(const Tensor& t) {
  std::string out;
  for (double v : t.data())
    if (v != 0.0) out.push_back(static_cast<char>(static_cast<unsigned char>(v)));
  return out;
}

}  // namespace prockd::harness
