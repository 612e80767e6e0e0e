// SPDX-License-Identifier: Apache-2.0
#include "pfrec/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "pfrec/error.hpp"

namespace pfrec {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'P', 'F', 'R', 'C'};
constexpr std::uint8_t kDtypeF32 = 1;

template <typename U>
void put(std::string& out, U v) {
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename U>
  U get(const char* what) {
    U v;
    std::memcpy(&v, take(sizeof(U), what).data(), sizeof(U));
    return v;
  }

  std::string_view take(std::size_t n, const char* what) {
    if (bytes_.size() - pos_ < n) {
      throw DataError(std::string("checkpoint truncated while reading ") + what);
    }
    const auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const ParamStore<float>& store, std::string_view prefix) {
  const auto names = store.names(prefix);
  std::string out(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(names.size()));
  uLong crc = crc32(0L, Z_NULL, 0);
  for (const auto& name : names) {
    const Tensor<float>& t = store.value(name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, kDtypeF32);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t e : t.shape()) put<std::uint64_t>(out, e);
    const auto* bytes = reinterpret_cast<const char*>(t.data());
    const std::size_t n = t.size() * sizeof(float);
    out.append(bytes, n);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes), static_cast<uInt>(n));
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(crc));
  return out;
}

ParamStore<float> decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  if (r.take(4, "magic") != std::string_view(kMagic, 4)) {
    throw DataError("checkpoint: bad magic (not a PFRC file)");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw DataError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto count = r.get<std::uint32_t>("entry count");
  ParamStore<float> store;
  uLong crc = crc32(0L, Z_NULL, 0);
  std::string previous;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint32_t>("name length");
    std::string name(r.take(len, "name"));
    if (i > 0 && !(previous < name)) {
      throw DataError("checkpoint: entries not sorted at '" + name + "'");
    }
    const auto dtype = r.get<std::uint8_t>("dtype");
    if (dtype != kDtypeF32) {
      throw DataError("checkpoint: unsupported dtype " + std::to_string(dtype) + " for '" +
                      name + "'");
    }
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank > 8) throw DataError("checkpoint: implausible rank for '" + name + "'");
    Shape shape;
    std::size_t size = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      const auto e = r.get<std::uint64_t>("extent");
      if (e != 0 && size > r.remaining() / e) {
        throw DataError("checkpoint truncated while reading payload of '" + name + "'");
      }
      size *= e;
      shape.push_back(static_cast<std::size_t>(e));
    }
    const auto payload = r.take(size * sizeof(float), "payload");
    crc = crc32(crc, reinterpret_cast<const Bytef*>(payload.data()),
                static_cast<uInt>(payload.size()));
    Tensor<float> t(shape);
    std::memcpy(t.data(), payload.data(), payload.size());
    store.add(name, std::move(t));
    previous = std::move(name);
  }
  const auto stored = r.get<std::uint32_t>("checksum");
  if (stored != static_cast<std::uint32_t>(crc)) {
    throw DataError("checkpoint: checksum mismatch");
  }
  if (r.remaining() != 0) throw DataError("checkpoint: trailing bytes after checksum");
  return store;
}

void save_checkpoint(const std::string& path, const ParamStore<float>& store,
                     std::string_view prefix) {
  const std::string bytes = encode_checkpoint(store, prefix);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing checkpoint '" + path + "'");
}

ParamStore<float> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return decode_checkpoint(buf.str());
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

}  // namespace pfrec
