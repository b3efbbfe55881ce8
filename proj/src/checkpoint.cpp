#include "rdiff/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace rdiff::nn {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_string(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  void read_floats(float* dst, std::size_t n) {
    need(n * sizeof(float));
    std::memcpy(dst, bytes_.data() + pos_, n * sizeof(float));
    pos_ += n * sizeof(float);
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw LoadError("checkpoint: truncated file");
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string encode_checkpoint(const ParamStore<float>& store) {
  std::string out = "RDCK";
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(store.size()));
  for (const auto& p : store.params()) {
    if (p.name.size() > 0xFFFF) throw Error("checkpoint: parameter name too long");
    if (p.shape.size() > 0xFF) throw Error("checkpoint: too many dimensions");
    put<std::uint16_t>(out, static_cast<std::uint16_t>(p.name.size()));
    out += p.name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(p.shape.size()));
    for (auto d : p.shape) put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    out.append(reinterpret_cast<const char*>(p.value.data()), sizeof(float) * static_cast<std::size_t>(p.value.size()));
  }
  return out;
}

void save_checkpoint(const ParamStore<float>& store, const std::string& path) {
  const std::string bytes = encode_checkpoint(store);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("checkpoint: cannot open '" + path + "' for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("checkpoint: write failed for '" + path + "'");
}

ParamStore<float> decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.get_string(4) != "RDCK") throw LoadError("checkpoint: bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) throw LoadError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = r.get<std::uint32_t>();
  ParamStore<float> store;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>();
    std::string name = r.get_string(len);
    const auto ndim = r.get<std::uint8_t>();
    Shape shape;
    for (int d = 0; d < ndim; ++d) shape.push_back(r.get<std::uint32_t>());
    const auto [rows, cols] = storage_dims(shape);
    Matrix<float> value(rows, cols);
    r.read_floats(value.data(), static_cast<std::size_t>(value.size()));
    store.add(name, shape, std::move(value));
  }
  if (!r.done()) throw LoadError("checkpoint: trailing bytes");
  return store;
}

ParamStore<float> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError("checkpoint: cannot open '" + path + "'");
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

ParamStore<float> extract_prefix(const ParamStore<float>& store, const std::string& prefix) {
  ParamStore<float> out;
  for (const auto& p : store.params()) {
    if (p.name.rfind(prefix, 0) == 0) out.add(p.name.substr(prefix.size()), p.shape, p.value);
  }
  return out;
}

void merge_prefixed(ParamStore<float>& dst, const ParamStore<float>& src, const std::string& prefix) {
  for (const auto& p : src.params()) dst.add(prefix + p.name, p.shape, p.value);
}

}  // namespace rdiff::nn
