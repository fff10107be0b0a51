#include "mstaf/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "mstaf/error.hpp"

namespace mstaf {
namespace {

constexpr char kMagic[8] = {'M', 'S', 'T', 'A', 'F', 'C', 'K', 'P'};
constexpr char kTrailer[4] = {'E', 'N', 'D', '.'};

template <typename T>
constexpr std::uint8_t dtype_code() {
  return sizeof(T) == 4 ? 1 : 2;
}

class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}
  void bytes(const void* p, std::size_t n) { os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }
  void uint(std::uint64_t v, int width) {
    unsigned char buf[8];
    for (int i = 0; i < width; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(buf, static_cast<std::size_t>(width));
  }
  void u8(std::uint8_t v) { uint(v, 1); }
  void u32(std::uint32_t v) { uint(v, 4); }
  void u64(std::uint64_t v) { uint(v, 8); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  template <typename T>
  void value(T v) {
    if constexpr (sizeof(T) == 4) {
      std::uint32_t u;
      std::memcpy(&u, &v, 4);
      u32(u);
    } else {
      std::uint64_t u;
      std::memcpy(&u, &v, 8);
      u64(u);
    }
  }

 private:
  std::ostream& os_;
};

class Reader {
 public:
  Reader(std::istream& is, std::string path) : is_(is), path_(std::move(path)) {}
  void bytes(void* p, std::size_t n, const std::string& what) {
    is_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n)
      throw LoadError(path_ + ": truncated checkpoint while reading " + what);
  }
  std::uint64_t uint(int width, const std::string& what) {
    unsigned char buf[8];
    bytes(buf, static_cast<std::size_t>(width), what);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
  }
  std::string str(const std::string& what, std::uint32_t limit = 1u << 20) {
    const auto n = static_cast<std::uint32_t>(uint(4, what));
    if (n > limit) throw LoadError(path_ + ": implausible length for " + what);
    std::string s(n, '\0');
    bytes(s.data(), n, what);
    return s;
  }
  template <typename T>
  T value(const std::string& what) {
    T v;
    if constexpr (sizeof(T) == 4) {
      const auto u = static_cast<std::uint32_t>(uint(4, what));
      std::memcpy(&v, &u, 4);
    } else {
      const auto u = uint(8, what);
      std::memcpy(&v, &u, 8);
    }
    return v;
  }
  const std::string& path() const { return path_; }

 private:
  std::istream& is_;
  std::string path_;
};

ModelConfig read_header(Reader& r) {
  char magic[8];
  r.bytes(magic, 8, "magic");
  if (std::memcmp(magic, kMagic, 8) != 0) throw LoadError(r.path() + ": not an MSTAF checkpoint");
  const auto version = static_cast<std::uint32_t>(r.uint(4, "version"));
  if (version != kCheckpointVersion)
    throw LoadError(r.path() + ": checkpoint format version " + std::to_string(version) + ", expected " +
                    std::to_string(kCheckpointVersion));
  const auto text = r.str("config");
  try {
    auto cfg = ModelConfig::from_kv(KeyValues::parse(text, r.path()));
    cfg.validate();
    return cfg;
  } catch (const ConfigError& e) {
    throw LoadError(r.path() + ": invalid stored config: " + e.what());
  }
}

}  // namespace

template <typename T>
void save_checkpoint(const ParamStore<T>& params, const ModelConfig& cfg, const std::filesystem::path& path) {
  std::ostringstream os(std::ios::binary);
  Writer w(os);
  w.bytes(kMagic, 8);
  w.u32(kCheckpointVersion);
  w.str(cfg.to_kv().to_text());
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params.entries()) {
    w.str(name);
    w.u8(dtype_code<T>());
    w.u32(static_cast<std::uint32_t>(t.ndim()));
    for (auto d : t.shape()) w.u64(static_cast<std::uint64_t>(d));
    w.u64(static_cast<std::uint64_t>(t.numel()) * sizeof(T));
    for (T v : t.data()) w.value(v);
  }
  w.bytes(kTrailer, 4);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  const auto blob = os.str();
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

template <typename T>
std::pair<ParamStore<T>, ModelConfig> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  Reader r(in, path.string());
  auto cfg = read_header(r);
  const auto expected = init_params<T>(cfg, 0);

  const auto count = static_cast<std::uint32_t>(r.uint(4, "tensor count"));
  if (count != expected.size())
    throw LoadError(path.string() + ": holds " + std::to_string(count) + " tensors, config implies " +
                    std::to_string(expected.size()));
  ParamStore<T> params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name = r.str("tensor name");
    const auto& want = expected.entries()[i];
    if (name != want.first)
      throw LoadError(path.string() + ": tensor " + std::to_string(i) + " is '" + name + "', expected '" +
                      want.first + "'");
    const auto dtype = static_cast<std::uint8_t>(r.uint(1, name + " dtype"));
    if (dtype != dtype_code<T>())
      throw LoadError(path.string() + ": tensor '" + name + "' has dtype code " + std::to_string(dtype) +
                      ", expected " + std::to_string(dtype_code<T>()));
    const auto ndim = static_cast<std::uint32_t>(r.uint(4, name + " rank"));
    if (ndim > 8) throw LoadError(path.string() + ": tensor '" + name + "' has implausible rank");
    Shape shape(ndim);
    for (auto& d : shape) d = static_cast<std::int64_t>(r.uint(8, name + " shape"));
    if (shape != want.second.shape())
      throw LoadError(path.string() + ": tensor '" + name + "' has shape " + shape_str(shape) + ", expected " +
                      shape_str(want.second.shape()));
    const auto nbytes = r.uint(8, name + " size");
    if (nbytes != static_cast<std::uint64_t>(numel(shape)) * sizeof(T))
      throw LoadError(path.string() + ": tensor '" + name + "' payload size disagrees with its shape");
    std::vector<T> data(static_cast<std::size_t>(numel(shape)));
    for (auto& v : data) v = r.template value<T>(name + " data");
    params.add(name, Tensor<T>::from_data(std::move(shape), std::move(data)));
  }
  char trailer[4];
  r.bytes(trailer, 4, "trailer");
  if (std::memcmp(trailer, kTrailer, 4) != 0) throw LoadError(path.string() + ": bad trailer");
  return {std::move(params), std::move(cfg)};
}

ModelConfig read_checkpoint_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  Reader r(in, path.string());
  return read_header(r);
}

template void save_checkpoint<float>(const ParamStore<float>&, const ModelConfig&, const std::filesystem::path&);
template void save_checkpoint<double>(const ParamStore<double>&, const ModelConfig&, const std::filesystem::path&);
template std::pair<ParamStore<float>, ModelConfig> load_checkpoint<float>(const std::filesystem::path&);
template std::pair<ParamStore<double>, ModelConfig> load_checkpoint<double>(const std::filesystem::path&);

}  // namespace mstaf
