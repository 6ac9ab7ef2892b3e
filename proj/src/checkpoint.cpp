#include "dricl/checkpoint.hpp"

#include <boost/crc.hpp>
#include <cstring>
#include <fstream>
#include <iterator>

namespace dricl {

namespace {

constexpr char kMagic[8] = {'D', 'R', 'I', 'C', 'L', 'C', 'K', 'P'};

class Writer {
 public:
  template <typename T>
  void put(const T& v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  std::vector<char>& bytes() { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  explicit Reader(const std::vector<char>& bytes, std::size_t end) : bytes_(bytes), end_(end) {}
  template <typename T>
  T get() {
    T v;
    get_bytes(&v, sizeof(T));
    return v;
  }
  void get_bytes(void* out, std::size_t n) {
    if (pos_ + n > end_) throw ChecksumError("corrupted checkpoint: unexpected end of data");
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  [[nodiscard]] std::size_t pos() const { return pos_; }

 private:
  const std::vector<char>& bytes_;
  std::size_t end_;
  std::size_t pos_ = 0;
};

std::uint32_t crc32(const char* data, std::size_t n) {
  boost::crc_32_type crc;
  crc.process_bytes(data, n);
  return crc.checksum();
}

std::vector<char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct Header {
  std::uint32_t scalar_bytes = 0;
  ModelDims dims;
  Vocabulary vocab;
};

// Validates magic, version, and checksum; leaves the reader after the vocabulary.
Header read_header(const std::vector<char>& bytes, Reader& r) {
  if (bytes.size() < sizeof(kMagic) + sizeof(std::uint32_t) ||
      std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw Error("not a checkpoint file (bad magic)");
  }
  char magic[8];
  r.get_bytes(magic, sizeof(magic));
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw VersionError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                       std::to_string(kCheckpointVersion) + ")");
  }
  if (bytes.size() < sizeof(kMagic) + 2 * sizeof(std::uint32_t)) throw ChecksumError("corrupted checkpoint: truncated");
  const std::size_t body = bytes.size() - sizeof(std::uint32_t);
  std::uint32_t stored;
  std::memcpy(&stored, bytes.data() + body, sizeof(stored));
  if (stored != crc32(bytes.data(), body)) throw ChecksumError("corrupted checkpoint: checksum mismatch");

  Header h;
  h.scalar_bytes = r.get<std::uint32_t>();
  if (h.scalar_bytes != 4 && h.scalar_bytes != 8) throw Error("checkpoint has an unknown scalar width");
  h.dims.vocab = r.get<std::int32_t>();
  h.dims.width = r.get<std::int32_t>();
  h.dims.layers = r.get<std::int32_t>();
  h.dims.heads = r.get<std::int32_t>();
  h.dims.max_positions = r.get<std::int32_t>();
  h.dims.ff_width = r.get<std::int32_t>();
  const auto n_symbols = r.get<std::uint32_t>();
  std::vector<char> symbols(n_symbols);
  r.get_bytes(symbols.data(), n_symbols);
  h.vocab = Vocabulary(std::move(symbols));
  return h;
}

template <typename Stored, typename Scalar>
void read_tensors(Reader& r, ModelParams<Scalar>& params) {
  const auto count = r.get<std::uint64_t>();
  std::size_t seen = 0;
  params.for_each_tensor([&](const std::string& name, Mat<Scalar>& m) {
    ++seen;
    const auto len = r.get<std::uint32_t>();
    std::string stored_name(len, '\0');
    r.get_bytes(stored_name.data(), len);
    if (stored_name != name) throw Error("checkpoint tensor '" + stored_name + "' where '" + name + "' was expected");
    const auto rows = r.get<std::uint64_t>();
    const auto cols = r.get<std::uint64_t>();
    if (rows != static_cast<std::uint64_t>(m.rows()) || cols != static_cast<std::uint64_t>(m.cols())) {
      throw Error("checkpoint tensor '" + name + "' has the wrong shape");
    }
    Mat<Stored> values(m.rows(), m.cols());
    r.get_bytes(values.data(), static_cast<std::size_t>(values.size()) * sizeof(Stored));
    m = values.template cast<Scalar>();
  });
  if (count != seen) throw Error("checkpoint tensor count mismatch");
}

}  // namespace

template <typename Scalar>
void save_checkpoint(const ModelParams<Scalar>& params, const Vocabulary& vocab, const std::filesystem::path& path) {
  Writer w;
  w.put_bytes(kMagic, sizeof(kMagic));
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint32_t>(sizeof(Scalar)));
  const auto& d = params.dims;
  for (int v : {d.vocab, d.width, d.layers, d.heads, d.max_positions, d.ff_width}) w.put(static_cast<std::int32_t>(v));
  w.put(static_cast<std::uint32_t>(vocab.symbols().size()));
  w.put_bytes(vocab.symbols().data(), vocab.symbols().size());
  std::uint64_t count = 0;
  params.for_each_tensor([&](const std::string&, const Mat<Scalar>&) { ++count; });
  w.put(count);
  params.for_each_tensor([&](const std::string& name, const Mat<Scalar>& m) {
    w.put(static_cast<std::uint32_t>(name.size()));
    w.put_bytes(name.data(), name.size());
    w.put(static_cast<std::uint64_t>(m.rows()));
    w.put(static_cast<std::uint64_t>(m.cols()));
    w.put_bytes(m.data(), static_cast<std::size_t>(m.size()) * sizeof(Scalar));
  });
  const std::uint32_t crc = crc32(w.bytes().data(), w.bytes().size());
  w.put(crc);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) throw Error("write failed: " + path.string());
}

template <typename Scalar>
ModelParams<Scalar> load_checkpoint(const std::filesystem::path& path, Vocabulary* vocab) {
  const auto bytes = read_all(path);
  Reader r(bytes, bytes.size() >= 4 ? bytes.size() - 4 : 0);
  Header h = read_header(bytes, r);
  if (static_cast<std::size_t>(h.dims.vocab) != h.vocab.size()) throw Error("checkpoint vocabulary size mismatch");
  ModelParams<Scalar> params = zero_params<Scalar>(h.dims);
  if (h.scalar_bytes == 4) {
    read_tensors<float>(r, params);
  } else {
    read_tensors<double>(r, params);
  }
  if (vocab != nullptr) *vocab = std::move(h.vocab);
  return params;
}

Precision checkpoint_precision(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  Reader r(bytes, bytes.size() >= 4 ? bytes.size() - 4 : 0);
  return read_header(bytes, r).scalar_bytes == 4 ? Precision::f32 : Precision::f64;
}

template void save_checkpoint(const ModelParams<float>&, const Vocabulary&, const std::filesystem::path&);
template void save_checkpoint(const ModelParams<double>&, const Vocabulary&, const std::filesystem::path&);
template ModelParams<float> load_checkpoint(const std::filesystem::path&, Vocabulary*);
template ModelParams<double> load_checkpoint(const std::filesystem::path&, Vocabulary*);

}  // namespace dricl
