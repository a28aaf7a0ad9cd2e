#include "deftx/store.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

#include "deftx/digest.hpp"
#include "deftx/error.hpp"

namespace deftx {

namespace {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
  }
  void magic(const char m[4]) { buf_.append(m, 4); }

  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string data) : data_(std::move(data)) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i]))
           << (8 * i);
    }
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i]))
           << (8 * i);
    }
    pos_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t len = u32();
    if (len > 1u << 20) {
      raise(ErrorKind::Format, "implausible string length at byte offset " +
                                   std::to_string(pos_ - 4),
            pos_ - 4);
    }
    need(len);
    std::string out = data_.substr(pos_, len);
    pos_ += len;
    return out;
  }
  void expect_magic(const char m[4], const std::string& what) {
    need(4);
    if (std::memcmp(data_.data() + pos_, m, 4) != 0) {
      raise(ErrorKind::Format, "bad magic for " + what + " at byte offset 0", 0);
    }
    pos_ += 4;
  }
  void expect_end() {
    if (pos_ != data_.size()) {
      raise(ErrorKind::Format,
            "trailing bytes at byte offset " + std::to_string(pos_), pos_);
    }
  }
  std::size_t offset() const { return pos_; }

 private:
  void need(std::size_t n) {
    if (pos_ + n > data_.size()) {
      raise(ErrorKind::Format,
            "truncated file at byte offset " + std::to_string(pos_) + " (need " +
                std::to_string(n) + " more bytes)",
            pos_);
    }
  }

  std::string data_;
  std::size_t pos_ = 0;
};

void atomic_write(const std::filesystem::path& path, const std::string& bytes) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) raise(ErrorKind::Io, "cannot open '" + tmp.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) raise(ErrorKind::Io, "failed writing '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    raise(ErrorKind::Io, "failed renaming '" + tmp.string() + "' to '" + path.string() +
                             "': " + ec.message());
  }
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::Io, "cannot open '" + path.string() + "'");
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return std::move(buffer).str();
}

void write_spec(ByteWriter& w, const ModelSpec& spec) {
  w.u32(static_cast<std::uint32_t>(spec.vocab_size));
  w.u32(static_cast<std::uint32_t>(spec.d_model));
  w.u32(static_cast<std::uint32_t>(spec.n_layers));
  w.u32(static_cast<std::uint32_t>(spec.n_heads));
  w.u32(static_cast<std::uint32_t>(spec.d_ff));
  w.u32(static_cast<std::uint32_t>(spec.max_seq_len));
  w.u32(static_cast<std::uint32_t>(spec.n_classes));
}

ModelSpec read_spec(ByteReader& r) {
  ModelSpec spec;
  spec.vocab_size = r.u32();
  spec.d_model = r.u32();
  spec.n_layers = r.u32();
  spec.n_heads = r.u32();
  spec.d_ff = r.u32();
  spec.max_seq_len = r.u32();
  spec.n_classes = r.u32();
  return spec;
}

TensorClass read_class(ByteReader& r) {
  const std::uint8_t raw = r.u8();
  if (raw > static_cast<std::uint8_t>(TensorClass::Head)) {
    raise(ErrorKind::Validation, "unknown tensor class tag " + std::to_string(raw));
  }
  return static_cast<TensorClass>(raw);
}

std::vector<std::size_t> read_shape(ByteReader& r) {
  const std::uint32_t ndim = r.u32();
  if (ndim == 0 || ndim > 8) {
    raise(ErrorKind::Validation, "implausible tensor rank " + std::to_string(ndim));
  }
  std::vector<std::size_t> shape(ndim);
  std::size_t numel = 1;
  for (std::uint32_t d = 0; d < ndim; ++d) {
    shape[d] = static_cast<std::size_t>(r.u64());
    if (shape[d] == 0 || shape[d] > (1ull << 32)) {
      raise(ErrorKind::Validation, "implausible extent " + std::to_string(shape[d]));
    }
    numel *= shape[d];
  }
  if (numel > (1ull << 32)) raise(ErrorKind::Validation, "implausible tensor size");
  return shape;
}

void expect_version(ByteReader& r) {
  const std::uint32_t version = r.u32();
  if (version != kStoreVersion) {
    raise(ErrorKind::Format, "unsupported format version " + std::to_string(version), 4);
  }
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParameterSet& params,
                     const ModelSpec& spec) {
  ByteWriter w;
  w.magic("DFTX");
  w.u32(kStoreVersion);
  w.u64(spec.digest());
  write_spec(w, spec);
  w.u32(static_cast<std::uint32_t>(params.entries.size()));
  for (const NamedTensor& entry : params.entries) {
    w.str(entry.name);
    w.u8(static_cast<std::uint8_t>(entry.cls));
    w.u32(static_cast<std::uint32_t>(entry.tensor.shape.size()));
    for (std::size_t e : entry.tensor.shape) w.u64(e);
    for (double v : entry.tensor.data) w.f64(v);
  }
  atomic_write(path, w.bytes());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  ByteReader r(read_file(path));
  r.expect_magic("DFTX", "checkpoint");
  expect_version(r);
  const std::uint64_t stored_digest = r.u64();
  LoadedCheckpoint out;
  out.spec = read_spec(r);
  out.spec.validate();
  if (out.spec.digest() != stored_digest) {
    raise(ErrorKind::Validation, "model digest does not match the stored spec");
  }
  const std::uint32_t count = r.u32();
  out.params.entries.reserve(count);
  for (std::uint32_t t = 0; t < count; ++t) {
    NamedTensor entry;
    entry.name = r.str();
    if (out.params.find(entry.name) != nullptr) {
      raise(ErrorKind::Validation, "duplicate tensor '" + entry.name + "'");
    }
    entry.cls = read_class(r);
    const std::vector<std::size_t> shape = read_shape(r);
    const std::size_t numel = shape_numel(shape);
    std::vector<double> data(numel);
    for (std::size_t i = 0; i < numel; ++i) data[i] = r.f64();
    entry.tensor = Tensor(shape, std::move(data));
    out.params.entries.push_back(std::move(entry));
  }
  r.expect_end();
  return out;
}

void save_sparse_vector(const std::filesystem::path& path, const SparseVector& vec) {
  vec.validate();
  ByteWriter w;
  w.magic("DFTS");
  w.u32(kStoreVersion);
  w.u8(static_cast<std::uint8_t>(vec.kind));
  w.u64(vec.budget);
  w.u64(vec.config_digest);
  w.u64(vec.model_digest);
  w.u32(static_cast<std::uint32_t>(vec.slices.size()));
  for (const SparseSlice& slice : vec.slices) {
    w.str(slice.name);
    w.u8(static_cast<std::uint8_t>(slice.cls));
    w.u32(static_cast<std::uint32_t>(slice.shape.size()));
    for (std::size_t e : slice.shape) w.u64(e);
    w.u64(slice.indices.size());
    for (std::uint64_t idx : slice.indices) w.u64(idx);
    for (double v : slice.values) w.f64(v);
  }
  atomic_write(path, w.bytes());
}

SparseVector load_sparse_vector(const std::filesystem::path& path) {
  ByteReader r(read_file(path));
  r.expect_magic("DFTS", "sparse vector");
  expect_version(r);
  SparseVector out;
  const std::uint8_t kind = r.u8();
  if (kind > static_cast<std::uint8_t>(VectorKind::Other)) {
    raise(ErrorKind::Validation, "unknown vector kind " + std::to_string(kind));
  }
  out.kind = static_cast<VectorKind>(kind);
  out.budget = r.u64();
  out.config_digest = r.u64();
  out.model_digest = r.u64();
  const std::uint32_t count = r.u32();
  out.slices.reserve(count);
  for (std::uint32_t t = 0; t < count; ++t) {
    SparseSlice slice;
    slice.name = r.str();
    slice.cls = read_class(r);
    slice.shape = read_shape(r);
    const std::uint64_t nnz = r.u64();
    if (nnz > shape_numel(slice.shape)) {
      raise(ErrorKind::Validation, "nnz exceeds tensor size in '" + slice.name + "'");
    }
    slice.indices.resize(nnz);
    for (std::uint64_t i = 0; i < nnz; ++i) slice.indices[i] = r.u64();
    slice.values.resize(nnz);
    for (std::uint64_t i = 0; i < nnz; ++i) slice.values[i] = r.f64();
    out.slices.push_back(std::move(slice));
  }
  r.expect_end();
  out.validate();
  return out;
}

void save_mask(const std::filesystem::path& path, const BinaryMask& mask) {
  ByteWriter w;
  w.magic("DFTM");
  w.u32(kStoreVersion);
  w.u64(mask.model_digest);
  w.u32(static_cast<std::uint32_t>(mask.slices.size()));
  for (const MaskSlice& slice : mask.slices) {
    w.str(slice.name);
    w.u64(slice.indices.size());
    for (std::uint64_t idx : slice.indices) w.u64(idx);
  }
  atomic_write(path, w.bytes());
}

BinaryMask load_mask(const std::filesystem::path& path) {
  ByteReader r(read_file(path));
  r.expect_magic("DFTM", "mask");
  expect_version(r);
  BinaryMask out;
  out.model_digest = r.u64();
  const std::uint32_t count = r.u32();
  out.slices.reserve(count);
  for (std::uint32_t t = 0; t < count; ++t) {
    MaskSlice slice;
    slice.name = r.str();
    const std::uint64_t nnz = r.u64();
    slice.indices.resize(nnz);
    std::uint64_t prev = 0;
    for (std::uint64_t i = 0; i < nnz; ++i) {
      slice.indices[i] = r.u64();
      if (i > 0 && slice.indices[i] <= prev) {
        raise(ErrorKind::Validation,
              "mask indices not strictly increasing in '" + slice.name + "'");
      }
      prev = slice.indices[i];
    }
    out.slices.push_back(std::move(slice));
  }
  r.expect_end();
  return out;
}

void save_corpus(const std::filesystem::path& path, const CorpusFile& corpus) {
  ByteWriter w;
  w.magic("DFTC");
  w.u32(kStoreVersion);
  w.u32(corpus.vocab_size);
  w.u32(static_cast<std::uint32_t>(corpus.language_id));
  w.u64(corpus.seed);
  w.u64(corpus.tokens.size());
  for (std::int32_t tok : corpus.tokens) w.u32(static_cast<std::uint32_t>(tok));
  atomic_write(path, w.bytes());
}

CorpusFile load_corpus(const std::filesystem::path& path) {
  ByteReader r(read_file(path));
  r.expect_magic("DFTC", "corpus");
  expect_version(r);
  CorpusFile out;
  out.vocab_size = r.u32();
  out.language_id = static_cast<std::int32_t>(r.u32());
  out.seed = r.u64();
  const std::uint64_t count = r.u64();
  out.tokens.resize(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::uint32_t tok = r.u32();
    if (tok >= out.vocab_size) {
      raise(ErrorKind::Validation,
            "token id " + std::to_string(tok) + " exceeds the stored vocab size");
    }
    out.tokens[i] = static_cast<std::int32_t>(tok);
  }
  r.expect_end();
  return out;
}

std::string peek_magic(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorKind::Io, "cannot open '" + path.string() + "'");
  char magic[4] = {0, 0, 0, 0};
  in.read(magic, 4);
  if (in.gcount() != 4) raise(ErrorKind::Format, "file too short for magic", 0);
  return std::string(magic, 4);
}

std::uint64_t file_digest(const std::filesystem::path& path) {
  return fnv64(read_file(path));
}

}  // namespace deftx
