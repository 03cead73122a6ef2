#include "constbert/index.hpp"

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <utility>

#include "constbert/binary_io.hpp"
#include "constbert/errors.hpp"

namespace constbert {
namespace {

constexpr std::size_t kQuantParamBytes = 8;

void check_alignment(std::size_t alignment) {
  if (alignment < 64 || alignment > kIndexHeaderBytes || !std::has_single_bit(alignment)) {
    throw ConfigError("alignment must be a power of two in [64, 4096], got " + std::to_string(alignment));
  }
}

// i8 records: [f32 min][f32 max][C*k int8]. Symmetric range, scale = max|v| / 127.
float i8_scale(float lo, float hi) { return std::max(std::abs(lo), std::abs(hi)) / 127.0f; }

void encode_record(const PooledEmbeddings& m, DType dtype, std::span<std::uint8_t> out) {
  std::fill(out.begin(), out.end(), std::uint8_t{0});
  const auto values = m.data();
  switch (dtype) {
    case DType::F32:
      for (std::size_t i = 0; i < values.size(); ++i) io::store_le<float>(out.subspan(4 * i), values[i]);
      break;
    case DType::F16:
      for (std::size_t i = 0; i < values.size(); ++i) {
        io::store_le<std::uint16_t>(out.subspan(2 * i), float_to_half(values[i]));
      }
      break;
    case DType::I8: {
      const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
      io::store_le<float>(out, *lo);
      io::store_le<float>(out.subspan(4), *hi);
      const float scale = i8_scale(*lo, *hi);
      for (std::size_t i = 0; i < values.size(); ++i) {
        long q = scale > 0.0f ? std::lround(values[i] / scale) : 0;
        q = std::clamp(q, -127L, 127L);
        out[kQuantParamBytes + i] = static_cast<std::uint8_t>(static_cast<std::int8_t>(q));
      }
      break;
    }
  }
}

void decode_record(std::span<const std::uint8_t> in, DType dtype, std::span<float> out) {
  switch (dtype) {
    case DType::F32:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = io::load_le<float>(in.subspan(4 * i));
      break;
    case DType::F16:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = half_to_float(io::load_le<std::uint16_t>(in.subspan(2 * i)));
      break;
    case DType::I8: {
      const float scale = i8_scale(io::load_le<float>(in), io::load_le<float>(in.subspan(4)));
      for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = static_cast<float>(static_cast<std::int8_t>(in[kQuantParamBytes + i])) * scale;
      }
      break;
    }
  }
}

IndexHeader decode_header(std::span<const std::uint8_t> bytes, const std::string& path) {
  if (std::memcmp(bytes.data(), "CBIX", 4) != 0) {
    throw FormatError(path + ": bad magic '" + std::string(reinterpret_cast<const char*>(bytes.data()), 4) +
                      "', expected 'CBIX'");
  }
  IndexHeader h;
  h.version = io::load_le<std::uint16_t>(bytes.subspan(4));
  if (h.version != kIndexVersion) {
    throw VersionError(path + ": unsupported index version " + std::to_string(h.version));
  }
  h.c_vectors = io::load_le<std::uint32_t>(bytes.subspan(6));
  h.dim = io::load_le<std::uint32_t>(bytes.subspan(10));
  const std::uint8_t dtype = bytes[14];
  if (dtype > 2) throw FormatError(path + ": unknown dtype code " + std::to_string(dtype));
  h.dtype = static_cast<DType>(dtype);
  h.num_docs = io::load_le<std::uint64_t>(bytes.subspan(15));
  h.alignment = io::load_le<std::uint32_t>(bytes.subspan(23));
  h.normalized = bytes[27] != 0;
  if (h.c_vectors == 0 || h.dim == 0) throw FormatError(path + ": header has zero C or k");
  try {
    check_alignment(h.alignment);
  } catch (const ConfigError& e) {
    throw FormatError(path + ": " + e.what());
  }
  return h;
}

}  // namespace

std::string to_string(DType dtype) {
  switch (dtype) {
    case DType::F32: return "f32";
    case DType::F16: return "f16";
    case DType::I8: return "i8";
  }
  return "?";
}

DType parse_dtype(std::string_view name) {
  if (name == "f32") return DType::F32;
  if (name == "f16") return DType::F16;
  if (name == "i8") return DType::I8;
  throw ConfigError("unknown dtype '" + std::string(name) + "' (expected f32, f16 or i8)");
}

std::size_t dtype_bytes(DType dtype) {
  switch (dtype) {
    case DType::F32: return 4;
    case DType::F16: return 2;
    case DType::I8: return 1;
  }
  return 0;
}

std::size_t payload_bytes(std::size_t c_vectors, std::size_t dim, DType dtype) {
  return c_vectors * dim * dtype_bytes(dtype) + (dtype == DType::I8 ? kQuantParamBytes : 0);
}

std::size_t record_size(std::size_t c_vectors, std::size_t dim, DType dtype, std::size_t alignment) {
  check_alignment(alignment);
  const std::size_t raw = payload_bytes(c_vectors, dim, dtype);
  return (raw + alignment - 1) / alignment * alignment;
}

std::uint16_t float_to_half(float value) {
  const std::uint32_t bits = std::bit_cast<std::uint32_t>(value);
  const std::uint16_t sign = static_cast<std::uint16_t>((bits >> 16) & 0x8000u);
  const std::uint32_t exp = (bits >> 23) & 0xffu;
  std::uint32_t mant = bits & 0x7fffffu;

  if (exp == 0xff) return sign | 0x7c00u | (mant ? 0x200u : 0u);
  const int e = static_cast<int>(exp) - 127 + 15;
  if (e >= 31) return sign | 0x7c00u;
  if (e <= 0) {
    if (e < -10) return sign;
    mant |= 0x800000u;
    const std::uint32_t shift = static_cast<std::uint32_t>(14 - e);
    const std::uint32_t rem = mant & ((1u << shift) - 1u);
    const std::uint32_t halfway = 1u << (shift - 1);
    std::uint32_t r = mant >> shift;
    if (rem > halfway || (rem == halfway && (r & 1u))) ++r;
    return static_cast<std::uint16_t>(sign | r);
  }
  std::uint32_t r = (static_cast<std::uint32_t>(e) << 10) | (mant >> 13);
  const std::uint32_t rem = mant & 0x1fffu;
  if (rem > 0x1000u || (rem == 0x1000u && (r & 1u))) ++r;  // may carry into the exponent; inf is correct then
  return static_cast<std::uint16_t>(sign | r);
}

float half_to_float(std::uint16_t h) {
  const std::uint32_t sign = static_cast<std::uint32_t>(h & 0x8000u) << 16;
  const std::uint32_t exp = (h >> 10) & 0x1fu;
  const std::uint32_t mant = h & 0x3ffu;
  if (exp == 0) {
    const float mag = std::ldexp(static_cast<float>(mant), -24);
    return sign ? -mag : mag;
  }
  if (exp == 31) return std::bit_cast<float>(sign | 0x7f800000u | (mant << 13));
  return std::bit_cast<float>(sign | ((exp - 15 + 127) << 23) | (mant << 13));
}

// ---- DocIdMap ---------------------------------------------------------------

std::uint64_t DocIdMap::add(std::string external_id) {
  if (external_id.empty() || external_id.find_first_of("\t\r\n") != std::string::npos) {
    throw ConfigError("external id must be non-empty and free of tabs/newlines: '" + external_id + "'");
  }
  const std::uint64_t id = ids_.size();
  if (!lookup_.emplace(external_id, id).second) throw ConfigError("duplicate external id '" + external_id + "'");
  ids_.push_back(std::move(external_id));
  return id;
}

const std::string& DocIdMap::external(std::uint64_t internal_id) const {
  if (internal_id >= ids_.size()) throw RangeError("internal id " + std::to_string(internal_id) + " out of range");
  return ids_[internal_id];
}

std::optional<std::uint64_t> DocIdMap::find(const std::string& external_id) const {
  const auto it = lookup_.find(external_id);
  if (it == lookup_.end()) return std::nullopt;
  return it->second;
}

void DocIdMap::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  for (std::size_t i = 0; i < ids_.size(); ++i) os << i << '\t' << ids_[i] << '\n';
  if (!os.flush()) throw IoError("failed writing " + path.string());
}

DocIdMap DocIdMap::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open id map " + path.string());
  DocIdMap map;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(path.string() + ":" + std::to_string(lineno) + ": missing tab");
    const std::string expected = std::to_string(map.size());
    if (line.compare(0, tab, expected) != 0) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected internal id " + expected);
    }
    try {
      map.add(line.substr(tab + 1));
    } catch (const ConfigError& e) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return map;
}

std::filesystem::path id_map_path(const std::filesystem::path& data_path) {
  return std::filesystem::path(data_path.string() + ".ids.tsv");
}

// ---- IndexWriter ------------------------------------------------------------

std::vector<std::uint8_t> encode_header(const IndexHeader& h) {
  std::vector<std::uint8_t> out(kIndexHeaderBytes, 0);
  const std::span<std::uint8_t> b(out);
  std::memcpy(out.data(), "CBIX", 4);
  io::store_le<std::uint16_t>(b.subspan(4), h.version);
  io::store_le<std::uint32_t>(b.subspan(6), h.c_vectors);
  io::store_le<std::uint32_t>(b.subspan(10), h.dim);
  out[14] = static_cast<std::uint8_t>(h.dtype);
  io::store_le<std::uint64_t>(b.subspan(15), h.num_docs);
  io::store_le<std::uint32_t>(b.subspan(23), h.alignment);
  out[27] = h.normalized ? 1 : 0;
  return out;
}

IndexWriter::IndexWriter(const std::filesystem::path& path, const IndexSpec& spec)
    : path_(path), record_size_(0) {
  if (spec.c_vectors == 0 || spec.dim == 0) throw ConfigError("index needs C >= 1 and k >= 1");
  record_size_ = record_size(spec.c_vectors, spec.dim, spec.dtype, spec.alignment);
  header_.c_vectors = spec.c_vectors;
  header_.dim = spec.dim;
  header_.dtype = spec.dtype;
  header_.alignment = spec.alignment;
  header_.normalized = spec.normalized;
  record_.resize(record_size_);
  out_.open(path_, std::ios::binary | std::ios::trunc);
  if (!out_) throw IoError("cannot open " + path_.string() + " for writing");
  const auto header = encode_header(header_);
  out_.write(reinterpret_cast<const char*>(header.data()), static_cast<std::streamsize>(header.size()));
}

void IndexWriter::add(const std::string& external_id, const PooledEmbeddings& pooled) {
  if (finished_) throw Error("IndexWriter::add after finish");
  if (pooled.rows() != header_.c_vectors || pooled.dim() != header_.dim) {
    throw ShapeError("document '" + external_id + "' is " + std::to_string(pooled.rows()) + "x" +
                     std::to_string(pooled.dim()) + ", index expects " + std::to_string(header_.c_vectors) +
                     "x" + std::to_string(header_.dim));
  }
  ids_.add(external_id);
  encode_record(pooled, header_.dtype, record_);
  out_.write(reinterpret_cast<const char*>(record_.data()), static_cast<std::streamsize>(record_.size()));
  ++header_.num_docs;
}

IndexHeader IndexWriter::finish() {
  if (finished_) throw Error("IndexWriter::finish called twice");
  finished_ = true;
  const auto header = encode_header(header_);
  out_.seekp(0);
  out_.write(reinterpret_cast<const char*>(header.data()), static_cast<std::streamsize>(header.size()));
  out_.close();
  if (!out_) throw IoError("failed writing " + path_.string());
  ids_.save(id_map_path(path_));
  return header_;
}

IndexHeader build_index(const std::filesystem::path& path, const IndexSpec& spec,
                        std::span<const std::pair<std::string, PooledEmbeddings>> docs) {
  IndexWriter writer(path, spec);
  for (const auto& [id, m] : docs) writer.add(id, m);
  return writer.finish();
}

// ---- Index ------------------------------------------------------------------

Index Index::open(const std::filesystem::path& path) {
  const int fd = ::open(path.c_str(), O_RDONLY);
  if (fd < 0) throw IoError("cannot open index " + path.string() + ": " + std::strerror(errno));
  struct stat st {};
  if (::fstat(fd, &st) != 0) {
    ::close(fd);
    throw IoError("cannot stat " + path.string());
  }
  const auto size = static_cast<std::size_t>(st.st_size);
  if (size < kIndexHeaderBytes) {
    ::close(fd);
    if (size >= 4 && size < kIndexHeaderBytes) {
      // Still report a wrong magic as a format problem.
      char magic[4];
      std::ifstream probe(path, std::ios::binary);
      probe.read(magic, 4);
      if (std::memcmp(magic, "CBIX", 4) != 0) throw FormatError(path.string() + ": bad magic");
    }
    throw TruncatedError(path.string() + ": file shorter than the 4096-byte header");
  }
  void* addr = ::mmap(nullptr, size, PROT_READ, MAP_SHARED, fd, 0);
  ::close(fd);
  if (addr == MAP_FAILED) throw IoError("mmap failed for " + path.string() + ": " + std::strerror(errno));

  Index index;
  index.base_ = static_cast<const std::uint8_t*>(addr);
  index.size_ = size;
  index.header_ = decode_header({index.base_, kIndexHeaderBytes}, path.string());
  index.record_size_ = record_size(index.header_.c_vectors, index.header_.dim, index.header_.dtype,
                                   index.header_.alignment);
  const std::size_t expected = kIndexHeaderBytes + index.header_.num_docs * index.record_size_;
  if (size != expected) {
    throw TruncatedError(path.string() + ": file is " + std::to_string(size) + " bytes, header implies " +
                         std::to_string(expected));
  }
  index.ids_ = DocIdMap::load(id_map_path(path));
  if (index.ids_.size() != index.header_.num_docs) {
    throw FormatError(id_map_path(path).string() + ": has " + std::to_string(index.ids_.size()) +
                      " ids, index has " + std::to_string(index.header_.num_docs) + " documents");
  }
  return index;
}

Index::Index(Index&& o) noexcept
    : base_(std::exchange(o.base_, nullptr)),
      size_(std::exchange(o.size_, 0)),
      header_(o.header_),
      record_size_(o.record_size_),
      ids_(std::move(o.ids_)) {}

Index& Index::operator=(Index&& o) noexcept {
  if (this != &o) {
    release();
    base_ = std::exchange(o.base_, nullptr);
    size_ = std::exchange(o.size_, 0);
    header_ = o.header_;
    record_size_ = o.record_size_;
    ids_ = std::move(o.ids_);
  }
  return *this;
}

Index::~Index() { release(); }

void Index::release() noexcept {
  if (base_) ::munmap(const_cast<std::uint8_t*>(base_), size_);
  base_ = nullptr;
}

PooledEmbeddings Index::get_doc(std::uint64_t doc_id) const {
  PooledEmbeddings out(header_.c_vectors, header_.dim);
  get_doc_into(doc_id, out);
  return out;
}

void Index::get_doc_into(std::uint64_t doc_id, PooledEmbeddings& out) const {
  if (doc_id >= header_.num_docs) {
    throw RangeError("doc_id " + std::to_string(doc_id) + " out of range (num_docs = " +
                     std::to_string(header_.num_docs) + ")");
  }
  if (out.rows() != header_.c_vectors || out.dim() != header_.dim) {
    out = PooledEmbeddings(header_.c_vectors, header_.dim);
  }
  decode_record({base_ + record_offset(doc_id), record_size_}, header_.dtype, out.data());
}

// ---- CBEM -------------------------------------------------------------------

CbemWriter::CbemWriter(const std::filesystem::path& path, std::uint32_t rows, std::uint32_t dim)
    : path_(path), rows_(rows), dim_(dim) {
  if (rows == 0 || dim == 0) throw ConfigError("CBEM needs rows >= 1 and dim >= 1");
  out_.open(path_, std::ios::binary | std::ios::trunc);
  if (!out_) throw IoError("cannot open " + path_.string() + " for writing");
  out_.write("CBEM", 4);
  io::write_le<std::uint32_t>(out_, 0);
  io::write_le<std::uint32_t>(out_, rows_);
  io::write_le<std::uint32_t>(out_, dim_);
}

void CbemWriter::add(const std::string& id, const EmbeddingMatrix& m) {
  if (closed_) throw Error("CbemWriter::add after close");
  if (m.rows() != rows_ || m.dim() != dim_) {
    throw ShapeError("CBEM item '" + id + "' is " + std::to_string(m.rows()) + "x" + std::to_string(m.dim()) +
                     ", expected " + std::to_string(rows_) + "x" + std::to_string(dim_));
  }
  ids_.add(id);
  io::write_floats_le(out_, m.data());
}

void CbemWriter::close() {
  if (closed_) return;
  closed_ = true;
  out_.seekp(4);
  io::write_le<std::uint32_t>(out_, static_cast<std::uint32_t>(ids_.size()));
  out_.close();
  if (!out_) throw IoError("failed writing " + path_.string());
  ids_.save(id_map_path(path_));
}

CbemReader::CbemReader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
  if (!in_) throw IoError("cannot open " + path.string());
  io::expect_magic(in_, "CBEM", path.string());
  count_ = io::read_le<std::uint32_t>(in_, "CBEM count");
  rows_ = io::read_le<std::uint32_t>(in_, "CBEM rows");
  dim_ = io::read_le<std::uint32_t>(in_, "CBEM dim");
  if (rows_ == 0 || dim_ == 0) throw FormatError(path.string() + ": zero rows or dim");
  ids_ = DocIdMap::load(id_map_path(path));
  if (ids_.size() != count_) {
    throw FormatError(path.string() + ": id sidecar has " + std::to_string(ids_.size()) + " entries, header says " +
                      std::to_string(count_));
  }
}

std::optional<std::pair<std::string, EmbeddingMatrix>> CbemReader::next() {
  if (read_ >= count_) return std::nullopt;
  std::vector<float> data(static_cast<std::size_t>(rows_) * dim_);
  io::read_floats_le(in_, data, path_.string() + " item " + std::to_string(read_));
  auto item = std::make_pair(ids_.external(read_), EmbeddingMatrix(rows_, dim_, std::move(data)));
  ++read_;
  return item;
}

void save_cbem(const std::filesystem::path& path, std::span<const std::pair<std::string, EmbeddingMatrix>> items) {
  if (items.empty()) throw ConfigError("save_cbem: no items (shape unknown)");
  CbemWriter w(path, static_cast<std::uint32_t>(items.front().second.rows()),
               static_cast<std::uint32_t>(items.front().second.dim()));
  for (const auto& [id, m] : items) w.add(id, m);
  w.close();
}

std::vector<std::pair<std::string, EmbeddingMatrix>> load_cbem(const std::filesystem::path& path) {
  CbemReader r(path);
  std::vector<std::pair<std::string, EmbeddingMatrix>> out;
  out.reserve(r.count());
  while (auto item = r.next()) out.push_back(std::move(*item));
  return out;
}

}  // namespace constbert
