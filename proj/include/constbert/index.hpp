#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "constbert/embeddings.hpp"

namespace constbert {

enum class DType : std::uint8_t { F32 = 0, F16 = 1, I8 = 2 };

std::string to_string(DType dtype);
/// "f32" | "f16" | "i8"; throws ConfigError otherwise.
DType parse_dtype(std::string_view name);
std::size_t dtype_bytes(DType dtype);

inline constexpr std::uint16_t kIndexVersion = 1;
/// Record 0 starts here; every record offset is 4096 + id * record_size.
inline constexpr std::size_t kIndexHeaderBytes = 4096;

/// Fixed header at the start of an index file. Byte layout (little-endian,
/// no implicit padding):
///   0  "CBIX"       4  u16 version   6  u32 c_vectors  10 u32 dim
///   14 u8 dtype     15 u64 num_docs  23 u32 alignment  27 u8 normalized
///   28..4095 zero
struct IndexHeader {
  std::uint16_t version = kIndexVersion;
  std::uint32_t c_vectors = 0;
  std::uint32_t dim = 0;
  DType dtype = DType::F32;
  std::uint64_t num_docs = 0;
  std::uint32_t alignment = 4096;
  bool normalized = false;

  bool operator==(const IndexHeader&) const = default;
};

/// Unpadded bytes of one record: C*k values plus, for i8, a (min, max) f32 pair.
std::size_t payload_bytes(std::size_t c_vectors, std::size_t dim, DType dtype);

/// payload_bytes rounded up to a multiple of `alignment`. The alignment must
/// be a power of two in [64, 4096] so that record offsets after the 4096-byte
/// header stay aligned; anything else throws ConfigError.
std::size_t record_size(std::size_t c_vectors, std::size_t dim, DType dtype, std::size_t alignment);

// f16 codec (IEEE binary16, round to nearest even).
std::uint16_t float_to_half(float value);
float half_to_float(std::uint16_t bits);

/// Dense internal id -> external string id. Stored as a TSV sidecar where
/// line i is "i<TAB>external_id".
class DocIdMap {
 public:
  /// Appends the next id; throws ConfigError on duplicates or on ids that
  /// contain tabs or newlines.
  std::uint64_t add(std::string external_id);
  std::size_t size() const { return ids_.size(); }
  const std::string& external(std::uint64_t internal_id) const;
  std::optional<std::uint64_t> find(const std::string& external_id) const;
  const std::vector<std::string>& ids() const { return ids_; }

  void save(const std::filesystem::path& path) const;
  static DocIdMap load(const std::filesystem::path& path);

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, std::uint64_t> lookup_;
};

/// Sidecar path used for both index files and CBEM files.
std::filesystem::path id_map_path(const std::filesystem::path& data_path);

struct IndexSpec {
  std::uint32_t c_vectors = 0;
  std::uint32_t dim = 0;
  DType dtype = DType::F32;
  std::uint32_t alignment = 4096;
  bool normalized = false;
};

/// Single-pass index builder. Records are appended in call order; finish()
/// patches the document count and writes the id sidecar.
class IndexWriter {
 public:
  IndexWriter(const std::filesystem::path& path, const IndexSpec& spec);
  IndexWriter(const IndexWriter&) = delete;
  IndexWriter& operator=(const IndexWriter&) = delete;

  /// Throws ShapeError naming `external_id` when the matrix is not C x k.
  void add(const std::string& external_id, const PooledEmbeddings& pooled);
  /// Returns the final header. The writer is unusable afterwards.
  IndexHeader finish();

  std::size_t record_bytes() const { return record_size_; }

 private:
  std::filesystem::path path_;
  IndexHeader header_;
  std::size_t record_size_;
  std::ofstream out_;
  std::vector<std::uint8_t> record_;
  DocIdMap ids_;
  bool finished_ = false;
};

/// Builds an index from an in-memory sequence; see IndexWriter.
IndexHeader build_index(const std::filesystem::path& path, const IndexSpec& spec,
                        std::span<const std::pair<std::string, PooledEmbeddings>> docs);

/// Read-only memory-mapped view of an index file. Safe for concurrent readers.
class Index {
 public:
  /// Throws FormatError (bad magic / header fields), VersionError, or
  /// TruncatedError (size != 4096 + num_docs * record_size).
  static Index open(const std::filesystem::path& path);

  Index(Index&&) noexcept;
  Index& operator=(Index&&) noexcept;
  Index(const Index&) = delete;
  Index& operator=(const Index&) = delete;
  ~Index();

  const IndexHeader& header() const { return header_; }
  std::uint64_t num_docs() const { return header_.num_docs; }
  std::size_t dim() const { return header_.dim; }
  std::size_t c_vectors() const { return header_.c_vectors; }
  std::size_t record_bytes() const { return record_size_; }
  std::size_t file_bytes() const { return size_; }
  std::size_t record_offset(std::uint64_t doc_id) const { return kIndexHeaderBytes + doc_id * record_size_; }

  /// Decodes record `doc_id`. Throws RangeError when doc_id >= num_docs.
  PooledEmbeddings get_doc(std::uint64_t doc_id) const;
  /// As get_doc, reusing `out`'s storage when it already has the right shape.
  void get_doc_into(std::uint64_t doc_id, PooledEmbeddings& out) const;

  const DocIdMap& ids() const { return ids_; }

 private:
  Index() = default;
  void release() noexcept;

  const std::uint8_t* base_ = nullptr;
  std::size_t size_ = 0;
  IndexHeader header_;
  std::size_t record_size_ = 0;
  DocIdMap ids_;
};

inline Index open_index(const std::filesystem::path& path) { return Index::open(path); }

/// Serializes a header into its 4096-byte on-disk form.
std::vector<std::uint8_t> encode_header(const IndexHeader& header);

/// Streaming writer for the CBEM interchange format: "CBEM", u32 count,
/// u32 rows (C), u32 dim (k), then count*rows*dim little-endian f32. Ids go to
/// the TSV sidecar. The count is patched on close().
class CbemWriter {
 public:
  CbemWriter(const std::filesystem::path& path, std::uint32_t rows, std::uint32_t dim);
  CbemWriter(const CbemWriter&) = delete;
  CbemWriter& operator=(const CbemWriter&) = delete;

  void add(const std::string& id, const EmbeddingMatrix& m);
  void close();

 private:
  std::filesystem::path path_;
  std::uint32_t rows_;
  std::uint32_t dim_;
  std::ofstream out_;
  DocIdMap ids_;
  bool closed_ = false;
};

/// Streaming reader for CBEM files.
class CbemReader {
 public:
  explicit CbemReader(const std::filesystem::path& path);

  std::uint32_t count() const { return count_; }
  std::uint32_t rows() const { return rows_; }
  std::uint32_t dim() const { return dim_; }

  /// Next (id, matrix) pair, or nullopt at the end.
  std::optional<std::pair<std::string, EmbeddingMatrix>> next();

 private:
  std::filesystem::path path_;
  std::ifstream in_;
  DocIdMap ids_;
  std::uint32_t count_ = 0;
  std::uint32_t rows_ = 0;
  std::uint32_t dim_ = 0;
  std::uint32_t read_ = 0;
};

void save_cbem(const std::filesystem::path& path, std::span<const std::pair<std::string, EmbeddingMatrix>> items);
std::vector<std::pair<std::string, EmbeddingMatrix>> load_cbem(const std::filesystem::path& path);

}  // namespace constbert
