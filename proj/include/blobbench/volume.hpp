#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>

#include "blobbench/bytes.hpp"

namespace blobbench {

// Raw byte device behind a volume image or a log.
class Backing {
 public:
  virtual ~Backing() = default;
  virtual std::uint64_t size() const = 0;
  virtual void read(std::uint64_t offset, std::span<std::byte> out) const = 0;
  virtual void write(std::uint64_t offset, std::span<const std::byte> in) = 0;
  virtual void resize(std::uint64_t new_size) = 0;
  virtual void flush() {}
};

// Zero-initialized memory. Large regions come from calloc so untouched pages
// stay unbacked.
class MemoryBacking final : public Backing {
 public:
  explicit MemoryBacking(std::uint64_t size);
  ~MemoryBacking() override;
  MemoryBacking(const MemoryBacking&) = delete;
  MemoryBacking& operator=(const MemoryBacking&) = delete;

  std::uint64_t size() const override { return size_; }
  void read(std::uint64_t offset, std::span<std::byte> out) const override;
  void write(std::uint64_t offset, std::span<const std::byte> in) override;
  void resize(std::uint64_t new_size) override;

  std::span<const std::byte> view() const { return {data_, size_}; }

 private:
  std::byte* data_ = nullptr;
  std::uint64_t size_ = 0;
};

class FileBacking final : public Backing {
 public:
  // Opens an existing file, or creates a sparse file of `create_size` bytes
  // when create_size is non-zero and the file does not exist.
  static std::unique_ptr<FileBacking> open(const std::filesystem::path& path,
                                           std::uint64_t create_size = 0);
  // Opens the file, creating it empty when missing.
  static std::unique_ptr<FileBacking> open_or_create(const std::filesystem::path& path);
  ~FileBacking() override;
  FileBacking(const FileBacking&) = delete;
  FileBacking& operator=(const FileBacking&) = delete;

  std::uint64_t size() const override { return size_; }
  void read(std::uint64_t offset, std::span<std::byte> out) const override;
  void write(std::uint64_t offset, std::span<const std::byte> in) override;
  void resize(std::uint64_t new_size) override;
  void flush() override;

  const std::filesystem::path& path() const { return path_; }

 private:
  FileBacking(std::filesystem::path path, int fd, std::uint64_t size)
      : path_(std::move(path)), fd_(fd), size_(size) {}

  std::filesystem::path path_;
  int fd_ = -1;
  std::uint64_t size_ = 0;
};

enum class BackendKind : std::uint32_t { kNone = 0, kExtent = 1, kPage = 2 };

std::string_view to_string(BackendKind kind);

inline constexpr std::uint64_t kImageHeaderBytes = 64 * 1024;
inline constexpr char kImageMagic[8] = {'B', 'L', 'O', 'B', 'V', 'O', 'L', '1'};

struct Geometry {
  std::uint64_t capacity_bytes = 0;
  std::uint32_t cluster_bytes = 4096;
  std::uint32_t page_bytes = 8192;
  std::uint32_t page_header_bytes = 96;
  // 0 selects max(256KB, capacity/256) rounded up to 64KB.
  std::uint64_t metadata_bytes = 0;

  void validate() const;
  std::uint64_t resolved_metadata_bytes() const;
};

// Fixed 64KB header, little-endian:
//   0  magic "BLOBVOL1"     8  u32 format version (1)   12 u32 backend kind
//   16 u64 capacity         24 u32 cluster bytes        28 u32 page bytes
//   32 u32 page header bytes 36 u32 zero
//   40 u64 metadata offset  48 u64 metadata length
//   56 u64 data offset      64 u64 data length          72 u32 crc32 of [0,72)
struct ImageHeader {
  BackendKind backend = BackendKind::kNone;
  Geometry geometry;
  std::uint64_t metadata_offset = 0;
  std::uint64_t metadata_length = 0;
  std::uint64_t data_offset = 0;
  std::uint64_t data_length = 0;

  Bytes encode() const;
  static ImageHeader decode(std::span<const std::byte> raw);
};

// A formatted flat image: header, metadata region, data region. Data-region
// accesses are relative to the start of the data region and bounds-checked.
class VolumeImage {
 public:
  static VolumeImage format(std::unique_ptr<Backing> backing, const Geometry& geometry,
                            BackendKind backend);
  static VolumeImage open(std::unique_ptr<Backing> backing);

  static VolumeImage create_in_memory(const Geometry& geometry, BackendKind backend);
  static VolumeImage create_file(const std::filesystem::path& path, const Geometry& geometry,
                                 BackendKind backend);
  static VolumeImage open_file(const std::filesystem::path& path);

  const ImageHeader& header() const { return header_; }
  const Geometry& geometry() const { return header_.geometry; }
  BackendKind backend() const { return header_.backend; }
  std::uint64_t capacity() const { return header_.geometry.capacity_bytes; }
  std::uint64_t data_bytes() const { return header_.data_length; }
  // Header plus metadata region.
  std::uint64_t reserved_bytes() const { return header_.data_offset; }

  void read_data(std::uint64_t offset, std::span<std::byte> out) const;
  void write_data(std::uint64_t offset, std::span<const std::byte> in);

  std::uint64_t metadata_bytes() const { return header_.metadata_length; }
  void read_metadata(std::uint64_t offset, std::span<std::byte> out) const;
  void write_metadata(std::uint64_t offset, std::span<const std::byte> in);

  void flush() { backing_->flush(); }
  Backing& backing() { return *backing_; }
  const Backing& backing() const { return *backing_; }

  std::uint64_t data_bytes_written() const { return data_bytes_written_; }
  std::uint64_t data_bytes_read() const { return data_bytes_read_; }

 private:
  VolumeImage(std::unique_ptr<Backing> backing, ImageHeader header)
      : backing_(std::move(backing)), header_(header) {}

  std::unique_ptr<Backing> backing_;
  ImageHeader header_;
  std::uint64_t data_bytes_written_ = 0;
  mutable std::uint64_t data_bytes_read_ = 0;
};

}  // namespace blobbench
