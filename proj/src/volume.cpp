#include "blobbench/volume.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <cstring>

namespace blobbench {
namespace {

[[noreturn]] void io_fail(const std::string& what) {
  fail(ErrorCode::kIo, what + ": " + std::strerror(errno));
}

void check_range(std::uint64_t offset, std::uint64_t length, std::uint64_t limit,
                 const char* what) {
  if (offset > limit || length > limit - offset) {
    fail(ErrorCode::kInvariant, std::string(what) + " access out of bounds: offset " +
                                    std::to_string(offset) + " length " +
                                    std::to_string(length) + " limit " + std::to_string(limit));
  }
}

bool is_pow2(std::uint64_t v) { return v != 0 && (v & (v - 1)) == 0; }

}  // namespace

MemoryBacking::MemoryBacking(std::uint64_t size) : size_(size) {
  if (size_ > 0) {
    data_ = static_cast<std::byte*>(std::calloc(size_, 1));
    if (data_ == nullptr) fail(ErrorCode::kIo, "out of memory for " + std::to_string(size_) + " bytes");
  }
}

MemoryBacking::~MemoryBacking() { std::free(data_); }

void MemoryBacking::read(std::uint64_t offset, std::span<std::byte> out) const {
  check_range(offset, out.size(), size_, "memory");
  if (!out.empty()) std::memcpy(out.data(), data_ + offset, out.size());
}

void MemoryBacking::write(std::uint64_t offset, std::span<const std::byte> in) {
  check_range(offset, in.size(), size_, "memory");
  if (!in.empty()) std::memcpy(data_ + offset, in.data(), in.size());
}

void MemoryBacking::resize(std::uint64_t new_size) {
  if (new_size == size_) return;
  auto* grown = static_cast<std::byte*>(std::realloc(data_, new_size == 0 ? 1 : new_size));
  if (grown == nullptr) fail(ErrorCode::kIo, "out of memory");
  if (new_size > size_) std::memset(grown + size_, 0, new_size - size_);
  data_ = grown;
  size_ = new_size;
}

std::unique_ptr<FileBacking> FileBacking::open_or_create(const std::filesystem::path& path) {
  const int fd = ::open(path.c_str(), O_RDWR | O_CREAT, 0644);
  if (fd < 0) io_fail("open " + path.string());
  struct stat st {};
  if (::fstat(fd, &st) != 0) {
    ::close(fd);
    io_fail("stat " + path.string());
  }
  return std::unique_ptr<FileBacking>(
      new FileBacking(path, fd, static_cast<std::uint64_t>(st.st_size)));
}

std::unique_ptr<FileBacking> FileBacking::open(const std::filesystem::path& path,
                                               std::uint64_t create_size) {
  int flags = O_RDWR;
  if (create_size > 0) flags |= O_CREAT;
  const int fd = ::open(path.c_str(), flags, 0644);
  if (fd < 0) io_fail("open " + path.string());
  struct stat st {};
  if (::fstat(fd, &st) != 0) {
    ::close(fd);
    io_fail("stat " + path.string());
  }
  auto size = static_cast<std::uint64_t>(st.st_size);
  if (create_size > 0 && size == 0) {
    if (::ftruncate(fd, static_cast<off_t>(create_size)) != 0) {
      ::close(fd);
      io_fail("truncate " + path.string());
    }
    size = create_size;
  }
  return std::unique_ptr<FileBacking>(new FileBacking(path, fd, size));
}

FileBacking::~FileBacking() {
  if (fd_ >= 0) ::close(fd_);
}

void FileBacking::read(std::uint64_t offset, std::span<std::byte> out) const {
  check_range(offset, out.size(), size_, "file");
  std::size_t done = 0;
  while (done < out.size()) {
    const ssize_t n = ::pread(fd_, out.data() + done, out.size() - done,
                              static_cast<off_t>(offset + done));
    if (n < 0) {
      if (errno == EINTR) continue;
      io_fail("pread " + path_.string());
    }
    if (n == 0) {
      std::memset(out.data() + done, 0, out.size() - done);
      break;
    }
    done += static_cast<std::size_t>(n);
  }
}

void FileBacking::write(std::uint64_t offset, std::span<const std::byte> in) {
  check_range(offset, in.size(), size_, "file");
  std::size_t done = 0;
  while (done < in.size()) {
    const ssize_t n = ::pwrite(fd_, in.data() + done, in.size() - done,
                               static_cast<off_t>(offset + done));
    if (n < 0) {
      if (errno == EINTR) continue;
      io_fail("pwrite " + path_.string());
    }
    done += static_cast<std::size_t>(n);
  }
}

void FileBacking::resize(std::uint64_t new_size) {
  if (::ftruncate(fd_, static_cast<off_t>(new_size)) != 0) io_fail("truncate " + path_.string());
  size_ = new_size;
}

void FileBacking::flush() {
  if (::fsync(fd_) != 0) io_fail("fsync " + path_.string());
}

std::string_view to_string(BackendKind kind) {
  switch (kind) {
    case BackendKind::kNone: return "none";
    case BackendKind::kExtent: return "extent";
    case BackendKind::kPage: return "page";
  }
  return "?";
}

void Geometry::validate() const {
  check(is_pow2(cluster_bytes) && cluster_bytes >= 1024 && cluster_bytes <= kImageHeaderBytes,
        ErrorCode::kConfig, "cluster_bytes must be a power of two in [1KB, 64KB]");
  check(is_pow2(page_bytes) && page_bytes >= 2048 && page_bytes <= kImageHeaderBytes,
        ErrorCode::kConfig, "page_bytes must be a power of two in [2KB, 64KB]");
  check(page_header_bytes >= 32 && page_header_bytes + 1024 <= page_bytes, ErrorCode::kConfig,
        "page_header_bytes must leave at least 1KB of payload per page");
  check(capacity_bytes % cluster_bytes == 0 && capacity_bytes % page_bytes == 0,
        ErrorCode::kConfig, "capacity must be a multiple of cluster and page size");
  check(metadata_bytes % kImageHeaderBytes == 0, ErrorCode::kConfig,
        "metadata_bytes must be a multiple of 64KB");
  check(capacity_bytes > kImageHeaderBytes + resolved_metadata_bytes() + page_bytes,
        ErrorCode::kConfig, "capacity too small for header and metadata region");
}

std::uint64_t Geometry::resolved_metadata_bytes() const {
  if (metadata_bytes != 0) return metadata_bytes;
  const std::uint64_t want = std::max<std::uint64_t>(256 * 1024, capacity_bytes / 256);
  return (want + kImageHeaderBytes - 1) / kImageHeaderBytes * kImageHeaderBytes;
}

Bytes ImageHeader::encode() const {
  ByteWriter w;
  w.raw(std::string_view(kImageMagic, 8));
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(backend));
  w.u64(geometry.capacity_bytes);
  w.u32(geometry.cluster_bytes);
  w.u32(geometry.page_bytes);
  w.u32(geometry.page_header_bytes);
  w.u32(0);
  w.u64(metadata_offset);
  w.u64(metadata_length);
  w.u64(data_offset);
  w.u64(data_length);
  w.u32(crc32(w.bytes()));
  Bytes out = w.take();
  out.resize(kImageHeaderBytes, std::byte{0});
  return out;
}

ImageHeader ImageHeader::decode(std::span<const std::byte> raw) {
  check(raw.size() >= 76, ErrorCode::kCorrupt, "image header truncated");
  check(std::memcmp(raw.data(), kImageMagic, 8) == 0, ErrorCode::kCorrupt,
        "not a volume image (bad magic)");
  check(load_u32le(raw.data() + 72) == crc32(raw.first(72)), ErrorCode::kCorrupt,
        "image header checksum mismatch");
  ByteReader r(raw.subspan(8));
  check(r.u32() == 1, ErrorCode::kCorrupt, "unsupported image format version");
  ImageHeader h;
  const std::uint32_t kind = r.u32();
  check(kind <= 2, ErrorCode::kCorrupt, "unknown backend kind in header");
  h.backend = static_cast<BackendKind>(kind);
  h.geometry.capacity_bytes = r.u64();
  h.geometry.cluster_bytes = r.u32();
  h.geometry.page_bytes = r.u32();
  h.geometry.page_header_bytes = r.u32();
  r.u32();
  h.metadata_offset = r.u64();
  h.metadata_length = r.u64();
  h.geometry.metadata_bytes = h.metadata_length;
  h.data_offset = r.u64();
  h.data_length = r.u64();
  return h;
}

VolumeImage VolumeImage::format(std::unique_ptr<Backing> backing, const Geometry& geometry,
                                BackendKind backend) {
  geometry.validate();
  check(backing->size() == geometry.capacity_bytes, ErrorCode::kConfig,
        "backing size does not match capacity");
  ImageHeader h;
  h.backend = backend;
  h.geometry = geometry;
  h.metadata_offset = kImageHeaderBytes;
  h.metadata_length = geometry.resolved_metadata_bytes();
  h.geometry.metadata_bytes = h.metadata_length;
  h.data_offset = h.metadata_offset + h.metadata_length;
  h.data_length = geometry.capacity_bytes - h.data_offset;
  const Bytes raw = h.encode();
  backing->write(0, raw);
  // A previously used file may carry stale metadata; clear the region.
  const Bytes zeros(std::min<std::uint64_t>(h.metadata_length, 1 << 20), std::byte{0});
  for (std::uint64_t off = 0; off < h.metadata_length; off += zeros.size()) {
    const auto n = std::min<std::uint64_t>(zeros.size(), h.metadata_length - off);
    backing->write(h.metadata_offset + off, std::span(zeros).first(n));
  }
  return VolumeImage(std::move(backing), h);
}

VolumeImage VolumeImage::open(std::unique_ptr<Backing> backing) {
  check(backing->size() >= kImageHeaderBytes, ErrorCode::kCorrupt, "image smaller than header");
  Bytes raw(128);
  backing->read(0, raw);
  ImageHeader h = ImageHeader::decode(raw);
  check(h.geometry.capacity_bytes == backing->size(), ErrorCode::kCorrupt,
        "image size does not match header capacity");
  check(h.data_offset + h.data_length == h.geometry.capacity_bytes &&
            h.metadata_offset + h.metadata_length == h.data_offset,
        ErrorCode::kCorrupt, "inconsistent region layout in header");
  return VolumeImage(std::move(backing), h);
}

VolumeImage VolumeImage::create_in_memory(const Geometry& geometry, BackendKind backend) {
  geometry.validate();
  return format(std::make_unique<MemoryBacking>(geometry.capacity_bytes), geometry, backend);
}

VolumeImage VolumeImage::create_file(const std::filesystem::path& path, const Geometry& geometry,
                                     BackendKind backend) {
  geometry.validate();
  std::filesystem::remove(path);
  return format(FileBacking::open(path, geometry.capacity_bytes), geometry, backend);
}

VolumeImage VolumeImage::open_file(const std::filesystem::path& path) {
  return open(FileBacking::open(path));
}

void VolumeImage::read_data(std::uint64_t offset, std::span<std::byte> out) const {
  check_range(offset, out.size(), header_.data_length, "data region");
  backing_->read(header_.data_offset + offset, out);
  data_bytes_read_ += out.size();
}

void VolumeImage::write_data(std::uint64_t offset, std::span<const std::byte> in) {
  check_range(offset, in.size(), header_.data_length, "data region");
  backing_->write(header_.data_offset + offset, in);
  data_bytes_written_ += in.size();
}

void VolumeImage::read_metadata(std::uint64_t offset, std::span<std::byte> out) const {
  check_range(offset, out.size(), header_.metadata_length, "metadata region");
  backing_->read(header_.metadata_offset + offset, out);
}

void VolumeImage::write_metadata(std::uint64_t offset, std::span<const std::byte> in) {
  check_range(offset, in.size(), header_.metadata_length, "metadata region");
  backing_->write(header_.metadata_offset + offset, in);
}

}  // namespace blobbench
