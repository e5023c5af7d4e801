#include "blobbench/fs_store.hpp"

#include <fcntl.h>
#include <sys/statvfs.h>
#include <unistd.h>

#include <array>
#include <cerrno>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "blobbench/error.hpp"

namespace blobbench {
namespace {

constexpr std::array<std::string_view, 4> kCutPoints = {"after-create", "after-write",
                                                        "after-flush", "after-rename"};
constexpr std::string_view kBlobSuffix = ".blob";
constexpr std::string_view kTempMarker = ".blob.tmp-";

[[noreturn]] void io_fail(const std::string& what) {
  const ErrorCode code = errno == ENOSPC ? ErrorCode::kVolumeFull : ErrorCode::kIo;
  fail(code, what + ": " + std::strerror(errno));
}

std::string hex_id(ObjectId id) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(id));
  return buf;
}

// Closes the handle on every exit path, including injected crashes.
class Handle {
 public:
  Handle(FsIo& io, int fd) : io_(io), fd_(fd) {}
  ~Handle() {
    if (fd_ >= 0) {
      try {
        io_.close(fd_);
      } catch (...) {
      }
    }
  }
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  int get() const { return fd_; }
  void close() {
    io_.close(fd_);
    fd_ = -1;
  }

 private:
  FsIo& io_;
  int fd_;
};

}  // namespace

int PosixFsIo::create(const std::filesystem::path& path) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
  if (fd < 0) io_fail("create " + path.string());
  return fd;
}

void PosixFsIo::write(int handle, std::span<const std::byte> data) {
  std::size_t done = 0;
  while (done < data.size()) {
    const ssize_t n = ::write(handle, data.data() + done, data.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      io_fail("write");
    }
    done += static_cast<std::size_t>(n);
  }
}

void PosixFsIo::flush(int handle) {
  if (::fsync(handle) != 0) io_fail("fsync");
}

void PosixFsIo::close(int handle) {
  if (::close(handle) != 0) io_fail("close");
}

void PosixFsIo::rename(const std::filesystem::path& from, const std::filesystem::path& to) {
  if (::rename(from.c_str(), to.c_str()) != 0) io_fail("rename " + from.string());
}

void PosixFsIo::flush_directory(const std::filesystem::path& dir) {
  const int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY);
  if (fd < 0) io_fail("open directory " + dir.string());
  const int rc = ::fsync(fd);
  ::close(fd);
  // Some filesystems refuse fsync on directories; that is the documented caveat.
  if (rc != 0 && errno != EINVAL && errno != EBADF) io_fail("fsync directory " + dir.string());
}

void PosixFsIo::remove(const std::filesystem::path& path) {
  if (::unlink(path.c_str()) != 0 && errno != ENOENT) io_fail("unlink " + path.string());
}

FsStore::FsStore(FsStoreConfig config, std::shared_ptr<FsIo> io)
    : config_(std::move(config)), io_(io ? std::move(io) : std::make_shared<PosixFsIo>()) {
  std::error_code ec;
  if (!std::filesystem::is_directory(config_.root_directory, ec)) {
    fail(ErrorCode::kIo, "store root is not a directory: " + config_.root_directory.string());
  }
  for (const auto& entry : std::filesystem::directory_iterator(config_.root_directory)) {
    const std::string name = entry.path().filename().string();
    if (name.size() != 16 + kBlobSuffix.size() || !name.ends_with(kBlobSuffix)) continue;
    ObjectId id = 0;
    const auto [ptr, err] = std::from_chars(name.data(), name.data() + 16, id, 16);
    if (err != std::errc() || ptr != name.data() + 16) continue;
    BlobRecord rec;
    rec.id = id;
    rec.size_bytes = entry.file_size();
    rec.generation = 1;
    rec.placement = ExtentList{};
    blobs_.emplace(id, rec);
  }
}

std::span<const std::string_view> FsStore::cut_points() { return kCutPoints; }

std::filesystem::path FsStore::blob_path(const std::filesystem::path& root, ObjectId id) {
  return root / (hex_id(id) + std::string(kBlobSuffix));
}

std::filesystem::path FsStore::temp_path(const std::filesystem::path& root, ObjectId id,
                                         std::uint64_t generation) {
  return root / (hex_id(id) + std::string(kTempMarker) + std::to_string(generation));
}

bool FsStore::is_temp_name(std::string_view file_name) {
  return file_name.find(kTempMarker) != std::string_view::npos;
}

std::uint64_t FsStore::recover_sweep(const std::filesystem::path& root) {
  std::error_code ec;
  std::filesystem::directory_iterator it(root, ec);
  if (ec) fail(ErrorCode::kIo, "cannot read store directory " + root.string() + ": " + ec.message());
  std::uint64_t removed = 0;
  for (const auto& entry : it) {
    if (!is_temp_name(entry.path().filename().string())) continue;
    std::filesystem::remove(entry.path(), ec);
    if (ec) fail(ErrorCode::kIo, "cannot remove " + entry.path().string() + ": " + ec.message());
    ++removed;
  }
  return removed;
}

void FsStore::reach(std::string_view point) {
  if (injector_ != nullptr) injector_->reach(point);
}

BlobRecord FsStore::put(ObjectId id, PayloadSource& payload, std::uint64_t write_buffer_bytes,
                        std::uint64_t tag) {
  check(write_buffer_bytes > 0, ErrorCode::kConfig, "write buffer must be positive");
  auto old = blobs_.find(id);
  BlobRecord fresh;
  fresh.id = id;
  fresh.tag = tag;
  fresh.generation = old == blobs_.end() ? 1 : old->second.generation + 1;
  fresh.placement = ExtentList{};
  const auto temp = temp_path(config_.root_directory, id, fresh.generation);
  const auto target = blob_path(config_.root_directory, id);

  Bytes chunk(write_buffer_bytes);
  try {
    Handle handle(*io_, io_->create(temp));
    reach("after-create");
    for (;;) {
      const std::size_t n = read_full(payload, chunk);
      if (n == 0) break;
      io_->write(handle.get(), std::span(chunk).first(n));
      fresh.size_bytes += n;
      ++stats_.append_requests;
      reach("after-write");
      if (n < chunk.size()) break;
    }
    check(fresh.size_bytes > 0, ErrorCode::kConfig, "empty payload");
    if (config_.fsync_policy == FsyncPolicy::kFlushBeforeRename) io_->flush(handle.get());
    reach("after-flush");
    handle.close();
    io_->rename(temp, target);
  } catch (const Error&) {
    try {
      io_->remove(temp);
    } catch (const Error&) {
      // Left for recover_sweep().
    }
    ++stats_.failed_puts;
    throw;
  }
  if (config_.flush_directory) io_->flush_directory(config_.root_directory);
  if (old != blobs_.end()) {
    old->second = fresh;
  } else {
    blobs_.emplace(id, fresh);
  }
  stats_.bytes_written += fresh.size_bytes;
  ++stats_.puts;
  reach("after-rename");
  return fresh;
}

Bytes FsStore::get(ObjectId id) {
  const auto path = blob_path(config_.root_directory, id);
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kNotFound, "no object " + std::to_string(id));
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  Bytes out(size);
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(size));
  if (!in) fail(ErrorCode::kIo, "short read of " + path.string());
  stats_.bytes_read += size;
  return out;
}

void FsStore::remove(ObjectId id) {
  auto it = blobs_.find(id);
  if (it == blobs_.end()) fail(ErrorCode::kNotFound, "no object " + std::to_string(id));
  io_->remove(blob_path(config_.root_directory, id));
  if (config_.flush_directory) io_->flush_directory(config_.root_directory);
  blobs_.erase(it);
}

std::vector<ObjectId> FsStore::list() const {
  std::vector<ObjectId> ids;
  ids.reserve(blobs_.size());
  for (const auto& [id, rec] : blobs_) ids.push_back(id);
  return ids;
}

std::optional<BlobRecord> FsStore::find(ObjectId id) const {
  auto it = blobs_.find(id);
  if (it == blobs_.end()) return std::nullopt;
  return it->second;
}

std::uint64_t FsStore::free_bytes() const {
  struct statvfs vfs {};
  if (::statvfs(config_.root_directory.c_str(), &vfs) != 0) io_fail("statvfs");
  return static_cast<std::uint64_t>(vfs.f_bavail) * vfs.f_frsize;
}

}  // namespace blobbench
