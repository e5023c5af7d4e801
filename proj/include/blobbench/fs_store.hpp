#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string_view>

#include "blobbench/crash.hpp"
#include "blobbench/store.hpp"

namespace blobbench {

// Host file operations used by the fs backend. Tests and the crash matrix
// interpose on this layer; PosixFsIo is the real thing.
class FsIo {
 public:
  virtual ~FsIo() = default;
  // Returns a handle; creates or truncates.
  virtual int create(const std::filesystem::path& path) = 0;
  virtual void write(int handle, std::span<const std::byte> data) = 0;
  virtual void flush(int handle) = 0;
  virtual void close(int handle) = 0;
  // Atomically replaces `to` with `from`.
  virtual void rename(const std::filesystem::path& from, const std::filesystem::path& to) = 0;
  virtual void flush_directory(const std::filesystem::path& dir) = 0;
  virtual void remove(const std::filesystem::path& path) = 0;
};

class PosixFsIo final : public FsIo {
 public:
  int create(const std::filesystem::path& path) override;
  void write(int handle, std::span<const std::byte> data) override;
  void flush(int handle) override;
  void close(int handle) override;
  void rename(const std::filesystem::path& from, const std::filesystem::path& to) override;
  void flush_directory(const std::filesystem::path& dir) override;
  void remove(const std::filesystem::path& path) override;
};

enum class FsyncPolicy { kFlushBeforeRename, kNoFlush };

struct FsStoreConfig {
  std::filesystem::path root_directory;
  FsyncPolicy fsync_policy = FsyncPolicy::kFlushBeforeRename;
  // fsync the directory after the rename (where the platform allows it).
  bool flush_directory = true;
};

// One file per object in a flat directory, replaced with the safe-write
// protocol: create `<root>/<16 hex>.blob.tmp-<generation>`, append the payload
// in write-buffer chunks, flush, rename over `<root>/<16 hex>.blob`.
//
// Cut points, in protocol order: after-create, after-write (once per chunk),
// after-flush, after-rename.
class FsStore final : public BlobStore {
 public:
  // Adopts committed files already in the directory. Temp files are left for
  // recover_sweep().
  explicit FsStore(FsStoreConfig config, std::shared_ptr<FsIo> io = nullptr);

  static std::span<const std::string_view> cut_points();
  static std::filesystem::path blob_path(const std::filesystem::path& root, ObjectId id);
  static std::filesystem::path temp_path(const std::filesystem::path& root, ObjectId id,
                                         std::uint64_t generation);
  static bool is_temp_name(std::string_view file_name);

  // Removes every temp file under root; committed files are untouched.
  static std::uint64_t recover_sweep(const std::filesystem::path& root);

  StoreKind kind() const override { return StoreKind::kFs; }
  BlobRecord put(ObjectId id, PayloadSource& payload, std::uint64_t write_buffer_bytes,
                 std::uint64_t tag = 0) override;
  Bytes get(ObjectId id) override;
  void remove(ObjectId id) override;
  std::vector<ObjectId> list() const override;
  std::optional<BlobRecord> find(ObjectId id) const override;
  std::uint64_t free_bytes() const override;
  const StoreStats& stats() const override { return stats_; }

  void set_crash_injector(CrashInjector* injector) { injector_ = injector; }
  const FsStoreConfig& config() const { return config_; }

 private:
  void reach(std::string_view point);

  FsStoreConfig config_;
  std::shared_ptr<FsIo> io_;
  std::map<ObjectId, BlobRecord> blobs_;
  StoreStats stats_;
  CrashInjector* injector_ = nullptr;
};

}  // namespace blobbench
