#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string_view>
#include <vector>

#include "blobbench/crash.hpp"
#include "blobbench/store.hpp"
#include "blobbench/volume.hpp"

namespace blobbench {

// Bitmap over data-region pages. Allocation always returns the lowest-indexed
// free pages.
class PageAllocator {
 public:
  explicit PageAllocator(std::uint64_t page_count);

  std::uint64_t page_count() const { return pages_; }
  std::uint64_t free_count() const { return free_; }
  bool is_free(std::uint64_t page) const;

  // n lowest free pages in ascending order; kVolumeFull (bitmap unchanged)
  // when fewer than n are free.
  PageList allocate(std::uint64_t n);
  void mark_used(std::uint64_t page);
  void release(std::uint64_t page);

 private:
  std::vector<std::uint64_t> words_;  // bit set = in use
  std::uint64_t pages_ = 0;
  std::uint64_t free_ = 0;
  std::uint64_t first_open_word_ = 0;  // every word below is full
};

// Page runs as (first page, count) pairs; the on-disk encoding of page lists.
struct PageRun {
  std::uint32_t first = 0;
  std::uint32_t count = 0;
};
std::vector<PageRun> to_runs(std::span<const std::uint64_t> pages);
PageList from_runs(std::span<const PageRun> runs);

enum class WalKind : std::uint8_t { kAllocPages = 1, kFreePages = 2, kCommitBlob = 3, kCheckpoint = 4 };

struct WalRecord {
  std::uint64_t lsn = 0;
  WalKind kind = WalKind::kAllocPages;
  Bytes payload;
};

struct WalStats {
  std::uint64_t records = 0;
  std::uint64_t bytes_appended = 0;
  std::uint64_t truncations = 0;
  std::uint64_t peak_bytes = 0;
  std::uint64_t torn_tail_bytes = 0;  // discarded by the last load()
};

// Append-only log of metadata records. Record layout (little-endian):
//   u32 body_length  u32 crc32(body)  body = u64 lsn, u8 kind, payload
// Records carry page lists and blob metadata, never blob content.
class WriteAheadLog {
 public:
  explicit WriteAheadLog(std::unique_ptr<Backing> backing);

  // Reads records up to the first torn or corrupt one; the tail from there
  // on is truncated away.
  std::vector<WalRecord> load();

  Bytes encode(WalKind kind, std::span<const std::byte> payload);
  void write_encoded(std::span<const std::byte> record);
  std::uint64_t append(WalKind kind, std::span<const std::byte> payload);
  void flush() { backing_->flush(); }
  // Drops every record; LSNs keep increasing from next_lsn.
  void truncate();

  std::uint64_t next_lsn() const { return next_lsn_; }
  void set_next_lsn(std::uint64_t lsn) { next_lsn_ = lsn; }
  std::uint64_t size_bytes() const { return end_; }
  const WalStats& stats() const { return stats_; }
  Backing& backing() { return *backing_; }
  std::unique_ptr<Backing> release_backing() { return std::move(backing_); }

 private:
  std::unique_ptr<Backing> backing_;
  std::uint64_t end_ = 0;
  std::uint64_t next_lsn_ = 1;
  WalStats stats_;
};

struct PageStoreOptions {
  // One root page per blob version, drawn from the same allocator as the
  // blob's data pages. Roots of replaced versions are retired and only
  // released at the next checkpoint.
  bool root_pages = true;
  // Flush the image before each commit record (and the log after it).
  bool flush_on_commit = true;
};

struct CopyDefragResult {
  std::uint64_t copied = 0;
  double mean_fragments_before = 0.0;
  double mean_fragments_after = 0.0;
};

// Database-like backend: out-of-row blobs as chains of fixed-size pages with
// a header on every page, bulk-logged metadata in a separate write-ahead log.
//
// Page header (first header_bytes of every chain page, little-endian):
//   "BLOBPAGE" u64 blob_id u64 generation u32 position u32 payload_length
//   u64 tag u32 crc32 of the preceding 40 bytes, zero padding
//
// Snapshots of the blob table live in two alternating slots, one per half of
// the image metadata region:
//   "PGSNAP01" u32 version=1 u64 lsn u64 body_length body u32 crc32(body)
//   body: u64 blob_count, per blob: u64 id u64 size u64 generation u64 tag
//         u32 root_page (0xffffffff: none) u32 run_count, runs (u32 first,
//         u32 count); then u32 retired_count, retired root pages (u32)
class PageStore final : public BlobStore {
 public:
  static constexpr std::uint32_t kNoPage = 0xffffffffU;

  static PageStore create(VolumeImage image, std::unique_ptr<Backing> wal,
                          PageStoreOptions options = {});
  // Loads the newest valid snapshot and replays the log after it. Leaves a
  // fresh snapshot and an empty log behind, so running it again is a no-op.
  static PageStore open(VolumeImage image, std::unique_ptr<Backing> wal,
                        PageStoreOptions options = {});

  // Named crash sites, in the order a safe-write reaches them.
  static std::span<const std::string_view> cut_points();

  StoreKind kind() const override { return StoreKind::kPage; }
  BlobRecord put(ObjectId id, PayloadSource& payload, std::uint64_t write_buffer_bytes,
                 std::uint64_t tag = 0) override;
  Bytes get(ObjectId id) override;
  void remove(ObjectId id) override;
  std::vector<ObjectId> list() const override;
  std::optional<BlobRecord> find(ObjectId id) const override;
  void checkpoint() override;
  std::uint64_t free_bytes() const override {
    return allocator_.free_count() * geometry().page_bytes;
  }
  const StoreStats& stats() const override { return stats_; }
  std::map<ObjectId, std::uint32_t> ground_truth_fragments() const override;
  // Every page is free, in exactly one live chain, a live root or a retired
  // root; nothing else.
  void audit() const override;
  void sync() override { checkpoint(); }
  const VolumeImage* image() const override { return &image_; }

  // Rewrites every blob in id order into `target` (a fresh store standing in
  // for a new file group), dropping each from this store once copied.
  // Refused with kRefused, carrying a space estimate, when the target cannot
  // hold the largest blob or the whole live set.
  CopyDefragResult defragment_by_copy(PageStore& target, std::uint64_t write_buffer_bytes);

  void set_crash_injector(CrashInjector* injector) { injector_ = injector; }

  const Geometry& geometry() const { return image_.geometry(); }
  std::uint64_t usable_per_page() const {
    return geometry().page_bytes - geometry().page_header_bytes;
  }
  std::uint64_t chain_length(std::uint64_t size_bytes) const {
    return (size_bytes + usable_per_page() - 1) / usable_per_page();
  }
  // Chain pages plus root page.
  std::uint64_t footprint_pages(std::uint64_t size_bytes) const {
    return chain_length(size_bytes) + (options_.root_pages ? 1 : 0);
  }
  std::uint64_t page_count() const { return allocator_.page_count(); }
  const PageAllocator& allocator() const { return allocator_; }
  const WalStats& wal_stats() const { return wal_.stats(); }
  std::uint64_t wal_bytes() const { return wal_.size_bytes(); }
  std::uint64_t chain_pages_written() const { return chain_pages_written_; }
  std::uint64_t root_pages_written() const { return root_pages_written_; }
  std::optional<std::uint32_t> root_page(ObjectId id) const;
  const std::set<std::uint32_t>& retired_roots() const { return retired_; }
  double mean_fragments() const;
  // Pages rolled back to free by the last open().
  std::uint64_t recovered_orphan_pages() const { return orphan_pages_; }

  // Hands back the devices, e.g. after a simulated crash.
  VolumeImage release_image() { return std::move(image_); }
  std::unique_ptr<Backing> release_wal() { return wal_.release_backing(); }

 private:
  struct Entry {
    BlobRecord record;
    std::uint32_t root = kNoPage;
  };

  PageStore(VolumeImage image, std::unique_ptr<Backing> wal, PageStoreOptions options);

  void reach(std::string_view point);
  void write_page(std::uint64_t page, const BlobRecord& blob, std::uint32_t position,
                  std::span<const std::byte> payload);
  void write_root(std::uint32_t page, const BlobRecord& blob);
  void log_commit(const Entry& entry);
  void write_snapshot();
  bool load_snapshot();
  void replay(const std::vector<WalRecord>& records);
  void rebuild_allocator();
  void release_pages(std::span<const std::uint64_t> pages);

  VolumeImage image_;
  WriteAheadLog wal_;
  PageStoreOptions options_;
  PageAllocator allocator_;
  std::map<ObjectId, Entry> blobs_;
  std::set<std::uint32_t> retired_;
  StoreStats stats_;
  CrashInjector* injector_ = nullptr;
  std::uint64_t snapshot_lsn_ = 0;
  int snapshot_slot_ = 1;  // slot holding the newest snapshot
  std::uint64_t chain_pages_written_ = 0;
  std::uint64_t root_pages_written_ = 0;
  std::uint64_t orphan_pages_ = 0;
};

}  // namespace blobbench
