#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <vector>

#include "blobbench/run_cache.hpp"
#include "blobbench/store.hpp"
#include "blobbench/volume.hpp"

namespace blobbench {

struct ExtentStoreOptions {
  FitPolicy fit = FitPolicy::kSmallestFit;
  // Appends grow the last extent in place, and fresh extents come from the
  // largest run, only once this many bytes were appended sequentially.
  // Before that each append is an ordinary allocation.
  std::uint64_t sequential_detect_bytes = 1024 * 1024;
  // Size of the per-file record allocated at the lowest free offset of the
  // data region when a file is created (0 disables file records).
  std::uint64_t file_record_bytes = 4096;
};

struct ExtentDefragResult {
  std::uint64_t relocations = 0;
  std::uint64_t unfixable = 0;  // multi-extent blobs left as they were
  double mean_fragments_before = 0.0;
  double mean_fragments_after = 0.0;
};

// Filesystem-like backend over a volume image: files grow by sequential
// appends, each append first tries to extend the last extent in place and
// otherwise draws from the run cache. Space of replaced or deleted files is
// reusable only after the operation that freed it commits.
//
// Every file version also owns a small file record placed at the lowest free
// offset, like filesystem metadata sharing the volume with file data. Records
// of replaced or deleted versions are retired at the next checkpoint().
//
// Metadata region layout (little-endian), written by sync():
//   "EXTMAP01" u32 version=2 u64 blob_count
//   per blob: u64 id u64 size u64 generation u64 tag
//             u64 record_offset u64 record_length (length 0: no record)
//             u32 extent_count, extent_count x (u64 offset u64 length)
//   u64 retired_count, retired_count x (u64 offset u64 length)
//   u32 crc32 of everything above
class ExtentStore final : public BlobStore {
 public:
  static ExtentStore create(VolumeImage image, ExtentStoreOptions options = {});
  static ExtentStore open(VolumeImage image, ExtentStoreOptions options = {});

  StoreKind kind() const override { return StoreKind::kExtent; }
  BlobRecord put(ObjectId id, PayloadSource& payload, std::uint64_t write_buffer_bytes,
                 std::uint64_t tag = 0) override;
  Bytes get(ObjectId id) override;
  void remove(ObjectId id) override;
  std::vector<ObjectId> list() const override;
  std::optional<BlobRecord> find(ObjectId id) const override;
  void end_operation() override { commit_frees(); }
  void checkpoint() override;
  std::uint64_t free_bytes() const override { return cache_.free_bytes(); }
  const StoreStats& stats() const override { return stats_; }
  std::map<ObjectId, std::uint32_t> ground_truth_fragments() const override;
  void audit() const override;
  void sync() override;
  const VolumeImage* image() const override { return &image_; }

  // Grows the in-progress blob by chunk_bytes of allocation (no data moved).
  void append_extend(BlobRecord& blob, std::uint64_t chunk_bytes);
  // Moves the blob's extents to the pending list.
  void free_blob(const BlobRecord& blob);
  void commit_frees() { cache_.commit_frees(); }

  // Best-effort relocation of multi-extent blobs into single runs, most
  // fragmented first, until a pass makes no progress.
  ExtentDefragResult defragment();

  // Pathological start: carves every committed free run into pieces of
  // run_bytes separated by ballast_bytes of reserved space. The ballast is
  // dropped by release_ballast().
  void shatter_free_space(std::uint64_t run_bytes, std::uint64_t ballast_bytes);
  void release_ballast();
  std::uint64_t ballast_bytes() const;

  const RunCache& run_cache() const { return cache_; }
  RunCache& run_cache() { return cache_; }
  std::uint64_t allocated_bytes(const BlobRecord& blob) const;
  double mean_fragments() const;
  std::optional<Extent> file_record(ObjectId id) const;
  const std::vector<Extent>& retired_records() const { return retired_; }

  VolumeImage release_image() { return std::move(image_); }

 private:
  ExtentStore(VolumeImage image, ExtentStoreOptions options);

  void write_logical(const BlobRecord& blob, std::uint64_t logical, std::span<const std::byte> data);
  void read_logical(const ExtentList& extents, std::span<std::byte> out) const;
  Extent place_record(const BlobRecord& blob);

  VolumeImage image_;
  ExtentStoreOptions options_;
  RunCache cache_;
  std::map<ObjectId, BlobRecord> blobs_;
  std::map<ObjectId, Extent> records_;
  std::vector<Extent> retired_;
  std::vector<Extent> ballast_;
  StoreStats stats_;
};

}  // namespace blobbench
