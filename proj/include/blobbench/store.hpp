#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "blobbench/bytes.hpp"
#include "blobbench/workload.hpp"

namespace blobbench {

class VolumeImage;

// A contiguous byte range of the data region.
struct Extent {
  std::uint64_t offset = 0;
  std::uint64_t length = 0;

  std::uint64_t end() const { return offset + length; }
  friend bool operator==(const Extent&, const Extent&) = default;
};

using ExtentList = std::vector<Extent>;
using PageList = std::vector<std::uint64_t>;

struct BlobRecord {
  ObjectId id = 0;
  std::uint64_t size_bytes = 0;
  std::variant<ExtentList, PageList> placement;
  std::uint64_t generation = 0;
  // Opaque caller-supplied tag carried in the metadata (the marker tag of the
  // payload in benchmark runs).
  std::uint64_t tag = 0;
};

// Maximal physically contiguous runs, in logical order.
std::uint32_t count_fragments(std::span<const Extent> extents);
std::uint32_t count_fragments(std::span<const std::uint64_t> pages);
std::uint32_t count_fragments(const BlobRecord& record);

struct StoreStats {
  std::uint64_t bytes_written = 0;     // payload bytes accepted by put
  std::uint64_t bytes_read = 0;        // payload bytes returned by get
  std::uint64_t append_requests = 0;   // write-buffer sized appends reaching the allocator
  std::uint64_t puts = 0;
  std::uint64_t failed_puts = 0;
  std::uint64_t internal_fragmentation_bytes = 0;  // rounding slack of live blobs
};

// Streams a payload without announcing its final length.
class PayloadSource {
 public:
  virtual ~PayloadSource() = default;
  // Fills up to out.size() bytes; returns 0 at end of payload.
  virtual std::size_t read(std::span<std::byte> out) = 0;
};

// Reads until `out` is full or the payload ends; returns the bytes read.
std::size_t read_full(PayloadSource& payload, std::span<std::byte> out);

class SpanSource final : public PayloadSource {
 public:
  explicit SpanSource(std::span<const std::byte> data) : data_(data) {}
  std::size_t read(std::span<std::byte> out) override;

 private:
  std::span<const std::byte> data_;
  std::size_t pos_ = 0;
};

enum class StoreKind { kFs, kExtent, kPage };

std::string_view to_string(StoreKind kind);
StoreKind parse_store_kind(const std::string& text);

// Contract shared by every backend: put is a full overwrite performed with
// the backend's safe-write discipline; a failed put leaves the previous
// generation intact.
class BlobStore {
 public:
  virtual ~BlobStore() = default;

  virtual StoreKind kind() const = 0;
  virtual BlobRecord put(ObjectId id, PayloadSource& payload, std::uint64_t write_buffer_bytes,
                         std::uint64_t tag = 0) = 0;
  virtual Bytes get(ObjectId id) = 0;
  virtual void remove(ObjectId id) = 0;
  virtual std::vector<ObjectId> list() const = 0;
  virtual std::optional<BlobRecord> find(ObjectId id) const = 0;

  // Marks the end of one workload operation (commit point for deferred work).
  virtual void end_operation() {}
  // Periodic housekeeping point (log truncation, retirement of catalog space).
  virtual void checkpoint() {}
  virtual std::uint64_t free_bytes() const = 0;
  virtual const StoreStats& stats() const = 0;
  // Empty when the backend cannot observe physical placement.
  virtual std::map<ObjectId, std::uint32_t> ground_truth_fragments() const { return {}; }
  // Full consistency check; throws kInvariant on violation.
  virtual void audit() const {}
  // Persist metadata so the image can be reopened or scanned offline.
  virtual void sync() {}
  virtual const VolumeImage* image() const { return nullptr; }
};

}  // namespace blobbench
