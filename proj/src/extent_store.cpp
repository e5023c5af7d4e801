#include "blobbench/extent_store.hpp"

#include <algorithm>
#include <cstring>

#include "blobbench/error.hpp"

namespace blobbench {
namespace {

constexpr char kExtMapMagic[8] = {'E', 'X', 'T', 'M', 'A', 'P', '0', '1'};

const ExtentList& extents_of(const BlobRecord& blob) { return std::get<ExtentList>(blob.placement); }
ExtentList& extents_of(BlobRecord& blob) { return std::get<ExtentList>(blob.placement); }

}  // namespace

ExtentStore::ExtentStore(VolumeImage image, ExtentStoreOptions options)
    : image_(std::move(image)),
      options_(options),
      cache_(image_.geometry().cluster_bytes, options.fit) {}

ExtentStore ExtentStore::create(VolumeImage image, ExtentStoreOptions options) {
  check(image.backend() == BackendKind::kExtent, ErrorCode::kConfig,
        "image is not formatted for the extent backend");
  ExtentStore store(std::move(image), options);
  const std::uint64_t usable =
      store.image_.data_bytes() / store.cache_.cluster_bytes() * store.cache_.cluster_bytes();
  store.cache_.add_free({0, usable});
  return store;
}

ExtentStore ExtentStore::open(VolumeImage image, ExtentStoreOptions options) {
  check(image.backend() == BackendKind::kExtent, ErrorCode::kConfig,
        "image is not formatted for the extent backend");
  ExtentStore store(std::move(image), options);
  Bytes head(20);
  store.image_.read_metadata(0, head);
  if (std::memcmp(head.data(), kExtMapMagic, 8) != 0) {
    // Never synced: an empty store.
    const std::uint64_t usable =
        store.image_.data_bytes() / store.cache_.cluster_bytes() * store.cache_.cluster_bytes();
    store.cache_.add_free({0, usable});
    return store;
  }
  Bytes meta(store.image_.metadata_bytes());
  store.image_.read_metadata(0, meta);
  ByteReader r(meta);
  r.raw(8);
  check(r.u32() == 2, ErrorCode::kCorrupt, "unsupported extent map version");
  const std::uint64_t count = r.u64();
  std::vector<Extent> used;
  auto read_extent = [&r] {
    Extent e;
    e.offset = r.u64();
    e.length = r.u64();
    return e;
  };
  for (std::uint64_t i = 0; i < count; ++i) {
    BlobRecord rec;
    rec.id = r.u64();
    rec.size_bytes = r.u64();
    rec.generation = r.u64();
    rec.tag = r.u64();
    const Extent record = read_extent();
    if (record.length > 0) {
      store.records_.emplace(rec.id, record);
      used.push_back(record);
    }
    const std::uint32_t n = r.u32();
    ExtentList extents;
    for (std::uint32_t k = 0; k < n; ++k) {
      extents.push_back(read_extent());
      used.push_back(extents.back());
    }
    rec.placement = std::move(extents);
    store.blobs_.emplace(rec.id, std::move(rec));
  }
  const std::uint64_t retired = r.u64();
  for (std::uint64_t i = 0; i < retired; ++i) {
    store.retired_.push_back(read_extent());
    used.push_back(store.retired_.back());
  }
  const std::size_t body = r.position();
  check(r.u32() == crc32(std::span(meta).first(body)), ErrorCode::kCorrupt,
        "extent map checksum mismatch");
  std::sort(used.begin(), used.end(),
            [](const Extent& a, const Extent& b) { return a.offset < b.offset; });
  const std::uint64_t usable =
      store.image_.data_bytes() / store.cache_.cluster_bytes() * store.cache_.cluster_bytes();
  std::uint64_t cursor = 0;
  for (const auto& e : used) {
    check(e.offset >= cursor && e.end() <= usable, ErrorCode::kCorrupt,
          "extent map has overlapping or out-of-range extents");
    if (e.offset > cursor) store.cache_.add_free({cursor, e.offset - cursor});
    cursor = e.end();
  }
  if (cursor < usable) store.cache_.add_free({cursor, usable - cursor});
  for (const auto& [id, rec] : store.blobs_) {
    store.stats_.internal_fragmentation_bytes += store.allocated_bytes(rec) - rec.size_bytes;
  }
  return store;
}

std::uint64_t ExtentStore::allocated_bytes(const BlobRecord& blob) const {
  std::uint64_t total = 0;
  for (const auto& e : extents_of(blob)) total += e.length;
  return total;
}

void ExtentStore::append_extend(BlobRecord& blob, std::uint64_t chunk_bytes) {
  auto& extents = extents_of(blob);
  const std::uint64_t have = allocated_bytes(blob);
  const std::uint64_t want = cache_.round_up(blob.size_bytes + chunk_bytes);
  blob.size_bytes += chunk_bytes;
  if (want <= have) return;
  std::uint64_t need = want - have;
  const bool sequential = blob.size_bytes - chunk_bytes >= options_.sequential_detect_bytes;
  if (sequential && !extents.empty()) {
    const std::uint64_t grown = cache_.take_at(extents.back().end(), need);
    extents.back().length += grown;
    need -= grown;
  }
  if (need == 0) return;
  try {
    const ExtentList fresh = sequential && !extents.empty() ? cache_.allocate_from_largest(need)
                                                            : cache_.allocate(need);
    for (const auto& e : fresh) {
      if (!extents.empty() && extents.back().end() == e.offset) {
        extents.back().length += e.length;
      } else {
        extents.push_back(e);
      }
    }
  } catch (...) {
    blob.size_bytes -= chunk_bytes;
    throw;
  }
}

void ExtentStore::write_logical(const BlobRecord& blob, std::uint64_t logical,
                                std::span<const std::byte> data) {
  std::uint64_t base = 0;
  for (const auto& e : extents_of(blob)) {
    if (data.empty()) break;
    if (logical < base + e.length) {
      const std::uint64_t within = logical - base;
      const std::size_t n = static_cast<std::size_t>(std::min<std::uint64_t>(e.length - within, data.size()));
      image_.write_data(e.offset + within, data.first(n));
      data = data.subspan(n);
      logical += n;
    }
    base += e.length;
  }
  check(data.empty(), ErrorCode::kInvariant, "write past allocated extents");
}

void ExtentStore::read_logical(const ExtentList& extents, std::span<std::byte> out) const {
  std::size_t done = 0;
  for (const auto& e : extents) {
    if (done == out.size()) break;
    const std::size_t n = static_cast<std::size_t>(std::min<std::uint64_t>(e.length, out.size() - done));
    image_.read_data(e.offset, out.subspan(done, n));
    done += n;
  }
  check(done == out.size(), ErrorCode::kInvariant, "blob shorter than its extents");
}

Extent ExtentStore::place_record(const BlobRecord& blob) {
  const Extent record = cache_.allocate_lowest(options_.file_record_bytes).front();
  Bytes raw(record.length);
  ByteWriter w;
  w.raw("FILEREC1");
  w.u64(blob.id);
  w.u64(blob.generation);
  w.u64(blob.tag);
  w.u32(crc32(w.bytes()));
  std::copy(w.bytes().begin(), w.bytes().end(), raw.begin());
  image_.write_data(record.offset, raw);
  return record;
}

BlobRecord ExtentStore::put(ObjectId id, PayloadSource& payload, std::uint64_t write_buffer_bytes,
                            std::uint64_t tag) {
  check(write_buffer_bytes > 0, ErrorCode::kConfig, "write buffer must be positive");
  BlobRecord fresh;
  fresh.id = id;
  fresh.placement = ExtentList{};
  fresh.tag = tag;
  auto old = blobs_.find(id);
  fresh.generation = old == blobs_.end() ? 1 : old->second.generation + 1;

  Bytes chunk(write_buffer_bytes);
  std::optional<Extent> record;
  try {
    if (options_.file_record_bytes > 0) record = place_record(fresh);
    for (;;) {
      const std::size_t n = read_full(payload, chunk);
      if (n == 0) break;
      const std::uint64_t logical = fresh.size_bytes;
      append_extend(fresh, n);
      ++stats_.append_requests;
      write_logical(fresh, logical, std::span(chunk).first(n));
      if (n < chunk.size()) break;
    }
    check(fresh.size_bytes > 0, ErrorCode::kConfig, "empty payload");
  } catch (const Error&) {
    // The partial copy was never visible; return its space through the
    // same deferred path as any other free.
    for (const auto& e : extents_of(fresh)) cache_.release(e);
    if (record) cache_.release(*record);
    ++stats_.failed_puts;
    throw;
  }

  // New generation fully placed and written before the old one is freed.
  if (old != blobs_.end()) {
    stats_.internal_fragmentation_bytes -= allocated_bytes(old->second) - old->second.size_bytes;
    free_blob(old->second);
    old->second = fresh;
  } else {
    blobs_.emplace(id, fresh);
  }
  if (auto prior = records_.find(id); prior != records_.end()) {
    retired_.push_back(prior->second);
    records_.erase(prior);
  }
  if (record) records_.emplace(id, *record);
  stats_.internal_fragmentation_bytes += allocated_bytes(fresh) - fresh.size_bytes;
  stats_.bytes_written += fresh.size_bytes;
  ++stats_.puts;
  return fresh;
}

Bytes ExtentStore::get(ObjectId id) {
  auto it = blobs_.find(id);
  if (it == blobs_.end()) fail(ErrorCode::kNotFound, "no object " + std::to_string(id));
  Bytes out(it->second.size_bytes);
  read_logical(extents_of(it->second), out);
  stats_.bytes_read += out.size();
  return out;
}

void ExtentStore::remove(ObjectId id) {
  auto it = blobs_.find(id);
  if (it == blobs_.end()) fail(ErrorCode::kNotFound, "no object " + std::to_string(id));
  stats_.internal_fragmentation_bytes -= allocated_bytes(it->second) - it->second.size_bytes;
  free_blob(it->second);
  blobs_.erase(it);
  if (auto record = records_.find(id); record != records_.end()) {
    retired_.push_back(record->second);
    records_.erase(record);
  }
}

void ExtentStore::checkpoint() {
  for (const auto& e : retired_) cache_.release(e);
  retired_.clear();
  commit_frees();
}

std::optional<Extent> ExtentStore::file_record(ObjectId id) const {
  auto it = records_.find(id);
  if (it == records_.end()) return std::nullopt;
  return it->second;
}

void ExtentStore::free_blob(const BlobRecord& blob) {
  for (const auto& e : extents_of(blob)) cache_.release(e);
}

std::vector<ObjectId> ExtentStore::list() const {
  std::vector<ObjectId> ids;
  ids.reserve(blobs_.size());
  for (const auto& [id, rec] : blobs_) ids.push_back(id);
  return ids;
}

std::optional<BlobRecord> ExtentStore::find(ObjectId id) const {
  auto it = blobs_.find(id);
  if (it == blobs_.end()) return std::nullopt;
  return it->second;
}

std::map<ObjectId, std::uint32_t> ExtentStore::ground_truth_fragments() const {
  std::map<ObjectId, std::uint32_t> out;
  for (const auto& [id, rec] : blobs_) out.emplace(id, count_fragments(rec));
  return out;
}

double ExtentStore::mean_fragments() const {
  if (blobs_.empty()) return 0.0;
  double total = 0;
  for (const auto& [id, rec] : blobs_) total += count_fragments(rec);
  return total / static_cast<double>(blobs_.size());
}

std::uint64_t ExtentStore::ballast_bytes() const {
  std::uint64_t total = 0;
  for (const auto& e : ballast_) total += e.length;
  return total;
}

void ExtentStore::audit() const {
  cache_.check_invariants();
  struct Piece {
    Extent extent;
    const char* owner;
  };
  std::vector<Piece> pieces;
  for (const auto& [id, rec] : blobs_) {
    const auto& extents = extents_of(rec);
    check(allocated_bytes(rec) == cache_.round_up(rec.size_bytes), ErrorCode::kInvariant,
          "blob " + std::to_string(id) + " allocation does not match its size");
    for (const auto& e : extents) pieces.push_back({e, "blob"});
  }
  for (const auto& e : cache_.runs()) pieces.push_back({e, "free"});
  for (const auto& e : cache_.pending()) pieces.push_back({e, "pending"});
  for (const auto& e : ballast_) pieces.push_back({e, "ballast"});
  for (const auto& [id, e] : records_) {
    check(blobs_.contains(id), ErrorCode::kInvariant, "file record without a file");
    pieces.push_back({e, "record"});
  }
  for (const auto& e : retired_) pieces.push_back({e, "retired record"});
  std::sort(pieces.begin(), pieces.end(),
            [](const Piece& a, const Piece& b) { return a.extent.offset < b.extent.offset; });
  const std::uint64_t usable =
      image_.data_bytes() / cache_.cluster_bytes() * cache_.cluster_bytes();
  std::uint64_t cursor = 0;
  for (const auto& p : pieces) {
    if (p.extent.offset != cursor) {
      fail(ErrorCode::kInvariant, std::string("audit: ") + p.owner + " extent at " +
                                      std::to_string(p.extent.offset) +
                                      (p.extent.offset < cursor ? " overlaps" : " leaves a gap") +
                                      " (cursor " + std::to_string(cursor) + ")");
    }
    cursor = p.extent.end();
  }
  check(cursor == usable, ErrorCode::kInvariant, "audit: data region not fully accounted for");
}

void ExtentStore::sync() {
  commit_frees();
  ByteWriter w;
  w.raw(std::string_view(kExtMapMagic, 8));
  w.u32(2);
  w.u64(blobs_.size());
  auto write_extent = [&w](const Extent& e) {
    w.u64(e.offset);
    w.u64(e.length);
  };
  for (const auto& [id, rec] : blobs_) {
    const auto& extents = extents_of(rec);
    w.u64(rec.id);
    w.u64(rec.size_bytes);
    w.u64(rec.generation);
    w.u64(rec.tag);
    write_extent(file_record(id).value_or(Extent{}));
    w.u32(static_cast<std::uint32_t>(extents.size()));
    for (const auto& e : extents) write_extent(e);
  }
  w.u64(retired_.size());
  for (const auto& e : retired_) write_extent(e);
  w.u32(crc32(w.bytes()));
  check(w.size() <= image_.metadata_bytes(), ErrorCode::kVolumeFull,
        "extent map (" + std::to_string(w.size()) + " bytes) exceeds the metadata region");
  image_.write_metadata(0, w.bytes());
  image_.flush();
}

ExtentDefragResult ExtentStore::defragment() {
  commit_frees();
  ExtentDefragResult result;
  result.mean_fragments_before = mean_fragments();
  std::vector<ObjectId> stuck;
  for (int pass = 0; pass < 8; ++pass) {
    std::vector<std::pair<std::uint32_t, ObjectId>> order;
    for (const auto& [id, rec] : blobs_) {
      const auto frags = count_fragments(rec);
      if (frags > 1) order.emplace_back(frags, id);
    }
    std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
      return a.first != b.first ? a.first > b.first : a.second < b.second;
    });
    std::uint64_t moved = 0;
    stuck.clear();
    for (const auto& [frags, id] : order) {
      BlobRecord& rec = blobs_.at(id);
      auto target = cache_.allocate_contiguous(allocated_bytes(rec));
      if (!target) {
        stuck.push_back(id);
        continue;
      }
      Bytes data(rec.size_bytes);
      read_logical(extents_of(rec), data);
      image_.write_data(target->offset, data);
      // The vacated copy is wiped so the relocated blob has one physical image.
      for (const auto& e : extents_of(rec)) {
        const Bytes zero(e.length);
        image_.write_data(e.offset, zero);
      }
      free_blob(rec);
      rec.placement = ExtentList{*target};
      commit_frees();
      ++moved;
    }
    result.relocations += moved;
    if (moved == 0 || stuck.empty()) break;
  }
  result.unfixable = stuck.size();
  result.mean_fragments_after = mean_fragments();
  return result;
}

void ExtentStore::shatter_free_space(std::uint64_t run_bytes, std::uint64_t ballast_bytes) {
  commit_frees();
  run_bytes = cache_.round_up(run_bytes);
  ballast_bytes = cache_.round_up(ballast_bytes);
  check(run_bytes > 0 && ballast_bytes > 0, ErrorCode::kConfig, "shatter sizes must be positive");
  const std::vector<Extent> runs(cache_.runs().begin(), cache_.runs().end());
  for (const auto& run : runs) {
    cache_.take_at(run.offset, run.length);
    std::uint64_t pos = run.offset;
    while (pos < run.end()) {
      const std::uint64_t piece = std::min(run_bytes, run.end() - pos);
      cache_.add_free({pos, piece});
      pos += piece;
      if (pos >= run.end()) break;
      const std::uint64_t gap = std::min(ballast_bytes, run.end() - pos);
      ballast_.push_back({pos, gap});
      pos += gap;
    }
  }
}

void ExtentStore::release_ballast() {
  for (const auto& e : ballast_) cache_.release(e);
  ballast_.clear();
  commit_frees();
}

}  // namespace blobbench
