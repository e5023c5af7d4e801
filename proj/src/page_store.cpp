#include "blobbench/page_store.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>

#include "blobbench/error.hpp"

namespace blobbench {
namespace {

constexpr char kPageMagic[8] = {'B', 'L', 'O', 'B', 'P', 'A', 'G', 'E'};
constexpr char kRootMagic[8] = {'L', 'O', 'B', 'R', 'O', 'O', 'T', '1'};
constexpr char kSnapMagic[8] = {'P', 'G', 'S', 'N', 'A', 'P', '0', '1'};
constexpr std::size_t kPageHeaderUsed = 44;
constexpr std::size_t kSnapHeader = 8 + 4 + 8 + 8;

constexpr std::array<std::string_view, 7> kCutPoints = {
    "after-alloc-logged", "mid-data",    "after-data-written",       "torn-commit",
    "after-commit",       "after-free-logged", "checkpoint-after-snapshot",
};

const PageList& pages_of(const BlobRecord& blob) { return std::get<PageList>(blob.placement); }
PageList& pages_of(BlobRecord& blob) { return std::get<PageList>(blob.placement); }

void write_runs(ByteWriter& w, std::span<const std::uint64_t> pages) {
  const auto runs = to_runs(pages);
  w.u32(static_cast<std::uint32_t>(runs.size()));
  for (const auto& r : runs) {
    w.u32(r.first);
    w.u32(r.count);
  }
}

PageList read_runs(ByteReader& r) {
  const std::uint32_t n = r.u32();
  std::vector<PageRun> runs(n);
  for (auto& run : runs) {
    run.first = r.u32();
    run.count = r.u32();
  }
  return from_runs(runs);
}

}  // namespace

// ---------------------------------------------------------------- allocator

PageAllocator::PageAllocator(std::uint64_t page_count)
    : words_((page_count + 63) / 64, 0), pages_(page_count), free_(page_count) {
  if (page_count % 64 != 0) words_.back() = ~0ULL << (page_count % 64);
}

bool PageAllocator::is_free(std::uint64_t page) const {
  check(page < pages_, ErrorCode::kInvariant, "page index out of range");
  return ((words_[page / 64] >> (page % 64)) & 1U) == 0;
}

PageList PageAllocator::allocate(std::uint64_t n) {
  check(n > 0, ErrorCode::kInvariant, "page allocation must be positive");
  if (n > free_) {
    fail(ErrorCode::kVolumeFull, "volume full: need " + std::to_string(n) + " pages, " +
                                     std::to_string(free_) + " free");
  }
  PageList out;
  out.reserve(n);
  for (std::uint64_t w = first_open_word_; out.size() < n; ++w) {
    std::uint64_t open = ~words_[w];
    while (open != 0 && out.size() < n) {
      const int bit = std::countr_zero(open);
      open &= open - 1;
      words_[w] |= 1ULL << bit;
      out.push_back(w * 64 + static_cast<std::uint64_t>(bit));
    }
  }
  free_ -= n;
  while (first_open_word_ < words_.size() && words_[first_open_word_] == ~0ULL) ++first_open_word_;
  return out;
}

void PageAllocator::mark_used(std::uint64_t page) {
  check(is_free(page), ErrorCode::kInvariant, "page " + std::to_string(page) + " already in use");
  words_[page / 64] |= 1ULL << (page % 64);
  --free_;
  while (first_open_word_ < words_.size() && words_[first_open_word_] == ~0ULL) ++first_open_word_;
}

void PageAllocator::release(std::uint64_t page) {
  check(!is_free(page), ErrorCode::kInvariant, "double free of page " + std::to_string(page));
  words_[page / 64] &= ~(1ULL << (page % 64));
  ++free_;
  first_open_word_ = std::min(first_open_word_, page / 64);
}

std::vector<PageRun> to_runs(std::span<const std::uint64_t> pages) {
  std::vector<PageRun> runs;
  for (const auto p : pages) {
    check(p < PageStore::kNoPage, ErrorCode::kInvariant, "page index exceeds 32 bits");
    if (!runs.empty() && runs.back().first + runs.back().count == p) {
      ++runs.back().count;
    } else {
      runs.push_back({static_cast<std::uint32_t>(p), 1});
    }
  }
  return runs;
}

PageList from_runs(std::span<const PageRun> runs) {
  PageList pages;
  for (const auto& r : runs) {
    for (std::uint32_t i = 0; i < r.count; ++i) pages.push_back(std::uint64_t{r.first} + i);
  }
  return pages;
}

// ---------------------------------------------------------------- log

WriteAheadLog::WriteAheadLog(std::unique_ptr<Backing> backing)
    : backing_(std::move(backing)), end_(backing_->size()) {}

std::vector<WalRecord> WriteAheadLog::load() {
  const std::uint64_t size = backing_->size();
  Bytes raw(size);
  backing_->read(0, raw);
  std::vector<WalRecord> records;
  std::uint64_t pos = 0;
  std::uint64_t last_lsn = 0;
  while (size - pos >= 8) {
    const std::uint32_t len = load_u32le(raw.data() + pos);
    const std::uint32_t crc = load_u32le(raw.data() + pos + 4);
    if (len < 9 || len > size - pos - 8) break;
    const auto body = std::span<const std::byte>(raw).subspan(pos + 8, len);
    if (crc32(body) != crc) break;
    WalRecord rec;
    rec.lsn = load_u64le(body.data());
    const auto kind = static_cast<std::uint8_t>(body[8]);
    if (kind < 1 || kind > 4 || rec.lsn <= last_lsn) break;
    rec.kind = static_cast<WalKind>(kind);
    rec.payload.assign(body.begin() + 9, body.end());
    last_lsn = rec.lsn;
    records.push_back(std::move(rec));
    pos += 8 + len;
  }
  stats_.torn_tail_bytes = size - pos;
  if (pos != size) backing_->resize(pos);
  end_ = pos;
  next_lsn_ = std::max(next_lsn_, last_lsn + 1);
  return records;
}

Bytes WriteAheadLog::encode(WalKind kind, std::span<const std::byte> payload) {
  ByteWriter body;
  body.u64(next_lsn_++);
  body.u8(static_cast<std::uint8_t>(kind));
  body.raw(payload);
  ByteWriter rec;
  rec.u32(static_cast<std::uint32_t>(body.size()));
  rec.u32(crc32(body.bytes()));
  rec.raw(body.bytes());
  return rec.take();
}

void WriteAheadLog::write_encoded(std::span<const std::byte> record) {
  backing_->resize(end_ + record.size());
  backing_->write(end_, record);
  end_ += record.size();
  ++stats_.records;
  stats_.bytes_appended += record.size();
  stats_.peak_bytes = std::max(stats_.peak_bytes, end_);
}

std::uint64_t WriteAheadLog::append(WalKind kind, std::span<const std::byte> payload) {
  const Bytes rec = encode(kind, payload);
  write_encoded(rec);
  return next_lsn_ - 1;
}

void WriteAheadLog::truncate() {
  backing_->resize(0);
  backing_->flush();
  end_ = 0;
  ++stats_.truncations;
}

// ---------------------------------------------------------------- store

PageStore::PageStore(VolumeImage image, std::unique_ptr<Backing> wal, PageStoreOptions options)
    : image_(std::move(image)),
      wal_(std::move(wal)),
      options_(options),
      allocator_(image_.data_bytes() / image_.geometry().page_bytes) {
  check(image_.backend() == BackendKind::kPage, ErrorCode::kConfig,
        "image is not formatted for the page backend");
  check(geometry().page_header_bytes >= kPageHeaderUsed &&
            geometry().page_header_bytes < geometry().page_bytes,
        ErrorCode::kConfig, "page header must hold at least 44 bytes and leave room for payload");
  check(allocator_.page_count() > 0 && allocator_.page_count() < kNoPage, ErrorCode::kConfig,
        "data region must hold between 1 and 2^32-1 pages");
}

std::span<const std::string_view> PageStore::cut_points() { return kCutPoints; }

PageStore PageStore::create(VolumeImage image, std::unique_ptr<Backing> wal,
                            PageStoreOptions options) {
  PageStore store(std::move(image), std::move(wal), options);
  store.wal_.truncate();
  store.write_snapshot();
  return store;
}

PageStore PageStore::open(VolumeImage image, std::unique_ptr<Backing> wal,
                          PageStoreOptions options) {
  PageStore store(std::move(image), std::move(wal), options);
  check(store.load_snapshot(), ErrorCode::kCorrupt, "no valid page-store snapshot in the image");
  const auto records = store.wal_.load();
  store.wal_.set_next_lsn(std::max(store.wal_.next_lsn(), store.snapshot_lsn_ + 1));
  store.replay(records);
  store.rebuild_allocator();
  for (const auto& rec : records) {
    if (rec.lsn <= store.snapshot_lsn_ || rec.kind != WalKind::kAllocPages) continue;
    ByteReader r(rec.payload);
    r.u64();
    r.u64();
    for (const auto page : read_runs(r)) {
      if (page < store.allocator_.page_count() && store.allocator_.is_free(page)) {
        ++store.orphan_pages_;
      }
    }
  }
  store.write_snapshot();
  store.wal_.truncate();
  return store;
}

void PageStore::reach(std::string_view point) {
  if (injector_ != nullptr) injector_->reach(point);
}

void PageStore::write_page(std::uint64_t page, const BlobRecord& blob, std::uint32_t position,
                           std::span<const std::byte> payload) {
  const std::uint64_t page_bytes = geometry().page_bytes;
  Bytes buf(page_bytes);
  ByteWriter w;
  w.raw(std::string_view(kPageMagic, 8));
  w.u64(blob.id);
  w.u64(blob.generation);
  w.u32(position);
  w.u32(static_cast<std::uint32_t>(payload.size()));
  w.u64(blob.tag);
  w.u32(crc32(w.bytes()));
  std::memcpy(buf.data(), w.bytes().data(), w.size());
  std::memcpy(buf.data() + geometry().page_header_bytes, payload.data(), payload.size());
  image_.write_data(page * page_bytes, buf);
  ++chain_pages_written_;
}

void PageStore::write_root(std::uint32_t page, const BlobRecord& blob) {
  Bytes buf(geometry().page_bytes);
  ByteWriter w;
  w.raw(std::string_view(kRootMagic, 8));
  w.u64(blob.id);
  w.u64(blob.generation);
  w.u64(blob.size_bytes);
  w.u64(blob.tag);
  w.u32(static_cast<std::uint32_t>(pages_of(blob).size()));
  w.u32(crc32(w.bytes()));
  std::memcpy(buf.data(), w.bytes().data(), w.size());
  image_.write_data(std::uint64_t{page} * geometry().page_bytes, buf);
  ++root_pages_written_;
}

void PageStore::log_commit(const Entry& entry) {
  ByteWriter w;
  w.u64(entry.record.id);
  w.u64(entry.record.generation);
  w.u64(entry.record.size_bytes);
  w.u64(entry.record.tag);
  w.u32(entry.root);
  write_runs(w, pages_of(entry.record));
  const Bytes rec = wal_.encode(WalKind::kCommitBlob, w.bytes());
  if (injector_ != nullptr && injector_->fires("torn-commit")) {
    wal_.write_encoded(std::span(rec).first(rec.size() / 2));
    wal_.flush();
    throw CrashInjected("torn-commit");
  }
  wal_.write_encoded(rec);
  if (options_.flush_on_commit) wal_.flush();
}

void PageStore::release_pages(std::span<const std::uint64_t> pages) {
  for (const auto p : pages) allocator_.release(p);
}

BlobRecord PageStore::put(ObjectId id, PayloadSource& payload, std::uint64_t write_buffer_bytes,
                          std::uint64_t tag) {
  check(write_buffer_bytes > 0, ErrorCode::kConfig, "write buffer must be positive");
  auto old = blobs_.find(id);
  Entry fresh;
  fresh.record.id = id;
  fresh.record.tag = tag;
  fresh.record.generation = old == blobs_.end() ? 1 : old->second.record.generation + 1;
  fresh.record.placement = PageList{};
  PageList& chain = pages_of(fresh.record);

  const std::uint64_t usable = usable_per_page();
  const std::uint64_t header = geometry().page_header_bytes;
  Bytes chunk(write_buffer_bytes);
  Bytes page_payload(usable);
  std::uint64_t size = 0;
  try {
    bool logged = false;
    if (options_.root_pages) fresh.root = static_cast<std::uint32_t>(allocator_.allocate(1).front());
    for (;;) {
      const std::size_t n = read_full(payload, chunk);
      if (n == 0) break;
      const std::uint64_t need = chain_length(size + n) - chain.size();
      if (need > 0) {
        const PageList pages = allocator_.allocate(need);
        chain.insert(chain.end(), pages.begin(), pages.end());
        ByteWriter w;
        w.u64(id);
        w.u64(fresh.record.generation);
        PageList logged_pages = pages;
        if (!logged && fresh.root != kNoPage) logged_pages.insert(logged_pages.begin(), fresh.root);
        write_runs(w, logged_pages);
        wal_.append(WalKind::kAllocPages, w.bytes());
        if (!logged) {
          if (options_.flush_on_commit) wal_.flush();
          logged = true;
          reach("after-alloc-logged");
        }
      }
      ++stats_.append_requests;
      std::size_t used = 0;
      while (used < n) {
        const std::uint64_t position = size / usable;
        const std::uint64_t within = size % usable;
        const std::size_t take =
            static_cast<std::size_t>(std::min<std::uint64_t>(usable - within, n - used));
        std::memcpy(page_payload.data() + within, chunk.data() + used, take);
        used += take;
        size += take;
        if (within + take == usable) {
          write_page(chain[position], fresh.record, static_cast<std::uint32_t>(position),
                     page_payload);
        }
      }
      reach("mid-data");
      if (n < chunk.size()) break;
    }
    check(size > 0, ErrorCode::kConfig, "empty payload");
    if (size % usable != 0) {
      const std::uint64_t position = size / usable;
      write_page(chain[position], fresh.record, static_cast<std::uint32_t>(position),
                 std::span(page_payload).first(size % usable));
    }
    fresh.record.size_bytes = size;
    if (fresh.root != kNoPage) write_root(fresh.root, fresh.record);
    reach("after-data-written");
    if (options_.flush_on_commit) image_.flush();
    log_commit(fresh);
  } catch (const Error&) {
    // Never committed: the pages go straight back.
    release_pages(chain);
    if (fresh.root != kNoPage) allocator_.release(fresh.root);
    ++stats_.failed_puts;
    throw;
  }
  (void)header;
  reach("after-commit");

  if (old != blobs_.end()) {
    const Entry& prior = old->second;
    ByteWriter w;
    w.u64(id);
    w.u64(prior.record.generation);
    w.u8(0);
    w.u32(prior.root);
    write_runs(w, pages_of(prior.record));
    wal_.append(WalKind::kFreePages, w.bytes());
    reach("after-free-logged");
    release_pages(pages_of(prior.record));
    if (prior.root != kNoPage) retired_.insert(prior.root);
    stats_.internal_fragmentation_bytes -=
        pages_of(prior.record).size() * usable - prior.record.size_bytes;
    old->second = fresh;
  } else {
    blobs_.emplace(id, fresh);
  }
  stats_.internal_fragmentation_bytes += chain.size() * usable - size;
  stats_.bytes_written += size;
  ++stats_.puts;
  return fresh.record;
}

Bytes PageStore::get(ObjectId id) {
  auto it = blobs_.find(id);
  if (it == blobs_.end()) fail(ErrorCode::kNotFound, "no object " + std::to_string(id));
  const BlobRecord& rec = it->second.record;
  const PageList& chain = pages_of(rec);
  const std::uint64_t page_bytes = geometry().page_bytes;
  const std::uint64_t header = geometry().page_header_bytes;
  const std::uint64_t usable = usable_per_page();
  Bytes out(rec.size_bytes);
  Bytes run_buf;
  std::uint64_t position = 0;
  for (const auto& run : to_runs(chain)) {
    run_buf.resize(run.count * page_bytes);
    image_.read_data(std::uint64_t{run.first} * page_bytes, run_buf);
    for (std::uint32_t i = 0; i < run.count; ++i, ++position) {
      const std::byte* page = run_buf.data() + i * page_bytes;
      const std::uint64_t len =
          std::min<std::uint64_t>(usable, rec.size_bytes - position * usable);
      const bool ok = std::memcmp(page, kPageMagic, 8) == 0 && load_u64le(page + 8) == rec.id &&
                      load_u64le(page + 16) == rec.generation &&
                      load_u32le(page + 24) == position && load_u32le(page + 28) == len &&
                      load_u32le(page + 40) == crc32(std::span(page, 40));
      if (!ok) {
        fail(ErrorCode::kCorrupt, "page " + std::to_string(run.first + i) + " of object " +
                                      std::to_string(id) + " has a bad header");
      }
      std::memcpy(out.data() + position * usable, page + header, len);
    }
  }
  stats_.bytes_read += out.size();
  return out;
}

void PageStore::remove(ObjectId id) {
  auto it = blobs_.find(id);
  if (it == blobs_.end()) fail(ErrorCode::kNotFound, "no object " + std::to_string(id));
  const Entry& entry = it->second;
  ByteWriter w;
  w.u64(id);
  w.u64(entry.record.generation);
  w.u8(1);
  w.u32(entry.root);
  write_runs(w, pages_of(entry.record));
  wal_.append(WalKind::kFreePages, w.bytes());
  if (options_.flush_on_commit) wal_.flush();
  release_pages(pages_of(entry.record));
  if (entry.root != kNoPage) retired_.insert(entry.root);
  stats_.internal_fragmentation_bytes -=
      pages_of(entry.record).size() * usable_per_page() - entry.record.size_bytes;
  blobs_.erase(it);
}

std::vector<ObjectId> PageStore::list() const {
  std::vector<ObjectId> ids;
  ids.reserve(blobs_.size());
  for (const auto& [id, entry] : blobs_) ids.push_back(id);
  return ids;
}

std::optional<BlobRecord> PageStore::find(ObjectId id) const {
  auto it = blobs_.find(id);
  if (it == blobs_.end()) return std::nullopt;
  return it->second.record;
}

std::optional<std::uint32_t> PageStore::root_page(ObjectId id) const {
  auto it = blobs_.find(id);
  if (it == blobs_.end() || it->second.root == kNoPage) return std::nullopt;
  return it->second.root;
}

void PageStore::checkpoint() {
  for (const auto page : retired_) allocator_.release(page);
  retired_.clear();
  write_snapshot();
  reach("checkpoint-after-snapshot");
  ByteWriter w;
  w.u64(snapshot_lsn_);
  wal_.append(WalKind::kCheckpoint, w.bytes());
  wal_.flush();
  wal_.truncate();
}

void PageStore::write_snapshot() {
  ByteWriter body;
  body.u64(blobs_.size());
  for (const auto& [id, entry] : blobs_) {
    body.u64(id);
    body.u64(entry.record.size_bytes);
    body.u64(entry.record.generation);
    body.u64(entry.record.tag);
    body.u32(entry.root);
    write_runs(body, pages_of(entry.record));
  }
  body.u32(static_cast<std::uint32_t>(retired_.size()));
  for (const auto page : retired_) body.u32(page);

  const std::uint64_t slot_bytes = image_.metadata_bytes() / 2;
  const std::uint64_t lsn = wal_.next_lsn() - 1;
  ByteWriter w;
  w.raw(std::string_view(kSnapMagic, 8));
  w.u32(1);
  w.u64(lsn);
  w.u64(body.size());
  w.raw(body.bytes());
  w.u32(crc32(body.bytes()));
  check(w.size() <= slot_bytes, ErrorCode::kVolumeFull,
        "page-store snapshot (" + std::to_string(w.size()) +
            " bytes) exceeds its metadata slot of " + std::to_string(slot_bytes));
  const int slot = 1 - snapshot_slot_;
  image_.write_metadata(static_cast<std::uint64_t>(slot) * slot_bytes, w.bytes());
  image_.flush();
  snapshot_slot_ = slot;
  snapshot_lsn_ = lsn;
}

bool PageStore::load_snapshot() {
  const std::uint64_t slot_bytes = image_.metadata_bytes() / 2;
  std::optional<std::pair<std::uint64_t, int>> best;
  Bytes best_body;
  for (int slot = 0; slot < 2; ++slot) {
    Bytes head(kSnapHeader);
    image_.read_metadata(static_cast<std::uint64_t>(slot) * slot_bytes, head);
    if (std::memcmp(head.data(), kSnapMagic, 8) != 0 || load_u32le(head.data() + 8) != 1) continue;
    const std::uint64_t lsn = load_u64le(head.data() + 12);
    const std::uint64_t len = load_u64le(head.data() + 20);
    if (len > slot_bytes - kSnapHeader - 4) continue;
    Bytes body(len + 4);
    image_.read_metadata(static_cast<std::uint64_t>(slot) * slot_bytes + kSnapHeader, body);
    if (load_u32le(body.data() + len) != crc32(std::span(body).first(len))) continue;
    if (!best || lsn > best->first) {
      best = std::make_pair(lsn, slot);
      body.resize(len);
      best_body = std::move(body);
    }
  }
  if (!best) return false;
  snapshot_lsn_ = best->first;
  snapshot_slot_ = best->second;
  ByteReader r(best_body);
  const std::uint64_t count = r.u64();
  for (std::uint64_t i = 0; i < count; ++i) {
    Entry entry;
    entry.record.id = r.u64();
    entry.record.size_bytes = r.u64();
    entry.record.generation = r.u64();
    entry.record.tag = r.u64();
    entry.root = r.u32();
    entry.record.placement = read_runs(r);
    blobs_.emplace(entry.record.id, std::move(entry));
  }
  const std::uint32_t retired = r.u32();
  for (std::uint32_t i = 0; i < retired; ++i) retired_.insert(r.u32());
  return true;
}

void PageStore::replay(const std::vector<WalRecord>& records) {
  for (const auto& rec : records) {
    if (rec.lsn <= snapshot_lsn_) continue;
    ByteReader r(rec.payload);
    switch (rec.kind) {
      case WalKind::kAllocPages:
      case WalKind::kCheckpoint:
        break;  // uncommitted allocations fall back to free in rebuild_allocator()
      case WalKind::kCommitBlob: {
        Entry entry;
        entry.record.id = r.u64();
        entry.record.generation = r.u64();
        entry.record.size_bytes = r.u64();
        entry.record.tag = r.u64();
        entry.root = r.u32();
        entry.record.placement = read_runs(r);
        auto it = blobs_.find(entry.record.id);
        if (it != blobs_.end()) {
          if (it->second.record.generation >= entry.record.generation) break;
          if (it->second.root != kNoPage) retired_.insert(it->second.root);
          it->second = std::move(entry);
        } else {
          blobs_.emplace(entry.record.id, std::move(entry));
        }
        break;
      }
      case WalKind::kFreePages: {
        const ObjectId id = r.u64();
        const std::uint64_t generation = r.u64();
        const bool drop = r.u8() != 0;
        auto it = blobs_.find(id);
        if (drop && it != blobs_.end() && it->second.record.generation == generation) {
          if (it->second.root != kNoPage) retired_.insert(it->second.root);
          blobs_.erase(it);
        }
        break;
      }
    }
  }
}

void PageStore::rebuild_allocator() {
  allocator_ = PageAllocator(allocator_.page_count());
  auto claim = [this](std::uint64_t page) {
    if (page >= allocator_.page_count() || !allocator_.is_free(page)) {
      fail(ErrorCode::kCorrupt, "recovered state claims page " + std::to_string(page) + " twice");
    }
    allocator_.mark_used(page);
  };
  stats_.internal_fragmentation_bytes = 0;
  for (const auto& [id, entry] : blobs_) {
    check(pages_of(entry.record).size() == chain_length(entry.record.size_bytes),
          ErrorCode::kCorrupt, "recovered chain of object " + std::to_string(id) + " has wrong length");
    for (const auto page : pages_of(entry.record)) claim(page);
    if (entry.root != kNoPage) claim(entry.root);
    stats_.internal_fragmentation_bytes +=
        pages_of(entry.record).size() * usable_per_page() - entry.record.size_bytes;
  }
  for (const auto page : retired_) claim(page);
}

std::map<ObjectId, std::uint32_t> PageStore::ground_truth_fragments() const {
  std::map<ObjectId, std::uint32_t> out;
  for (const auto& [id, entry] : blobs_) out.emplace(id, count_fragments(entry.record));
  return out;
}

double PageStore::mean_fragments() const {
  if (blobs_.empty()) return 0.0;
  double total = 0;
  for (const auto& [id, entry] : blobs_) total += count_fragments(entry.record);
  return total / static_cast<double>(blobs_.size());
}

void PageStore::audit() const {
  std::vector<std::uint8_t> owner(allocator_.page_count(), 0);
  auto claim = [&owner](std::uint64_t page, const std::string& what) {
    check(page < owner.size(), ErrorCode::kInvariant, what + " page out of range");
    check(owner[page] == 0, ErrorCode::kInvariant,
          "page " + std::to_string(page) + " claimed twice (" + what + ")");
    owner[page] = 1;
  };
  for (const auto& [id, entry] : blobs_) {
    const PageList& chain = pages_of(entry.record);
    check(chain.size() == chain_length(entry.record.size_bytes), ErrorCode::kInvariant,
          "object " + std::to_string(id) + " violates the chain-length formula");
    for (const auto page : chain) claim(page, "chain of object " + std::to_string(id));
    if (entry.root != kNoPage) claim(entry.root, "root of object " + std::to_string(id));
    check(options_.root_pages == (entry.root != kNoPage), ErrorCode::kInvariant,
          "root page presence does not match the store options");
  }
  for (const auto page : retired_) claim(page, "retired root");
  std::uint64_t leaked = 0;
  std::uint64_t free_claimed = 0;
  for (std::uint64_t p = 0; p < owner.size(); ++p) {
    const bool is_free = allocator_.is_free(p);
    if (!is_free && owner[p] == 0) ++leaked;
    if (is_free && owner[p] != 0) ++free_claimed;
  }
  check(leaked == 0, ErrorCode::kInvariant, std::to_string(leaked) + " leaked pages");
  check(free_claimed == 0, ErrorCode::kInvariant,
        std::to_string(free_claimed) + " pages are both free and in use");
}

CopyDefragResult PageStore::defragment_by_copy(PageStore& target,
                                               std::uint64_t write_buffer_bytes) {
  check(target.blobs_.empty(), ErrorCode::kConfig, "defragment target must be an empty store");
  std::uint64_t largest = 0;
  std::uint64_t total = 0;
  for (const auto& [id, entry] : blobs_) {
    const std::uint64_t pages = target.footprint_pages(entry.record.size_bytes);
    largest = std::max(largest, pages);
    total += pages;
  }
  const std::uint64_t page_bytes = target.geometry().page_bytes;
  const std::uint64_t available = target.allocator_.free_count();
  if (available < largest || available < total) {
    fail(ErrorCode::kRefused,
         "defragment_by_copy refused: target has " + std::to_string(available * page_bytes) +
             " free bytes, largest object needs " + std::to_string(largest * page_bytes) +
             "; estimated_bytes_required=" + std::to_string(total * page_bytes));
  }
  CopyDefragResult result;
  result.mean_fragments_before = mean_fragments();
  const auto ids = list();
  for (const auto id : ids) {
    const Bytes data = get(id);
    SpanSource source(data);
    target.put(id, source, write_buffer_bytes, blobs_.at(id).record.tag);
    remove(id);
    ++result.copied;
  }
  checkpoint();
  target.checkpoint();
  result.mean_fragments_after = target.mean_fragments();
  return result;
}

}  // namespace blobbench
