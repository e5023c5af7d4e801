#include "blobbench/run_cache.hpp"

#include "blobbench/error.hpp"

namespace blobbench {

FitPolicy parse_fit_policy(const std::string& text) {
  if (text == "smallest_fit") return FitPolicy::kSmallestFit;
  if (text == "largest_first") return FitPolicy::kLargestFirst;
  fail(ErrorCode::kConfig, "fit policy must be smallest_fit or largest_first, got '" + text + "'");
}

RunCache::RunCache(std::uint64_t cluster_bytes, FitPolicy policy)
    : cluster_(cluster_bytes), policy_(policy) {
  check(cluster_ > 0, ErrorCode::kConfig, "cluster size must be positive");
}

void RunCache::insert_run(const Extent& extent) {
  by_size_.insert(extent);
  by_offset_.emplace(extent.offset, extent.length);
  free_bytes_ += extent.length;
}

void RunCache::erase_run(Extent extent) {
  by_size_.erase(extent);
  by_offset_.erase(extent.offset);
  free_bytes_ -= extent.length;
}

Extent RunCache::split_front(Extent run, std::uint64_t bytes) {
  erase_run(run);
  if (run.length > bytes) insert_run({run.offset + bytes, run.length - bytes});
  return {run.offset, bytes};
}

bool RunCache::overlaps_cached(const Extent& e) const {
  auto it = by_offset_.lower_bound(e.end());
  if (it == by_offset_.begin()) return false;
  --it;
  return it->first + it->second > e.offset;
}

bool RunCache::overlaps_pending(const Extent& e) const {
  auto it = pending_.lower_bound(e.end());
  if (it == pending_.begin()) return false;
  --it;
  return it->first + it->second > e.offset;
}

void RunCache::add_free(const Extent& extent) {
  check(extent.length > 0 && extent.offset % cluster_ == 0 && extent.length % cluster_ == 0,
        ErrorCode::kInvariant, "free extent must be non-empty and cluster aligned");
  check(!overlaps_cached(extent) && !overlaps_pending(extent), ErrorCode::kInvariant,
        "free extent overlaps existing free space");
  Extent merged = extent;
  auto next = by_offset_.find(merged.end());
  if (next != by_offset_.end()) {
    const Extent right{next->first, next->second};
    erase_run(right);
    merged.length += right.length;
  }
  auto prev = by_offset_.lower_bound(merged.offset);
  if (prev != by_offset_.begin()) {
    --prev;
    if (prev->first + prev->second == merged.offset) {
      const Extent left{prev->first, prev->second};
      erase_run(left);
      merged = {left.offset, left.length + merged.length};
    }
  }
  insert_run(merged);
}

std::optional<Extent> RunCache::allocate_contiguous(std::uint64_t request_bytes) {
  check(request_bytes > 0, ErrorCode::kInvariant, "allocation request must be positive");
  const std::uint64_t need = round_up(request_bytes);
  if (by_size_.empty() || by_size_.begin()->length < need) return std::nullopt;
  if (policy_ == FitPolicy::kLargestFirst) return split_front(*by_size_.begin(), need);
  // Runs >= need form a prefix of the largest-first order. The last run of
  // that prefix has the smallest sufficient length; take the lowest offset
  // among runs of that length.
  auto boundary = by_size_.lower_bound(Extent{0, need - 1});
  --boundary;
  const auto best = by_size_.lower_bound(Extent{0, boundary->length});
  return split_front(*best, need);
}

ExtentList RunCache::allocate(std::uint64_t request_bytes) {
  check(request_bytes > 0, ErrorCode::kInvariant, "allocation request must be positive");
  const std::uint64_t need = round_up(request_bytes);
  if (need > free_bytes_) {
    fail(ErrorCode::kVolumeFull, "volume full: need " + std::to_string(need) +
                                     " bytes, committed free " + std::to_string(free_bytes_) +
                                     ", pending " + std::to_string(pending_bytes_));
  }
  if (auto single = allocate_contiguous(need)) return {*single};
  ExtentList out;
  std::uint64_t left = need;
  while (left > 0) {
    const Extent largest = *by_size_.begin();
    const std::uint64_t take = std::min(left, largest.length);
    out.push_back(split_front(largest, take));
    left -= take;
  }
  return out;
}

ExtentList RunCache::allocate_from_largest(std::uint64_t request_bytes) {
  check(request_bytes > 0, ErrorCode::kInvariant, "allocation request must be positive");
  const std::uint64_t need = round_up(request_bytes);
  if (!by_size_.empty() && by_size_.begin()->length >= need) {
    return {split_front(*by_size_.begin(), need)};
  }
  return allocate(need);
}

ExtentList RunCache::allocate_lowest(std::uint64_t request_bytes) {
  check(request_bytes > 0, ErrorCode::kInvariant, "allocation request must be positive");
  const std::uint64_t need = round_up(request_bytes);
  for (const auto& [offset, length] : by_offset_) {
    if (length >= need) return {split_front({offset, length}, need)};
  }
  return allocate(need);
}

std::uint64_t RunCache::take_at(std::uint64_t offset, std::uint64_t want) {
  auto it = by_offset_.find(offset);
  if (it == by_offset_.end() || want == 0) return 0;
  const Extent run{it->first, it->second};
  const std::uint64_t take = std::min(round_up(want), run.length);
  split_front(run, take);
  return take;
}

void RunCache::release(const Extent& extent) {
  check(extent.length > 0 && extent.offset % cluster_ == 0 && extent.length % cluster_ == 0,
        ErrorCode::kInvariant, "released extent must be non-empty and cluster aligned");
  if (overlaps_cached(extent) || overlaps_pending(extent)) {
    fail(ErrorCode::kInvariant, "double free of extent at offset " + std::to_string(extent.offset));
  }
  pending_.emplace(extent.offset, extent.length);
  pending_bytes_ += extent.length;
}

void RunCache::commit_frees() {
  auto pending = std::move(pending_);
  pending_.clear();
  pending_bytes_ = 0;
  for (const auto& [offset, length] : pending) add_free({offset, length});
}

std::optional<Extent> RunCache::largest_run() const {
  if (by_size_.empty()) return std::nullopt;
  return *by_size_.begin();
}

std::vector<Extent> RunCache::pending() const {
  std::vector<Extent> out;
  out.reserve(pending_.size());
  for (const auto& [offset, length] : pending_) out.push_back({offset, length});
  return out;
}

void RunCache::check_invariants() const {
  check(by_size_.size() == by_offset_.size(), ErrorCode::kInvariant, "run indexes disagree");
  std::uint64_t total = 0;
  std::uint64_t prev_end = 0;
  bool first = true;
  for (const auto& [offset, length] : by_offset_) {
    check(by_size_.count(Extent{offset, length}) == 1, ErrorCode::kInvariant,
          "run missing from size index");
    check(length > 0 && offset % cluster_ == 0 && length % cluster_ == 0, ErrorCode::kInvariant,
          "misaligned run");
    if (!first) {
      check(offset > prev_end, ErrorCode::kInvariant, "cached runs overlap or abut");
    }
    first = false;
    prev_end = offset + length;
    total += length;
    check(!overlaps_pending({offset, length}), ErrorCode::kInvariant,
          "pending free overlaps cached run");
  }
  check(total == free_bytes_, ErrorCode::kInvariant, "free byte counter drifted");
  const Extent* last = nullptr;
  for (const auto& run : by_size_) {
    if (last != nullptr) check(LargestFirst{}(*last, run), ErrorCode::kInvariant, "run order broken");
    last = &run;
  }
}

}  // namespace blobbench
