#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "blobbench/store.hpp"

namespace blobbench {

enum class FitPolicy {
  kSmallestFit,   // smallest run that holds the whole request, lowest offset on ties
  kLargestFirst,  // always the largest run, lowest offset on ties
};

FitPolicy parse_fit_policy(const std::string& text);

// Orders runs by decreasing length, then increasing volume offset.
struct LargestFirst {
  bool operator()(const Extent& a, const Extent& b) const {
    if (a.length != b.length) return a.length > b.length;
    return a.offset < b.offset;
  }
};

// NTFS-style free-space cache of runs of contiguous free clusters. Released
// space is parked in a pending list and only becomes allocatable after
// commit_frees(), which coalesces it with neighbouring runs.
class RunCache {
 public:
  explicit RunCache(std::uint64_t cluster_bytes, FitPolicy policy = FitPolicy::kSmallestFit);

  std::uint64_t cluster_bytes() const { return cluster_; }
  FitPolicy policy() const { return policy_; }
  std::uint64_t round_up(std::uint64_t bytes) const {
    return (bytes + cluster_ - 1) / cluster_ * cluster_;
  }

  // Adds committed free space directly (initial population), coalescing.
  void add_free(const Extent& extent);

  // Extents totalling round_up(request_bytes): a single run when one is large
  // enough, otherwise the largest runs consumed greedily. Throws kVolumeFull
  // (cache unchanged) when committed free space is insufficient.
  ExtentList allocate(std::uint64_t request_bytes);
  // Single-run allocation or nothing.
  std::optional<Extent> allocate_contiguous(std::uint64_t request_bytes);
  // Front of the largest run when it holds the request, else allocate().
  ExtentList allocate_from_largest(std::uint64_t request_bytes);
  // Front of the lowest-offset run that holds the request, else allocate().
  ExtentList allocate_lowest(std::uint64_t request_bytes);
  // Takes up to `want` bytes (cluster-rounded) from a committed run that
  // starts exactly at `offset`. Returns the bytes taken, possibly 0.
  std::uint64_t take_at(std::uint64_t offset, std::uint64_t want);

  // Defers the extent until the next commit. Overlap with cached or pending
  // space is a double free (kInvariant).
  void release(const Extent& extent);
  void commit_frees();

  std::uint64_t free_bytes() const { return free_bytes_; }
  std::uint64_t pending_bytes() const { return pending_bytes_; }
  std::size_t run_count() const { return by_offset_.size(); }
  std::optional<Extent> largest_run() const;

  const std::set<Extent, LargestFirst>& runs() const { return by_size_; }
  std::vector<Extent> pending() const;

  // Ordering, disjointness, non-abutting runs, pending ∩ cached = ∅.
  void check_invariants() const;

 private:
  void insert_run(const Extent& extent);
  void erase_run(Extent extent);
  Extent split_front(Extent run, std::uint64_t bytes);
  bool overlaps_cached(const Extent& extent) const;
  bool overlaps_pending(const Extent& extent) const;

  std::uint64_t cluster_;
  FitPolicy policy_;
  std::set<Extent, LargestFirst> by_size_;
  std::map<std::uint64_t, std::uint64_t> by_offset_;
  std::map<std::uint64_t, std::uint64_t> pending_;
  std::uint64_t free_bytes_ = 0;
  std::uint64_t pending_bytes_ = 0;
};

}  // namespace blobbench
