#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "blobbench/kv_config.hpp"
#include "blobbench/rng.hpp"

namespace blobbench {

inline constexpr std::uint64_t kMarkerInterval = 1024;

using ObjectId = std::uint64_t;

enum class SizeKind { kConstant, kUniformAboutMean };

// Object-size distribution. Every sample is a whole number of 1KB marker
// intervals. The uniform variant draws from [mean*(1-spread), mean*(1+spread)]
// with the bounds snapped inward to 1KB multiples; the default spread of 0.5
// gives [mean/2, 3*mean/2].
struct SizeDistribution {
  SizeKind kind = SizeKind::kConstant;
  std::uint64_t mean_bytes = 10 * 1024 * 1024;
  double spread = 0.5;

  static SizeDistribution constant(std::uint64_t mean) { return {SizeKind::kConstant, mean, 0.5}; }
  static SizeDistribution uniform(std::uint64_t mean, double spread = 0.5) {
    return {SizeKind::kUniformAboutMean, mean, spread};
  }

  void validate() const;
  std::uint64_t lower_bound() const;
  std::uint64_t upper_bound() const;
};

std::uint64_t sample_size(const SizeDistribution& dist, Rng& rng);

// Exact non-negative rational, used for storage ages such as 0, 2, 4 or 1.5.
struct Age {
  std::uint64_t num = 0;
  std::uint64_t den = 1;

  static Age parse(const std::string& text);
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  std::string to_string() const;
  // Label usable in file names: "2", "1p5".
  std::string label() const;

  friend bool operator==(const Age& a, const Age& b) {
    return static_cast<unsigned __int128>(a.num) * b.den ==
           static_cast<unsigned __int128>(b.num) * a.den;
  }
  friend bool operator<(const Age& a, const Age& b) {
    return static_cast<unsigned __int128>(a.num) * b.den <
           static_cast<unsigned __int128>(b.num) * a.den;
  }
};

enum class ChurnMode { kSafeWrite, kMixed };

struct WorkloadSpec {
  std::uint64_t seed = 1;
  SizeDistribution size_dist;
  std::uint64_t volume_capacity_bytes = 1ULL << 30;
  double target_occupancy = 0.9;
  std::uint64_t write_buffer_bytes = 64 * 1024;
  std::vector<Age> measurement_ages = {Age{0, 1}, Age{2, 1}, Age{4, 1}};
  std::uint64_t read_sample_count = 1000;
  ChurnMode churn_mode = ChurnMode::kSafeWrite;
  // Mixed mode only: probability that a churn step is a delete + create pair
  // instead of a safe-write.
  double delete_create_fraction = 0.5;

  void validate() const;
  std::uint64_t target_live_bytes() const;

  // Keys: seed, size_kind (constant|uniform), mean_bytes, size_spread,
  // capacity_bytes, target_occupancy, write_buffer_bytes, measurement_ages,
  // read_sample_count, churn_mode (safe_write|mixed), delete_create_fraction.
  static WorkloadSpec from_config(const KvConfig& config);
  KvConfig to_config() const;
};

// Churned bytes (everything deleted or overwritten since bulk load) versus
// bytes currently live.
class StorageAgeLedger {
 public:
  StorageAgeLedger() = default;
  StorageAgeLedger(std::uint64_t live, std::uint64_t churned) : live_(live), churned_(churned) {}

  std::uint64_t live_bytes() const { return live_; }
  std::uint64_t churned_bytes() const { return churned_; }

  // Throws kInvariant when live bytes would go negative; requires live > 0.
  double storage_age() const;
  bool reached(const Age& age) const;

  void record_churn(std::uint64_t overwritten_or_deleted_bytes, std::int64_t live_delta);
  // Bulk-load growth, not churn.
  void record_create(std::uint64_t bytes) { record_churn(0, static_cast<std::int64_t>(bytes)); }

 private:
  std::uint64_t live_ = 0;
  std::uint64_t churned_ = 0;
};

StorageAgeLedger record_churn(StorageAgeLedger ledger, std::uint64_t overwritten_or_deleted_bytes,
                              std::int64_t new_live_delta);

enum class EventKind : std::uint8_t { kBulkCreate, kSafeWrite, kRead, kDelete, kCreate };

std::string_view to_string(EventKind kind);

struct Event {
  EventKind kind;
  ObjectId id;
  std::uint64_t size;   // new size for creates/safe-writes, 0 otherwise
  std::uint32_t pass;   // measurement-age index for reads; churn interval index otherwise

  friend bool operator==(const Event&, const Event&) = default;
};

struct OperationStream {
  std::vector<Event> events;
  std::uint64_t bulk_count = 0;
  std::uint64_t bulk_bytes = 0;

  // FNV-1a over the encoded events; equal streams have equal digests.
  std::uint64_t digest() const;
};

OperationStream build_stream(const WorkloadSpec& spec);

}  // namespace blobbench
