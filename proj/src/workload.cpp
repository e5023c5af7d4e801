#include <numeric>
#include "blobbench/workload.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "blobbench/error.hpp"

namespace blobbench {

void SizeDistribution::validate() const {
  check(mean_bytes > 0, ErrorCode::kConfig, "size distribution mean must be positive");
  check(mean_bytes % kMarkerInterval == 0, ErrorCode::kConfig,
        "size distribution mean must be a multiple of 1024 bytes");
  if (kind == SizeKind::kUniformAboutMean) {
    check(spread >= 0.0 && spread < 1.0, ErrorCode::kConfig, "uniform spread must be in [0, 1)");
    check(lower_bound() > 0, ErrorCode::kConfig, "uniform lower bound rounds to zero");
  }
}

std::uint64_t SizeDistribution::lower_bound() const {
  if (kind == SizeKind::kConstant) return mean_bytes;
  const std::uint64_t units = mean_bytes / kMarkerInterval;
  const auto lo = static_cast<std::uint64_t>(std::ceil(static_cast<double>(units) * (1.0 - spread)));
  return lo * kMarkerInterval;
}

std::uint64_t SizeDistribution::upper_bound() const {
  if (kind == SizeKind::kConstant) return mean_bytes;
  // Mirror the lower bound around the mean so the expectation is exact.
  const std::uint64_t units = mean_bytes / kMarkerInterval;
  const std::uint64_t lo = lower_bound() / kMarkerInterval;
  return (2 * units - lo) * kMarkerInterval;
}

std::uint64_t sample_size(const SizeDistribution& dist, Rng& rng) {
  dist.validate();
  if (dist.kind == SizeKind::kConstant) return dist.mean_bytes;
  const std::uint64_t lo = dist.lower_bound() / kMarkerInterval;
  const std::uint64_t hi = dist.upper_bound() / kMarkerInterval;
  return rng.between(lo, hi) * kMarkerInterval;
}

Age Age::parse(const std::string& text) {
  Age age;
  const auto dot = text.find('.');
  if (dot == std::string::npos) {
    age.num = parse_u64(text, "storage age");
    return age;
  }
  const std::string whole = text.substr(0, dot);
  const std::string frac = text.substr(dot + 1);
  check(!frac.empty() && frac.size() <= 9, ErrorCode::kConfig, "bad storage age '" + text + "'");
  std::uint64_t den = 1;
  for (std::size_t i = 0; i < frac.size(); ++i) den *= 10;
  age.num = (whole.empty() ? 0 : parse_u64(whole, "storage age")) * den +
            parse_u64(frac, "storage age");
  age.den = den;
  const std::uint64_t g = std::gcd(age.num, age.den);
  if (g > 1) {
    age.num /= g;
    age.den /= g;
  }
  return age;
}

std::string Age::to_string() const {
  if (den == 1) return std::to_string(num);
  std::ostringstream out;
  out << value();
  return out.str();
}

std::string Age::label() const {
  std::string s = to_string();
  std::replace(s.begin(), s.end(), '.', 'p');
  return s;
}

void WorkloadSpec::validate() const {
  size_dist.validate();
  check(target_occupancy > 0.0 && target_occupancy < 1.0, ErrorCode::kConfig,
        "target_occupancy must be in (0, 1)");
  check(write_buffer_bytes > 0 && write_buffer_bytes % kMarkerInterval == 0, ErrorCode::kConfig,
        "write_buffer_bytes must be a positive multiple of 1024");
  check(read_sample_count > 0, ErrorCode::kConfig, "read_sample_count must be positive");
  check(!measurement_ages.empty(), ErrorCode::kConfig, "measurement_ages must not be empty");
  for (std::size_t i = 0; i < measurement_ages.size(); ++i) {
    check(measurement_ages[i].den > 0, ErrorCode::kConfig, "storage age denominator is zero");
    if (i > 0) {
      check(measurement_ages[i - 1] < measurement_ages[i], ErrorCode::kConfig,
            "measurement_ages must be strictly increasing");
    }
  }
  check(churn_mode == ChurnMode::kSafeWrite ||
            (delete_create_fraction >= 0.0 && delete_create_fraction <= 1.0),
        ErrorCode::kConfig, "delete_create_fraction must be in [0, 1]");
  check(target_live_bytes() >= 2 * size_dist.upper_bound(), ErrorCode::kConfig,
        "occupancy infeasible: fewer than two objects fit in " +
            std::to_string(volume_capacity_bytes) + " bytes");
}

std::uint64_t WorkloadSpec::target_live_bytes() const {
  return static_cast<std::uint64_t>(
      std::floor(target_occupancy * static_cast<double>(volume_capacity_bytes)));
}

WorkloadSpec WorkloadSpec::from_config(const KvConfig& config) {
  WorkloadSpec spec;
  spec.seed = config.get_u64("seed", spec.seed);
  const std::string kind = config.get_string("size_kind", "constant");
  if (kind == "constant") {
    spec.size_dist.kind = SizeKind::kConstant;
  } else if (kind == "uniform") {
    spec.size_dist.kind = SizeKind::kUniformAboutMean;
  } else {
    fail(ErrorCode::kConfig, "size_kind must be constant or uniform, got '" + kind + "'");
  }
  spec.size_dist.mean_bytes = config.get_u64("mean_bytes", spec.size_dist.mean_bytes);
  spec.size_dist.spread = config.get_double("size_spread", spec.size_dist.spread);
  spec.volume_capacity_bytes = config.get_u64("capacity_bytes", spec.volume_capacity_bytes);
  spec.target_occupancy = config.get_double("target_occupancy", spec.target_occupancy);
  spec.write_buffer_bytes = config.get_u64("write_buffer_bytes", spec.write_buffer_bytes);
  if (auto ages = config.find("measurement_ages")) {
    spec.measurement_ages.clear();
    for (const auto& item : split_list(*ages)) spec.measurement_ages.push_back(Age::parse(item));
  }
  spec.read_sample_count = config.get_u64("read_sample_count", spec.read_sample_count);
  const std::string mode = config.get_string("churn_mode", "safe_write");
  if (mode == "safe_write") {
    spec.churn_mode = ChurnMode::kSafeWrite;
  } else if (mode == "mixed") {
    spec.churn_mode = ChurnMode::kMixed;
  } else {
    fail(ErrorCode::kConfig, "churn_mode must be safe_write or mixed, got '" + mode + "'");
  }
  spec.delete_create_fraction =
      config.get_double("delete_create_fraction", spec.delete_create_fraction);
  spec.validate();
  return spec;
}

KvConfig WorkloadSpec::to_config() const {
  KvConfig config;
  auto num = [](double v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
  };
  config.set("seed", std::to_string(seed));
  config.set("size_kind", size_dist.kind == SizeKind::kConstant ? "constant" : "uniform");
  config.set("mean_bytes", std::to_string(size_dist.mean_bytes));
  config.set("size_spread", num(size_dist.spread));
  config.set("capacity_bytes", std::to_string(volume_capacity_bytes));
  config.set("target_occupancy", num(target_occupancy));
  config.set("write_buffer_bytes", std::to_string(write_buffer_bytes));
  std::string ages;
  for (const auto& age : measurement_ages) {
    if (!ages.empty()) ages += ',';
    ages += age.to_string();
  }
  config.set("measurement_ages", ages);
  config.set("read_sample_count", std::to_string(read_sample_count));
  config.set("churn_mode", churn_mode == ChurnMode::kSafeWrite ? "safe_write" : "mixed");
  config.set("delete_create_fraction", num(delete_create_fraction));
  return config;
}

double StorageAgeLedger::storage_age() const {
  check(live_ > 0, ErrorCode::kInvariant, "storage age undefined with zero live bytes");
  return static_cast<double>(churned_) / static_cast<double>(live_);
}

bool StorageAgeLedger::reached(const Age& age) const {
  return static_cast<unsigned __int128>(churned_) * age.den >=
         static_cast<unsigned __int128>(age.num) * live_;
}

void StorageAgeLedger::record_churn(std::uint64_t overwritten_or_deleted_bytes,
                                    std::int64_t live_delta) {
  if (live_delta < 0) {
    const auto drop = static_cast<std::uint64_t>(-live_delta);
    check(drop <= live_, ErrorCode::kInvariant, "live bytes would go negative");
    live_ -= drop;
  } else {
    live_ += static_cast<std::uint64_t>(live_delta);
  }
  churned_ += overwritten_or_deleted_bytes;
}

StorageAgeLedger record_churn(StorageAgeLedger ledger, std::uint64_t overwritten_or_deleted_bytes,
                              std::int64_t new_live_delta) {
  ledger.record_churn(overwritten_or_deleted_bytes, new_live_delta);
  return ledger;
}

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::kBulkCreate: return "bulk_create";
    case EventKind::kSafeWrite: return "safe_write";
    case EventKind::kRead: return "read";
    case EventKind::kDelete: return "delete";
    case EventKind::kCreate: return "create";
  }
  return "?";
}

std::uint64_t OperationStream::digest() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& e : events) {
    feed(static_cast<std::uint64_t>(e.kind), 1);
    feed(e.id, 8);
    feed(e.size, 8);
    feed(e.pass, 4);
  }
  return h;
}

namespace {

struct LiveSet {
  std::vector<std::pair<ObjectId, std::uint64_t>> items;

  std::size_t pick(Rng& rng) const { return static_cast<std::size_t>(rng.below(items.size())); }
  void remove_at(std::size_t i) {
    items[i] = items.back();
    items.pop_back();
  }
};

}  // namespace

OperationStream build_stream(const WorkloadSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  OperationStream stream;
  LiveSet live;
  StorageAgeLedger ledger;
  ObjectId next_id = 1;

  const std::uint64_t target = spec.target_live_bytes();
  for (;;) {
    const std::uint64_t size = sample_size(spec.size_dist, rng);
    if (ledger.live_bytes() + size > target) break;
    const ObjectId id = next_id++;
    stream.events.push_back({EventKind::kBulkCreate, id, size, 0});
    live.items.emplace_back(id, size);
    ledger.record_create(size);
  }
  stream.bulk_count = live.items.size();
  stream.bulk_bytes = ledger.live_bytes();
  check(stream.bulk_count >= 2, ErrorCode::kConfig, "occupancy infeasible for capacity");

  for (std::uint32_t pass = 0; pass < spec.measurement_ages.size(); ++pass) {
    const Age& age = spec.measurement_ages[pass];
    while (!ledger.reached(age)) {
      const bool mixed = spec.churn_mode == ChurnMode::kMixed &&
                         rng.unit() < spec.delete_create_fraction;
      const std::size_t victim = live.pick(rng);
      const auto [id, old_size] = live.items[victim];
      if (mixed) {
        stream.events.push_back({EventKind::kDelete, id, 0, pass});
        live.remove_at(victim);
        ledger.record_churn(old_size, -static_cast<std::int64_t>(old_size));
        const std::uint64_t size = sample_size(spec.size_dist, rng);
        const ObjectId fresh = next_id++;
        stream.events.push_back({EventKind::kCreate, fresh, size, pass});
        live.items.emplace_back(fresh, size);
        ledger.record_create(size);
      } else {
        const std::uint64_t size = sample_size(spec.size_dist, rng);
        stream.events.push_back({EventKind::kSafeWrite, id, size, pass});
        live.items[victim].second = size;
        ledger.record_churn(old_size,
                            static_cast<std::int64_t>(size) - static_cast<std::int64_t>(old_size));
      }
    }
    for (std::uint64_t i = 0; i < spec.read_sample_count; ++i) {
      stream.events.push_back({EventKind::kRead, live.items[live.pick(rng)].first, 0, pass});
    }
  }
  return stream;
}

}  // namespace blobbench
