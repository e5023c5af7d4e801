#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "blobbench/error.hpp"
#include "blobbench/workload.hpp"

using namespace blobbench;

TEST(SizeSampling, ConstantIsExact) {
  Rng rng(7);
  const auto dist = SizeDistribution::constant(10 * 1024 * 1024);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_size(dist, rng), 10485760u);
  EXPECT_EQ(sample_size(SizeDistribution::constant(1024), rng), 1024u);
}

TEST(SizeSampling, UniformRangeAndMean) {
  Rng rng(11);
  const std::uint64_t mean = 10 * 1024 * 1024;
  const auto dist = SizeDistribution::uniform(mean);
  double sum = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const auto s = sample_size(dist, rng);
    ASSERT_GE(s, 5242880u);
    ASSERT_LE(s, 15728640u);
    ASSERT_EQ(s % 1024, 0u);
    sum += static_cast<double>(s);
  }
  EXPECT_NEAR(sum / n / static_cast<double>(mean), 1.0, 0.01);
}

TEST(SizeSampling, ZeroMeanRejected) {
  Rng rng(1);
  EXPECT_THROW(sample_size(SizeDistribution::constant(0), rng), Error);
}

TEST(Stream, BulkCountFollowsOccupancy) {
  WorkloadSpec spec;
  spec.size_dist = SizeDistribution::constant(10485760);
  spec.volume_capacity_bytes = 1ULL << 30;
  spec.target_occupancy = 0.9;
  spec.measurement_ages = {Age{0, 1}};
  spec.read_sample_count = 10;
  const auto stream = build_stream(spec);
  // floor(0.9 * 2^30 / 10485760)
  EXPECT_EQ(stream.bulk_count, 92u);
  std::uint64_t safe_writes = 0;
  std::uint64_t reads = 0;
  for (const auto& e : stream.events) {
    safe_writes += e.kind == EventKind::kSafeWrite;
    reads += e.kind == EventKind::kRead;
  }
  EXPECT_EQ(safe_writes, 0u);
  EXPECT_EQ(reads, 10u);
}

TEST(Stream, SafeWriteBytesMatchFinalAge) {
  WorkloadSpec spec;
  spec.size_dist = SizeDistribution::uniform(1 << 20);
  spec.volume_capacity_bytes = 256ULL << 20;
  spec.read_sample_count = 5;
  const auto stream = build_stream(spec);
  std::uint64_t written = 0;
  std::uint64_t overwritten = 0;
  std::map<ObjectId, std::uint64_t> sizes;
  for (const auto& e : stream.events) {
    if (e.kind == EventKind::kBulkCreate) sizes[e.id] = e.size;
    if (e.kind == EventKind::kSafeWrite) {
      written += e.size;
      overwritten += sizes.at(e.id);
      sizes[e.id] = e.size;
    }
  }
  std::uint64_t live = 0;
  for (const auto& [id, s] : sizes) live += s;
  // Churned bytes reach 4x live within one object.
  EXPECT_GE(overwritten, 4 * live);
  EXPECT_LT(overwritten, 4 * live + spec.size_dist.upper_bound());
  EXPECT_NEAR(static_cast<double>(written), static_cast<double>(4 * stream.bulk_bytes),
              static_cast<double>(4 * stream.bulk_bytes) * 0.05);
}

TEST(Stream, DeterministicForEqualSpecs) {
  WorkloadSpec spec;
  spec.size_dist = SizeDistribution::uniform(256 * 1024);
  spec.volume_capacity_bytes = 64ULL << 20;
  spec.churn_mode = ChurnMode::kMixed;
  const auto a = build_stream(spec);
  const auto b = build_stream(spec);
  EXPECT_EQ(a.events, b.events);
  EXPECT_EQ(a.digest(), b.digest());
  spec.seed = 2;
  EXPECT_NE(build_stream(spec).digest(), a.digest());
}

TEST(Stream, SelectionIsUniform) {
  WorkloadSpec spec;
  spec.size_dist = SizeDistribution::constant(1024 * 1024);
  spec.volume_capacity_bytes = 128ULL << 20;
  spec.target_occupancy = 0.5;
  spec.measurement_ages = {Age{0, 1}, Age{200, 1}};
  spec.read_sample_count = 1;
  const auto stream = build_stream(spec);
  std::map<ObjectId, std::uint64_t> counts;
  std::uint64_t total = 0;
  for (const auto& e : stream.events) {
    if (e.kind == EventKind::kSafeWrite) {
      ++counts[e.id];
      ++total;
    }
  }
  ASSERT_GE(total, 10000u);
  const double n = static_cast<double>(stream.bulk_count);
  const double expected = static_cast<double>(total) / n;
  double chi2 = 0;
  for (const auto& [id, c] : counts) chi2 += std::pow(static_cast<double>(c) - expected, 2) / expected;
  chi2 += (n - static_cast<double>(counts.size())) * expected;
  const double dof = n - 1;
  EXPECT_LT(std::abs(chi2 - dof), 5 * std::sqrt(2 * dof));
}

TEST(Ledger, AgeArithmetic) {
  StorageAgeLedger fresh(10ULL << 30, 0);
  EXPECT_EQ(fresh.storage_age(), 0.0);
  const std::uint64_t mb10 = 10 * 1024 * 1024;
  auto after = record_churn(StorageAgeLedger(100 * mb10, 0), mb10, -static_cast<std::int64_t>(mb10));
  EXPECT_EQ(after.churned_bytes(), mb10);
  EXPECT_EQ(after.live_bytes(), 99 * mb10);
  EXPECT_DOUBLE_EQ(after.storage_age(), 10.0 / 990.0);
  EXPECT_THROW(record_churn(StorageAgeLedger(10, 0), 0, -11), Error);
}

TEST(Ledger, ConstantSafeWritePassesGiveExactAge) {
  StorageAgeLedger ledger;
  const std::uint64_t n = 50;
  const std::uint64_t size = 256 * 1024;
  for (std::uint64_t i = 0; i < n; ++i) ledger.record_create(size);
  for (int pass = 1; pass <= 3; ++pass) {
    for (std::uint64_t i = 0; i < n; ++i) ledger.record_churn(size, 0);
    EXPECT_TRUE(ledger.reached(Age{static_cast<std::uint64_t>(pass), 1}));
    EXPECT_FALSE(ledger.reached(Age{static_cast<std::uint64_t>(pass) * n + 1, n}));
    EXPECT_EQ(ledger.storage_age(), pass);
  }
}

TEST(AgeLabel, RationalParsing) {
  EXPECT_EQ(Age::parse("1.5"), (Age{3, 2}));
  EXPECT_EQ(Age::parse("4").label(), "4");
  EXPECT_EQ(Age::parse("1.5").label(), "1p5");
  EXPECT_THROW(Age::parse("-1"), Error);
}
