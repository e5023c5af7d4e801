#include <gtest/gtest.h>

#include "blobbench/extent_store.hpp"
#include "test_support.hpp"

using namespace blobbench;
using namespace blobbench::testing;

namespace {

ExtentStore fresh_store(std::uint64_t capacity, ExtentStoreOptions options = {}) {
  Geometry g;
  g.capacity_bytes = capacity;
  return ExtentStore::create(VolumeImage::create_in_memory(g, BackendKind::kExtent), options);
}

}  // namespace

TEST(ExtentStore, RoundTripAndNotFound) {
  auto store = fresh_store(16 << 20);
  const Bytes data = random_bytes(300 * 1024 + 17, 3);
  SpanSource src(data);
  store.put(9, src, 64 * 1024);
  store.end_operation();
  EXPECT_EQ(store.get(9), data);
  store.remove(9);
  store.end_operation();
  EXPECT_THROW(store.get(9), Error);
  store.audit();
}

TEST(ExtentStore, FourAppendRequestsFor256K) {
  auto store = fresh_store(16 << 20);
  const Bytes data = random_bytes(256 * 1024, 4);
  SpanSource src(data);
  store.put(1, src, 64 * 1024);
  EXPECT_EQ(store.stats().append_requests, 4u);
  EXPECT_EQ(store.ground_truth_fragments().at(1), 1u);
}

TEST(ExtentStore, TenMegOnEmptyVolumeIsOneExtent) {
  auto store = fresh_store(64 << 20);
  const Bytes data = random_bytes(10 << 20, 5);
  SpanSource src(data);
  const auto rec = store.put(1, src, 64 * 1024);
  EXPECT_EQ(count_fragments(rec), 1u);
}

TEST(ExtentStore, VolumeFullKeepsPriorGeneration) {
  auto store = fresh_store(8 << 20);
  const Bytes first = random_bytes(3 << 20, 6);
  SpanSource a(first);
  store.put(1, a, 64 * 1024);
  store.end_operation();
  const Bytes big = random_bytes(6 << 20, 7);
  SpanSource b(big);
  try {
    store.put(1, b, 64 * 1024);
    FAIL() << "expected volume full";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kVolumeFull);
  }
  store.end_operation();
  EXPECT_EQ(store.get(1), first);
  store.audit();
}

TEST(ExtentStore, SafeWriteNeedsRoomBesideOldCopy) {
  // Old copy stays allocated while the new one is written.
  auto store = fresh_store(8 << 20);
  const std::uint64_t avail = store.free_bytes();
  const Bytes data = random_bytes(avail / 2 + 64 * 1024, 8);
  SpanSource a(data);
  store.put(1, a, 64 * 1024);
  store.end_operation();
  SpanSource b(data);
  EXPECT_THROW(store.put(1, b, 64 * 1024), Error);
}

TEST(ExtentStore, FreedSpaceNotReusedWithinOperation) {
  ExtentStoreOptions options;
  options.file_record_bytes = 0;
  auto store = fresh_store(4 << 20, options);
  const Bytes data = random_bytes(store.free_bytes() * 3 / 4, 9);
  SpanSource a(data);
  store.put(1, a, 64 * 1024);
  store.end_operation();
  store.remove(1);
  SpanSource b(data);
  EXPECT_THROW(store.put(2, b, 64 * 1024), Error);
  store.end_operation();
  SpanSource c(data);
  EXPECT_NO_THROW(store.put(2, c, 64 * 1024));
}

TEST(ExtentStore, AppendAroundOccupiedNeighbourFragments) {
  ExtentStoreOptions options;
  options.file_record_bytes = 0;
  options.sequential_detect_bytes = 0;
  auto store = fresh_store(4 << 20, options);
  BlobRecord a{1, 0, ExtentList{}, 1, 0};
  BlobRecord b{2, 0, ExtentList{}, 1, 0};
  store.append_extend(a, 64 * 1024);
  store.append_extend(b, 64 * 1024);
  store.append_extend(a, 64 * 1024);
  EXPECT_EQ(count_fragments(a), 2u);
  // Space after a's new extent is free: growth in place.
  store.append_extend(a, 64 * 1024);
  EXPECT_EQ(count_fragments(a), 2u);
  EXPECT_EQ(count_fragments(b), 1u);
}

TEST(ExtentStore, ReopenFromImage) {
  auto store = fresh_store(16 << 20);
  const Bytes data = random_bytes(700 * 1024, 10);
  SpanSource src(data);
  store.put(4, src, 64 * 1024, 77);
  store.end_operation();
  const auto before = store.find(4);
  store.sync();
  auto reopened = ExtentStore::open(store.release_image());
  EXPECT_EQ(reopened.get(4), data);
  const auto after = reopened.find(4);
  ASSERT_TRUE(after.has_value());
  EXPECT_EQ(after->tag, 77u);
  EXPECT_EQ(std::get<ExtentList>(after->placement), std::get<ExtentList>(before->placement));
  EXPECT_EQ(reopened.free_bytes(), store.free_bytes());
  reopened.audit();
}

TEST(ExtentStore, ChurnKeepsAuditIdentityAndFigureFiveBound) {
  ExtentStoreOptions options;
  auto store = fresh_store(16 << 20, options);
  Rng rng(42);
  const std::uint64_t size = 256 * 1024;
  const int objects = static_cast<int>(store.free_bytes() * 8 / 10 / size);
  const Bytes data = random_bytes(size, 11);
  for (int i = 0; i < objects; ++i) {
    SpanSource src(data);
    store.put(static_cast<ObjectId>(i), src, 64 * 1024);
    store.end_operation();
  }
  for (int step = 0; step < objects * 10; ++step) {
    SpanSource src(data);
    store.put(rng.below(static_cast<std::uint64_t>(objects)), src, 64 * 1024);
    store.end_operation();
    if (step % 64 == 0) store.checkpoint();
    for (const auto& [id, frags] : store.ground_truth_fragments()) ASSERT_LE(frags, 4u);
  }
  store.audit();
  store.run_cache().check_invariants();
}

TEST(ExtentStore, DefragmentNeverIncreasesFragments) {
  auto store = fresh_store(16 << 20);
  store.shatter_free_space(64 * 1024, 64 * 1024);
  const Bytes data = random_bytes(512 * 1024, 12);
  for (ObjectId id = 0; id < 8; ++id) {
    SpanSource src(data);
    store.put(id, src, 64 * 1024);
    store.end_operation();
  }
  store.release_ballast();
  store.end_operation();
  const double before = store.mean_fragments();
  EXPECT_GT(before, 1.0);
  const auto result = store.defragment();
  EXPECT_LE(result.mean_fragments_after, before);
  EXPECT_GT(result.relocations, 0u);
  store.audit();
  for (ObjectId id = 0; id < 8; ++id) EXPECT_EQ(store.get(id), data);

  auto clean = fresh_store(16 << 20);
  SpanSource src(data);
  clean.put(1, src, 64 * 1024);
  clean.end_operation();
  EXPECT_EQ(clean.defragment().relocations, 0u);
}
