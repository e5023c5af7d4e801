#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "blobbench/bench_harness.hpp"
#include "blobbench/error.hpp"

using namespace blobbench;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("blobbench-harness-" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

KvConfig small_cell(const std::string& backend) {
  return KvConfig::parse(
      "backend = " + backend +
      "\ncapacity_bytes = 67108864\nmean_bytes = 1048576\nsize_kind = uniform\n"
      "target_occupancy = 0.8\nmeasurement_ages = 0, 1, 2\nread_sample_count = 16\nseed = 7\n");
}

}  // namespace

TEST(DiskModel, SequentialAccessSeeksOnce) {
  DiskModel model({10.0, 100.0});
  model.access(0, 1 << 20);
  model.access(1 << 20, 1 << 20);
  model.access(2 << 20, 1 << 20);
  EXPECT_EQ(model.seeks(), 1u);
  EXPECT_NEAR(model.seconds(), 0.010 + 3.0 / 100.0, 1e-12);
  model.access(0, 4096);
  EXPECT_EQ(model.seeks(), 2u);
}

TEST(DiskModel, RandomAccessAlwaysSeeks) {
  DiskModel model({8.5, 55.0});
  model.random_access(0, 1024);
  model.random_access(1024, 1024);
  EXPECT_EQ(model.seeks(), 2u);
}

TEST(Matrix, CellsAndOverrides) {
  const auto config = KvConfig::parse(
      "cells = a, b\nmean_bytes = 262144\ncell.b.backend = page\ncell.b.mean_bytes = 524288\n");
  const auto matrix = ExperimentMatrix::from_config(config);
  ASSERT_EQ(matrix.cells.size(), 2u);
  EXPECT_EQ(matrix.cells[0].name, "a");
  EXPECT_EQ(matrix.cells[0].backend, StoreKind::kExtent);
  EXPECT_EQ(matrix.cells[0].spec.size_dist.mean_bytes, 262144u);
  EXPECT_EQ(matrix.cells[1].backend, StoreKind::kPage);
  EXPECT_EQ(matrix.cells[1].spec.size_dist.mean_bytes, 524288u);
}

TEST(Matrix, SingleDefaultCell) {
  const auto matrix = ExperimentMatrix::from_config(KvConfig::parse("backend = fs\n"));
  ASSERT_EQ(matrix.cells.size(), 1u);
  EXPECT_EQ(matrix.cells[0].name, "default");
}

TEST(Matrix, RejectsBadConfigs) {
  auto code_of = [](const std::string& text) {
    try {
      ExperimentMatrix::from_config(KvConfig::parse(text));
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kInvariant;
  };
  EXPECT_EQ(code_of("bogus_key = 1\n"), ErrorCode::kConfig);
  EXPECT_EQ(code_of("cells = a\ncell.b.seed = 3\n"), ErrorCode::kConfig);
  EXPECT_EQ(code_of("cells = a, a\n"), ErrorCode::kConfig);
  EXPECT_EQ(code_of("backend = tape\n"), ErrorCode::kConfig);
  EXPECT_EQ(code_of("backend = page\nshatter_run_bytes = 4096\nshatter_ballast_bytes = 4096\n"),
            ErrorCode::kConfig);
  EXPECT_EQ(code_of("gap_allowance = 8\n"), ErrorCode::kConfig);
}

TEST(Matrix, ResolvedConfigRoundTrips) {
  const auto cell = cell_from_config("x", small_cell("page"));
  const auto again = cell_from_config("x", cell.to_config());
  EXPECT_EQ(again.to_config().to_text(), cell.to_config().to_text());
}

TEST(ReadPass, SeeksOncePerFragment) {
  Geometry g;
  g.capacity_bytes = 16 << 20;
  auto store = ExtentStore::create(VolumeImage::create_in_memory(g, BackendKind::kExtent),
                                   {FitPolicy::kSmallestFit, 1 << 20, 0});
  auto& cache = store.run_cache();
  // Leave only three separated 64KB holes.
  cache.take_at(0, cache.free_bytes());
  for (std::uint64_t off : {0, 128, 256}) cache.release({off * 1024, 64 * 1024});
  cache.commit_frees();
  const Bytes payload = make_payload(make_tag(1, 1), 192 * 1024, 3);
  SpanSource src(payload);
  const auto rec = store.put(1, src, 64 * 1024, make_tag(1, 1));
  ASSERT_EQ(count_fragments(rec), 3u);
  DiskModel model({8.5, 55.0});
  const std::vector<ObjectId> ids = {1, 1};
  const auto phase = measure_read_pass(store, ids, &model);
  EXPECT_EQ(phase.ops, 2u);
  EXPECT_EQ(phase.bytes_moved, 2u * 192 * 1024);
  EXPECT_EQ(phase.seeks, 6u);
}

TEST(RunCell, ExtentCellProducesScannedSnapshots) {
  const auto dir = fresh_dir("extent");
  const auto cell = cell_from_config("ext", small_cell("extent"));
  const auto result = run_cell(cell, dir);
  ASSERT_TRUE(result.ok) << result.error;
  ASSERT_EQ(result.snapshots.size(), 3u);
  for (const auto& snap : result.snapshots) {
    ASSERT_TRUE(snap.scan.has_value());
    EXPECT_EQ(snap.scan_mismatches, 0u);
    EXPECT_EQ(snap.scan->objects.size(), snap.live.size());
  }
  EXPECT_EQ(result.snapshots[1].age, Age::parse("1"));
  EXPECT_GE(static_cast<double>(result.snapshots[2].churned_bytes),
            2.0 * static_cast<double>(result.snapshots[2].live_bytes));

  std::vector<PhaseKind> kinds;
  for (const auto& p : result.phases) kinds.push_back(p.kind);
  const std::vector<PhaseKind> expected = {PhaseKind::kBulkLoad, PhaseKind::kRead, PhaseKind::kChurn,
                                           PhaseKind::kRead, PhaseKind::kChurn, PhaseKind::kRead};
  EXPECT_EQ(kinds, expected);
  for (const auto& p : result.phases) {
    EXPECT_GT(p.modeled_seconds, 0.0);
    if (p.kind == PhaseKind::kRead) EXPECT_EQ(p.ops, 16u);
  }

  for (const auto* name : {"phases.csv", "timings.csv", "summary.json", "frag_age0.csv",
                           "frag_age2.csv", "live_age1.csv"}) {
    EXPECT_TRUE(fs::exists(dir / "ext" / name)) << name;
  }
  EXPECT_TRUE(slurp(dir / "ext" / "phases.csv").starts_with("#schema,phases,1\n"));
  const auto frag = FragReport::from_csv(slurp(dir / "ext" / "frag_age2.csv"));
  EXPECT_EQ(frag.fragment_map(), result.snapshots[2].ground_truth);
}

TEST(RunCell, RepeatRunsAreByteIdentical) {
  const auto a = fresh_dir("repeat-a");
  const auto b = fresh_dir("repeat-b");
  const auto cell = cell_from_config("c", small_cell("page"));
  run_cell(cell, a);
  run_cell(cell, b);
  for (const auto& entry : fs::directory_iterator(a / "c")) {
    const auto name = entry.path().filename();
    if (name == "timings.csv") continue;
    EXPECT_EQ(slurp(entry.path()), slurp(b / "c" / name)) << name;
  }
}

TEST(RunCell, PageCellKeepsPayloadOutOfTheLog) {
  const auto cell = cell_from_config("p", small_cell("page"));
  const auto result = run_cell(cell);
  ASSERT_TRUE(result.ok) << result.error;
  ASSERT_TRUE(result.wal.has_value());
  EXPECT_GT(result.wal->records, 0u);
  EXPECT_EQ(result.wal_payload_markers, 0u);
  EXPECT_GT(result.chain_pages_written, 0u);
  for (const auto& snap : result.snapshots) EXPECT_EQ(snap.scan_mismatches, 0u);
}

TEST(RunCell, FsCellRecordsWallTimeOnly) {
  const auto dir = fresh_dir("fs");
  auto config = small_cell("fs");
  config.set("capacity_bytes", "16777216");
  const auto result = run_cell(cell_from_config("f", config), dir);
  ASSERT_TRUE(result.ok) << result.error;
  for (const auto& p : result.phases) EXPECT_EQ(p.modeled_seconds, 0.0);
  for (const auto& snap : result.snapshots) EXPECT_FALSE(snap.scan.has_value());
  EXPECT_FALSE(fs::exists(dir / "f" / "fs_root"));
}

TEST(RunCell, OverfullVolumeFailsWithDiagnostic) {
  auto config = small_cell("page");
  config.set("target_occupancy", "0.999");
  const auto result = run_cell(cell_from_config("full", config));
  EXPECT_FALSE(result.ok);
  EXPECT_NE(result.error.find("volume_full"), std::string::npos) << result.error;
}

TEST(Crash, EveryCutPointRecoversToOldOrNew) {
  for (const auto kind : {StoreKind::kFs, StoreKind::kPage}) {
    for (const auto& point : crash_cut_points(kind)) {
      for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const auto out = inject_crash(kind, point, seed);
        EXPECT_NE(out.verdict, CrashVerdict::kViolation) << point << " " << out.detail;
        EXPECT_EQ(out.leaked, 0u) << point << " seed " << seed;
        EXPECT_TRUE(out.crashed) << point;
      }
    }
  }
}

TEST(Crash, ControlRunSeesNewVersion) {
  for (const auto kind : {StoreKind::kFs, StoreKind::kPage}) {
    const auto out = inject_crash(kind, "", 5);
    EXPECT_FALSE(out.crashed);
    EXPECT_EQ(out.verdict, CrashVerdict::kNew);
  }
}

TEST(Crash, UnknownCutPointIsConfigError) {
  try {
    inject_crash(StoreKind::kPage, "after-lunch", 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
  }
  EXPECT_THROW(crash_cut_points(StoreKind::kExtent), Error);
}
