// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Optional argument: directory for the results of the
// large runs (kept so figures can be rendered from them).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>

#include "blobbench/bench_harness.hpp"
#include "blobbench/error.hpp"
#include "blobbench/report.hpp"

using namespace blobbench;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr int kScannerVolumes = 200;
constexpr std::uint64_t kCrashSeeds = 250;
constexpr double kConcavitySlack = 1.25;
constexpr double kPageOverExtentMin = 1.5;
constexpr std::uint32_t kSmallObjectFragmentBound = 4;
constexpr double kConvergedLow = 2.0;
constexpr double kConvergedHigh = 4.0;
constexpr double kDistributionTolerance = 0.25;
constexpr double kSmallPoolRatioMin = 1.5;
constexpr double kVolumeSizeTolerance = 0.15;
constexpr double kDefragTarget = 1.05;

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int number, const std::string& name, const std::function<Verdict()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Verdict v;
  try {
    v = body();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (!v.pass) ++failures;
  std::printf("%s %2d %s: %s (%.1fs)\n", v.pass ? "PASS" : "FAIL", number, name.c_str(), v.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

CellConfig make_cell(const std::string& name, const std::string& text) {
  return cell_from_config(name, KvConfig::parse(text));
}

std::vector<double> means(const CellResult& r) {
  std::vector<double> out;
  for (const auto& s : r.snapshots) out.push_back(s.mean_fragments());
  return out;
}

std::string series(const std::vector<double>& v) {
  std::string s;
  for (const double x : v) s += (s.empty() ? "" : "/") + fmt(x);
  return s;
}

void require_ok(const CellResult& r) {
  if (!r.ok) throw std::runtime_error("cell " + r.name + " failed: " + r.error);
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

// Shared large runs: 10MB objects, 90% of a 2GB image, ages 0/2/4.
const char* kLargeObjects =
    "capacity_bytes = 2147483648\nmean_bytes = 10485760\ntarget_occupancy = 0.9\n"
    "write_buffer_bytes = 65536\nmeasurement_ages = 0, 2, 4\nread_sample_count = 200\n"
    "verify_reads = false\nseed = 42\n";

struct LargeRuns {
  CellResult extent_constant, page_constant, extent_uniform, page_uniform;
  CellConfig page_constant_cell;
};

LargeRuns& large_runs(const fs::path& out) {
  static LargeRuns runs = [&] {
    LargeRuns r;
    const std::string base = kLargeObjects;
    r.extent_constant = run_cell(make_cell("extent_constant", base + "backend = extent\n"), out);
    r.page_constant_cell = make_cell("page_constant", base + "backend = page\n");
    r.page_constant = run_cell(r.page_constant_cell, out);
    r.extent_uniform = run_cell(make_cell("extent_uniform", base + "backend = extent\nsize_kind = uniform\n"), out);
    r.page_uniform = run_cell(make_cell("page_uniform", base + "backend = page\nsize_kind = uniform\n"), out);
    return r;
  }();
  return runs;
}

Verdict scanner_oracle() {
  std::uint64_t snapshots = 0, objects = 0, mismatches = 0, incomplete = 0;
  for (int i = 0; i < kScannerVolumes; ++i) {
    Rng rng(1000 + static_cast<std::uint64_t>(i));
    const std::uint64_t capacity = rng.between(16, 64) << 20;
    // Uniform sizes about the mean, bounds kept inside [64KB, 1MB].
    const std::uint64_t mean = rng.between(128, 682) * 1024;
    std::ostringstream cfg;
    cfg << "backend = " << (i % 2 == 0 ? "extent" : "page") << "\ncapacity_bytes = " << capacity
        << "\nmean_bytes = " << mean << "\nsize_kind = uniform\nchurn_mode = mixed\n"
        << "target_occupancy = " << fmt(0.5 + 0.3 * rng.unit()) << "\nmeasurement_ages = 0, 1, 2.5\n"
        << "read_sample_count = 4\nverify_reads = false\nseed = " << rng.next() % 1000000 << "\n";
    const auto r = run_cell(make_cell("v" + std::to_string(i), cfg.str()));
    require_ok(r);
    for (const auto& s : r.snapshots) {
      ++snapshots;
      if (!s.scan) throw std::runtime_error("snapshot without a scan");
      objects += s.live.size();
      mismatches += s.scan_mismatches;
      for (const auto& o : s.scan->objects) incomplete += o.recovered_markers != o.expected_markers;
    }
  }
  return {mismatches == 0 && incomplete == 0,
          std::to_string(kScannerVolumes) + " volumes, " + std::to_string(snapshots) + " scans, " +
              std::to_string(objects) + " object checks, " + std::to_string(mismatches) +
              " mismatches, " + std::to_string(incomplete) + " incomplete marker sets"};
}

Verdict crash_matrix(const fs::path& scratch) {
  std::uint64_t runs = 0, violations = 0, leaked = 0, not_crashed = 0, old_count = 0, new_count = 0;
  std::string first;
  for (const auto kind : {StoreKind::kFs, StoreKind::kPage}) {
    for (const auto& point : crash_cut_points(kind)) {
      for (std::uint64_t seed = 1; seed <= kCrashSeeds; ++seed) {
        const auto out = inject_crash(kind, point, seed, scratch);
        ++runs;
        leaked += out.leaked;
        not_crashed += !out.crashed;
        old_count += out.verdict == CrashVerdict::kOld;
        new_count += out.verdict == CrashVerdict::kNew;
        if (out.verdict == CrashVerdict::kViolation) {
          if (first.empty()) first = "; first: " + point + " seed " + std::to_string(seed) + " " + out.detail;
          ++violations;
        }
      }
    }
  }
  return {violations == 0 && leaked == 0 && not_crashed == 0,
          std::to_string(runs) + " crashes (" + std::to_string(old_count) + " old, " + std::to_string(new_count) +
              " new), " + std::to_string(violations) + " violations, " + std::to_string(leaked) + " leaked, " +
              std::to_string(not_crashed) + " cut points never reached" + first};
}

Verdict storage_age() {
  const auto constant = run_cell(make_cell(
      "age_constant",
      "backend = extent\ncapacity_bytes = 67108864\nmean_bytes = 1048576\nmeasurement_ages = 1, 2, 3\n"
      "read_sample_count = 1\nscan = false\nverify_reads = false\n"));
  require_ok(constant);
  bool exact = constant.snapshots.size() == 3;
  std::string detail = "safe-write churned/live =";
  for (std::size_t k = 0; k < constant.snapshots.size(); ++k) {
    const auto& s = constant.snapshots[k];
    exact &= s.churned_bytes == (k + 1) * s.live_bytes;
    detail += " " + std::to_string(s.churned_bytes) + "/" + std::to_string(s.live_bytes);
  }
  const auto spec_text =
      "backend = extent\ncapacity_bytes = 67108864\nmean_bytes = 524288\nsize_kind = uniform\n"
      "churn_mode = mixed\nmeasurement_ages = 1, 2.5\nread_sample_count = 1\nscan = false\nverify_reads = false\n";
  const auto mixed_cell = make_cell("age_mixed", spec_text);
  const auto mixed = run_cell(mixed_cell);
  require_ok(mixed);
  const double quantum = static_cast<double>(mixed_cell.spec.size_dist.upper_bound());
  double worst = 0.0;
  for (const auto& s : mixed.snapshots) {
    const double excess = static_cast<double>(s.churned_bytes) - s.age.value() * static_cast<double>(s.live_bytes);
    worst = std::max(worst, std::abs(excess));
  }
  const bool within = mixed.snapshots.size() == 2 && worst <= quantum;
  return {exact && within, detail + "; mixed worst |churned - age*live| = " + fmt(worst) + " bytes (quantum " +
                               fmt(quantum) + ")"};
}

Verdict fresh_baseline(const fs::path& out) {
  const auto& r = large_runs(out);
  require_ok(r.extent_constant);
  require_ok(r.page_constant);
  bool pass = true;
  std::string detail;
  for (const auto* c : {&r.extent_constant, &r.page_constant, &r.extent_uniform, &r.page_uniform}) {
    const auto& s = c->snapshots.front();
    pass &= s.scan.has_value() && s.age == Age{} && s.mean_fragments() == 1.0 && s.ground_truth_mean() == 1.0;
    detail += (detail.empty() ? "" : ", ") + c->name + " " + fmt(s.mean_fragments());
  }
  return {pass, "age-0 mean fragments: " + detail};
}

Verdict large_object_trend(const fs::path& out) {
  const auto& r = large_runs(out);
  require_ok(r.extent_constant);
  require_ok(r.page_constant);
  const auto e = means(r.extent_constant);
  const auto p = means(r.page_constant);
  if (e.size() != 3 || p.size() != 3) return {false, "missing ages"};
  const bool e_monotone = e[0] <= e[1] && e[1] <= e[2];
  const bool e_concave = (e[2] - e[1]) <= (e[1] - e[0]) * kConcavitySlack;
  const bool p_monotone = p[0] <= p[1] && p[1] <= p[2];
  const double ratio = p[2] / e[2];
  return {e_monotone && e_concave && p_monotone && ratio >= kPageOverExtentMin,
          "extent " + series(e) + " (non-decreasing " + (e_monotone ? "yes" : "no") + ", concave-tending " +
              (e_concave ? "yes" : "no") + "), page " + series(p) + ", page/extent at age 4 = " + fmt(ratio)};
}

Verdict small_object_bound() {
  const std::string base =
      "capacity_bytes = 268435456\nmean_bytes = 262144\ntarget_occupancy = 0.9\nwrite_buffer_bytes = 65536\n"
      "measurement_ages = 0, 2, 4, 6, 8, 10\nread_sample_count = 50\nverify_reads = false\nseed = 9\n";
  bool pass = true;
  std::string detail;
  for (const auto* backend : {"extent", "page"}) {
    const auto r = run_cell(make_cell(std::string("small_") + backend, base + "backend = " + backend + "\n"));
    require_ok(r);
    std::uint32_t worst = r.max_put_fragments;
    for (const auto& s : r.snapshots) worst = std::max(worst, s.scan->max_fragments());
    const double final_mean = r.snapshots.back().mean_fragments();
    const bool ok = worst <= kSmallObjectFragmentBound && final_mean >= kConvergedLow && final_mean <= kConvergedHigh;
    pass &= ok;
    detail += std::string(detail.empty() ? "" : "; ") + backend + (ok ? " ok" : " out of bound") +
              ": max fragments " + std::to_string(worst) + ", mean at age 10 " + fmt(final_mean);
  }
  return {pass, detail};
}

Verdict distribution_equivalence(const fs::path& out) {
  const auto& r = large_runs(out);
  bool pass = true;
  std::string detail;
  const std::pair<const CellResult*, const CellResult*> pairs[] = {{&r.extent_constant, &r.extent_uniform},
                                                                   {&r.page_constant, &r.page_uniform}};
  for (const auto& [c, u] : pairs) {
    require_ok(*c);
    require_ok(*u);
    const auto cm = means(*c);
    const auto um = means(*u);
    double worst = 0.0;
    for (std::size_t i = 0; i < std::min(cm.size(), um.size()); ++i) {
      worst = std::max(worst, std::abs(um[i] - cm[i]) / cm[i]);
    }
    const bool ok = cm.size() == um.size() && worst <= kDistributionTolerance;
    pass &= ok;
    detail += std::string(detail.empty() ? "" : "; ") + std::string(to_string(c->backend)) + " constant " +
              series(cm) + " vs uniform " + series(um) + ", worst relative difference " + fmt(worst) +
              (ok ? "" : " (over " + fmt(kDistributionTolerance) + ")");
  }
  return {pass, detail};
}

Verdict free_pool_effect() {
  // Equal 90% occupancy; free pool = free space / object size.
  const std::string pool_base =
      "mean_bytes = 524288\ntarget_occupancy = 0.9\nmeasurement_ages = 0, 2, 4\nread_sample_count = 20\n"
      "verify_reads = false\nscan = false\nseed = 11\n";
  const auto small = run_cell(make_cell("pool40", pool_base + "backend = extent\ncapacity_bytes = 209715200\n"));
  const auto large = run_cell(make_cell("pool400", pool_base + "backend = extent\ncapacity_bytes = 2097152000\n"));
  require_ok(small);
  require_ok(large);
  const double ratio = small.snapshots.back().mean_fragments() / large.snapshots.back().mean_fragments();

  const std::string size_base =
      "mean_bytes = 262144\ntarget_occupancy = 0.9\nmeasurement_ages = 0, 2, 4\nread_sample_count = 20\n"
      "verify_reads = false\nscan = false\nseed = 12\nbackend = extent\n";
  const auto g1 = run_cell(make_cell("vol1g", size_base + "capacity_bytes = 1073741824\n"));
  const auto g4 = run_cell(make_cell("vol4g", size_base + "capacity_bytes = 4294967296\n"));
  require_ok(g1);
  require_ok(g4);
  const double f1 = g1.snapshots.back().mean_fragments();
  const double f4 = g4.snapshots.back().mean_fragments();
  const double change = std::abs(f4 - f1) / f1;
  const bool pool_ok = ratio >= kSmallPoolRatioMin;
  const bool size_ok = change <= kVolumeSizeTolerance;
  return {pool_ok && size_ok,
          "extent: pool " + fmt(small.snapshots.front().free_pool) + " vs " + fmt(large.snapshots.front().free_pool) +
              " objects, age-4 fragments " + fmt(small.snapshots.back().mean_fragments()) + " vs " +
              fmt(large.snapshots.back().mean_fragments()) + ", ratio " + fmt(ratio) + (pool_ok ? "" : " (below 1.5)") +
              "; 1GB vs 4GB (pool " + fmt(g1.snapshots.front().free_pool) + " vs " +
              fmt(g4.snapshots.front().free_pool) + "): " + fmt(f1) + " vs " + fmt(f4) + ", change " + fmt(change)};
}

Verdict pathological_start() {
  const auto r = run_cell(make_cell(
      "shattered",
      "backend = extent\nmean_bytes = 4194304\ncapacity_bytes = 536870912\ntarget_occupancy = 0.85\n"
      "measurement_ages = 0, 1, 2, 3, 4\nread_sample_count = 20\nverify_reads = false\n"
      "shatter_run_bytes = 262144\nshatter_ballast_bytes = 4096\nseed = 13\n"));
  require_ok(r);
  const auto m = means(r);
  bool non_increasing = m.size() == 5;
  for (std::size_t i = 1; i < m.size(); ++i) non_increasing &= m[i] <= m[i - 1];
  return {non_increasing && m.front() > 1.0, "mean fragments over ages 0..4: " + series(m)};
}

Verdict defragment_by_copy() {
  Geometry g;
  g.capacity_bytes = 64 << 20;
  auto store = PageStore::create(VolumeImage::create_in_memory(g, BackendKind::kPage),
                                 std::make_unique<MemoryBacking>(0));
  WorkloadSpec spec;
  spec.volume_capacity_bytes = g.capacity_bytes;
  spec.size_dist = SizeDistribution::uniform(1 << 20);
  spec.target_occupancy = 0.8;
  spec.measurement_ages = {Age{3, 1}};
  spec.read_sample_count = 1;
  std::uint64_t serial = 0;
  std::uint64_t largest = 0;
  std::map<ObjectId, std::uint64_t> sizes;
  for (const auto& ev : build_stream(spec).events) {
    if (ev.kind == EventKind::kRead) continue;
    MarkedPayloadSource src(make_tag(ev.id, ++serial), ev.size, 1);
    store.put(ev.id, src, 65536, make_tag(ev.id, serial));
    sizes[ev.id] = ev.size;
    store.end_operation();
    if (serial % 64 == 0) store.checkpoint();
  }
  for (const auto& [id, size] : sizes) largest = std::max(largest, size);
  const double before = store.mean_fragments();

  // Refusal: a target smaller than the largest blob.
  Geometry tiny = g;
  tiny.capacity_bytes = largest / 2 / 8192 * 8192;
  tiny.metadata_bytes = 256 * 1024;
  auto small_target = PageStore::create(VolumeImage::create_in_memory(tiny, BackendKind::kPage),
                                        std::make_unique<MemoryBacking>(0));
  bool refused = false;
  std::string estimate;
  try {
    store.defragment_by_copy(small_target, 65536);
  } catch (const Error& e) {
    refused = e.code() == ErrorCode::kRefused;
    const std::string msg = e.what();
    const auto at = msg.find("estimated_bytes_required=");
    if (at != std::string::npos) estimate = msg.substr(at);
  }
  const bool untouched = store.list().size() == sizes.size();

  auto target = PageStore::create(VolumeImage::create_in_memory(g, BackendKind::kPage),
                                  std::make_unique<MemoryBacking>(0));
  const auto r = store.defragment_by_copy(target, 65536);
  const bool pass = refused && !estimate.empty() && untouched && r.mean_fragments_after <= kDefragTarget &&
                    target.list().size() == sizes.size();
  return {pass, "mean fragments " + fmt(before) + " -> " + fmt(r.mean_fragments_after) + " over " +
                    std::to_string(r.copied) + " blobs; undersized target " +
                    (refused ? "refused with " + estimate : std::string("not refused"))};
}

Verdict determinism() {
  const auto config = KvConfig::parse(
      "cells = ext, pg, fsys\ncapacity_bytes = 33554432\nmean_bytes = 524288\nsize_kind = uniform\n"
      "measurement_ages = 0, 1.5, 3\nread_sample_count = 16\nseed = 77\ncell.ext.backend = extent\n"
      "cell.pg.backend = page\ncell.fsys.backend = fs\ncell.fsys.capacity_bytes = 8388608\n");
  const fs::path base = fs::temp_directory_path() / "blobbench-acceptance-determinism";
  fs::remove_all(base);
  std::uint64_t compared = 0;
  std::vector<std::string> differing;
  for (const auto* run : {"a", "b"}) {
    run_experiment(ExperimentMatrix::from_config(config), base / run);
    render_figures(base / run, {"all"}, base / run / "figures");
  }
  for (const auto& entry : fs::recursive_directory_iterator(base / "a")) {
    if (!entry.is_regular_file() || entry.path().filename() == "timings.csv") continue;
    const auto rel = fs::relative(entry.path(), base / "a");
    ++compared;
    if (slurp(entry.path()) != slurp(base / "b" / rel)) differing.push_back(rel.string());
  }
  fs::remove_all(base);
  std::string detail = std::to_string(compared) + " CSV/JSON/SVG files compared, " +
                       std::to_string(differing.size()) + " differ";
  if (!differing.empty()) detail += " (first: " + differing.front() + ")";
  return {differing.empty() && compared > 20, detail};
}

Verdict bulk_logged(const fs::path& out) {
  const auto& r = large_runs(out);
  require_ok(r.page_constant);
  const auto& cell = r.page_constant_cell;
  const std::uint64_t page_bytes = cell.geometry.page_bytes;
  const std::uint64_t usable = page_bytes - cell.geometry.page_header_bytes;
  std::uint64_t expected_chain = 0;
  std::uint64_t puts = 0;
  for (const auto& ev : build_stream(cell.spec).events) {
    if (ev.kind == EventKind::kBulkCreate || ev.kind == EventKind::kSafeWrite || ev.kind == EventKind::kCreate) {
      expected_chain += (ev.size + usable - 1) / usable;
      ++puts;
    }
  }
  const bool chain_ok = r.page_constant.chain_pages_written == expected_chain;
  const bool volume_ok =
      r.page_constant.data_bytes_written == (r.page_constant.chain_pages_written + r.page_constant.root_pages_written) * page_bytes;
  const bool roots_ok = r.page_constant.root_pages_written == puts;
  const bool wal_ok = r.page_constant.wal_payload_markers == 0;
  return {chain_ok && volume_ok && roots_ok && wal_ok,
          std::to_string(puts) + " puts: chain pages written " + std::to_string(r.page_constant.chain_pages_written) +
              " (expected " + std::to_string(expected_chain) + "), root pages " +
              std::to_string(r.page_constant.root_pages_written) + ", data-region bytes " +
              std::to_string(r.page_constant.data_bytes_written) + " = pages x " + std::to_string(page_bytes) +
              (volume_ok ? "" : " NOT") + ", payload markers in log " +
              std::to_string(r.page_constant.wal_payload_markers) + ", log bytes appended " +
              std::to_string(r.page_constant.wal ? r.page_constant.wal->bytes_appended : 0)};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path out = argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "blobbench-acceptance";
  fs::create_directories(out);
  const fs::path scratch = out / "crash_scratch";
  fs::create_directories(scratch);

  report(1, "scanner matches allocator ground truth", scanner_oracle);
  report(2, "safe-write crash matrix", [&] { return crash_matrix(scratch); });
  report(3, "storage age exactness", storage_age);
  report(4, "fresh-volume baseline", [&] { return fresh_baseline(out); });
  report(5, "large-object fragmentation trend", [&] { return large_object_trend(out); });
  report(6, "small-object fragment bound", small_object_bound);
  report(7, "constant vs uniform sizes", [&] { return distribution_equivalence(out); });
  report(8, "free-pool effect", free_pool_effect);
  report(9, "pathological-start recovery", pathological_start);
  report(10, "defragment-by-copy", defragment_by_copy);
  report(11, "determinism", determinism);
  report(12, "bulk-logged accounting", [&] { return bulk_logged(out); });
  fs::remove_all(scratch);

  std::printf("%d of 12 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
