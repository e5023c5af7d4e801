#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "blobbench/crash.hpp"
#include "blobbench/extent_store.hpp"
#include "blobbench/frag_scanner.hpp"
#include "blobbench/kv_config.hpp"
#include "blobbench/page_store.hpp"
#include "blobbench/store.hpp"
#include "blobbench/workload.hpp"

namespace blobbench {

// Deterministic disk-time model for the simulated backends: an access costs a
// seek when it does not start where the previous one ended, plus transfer
// time. Random reads seek once per fragment.
struct DiskModelParams {
  double seek_ms = 8.5;
  double transfer_mb_s = 55.0;
};

class DiskModel {
 public:
  explicit DiskModel(DiskModelParams params) : params_(params) {}

  void access(std::uint64_t offset, std::uint64_t length);
  // A read that starts with a seek wherever the head is.
  void random_access(std::uint64_t offset, std::uint64_t length);

  std::uint64_t seeks() const { return seeks_; }
  double seconds() const;

 private:
  DiskModelParams params_;
  std::uint64_t head_ = UINT64_MAX;
  std::uint64_t seeks_ = 0;
  std::uint64_t bytes_ = 0;
};

enum class ImagePlacement { kAuto, kMemory, kFile };

// One cell of an experiment matrix, fully resolved.
struct CellConfig {
  std::string name = "default";
  StoreKind backend = StoreKind::kExtent;
  WorkloadSpec spec;
  std::uint64_t payload_seed = 1;
  Geometry geometry;
  ExtentStoreOptions extent;
  PageStoreOptions page;
  std::uint64_t checkpoint_interval_ops = 64;
  DiskModelParams disk;
  // Pathological start (extent backend): free space carved into runs of
  // shatter_run_bytes before bulk load, ballast released after it.
  std::uint64_t shatter_run_bytes = 0;
  std::uint64_t shatter_ballast_bytes = 0;
  bool scan = true;
  bool audit = false;
  bool verify_reads = true;  // compare every read against the regenerated payload
  ImagePlacement image = ImagePlacement::kAuto;
  std::uint64_t memory_image_limit = 2ULL << 30;
  bool keep_image = false;
  std::filesystem::path fs_root;  // fs backend; default <cell dir>/fs_root
  std::uint64_t gap_allowance = kDefaultGapAllowance;

  KvConfig to_config() const;
};

// Experiment config: flat key=value. `cells = a, b` names the cells; keys
// without a prefix apply to every cell and `cell.<name>.<key>` overrides one.
// Without `cells` the file describes a single cell named "default".
//
// Cell keys: backend, the workload keys of WorkloadSpec, payload_seed,
// cluster_bytes, page_bytes, page_header_bytes, metadata_bytes, fit_policy,
// sequential_detect_bytes, file_record_bytes, root_pages, flush_on_commit,
// checkpoint_interval_ops, seek_ms, transfer_mb_s, shatter_run_bytes,
// shatter_ballast_bytes, scan, audit, verify_reads, image (auto|memory|file),
// memory_image_limit, keep_image, fs_root, gap_allowance.
struct ExperimentMatrix {
  std::vector<CellConfig> cells;

  static ExperimentMatrix from_config(const KvConfig& config);
};

CellConfig cell_from_config(const std::string& name, const KvConfig& keys);

enum class PhaseKind { kBulkLoad, kChurn, kRead };

std::string_view to_string(PhaseKind kind);

struct PhaseResult {
  PhaseKind kind = PhaseKind::kBulkLoad;
  Age age_from;
  Age age_to;
  std::uint64_t ops = 0;
  std::uint64_t bytes_moved = 0;
  std::uint64_t seeks = 0;             // modeled; 0 for the fs backend
  double modeled_seconds = 0.0;        // 0 for the fs backend
  double wall_seconds = 0.0;           // excludes scanning and audits

  // Modeled throughput where a model exists, wall-clock otherwise.
  double throughput_mb_s(bool modeled) const;
};

struct AgeSnapshot {
  Age age;
  std::uint64_t live_bytes = 0;
  std::uint64_t churned_bytes = 0;
  std::uint64_t free_bytes = 0;
  double free_pool = 0.0;  // free bytes / mean object size
  std::vector<LiveObject> live;
  std::optional<FragReport> scan;
  std::map<ObjectId, std::uint32_t> ground_truth;
  std::uint64_t scan_mismatches = 0;  // objects where scanner != ground truth

  double ground_truth_mean() const;
  // Scanner value when a scan ran, ground truth otherwise.
  double mean_fragments() const;
};

struct CellResult {
  std::string name;
  StoreKind backend = StoreKind::kExtent;
  bool ok = true;
  std::string error;
  std::uint64_t stream_digest = 0;
  std::uint64_t bulk_count = 0;
  std::vector<PhaseResult> phases;
  std::vector<AgeSnapshot> snapshots;
  std::vector<std::string> advisories;
  std::uint32_t max_put_fragments = 0;  // over every put of the run
  StoreStats store_stats;
  std::uint64_t data_bytes_written = 0;
  std::optional<WalStats> wal;
  std::uint64_t chain_pages_written = 0;
  std::uint64_t root_pages_written = 0;
  std::uint64_t wal_payload_markers = 0;  // markers of any payload found in the log
};

// Runs one cell. With a non-empty out_dir the cell's files are written to
// out_dir/<cell name>/.
CellResult run_cell(const CellConfig& cell, const std::filesystem::path& out_dir = {});
std::vector<CellResult> run_experiment(const ExperimentMatrix& matrix,
                                       const std::filesystem::path& out_dir);

// Reads sample ids in order, each as one full-object read.
PhaseResult measure_read_pass(BlobStore& store, std::span<const ObjectId> ids, DiskModel* model);

void write_cell_files(const CellConfig& cell, const CellResult& result,
                      const std::filesystem::path& cell_dir);

enum class CrashVerdict { kOld, kNew, kViolation };

std::string_view to_string(CrashVerdict verdict);

struct CrashOutcome {
  CrashVerdict verdict = CrashVerdict::kViolation;
  bool crashed = false;
  std::uint64_t leaked = 0;  // leaked pages or leftover temp files after recovery
  std::string detail;
};

// Writes an old version, replaces it with a crash armed at cut_point (the
// seed picks payload sizes and which arrival fires), recovers, and classifies
// what the object reads back as. An empty cut point is the no-crash control.
// fs runs use scratch_dir.
CrashOutcome inject_crash(StoreKind kind, const std::string& cut_point, std::uint64_t seed,
                          const std::filesystem::path& scratch_dir = {});

std::vector<std::string> crash_cut_points(StoreKind kind);

}  // namespace blobbench
