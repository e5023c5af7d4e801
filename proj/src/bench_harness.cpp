#include "blobbench/bench_harness.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unistd.h>

#include "blobbench/error.hpp"
#include "blobbench/fs_store.hpp"
#include "json.hpp"

namespace blobbench {
namespace fs = std::filesystem;
namespace {

using Clock = std::chrono::steady_clock;

const std::set<std::string> kCellKeys = {
    "backend", "seed", "size_kind", "mean_bytes", "size_spread", "capacity_bytes",
    "target_occupancy", "write_buffer_bytes", "measurement_ages", "read_sample_count",
    "churn_mode", "delete_create_fraction", "payload_seed", "cluster_bytes", "page_bytes",
    "page_header_bytes", "metadata_bytes", "fit_policy", "sequential_detect_bytes",
    "file_record_bytes", "root_pages", "flush_on_commit", "checkpoint_interval_ops", "seek_ms",
    "transfer_mb_s", "shatter_run_bytes", "shatter_ballast_bytes", "scan", "audit",
    "verify_reads", "image", "memory_image_limit", "keep_image", "fs_root", "gap_allowance",
};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
}

// Log device that counts marker-shaped byte strings in everything written
// to it, so a run can prove no payload reached the log.
class MarkerWatchBacking final : public Backing {
 public:
  explicit MarkerWatchBacking(std::uint64_t* hits) : hits_(hits) {}
  std::uint64_t size() const override { return inner_.size(); }
  void read(std::uint64_t offset, std::span<std::byte> out) const override { inner_.read(offset, out); }
  void write(std::uint64_t offset, std::span<const std::byte> in) override {
    for (std::size_t i = 0; i + kMarkerBytes <= in.size(); ++i) {
      if (in[i] == std::byte{'F'} && decode_marker(in.subspan(i, kMarkerBytes))) ++*hits_;
    }
    inner_.write(offset, in);
  }
  void resize(std::uint64_t n) override { inner_.resize(n); }

 private:
  MemoryBacking inner_{0};
  std::uint64_t* hits_;
};

// Scratch directory removed on scope exit.
class ScratchDir {
 public:
  explicit ScratchDir(const fs::path& parent, const std::string& stem) {
    static std::uint64_t counter = 0;
    const fs::path base = parent.empty() ? fs::temp_directory_path() : parent;
    path_ = base / (stem + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

// Store plus whatever backs it for the length of a cell.
struct CellStore {
  std::unique_ptr<BlobStore> store;
  ExtentStore* extent = nullptr;
  PageStore* page = nullptr;
  std::unique_ptr<ScratchDir> scratch;
  std::vector<fs::path> cleanup;
};

CellStore open_cell_store(const CellConfig& cell, const fs::path& cell_dir, std::uint64_t* wal_hits) {
  CellStore out;
  if (cell.backend == StoreKind::kFs) {
    fs::path root = cell.fs_root;
    if (root.empty()) {
      if (cell_dir.empty()) {
        out.scratch = std::make_unique<ScratchDir>(fs::path{}, "blobbench-fs");
        root = out.scratch->path();
      } else {
        root = cell_dir / "fs_root";
        fs::remove_all(root);
      }
    }
    fs::create_directories(root);
    check(fs::is_empty(root), ErrorCode::kConfig, "fs_root must be empty: " + root.string());
    if (!cell.keep_image && !out.scratch) out.cleanup.push_back(root);
    FsStoreConfig config;
    config.root_directory = root;
    out.store = std::make_unique<FsStore>(config);
    return out;
  }
  Geometry g = cell.geometry;
  g.capacity_bytes = cell.spec.volume_capacity_bytes;
  const BackendKind kind = cell.backend == StoreKind::kExtent ? BackendKind::kExtent : BackendKind::kPage;
  const bool in_memory = cell.image == ImagePlacement::kMemory ||
                         (cell.image == ImagePlacement::kAuto && g.capacity_bytes <= cell.memory_image_limit);
  std::optional<VolumeImage> image;
  if (in_memory) {
    image.emplace(VolumeImage::create_in_memory(g, kind));
  } else {
    fs::path dir = cell_dir;
    if (dir.empty()) {
      out.scratch = std::make_unique<ScratchDir>(fs::path{}, "blobbench-img");
      dir = out.scratch->path();
    }
    const fs::path path = dir / "volume.img";
    fs::remove(path);
    image.emplace(VolumeImage::create_file(path, g, kind));
    if (!cell.keep_image) out.cleanup.push_back(path);
  }
  if (cell.backend == StoreKind::kExtent) {
    auto store = std::make_unique<ExtentStore>(ExtentStore::create(std::move(*image), cell.extent));
    out.extent = store.get();
    out.store = std::move(store);
  } else {
    auto store = std::make_unique<PageStore>(
        PageStore::create(std::move(*image), std::make_unique<MarkerWatchBacking>(wal_hits), cell.page));
    out.page = store.get();
    out.store = std::move(store);
  }
  return out;
}

// Modeled cost of writing one stored version.
void model_write(const CellStore& cs, const BlobRecord& rec, DiskModel& model) {
  if (cs.extent != nullptr) {
    if (auto record = cs.extent->file_record(rec.id)) model.access(record->offset, record->length);
    std::uint64_t left = rec.size_bytes;
    for (const auto& e : std::get<ExtentList>(rec.placement)) {
      const std::uint64_t n = std::min(left, e.length);
      model.access(e.offset, n);
      left -= n;
    }
  } else if (cs.page != nullptr) {
    const std::uint64_t page_bytes = cs.page->geometry().page_bytes;
    if (auto root = cs.page->root_page(rec.id)) model.access(*root * page_bytes, page_bytes);
    for (const auto& run : to_runs(std::get<PageList>(rec.placement))) {
      model.access(std::uint64_t{run.first} * page_bytes, std::uint64_t{run.count} * page_bytes);
    }
  }
}

std::vector<LiveObject> live_list(const BlobStore& store) {
  std::vector<LiveObject> live;
  for (const auto id : store.list()) {
    const auto rec = store.find(id);
    live.push_back({id, rec->tag, rec->size_bytes / kMarkerInterval});
  }
  return live;
}

}  // namespace

void DiskModel::access(std::uint64_t offset, std::uint64_t length) {
  if (offset != head_) ++seeks_;
  head_ = offset + length;
  bytes_ += length;
}

void DiskModel::random_access(std::uint64_t offset, std::uint64_t length) {
  ++seeks_;
  head_ = offset + length;
  bytes_ += length;
}

double DiskModel::seconds() const {
  return static_cast<double>(seeks_) * params_.seek_ms / 1000.0 +
         static_cast<double>(bytes_) / (params_.transfer_mb_s * 1024.0 * 1024.0);
}

std::string_view to_string(PhaseKind kind) {
  switch (kind) {
    case PhaseKind::kBulkLoad: return "bulk_load";
    case PhaseKind::kChurn: return "churn";
    case PhaseKind::kRead: return "read";
  }
  return "?";
}

double PhaseResult::throughput_mb_s(bool modeled) const {
  const double secs = modeled ? modeled_seconds : wall_seconds;
  if (secs <= 0.0) return 0.0;
  return static_cast<double>(bytes_moved) / (1024.0 * 1024.0) / secs;
}

double AgeSnapshot::ground_truth_mean() const {
  if (ground_truth.empty()) return 0.0;
  double total = 0;
  for (const auto& [id, f] : ground_truth) total += f;
  return total / static_cast<double>(ground_truth.size());
}

double AgeSnapshot::mean_fragments() const {
  return scan ? scan->mean_fragments() : ground_truth_mean();
}

CellConfig cell_from_config(const std::string& name, const KvConfig& keys) {
  for (const auto& [key, value] : keys.values()) {
    check(kCellKeys.count(key) != 0, ErrorCode::kConfig, "unknown config key '" + key + "'");
  }
  CellConfig cell;
  cell.name = name;
  check(!name.empty() && name.find_first_of("/\\ .") == std::string::npos, ErrorCode::kConfig,
        "cell name '" + name + "' must be non-empty without '/', '.', or spaces");
  cell.backend = parse_store_kind(keys.get_string("backend", "extent"));
  cell.spec = WorkloadSpec::from_config(keys);
  cell.payload_seed = keys.get_u64("payload_seed", cell.spec.seed);
  cell.geometry.cluster_bytes = static_cast<std::uint32_t>(keys.get_u64("cluster_bytes", 4096));
  cell.geometry.page_bytes = static_cast<std::uint32_t>(keys.get_u64("page_bytes", 8192));
  cell.geometry.page_header_bytes = static_cast<std::uint32_t>(keys.get_u64("page_header_bytes", 96));
  cell.geometry.metadata_bytes = keys.get_u64("metadata_bytes", 0);
  cell.geometry.capacity_bytes = cell.spec.volume_capacity_bytes;
  if (cell.backend != StoreKind::kFs) cell.geometry.validate();
  cell.extent.fit = parse_fit_policy(keys.get_string("fit_policy", "smallest_fit"));
  cell.extent.sequential_detect_bytes =
      keys.get_u64("sequential_detect_bytes", cell.extent.sequential_detect_bytes);
  cell.extent.file_record_bytes = keys.get_u64("file_record_bytes", cell.extent.file_record_bytes);
  cell.page.root_pages = keys.get_bool("root_pages", true);
  cell.page.flush_on_commit = keys.get_bool("flush_on_commit", true);
  cell.checkpoint_interval_ops = keys.get_u64("checkpoint_interval_ops", cell.checkpoint_interval_ops);
  cell.disk.seek_ms = keys.get_double("seek_ms", cell.disk.seek_ms);
  cell.disk.transfer_mb_s = keys.get_double("transfer_mb_s", cell.disk.transfer_mb_s);
  check(cell.disk.seek_ms >= 0 && cell.disk.transfer_mb_s > 0, ErrorCode::kConfig,
        "seek_ms must be >= 0 and transfer_mb_s > 0");
  cell.shatter_run_bytes = keys.get_u64("shatter_run_bytes", 0);
  cell.shatter_ballast_bytes = keys.get_u64("shatter_ballast_bytes", 0);
  check((cell.shatter_run_bytes == 0) == (cell.shatter_ballast_bytes == 0), ErrorCode::kConfig,
        "shatter_run_bytes and shatter_ballast_bytes go together");
  check(cell.shatter_run_bytes == 0 || cell.backend == StoreKind::kExtent, ErrorCode::kConfig,
        "shattered starts are supported on the extent backend only");
  cell.scan = keys.get_bool("scan", true);
  cell.audit = keys.get_bool("audit", false);
  cell.verify_reads = keys.get_bool("verify_reads", true);
  const std::string image = keys.get_string("image", "auto");
  if (image == "auto") {
    cell.image = ImagePlacement::kAuto;
  } else if (image == "memory") {
    cell.image = ImagePlacement::kMemory;
  } else if (image == "file") {
    cell.image = ImagePlacement::kFile;
  } else {
    fail(ErrorCode::kConfig, "image must be auto, memory or file, got '" + image + "'");
  }
  cell.memory_image_limit = keys.get_u64("memory_image_limit", cell.memory_image_limit);
  cell.keep_image = keys.get_bool("keep_image", false);
  cell.fs_root = keys.get_string("fs_root", "");
  cell.gap_allowance = keys.get_u64("gap_allowance", cell.gap_allowance);
  check(cell.gap_allowance >= cell.geometry.page_header_bytes &&
            cell.gap_allowance < cell.geometry.cluster_bytes,
        ErrorCode::kConfig, "gap_allowance must cover the page header and stay below the cluster size");
  return cell;
}

KvConfig CellConfig::to_config() const {
  KvConfig c = spec.to_config();
  c.set("backend", std::string(to_string(backend)));
  c.set("payload_seed", std::to_string(payload_seed));
  c.set("cluster_bytes", std::to_string(geometry.cluster_bytes));
  c.set("page_bytes", std::to_string(geometry.page_bytes));
  c.set("page_header_bytes", std::to_string(geometry.page_header_bytes));
  c.set("metadata_bytes", std::to_string(geometry.metadata_bytes));
  c.set("fit_policy", extent.fit == FitPolicy::kSmallestFit ? "smallest_fit" : "largest_first");
  c.set("sequential_detect_bytes", std::to_string(extent.sequential_detect_bytes));
  c.set("file_record_bytes", std::to_string(extent.file_record_bytes));
  c.set("root_pages", page.root_pages ? "true" : "false");
  c.set("flush_on_commit", page.flush_on_commit ? "true" : "false");
  c.set("checkpoint_interval_ops", std::to_string(checkpoint_interval_ops));
  c.set("seek_ms", fmt(disk.seek_ms));
  c.set("transfer_mb_s", fmt(disk.transfer_mb_s));
  c.set("shatter_run_bytes", std::to_string(shatter_run_bytes));
  c.set("shatter_ballast_bytes", std::to_string(shatter_ballast_bytes));
  c.set("scan", scan ? "true" : "false");
  c.set("audit", audit ? "true" : "false");
  c.set("verify_reads", verify_reads ? "true" : "false");
  c.set("gap_allowance", std::to_string(gap_allowance));
  return c;
}

ExperimentMatrix ExperimentMatrix::from_config(const KvConfig& config) {
  KvConfig base;
  std::map<std::string, KvConfig> overrides;
  std::vector<std::string> names;
  if (auto cells = config.find("cells")) names = split_list(*cells);
  for (const auto& [key, value] : config.values()) {
    if (key == "cells") continue;
    if (key.starts_with("cell.")) {
      const auto dot = key.find('.', 5);
      check(dot != std::string::npos && dot + 1 < key.size(), ErrorCode::kConfig,
            "malformed cell override '" + key + "'");
      const std::string cell = key.substr(5, dot - 5);
      check(std::find(names.begin(), names.end(), cell) != names.end(), ErrorCode::kConfig,
            "override for undeclared cell '" + cell + "'");
      overrides[cell].set(key.substr(dot + 1), value);
      continue;
    }
    base.set(key, value);
  }
  if (names.empty()) names.push_back("default");
  ExperimentMatrix matrix;
  std::set<std::string> seen;
  for (const auto& name : names) {
    check(seen.insert(name).second, ErrorCode::kConfig, "cell '" + name + "' declared twice");
    KvConfig merged = base;
    for (const auto& [k, v] : overrides[name].values()) merged.set(k, v);
    matrix.cells.push_back(cell_from_config(name, merged));
  }
  return matrix;
}

PhaseResult measure_read_pass(BlobStore& store, std::span<const ObjectId> ids, DiskModel* model) {
  check(!ids.empty(), ErrorCode::kConfig, "read pass needs at least one sample");
  PhaseResult phase;
  phase.kind = PhaseKind::kRead;
  const auto start = Clock::now();
  const std::uint64_t seeks_before = model ? model->seeks() : 0;
  const double secs_before = model ? model->seconds() : 0.0;
  const VolumeImage* image = store.image();
  for (const auto id : ids) {
    const Bytes data = store.get(id);
    phase.bytes_moved += data.size();
    ++phase.ops;
    if (model == nullptr || image == nullptr) continue;
    const auto rec = store.find(id);
    if (const auto* extents = std::get_if<ExtentList>(&rec->placement)) {
      std::uint64_t left = rec->size_bytes;
      ExtentList merged;
      for (const auto& e : *extents) {
        if (!merged.empty() && merged.back().end() == e.offset) {
          merged.back().length += e.length;
        } else {
          merged.push_back(e);
        }
      }
      for (const auto& e : merged) {
        const std::uint64_t n = std::min(left, e.length);
        model->random_access(e.offset, n);
        left -= n;
      }
    } else {
      const std::uint64_t page_bytes = image->geometry().page_bytes;
      for (const auto& run : to_runs(std::get<PageList>(rec->placement))) {
        model->random_access(std::uint64_t{run.first} * page_bytes, std::uint64_t{run.count} * page_bytes);
      }
    }
  }
  phase.wall_seconds = seconds_since(start);
  if (model != nullptr) {
    phase.seeks = model->seeks() - seeks_before;
    phase.modeled_seconds = model->seconds() - secs_before;
  }
  return phase;
}

CellResult run_cell(const CellConfig& cell, const fs::path& out_dir) {
  CellResult result;
  result.name = cell.name;
  result.backend = cell.backend;
  const fs::path cell_dir = out_dir.empty() ? fs::path{} : out_dir / cell.name;
  if (!cell_dir.empty()) fs::create_directories(cell_dir);

  const OperationStream stream = build_stream(cell.spec);
  result.stream_digest = stream.digest();
  result.bulk_count = stream.bulk_count;

  std::uint64_t wal_hits = 0;
  CellStore cs = open_cell_store(cell, cell_dir, &wal_hits);
  BlobStore& store = *cs.store;
  const bool modeled = cell.backend != StoreKind::kFs;
  DiskModel model(cell.disk);
  StorageAgeLedger ledger;
  std::map<ObjectId, std::uint64_t> sizes;
  std::uint64_t write_serial = 0;
  std::uint64_t churn_ops = 0;
  const double mean_size = static_cast<double>(cell.spec.size_dist.mean_bytes);

  PhaseResult current;
  bool phase_open = false;
  Clock::time_point phase_start;
  std::uint64_t seeks_mark = 0;
  double secs_mark = 0.0;
  std::optional<std::uint32_t> snapshot_pass;
  std::vector<ObjectId> read_batch;
  std::uint32_t read_pass = 0;

  auto open_phase = [&](PhaseKind kind, Age from) {
    current = PhaseResult{};
    current.kind = kind;
    current.age_from = from;
    phase_open = true;
    phase_start = Clock::now();
    seeks_mark = model.seeks();
    secs_mark = model.seconds();
  };
  auto close_phase = [&](Age to) {
    if (!phase_open) return;
    current.age_to = to;
    current.wall_seconds = seconds_since(phase_start);
    if (modeled) {
      current.seeks = model.seeks() - seeks_mark;
      current.modeled_seconds = model.seconds() - secs_mark;
    }
    result.phases.push_back(current);
    phase_open = false;
  };
  auto age_of = [&](std::uint32_t pass) { return cell.spec.measurement_ages.at(pass); };
  auto prior_age = [&](std::uint32_t pass) { return pass == 0 ? Age{} : age_of(pass - 1); };

  auto put = [&](ObjectId id, std::uint64_t size) {
    const std::uint64_t tag = make_tag(id, ++write_serial);
    MarkedPayloadSource src(tag, size, cell.payload_seed);
    const BlobRecord rec = store.put(id, src, cell.spec.write_buffer_bytes, tag);
    if (modeled) {
      model_write(cs, rec, model);
      result.max_put_fragments = std::max(result.max_put_fragments, count_fragments(rec));
    }
    current.bytes_moved += size;
    ++current.ops;
  };

  auto take_snapshot = [&](std::uint32_t pass) {
    store.sync();
    AgeSnapshot snap;
    snap.age = age_of(pass);
    snap.live_bytes = ledger.live_bytes();
    snap.churned_bytes = ledger.churned_bytes();
    // Host free space would make fs results machine-dependent; fs cells
    // report the configured capacity instead.
    snap.free_bytes = cell.backend == StoreKind::kFs
                          ? cell.spec.volume_capacity_bytes - std::min(cell.spec.volume_capacity_bytes, snap.live_bytes)
                          : store.free_bytes();
    snap.free_pool = static_cast<double>(snap.free_bytes) / mean_size;
    snap.live = live_list(store);
    snap.ground_truth = store.ground_truth_fragments();
    if (cell.scan && store.image() != nullptr) {
      ScanOptions options;
      options.gap_allowance = cell.gap_allowance;
      options.payload_seed = cell.payload_seed;
      snap.scan = scan_image(*store.image(), snap.live, options);
      snap.scan->age_label = snap.age.to_string();
      const auto diff = validate_against_ntfs_style_report(*snap.scan, snap.ground_truth);
      snap.scan_mismatches = diff.entries.size();
    }
    if (cell.audit) store.audit();
    if (snap.free_pool < 400.0) {
      result.advisories.push_back("age " + snap.age.to_string() + ": free pool " +
                                  fmt(snap.free_pool) +
                                  " objects is below 400; fragmentation grows faster");
    }
    result.snapshots.push_back(std::move(snap));
  };

  auto run_reads = [&]() {
    if (read_batch.empty()) return;
    PhaseResult phase = measure_read_pass(store, read_batch, modeled ? &model : nullptr);
    phase.age_from = age_of(read_pass);
    phase.age_to = phase.age_from;
    if (cell.verify_reads) {
      for (const auto id : std::set<ObjectId>(read_batch.begin(), read_batch.end())) {
        const auto rec = store.find(id);
        if (store.get(id) != make_payload(rec->tag, rec->size_bytes, cell.payload_seed)) {
          fail(ErrorCode::kCorrupt, "object " + std::to_string(id) + " read back wrong bytes");
        }
      }
    }
    result.phases.push_back(phase);
    read_batch.clear();
  };

  try {
    if (cs.extent != nullptr && cell.shatter_run_bytes > 0) {
      cs.extent->shatter_free_space(cell.shatter_run_bytes, cell.shatter_ballast_bytes);
    }
    open_phase(PhaseKind::kBulkLoad, Age{});
    bool bulk_done = false;
    std::optional<std::uint32_t> churn_pass;
    for (const auto& ev : stream.events) {
      if (ev.kind != EventKind::kRead) run_reads();
      if (ev.kind != EventKind::kBulkCreate && !bulk_done) {
        close_phase(Age{});
        bulk_done = true;
        if (cs.extent != nullptr && cell.shatter_run_bytes > 0) {
          cs.extent->release_ballast();
          store.end_operation();
        }
      }
      switch (ev.kind) {
        case EventKind::kBulkCreate:
          put(ev.id, ev.size);
          ledger.record_create(ev.size);
          sizes[ev.id] = ev.size;
          store.end_operation();
          break;
        case EventKind::kSafeWrite:
        case EventKind::kCreate:
        case EventKind::kDelete: {
          if (churn_pass != ev.pass) {
            open_phase(PhaseKind::kChurn, prior_age(ev.pass));
            churn_pass = ev.pass;
          }
          if (ev.kind == EventKind::kDelete) {
            store.remove(ev.id);
            ledger.record_churn(sizes.at(ev.id), -static_cast<std::int64_t>(sizes.at(ev.id)));
            sizes.erase(ev.id);
            ++current.ops;
          } else if (ev.kind == EventKind::kCreate) {
            put(ev.id, ev.size);
            ledger.record_create(ev.size);
            sizes[ev.id] = ev.size;
          } else {
            const std::uint64_t old = sizes.at(ev.id);
            put(ev.id, ev.size);
            ledger.record_churn(old, static_cast<std::int64_t>(ev.size) - static_cast<std::int64_t>(old));
            sizes[ev.id] = ev.size;
          }
          store.end_operation();
          if (cell.checkpoint_interval_ops > 0 && ++churn_ops % cell.checkpoint_interval_ops == 0) {
            store.checkpoint();
          }
          break;
        }
        case EventKind::kRead:
          if (snapshot_pass != ev.pass) {
            if (churn_pass == ev.pass) close_phase(age_of(ev.pass));
            run_reads();
            snapshot_pass = ev.pass;
            read_pass = ev.pass;
            take_snapshot(ev.pass);
          }
          read_batch.push_back(ev.id);
          break;
      }
    }
    if (!bulk_done) close_phase(Age{});
    run_reads();
    if (cs.page != nullptr) {
      result.wal = cs.page->wal_stats();
      result.chain_pages_written = cs.page->chain_pages_written();
      result.root_pages_written = cs.page->root_pages_written();
    }
  } catch (const Error& e) {
    result.ok = false;
    result.error = std::string(to_string(e.code())) + ": " + e.what();
    if (e.code() == ErrorCode::kVolumeFull) {
      result.error += " (occupancy too aggressive for this volume; live " +
                      std::to_string(ledger.live_bytes()) + " bytes, free " +
                      std::to_string(store.free_bytes()) + " bytes)";
    }
  }
  result.store_stats = store.stats();
  if (store.image() != nullptr) result.data_bytes_written = store.image()->data_bytes_written();
  result.wal_payload_markers = wal_hits;
  if (cell.keep_image) cs.store->sync();
  cs.store.reset();
  for (const auto& path : cs.cleanup) fs::remove_all(path);
  if (!cell_dir.empty()) write_cell_files(cell, result, cell_dir);
  return result;
}

std::vector<CellResult> run_experiment(const ExperimentMatrix& matrix, const fs::path& out_dir) {
  std::vector<CellResult> results;
  for (const auto& cell : matrix.cells) results.push_back(run_cell(cell, out_dir));
  return results;
}

void write_cell_files(const CellConfig& cell, const CellResult& result, const fs::path& cell_dir) {
  fs::create_directories(cell_dir);
  const bool modeled = cell.backend != StoreKind::kFs;

  std::ostringstream phases;
  phases << "#schema,phases,1\n"
            "phase,age_from,age_to,ops,bytes_moved,seeks,modeled_seconds,throughput_mb_s,"
            "mean_fragments,fragments_per_64k,free_pool\n";
  std::ostringstream timings;
  timings << "#schema,timings,1\nphase,age_from,age_to,wall_seconds,wall_throughput_mb_s\n";
  for (const auto& p : result.phases) {
    phases << to_string(p.kind) << ',' << p.age_from.to_string() << ',' << p.age_to.to_string()
           << ',' << p.ops << ',' << p.bytes_moved << ',';
    if (modeled) {
      phases << p.seeks << ',' << fmt(p.modeled_seconds) << ',' << fmt(p.throughput_mb_s(true));
    } else {
      phases << ",,";
    }
    phases << ',';
    if (p.kind == PhaseKind::kRead) {
      const auto snap = std::find_if(result.snapshots.begin(), result.snapshots.end(),
                                     [&](const AgeSnapshot& s) { return s.age == p.age_to; });
      if (snap != result.snapshots.end() && (snap->scan || !snap->ground_truth.empty())) {
        phases << fmt(snap->mean_fragments()) << ','
               << (snap->scan ? fmt(snap->scan->fragments_per_64k()) : std::string()) << ','
               << fmt(snap->free_pool);
      } else if (snap != result.snapshots.end()) {
        phases << ",," << fmt(snap->free_pool);
      } else {
        phases << ",,";
      }
    } else {
      phases << ",,";
    }
    phases << '\n';
    timings << to_string(p.kind) << ',' << p.age_from.to_string() << ',' << p.age_to.to_string()
            << ',' << fmt(p.wall_seconds) << ',' << fmt(p.throughput_mb_s(false)) << '\n';
  }
  write_text(cell_dir / "phases.csv", phases.str());
  write_text(cell_dir / "timings.csv", timings.str());

  nlohmann::ordered_json ages = nlohmann::ordered_json::array();
  for (const auto& snap : result.snapshots) {
    const std::string label = snap.age.label();
    write_live_list(cell_dir / ("live_age" + label + ".csv"), snap.live);
    if (snap.scan) {
      write_text(cell_dir / ("frag_age" + label + ".csv"), snap.scan->to_csv());
    } else if (!snap.ground_truth.empty()) {
      FragReport truth;
      for (const auto& obj : snap.live) {
        truth.objects.push_back({obj.object_id, obj.expected_markers, 0, snap.ground_truth.at(obj.object_id)});
      }
      write_text(cell_dir / ("frag_age" + label + ".csv"), truth.to_csv());
    }
    nlohmann::ordered_json a;
    a["age"] = snap.age.to_string();
    a["live_bytes"] = snap.live_bytes;
    a["churned_bytes"] = snap.churned_bytes;
    a["storage_age"] = snap.live_bytes > 0
                           ? static_cast<double>(snap.churned_bytes) / static_cast<double>(snap.live_bytes)
                           : 0.0;
    a["objects"] = snap.live.size();
    a["free_bytes"] = snap.free_bytes;
    a["free_pool"] = snap.free_pool;
    a["frag_source"] = snap.scan ? "scanner" : (snap.ground_truth.empty() ? "none" : "ground_truth");
    if (snap.scan || !snap.ground_truth.empty()) a["mean_fragments"] = snap.mean_fragments();
    if (!snap.ground_truth.empty()) a["ground_truth_mean_fragments"] = snap.ground_truth_mean();
    if (snap.scan) {
      a["fragments_per_64k"] = snap.scan->fragments_per_64k();
      a["max_fragments"] = snap.scan->max_fragments();
      a["scan_mismatches"] = snap.scan_mismatches;
      a["scan_warnings"] = snap.scan->warnings.size();
    }
    ages.push_back(a);
  }

  nlohmann::ordered_json j;
  j["schema"] = "cell_summary/1";
  j["cell"] = cell.name;
  j["backend"] = std::string(to_string(cell.backend));
  j["status"] = result.ok ? "ok" : "failed";
  if (!result.ok) j["error"] = result.error;
  j["stream_digest"] = hex64(result.stream_digest);
  j["bulk_count"] = result.bulk_count;
  j["mean_object_bytes"] = cell.spec.size_dist.mean_bytes;
  j["size_kind"] = cell.spec.size_dist.kind == SizeKind::kConstant ? "constant" : "uniform";
  j["capacity_bytes"] = cell.spec.volume_capacity_bytes;
  nlohmann::ordered_json config;
  const KvConfig resolved = cell.to_config();
  for (const auto& [k, v] : resolved.values()) config[k] = v;
  j["config"] = config;
  j["ages"] = ages;
  if (cell.backend != StoreKind::kFs) j["max_put_fragments"] = result.max_put_fragments;
  j["store"] = {
      {"payload_bytes_written", result.store_stats.bytes_written},
      {"payload_bytes_read", result.store_stats.bytes_read},
      {"append_requests", result.store_stats.append_requests},
      {"puts", result.store_stats.puts},
      {"failed_puts", result.store_stats.failed_puts},
      {"internal_fragmentation_bytes", result.store_stats.internal_fragmentation_bytes},
      {"data_region_bytes_written", result.data_bytes_written},
  };
  if (result.wal) {
    j["wal"] = {
        {"records", result.wal->records},
        {"bytes_appended", result.wal->bytes_appended},
        {"truncations", result.wal->truncations},
        {"peak_bytes", result.wal->peak_bytes},
        {"payload_markers_seen", result.wal_payload_markers},
        {"chain_pages_written", result.chain_pages_written},
        {"root_pages_written", result.root_pages_written},
    };
  }
  j["advisories"] = result.advisories;
  write_text(cell_dir / "summary.json", j.dump(2) + "\n");
}

std::string_view to_string(CrashVerdict verdict) {
  switch (verdict) {
    case CrashVerdict::kOld: return "old";
    case CrashVerdict::kNew: return "new";
    case CrashVerdict::kViolation: return "violation";
  }
  return "?";
}

std::vector<std::string> crash_cut_points(StoreKind kind) {
  std::vector<std::string> out;
  if (kind == StoreKind::kFs) {
    for (const auto p : FsStore::cut_points()) out.emplace_back(p);
  } else if (kind == StoreKind::kPage) {
    for (const auto p : PageStore::cut_points()) out.emplace_back(p);
  } else {
    fail(ErrorCode::kConfig, "the extent backend has no crash cut points");
  }
  return out;
}

namespace {

CrashVerdict classify(const Bytes& got, const Bytes& old_data, const Bytes& new_data) {
  if (got == new_data) return CrashVerdict::kNew;
  if (got == old_data) return CrashVerdict::kOld;
  return CrashVerdict::kViolation;
}

// How many times a cut point can be reached by one put of `chunks` chunks.
std::uint64_t arrivals(const std::string& point, std::uint64_t chunks) {
  if (point == "after-write" || point == "mid-data") return chunks;
  return 1;
}

CrashOutcome crash_fs(const std::string& point, std::uint64_t seed, const fs::path& scratch_dir) {
  Rng rng(seed);
  const std::uint64_t old_size = rng.between(16, 1024) * 1024;
  const std::uint64_t new_size = rng.between(16, 1024) * 1024;
  const std::uint64_t chunks = (new_size + 65535) / 65536;
  const Bytes old_data = make_payload(make_tag(1, 1), old_size, seed);
  const Bytes new_data = make_payload(make_tag(1, 2), new_size, seed);
  ScratchDir dir(scratch_dir, "blobbench-crash");
  FsStoreConfig config;
  config.root_directory = dir.path();
  CrashOutcome out;
  {
    FsStore store(config);
    SpanSource src(old_data);
    store.put(1, src, 65536);
    CrashInjector injector;
    if (!point.empty()) injector.arm(point, rng.below(arrivals(point, chunks)));
    store.set_crash_injector(&injector);
    try {
      SpanSource next(new_data);
      store.put(1, next, 65536);
    } catch (const CrashInjected&) {
      out.crashed = true;
    }
  }
  FsStore::recover_sweep(dir.path());
  FsStore recovered(config);
  out.verdict = classify(recovered.get(1), old_data, new_data);
  for (const auto& entry : fs::directory_iterator(dir.path())) {
    if (FsStore::is_temp_name(entry.path().filename().string())) ++out.leaked;
  }
  if (!out.crashed && out.verdict != CrashVerdict::kNew) out.verdict = CrashVerdict::kViolation;
  return out;
}

CrashOutcome crash_page(const std::string& point, std::uint64_t seed) {
  Rng rng(seed);
  Geometry g;
  g.capacity_bytes = 16 << 20;
  auto store = PageStore::create(VolumeImage::create_in_memory(g, BackendKind::kPage),
                                 std::make_unique<MemoryBacking>(0));
  // Neighbours whose state must survive untouched.
  std::map<ObjectId, Bytes> others;
  std::uint64_t serial = 0;
  for (ObjectId id = 2; id < 2 + rng.between(1, 4); ++id) {
    others[id] = make_payload(make_tag(id, ++serial), rng.between(8, 512) * 1024, seed);
    SpanSource src(others[id]);
    store.put(id, src, 65536);
  }
  const Bytes old_data = make_payload(make_tag(1, ++serial), rng.between(8, 1024) * 1024, seed);
  const Bytes new_data = make_payload(make_tag(1, ++serial), rng.between(8, 1024) * 1024, seed);
  {
    SpanSource src(old_data);
    store.put(1, src, 65536);
  }
  if (rng.below(2) == 0) store.checkpoint();
  if (rng.below(2) == 0 && others.size() > 1) {
    store.remove(others.rbegin()->first);
    others.erase(std::prev(others.end()));
  }
  const std::uint64_t chunks = (new_data.size() + 65535) / 65536;
  CrashInjector injector;
  if (!point.empty()) injector.arm(point, rng.below(arrivals(point, chunks)));
  store.set_crash_injector(&injector);
  CrashOutcome out;
  try {
    SpanSource src(new_data);
    store.put(1, src, 65536);
    store.checkpoint();
  } catch (const CrashInjected&) {
    out.crashed = true;
  }
  auto wal = store.release_wal();
  try {
    auto recovered = PageStore::open(store.release_image(), std::move(wal));
    out.verdict = classify(recovered.get(1), old_data, new_data);
    for (const auto& [id, data] : others) {
      if (recovered.get(id) != data) {
        out.verdict = CrashVerdict::kViolation;
        out.detail = "neighbour " + std::to_string(id) + " changed";
      }
    }
    recovered.audit();
    recovered.checkpoint();
    std::uint64_t live_pages = 0;
    for (const auto id : recovered.list()) {
      live_pages += recovered.footprint_pages(recovered.find(id)->size_bytes);
    }
    const std::uint64_t used = recovered.page_count() - recovered.allocator().free_count();
    out.leaked = used > live_pages ? used - live_pages : 0;
    if (used < live_pages) {
      out.verdict = CrashVerdict::kViolation;
      out.detail = "page accounting below live footprint";
    }
  } catch (const Error& e) {
    out.verdict = CrashVerdict::kViolation;
    out.detail = e.what();
  }
  if (!out.crashed && out.verdict != CrashVerdict::kNew) out.verdict = CrashVerdict::kViolation;
  return out;
}

}  // namespace

CrashOutcome inject_crash(StoreKind kind, const std::string& cut_point, std::uint64_t seed,
                          const fs::path& scratch_dir) {
  if (!cut_point.empty()) {
    const auto points = crash_cut_points(kind);
    check(std::find(points.begin(), points.end(), cut_point) != points.end(), ErrorCode::kConfig,
          "unknown cut point '" + cut_point + "' for the " + std::string(to_string(kind)) + " backend");
  }
  if (kind == StoreKind::kFs) return crash_fs(cut_point, seed, scratch_dir);
  if (kind == StoreKind::kPage) return crash_page(cut_point, seed);
  fail(ErrorCode::kConfig, "the extent backend has no crash cut points");
}

}  // namespace blobbench
