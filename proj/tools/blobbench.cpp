// blobbench: command-line front end for the storage-aging benchmark.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "blobbench/bench_harness.hpp"
#include "blobbench/error.hpp"
#include "blobbench/extent_store.hpp"
#include "blobbench/frag_scanner.hpp"
#include "blobbench/fs_store.hpp"
#include "blobbench/page_store.hpp"
#include "blobbench/report.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace blobbench;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct Options {
  std::string config;
  std::string image;
  std::optional<std::uint64_t> seed;
  std::string backend;
  std::string out;
  std::string live;
  std::string in;
  std::vector<std::string> figures;
  std::string cut;
  std::uint64_t seeds = 250;
};

// --out, then $BLOBBENCH_RESULTS, then ./results.
fs::path results_dir(const Options& o) {
  if (!o.out.empty()) return o.out;
  if (const char* env = std::getenv("BLOBBENCH_RESULTS"); env != nullptr && *env != '\0') return env;
  return "results";
}

void print_error(const std::string& code, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = {{"code", code}, {"message", message}};
  std::cerr << j.dump() << '\n';
}

std::string wal_path_for(const fs::path& image) { return image.string() + ".wal"; }

int cmd_init(const Options& o) {
  const StoreKind kind = parse_store_kind(o.backend);
  const fs::path path = o.image;
  if (kind == StoreKind::kFs) {
    check(!fs::exists(path) || fs::is_empty(path), ErrorCode::kConfig,
          "fs store root must be empty or absent: " + path.string());
    fs::create_directories(path);
    FsStore store(FsStoreConfig{path});
    std::cout << nlohmann::ordered_json{{"initialized", path.string()}, {"backend", "fs"}}.dump() << '\n';
    return 0;
  }
  check(!fs::exists(path), ErrorCode::kConfig, "refusing to overwrite existing image " + path.string());
  KvConfig keys = o.config.empty() ? KvConfig{} : KvConfig::load(o.config);
  const KvConfig loaded = keys;
  for (const auto& [k, v] : loaded.values()) {
    if (k == "cells" || k.starts_with("cell.")) keys.erase(k);
  }
  keys.set("backend", o.backend);
  const CellConfig cell = cell_from_config("init", keys);
  Geometry g = cell.geometry;
  g.capacity_bytes = cell.spec.volume_capacity_bytes;
  if (kind == StoreKind::kExtent) {
    auto store = ExtentStore::create(VolumeImage::create_file(path, g, BackendKind::kExtent), cell.extent);
    store.sync();
  } else {
    auto store = PageStore::create(VolumeImage::create_file(path, g, BackendKind::kPage),
                                   FileBacking::open_or_create(wal_path_for(path)), cell.page);
    store.sync();
  }
  nlohmann::ordered_json j;
  j["initialized"] = path.string();
  j["backend"] = o.backend;
  j["capacity_bytes"] = g.capacity_bytes;
  std::cout << j.dump() << '\n';
  return 0;
}

int cmd_bench(const Options& o) {
  KvConfig config = KvConfig::load(o.config);
  // Command-line overrides apply to every cell.
  const KvConfig loaded = config;
  for (const auto& [k, v] : loaded.values()) {
    const bool seed_key = k.ends_with(".seed") && k.starts_with("cell.");
    const bool backend_key = k.ends_with(".backend") && k.starts_with("cell.");
    if ((o.seed && seed_key) || (!o.backend.empty() && backend_key)) config.erase(k);
  }
  if (o.seed) config.set("seed", std::to_string(*o.seed));
  if (!o.backend.empty()) config.set("backend", o.backend);
  const auto matrix = ExperimentMatrix::from_config(config);
  const fs::path out = results_dir(o);
  fs::create_directories(out);
  std::vector<std::string> failed;
  for (const auto& cell : matrix.cells) {
    const CellResult r = run_cell(cell, out);
    nlohmann::ordered_json j;
    j["cell"] = r.name;
    j["backend"] = std::string(to_string(r.backend));
    j["status"] = r.ok ? "ok" : "failed";
    nlohmann::ordered_json frags = nlohmann::ordered_json::object();
    for (const auto& s : r.snapshots) {
      if (s.scan || !s.ground_truth.empty()) frags[s.age.to_string()] = s.mean_fragments();
    }
    j["mean_fragments"] = frags;
    if (!r.ok) j["error"] = r.error;
    for (const auto& a : r.advisories) std::cerr << "advisory: " << r.name << ": " << a << '\n';
    std::cout << j.dump() << '\n';
    if (!r.ok) failed.push_back(r.name + ": " + r.error);
  }
  if (!failed.empty()) {
    std::string message = "cells failed:";
    for (const auto& f : failed) message += " [" + f + "]";
    print_error("cell_failed", message);
    return kExitRuntime;
  }
  return 0;
}

int cmd_scan(const Options& o) {
  const VolumeImage image = VolumeImage::open_file(o.image);
  const auto live = read_live_list(o.live);
  ScanOptions options;
  options.payload_seed = o.seed;
  FragReport report = scan_image(image, live, options);
  if (o.out.empty()) {
    std::cout << report.to_csv();
    return 0;
  }
  fs::create_directories(o.out);
  const fs::path path = fs::path(o.out) / "frag_report.csv";
  std::ofstream(path, std::ios::binary | std::ios::trunc) << report.to_csv();
  std::cout << report.summary_json() << '\n';
  return 0;
}

int cmd_defrag(const Options& o) {
  const fs::path path = o.image;
  VolumeImage image = VolumeImage::open_file(path);
  const BackendKind on_disk = image.backend();
  if (!o.backend.empty()) {
    const StoreKind wanted = parse_store_kind(o.backend);
    const bool match = (wanted == StoreKind::kExtent && on_disk == BackendKind::kExtent) ||
                       (wanted == StoreKind::kPage && on_disk == BackendKind::kPage);
    check(match, ErrorCode::kConfig,
          "image is formatted for " + std::string(to_string(on_disk)) + ", not " + o.backend);
  }
  nlohmann::ordered_json j;
  if (on_disk == BackendKind::kExtent) {
    auto store = ExtentStore::open(std::move(image));
    const auto r = store.defragment();
    store.sync();
    j["backend"] = "extent";
    j["relocations"] = r.relocations;
    j["unfixable"] = r.unfixable;
    j["mean_fragments_before"] = r.mean_fragments_before;
    j["mean_fragments_after"] = r.mean_fragments_after;
  } else if (on_disk == BackendKind::kPage) {
    const Geometry g = image.geometry();
    auto store = PageStore::open(std::move(image), FileBacking::open_or_create(wal_path_for(path)));
    fs::path dir = o.out.empty() ? path.parent_path() : fs::path(o.out);
    if (dir.empty()) dir = ".";
    fs::create_directories(dir);
    const fs::path target_path = dir / (path.stem().string() + ".defrag.img");
    check(!fs::exists(target_path), ErrorCode::kConfig, "defrag target exists: " + target_path.string());
    auto target = PageStore::create(VolumeImage::create_file(target_path, g, BackendKind::kPage),
                                    FileBacking::open_or_create(wal_path_for(target_path)));
    try {
      const auto r = store.defragment_by_copy(target, 64 * 1024);
      target.sync();
      store.sync();
      j["backend"] = "page";
      j["target"] = target_path.string();
      j["copied"] = r.copied;
      j["mean_fragments_before"] = r.mean_fragments_before;
      j["mean_fragments_after"] = r.mean_fragments_after;
    } catch (const Error&) {
      fs::remove(target_path);
      fs::remove(wal_path_for(target_path));
      throw;
    }
  } else {
    fail(ErrorCode::kConfig, "image has no backend to defragment");
  }
  std::cout << j.dump() << '\n';
  return 0;
}

int cmd_report(const Options& o) {
  const fs::path in = o.in.empty() ? results_dir(Options{}) : fs::path(o.in);
  const fs::path out = o.out.empty() ? in / "figures" : fs::path(o.out);
  const auto figures = o.figures.empty() ? std::vector<std::string>{"all"} : o.figures;
  for (const auto& p : render_figures(in, figures, out)) std::cout << p.string() << '\n';
  return 0;
}

int cmd_crashtest(const Options& o) {
  std::vector<StoreKind> kinds;
  if (o.backend.empty()) {
    kinds = {StoreKind::kFs, StoreKind::kPage};
  } else {
    kinds = {parse_store_kind(o.backend)};
  }
  const std::uint64_t base = o.seed.value_or(1);
  const fs::path out = results_dir(o);
  fs::create_directories(out);
  std::ostringstream csv;
  csv << "#schema,crash_matrix,1\nbackend,cut_point,runs,old,new,violations,leaked\n";
  std::uint64_t violations = 0;
  std::uint64_t leaked = 0;
  std::string first_violation;
  for (const auto kind : kinds) {
    auto points = crash_cut_points(kind);
    if (!o.cut.empty()) points = {o.cut};
    for (const auto& point : points) {
      std::uint64_t counts[3] = {0, 0, 0};
      std::uint64_t leaks = 0;
      for (std::uint64_t s = 0; s < o.seeds; ++s) {
        const auto r = inject_crash(kind, point, base + s, out);
        ++counts[static_cast<int>(r.verdict)];
        leaks += r.leaked;
        if (r.verdict == CrashVerdict::kViolation && first_violation.empty()) {
          first_violation = std::string(to_string(kind)) + "/" + point + " seed " +
                            std::to_string(base + s) + ": " + r.detail;
        }
      }
      csv << to_string(kind) << ',' << point << ',' << o.seeds << ',' << counts[0] << ',' << counts[1] << ','
          << counts[2] << ',' << leaks << '\n';
      violations += counts[2];
      leaked += leaks;
    }
  }
  std::ofstream(out / "crash_matrix.csv", std::ios::binary | std::ios::trunc) << csv.str();
  std::cout << csv.str();
  if (violations > 0 || leaked > 0) {
    print_error("crash_violation", std::to_string(violations) + " violations, " + std::to_string(leaked) +
                                       " leaked; first: " + first_violation);
    return kExitRuntime;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Storage-aging benchmark for large-object stores"};
  app.require_subcommand(1);
  Options o;
  const std::vector<std::string> backends = {"fs", "extent", "page"};

  auto* init = app.add_subcommand("init", "Format an empty volume image (or fs store directory)");
  init->add_option("--image", o.image, "Image file, or directory for --backend fs")->required();
  init->add_option("--backend", o.backend, "Backend")->required()->check(CLI::IsMember(backends));
  init->add_option("--config", o.config, "Config with capacity_bytes and geometry keys")->check(CLI::ExistingFile);

  auto* bench = app.add_subcommand("bench", "Run an experiment matrix");
  bench->add_option("--config", o.config, "Experiment config")->required()->check(CLI::ExistingFile);
  bench->add_option("--seed", o.seed, "Override the seed of every cell");
  bench->add_option("--backend", o.backend, "Override the backend of every cell")->check(CLI::IsMember(backends));
  bench->add_option("--out", o.out, "Results directory (default $BLOBBENCH_RESULTS or ./results)");

  auto* scan = app.add_subcommand("scan", "Count fragments of live objects on a raw image");
  scan->add_option("--image", o.image, "Volume image")->required()->check(CLI::ExistingFile);
  scan->add_option("--live", o.live, "Live list CSV (live_age<k>.csv)")->required()->check(CLI::ExistingFile);
  scan->add_option("--seed", o.seed, "Payload seed; enables the tail probe");
  scan->add_option("--out", o.out, "Write frag_report.csv here instead of stdout");

  auto* defrag = app.add_subcommand("defrag", "Defragment a synced image");
  defrag->add_option("--image", o.image, "Volume image")->required()->check(CLI::ExistingFile);
  defrag->add_option("--backend", o.backend, "Expected backend")->check(CLI::IsMember({"extent", "page"}));
  defrag->add_option("--out", o.out, "Directory for the page backend's copy target");

  auto* report = app.add_subcommand("report", "Render SVG figures from a results directory");
  report->add_option("--in", o.in, "Results directory (default $BLOBBENCH_RESULTS or ./results)");
  report->add_option("--fig", o.figures, "Figure kind, repeatable; 'all' for every kind")
      ->check(CLI::IsMember({"all", "frag-vs-age", "read-vs-age", "write-vs-age", "read-vs-size",
                             "dist-overlay", "free-pool"}));
  report->add_option("--out", o.out, "Figure directory (default <in>/figures)");

  auto* crash = app.add_subcommand("crashtest", "Run the crash-injection matrix");
  crash->add_option("--backend", o.backend, "fs or page (default both)")->check(CLI::IsMember({"fs", "page"}));
  crash->add_option("--seed", o.seed, "First seed (default 1)");
  crash->add_option("--seeds", o.seeds, "Seeds per cut point")->check(CLI::PositiveNumber);
  crash->add_option("--cut", o.cut, "Single cut point");
  crash->add_option("--out", o.out, "Directory for crash_matrix.csv and fs scratch space");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return kExitUsage;
  }

  try {
    if (*init) return cmd_init(o);
    if (*bench) return cmd_bench(o);
    if (*scan) return cmd_scan(o);
    if (*defrag) return cmd_defrag(o);
    if (*report) return cmd_report(o);
    if (*crash) return cmd_crashtest(o);
  } catch (const Error& e) {
    print_error(std::string(to_string(e.code())), e.what());
    return kExitRuntime;
  } catch (const std::exception& e) {
    print_error("io", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
