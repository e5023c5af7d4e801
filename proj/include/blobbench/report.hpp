#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace blobbench {

// One phases.csv row.
struct PhaseRow {
  std::string phase;
  double age_from = 0.0;
  double age_to = 0.0;
  std::uint64_t ops = 0;
  std::uint64_t bytes_moved = 0;
  std::optional<double> throughput_mb_s;  // modeled; empty for the fs backend
  std::optional<double> wall_throughput_mb_s;
};

struct AgePoint {
  double age = 0.0;
  std::optional<double> mean_fragments;
  double free_pool = 0.0;
};

// Everything the figures need from one results/<cell>/ directory.
struct CellData {
  std::string name;
  std::string backend;
  std::string size_kind;
  std::uint64_t mean_object_bytes = 0;
  std::uint64_t capacity_bytes = 0;
  bool ok = true;
  std::string error;
  std::vector<PhaseRow> phases;
  std::vector<AgePoint> ages;
};

// Reads every cell directory under results_dir, sorted by name. Schema
// versions must match (kSchema); a directory without any cell is an error
// naming the files expected.
std::vector<CellData> load_results(const std::filesystem::path& results_dir);

struct Series {
  std::string label;
  std::vector<std::pair<double, double>> points;  // ascending x
};

struct Figure {
  std::string kind;
  std::string title;
  std::string x_label;
  std::string y_label;
  std::vector<Series> series;
  std::vector<std::string> notes;  // absent series and other caveats

  const Series* find(std::string_view label) const;
};

// frag-vs-age, read-vs-age, write-vs-age, read-vs-size, dist-overlay, free-pool.
std::vector<std::string> figure_kinds();
Figure build_figure(const std::vector<CellData>& cells, const std::string& kind);
std::string render_svg(const Figure& figure);

// Writes <out_dir>/<kind>.svg for each kind ("all" expands); returns the paths.
std::vector<std::filesystem::path> render_figures(const std::filesystem::path& results_dir,
                                                  const std::vector<std::string>& kinds,
                                                  const std::filesystem::path& out_dir);

}  // namespace blobbench
