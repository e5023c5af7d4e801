#include "blobbench/report.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "blobbench/error.hpp"
#include "blobbench/kv_config.hpp"
#include "blobbench/workload.hpp"
#include "json.hpp"

namespace blobbench {
namespace fs = std::filesystem;
namespace {

constexpr std::string_view kPhasesSchema = "#schema,phases,1";
constexpr std::string_view kPhasesHeader =
    "phase,age_from,age_to,ops,bytes_moved,seeks,modeled_seconds,throughput_mb_s,"
    "mean_fragments,fragments_per_64k,free_pool";
constexpr std::string_view kTimingsSchema = "#schema,timings,1";
constexpr std::string_view kSummarySchema = "cell_summary/1";
constexpr std::string_view kExpectedFiles =
    "<cell>/summary.json, <cell>/phases.csv, <cell>/timings.csv and <cell>/frag_age<k>.csv";

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kNotFound, "missing results file " + path.string());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

std::vector<std::string> fields_of(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::optional<double> optional_double(const std::string& text, const std::string& what) {
  if (text.empty()) return std::nullopt;
  return parse_double(text, what);
}

double age_value(const std::string& text) { return Age::parse(text).value(); }

std::vector<PhaseRow> read_phases(const fs::path& cell_dir) {
  const fs::path path = cell_dir / "phases.csv";
  const auto lines = lines_of(slurp(path));
  if (lines.empty() || lines[0] != kPhasesSchema) {
    fail(ErrorCode::kSchema, path.string() + ": expected schema line '" + std::string(kPhasesSchema) + "'");
  }
  if (lines.size() < 2 || lines[1] != kPhasesHeader) {
    fail(ErrorCode::kSchema, path.string() + ": unexpected column header");
  }
  std::vector<PhaseRow> rows;
  for (std::size_t i = 2; i < lines.size(); ++i) {
    const auto f = fields_of(lines[i]);
    check(f.size() == 11, ErrorCode::kSchema, path.string() + ": row " + std::to_string(i + 1) + " has " +
                                                  std::to_string(f.size()) + " fields, expected 11");
    PhaseRow row;
    row.phase = f[0];
    row.age_from = age_value(f[1]);
    row.age_to = age_value(f[2]);
    row.ops = parse_u64(f[3], "ops");
    row.bytes_moved = parse_u64(f[4], "bytes_moved");
    row.throughput_mb_s = optional_double(f[7], "throughput_mb_s");
    rows.push_back(row);
  }
  const fs::path timings = cell_dir / "timings.csv";
  if (fs::exists(timings)) {
    const auto t = lines_of(slurp(timings));
    if (t.empty() || t[0] != kTimingsSchema) {
      fail(ErrorCode::kSchema, timings.string() + ": expected schema line '" + std::string(kTimingsSchema) + "'");
    }
    for (std::size_t i = 2; i < t.size() && i - 2 < rows.size(); ++i) {
      const auto f = fields_of(t[i]);
      if (f.size() == 5) rows[i - 2].wall_throughput_mb_s = optional_double(f[4], "wall_throughput_mb_s");
    }
  }
  return rows;
}

CellData read_cell(const fs::path& cell_dir) {
  const fs::path summary_path = cell_dir / "summary.json";
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(slurp(summary_path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kSchema, summary_path.string() + ": " + e.what());
  }
  if (j.value("schema", std::string()) != kSummarySchema) {
    fail(ErrorCode::kSchema, summary_path.string() + ": expected schema '" + std::string(kSummarySchema) + "'");
  }
  CellData cell;
  try {
    cell.name = j.at("cell").get<std::string>();
    cell.backend = j.at("backend").get<std::string>();
    cell.size_kind = j.at("size_kind").get<std::string>();
    cell.mean_object_bytes = j.at("mean_object_bytes").get<std::uint64_t>();
    cell.capacity_bytes = j.at("capacity_bytes").get<std::uint64_t>();
    cell.ok = j.at("status").get<std::string>() == "ok";
    cell.error = j.value("error", std::string());
    for (const auto& a : j.at("ages")) {
      AgePoint p;
      p.age = age_value(a.at("age").get<std::string>());
      p.free_pool = a.at("free_pool").get<double>();
      if (a.contains("mean_fragments")) p.mean_fragments = a["mean_fragments"].get<double>();
      cell.ages.push_back(p);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kSchema, summary_path.string() + ": " + e.what());
  }
  cell.phases = read_phases(cell_dir);
  return cell;
}

std::string cell_label(const CellData& cell) { return cell.name + " (" + cell.backend + ")"; }

void sort_points(Series& s) { std::sort(s.points.begin(), s.points.end()); }

void note_failures(const std::vector<CellData>& cells, Figure& fig) {
  for (const auto& c : cells) {
    if (!c.ok) fig.notes.push_back("cell " + c.name + " failed: " + c.error);
  }
}

Figure frag_vs_age(const std::vector<CellData>& cells, bool overlay) {
  Figure fig;
  fig.kind = overlay ? "dist-overlay" : "frag-vs-age";
  fig.title = overlay ? "Constant vs uniform object sizes" : "Fragmentation vs storage age";
  fig.x_label = "storage age";
  fig.y_label = "mean fragments per object";
  bool constant = false;
  bool uniform = false;
  for (const auto& c : cells) {
    Series s;
    s.label = overlay ? c.name + " (" + c.backend + ", " + c.size_kind + ")" : cell_label(c);
    for (const auto& a : c.ages) {
      if (a.mean_fragments) s.points.emplace_back(a.age, *a.mean_fragments);
    }
    if (s.points.empty()) {
      fig.notes.push_back("no fragmentation data for " + cell_label(c));
      continue;
    }
    (c.size_kind == "uniform" ? uniform : constant) = true;
    sort_points(s);
    fig.series.push_back(std::move(s));
  }
  if (overlay && !(constant && uniform)) {
    fig.notes.push_back(std::string("missing series: no ") + (constant ? "uniform" : "constant") +
                        "-size cell with fragmentation data");
  }
  note_failures(cells, fig);
  return fig;
}

Figure throughput_vs_age(const std::vector<CellData>& cells, bool reads) {
  Figure fig;
  fig.kind = reads ? "read-vs-age" : "write-vs-age";
  fig.title = reads ? "Read throughput vs storage age" : "Write throughput vs storage age";
  fig.x_label = "storage age";
  fig.y_label = "MB/s (modeled disk time)";
  for (const auto& c : cells) {
    Series s{cell_label(c), {}};
    bool wall_only = false;
    for (const auto& row : c.phases) {
      const bool wanted = reads ? row.phase == "read" : row.phase == "bulk_load" || row.phase == "churn";
      if (!wanted) continue;
      if (row.throughput_mb_s) {
        s.points.emplace_back(row.age_to, *row.throughput_mb_s);
      } else {
        wall_only = true;
      }
    }
    if (s.points.empty()) {
      fig.notes.push_back(wall_only ? "missing series: " + cell_label(c) + " has wall-clock timings only (timings.csv)"
                                    : std::string("missing series: no ") + (reads ? "read" : "write") +
                                          " phases for " + cell_label(c));
      continue;
    }
    sort_points(s);
    fig.series.push_back(std::move(s));
  }
  note_failures(cells, fig);
  return fig;
}

Figure read_vs_size(const std::vector<CellData>& cells) {
  Figure fig;
  fig.kind = "read-vs-size";
  fig.title = "Read throughput vs object size at the first measured age";
  fig.x_label = "mean object size (MB)";
  fig.y_label = "MB/s";
  std::map<std::string, Series> by_backend;
  for (const auto& c : cells) {
    const auto row = std::find_if(c.phases.begin(), c.phases.end(),
                                  [](const PhaseRow& r) { return r.phase == "read"; });
    if (row == c.phases.end()) {
      fig.notes.push_back("no read phase for " + cell_label(c));
      continue;
    }
    if (!row->throughput_mb_s) {
      fig.notes.push_back("missing series: " + cell_label(c) + " has wall-clock timings only (timings.csv)");
      continue;
    }
    by_backend[c.backend].points.emplace_back(static_cast<double>(c.mean_object_bytes) / (1024.0 * 1024.0),
                                              *row->throughput_mb_s);
  }
  for (auto& [label, s] : by_backend) {
    s.label = label;
    sort_points(s);
    fig.series.push_back(std::move(s));
  }
  note_failures(cells, fig);
  return fig;
}

Figure free_pool(const std::vector<CellData>& cells) {
  Figure fig;
  fig.kind = "free-pool";
  fig.title = "Fragmentation at the last age vs free pool";
  fig.x_label = "free pool after bulk load (objects)";
  fig.y_label = "mean fragments per object at the last age";
  std::map<std::string, Series> by_backend;
  for (const auto& c : cells) {
    if (c.ages.empty() || !c.ages.back().mean_fragments) {
      fig.notes.push_back("no fragmentation data for " + cell_label(c));
      continue;
    }
    by_backend[c.backend].points.emplace_back(c.ages.front().free_pool, *c.ages.back().mean_fragments);
  }
  for (auto& [label, s] : by_backend) {
    s.label = label;
    sort_points(s);
    fig.series.push_back(std::move(s));
  }
  note_failures(cells, fig);
  return fig;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string coord(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(const std::string& text) {
  std::string out;
  for (const char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

double nice_step(double span) {
  const double raw = span / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double f = raw / mag;
  return (f < 1.5 ? 1.0 : f < 3.5 ? 2.0 : f < 7.5 ? 5.0 : 10.0) * mag;
}

struct Axis {
  double lo = 0.0;
  double hi = 1.0;
  double step = 0.2;
};

Axis make_axis(double lo, double hi, bool from_zero) {
  if (from_zero) lo = std::min(lo, 0.0);
  if (hi - lo < 1e-12) {
    hi = lo + 1.0;
  }
  Axis a;
  a.step = nice_step(hi - lo);
  a.lo = std::floor(lo / a.step) * a.step;
  a.hi = std::ceil(hi / a.step) * a.step;
  return a;
}

constexpr std::array<const char*, 8> kPalette = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                                 "#ff7f0e", "#17becf", "#8c564b", "#e377c2"};

}  // namespace

const Series* Figure::find(std::string_view label) const {
  for (const auto& s : series) {
    if (s.label == label) return &s;
  }
  return nullptr;
}

std::vector<CellData> load_results(const fs::path& results_dir) {
  if (!fs::is_directory(results_dir)) {
    fail(ErrorCode::kNotFound, "results directory " + results_dir.string() +
                                   " does not exist; expected " + std::string(kExpectedFiles));
  }
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(results_dir)) {
    if (entry.is_directory() &&
        (fs::exists(entry.path() / "summary.json") || fs::exists(entry.path() / "phases.csv"))) {
      dirs.push_back(entry.path());
    }
  }
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) {
    fail(ErrorCode::kNotFound,
         "no results under " + results_dir.string() + "; expected " + std::string(kExpectedFiles));
  }
  std::vector<CellData> cells;
  for (const auto& dir : dirs) cells.push_back(read_cell(dir));
  return cells;
}

std::vector<std::string> figure_kinds() {
  return {"frag-vs-age", "read-vs-age", "write-vs-age", "read-vs-size", "dist-overlay", "free-pool"};
}

Figure build_figure(const std::vector<CellData>& cells, const std::string& kind) {
  if (kind == "frag-vs-age") return frag_vs_age(cells, false);
  if (kind == "dist-overlay") return frag_vs_age(cells, true);
  if (kind == "read-vs-age") return throughput_vs_age(cells, true);
  if (kind == "write-vs-age") return throughput_vs_age(cells, false);
  if (kind == "read-vs-size") return read_vs_size(cells);
  if (kind == "free-pool") return free_pool(cells);
  std::string known;
  for (const auto& k : figure_kinds()) known += (known.empty() ? "" : ", ") + k;
  fail(ErrorCode::kConfig, "unknown figure '" + kind + "'; expected one of " + known);
}

std::string render_svg(const Figure& fig) {
  constexpr double kWidth = 760, kPlotLeft = 70, kPlotTop = 50, kPlotWidth = 440, kPlotHeight = 300;
  const double height = kPlotTop + kPlotHeight + 70 + 18.0 * static_cast<double>(fig.notes.size());
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << kWidth / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">"
      << escape(fig.title) << "</text>\n";

  double xlo = INFINITY, xhi = -INFINITY, ylo = INFINITY, yhi = -INFINITY;
  for (const auto& s : fig.series) {
    for (const auto& [x, y] : s.points) {
      xlo = std::min(xlo, x);
      xhi = std::max(xhi, x);
      ylo = std::min(ylo, y);
      yhi = std::max(yhi, y);
    }
  }
  const bool empty = !(xlo <= xhi);
  const Axis xa = empty ? Axis{} : make_axis(xlo, xhi, true);
  const Axis ya = empty ? Axis{} : make_axis(ylo, yhi, true);
  auto px = [&](double x) { return kPlotLeft + (x - xa.lo) / (xa.hi - xa.lo) * kPlotWidth; };
  auto py = [&](double y) { return kPlotTop + kPlotHeight - (y - ya.lo) / (ya.hi - ya.lo) * kPlotHeight; };

  svg << "<rect x=\"" << kPlotLeft << "\" y=\"" << kPlotTop << "\" width=\"" << kPlotWidth
      << "\" height=\"" << kPlotHeight << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (double t = xa.lo; t <= xa.hi + xa.step / 2; t += xa.step) {
    svg << "<line x1=\"" << coord(px(t)) << "\" y1=\"" << kPlotTop + kPlotHeight << "\" x2=\""
        << coord(px(t)) << "\" y2=\"" << kPlotTop + kPlotHeight + 5 << "\" stroke=\"black\"/>"
        << "<text x=\"" << coord(px(t)) << "\" y=\"" << kPlotTop + kPlotHeight + 19
        << "\" text-anchor=\"middle\">" << num(t) << "</text>\n";
  }
  for (double t = ya.lo; t <= ya.hi + ya.step / 2; t += ya.step) {
    svg << "<line x1=\"" << kPlotLeft - 5 << "\" y1=\"" << coord(py(t)) << "\" x2=\"" << kPlotLeft
        << "\" y2=\"" << coord(py(t)) << "\" stroke=\"black\"/>"
        << "<text x=\"" << kPlotLeft - 8 << "\" y=\"" << coord(py(t) + 4) << "\" text-anchor=\"end\">"
        << num(t) << "</text>\n";
  }
  svg << "<text x=\"" << kPlotLeft + kPlotWidth / 2 << "\" y=\"" << kPlotTop + kPlotHeight + 40
      << "\" text-anchor=\"middle\">" << escape(fig.x_label) << "</text>\n";
  svg << "<text x=\"16\" y=\"" << kPlotTop + kPlotHeight / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << kPlotTop + kPlotHeight / 2 << ")\">" << escape(fig.y_label) << "</text>\n";
  if (empty) {
    svg << "<text x=\"" << kPlotLeft + kPlotWidth / 2 << "\" y=\"" << kPlotTop + kPlotHeight / 2
        << "\" text-anchor=\"middle\">no data</text>\n";
  }

  for (std::size_t i = 0; i < fig.series.size(); ++i) {
    const auto& s = fig.series[i];
    const char* color = kPalette[i % kPalette.size()];
    svg << "<g data-series=\"" << escape(s.label) << "\">\n<polyline fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"2\" points=\"";
    for (std::size_t k = 0; k < s.points.size(); ++k) {
      svg << (k ? " " : "") << coord(px(s.points[k].first)) << ',' << coord(py(s.points[k].second));
    }
    svg << "\"/>\n";
    for (const auto& [x, y] : s.points) {
      svg << "<circle cx=\"" << coord(px(x)) << "\" cy=\"" << coord(py(y)) << "\" r=\"3\" fill=\"" << color
          << "\"><title>" << num(x) << ", " << num(y) << "</title></circle>\n";
    }
    svg << "</g>\n";
    const double ly = kPlotTop + 10 + 18.0 * static_cast<double>(i);
    const double lx = kPlotLeft + kPlotWidth + 20;
    svg << "<line x1=\"" << lx << "\" y1=\"" << ly << "\" x2=\"" << lx + 20 << "\" y2=\"" << ly
        << "\" stroke=\"" << color << "\" stroke-width=\"2\"/><text x=\"" << lx + 26 << "\" y=\""
        << ly + 4 << "\">" << escape(s.label) << "</text>\n";
  }
  for (std::size_t i = 0; i < fig.notes.size(); ++i) {
    svg << "<text x=\"" << kPlotLeft << "\" y=\"" << kPlotTop + kPlotHeight + 64 + 18.0 * static_cast<double>(i)
        << "\" fill=\"#a00\">" << escape(fig.notes[i]) << "</text>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

std::vector<fs::path> render_figures(const fs::path& results_dir, const std::vector<std::string>& kinds,
                                     const fs::path& out_dir) {
  std::vector<std::string> wanted;
  for (const auto& k : kinds) {
    if (k == "all") {
      for (const auto& all : figure_kinds()) wanted.push_back(all);
    } else {
      wanted.push_back(k);
    }
  }
  // Reject unknown kinds before touching the disk.
  for (const auto& k : wanted) build_figure({}, k);
  const auto cells = load_results(results_dir);
  fs::create_directories(out_dir);
  std::vector<fs::path> written;
  for (const auto& k : wanted) {
    const fs::path path = out_dir / (k + ".svg");
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << render_svg(build_figure(cells, k));
    if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
    written.push_back(path);
  }
  return written;
}

}  // namespace blobbench
