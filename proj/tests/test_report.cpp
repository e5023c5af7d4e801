#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "blobbench/bench_harness.hpp"
#include "blobbench/error.hpp"
#include "blobbench/report.hpp"

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
  const fs::path dir = fs::temp_directory_path() / ("blobbench-report-" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kInvariant;
}

// Two small cells, one per simulated backend, run once for the whole suite.
const fs::path& results() {
  static const fs::path dir = [] {
    const auto d = fresh_dir("results");
    const auto matrix = ExperimentMatrix::from_config(KvConfig::parse(
        "cells = ext, pg\ncapacity_bytes = 33554432\nmean_bytes = 524288\nmeasurement_ages = 0, 1, 2\n"
        "read_sample_count = 8\ncell.ext.backend = extent\ncell.pg.backend = page\n"));
    run_experiment(matrix, d);
    return d;
  }();
  return dir;
}

CellData synthetic(const std::string& name, const std::string& backend, const std::string& kind,
                   std::vector<double> frags) {
  CellData c;
  c.name = name;
  c.backend = backend;
  c.size_kind = kind;
  c.mean_object_bytes = 1 << 20;
  for (std::size_t i = 0; i < frags.size(); ++i) {
    c.ages.push_back({2.0 * static_cast<double>(i), frags[i], 40.0});
  }
  return c;
}

}  // namespace

TEST(Report, LoadsCellsInNameOrder) {
  const auto cells = load_results(results());
  ASSERT_EQ(cells.size(), 2u);
  EXPECT_EQ(cells[0].name, "ext");
  EXPECT_EQ(cells[1].backend, "page");
  ASSERT_EQ(cells[0].ages.size(), 3u);
  EXPECT_TRUE(cells[0].ages[0].mean_fragments.has_value());
  EXPECT_EQ(cells[0].phases.front().phase, "bulk_load");
}

TEST(Report, FragFigurePlotsSummaryValues) {
  const auto cells = load_results(results());
  const auto fig = build_figure(cells, "frag-vs-age");
  const Series* page = fig.find("pg (page)");
  ASSERT_NE(page, nullptr);
  ASSERT_EQ(page->points.size(), 3u);
  EXPECT_DOUBLE_EQ(page->points[2].first, 2.0);
  EXPECT_DOUBLE_EQ(page->points[2].second, *cells[1].ages[2].mean_fragments);
}

TEST(Report, SvgIsDeterministic) {
  const auto a = fresh_dir("svg-a");
  const auto b = fresh_dir("svg-b");
  const auto pa = render_figures(results(), {"all"}, a);
  render_figures(results(), {"all"}, b);
  ASSERT_EQ(pa.size(), figure_kinds().size());
  for (const auto& p : pa) {
    const auto text = slurp(p);
    EXPECT_TRUE(text.starts_with("<svg")) << p;
    EXPECT_EQ(text, slurp(b / p.filename())) << p;
  }
}

TEST(Report, EmptyResultsListExpectedFiles) {
  const auto dir = fresh_dir("empty");
  try {
    load_results(dir);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNotFound);
    EXPECT_NE(std::string(e.what()).find("phases.csv"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("summary.json"), std::string::npos);
  }
}

TEST(Report, RefusesOtherSchemaVersions) {
  const auto dir = fresh_dir("schema");
  fs::copy(results() / "ext", dir / "ext");
  auto text = slurp(dir / "ext" / "phases.csv");
  text.replace(0, std::string("#schema,phases,1").size(), "#schema,phases,2");
  std::ofstream(dir / "ext" / "phases.csv", std::ios::trunc) << text;
  EXPECT_EQ(code_of([&] { load_results(dir); }), ErrorCode::kSchema);

  fs::remove_all(dir / "ext");
  fs::copy(results() / "pg", dir / "pg");
  std::ofstream(dir / "pg" / "summary.json", std::ios::trunc) << R"({"schema":"cell_summary/9"})";
  EXPECT_EQ(code_of([&] { load_results(dir); }), ErrorCode::kSchema);
}

TEST(Report, AbsentSeriesAreAnnotated) {
  const std::vector<CellData> cells = {synthetic("a", "extent", "constant", {1.0, 2.0}),
                                       synthetic("f", "fs", "constant", {})};
  const auto overlay = build_figure(cells, "dist-overlay");
  ASSERT_EQ(overlay.series.size(), 1u);
  bool missing_uniform = false;
  bool missing_fs = false;
  for (const auto& n : overlay.notes) {
    missing_uniform |= n.find("no uniform-size cell") != std::string::npos;
    missing_fs |= n.find("f (fs)") != std::string::npos;
  }
  EXPECT_TRUE(missing_uniform);
  EXPECT_TRUE(missing_fs);
  EXPECT_NE(render_svg(overlay).find("no uniform-size cell"), std::string::npos);
}

TEST(Report, FreePoolGroupsByBackend) {
  auto small = synthetic("s", "extent", "constant", {1.0, 3.0});
  auto large = synthetic("l", "extent", "constant", {1.0, 1.5});
  large.ages[0].free_pool = 400.0;
  const auto fig = build_figure({small, large}, "free-pool");
  const Series* s = fig.find("extent");
  ASSERT_NE(s, nullptr);
  ASSERT_EQ(s->points.size(), 2u);
  EXPECT_EQ(s->points[0], (std::pair<double, double>{40.0, 3.0}));
  EXPECT_EQ(s->points[1], (std::pair<double, double>{400.0, 1.5}));
}

TEST(Report, UnknownFigureIsConfigError) {
  EXPECT_EQ(code_of([] { build_figure({}, "pie"); }), ErrorCode::kConfig);
}
