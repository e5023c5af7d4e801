#include <gtest/gtest.h>

#include <filesystem>

#include "blobbench/fs_store.hpp"
#include "test_support.hpp"

using namespace blobbench;
using namespace blobbench::testing;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("blobbench-fs-" + std::to_string(::getpid()) + "-" + std::to_string(counter_++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  static inline int counter_ = 0;
  fs::path path_;
};

std::uint64_t count_files(const fs::path& dir, bool temp) {
  std::uint64_t n = 0;
  for (const auto& e : fs::directory_iterator(dir)) {
    n += FsStore::is_temp_name(e.path().filename().string()) == temp;
  }
  return n;
}

// Fails every write after the first `budget` bytes with volume-full.
class ShortDiskIo final : public FsIo {
 public:
  explicit ShortDiskIo(std::uint64_t budget) : budget_(budget) {}
  int create(const fs::path& p) override { return real_.create(p); }
  void write(int h, std::span<const std::byte> d) override {
    if (d.size() > budget_) fail(ErrorCode::kVolumeFull, "disk full");
    budget_ -= d.size();
    real_.write(h, d);
  }
  void flush(int h) override { real_.flush(h); }
  void close(int h) override { real_.close(h); }
  void rename(const fs::path& a, const fs::path& b) override { real_.rename(a, b); }
  void flush_directory(const fs::path& d) override { real_.flush_directory(d); }
  void remove(const fs::path& p) override { real_.remove(p); }

 private:
  PosixFsIo real_;
  std::uint64_t budget_;
};

FsStoreConfig config_for(const fs::path& root) {
  FsStoreConfig c;
  c.root_directory = root;
  c.fsync_policy = FsyncPolicy::kNoFlush;
  c.flush_directory = false;
  return c;
}

}  // namespace

TEST(FsStore, LayoutAndRoundTrip) {
  TempDir dir;
  FsStore store(config_for(dir.path()));
  const Bytes data = random_bytes(200 * 1024, 1);
  SpanSource src(data);
  store.put(0xabc, src, 64 * 1024);
  EXPECT_TRUE(fs::exists(dir.path() / "0000000000000abc.blob"));
  EXPECT_EQ(store.get(0xabc), data);
  EXPECT_EQ(store.stats().append_requests, 4u);
  FsStore reopened(config_for(dir.path()));
  EXPECT_EQ(reopened.list(), std::vector<ObjectId>{0xabc});
  store.remove(0xabc);
  EXPECT_THROW(store.get(0xabc), Error);
}

TEST(FsStore, TempNaming) {
  EXPECT_EQ(FsStore::temp_path("/r", 1, 3).filename().string(), "0000000000000001.blob.tmp-3");
  EXPECT_TRUE(FsStore::is_temp_name("0000000000000001.blob.tmp-3"));
  EXPECT_FALSE(FsStore::is_temp_name("0000000000000001.blob"));
}

TEST(FsStore, CrashMatrixOldOrNew) {
  TempDir dir;
  const Bytes old_data = random_bytes(150 * 1024, 2);
  const Bytes new_data = random_bytes(190 * 1024, 3);
  for (const auto point : FsStore::cut_points()) {
    for (std::uint64_t skip = 0; skip < 3; ++skip) {
      {
        FsStore store(config_for(dir.path()));
        SpanSource src(old_data);
        store.put(7, src, 64 * 1024);
      }
      FsStore store(config_for(dir.path()));
      CrashInjector injector;
      injector.arm(std::string(point), skip);
      store.set_crash_injector(&injector);
      bool crashed = false;
      try {
        SpanSource src(new_data);
        store.put(7, src, 64 * 1024);
      } catch (const CrashInjected&) {
        crashed = true;
      }
      FsStore::recover_sweep(dir.path());
      FsStore recovered(config_for(dir.path()));
      const Bytes got = recovered.get(7);
      EXPECT_TRUE(got == old_data || got == new_data) << point;
      if (!crashed) EXPECT_EQ(got, new_data);
      if (crashed && point != "after-rename") EXPECT_EQ(got, old_data) << point;
      EXPECT_EQ(count_files(dir.path(), true), 0u);
    }
  }
}

TEST(FsStore, RecoverSweep) {
  TempDir dir;
  EXPECT_EQ(FsStore::recover_sweep(dir.path()), 0u);
  FsStore store(config_for(dir.path()));
  const Bytes data = random_bytes(100 * 1024, 4);
  SpanSource a(data);
  store.put(1, a, 64 * 1024);
  CrashInjector injector;
  injector.arm("after-write");
  store.set_crash_injector(&injector);
  SpanSource b(data);
  EXPECT_THROW(store.put(1, b, 64 * 1024), CrashInjected);
  EXPECT_EQ(count_files(dir.path(), false), 1u);
  EXPECT_EQ(FsStore::recover_sweep(dir.path()), 1u);
  EXPECT_EQ(count_files(dir.path(), false), 1u);
  EXPECT_EQ(FsStore::recover_sweep(dir.path()), 0u);
  EXPECT_THROW(FsStore::recover_sweep(dir.path() / "missing"), Error);
}

TEST(FsStore, VolumeFullLeavesPriorIntactAndNoTemp) {
  TempDir dir;
  const Bytes first = random_bytes(64 * 1024, 5);
  auto io = std::make_shared<ShortDiskIo>(100 * 1024);
  FsStore store(config_for(dir.path()), io);
  SpanSource a(first);
  store.put(1, a, 64 * 1024);
  const Bytes big = random_bytes(256 * 1024, 6);
  SpanSource b(big);
  try {
    store.put(1, b, 64 * 1024);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kVolumeFull);
  }
  EXPECT_EQ(store.get(1), first);
  EXPECT_EQ(count_files(dir.path(), true), 0u);
}
