#include "blobbench/store.hpp"

#include <cstring>

#include "blobbench/error.hpp"

namespace blobbench {

std::uint32_t count_fragments(std::span<const Extent> extents) {
  if (extents.empty()) return 0;
  std::uint32_t runs = 1;
  for (std::size_t i = 1; i < extents.size(); ++i) {
    if (extents[i].offset != extents[i - 1].end()) ++runs;
  }
  return runs;
}

std::uint32_t count_fragments(std::span<const std::uint64_t> pages) {
  if (pages.empty()) return 0;
  std::uint32_t runs = 1;
  for (std::size_t i = 1; i < pages.size(); ++i) {
    if (pages[i] != pages[i - 1] + 1) ++runs;
  }
  return runs;
}

std::uint32_t count_fragments(const BlobRecord& record) {
  return std::visit([](const auto& p) { return count_fragments(std::span(p)); },
                    record.placement);
}

std::size_t SpanSource::read(std::span<std::byte> out) {
  const std::size_t n = std::min(out.size(), data_.size() - pos_);
  if (n > 0) std::memcpy(out.data(), data_.data() + pos_, n);
  pos_ += n;
  return n;
}

std::string_view to_string(StoreKind kind) {
  switch (kind) {
    case StoreKind::kFs: return "fs";
    case StoreKind::kExtent: return "extent";
    case StoreKind::kPage: return "page";
  }
  return "?";
}

StoreKind parse_store_kind(const std::string& text) {
  if (text == "fs") return StoreKind::kFs;
  if (text == "extent") return StoreKind::kExtent;
  if (text == "page") return StoreKind::kPage;
  fail(ErrorCode::kConfig, "backend must be fs, extent or page, got '" + text + "'");
}

std::size_t read_full(PayloadSource& payload, std::span<std::byte> out) {
  std::size_t got = 0;
  while (got < out.size()) {
    const std::size_t n = payload.read(out.subspan(got));
    if (n == 0) break;
    got += n;
  }
  return got;
}

}  // namespace blobbench
