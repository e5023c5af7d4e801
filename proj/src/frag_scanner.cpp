#include "blobbench/frag_scanner.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "blobbench/error.hpp"
#include "blobbench/kv_config.hpp"
#include "blobbench/rng.hpp"
#include "json.hpp"

namespace blobbench {
namespace {

constexpr char kMarkerMagic[8] = {'F', 'R', 'A', 'G', 'M', 'R', 'K', '1'};
constexpr std::uint64_t kHighBits = 0x8080808080808080ULL;
constexpr std::uint64_t kTailBytes = 8;

std::uint64_t filler_word(std::uint64_t key, std::uint64_t word_index) {
  return mix64(key + word_index) | kHighBits;
}

std::uint64_t filler_key(std::uint64_t tag, std::uint64_t seed) { return mix64(seed ^ mix64(tag)); }

struct Hit {
  std::uint32_t sequence;
  std::uint64_t offset;
};

std::vector<std::string> read_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

void expect_schema(const std::vector<std::string>& lines, const std::string& name,
                   const std::string& columns) {
  if (lines.size() < 2 || lines[0] != "#schema," + name + ",1" || lines[1] != columns) {
    fail(ErrorCode::kSchema, "expected '#schema," + name + ",1' followed by '" + columns + "'");
  }
}

}  // namespace

void encode_marker(const Marker& marker, std::span<std::byte, kMarkerBytes> out) {
  std::memcpy(out.data(), kMarkerMagic, 8);
  store_u64le(out.data() + 8, marker.tag);
  store_u32le(out.data() + 16, marker.sequence);
  store_u32le(out.data() + 20, crc32(std::span<const std::byte>(out.data(), 20)));
}

std::optional<Marker> decode_marker(std::span<const std::byte> raw) {
  if (raw.size() < kMarkerBytes || std::memcmp(raw.data(), kMarkerMagic, 8) != 0) return std::nullopt;
  if (load_u32le(raw.data() + 20) != crc32(raw.first(20))) return std::nullopt;
  return Marker{load_u64le(raw.data() + 8), load_u32le(raw.data() + 16)};
}

void fill_payload(std::uint64_t tag, std::uint64_t seed, std::uint64_t offset,
                  std::span<std::byte> out) {
  const std::uint64_t key = filler_key(tag, seed);
  std::array<std::byte, kMarkerBytes> marker{};
  std::uint64_t cached_seq = UINT64_MAX;
  std::size_t i = 0;
  while (i < out.size()) {
    const std::uint64_t pos = offset + i;
    const std::uint64_t within = pos % kMarkerInterval;
    if (within < kMarkerBytes) {
      const std::uint64_t seq = pos / kMarkerInterval;
      if (seq != cached_seq) {
        encode_marker({tag, static_cast<std::uint32_t>(seq)}, marker);
        cached_seq = seq;
      }
      const std::size_t n = std::min<std::size_t>(kMarkerBytes - within, out.size() - i);
      std::memcpy(out.data() + i, marker.data() + within, n);
      i += n;
      continue;
    }
    if (pos % 8 == 0) {
      // Whole words up to the next marker.
      const std::uint64_t stop = std::min<std::uint64_t>(kMarkerInterval - within, out.size() - i);
      const std::uint64_t words = stop / 8;
      for (std::uint64_t w = 0; w < words; ++w) {
        store_u64le(out.data() + i + w * 8, filler_word(key, pos / 8 + w));
      }
      i += words * 8;
      if (words > 0) continue;
    }
    const std::uint64_t word = filler_word(key, pos / 8);
    out[i] = static_cast<std::byte>((word >> (8 * (pos % 8))) & 0xff);
    ++i;
  }
}

Bytes make_payload(std::uint64_t tag, std::uint64_t size_bytes, std::uint64_t seed) {
  check(size_bytes > 0 && size_bytes % kMarkerInterval == 0, ErrorCode::kConfig,
        "payload size must be a positive multiple of 1024, got " + std::to_string(size_bytes));
  Bytes out(size_bytes);
  fill_payload(tag, seed, 0, out);
  return out;
}

MarkedPayloadSource::MarkedPayloadSource(std::uint64_t tag, std::uint64_t size_bytes,
                                         std::uint64_t seed)
    : tag_(tag), size_(size_bytes), seed_(seed) {
  check(size_bytes > 0 && size_bytes % kMarkerInterval == 0, ErrorCode::kConfig,
        "payload size must be a positive multiple of 1024, got " + std::to_string(size_bytes));
}

std::size_t MarkedPayloadSource::read(std::span<std::byte> out) {
  const std::size_t n = static_cast<std::size_t>(std::min<std::uint64_t>(out.size(), size_ - pos_));
  fill_payload(tag_, seed_, pos_, out.first(n));
  pos_ += n;
  return n;
}

void write_live_list(const std::filesystem::path& path, std::span<const LiveObject> live) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
  out << "#schema,live,1\nobject_id,marker_tag,expected_markers\n";
  for (const auto& obj : live) {
    out << obj.object_id << ',' << obj.tag << ',' << obj.expected_markers << '\n';
  }
  if (!out) fail(ErrorCode::kIo, "cannot write " + path.string());
}

std::vector<LiveObject> read_live_list(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, "cannot read live list " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const auto lines = read_lines(buf.str());
  expect_schema(lines, "live", "object_id,marker_tag,expected_markers");
  std::vector<LiveObject> live;
  for (std::size_t i = 2; i < lines.size(); ++i) {
    const auto fields = split_list(lines[i]);
    check(fields.size() == 3, ErrorCode::kSchema, "live list line " + std::to_string(i + 1) +
                                                      " does not have 3 fields");
    live.push_back({parse_u64(fields[0], "object_id"), parse_u64(fields[1], "marker_tag"),
                    parse_u64(fields[2], "expected_markers")});
  }
  return live;
}

double FragReport::mean_fragments() const {
  if (objects.empty()) return 0.0;
  double total = 0;
  for (const auto& o : objects) total += o.fragments;
  return total / static_cast<double>(objects.size());
}

double FragReport::fragments_per_64k() const {
  double fragments = 0;
  double units = 0;
  for (const auto& o : objects) {
    fragments += o.fragments;
    units += static_cast<double>(o.expected_markers * kMarkerInterval) / 65536.0;
  }
  return units > 0 ? fragments / units : 0.0;
}

std::uint32_t FragReport::max_fragments() const {
  std::uint32_t m = 0;
  for (const auto& o : objects) m = std::max(m, o.fragments);
  return m;
}

std::map<ObjectId, std::uint32_t> FragReport::fragment_map() const {
  std::map<ObjectId, std::uint32_t> out;
  for (const auto& o : objects) out.emplace(o.object_id, o.fragments);
  return out;
}

std::string FragReport::to_csv() const {
  std::ostringstream out;
  out << "#schema,frag_report,1\nobject_id,expected_markers,recovered_markers,fragments\n";
  for (const auto& o : objects) {
    out << o.object_id << ',' << o.expected_markers << ',' << o.recovered_markers << ','
        << o.fragments << '\n';
  }
  return out.str();
}

FragReport FragReport::from_csv(const std::string& text) {
  const auto lines = read_lines(text);
  expect_schema(lines, "frag_report", "object_id,expected_markers,recovered_markers,fragments");
  FragReport report;
  for (std::size_t i = 2; i < lines.size(); ++i) {
    const auto fields = split_list(lines[i]);
    check(fields.size() == 4, ErrorCode::kSchema,
          "frag report line " + std::to_string(i + 1) + " does not have 4 fields");
    report.objects.push_back({parse_u64(fields[0], "object_id"),
                              parse_u64(fields[1], "expected_markers"),
                              parse_u64(fields[2], "recovered_markers"),
                              static_cast<std::uint32_t>(parse_u64(fields[3], "fragments"))});
  }
  return report;
}

std::string FragReport::summary_json() const {
  nlohmann::ordered_json j;
  j["schema"] = "frag_summary/1";
  j["storage_age"] = age_label;
  j["objects"] = objects.size();
  j["mean_fragments_per_object"] = mean_fragments();
  j["fragments_per_64k"] = fragments_per_64k();
  j["max_fragments"] = max_fragments();
  j["markers_seen"] = markers_seen;
  j["duplicate_markers"] = duplicate_markers;
  j["warnings"] = warnings;
  return j.dump(2) + "\n";
}

FragReport scan_region(const Backing& device, std::uint64_t offset, std::uint64_t length,
                       std::span<const LiveObject> live, const ScanOptions& options) {
  check(options.read_chunk_bytes >= 4096, ErrorCode::kConfig, "scan chunk too small");
  check(offset <= device.size() && length <= device.size() - offset, ErrorCode::kConfig,
        "scan range exceeds the device");
  std::unordered_map<std::uint64_t, std::size_t> by_tag;
  by_tag.reserve(live.size() * 2);
  for (std::size_t i = 0; i < live.size(); ++i) {
    if (!by_tag.emplace(live[i].tag, i).second) {
      fail(ErrorCode::kConfig, "live list repeats marker tag " + std::to_string(live[i].tag));
    }
  }
  std::vector<std::vector<Hit>> hits(live.size());
  FragReport report;

  // Chunks overlap by one marker width so no marker is cut in half.
  Bytes buf(options.read_chunk_bytes + kMarkerBytes - 1);
  for (std::uint64_t start = 0; start < length; start += options.read_chunk_bytes) {
    const std::size_t n =
        static_cast<std::size_t>(std::min<std::uint64_t>(buf.size(), length - start));
    device.read(offset + start, std::span(buf).first(n));
    const std::size_t limit = std::min<std::size_t>(n, options.read_chunk_bytes);
    const std::byte* base = buf.data();
    std::size_t i = 0;
    while (i < limit) {
      const void* f = std::memchr(base + i, 'F', limit - i);
      if (f == nullptr) break;
      i = static_cast<std::size_t>(static_cast<const std::byte*>(f) - base);
      if (n - i >= kMarkerBytes) {
        if (auto m = decode_marker(std::span(base + i, kMarkerBytes))) {
          ++report.markers_seen;
          if (auto it = by_tag.find(m->tag); it != by_tag.end()) {
            hits[it->second].push_back({m->sequence, start + i});
          }
          i += kMarkerBytes;
          continue;
        }
      }
      ++i;
    }
  }

  std::vector<std::size_t> order(live.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return live[a].object_id < live[b].object_id; });
  const std::uint64_t allowance = options.gap_allowance;
  for (const std::size_t idx : order) {
    const LiveObject& obj = live[idx];
    auto& found = hits[idx];
    // Offsets arrive ascending; stable sort keeps the lowest copy first.
    std::stable_sort(found.begin(), found.end(),
                     [](const Hit& a, const Hit& b) { return a.sequence < b.sequence; });
    std::vector<Hit> unique;
    unique.reserve(found.size());
    for (const auto& h : found) {
      if (!unique.empty() && unique.back().sequence == h.sequence) {
        ++report.duplicate_markers;
        continue;
      }
      unique.push_back(h);
    }
    ObjectFragments out;
    out.object_id = obj.object_id;
    out.expected_markers = obj.expected_markers;
    out.recovered_markers = unique.size();
    if (!unique.empty()) {
      out.fragments = 1;
      for (std::size_t k = 1; k < unique.size(); ++k) {
        const std::uint64_t d = unique[k].sequence - unique[k - 1].sequence;
        const std::uint64_t lo = d * kMarkerInterval;
        const std::uint64_t hi = lo + d * allowance;
        const bool forward = unique[k].offset > unique[k - 1].offset;
        const std::uint64_t delta = unique[k].offset - unique[k - 1].offset;
        if (!forward || delta < lo || delta > hi) ++out.fragments;
      }
      const Hit& last = unique.back();
      if (options.payload_seed && last.sequence + 1 == obj.expected_markers) {
        std::array<std::byte, kTailBytes> tail{};
        const std::uint64_t tail_offset = obj.expected_markers * kMarkerInterval - kTailBytes;
        fill_payload(obj.tag, *options.payload_seed, tail_offset, tail);
        const std::uint64_t from = last.offset + kMarkerInterval - kTailBytes;
        bool found_tail = false;
        if (from < length) {
          Bytes window(static_cast<std::size_t>(
              std::min<std::uint64_t>(allowance + kTailBytes, length - from)));
          device.read(offset + from, window);
          for (std::size_t h = 0; h + kTailBytes <= window.size(); ++h) {
            if (std::memcmp(window.data() + h, tail.data(), kTailBytes) == 0) {
              found_tail = true;
              break;
            }
          }
        }
        if (!found_tail) ++out.fragments;
      }
    }
    if (out.recovered_markers != out.expected_markers) {
      report.warnings.push_back("object " + std::to_string(obj.object_id) + ": recovered " +
                                std::to_string(out.recovered_markers) + " of " +
                                std::to_string(out.expected_markers) + " markers");
    }
    report.objects.push_back(out);
  }
  if (report.duplicate_markers > 0) {
    report.warnings.push_back(std::to_string(report.duplicate_markers) +
                              " duplicate markers ignored (first copy by offset kept)");
  }
  if (report.markers_seen == 0) {
    report.warnings.push_back("no markers found; the image may be unformatted or empty");
  }
  return report;
}

FragReport scan_image(const VolumeImage& image, std::span<const LiveObject> live,
                      const ScanOptions& options) {
  return scan_region(image.backing(), image.reserved_bytes(), image.data_bytes(), live, options);
}

FragDiff validate_against_ntfs_style_report(const FragReport& report,
                                            const std::map<ObjectId, std::uint32_t>& ground_truth) {
  FragDiff diff;
  if (ground_truth.empty()) {
    diff.informational = true;
    return diff;
  }
  const auto scanned = report.fragment_map();
  if (scanned.size() != ground_truth.size()) {
    fail(ErrorCode::kSchema, "scanner covers " + std::to_string(scanned.size()) +
                                 " objects, ground truth " + std::to_string(ground_truth.size()));
  }
  for (const auto& [id, truth] : ground_truth) {
    auto it = scanned.find(id);
    if (it == scanned.end()) {
      fail(ErrorCode::kSchema, "object " + std::to_string(id) + " missing from scanner report");
    }
    if (it->second != truth) {
      diff.entries.push_back(
          {id, static_cast<std::int64_t>(it->second) - static_cast<std::int64_t>(truth)});
    }
  }
  return diff;
}

}  // namespace blobbench
