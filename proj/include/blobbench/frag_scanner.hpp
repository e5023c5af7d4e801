#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "blobbench/store.hpp"
#include "blobbench/volume.hpp"

namespace blobbench {

// 24-byte marker written at every 1KB payload offset (little-endian):
//   "FRAGMRK1" u64 tag u32 sequence u32 crc32 of the preceding 20 bytes
// The tag identifies one stored version of an object (see make_tag), so
// stale copies of earlier versions never match a live object.
inline constexpr std::size_t kMarkerBytes = 24;
inline constexpr std::uint64_t kDefaultGapAllowance = 512;

struct Marker {
  std::uint64_t tag = 0;
  std::uint32_t sequence = 0;
};

void encode_marker(const Marker& marker, std::span<std::byte, kMarkerBytes> out);
// Magic and CRC must both match.
std::optional<Marker> decode_marker(std::span<const std::byte> raw);

// Tag of the write_serial-th stored version of object id.
constexpr std::uint64_t make_tag(ObjectId id, std::uint64_t write_serial) {
  return (write_serial << 40) | (id & ((1ULL << 40) - 1));
}

// Payload bytes [offset, offset + out.size()) of a marked payload. Filler
// bytes all have the high bit set, so they never contain the marker magic.
void fill_payload(std::uint64_t tag, std::uint64_t seed, std::uint64_t offset,
                  std::span<std::byte> out);
// size_bytes must be a positive multiple of 1024 (kConfig otherwise).
Bytes make_payload(std::uint64_t tag, std::uint64_t size_bytes, std::uint64_t seed);

// Streams make_payload(tag, size, seed) without materializing it.
class MarkedPayloadSource final : public PayloadSource {
 public:
  MarkedPayloadSource(std::uint64_t tag, std::uint64_t size_bytes, std::uint64_t seed);
  std::size_t read(std::span<std::byte> out) override;

 private:
  std::uint64_t tag_;
  std::uint64_t size_;
  std::uint64_t seed_;
  std::uint64_t pos_ = 0;
};

// The one piece of metadata the scanner may use: which versions are live.
struct LiveObject {
  ObjectId object_id = 0;
  std::uint64_t tag = 0;
  std::uint64_t expected_markers = 0;
};

// CSV: schema line, then `object_id,marker_tag,expected_markers`.
void write_live_list(const std::filesystem::path& path, std::span<const LiveObject> live);
std::vector<LiveObject> read_live_list(const std::filesystem::path& path);

struct ScanOptions {
  std::uint64_t gap_allowance = kDefaultGapAllowance;
  // Needed for the tail probe, which checks that the last bytes of an object
  // follow its last marker; objects whose final page holds no marker would
  // otherwise hide one break.
  std::optional<std::uint64_t> payload_seed;
  std::uint64_t read_chunk_bytes = 8 << 20;
};

struct ObjectFragments {
  ObjectId object_id = 0;
  std::uint64_t expected_markers = 0;
  std::uint64_t recovered_markers = 0;
  std::uint32_t fragments = 0;
};

struct FragReport {
  std::vector<ObjectFragments> objects;  // ascending object_id
  std::string age_label;
  std::uint64_t markers_seen = 0;        // valid markers, live or not
  std::uint64_t duplicate_markers = 0;
  std::vector<std::string> warnings;

  double mean_fragments() const;
  // Fragments per 64KB of payload, over all objects.
  double fragments_per_64k() const;
  std::uint32_t max_fragments() const;
  std::map<ObjectId, std::uint32_t> fragment_map() const;

  // `#schema,frag_report,1` then `object_id,expected_markers,recovered_markers,fragments`.
  std::string to_csv() const;
  static FragReport from_csv(const std::string& text);
  std::string summary_json() const;
};

// Byte-granular scan of [offset, offset+length) of a raw device.
FragReport scan_region(const Backing& device, std::uint64_t offset, std::uint64_t length,
                       std::span<const LiveObject> live, const ScanOptions& options = {});
// Scans the data region of an image.
FragReport scan_image(const VolumeImage& image, std::span<const LiveObject> live,
                      const ScanOptions& options = {});

struct FragDiffEntry {
  ObjectId object_id = 0;
  std::int64_t scanner_minus_truth = 0;
};

struct FragDiff {
  std::vector<FragDiffEntry> entries;
  // Ground truth unavailable (real filesystem): nothing was compared.
  bool informational = false;
};

// Per-object signed differences; differing object sets raise kSchema.
FragDiff validate_against_ntfs_style_report(const FragReport& report,
                                            const std::map<ObjectId, std::uint32_t>& ground_truth);

}  // namespace blobbench
