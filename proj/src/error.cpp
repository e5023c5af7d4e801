#include "blobbench/error.hpp"

namespace blobbench {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kVolumeFull: return "volume_full";
    case ErrorCode::kNotFound: return "not_found";
    case ErrorCode::kInvariant: return "invariant";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kCorrupt: return "corrupt";
    case ErrorCode::kRefused: return "refused";
    case ErrorCode::kSchema: return "schema";
  }
  return "unknown";
}

}  // namespace blobbench
