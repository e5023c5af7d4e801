#pragma once

#include <cstdint>
#include <exception>
#include <string>
#include <string_view>

namespace blobbench {

// Thrown at an armed cut point. Everything already handed to the backing
// device stays there; in-memory state of the interrupted store is discarded.
class CrashInjected : public std::exception {
 public:
  explicit CrashInjected(std::string point) : point_(std::move(point)) {}
  const char* what() const noexcept override { return point_.c_str(); }
  const std::string& point() const { return point_; }

 private:
  std::string point_;
};

// Named interposition sites. A store calls reach() at each site; an armed
// injector throws on the (skip+1)-th arrival at its point.
class CrashInjector {
 public:
  void arm(std::string point, std::uint64_t skip = 0) {
    point_ = std::move(point);
    skip_ = skip;
    armed_ = true;
  }
  void disarm() { armed_ = false; }
  bool armed() const { return armed_; }

  // True exactly once, when the armed point is reached for the chosen time.
  bool fires(std::string_view point) {
    if (!armed_ || point != point_) return false;
    if (skip_ > 0) {
      --skip_;
      return false;
    }
    armed_ = false;
    return true;
  }

  void reach(std::string_view point) {
    if (fires(point)) throw CrashInjected(std::string(point));
  }

 private:
  std::string point_;
  std::uint64_t skip_ = 0;
  bool armed_ = false;
};

}  // namespace blobbench
