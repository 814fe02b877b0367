#pragma once

#include <stdexcept>
#include <string>

namespace floorplan {

// Failure classes map onto process exit codes in the CLI.
enum class ErrorKind { kUsage = 1, kData = 2, kNumeric = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, std::string code, const std::string& message)
      : std::runtime_error(message), kind_(kind), code_(std::move(code)) {}

  ErrorKind kind() const { return kind_; }
  // Stable machine-readable identifier, e.g. "no_interior".
  const std::string& code() const { return code_; }

 private:
  ErrorKind kind_;
  std::string code_;
};

#define FLOORPLAN_DEFINE_ERROR(Name, Kind, Code)              \
  class Name : public Error {                                 \
   public:                                                    \
    explicit Name(const std::string& message)                 \
        : Error(ErrorKind::Kind, Code, message) {}            \
  };

FLOORPLAN_DEFINE_ERROR(ConfigError, kUsage, "config_error")
FLOORPLAN_DEFINE_ERROR(AllWallError, kData, "all_wall")
FLOORPLAN_DEFINE_ERROR(NoInteriorError, kData, "no_interior")
FLOORPLAN_DEFINE_ERROR(DimensionMismatch, kData, "dimension_mismatch")
FLOORPLAN_DEFINE_ERROR(DimensionError, kData, "dimension_error")
FLOORPLAN_DEFINE_ERROR(InvalidPolygon, kData, "invalid_polygon")
FLOORPLAN_DEFINE_ERROR(UnknownClassId, kData, "unknown_class")
FLOORPLAN_DEFINE_ERROR(ClassOutOfRange, kData, "class_out_of_range")
FLOORPLAN_DEFINE_ERROR(InvalidGraph, kData, "invalid_graph")
FLOORPLAN_DEFINE_ERROR(ParseError, kData, "parse_error")
FLOORPLAN_DEFINE_ERROR(IoError, kData, "io_error")
FLOORPLAN_DEFINE_ERROR(MissingTargetError, kData, "missing_target")
FLOORPLAN_DEFINE_ERROR(NoScoredPixels, kData, "no_scored_pixels")
FLOORPLAN_DEFINE_ERROR(CorruptCheckpointError, kData, "corrupt_checkpoint")
FLOORPLAN_DEFINE_ERROR(EmptyMaskError, kNumeric, "empty_mask")
FLOORPLAN_DEFINE_ERROR(NonFiniteLossError, kNumeric, "non_finite")

#undef FLOORPLAN_DEFINE_ERROR

}  // namespace floorplan
