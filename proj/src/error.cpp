#include "sevgrade/error.hpp"

namespace sevgrade {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::parse: return "parse";
    case ErrorKind::leakage: return "leakage";
    case ErrorKind::capacity: return "capacity";
    case ErrorKind::config: return "config";
    case ErrorKind::unresolvable_label: return "unresolvable-label";
    case ErrorKind::undefined_metric: return "undefined-metric";
    case ErrorKind::geometry: return "geometry";
    case ErrorKind::numeric: return "numeric";
    case ErrorKind::missing_stage: return "missing-stage";
    case ErrorKind::provider: return "provider";
    case ErrorKind::io: return "io";
  }
  return "unknown";
}

}  // namespace sevgrade
