#pragma once

#include <cstdint>
#include <string>

namespace emutriage {

inline constexpr std::string_view kToolVersion = "0.3.0";

/// Stamped into every JSON artifact. Carries no timestamps so equal
/// (version, config hash, seed) triples reproduce byte-identical files.
struct Provenance {
  std::string tool_version{kToolVersion};
  std::string config_hash;
  std::uint64_t seed = 0;
};

}  // namespace emutriage
