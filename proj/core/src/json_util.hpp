#pragma once

#include <json.hpp>

#include <filesystem>
#include <string>

#include "emutriage/error.hpp"
#include "emutriage/io.hpp"
#include "emutriage/provenance.hpp"

namespace emutriage::detail {

using Json = nlohmann::ordered_json;

inline Json to_json(const Provenance& p) {
  Json j;
  j["tool_version"] = p.tool_version;
  j["config_hash"] = p.config_hash;
  j["seed"] = p.seed;
  return j;
}

inline Provenance provenance_from_json(const Json& j) {
  Provenance p;
  p.tool_version = j.value("tool_version", std::string{});
  p.config_hash = j.value("config_hash", std::string{});
  p.seed = j.value("seed", std::uint64_t{0});
  return p;
}

inline Json read_json_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::MalformedJson, path.string() + ": " + e.what());
  }
}

inline void write_json_file(const std::filesystem::path& path, const Json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

}  // namespace emutriage::detail
