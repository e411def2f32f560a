#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "emutriage/ingest.hpp"

namespace emutriage {

enum class TokenKind { api, api_arg, mangled, imphash };

std::string_view to_string(TokenKind kind) noexcept;
std::optional<TokenKind> parse_token_kind(std::string_view text) noexcept;

/// A canonical feature name. Token identity is its text; the kind prefixes
/// (`mangled::`, `->`, `imphash::`) keep texts of different kinds disjoint.
struct FeatureToken {
  std::string text;
  TokenKind kind = TokenKind::api;

  bool operator==(const FeatureToken&) const = default;
};

/// CRT routine aliases (`_stricmp` -> `stricmp`). Always flattened: no
/// canonical name is itself an alias key.
class AliasTable {
 public:
  AliasTable() = default;

  /// Throws Error{ConfigError} when the pairs are not flattened or a key is
  /// mapped twice.
  static AliasTable from_pairs(std::vector<std::pair<std::string, std::string>> pairs);
  /// Two-column CSV `alias,canonical` with that header line.
  static AliasTable from_csv(std::string_view csv_text);
  static AliasTable load(const std::filesystem::path& path);
  /// The table shipped in data/crt_aliases.csv, compiled in.
  static const AliasTable& builtin();

  const std::string* find(std::string_view name) const;
  std::size_t size() const { return map_.size(); }
  const std::vector<std::pair<std::string, std::string>>& pairs() const { return pairs_; }

 private:
  std::vector<std::pair<std::string, std::string>> pairs_;
  std::unordered_map<std::string, std::string> map_;
};

std::string_view builtin_alias_csv() noexcept;

// Individual unification rules.
std::string strip_ansi_unicode(std::string_view name);
std::string strip_ex(std::string_view name);
std::string merge_crt(std::string_view name, const AliasTable& aliases);
std::optional<FeatureToken> mangle_signature(std::string_view name);

/// Full chain for one API name: mangled names become `mangled::<root>`,
/// anything else goes through A/W strip, Ex strip (to a fixpoint) and the
/// CRT merge.
FeatureToken unify_name(std::string_view name, const AliasTable& aliases);

/// Argument tokens for LoadLibrary / GetModuleHandle / GetProcAddress.
std::vector<FeatureToken> arg_tokens(const ApiCallRecord& call, std::string_view canonical_api,
                                     const AliasTable& aliases);

std::vector<std::pair<FeatureToken, std::uint64_t>> unify_call(const ApiCallRecord& call,
                                                              const AliasTable& aliases);

/// Token counts with first-occurrence order preserved, so vocabularies built
/// from them are deterministic. Equality compares the count mapping only.
class TokenCounts {
 public:
  void add(const FeatureToken& token, std::uint64_t count);

  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  std::uint64_t count(std::string_view text) const;
  const std::vector<std::pair<FeatureToken, std::uint64_t>>& items() const { return items_; }

  bool operator==(const TokenCounts& other) const;

 private:
  std::vector<std::pair<FeatureToken, std::uint64_t>> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

TokenCounts featurize_report(const EmulationReport& report, const AliasTable& aliases);

}  // namespace emutriage
