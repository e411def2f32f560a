#include "emutriage/unify.hpp"

#include <algorithm>
#include <cctype>
#include <unordered_set>

#include "emutriage/error.hpp"
#include "emutriage/io.hpp"

namespace emutriage {

std::string_view to_string(TokenKind kind) noexcept {
  switch (kind) {
    case TokenKind::api: return "api";
    case TokenKind::api_arg: return "api_arg";
    case TokenKind::mangled: return "mangled";
    case TokenKind::imphash: return "imphash";
  }
  return "api";
}

std::optional<TokenKind> parse_token_kind(std::string_view text) noexcept {
  if (text == "api") return TokenKind::api;
  if (text == "api_arg") return TokenKind::api_arg;
  if (text == "mangled") return TokenKind::mangled;
  if (text == "imphash") return TokenKind::imphash;
  return std::nullopt;
}

namespace {

bool lower_or_digit(char c) {
  return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9');
}

bool all_digits(std::string_view text) {
  return !text.empty() && std::all_of(text.begin(), text.end(), [](char c) { return c >= '0' && c <= '9'; });
}

std::string to_lower(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

// A/W then Ex until nothing changes. Ex stripping leaves a lowercase/digit
// tail, so A/W can never re-fire after it; only repeated Ex can.
std::string strip_suffixes(std::string_view name) {
  std::string current = strip_ansi_unicode(name);
  for (;;) {
    std::string next = strip_ex(current);
    if (next == current) return current;
    current = std::move(next);
  }
}

constexpr std::string_view kMangledPrefix = "mangled::";

}  // namespace

// ---------------------------------------------------------------------------

AliasTable AliasTable::from_pairs(std::vector<std::pair<std::string, std::string>> pairs) {
  AliasTable table;
  for (const auto& [alias, canonical] : pairs) {
    if (alias.empty() || canonical.empty()) throw Error(ErrorCode::ConfigError, "empty alias entry");
    if (!table.map_.emplace(alias, canonical).second) {
      throw Error(ErrorCode::ConfigError, "alias listed twice: " + alias);
    }
  }
  for (const auto& [alias, canonical] : pairs) {
    if (table.map_.count(canonical) != 0) {
      throw Error(ErrorCode::ConfigError, "alias table not flattened: " + alias + " -> " + canonical);
    }
    if (strip_suffixes(canonical) != canonical || mangle_signature(canonical)) {
      throw Error(ErrorCode::ConfigError, "canonical name is not a unification fixpoint: " + canonical);
    }
  }
  table.pairs_ = std::move(pairs);
  return table;
}

AliasTable AliasTable::from_csv(std::string_view csv_text) {
  auto rows = parse_csv(csv_text);
  if (rows.empty() || rows.front() != std::vector<std::string>{"alias", "canonical"}) {
    throw Error(ErrorCode::ConfigError, "alias table header must be alias,canonical");
  }
  std::vector<std::pair<std::string, std::string>> pairs;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() != 2) {
      throw Error(ErrorCode::ConfigError, "alias table line " + std::to_string(i + 1));
    }
    pairs.emplace_back(std::move(rows[i][0]), std::move(rows[i][1]));
  }
  return from_pairs(std::move(pairs));
}

AliasTable AliasTable::load(const std::filesystem::path& path) {
  if (!std::filesystem::is_regular_file(path)) {
    throw Error(ErrorCode::ConfigError, "alias table not found: " + path.string());
  }
  return from_csv(read_text_file(path));
}

const AliasTable& AliasTable::builtin() {
  static const AliasTable table = from_csv(builtin_alias_csv());
  return table;
}

const std::string* AliasTable::find(std::string_view name) const {
  auto it = map_.find(std::string(name));
  return it == map_.end() ? nullptr : &it->second;
}

// ---------------------------------------------------------------------------

std::string strip_ansi_unicode(std::string_view name) {
  const std::size_t n = name.size();
  if (n > 3 && (name[n - 1] == 'A' || name[n - 1] == 'W') && lower_or_digit(name[n - 2])) {
    return std::string(name.substr(0, n - 1));
  }
  return std::string(name);
}

std::string strip_ex(std::string_view name) {
  const std::size_t n = name.size();
  if (n > 4 && name.ends_with("Ex") && lower_or_digit(name[n - 3])) {
    return std::string(name.substr(0, n - 2));
  }
  return std::string(name);
}

std::string merge_crt(std::string_view name, const AliasTable& aliases) {
  if (const auto* canonical = aliases.find(name)) return *canonical;
  return std::string(name);
}

std::optional<FeatureToken> mangle_signature(std::string_view name) {
  if (name.size() < 2) return std::nullopt;
  auto token = [](std::string_view root) {
    return FeatureToken{std::string(kMangledPrefix) + std::string(root), TokenKind::mangled};
  };

  if (name.front() == '?') {
    const auto at = name.find('@', 1);
    if (at == std::string_view::npos || at == 1) return std::nullopt;
    return token(name.substr(1, at - 1));
  }
  if (name.front() == '_' || name.front() == '@') {
    const auto at = name.find('@', 1);
    if (at == std::string_view::npos || at == 1) return std::nullopt;
    if (!all_digits(name.substr(at + 1))) return std::nullopt;
    return token(name.substr(1, at - 1));
  }
  return std::nullopt;
}

FeatureToken unify_name(std::string_view name, const AliasTable& aliases) {
  std::string current(name);
  for (;;) {
    if (auto mangled = mangle_signature(current)) return *mangled;
    std::string stripped = strip_suffixes(current);
    if (stripped == current) break;
    current = std::move(stripped);
  }
  return FeatureToken{merge_crt(current, aliases), TokenKind::api};
}

std::vector<FeatureToken> arg_tokens(const ApiCallRecord& call, std::string_view canonical_api,
                                     const AliasTable& aliases) {
  std::vector<FeatureToken> tokens;
  auto emit = [&](std::string value) {
    if (value.empty()) return;
    tokens.push_back(FeatureToken{std::string(canonical_api) + "->" + value, TokenKind::api_arg});
  };

  if (canonical_api == "LoadLibrary" || canonical_api == "GetModuleHandle") {
    // GetModuleHandleEx takes dwFlags first and the module name second.
    const std::size_t index = strip_ansi_unicode(call.api_name) == "GetModuleHandleEx" ? 1 : 0;
    if (index >= call.args.size()) return tokens;
    std::string_view path = call.args[index];
    if (auto slash = path.find_last_of("\\/"); slash != std::string_view::npos) path.remove_prefix(slash + 1);
    emit(to_lower(path));
  } else if (canonical_api == "GetProcAddress") {
    if (call.args.size() < 2 || call.args[1].empty()) return tokens;
    emit(to_lower(unify_name(call.args[1], aliases).text));
  }
  return tokens;
}

std::vector<std::pair<FeatureToken, std::uint64_t>> unify_call(const ApiCallRecord& call,
                                                              const AliasTable& aliases) {
  FeatureToken api = unify_name(call.api_name, aliases);
  std::vector<FeatureToken> args;
  if (api.kind == TokenKind::api) args = arg_tokens(call, api.text, aliases);

  std::vector<std::pair<FeatureToken, std::uint64_t>> out;
  out.reserve(1 + args.size());
  out.emplace_back(std::move(api), call.count);
  for (auto& arg : args) out.emplace_back(std::move(arg), call.count);
  return out;
}

// ---------------------------------------------------------------------------

void TokenCounts::add(const FeatureToken& token, std::uint64_t count) {
  auto [it, inserted] = index_.emplace(token.text, items_.size());
  if (inserted) {
    items_.emplace_back(token, count);
  } else {
    items_[it->second].second += count;
  }
}

std::uint64_t TokenCounts::count(std::string_view text) const {
  auto it = index_.find(std::string(text));
  return it == index_.end() ? 0 : items_[it->second].second;
}

bool TokenCounts::operator==(const TokenCounts& other) const {
  if (size() != other.size()) return false;
  for (const auto& [token, n] : items_) {
    if (other.count(token.text) != n) return false;
  }
  return true;
}

TokenCounts featurize_report(const EmulationReport& report, const AliasTable& aliases) {
  TokenCounts counts;
  for (const auto& call : report.calls) {
    for (const auto& [token, n] : unify_call(call, aliases)) counts.add(token, n);
  }
  return counts;
}

}  // namespace emutriage
