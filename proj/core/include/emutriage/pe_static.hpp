#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace emutriage {

struct ImportOrdinal {
  std::uint32_t value = 0;
  bool operator==(const ImportOrdinal&) const = default;
};

struct ImportEntry {
  std::string dll_name;  // as stored in the descriptor
  std::variant<std::string, ImportOrdinal> symbol;

  bool operator==(const ImportEntry&) const = default;
};

/// Entries in descriptor order, then thunk order within each descriptor.
struct ImportTable {
  std::vector<ImportEntry> entries;
  bool operator==(const ImportTable&) const = default;
};

/// Walks the classic import directory of a PE32 or PE32+ image. Delay-load
/// imports are not visited. Reads are bounds-checked against `pe_bytes`.
/// Throws Error{NotPe | TruncatedHeader | MalformedImportDirectory}.
ImportTable parse_imports(std::span<const std::uint8_t> pe_bytes);

/// The `dll.func` rendering hashed by imphash: dll lowercased with a trailing
/// .dll/.sys/.ocx removed, function lowercased, ordinals as `ord<N>`.
std::string imphash_element(const ImportEntry& entry);

/// Comma-joined elements, before hashing.
std::string imphash_input(const ImportTable& table);

/// 32-char lowercase MD5 of imphash_input(table).
std::string imphash(const ImportTable& table);

enum class PeFlavor { pe32, pe32_plus };

/// Emits a minimal, loader-shaped image whose only section carries the
/// import directory for `imports` (consecutive entries with the same DLL
/// share a descriptor). `payload` is appended to the section so otherwise
/// identical images can be told apart by hash.
std::vector<std::uint8_t> build_pe(const std::vector<ImportEntry>& imports, PeFlavor flavor,
                                   std::span<const std::uint8_t> payload = {});

}  // namespace emutriage
