#include "emutriage/pe_static.hpp"

#include <algorithm>
#include <cctype>
#include <optional>

#include "emutriage/digest.hpp"
#include "emutriage/error.hpp"

namespace emutriage {
namespace {

constexpr std::uint16_t kMagicPe32 = 0x10b;
constexpr std::uint16_t kMagicPe32Plus = 0x20b;
constexpr std::size_t kDescriptorSize = 20;
constexpr std::size_t kSectionHeaderSize = 40;
constexpr std::size_t kMaxThunksPerDll = 1u << 16;

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t size() const { return bytes_.size(); }

  bool fits(std::size_t offset, std::size_t length) const {
    return offset <= bytes_.size() && length <= bytes_.size() - offset;
  }

  template <typename T>
  std::optional<T> read(std::size_t offset) const {
    if (!fits(offset, sizeof(T))) return std::nullopt;
    T value = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      value |= static_cast<T>(static_cast<T>(bytes_[offset + i]) << (8 * i));
    }
    return value;
  }

  std::optional<std::string> c_string(std::size_t offset) const {
    if (offset >= bytes_.size()) return std::nullopt;
    auto begin = bytes_.begin() + static_cast<std::ptrdiff_t>(offset);
    auto end = std::find(begin, bytes_.end(), std::uint8_t{0});
    if (end == bytes_.end()) return std::nullopt;
    return std::string(begin, end);
  }

 private:
  std::span<const std::uint8_t> bytes_;
};

struct Section {
  std::uint32_t virtual_address;
  std::uint32_t virtual_size;
  std::uint32_t raw_size;
  std::uint32_t raw_pointer;
};

class AddressMap {
 public:
  AddressMap(std::vector<Section> sections, std::uint32_t size_of_headers, std::size_t file_size)
      : sections_(std::move(sections)), size_of_headers_(size_of_headers), file_size_(file_size) {}

  std::optional<std::size_t> to_offset(std::uint32_t rva) const {
    for (const auto& s : sections_) {
      const std::uint64_t span = std::max(s.virtual_size, s.raw_size);
      if (rva >= s.virtual_address && rva < std::uint64_t{s.virtual_address} + span) {
        const std::uint64_t delta = rva - s.virtual_address;
        if (delta >= s.raw_size) return std::nullopt;
        const std::uint64_t offset = std::uint64_t{s.raw_pointer} + delta;
        if (offset >= file_size_) return std::nullopt;
        return static_cast<std::size_t>(offset);
      }
    }
    if (rva < size_of_headers_ && rva < file_size_) return rva;
    return std::nullopt;
  }

 private:
  std::vector<Section> sections_;
  std::uint32_t size_of_headers_;
  std::size_t file_size_;
};

[[noreturn]] void malformed(std::string what) {
  throw Error(ErrorCode::MalformedImportDirectory, std::move(what));
}

[[noreturn]] void truncated(std::string what) { throw Error(ErrorCode::TruncatedHeader, std::move(what)); }

std::string to_lower(std::string_view text) {
  std::string out(text);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

ImportTable parse_imports(std::span<const std::uint8_t> pe_bytes) {
  const Reader in(pe_bytes);
  if (in.size() >= 2 && (pe_bytes[0] != 'M' || pe_bytes[1] != 'Z')) throw Error(ErrorCode::NotPe, "no MZ");
  if (in.size() < 0x40) truncated("DOS header");

  const std::uint32_t pe_offset = *in.read<std::uint32_t>(0x3c);
  if (!in.fits(pe_offset, 24)) truncated("PE signature / file header");
  if (*in.read<std::uint32_t>(pe_offset) != 0x00004550u) throw Error(ErrorCode::NotPe, "no PE signature");

  const std::size_t file_header = pe_offset + 4;
  const std::uint16_t n_sections = *in.read<std::uint16_t>(file_header + 2);
  const std::uint16_t optional_size = *in.read<std::uint16_t>(file_header + 16);
  const std::size_t optional = file_header + 20;
  if (optional_size < 2 || !in.fits(optional, optional_size)) truncated("optional header");

  const std::uint16_t magic = *in.read<std::uint16_t>(optional);
  bool plus = false;
  if (magic == kMagicPe32Plus) {
    plus = true;
  } else if (magic != kMagicPe32) {
    throw Error(ErrorCode::NotPe, "unknown optional header magic");
  }

  const std::size_t rva_count_at = plus ? 108 : 92;
  const std::size_t directories_at = plus ? 112 : 96;
  if (optional_size < rva_count_at + 4) truncated("optional header");
  const std::uint32_t size_of_headers = *in.read<std::uint32_t>(optional + 60);
  const std::uint32_t n_directories = *in.read<std::uint32_t>(optional + rva_count_at);

  const std::size_t section_table = optional + optional_size;
  if (!in.fits(section_table, std::size_t{n_sections} * kSectionHeaderSize)) truncated("section table");
  std::vector<Section> sections;
  sections.reserve(n_sections);
  for (std::size_t i = 0; i < n_sections; ++i) {
    const std::size_t at = section_table + i * kSectionHeaderSize;
    sections.push_back(Section{*in.read<std::uint32_t>(at + 12), *in.read<std::uint32_t>(at + 8),
                               *in.read<std::uint32_t>(at + 16), *in.read<std::uint32_t>(at + 20)});
  }

  ImportTable table;
  if (n_directories < 2 || optional_size < directories_at + 16) return table;
  const std::uint32_t import_rva = *in.read<std::uint32_t>(optional + directories_at + 8);
  const std::uint32_t import_size = *in.read<std::uint32_t>(optional + directories_at + 12);
  if (import_rva == 0 || import_size == 0) return table;

  const AddressMap map(std::move(sections), size_of_headers, in.size());
  auto descriptor_offset = map.to_offset(import_rva);
  if (!descriptor_offset) malformed("import directory RVA unmapped");

  const std::size_t thunk_size = plus ? 8 : 4;
  for (std::size_t d = *descriptor_offset;; d += kDescriptorSize) {
    if (!in.fits(d, kDescriptorSize)) malformed("unterminated descriptor array");
    const std::uint32_t original_first_thunk = *in.read<std::uint32_t>(d);
    const std::uint32_t name_rva = *in.read<std::uint32_t>(d + 12);
    const std::uint32_t first_thunk = *in.read<std::uint32_t>(d + 16);
    if (original_first_thunk == 0 && name_rva == 0 && first_thunk == 0) break;

    auto name_offset = map.to_offset(name_rva);
    if (!name_offset) malformed("DLL name RVA unmapped");
    auto dll = in.c_string(*name_offset);
    if (!dll || dll->empty()) malformed("DLL name unreadable");

    const std::uint32_t thunk_rva = original_first_thunk != 0 ? original_first_thunk : first_thunk;
    auto thunk_offset = map.to_offset(thunk_rva);
    if (!thunk_offset) malformed("thunk RVA unmapped");

    for (std::size_t t = 0;; ++t) {
      if (t >= kMaxThunksPerDll) malformed("thunk array too long");
      const std::size_t at = *thunk_offset + t * thunk_size;
      std::uint64_t thunk = 0;
      bool by_ordinal = false;
      if (plus) {
        auto v = in.read<std::uint64_t>(at);
        if (!v) malformed("unterminated thunk array");
        thunk = *v;
        by_ordinal = (thunk >> 63) != 0;
      } else {
        auto v = in.read<std::uint32_t>(at);
        if (!v) malformed("unterminated thunk array");
        thunk = *v;
        by_ordinal = (thunk >> 31) != 0;
      }
      if (thunk == 0) break;

      if (by_ordinal) {
        table.entries.push_back({*dll, ImportOrdinal{static_cast<std::uint32_t>(thunk & 0xffff)}});
        continue;
      }
      auto hint_name = map.to_offset(static_cast<std::uint32_t>(thunk & 0x7fffffffu));
      if (!hint_name) malformed("hint/name RVA unmapped");
      auto symbol = in.c_string(*hint_name + 2);
      if (!symbol || symbol->empty()) malformed("import name unreadable");
      table.entries.push_back({*dll, std::move(*symbol)});
    }
  }
  return table;
}

std::string imphash_element(const ImportEntry& entry) {
  std::string dll = to_lower(entry.dll_name);
  if (auto dot = dll.rfind('.'); dot != std::string::npos) {
    const std::string_view ext = std::string_view(dll).substr(dot + 1);
    if (ext == "dll" || ext == "sys" || ext == "ocx") dll.resize(dot);
  }
  std::string func;
  if (const auto* name = std::get_if<std::string>(&entry.symbol)) {
    func = to_lower(*name);
  } else {
    func = "ord" + std::to_string(std::get<ImportOrdinal>(entry.symbol).value);
  }
  return dll + "." + func;
}

std::string imphash_input(const ImportTable& table) {
  std::string joined;
  for (std::size_t i = 0; i < table.entries.size(); ++i) {
    if (i != 0) joined.push_back(',');
    joined += imphash_element(table.entries[i]);
  }
  return joined;
}

std::string imphash(const ImportTable& table) { return md5_hex(imphash_input(table)); }

// ---------------------------------------------------------------------------
// Writer

namespace {

class Writer {
 public:
  explicit Writer(std::size_t size) : bytes_(size, 0) {}

  template <typename T>
  void put(std::size_t offset, T value) {
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bytes_.at(offset + i) = static_cast<std::uint8_t>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff);
    }
  }

  void put_bytes(std::size_t offset, std::span<const std::uint8_t> data) {
    std::copy(data.begin(), data.end(), bytes_.begin() + static_cast<std::ptrdiff_t>(offset));
  }

  void put_string(std::size_t offset, std::string_view text) {
    std::copy(text.begin(), text.end(), bytes_.begin() + static_cast<std::ptrdiff_t>(offset));
  }

  std::vector<std::uint8_t> take() { return std::move(bytes_); }

 private:
  std::vector<std::uint8_t> bytes_;
};

constexpr std::size_t align_up(std::size_t value, std::size_t alignment) {
  return (value + alignment - 1) / alignment * alignment;
}

}  // namespace

std::vector<std::uint8_t> build_pe(const std::vector<ImportEntry>& imports, PeFlavor flavor,
                                   std::span<const std::uint8_t> payload) {
  const bool plus = flavor == PeFlavor::pe32_plus;
  const std::size_t thunk_size = plus ? 8 : 4;
  constexpr std::uint32_t kSectionRva = 0x1000;
  constexpr std::size_t kFileAlign = 0x200;
  constexpr std::size_t kSectionAlign = 0x1000;
  constexpr std::size_t kHeadersSize = 0x200;

  struct Group {
    std::string dll;
    std::vector<const ImportEntry*> items;
  };
  std::vector<Group> groups;
  for (const auto& e : imports) {
    if (groups.empty() || groups.back().dll != e.dll_name) groups.push_back({e.dll_name, {}});
    groups.back().items.push_back(&e);
  }

  // Section layout: descriptors | per group: ILT, IAT | names | hint/name | payload.
  std::size_t cursor = groups.empty() ? 0 : (groups.size() + 1) * kDescriptorSize;
  std::vector<std::size_t> ilt_at(groups.size()), iat_at(groups.size()), name_at(groups.size());
  std::vector<std::vector<std::size_t>> hint_at(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const std::size_t table_bytes = (groups[g].items.size() + 1) * thunk_size;
    ilt_at[g] = cursor;
    cursor += table_bytes;
    iat_at[g] = cursor;
    cursor += table_bytes;
  }
  for (std::size_t g = 0; g < groups.size(); ++g) {
    name_at[g] = cursor;
    cursor += groups[g].dll.size() + 1;
  }
  for (std::size_t g = 0; g < groups.size(); ++g) {
    for (const auto* item : groups[g].items) {
      cursor = align_up(cursor, 2);
      hint_at[g].push_back(cursor);
      if (const auto* name = std::get_if<std::string>(&item->symbol)) cursor += 2 + name->size() + 1;
    }
  }
  const std::size_t payload_at = cursor;
  cursor += payload.size();
  const std::size_t section_virtual = std::max<std::size_t>(cursor, 1);
  const std::size_t section_raw = align_up(section_virtual, kFileAlign);

  Writer out(kHeadersSize + section_raw);

  // DOS header
  out.put<std::uint16_t>(0, 0x5a4d);
  out.put<std::uint32_t>(0x3c, 0x40);

  // PE signature + COFF file header
  const std::size_t optional_size = plus ? 240 : 224;
  out.put<std::uint32_t>(0x40, 0x00004550u);
  out.put<std::uint16_t>(0x44, plus ? 0x8664 : 0x014c);
  out.put<std::uint16_t>(0x46, 1);
  out.put<std::uint16_t>(0x54, static_cast<std::uint16_t>(optional_size));
  out.put<std::uint16_t>(0x56, plus ? 0x0022 : 0x0102);

  // Optional header
  const std::size_t opt = 0x58;
  out.put<std::uint16_t>(opt, plus ? kMagicPe32Plus : kMagicPe32);
  out.put<std::uint32_t>(opt + 16, kSectionRva);  // AddressOfEntryPoint
  out.put<std::uint32_t>(opt + 20, kSectionRva);  // BaseOfCode
  if (plus) {
    out.put<std::uint64_t>(opt + 24, 0x140000000ULL);
  } else {
    out.put<std::uint32_t>(opt + 24, kSectionRva);  // BaseOfData
    out.put<std::uint32_t>(opt + 28, 0x00400000u);
  }
  out.put<std::uint32_t>(opt + 32, kSectionAlign);
  out.put<std::uint32_t>(opt + 36, kFileAlign);
  out.put<std::uint16_t>(opt + 40, 6);  // OS version
  out.put<std::uint16_t>(opt + 48, 6);  // subsystem version
  out.put<std::uint32_t>(opt + 56, static_cast<std::uint32_t>(kSectionRva + align_up(section_virtual, kSectionAlign)));
  out.put<std::uint32_t>(opt + 60, kHeadersSize);
  out.put<std::uint16_t>(opt + 68, 3);  // console subsystem
  if (plus) {
    out.put<std::uint64_t>(opt + 72, 0x100000);
    out.put<std::uint64_t>(opt + 80, 0x1000);
    out.put<std::uint64_t>(opt + 88, 0x100000);
    out.put<std::uint64_t>(opt + 96, 0x1000);
    out.put<std::uint32_t>(opt + 108, 16);
  } else {
    out.put<std::uint32_t>(opt + 72, 0x100000);
    out.put<std::uint32_t>(opt + 76, 0x1000);
    out.put<std::uint32_t>(opt + 80, 0x100000);
    out.put<std::uint32_t>(opt + 84, 0x1000);
    out.put<std::uint32_t>(opt + 92, 16);
  }
  const std::size_t directories = opt + (plus ? 112 : 96);
  if (!groups.empty()) {
    out.put<std::uint32_t>(directories + 8, kSectionRva);
    out.put<std::uint32_t>(directories + 12, static_cast<std::uint32_t>((groups.size() + 1) * kDescriptorSize));
  }

  // Section header
  const std::size_t section = opt + optional_size;
  out.put_string(section, ".idata");
  out.put<std::uint32_t>(section + 8, static_cast<std::uint32_t>(section_virtual));
  out.put<std::uint32_t>(section + 12, kSectionRva);
  out.put<std::uint32_t>(section + 16, static_cast<std::uint32_t>(section_raw));
  out.put<std::uint32_t>(section + 20, static_cast<std::uint32_t>(kHeadersSize));
  out.put<std::uint32_t>(section + 36, 0xc0000040u);

  // Section body
  const auto rva = [&](std::size_t local) { return static_cast<std::uint32_t>(kSectionRva + local); };
  const auto file = [&](std::size_t local) { return kHeadersSize + local; };
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const std::size_t d = file(g * kDescriptorSize);
    out.put<std::uint32_t>(d, rva(ilt_at[g]));
    out.put<std::uint32_t>(d + 12, rva(name_at[g]));
    out.put<std::uint32_t>(d + 16, rva(iat_at[g]));
    out.put_string(file(name_at[g]), groups[g].dll);

    for (std::size_t i = 0; i < groups[g].items.size(); ++i) {
      const auto& item = *groups[g].items[i];
      std::uint64_t thunk = 0;
      if (const auto* name = std::get_if<std::string>(&item.symbol)) {
        out.put_string(file(hint_at[g][i] + 2), *name);
        thunk = rva(hint_at[g][i]);
      } else {
        const std::uint64_t flag = plus ? (1ULL << 63) : (1ULL << 31);
        thunk = flag | (std::get<ImportOrdinal>(item.symbol).value & 0xffff);
      }
      for (std::size_t table : {ilt_at[g], iat_at[g]}) {
        const std::size_t at = file(table + i * thunk_size);
        if (plus) {
          out.put<std::uint64_t>(at, thunk);
        } else {
          out.put<std::uint32_t>(at, static_cast<std::uint32_t>(thunk));
        }
      }
    }
  }
  out.put_bytes(file(payload_at), payload);
  return out.take();
}

}  // namespace emutriage
