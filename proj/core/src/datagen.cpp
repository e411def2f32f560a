#include "emutriage/datagen.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <map>
#include <set>
#include <unordered_map>

#include "emutriage/digest.hpp"
#include "emutriage/error.hpp"
#include "emutriage/io.hpp"
#include "emutriage/parallel.hpp"
#include "emutriage/pe_static.hpp"
#include "emutriage/rng.hpp"
#include "emutriage/unify.hpp"
#include "json_util.hpp"

namespace emutriage {

using detail::Json;

namespace {

constexpr std::string_view kApiNames[] = {
    // benign-looking pool
    "GetSystemTime", "GetLocalTime", "GetTickCount", "QueryPerformanceCounter", "GetProcessHeap", "HeapAlloc",
    "HeapFree", "GetCommandLine", "GetStartupInfo", "GetModuleFileName", "GetEnvironmentVariable", "GetLastError",
    "SetLastError", "InitializeCriticalSection", "EnterCriticalSection", "LeaveCriticalSection", "GetCurrentProcessId",
    "GetCurrentThreadId", "TlsAlloc", "TlsGetValue", "TlsSetValue", "MultiByteToWideChar", "WideCharToMultiByte",
    "GetCPInfo", "GetStringType", "LCMapString", "RegisterClass", "CreateWindow", "ShowWindow", "UpdateWindow",
    // shared noise pool
    "CloseHandle", "ReadFile", "WriteFile", "GetFileSize", "SetFilePointer", "FlushFileBuffers", "LocalAlloc",
    "LocalFree", "GlobalAlloc", "GlobalFree", "lstrlen", "lstrcpy", "Sleep", "WaitForSingleObject", "CreateEvent",
    "SetEvent", "ResetEvent", "GetVersion", "FreeLibrary", "ExitProcess",
    // signature material
    "VirtualAlloc", "VirtualProtect", "WriteProcessMemory", "ReadProcessMemory", "CreateRemoteThread", "OpenProcess",
    "NtUnmapViewOfSection", "SetThreadContext", "GetThreadContext", "ResumeThread", "QueueUserAPC", "SuspendThread",
    "RegOpenKey", "RegSetValue", "RegQueryValue", "RegCloseKey", "RegDeleteValue", "RegEnumKey", "InternetOpen",
    "InternetConnect", "HttpOpenRequest", "HttpSendRequest", "InternetReadFile", "InternetCloseHandle",
    "URLDownloadToFile", "WSAStartup", "socket", "connect", "send", "recv", "gethostbyname", "closesocket",
    "CryptAcquireContext", "CryptGenKey", "CryptEncrypt", "CryptDecrypt", "CryptDestroyKey", "CryptImportKey",
    "CryptStringToBinary", "CryptBinaryToString", "FindFirstFile", "FindNextFile", "FindClose", "DeleteFile",
    "MoveFile", "CopyFile", "GetTempPath", "GetTempFileName", "SetFileAttributes", "GetLogicalDrives",
    "GetDriveType", "GetVolumeInformation", "GetDiskFreeSpace", "CreateToolhelp32Snapshot", "Process32First",
    "Process32Next", "Module32First", "Module32Next", "EnumProcesses", "TerminateProcess", "IsDebuggerPresent",
    "CheckRemoteDebuggerPresent", "OutputDebugString", "NtQueryInformationProcess", "GetComputerName",
    "GetUserName", "GetNativeSystemInfo", "IsWow64Process", "OpenProcessToken", "LookupPrivilegeValue",
    "AdjustTokenPrivileges", "OpenSCManager", "CreateService", "StartService", "ControlService", "DeleteService",
    "CreateMutex", "OpenMutex", "ReleaseMutex", "SetWindowsHook", "UnhookWindowsHook", "GetAsyncKeyState",
    "GetKeyState", "GetForegroundWindow", "GetWindowText", "OpenClipboard", "GetClipboardData", "CloseClipboard",
    "ShellExecute", "WinExec", "CreatePipe", "PeekNamedPipe", "GetAdaptersInfo", "DnsQuery", "NetShareEnum",
    "WNetOpenEnum", "WNetEnumResource", "SHGetFolderPath", "SHFileOperation", "MapViewOfFile",
    "CreateFileMapping", "UnmapViewOfFile", "RtlDecompressBuffer", "RtlMoveMemory", "DeviceIoControl",
    "BitBlt", "GetDC", "ReleaseDC", "CreateCompatibleBitmap", "EnumWindows", "FindWindow", "SendMessage",
    "PostMessage", "SetWindowLong", "CallNextHook"};

constexpr std::size_t kBenignBegin = 0;
constexpr std::size_t kNoiseBegin = 30;
constexpr std::size_t kSignatureBegin = 50;

std::string to_lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::string to_upper(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

[[noreturn]] void invalid(const std::string& detail) { throw Error(ErrorCode::InvalidSpec, detail); }

const std::unordered_map<std::string, std::vector<std::string>>& reverse_aliases() {
  static const auto table = [] {
    std::unordered_map<std::string, std::vector<std::string>> out;
    for (const auto& [alias, canonical] : AliasTable::builtin().pairs()) out[canonical].push_back(alias);
    return out;
  }();
  return table;
}

struct ArgToken {
  std::string api;
  std::string arg;
};

std::optional<ArgToken> split_arg_token(std::string_view token) {
  const auto pos = token.find("->");
  if (pos == std::string_view::npos) return std::nullopt;
  return ArgToken{std::string(token.substr(0, pos)), std::string(token.substr(pos + 2))};
}

/// Raw spellings of an API token that unify back to it.
std::vector<std::string> api_variants(const std::string& token) {
  const auto& aliases = AliasTable::builtin();
  std::vector<std::string> candidates{token};
  if (!token.empty() && std::isupper(static_cast<unsigned char>(token.front()))) {
    for (const char* suffix : {"A", "W", "Ex", "ExA", "ExW"}) candidates.push_back(token + suffix);
  }
  if (auto it = reverse_aliases().find(token); it != reverse_aliases().end()) {
    candidates.insert(candidates.end(), it->second.begin(), it->second.end());
  }
  std::vector<std::string> out;
  for (auto& c : candidates) {
    const auto unified = unify_name(c, aliases);
    if (unified.kind == TokenKind::api && unified.text == token) out.push_back(std::move(c));
  }
  return out;
}

class Emitter {
 public:
  explicit Emitter(bool raw) : raw_(raw) {}

  void emit(const std::string& token, std::uint64_t count, Rng& rng, std::vector<ApiCallRecord>& out) {
    if (raw_ && count >= 2 && rng.bernoulli(0.5)) {
      const auto first = 1 + rng.uniform_index(count - 1);
      out.push_back(one(token, first, rng));
      out.push_back(one(token, count - first, rng));
    } else {
      out.push_back(one(token, count, rng));
    }
  }

  ApiCallRecord one(const std::string& token, std::uint64_t count, Rng& rng) {
    ApiCallRecord call;
    call.count = count;
    if (token.rfind("mangled::", 0) == 0) {
      const auto root = token.substr(9);
      call.api_name = raw_ && rng.bernoulli(0.5) ? "_" + root + "@" + std::to_string(4 * (1 + rng.uniform_index(4)))
                                                  : "?" + root + "@@YAXXZ";
      return call;
    }
    if (auto arg = split_arg_token(token)) {
      if (arg->api == "GetProcAddress") {
        call.api_name = "GetProcAddress";
        call.args = {"0x10000000", arg->arg};
        return call;
      }
      const std::string path = !raw_ ? arg->arg : pick<std::string>({arg->arg, to_upper(arg->arg),
                                                                    "C:\\Windows\\System32\\" + arg->arg}, rng);
      if (arg->api == "GetModuleHandle" && raw_ && rng.bernoulli(0.25)) {
        call.api_name = "GetModuleHandleExW";
        call.args = {"0", path};
        return call;
      }
      // Ex spellings of GetModuleHandle move the name to args[1]; handled above.
      call.api_name = !raw_ ? arg->api
                      : arg->api == "GetModuleHandle"
                          ? pick<std::string>({"GetModuleHandle", "GetModuleHandleA", "GetModuleHandleW"}, rng)
                          : pick(variants(arg->api), rng);
      call.args = {path};
      if (call.api_name.find("Ex") != std::string::npos) call.args.insert(call.args.end(), {"0", "0"});
      return call;
    }
    call.api_name = raw_ ? pick(variants(token), rng) : token;
    return call;
  }

 private:
  template <typename T>
  static T pick(const std::vector<T>& items, Rng& rng) {
    return items[rng.uniform_index(items.size())];
  }

  const std::vector<std::string>& variants(const std::string& token) {
    auto it = cache_.find(token);
    if (it == cache_.end()) it = cache_.emplace(token, api_variants(token)).first;
    return it->second;
  }

  bool raw_;
  std::unordered_map<std::string, std::vector<std::string>> cache_;
};

void validate_token(const std::string& token, const std::string& where) {
  const auto& aliases = AliasTable::builtin();
  if (token.empty()) invalid(where + ": empty token");
  if (token.rfind("mangled::", 0) == 0) {
    const auto root = token.substr(9);
    if (root.empty() || root.find_first_of("@?") != std::string::npos) invalid(where + ": bad mangled token " + token);
    return;
  }
  if (auto arg = split_arg_token(token)) {
    if (arg->api != "LoadLibrary" && arg->api != "GetModuleHandle" && arg->api != "GetProcAddress") {
      invalid(where + ": argument tokens need LoadLibrary, GetModuleHandle or GetProcAddress: " + token);
    }
    if (arg->arg.empty() || arg->arg != to_lower(arg->arg) || arg->arg.find_first_of("\\/") != std::string::npos) {
      invalid(where + ": argument must be a lowercase base name: " + token);
    }
    if (arg->api == "GetProcAddress" && to_lower(unify_name(arg->arg, aliases).text) != arg->arg) {
      invalid(where + ": GetProcAddress argument is not unified: " + token);
    }
    return;
  }
  const auto unified = unify_name(token, aliases);
  if (unified.kind != TokenKind::api || unified.text != token) {
    invalid(where + ": '" + token + "' is not a unified API token (unifies to '" + unified.text + "')");
  }
}

std::vector<ImportEntry> family_imports(const std::vector<std::string>& signature) {
  std::vector<ImportEntry> imports;
  for (const auto& token : signature) {
    if (token.find("->") != std::string::npos || token.rfind("mangled::", 0) == 0) continue;
    imports.push_back({"kernel32.dll", token});
    if (imports.size() == 4) break;
  }
  imports.push_back({"ws2_32.dll", ImportOrdinal{static_cast<std::uint16_t>(1 + signature.size())}});
  return imports;
}

}  // namespace

std::span<const std::string_view> synthetic_api_names() noexcept { return kApiNames; }

void validate(const SynthSpec& spec) {
  if (spec.families.empty() && spec.benign.n_samples == 0) invalid("spec generates no samples");
  std::set<std::string> names;
  for (const auto& f : spec.families) {
    const std::string where = "family '" + f.name + "'";
    if (f.name.empty()) invalid("family name is empty");
    if (f.name == kBenignFamily || f.name == kUnknownFamily) invalid(where + ": reserved name");
    if (!names.insert(f.name).second) invalid(where + ": duplicate family name");
    if (!(f.signature_rate > 0.0 && f.signature_rate <= 1.0)) invalid(where + ": signature_rate must be in (0,1]");
    if (f.shared_noise_tokens < 0.0) invalid(where + ": shared_noise_tokens must be >= 0");
    if (f.signature_tokens.empty()) invalid(where + ": no signature tokens");
    if (f.confuse_fraction < 0.0 || f.confuse_fraction > 1.0) invalid(where + ": confuse_fraction must be in [0,1]");
    for (const auto& t : f.signature_tokens) validate_token(t, where);
  }
  for (const auto& f : spec.families) {
    if (!f.confuse_with) continue;
    if (*f.confuse_with == f.name) invalid("family '" + f.name + "' cannot be confused with itself");
    if (!names.count(*f.confuse_with)) invalid("family '" + f.name + "': unknown confuse_with " + *f.confuse_with);
  }
  if (spec.benign.n_samples > 0 && spec.benign.token_pool.empty()) invalid("benign token pool is empty");
  if (!(spec.benign.token_rate > 0.0 && spec.benign.token_rate <= 1.0)) invalid("benign token_rate must be in (0,1]");
  for (const auto& t : spec.benign.token_pool) validate_token(t, "benign pool");
  for (const auto& t : spec.noise_pool) validate_token(t, "noise pool");
  const bool wants_noise = spec.benign.shared_noise_tokens > 0.0 ||
                           std::any_of(spec.families.begin(), spec.families.end(),
                                       [](const FamilySpec& f) { return f.shared_noise_tokens > 0.0; });
  if (wants_noise && spec.noise_pool.empty()) invalid("noise tokens requested but the noise pool is empty");
}

std::vector<std::vector<std::string>> effective_signatures(const SynthSpec& spec) {
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < spec.families.size(); ++i) index[spec.families[i].name] = i;
  std::vector<std::vector<std::string>> out;
  for (const auto& f : spec.families) {
    auto sig = f.signature_tokens;
    if (f.confuse_with) {
      const auto& partner = spec.families[index.at(*f.confuse_with)].signature_tokens;
      const auto shared = static_cast<std::size_t>(
          std::llround(f.confuse_fraction * static_cast<double>(std::min(sig.size(), partner.size()))));
      std::copy(partner.begin(), partner.begin() + static_cast<std::ptrdiff_t>(shared), sig.begin());
    }
    out.push_back(std::move(sig));
  }
  return out;
}

SyntheticCorpus generate(const SynthSpec& spec, unsigned jobs) {
  validate(spec);
  const auto signatures = effective_signatures(spec);

  struct Plan {
    std::optional<std::size_t> family;  // nullopt = benign
  };
  std::vector<Plan> plans(spec.benign.n_samples, Plan{std::nullopt});
  for (std::size_t f = 0; f < spec.families.size(); ++f) {
    for (std::size_t i = 0; i < spec.families[f].n_samples; ++i) plans.push_back(Plan{f});
  }

  SyntheticCorpus corpus;
  corpus.samples.resize(plans.size());
  parallel_for(plans.size(), jobs, [&](std::size_t index) {
    Rng rng(derive_seed(spec.seed, 0xda7a, index));
    Emitter emitter(spec.raw_variants);
    std::vector<ApiCallRecord> calls;
    auto add_noise = [&](double mean) {
      const auto n = rng.poisson(mean);
      for (std::uint64_t i = 0; i < n; ++i) {
        const auto& token = spec.noise_pool[rng.uniform_index(spec.noise_pool.size())];
        emitter.emit(token, 1 + rng.poisson(1.0), rng, calls);
      }
    };

    auto& sample = corpus.samples[index];
    std::vector<ImportEntry> imports;
    const auto& plan = plans[index];
    if (plan.family) {
      const auto& f = spec.families[*plan.family];
      for (const auto& token : signatures[*plan.family]) {
        if (rng.bernoulli(f.signature_rate)) emitter.emit(token, 1 + rng.poisson(2.0), rng, calls);
      }
      add_noise(f.shared_noise_tokens);
      sample.entry.cls = SampleClass::malicious;
      sample.entry.family = f.name;
      imports = family_imports(signatures[*plan.family]);
    } else {
      std::vector<std::string> chosen;
      for (const auto& token : spec.benign.token_pool) {
        if (rng.bernoulli(spec.benign.token_rate)) {
          emitter.emit(token, 1 + rng.poisson(2.0), rng, calls);
          chosen.push_back(token);
        }
      }
      if (calls.empty()) {
        const auto& token = spec.benign.token_pool[rng.uniform_index(spec.benign.token_pool.size())];
        emitter.emit(token, 1, rng, calls);
        chosen.push_back(token);
      }
      add_noise(spec.benign.shared_noise_tokens);
      sample.entry.cls = SampleClass::benign;
      sample.entry.family = std::string(kBenignFamily);
      for (const auto& token : chosen) {
        if (token.find("->") == std::string::npos && token.rfind("mangled::", 0) != 0) {
          imports.push_back({"kernel32.dll", token});
        }
      }
      imports.push_back({"user32.dll", std::string("MessageBoxA")});
    }
    rng.shuffle(std::span<ApiCallRecord>(calls));

    const bool timed_out = rng.bernoulli(0.03);
    sample.report.calls = std::move(calls);
    sample.report.exit_kind = timed_out ? ExitKind::timeout : ExitKind::graceful;
    sample.report.duration_s = timed_out ? 60.0 : static_cast<double>(250 + rng.uniform_index(20000)) / 1000.0;

    if (spec.emit_binaries) {
      std::vector<std::uint8_t> payload(32);
      for (auto& b : payload) b = static_cast<std::uint8_t>(rng.next_u64() & 0xff);
      const auto flavor = rng.bernoulli(0.5) ? PeFlavor::pe32 : PeFlavor::pe32_plus;
      sample.binary = build_pe(imports, flavor, payload);
      sample.report.sample_id = sha256_hex(std::span<const std::uint8_t>(sample.binary));
      sample.entry.binary_path = "binaries/" + sample.report.sample_id + ".exe";
    } else {
      sample.report.sample_id = sha256_hex("synth:" + std::to_string(spec.seed) + ":" + std::to_string(index));
    }
    sample.entry.sample_id = sample.report.sample_id;
    sample.entry.report_path = sample.report.sample_id + ".json";
  });

  std::set<std::string> seen;
  for (const auto& s : corpus.samples) {
    if (!seen.insert(s.entry.sample_id).second) invalid("generated duplicate sample id " + s.entry.sample_id);
  }
  return corpus;
}

void write_corpus(const std::filesystem::path& dir, const SyntheticCorpus& corpus, const SynthSpec& spec) {
  CorpusManifest manifest;
  for (const auto& s : corpus.samples) {
    write_text_file(dir / "reports" / s.entry.report_path, serialize_report(s.report));
    if (!s.binary.empty()) write_binary_file(dir / *s.entry.binary_path, s.binary);
    manifest.entries.push_back(s.entry);
  }
  write_text_file(dir / "manifest.csv", write_manifest(manifest));
  write_text_file(dir / "spec.json", synth_spec_to_json(spec));
}

// ---------------------------------------------------------------------------
// JSON

SynthSpec synth_spec_from_json(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw Error(ErrorCode::MalformedJson, e.what());
  }
  SynthSpec spec;
  try {
    for (const auto& fj : j.at("families")) {
      FamilySpec f;
      f.name = fj.at("name").get<std::string>();
      f.n_samples = fj.at("n_samples").get<std::size_t>();
      f.signature_tokens = fj.at("signature_tokens").get<std::vector<std::string>>();
      f.signature_rate = fj.value("signature_rate", f.signature_rate);
      f.shared_noise_tokens = fj.value("shared_noise_tokens", f.shared_noise_tokens);
      if (fj.contains("confuse_with") && !fj.at("confuse_with").is_null()) {
        f.confuse_with = fj.at("confuse_with").get<std::string>();
      }
      f.confuse_fraction = fj.value("confuse_fraction", f.confuse_fraction);
      spec.families.push_back(std::move(f));
    }
    if (j.contains("benign")) {
      const auto& b = j.at("benign");
      spec.benign.n_samples = b.value("n_samples", std::size_t{0});
      spec.benign.token_pool = b.value("token_pool", std::vector<std::string>{});
      spec.benign.token_rate = b.value("token_rate", spec.benign.token_rate);
      spec.benign.shared_noise_tokens = b.value("shared_noise_tokens", spec.benign.shared_noise_tokens);
    }
    spec.noise_pool = j.value("noise_pool", std::vector<std::string>{});
    spec.raw_variants = j.value("raw_variants", spec.raw_variants);
    spec.emit_binaries = j.value("emit_binaries", spec.emit_binaries);
    spec.seed = j.value("seed", spec.seed);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::InvalidSpec, std::string("synthetic spec: ") + e.what());
  }
  validate(spec);
  return spec;
}

std::string synth_spec_to_json(const SynthSpec& spec) {
  Json j;
  auto families = Json::array();
  for (const auto& f : spec.families) {
    Json fj;
    fj["name"] = f.name;
    fj["n_samples"] = f.n_samples;
    fj["signature_tokens"] = f.signature_tokens;
    fj["signature_rate"] = f.signature_rate;
    fj["shared_noise_tokens"] = f.shared_noise_tokens;
    fj["confuse_with"] = f.confuse_with ? Json(*f.confuse_with) : Json(nullptr);
    fj["confuse_fraction"] = f.confuse_fraction;
    families.push_back(std::move(fj));
  }
  j["families"] = std::move(families);
  j["benign"] = {{"n_samples", spec.benign.n_samples},
                 {"token_pool", spec.benign.token_pool},
                 {"token_rate", spec.benign.token_rate},
                 {"shared_noise_tokens", spec.benign.shared_noise_tokens}};
  j["noise_pool"] = spec.noise_pool;
  j["raw_variants"] = spec.raw_variants;
  j["emit_binaries"] = spec.emit_binaries;
  j["seed"] = spec.seed;
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Presets

namespace {

std::vector<std::string> slice(std::size_t begin, std::size_t count) {
  std::vector<std::string> out;
  for (std::size_t i = begin; i < begin + count && i < std::size(kApiNames); ++i) out.emplace_back(kApiNames[i]);
  return out;
}

constexpr std::array<std::string_view, 8> kDlls{"wininet.dll", "ws2_32.dll", "advapi32.dll", "crypt32.dll",
                                                "urlmon.dll",  "psapi.dll",  "netapi32.dll", "shell32.dll"};

FamilySpec planted_family(std::string name, std::size_t index, std::size_t n, double rate) {
  FamilySpec f;
  f.name = std::move(name);
  f.n_samples = n;
  f.signature_tokens = slice(kSignatureBegin + 10 * index, 9);
  f.signature_tokens.push_back("LoadLibrary->" + std::string(kDlls.at(index % kDlls.size())));
  f.signature_rate = rate;
  return f;
}

SynthSpec base_spec(std::size_t n_benign, std::uint64_t seed) {
  SynthSpec spec;
  spec.benign.n_samples = n_benign;
  spec.benign.token_pool = slice(kBenignBegin, kNoiseBegin - kBenignBegin);
  spec.benign.token_rate = 0.4;
  spec.noise_pool = slice(kNoiseBegin, kSignatureBegin - kNoiseBegin);
  spec.seed = seed;
  return spec;
}

}  // namespace

std::vector<std::string> preset_names() { return {"easy", "confusable", "paper-mini"}; }

SynthSpec preset(std::string_view name, std::uint64_t seed) {
  if (name == "easy") {
    auto spec = base_spec(200, seed);
    spec.families.push_back(planted_family("Generic", 0, 200, 0.9));
    return spec;
  }
  if (name == "paper-mini") {
    auto spec = base_spec(100, seed);
    const std::array<const char*, 5> names{"AgentTesla", "Emotet", "FormBook", "Remcos", "TrickBot"};
    for (std::size_t i = 0; i < names.size(); ++i) spec.families.push_back(planted_family(names[i], i, 100, 0.8));
    return spec;
  }
  if (name == "confusable") {
    auto spec = base_spec(100, seed);
    const std::array<const char*, 6> names{"Dridex", "Ursnif", "AsyncRAT", "njRAT", "Lokibot", "Azorult"};
    for (std::size_t i = 0; i < names.size(); ++i) {
      auto f = planted_family(names[i], i, 100, 0.8);
      if (i == 1 || i == 3) {
        f.confuse_with = names[i - 1];
        f.signature_rate = 0.5;
      }
      spec.families.push_back(std::move(f));
    }
    spec.families[0].signature_rate = 0.5;
    spec.families[2].signature_rate = 0.5;
    return spec;
  }
  invalid("unknown preset '" + std::string(name) + "'");
}

}  // namespace emutriage
