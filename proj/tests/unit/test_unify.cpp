#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <sstream>

#include "emutriage/io.hpp"
#include "emutriage/rng.hpp"
#include "emutriage/unify.hpp"
#include "fixtures.hpp"

using namespace emutriage;
using emutriage::testing::code_of;
using emutriage::testing::data_path;

namespace {

const AliasTable& builtin() { return AliasTable::builtin(); }

ApiCallRecord call(std::string name, std::vector<std::string> args = {}, std::uint64_t count = 1) {
  return {std::move(name), std::move(args), count};
}

std::vector<std::string> texts(const std::vector<FeatureToken>& tokens) {
  std::vector<std::string> out;
  for (const auto& t : tokens) out.push_back(t.text);
  return out;
}

}  // namespace

TEST(StripAnsiUnicode, Rule) {
  EXPECT_EQ(strip_ansi_unicode("CreateFileA"), "CreateFile");
  EXPECT_EQ(strip_ansi_unicode("CreateFileW"), "CreateFile");
  EXPECT_EQ(strip_ansi_unicode("GetTickCount"), "GetTickCount");
  EXPECT_EQ(strip_ansi_unicode("WSAStartup"), "WSAStartup");
  EXPECT_EQ(strip_ansi_unicode("GetACP"), "GetACP");
  EXPECT_EQ(strip_ansi_unicode("lstrcpyW"), "lstrcpy");
  EXPECT_EQ(strip_ansi_unicode("Mp3A"), "Mp3");
  EXPECT_EQ(strip_ansi_unicode("abA"), "abA");  // length guard
  EXPECT_EQ(strip_ansi_unicode("A"), "A");
  EXPECT_EQ(strip_ansi_unicode(""), "");
}

TEST(StripEx, Rule) {
  EXPECT_EQ(strip_ex("VirtualAllocEx"), "VirtualAlloc");
  EXPECT_EQ(strip_ex(strip_ansi_unicode("LoadLibraryExW")), "LoadLibrary");
  EXPECT_EQ(strip_ex("GetDC"), "GetDC");
  EXPECT_EQ(strip_ex("abcEx"), "abc");
  EXPECT_EQ(strip_ex("abEx"), "abEx");   // length guard
  EXPECT_EQ(strip_ex("ABCEx"), "ABCEx");  // preceding char uppercase
  EXPECT_EQ(strip_ex("Ex"), "Ex");
}

TEST(MergeCrt, BuiltinAndEmptyTables) {
  EXPECT_EQ(merge_crt("_stricmp", builtin()), "stricmp");
  EXPECT_EQ(merge_crt("memcpy", builtin()), "memcpy");
  const AliasTable empty;
  EXPECT_EQ(merge_crt("_stricmp", empty), "_stricmp");
}

TEST(AliasTable, RejectsUnflattenedAndDuplicates) {
  EXPECT_EQ(code_of([] { AliasTable::from_pairs({{"a", "b"}, {"b", "c"}}); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([] { AliasTable::from_pairs({{"a", "b"}, {"a", "c"}}); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([] { AliasTable::from_csv("from,to\na,b\n"); }), ErrorCode::ConfigError);
  EXPECT_EQ(code_of([] { AliasTable::load("/nonexistent/aliases.csv"); }), ErrorCode::ConfigError);
  EXPECT_EQ(AliasTable::from_csv("alias,canonical\n_x,x\n").size(), 1u);
}

TEST(AliasTable, BuiltinIsFlattened) {
  const auto& t = builtin();
  ASSERT_GT(t.size(), 0u);
  for (const auto& [alias, canonical] : t.pairs()) {
    EXPECT_EQ(t.find(canonical), nullptr) << canonical;
    EXPECT_EQ(unify_name(canonical, t).text, canonical);
  }
}

TEST(MangleSignature, Rules) {
  EXPECT_EQ(mangle_signature("?MyFunc@@YAHH@Z")->text, "mangled::MyFunc");
  EXPECT_EQ(mangle_signature("?MyFunc@@YAHH@Z")->kind, TokenKind::mangled);
  EXPECT_EQ(mangle_signature("_DllMain@12")->text, "mangled::DllMain");
  EXPECT_EQ(mangle_signature("@Fast@8")->text, "mangled::Fast");
  EXPECT_FALSE(mangle_signature("CreateFile"));
  EXPECT_FALSE(mangle_signature("_stricmp"));
  EXPECT_FALSE(mangle_signature("_Name@"));
  EXPECT_FALSE(mangle_signature("_Name@1x"));
  EXPECT_FALSE(mangle_signature("?@x"));
}

TEST(ArgTokens, LoadLibraryPathNormalized) {
  EXPECT_EQ(texts(arg_tokens(call("LoadLibraryA", {"C:\\Windows\\System32\\ws2_32.dll"}), "LoadLibrary", builtin())),
            std::vector<std::string>{"LoadLibrary->ws2_32.dll"});
  EXPECT_EQ(texts(arg_tokens(call("LoadLibraryW", {"USER32.DLL"}), "LoadLibrary", builtin())),
            std::vector<std::string>{"LoadLibrary->user32.dll"});
  EXPECT_EQ(texts(arg_tokens(call("LoadLibraryExW", {"c:/x/Y.dll", "0", "0"}), "LoadLibrary", builtin())),
            std::vector<std::string>{"LoadLibrary->y.dll"});
}

TEST(ArgTokens, GetProcAddressNameUnified) {
  EXPECT_EQ(texts(arg_tokens(call("GetProcAddress", {"0x1000", "VirtualAllocEx"}), "GetProcAddress", builtin())),
            std::vector<std::string>{"GetProcAddress->virtualalloc"});
  EXPECT_TRUE(arg_tokens(call("GetProcAddress", {"0x1000"}), "GetProcAddress", builtin()).empty());
  EXPECT_TRUE(arg_tokens(call("GetProcAddress", {"0x1000", ""}), "GetProcAddress", builtin()).empty());
}

TEST(ArgTokens, GetModuleHandle) {
  EXPECT_TRUE(arg_tokens(call("GetModuleHandleA"), "GetModuleHandle", builtin()).empty());
  EXPECT_EQ(texts(arg_tokens(call("GetModuleHandleW", {"kernel32.dll"}), "GetModuleHandle", builtin())),
            std::vector<std::string>{"GetModuleHandle->kernel32.dll"});
  EXPECT_EQ(texts(arg_tokens(call("GetModuleHandleExW", {"0", "C:\\a\\NTDLL.dll"}), "GetModuleHandle", builtin())),
            std::vector<std::string>{"GetModuleHandle->ntdll.dll"});
  EXPECT_TRUE(arg_tokens(call("Sleep", {"10"}), "Sleep", builtin()).empty());
}

TEST(UnifyCall, Examples) {
  const auto a = unify_call(call("RegOpenKeyExA", {}, 3), builtin());
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0].first, (FeatureToken{"RegOpenKey", TokenKind::api}));
  EXPECT_EQ(a[0].second, 3u);

  const auto b = unify_call(call("?Init@@YAXXZ"), builtin());
  ASSERT_EQ(b.size(), 1u);
  EXPECT_EQ(b[0].first, (FeatureToken{"mangled::Init", TokenKind::mangled}));

  const auto c = unify_call(call("LoadLibraryA", {"user32.dll"}, 2), builtin());
  ASSERT_EQ(c.size(), 2u);
  EXPECT_EQ(c[0].first, (FeatureToken{"LoadLibrary", TokenKind::api}));
  EXPECT_EQ(c[1].first, (FeatureToken{"LoadLibrary->user32.dll", TokenKind::api_arg}));
  EXPECT_EQ(c[1].second, 2u);
}

TEST(FeaturizeReport, CountFusion) {
  EmulationReport r;
  r.calls = {call("CreateFileA", {}, 2), call("CreateFileW")};
  const auto counts = featurize_report(r, builtin());
  EXPECT_EQ(counts.size(), 1u);
  EXPECT_EQ(counts.count("CreateFile"), 3u);
  EXPECT_TRUE(featurize_report(EmulationReport{}, builtin()).empty());
  r.calls = {call("GetTickCount", {}, 5)};
  EXPECT_EQ(featurize_report(r, builtin()).count("GetTickCount"), 5u);
}

TEST(FeaturizeReport, PermutationInvariant) {
  EmulationReport r;
  r.calls = {call("CreateFileA"), call("LoadLibraryExW", {"a.dll"}, 4), call("_stricmp", {}, 2),
             call("stricmp"), call("?X@@Y"), call("CreateFileW", {}, 7)};
  const auto base = featurize_report(r, builtin());
  Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    rng.shuffle(std::span<ApiCallRecord>(r.calls));
    EXPECT_EQ(featurize_report(r, builtin()), base);
  }
  EXPECT_EQ(base.count("stricmp"), 3u);
  EXPECT_EQ(base.count("LoadLibrary->a.dll"), 4u);
}

TEST(UnifyName, IdempotentAndNeverEmpty) {
  Rng rng(11);
  const std::string alphabet = "abcdefgxyzAEWxX019_@?";
  for (int i = 0; i < 5000; ++i) {
    std::string name;
    const auto len = 1 + rng.uniform_index(12);
    for (std::size_t k = 0; k < len; ++k) name += alphabet[rng.uniform_index(alphabet.size())];
    const auto once = unify_name(name, builtin());
    ASSERT_FALSE(once.text.empty()) << name;
    if (once.kind == TokenKind::api) {
      EXPECT_EQ(unify_name(once.text, builtin()), once) << name;
    }
    EXPECT_FALSE(strip_ansi_unicode(name).empty());
    EXPECT_FALSE(strip_ex(name).empty());
  }
}

TEST(UnifyName, VariantClosureShrinksVocabulary) {
  std::set<std::string> raw, unified;
  for (std::string base : {"CreateFile", "LoadLibrary", "RegOpenKey", "GetACP", "WSAStartup"}) {
    for (std::string suffix : {"", "A", "W", "Ex", "ExA", "ExW"}) {
      raw.insert(base + suffix);
      unified.insert(unify_name(base + suffix, builtin()).text);
    }
  }
  EXPECT_LE(unified.size(), raw.size());
  EXPECT_TRUE(unified.count("CreateFile"));
}

TEST(UnifyName, OracleCorpus) {
  std::istringstream in(read_text_file(data_path("unify_corpus.tsv")));
  std::string line;
  std::getline(in, line);
  ASSERT_EQ(line, "name\ttoken\tkind");
  std::size_t n = 0;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::string name, token, kind;
    std::getline(fields, name, '\t');
    std::getline(fields, token, '\t');
    std::getline(fields, kind, '\t');
    const auto got = unify_name(name, builtin());
    EXPECT_EQ(got.text, token) << name;
    EXPECT_EQ(to_string(got.kind), kind) << name;
    ++n;
  }
  EXPECT_EQ(n, 200u);
}
