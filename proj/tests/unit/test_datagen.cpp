#include <gtest/gtest.h>

#include <map>
#include <set>

#include "emutriage/datagen.hpp"
#include "emutriage/pe_static.hpp"
#include "emutriage/unify.hpp"
#include "fixtures.hpp"

using namespace emutriage;
using emutriage::testing::code_of;
using emutriage::testing::TempDir;

namespace {

// Every token a sample may produce: the signature or pool tokens plus the
// API half of argument tokens.
std::set<std::string> with_api_halves(std::set<std::string> tokens) {
  for (auto t : std::set<std::string>(tokens)) {
    const auto arrow = t.find("->");
    if (arrow != std::string::npos) tokens.insert(t.substr(0, arrow));
  }
  return tokens;
}

SynthSpec tiny_spec() {
  SynthSpec spec;
  spec.benign.n_samples = 5;
  spec.benign.token_pool = {"GetTickCount", "Sleep"};
  spec.noise_pool = {"GetACP"};
  FamilySpec f;
  f.name = "Zed";
  f.n_samples = 5;
  f.signature_tokens = {"CreateFile", "LoadLibrary->ws2_32.dll", "GetProcAddress->virtualalloc", "mangled::Hook"};
  spec.families.push_back(f);
  spec.seed = 4;
  return spec;
}

}  // namespace

TEST(Datagen, ApiNamesAreUnifyFixpoints) {
  const auto& aliases = AliasTable::builtin();
  std::set<std::string_view> distinct;
  for (auto name : synthetic_api_names()) {
    EXPECT_EQ(unify_name(name, aliases).text, name);
    EXPECT_TRUE(distinct.insert(name).second) << name;
  }
}

TEST(Datagen, PresetsValidateAndAreDeterministic) {
  for (const auto& name : preset_names()) {
    const auto spec = preset(name, 11);
    EXPECT_NO_THROW(validate(spec)) << name;
    const auto a = generate(spec, 1);
    const auto b = generate(spec, 4);
    ASSERT_EQ(a.samples.size(), b.samples.size());
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
      EXPECT_EQ(serialize_report(a.samples[i].report), serialize_report(b.samples[i].report));
      EXPECT_EQ(a.samples[i].binary, b.samples[i].binary);
    }
    EXPECT_NE(serialize_report(generate(preset(name, 12)).samples[0].report),
              serialize_report(a.samples[0].report));
  }
  EXPECT_EQ(code_of([] { preset("nope", 0); }), ErrorCode::InvalidSpec);
}

TEST(Datagen, PresetShapes) {
  const auto mini = generate(preset("paper-mini", 1));
  std::map<std::string, std::size_t> families;
  for (const auto& s : mini.samples) ++families[s.entry.family];
  EXPECT_EQ(families.size(), 6u);
  EXPECT_EQ(families.at("Benign"), 100u);
  for (const auto& [name, n] : families) EXPECT_EQ(n, 100u) << name;
  EXPECT_EQ(mini.samples.front().entry.cls, SampleClass::benign);
  EXPECT_EQ(mini.samples.back().entry.cls, SampleClass::malicious);
}

TEST(Datagen, UnifiedTokensStayInsideTheSpec) {
  const auto& aliases = AliasTable::builtin();
  for (const auto& name : preset_names()) {
    const auto spec = preset(name, 3);
    const auto sigs = effective_signatures(spec);
    std::map<std::string, std::set<std::string>> allowed;
    std::set<std::string> noise(spec.noise_pool.begin(), spec.noise_pool.end());
    for (std::size_t f = 0; f < spec.families.size(); ++f) {
      auto tokens = noise;
      tokens.insert(sigs[f].begin(), sigs[f].end());
      allowed[spec.families[f].name] = with_api_halves(tokens);
    }
    auto benign = noise;
    benign.insert(spec.benign.token_pool.begin(), spec.benign.token_pool.end());
    allowed["Benign"] = with_api_halves(benign);

    bool saw_variant = false;
    for (const auto& s : generate(spec).samples) {
      for (const auto& call : s.report.calls) saw_variant |= unify_name(call.api_name, aliases).text != call.api_name;
      const auto counts = featurize_report(s.report, aliases);
      for (const auto& [token, count] : counts.items()) {
        EXPECT_TRUE(allowed.at(s.entry.family).count(token.text)) << name << " " << s.entry.family << " " << token.text;
        EXPECT_GT(count, 0u);
      }
    }
    EXPECT_TRUE(saw_variant) << name;
  }
}

TEST(Datagen, ConfusablePartnersShareSignatureAndImphash) {
  const auto spec = preset("confusable", 2);
  const auto sigs = effective_signatures(spec);
  // Ursnif (1) borrows 8 of Dridex's (0) 10 tokens
  std::size_t shared = 0;
  for (const auto& t : sigs[1]) shared += std::count(sigs[0].begin(), sigs[0].end(), t);
  EXPECT_EQ(shared, 8u);
  EXPECT_EQ(sigs[4], spec.families[4].signature_tokens);

  std::map<std::string, std::set<std::string>> digests;
  for (const auto& s : generate(spec).samples) {
    digests[s.entry.family].insert(imphash(parse_imports(s.binary)));
  }
  for (const auto& [family, set] : digests) {
    if (family != "Benign") EXPECT_EQ(set.size(), 1u) << family;
  }
  EXPECT_EQ(digests["Dridex"], digests["Ursnif"]);
  EXPECT_NE(digests["Dridex"], digests["AsyncRAT"]);
}

TEST(Datagen, WriteCorpusLoadsBack) {
  TempDir dir;
  const auto spec = tiny_spec();
  const auto corpus = generate(spec);
  write_corpus(dir.path(), corpus, spec);
  const auto loaded = load_corpus(dir / "manifest.csv", dir / "reports", LoadOptions{true, {}, 1});
  ASSERT_EQ(loaded.entries.size(), 10u);
  EXPECT_TRUE(loaded.failures.empty());
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(serialize_report(loaded.entries[i].report), serialize_report(corpus.samples[i].report));
    ASSERT_TRUE(loaded.entries[i].binary_path);
    EXPECT_TRUE(std::filesystem::exists(*loaded.entries[i].binary_path));
  }
  EXPECT_EQ(synth_spec_to_json(synth_spec_from_json(read_text_file(dir / "spec.json"))), synth_spec_to_json(spec));
}

TEST(Datagen, NoBinariesMode) {
  auto spec = tiny_spec();
  spec.emit_binaries = false;
  spec.raw_variants = false;
  const auto corpus = generate(spec);
  for (const auto& s : corpus.samples) {
    EXPECT_TRUE(s.binary.empty());
    EXPECT_FALSE(s.entry.binary_path);
    for (const auto& call : s.report.calls) {
      const auto token = unify_name(call.api_name, AliasTable::builtin());
      if (token.kind == TokenKind::api) EXPECT_EQ(token.text, call.api_name);
    }
  }
}

TEST(Datagen, ValidationErrors) {
  const auto expect_invalid = [](const std::function<void(SynthSpec&)>& edit) {
    auto spec = tiny_spec();
    edit(spec);
    EXPECT_EQ(code_of([&] { validate(spec); }), ErrorCode::InvalidSpec);
  };
  expect_invalid([](SynthSpec& s) { s.families[0].name = "Benign"; });
  expect_invalid([](SynthSpec& s) { s.families.push_back(s.families[0]); });
  expect_invalid([](SynthSpec& s) { s.families[0].signature_tokens.push_back("CreateFileA"); });
  expect_invalid([](SynthSpec& s) { s.families[0].signature_tokens.push_back("Sleep->x.dll"); });
  expect_invalid([](SynthSpec& s) { s.families[0].signature_tokens.push_back("LoadLibrary->C:\\x.dll"); });
  expect_invalid([](SynthSpec& s) { s.families[0].confuse_with = "Nobody"; });
  expect_invalid([](SynthSpec& s) { s.families[0].confuse_with = "Zed"; });
  expect_invalid([](SynthSpec& s) { s.families[0].signature_rate = 0.0; });
  expect_invalid([](SynthSpec& s) { s.noise_pool.clear(); });
  expect_invalid([](SynthSpec& s) {
    s.families.clear();
    s.benign.n_samples = 0;
  });
  EXPECT_EQ(code_of([] { synth_spec_from_json("{\"families\": 3}"); }), ErrorCode::InvalidSpec);
}
