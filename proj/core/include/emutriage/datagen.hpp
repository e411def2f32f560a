#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "emutriage/ingest.hpp"

namespace emutriage {

/// Signature tokens are unified tokens ("CreateFile", "LoadLibrary->ws2_32.dll",
/// "GetProcAddress->virtualalloc"); the generator emits raw calls that unify
/// back to them.
struct FamilySpec {
  std::string name;
  std::size_t n_samples = 0;
  std::vector<std::string> signature_tokens;
  double signature_rate = 1.0;        // per-token inclusion probability
  double shared_noise_tokens = 3.0;   // Poisson mean of draws from the noise pool
  std::optional<std::string> confuse_with;
  double confuse_fraction = 0.8;      // share of the partner's signature reused
};

struct BenignSpec {
  std::size_t n_samples = 0;
  std::vector<std::string> token_pool;
  double token_rate = 0.5;
  double shared_noise_tokens = 3.0;
};

struct SynthSpec {
  std::vector<FamilySpec> families;
  BenignSpec benign;
  std::vector<std::string> noise_pool;
  bool raw_variants = true;  // emit A/W/Ex and CRT alias spellings
  bool emit_binaries = true;
  std::uint64_t seed = 0;
};

struct SyntheticSample {
  EmulationReport report;
  ManifestEntry entry;
  std::vector<std::uint8_t> binary;  // empty when binaries are off
};

struct SyntheticCorpus {
  std::vector<SyntheticSample> samples;  // benign first, then families in spec order
};

/// Throws InvalidSpec.
void validate(const SynthSpec& spec);

/// Signature token list actually used by each family after confusable
/// pairs borrow from their partner.
std::vector<std::vector<std::string>> effective_signatures(const SynthSpec& spec);

SyntheticCorpus generate(const SynthSpec& spec, unsigned jobs = 1);

/// Writes reports/<id>.json, binaries/<id>.exe, manifest.csv and spec.json.
void write_corpus(const std::filesystem::path& dir, const SyntheticCorpus& corpus, const SynthSpec& spec);

SynthSpec synth_spec_from_json(std::string_view text);
std::string synth_spec_to_json(const SynthSpec& spec);

std::vector<std::string> preset_names();
/// Throws InvalidSpec for an unknown name.
SynthSpec preset(std::string_view name, std::uint64_t seed);

/// Canonical Win32 names used by the presets; each is a fixpoint of
/// unify_name.
std::span<const std::string_view> synthetic_api_names() noexcept;

}  // namespace emutriage
