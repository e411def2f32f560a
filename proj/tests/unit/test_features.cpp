#include <gtest/gtest.h>

#include "emutriage/digest.hpp"
#include "emutriage/features.hpp"
#include "emutriage/io.hpp"
#include "emutriage/pe_static.hpp"
#include "emutriage/pipeline.hpp"
#include "fixtures.hpp"

using namespace emutriage;
using emutriage::testing::code_of;
using emutriage::testing::TempDir;

namespace {

TokenCounts counts(std::initializer_list<std::pair<const char*, std::uint64_t>> items) {
  TokenCounts c;
  for (const auto& [text, n] : items) c.add(FeatureToken{text, TokenKind::api}, n);
  return c;
}

std::vector<std::string> vocab_texts(const FeatureVocabulary& v) {
  std::vector<std::string> out;
  for (const auto& t : v.tokens()) out.push_back(t.text);
  return out;
}

SparseRow row(std::vector<std::uint32_t> cols, std::vector<double> values) {
  return {std::move(cols), std::move(values)};
}

}  // namespace

TEST(BuildVocabulary, UnionInFirstSeenOrder) {
  const std::vector<TokenCounts> a{counts({{"A", 1}}), counts({{"B", 2}})};
  EXPECT_EQ(vocab_texts(build_vocabulary(a)), (std::vector<std::string>{"A", "B"}));
  const std::vector<TokenCounts> b{counts({{"A", 1}}), counts({{"A", 5}})};
  EXPECT_EQ(vocab_texts(build_vocabulary(b)), (std::vector<std::string>{"A"}));
  const std::vector<TokenCounts> c{counts({{"C", 1}, {"A", 1}}), counts({{"B", 1}, {"C", 2}})};
  EXPECT_EQ(vocab_texts(build_vocabulary(c)), (std::vector<std::string>{"C", "A", "B"}));
}

TEST(BuildVocabulary, TenDistinctTokens) {
  std::vector<TokenCounts> corpus(4);
  const char* names[] = {"t0", "t1", "t2", "t3", "t4", "t5", "t6", "t7", "t8", "t9"};
  for (int i = 0; i < 20; ++i) corpus[i % 4].add(FeatureToken{names[(i * 3) % 10], TokenKind::api}, 1);
  EXPECT_EQ(build_vocabulary(corpus).size(), 10u);
}

TEST(BuildVocabulary, EmptyCorpus) {
  EXPECT_EQ(code_of([] { build_vocabulary({}); }), ErrorCode::EmptyCorpus);
}

TEST(Vectorize, DropsUnknownTokens) {
  const std::vector<TokenCounts> corpus{counts({{"A", 1}, {"B", 1}})};
  const auto vocab = build_vocabulary(corpus);
  EXPECT_EQ(vectorize(TokenCounts{}, vocab).row.nnz(), 0u);
  EXPECT_EQ(vectorize(counts({{"A", 3}}), vocab).row, row({0}, {3}));
  const auto v = vectorize(counts({{"Z", 9}, {"A", 1}}), vocab);
  EXPECT_EQ(v.row, row({0}, {1}));
  EXPECT_EQ(v.skipped, 1u);
  EXPECT_EQ(vectorize(counts({{"B", 2}, {"A", 1}}), vocab).row, row({0, 1}, {1, 2}));
}

TEST(Vectorize, LinearInCounts) {
  const auto m1 = counts({{"A", 1}, {"B", 4}});
  const auto m2 = counts({{"B", 2}, {"C", 7}});
  const std::vector<TokenCounts> corpus{m1, m2};
  const auto vocab = build_vocabulary(corpus);
  TokenCounts merged = m1;
  for (const auto& [t, n] : m2.items()) merged.add(t, n);
  const auto a = vectorize(m1, vocab).row, b = vectorize(m2, vocab).row, ab = vectorize(merged, vocab).row;
  for (std::uint32_t c = 0; c < vocab.size(); ++c) {
    const RowView va{a.cols, a.values}, vb{b.cols, b.values}, vab{ab.cols, ab.values};
    EXPECT_EQ(vab.value(c), va.value(c) + vb.value(c));
  }
}

TEST(SparseMatrix, FromRowsValidatesAndDropsZeros) {
  const auto m = SparseMatrix::from_rows(3, {row({0, 2}, {1, 0}), row({}, {})});
  EXPECT_EQ(m.n_rows(), 2u);
  EXPECT_EQ(m.nnz(), 1u);
  EXPECT_ANY_THROW(SparseMatrix::from_rows(3, {row({2, 1}, {1, 1})}));
  EXPECT_ANY_THROW(SparseMatrix::from_rows(2, {row({2}, {1})}));
}

TEST(SparseMatrix, SelectRowsAndColumns) {
  const auto m = SparseMatrix::from_dense({{1, 0, 2}, {0, 3, 0}, {4, 5, 6}});
  const std::vector<std::size_t> rows{2, 0};
  EXPECT_EQ(m.select_rows(rows).to_dense(), (std::vector<std::vector<double>>{{4, 5, 6}, {1, 0, 2}}));
  const std::vector<std::uint32_t> cols{0, 2};
  EXPECT_EQ(m.select_columns(cols).to_dense(), (std::vector<std::vector<double>>{{1, 2}, {0, 0}, {4, 6}}));
  const auto right = SparseMatrix::from_dense({{9}, {0}, {8}});
  EXPECT_EQ(m.hstack(right).to_dense(),
            (std::vector<std::vector<double>>{{1, 0, 2, 9}, {0, 3, 0, 0}, {4, 5, 6, 8}}));
}

TEST(Sparsity, Values) {
  EXPECT_DOUBLE_EQ(sparsity(SparseMatrix::from_dense({{1, 2}, {3, 4}})), 0.0);
  EXPECT_DOUBLE_EQ(sparsity(SparseMatrix::from_dense({{0, 2}, {0, 0}})), 0.75);
  EXPECT_EQ(code_of([] { sparsity(SparseMatrix{}); }), ErrorCode::EmptyMatrix);
  EXPECT_DOUBLE_EQ(sparsity(SparseMatrix::from_dense({{0, 0, 1}, {2, 0, 0}})),
                   sparsity(SparseMatrix::from_dense({{0, 2, 0}, {1, 0, 0}})));
}

TEST(AppendImphash, Indicators) {
  const auto base = SparseMatrix::from_dense({{1, 0}, {0, 2}, {3, 3}});
  FeatureVocabulary vocab;
  vocab.add({"A", TokenKind::api});
  vocab.add({"B", TokenKind::api});
  const std::string d1(32, 'a'), d2(32, 'b'), d3(32, 'c');

  const std::vector<std::optional<std::string>> same{d1, d1, d1};
  auto one = append_imphash_column(base, vocab, same);
  EXPECT_EQ(one.matrix.n_cols(), 3u);
  EXPECT_EQ(one.vocab.at(2).kind, TokenKind::imphash);
  EXPECT_EQ(one.vocab.at(2).text, "imphash::" + d1);
  for (std::size_t r = 0; r < 3; ++r) EXPECT_EQ(one.matrix.value(r, 2), 1.0);

  const std::vector<std::optional<std::string>> distinct{d1, d2, d3};
  auto three = append_imphash_column(base, vocab, distinct);
  EXPECT_EQ(three.matrix.n_cols(), 5u);
  EXPECT_EQ(three.matrix.to_dense(),
            (std::vector<std::vector<double>>{{1, 0, 1, 0, 0}, {0, 2, 0, 1, 0}, {3, 3, 0, 0, 1}}));

  const std::vector<std::optional<std::string>> missing{d1, std::nullopt, d1};
  auto partial = append_imphash_column(base, vocab, missing);
  EXPECT_EQ(partial.matrix.n_cols(), 3u);
  EXPECT_EQ(partial.matrix.value(1, 2), 0.0);

  const std::vector<std::optional<std::string>> short_list{d1};
  EXPECT_EQ(code_of([&] { append_imphash_column(base, vocab, short_list); }), ErrorCode::LengthMismatch);
}

TEST(LabelVector, FromNamesSortsClasses) {
  const std::vector<std::string> names{"z", "a", "z", "m"};
  const auto y = LabelVector::from_names(names);
  EXPECT_EQ(y.names, (std::vector<std::string>{"a", "m", "z"}));
  EXPECT_EQ(y.ids, (std::vector<std::uint32_t>{2, 0, 2, 1}));
  const std::vector<std::size_t> pick{0, 3};
  const auto s = y.select(pick);
  EXPECT_EQ(s.ids, (std::vector<std::uint32_t>{2, 1}));
  EXPECT_EQ(s.names, y.names);
}

class FeatureSetIo : public ::testing::Test {
 protected:
  Corpus make_corpus() {
    Corpus corpus;
    auto add = [&](const std::string& seed, SampleClass cls, std::string family, std::vector<ApiCallRecord> calls,
                   std::optional<std::filesystem::path> binary) {
      CorpusEntry e;
      e.report.sample_id = sha256_hex(seed);
      e.report.calls = std::move(calls);
      e.cls = cls;
      e.family = std::move(family);
      e.binary_path = std::move(binary);
      corpus.entries.push_back(std::move(e));
    };
    const auto good = dir / "good.exe";
    write_binary_file(good, build_pe({{"KERNEL32.dll", std::string("Sleep")}}, PeFlavor::pe32));
    const auto corrupt = dir / "corrupt.exe";
    write_binary_file(corrupt, {'M', 'Z', 0, 0});
    add("a", SampleClass::benign, "Benign", {{"CreateFileA", {}, 2}, {"CreateFileW", {}, 1}}, good);
    add("b", SampleClass::malicious, "Emotet", {{"LoadLibraryA", {"C:\\x\\WS2_32.dll"}, 1}}, corrupt);
    add("c", SampleClass::malicious, "Emotet, \"v2\"", {{"Sleep", {}, 4}, {"_stricmp", {}, 1}}, std::nullopt);
    return corpus;
  }

  TempDir dir;
};

TEST_F(FeatureSetIo, FeaturizeAndRoundTrip) {
  const auto corpus = make_corpus();
  std::vector<std::string> warnings;
  const auto set = featurize_with_imphash(corpus, AliasTable::builtin(), false, 1, &warnings);
  ASSERT_EQ(warnings.size(), 1u);  // corrupt PE
  EXPECT_EQ(set.matrix.n_rows(), 3u);
  EXPECT_EQ(set.matrix.value(0, static_cast<std::uint32_t>(*set.vocab.find("CreateFile"))), 3.0);
  const auto imph = set.vocab.find("imphash::" + imphash(ImportTable{{{"KERNEL32.dll", std::string("Sleep")}}}));
  ASSERT_TRUE(imph);
  EXPECT_EQ(set.matrix.value(0, static_cast<std::uint32_t>(*imph)), 1.0);
  EXPECT_EQ(set.matrix.value(1, static_cast<std::uint32_t>(*imph)), 0.0);
  EXPECT_TRUE(set.vocab.find("LoadLibrary->ws2_32.dll"));
  EXPECT_TRUE(set.vocab.find("stricmp"));

  write_feature_set(dir / "m", set, Provenance{"0.3.0", "abc", 9});
  EXPECT_TRUE(std::filesystem::exists(dir / "m" / "vocabulary.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "m" / "rows.jsonl"));
  EXPECT_TRUE(std::filesystem::exists(dir / "m" / "samples.csv"));
  const auto back = read_feature_set(dir / "m");
  EXPECT_EQ(back.vocab, set.vocab);
  EXPECT_EQ(back.matrix, set.matrix);
  EXPECT_EQ(back.samples, set.samples);
  EXPECT_EQ(back.class_labels().ids, set.class_labels().ids);
  EXPECT_EQ(back.family_labels().names, set.family_labels().names);
}

TEST_F(FeatureSetIo, StrictModeRethrowsCorruptPe) {
  const auto corpus = make_corpus();
  EXPECT_EQ(code_of([&] { featurize_with_imphash(corpus, AliasTable::builtin(), true, 1); }),
            ErrorCode::TruncatedHeader);
}

TEST_F(FeatureSetIo, ParallelFeaturizeMatchesSerial) {
  const auto corpus = make_corpus();
  const auto a = featurize_corpus(corpus, AliasTable::builtin(), {}, 1);
  const auto b = featurize_corpus(corpus, AliasTable::builtin(), {}, 4);
  EXPECT_EQ(a.vocab, b.vocab);
  EXPECT_EQ(a.matrix, b.matrix);
}
