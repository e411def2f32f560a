#include <benchmark/benchmark.h>

#include "emutriage/cluster.hpp"
#include "emutriage/datagen.hpp"
#include "emutriage/ml.hpp"
#include "emutriage/pe_static.hpp"
#include "emutriage/select.hpp"
#include "emutriage/unify.hpp"

using namespace emutriage;

namespace {

struct Labeled {
  SparseMatrix x;
  LabelVector y;
};

// Count-like columns; only the first five decide the label.
Labeled count_matrix(std::size_t n_rows, std::size_t n_cols, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::vector<double>> dense(n_rows, std::vector<double>(n_cols));
  std::vector<std::string> names;
  for (auto& row : dense) {
    double sum = 0.0;
    for (std::size_t c = 0; c < n_cols; ++c) {
      row[c] = static_cast<double>(rng.uniform_index(5));
      if (c < 5) sum += row[c];
    }
    names.push_back(sum > 10.0 ? "malicious" : "benign");
  }
  return {SparseMatrix::from_dense(dense), LabelVector::from_names(names)};
}

const SyntheticCorpus& mini_corpus() {
  static const SyntheticCorpus corpus = generate(preset("paper-mini", 1));
  return corpus;
}

}  // namespace

static void BM_UnifyName(benchmark::State& state) {
  const auto& aliases = AliasTable::builtin();
  const std::vector<std::string> names{"CreateFileW", "LoadLibraryExA", "NtAllocateVirtualMemory", "RegOpenKeyExW",
                                       "InternetOpenUrlA", "GetProcAddress", "_CorExeMain", "WSAStartup"};
  for (auto _ : state) {
    for (const auto& n : names) benchmark::DoNotOptimize(unify_name(n, aliases));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(names.size()));
}
BENCHMARK(BM_UnifyName);

static void BM_FeaturizeReports(benchmark::State& state) {
  const auto& aliases = AliasTable::builtin();
  const auto& corpus = mini_corpus();
  for (auto _ : state) {
    for (const auto& s : corpus.samples) benchmark::DoNotOptimize(featurize_report(s.report, aliases));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(corpus.samples.size()));
}
BENCHMARK(BM_FeaturizeReports)->Unit(benchmark::kMillisecond);

static void BM_Imphash(benchmark::State& state) {
  const auto& binary = mini_corpus().samples.back().binary;
  for (auto _ : state) benchmark::DoNotOptimize(imphash(parse_imports(binary)));
}
BENCHMARK(BM_Imphash);

static void BM_RandomForestFit(benchmark::State& state) {
  const auto d = count_matrix(static_cast<std::size_t>(state.range(0)), 100, 1);
  RfParams p;
  p.n_estimators = 20;
  for (auto _ : state) benchmark::DoNotOptimize(fit_random_forest(d.x, d.y, p));
}
BENCHMARK(BM_RandomForestFit)->Arg(200)->Arg(800)->Unit(benchmark::kMillisecond);

static void BM_GbtFit(benchmark::State& state) {
  const auto d = count_matrix(static_cast<std::size_t>(state.range(0)), 100, 2);
  GbtParams p;
  p.n_rounds = 20;
  p.max_depth = 5;
  for (auto _ : state) benchmark::DoNotOptimize(fit_gbt(d.x, d.y, p));
}
BENCHMARK(BM_GbtFit)->Arg(200)->Arg(800)->Unit(benchmark::kMillisecond);

static void BM_KnnPredict(benchmark::State& state) {
  const auto train = count_matrix(static_cast<std::size_t>(state.range(0)), 100, 3);
  const auto queries = count_matrix(100, 100, 4);
  const auto model = fit_knn(train.x, train.y, KnnParams{});
  for (auto _ : state) benchmark::DoNotOptimize(predict(model, queries.x));
}
BENCHMARK(BM_KnnPredict)->Arg(500)->Arg(2000)->Unit(benchmark::kMillisecond);

static void BM_Boruta(benchmark::State& state) {
  const auto d = count_matrix(400, 100, 5);
  BorutaParams p;
  p.max_iter = 10;
  for (auto _ : state) benchmark::DoNotOptimize(boruta(d.x, d.y, p));
}
BENCHMARK(BM_Boruta)->Unit(benchmark::kMillisecond);

static void BM_KMeans(benchmark::State& state) {
  Rng data_rng(6);
  std::vector<Point> points(42, Point(42));
  for (auto& p : points) {
    for (auto& v : p) v = data_rng.uniform01();
  }
  std::uint64_t seed = 0;
  for (auto _ : state) {
    Rng rng(seed++);
    benchmark::DoNotOptimize(kmeans(points, 12, rng));
  }
}
BENCHMARK(BM_KMeans);

BENCHMARK_MAIN();
