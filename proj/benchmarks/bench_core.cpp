#include <random>

#include <benchmark/benchmark.h>

#include "fga/inference.hpp"
#include "fga/rules.hpp"
#include "fga/synthetic.hpp"
#include "fga/tree.hpp"
#include "fixtures.hpp"

namespace {

fixtures::Instance instance(std::size_t rows, std::size_t cols) {
    std::mt19937_64 rng(rows * 131 + cols);
    return fixtures::random_instance(rng, rows, cols, true);
}

void BM_BuildTree(benchmark::State& state) {
    const auto inst = instance(static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)));
    for (auto _ : state) benchmark::DoNotOptimize(fga::build_tree(inst.matrix, inst.labels));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_BuildTree)->Args({1000, 16})->Args({5000, 64})->Args({20000, 84})->Unit(benchmark::kMillisecond);

void BM_BuildTreeSharedIndex(benchmark::State& state) {
    const auto inst = instance(static_cast<std::size_t>(state.range(0)), static_cast<std::size_t>(state.range(1)));
    const fga::ColumnIndex index(inst.matrix);
    for (auto _ : state) benchmark::DoNotOptimize(fga::build_tree(index, inst.labels));
}
BENCHMARK(BM_BuildTreeSharedIndex)->Args({5000, 64})->Args({20000, 84})->Unit(benchmark::kMillisecond);

void BM_EvaluateRule(benchmark::State& state) {
    const auto inst = instance(static_cast<std::size_t>(state.range(0)), 32);
    const auto rules = fga::extract_pure_rules(fga::build_tree(inst.matrix, inst.labels));
    const auto top = fga::select_top_rule(rules);
    if (!top) {
        state.SkipWithError("no rule");
        return;
    }
    for (auto _ : state) benchmark::DoNotOptimize(fga::evaluate_rule(*top, inst.matrix, inst.labels));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EvaluateRule)->Arg(10000)->Arg(100000);

void BM_ForwardPlanted(benchmark::State& state) {
    const auto model = fga::planted_model();
    fga::Tensor input({4, 4});
    for (std::size_t i = 0; i < input.data.size(); ++i) input.data[i] = static_cast<double>(i) / 16.0;
    const std::vector<std::string> capture{"fc1", "fc2"};
    for (auto _ : state) benchmark::DoNotOptimize(fga::forward(model, input, capture));
}
BENCHMARK(BM_ForwardPlanted);

}  // namespace

BENCHMARK_MAIN();
