// Runs every acceptance criterion and prints one PASS/FAIL line for each.
// Exit status is nonzero if any criterion fails or exceeds its time limit.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>

#include "bundle.hpp"
#include "fga/dataset.hpp"
#include "fga/pipeline.hpp"
#include "fga/config.hpp"
#include "fga/synthetic.hpp"
#include "fixtures.hpp"

#ifndef FGA_CLI_PATH
#error "FGA_CLI_PATH must point at the fga executable"
#endif

using namespace fga;

namespace {

struct Outcome {
    bool ok = true;
    std::string detail;
};

#define EXPECT(cond, msg)                           \
    do {                                            \
        if (!(cond)) return Outcome{false, (msg)};  \
    } while (0)

std::string fmt(const char* f, auto... args) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

Outcome pure_leaf_soundness() {
    std::mt19937_64 rng(1001);
    std::size_t rules = 0, max_rows = 0;
    for (int it = 0; it < 50; ++it) {
        auto inst = fixtures::random_instance(rng, 5000, 64, it < 5);
        max_rows = std::max(max_rows, inst.matrix.rows());
        const auto tree = build_tree(inst.matrix, inst.labels);
        for (const auto& r : extract_pure_rules(tree)) {
            ++rules;
            const auto c = fixtures::naive_confusion(r, inst.matrix, inst.labels);
            EXPECT(c.fp == 0, fmt("instance %d: rule with %zu false positives", it, c.fp));
            EXPECT(c.tp == r.support_present,
                   fmt("instance %d: tp %zu != support %zu", it, c.tp, r.support_present));
            EXPECT(evaluate_rule(r, inst.matrix, inst.labels) == c, fmt("instance %d: evaluate_rule disagrees", it));
        }
    }
    return {true, fmt("50 instances, %zu rules, up to %zu rows", rules, max_rows)};
}

Outcome split_oracle() {
    std::mt19937_64 rng(2002);
    std::size_t splits = 0;
    double worst = 0;
    for (int it = 0; it < 500; ++it) {
        auto inst = fixtures::random_instance(rng, 200, 8);
        const auto want = fixtures::brute_force_min_gini(inst.matrix, inst.labels);
        const auto got = best_split(inst.matrix, inst.labels);
        EXPECT(got.has_value() == want.has_value(), fmt("instance %d: split existence differs", it));
        if (!got) continue;
        ++splits;
        const double recomputed =
            fixtures::weighted_gini(inst.matrix, inst.labels, got->neuron.index, got->threshold);
        const double err = std::max(std::abs(recomputed - *want), std::abs(got->weighted_impurity - *want));
        worst = std::max(worst, err);
        EXPECT(err <= 1e-12, fmt("instance %d: gini %.17g vs brute force %.17g", it, recomputed, *want));
        const auto tree = build_tree(inst.matrix, inst.labels);
        if (!tree.root().is_leaf()) {
            const double root = fixtures::weighted_gini(inst.matrix, inst.labels, tree.root().neuron,
                                                        tree.root().threshold);
            EXPECT(std::abs(root - *want) <= 1e-12, fmt("instance %d: tree root is not optimal", it));
        }
    }
    return {true, fmt("500 instances, %zu splits, max deviation %.3g", splits, worst)};
}

Outcome worked_example() {
    const auto fx = fixtures::worked_example_data();
    const auto tree = build_tree(fx.matrix, fx.presence);
    std::vector<std::pair<std::size_t, std::size_t>> tallies;
    for (auto leaf : tree.leaves()) tallies.emplace_back(tree.nodes[leaf].count_present, tree.nodes[leaf].count_absent);
    const std::vector<std::pair<std::size_t, std::size_t>> expected{{212, 0}, {0, 87}, {66, 3}, {0, 192}};
    EXPECT(tallies == expected, "leaf tallies differ");
    const auto rules = extract_pure_rules(tree);
    EXPECT(rules.size() == 1, fmt("%zu rules", rules.size()));
    const auto& r = rules[0];
    EXPECT(r.support_present == 212, "support is not 212");
    EXPECT(r.atoms.size() == 2, "rule does not have two atoms");
    EXPECT((r.atoms[0].neuron == NeuronRef{"2", 15}) && r.atoms[0].cmp == Comparator::le &&
               std::abs(r.atoms[0].threshold - 0.68) < 1e-12,
           "first atom is not N2,15 <= 0.68");
    EXPECT((r.atoms[1].neuron == NeuronRef{"2", 9}) && r.atoms[1].cmp == Comparator::le &&
               std::abs(r.atoms[1].threshold - 0.34) < 1e-12,
           "second atom is not N2,9 <= 0.34");
    return {true, "(212,0) (0,87) (66,3) (0,192); rule " + render_rule(r, "feature", 2)};
}

Outcome patch_geometry() {
    const std::size_t H = 1040, W = 1388;
    Tensor image({H, W});
    std::mt19937_64 rng(4);
    for (auto& v : image.data) v = static_cast<double>(rng() % 256) / 255.0;
    const auto patches = extract_patches(image, 36, 32);
    EXPECT(patches.size() == 1376, fmt("%zu patches", patches.size()));
    for (const auto& p : patches) {
        EXPECT(p.pixels.shape == (Shape{36, 36}), "patch shape");
        for (std::size_t r = 0; r < 36; ++r)
            for (std::size_t c = 0; c < 36; ++c)
                EXPECT(p.pixels.data[r * 36 + c] == image.data[(p.row + r) * W + p.col + c],
                       fmt("patch at (%zu,%zu) differs from its window", p.row, p.col));
    }
    return {true, "1376 patches, all equal to their source windows"};
}

Outcome combination_count() {
    const auto combos = enumerate_feature_combos(numeric_class_names(10), 2, 4);
    std::set<std::vector<ClassLabel>> unique;
    for (const auto& c : combos) unique.insert(c.classes);
    EXPECT(combos.size() == 375, fmt("%zu specs", combos.size()));
    EXPECT(unique.size() == 375, "duplicate specs");
    return {true, "375 specs, no duplicates"};
}

Outcome metric_oracle() {
    std::mt19937_64 rng(6006);
    std::size_t undefined_precision = 0;
    for (int it = 0; it < 1000; ++it) {
        auto inst = fixtures::random_instance(rng, 120, 8);
        Rule rule;
        rule.layer_name = inst.matrix.layer_name;
        const auto atoms = rng() % 5;
        for (std::size_t a = 0; a < atoms; ++a) {
            const auto col = rng() % inst.matrix.cols;
            const double t = rng() % 4 ? inst.matrix.at(rng() % inst.matrix.rows(), col)
                                       : static_cast<double>(rng() % 1000) / 1000.0;
            rule.atoms.push_back({{rule.layer_name, col}, rng() % 2 ? Comparator::le : Comparator::gt, t});
        }
        const auto got = evaluate_rule(rule, inst.matrix, inst.labels);
        const auto want = fixtures::naive_confusion(rule, inst.matrix, inst.labels);
        EXPECT(got == want, fmt("triple %d: counts differ", it));
        EXPECT(got.total() == inst.matrix.rows(), fmt("triple %d: counts do not sum to rows", it));
        const auto p = got.precision(), r = got.recall();
        if (want.tp + want.fp == 0) {
            EXPECT(!p, fmt("triple %d: precision should be undefined", it));
            ++undefined_precision;
        } else {
            EXPECT(p && *p == 100.0 * double(want.tp) / double(want.tp + want.fp), fmt("triple %d: precision", it));
        }
        if (want.tp + want.fn == 0) EXPECT(!r, fmt("triple %d: recall should be undefined", it));
        else EXPECT(r && *r == 100.0 * double(want.tp) / double(want.tp + want.fn), fmt("triple %d: recall", it));
    }
    return {true, fmt("1000 triples, %zu with undefined precision", undefined_precision)};
}

Outcome kfold_properties() {
    std::mt19937_64 rng(7007);
    for (int it = 0; it < 200; ++it) {
        const std::size_t n = 2 + rng() % 3000;
        const std::size_t k = 2 + rng() % std::min<std::size_t>(n - 1, 20);
        const std::uint64_t seed = rng();
        const auto a = kfold(n, k, seed);
        std::vector<int> hits(n, 0);
        std::size_t lo = n, hi = 0;
        for (std::size_t f = 0; f < k; ++f) {
            const auto m = a.mask(f);
            std::size_t size = 0;
            for (std::size_t i = 0; i < n; ++i) {
                hits[i] += m[i];
                size += m[i];
            }
            lo = std::min(lo, size);
            hi = std::max(hi, size);
        }
        for (std::size_t i = 0; i < n; ++i) EXPECT(hits[i] == 1, fmt("n=%zu k=%zu: sample %zu in %d folds", n, k, i, hits[i]));
        EXPECT(hi - lo <= 1, fmt("n=%zu k=%zu: fold sizes %zu..%zu", n, k, lo, hi));
        EXPECT(kfold(n, k, seed).fold == a.fold, "assignment not reproducible");
    }

    // identical folds: same model, same split, run twice
    const auto dir = fixtures::temp_dir("acceptance-degenerate");
    const auto config = parse_config(write_planted_experiment(dir, {20, 10, 2, 11}));
    std::vector<AverageRow> folds;
    for (int f = 0; f < 2; ++f) folds.push_back(run_fga(config).average);
    const auto s = summarize_folds(folds);
    for (const auto* v : {&s.max2min.train_recall, &s.max2min.test_precision, &s.max2min.test_recall, &s.max2min.length})
        EXPECT(v->has_value() && **v == 0.0, "max2min is not 0 for identical folds");
    return {true, "200 (n,k,seed) triples disjoint, covering, balanced; identical folds give max2min 0"};
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome end_to_end_determinism() {
    const auto dir = fixtures::temp_dir("acceptance-e2e");
    const auto config = write_planted_experiment(dir);
    for (const char* out : {"run1", "run2"}) {
        const std::string cmd = std::string("\"") + FGA_CLI_PATH + "\" -q analyze --config \"" + config.string() +
                                "\" --set output_dir=" + out + " > /dev/null";
        const int rc = std::system(cmd.c_str());
        EXPECT(rc == 0, fmt("fga analyze exited with %d", rc));
    }
    std::size_t compared = 0;
    for (const char* name : {"report.csv", "report.md"}) {
        const auto a = slurp(dir / "run1" / name), b = slurp(dir / "run2" / name);
        EXPECT(!a.empty(), std::string(name) + " is empty");
        EXPECT(a == b, std::string(name) + " differs between runs");
        ++compared;
    }
    return {true, fmt("%zu report files byte-identical across two runs", compared)};
}

struct Criterion {
    int id;
    const char* name;
    double limit_seconds;
    std::function<Outcome()> run;
};

}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {1, "pure-leaf soundness", 60, pure_leaf_soundness},
        {2, "split-oracle equivalence", 60, split_oracle},
        {3, "worked-example tree and rule", 1, worked_example},
        {4, "patch geometry", 1, patch_geometry},
        {5, "combination count", 1, combination_count},
        {6, "metric oracle", 30, metric_oracle},
        {7, "k-fold properties", 10, kfold_properties},
        {8, "end-to-end determinism", 10, end_to_end_determinism},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (o.ok && secs > c.limit_seconds) {
            o.ok = false;
            o.detail += fmt(" [over the %.0f s limit]", c.limit_seconds);
        }
        if (!o.ok) ++failed;
        std::printf("%s [%d] %s: %s (%.3f s)\n", o.ok ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str(), secs);
        std::fflush(stdout);
    }
    std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
    return failed ? 1 : 0;
}
