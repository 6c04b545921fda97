#pragma once

// Shared test fixtures and brute-force oracles. Oracles here deliberately use
// the most direct formulation available so they stay independent of the
// presorted and integer-scored code paths in the library.

#include <cstddef>
#include <algorithm>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fga/inference.hpp"
#include "fga/rules.hpp"
#include "fga/tree.hpp"

namespace fixtures {

struct Instance {
    fga::ActivationMatrix matrix;
    std::vector<char> labels;
};

inline fga::ActivationMatrix make_matrix(std::string layer, std::size_t rows, std::size_t cols) {
    fga::ActivationMatrix m;
    m.layer_name = std::move(layer);
    m.cols = cols;
    m.values.assign(rows * cols, 0.0);
    for (std::size_t i = 0; i < rows; ++i) m.sample_ids.push_back("s" + std::to_string(i));
    return m;
}

// Columns alternate between continuous values, a handful of repeated levels
// (ties and duplicate rows), and relu-like zeros. Labels are either random or
// planted on a column threshold with some noise.
inline Instance random_instance(std::mt19937_64& rng, std::size_t max_rows, std::size_t max_cols,
                                bool full_size = false) {
    std::uniform_int_distribution<std::size_t> nrows(full_size ? max_rows : 1, max_rows),
        ncols(full_size ? max_cols : 1, max_cols);
    const std::size_t rows = nrows(rng), cols = ncols(rng);
    Instance inst{make_matrix("L", rows, cols), std::vector<char>(rows)};
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_int_distribution<int> kind(0, 2), levels(0, 4);
    std::vector<int> col_kind(cols);
    for (auto& k : col_kind) k = kind(rng);
    for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
            double v = unit(rng);
            if (col_kind[c] == 1) v = 0.25 * levels(rng);
            if (col_kind[c] == 2) v = v < 0.5 ? 0.0 : v;
            inst.matrix.values[r * cols + c] = v;
        }
    }
    const bool planted = unit(rng) < 0.5;
    const std::size_t pc = std::uniform_int_distribution<std::size_t>(0, cols - 1)(rng);
    const double p_present = unit(rng);
    for (std::size_t r = 0; r < rows; ++r) {
        if (planted) inst.labels[r] = (inst.matrix.at(r, pc) > 0.5) != (unit(rng) < 0.05);
        else inst.labels[r] = unit(rng) < p_present;
    }
    return inst;
}

// Weighted Gini of the <=/> partition, from scratch.
inline double weighted_gini(const fga::ActivationMatrix& m, std::span<const char> labels, std::size_t col,
                            double threshold) {
    double lp = 0, la = 0, rp = 0, ra = 0;
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const bool left = m.at(r, col) <= threshold;
        if (labels[r]) (left ? lp : rp) += 1;
        else (left ? la : ra) += 1;
    }
    auto gini = [](double p, double a) {
        const double n = p + a;
        if (n == 0) return 0.0;
        return 1.0 - (p / n) * (p / n) - (a / n) * (a / n);
    };
    const double n = lp + la + rp + ra;
    return (lp + la) / n * gini(lp, la) + (rp + ra) / n * gini(rp, ra);
}

// Minimum weighted Gini over every (column, midpoint) pair, or nullopt if
// every column is constant.
inline std::optional<double> brute_force_min_gini(const fga::ActivationMatrix& m, std::span<const char> labels) {
    std::optional<double> best;
    for (std::size_t c = 0; c < m.cols; ++c) {
        std::vector<double> vals;
        for (std::size_t r = 0; r < m.rows(); ++r) vals.push_back(m.at(r, c));
        std::sort(vals.begin(), vals.end());
        vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
        for (std::size_t i = 0; i + 1 < vals.size(); ++i) {
            const double g = weighted_gini(m, labels, c, (vals[i] + vals[i + 1]) / 2);
            if (!best || g < *best) best = g;
        }
    }
    return best;
}

inline fga::ConfusionCounts naive_confusion(const fga::Rule& rule, const fga::ActivationMatrix& m,
                                            std::span<const char> presence) {
    fga::ConfusionCounts c;
    for (std::size_t r = 0; r < m.rows(); ++r) {
        bool sat = true;
        for (const auto& a : rule.atoms) {
            const double v = m.values[r * m.cols + a.neuron.index];
            if (a.cmp == fga::Comparator::le ? !(v <= a.threshold) : !(v > a.threshold)) sat = false;
        }
        if (sat && presence[r]) ++c.tp;
        if (sat && !presence[r]) ++c.fp;
        if (!sat && presence[r]) ++c.fn;
        if (!sat && !presence[r]) ++c.tn;
    }
    return c;
}

// The worked example tree: four leaves with (present, absent) tallies
// (212,0), (0,87), (66,3), (0,192) and a single pure present leaf reached by
// N_{2,15} <= 0.68 and N_{2,9} <= 0.34.
struct WorkedExample {
    fga::ActivationMatrix matrix;
    std::vector<char> presence;
};

inline WorkedExample worked_example_data() {
    constexpr std::size_t cols = 19;
    WorkedExample f{make_matrix("2", 560, cols), {}};
    std::size_t r = 0;
    auto add = [&](std::size_t n, bool present, double n15, double n9, double n18) {
        for (std::size_t i = 0; i < n; ++i, ++r) {
            for (std::size_t c = 0; c < cols; ++c) f.matrix.values[r * cols + c] = 0.5;
            f.matrix.values[r * cols + 15] = n15;
            f.matrix.values[r * cols + 9] = n9;
            f.matrix.values[r * cols + 18] = n18;
            f.presence.push_back(present);
        }
    };
    add(212, true, 0.67, 0.30, 0.71);
    add(87, false, 0.67, 0.38, 0.71);
    add(66, true, 0.69, 0.30, 0.69);
    add(3, false, 0.69, 0.30, 0.69);
    add(192, false, 0.69, 0.30, 0.71);
    return f;
}

}  // namespace fixtures
