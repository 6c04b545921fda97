#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fga/inference.hpp"

namespace fga {

struct TreeParams {
    std::optional<std::size_t> max_depth;  // unset = grow until pure
    std::size_t min_samples_split = 2;
};

enum class Comparator { le, gt };

/// One neuron-threshold test: `value(neuron) <= threshold` or `> threshold`.
struct Condition {
    NeuronRef neuron;
    Comparator cmp = Comparator::le;
    double threshold = 0.0;

    bool holds(double value) const { return cmp == Comparator::le ? value <= threshold : value > threshold; }
    auto operator<=>(const Condition&) const = default;
};

struct TreeNode {
    static constexpr std::size_t none = static_cast<std::size_t>(-1);

    std::size_t neuron = none;  // column index; `none` for leaves
    double threshold = 0.0;
    std::size_t left = none;    // value <= threshold
    std::size_t right = none;   // value > threshold
    std::size_t count_present = 0;
    std::size_t count_absent = 0;
    std::size_t depth = 0;

    bool is_leaf() const { return neuron == none; }
    bool is_pure() const { return count_present == 0 || count_absent == 0; }
};

/// Binary tree over one layer's activations and one present/absent labeling.
/// Nodes live in an arena; node 0 is the root.
struct DecisionTree {
    std::vector<TreeNode> nodes;
    std::string feature_name;
    std::string layer_name;
    std::size_t width = 0;  // activation columns the tree was trained on
    std::size_t n_train_rows = 0;
    TreeParams params;

    const TreeNode& root() const { return nodes.front(); }
    std::size_t depth() const;
    std::vector<std::size_t> leaves() const;
};

struct SplitResult {
    double threshold = 0.0;
    double weighted_gini = 0.0;
};

/// Best ≤/> split of a single column under weighted Gini impurity.
/// Candidates are midpoints of consecutive distinct values; ties resolve to the
/// lowest threshold. Returns nullopt for constant columns.
std::optional<SplitResult> find_best_split(std::span<const double> column, std::span<const char> labels);

struct SplitCandidate {
    NeuronRef neuron;
    double threshold = 0.0;
    double weighted_impurity = 0.0;
};

/// Per-column sorted row orders for one activation matrix. Building it is the
/// O(cols * n log n) part of tree growth, so it is shared across features.
class ColumnIndex {
public:
    explicit ColumnIndex(const ActivationMatrix& activations);

    const ActivationMatrix& activations() const { return *activations_; }
    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    double value(std::size_t col, std::size_t row) const { return column_major_[col * rows_ + row]; }
    std::span<const std::uint32_t> order(std::size_t col) const { return {order_.data() + col * rows_, rows_}; }

private:
    const ActivationMatrix* activations_;
    std::size_t rows_;
    std::size_t cols_;
    std::vector<double> column_major_;
    std::vector<std::uint32_t> order_;
};

/// Best split over every column of the matrix (the root split of build_tree).
std::optional<SplitCandidate> best_split(const ActivationMatrix& activations, std::span<const char> labels);

DecisionTree build_tree(const ActivationMatrix& activations, std::span<const char> labels, const TreeParams& params = {},
                        std::string feature_name = {});
DecisionTree build_tree(const ColumnIndex& index, std::span<const char> labels, const TreeParams& params = {},
                        std::string feature_name = {});

struct RouteResult {
    std::size_t leaf = 0;
    std::vector<Condition> path;  // root-to-leaf
};

RouteResult route(const DecisionTree& tree, std::span<const double> row);

/// JSON with one record per node. Thresholds are stored as C99 hexadecimal
/// floats so they round-trip bit-exactly; a decimal copy is kept for reading.
std::string tree_to_json(const DecisionTree& tree);
DecisionTree tree_from_json(const std::string& text);

}  // namespace fga
