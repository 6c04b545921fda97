#include "fga/tree.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "fga/error.hpp"

namespace fga {

namespace {

using u128 = unsigned __int128;

// Minimizing weighted Gini over a fixed node is equivalent to maximizing
//   S = (pl^2 + al^2) / nl + (pr^2 + ar^2) / nr.
// S is kept as an exact fraction so equal-quality candidates compare equal and
// the tie-break order is honoured regardless of rounding.
struct Score {
    u128 num = 0;
    u128 den = 1;

    static Score of(std::uint64_t pl, std::uint64_t al, std::uint64_t pr, std::uint64_t ar) {
        const u128 nl = pl + al, nr = pr + ar;
        return {(u128(pl) * pl + u128(al) * al) * nr + (u128(pr) * pr + u128(ar) * ar) * nl, nl * nr};
    }
    bool better_than(const Score& o) const { return num * o.den > o.num * den; }
};

double weighted_gini(std::uint64_t pl, std::uint64_t al, std::uint64_t pr, std::uint64_t ar) {
    const double nl = double(pl + al), nr = double(pr + ar);
    const double s = (double(pl) * pl + double(al) * al) / nl + (double(pr) * pr + double(ar) * ar) / nr;
    return 1.0 - s / (nl + nr);
}

// Midpoint of two adjacent distinct values; falls back to `lo` when the
// midpoint rounds up to `hi` so that `<= t` still separates them.
double midpoint_threshold(double lo, double hi) {
    const double t = std::midpoint(lo, hi);
    return t < hi ? t : lo;
}

struct ColumnBest {
    std::size_t left_count = 0;
    double threshold = 0.0;
    Score score;
    std::uint64_t pl = 0, al = 0;
};

// `rows` are the node's rows in ascending order of `value`.
template <typename ValueOf>
std::optional<ColumnBest> scan_column(std::span<const std::uint32_t> rows, ValueOf&& value, std::span<const char> labels,
                                      std::uint64_t total_present) {
    const std::uint64_t total = rows.size();
    const std::uint64_t total_absent = total - total_present;
    std::optional<ColumnBest> best;
    std::uint64_t pl = 0, al = 0;
    double cur = value(rows[0]);
    for (std::size_t p = 0; p + 1 < rows.size(); ++p) {
        if (labels[rows[p]]) ++pl;
        else ++al;
        const double next = value(rows[p + 1]);
        if (!(cur < next)) continue;
        const auto score = Score::of(pl, al, total_present - pl, total_absent - al);
        if (!best || score.better_than(best->score)) {
            best = ColumnBest{p + 1, midpoint_threshold(cur, next), score, pl, al};
        }
        cur = next;
    }
    return best;
}

}  // namespace

std::optional<SplitResult> find_best_split(std::span<const double> column, std::span<const char> labels) {
    expects(!column.empty(), "find_best_split needs at least one row");
    expects(column.size() == labels.size(), "find_best_split: column and labels differ in length");
    std::vector<std::uint32_t> rows(column.size());
    std::iota(rows.begin(), rows.end(), 0u);
    std::stable_sort(rows.begin(), rows.end(), [&](auto a, auto b) { return column[a] < column[b]; });
    const auto present = static_cast<std::uint64_t>(std::count_if(labels.begin(), labels.end(), [](char c) { return c != 0; }));
    const auto best = scan_column(rows, [&](std::uint32_t r) { return column[r]; }, labels, present);
    if (!best) return std::nullopt;
    const std::uint64_t n = column.size();
    return SplitResult{best->threshold, weighted_gini(best->pl, best->al, present - best->pl,
                                                      (n - present) - best->al)};
}

ColumnIndex::ColumnIndex(const ActivationMatrix& activations)
    : activations_(&activations), rows_(activations.rows()), cols_(activations.cols) {
    expects(activations.values.size() == rows_ * cols_, "activation matrix values do not match its dimensions");
    expects(rows_ < std::numeric_limits<std::uint32_t>::max(), "too many rows for a column index");
    column_major_.resize(rows_ * cols_);
    for (std::size_t r = 0; r < rows_; ++r)
        for (std::size_t c = 0; c < cols_; ++c) column_major_[c * rows_ + r] = activations.values[r * cols_ + c];

    order_.resize(rows_ * cols_);
    for (std::size_t c = 0; c < cols_; ++c) {
        auto* ord = order_.data() + c * rows_;
        const double* vals = column_major_.data() + c * rows_;
        std::iota(ord, ord + rows_, 0u);
        std::stable_sort(ord, ord + rows_, [vals](std::uint32_t a, std::uint32_t b) { return vals[a] < vals[b]; });
    }
}

std::size_t DecisionTree::depth() const {
    std::size_t d = 0;
    for (const auto& n : nodes) d = std::max(d, n.depth);
    return d;
}

std::vector<std::size_t> DecisionTree::leaves() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < nodes.size(); ++i)
        if (nodes[i].is_leaf()) out.push_back(i);
    return out;
}

namespace {

struct NodeSplit {
    std::size_t column;
    ColumnBest best;
};

std::optional<NodeSplit> best_node_split(const ColumnIndex& index, const std::vector<std::uint32_t>& order,
                                         std::size_t begin, std::size_t end, std::span<const char> labels,
                                         std::uint64_t present) {
    const std::size_t n = index.rows();
    std::optional<NodeSplit> best;
    for (std::size_t c = 0; c < index.cols(); ++c) {
        const std::span<const std::uint32_t> rows(order.data() + c * n + begin, end - begin);
        auto cand = scan_column(rows, [&](std::uint32_t r) { return index.value(c, r); }, labels, present);
        if (cand && (!best || cand->score.better_than(best->best.score))) best = NodeSplit{c, *cand};
    }
    return best;
}

}  // namespace

std::optional<SplitCandidate> best_split(const ActivationMatrix& activations, std::span<const char> labels) {
    expects(labels.size() == activations.rows(), "best_split: label count must equal row count");
    expects(activations.rows() > 0, "best_split needs at least one row");
    if (activations.cols == 0) return std::nullopt;
    const ColumnIndex index(activations);
    std::vector<std::uint32_t> order(index.order(0).data(), index.order(0).data() + index.rows() * index.cols());
    const auto present = static_cast<std::uint64_t>(std::count_if(labels.begin(), labels.end(), [](char c) { return c != 0; }));
    const auto s = best_node_split(index, order, 0, index.rows(), labels, present);
    if (!s) return std::nullopt;
    const std::uint64_t n = index.rows();
    return SplitCandidate{{activations.layer_name, s->column},
                          s->best.threshold,
                          weighted_gini(s->best.pl, s->best.al, present - s->best.pl, (n - present) - s->best.al)};
}

DecisionTree build_tree(const ActivationMatrix& activations, std::span<const char> labels, const TreeParams& params,
                        std::string feature_name) {
    expects(labels.size() == activations.rows(), "build_tree: label count must equal row count");
    const ColumnIndex index(activations);
    return build_tree(index, labels, params, std::move(feature_name));
}

DecisionTree build_tree(const ColumnIndex& index, std::span<const char> labels, const TreeParams& params,
                        std::string feature_name) {
    const std::size_t n = index.rows();
    const std::size_t m = index.cols();
    expects(labels.size() == n, "build_tree: label count must equal row count");
    expects(n > 0, "build_tree needs at least one row");
    expects(params.min_samples_split >= 2, "min_samples_split must be at least 2");
    expects(!params.max_depth || *params.max_depth >= 1, "max_depth must be positive when set");

    DecisionTree tree;
    tree.feature_name = std::move(feature_name);
    tree.layer_name = index.activations().layer_name;
    tree.width = m;
    tree.n_train_rows = n;
    tree.params = params;

    // Every column's slice [begin, end) holds the same row set, each sorted by
    // its own column. Splitting stably partitions every slice.
    std::vector<std::uint32_t> order(m * n);
    for (std::size_t c = 0; c < m; ++c) {
        const auto o = index.order(c);
        std::copy(o.begin(), o.end(), order.begin() + c * n);
    }
    std::vector<char> goes_left(n, 0);
    std::vector<std::uint32_t> scratch(n);

    auto count_present = [&](std::size_t begin, std::size_t end) {
        std::uint64_t p = 0;
        // Column 0 order is as good as any; with zero columns fall back to index order.
        for (std::size_t i = begin; i < end; ++i) p += labels[m ? order[i] : i] ? 1 : 0;
        return p;
    };

    struct Work {
        std::size_t node, begin, end;
    };
    tree.nodes.push_back({});
    std::vector<Work> stack{{0, 0, n}};
    while (!stack.empty()) {
        const Work w = stack.back();
        stack.pop_back();
        const std::size_t count = w.end - w.begin;
        const std::uint64_t present = count_present(w.begin, w.end);
        {
            auto& node = tree.nodes[w.node];
            node.count_present = present;
            node.count_absent = count - present;
        }
        const auto& node = tree.nodes[w.node];
        if (node.is_pure() || count < params.min_samples_split || (params.max_depth && node.depth >= *params.max_depth) ||
            m == 0)
            continue;

        const auto split = best_node_split(index, order, w.begin, w.end, labels, present);
        if (!split) continue;

        const std::size_t col = split->column;
        const double threshold = split->best.threshold;
        for (std::size_t i = w.begin; i < w.end; ++i) {
            const auto r = order[col * n + i];
            goes_left[r] = index.value(col, r) <= threshold;
        }
        for (std::size_t c = 0; c < m; ++c) {
            auto* slice = order.data() + c * n;
            std::size_t l = w.begin, r = 0;
            for (std::size_t i = w.begin; i < w.end; ++i) {
                if (goes_left[slice[i]]) slice[l++] = slice[i];
                else scratch[r++] = slice[i];
            }
            std::copy(scratch.begin(), scratch.begin() + static_cast<std::ptrdiff_t>(r), slice + l);
        }

        const std::size_t left = tree.nodes.size();
        const std::size_t right = left + 1;
        const std::size_t depth = node.depth + 1;
        tree.nodes.push_back({});
        tree.nodes.push_back({});
        tree.nodes[left].depth = depth;
        tree.nodes[right].depth = depth;
        auto& parent = tree.nodes[w.node];
        parent.neuron = col;
        parent.threshold = threshold;
        parent.left = left;
        parent.right = right;

        const std::size_t mid = w.begin + split->best.left_count;
        stack.push_back({right, mid, w.end});
        stack.push_back({left, w.begin, mid});
    }
    return tree;
}

RouteResult route(const DecisionTree& tree, std::span<const double> row) {
    expects(row.size() == tree.width, "route: row width " + std::to_string(row.size()) +
                                          " does not match tree width " + std::to_string(tree.width));
    RouteResult out;
    std::size_t at = 0;
    while (!tree.nodes[at].is_leaf()) {
        const auto& node = tree.nodes[at];
        const bool left = row[node.neuron] <= node.threshold;
        out.path.push_back({{tree.layer_name, node.neuron}, left ? Comparator::le : Comparator::gt, node.threshold});
        at = left ? node.left : node.right;
    }
    out.leaf = at;
    return out;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

using nlohmann::json;

std::string hex_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%a", v);
    return buf;
}

double parse_hex_double(const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') throw FormatError("bad threshold encoding '" + s + "'");
    return v;
}

json node_to_json(const DecisionTree& tree, std::size_t at) {
    const auto& n = tree.nodes[at];
    if (n.is_leaf()) return {{"kind", "leaf"}, {"counts", {n.count_present, n.count_absent}}};
    return {{"kind", "split"},
            {"neuron", {{"layer", tree.layer_name}, {"index", n.neuron}}},
            {"threshold", hex_double(n.threshold)},
            {"threshold_decimal", n.threshold},
            {"counts", {n.count_present, n.count_absent}},
            {"left", node_to_json(tree, n.left)},
            {"right", node_to_json(tree, n.right)}};
}

std::size_t node_from_json(DecisionTree& tree, const json& j, std::size_t depth) {
    const std::size_t at = tree.nodes.size();
    tree.nodes.push_back({});
    TreeNode node;
    node.depth = depth;
    node.count_present = j.at("counts").at(0).get<std::size_t>();
    node.count_absent = j.at("counts").at(1).get<std::size_t>();
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "split") {
        node.neuron = j.at("neuron").at("index").get<std::size_t>();
        if (node.neuron >= tree.width) throw FormatError("tree node neuron index exceeds tree width");
        node.threshold = parse_hex_double(j.at("threshold").get<std::string>());
        node.left = node_from_json(tree, j.at("left"), depth + 1);
        node.right = node_from_json(tree, j.at("right"), depth + 1);
        const auto& l = tree.nodes[node.left];
        const auto& r = tree.nodes[node.right];
        if (l.count_present + r.count_present != node.count_present || l.count_absent + r.count_absent != node.count_absent)
            throw FormatError("tree node counts do not equal the sum of their children");
    } else if (kind != "leaf") {
        throw FormatError("unknown tree node kind '" + kind + "'");
    }
    tree.nodes[at] = node;
    return at;
}

}  // namespace

std::string tree_to_json(const DecisionTree& tree) {
    json params{{"criterion", "gini"}, {"min_samples_split", tree.params.min_samples_split}};
    params["max_depth"] = tree.params.max_depth ? json(*tree.params.max_depth) : json(nullptr);
    const json doc{{"format", "fga-tree"},
                   {"version", 1},
                   {"feature", tree.feature_name},
                   {"layer", tree.layer_name},
                   {"width", tree.width},
                   {"n_train_rows", tree.n_train_rows},
                   {"params", params},
                   {"root", node_to_json(tree, 0)}};
    return doc.dump(2);
}

DecisionTree tree_from_json(const std::string& text) {
    try {
        const auto doc = json::parse(text);
        if (doc.value("format", std::string()) != "fga-tree" || doc.value("version", 0) != 1)
            throw FormatError("not an fga-tree v1 document");
        DecisionTree tree;
        tree.feature_name = doc.at("feature").get<std::string>();
        tree.layer_name = doc.at("layer").get<std::string>();
        tree.width = doc.at("width").get<std::size_t>();
        tree.n_train_rows = doc.at("n_train_rows").get<std::size_t>();
        const auto& p = doc.at("params");
        tree.params.min_samples_split = p.at("min_samples_split").get<std::size_t>();
        if (!p.at("max_depth").is_null()) tree.params.max_depth = p.at("max_depth").get<std::size_t>();
        node_from_json(tree, doc.at("root"), 0);
        const auto& root = tree.nodes.front();
        if (root.count_present + root.count_absent != tree.n_train_rows)
            throw FormatError("tree root counts do not sum to n_train_rows");
        return tree;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed tree JSON: ") + e.what());
    }
}

}  // namespace fga
