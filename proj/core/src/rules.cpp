#include "fga/rules.hpp"

#include <algorithm>
#include <cstdio>
#include <limits>
#include <map>

#include <json.hpp>

#include "fga/error.hpp"

namespace fga {

bool Rule::satisfied_by(std::span<const double> row) const {
    for (const auto& a : atoms) {
        if (!a.holds(row[a.neuron.index])) return false;
    }
    return true;
}

std::optional<double> ConfusionCounts::precision() const {
    if (tp + fp == 0) return std::nullopt;
    return 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fp);
}

std::optional<double> ConfusionCounts::recall() const {
    if (tp + fn == 0) return std::nullopt;
    return 100.0 * static_cast<double>(tp) / static_cast<double>(tp + fn);
}

std::vector<Rule> extract_pure_rules(const DecisionTree& tree) {
    std::vector<Rule> out;
    if (tree.nodes.empty()) return out;

    std::vector<RuleAtom> path;
    // Depth-first, left before right, carrying the path to each node.
    auto visit = [&](auto&& self, std::size_t at) -> void {
        const auto& node = tree.nodes[at];
        if (node.is_leaf()) {
            if (node.count_present > 0 && node.count_absent == 0 && !path.empty())
                out.push_back({path, tree.feature_name, tree.layer_name, node.count_present, 0});
            return;
        }
        const NeuronRef neuron{tree.layer_name, node.neuron};
        path.push_back({neuron, Comparator::le, node.threshold});
        self(self, node.left);
        path.back().cmp = Comparator::gt;
        self(self, node.right);
        path.pop_back();
    };
    visit(visit, 0);
    return out;
}

std::optional<Rule> select_top_rule(std::span<const Rule> rules) {
    if (rules.empty()) return std::nullopt;
    for (const auto& r : rules) {
        expects(r.feature_name == rules.front().feature_name, "select_top_rule: rules belong to different features");
    }
    const Rule* best = &rules.front();
    for (const auto& r : rules.subspan(1)) {
        if (r.support_present != best->support_present) {
            if (r.support_present > best->support_present) best = &r;
        } else if (r.length() != best->length()) {
            if (r.length() < best->length()) best = &r;
        } else if (std::lexicographical_compare(r.atoms.begin(), r.atoms.end(), best->atoms.begin(),
                                                best->atoms.end())) {
            best = &r;
        }
    }
    return *best;
}

ConfusionCounts evaluate_rule(const Rule& rule, const ActivationMatrix& activations, std::span<const char> presence) {
    expects(activations.layer_name == rule.layer_name,
            "rule for layer '" + rule.layer_name + "' evaluated on layer '" + activations.layer_name + "'");
    expects(presence.size() == activations.rows(), "evaluate_rule: presence length must equal row count");
    for (const auto& a : rule.atoms) {
        expects(a.neuron.index < activations.cols, "rule atom indexes past the activation width");
    }
    ConfusionCounts c;
    for (std::size_t r = 0; r < activations.rows(); ++r) {
        const bool fires = rule.satisfied_by(activations.row(r));
        const bool has = presence[r] != 0;
        if (fires && has) ++c.tp;
        else if (fires) ++c.fp;
        else if (has) ++c.fn;
        else ++c.tn;
    }
    return c;
}

const ScoredRule& select_across_layers(std::span<const ScoredRule> per_layer_best) {
    expects(!per_layer_best.empty(), "select_across_layers needs at least one layer");
    const ScoredRule* best = &per_layer_best.front();
    auto recall = [](const ScoredRule& s) { return s.metrics.train_recall.value_or(-1.0); };
    for (const auto& s : per_layer_best.subspan(1)) {
        if (recall(s) > recall(*best)) best = &s;
    }
    return *best;
}

std::optional<Rule> canonicalize(const Rule& rule) {
    struct Bounds {
        std::optional<double> lo;  // value > lo
        std::optional<double> hi;  // value <= hi
    };
    std::vector<NeuronRef> order;
    std::map<NeuronRef, Bounds> bounds;
    for (const auto& a : rule.atoms) {
        auto [it, inserted] = bounds.try_emplace(a.neuron);
        if (inserted) order.push_back(a.neuron);
        auto& b = it->second;
        if (a.cmp == Comparator::gt) b.lo = b.lo ? std::max(*b.lo, a.threshold) : a.threshold;
        else b.hi = b.hi ? std::min(*b.hi, a.threshold) : a.threshold;
    }
    Rule out = rule;
    out.atoms.clear();
    for (const auto& n : order) {
        const auto& b = bounds.at(n);
        if (b.lo && b.hi && *b.hi <= *b.lo) return std::nullopt;
        if (b.lo) out.atoms.push_back({n, Comparator::gt, *b.lo});
        if (b.hi) out.atoms.push_back({n, Comparator::le, *b.hi});
    }
    return out;
}

namespace {

std::string format_threshold(double v, int decimals) {
    char buf[64];
    if (decimals < 0) std::snprintf(buf, sizeof buf, "%.17g", v);
    else std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

}  // namespace

std::string render_rule(const Rule& rule, std::string_view post, int decimals) {
    std::string out = "(";
    for (std::size_t i = 0; i < rule.atoms.size(); ++i) {
        const auto& a = rule.atoms[i];
        if (i) out += " ∧ ";
        out += "N_{" + a.neuron.layer_name + "," + std::to_string(a.neuron.index) + "} ";
        out += a.cmp == Comparator::le ? "≤ " : "> ";
        out += format_threshold(a.threshold, decimals);
    }
    out += ") ⇒ ";
    out += post;
    return out;
}

namespace {

using nlohmann::json;

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> opt_from(const json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
}

json counts_json(const ConfusionCounts& c) { return {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}}; }

ConfusionCounts counts_from(const json& j) {
    return {j.at("tp").get<std::size_t>(), j.at("fp").get<std::size_t>(), j.at("fn").get<std::size_t>(),
            j.at("tn").get<std::size_t>()};
}

}  // namespace

std::string rules_to_json(std::span<const ScoredRule> rules) {
    json arr = json::array();
    for (const auto& s : rules) {
        json atoms = json::array();
        for (const auto& a : s.rule.atoms) {
            atoms.push_back({{"layer", a.neuron.layer_name},
                             {"index", a.neuron.index},
                             {"cmp", a.cmp == Comparator::le ? "<=" : ">"},
                             {"threshold", a.threshold}});
        }
        arr.push_back({{"feature", s.rule.feature_name},
                       {"layer", s.rule.layer_name},
                       {"atoms", std::move(atoms)},
                       {"support", s.rule.support_present},
                       {"metrics",
                        {{"train_recall", opt(s.metrics.train_recall)},
                         {"test_precision", opt(s.metrics.test_precision)},
                         {"test_recall", opt(s.metrics.test_recall)},
                         {"length", s.metrics.length},
                         {"train", counts_json(s.metrics.train)},
                         {"test", counts_json(s.metrics.test)}}}});
    }
    return arr.dump(2);
}

std::vector<ScoredRule> rules_from_json(const std::string& text) {
    try {
        const auto arr = json::parse(text);
        std::vector<ScoredRule> out;
        for (const auto& j : arr) {
            ScoredRule s;
            s.rule.feature_name = j.at("feature").get<std::string>();
            s.rule.layer_name = j.at("layer").get<std::string>();
            s.rule.support_present = j.at("support").get<std::size_t>();
            for (const auto& a : j.at("atoms")) {
                const auto cmp = a.at("cmp").get<std::string>();
                if (cmp != "<=" && cmp != ">") throw FormatError("rule atom comparator must be '<=' or '>'");
                s.rule.atoms.push_back({{a.at("layer").get<std::string>(), a.at("index").get<std::size_t>()},
                                        cmp == "<=" ? Comparator::le : Comparator::gt,
                                        a.at("threshold").get<double>()});
            }
            const auto& m = j.at("metrics");
            s.metrics.train_recall = opt_from(m, "train_recall");
            s.metrics.test_precision = opt_from(m, "test_precision");
            s.metrics.test_recall = opt_from(m, "test_recall");
            s.metrics.length = m.at("length").get<std::size_t>();
            s.metrics.train = counts_from(m.at("train"));
            s.metrics.test = counts_from(m.at("test"));
            out.push_back(std::move(s));
        }
        return out;
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed rule JSON: ") + e.what());
    }
}

}  // namespace fga
