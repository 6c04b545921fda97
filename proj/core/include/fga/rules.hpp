#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fga/inference.hpp"
#include "fga/tree.hpp"

namespace fga {

using RuleAtom = Condition;

/// Conjunction of atoms (root-to-leaf order) implying presence of a feature.
struct Rule {
    std::vector<RuleAtom> atoms;
    std::string feature_name;
    std::string layer_name;
    std::size_t support_present = 0;
    std::size_t support_absent = 0;

    std::size_t length() const { return atoms.size(); }
    bool satisfied_by(std::span<const double> row) const;
    bool operator==(const Rule&) const = default;
};

struct ConfusionCounts {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;

    std::size_t total() const { return tp + fp + fn + tn; }
    /// tp / (tp + fp) in percent; nullopt when no row satisfies the rule.
    std::optional<double> precision() const;
    /// tp / (tp + fn) in percent; nullopt when no row has the feature.
    std::optional<double> recall() const;
    bool operator==(const ConfusionCounts&) const = default;
};

struct RuleMetrics {
    std::optional<double> train_recall;
    std::optional<double> test_precision;
    std::optional<double> test_recall;
    std::size_t length = 0;
    ConfusionCounts train;
    ConfusionCounts test;
};

struct ScoredRule {
    Rule rule;
    RuleMetrics metrics;
};

/// One rule per leaf holding only present rows (and at least one of them).
/// A depth-0 tree yields no rule because a rule needs at least one atom.
std::vector<Rule> extract_pure_rules(const DecisionTree& tree);

/// Highest support; then fewer atoms; then the lexicographically smaller
/// atom sequence.
std::optional<Rule> select_top_rule(std::span<const Rule> rules);

ConfusionCounts evaluate_rule(const Rule& rule, const ActivationMatrix& activations, std::span<const char> presence);

/// Highest train recall; ties keep the earlier entry (configured layer order).
const ScoredRule& select_across_layers(std::span<const ScoredRule> per_layer_best);

/// Merges atoms on the same neuron into the tightest (lo, hi] bounds, in
/// first-appearance order. nullopt when some neuron's interval is empty.
std::optional<Rule> canonicalize(const Rule& rule);

/// "(N_{layer,i} ≤ v ∧ ...) ⇒ post". `decimals` < 0 prints full precision.
std::string render_rule(const Rule& rule, std::string_view post, int decimals);

std::string rules_to_json(std::span<const ScoredRule> rules);
std::vector<ScoredRule> rules_from_json(const std::string& text);

}  // namespace fga
