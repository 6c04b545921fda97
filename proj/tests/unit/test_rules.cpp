#include <doctest.h>

#include <random>

#include "fga/error.hpp"
#include "fga/rules.hpp"
#include "fixtures.hpp"

using namespace fga;

namespace {

RuleAtom atom(std::size_t i, Comparator c, double t, const std::string& layer = "L") {
    return {{layer, i}, c, t};
}

Rule rule(std::vector<RuleAtom> atoms, std::size_t support, const std::string& feature = "f") {
    Rule r;
    r.atoms = std::move(atoms);
    r.feature_name = feature;
    r.layer_name = "L";
    r.support_present = support;
    return r;
}

ScoredRule scored(std::string layer, double train_recall) {
    ScoredRule s;
    s.rule.layer_name = std::move(layer);
    s.metrics.train_recall = train_recall;
    return s;
}

}  // namespace

TEST_CASE("pure-leaf extraction on the worked example") {
    const auto fx = fixtures::worked_example_data();
    const auto t = build_tree(fx.matrix, fx.presence, {}, "Circle");
    const auto rules = extract_pure_rules(t);
    REQUIRE(rules.size() == 1);
    const auto& r = rules[0];
    CHECK(r.support_present == 212);
    CHECK(r.support_absent == 0);
    CHECK(r.feature_name == "Circle");
    REQUIRE(r.atoms.size() == 2);
    CHECK(r.atoms[0].neuron == NeuronRef{"2", 15});
    CHECK(r.atoms[0].cmp == Comparator::le);
    CHECK(std::abs(r.atoms[0].threshold - 0.68) < 1e-12);
    CHECK(r.atoms[1].neuron == NeuronRef{"2", 9});
    CHECK(std::abs(r.atoms[1].threshold - 0.34) < 1e-12);
    CHECK(render_rule(r, "{0,6,8,9}", 2) == "(N_{2,15} ≤ 0.68 ∧ N_{2,9} ≤ 0.34) ⇒ {0,6,8,9}");

    const auto c = evaluate_rule(r, fx.matrix, fx.presence);
    CHECK(c.fp == 0);
    CHECK(c.tp == 212);
    CHECK(c.precision() == 100.0);
}

TEST_CASE("extraction edge cases") {
    SUBCASE("all leaves absent") {
        const auto t = build_tree(fixtures::make_matrix("L", 3, 1), std::vector<char>{0, 0, 0});
        CHECK(extract_pure_rules(t).empty());
    }
    SUBCASE("depth-0 all-present tree gives no rule") {
        const auto t = build_tree(fixtures::make_matrix("L", 3, 1), std::vector<char>{1, 1, 1});
        CHECK(extract_pure_rules(t).empty());
    }
}

TEST_CASE("top rule selection") {
    CHECK_FALSE(select_top_rule({}).has_value());
    std::vector<Rule> rs{rule({atom(0, Comparator::le, 1)}, 40), rule({atom(1, Comparator::le, 1)}, 212)};
    CHECK(select_top_rule(rs)->support_present == 212);

    std::vector<RuleAtom> five(5, atom(0, Comparator::le, 1)), three(3, atom(0, Comparator::le, 1));
    rs = {rule(five, 50), rule(three, 50)};
    CHECK(select_top_rule(rs)->length() == 3);

    rs = {rule({atom(2, Comparator::le, 1)}, 50), rule({atom(1, Comparator::le, 1)}, 50)};
    CHECK(select_top_rule(rs)->atoms[0].neuron.index == 1);

    rs = {rule({atom(0, Comparator::le, 1)}, 5, "a"), rule({atom(0, Comparator::le, 1)}, 5, "b")};
    CHECK_THROWS_AS(select_top_rule(rs), ContractViolation);
}

TEST_CASE("confusion counts and metrics") {
    ConfusionCounts c{2, 1, 2, 5};
    CHECK(*c.precision() == doctest::Approx(66.67).epsilon(1e-4));
    CHECK(*c.recall() == 50.0);
    CHECK_FALSE(ConfusionCounts{0, 0, 3, 4}.precision().has_value());
    CHECK(ConfusionCounts{0, 2, 3, 4}.precision() == 0.0);
    CHECK_FALSE(ConfusionCounts{0, 2, 0, 4}.recall().has_value());

    auto m = fixtures::make_matrix("L", 4, 1);
    m.values = {0.1, 0.2, 0.8, 0.9};
    const std::vector<char> p{0, 0, 1, 1};
    const auto exact = evaluate_rule(rule({atom(0, Comparator::gt, 0.5)}, 2), m, p);
    CHECK(exact.precision() == 100.0);
    CHECK(exact.recall() == 100.0);

    Rule other = rule({atom(0, Comparator::gt, 0.5, "M")}, 2);
    other.layer_name = "M";
    CHECK_THROWS_AS(evaluate_rule(other, m, p), ContractViolation);
}

TEST_CASE("evaluate_rule matches a naive tally") {
    std::mt19937_64 rng(8);
    for (int it = 0; it < 200; ++it) {
        auto inst = fixtures::random_instance(rng, 50, 5);
        std::uniform_int_distribution<std::size_t> col(0, inst.matrix.cols - 1), row(0, inst.matrix.rows() - 1),
            len(0, 4);
        Rule r = rule({}, 0);
        const auto n = len(rng);
        for (std::size_t a = 0; a < n; ++a) {
            const auto c = col(rng);
            r.atoms.push_back(atom(c, rng() % 2 ? Comparator::le : Comparator::gt, inst.matrix.at(row(rng), c)));
        }
        CHECK(evaluate_rule(r, inst.matrix, inst.labels) == fixtures::naive_confusion(r, inst.matrix, inst.labels));
    }
}

TEST_CASE("extracted rules are sound on their training data") {
    std::mt19937_64 rng(13);
    for (int it = 0; it < 40; ++it) {
        auto inst = fixtures::random_instance(rng, 400, 10);
        const auto t = build_tree(inst.matrix, inst.labels);
        for (const auto& r : extract_pure_rules(t)) {
            const auto c = evaluate_rule(r, inst.matrix, inst.labels);
            CHECK(c.fp == 0);
            CHECK(c.tp == r.support_present);
            CHECK(r.support_present > 0);
            CHECK(r.length() >= 1);
        }
    }
}

TEST_CASE("across-layer selection") {
    std::vector<ScoredRule> s{scored("a", 60.0), scored("b", 82.69)};
    CHECK(select_across_layers(s).rule.layer_name == "b");
    s = {scored("only", 10)};
    CHECK(select_across_layers(s).rule.layer_name == "only");
    s = {scored("first", 50), scored("second", 50)};
    CHECK(select_across_layers(s).rule.layer_name == "first");
    CHECK_THROWS_AS(select_across_layers({}), ContractViolation);
}

TEST_CASE("canonicalization") {
    auto r = rule({atom(0, Comparator::gt, 4.34), atom(0, Comparator::gt, 5.34)}, 1);
    auto c = canonicalize(r);
    REQUIRE(c);
    REQUIRE(c->atoms.size() == 1);
    CHECK(c->atoms[0] == atom(0, Comparator::gt, 5.34));

    r = rule({atom(3, Comparator::le, 1.5)}, 1);
    CHECK(canonicalize(r)->atoms == r.atoms);

    r = rule({atom(0, Comparator::le, 1), atom(0, Comparator::gt, 2)}, 1);
    CHECK_FALSE(canonicalize(r).has_value());

    // merged rule accepts exactly the same rows
    std::mt19937_64 rng(4);
    for (int it = 0; it < 100; ++it) {
        auto inst = fixtures::random_instance(rng, 40, 3);
        Rule q = rule({}, 0);
        for (int a = 0; a < 5; ++a) {
            const auto col = rng() % inst.matrix.cols;
            q.atoms.push_back(atom(col, rng() % 2 ? Comparator::le : Comparator::gt,
                                   inst.matrix.at(rng() % inst.matrix.rows(), col)));
        }
        const auto m = canonicalize(q);
        for (std::size_t row = 0; row < inst.matrix.rows(); ++row) {
            const bool sat = q.satisfied_by(inst.matrix.row(row));
            if (m) CHECK(m->satisfied_by(inst.matrix.row(row)) == sat);
            else CHECK_FALSE(sat);
        }
    }
}

TEST_CASE("rules JSON round trip") {
    ScoredRule s;
    s.rule = rule({atom(3, Comparator::le, 0.1 + 0.2), atom(1, Comparator::gt, 1e-300)}, 7);
    s.metrics.train_recall = 41.5;
    s.metrics.test_recall = 40.0;
    s.metrics.length = 2;
    s.metrics.train = {7, 0, 3, 2};
    const std::vector<ScoredRule> in{s};
    const auto out = rules_from_json(rules_to_json(in));
    REQUIRE(out.size() == 1);
    CHECK(out[0].rule == s.rule);
    CHECK(out[0].metrics.train_recall == 41.5);
    CHECK_FALSE(out[0].metrics.test_precision.has_value());
    CHECK(out[0].metrics.train == s.metrics.train);
}
