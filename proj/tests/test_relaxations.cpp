#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

#include "drnet/grad_check.hpp"
#include "drnet/relaxations.hpp"
#include "drnet/rng.hpp"

using namespace drnet;

namespace {

// Independent oracle: plain-double entropy, no tape involved.
double entropy_oracle(const std::vector<double>& p) {
    double h = 0.0;
    for (double v : p)
        if (v > 0) h -= v * std::log(v);
    return h;
}

Value probs_const(Tape& t, const std::vector<double>& p) {
    return t.constant(TensorValue::vector(p));
}

double eval_entropy(const std::vector<double>& p) {
    Tape t;
    return entropy(t, probs_const(t, p)).item();
}

}  // namespace

TEST_CASE("entropy forward values", "[relaxations]") {
    CHECK(eval_entropy({0.25, 0.25, 0.25, 0.25}) == Catch::Approx(std::log(4.0)));
    CHECK(eval_entropy({0.5, 0.5}) == Catch::Approx(std::log(2.0)));
    CHECK(eval_entropy({1.0, 0.0, 0.0, 0.0}) == Catch::Approx(0.0).margin(1e-10));
}

TEST_CASE("cardinality penalty values", "[relaxations]") {
    Tape t;
    Categorical onehot = Categorical::frozen_onehot(t, 9, 4);
    CHECK(cardinality_penalty(t, onehot).item() == Catch::Approx(0.0).margin(1e-10));

    Categorical uniform = Categorical::from_logits(t, t.constant(TensorValue::zeros({9})));
    CHECK(cardinality_penalty(t, uniform).item() == Catch::Approx(std::log(9.0)));

    // Frozen against the plain-double oracle: -sum p log p for (0.9, 0.1, 0, 0).
    CHECK(entropy_oracle({0.9, 0.1, 0.0, 0.0}) == Catch::Approx(0.3250829733914483));
    Tape t2;
    CHECK(entropy(t2, probs_const(t2, {0.9, 0.1, 0.0, 0.0})).item() ==
          Catch::Approx(0.3250829733914483));
}

TEST_CASE("all-different penalty values", "[relaxations]") {
    const auto eval = [](const std::vector<std::vector<double>>& members) {
        Tape t;
        std::vector<Value> probs;
        for (const auto& m : members) probs.push_back(probs_const(t, m));
        return all_different_penalty(t, std::span<const Value>(probs)).item();
    };
    // Distinct one-hots: permutation, average uniform.
    CHECK(eval({{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}}) ==
          Catch::Approx(0.0).margin(1e-12));
    // Identical one-hots: average collapsed, maximum penalty log 4.
    CHECK(eval({{1, 0, 0, 0}, {1, 0, 0, 0}, {1, 0, 0, 0}, {1, 0, 0, 0}}) ==
          Catch::Approx(std::log(4.0)));
    // Uniform average without distinct members: penalty alone does not force
    // distinctness; the cardinality term is what rules this solution out.
    CHECK(eval({{0.5, 0.5, 0, 0}, {0.5, 0.5, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}}) ==
          Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("all-different support mismatch is rejected", "[relaxations]") {
    Tape t;
    std::vector<Value> bad = {probs_const(t, {0.5, 0.5}), probs_const(t, {0.3, 0.3, 0.4})};
    CHECK_THROWS_AS(all_different_penalty(t, std::span<const Value>(bad)), std::invalid_argument);
    std::vector<Value> wrong_arity = {probs_const(t, {0.5, 0.5, 0.0}),
                                      probs_const(t, {0.3, 0.3, 0.4})};
    CHECK_THROWS_AS(all_different_penalty(t, std::span<const Value>(wrong_arity)),
                    std::invalid_argument);
}

TEST_CASE("joint optimum equivalence for k=4 by brute force", "[relaxations]") {
    // Over all 4^4 hard assignments: zero member entropies always hold, and
    // (all-different penalty == 0) iff the assignment is a permutation.
    for (int code = 0; code < 256; ++code) {
        int digits[4];
        int tmp = code;
        for (int i = 0; i < 4; ++i) {
            digits[i] = tmp % 4;
            tmp /= 4;
        }
        bool is_permutation = true;
        {
            bool seen[4] = {false, false, false, false};
            for (int d : digits) {
                if (seen[d]) is_permutation = false;
                seen[d] = true;
            }
        }
        Tape t;
        std::vector<Categorical> members;
        double entropy_total = 0.0;
        for (int d : digits) {
            members.push_back(Categorical::frozen_onehot(t, 4, d));
            entropy_total += cardinality_penalty(t, members.back()).item();
        }
        const double penalty =
            all_different_penalty(t, std::span<const Categorical>(members)).item();
        REQUIRE(entropy_total == Catch::Approx(0.0).margin(1e-12));
        if (is_permutation)
            CHECK(penalty < 1e-12);
        else
            CHECK(penalty > 0.1);
    }
}

TEST_CASE("sparsity penalty values", "[relaxations]") {
    Tape t;
    // Uniform over 3 of 10 support entries: H = log 3, threshold at the boundary.
    std::vector<double> three(10, 0.0);
    three[0] = three[1] = three[2] = 1.0 / 3.0;
    CHECK(sparsity_penalty(t, probs_const(t, three), std::log(3.0)).item() ==
          Catch::Approx(0.0).margin(1e-12));

    // Uniform over 10 with c = log 3: log 10 - log 3.
    std::vector<double> ten(10, 0.1);
    CHECK(sparsity_penalty(t, probs_const(t, ten), std::log(3.0)).item() ==
          Catch::Approx(1.2039728043259361));

    std::vector<double> onehot(10, 0.0);
    onehot[7] = 1.0;
    CHECK(sparsity_penalty(t, probs_const(t, onehot), 0.5).item() == 0.0);
}

TEST_CASE("sparsity threshold validation", "[relaxations]") {
    Tape t;
    Value p3 = probs_const(t, {0.5, 0.3, 0.2});
    CHECK_THROWS_AS(sparsity_penalty(t, p3, -0.1), std::invalid_argument);
    // c >= log k for the declared cap.
    CHECK_THROWS_AS(sparsity_penalty(t, p3, std::log(4.0), 4), std::invalid_argument);
    // Vacuous: c >= log(support) with support <= cap.
    CHECK_THROWS_AS(sparsity_penalty(t, p3, std::log(3.0) + 0.1, 8), std::invalid_argument);
    // support > cap with c >= log(support): warning only, still returns a term.
    Value p10 = probs_const(t, std::vector<double>(10, 0.1));
    CHECK_NOTHROW(sparsity_penalty(t, p10, std::log(10.0)));
}

TEST_CASE("SAT clause penalty values", "[relaxations]") {
    const auto eval = [](const std::vector<double>& contributions, double alpha) {
        Tape t;
        std::vector<Value> vs;
        for (double c : contributions) vs.push_back(t.constant(c));
        return sat_clause_penalty(t, std::span<const Value>(vs), alpha).item();
    };
    CHECK(eval({1.0}, 0.01) == Catch::Approx(0.0).margin(1e-12));          // s = 1
    CHECK(eval({0.0, 0.0, 0.0}, 0.01) == Catch::Approx(1.0));              // s = 0
    CHECK(eval({1.0, 1.0, 1.0}, 0.01) == Catch::Approx(0.02));             // s = 3
    CHECK(eval({0.25, 0.25}, 0.01) == Catch::Approx(0.5));                 // s = 1/2

    Tape t;
    std::vector<Value> empty;
    CHECK_THROWS_AS(sat_clause_penalty(t, std::span<const Value>(empty), 0.01),
                    std::invalid_argument);
}

TEST_CASE("bernoulli entropy values", "[relaxations]") {
    const auto eval = [](double logit) {
        Tape t;
        Value p = t.sigmoid(t.constant(logit));
        return bernoulli_entropy(t, p).item();
    };
    CHECK(eval(0.0) == Catch::Approx(std::log(2.0)));
    CHECK(eval(50.0) == Catch::Approx(0.0).margin(1e-12));
    CHECK(eval(-50.0) == Catch::Approx(0.0).margin(1e-12));
    // p = 0.9 directly.
    Tape t;
    CHECK(bernoulli_entropy(t, t.constant(0.9)).item() == Catch::Approx(0.3250829733914483));
}

TEST_CASE("relaxation gradients pass grad_check", "[relaxations]") {
    Rng rng(20240818);
    const auto random_logits = [&](std::size_t n) {
        std::vector<double> x(n);
        for (double& v : x) v = rng.uniform(-2.0, 2.0);
        return x;
    };

    SECTION("entropy of softmax") {
        const auto builder = [](Tape& t, Value p) { return entropy(t, t.softmax(p)); };
        for (int rep = 0; rep < 50; ++rep)
            CHECK(grad_check(builder, random_logits(9)) < 1e-4);
    }

    SECTION("all-different over softmaxes") {
        const auto builder = [](Tape& t, Value p) {
            std::vector<Value> members;
            for (int i = 0; i < 4; ++i)
                members.push_back(t.softmax(t.slice(p, 4 * i, 4)));
            return all_different_penalty(t, std::span<const Value>(members));
        };
        for (int rep = 0; rep < 50; ++rep)
            CHECK(grad_check(builder, random_logits(16)) < 1e-4);
    }

    SECTION("sparsity hinge away from the kink") {
        const double c = 0.75 * std::log(3.0);
        const auto builder = [c](Tape& t, Value p) {
            return sparsity_penalty(t, t.softmax(p), c);
        };
        int checked = 0;
        while (checked < 50) {
            auto point = random_logits(10);
            Tape probe;
            const double h =
                entropy(probe, probe.softmax(probe.constant(TensorValue::vector(point)))).item();
            if (std::abs(h - c) < 1e-3) continue;  // hinge kink excluded
            CHECK(grad_check(builder, point) < 1e-4);
            ++checked;
        }
    }

    SECTION("SAT clause away from the kink") {
        const auto builder = [](Tape& t, Value p) {
            Value probs = t.sigmoid(p);
            std::vector<Value> contributions = {
                t.slice(probs, 0, 1), 1.0 - t.slice(probs, 1, 1), t.slice(probs, 2, 1)};
            return sat_clause_penalty(t, std::span<const Value>(contributions), 0.01);
        };
        int checked = 0;
        while (checked < 50) {
            auto point = random_logits(3);
            const auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
            const double s = sig(point[0]) + (1.0 - sig(point[1])) + sig(point[2]);
            if (std::abs(s - 1.0) < 1e-3) continue;
            CHECK(grad_check(builder, point) < 1e-4);
            ++checked;
        }
    }

    SECTION("bernoulli entropy of sigmoid") {
        const auto builder = [](Tape& t, Value p) {
            return bernoulli_entropy(t, t.sigmoid(t.slice(p, 0, 1)));
        };
        for (int rep = 0; rep < 50; ++rep)
            CHECK(grad_check(builder, random_logits(1)) < 1e-4);
    }
}

TEST_CASE("penalty lower bounds", "[relaxations]") {
    Rng rng(5);
    for (int rep = 0; rep < 100; ++rep) {
        Tape t;
        std::vector<double> logits(6);
        for (double& v : logits) v = rng.uniform(-5.0, 5.0);
        Value p = t.softmax(t.constant(TensorValue::vector(logits)));
        CHECK(entropy(t, p).item() >= -1e-12);
        CHECK(entropy(t, p).item() <= std::log(6.0) + 1e-12);
        CHECK(sparsity_penalty(t, p, 0.4).item() >= 0.0);
    }
}
