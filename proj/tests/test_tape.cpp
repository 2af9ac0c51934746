#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "drnet/grad_check.hpp"
#include "drnet/rng.hpp"
#include "drnet/tape.hpp"

using namespace drnet;

namespace {

std::vector<double> random_point(Rng& rng, std::size_t n, double lo, double hi) {
    std::vector<double> x(n);
    for (double& v : x) v = rng.uniform(lo, hi);
    return x;
}

// Keeps coordinates away from the kinks of relu/leaky_relu/abs by a margin.
std::vector<double> random_point_off_kink(Rng& rng, std::size_t n, double margin = 1e-3) {
    std::vector<double> x(n);
    for (double& v : x) {
        do {
            v = rng.uniform(-2.0, 2.0);
        } while (std::abs(v) < margin);
    }
    return x;
}

}  // namespace

TEST_CASE("elementwise forward values", "[autodiff]") {
    Tape t;
    Value a = t.constant(TensorValue::vector({1, 2}));
    Value b = t.constant(TensorValue::vector({3, 4}));
    CHECK(t.add(a, b).val().data == std::vector<double>{4, 6});
    CHECK(t.sub(b, a).val().data == std::vector<double>{2, 2});
    CHECK(t.mul(a, b).val().data == std::vector<double>{3, 8});
    CHECK(t.div(b, a).val().data == std::vector<double>{3, 2});

    Value s = t.softmax(t.constant(TensorValue::vector({0, 0, 0, 0})));
    for (double p : s.val().data) CHECK(p == Catch::Approx(0.25));

    Value i3 = t.constant(TensorValue::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
    Value x = t.constant(TensorValue::vector({2, -1, 5}));
    CHECK(t.matmul(i3, x).val().data == std::vector<double>{2, -1, 5});
}

TEST_CASE("scalar broadcast", "[autodiff]") {
    Tape t;
    Value v = t.constant(TensorValue::vector({1, 2, 3}));
    CHECK((v * 2.0).val().data == std::vector<double>{2, 4, 6});
    CHECK((1.0 - v).val().data == std::vector<double>{0, -1, -2});
    CHECK((v / 2.0).val().data == std::vector<double>{0.5, 1.0, 1.5});
}

TEST_CASE("shape mismatch raises with op and shapes", "[autodiff]") {
    Tape t;
    Value a = t.constant(TensorValue::vector({1, 2, 3}));
    Value b = t.constant(TensorValue::vector({1, 2}));
    CHECK_THROWS_WITH(t.add(a, b), Catch::Matchers::ContainsSubstring("add") &&
                                       Catch::Matchers::ContainsSubstring("[3]") &&
                                       Catch::Matchers::ContainsSubstring("[2]"));
    Value m = t.constant(TensorValue::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
    CHECK_THROWS_WITH(t.matmul(m, b), Catch::Matchers::ContainsSubstring("matmul"));
    CHECK_THROWS_AS(t.backward(a), std::invalid_argument);  // non-scalar root
}

TEST_CASE("backward on linear reductions", "[autodiff]") {
    Tape t;
    Value x = t.leaf(TensorValue::vector({1, 2, 3}));
    t.backward(t.sum(x));
    CHECK(t.grad(x).data == std::vector<double>{1, 1, 1});

    Tape t2;
    Value y = t2.leaf(TensorValue::vector({1, 2, 3, 4}));
    t2.backward(t2.mean(y));
    for (double g : t2.grad(y).data) CHECK(g == Catch::Approx(0.25));
}

TEST_CASE("uniform point is stationary for entropy of softmax", "[autodiff]") {
    Tape t;
    Value logits = t.leaf(TensorValue::vector({0, 0}));
    Value p = t.softmax(logits);
    Value h = t.neg(t.sum(t.mul(p, t.log(p))));
    t.backward(h);
    for (double g : t.grad(logits).data) CHECK(std::abs(g) < 1e-12);
}

TEST_CASE("log floor keeps collapsed entropies finite", "[autodiff]") {
    Tape t;
    Value x = t.leaf(TensorValue::vector({0.0, 1.0}));
    Value lx = t.log(x);
    CHECK(lx.val().data[0] == Catch::Approx(std::log(1e-12)));
    CHECK(lx.val().data[1] == Catch::Approx(0.0));
    t.backward(t.sum(lx));
    CHECK(t.grad(x).data[0] == 0.0);  // below the floor: constant region
    CHECK(t.grad(x).data[1] == Catch::Approx(1.0));
}

TEST_CASE("random composite graph matches finite differences", "[autodiff]") {
    Rng rng(20240817);
    // 5-op graph: y = mean(square(sigmoid(a) * b + exp(c)))
    const auto builder = [](Tape& t, Value params) {
        Value a = t.slice(params, 0, 3);
        Value b = t.slice(params, 3, 3);
        Value c = t.slice(params, 6, 3);
        return t.mean(t.square(t.add(t.mul(t.sigmoid(a), b), t.exp(c))));
    };
    for (int rep = 0; rep < 20; ++rep) {
        auto point = random_point(rng, 9, -1.5, 1.5);
        CHECK(grad_check(builder, point) < 1e-4);
    }
}

TEST_CASE("every op matches central finite differences at 100 points", "[autodiff]") {
    Rng rng(7);
    struct Case {
        const char* name;
        ScalarBuilder builder;
        bool off_kink;
        double lo, hi;
    };
    const std::vector<Case> cases = {
        {"add", [](Tape& t, Value p) { return t.sum(t.add(t.slice(p, 0, 4), t.slice(p, 4, 4))); },
         false, -2, 2},
        {"subtract",
         [](Tape& t, Value p) { return t.sum(t.sub(t.slice(p, 0, 4), t.slice(p, 4, 4))); }, false,
         -2, 2},
        {"multiply",
         [](Tape& t, Value p) {
             return t.sum(t.mul(t.slice(p, 0, 4), t.slice(p, 4, 4)));
         },
         false, -2, 2},
        {"divide",
         [](Tape& t, Value p) {
             return t.sum(t.div(t.slice(p, 0, 4), t.slice(p, 4, 4)));
         },
         false, 0.5, 2},
        {"matmul",
         [](Tape& t, Value p) {
             Value a = t.reshape(t.slice(p, 0, 4), 2, 2);
             Value b = t.reshape(t.slice(p, 4, 4), 2, 2);
             return t.sum(t.matmul(a, b));
         },
         false, -2, 2},
        {"exp", [](Tape& t, Value p) { return t.sum(t.exp(p)); }, false, -2, 2},
        {"log", [](Tape& t, Value p) { return t.sum(t.log(p)); }, false, 0.1, 3},
        {"softmax",
         [](Tape& t, Value p) {
             Value s = t.softmax(p);
             return t.sum(t.square(s));
         },
         false, -2, 2},
        {"sigmoid", [](Tape& t, Value p) { return t.sum(t.square(t.sigmoid(p))); }, false, -4, 4},
        {"leaky_relu", [](Tape& t, Value p) { return t.sum(t.leaky_relu(p, 0.01)); }, true, -2, 2},
        {"relu", [](Tape& t, Value p) { return t.sum(t.relu(p)); }, true, -2, 2},
        {"sum", [](Tape& t, Value p) { return t.sum(t.square(p)); }, false, -2, 2},
        {"mean", [](Tape& t, Value p) { return t.mean(t.square(p)); }, false, -2, 2},
        {"abs", [](Tape& t, Value p) { return t.sum(t.abs(p)); }, true, -2, 2},
        {"square", [](Tape& t, Value p) { return t.sum(t.square(p)); }, false, -2, 2},
    };
    for (const Case& c : cases) {
        double worst = 0.0;
        for (int rep = 0; rep < 100; ++rep) {
            auto point = c.off_kink ? random_point_off_kink(rng, 8)
                                    : random_point(rng, 8, c.lo, c.hi);
            worst = std::max(worst, grad_check(c.builder, point));
        }
        INFO(c.name);
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("matmul matrix-matrix gradient", "[autodiff]") {
    Rng rng(99);
    const auto builder = [](Tape& t, Value p) {
        Value m1 = t.reshape(t.slice(p, 0, 6), 2, 3);
        Value m2 = t.reshape(t.slice(p, 6, 6), 3, 2);
        return t.sum(t.square(t.matmul(m1, m2)));
    };
    for (int rep = 0; rep < 20; ++rep)
        CHECK(grad_check(builder, random_point(rng, 12, -1.5, 1.5)) < 1e-4);
}

TEST_CASE("softmax output is a strictly positive distribution", "[autodiff]") {
    Rng rng(3);
    for (int rep = 0; rep < 200; ++rep) {
        Tape t;
        auto point = random_point(rng, 9, -30, 30);
        Value p = t.softmax(t.constant(TensorValue::vector(point)));
        double total = 0.0;
        for (double v : p.val().data) {
            CHECK(v > 0.0);
            total += v;
        }
        CHECK(std::abs(total - 1.0) < 1e-12);
    }
}

TEST_CASE("rowwise softmax normalizes each row", "[autodiff]") {
    Tape t;
    Value m = t.softmax(t.constant(TensorValue::matrix(2, 3, {0, 0, 0, 1, 2, 3})));
    auto v = m.val();
    CHECK(v.data[0] == Catch::Approx(1.0 / 3));
    CHECK(v.data[3] + v.data[4] + v.data[5] == Catch::Approx(1.0));
    CHECK(v.data[5] > v.data[4]);
}

TEST_CASE("replay determinism: same inputs, bit-identical forward", "[autodiff]") {
    const auto run = [] {
        Rng rng(42);
        Tape t;
        Value x = t.leaf(TensorValue::vector(random_point(rng, 16, -1, 1)));
        Value y = t.mean(t.square(t.softmax(x)));
        t.backward(y);
        auto g = t.grad(x);
        return std::make_pair(y.item(), g.data);
    };
    auto [v1, g1] = run();
    auto [v2, g2] = run();
    CHECK(v1 == v2);
    CHECK(g1 == g2);
}

TEST_CASE("unreachable nodes hold zero gradient", "[autodiff]") {
    Tape t;
    Value used = t.leaf(TensorValue::vector({1, 2}));
    Value unused = t.leaf(TensorValue::vector({5, 5}));
    t.backward(t.sum(used));
    CHECK(t.grad(unused).data == std::vector<double>{0, 0});
}
