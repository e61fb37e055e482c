#include <doctest.h>

#include <functional>

#include "drpose/error.hpp"
#include "drpose/graph.hpp"
#include "support/gradcheck.hpp"
#include "support/op_cases.hpp"

using namespace drpose;
using drpose::testing::gradcheck;
using drpose::testing::random_tensor;

TEST_CASE("evaluate: identity, matmul and softmax examples") {
    Graph g;
    auto x = g.input("x", {3});
    g.mark_output("id", x);
    Bindings b;
    b.set("x", Tensor::vector({1, 2, 3}));
    CHECK(evaluate(g, b).output("id") == Tensor::vector({1, 2, 3}));

    Graph g2;
    auto a = g2.input("a", {2, 2});
    auto eye = g2.input("i", {2, 2});
    g2.mark_output("prod", g2.matmul(a, eye));
    Bindings b2;
    b2.set("a", Tensor::matrix({{1, 2}, {3, 4}}));
    b2.set("i", Tensor::matrix({{1, 0}, {0, 1}}));
    CHECK(evaluate(g2, b2).output("prod") == Tensor::matrix({{1, 2}, {3, 4}}));

    Graph g3;
    auto z = g3.input("z", {4});
    g3.mark_output("p", g3.softmax(z));
    Bindings b3;
    b3.set("z", Tensor::vector({0, 0, 0, 0}));
    CHECK(evaluate(g3, b3).output("p") == Tensor::vector({0.25, 0.25, 0.25, 0.25}));
}

TEST_CASE("evaluate: errors name the node") {
    Graph g;
    auto a = g.input("a", {2, 3});
    auto b = g.input("b", {2, 2});
    try {
        g.matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("node 2 (matmul)") != std::string::npos);
    }
    CHECK_THROWS_AS(g.add(a, b), ShapeError);

    Graph h;
    auto x = h.input("x", {2});
    h.mark_output("y", h.relu(x));
    Bindings none;
    CHECK_THROWS_AS(evaluate(h, none), UsageError);
    Bindings wrong;
    wrong.set("x", Tensor::vector({1, 2, 3}));
    CHECK_THROWS_AS(evaluate(h, wrong), ShapeError);
}

TEST_CASE("evaluate is referentially transparent") {
    RngStream rng(7, 1);
    Graph g;
    auto x = g.input("x", {5, 4});
    auto w = g.parameter("w", {4, 4});
    auto y = g.layer_norm(g.gelu(g.matmul(x, w)));
    g.mark_output("y", g.softmax(y));
    Bindings b;
    b.set("x", random_tensor(rng, {5, 4}));
    b.set("w", random_tensor(rng, {4, 4}));
    const auto first = evaluate(g, b).output("y");
    const auto second = evaluate(g, b).output("y");
    CHECK(first == second);
}

TEST_CASE("backward: scalar examples") {
    Graph g;
    auto x = g.parameter("x", {});
    auto y = g.mul(x, x);
    Bindings b;
    b.set("x", Tensor::scalar(3.0));
    auto grads = backward(evaluate(g, b), y);
    CHECK(grads.at("x").item() == doctest::Approx(6.0));

    Graph h;
    auto p = h.parameter("p", {2});
    auto c = h.constant(Tensor::vector({1.0, 2.0}));
    auto s = h.sum(c);
    Bindings hb;
    hb.set("p", Tensor::vector({4.0, 5.0}));
    auto hg = backward(evaluate(h, hb), s);
    CHECK(hg.at("p") == Tensor::vector({0.0, 0.0}));

    Graph k;
    auto v = k.parameter("v", {3});
    auto r = k.relu(v);
    Bindings kb;
    kb.set("v", Tensor::vector({1, 2, 3}));
    CHECK_THROWS_AS(backward(evaluate(k, kb), r), ShapeError);
}


TEST_CASE("backward: every primitive matches central finite differences") {
    const auto cases = drpose::testing::primitive_cases();
    for (const auto& c : cases) {
        for (std::uint64_t point = 0; point < 10; ++point) {
            CAPTURE(c.name);
            CAPTURE(point);
            CHECK(drpose::testing::check_op(c, point) < 1e-4);
        }
    }
}

TEST_CASE("backward: random three-layer network") {
    RngStream rng(5, 3);
    Graph g;
    auto x = g.input("x", {6, 4});
    auto w1 = g.parameter("w1", {4, 8});
    auto b1 = g.parameter("b1", {8});
    auto w2 = g.parameter("w2", {8, 8});
    auto w3 = g.parameter("w3", {8, 3});
    auto h1 = g.tanh(g.badd(g.matmul(x, w1), b1));
    auto h2 = g.gelu(g.layer_norm(g.matmul(h1, w2)));
    auto out = g.softmax(g.matmul(h2, w3));
    auto loss = g.mean(g.mul(out, g.constant(random_tensor(rng, {6, 3}))));
    std::map<std::string, Tensor> leaves;
    leaves.emplace("x", random_tensor(rng, {6, 4}));
    leaves.emplace("w1", random_tensor(rng, {4, 8}, 0.5));
    leaves.emplace("b1", random_tensor(rng, {8}, 0.1));
    leaves.emplace("w2", random_tensor(rng, {8, 8}, 0.5));
    leaves.emplace("w3", random_tensor(rng, {8, 3}, 0.5));
    CHECK(gradcheck(g, loss, leaves) < 1e-4);
}

TEST_CASE("matmul rows do not depend on batch size") {
    RngStream rng(9, 9);
    const Tensor w = random_tensor(rng, {16, 7});
    const Tensor x = random_tensor(rng, {5, 16});
    Graph g;
    auto xv = g.input("x", {5, 16});
    auto wv = g.parameter("w", {16, 7});
    g.mark_output("y", g.matmul(xv, wv));
    Bindings b;
    b.set_ref("x", x);
    b.set_ref("w", w);
    const Tensor full = evaluate(g, b).output("y");

    Graph one;
    auto rv = one.input("x", {1, 16});
    auto w1 = one.parameter("w", {16, 7});
    one.mark_output("y", one.matmul(rv, w1));
    Bindings b1;
    b1.set("x", Tensor({1, 16}, std::vector<double>(x.data().begin() + 32, x.data().begin() + 48)));
    b1.set_ref("w", w);
    const Tensor row = evaluate(one, b1).output("y");
    for (std::size_t j = 0; j < 7; ++j) CHECK(row[j] == full.at(2, j));
}
