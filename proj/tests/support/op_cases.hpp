#pragma once

#include <functional>
#include <vector>

#include "support/gradcheck.hpp"

namespace drpose::testing {

// Builds loss = sum(op(inputs) * weights) so every output element contributes.
using OpBuilder = std::function<Var(Graph&, const std::vector<Var>&)>;

struct OpCase {
    const char* name;
    std::vector<Shape> inputs;
    OpBuilder build;
    bool positive = false;
};

inline double check_op(const OpCase& c, std::uint64_t point) {
    RngStream rng(11, 1000 + point);
    Graph g;
    std::vector<Var> vars;
    std::map<std::string, Tensor> leaves;
    for (std::size_t i = 0; i < c.inputs.size(); ++i) {
        const std::string name = "in" + std::to_string(i);
        vars.push_back(g.parameter(name, c.inputs[i]));
        Tensor t = random_tensor(rng, c.inputs[i]);
        if (c.positive)
            for (double& v : t.data()) v = 0.5 + std::abs(v);
        leaves.emplace(name, std::move(t));
    }
    Var out = c.build(g, vars);
    Var weights = g.constant(random_tensor(rng, g.shape(out)));
    Var loss = g.sum(g.mul(out, weights));
    return gradcheck(g, loss, leaves);
}

// One case per differentiable primitive; leaves are Input/Parameter/Constant.
inline std::vector<OpCase> primitive_cases() {
    return {
        {"add", {{3, 4}, {3, 4}}, [](Graph& g, auto& v) { return g.add(v[0], v[1]); }},
        {"sub", {{3, 4}, {3, 4}}, [](Graph& g, auto& v) { return g.sub(v[0], v[1]); }},
        {"mul", {{3, 4}, {3, 4}}, [](Graph& g, auto& v) { return g.mul(v[0], v[1]); }},
        {"matmul", {{3, 4}, {4, 2}}, [](Graph& g, auto& v) { return g.matmul(v[0], v[1]); }},
        {"matmul_batched_shared", {{2, 3, 4}, {4, 5}}, [](Graph& g, auto& v) { return g.matmul(v[0], v[1]); }},
        {"matmul_shared_left", {{3, 3}, {2, 3, 4}}, [](Graph& g, auto& v) { return g.matmul(v[0], v[1]); }},
        {"matmul_batched", {{2, 3, 4}, {2, 4, 2}}, [](Graph& g, auto& v) { return g.matmul(v[0], v[1]); }},
        {"transpose", {{2, 3, 4}}, [](Graph& g, auto& v) { return g.transpose(v[0], {2, 0, 1}); }},
        {"reshape", {{2, 6}}, [](Graph& g, auto& v) { return g.reshape(v[0], {3, 4}); }},
        {"concat", {{2, 3}, {2, 2}}, [](Graph& g, auto& v) { return g.concat({v[0], v[1]}, 1); }},
        {"slice", {{4, 5}}, [](Graph& g, auto& v) { return g.slice(v[0], 1, 1, 4); }},
        {"sum_axis", {{3, 4, 2}}, [](Graph& g, auto& v) { return g.sum(v[0], 1); }},
        {"sum_all", {{3, 4}}, [](Graph& g, auto& v) { return g.sum(v[0]); }},
        {"mean_axis", {{3, 4, 2}}, [](Graph& g, auto& v) { return g.mean(v[0], 0); }},
        {"mean_all", {{3, 4}}, [](Graph& g, auto& v) { return g.mean(v[0]); }},
        {"relu", {{4, 5}}, [](Graph& g, auto& v) { return g.relu(v[0]); }},
        {"gelu", {{4, 5}}, [](Graph& g, auto& v) { return g.gelu(v[0]); }},
        {"sigmoid", {{4, 5}}, [](Graph& g, auto& v) { return g.sigmoid(v[0]); }},
        {"tanh", {{4, 5}}, [](Graph& g, auto& v) { return g.tanh(v[0]); }},
        {"softmax", {{3, 5}}, [](Graph& g, auto& v) { return g.softmax(v[0]); }},
        {"layer_norm", {{3, 6}}, [](Graph& g, auto& v) { return g.layer_norm(v[0]); }},
        {"broadcast", {{3, 1}}, [](Graph& g, auto& v) { return g.broadcast(v[0], {2, 3, 4}); }},
        {"sqrt", {{3, 4}}, [](Graph& g, auto& v) { return g.sqrt(v[0]); }, true},
    };
}

}  // namespace drpose::testing
