#include "drpose/graph.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "drpose/error.hpp"

namespace drpose {

namespace {

std::vector<std::size_t> strides_of(const Shape& shape) {
    std::vector<std::size_t> s(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
    return s;
}

// Walks every index of `out_shape`, calling fn(out_offset, in_offset) where the
// input offset is formed from per-axis input strides (0 for broadcast axes).
template <typename Fn>
void for_each_strided(const Shape& out_shape, const std::vector<std::size_t>& in_strides, Fn&& fn) {
    const std::size_t total = shape_size(out_shape);
    const std::size_t rank = out_shape.size();
    std::vector<std::size_t> idx(rank, 0);
    std::size_t in_off = 0;
    for (std::size_t o = 0; o < total; ++o) {
        fn(o, in_off);
        for (std::size_t ax = rank; ax-- > 0;) {
            ++idx[ax];
            in_off += in_strides[ax];
            if (idx[ax] < out_shape[ax]) break;
            in_off -= in_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
    std::vector<std::size_t> s(out.size(), 0);
    const auto in_strides = strides_of(in);
    const std::size_t offset = out.size() - in.size();
    for (std::size_t i = 0; i < in.size(); ++i) {
        s[offset + i] = in[i] == 1 ? 0 : in_strides[i];
    }
    return s;
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& perm) {
    Shape out_shape(perm.size());
    const auto in_strides = strides_of(x.shape());
    std::vector<std::size_t> s(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        out_shape[i] = x.shape()[perm[i]];
        s[i] = in_strides[perm[i]];
    }
    Tensor out(out_shape);
    auto od = out.data();
    auto xd = x.data();
    for_each_strided(out_shape, s, [&](std::size_t o, std::size_t i) { od[o] = xd[i]; });
    return out;
}

struct Split3 {
    std::size_t outer, dim, inner;
};

Split3 split_at(const Shape& shape, std::size_t axis) {
    Split3 s{1, shape[axis], 1};
    for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
    return s;
}

std::size_t batch_count(const Shape& s) {
    std::size_t b = 1;
    for (std::size_t i = 0; i + 2 < s.size(); ++i) b *= s[i];
    return b;
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

void add_into(Tensor& dst, const Tensor& src) {
    auto d = dst.data();
    auto s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

}  // namespace

std::string_view op_name(Op op) {
    switch (op) {
        case Op::Input: return "input";
        case Op::Parameter: return "parameter";
        case Op::Constant: return "constant";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::MatMul: return "matmul";
        case Op::Transpose: return "transpose";
        case Op::Reshape: return "reshape";
        case Op::Concat: return "concat";
        case Op::Slice: return "slice";
        case Op::Sum: return "sum";
        case Op::Mean: return "mean";
        case Op::Relu: return "relu";
        case Op::Gelu: return "gelu";
        case Op::Sigmoid: return "sigmoid";
        case Op::Tanh: return "tanh";
        case Op::Softmax: return "softmax";
        case Op::LayerNorm: return "layer_norm";
        case Op::Broadcast: return "broadcast";
        case Op::Sqrt: return "sqrt";
    }
    return "?";
}

void gemm_accumulate(const double* __restrict a, const double* __restrict b, double* __restrict c, std::size_t m,
                     std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* __restrict crow = c + i * n;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* __restrict brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

namespace {

// C(k,n) += A(m,k)^T * B(m,n)
void gemm_tn_accumulate(const double* __restrict a, const double* __restrict b, double* __restrict c, std::size_t m,
                        std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        const double* __restrict brow = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            double* __restrict crow = c + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C(m,k) += A(m,n) * B(k,n)^T
void gemm_nt_accumulate(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
                        std::vector<double>& scratch) {
    scratch.resize(n * k);
    for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j) scratch[j * k + p] = b[p * n + j];
    gemm_accumulate(a, scratch.data(), c, m, n, k);
}

}  // namespace

// ---------------------------------------------------------------------------
// Graph construction

Var Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
}

void Graph::check(Var v) const {
    if (v.id >= nodes_.size()) throw ShapeError("reference to unknown node " + std::to_string(v.id));
}

void Graph::fail(Op op, const std::string& detail) const {
    throw ShapeError("node " + std::to_string(nodes_.size()) + " (" + std::string(op_name(op)) + "): " + detail);
}

Var Graph::input(std::string name, Shape shape) {
    Node n;
    n.op = Op::Input;
    n.name = std::move(name);
    n.shape = std::move(shape);
    return push(std::move(n));
}

Var Graph::parameter(std::string name, Shape shape) {
    Node n;
    n.op = Op::Parameter;
    n.name = std::move(name);
    n.shape = std::move(shape);
    return push(std::move(n));
}

Var Graph::constant(Tensor value) {
    Node n;
    n.op = Op::Constant;
    n.shape = value.shape();
    n.constant = constants_.size();
    constants_.push_back(std::move(value));
    return push(std::move(n));
}

namespace {
Node elementwise(Op op, Var a, Var b, const Shape& s) {
    Node n;
    n.op = op;
    n.inputs = {a.id, b.id};
    n.shape = s;
    return n;
}
}  // namespace

Var Graph::add(Var a, Var b) {
    check(a), check(b);
    if (shape(a) != shape(b)) fail(Op::Add, "shapes " + shape_string(shape(a)) + " and " + shape_string(shape(b)));
    return push(elementwise(Op::Add, a, b, shape(a)));
}

Var Graph::sub(Var a, Var b) {
    check(a), check(b);
    if (shape(a) != shape(b)) fail(Op::Sub, "shapes " + shape_string(shape(a)) + " and " + shape_string(shape(b)));
    return push(elementwise(Op::Sub, a, b, shape(a)));
}

Var Graph::mul(Var a, Var b) {
    check(a), check(b);
    if (shape(a) != shape(b)) fail(Op::Mul, "shapes " + shape_string(shape(a)) + " and " + shape_string(shape(b)));
    return push(elementwise(Op::Mul, a, b, shape(a)));
}

Var Graph::matmul(Var a, Var b) {
    check(a), check(b);
    const Shape& sa = shape(a);
    const Shape& sb = shape(b);
    if (sa.size() < 2 || sb.size() < 2) fail(Op::MatMul, "operands must have rank >= 2");
    const std::size_t n = sa[sa.size() - 2], k = sa.back();
    const std::size_t kb = sb[sb.size() - 2], m = sb.back();
    if (k != kb) fail(Op::MatMul, "inner dimensions " + shape_string(sa) + " x " + shape_string(sb));
    Shape out;
    if (sa.size() > 2 && sb.size() > 2) {
        if (!std::equal(sa.begin(), sa.end() - 2, sb.begin(), sb.end() - 2))
            fail(Op::MatMul, "batch dimensions " + shape_string(sa) + " x " + shape_string(sb));
        out.assign(sa.begin(), sa.end() - 2);
    } else if (sa.size() > 2) {
        out.assign(sa.begin(), sa.end() - 2);
    } else if (sb.size() > 2) {
        out.assign(sb.begin(), sb.end() - 2);
    }
    out.push_back(n);
    out.push_back(m);
    Node node;
    node.op = Op::MatMul;
    node.inputs = {a.id, b.id};
    node.shape = std::move(out);
    return push(std::move(node));
}

Var Graph::transpose(Var a, std::vector<std::size_t> perm) {
    check(a);
    const Shape& sa = shape(a);
    if (perm.size() != sa.size()) fail(Op::Transpose, "permutation rank mismatch");
    std::vector<bool> seen(perm.size(), false);
    Shape out(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
        if (perm[i] >= sa.size() || seen[perm[i]]) fail(Op::Transpose, "invalid permutation");
        seen[perm[i]] = true;
        out[i] = sa[perm[i]];
    }
    Node n;
    n.op = Op::Transpose;
    n.inputs = {a.id};
    n.shape = std::move(out);
    n.perm = std::move(perm);
    return push(std::move(n));
}

Var Graph::transpose(Var a) {
    check(a);
    const std::size_t r = shape(a).size();
    if (r < 2) fail(Op::Transpose, "rank < 2");
    std::vector<std::size_t> perm(r);
    for (std::size_t i = 0; i < r; ++i) perm[i] = i;
    std::swap(perm[r - 1], perm[r - 2]);
    return transpose(a, std::move(perm));
}

Var Graph::reshape(Var a, Shape s) {
    check(a);
    if (shape_size(s) != shape_size(shape(a)))
        fail(Op::Reshape, "cannot reshape " + shape_string(shape(a)) + " to " + shape_string(s));
    Node n;
    n.op = Op::Reshape;
    n.inputs = {a.id};
    n.shape = std::move(s);
    return push(std::move(n));
}

Var Graph::concat(const std::vector<Var>& parts, std::size_t axis) {
    if (parts.empty()) fail(Op::Concat, "no operands");
    for (auto p : parts) check(p);
    Shape out = shape(parts[0]);
    if (axis >= out.size()) fail(Op::Concat, "axis out of range");
    out[axis] = 0;
    Node n;
    n.op = Op::Concat;
    n.axis = axis;
    for (auto p : parts) {
        const Shape& s = shape(p);
        if (s.size() != out.size()) fail(Op::Concat, "rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (i != axis && s[i] != out[i]) fail(Op::Concat, "shape mismatch " + shape_string(s));
        }
        out[axis] += s[axis];
        n.inputs.push_back(p.id);
    }
    n.shape = std::move(out);
    return push(std::move(n));
}

Var Graph::slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
    check(a);
    const Shape& sa = shape(a);
    if (axis >= sa.size() || begin >= end || end > sa[axis])
        fail(Op::Slice, "range [" + std::to_string(begin) + "," + std::to_string(end) + ") on " + shape_string(sa));
    Node n;
    n.op = Op::Slice;
    n.inputs = {a.id};
    n.axis = axis;
    n.begin = begin;
    n.end = end;
    n.shape = sa;
    n.shape[axis] = end - begin;
    return push(std::move(n));
}

namespace {
Node reduction(Op op, Var a, const Shape& sa, std::size_t axis, bool all) {
    Node n;
    n.op = op;
    n.inputs = {a.id};
    n.reduce_all = all;
    n.axis = axis;
    if (!all) {
        n.shape = sa;
        n.shape.erase(n.shape.begin() + static_cast<std::ptrdiff_t>(axis));
    }
    return n;
}
}  // namespace

Var Graph::sum(Var a, std::size_t axis) {
    check(a);
    if (axis >= shape(a).size()) fail(Op::Sum, "axis out of range");
    return push(reduction(Op::Sum, a, shape(a), axis, false));
}

Var Graph::sum(Var a) {
    check(a);
    return push(reduction(Op::Sum, a, shape(a), 0, true));
}

Var Graph::mean(Var a, std::size_t axis) {
    check(a);
    if (axis >= shape(a).size()) fail(Op::Mean, "axis out of range");
    return push(reduction(Op::Mean, a, shape(a), axis, false));
}

Var Graph::mean(Var a) {
    check(a);
    return push(reduction(Op::Mean, a, shape(a), 0, true));
}

namespace {
Node unary(Op op, Var a, const Shape& s) {
    Node n;
    n.op = op;
    n.inputs = {a.id};
    n.shape = s;
    return n;
}
}  // namespace

Var Graph::relu(Var a) { return check(a), push(unary(Op::Relu, a, shape(a))); }
Var Graph::gelu(Var a) { return check(a), push(unary(Op::Gelu, a, shape(a))); }
Var Graph::sigmoid(Var a) { return check(a), push(unary(Op::Sigmoid, a, shape(a))); }
Var Graph::tanh(Var a) { return check(a), push(unary(Op::Tanh, a, shape(a))); }
Var Graph::sqrt(Var a) { return check(a), push(unary(Op::Sqrt, a, shape(a))); }

Var Graph::softmax(Var a) {
    check(a);
    if (shape(a).empty()) fail(Op::Softmax, "rank 0 operand");
    return push(unary(Op::Softmax, a, shape(a)));
}

Var Graph::layer_norm(Var a, double eps) {
    check(a);
    if (shape(a).empty()) fail(Op::LayerNorm, "rank 0 operand");
    Node n = unary(Op::LayerNorm, a, shape(a));
    n.eps = eps;
    return push(std::move(n));
}

Var Graph::broadcast(Var a, Shape s) {
    check(a);
    const Shape& sa = shape(a);
    if (sa.size() > s.size()) fail(Op::Broadcast, "cannot broadcast " + shape_string(sa) + " to " + shape_string(s));
    const std::size_t off = s.size() - sa.size();
    for (std::size_t i = 0; i < sa.size(); ++i) {
        if (sa[i] != 1 && sa[i] != s[off + i])
            fail(Op::Broadcast, "cannot broadcast " + shape_string(sa) + " to " + shape_string(s));
    }
    Node n = unary(Op::Broadcast, a, std::move(s));
    return push(std::move(n));
}

Var Graph::broadcast_to_common(Var v, const Shape& target) {
    return shape(v) == target ? v : broadcast(v, target);
}

namespace {
Shape common_shape(const Shape& a, const Shape& b) {
    const std::size_t r = std::max(a.size(), b.size());
    Shape out(r, 1);
    for (std::size_t i = 0; i < r; ++i) {
        const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
        const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
        if (da != db && da != 1 && db != 1)
            throw ShapeError("incompatible broadcast " + shape_string(a) + " and " + shape_string(b));
        out[i] = std::max(da, db);
    }
    return out;
}
}  // namespace

Var Graph::badd(Var a, Var b) {
    const Shape s = common_shape(shape(a), shape(b));
    return add(broadcast_to_common(a, s), broadcast_to_common(b, s));
}

Var Graph::bsub(Var a, Var b) {
    const Shape s = common_shape(shape(a), shape(b));
    return sub(broadcast_to_common(a, s), broadcast_to_common(b, s));
}

Var Graph::bmul(Var a, Var b) {
    const Shape s = common_shape(shape(a), shape(b));
    return mul(broadcast_to_common(a, s), broadcast_to_common(b, s));
}

void Graph::mark_output(std::string name, Var v) {
    check(v);
    outputs_[std::move(name)] = v;
}

// ---------------------------------------------------------------------------
// Bindings / Evaluation

const Tensor* Bindings::find(const std::string& name) const {
    if (auto it = owned_.find(name); it != owned_.end()) return &it->second;
    if (auto it = refs_.find(name); it != refs_.end()) return it->second;
    return nullptr;
}

const Tensor& Evaluation::output(const std::string& name) const {
    auto it = graph_->outputs().find(name);
    if (it == graph_->outputs().end()) throw UsageError("graph has no output named '" + name + "'");
    return values_.at(it->second.id);
}

std::map<std::string, Tensor> Evaluation::outputs() const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, v] : graph_->outputs()) out.emplace(name, values_.at(v.id));
    return out;
}

namespace {

void matmul_forward(const Tensor& a, const Tensor& b, Tensor& out) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    const std::size_t n = sa[sa.size() - 2], k = sa.back(), m = sb.back();
    const std::size_t ba = batch_count(sa), bb = batch_count(sb);
    const std::size_t batches = std::max(ba, bb);
    auto ad = a.data();
    auto bd = b.data();
    auto od = out.data();
    if (ba > 1 && bb == 1) {
        // shared right operand: fold the batch into rows
        gemm_accumulate(ad.data(), bd.data(), od.data(), ba * n, k, m);
        return;
    }
    for (std::size_t i = 0; i < batches; ++i) {
        const double* ap = ad.data() + (ba > 1 ? i * n * k : 0);
        const double* bp = bd.data() + (bb > 1 ? i * k * m : 0);
        gemm_accumulate(ap, bp, od.data() + i * n * m, n, k, m);
    }
}

void matmul_backward(const Tensor& a, const Tensor& b, const Tensor& g, Tensor* ga, Tensor* gb) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    const std::size_t n = sa[sa.size() - 2], k = sa.back(), m = sb.back();
    const std::size_t ba = batch_count(sa), bb = batch_count(sb);
    const std::size_t batches = std::max(ba, bb);
    std::vector<double> scratch;
    auto ad = a.data();
    auto bd = b.data();
    auto gd = g.data();
    if (ba > 1 && bb == 1) {
        if (ga) gemm_nt_accumulate(gd.data(), bd.data(), ga->data().data(), ba * n, k, m, scratch);
        if (gb) gemm_tn_accumulate(ad.data(), gd.data(), gb->data().data(), ba * n, k, m);
        return;
    }
    for (std::size_t i = 0; i < batches; ++i) {
        const double* ap = ad.data() + (ba > 1 ? i * n * k : 0);
        const double* bp = bd.data() + (bb > 1 ? i * k * m : 0);
        const double* gp = gd.data() + i * n * m;
        if (ga) gemm_nt_accumulate(gp, bp, ga->data().data() + (ba > 1 ? i * n * k : 0), n, k, m, scratch);
        if (gb) gemm_tn_accumulate(ap, gp, gb->data().data() + (bb > 1 ? i * k * m : 0), n, k, m);
    }
}

Tensor forward_node(const Graph& graph, const Node& node, const std::vector<Tensor>& values) {
    auto in = [&](std::size_t i) -> const Tensor& { return values[node.inputs[i]]; };
    switch (node.op) {
        case Op::Input:
        case Op::Parameter:
            break;  // bound by the caller
        case Op::Constant:
            return graph.constants()[node.constant];
        case Op::Add:
        case Op::Sub:
        case Op::Mul: {
            Tensor out(node.shape);
            auto o = out.data();
            auto a = in(0).data();
            auto b = in(1).data();
            if (node.op == Op::Add)
                for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] + b[i];
            else if (node.op == Op::Sub)
                for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] - b[i];
            else
                for (std::size_t i = 0; i < o.size(); ++i) o[i] = a[i] * b[i];
            return out;
        }
        case Op::MatMul: {
            Tensor out(node.shape);
            matmul_forward(in(0), in(1), out);
            return out;
        }
        case Op::Transpose:
            return permute(in(0), node.perm);
        case Op::Reshape:
            return in(0).reshaped(node.shape);
        case Op::Concat: {
            Tensor out(node.shape);
            const Split3 so = split_at(node.shape, node.axis);
            std::size_t col = 0;
            auto od = out.data();
            for (std::size_t p = 0; p < node.inputs.size(); ++p) {
                const Tensor& part = in(p);
                const std::size_t w = part.shape()[node.axis] * so.inner;
                auto pd = part.data();
                for (std::size_t o = 0; o < so.outer; ++o)
                    std::copy_n(pd.data() + o * w, w, od.data() + o * so.dim * so.inner + col);
                col += w;
            }
            return out;
        }
        case Op::Slice: {
            Tensor out(node.shape);
            const Split3 si = split_at(in(0).shape(), node.axis);
            const std::size_t w = (node.end - node.begin) * si.inner;
            auto xd = in(0).data();
            auto od = out.data();
            for (std::size_t o = 0; o < si.outer; ++o)
                std::copy_n(xd.data() + o * si.dim * si.inner + node.begin * si.inner, w, od.data() + o * w);
            return out;
        }
        case Op::Sum:
        case Op::Mean: {
            const Tensor& x = in(0);
            Tensor out(node.shape);
            auto xd = x.data();
            auto od = out.data();
            if (node.reduce_all) {
                double s = 0.0;
                for (double v : xd) s += v;
                od[0] = node.op == Op::Mean ? s / static_cast<double>(x.size()) : s;
                return out;
            }
            const Split3 s = split_at(x.shape(), node.axis);
            for (std::size_t o = 0; o < s.outer; ++o)
                for (std::size_t j = 0; j < s.dim; ++j)
                    for (std::size_t i = 0; i < s.inner; ++i)
                        od[o * s.inner + i] += xd[(o * s.dim + j) * s.inner + i];
            if (node.op == Op::Mean)
                for (double& v : od) v /= static_cast<double>(s.dim);
            return out;
        }
        case Op::Relu:
        case Op::Gelu:
        case Op::Sigmoid:
        case Op::Tanh:
        case Op::Sqrt: {
            Tensor out(node.shape);
            auto o = out.data();
            auto x = in(0).data();
            for (std::size_t i = 0; i < o.size(); ++i) {
                const double v = x[i];
                switch (node.op) {
                    case Op::Relu: o[i] = v > 0.0 ? v : 0.0; break;
                    case Op::Gelu: o[i] = gelu_value(v); break;
                    case Op::Sigmoid: o[i] = 1.0 / (1.0 + std::exp(-v)); break;
                    case Op::Tanh: o[i] = std::tanh(v); break;
                    default: o[i] = std::sqrt(v); break;
                }
            }
            return out;
        }
        case Op::Softmax: {
            const Tensor& x = in(0);
            Tensor out(node.shape);
            const std::size_t w = node.shape.back();
            const std::size_t rows = x.size() / w;
            auto xd = x.data();
            auto od = out.data();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* xr = xd.data() + r * w;
                double* orow = od.data() + r * w;
                const double mx = *std::max_element(xr, xr + w);
                double s = 0.0;
                for (std::size_t j = 0; j < w; ++j) s += (orow[j] = std::exp(xr[j] - mx));
                for (std::size_t j = 0; j < w; ++j) orow[j] /= s;
            }
            return out;
        }
        case Op::LayerNorm: {
            const Tensor& x = in(0);
            Tensor out(node.shape);
            const std::size_t w = node.shape.back();
            const std::size_t rows = x.size() / w;
            auto xd = x.data();
            auto od = out.data();
            for (std::size_t r = 0; r < rows; ++r) {
                const double* xr = xd.data() + r * w;
                double* orow = od.data() + r * w;
                double mu = 0.0;
                for (std::size_t j = 0; j < w; ++j) mu += xr[j];
                mu /= static_cast<double>(w);
                double var = 0.0;
                for (std::size_t j = 0; j < w; ++j) var += (xr[j] - mu) * (xr[j] - mu);
                var /= static_cast<double>(w);
                const double inv = 1.0 / std::sqrt(var + node.eps);
                for (std::size_t j = 0; j < w; ++j) orow[j] = (xr[j] - mu) * inv;
            }
            return out;
        }
        case Op::Broadcast: {
            const Tensor& x = in(0);
            Tensor out(node.shape);
            auto od = out.data();
            auto xd = x.data();
            for_each_strided(node.shape, broadcast_strides(x.shape(), node.shape),
                             [&](std::size_t o, std::size_t i) { od[o] = xd[i]; });
            return out;
        }
    }
    return {};
}

}  // namespace

Evaluation evaluate(const Graph& graph, const Bindings& bindings) {
    std::vector<Tensor> values;
    values.reserve(graph.size());
    for (std::size_t id = 0; id < graph.size(); ++id) {
        const Node& node = graph.nodes()[id];
        if (node.op == Op::Input || node.op == Op::Parameter) {
            const Tensor* t = bindings.find(node.name);
            if (!t) throw UsageError("unbound " + std::string(op_name(node.op)) + " '" + node.name + "'");
            if (t->shape() != node.shape)
                throw ShapeError("binding '" + node.name + "' (node " + std::to_string(id) + ") has shape " +
                                 shape_string(t->shape()) + ", expected " + shape_string(node.shape));
            values.push_back(*t);
        } else {
            values.push_back(forward_node(graph, node, values));
        }
    }
    return Evaluation(graph, std::move(values));
}

Gradients backward(const Evaluation& eval, Var output) {
    const Graph& graph = eval.graph();
    const auto& values = eval.values();
    if (output.id >= graph.size()) throw UsageError("backward: unknown output node");
    if (shape_size(graph.shape(output)) != 1)
        throw ShapeError("backward: output node " + std::to_string(output.id) + " is not scalar, shape " +
                         shape_string(graph.shape(output)));

    std::vector<Tensor> grads(graph.size());
    std::vector<bool> has(graph.size(), false);
    auto grad_of = [&](std::size_t id) -> Tensor& {
        if (!has[id]) {
            grads[id] = Tensor(graph.nodes()[id].shape, 0.0);
            has[id] = true;
        }
        return grads[id];
    };
    grad_of(output.id)[0] = 1.0;

    Gradients result;
    for (std::size_t id = output.id + 1; id-- > 0;) {
        if (!has[id]) continue;
        const Node& node = graph.nodes()[id];
        const Tensor& g = grads[id];
        auto gd = g.data();
        auto x = [&](std::size_t i) -> const Tensor& { return values[node.inputs[i]]; };
        switch (node.op) {
            case Op::Input:
            case Op::Parameter: {
                auto it = result.find(node.name);
                if (it == result.end())
                    result.emplace(node.name, g);
                else
                    add_into(it->second, g);
                break;
            }
            case Op::Constant:
                break;
            case Op::Add:
                add_into(grad_of(node.inputs[0]), g);
                add_into(grad_of(node.inputs[1]), g);
                break;
            case Op::Sub: {
                add_into(grad_of(node.inputs[0]), g);
                auto gb = grad_of(node.inputs[1]).data();
                for (std::size_t i = 0; i < gd.size(); ++i) gb[i] -= gd[i];
                break;
            }
            case Op::Mul: {
                auto a = x(0).data();
                auto b = x(1).data();
                {
                    auto ga = grad_of(node.inputs[0]).data();
                    for (std::size_t i = 0; i < gd.size(); ++i) ga[i] += gd[i] * b[i];
                }
                auto gb = grad_of(node.inputs[1]).data();
                for (std::size_t i = 0; i < gd.size(); ++i) gb[i] += gd[i] * a[i];
                break;
            }
            case Op::MatMul: {
                Tensor* ga = &grad_of(node.inputs[0]);
                Tensor* gb = &grad_of(node.inputs[1]);
                matmul_backward(x(0), x(1), g, ga, gb);
                break;
            }
            case Op::Transpose: {
                std::vector<std::size_t> inv(node.perm.size());
                for (std::size_t i = 0; i < inv.size(); ++i) inv[node.perm[i]] = i;
                add_into(grad_of(node.inputs[0]), permute(g, inv));
                break;
            }
            case Op::Reshape: {
                auto gi = grad_of(node.inputs[0]).data();
                for (std::size_t i = 0; i < gd.size(); ++i) gi[i] += gd[i];
                break;
            }
            case Op::Concat: {
                const Split3 so = split_at(node.shape, node.axis);
                std::size_t col = 0;
                for (std::size_t p = 0; p < node.inputs.size(); ++p) {
                    Tensor& gp = grad_of(node.inputs[p]);
                    const std::size_t w = gp.shape()[node.axis] * so.inner;
                    auto gpd = gp.data();
                    for (std::size_t o = 0; o < so.outer; ++o)
                        for (std::size_t j = 0; j < w; ++j)
                            gpd[o * w + j] += gd[o * so.dim * so.inner + col + j];
                    col += w;
                }
                break;
            }
            case Op::Slice: {
                Tensor& gi = grad_of(node.inputs[0]);
                const Split3 si = split_at(gi.shape(), node.axis);
                const std::size_t w = (node.end - node.begin) * si.inner;
                auto gid = gi.data();
                for (std::size_t o = 0; o < si.outer; ++o)
                    for (std::size_t j = 0; j < w; ++j)
                        gid[o * si.dim * si.inner + node.begin * si.inner + j] += gd[o * w + j];
                break;
            }
            case Op::Sum:
            case Op::Mean: {
                Tensor& gi = grad_of(node.inputs[0]);
                auto gid = gi.data();
                if (node.reduce_all) {
                    const double v = node.op == Op::Mean ? gd[0] / static_cast<double>(gi.size()) : gd[0];
                    for (double& e : gid) e += v;
                    break;
                }
                const Split3 s = split_at(gi.shape(), node.axis);
                const double scale = node.op == Op::Mean ? 1.0 / static_cast<double>(s.dim) : 1.0;
                for (std::size_t o = 0; o < s.outer; ++o)
                    for (std::size_t j = 0; j < s.dim; ++j)
                        for (std::size_t i = 0; i < s.inner; ++i)
                            gid[(o * s.dim + j) * s.inner + i] += gd[o * s.inner + i] * scale;
                break;
            }
            case Op::Relu:
            case Op::Gelu:
            case Op::Sigmoid:
            case Op::Tanh:
            case Op::Sqrt: {
                auto xi = x(0).data();
                auto y = values[id].data();
                auto gi = grad_of(node.inputs[0]).data();
                for (std::size_t i = 0; i < gd.size(); ++i) {
                    double d = 0.0;
                    switch (node.op) {
                        case Op::Relu: d = xi[i] > 0.0 ? 1.0 : 0.0; break;
                        case Op::Gelu: d = gelu_grad(xi[i]); break;
                        case Op::Sigmoid: d = y[i] * (1.0 - y[i]); break;
                        case Op::Tanh: d = 1.0 - y[i] * y[i]; break;
                        default: d = 0.5 / y[i]; break;
                    }
                    gi[i] += gd[i] * d;
                }
                break;
            }
            case Op::Softmax: {
                const std::size_t w = node.shape.back();
                const std::size_t rows = gd.size() / w;
                auto y = values[id].data();
                auto gi = grad_of(node.inputs[0]).data();
                for (std::size_t r = 0; r < rows; ++r) {
                    double dot = 0.0;
                    for (std::size_t j = 0; j < w; ++j) dot += gd[r * w + j] * y[r * w + j];
                    for (std::size_t j = 0; j < w; ++j) gi[r * w + j] += y[r * w + j] * (gd[r * w + j] - dot);
                }
                break;
            }
            case Op::LayerNorm: {
                const std::size_t w = node.shape.back();
                const std::size_t rows = gd.size() / w;
                auto xi = x(0).data();
                auto y = values[id].data();
                auto gi = grad_of(node.inputs[0]).data();
                const double inv_w = 1.0 / static_cast<double>(w);
                for (std::size_t r = 0; r < rows; ++r) {
                    const double* xr = xi.data() + r * w;
                    double mu = 0.0;
                    for (std::size_t j = 0; j < w; ++j) mu += xr[j];
                    mu *= inv_w;
                    double var = 0.0;
                    for (std::size_t j = 0; j < w; ++j) var += (xr[j] - mu) * (xr[j] - mu);
                    var *= inv_w;
                    const double inv_std = 1.0 / std::sqrt(var + node.eps);
                    double mg = 0.0, mgy = 0.0;
                    for (std::size_t j = 0; j < w; ++j) {
                        mg += gd[r * w + j];
                        mgy += gd[r * w + j] * y[r * w + j];
                    }
                    mg *= inv_w;
                    mgy *= inv_w;
                    for (std::size_t j = 0; j < w; ++j)
                        gi[r * w + j] += inv_std * (gd[r * w + j] - mg - y[r * w + j] * mgy);
                }
                break;
            }
            case Op::Broadcast: {
                Tensor& gi = grad_of(node.inputs[0]);
                auto gid = gi.data();
                for_each_strided(node.shape, broadcast_strides(gi.shape(), node.shape),
                                 [&](std::size_t o, std::size_t i) { gid[i] += gd[o]; });
                break;
            }
        }
        grads[id] = Tensor();  // consumed
    }
    for (const Node& node : graph.nodes()) {
        if ((node.op == Op::Input || node.op == Op::Parameter) && !result.contains(node.name))
            result.emplace(node.name, Tensor(node.shape, 0.0));
    }
    return result;
}

}  // namespace drpose
