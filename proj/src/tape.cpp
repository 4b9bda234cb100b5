#include "lpcr/tape.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "lpcr/kernels.hpp"

namespace lpcr {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

size_t Tensor::flat_index(std::initializer_list<int> idx) const {
    if (idx.size() != shape.size())
        throw std::invalid_argument("tensor index rank " + std::to_string(idx.size()) +
                                    " for shape " + shape_str(shape));
    size_t flat = 0;
    auto it = idx.begin();
    for (size_t d = 0; d < shape.size(); ++d, ++it) {
        if (*it < 0 || *it >= shape[d]) throw std::out_of_range("tensor index out of range");
        flat = flat * shape[d] + static_cast<size_t>(*it);
    }
    return flat;
}

void check_finite(const double* v, size_t n, const std::string& what) {
    for (size_t i = 0; i < n; ++i)
        if (!std::isfinite(v[i]))
            throw std::runtime_error("non-finite value in " + what + " at element " +
                                     std::to_string(i));
}

void check_finite(const Tensor& t, const std::string& what) {
    check_finite(t.values.data(), t.values.size(), what);
}

const char* op_name(Op op) {
    switch (op) {
        case Op::Leaf: return "leaf";
        case Op::Const: return "const";
        case Op::Add: return "add";
        case Op::Sub: return "sub";
        case Op::Mul: return "mul";
        case Op::MatMul: return "matmul";
        case Op::Concat: return "concat";
        case Op::Slice: return "slice";
        case Op::Relu: return "relu";
        case Op::Sigmoid: return "sigmoid";
        case Op::Tanh: return "tanh";
        case Op::Sum: return "sum";
        case Op::Mean: return "mean";
        case Op::Conv3d: return "conv3d";
        case Op::ChannelBias: return "channel_bias";
        case Op::InstanceNorm: return "instance_norm";
        case Op::AvgPool3d: return "avg_pool3d";
        case Op::GlobalAvgPool: return "global_avg_pool";
        case Op::BceLogit: return "bce_logit";
    }
    return "?";
}

namespace {

double sigmoid_stable(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

int spatial_numel(const Shape& s) {
    int n = 1;
    for (size_t i = 1; i < s.size(); ++i) n *= s[i];
    return n;
}

}  // namespace

void Tape::shape_error(Op op, const Shape& a, const Shape& b) const {
    throw std::invalid_argument(std::string(op_name(op)) + ": shape mismatch " + shape_str(a) +
                                " vs " + shape_str(b));
}

size_t Tape::check_var(Var v) const {
    if (v.id < 0 || static_cast<size_t>(v.id) >= nodes_.size())
        throw std::invalid_argument("invalid tape variable");
    return static_cast<size_t>(v.id);
}

std::span<const double> Tape::values_of(const Node& n) const {
    if (n.external_val) return {n.external_val, static_cast<size_t>(numel(n.shape))};
    return {n.val.data(), n.val.size()};
}

std::span<const double> Tape::value(Var v) const { return values_of(node(v)); }

std::span<const double> Tape::grad(Var v) const {
    const Node& n = node(v);
    return {n.grad.data(), n.grad.size()};
}

Var Tape::record(Node n) {
    for (int i = 0; i < n.n_in; ++i) n.needs_grad |= nodes_[n.in[i]].needs_grad;
    for (int id : n.multi_in) n.needs_grad |= nodes_[id].needs_grad;
    if (opt_.check_finite && !n.val.empty())
        check_finite(n.val.data(), n.val.size(), op_name(n.op));
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Tape::leaf(Tensor& t) {
    Node n;
    n.op = Op::Leaf;
    n.shape = t.shape;
    n.external = &t;
    n.external_val = t.values.data();
    n.needs_grad = t.requires_grad;
    if (opt_.check_finite) check_finite(t, "leaf");
    return record(std::move(n));
}

Var Tape::input(const Tensor& t) {
    Node n;
    n.op = Op::Leaf;
    n.shape = t.shape;
    n.external_val = t.values.data();
    if (opt_.check_finite) check_finite(t, "input");
    return record(std::move(n));
}

Var Tape::constant(Shape shape, std::vector<double> values) {
    if (numel(shape) != static_cast<int>(values.size()))
        throw std::invalid_argument("const: " + std::to_string(values.size()) +
                                    " values for shape " + shape_str(shape));
    Node n;
    n.op = Op::Const;
    n.shape = std::move(shape);
    n.val = std::move(values);
    return record(std::move(n));
}

// Elementwise with scalar-tensor broadcast only; any other mismatch throws.
Var Tape::add(Var a, Var b) { return primitive(Op::Add, {a, b}); }
Var Tape::sub(Var a, Var b) { return primitive(Op::Sub, {a, b}); }
Var Tape::mul(Var a, Var b) { return primitive(Op::Mul, {a, b}); }
Var Tape::matmul(Var a, Var b) { return primitive(Op::MatMul, {a, b}); }
Var Tape::concat(const std::vector<Var>& parts) { return primitive(Op::Concat, parts); }
Var Tape::slice(Var a, int start, int len) {
    return primitive(Op::Slice, {a}, OpAttrs{start, len, 0.0});
}
Var Tape::relu(Var a) { return primitive(Op::Relu, {a}); }
Var Tape::sigmoid(Var a) { return primitive(Op::Sigmoid, {a}); }
Var Tape::tanh_(Var a) { return primitive(Op::Tanh, {a}); }
Var Tape::sum(Var a) { return primitive(Op::Sum, {a}); }
Var Tape::mean(Var a) { return primitive(Op::Mean, {a}); }
Var Tape::conv3d(Var input, Var kernels, int stride, int padding) {
    return primitive(Op::Conv3d, {input, kernels}, OpAttrs{stride, padding, 0.0});
}
Var Tape::channel_bias(Var x, Var b) { return primitive(Op::ChannelBias, {x, b}); }
Var Tape::instance_norm(Var x, Var gamma, Var beta, double eps) {
    return primitive(Op::InstanceNorm, {x, gamma, beta}, OpAttrs{0, 0, eps});
}
Var Tape::avg_pool3d(Var x, int k) { return primitive(Op::AvgPool3d, {x}, OpAttrs{k, 0, 0.0}); }
Var Tape::global_avg_pool(Var x) { return primitive(Op::GlobalAvgPool, {x}); }
Var Tape::bce_logit(Var logit, double label) {
    return primitive(Op::BceLogit, {logit}, OpAttrs{0, 0, label});
}

Var Tape::primitive(Op op, const std::vector<Var>& inputs, const OpAttrs& attrs) {
    for (Var v : inputs) check_var(v);
    Node n;
    n.op = op;
    n.attrs = attrs;
    if (op == Op::Concat) {
        for (Var v : inputs) n.multi_in.push_back(v.id);
    } else {
        if (inputs.size() > 3)
            throw std::invalid_argument(std::string(op_name(op)) + ": too many inputs");
        for (size_t i = 0; i < inputs.size(); ++i) n.in[i] = inputs[i].id;
        n.n_in = static_cast<int>(inputs.size());
    }

    auto in_shape = [&](int i) -> const Shape& { return nodes_[inputs[i].id].shape; };
    auto in_val = [&](int i) { return values_of(nodes_[inputs[i].id]); };
    auto expect_arity = [&](size_t k) {
        if (inputs.size() != k)
            throw std::invalid_argument(std::string(op_name(op)) + ": expects " +
                                        std::to_string(k) + " inputs, got " +
                                        std::to_string(inputs.size()));
    };

    switch (op) {
        case Op::Leaf:
        case Op::Const:
            throw std::invalid_argument("primitive: leaf/const are not computable ops");

        case Op::Add:
        case Op::Sub:
        case Op::Mul: {
            expect_arity(2);
            auto a = in_val(0), b = in_val(1);
            const bool a_scalar = a.size() == 1, b_scalar = b.size() == 1;
            if (!a_scalar && !b_scalar && in_shape(0) != in_shape(1))
                shape_error(op, in_shape(0), in_shape(1));
            n.shape = a_scalar && !b_scalar ? in_shape(1) : in_shape(0);
            const size_t m = std::max(a.size(), b.size());
            n.val.resize(m);
            for (size_t i = 0; i < m; ++i) {
                const double x = a[a_scalar ? 0 : i], y = b[b_scalar ? 0 : i];
                n.val[i] = op == Op::Add ? x + y : op == Op::Sub ? x - y : x * y;
            }
            break;
        }

        case Op::MatMul: {
            expect_arity(2);
            const Shape &sa = in_shape(0), &sb = in_shape(1);
            if (sa.size() != 2 || (sb.size() != 2 && sb.size() != 1) || sa[1] != sb[0])
                shape_error(op, sa, sb);
            const int m = sa[0], k = sa[1], cols = sb.size() == 2 ? sb[1] : 1;
            n.shape = sb.size() == 2 ? Shape{m, cols} : Shape{m};
            n.val.resize(static_cast<size_t>(m) * cols);
            kernels::dgemm_nn(m, cols, k, in_val(0).data(), in_val(1).data(), n.val.data(),
                              opt_.parallel_kernels);
            break;
        }

        case Op::Concat: {
            if (inputs.empty()) throw std::invalid_argument("concat: no inputs");
            const Shape& first = in_shape(0);
            int axis0 = 0;
            for (size_t i = 0; i < inputs.size(); ++i) {
                const Shape& s = in_shape(i);
                if (s.size() != first.size() ||
                    !std::equal(s.begin() + 1, s.end(), first.begin() + 1))
                    shape_error(op, first, s);
                axis0 += s[0];
            }
            n.shape = first;
            n.shape[0] = axis0;
            n.val.reserve(numel(n.shape));
            for (size_t i = 0; i < inputs.size(); ++i) {
                auto v = in_val(i);
                n.val.insert(n.val.end(), v.begin(), v.end());
            }
            break;
        }

        case Op::Slice: {
            expect_arity(1);
            const Shape& s = in_shape(0);
            const int start = attrs.i0, len = attrs.i1;
            if (start < 0 || len <= 0 || start + len > s[0])
                throw std::invalid_argument("slice: range [" + std::to_string(start) + "," +
                                            std::to_string(start + len) + ") outside " +
                                            shape_str(s));
            n.shape = s;
            n.shape[0] = len;
            const int block = numel(s) / s[0];
            auto v = in_val(0);
            n.val.assign(v.begin() + static_cast<size_t>(start) * block,
                         v.begin() + static_cast<size_t>(start + len) * block);
            break;
        }

        case Op::Relu:
        case Op::Sigmoid:
        case Op::Tanh: {
            expect_arity(1);
            auto v = in_val(0);
            n.shape = in_shape(0);
            n.val.resize(v.size());
            for (size_t i = 0; i < v.size(); ++i)
                n.val[i] = op == Op::Relu      ? (v[i] > 0.0 ? v[i] : 0.0)
                           : op == Op::Sigmoid ? sigmoid_stable(v[i])
                                               : std::tanh(v[i]);
            break;
        }

        case Op::Sum:
        case Op::Mean: {
            expect_arity(1);
            auto v = in_val(0);
            double acc = 0.0;
            for (double x : v) acc += x;
            n.shape = {1};
            n.val = {op == Op::Sum ? acc : acc / static_cast<double>(v.size())};
            break;
        }

        case Op::Conv3d: {
            expect_arity(2);
            const Shape &sx = in_shape(0), &sw = in_shape(1);
            if (sx.size() != 4 || sw.size() != 5 || sw[1] != sx[0] || sw[2] != sw[3] ||
                sw[3] != sw[4])
                shape_error(op, sx, sw);
            const auto g = kernels::Conv3dDims::make(sx[0], sx[1], sx[2], sx[3], sw[0], sw[2],
                                                     attrs.i0, attrs.i1);
            n.shape = {g.c_out, g.od, g.oh, g.ow};
            n.val.resize(g.out_numel());
            kernels::conv3d_forward_gemm(g, in_val(0).data(), in_val(1).data(), n.val.data(),
                                         opt_.parallel_kernels);
            break;
        }

        case Op::ChannelBias: {
            expect_arity(2);
            const Shape &sx = in_shape(0), &sb = in_shape(1);
            if (sb.size() != 1 || sb[0] != sx[0]) shape_error(op, sx, sb);
            n.shape = sx;
            auto x = in_val(0), b = in_val(1);
            n.val.resize(x.size());
            const int sp = spatial_numel(sx);
            for (int c = 0; c < sx[0]; ++c)
                for (int i = 0; i < sp; ++i)
                    n.val[static_cast<size_t>(c) * sp + i] = x[static_cast<size_t>(c) * sp + i] + b[c];
            break;
        }

        case Op::InstanceNorm: {
            expect_arity(3);
            const Shape& sx = in_shape(0);
            if (sx.size() < 2) shape_error(op, sx, in_shape(1));
            if (in_shape(1) != Shape{sx[0]} || in_shape(2) != Shape{sx[0]})
                shape_error(op, sx, in_shape(1));
            const int c_n = sx[0], sp = spatial_numel(sx);
            auto x = in_val(0), gamma = in_val(1), beta = in_val(2);
            n.shape = sx;
            n.val.resize(x.size());
            n.saved.resize(2 * static_cast<size_t>(c_n));
            for (int c = 0; c < c_n; ++c) {
                const double* xc = x.data() + static_cast<size_t>(c) * sp;
                double mu = 0.0;
                for (int i = 0; i < sp; ++i) mu += xc[i];
                mu /= sp;
                double var = 0.0;
                for (int i = 0; i < sp; ++i) var += (xc[i] - mu) * (xc[i] - mu);
                var /= sp;
                const double inv = 1.0 / std::sqrt(var + attrs.d0);
                n.saved[2 * c] = mu;
                n.saved[2 * c + 1] = inv;
                double* yc = n.val.data() + static_cast<size_t>(c) * sp;
                for (int i = 0; i < sp; ++i) yc[i] = gamma[c] * (xc[i] - mu) * inv + beta[c];
            }
            break;
        }

        case Op::AvgPool3d: {
            expect_arity(1);
            const Shape& sx = in_shape(0);
            const int k = attrs.i0;
            if (sx.size() != 4 || k < 1) shape_error(op, sx, {k});
            const int od = sx[1] / k, oh = sx[2] / k, ow = sx[3] / k;
            if (od < 1 || oh < 1 || ow < 1)
                throw std::invalid_argument("avg_pool3d: window " + std::to_string(k) +
                                            " larger than input " + shape_str(sx));
            n.shape = {sx[0], od, oh, ow};
            n.val.assign(static_cast<size_t>(numel(n.shape)), 0.0);
            auto x = in_val(0);
            const double scale = 1.0 / (static_cast<double>(k) * k * k);
            for (int c = 0; c < sx[0]; ++c)
                for (int d = 0; d < od; ++d)
                    for (int h = 0; h < oh; ++h)
                        for (int w = 0; w < ow; ++w) {
                            double acc = 0.0;
                            for (int a = 0; a < k; ++a)
                                for (int b2 = 0; b2 < k; ++b2)
                                    for (int c2 = 0; c2 < k; ++c2)
                                        acc += x[((static_cast<size_t>(c) * sx[1] + d * k + a) * sx[2] +
                                                  h * k + b2) * sx[3] + w * k + c2];
                            n.val[((static_cast<size_t>(c) * od + d) * oh + h) * ow + w] = acc * scale;
                        }
            break;
        }

        case Op::GlobalAvgPool: {
            expect_arity(1);
            const Shape& sx = in_shape(0);
            if (sx.size() < 2) shape_error(op, sx, sx);
            const int sp = spatial_numel(sx);
            auto x = in_val(0);
            n.shape = {sx[0]};
            n.val.resize(sx[0]);
            for (int c = 0; c < sx[0]; ++c) {
                double acc = 0.0;
                for (int i = 0; i < sp; ++i) acc += x[static_cast<size_t>(c) * sp + i];
                n.val[c] = acc / sp;
            }
            break;
        }

        case Op::BceLogit: {
            expect_arity(1);
            if (numel(in_shape(0)) != 1)
                throw std::invalid_argument("bce_logit: logit must be scalar, got " +
                                            shape_str(in_shape(0)));
            const double y = attrs.d0;
            if (y != 0.0 && y != 1.0)
                throw std::invalid_argument("bce_logit: label must be 0 or 1, got " +
                                            std::to_string(y));
            const double z = in_val(0)[0];
            n.shape = {1};
            n.val = {std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)))};
            break;
        }
    }
    return record(std::move(n));
}

std::vector<double>& Tape::grad_buf(int id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(static_cast<size_t>(numel(n.shape)), 0.0);
    return n.grad;
}

void Tape::backward(Var loss, bool write_leaf_grads) {
    const size_t root = check_var(loss);
    if (backward_done_) throw std::runtime_error("backward called twice without reset");
    if (numel(nodes_[root].shape) != 1)
        throw std::invalid_argument("backward: loss must be scalar, got " +
                                    shape_str(nodes_[root].shape));
    backward_done_ = true;
    grad_buf(static_cast<int>(root))[0] = 1.0;
    for (int id = static_cast<int>(root); id >= 0; --id) {
        if (nodes_[id].grad.empty() || !nodes_[id].needs_grad) continue;
        backward_node(id);
    }
    if (write_leaf_grads) {
        for (Node& n : nodes_) {
            if (n.op != Op::Leaf || !n.external || !n.external->requires_grad || n.grad.empty())
                continue;
            n.external->ensure_grad();
            for (size_t i = 0; i < n.grad.size(); ++i) n.external->grad[i] += n.grad[i];
        }
    }
}

void Tape::backward_node(int id) {
    Node& n = nodes_[id];
    const std::vector<double>& g = n.grad;
    auto in_needs = [&](int i) { return nodes_[n.in[i]].needs_grad; };
    auto in_val = [&](int i) { return values_of(nodes_[n.in[i]]); };
    auto gbuf = [&](int i) -> std::vector<double>& { return grad_buf(n.in[i]); };

    switch (n.op) {
        case Op::Leaf:
        case Op::Const:
            break;

        case Op::Add:
        case Op::Sub: {
            const double sign_b = n.op == Op::Add ? 1.0 : -1.0;
            for (int s = 0; s < 2; ++s) {
                if (!in_needs(s)) continue;
                auto& gb = gbuf(s);
                const double sign = s == 0 ? 1.0 : sign_b;
                if (gb.size() == g.size()) {
                    for (size_t i = 0; i < g.size(); ++i) gb[i] += sign * g[i];
                } else {  // scalar side of a broadcast
                    double acc = 0.0;
                    for (double gi : g) acc += gi;
                    gb[0] += sign * acc;
                }
            }
            break;
        }

        case Op::Mul: {
            auto a = in_val(0), b = in_val(1);
            for (int s = 0; s < 2; ++s) {
                if (!in_needs(s)) continue;
                auto other = s == 0 ? b : a;
                auto& gb = gbuf(s);
                if (gb.size() == g.size()) {
                    for (size_t i = 0; i < g.size(); ++i)
                        gb[i] += g[i] * other[other.size() == 1 ? 0 : i];
                } else {
                    double acc = 0.0;
                    for (size_t i = 0; i < g.size(); ++i) acc += g[i] * other[i];
                    gb[0] += acc;
                }
            }
            break;
        }

        case Op::MatMul: {
            const Shape& sa = nodes_[n.in[0]].shape;
            const Shape& sb = nodes_[n.in[1]].shape;
            const int m = sa[0], k = sa[1], cols = sb.size() == 2 ? sb[1] : 1;
            auto a = in_val(0), b = in_val(1);
            if (in_needs(0)) {
                std::vector<double> tmp(static_cast<size_t>(m) * k);
                kernels::dgemm_nt(m, k, cols, g.data(), b.data(), tmp.data(),
                                  opt_.parallel_kernels);
                auto& ga = gbuf(0);
                for (size_t i = 0; i < tmp.size(); ++i) ga[i] += tmp[i];
            }
            if (in_needs(1)) {
                std::vector<double> tmp(static_cast<size_t>(k) * cols);
                kernels::dgemm_tn(k, cols, m, a.data(), g.data(), tmp.data(),
                                  opt_.parallel_kernels);
                auto& gb = gbuf(1);
                for (size_t i = 0; i < tmp.size(); ++i) gb[i] += tmp[i];
            }
            break;
        }

        case Op::Concat: {
            size_t off = 0;
            for (int in_id : n.multi_in) {
                const size_t len = static_cast<size_t>(numel(nodes_[in_id].shape));
                if (nodes_[in_id].needs_grad) {
                    auto& gb = grad_buf(in_id);
                    for (size_t i = 0; i < len; ++i) gb[i] += g[off + i];
                }
                off += len;
            }
            break;
        }

        case Op::Slice: {
            if (!in_needs(0)) break;
            const Shape& s = nodes_[n.in[0]].shape;
            const int block = numel(s) / s[0];
            auto& gb = gbuf(0);
            const size_t off = static_cast<size_t>(n.attrs.i0) * block;
            for (size_t i = 0; i < g.size(); ++i) gb[off + i] += g[i];
            break;
        }

        case Op::Relu: {
            if (!in_needs(0)) break;
            auto x = in_val(0);
            auto& gb = gbuf(0);
            for (size_t i = 0; i < g.size(); ++i)
                if (x[i] > 0.0) gb[i] += g[i];
            break;
        }

        case Op::Sigmoid: {
            if (!in_needs(0)) break;
            auto& gb = gbuf(0);
            for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * n.val[i] * (1.0 - n.val[i]);
            break;
        }

        case Op::Tanh: {
            if (!in_needs(0)) break;
            auto& gb = gbuf(0);
            for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * (1.0 - n.val[i] * n.val[i]);
            break;
        }

        case Op::Sum:
        case Op::Mean: {
            if (!in_needs(0)) break;
            auto& gb = gbuf(0);
            const double gv = n.op == Op::Sum ? g[0] : g[0] / static_cast<double>(gb.size());
            for (double& x : gb) x += gv;
            break;
        }

        case Op::Conv3d: {
            const Shape& sx = nodes_[n.in[0]].shape;
            const Shape& sw = nodes_[n.in[1]].shape;
            const auto geom = kernels::Conv3dDims::make(sx[0], sx[1], sx[2], sx[3], sw[0], sw[2],
                                                        n.attrs.i0, n.attrs.i1);
            double* gx = in_needs(0) ? gbuf(0).data() : nullptr;
            double* gw = in_needs(1) ? gbuf(1).data() : nullptr;
            kernels::conv3d_backward_gemm(geom, in_val(0).data(), in_val(1).data(), g.data(), gx,
                                          gw, opt_.parallel_kernels);
            break;
        }

        case Op::ChannelBias: {
            const Shape& sx = nodes_[n.in[0]].shape;
            const int sp = spatial_numel(sx);
            if (in_needs(0)) {
                auto& gb = gbuf(0);
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
            if (in_needs(1)) {
                auto& gb = gbuf(1);
                for (int c = 0; c < sx[0]; ++c) {
                    double acc = 0.0;
                    for (int i = 0; i < sp; ++i) acc += g[static_cast<size_t>(c) * sp + i];
                    gb[c] += acc;
                }
            }
            break;
        }

        case Op::InstanceNorm: {
            const Shape& sx = nodes_[n.in[0]].shape;
            const int c_n = sx[0], sp = spatial_numel(sx);
            auto x = in_val(0), gamma = in_val(1);
            for (int c = 0; c < c_n; ++c) {
                const double mu = n.saved[2 * c], inv = n.saved[2 * c + 1];
                const double* xc = x.data() + static_cast<size_t>(c) * sp;
                const double* gc = g.data() + static_cast<size_t>(c) * sp;
                double sum_g = 0.0, sum_gx = 0.0;
                for (int i = 0; i < sp; ++i) {
                    sum_g += gc[i];
                    sum_gx += gc[i] * (xc[i] - mu) * inv;
                }
                if (in_needs(1)) gbuf(1)[c] += sum_gx;
                if (in_needs(2)) gbuf(2)[c] += sum_g;
                if (in_needs(0)) {
                    double* gxc = gbuf(0).data() + static_cast<size_t>(c) * sp;
                    const double mean_g = sum_g / sp, mean_gx = sum_gx / sp;
                    for (int i = 0; i < sp; ++i) {
                        const double xhat = (xc[i] - mu) * inv;
                        gxc[i] += gamma[c] * inv * (gc[i] - mean_g - xhat * mean_gx);
                    }
                }
            }
            break;
        }

        case Op::AvgPool3d: {
            if (!in_needs(0)) break;
            const Shape& sx = nodes_[n.in[0]].shape;
            const int k = n.attrs.i0;
            const int od = n.shape[1], oh = n.shape[2], ow = n.shape[3];
            auto& gb = gbuf(0);
            const double scale = 1.0 / (static_cast<double>(k) * k * k);
            for (int c = 0; c < sx[0]; ++c)
                for (int d = 0; d < od; ++d)
                    for (int h = 0; h < oh; ++h)
                        for (int w = 0; w < ow; ++w) {
                            const double gv =
                                g[((static_cast<size_t>(c) * od + d) * oh + h) * ow + w] * scale;
                            for (int a = 0; a < k; ++a)
                                for (int b2 = 0; b2 < k; ++b2)
                                    for (int c2 = 0; c2 < k; ++c2)
                                        gb[((static_cast<size_t>(c) * sx[1] + d * k + a) * sx[2] +
                                            h * k + b2) * sx[3] + w * k + c2] += gv;
                        }
            break;
        }

        case Op::GlobalAvgPool: {
            if (!in_needs(0)) break;
            const Shape& sx = nodes_[n.in[0]].shape;
            const int sp = spatial_numel(sx);
            auto& gb = gbuf(0);
            for (int c = 0; c < sx[0]; ++c) {
                const double gv = g[c] / sp;
                for (int i = 0; i < sp; ++i) gb[static_cast<size_t>(c) * sp + i] += gv;
            }
            break;
        }

        case Op::BceLogit: {
            if (!in_needs(0)) break;
            const double z = in_val(0)[0];
            gbuf(0)[0] += g[0] * (sigmoid_stable(z) - n.attrs.d0);
            break;
        }
    }
}

void Tape::reset() {
    nodes_.clear();
    backward_done_ = false;
}

}  // namespace lpcr
