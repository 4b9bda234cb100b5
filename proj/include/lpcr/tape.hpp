#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "lpcr/tensor.hpp"

namespace lpcr {

enum class Op : uint8_t {
    Leaf,
    Const,
    Add,
    Sub,
    Mul,
    MatMul,
    Concat,
    Slice,
    Relu,
    Sigmoid,
    Tanh,
    Sum,
    Mean,
    Conv3d,
    ChannelBias,
    InstanceNorm,
    AvgPool3d,
    GlobalAvgPool,
    BceLogit,
};

const char* op_name(Op op);

/// Handle to a node on a Tape.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

/// Attributes for the generic primitive() entry point.
struct OpAttrs {
    int i0 = 0;     // conv stride / slice start / pool k
    int i1 = 0;     // conv padding / slice len
    double d0 = 0;  // bce label / norm eps
};

struct TapeOptions {
    bool parallel_kernels = false;  // OpenMP inside kernels
    bool check_finite = false;      // verify every op output (debug verification)
};

/// Define-by-run reverse-mode graph. Nodes are appended in topological order
/// (inputs always precede outputs); backward is a single reverse sweep that
/// visits each reachable node exactly once and accumulates gradients
/// additively across fan-out. One tape is single-threaded; distinct tapes
/// share nothing except read-only leaf storage.
class Tape {
public:
    explicit Tape(TapeOptions opt = {}) : opt_(opt) {}

    /// Leaf backed by external storage (zero copy). Gradients flow into
    /// t.grad on backward() when t.requires_grad is set.
    Var leaf(Tensor& t);
    /// Read-only leaf; never receives gradient.
    Var input(const Tensor& t);
    Var constant(Shape shape, std::vector<double> values);
    Var scalar(double v) { return constant({1}, {v}); }

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var matmul(Var a, Var b);
    Var concat(const std::vector<Var>& parts);
    Var slice(Var a, int start, int len);
    Var relu(Var a);
    Var sigmoid(Var a);
    Var tanh_(Var a);
    Var sum(Var a);
    Var mean(Var a);
    Var conv3d(Var input, Var kernels, int stride, int padding);
    Var channel_bias(Var x, Var b);
    Var instance_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
    Var avg_pool3d(Var x, int k);
    Var global_avg_pool(Var x);
    Var bce_logit(Var logit, double label);

    /// Generic dispatch by op kind; named builders above are the usual entry.
    Var primitive(Op op, const std::vector<Var>& inputs, const OpAttrs& attrs = {});

    const Shape& shape(Var v) const { return node(v).shape; }
    std::span<const double> value(Var v) const;
    /// Gradient of the last backward() target w.r.t. v (empty span if v was
    /// not reached).
    std::span<const double> grad(Var v) const;

    /// Reverse sweep from a scalar loss. Throws on a non-scalar loss or if
    /// called twice without reset(). With write_leaf_grads, accumulates into
    /// the .grad of every requires_grad leaf tensor.
    void backward(Var loss, bool write_leaf_grads = true);

    void reset();
    size_t size() const { return nodes_.size(); }
    const TapeOptions& options() const { return opt_; }

private:
    struct Node {
        Op op = Op::Leaf;
        Shape shape;
        std::vector<double> val;    // empty for leaves (external storage)
        std::vector<double> grad;   // allocated lazily during backward
        std::array<int, 3> in{-1, -1, -1};
        int n_in = 0;
        std::vector<int> multi_in;  // Concat only
        OpAttrs attrs;
        std::vector<double> saved;  // forward context (e.g. norm statistics)
        Tensor* external = nullptr;
        const double* external_val = nullptr;
        bool needs_grad = false;
    };

    Node& node(Var v) { return nodes_[check_var(v)]; }
    const Node& node(Var v) const { return nodes_[check_var(v)]; }
    size_t check_var(Var v) const;
    std::span<const double> values_of(const Node& n) const;
    Var record(Node n);
    std::vector<double>& grad_buf(int id);
    void backward_node(int id);
    [[noreturn]] void shape_error(Op op, const Shape& a, const Shape& b) const;

    std::vector<Node> nodes_;
    TapeOptions opt_;
    bool backward_done_ = false;
};

}  // namespace lpcr
