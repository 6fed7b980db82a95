#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "hoprc/tensor.hpp"

namespace hoprc::ad {

/// Named learnable tensor. One Parameter object serves every layer that
/// mentions it, which is what makes layer-count-independent sharing work.
struct Parameter {
    std::string name;
    Tensor tensor;
    bool trainable = true;
};

/// Ordered set of uniquely named parameters. Iteration order is creation
/// order and defines the layout of optimizer state and checkpoints.
class ParameterSet {
public:
    Parameter& add(const std::string& name, Tensor init, bool trainable = true);
    Parameter& at(const std::string& name);
    const Parameter& at(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    std::size_t count() const { return params_.size(); }
    Parameter& operator[](std::size_t i) { return *params_[i]; }
    const Parameter& operator[](std::size_t i) const { return *params_[i]; }

    /// Index of a parameter by identity; SIZE_MAX when foreign.
    std::size_t index_of(const Parameter* p) const;

    /// Total number of scalar entries across trainable parameters.
    std::size_t trainable_entries() const;

private:
    std::vector<std::unique_ptr<Parameter>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

enum class OpKind {
    Constant,
    Leaf,
    MatMul,
    Add,
    Sub,
    Mul,
    Sigmoid,
    Tanh,
    Log,
    Scale,
    ClampMin,
    Softmax,
    ReduceSum,
    ReduceMean,
    ReduceMax,
    Concat,
    Transpose,
    Reshape,
    Take,
};

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One vertex of the (acyclic) compute graph. Values are computed eagerly
/// when the node is built; gradients are filled in by backward().
struct Node {
    OpKind kind;
    std::vector<NodePtr> inputs;
    Tensor value;
    Tensor grad;              // allocated during backward() when requires_grad
    bool requires_grad = false;
    bool grad_alloc = false;
    const Parameter* param = nullptr;  // Leaf only
    int axis = -1;                     // Softmax / Reduce* / Concat
    std::vector<std::size_t> indices;  // ReduceMax argmax targets; Take indices
    double extra = 0.0;                // Scale factor / ClampMin bound
};

NodePtr constant(Tensor v);
/// Leaf over a parameter; the current parameter value is captured by copy.
NodePtr leaf(const Parameter& p);

NodePtr matmul(const NodePtr& a, const NodePtr& b);
// Binary elementwise ops broadcast numpy-style: shapes are aligned at the
// trailing dimension and size-1 dimensions stretch.
NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr sub(const NodePtr& a, const NodePtr& b);
NodePtr mul(const NodePtr& a, const NodePtr& b);
NodePtr sigmoid(const NodePtr& x);
NodePtr tanh(const NodePtr& x);
NodePtr log(const NodePtr& x);
NodePtr scale(const NodePtr& x, double c);
NodePtr clamp_min(const NodePtr& x, double bound);
NodePtr softmax(const NodePtr& x, int axis);
NodePtr reduce_sum(const NodePtr& x, int axis);
NodePtr reduce_mean(const NodePtr& x, int axis);
/// Max-reduction; gradient flows only to the argmax element, ties broken
/// by lowest index.
NodePtr reduce_max(const NodePtr& x, int axis);
NodePtr concat(const std::vector<NodePtr>& parts, int axis);
NodePtr transpose(const NodePtr& x);
NodePtr reshape(const NodePtr& x, std::vector<std::size_t> shape);
/// Gather from a rank-1 tensor; gradient scatter-adds back.
NodePtr take(const NodePtr& x, std::vector<std::size_t> idx);

inline NodePtr operator+(const NodePtr& a, const NodePtr& b) { return add(a, b); }
inline NodePtr operator-(const NodePtr& a, const NodePtr& b) { return sub(a, b); }
inline NodePtr operator*(const NodePtr& a, const NodePtr& b) { return mul(a, b); }

/// Reverse-mode sweep from a scalar root. Gradients accumulate across all
/// use sites of a node, in a fixed topological order.
void backward(const NodePtr& root);

/// Gradients of every parameter in `params` reachable from `root`, aligned
/// with ParameterSet order (zeros for unreachable parameters). backward()
/// must have run on `root`. Duplicate leaves over one parameter are summed.
std::vector<Tensor> parameter_gradients(const NodePtr& root, const ParameterSet& params);

/// Max relative error between analytic gradients and central finite
/// differences over every trainable parameter entry. `build` evaluates the
/// loss graph from the current parameter values; it must be deterministic
/// (checked by evaluating twice).
double grad_check(const std::function<NodePtr(ParameterSet&)>& build, ParameterSet& params,
                  double epsilon);

}  // namespace hoprc::ad
