#include "hoprc/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <unordered_set>

#include "hoprc/errors.hpp"

namespace hoprc::ad {

// ---------------------------------------------------------------- ParameterSet

Parameter& ParameterSet::add(const std::string& name, Tensor init, bool trainable) {
    if (index_.count(name)) {
        throw DataError("duplicate parameter name: " + name);
    }
    index_[name] = params_.size();
    params_.push_back(std::make_unique<Parameter>(Parameter{name, std::move(init), trainable}));
    return *params_.back();
}

Parameter& ParameterSet::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw DataError("unknown parameter: " + name);
    return *params_[it->second];
}

const Parameter& ParameterSet::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw DataError("unknown parameter: " + name);
    return *params_[it->second];
}

std::size_t ParameterSet::index_of(const Parameter* p) const {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (params_[i].get() == p) return i;
    }
    return SIZE_MAX;
}

std::size_t ParameterSet::trainable_entries() const {
    std::size_t n = 0;
    for (const auto& p : params_) {
        if (p->trainable) n += p->tensor.size();
    }
    return n;
}

// ---------------------------------------------------------------- helpers

namespace {

std::vector<std::size_t> broadcast_shape(const std::vector<std::size_t>& a,
                                         const std::vector<std::size_t>& b) {
    std::size_t rank = std::max(a.size(), b.size());
    std::vector<std::size_t> out(rank, 1);
    for (std::size_t i = 0; i < rank; ++i) {
        std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
        std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
        if (da != db && da != 1 && db != 1) {
            throw ShapeError("cannot broadcast shapes " + Tensor::shape_str(a) + " and " +
                             Tensor::shape_str(b));
        }
        out[rank - 1 - i] = std::max(da, db);
    }
    return out;
}

// Row-major strides of `in` aligned to `out`'s rank, 0 on stretched dims.
std::vector<std::size_t> aligned_strides(const std::vector<std::size_t>& in,
                                         const std::vector<std::size_t>& out) {
    std::vector<std::size_t> s(out.size(), 0);
    std::size_t stride = 1;
    for (std::size_t i = 0; i < in.size(); ++i) {
        std::size_t d = in.size() - 1 - i;
        std::size_t od = out.size() - 1 - i;
        s[od] = in[d] == 1 ? 0 : stride;
        stride *= in[d];
    }
    return s;
}

inline std::size_t map_index(std::size_t flat, const std::vector<std::size_t>& out_shape,
                             const std::vector<std::size_t>& strides) {
    std::size_t off = 0;
    for (std::size_t i = out_shape.size(); i-- > 0;) {
        std::size_t coord = flat % out_shape[i];
        flat /= out_shape[i];
        off += coord * strides[i];
    }
    return off;
}

void check_axis(const Tensor& t, int axis, const char* op) {
    if (axis < 0 || static_cast<std::size_t>(axis) >= t.rank()) {
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for shape " + t.shape_str());
    }
    if (t.dim(static_cast<std::size_t>(axis)) == 0) {
        throw ShapeError(std::string(op) + ": empty axis " + std::to_string(axis) +
                         " in shape " + t.shape_str());
    }
}

// product of dims before / after `axis`
std::pair<std::size_t, std::size_t> outer_inner(const std::vector<std::size_t>& shape,
                                                std::size_t axis) {
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
    for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
    return {outer, inner};
}

inline double stable_sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    double e = std::exp(x);
    return e / (1.0 + e);
}

NodePtr make_node(OpKind kind, std::vector<NodePtr> inputs, Tensor value) {
    auto n = std::make_shared<Node>();
    n->kind = kind;
    n->inputs = std::move(inputs);
    n->value = std::move(value);
    for (const auto& in : n->inputs) {
        if (in->requires_grad) n->requires_grad = true;
    }
    return n;
}

void ensure_grad(Node* n) {
    if (!n->grad_alloc) {
        n->grad = Tensor::zeros(n->value.shape());
        n->grad_alloc = true;
    }
}

}  // namespace

// ---------------------------------------------------------------- graph builders

NodePtr constant(Tensor v) {
    auto n = std::make_shared<Node>();
    n->kind = OpKind::Constant;
    n->value = std::move(v);
    return n;
}

NodePtr leaf(const Parameter& p) {
    auto n = std::make_shared<Node>();
    n->kind = OpKind::Leaf;
    n->value = p.tensor;
    n->param = &p;
    n->requires_grad = p.trainable;
    return n;
}

NodePtr matmul(const NodePtr& a, const NodePtr& b) {
    const Tensor& A = a->value;
    const Tensor& B = b->value;
    if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0)) {
        throw ShapeError("matmul: incompatible shapes " + A.shape_str() + " and " +
                         B.shape_str());
    }
    std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = A.data() + i * k;
        double* orow = out.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = B.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return make_node(OpKind::MatMul, {a, b}, std::move(out));
}

namespace {

NodePtr binary_elementwise(OpKind kind, const NodePtr& a, const NodePtr& b) {
    const Tensor& A = a->value;
    const Tensor& B = b->value;
    Tensor out;
    if (A.same_shape(B)) {
        out = Tensor(A.shape());
        const double* pa = A.data();
        const double* pb = B.data();
        double* po = out.data();
        std::size_t n = A.size();
        switch (kind) {
            case OpKind::Add: for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i]; break;
            case OpKind::Sub: for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i]; break;
            case OpKind::Mul: for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i]; break;
            default: break;
        }
    } else {
        auto shape = broadcast_shape(A.shape(), B.shape());
        auto sa = aligned_strides(A.shape(), shape);
        auto sb = aligned_strides(B.shape(), shape);
        out = Tensor(shape);
        std::size_t n = out.size();
        for (std::size_t i = 0; i < n; ++i) {
            double va = A.data()[map_index(i, shape, sa)];
            double vb = B.data()[map_index(i, shape, sb)];
            switch (kind) {
                case OpKind::Add: out[i] = va + vb; break;
                case OpKind::Sub: out[i] = va - vb; break;
                case OpKind::Mul: out[i] = va * vb; break;
                default: break;
            }
        }
    }
    return make_node(kind, {a, b}, std::move(out));
}

}  // namespace

NodePtr add(const NodePtr& a, const NodePtr& b) { return binary_elementwise(OpKind::Add, a, b); }
NodePtr sub(const NodePtr& a, const NodePtr& b) { return binary_elementwise(OpKind::Sub, a, b); }
NodePtr mul(const NodePtr& a, const NodePtr& b) { return binary_elementwise(OpKind::Mul, a, b); }

NodePtr sigmoid(const NodePtr& x) {
    Tensor out(x->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = stable_sigmoid(x->value[i]);
    return make_node(OpKind::Sigmoid, {x}, std::move(out));
}

NodePtr tanh(const NodePtr& x) {
    Tensor out(x->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x->value[i]);
    return make_node(OpKind::Tanh, {x}, std::move(out));
}

NodePtr log(const NodePtr& x) {
    Tensor out(x->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::log(x->value[i]);
    return make_node(OpKind::Log, {x}, std::move(out));
}

NodePtr scale(const NodePtr& x, double c) {
    Tensor out(x->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * x->value[i];
    auto n = make_node(OpKind::Scale, {x}, std::move(out));
    n->extra = c;
    return n;
}

NodePtr clamp_min(const NodePtr& x, double bound) {
    Tensor out(x->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(x->value[i], bound);
    auto n = make_node(OpKind::ClampMin, {x}, std::move(out));
    n->extra = bound;
    return n;
}

NodePtr softmax(const NodePtr& x, int axis) {
    check_axis(x->value, axis, "softmax");
    const Tensor& X = x->value;
    std::size_t ax = static_cast<std::size_t>(axis);
    auto [outer, inner] = outer_inner(X.shape(), ax);
    std::size_t d = X.dim(ax);
    Tensor out(X.shape());
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            std::size_t base = o * d * inner + in;
            double mx = X[base];
            for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, X[base + j * inner]);
            double sum = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                double e = std::exp(X[base + j * inner] - mx);
                out[base + j * inner] = e;
                sum += e;
            }
            for (std::size_t j = 0; j < d; ++j) out[base + j * inner] /= sum;
        }
    }
    auto n = make_node(OpKind::Softmax, {x}, std::move(out));
    n->axis = axis;
    return n;
}

namespace {

NodePtr reduce_impl(OpKind kind, const NodePtr& x, int axis, const char* name) {
    check_axis(x->value, axis, name);
    const Tensor& X = x->value;
    std::size_t ax = static_cast<std::size_t>(axis);
    auto [outer, inner] = outer_inner(X.shape(), ax);
    std::size_t d = X.dim(ax);
    std::vector<std::size_t> out_shape = X.shape();
    out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
    Tensor out(out_shape);
    std::vector<std::size_t> argmax;
    if (kind == OpKind::ReduceMax) argmax.resize(outer * inner);
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            std::size_t base = o * d * inner + in;
            std::size_t oi = o * inner + in;
            if (kind == OpKind::ReduceMax) {
                double best = X[base];
                std::size_t best_j = 0;
                for (std::size_t j = 1; j < d; ++j) {
                    if (X[base + j * inner] > best) {
                        best = X[base + j * inner];
                        best_j = j;
                    }
                }
                out[oi] = best;
                argmax[oi] = base + best_j * inner;
            } else {
                double sum = 0.0;
                for (std::size_t j = 0; j < d; ++j) sum += X[base + j * inner];
                out[oi] = kind == OpKind::ReduceMean ? sum / static_cast<double>(d) : sum;
            }
        }
    }
    auto n = make_node(kind, {x}, std::move(out));
    n->axis = axis;
    n->indices = std::move(argmax);
    return n;
}

}  // namespace

NodePtr reduce_sum(const NodePtr& x, int axis) { return reduce_impl(OpKind::ReduceSum, x, axis, "reduce_sum"); }
NodePtr reduce_mean(const NodePtr& x, int axis) { return reduce_impl(OpKind::ReduceMean, x, axis, "reduce_mean"); }
NodePtr reduce_max(const NodePtr& x, int axis) { return reduce_impl(OpKind::ReduceMax, x, axis, "reduce_max"); }

NodePtr concat(const std::vector<NodePtr>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat: no parts");
    const Tensor& first = parts[0]->value;
    if (axis < 0 || static_cast<std::size_t>(axis) >= first.rank()) {
        throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for shape " +
                         first.shape_str());
    }
    std::size_t ax = static_cast<std::size_t>(axis);
    std::vector<std::size_t> out_shape = first.shape();
    for (std::size_t p = 1; p < parts.size(); ++p) {
        const Tensor& t = parts[p]->value;
        if (t.rank() != first.rank()) {
            throw ShapeError("concat: rank mismatch " + first.shape_str() + " vs " + t.shape_str());
        }
        for (std::size_t i = 0; i < t.rank(); ++i) {
            if (i != ax && t.dim(i) != first.dim(i)) {
                throw ShapeError("concat: non-axis dims differ, " + first.shape_str() + " vs " +
                                 t.shape_str());
            }
        }
        out_shape[ax] += t.dim(ax);
    }
    auto [outer, inner] = outer_inner(out_shape, ax);
    Tensor out(out_shape);
    std::size_t offset = 0;
    for (const auto& part : parts) {
        const Tensor& t = part->value;
        std::size_t d = t.dim(ax);
        for (std::size_t o = 0; o < outer; ++o) {
            const double* src = t.data() + o * d * inner;
            double* dst = out.data() + (o * out_shape[ax] + offset) * inner;
            std::memcpy(dst, src, d * inner * sizeof(double));
        }
        offset += d;
    }
    auto n = make_node(OpKind::Concat, parts, std::move(out));
    n->axis = axis;
    return n;
}

NodePtr transpose(const NodePtr& x) {
    const Tensor& X = x->value;
    if (X.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + X.shape_str());
    std::size_t r = X.dim(0), c = X.dim(1);
    Tensor out({c, r});
    for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) out.at(j, i) = X.at(i, j);
    }
    return make_node(OpKind::Transpose, {x}, std::move(out));
}

NodePtr reshape(const NodePtr& x, std::vector<std::size_t> shape) {
    if (Tensor::shape_size(shape) != x->value.size()) {
        throw ShapeError("reshape: size mismatch " + x->value.shape_str() + " -> " +
                         Tensor::shape_str(shape));
    }
    Tensor out(std::move(shape), x->value.values());
    return make_node(OpKind::Reshape, {x}, std::move(out));
}

NodePtr take(const NodePtr& x, std::vector<std::size_t> idx) {
    const Tensor& X = x->value;
    if (X.rank() != 1) throw ShapeError("take: expected rank 1, got " + X.shape_str());
    Tensor out({idx.size()});
    for (std::size_t k = 0; k < idx.size(); ++k) {
        if (idx[k] >= X.size()) {
            throw ShapeError("take: index " + std::to_string(idx[k]) + " out of range for " +
                             X.shape_str());
        }
        out[k] = X[idx[k]];
    }
    auto n = make_node(OpKind::Take, {x}, std::move(out));
    n->indices = std::move(idx);
    return n;
}

// ---------------------------------------------------------------- backward

namespace {

std::vector<Node*> topo_order(Node* root) {
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    struct Frame {
        Node* n;
        std::size_t next;
    };
    std::vector<Frame> stack;
    stack.push_back({root, 0});
    seen.insert(root);
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->inputs.size()) {
            Node* child = f.n->inputs[f.next++].get();
            if (seen.insert(child).second) stack.push_back({child, 0});
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }
    return order;
}

void accumulate_broadcast(Node* input, const Tensor& g, const Tensor& other_value,
                          bool use_other, bool negate, const std::vector<std::size_t>& out_shape) {
    // grad contribution for one operand of a broadcasting binary op;
    // stretched dims sum automatically through repeated +=.
    ensure_grad(input);
    Tensor& gi = input->grad;
    if (gi.same_shape(g) && !use_other) {
        const double* pg = g.data();
        double* pgi = gi.data();
        if (negate) {
            for (std::size_t i = 0; i < g.size(); ++i) pgi[i] -= pg[i];
        } else {
            for (std::size_t i = 0; i < g.size(); ++i) pgi[i] += pg[i];
        }
        return;
    }
    auto si = aligned_strides(input->value.shape(), out_shape);
    std::vector<std::size_t> so;
    if (use_other) so = aligned_strides(other_value.shape(), out_shape);
    for (std::size_t i = 0; i < g.size(); ++i) {
        double v = g[i];
        if (use_other) v *= other_value.data()[map_index(i, out_shape, so)];
        if (negate) v = -v;
        gi.data()[map_index(i, out_shape, si)] += v;
    }
}

void backward_node(Node* n) {
    const Tensor& g = n->grad;
    switch (n->kind) {
        case OpKind::Constant:
        case OpKind::Leaf:
            break;
        case OpKind::MatMul: {
            Node* a = n->inputs[0].get();
            Node* b = n->inputs[1].get();
            const Tensor& A = a->value;
            const Tensor& B = b->value;
            std::size_t m = A.dim(0), k = A.dim(1), nc = B.dim(1);
            if (a->requires_grad) {
                ensure_grad(a);
                // dA = g . B^T
                for (std::size_t i = 0; i < m; ++i) {
                    for (std::size_t p = 0; p < k; ++p) {
                        double sum = 0.0;
                        const double* grow = g.data() + i * nc;
                        const double* brow = B.data() + p * nc;
                        for (std::size_t j = 0; j < nc; ++j) sum += grow[j] * brow[j];
                        a->grad.data()[i * k + p] += sum;
                    }
                }
            }
            if (b->requires_grad) {
                ensure_grad(b);
                // dB = A^T . g
                for (std::size_t i = 0; i < m; ++i) {
                    const double* arow = A.data() + i * k;
                    const double* grow = g.data() + i * nc;
                    for (std::size_t p = 0; p < k; ++p) {
                        double av = arow[p];
                        if (av == 0.0) continue;
                        double* brow = b->grad.data() + p * nc;
                        for (std::size_t j = 0; j < nc; ++j) brow[j] += av * grow[j];
                    }
                }
            }
            break;
        }
        case OpKind::Add:
        case OpKind::Sub:
        case OpKind::Mul: {
            Node* a = n->inputs[0].get();
            Node* b = n->inputs[1].get();
            bool is_mul = n->kind == OpKind::Mul;
            bool is_sub = n->kind == OpKind::Sub;
            if (a->requires_grad) {
                accumulate_broadcast(a, g, b->value, is_mul, false, n->value.shape());
            }
            if (b->requires_grad) {
                accumulate_broadcast(b, g, a->value, is_mul, is_sub, n->value.shape());
            }
            break;
        }
        case OpKind::Sigmoid: {
            Node* x = n->inputs[0].get();
            if (!x->requires_grad) break;
            ensure_grad(x);
            for (std::size_t i = 0; i < g.size(); ++i) {
                double y = n->value[i];
                x->grad[i] += g[i] * y * (1.0 - y);
            }
            break;
        }
        case OpKind::Tanh: {
            Node* x = n->inputs[0].get();
            if (!x->requires_grad) break;
            ensure_grad(x);
            for (std::size_t i = 0; i < g.size(); ++i) {
                double y = n->value[i];
                x->grad[i] += g[i] * (1.0 - y * y);
            }
            break;
        }
        case OpKind::Log: {
            Node* x = n->inputs[0].get();
            if (!x->requires_grad) break;
            ensure_grad(x);
            for (std::size_t i = 0; i < g.size(); ++i) x->grad[i] += g[i] / x->value[i];
            break;
        }
        case OpKind::Scale: {
            Node* x = n->inputs[0].get();
            if (!x->requires_grad) break;
            ensure_grad(x);
            for (std::size_t i = 0; i < g.size(); ++i) x->grad[i] += g[i] * n->extra;
            break;
        }
        case OpKind::ClampMin: {
            Node* x = n->inputs[0].get();
            if (!x->requires_grad) break;
            ensure_grad(x);
            for (std::size_t i = 0; i < g.size(); ++i) {
                if (x->value[i] > n->extra) x->grad[i] += g[i];
            }
            break;
        }
        case OpKind::Softmax: {
            Node* x = n->inputs[0].get();
            if (!x->requires_grad) break;
            ensure_grad(x);
            std::size_t ax = static_cast<std::size_t>(n->axis);
            auto [outer, inner] = outer_inner(n->value.shape(), ax);
            std::size_t d = n->value.dim(ax);
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t in = 0; in < inner; ++in) {
                    std::size_t base = o * d * inner + in;
                    double dot = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                        dot += g[base + j * inner] * n->value[base + j * inner];
                    }
                    for (std::size_t j = 0; j < d; ++j) {
                        std::size_t ix = base + j * inner;
                        x->grad[ix] += n->value[ix] * (g[ix] - dot);
                    }
                }
            }
            break;
        }
        case OpKind::ReduceSum:
        case OpKind::ReduceMean: {
            Node* x = n->inputs[0].get();
            if (!x->requires_grad) break;
            ensure_grad(x);
            std::size_t ax = static_cast<std::size_t>(n->axis);
            auto [outer, inner] = outer_inner(x->value.shape(), ax);
            std::size_t d = x->value.dim(ax);
            double inv = n->kind == OpKind::ReduceMean ? 1.0 / static_cast<double>(d) : 1.0;
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t in = 0; in < inner; ++in) {
                    double gv = g[o * inner + in] * inv;
                    std::size_t base = o * d * inner + in;
                    for (std::size_t j = 0; j < d; ++j) x->grad[base + j * inner] += gv;
                }
            }
            break;
        }
        case OpKind::ReduceMax: {
            Node* x = n->inputs[0].get();
            if (!x->requires_grad) break;
            ensure_grad(x);
            for (std::size_t i = 0; i < g.size(); ++i) x->grad[n->indices[i]] += g[i];
            break;
        }
        case OpKind::Concat: {
            std::size_t ax = static_cast<std::size_t>(n->axis);
            auto [outer, inner] = outer_inner(n->value.shape(), ax);
            std::size_t out_d = n->value.dim(ax);
            std::size_t offset = 0;
            for (const auto& part : n->inputs) {
                std::size_t d = part->value.dim(ax);
                if (part->requires_grad) {
                    ensure_grad(part.get());
                    for (std::size_t o = 0; o < outer; ++o) {
                        const double* src = g.data() + (o * out_d + offset) * inner;
                        double* dst = part->grad.data() + o * d * inner;
                        for (std::size_t i = 0; i < d * inner; ++i) dst[i] += src[i];
                    }
                }
                offset += d;
            }
            break;
        }
        case OpKind::Transpose: {
            Node* x = n->inputs[0].get();
            if (!x->requires_grad) break;
            ensure_grad(x);
            std::size_t r = n->value.dim(0), c = n->value.dim(1);
            for (std::size_t i = 0; i < r; ++i) {
                for (std::size_t j = 0; j < c; ++j) x->grad.at(j, i) += g.at(i, j);
            }
            break;
        }
        case OpKind::Reshape: {
            Node* x = n->inputs[0].get();
            if (!x->requires_grad) break;
            ensure_grad(x);
            for (std::size_t i = 0; i < g.size(); ++i) x->grad[i] += g[i];
            break;
        }
        case OpKind::Take: {
            Node* x = n->inputs[0].get();
            if (!x->requires_grad) break;
            ensure_grad(x);
            for (std::size_t i = 0; i < g.size(); ++i) x->grad[n->indices[i]] += g[i];
            break;
        }
    }
}

}  // namespace

void backward(const NodePtr& root) {
    if (root->value.rank() != 0) {
        throw ShapeError("backward: root must be scalar, got " + root->value.shape_str());
    }
    if (!root->requires_grad) return;
    std::vector<Node*> order = topo_order(root.get());
    ensure_grad(root.get());
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (!n->requires_grad || !n->grad_alloc) continue;
        backward_node(n);
    }
}

std::vector<Tensor> parameter_gradients(const NodePtr& root, const ParameterSet& params) {
    std::vector<Tensor> grads;
    grads.reserve(params.count());
    for (std::size_t i = 0; i < params.count(); ++i) {
        grads.push_back(Tensor::zeros(params[i].tensor.shape()));
    }
    std::unordered_map<const Parameter*, std::size_t> by_ptr;
    for (std::size_t i = 0; i < params.count(); ++i) by_ptr[&params[i]] = i;
    for (Node* n : topo_order(root.get())) {
        if (n->kind != OpKind::Leaf || n->param == nullptr || !n->grad_alloc) continue;
        auto it = by_ptr.find(n->param);
        if (it == by_ptr.end()) continue;
        Tensor& dst = grads[it->second];
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n->grad[i];
    }
    return grads;
}

double grad_check(const std::function<NodePtr(ParameterSet&)>& build, ParameterSet& params,
                  double epsilon) {
    if (epsilon <= 0.0) throw DataError("grad_check: epsilon must be positive");
    NodePtr root = build(params);
    if (root->value.rank() != 0) {
        throw ShapeError("grad_check: loss must be scalar, got " + root->value.shape_str());
    }
    NodePtr again = build(params);
    if (std::memcmp(root->value.data(), again->value.data(), sizeof(double)) != 0) {
        throw DataError("grad_check: loss function is not deterministic");
    }
    backward(root);
    std::vector<Tensor> grads = parameter_gradients(root, params);
    double max_rel = 0.0;
    for (std::size_t pi = 0; pi < params.count(); ++pi) {
        Parameter& p = params[pi];
        if (!p.trainable) continue;
        for (std::size_t e = 0; e < p.tensor.size(); ++e) {
            double orig = p.tensor[e];
            p.tensor[e] = orig + epsilon;
            double fp = build(params)->value[0];
            p.tensor[e] = orig - epsilon;
            double fm = build(params)->value[0];
            p.tensor[e] = orig;
            double numeric = (fp - fm) / (2.0 * epsilon);
            double analytic = grads[pi][e];
            double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
            max_rel = std::max(max_rel, std::fabs(analytic - numeric) / denom);
        }
    }
    return max_rel;
}

}  // namespace hoprc::ad
