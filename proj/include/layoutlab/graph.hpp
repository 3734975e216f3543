#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "layoutlab/tensor.hpp"

namespace layoutlab::numcore {

// Reverse-mode tape. Nodes are appended in evaluation order, which is a
// topological order by construction (an op can only reference earlier
// ids), so backward() is a single reverse sweep that touches each node
// exactly once. Graph execution is single-threaded; independent graphs
// may run concurrently over shared immutable weight tensors.
//
// Every public op validates shapes up front and checks that its output
// is finite; a NaN/Inf anywhere is a hard error, not a warning.
class Graph {
public:
    using Id = int32_t;

    Graph() { nodes_.reserve(256); }

    // Leaves. `param` marks the tensor as requiring gradient.
    Id value(Tensor t) { return leaf(std::move(t), false); }
    Id param(Tensor t) { return leaf(std::move(t), true); }
    Id leaf(Tensor t, bool requires_grad);

    const Tensor& val(Id id) const { return nodes_[static_cast<size_t>(id)].value; }
    const Tensor& grad(Id id) const;
    bool requires_grad(Id id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }
    size_t size() const { return nodes_.size(); }

    // --- primitive operations, all with registered gradients ---
    Id matmul(Id a, Id b);                    // [m,k] x [k,n] -> [m,n]
    Id transpose(Id x);                       // [m,n] -> [n,m]
    Id add(Id a, Id b);                       // same shape
    Id sub(Id a, Id b);
    Id mul(Id a, Id b);                       // elementwise
    Id bias_add(Id x, Id b);                  // [m,n] + [n], broadcast over rows
    Id channel_scale(Id x, Id v);             // [m,n] * [n], broadcast over rows
    Id scale(Id x, double c);
    Id add_const(Id x, double c);
    Id layer_norm(Id x, Id gain, Id bias, double eps = 1e-6);  // row-wise
    Id gelu(Id x);
    Id softmax_rows(Id x);
    Id concat_rows(std::span<const Id> parts);
    std::vector<Id> split_rows(Id x, std::span<const int64_t> sizes);
    Id concat_cols(std::span<const Id> parts);
    std::vector<Id> split_cols(Id x, std::span<const int64_t> sizes);
    Id lookup(Id table, std::vector<int64_t> ids);             // [V,d], ids -> [ids.size,d]
    Id mean_all(Id x);                                         // -> [1]
    Id mean_masked(Id x, Tensor mask);                         // mask of 0/1, same shape -> [1]
    Id mean_rows_masked(Id x, Tensor row_mask);                // [m,n], mask[m] -> [1,n]

    void backward(Id loss);

    // MACs accumulated by matrix products since construction (or reset).
    uint64_t macs() const { return macs_; }
    void reset_macs() { macs_ = 0; }

private:
    struct Node {
        Tensor value;
        Tensor grad;  // empty until first contribution
        bool requires_grad = false;
        std::function<void(Graph&)> backprop;
    };

    Id push(Tensor value, bool requires_grad, std::function<void(Graph&)> backprop,
            const char* op_name);
    Tensor& grad_buf(Id id);
    void add_grad(Id id, const Tensor& g);
    Node& node(Id id) { return nodes_[static_cast<size_t>(id)]; }

    std::vector<Node> nodes_;
    uint64_t macs_ = 0;
};

}  // namespace layoutlab::numcore
