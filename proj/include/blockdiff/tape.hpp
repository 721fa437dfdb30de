#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "blockdiff/tensor.hpp"

namespace blockdiff {

enum class KlDirection { Forward, Reverse };

// Reverse-mode autodiff tape. Nodes are created in topological order by
// construction; backward() walks them in reverse and accumulates gradients
// additively. Values are eager; each op records a closure for its backward.
class Tape {
  public:
    using NodeId = int32_t;

    NodeId leaf(Tensor value);

    NodeId add(NodeId a, NodeId b);
    NodeId scale(NodeId x, double c);
    NodeId matmul(NodeId a, NodeId b);
    // a[m x k] @ b[n x k]^T -> [m x n]
    NodeId matmul_nt(NodeId a, NodeId b);
    // x[rows x in] @ w[in x out] + bias[out]
    NodeId linear(NodeId x, NodeId w, NodeId bias);
    NodeId slice_cols(NodeId x, int64_t start, int64_t width);
    NodeId concat_cols(const std::vector<NodeId>& parts);
    // rows of `table` gathered by id (token/position embedding lookup)
    NodeId embed(NodeId table, const std::vector<int>& ids);
    NodeId layer_norm(NodeId x, NodeId gain, NodeId bias);
    NodeId gelu(NodeId x);
    NodeId softmax_rows(NodeId x);
    // allow is row-major [rows x cols]; disallowed entries get probability 0
    NodeId softmax_rows_masked(NodeId x, const std::vector<uint8_t>& allow);
    NodeId sum(NodeId x);

    // Mean cross-entropy over rows with row_mask set. Throws
    // UndefinedMeanError when no row is selected.
    NodeId cross_entropy(NodeId logits, const std::vector<int>& targets,
                         const std::vector<uint8_t>& row_mask);

    // Sum over selected rows of w_s * KL between a fixed target distribution
    // and the softmax of the logits row. Forward direction is
    // KL(target || softmax(logits)); reverse swaps the arguments (target
    // entries clamped below by kEpsKl inside the log).
    NodeId kl_rows(NodeId logits, const std::vector<int>& row_ids,
                   const std::vector<std::vector<double>>& targets,
                   const std::vector<double>& weights, KlDirection direction);

    void backward(NodeId loss);

    const Tensor& value(NodeId id) const { return nodes_[static_cast<size_t>(id)].value; }
    const Tensor& grad(NodeId id) const { return nodes_[static_cast<size_t>(id)].grad; }

    size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::function<void(Tape&)> back;  // empty for leaves
    };

    NodeId push(Tensor value, std::function<void(Tape&)> back);
    Tensor& grad_mut(NodeId id) { return nodes_[static_cast<size_t>(id)].grad; }

    std::vector<Node> nodes_;
};

}  // namespace blockdiff
