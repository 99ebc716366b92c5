// Copyright (C) 2026 HarmoCLIP contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <vector>

namespace harmoclip::ad {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

/// One value in a dynamically built computation graph. Nodes are created by
/// the op functions below; calling backward(root) accumulates gradients into
/// every reachable node with requires_grad set.
///
/// Graphs are built fresh per forward pass and reference long-lived parameter
/// nodes by shared_ptr, so encoding on a read-only parameter snapshot is safe
/// from multiple threads; backward/optimizer steps need exclusive access.
class Node {
public:
    Mat value;
    Mat grad;  // empty until backward touches this node
    bool requires_grad = false;

    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backprop;  // reads this->grad, accumulates into parents

    Eigen::Index rows() const { return value.rows(); }
    Eigen::Index cols() const { return value.cols(); }

    void ensure_grad() {
        if (grad.size() == 0) grad = Mat::Zero(value.rows(), value.cols());
    }
    void zero_grad() { grad.resize(0, 0); }
};

using NodePtr = std::shared_ptr<Node>;

/// Leaf with no gradient (inputs, masks, frozen tensors).
NodePtr constant(Mat v);
/// Leaf that collects gradient (parameters, probed inputs).
NodePtr leaf(Mat v, bool requires_grad = true);

NodePtr add(const NodePtr& a, const NodePtr& b);
NodePtr sub(const NodePtr& a, const NodePtr& b);
NodePtr hadamard(const NodePtr& a, const NodePtr& b);
NodePtr scale(const NodePtr& a, double s);
NodePtr matmul(const NodePtr& a, const NodePtr& b);
/// a * b^T without materializing a transpose node.
NodePtr matmul_nt(const NodePtr& a, const NodePtr& b);
/// Broadcast a 1 x D row over every row of x.
NodePtr add_row(const NodePtr& x, const NodePtr& row);
/// Row-wise layer normalization with learned gain/bias (1 x D each).
NodePtr layer_norm(const NodePtr& x, const NodePtr& gain, const NodePtr& bias,
                   double eps = 1e-5);
/// Exact (erf-based) GELU.
NodePtr gelu(const NodePtr& x);
/// Row-wise softmax. Additive masks go on the input beforehand.
NodePtr softmax_rows(const NodePtr& x);
NodePtr concat_rows(const std::vector<NodePtr>& parts);
NodePtr slice_rows(const NodePtr& x, Eigen::Index r0, Eigen::Index n);
NodePtr concat_cols(const std::vector<NodePtr>& parts);
NodePtr slice_cols(const NodePtr& x, Eigen::Index c0, Eigen::Index n);
/// Rows of an embedding table selected by index; backward scatter-adds.
NodePtr gather_rows(const NodePtr& table, std::vector<int> ids);
/// Weighted sum of rows: w^T x for a fixed weight vector (length = rows of x).
NodePtr weighted_row_sum(const NodePtr& x, Vec weights);

/// Reverse-mode sweep from a scalar (1x1) root with seed gradient 1.
void backward(const NodePtr& root);

/// Topologically ordered reachable set (parents before children).
std::vector<Node*> topo_order(const NodePtr& root);

}  // namespace harmoclip::ad
