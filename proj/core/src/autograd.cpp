// Copyright (C) 2026 HarmoCLIP contributors
// SPDX-License-Identifier: Apache-2.0

#include "harmoclip/autograd.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "harmoclip/errors.hpp"

namespace harmoclip::ad {

namespace {

NodePtr make_node(Mat value, std::vector<NodePtr> parents,
                  std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    bool needs = false;
    for (const auto& p : parents)
        if (p->requires_grad) needs = true;
    n->requires_grad = needs;
    if (needs) {
        n->parents = std::move(parents);
        n->backprop = std::move(backprop);
    }
    return n;
}

void check_same_shape(const NodePtr& a, const NodePtr& b, const char* op) {
    if (a->rows() != b->rows() || a->cols() != b->cols())
        throw InputError(std::string(op) + ": shape mismatch");
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

NodePtr constant(Mat v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = false;
    return n;
}

NodePtr leaf(Mat v, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = requires_grad;
    return n;
}

NodePtr add(const NodePtr& a, const NodePtr& b) {
    check_same_shape(a, b, "add");
    return make_node(a->value + b->value, {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) {
            n.parents[0]->ensure_grad();
            n.parents[0]->grad += n.grad;
        }
        if (n.parents[1]->requires_grad) {
            n.parents[1]->ensure_grad();
            n.parents[1]->grad += n.grad;
        }
    });
}

NodePtr sub(const NodePtr& a, const NodePtr& b) {
    check_same_shape(a, b, "sub");
    return make_node(a->value - b->value, {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) {
            n.parents[0]->ensure_grad();
            n.parents[0]->grad += n.grad;
        }
        if (n.parents[1]->requires_grad) {
            n.parents[1]->ensure_grad();
            n.parents[1]->grad -= n.grad;
        }
    });
}

NodePtr hadamard(const NodePtr& a, const NodePtr& b) {
    check_same_shape(a, b, "hadamard");
    return make_node(a->value.cwiseProduct(b->value), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) {
            n.parents[0]->ensure_grad();
            n.parents[0]->grad += n.grad.cwiseProduct(n.parents[1]->value);
        }
        if (n.parents[1]->requires_grad) {
            n.parents[1]->ensure_grad();
            n.parents[1]->grad += n.grad.cwiseProduct(n.parents[0]->value);
        }
    });
}

NodePtr scale(const NodePtr& a, double s) {
    return make_node(a->value * s, {a}, [s](Node& n) {
        n.parents[0]->ensure_grad();
        n.parents[0]->grad += n.grad * s;
    });
}

NodePtr matmul(const NodePtr& a, const NodePtr& b) {
    if (a->cols() != b->rows()) throw InputError("matmul: inner dimension mismatch");
    return make_node(a->value * b->value, {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) {
            n.parents[0]->ensure_grad();
            n.parents[0]->grad.noalias() += n.grad * n.parents[1]->value.transpose();
        }
        if (n.parents[1]->requires_grad) {
            n.parents[1]->ensure_grad();
            n.parents[1]->grad.noalias() += n.parents[0]->value.transpose() * n.grad;
        }
    });
}

NodePtr matmul_nt(const NodePtr& a, const NodePtr& b) {
    if (a->cols() != b->cols()) throw InputError("matmul_nt: inner dimension mismatch");
    return make_node(a->value * b->value.transpose(), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) {
            n.parents[0]->ensure_grad();
            n.parents[0]->grad.noalias() += n.grad * n.parents[1]->value;
        }
        if (n.parents[1]->requires_grad) {
            n.parents[1]->ensure_grad();
            n.parents[1]->grad.noalias() += n.grad.transpose() * n.parents[0]->value;
        }
    });
}

NodePtr add_row(const NodePtr& x, const NodePtr& row) {
    if (row->rows() != 1 || row->cols() != x->cols())
        throw InputError("add_row: bias must be 1 x cols(x)");
    Mat out = x->value;
    out.rowwise() += row->value.row(0);
    return make_node(std::move(out), {x, row}, [](Node& n) {
        if (n.parents[0]->requires_grad) {
            n.parents[0]->ensure_grad();
            n.parents[0]->grad += n.grad;
        }
        if (n.parents[1]->requires_grad) {
            n.parents[1]->ensure_grad();
            n.parents[1]->grad.row(0) += n.grad.colwise().sum();
        }
    });
}

NodePtr layer_norm(const NodePtr& x, const NodePtr& gain, const NodePtr& bias, double eps) {
    if (gain->rows() != 1 || gain->cols() != x->cols() || bias->rows() != 1 ||
        bias->cols() != x->cols())
        throw InputError("layer_norm: gain/bias must be 1 x cols(x)");
    const Eigen::Index rows = x->rows(), d = x->cols();
    Mat xhat(rows, d);
    Vec inv_std(rows);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const double mean = x->value.row(i).mean();
        const auto centered = x->value.row(i).array() - mean;
        const double var = centered.square().mean();
        inv_std(i) = 1.0 / std::sqrt(var + eps);
        xhat.row(i) = centered * inv_std(i);
    }
    Mat out = (xhat.array().rowwise() * gain->value.row(0).array()).rowwise() +
              bias->value.row(0).array();
    return make_node(std::move(out), {x, gain, bias},
                     [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& n) {
                         const Eigen::Index rows = n.grad.rows(), d = n.grad.cols();
                         const auto& g = n.parents[1]->value.row(0);
                         if (n.parents[0]->requires_grad) {
                             n.parents[0]->ensure_grad();
                             for (Eigen::Index i = 0; i < rows; ++i) {
                                 // dL/dxhat for this row
                                 Eigen::RowVectorXd dxhat =
                                     n.grad.row(i).cwiseProduct(g);
                                 const double m1 = dxhat.mean();
                                 const double m2 =
                                     dxhat.cwiseProduct(xhat.row(i)).mean();
                                 n.parents[0]->grad.row(i) +=
                                     inv_std(i) *
                                     (dxhat.array() - m1 - xhat.row(i).array() * m2)
                                         .matrix();
                             }
                         }
                         if (n.parents[1]->requires_grad) {
                             n.parents[1]->ensure_grad();
                             n.parents[1]->grad.row(0) +=
                                 n.grad.cwiseProduct(xhat).colwise().sum();
                         }
                         if (n.parents[2]->requires_grad) {
                             n.parents[2]->ensure_grad();
                             n.parents[2]->grad.row(0) += n.grad.colwise().sum();
                         }
                         (void)d;
                     });
}

NodePtr gelu(const NodePtr& x) {
    Mat out = x->value.unaryExpr(
        [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); });
    return make_node(std::move(out), {x}, [](Node& n) {
        n.parents[0]->ensure_grad();
        n.parents[0]->grad += n.grad.cwiseProduct(n.parents[0]->value.unaryExpr([](double v) {
            const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            return cdf + v * pdf;
        }));
    });
}

NodePtr softmax_rows(const NodePtr& x) {
    Mat out(x->rows(), x->cols());
    for (Eigen::Index i = 0; i < x->rows(); ++i) {
        const double mx = x->value.row(i).maxCoeff();
        Eigen::RowVectorXd e = (x->value.row(i).array() - mx).exp();
        out.row(i) = e / e.sum();
    }
    return make_node(std::move(out), {x}, [](Node& n) {
        n.parents[0]->ensure_grad();
        for (Eigen::Index i = 0; i < n.grad.rows(); ++i) {
            const auto& p = n.value.row(i);
            const double dot = n.grad.row(i).dot(p);
            n.parents[0]->grad.row(i) +=
                p.cwiseProduct(n.grad.row(i).array().matrix() -
                               Eigen::RowVectorXd::Constant(n.grad.cols(), dot));
        }
    });
}

NodePtr concat_rows(const std::vector<NodePtr>& parts) {
    if (parts.empty()) throw InputError("concat_rows: empty");
    Eigen::Index rows = 0;
    const Eigen::Index cols = parts[0]->cols();
    for (const auto& p : parts) {
        if (p->cols() != cols) throw InputError("concat_rows: column mismatch");
        rows += p->rows();
    }
    Mat out(rows, cols);
    Eigen::Index r = 0;
    for (const auto& p : parts) {
        out.middleRows(r, p->rows()) = p->value;
        r += p->rows();
    }
    return make_node(std::move(out), parts, [](Node& n) {
        Eigen::Index r = 0;
        for (auto& p : n.parents) {
            if (p->requires_grad) {
                p->ensure_grad();
                p->grad += n.grad.middleRows(r, p->rows());
            }
            r += p->rows();
        }
    });
}

NodePtr slice_rows(const NodePtr& x, Eigen::Index r0, Eigen::Index n_rows) {
    if (r0 < 0 || n_rows < 1 || r0 + n_rows > x->rows())
        throw InputError("slice_rows: range out of bounds");
    return make_node(x->value.middleRows(r0, n_rows), {x}, [r0, n_rows](Node& n) {
        n.parents[0]->ensure_grad();
        n.parents[0]->grad.middleRows(r0, n_rows) += n.grad;
    });
}

NodePtr concat_cols(const std::vector<NodePtr>& parts) {
    if (parts.empty()) throw InputError("concat_cols: empty");
    const Eigen::Index rows = parts[0]->rows();
    Eigen::Index cols = 0;
    for (const auto& p : parts) {
        if (p->rows() != rows) throw InputError("concat_cols: row mismatch");
        cols += p->cols();
    }
    Mat out(rows, cols);
    Eigen::Index c = 0;
    for (const auto& p : parts) {
        out.middleCols(c, p->cols()) = p->value;
        c += p->cols();
    }
    return make_node(std::move(out), parts, [](Node& n) {
        Eigen::Index c = 0;
        for (auto& p : n.parents) {
            if (p->requires_grad) {
                p->ensure_grad();
                p->grad += n.grad.middleCols(c, p->cols());
            }
            c += p->cols();
        }
    });
}

NodePtr slice_cols(const NodePtr& x, Eigen::Index c0, Eigen::Index n_cols) {
    if (c0 < 0 || n_cols < 1 || c0 + n_cols > x->cols())
        throw InputError("slice_cols: range out of bounds");
    return make_node(x->value.middleCols(c0, n_cols), {x}, [c0, n_cols](Node& n) {
        n.parents[0]->ensure_grad();
        n.parents[0]->grad.middleCols(c0, n_cols) += n.grad;
    });
}

NodePtr gather_rows(const NodePtr& table, std::vector<int> ids) {
    Mat out(static_cast<Eigen::Index>(ids.size()), table->cols());
    for (size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= table->rows())
            throw InputError("gather_rows: index out of range");
        out.row(static_cast<Eigen::Index>(i)) = table->value.row(ids[i]);
    }
    return make_node(std::move(out), {table}, [ids = std::move(ids)](Node& n) {
        n.parents[0]->ensure_grad();
        for (size_t i = 0; i < ids.size(); ++i)
            n.parents[0]->grad.row(ids[i]) += n.grad.row(static_cast<Eigen::Index>(i));
    });
}

NodePtr weighted_row_sum(const NodePtr& x, Vec weights) {
    if (weights.size() != x->rows())
        throw InputError("weighted_row_sum: weight length must equal rows(x)");
    Mat out = weights.transpose() * x->value;  // 1 x cols
    return make_node(std::move(out), {x}, [w = std::move(weights)](Node& n) {
        n.parents[0]->ensure_grad();
        n.parents[0]->grad.noalias() += w * n.grad;  // (rows x 1) * (1 x cols)
    });
}

std::vector<Node*> topo_order(const NodePtr& root) {
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    // iterative post-order DFS
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next_child] = stack.back();
        if (next_child < node->parents.size()) {
            Node* child = node->parents[next_child].get();
            ++next_child;
            if (child->requires_grad && !seen.count(child)) {
                seen.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;  // parents before children
}

void backward(const NodePtr& root) {
    if (root->rows() != 1 || root->cols() != 1)
        throw InputError("backward: root must be a 1x1 scalar");
    if (!root->requires_grad) return;
    auto order = topo_order(root);
    root->ensure_grad();
    root->grad(0, 0) = 1.0;
    // children first (reverse topological order)
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && n->grad.size() != 0) n->backprop(*n);
    }
}

}  // namespace harmoclip::ad
