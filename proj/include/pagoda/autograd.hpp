#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "pagoda/tensor.hpp"

namespace pagoda {

struct Node;
using Var = std::shared_ptr<Node>;

/// One entry of the dynamic tape. The graph is rebuilt every step; leaves
/// (parameters, inputs) persist across steps and get their grads re-zeroed
/// by each backward sweep.
struct Node {
    Tensor value;
    Tensor grad;
    std::vector<Var> parents;
    std::function<void()> backward_fn; // pushes this->grad into parents
    const char* op = "leaf";

    explicit Node(Tensor v) : value(std::move(v)), grad(value.shape) {}
};

struct autograd_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

Var leaf(Tensor value);
Var constant(Tensor value); // same as leaf; name documents intent

// ---- elementwise / scalar ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double s);
Var shift(const Var& a, double s);
Var relu(const Var& a);
Var silu(const Var& a);
Var tanh_v(const Var& a);
Var sigmoid(const Var& a);
Var exp_v(const Var& a);
Var log_v(const Var& a);
Var softplus(const Var& a); // log(1 + e^x), stable
Var square(const Var& a);

// ---- shape / reductions ----
Var reshape(const Var& a, std::vector<std::size_t> shape);
Var sum(const Var& a);
Var mean(const Var& a);
Var sum_rows(const Var& a);    // (m,n) -> (m): per-row sums
Var concat_cols(const Var& a, const Var& b); // (m,p)+(m,q) -> (m,p+q)

// ---- linear algebra ----
Var matmul(const Var& a, const Var& b);        // (m,k)x(k,n)
Var add_row(const Var& a, const Var& bias);    // (m,n) + (n,) broadcast over rows
Var gather_rows(const Var& table, const std::vector<std::size_t>& ids); // embedding lookup

// ---- convolutions, layout (B, spatial..., C) ----
Var conv1d(const Var& x, const Var& kernel, const Var& bias);           // kernel (K,Cin,Cout), same padding
Var conv_transpose1d_x2(const Var& x, const Var& kernel, const Var& bias); // kernel (4,Cin,Cout), stride 2, pad 1
Var conv2d(const Var& x, const Var& kernel, const Var& bias);           // kernel (Kh,Kw,Cin,Cout), same padding
Var conv_transpose2d_x2(const Var& x, const Var& kernel, const Var& bias); // kernel (4,4,Cin,Cout), stride 2, pad 1

/// Reverse sweep from a scalar root. Throws autograd_error naming the op if
/// any forward value in the reachable graph is non-finite, or if the root is
/// not a scalar. Grads of every reachable node are overwritten.
void backward(const Var& root);

/// Topological order (parents before children) of the graph below root.
std::vector<Node*> topo_order(const Var& root);

} // namespace pagoda
