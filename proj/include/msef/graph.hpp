#pragma once

#include <functional>
#include <vector>

#include "msef/tensor.hpp"

namespace msef {

// Define-by-run reverse-mode tape. Ops append their backward closure in
// execution order, so reversing the tape is already a topological order and
// every node's closure runs exactly once. Gradients accumulate additively
// across fan-out.
class Graph {
public:
    using Id = int;

    Id leaf(Tensor t);

    Tensor& val(Id id) { return nodes_[static_cast<size_t>(id)]; }
    const Tensor& val(Id id) const { return nodes_[static_cast<size_t>(id)]; }

    bool has_grad(Id id) const { return !nodes_[static_cast<size_t>(id)].grad.empty(); }
    const std::vector<double>& grad(Id id) const { return nodes_[static_cast<size_t>(id)].grad; }

    // --- ops -------------------------------------------------------------
    Id matmul(Id a, Id b);          // a[m x k] * b[k x n]
    Id matmul_nt(Id a, Id b);       // a[m x k] * b[n x k]^T
    Id add(Id a, Id b);
    Id sub(Id a, Id b);
    Id mul(Id a, Id b);             // elementwise
    Id affine(Id x, double scale, double shift);
    Id add_row_vec(Id x, Id v);     // x[n x d] + broadcast v[1 x d]
    Id mul_row_vec(Id x, Id v);     // x[n x d] ⊙ broadcast v[1 x d]
    Id softmax_rows(Id x);
    Id layer_norm(Id x, Id gain, Id bias);  // row-wise, epsilon 1e-5
    Id sigmoid(Id x);
    Id tanh_act(Id x);
    Id causal_mask(Id x);           // square score matrix; -1e30 above diagonal
    Id row_slice(Id x, int r0, int r1);
    Id col_slice(Id x, int c0, int c1);
    Id concat_rows(Id a, Id b);
    Id concat_cols(Id a, Id b);
    Id mean_rows(Id x);             // [n x d] -> [1 x d]
    Id sum_all(Id x);               // -> [1 x 1]
    Id embed_rows(Id table, const std::vector<int>& ids);
    Id cross_entropy_rows(Id logits, const std::vector<int>& targets);  // mean CE -> [1 x 1]

    // Populates grad buffers of every requires_grad node that feeds `loss`.
    void backward(Id loss);

    size_t num_nodes() const { return nodes_.size(); }
    size_t num_ops() const { return tape_.size(); }

    static constexpr double kLayerNormEps = 1e-5;

private:
    Id out(Tensor t, bool requires_grad);
    void accum(Id id, const std::vector<double>& delta);
    std::vector<double>& grad_buf(Id id);

    std::vector<Tensor> nodes_;
    std::vector<std::function<void(Graph&)>> tape_;
};

// Central-difference gradient audit. `build` must construct the scalar loss
// from a fresh leaf in a fresh graph; returns max over coordinates of
// |analytic - numeric| / max(1, |numeric|).
double finite_diff_check(const std::function<Graph::Id(Graph&, Graph::Id)>& build,
                         const Tensor& x, double h = 1e-5);

}  // namespace msef
