#include "msef/graph.hpp"

#include <algorithm>
#include <cmath>

#include "msef/kernels.hpp"

namespace msef {

Graph::Id Graph::leaf(Tensor t) {
    bool rg = t.requires_grad;
    t.grad.clear();
    nodes_.push_back(std::move(t));
    nodes_.back().requires_grad = rg;
    return static_cast<Id>(nodes_.size() - 1);
}

Graph::Id Graph::out(Tensor t, bool requires_grad) {
    t.requires_grad = requires_grad;
    t.grad.clear();
    nodes_.push_back(std::move(t));
    return static_cast<Id>(nodes_.size() - 1);
}

std::vector<double>& Graph::grad_buf(Id id) {
    Tensor& t = nodes_[static_cast<size_t>(id)];
    if (t.grad.empty()) t.grad.assign(t.data.size(), 0.0);
    return t.grad;
}

void Graph::accum(Id id, const std::vector<double>& delta) {
    auto& g = grad_buf(id);
    for (size_t i = 0; i < g.size(); ++i) g[i] += delta[i];
}

namespace {
// Output grad of a node that never reached the loss stays empty; its backward
// contribution is zero.
const std::vector<double>* out_grad(const Graph& g, Graph::Id id) {
    return g.has_grad(id) ? &g.grad(id) : nullptr;
}
}  // namespace

Graph::Id Graph::matmul(Id a, Id b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (ta.cols() != tb.rows()) throw ShapeError("matmul: inner extents differ");
    Tensor c(ta.rows(), tb.cols());
    kernels::matmul(ta.data.data(), tb.data.data(), c.data.data(), ta.rows(), ta.cols(), tb.cols());
    c.check_finite("matmul");
    bool rg = ta.requires_grad || tb.requires_grad;
    Id o = out(std::move(c), rg);
    if (rg)
        tape_.push_back([a, b, o](Graph& g) {
            const auto* og = out_grad(g, o);
            if (!og) return;
            const Tensor& ta = g.val(a);
            const Tensor& tb = g.val(b);
            int m = ta.rows(), k = ta.cols(), n = tb.cols();
            if (ta.requires_grad) {
                std::vector<double> da(ta.data.size());
                kernels::matmul_nt(og->data(), tb.data.data(), da.data(), m, n, k);
                g.accum(a, da);
            }
            if (tb.requires_grad) {
                std::vector<double> db(tb.data.size());
                kernels::matmul_tn(ta.data.data(), og->data(), db.data(), k, m, n);
                g.accum(b, db);
            }
        });
    return o;
}

Graph::Id Graph::matmul_nt(Id a, Id b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (ta.cols() != tb.cols()) throw ShapeError("matmul_nt: inner extents differ");
    Tensor c(ta.rows(), tb.rows());
    kernels::matmul_nt(ta.data.data(), tb.data.data(), c.data.data(), ta.rows(), ta.cols(), tb.rows());
    c.check_finite("matmul_nt");
    bool rg = ta.requires_grad || tb.requires_grad;
    Id o = out(std::move(c), rg);
    if (rg)
        tape_.push_back([a, b, o](Graph& g) {
            const auto* og = out_grad(g, o);
            if (!og) return;
            const Tensor& ta = g.val(a);
            const Tensor& tb = g.val(b);
            int m = ta.rows(), k = ta.cols(), n = tb.rows();
            if (ta.requires_grad) {
                std::vector<double> da(ta.data.size());
                kernels::matmul(og->data(), tb.data.data(), da.data(), m, n, k);
                g.accum(a, da);
            }
            if (tb.requires_grad) {
                // db[n x k] = dc^T * a
                std::vector<double> db(tb.data.size());
                kernels::matmul_tn(og->data(), ta.data.data(), db.data(), n, m, k);
                g.accum(b, db);
            }
        });
    return o;
}

Graph::Id Graph::add(Id a, Id b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (!ta.same_shape(tb)) throw ShapeError("add: shape mismatch");
    Tensor c = ta;
    for (size_t i = 0; i < c.data.size(); ++i) c.data[i] += tb.data[i];
    bool rg = ta.requires_grad || tb.requires_grad;
    Id o = out(std::move(c), rg);
    if (rg)
        tape_.push_back([a, b, o](Graph& g) {
            const auto* og = out_grad(g, o);
            if (!og) return;
            if (g.val(a).requires_grad) g.accum(a, *og);
            if (g.val(b).requires_grad) g.accum(b, *og);
        });
    return o;
}

Graph::Id Graph::sub(Id a, Id b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (!ta.same_shape(tb)) throw ShapeError("sub: shape mismatch");
    Tensor c = ta;
    for (size_t i = 0; i < c.data.size(); ++i) c.data[i] -= tb.data[i];
    bool rg = ta.requires_grad || tb.requires_grad;
    Id o = out(std::move(c), rg);
    if (rg)
        tape_.push_back([a, b, o](Graph& g) {
            const auto* og = out_grad(g, o);
            if (!og) return;
            if (g.val(a).requires_grad) g.accum(a, *og);
            if (g.val(b).requires_grad) {
                auto& gb = g.grad_buf(b);
                for (size_t i = 0; i < gb.size(); ++i) gb[i] -= (*og)[i];
            }
        });
    return o;
}

Graph::Id Graph::mul(Id a, Id b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (!ta.same_shape(tb)) throw ShapeError("mul: shape mismatch");
    Tensor c = ta;
    for (size_t i = 0; i < c.data.size(); ++i) c.data[i] *= tb.data[i];
    bool rg = ta.requires_grad || tb.requires_grad;
    Id o = out(std::move(c), rg);
    if (rg)
        tape_.push_back([a, b, o](Graph& g) {
            const auto* og = out_grad(g, o);
            if (!og) return;
            const Tensor& ta = g.val(a);
            const Tensor& tb = g.val(b);
            if (ta.requires_grad) {
                auto& ga = g.grad_buf(a);
                for (size_t i = 0; i < ga.size(); ++i) ga[i] += (*og)[i] * tb.data[i];
            }
            if (tb.requires_grad) {
                auto& gb = g.grad_buf(b);
                for (size_t i = 0; i < gb.size(); ++i) gb[i] += (*og)[i] * ta.data[i];
            }
        });
    return o;
}

Graph::Id Graph::affine(Id x, double scale, double shift) {
    Tensor c = val(x);
    for (auto& v : c.data) v = scale * v + shift;
    bool rg = val(x).requires_grad;
    Id o = out(std::move(c), rg);
    if (rg)
        tape_.push_back([x, o, scale](Graph& g) {
            const auto* og = out_grad(g, o);
            if (!og) return;
            auto& gx = g.grad_buf(x);
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += scale * (*og)[i];
        });
    return o;
}

Graph::Id Graph::add_row_vec(Id x, Id v) {
    const Tensor& tx = val(x);
    const Tensor& tv = val(v);
    if (tv.rows() != 1 || tv.cols() != tx.cols()) throw ShapeError("add_row_vec: need 1 x cols vector");
    Tensor c = tx;
    for (int i = 0; i < c.rows(); ++i)
        for (int j = 0; j < c.cols(); ++j) c.at(i, j) += tv.at(0, j);
    bool rg = tx.requires_grad || tv.requires_grad;
    Id o = out(std::move(c), rg);
    if (rg)
        tape_.push_back([x, v, o](Graph& g) {
            const auto* og = out_grad(g, o);
            if (!og) return;
            const Tensor& to = g.val(o);
            if (g.val(x).requires_grad) g.accum(x, *og);
            if (g.val(v).requires_grad) {
                auto& gv = g.grad_buf(v);
                for (int i = 0; i < to.rows(); ++i)
                    for (int j = 0; j < to.cols(); ++j) gv[static_cast<size_t>(j)] += (*og)[static_cast<size_t>(i) * to.cols() + j];
            }
        });
    return o;
}

Graph::Id Graph::mul_row_vec(Id x, Id v) {
    const Tensor& tx = val(x);
    const Tensor& tv = val(v);
    if (tv.rows() != 1 || tv.cols() != tx.cols()) throw ShapeError("mul_row_vec: need 1 x cols vector");
    Tensor c = tx;
    for (int i = 0; i < c.rows(); ++i)
        for (int j = 0; j < c.cols(); ++j) c.at(i, j) *= tv.at(0, j);
    bool rg = tx.requires_grad || tv.requires_grad;
    Id o = out(std::move(c), rg);
    if (rg)
        tape_.push_back([x, v, o](Graph& g) {
            const auto* og = out_grad(g, o);
            if (!og) return;
            const Tensor& tx = g.val(x);
            const Tensor& tv = g.val(v);
            int n = tx.rows(), d = tx.cols();
            if (tx.requires_grad) {
                auto& gx = g.grad_buf(x);
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < d; ++j) gx[static_cast<size_t>(i) * d + j] += (*og)[static_cast<size_t>(i) * d + j] * tv.at(0, j);
            }
            if (tv.requires_grad) {
                auto& gv = g.grad_buf(v);
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < d; ++j) gv[static_cast<size_t>(j)] += (*og)[static_cast<size_t>(i) * d + j] * tx.at(i, j);
            }
        });
    return o;
}

Graph::Id Graph::softmax_rows(Id x) {
    const Tensor& tx = val(x);
    tx.check_finite("softmax_rows input");
    Tensor c(tx.rows(), tx.cols());
    for (int i = 0; i < tx.rows(); ++i) {
        double mx = tx.at(i, 0);
        for (int j = 1; j < tx.cols(); ++j) mx = std::max(mx, tx.at(i, j));
        double sum = 0.0;
        for (int j = 0; j < tx.cols(); ++j) {
            double e = std::exp(tx.at(i, j) - mx);
            c.at(i, j) = e;
            sum += e;
        }
        for (int j = 0; j < tx.cols(); ++j) c.at(i, j) /= sum;
    }
    bool rg = tx.requires_grad;
    Id o = out(std::move(c), rg);
    if (rg)
        tape_.push_back([x, o](Graph& g) {
            const auto* og = out_grad(g, o);
            if (!og) return;
            const Tensor& y = g.val(o);
            auto& gx = g.grad_buf(x);
            int n = y.rows(), d = y.cols();
            for (int i = 0; i < n; ++i) {
                double dot = 0.0;
                for (int j = 0; j < d; ++j) dot += (*og)[static_cast<size_t>(i) * d + j] * y.at(i, j);
                for (int j = 0; j < d; ++j)
                    gx[static_cast<size_t>(i) * d + j] += y.at(i, j) * ((*og)[static_cast<size_t>(i) * d + j] - dot);
            }
        });
    return o;
}

Graph::Id Graph::layer_norm(Id x, Id gain, Id bias) {
    const Tensor& tx = val(x);
    const Tensor& tg = val(gain);
    const Tensor& tb = val(bias);
    int n = tx.rows(), d = tx.cols();
    if (d < 2) throw ShapeError("layer_norm: needs at least 2 columns");
    if (tg.rows() != 1 || tg.cols() != d || tb.rows() != 1 || tb.cols() != d)
        throw ShapeError("layer_norm: gain/bias must be 1 x d");
    Tensor c(n, d);
    Tensor yhat(n, d);  // saved normalized values for backward
    std::vector<double> inv_sd(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        double mean = 0.0;
        for (int j = 0; j < d; ++j) mean += tx.at(i, j);
        mean /= d;
        double var = 0.0;
        for (int j = 0; j < d; ++j) {
            double dv = tx.at(i, j) - mean;
            var += dv * dv;
        }
        var /= d;
        double s = 1.0 / std::sqrt(var + kLayerNormEps);
        inv_sd[static_cast<size_t>(i)] = s;
        for (int j = 0; j < d; ++j) {
            double yh = (tx.at(i, j) - mean) * s;
            yhat.at(i, j) = yh;
            c.at(i, j) = tg.at(0, j) * yh + tb.at(0, j);
        }
    }
    c.check_finite("layer_norm");
    bool rg = tx.requires_grad || tg.requires_grad || tb.requires_grad;
    Id o = out(std::move(c), rg);
    if (rg)
        tape_.push_back([x, gain, bias, o, yhat = std::move(yhat), inv_sd = std::move(inv_sd)](Graph& g) {
            const auto* og = out_grad(g, o);
            if (!og) return;
            const Tensor& tg = g.val(gain);
            int n = yhat.rows(), d = yhat.cols();
            if (g.val(gain).requires_grad) {
                auto& gg = g.grad_buf(gain);
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < d; ++j) gg[static_cast<size_t>(j)] += (*og)[static_cast<size_t>(i) * d + j] * yhat.at(i, j);
            }
            if (g.val(bias).requires_grad) {
                auto& gb = g.grad_buf(bias);
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < d; ++j) gb[static_cast<size_t>(j)] += (*og)[static_cast<size_t>(i) * d + j];
            }
            if (g.val(x).requires_grad) {
                auto& gx = g.grad_buf(x);
                for (int i = 0; i < n; ++i) {
                    double mu = 0.0, muy = 0.0;
                    for (int j = 0; j < d; ++j) {
                        double u = (*og)[static_cast<size_t>(i) * d + j] * tg.at(0, j);
                        mu += u;
                        muy += u * yhat.at(i, j);
                    }
                    mu /= d;
                    muy /= d;
                    for (int j = 0; j < d; ++j) {
                        double u = (*og)[static_cast<size_t>(i) * d + j] * tg.at(0, j);
                        gx[static_cast<size_t>(i) * d + j] += (u - mu - yhat.at(i, j) * muy) * inv_sd[static_cast<size_t>(i)];
                    }
                }
            }
        });
    return o;
}

Graph::Id Graph::sigmoid(Id x) {
    Tensor c = val(x);
    for (auto& v : c.data) v = 1.0 / (1.0 + std::exp(-v));
    bool rg = val(x).requires_grad;
    Id o = out(std::move(c), rg);
    if (rg)
        tape_.push_back([x, o](Graph& g) {
            const auto* og = out_grad(g, o);
            if (!og) return;
            const Tensor& y = g.val(o);
            auto& gx = g.grad_buf(x);
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += (*og)[i] * y.data[i] * (1.0 - y.data[i]);
        });
    return o;
}

Graph::Id Graph::tanh_act(Id x) {
    Tensor c = val(x);
    for (auto& v : c.data) v = std::tanh(v);
    bool rg = val(x).requires_grad;
    Id o = out(std::move(c), rg);
    if (rg)
        tape_.push_back([x, o](Graph& g) {
            const auto* og = out_grad(g, o);
            if (!og) return;
            const Tensor& y = g.val(o);
            auto& gx = g.grad_buf(x);
            for (size_t i = 0; i < gx.size(); ++i) gx[i] += (*og)[i] * (1.0 - y.data[i] * y.data[i]);
        });
    return o;
}

Graph::Id Graph::causal_mask(Id x) {
    const Tensor& tx = val(x);
    if (tx.rows() != tx.cols()) throw ShapeError("causal_mask: square matrix required");
    Tensor c = tx;
    for (int i = 0; i < c.rows(); ++i)
        for (int j = i + 1; j < c.cols(); ++j) c.at(i, j) = -1e30;
    bool rg = tx.requires_grad;
    Id o = out(std::move(c), rg);
    if (rg)
        tape_.push_back([x, o](Graph& g) {
            const auto* og = out_grad(g, o);
            if (!og) return;
            // Masked cells get zero downstream gradient via softmax; pass only
            // the visible triangle to keep finite differences consistent.
            const Tensor& tx = g.val(x);
            auto& gx = g.grad_buf(x);
            int n = tx.rows();
            for (int i = 0; i < n; ++i)
                for (int j = 0; j <= i; ++j) gx[static_cast<size_t>(i) * n + j] += (*og)[static_cast<size_t>(i) * n + j];
        });
    return o;
}

Graph::Id Graph::row_slice(Id x, int r0, int r1) {
    const Tensor& tx = val(x);
    if (r0 < 0 || r1 > tx.rows() || r0 >= r1) throw ShapeError("row_slice: bad range");
    Tensor c(r1 - r0, tx.cols());
    for (int i = r0; i < r1; ++i)
        for (int j = 0; j < tx.cols(); ++j) c.at(i - r0, j) = tx.at(i, j);
    bool rg = tx.requires_grad;
    Id o = out(std::move(c), rg);
    if (rg)
        tape_.push_back([x, o, r0](Graph& g) {
            const auto* og = out_grad(g, o);
            if (!og) return;
            const Tensor& to = g.val(o);
            auto& gx = g.grad_buf(x);
            int d = to.cols();
            for (int i = 0; i < to.rows(); ++i)
                for (int j = 0; j < d; ++j) gx[static_cast<size_t>(i + r0) * d + j] += (*og)[static_cast<size_t>(i) * d + j];
        });
    return o;
}

Graph::Id Graph::col_slice(Id x, int c0, int c1) {
    const Tensor& tx = val(x);
    if (c0 < 0 || c1 > tx.cols() || c0 >= c1) throw ShapeError("col_slice: bad range");
    Tensor c(tx.rows(), c1 - c0);
    for (int i = 0; i < tx.rows(); ++i)
        for (int j = c0; j < c1; ++j) c.at(i, j - c0) = tx.at(i, j);
    bool rg = tx.requires_grad;
    Id o = out(std::move(c), rg);
    if (rg)
        tape_.push_back([x, o, c0](Graph& g) {
            const auto* og = out_grad(g, o);
            if (!og) return;
            const Tensor& to = g.val(o);
            const Tensor& tx = g.val(x);
            auto& gx = g.grad_buf(x);
            for (int i = 0; i < to.rows(); ++i)
                for (int j = 0; j < to.cols(); ++j)
                    gx[static_cast<size_t>(i) * tx.cols() + (j + c0)] += (*og)[static_cast<size_t>(i) * to.cols() + j];
        });
    return o;
}

Graph::Id Graph::concat_rows(Id a, Id b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (ta.cols() != tb.cols()) throw ShapeError("concat_rows: column mismatch");
    Tensor c(ta.rows() + tb.rows(), ta.cols());
    std::copy(ta.data.begin(), ta.data.end(), c.data.begin());
    std::copy(tb.data.begin(), tb.data.end(), c.data.begin() + static_cast<long>(ta.data.size()));
    bool rg = ta.requires_grad || tb.requires_grad;
    Id o = out(std::move(c), rg);
    if (rg)
        tape_.push_back([a, b, o](Graph& g) {
            const auto* og = out_grad(g, o);
            if (!og) return;
            const Tensor& ta = g.val(a);
            if (ta.requires_grad) {
                auto& ga = g.grad_buf(a);
                for (size_t i = 0; i < ga.size(); ++i) ga[i] += (*og)[i];
            }
            if (g.val(b).requires_grad) {
                auto& gb = g.grad_buf(b);
                size_t off = ta.data.size();
                for (size_t i = 0; i < gb.size(); ++i) gb[i] += (*og)[off + i];
            }
        });
    return o;
}

Graph::Id Graph::concat_cols(Id a, Id b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    if (ta.rows() != tb.rows()) throw ShapeError("concat_cols: row mismatch");
    Tensor c(ta.rows(), ta.cols() + tb.cols());
    for (int i = 0; i < ta.rows(); ++i) {
        for (int j = 0; j < ta.cols(); ++j) c.at(i, j) = ta.at(i, j);
        for (int j = 0; j < tb.cols(); ++j) c.at(i, ta.cols() + j) = tb.at(i, j);
    }
    bool rg = ta.requires_grad || tb.requires_grad;
    Id o = out(std::move(c), rg);
    if (rg)
        tape_.push_back([a, b, o](Graph& g) {
            const auto* og = out_grad(g, o);
            if (!og) return;
            const Tensor& ta = g.val(a);
            const Tensor& tb = g.val(b);
            int oc = ta.cols() + tb.cols();
            if (ta.requires_grad) {
                auto& ga = g.grad_buf(a);
                for (int i = 0; i < ta.rows(); ++i)
                    for (int j = 0; j < ta.cols(); ++j) ga[static_cast<size_t>(i) * ta.cols() + j] += (*og)[static_cast<size_t>(i) * oc + j];
            }
            if (tb.requires_grad) {
                auto& gb = g.grad_buf(b);
                for (int i = 0; i < tb.rows(); ++i)
                    for (int j = 0; j < tb.cols(); ++j)
                        gb[static_cast<size_t>(i) * tb.cols() + j] += (*og)[static_cast<size_t>(i) * oc + ta.cols() + j];
            }
        });
    return o;
}

Graph::Id Graph::mean_rows(Id x) {
    const Tensor& tx = val(x);
    Tensor c(1, tx.cols());
    for (int i = 0; i < tx.rows(); ++i)
        for (int j = 0; j < tx.cols(); ++j) c.at(0, j) += tx.at(i, j);
    for (int j = 0; j < tx.cols(); ++j) c.at(0, j) /= tx.rows();
    bool rg = tx.requires_grad;
    Id o = out(std::move(c), rg);
    if (rg)
        tape_.push_back([x, o](Graph& g) {
            const auto* og = out_grad(g, o);
            if (!og) return;
            const Tensor& tx = g.val(x);
            auto& gx = g.grad_buf(x);
            double inv = 1.0 / tx.rows();
            for (int i = 0; i < tx.rows(); ++i)
                for (int j = 0; j < tx.cols(); ++j) gx[static_cast<size_t>(i) * tx.cols() + j] += (*og)[static_cast<size_t>(j)] * inv;
        });
    return o;
}

Graph::Id Graph::sum_all(Id x) {
    const Tensor& tx = val(x);
    Tensor c(1, 1);
    for (double v : tx.data) c.data[0] += v;
    bool rg = tx.requires_grad;
    Id o = out(std::move(c), rg);
    if (rg)
        tape_.push_back([x, o](Graph& g) {
            const auto* og = out_grad(g, o);
            if (!og) return;
            auto& gx = g.grad_buf(x);
            for (auto& v : gx) v += (*og)[0];
        });
    return o;
}

Graph::Id Graph::embed_rows(Id table, const std::vector<int>& ids) {
    const Tensor& tt = val(table);
    if (ids.empty()) throw ShapeError("embed_rows: empty id list");
    for (int id : ids)
        if (id < 0 || id >= tt.rows()) throw InputError("embed_rows: token id out of range");
    Tensor c(static_cast<int>(ids.size()), tt.cols());
    for (size_t i = 0; i < ids.size(); ++i)
        for (int j = 0; j < tt.cols(); ++j) c.at(static_cast<int>(i), j) = tt.at(ids[i], j);
    bool rg = tt.requires_grad;
    Id o = out(std::move(c), rg);
    if (rg)
        tape_.push_back([table, o, ids](Graph& g) {
            const auto* og = out_grad(g, o);
            if (!og) return;
            const Tensor& tt = g.val(table);
            auto& gt = g.grad_buf(table);
            int d = tt.cols();
            for (size_t i = 0; i < ids.size(); ++i)
                for (int j = 0; j < d; ++j) gt[static_cast<size_t>(ids[i]) * d + j] += (*og)[i * static_cast<size_t>(d) + j];
        });
    return o;
}

Graph::Id Graph::cross_entropy_rows(Id logits, const std::vector<int>& targets) {
    const Tensor& tl = val(logits);
    if (static_cast<int>(targets.size()) != tl.rows()) throw ShapeError("cross_entropy_rows: target count != rows");
    for (int t : targets)
        if (t < 0 || t >= tl.cols()) throw InputError("cross_entropy_rows: target id out of range");
    int n = tl.rows(), v = tl.cols();
    Tensor probs(n, v);
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        double mx = tl.at(i, 0);
        for (int j = 1; j < v; ++j) mx = std::max(mx, tl.at(i, j));
        double sum = 0.0;
        for (int j = 0; j < v; ++j) {
            double e = std::exp(tl.at(i, j) - mx);
            probs.at(i, j) = e;
            sum += e;
        }
        for (int j = 0; j < v; ++j) probs.at(i, j) /= sum;
        loss -= std::log(std::max(probs.at(i, targets[static_cast<size_t>(i)]), 1e-300));
    }
    loss /= n;
    Tensor c(1, 1);
    c.data[0] = loss;
    c.check_finite("cross_entropy_rows");
    bool rg = tl.requires_grad;
    Id o = out(std::move(c), rg);
    if (rg)
        tape_.push_back([logits, o, targets, probs = std::move(probs)](Graph& g) {
            const auto* og = out_grad(g, o);
            if (!og) return;
            auto& gl = g.grad_buf(logits);
            int n = probs.rows(), v = probs.cols();
            double scale = (*og)[0] / n;
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < v; ++j) {
                    double p = probs.at(i, j) - (j == targets[static_cast<size_t>(i)] ? 1.0 : 0.0);
                    gl[static_cast<size_t>(i) * v + j] += scale * p;
                }
        });
    return o;
}

void Graph::backward(Id loss) {
    Tensor& tl = val(loss);
    if (tl.numel() != 1) throw InputError("backward: loss must be scalar");
    grad_buf(loss)[0] = 1.0;
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)(*this);
}

double finite_diff_check(const std::function<Graph::Id(Graph&, Graph::Id)>& build,
                         const Tensor& x, double h) {
    // Analytic pass.
    Tensor xg = x;
    xg.requires_grad = true;
    Graph g;
    Graph::Id xid = g.leaf(xg);
    Graph::Id loss = build(g, xid);
    g.backward(loss);
    std::vector<double> analytic = g.grad(xid);
    if (analytic.empty()) analytic.assign(x.data.size(), 0.0);

    auto eval = [&](const Tensor& xv) {
        Tensor xc = xv;
        xc.requires_grad = false;
        Graph gg;
        Graph::Id id = gg.leaf(xc);
        Graph::Id l = build(gg, id);
        return gg.val(l).data[0];
    };

    double worst = 0.0;
    for (size_t i = 0; i < x.data.size(); ++i) {
        Tensor xp = x;
        Tensor xm = x;
        xp.data[i] += h;
        xm.data[i] -= h;
        double numeric = (eval(xp) - eval(xm)) / (2.0 * h);
        double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
        worst = std::max(worst, err);
    }
    return worst;
}

}  // namespace msef
