#include "layoutlab/graph.hpp"

#include <cmath>
#include <stdexcept>

#include "layoutlab/kernels.hpp"

namespace layoutlab::numcore {

namespace {

void require_2d(const Tensor& t, const char* op) {
    if (t.shape.size() != 2)
        throw std::invalid_argument(std::string(op) + " expects a 2-D tensor, got " + shape_str(t.shape));
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape != b.shape)
        throw std::invalid_argument(std::string(op) + " shape mismatch: " + shape_str(a.shape) +
                                    " vs " + shape_str(b.shape));
}

constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

Graph::Id Graph::leaf(Tensor t, bool requires_grad) {
    return push(std::move(t), requires_grad, nullptr, "leaf");
}

const Tensor& Graph::grad(Id id) const {
    const Node& n = nodes_[static_cast<size_t>(id)];
    if (n.grad.data.empty())
        throw std::logic_error("gradient not available for node " + std::to_string(id));
    return n.grad;
}

Graph::Id Graph::push(Tensor value, bool requires_grad, std::function<void(Graph&)> backprop,
                      const char* op_name) {
    if (!value.all_finite())
        throw std::runtime_error(std::string(op_name) + " produced a non-finite value");
    nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, std::move(backprop)});
    return static_cast<Id>(nodes_.size() - 1);
}

Tensor& Graph::grad_buf(Id id) {
    Node& n = node(id);
    if (n.grad.data.empty()) n.grad = Tensor::zeros(n.value.shape);
    return n.grad;
}

void Graph::add_grad(Id id, const Tensor& g) {
    Tensor& buf = grad_buf(id);
    for (size_t i = 0; i < buf.data.size(); ++i) buf.data[i] += g.data[i];
}

Graph::Id Graph::matmul(Id a, Id b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    require_2d(ta, "matmul");
    require_2d(tb, "matmul");
    if (ta.shape[1] != tb.shape[0])
        throw std::invalid_argument("matmul inner extents differ: " + shape_str(ta.shape) + " vs " +
                                    shape_str(tb.shape));
    const int64_t m = ta.shape[0], k = ta.shape[1], n = tb.shape[1];
    Tensor out({m, n});
    kernels::matmul(ta.data.data(), tb.data.data(), out.data.data(), m, k, n);
    macs_ += static_cast<uint64_t>(m) * static_cast<uint64_t>(k) * static_cast<uint64_t>(n);
    const bool rg = requires_grad(a) || requires_grad(b);
    auto back = [a, b, out_id = static_cast<Id>(nodes_.size()), m, k, n](Graph& g) {
        const Tensor& go = g.grad(out_id);
        if (g.requires_grad(a)) {
            kernels::matmul_nt(go.data.data(), g.val(b).data.data(), g.grad_buf(a).data.data(), m, n,
                               k, /*accumulate=*/true);
        }
        if (g.requires_grad(b)) {
            kernels::matmul_tn(g.val(a).data.data(), go.data.data(), g.grad_buf(b).data.data(), m, k,
                               n, /*accumulate=*/true);
        }
    };
    return push(std::move(out), rg, rg ? std::function<void(Graph&)>(back) : nullptr, "matmul");
}

Graph::Id Graph::transpose(Id x) {
    const Tensor& t = val(x);
    require_2d(t, "transpose");
    const int64_t m = t.shape[0], n = t.shape[1];
    Tensor out({n, m});
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j) out.data[static_cast<size_t>(j * m + i)] = t.at(i, j);
    const bool rg = requires_grad(x);
    auto back = [x, out_id = static_cast<Id>(nodes_.size()), m, n](Graph& g) {
        const Tensor& go = g.grad(out_id);
        Tensor& gx = g.grad_buf(x);
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < n; ++j)
                gx.data[static_cast<size_t>(i * n + j)] += go.data[static_cast<size_t>(j * m + i)];
    };
    return push(std::move(out), rg, rg ? std::function<void(Graph&)>(back) : nullptr, "transpose");
}

Graph::Id Graph::add(Id a, Id b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    require_same_shape(ta, tb, "add");
    Tensor out(ta.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = ta.data[i] + tb.data[i];
    const bool rg = requires_grad(a) || requires_grad(b);
    auto back = [a, b, out_id = static_cast<Id>(nodes_.size())](Graph& g) {
        const Tensor& go = g.grad(out_id);
        if (g.requires_grad(a)) g.add_grad(a, go);
        if (g.requires_grad(b)) g.add_grad(b, go);
    };
    return push(std::move(out), rg, rg ? std::function<void(Graph&)>(back) : nullptr, "add");
}

Graph::Id Graph::sub(Id a, Id b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    require_same_shape(ta, tb, "sub");
    Tensor out(ta.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = ta.data[i] - tb.data[i];
    const bool rg = requires_grad(a) || requires_grad(b);
    auto back = [a, b, out_id = static_cast<Id>(nodes_.size())](Graph& g) {
        const Tensor& go = g.grad(out_id);
        if (g.requires_grad(a)) g.add_grad(a, go);
        if (g.requires_grad(b)) {
            Tensor& gb = g.grad_buf(b);
            for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] -= go.data[i];
        }
    };
    return push(std::move(out), rg, rg ? std::function<void(Graph&)>(back) : nullptr, "sub");
}

Graph::Id Graph::mul(Id a, Id b) {
    const Tensor& ta = val(a);
    const Tensor& tb = val(b);
    require_same_shape(ta, tb, "mul");
    Tensor out(ta.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = ta.data[i] * tb.data[i];
    const bool rg = requires_grad(a) || requires_grad(b);
    auto back = [a, b, out_id = static_cast<Id>(nodes_.size())](Graph& g) {
        const Tensor& go = g.grad(out_id);
        if (g.requires_grad(a)) {
            Tensor& ga = g.grad_buf(a);
            const Tensor& tb2 = g.val(b);
            for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += go.data[i] * tb2.data[i];
        }
        if (g.requires_grad(b)) {
            Tensor& gb = g.grad_buf(b);
            const Tensor& ta2 = g.val(a);
            for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += go.data[i] * ta2.data[i];
        }
    };
    return push(std::move(out), rg, rg ? std::function<void(Graph&)>(back) : nullptr, "mul");
}

Graph::Id Graph::bias_add(Id x, Id b) {
    const Tensor& tx = val(x);
    const Tensor& tb = val(b);
    require_2d(tx, "bias_add");
    if (tb.numel() != tx.shape[1])
        throw std::invalid_argument("bias_add bias length " + shape_str(tb.shape) +
                                    " does not match columns of " + shape_str(tx.shape));
    const int64_t m = tx.shape[0], n = tx.shape[1];
    Tensor out(tx.shape);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j)
            out.data[static_cast<size_t>(i * n + j)] = tx.at(i, j) + tb.data[static_cast<size_t>(j)];
    const bool rg = requires_grad(x) || requires_grad(b);
    auto back = [x, b, out_id = static_cast<Id>(nodes_.size()), m, n](Graph& g) {
        const Tensor& go = g.grad(out_id);
        if (g.requires_grad(x)) g.add_grad(x, go);
        if (g.requires_grad(b)) {
            Tensor& gb = g.grad_buf(b);
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j)
                    gb.data[static_cast<size_t>(j)] += go.data[static_cast<size_t>(i * n + j)];
        }
    };
    return push(std::move(out), rg, rg ? std::function<void(Graph&)>(back) : nullptr, "bias_add");
}

Graph::Id Graph::channel_scale(Id x, Id v) {
    const Tensor& tx = val(x);
    const Tensor& tv = val(v);
    require_2d(tx, "channel_scale");
    if (tv.numel() != tx.shape[1])
        throw std::invalid_argument("channel_scale vector length " + shape_str(tv.shape) +
                                    " does not match columns of " + shape_str(tx.shape));
    const int64_t m = tx.shape[0], n = tx.shape[1];
    Tensor out(tx.shape);
    for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j)
            out.data[static_cast<size_t>(i * n + j)] = tx.at(i, j) * tv.data[static_cast<size_t>(j)];
    const bool rg = requires_grad(x) || requires_grad(v);
    auto back = [x, v, out_id = static_cast<Id>(nodes_.size()), m, n](Graph& g) {
        const Tensor& go = g.grad(out_id);
        if (g.requires_grad(x)) {
            Tensor& gx = g.grad_buf(x);
            const Tensor& tv2 = g.val(v);
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j)
                    gx.data[static_cast<size_t>(i * n + j)] +=
                        go.data[static_cast<size_t>(i * n + j)] * tv2.data[static_cast<size_t>(j)];
        }
        if (g.requires_grad(v)) {
            Tensor& gv = g.grad_buf(v);
            const Tensor& tx2 = g.val(x);
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < n; ++j)
                    gv.data[static_cast<size_t>(j)] +=
                        go.data[static_cast<size_t>(i * n + j)] * tx2.at(i, j);
        }
    };
    return push(std::move(out), rg, rg ? std::function<void(Graph&)>(back) : nullptr, "channel_scale");
}

Graph::Id Graph::scale(Id x, double c) {
    const Tensor& tx = val(x);
    Tensor out(tx.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = tx.data[i] * c;
    const bool rg = requires_grad(x);
    auto back = [x, c, out_id = static_cast<Id>(nodes_.size())](Graph& g) {
        const Tensor& go = g.grad(out_id);
        Tensor& gx = g.grad_buf(x);
        for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += go.data[i] * c;
    };
    return push(std::move(out), rg, rg ? std::function<void(Graph&)>(back) : nullptr, "scale");
}

Graph::Id Graph::add_const(Id x, double c) {
    const Tensor& tx = val(x);
    Tensor out(tx.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = tx.data[i] + c;
    const bool rg = requires_grad(x);
    auto back = [x, out_id = static_cast<Id>(nodes_.size())](Graph& g) {
        g.add_grad(x, g.grad(out_id));
    };
    return push(std::move(out), rg, rg ? std::function<void(Graph&)>(back) : nullptr, "add_const");
}

Graph::Id Graph::layer_norm(Id x, Id gain, Id bias, double eps) {
    const Tensor& tx = val(x);
    const Tensor& tg = val(gain);
    const Tensor& tb = val(bias);
    require_2d(tx, "layer_norm");
    const int64_t m = tx.shape[0], n = tx.shape[1];
    if (tg.numel() != n || tb.numel() != n)
        throw std::invalid_argument("layer_norm gain/bias must have length " + std::to_string(n));
    Tensor out(tx.shape);
    kernels::layer_norm_rows(tx.data.data(), tg.data.data(), tb.data.data(), out.data.data(), m, n,
                             eps);
    const bool rg = requires_grad(x) || requires_grad(gain) || requires_grad(bias);
    auto back = [x, gain, bias, eps, out_id = static_cast<Id>(nodes_.size()), m, n](Graph& g) {
        const Tensor& go = g.grad(out_id);
        const Tensor& tx2 = g.val(x);
        const Tensor& tg2 = g.val(gain);
        const double inv_n = 1.0 / static_cast<double>(n);
        std::vector<double> xhat(static_cast<size_t>(n));
        for (int64_t i = 0; i < m; ++i) {
            double mean = 0.0, var = 0.0;
            for (int64_t j = 0; j < n; ++j) mean += tx2.at(i, j);
            mean *= inv_n;
            for (int64_t j = 0; j < n; ++j) {
                const double d = tx2.at(i, j) - mean;
                var += d * d;
            }
            var *= inv_n;
            const double inv_std = 1.0 / std::sqrt(var + eps);
            for (int64_t j = 0; j < n; ++j) xhat[static_cast<size_t>(j)] = (tx2.at(i, j) - mean) * inv_std;

            if (g.requires_grad(gain)) {
                Tensor& gg = g.grad_buf(gain);
                for (int64_t j = 0; j < n; ++j)
                    gg.data[static_cast<size_t>(j)] += go.at(i, j) * xhat[static_cast<size_t>(j)];
            }
            if (g.requires_grad(bias)) {
                Tensor& gb = g.grad_buf(bias);
                for (int64_t j = 0; j < n; ++j) gb.data[static_cast<size_t>(j)] += go.at(i, j);
            }
            if (g.requires_grad(x)) {
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (int64_t j = 0; j < n; ++j) {
                    const double dxhat = go.at(i, j) * tg2.data[static_cast<size_t>(j)];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat[static_cast<size_t>(j)];
                }
                Tensor& gx = g.grad_buf(x);
                for (int64_t j = 0; j < n; ++j) {
                    const double dxhat = go.at(i, j) * tg2.data[static_cast<size_t>(j)];
                    gx.data[static_cast<size_t>(i * n + j)] +=
                        (dxhat - inv_n * sum_dxhat - xhat[static_cast<size_t>(j)] * inv_n * sum_dxhat_xhat) *
                        inv_std;
                }
            }
        }
    };
    return push(std::move(out), rg, rg ? std::function<void(Graph&)>(back) : nullptr, "layer_norm");
}

Graph::Id Graph::gelu(Id x) {
    const Tensor& tx = val(x);
    Tensor out(tx.shape);
    kernels::gelu(tx.data.data(), out.data.data(), tx.numel());
    const bool rg = requires_grad(x);
    auto back = [x, out_id = static_cast<Id>(nodes_.size())](Graph& g) {
        const Tensor& go = g.grad(out_id);
        const Tensor& tx2 = g.val(x);
        Tensor& gx = g.grad_buf(x);
        for (size_t i = 0; i < gx.data.size(); ++i) {
            const double v = tx2.data[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * 0.70710678118654752440));
            const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
            gx.data[i] += go.data[i] * (cdf + v * pdf);
        }
    };
    return push(std::move(out), rg, rg ? std::function<void(Graph&)>(back) : nullptr, "gelu");
}

Graph::Id Graph::softmax_rows(Id x) {
    const Tensor& tx = val(x);
    require_2d(tx, "softmax_rows");
    const int64_t m = tx.shape[0], n = tx.shape[1];
    Tensor out(tx.shape);
    kernels::softmax_rows(tx.data.data(), out.data.data(), m, n);
    const bool rg = requires_grad(x);
    auto back = [x, out_id = static_cast<Id>(nodes_.size()), m, n](Graph& g) {
        const Tensor& go = g.grad(out_id);
        const Tensor& y = g.val(out_id);
        Tensor& gx = g.grad_buf(x);
        for (int64_t i = 0; i < m; ++i) {
            double dot = 0.0;
            for (int64_t j = 0; j < n; ++j) dot += go.at(i, j) * y.at(i, j);
            for (int64_t j = 0; j < n; ++j)
                gx.data[static_cast<size_t>(i * n + j)] += y.at(i, j) * (go.at(i, j) - dot);
        }
    };
    return push(std::move(out), rg, rg ? std::function<void(Graph&)>(back) : nullptr, "softmax_rows");
}

Graph::Id Graph::concat_rows(std::span<const Id> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows needs at least one part");
    const int64_t n = val(parts[0]).shape.size() == 2 ? val(parts[0]).shape[1] : -1;
    if (n < 0) throw std::invalid_argument("concat_rows expects 2-D tensors");
    int64_t m = 0;
    bool rg = false;
    for (Id p : parts) {
        require_2d(val(p), "concat_rows");
        if (val(p).shape[1] != n)
            throw std::invalid_argument("concat_rows column mismatch: " + shape_str(val(p).shape) +
                                        " vs expected " + std::to_string(n) + " columns");
        m += val(p).shape[0];
        rg = rg || requires_grad(p);
    }
    Tensor out({m, n});
    int64_t row = 0;
    for (Id p : parts) {
        const Tensor& t = val(p);
        std::copy(t.data.begin(), t.data.end(), out.data.begin() + row * n);
        row += t.shape[0];
    }
    std::vector<Id> part_ids(parts.begin(), parts.end());
    auto back = [part_ids, out_id = static_cast<Id>(nodes_.size()), n](Graph& g) {
        const Tensor& go = g.grad(out_id);
        int64_t r = 0;
        for (Id p : part_ids) {
            const int64_t rows = g.val(p).shape[0];
            if (g.requires_grad(p)) {
                Tensor& gp = g.grad_buf(p);
                for (int64_t i = 0; i < rows * n; ++i)
                    gp.data[static_cast<size_t>(i)] += go.data[static_cast<size_t>(r * n + i)];
            }
            r += rows;
        }
    };
    return push(std::move(out), rg, rg ? std::function<void(Graph&)>(back) : nullptr, "concat_rows");
}

std::vector<Graph::Id> Graph::split_rows(Id x, std::span<const int64_t> sizes) {
    // Copy: push() may reallocate the node store mid-loop.
    const Tensor tx = val(x);
    require_2d(tx, "split_rows");
    const int64_t n = tx.shape[1];
    int64_t total = 0;
    for (int64_t s : sizes) total += s;
    if (total != tx.shape[0])
        throw std::invalid_argument("split_rows sizes sum to " + std::to_string(total) +
                                    " but tensor is " + shape_str(tx.shape));
    std::vector<Id> out;
    int64_t row = 0;
    for (int64_t s : sizes) {
        Tensor part({s, n});
        std::copy(tx.data.begin() + row * n, tx.data.begin() + (row + s) * n, part.data.begin());
        const bool rg = requires_grad(x);
        const int64_t start = row;
        auto back = [x, start, n, out_id = static_cast<Id>(nodes_.size())](Graph& g) {
            const Tensor& go = g.grad(out_id);
            Tensor& gx = g.grad_buf(x);
            for (size_t i = 0; i < go.data.size(); ++i)
                gx.data[static_cast<size_t>(start * n) + i] += go.data[i];
        };
        out.push_back(push(std::move(part), rg, rg ? std::function<void(Graph&)>(back) : nullptr,
                           "split_rows"));
        row += s;
    }
    return out;
}

Graph::Id Graph::concat_cols(std::span<const Id> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols needs at least one part");
    require_2d(val(parts[0]), "concat_cols");
    const int64_t m = val(parts[0]).shape[0];
    int64_t n = 0;
    bool rg = false;
    for (Id p : parts) {
        require_2d(val(p), "concat_cols");
        if (val(p).shape[0] != m)
            throw std::invalid_argument("concat_cols row mismatch: " + shape_str(val(p).shape) +
                                        " vs expected " + std::to_string(m) + " rows");
        n += val(p).shape[1];
        rg = rg || requires_grad(p);
    }
    Tensor out({m, n});
    int64_t col = 0;
    for (Id p : parts) {
        const Tensor& t = val(p);
        const int64_t pn = t.shape[1];
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < pn; ++j) out.data[static_cast<size_t>(i * n + col + j)] = t.at(i, j);
        col += pn;
    }
    std::vector<Id> part_ids(parts.begin(), parts.end());
    auto back = [part_ids, out_id = static_cast<Id>(nodes_.size()), m, n](Graph& g) {
        const Tensor& go = g.grad(out_id);
        int64_t c = 0;
        for (Id p : part_ids) {
            const int64_t pn = g.val(p).shape[1];
            if (g.requires_grad(p)) {
                Tensor& gp = g.grad_buf(p);
                for (int64_t i = 0; i < m; ++i)
                    for (int64_t j = 0; j < pn; ++j)
                        gp.data[static_cast<size_t>(i * pn + j)] +=
                            go.data[static_cast<size_t>(i * n + c + j)];
            }
            c += pn;
        }
    };
    return push(std::move(out), rg, rg ? std::function<void(Graph&)>(back) : nullptr, "concat_cols");
}

std::vector<Graph::Id> Graph::split_cols(Id x, std::span<const int64_t> sizes) {
    // Copy: push() may reallocate the node store mid-loop.
    const Tensor tx = val(x);
    require_2d(tx, "split_cols");
    const int64_t m = tx.shape[0], n = tx.shape[1];
    int64_t total = 0;
    for (int64_t s : sizes) total += s;
    if (total != n)
        throw std::invalid_argument("split_cols sizes sum to " + std::to_string(total) +
                                    " but tensor is " + shape_str(tx.shape));
    std::vector<Id> out;
    int64_t col = 0;
    for (int64_t s : sizes) {
        Tensor part({m, s});
        for (int64_t i = 0; i < m; ++i)
            for (int64_t j = 0; j < s; ++j)
                part.data[static_cast<size_t>(i * s + j)] = tx.at(i, col + j);
        const bool rg = requires_grad(x);
        const int64_t start = col;
        auto back = [x, start, s, n, out_id = static_cast<Id>(nodes_.size()), m](Graph& g) {
            const Tensor& go = g.grad(out_id);
            Tensor& gx = g.grad_buf(x);
            for (int64_t i = 0; i < m; ++i)
                for (int64_t j = 0; j < s; ++j)
                    gx.data[static_cast<size_t>(i * n + start + j)] +=
                        go.data[static_cast<size_t>(i * s + j)];
        };
        out.push_back(push(std::move(part), rg, rg ? std::function<void(Graph&)>(back) : nullptr,
                           "split_cols"));
        col += s;
    }
    return out;
}

Graph::Id Graph::lookup(Id table, std::vector<int64_t> ids) {
    const Tensor& tt = val(table);
    require_2d(tt, "lookup");
    const int64_t v = tt.shape[0], d = tt.shape[1];
    for (int64_t id : ids)
        if (id < 0 || id >= v)
            throw std::invalid_argument("lookup id " + std::to_string(id) + " out of range [0," +
                                        std::to_string(v) + ")");
    const int64_t m = static_cast<int64_t>(ids.size());
    Tensor out({m, d});
    for (int64_t i = 0; i < m; ++i)
        std::copy(tt.data.begin() + ids[static_cast<size_t>(i)] * d,
                  tt.data.begin() + (ids[static_cast<size_t>(i)] + 1) * d, out.data.begin() + i * d);
    const bool rg = requires_grad(table);
    auto back = [table, ids = std::move(ids), d, out_id = static_cast<Id>(nodes_.size())](Graph& g) {
        const Tensor& go = g.grad(out_id);
        Tensor& gt = g.grad_buf(table);
        for (size_t i = 0; i < ids.size(); ++i)
            for (int64_t j = 0; j < d; ++j)
                gt.data[static_cast<size_t>(ids[i] * d + j)] += go.data[i * static_cast<size_t>(d) + static_cast<size_t>(j)];
    };
    return push(std::move(out), rg, rg ? std::function<void(Graph&)>(back) : nullptr, "lookup");
}

Graph::Id Graph::mean_all(Id x) {
    const Tensor& tx = val(x);
    const double inv = 1.0 / static_cast<double>(tx.numel());
    double s = 0.0;
    for (double v : tx.data) s += v;
    Tensor out = Tensor::scalar(s * inv);
    const bool rg = requires_grad(x);
    auto back = [x, inv, out_id = static_cast<Id>(nodes_.size())](Graph& g) {
        const double go = g.grad(out_id).data[0] * inv;
        Tensor& gx = g.grad_buf(x);
        for (auto& v : gx.data) v += go;
    };
    return push(std::move(out), rg, rg ? std::function<void(Graph&)>(back) : nullptr, "mean_all");
}

Graph::Id Graph::mean_masked(Id x, Tensor mask) {
    const Tensor& tx = val(x);
    require_same_shape(tx, mask, "mean_masked");
    double count = 0.0, s = 0.0;
    for (size_t i = 0; i < mask.data.size(); ++i) {
        if (mask.data[i] != 0.0) {
            count += 1.0;
            s += tx.data[i];
        }
    }
    Tensor out = Tensor::scalar(count > 0.0 ? s / count : 0.0);
    const bool rg = requires_grad(x);
    auto back = [x, mask = std::move(mask), count, out_id = static_cast<Id>(nodes_.size())](Graph& g) {
        if (count == 0.0) return;
        const double go = g.grad(out_id).data[0] / count;
        Tensor& gx = g.grad_buf(x);
        for (size_t i = 0; i < gx.data.size(); ++i)
            if (mask.data[i] != 0.0) gx.data[i] += go;
    };
    return push(std::move(out), rg, rg ? std::function<void(Graph&)>(back) : nullptr, "mean_masked");
}

Graph::Id Graph::mean_rows_masked(Id x, Tensor row_mask) {
    const Tensor& tx = val(x);
    require_2d(tx, "mean_rows_masked");
    const int64_t m = tx.shape[0], n = tx.shape[1];
    if (row_mask.numel() != m)
        throw std::invalid_argument("mean_rows_masked mask length " + shape_str(row_mask.shape) +
                                    " does not match rows of " + shape_str(tx.shape));
    double count = 0.0;
    Tensor out({1, n});
    for (int64_t i = 0; i < m; ++i) {
        if (row_mask.data[static_cast<size_t>(i)] != 0.0) {
            count += 1.0;
            for (int64_t j = 0; j < n; ++j) out.data[static_cast<size_t>(j)] += tx.at(i, j);
        }
    }
    if (count > 0.0)
        for (auto& v : out.data) v /= count;
    const bool rg = requires_grad(x);
    auto back = [x, row_mask = std::move(row_mask), count, n,
                 out_id = static_cast<Id>(nodes_.size()), m](Graph& g) {
        if (count == 0.0) return;
        const Tensor& go = g.grad(out_id);
        Tensor& gx = g.grad_buf(x);
        for (int64_t i = 0; i < m; ++i)
            if (row_mask.data[static_cast<size_t>(i)] != 0.0)
                for (int64_t j = 0; j < n; ++j)
                    gx.data[static_cast<size_t>(i * n + j)] += go.data[static_cast<size_t>(j)] / count;
    };
    return push(std::move(out), rg, rg ? std::function<void(Graph&)>(back) : nullptr,
                "mean_rows_masked");
}

void Graph::backward(Id loss) {
    Node& ln = node(loss);
    if (ln.value.numel() != 1)
        throw std::invalid_argument("backward requires a scalar output, got " +
                                    shape_str(ln.value.shape));
    grad_buf(loss).data[0] = 1.0;
    for (Id id = loss; id >= 0; --id) {
        Node& n = node(id);
        if (n.backprop && !n.grad.data.empty()) n.backprop(*this);
    }
}

}  // namespace layoutlab::numcore
