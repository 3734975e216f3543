#include "layoutlab/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace layoutlab::numcore {

namespace {

double evaluate(const LossBuilder& f, const std::vector<Tensor>& params) {
    Graph g;
    std::vector<Graph::Id> ids;
    ids.reserve(params.size());
    for (const auto& p : params) ids.push_back(g.value(p));
    const Graph::Id loss = f(g, ids);
    if (g.val(loss).numel() != 1)
        throw std::invalid_argument("grad_check requires a scalar-valued function");
    return g.val(loss).data[0];
}

}  // namespace

double grad_check(const LossBuilder& f, const std::vector<Tensor>& params, double h) {
    // Analytic pass.
    Graph g;
    std::vector<Graph::Id> ids;
    ids.reserve(params.size());
    for (const auto& p : params) ids.push_back(g.param(p));
    const Graph::Id loss = f(g, ids);
    if (g.val(loss).numel() != 1)
        throw std::invalid_argument("grad_check requires a scalar-valued function");
    g.backward(loss);

    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (size_t i = 0; i < params.size(); ++i) {
        try {
            analytic.push_back(g.grad(ids[i]));
        } catch (const std::logic_error&) {
            analytic.push_back(Tensor::zeros(params[i].shape));  // unused parameter
        }
    }

    // Numeric pass, one central difference per element.
    std::vector<Tensor> scratch = params;
    double max_rel = 0.0;
    for (size_t p = 0; p < params.size(); ++p) {
        for (size_t e = 0; e < params[p].data.size(); ++e) {
            const double saved = scratch[p].data[e];
            scratch[p].data[e] = saved + h;
            const double f_plus = evaluate(f, scratch);
            scratch[p].data[e] = saved - h;
            const double f_minus = evaluate(f, scratch);
            scratch[p].data[e] = saved;
            const double cd = (f_plus - f_minus) / (2.0 * h);
            const double rel = std::abs(analytic[p].data[e] - cd) / std::max(1.0, std::abs(cd));
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace layoutlab::numcore
