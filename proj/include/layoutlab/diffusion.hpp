#pragma once

#include <cstdint>
#include <vector>

#include "layoutlab/encoders.hpp"
#include "layoutlab/graph.hpp"
#include "layoutlab/model.hpp"
#include "layoutlab/rng.hpp"
#include "layoutlab/tensor.hpp"

namespace layoutlab::diffusion {

using encoders::TokenizedLayout;
using numcore::Graph;
using numcore::Tensor;

// Linear-beta DDPM schedule. alpha_bar[0] is defined as 1 so t=0 means
// "no noise"; training timesteps live in [1,T].
struct Schedule {
    int64_t steps = 1000;
    std::vector<double> alpha_bar;  // size steps+1, strictly decreasing, in (0,1]

    static Schedule linear(int64_t steps = 1000, double beta_start = 1e-4, double beta_end = 0.02);
};

// z_t = sqrt(abar_t) z0 + sqrt(1-abar_t) eps, t in [0,T] (t=0 returns z0).
Tensor q_sample(const Tensor& z0, int64_t t, const Tensor& eps, const Schedule& schedule);

// Timestep mixture for biased sampling: component 1 centered late in the
// schedule, component 2 at zero. Sigmas default to 0.25T; the literal
// flag reads the component spread as a full T instead.
struct MixtureSpec {
    double p1 = 0.7;
    double center1_frac = 0.7;
    double center2_frac = 0.0;
    double sigma_frac = 0.25;
    bool literal_sigma = false;

    double sigma(int64_t steps) const {
        return literal_sigma ? static_cast<double>(steps) : sigma_frac * static_cast<double>(steps);
    }
};

struct TimestepDraw {
    int64_t t = 0;
    int component = 0;  // 0 = uniform, 1/2 = mixture component
};

// Biased: pick the component once (this is what the 70/30 split refers
// to), then redraw within it until the rounded value lands in [1,T].
// Unbiased: uniform on [1,T].
TimestepDraw sample_timestep(const Schedule& schedule, const MixtureSpec& mix, bool biased, Rng& rng);

// Exact discrete CDF of the truncated mixture over t in [1,T]; used by the
// statistical tests. cdf[t-1] = P(draw <= t).
std::vector<double> mixture_cdf(const Schedule& schedule, const MixtureSpec& mix);

// Token-grid mask, 1 where the cell center falls inside any entity box
// (union). Shape [grid_h * grid_w].
Tensor region_mask(const std::vector<BBox>& boxes, int64_t grid_h, int64_t grid_w);

// Loss nodes over token-space prediction/target [T_z, patch_dim]:
// l_layout = global MSE, l_region = MSE over rows flagged by the token
// mask (0 if the mask is empty), l_total = l_layout + lambda * l_region.
struct LossNodes {
    Graph::Id l_layout;
    Graph::Id l_region;
    Graph::Id l_total;
};

LossNodes build_losses(Graph& g, Graph::Id prediction, Graph::Id target, const Tensor& token_mask,
                       double lambda_region);

// Deterministic DDIM-style reverse process with S uniformly spaced steps.
// Layout conditioning is enabled on the first ceil(0.3*S) steps only
// (highest noise); the trace records how often the layout path actually
// ran per step. eta > 0 adds the usual stochastic term from the seed.
struct SampleResult {
    Tensor image;  // [3,H,W] in [0,1]
    std::vector<int> layout_calls_per_step;
};

int64_t layout_active_steps(int64_t total_steps);  // ceil(0.3*S)

SampleResult sample_image(const mmdit::ModelWeights& weights, const Schedule& schedule,
                          const std::vector<int64_t>& caption_ids, const TokenizedLayout* layout,
                          int64_t steps, double eta, uint64_t seed);

}  // namespace layoutlab::diffusion
