#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "layoutlab/encoders.hpp"
#include "layoutlab/graph.hpp"
#include "layoutlab/rng.hpp"
#include "layoutlab/tensor.hpp"

namespace layoutlab::mmdit {

using encoders::TokenizedLayout;
using numcore::Graph;
using numcore::Tensor;

// Network variants for introducing the layout stream. Base is the plain
// image+text backbone; the others add layout guidance in different ways:
//   adapter   - image-to-layout cross-attention added onto the image stream
//   m3        - one joint attention over image, text and layout
//   siam      - twin attention branches (image-text and image-layout) whose
//               image outputs are fused through a zero-initialized delta
//   siam-lora - siam topology riding on frozen base weights via low-rank
//               adapters instead of fresh full-rank matrices
enum class Variant { Base, Adapter, M3, Siam, SiamLora };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& name);

// Rank used when adapting a full-scale backbone; the toy default in
// ModelConfig is 8.
inline constexpr int64_t kFullScaleLoraRank = 256;

struct ModelConfig {
    int64_t width = 64;  // d
    int64_t blocks = 4;
    int64_t heads = 4;
    int64_t image_size = 32;
    int64_t patch = 2;
    int64_t caption_len = 16;  // P
    int64_t region_len = 4;    // C
    int64_t fourier = 8;       // F
    int64_t max_entities = 10;
    int64_t vocab = 0;
    int64_t lora_rank = 8;

    int64_t grid() const { return image_size / patch; }
    int64_t image_tokens() const { return grid() * grid(); }
    int64_t patch_dim() const { return 3 * patch * patch; }
    int64_t head_dim() const { return width / heads; }
    int64_t mlp_hidden() const { return 4 * width; }
    int64_t layout_in_dim() const { return width + 8 * fourier; }

    void validate() const;
    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
};

// One named weight tensor. `layout_side` marks the parameters introduced
// for layout conditioning; the pretrained set stays frozen while only
// these train during the layout phase.
struct Param {
    std::string name;
    Tensor value;
    bool layout_side = false;
};

class ModelWeights {
public:
    static ModelWeights init(const ModelConfig& cfg, Variant variant, Rng& rng);

    // Builds the layout variant around an existing pretrained base: the
    // base tensors are copied verbatim, new parameters are drawn from rng.
    static ModelWeights extend_base(const ModelWeights& base, Variant variant, Rng& rng);

    const ModelConfig& config() const { return cfg_; }
    Variant variant() const { return variant_; }

    const std::vector<Param>& params() const { return params_; }
    std::vector<Param>& params() { return params_; }
    const Param& at(const std::string& name) const;
    Param& at(const std::string& name);
    bool has(const std::string& name) const { return index_.count(name) > 0; }
    size_t index_of(const std::string& name) const;

    int64_t total_params() const;
    int64_t layout_params() const;  // trainable set in the layout phase

private:
    ModelWeights(ModelConfig cfg, Variant variant) : cfg_(cfg), variant_(variant) {}
    void add(std::string name, Tensor value, bool layout_side);

    ModelConfig cfg_;
    Variant variant_;
    std::vector<Param> params_;
    std::unordered_map<std::string, size_t> index_;

    friend ModelWeights build_weights(const ModelConfig&, Variant, Rng&, const ModelWeights*);
};

// Post-softmax attention probabilities captured for the diagnostics,
// together with the query/key spans of each modality (-1,-1 if absent).
struct AttnMap {
    int block = 0;
    int head = 0;
    Tensor probs;
    int64_t img_rows_begin = 0, img_rows_end = 0;
    int64_t txt_cols_begin = -1, txt_cols_end = -1;
    int64_t lay_cols_begin = -1, lay_cols_end = -1;
};

enum class Phase { Pretrain, LayoutPhase, Inference };

struct ForwardOptions {
    bool layout_active = true;
    std::vector<AttnMap>* capture = nullptr;
    int* layout_invocations = nullptr;  // bumped when a layout path actually runs
};

struct ForwardResult {
    Graph::Id prediction;               // [image_tokens, patch_dim]
    std::vector<Graph::Id> param_ids;   // aligned with ModelWeights::params()
};

// Assembles the full per-sample graph: token embeddings, the block stack
// of the selected variant, and the output head. `z_tokens` is the
// patchified noisy input.
ForwardResult forward_tokens(Graph& g, const ModelWeights& w, Phase phase, const Tensor& z_tokens,
                             const std::vector<int64_t>& caption_ids, const TokenizedLayout* layout,
                             double t_norm, const ForwardOptions& opts = {});

// Same forward over caller-provided parameter leaves (aligned with
// ModelWeights::params()); the gradient checker drives this directly.
ForwardResult forward_with_params(Graph& g, const ModelWeights& w,
                                  std::vector<Graph::Id> param_ids, const Tensor& z_tokens,
                                  const std::vector<int64_t>& caption_ids,
                                  const TokenizedLayout* layout, double t_norm,
                                  const ForwardOptions& opts = {});

// Convenience wrapper for inference: pixel noise prediction for a pixel
// input, built on a throwaway graph.
Tensor predict_noise(const ModelWeights& w, const Tensor& z_pixels,
                     const std::vector<int64_t>& caption_ids, const TokenizedLayout* layout,
                     double t_norm, const ForwardOptions& opts = {});

}  // namespace layoutlab::mmdit
