#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "layoutlab/geometry.hpp"
#include "layoutlab/graph.hpp"
#include "layoutlab/tensor.hpp"

namespace layoutlab::encoders {

using numcore::Graph;
using numcore::Tensor;

// Whitespace token vocabulary, at most 256 entries, id 0 reserved for
// padding. Serialized as a JSON object token -> id.
class Vocabulary {
public:
    static Vocabulary defaults();  // colors, shapes, spatial words, glue words
    static Vocabulary from_json(const std::string& json_text);
    std::string to_json() const;

    int64_t add(const std::string& token);
    int64_t id(const std::string& token) const;           // throws on unknown token
    const std::string& token(int64_t id) const;
    int64_t size() const { return static_cast<int64_t>(tokens_.size()); }

    // Splits on whitespace, maps each word, pads with id 0 to `len`.
    // Unknown words and overlong captions are rejected.
    std::vector<int64_t> tokenize(const std::string& text, int64_t len) const;

private:
    std::unordered_map<std::string, int64_t> ids_;
    std::vector<std::string> tokens_;
};

// Raw layout as stored on disk: a global caption plus captioned boxes.
// Geometry is not validated on load so the validator can inspect bad files.
struct Entity {
    BBox box;
    std::string caption;
};

struct Layout {
    std::string caption;
    std::vector<Entity> entities;
};

Layout layout_from_json(const std::string& json_text);
std::string layout_to_json(const Layout& layout);
Layout load_layout(const std::string& path);
void save_layout(const std::string& path, const Layout& layout);

// Model-facing form: fixed-length token ids for the global caption and
// each region caption. Construction enforces the invariants the model
// relies on (valid boxes, entity cap, non-empty region captions).
struct TokenizedEntity {
    std::vector<int64_t> caption_ids;  // length C
    BBox box;
};

struct TokenizedLayout {
    std::vector<int64_t> caption_ids;  // length P
    std::vector<TokenizedEntity> entities;
};

TokenizedLayout tokenize_layout(const Layout& layout, const Vocabulary& vocab, int64_t caption_len,
                                int64_t region_len, int64_t max_entities);

// [3,H,W] -> [(H/p)(W/p), 3p^2] with feature order (channel, dy, dx);
// unpatchify is the exact inverse. p must divide H and W.
Tensor patchify(const Tensor& image, int64_t p);
Tensor unpatchify(const Tensor& tokens, int64_t channels, int64_t h, int64_t w, int64_t p);

// Fourier box embedding: for each coordinate v in (x0,y0,x1,y1) and
// frequency k in [0,F): sin(2^k pi v), cos(2^k pi v), coordinate-major.
Tensor fourier_embed(const BBox& box, int64_t frequencies);

// Fixed sinusoidal vectors. Image tokens get a factored row/column code,
// caption tokens a 1-D positional code; neither is trainable.
Tensor grid_position_embedding(int64_t grid_h, int64_t grid_w, int64_t dim);
Tensor sequence_position_embedding(int64_t length, int64_t dim);
Tensor timestep_embedding(double t_normalized, int64_t dim);  // [1,dim]

// Graph-level caption embedding: row i of the result is table row ids[i].
Graph::Id embed_caption(Graph& g, Graph::Id table, const std::vector<int64_t>& ids);

// Graph-level layout token (one entity): masked mean over non-padding
// caption embeddings, concatenated with the Fourier box code, then a
// 2-layer GELU MLP to model width.
struct LayoutTokenWeights {
    Graph::Id table;  // [V,d_txt]
    Graph::Id w1, b1; // [(d_txt + 8F), hidden], [hidden]
    Graph::Id w2, b2; // [hidden, d], [d]
};

Graph::Id layout_token(Graph& g, const LayoutTokenWeights& w, const std::vector<int64_t>& caption_ids,
                       const BBox& box, int64_t frequencies);

}  // namespace layoutlab::encoders
