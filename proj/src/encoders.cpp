#include "layoutlab/encoders.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace layoutlab::encoders {

using nlohmann::json;

Vocabulary Vocabulary::defaults() {
    Vocabulary v;
    v.add("<pad>");
    for (const char* w : {"a", "and", "on", "with", "background",
                          "red", "green", "blue", "yellow", "black", "white", "gray",
                          "circle", "square", "triangle", "shape",
                          "top", "bottom", "left", "right", "center", "at", "the"})
        v.add(w);
    return v;
}

int64_t Vocabulary::add(const std::string& token) {
    auto it = ids_.find(token);
    if (it != ids_.end()) return it->second;
    if (size() >= 256) throw std::length_error("vocabulary limited to 256 tokens");
    const int64_t id = size();
    ids_.emplace(token, id);
    tokens_.push_back(token);
    return id;
}

int64_t Vocabulary::id(const std::string& token) const {
    auto it = ids_.find(token);
    if (it == ids_.end()) throw std::invalid_argument("unknown token: '" + token + "'");
    return it->second;
}

const std::string& Vocabulary::token(int64_t id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("token id " + std::to_string(id));
    return tokens_[static_cast<size_t>(id)];
}

std::vector<int64_t> Vocabulary::tokenize(const std::string& text, int64_t len) const {
    std::vector<int64_t> out;
    std::istringstream ss(text);
    std::string word;
    while (ss >> word) out.push_back(id(word));
    if (static_cast<int64_t>(out.size()) > len)
        throw std::length_error("caption has " + std::to_string(out.size()) +
                                " tokens, limit is " + std::to_string(len));
    out.resize(static_cast<size_t>(len), 0);
    return out;
}

Vocabulary Vocabulary::from_json(const std::string& json_text) {
    const json j = json::parse(json_text);
    std::vector<std::pair<std::string, int64_t>> entries;
    for (auto it = j.begin(); it != j.end(); ++it)
        entries.emplace_back(it.key(), it.value().get<int64_t>());
    std::sort(entries.begin(), entries.end(),
              [](const auto& a, const auto& b) { return a.second < b.second; });
    Vocabulary v;
    for (const auto& [token, id] : entries) {
        if (id != v.size())
            throw std::invalid_argument("vocabulary ids must be dense from 0, gap at " +
                                        std::to_string(id));
        v.add(token);
    }
    if (v.size() == 0) throw std::invalid_argument("vocabulary must reserve id 0 for padding");
    return v;
}

std::string Vocabulary::to_json() const {
    json j = json::object();
    for (int64_t i = 0; i < size(); ++i) j[token(i)] = i;
    return j.dump(2);
}

Layout layout_from_json(const std::string& json_text) {
    const json j = json::parse(json_text);
    Layout layout;
    layout.caption = j.at("caption").get<std::string>();
    for (const auto& e : j.at("entities")) {
        const auto& b = e.at("bbox");
        if (b.size() != 4) throw std::invalid_argument("bbox must have 4 coordinates");
        Entity entity;
        entity.box = BBox{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                          b[3].get<double>()};
        entity.caption = e.at("caption").get<std::string>();
        layout.entities.push_back(std::move(entity));
    }
    return layout;
}

std::string layout_to_json(const Layout& layout) {
    json j;
    j["caption"] = layout.caption;
    j["entities"] = json::array();
    for (const auto& e : layout.entities)
        j["entities"].push_back({{"bbox", {e.box.x0, e.box.y0, e.box.x1, e.box.y1}},
                                 {"caption", e.caption}});
    return j.dump(2);
}

Layout load_layout(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return layout_from_json(ss.str());
}

void save_layout(const std::string& path, const Layout& layout) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    out << layout_to_json(layout) << "\n";
}

TokenizedLayout tokenize_layout(const Layout& layout, const Vocabulary& vocab, int64_t caption_len,
                                int64_t region_len, int64_t max_entities) {
    if (static_cast<int64_t>(layout.entities.size()) > max_entities)
        throw std::invalid_argument("layout has " + std::to_string(layout.entities.size()) +
                                    " entities, limit is " + std::to_string(max_entities));
    TokenizedLayout out;
    out.caption_ids = vocab.tokenize(layout.caption, caption_len);
    for (const auto& e : layout.entities) {
        if (!e.box.valid())
            throw std::invalid_argument("invalid bbox [" + std::to_string(e.box.x0) + "," +
                                        std::to_string(e.box.y0) + "," + std::to_string(e.box.x1) +
                                        "," + std::to_string(e.box.y1) + "]");
        TokenizedEntity te;
        te.caption_ids = vocab.tokenize(e.caption, region_len);
        te.box = e.box;
        out.entities.push_back(std::move(te));
    }
    return out;
}

Tensor patchify(const Tensor& image, int64_t p) {
    if (image.shape.size() != 3)
        throw std::invalid_argument("patchify expects [channels,H,W], got " + numcore::shape_str(image.shape));
    const int64_t c = image.shape[0], h = image.shape[1], w = image.shape[2];
    if (p <= 0 || h % p != 0 || w % p != 0)
        throw std::invalid_argument("patch size " + std::to_string(p) + " must divide " +
                                    std::to_string(h) + "x" + std::to_string(w));
    const int64_t gh = h / p, gw = w / p;
    Tensor out({gh * gw, c * p * p});
    for (int64_t gy = 0; gy < gh; ++gy)
        for (int64_t gx = 0; gx < gw; ++gx) {
            const int64_t tok = gy * gw + gx;
            for (int64_t ch = 0; ch < c; ++ch)
                for (int64_t dy = 0; dy < p; ++dy)
                    for (int64_t dx = 0; dx < p; ++dx) {
                        const int64_t pix = ch * h * w + (gy * p + dy) * w + (gx * p + dx);
                        out.data[static_cast<size_t>(tok * c * p * p + ch * p * p + dy * p + dx)] =
                            image.data[static_cast<size_t>(pix)];
                    }
        }
    return out;
}

Tensor unpatchify(const Tensor& tokens, int64_t channels, int64_t h, int64_t w, int64_t p) {
    const int64_t gh = h / p, gw = w / p;
    if (tokens.shape.size() != 2 || tokens.shape[0] != gh * gw || tokens.shape[1] != channels * p * p)
        throw std::invalid_argument("unpatchify token shape " + numcore::shape_str(tokens.shape) +
                                    " inconsistent with " + std::to_string(channels) + "x" +
                                    std::to_string(h) + "x" + std::to_string(w) + " p=" +
                                    std::to_string(p));
    Tensor out({channels, h, w});
    for (int64_t gy = 0; gy < gh; ++gy)
        for (int64_t gx = 0; gx < gw; ++gx) {
            const int64_t tok = gy * gw + gx;
            for (int64_t ch = 0; ch < channels; ++ch)
                for (int64_t dy = 0; dy < p; ++dy)
                    for (int64_t dx = 0; dx < p; ++dx)
                        out.data[static_cast<size_t>(ch * h * w + (gy * p + dy) * w + (gx * p + dx))] =
                            tokens.data[static_cast<size_t>(tok * channels * p * p + ch * p * p +
                                                            dy * p + dx)];
        }
    return out;
}

Tensor fourier_embed(const BBox& box, int64_t frequencies) {
    if (!box.valid()) throw std::invalid_argument("fourier_embed requires a valid bbox");
    Tensor out({8 * frequencies});
    const double coords[4] = {box.x0, box.y0, box.x1, box.y1};
    constexpr double pi = 3.14159265358979323846;
    int64_t idx = 0;
    for (double v : coords) {
        double freq = pi;
        for (int64_t k = 0; k < frequencies; ++k) {
            out.data[static_cast<size_t>(idx++)] = std::sin(freq * v);
            out.data[static_cast<size_t>(idx++)] = std::cos(freq * v);
            freq *= 2.0;
        }
    }
    return out;
}

namespace {

void fill_sinusoid(double* dst, int64_t dim, double pos) {
    // Interleaved sin/cos with geometric frequencies, DiT-style.
    const int64_t half = dim / 2;
    for (int64_t k = 0; k < half; ++k) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(k) /
                                     static_cast<double>(half));
        dst[2 * k] = std::sin(pos * freq);
        dst[2 * k + 1] = std::cos(pos * freq);
    }
    if (dim % 2 != 0) dst[dim - 1] = 0.0;
}

}  // namespace

Tensor grid_position_embedding(int64_t grid_h, int64_t grid_w, int64_t dim) {
    Tensor out({grid_h * grid_w, dim});
    const int64_t half = dim / 2;
    std::vector<double> row_code(static_cast<size_t>(half)), col_code(static_cast<size_t>(dim - half));
    for (int64_t gy = 0; gy < grid_h; ++gy) {
        fill_sinusoid(row_code.data(), half, static_cast<double>(gy));
        for (int64_t gx = 0; gx < grid_w; ++gx) {
            fill_sinusoid(col_code.data(), dim - half, static_cast<double>(gx));
            double* dst = out.data.data() + (gy * grid_w + gx) * dim;
            std::copy(row_code.begin(), row_code.end(), dst);
            std::copy(col_code.begin(), col_code.end(), dst + half);
        }
    }
    return out;
}

Tensor sequence_position_embedding(int64_t length, int64_t dim) {
    Tensor out({length, dim});
    for (int64_t i = 0; i < length; ++i)
        fill_sinusoid(out.data.data() + i * dim, dim, static_cast<double>(i));
    return out;
}

Tensor timestep_embedding(double t_normalized, int64_t dim) {
    Tensor out({1, dim});
    // Scaled so the full schedule spans a wide phase range.
    fill_sinusoid(out.data.data(), dim, t_normalized * 1000.0);
    return out;
}

Graph::Id embed_caption(Graph& g, Graph::Id table, const std::vector<int64_t>& ids) {
    return g.lookup(table, ids);
}

Graph::Id layout_token(Graph& g, const LayoutTokenWeights& w, const std::vector<int64_t>& caption_ids,
                       const BBox& box, int64_t frequencies) {
    Tensor row_mask({static_cast<int64_t>(caption_ids.size())});
    bool any = false;
    for (size_t i = 0; i < caption_ids.size(); ++i) {
        row_mask.data[i] = caption_ids[i] != 0 ? 1.0 : 0.0;
        any = any || caption_ids[i] != 0;
    }
    if (!any) throw std::invalid_argument("layout entity needs a non-empty region caption");

    const Graph::Id embedded = embed_caption(g, w.table, caption_ids);
    const Graph::Id pooled = g.mean_rows_masked(embedded, std::move(row_mask));

    Tensor fourier = fourier_embed(box, frequencies);
    fourier.shape = {1, 8 * frequencies};
    const Graph::Id fourier_id = g.value(std::move(fourier));

    const Graph::Id joined = g.concat_cols(std::array{pooled, fourier_id});
    const Graph::Id hidden = g.gelu(g.bias_add(g.matmul(joined, w.w1), w.b1));
    return g.bias_add(g.matmul(hidden, w.w2), w.b2);
}

}  // namespace layoutlab::encoders
