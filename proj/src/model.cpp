#include "layoutlab/model.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

#include <json.hpp>

namespace layoutlab::mmdit {

using nlohmann::json;

std::string variant_name(Variant v) {
    switch (v) {
        case Variant::Base: return "base";
        case Variant::Adapter: return "adapter";
        case Variant::M3: return "m3";
        case Variant::Siam: return "siam";
        case Variant::SiamLora: return "siam-lora";
    }
    throw std::logic_error("unreachable variant");
}

Variant variant_from_name(const std::string& name) {
    if (name == "base") return Variant::Base;
    if (name == "adapter") return Variant::Adapter;
    if (name == "m3") return Variant::M3;
    if (name == "siam") return Variant::Siam;
    if (name == "siam-lora" || name == "siamlora" || name == "lora") return Variant::SiamLora;
    throw std::invalid_argument("unknown variant '" + name +
                                "' (expected base|adapter|m3|siam|siam-lora)");
}

void ModelConfig::validate() const {
    if (width <= 0 || blocks <= 0 || heads <= 0) throw std::invalid_argument("bad model dimensions");
    if (width % heads != 0)
        throw std::invalid_argument("width " + std::to_string(width) + " not divisible by " +
                                    std::to_string(heads) + " heads");
    if (image_size % patch != 0)
        throw std::invalid_argument("patch " + std::to_string(patch) + " must divide image size " +
                                    std::to_string(image_size));
    if (vocab <= 0) throw std::invalid_argument("vocab size must be set");
    if (lora_rank < 1 || lora_rank > width)
        throw std::invalid_argument("lora rank " + std::to_string(lora_rank) +
                                    " out of range [1," + std::to_string(width) + "]");
}

std::string ModelConfig::to_json() const {
    json j{{"width", width},         {"blocks", blocks},
           {"heads", heads},         {"image_size", image_size},
           {"patch", patch},         {"caption_len", caption_len},
           {"region_len", region_len}, {"fourier", fourier},
           {"max_entities", max_entities}, {"vocab", vocab},
           {"lora_rank", lora_rank}};
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    const json j = json::parse(text);
    ModelConfig c;
    c.width = j.at("width").get<int64_t>();
    c.blocks = j.at("blocks").get<int64_t>();
    c.heads = j.at("heads").get<int64_t>();
    c.image_size = j.at("image_size").get<int64_t>();
    c.patch = j.at("patch").get<int64_t>();
    c.caption_len = j.at("caption_len").get<int64_t>();
    c.region_len = j.at("region_len").get<int64_t>();
    c.fourier = j.at("fourier").get<int64_t>();
    c.max_entities = j.at("max_entities").get<int64_t>();
    c.vocab = j.at("vocab").get<int64_t>();
    c.lora_rank = j.at("lora_rank").get<int64_t>();
    return c;
}

void ModelWeights::add(std::string name, Tensor value, bool layout_side) {
    if (index_.count(name)) throw std::logic_error("duplicate parameter " + name);
    index_.emplace(name, params_.size());
    params_.push_back(Param{std::move(name), std::move(value), layout_side});
}

const Param& ModelWeights::at(const std::string& name) const {
    return params_[index_of(name)];
}

Param& ModelWeights::at(const std::string& name) {
    return params_[index_of(name)];
}

size_t ModelWeights::index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return it->second;
}

int64_t ModelWeights::total_params() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
}

int64_t ModelWeights::layout_params() const {
    int64_t n = 0;
    for (const auto& p : params_)
        if (p.layout_side) n += p.value.numel();
    return n;
}

namespace {

constexpr double kInitStd = 0.02;

Tensor randn_mat(int64_t r, int64_t c, Rng& rng) { return Tensor::randn({r, c}, rng, kInitStd); }

}  // namespace

ModelWeights build_weights(const ModelConfig& cfg, Variant variant, Rng& rng,
                           const ModelWeights* base) {
    cfg.validate();
    const int64_t d = cfg.width;
    const int64_t hid = cfg.mlp_hidden();
    const int64_t r = cfg.lora_rank;
    ModelWeights w(cfg, variant);

    // Pretrained set first; values come from `base` when extending.
    auto theta = [&](const std::string& name, Tensor init) {
        if (base) {
            w.add(name, base->at(name).value, false);
        } else {
            w.add(name, std::move(init), false);
        }
    };
    auto prime = [&](const std::string& name, Tensor init) { w.add(name, std::move(init), true); };

    theta("embed.token_table", randn_mat(cfg.vocab, d, rng));
    theta("embed.patch.w", randn_mat(cfg.patch_dim(), d, rng));
    theta("embed.patch.b", Tensor::zeros({d}));

    auto modality_block = [&](const std::string& prefix, auto&& sink, bool zero_value_path,
                              bool zero_out_path, bool zero_ada) {
        sink(prefix + ".ada.w", zero_ada ? Tensor::zeros({d, 6 * d}) : randn_mat(d, 6 * d, rng));
        sink(prefix + ".ada.b", Tensor::zeros({6 * d}));
        sink(prefix + ".ln1.g", Tensor::full({d}, 1.0));
        sink(prefix + ".ln1.b", Tensor::zeros({d}));
        sink(prefix + ".ln2.g", Tensor::full({d}, 1.0));
        sink(prefix + ".ln2.b", Tensor::zeros({d}));
        sink(prefix + ".attn.wq", randn_mat(d, d, rng));
        sink(prefix + ".attn.bq", Tensor::zeros({d}));
        sink(prefix + ".attn.wk", randn_mat(d, d, rng));
        sink(prefix + ".attn.bk", Tensor::zeros({d}));
        sink(prefix + ".attn.wv", zero_value_path ? Tensor::zeros({d, d}) : randn_mat(d, d, rng));
        sink(prefix + ".attn.bv", Tensor::zeros({d}));
        sink(prefix + ".attn.wo", zero_out_path ? Tensor::zeros({d, d}) : randn_mat(d, d, rng));
        sink(prefix + ".attn.bo", Tensor::zeros({d}));
        sink(prefix + ".mlp.w1", randn_mat(d, hid, rng));
        sink(prefix + ".mlp.b1", Tensor::zeros({hid}));
        sink(prefix + ".mlp.w2", randn_mat(hid, d, rng));
        sink(prefix + ".mlp.b2", Tensor::zeros({d}));
    };

    for (int64_t i = 0; i < cfg.blocks; ++i) {
        const std::string blk = "blk" + std::to_string(i);
        for (const char* m : {"img", "txt"}) {
            // AdaLN projections start at zero so every sublayer opens gated
            // off; pretraining learns the modulation.
            modality_block(blk + "." + m, theta, false, false, /*zero_ada=*/true);
        }
    }
    theta("final.ln.g", Tensor::full({d}, 1.0));
    theta("final.ln.b", Tensor::zeros({d}));
    theta("final.w", randn_mat(d, cfg.patch_dim(), rng));
    theta("final.b", Tensor::zeros({cfg.patch_dim()}));

    if (variant == Variant::Base) return w;

    // Layout encoder, shared by every layout variant.
    prime("lenc.w1", randn_mat(cfg.layout_in_dim(), d, rng));
    prime("lenc.b1", Tensor::zeros({d}));
    prime("lenc.w2", randn_mat(d, d, rng));
    prime("lenc.b2", Tensor::zeros({d}));

    for (int64_t i = 0; i < cfg.blocks; ++i) {
        const std::string blk = "blk" + std::to_string(i);
        switch (variant) {
            case Variant::Adapter:
                prime(blk + ".adp.wk", randn_mat(d, d, rng));
                prime(blk + ".adp.bk", Tensor::zeros({d}));
                prime(blk + ".adp.wv", randn_mat(d, d, rng));
                prime(blk + ".adp.bv", Tensor::zeros({d}));
                prime(blk + ".adp.wo", Tensor::zeros({d, d}));
                prime(blk + ".adp.bo", Tensor::zeros({d}));
                break;
            case Variant::M3:
                // Value and output projections start at zero; query/key random
                // so the layout still draws attention mass from step one.
                modality_block(blk + ".lay", prime, /*zero_value_path=*/true, /*zero_out_path=*/true,
                               /*zero_ada=*/true);
                break;
            case Variant::Siam:
                modality_block(blk + ".lay", prime, /*zero_value_path=*/false,
                               /*zero_out_path=*/true, /*zero_ada=*/true);
                prime(blk + ".prime.wq", randn_mat(d, d, rng));
                prime(blk + ".prime.bq", Tensor::zeros({d}));
                prime(blk + ".prime.wk", randn_mat(d, d, rng));
                prime(blk + ".prime.bk", Tensor::zeros({d}));
                prime(blk + ".prime.wv", randn_mat(d, d, rng));
                prime(blk + ".prime.bv", Tensor::zeros({d}));
                prime(blk + ".delta.w", Tensor::zeros({d, d}));
                break;
            case Variant::SiamLora:
                // The image-layout branch rides on the frozen base weights;
                // only the low-rank pairs train. lora_b starts at zero so the
                // wrapped forward equals the unwrapped one.
                for (const char* t : {"wq", "wk", "wv"}) {
                    prime(blk + ".prime." + std::string(t) + ".lora_a", randn_mat(d, r, rng));
                    prime(blk + ".prime." + std::string(t) + ".lora_b", Tensor::zeros({r, d}));
                }
                prime(blk + ".delta.lora_a", randn_mat(d, r, rng));
                prime(blk + ".delta.lora_b", Tensor::zeros({r, d}));
                prime(blk + ".lay.mlp.w1.lora_a", randn_mat(d, r, rng));
                prime(blk + ".lay.mlp.w1.lora_b", Tensor::zeros({r, hid}));
                break;
            default:
                break;
        }
    }
    return w;
}

ModelWeights ModelWeights::init(const ModelConfig& cfg, Variant variant, Rng& rng) {
    return build_weights(cfg, variant, rng, nullptr);
}

ModelWeights ModelWeights::extend_base(const ModelWeights& base, Variant variant, Rng& rng) {
    if (base.variant() != Variant::Base)
        throw std::invalid_argument("extend_base requires a base-variant checkpoint");
    return build_weights(base.config(), variant, rng, &base);
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

namespace {

using Id = Graph::Id;

struct Ctx {
    Graph& g;
    const ModelWeights& w;
    std::vector<Id> ids;  // aligned with w.params()
    const ForwardOptions& opts;

    Id p(const std::string& name) const { return ids[w.index_of(name)]; }
};

struct Modulation {
    Id scale1, shift1, gate1, scale2, shift2, gate2;
};

Modulation adaln(Ctx& c, Id t_emb, const std::string& prefix) {
    Graph& g = c.g;
    const Id v = g.bias_add(g.matmul(t_emb, c.p(prefix + ".ada.w")), c.p(prefix + ".ada.b"));
    const int64_t d = c.w.config().width;
    const std::array<int64_t, 6> sizes{d, d, d, d, d, d};
    auto parts = g.split_cols(v, sizes);
    return Modulation{parts[0], parts[1], parts[2], parts[3], parts[4], parts[5]};
}

Id modulate(Graph& g, Id x_norm, Id scale, Id shift) {
    return g.bias_add(g.channel_scale(x_norm, g.add_const(scale, 1.0)), shift);
}

struct QKV {
    Id q, k, v;
    int64_t len;
};

QKV project_qkv(Ctx& c, Id x_mod, const std::string& prefix) {
    Graph& g = c.g;
    return QKV{g.bias_add(g.matmul(x_mod, c.p(prefix + ".wq")), c.p(prefix + ".bq")),
               g.bias_add(g.matmul(x_mod, c.p(prefix + ".wk")), c.p(prefix + ".bk")),
               g.bias_add(g.matmul(x_mod, c.p(prefix + ".wv")), c.p(prefix + ".bv")),
               c.g.val(x_mod).shape[0]};
}

// Base projection plus a low-rank delta.
Id lora_linear(Ctx& c, Id x, const std::string& w_name, const std::string& b_name,
               const std::string& lora_prefix) {
    Graph& g = c.g;
    Id out = g.matmul(x, c.p(w_name));
    if (!b_name.empty()) out = g.bias_add(out, c.p(b_name));
    const Id delta = g.matmul(g.matmul(x, c.p(lora_prefix + ".lora_a")), c.p(lora_prefix + ".lora_b"));
    return g.add(out, delta);
}

struct CaptureSpans {
    int64_t img_begin = 0, img_end = 0;
    int64_t txt_begin = -1, txt_end = -1;
    int64_t lay_begin = -1, lay_end = -1;
};

// Scaled dot-product attention over already-concatenated streams.
// Returns the [rows(q), d] output; post-softmax maps go to the capture
// sink when one is installed.
Id cross_attention(Ctx& c, Id q, Id k, Id v, int block, const CaptureSpans& spans) {
    Graph& g = c.g;
    const ModelConfig& cfg = c.w.config();
    const int64_t heads = cfg.heads;
    const int64_t dh = cfg.head_dim();
    const std::vector<int64_t> head_sizes(static_cast<size_t>(heads), dh);

    auto qh = g.split_cols(q, head_sizes);
    auto kh = g.split_cols(k, head_sizes);
    auto vh = g.split_cols(v, head_sizes);

    std::vector<Id> out_heads;
    out_heads.reserve(static_cast<size_t>(heads));
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int64_t h = 0; h < heads; ++h) {
        const Id scores = g.scale(g.matmul(qh[static_cast<size_t>(h)],
                                           g.transpose(kh[static_cast<size_t>(h)])),
                                  inv_sqrt);
        const Id probs = g.softmax_rows(scores);
        if (c.opts.capture) {
            AttnMap map;
            map.block = block;
            map.head = static_cast<int>(h);
            map.probs = g.val(probs);
            map.img_rows_begin = spans.img_begin;
            map.img_rows_end = spans.img_end;
            map.txt_cols_begin = spans.txt_begin;
            map.txt_cols_end = spans.txt_end;
            map.lay_cols_begin = spans.lay_begin;
            map.lay_cols_end = spans.lay_end;
            c.opts.capture->push_back(std::move(map));
        }
        out_heads.push_back(g.matmul(probs, vh[static_cast<size_t>(h)]));
    }
    return g.concat_cols(out_heads);
}

struct SublayerIn {
    Id x_norm_mod;  // modulated pre-norm input, reused by siamese branches
    Modulation mod;
};

SublayerIn pre_attention(Ctx& c, Id x, Id t_emb, const std::string& modality_prefix) {
    Graph& g = c.g;
    const Modulation mod = adaln(c, t_emb, modality_prefix);
    const Id xn = g.layer_norm(x, c.p(modality_prefix + ".ln1.g"), c.p(modality_prefix + ".ln1.b"));
    return SublayerIn{modulate(g, xn, mod.scale1, mod.shift1), mod};
}

Id mlp_sublayer(Ctx& c, Id x, const Modulation& mod, const std::string& modality_prefix,
                const std::string& lora_w1_prefix = "") {
    Graph& g = c.g;
    const Id yn = g.layer_norm(x, c.p(modality_prefix + ".ln2.g"), c.p(modality_prefix + ".ln2.b"));
    const Id ymod = modulate(g, yn, mod.scale2, mod.shift2);
    Id h;
    if (lora_w1_prefix.empty()) {
        h = g.bias_add(g.matmul(ymod, c.p(modality_prefix + ".mlp.w1")),
                       c.p(modality_prefix + ".mlp.b1"));
    } else {
        h = lora_linear(c, ymod, modality_prefix + ".mlp.w1", modality_prefix + ".mlp.b1",
                        lora_w1_prefix);
    }
    const Id o = g.bias_add(g.matmul(g.gelu(h), c.p(modality_prefix + ".mlp.w2")),
                            c.p(modality_prefix + ".mlp.b2"));
    return g.add(x, g.channel_scale(o, mod.gate2));
}

}  // namespace

ForwardResult forward_tokens(Graph& g, const ModelWeights& w, Phase phase, const Tensor& z_tokens,
                             const std::vector<int64_t>& caption_ids, const TokenizedLayout* layout,
                             double t_norm, const ForwardOptions& opts) {
    std::vector<Graph::Id> ids;
    ids.reserve(w.params().size());
    for (const auto& p : w.params()) {
        const bool trainable = phase == Phase::Pretrain  ? !p.layout_side
                               : phase == Phase::LayoutPhase ? p.layout_side
                                                             : false;
        ids.push_back(g.leaf(p.value, trainable));
    }
    return forward_with_params(g, w, std::move(ids), z_tokens, caption_ids, layout, t_norm, opts);
}

ForwardResult forward_with_params(Graph& g, const ModelWeights& w, std::vector<Graph::Id> param_ids,
                                  const Tensor& z_tokens, const std::vector<int64_t>& caption_ids,
                                  const TokenizedLayout* layout, double t_norm,
                                  const ForwardOptions& opts) {
    const ModelConfig& cfg = w.config();
    if (z_tokens.shape != numcore::Shape{cfg.image_tokens(), cfg.patch_dim()})
        throw std::invalid_argument("image tokens must be " +
                                    numcore::shape_str({cfg.image_tokens(), cfg.patch_dim()}) +
                                    ", got " + numcore::shape_str(z_tokens.shape));
    if (param_ids.size() != w.params().size())
        throw std::invalid_argument("expected " + std::to_string(w.params().size()) +
                                    " parameter leaves, got " + std::to_string(param_ids.size()));

    Ctx c{g, w, std::move(param_ids), opts};

    const Id t_emb = g.value(encoders::timestep_embedding(t_norm, cfg.width));

    // Token streams.
    Id x_img = g.bias_add(g.matmul(g.value(z_tokens), c.p("embed.patch.w")), c.p("embed.patch.b"));
    x_img = g.add(x_img, g.value(encoders::grid_position_embedding(cfg.grid(), cfg.grid(), cfg.width)));
    const int64_t tz = cfg.image_tokens();

    const bool has_text = !caption_ids.empty();
    Id x_txt = -1;
    if (has_text) {
        x_txt = g.lookup(c.p("embed.token_table"), caption_ids);
        x_txt = g.add(x_txt, g.value(encoders::sequence_position_embedding(
                                 static_cast<int64_t>(caption_ids.size()), cfg.width)));
    }
    const int64_t tp = has_text ? static_cast<int64_t>(caption_ids.size()) : 0;

    const bool want_layout = w.variant() != Variant::Base && opts.layout_active && layout != nullptr &&
                             !layout->entities.empty();
    Id x_lay = -1;
    int64_t tn = 0;
    if (want_layout) {
        if (static_cast<int64_t>(layout->entities.size()) > cfg.max_entities)
            throw std::invalid_argument("layout exceeds max entities");
        encoders::LayoutTokenWeights lw{c.p("embed.token_table"), c.p("lenc.w1"), c.p("lenc.b1"),
                                        c.p("lenc.w2"), c.p("lenc.b2")};
        std::vector<Id> tokens;
        for (const auto& e : layout->entities)
            tokens.push_back(encoders::layout_token(g, lw, e.caption_ids, e.box, cfg.fourier));
        x_lay = tokens.size() == 1 ? tokens[0] : g.concat_rows(tokens);
        tn = static_cast<int64_t>(layout->entities.size());
        if (opts.layout_invocations) ++*opts.layout_invocations;
    }

    const Variant variant = want_layout ? w.variant() : Variant::Base;

    for (int64_t i = 0; i < cfg.blocks; ++i) {
        const std::string blk = "blk" + std::to_string(i);
        const int block = static_cast<int>(i);

        const SublayerIn img_in = pre_attention(c, x_img, t_emb, blk + ".img");
        const QKV img_qkv = project_qkv(c, img_in.x_norm_mod, blk + ".img.attn");

        SublayerIn txt_in{};
        QKV txt_qkv{};
        if (has_text) {
            txt_in = pre_attention(c, x_txt, t_emb, blk + ".txt");
            txt_qkv = project_qkv(c, txt_in.x_norm_mod, blk + ".txt.attn");
        }

        // Layout-side pre-attention state (m3/siam family).
        SublayerIn lay_in{};
        QKV lay_qkv{};
        std::string lay_prefix = blk + ".lay";
        if (variant == Variant::M3 || variant == Variant::Siam) {
            lay_in = pre_attention(c, x_lay, t_emb, lay_prefix);
            lay_qkv = project_qkv(c, lay_in.x_norm_mod, lay_prefix + ".attn");
        } else if (variant == Variant::SiamLora) {
            // Frozen text machinery processes the layout stream; the text
            // modulation vectors apply to it unchanged.
            lay_prefix = blk + ".txt";
            const Modulation txt_mod = has_text ? txt_in.mod : adaln(c, t_emb, lay_prefix);
            const Id ln = g.layer_norm(x_lay, c.p(lay_prefix + ".ln1.g"), c.p(lay_prefix + ".ln1.b"));
            lay_in = SublayerIn{modulate(g, ln, txt_mod.scale1, txt_mod.shift1), txt_mod};
            lay_qkv = project_qkv(c, lay_in.x_norm_mod, lay_prefix + ".attn");
        }

        // --- joint attention of the main branch ---
        std::vector<Id> qs{img_qkv.q}, ks{img_qkv.k}, vs{img_qkv.v};
        std::vector<int64_t> lens{tz};
        CaptureSpans spans;
        spans.img_end = tz;
        if (has_text) {
            qs.push_back(txt_qkv.q);
            ks.push_back(txt_qkv.k);
            vs.push_back(txt_qkv.v);
            lens.push_back(tp);
            spans.txt_begin = tz;
            spans.txt_end = tz + tp;
        }
        if (variant == Variant::M3) {
            qs.push_back(lay_qkv.q);
            ks.push_back(lay_qkv.k);
            vs.push_back(lay_qkv.v);
            lens.push_back(tn);
            spans.lay_begin = tz + tp;
            spans.lay_end = tz + tp + tn;
        }
        const Id joint_q = qs.size() == 1 ? qs[0] : g.concat_rows(qs);
        const Id joint_k = ks.size() == 1 ? ks[0] : g.concat_rows(ks);
        const Id joint_v = vs.size() == 1 ? vs[0] : g.concat_rows(vs);
        const Id joint_out = cross_attention(c, joint_q, joint_k, joint_v, block, spans);
        std::vector<Id> split =
            lens.size() == 1 ? std::vector<Id>{joint_out} : g.split_rows(joint_out, lens);

        size_t part = 0;
        Id o_img =
            g.bias_add(g.matmul(split[part++], c.p(blk + ".img.attn.wo")), c.p(blk + ".img.attn.bo"));
        x_img = g.add(x_img, g.channel_scale(o_img, img_in.mod.gate1));
        if (has_text) {
            Id o_txt = g.bias_add(g.matmul(split[part++], c.p(blk + ".txt.attn.wo")),
                                  c.p(blk + ".txt.attn.bo"));
            x_txt = g.add(x_txt, g.channel_scale(o_txt, txt_in.mod.gate1));
        }
        if (variant == Variant::M3) {
            Id o_lay = g.bias_add(g.matmul(split[part++], c.p(lay_prefix + ".attn.wo")),
                                  c.p(lay_prefix + ".attn.bo"));
            x_lay = g.add(x_lay, g.channel_scale(o_lay, lay_in.mod.gate1));
        }

        // --- variant-specific layout paths ---
        if (variant == Variant::Adapter) {
            // Image-to-layout cross attention reusing the joint queries.
            const Id k_l = g.bias_add(g.matmul(x_lay, c.p(blk + ".adp.wk")), c.p(blk + ".adp.bk"));
            const Id v_l = g.bias_add(g.matmul(x_lay, c.p(blk + ".adp.wv")), c.p(blk + ".adp.bv"));
            CaptureSpans cross_spans;
            cross_spans.img_end = tz;
            cross_spans.lay_begin = 0;
            cross_spans.lay_end = tn;
            const Id cross = cross_attention(c, img_qkv.q, k_l, v_l, block, cross_spans);
            const Id fused =
                g.bias_add(g.matmul(cross, c.p(blk + ".adp.wo")), c.p(blk + ".adp.bo"));
            x_img = g.add(x_img, fused);
        } else if (variant == Variant::Siam || variant == Variant::SiamLora) {
            // Siamese image-layout branch on the same modulated input.
            QKV prime;
            if (variant == Variant::Siam) {
                prime = project_qkv(c, img_in.x_norm_mod, blk + ".prime");
            } else {
                prime = QKV{lora_linear(c, img_in.x_norm_mod, blk + ".img.attn.wq",
                                        blk + ".img.attn.bq", blk + ".prime.wq"),
                            lora_linear(c, img_in.x_norm_mod, blk + ".img.attn.wk",
                                        blk + ".img.attn.bk", blk + ".prime.wk"),
                            lora_linear(c, img_in.x_norm_mod, blk + ".img.attn.wv",
                                        blk + ".img.attn.bv", blk + ".prime.wv"),
                            tz};
            }
            const Id branch_q = g.concat_rows(std::array{prime.q, lay_qkv.q});
            const Id branch_k = g.concat_rows(std::array{prime.k, lay_qkv.k});
            const Id branch_v = g.concat_rows(std::array{prime.v, lay_qkv.v});
            CaptureSpans branch_spans;
            branch_spans.img_end = tz;
            branch_spans.lay_begin = tz;
            branch_spans.lay_end = tz + tn;
            const Id branch_out = cross_attention(c, branch_q, branch_k, branch_v, block, branch_spans);
            auto branch_split = g.split_rows(branch_out, std::array<int64_t, 2>{tz, tn});

            Id delta;
            if (variant == Variant::Siam) {
                delta = g.matmul(branch_split[0], c.p(blk + ".delta.w"));
            } else {
                delta = g.matmul(g.matmul(branch_split[0], c.p(blk + ".delta.lora_a")),
                                 c.p(blk + ".delta.lora_b"));
            }
            x_img = g.add(x_img, delta);

            const Id o_lay = g.bias_add(g.matmul(branch_split[1], c.p(lay_prefix + ".attn.wo")),
                                        c.p(lay_prefix + ".attn.bo"));
            x_lay = g.add(x_lay, g.channel_scale(o_lay, lay_in.mod.gate1));
        }

        // --- MLPs ---
        x_img = mlp_sublayer(c, x_img, img_in.mod, blk + ".img");
        if (has_text) x_txt = mlp_sublayer(c, x_txt, txt_in.mod, blk + ".txt");
        if (variant == Variant::M3 || variant == Variant::Siam) {
            x_lay = mlp_sublayer(c, x_lay, lay_in.mod, blk + ".lay");
        } else if (variant == Variant::SiamLora) {
            x_lay = mlp_sublayer(c, x_lay, lay_in.mod, blk + ".txt", blk + ".lay.mlp.w1");
        }
    }

    const Id head_in = g.layer_norm(x_img, c.p("final.ln.g"), c.p("final.ln.b"));
    const Id pred = g.bias_add(g.matmul(head_in, c.p("final.w")), c.p("final.b"));
    return ForwardResult{pred, std::move(c.ids)};
}

Tensor predict_noise(const ModelWeights& w, const Tensor& z_pixels,
                     const std::vector<int64_t>& caption_ids, const TokenizedLayout* layout,
                     double t_norm, const ForwardOptions& opts) {
    Graph g;
    const Tensor tokens = encoders::patchify(z_pixels, w.config().patch);
    const ForwardResult r =
        forward_tokens(g, w, Phase::Inference, tokens, caption_ids, layout, t_norm, opts);
    return encoders::unpatchify(g.val(r.prediction), 3, w.config().image_size, w.config().image_size,
                                w.config().patch);
}

}  // namespace layoutlab::mmdit
