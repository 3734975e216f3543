// Test-only dense re-implementation of the model forward pass: plain
// loops over raw buffers, no autodiff graph. Used as the independent
// oracle for the attention/block semantics.
#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "layoutlab/encoders.hpp"
#include "layoutlab/model.hpp"
#include "layoutlab/tensor.hpp"

namespace naive {

using layoutlab::encoders::TokenizedLayout;
using layoutlab::mmdit::ModelWeights;
using layoutlab::mmdit::Variant;
using layoutlab::numcore::Tensor;

using Mat = std::vector<std::vector<double>>;

inline Mat from_tensor(const Tensor& t) {
    Mat m(static_cast<size_t>(t.rows()), std::vector<double>(static_cast<size_t>(t.cols())));
    for (int64_t i = 0; i < t.rows(); ++i)
        for (int64_t j = 0; j < t.cols(); ++j) m[static_cast<size_t>(i)][static_cast<size_t>(j)] = t.at(i, j);
    return m;
}

inline Mat matmul(const Mat& a, const Mat& b) {
    Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
    for (size_t i = 0; i < a.size(); ++i)
        for (size_t k = 0; k < b.size(); ++k)
            for (size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
    return c;
}

inline Mat add(const Mat& a, const Mat& b) {
    Mat c = a;
    for (size_t i = 0; i < c.size(); ++i)
        for (size_t j = 0; j < c[i].size(); ++j) c[i][j] += b[i][j];
    return c;
}

inline Mat bias_add(const Mat& a, const std::vector<double>& b) {
    Mat c = a;
    for (auto& row : c)
        for (size_t j = 0; j < row.size(); ++j) row[j] += b[j];
    return c;
}

inline Mat layer_norm(const Mat& x, const std::vector<double>& gain,
                      const std::vector<double>& bias, double eps = 1e-6) {
    Mat y = x;
    for (auto& row : y) {
        double mean = 0.0;
        for (double v : row) mean += v;
        mean /= static_cast<double>(row.size());
        double var = 0.0;
        for (double v : row) var += (v - mean) * (v - mean);
        var /= static_cast<double>(row.size());
        const double inv = 1.0 / std::sqrt(var + eps);
        for (size_t j = 0; j < row.size(); ++j) row[j] = gain[j] * ((row[j] - mean) * inv) + bias[j];
    }
    return y;
}

inline Mat gelu(const Mat& x) {
    Mat y = x;
    for (auto& row : y)
        for (auto& v : row) v = 0.5 * v * (1.0 + std::erf(v * 0.70710678118654752440));
    return y;
}

// Multi-head scaled dot-product attention over already-concatenated
// q/k/v, softmax with max subtraction.
inline Mat attention(const Mat& q, const Mat& k, const Mat& v, int64_t heads) {
    const size_t d = q[0].size();
    const size_t dh = d / static_cast<size_t>(heads);
    Mat out(q.size(), std::vector<double>(d, 0.0));
    for (int64_t h = 0; h < heads; ++h) {
        const size_t off = static_cast<size_t>(h) * dh;
        for (size_t i = 0; i < q.size(); ++i) {
            std::vector<double> scores(k.size(), 0.0);
            for (size_t j = 0; j < k.size(); ++j) {
                double s = 0.0;
                for (size_t e = 0; e < dh; ++e) s += q[i][off + e] * k[j][off + e];
                scores[j] = s / std::sqrt(static_cast<double>(dh));
            }
            double mx = scores[0];
            for (double s : scores) mx = std::max(mx, s);
            double z = 0.0;
            for (auto& s : scores) {
                s = std::exp(s - mx);
                z += s;
            }
            for (auto& s : scores) s /= z;
            for (size_t j = 0; j < k.size(); ++j)
                for (size_t e = 0; e < dh; ++e) out[i][off + e] += scores[j] * v[j][off + e];
        }
    }
    return out;
}

struct NaiveCtx {
    const ModelWeights& w;

    Mat mat(const std::string& name) const { return from_tensor(w.at(name).value); }
    std::vector<double> vec(const std::string& name) const { return w.at(name).value.data; }
};

struct Mod {
    std::vector<double> s1, b1, g1, s2, b2, g2;
};

inline Mod adaln(const NaiveCtx& c, const Mat& t_emb, const std::string& prefix) {
    const Mat v = bias_add(matmul(t_emb, c.mat(prefix + ".ada.w")), c.vec(prefix + ".ada.b"));
    const size_t d = v[0].size() / 6;
    Mod m;
    auto slice = [&](size_t k) {
        return std::vector<double>(v[0].begin() + static_cast<std::ptrdiff_t>(k * d),
                                   v[0].begin() + static_cast<std::ptrdiff_t>((k + 1) * d));
    };
    m.s1 = slice(0);
    m.b1 = slice(1);
    m.g1 = slice(2);
    m.s2 = slice(3);
    m.b2 = slice(4);
    m.g2 = slice(5);
    return m;
}

inline Mat modulate(const Mat& x, const std::vector<double>& scale,
                    const std::vector<double>& shift) {
    Mat y = x;
    for (auto& row : y)
        for (size_t j = 0; j < row.size(); ++j) row[j] = row[j] * (1.0 + scale[j]) + shift[j];
    return y;
}

inline Mat gated_add(const Mat& x, const Mat& delta, const std::vector<double>& gate) {
    Mat y = x;
    for (size_t i = 0; i < y.size(); ++i)
        for (size_t j = 0; j < y[i].size(); ++j) y[i][j] += gate[j] * delta[i][j];
    return y;
}

struct Qkv {
    Mat q, k, v;
};

inline Qkv project(const NaiveCtx& c, const Mat& x, const std::string& prefix) {
    return Qkv{bias_add(matmul(x, c.mat(prefix + ".wq")), c.vec(prefix + ".bq")),
               bias_add(matmul(x, c.mat(prefix + ".wk")), c.vec(prefix + ".bk")),
               bias_add(matmul(x, c.mat(prefix + ".wv")), c.vec(prefix + ".bv"))};
}

inline Mat lora_out(const NaiveCtx& c, const Mat& x, const std::string& w_name,
                    const std::string& b_name, const std::string& lora_prefix) {
    Mat out = bias_add(matmul(x, c.mat(w_name)), c.vec(b_name));
    return add(out, matmul(matmul(x, c.mat(lora_prefix + ".lora_a")), c.mat(lora_prefix + ".lora_b")));
}

inline Mat concat(const Mat& a, const Mat& b) {
    Mat c = a;
    c.insert(c.end(), b.begin(), b.end());
    return c;
}

inline Mat rows(const Mat& x, size_t begin, size_t end) {
    return Mat(x.begin() + static_cast<std::ptrdiff_t>(begin),
               x.begin() + static_cast<std::ptrdiff_t>(end));
}

inline Mat mlp(const NaiveCtx& c, const Mat& x, const Mod& mod, const std::string& prefix,
               const std::string& lora_w1 = "") {
    const Mat yn = layer_norm(x, c.vec(prefix + ".ln2.g"), c.vec(prefix + ".ln2.b"));
    const Mat ym = modulate(yn, mod.s2, mod.b2);
    Mat h;
    if (lora_w1.empty())
        h = bias_add(matmul(ym, c.mat(prefix + ".mlp.w1")), c.vec(prefix + ".mlp.b1"));
    else
        h = lora_out(c, ym, prefix + ".mlp.w1", prefix + ".mlp.b1", lora_w1);
    const Mat o = bias_add(matmul(gelu(h), c.mat(prefix + ".mlp.w2")), c.vec(prefix + ".mlp.b2"));
    return gated_add(x, o, mod.g2);
}

// Full forward pass; mirrors the production semantics with plain loops.
inline Tensor forward(const ModelWeights& w, const Tensor& z_tokens,
                      const std::vector<int64_t>& caption_ids, const TokenizedLayout* layout,
                      double t_norm, bool layout_active) {
    namespace enc = layoutlab::encoders;
    const auto& cfg = w.config();
    NaiveCtx c{w};
    const Mat t_emb = from_tensor(enc::timestep_embedding(t_norm, cfg.width));

    Mat x_img = bias_add(matmul(from_tensor(z_tokens), c.mat("embed.patch.w")),
                         c.vec("embed.patch.b"));
    x_img = add(x_img, from_tensor(enc::grid_position_embedding(cfg.grid(), cfg.grid(), cfg.width)));
    const size_t tz = x_img.size();

    const bool has_text = !caption_ids.empty();
    Mat x_txt;
    if (has_text) {
        const Mat table = c.mat("embed.token_table");
        for (int64_t id : caption_ids) x_txt.push_back(table[static_cast<size_t>(id)]);
        x_txt = add(x_txt, from_tensor(enc::sequence_position_embedding(
                               static_cast<int64_t>(caption_ids.size()), cfg.width)));
    }

    const bool want_layout = w.variant() != Variant::Base && layout_active && layout &&
                             !layout->entities.empty();
    Mat x_lay;
    if (want_layout) {
        const Mat table = c.mat("embed.token_table");
        for (const auto& e : layout->entities) {
            std::vector<double> pooled(static_cast<size_t>(cfg.width), 0.0);
            double count = 0.0;
            for (int64_t id : e.caption_ids) {
                if (id == 0) continue;
                count += 1.0;
                for (size_t j = 0; j < pooled.size(); ++j) pooled[j] += table[static_cast<size_t>(id)][j];
            }
            for (auto& v : pooled) v /= count;
            const Tensor fourier = enc::fourier_embed(e.box, cfg.fourier);
            std::vector<double> joined = pooled;
            joined.insert(joined.end(), fourier.data.begin(), fourier.data.end());
            Mat jm{joined};
            const Mat h = gelu(bias_add(matmul(jm, c.mat("lenc.w1")), c.vec("lenc.b1")));
            const Mat token = bias_add(matmul(h, c.mat("lenc.w2")), c.vec("lenc.b2"));
            x_lay.push_back(token[0]);
        }
    }
    const Variant variant = want_layout ? w.variant() : Variant::Base;

    for (int64_t i = 0; i < cfg.blocks; ++i) {
        const std::string blk = "blk" + std::to_string(i);

        const Mod img_mod = adaln(c, t_emb, blk + ".img");
        const Mat img_norm = modulate(
            layer_norm(x_img, c.vec(blk + ".img.ln1.g"), c.vec(blk + ".img.ln1.b")), img_mod.s1,
            img_mod.b1);
        const Qkv img_qkv = project(c, img_norm, blk + ".img.attn");

        Mod txt_mod;
        Mat txt_norm;
        Qkv txt_qkv;
        if (has_text) {
            txt_mod = adaln(c, t_emb, blk + ".txt");
            txt_norm = modulate(
                layer_norm(x_txt, c.vec(blk + ".txt.ln1.g"), c.vec(blk + ".txt.ln1.b")), txt_mod.s1,
                txt_mod.b1);
            txt_qkv = project(c, txt_norm, blk + ".txt.attn");
        }

        std::string lay_prefix = blk + ".lay";
        Mod lay_mod;
        Qkv lay_qkv;
        if (variant == Variant::M3 || variant == Variant::Siam) {
            lay_mod = adaln(c, t_emb, lay_prefix);
            const Mat lay_norm = modulate(
                layer_norm(x_lay, c.vec(lay_prefix + ".ln1.g"), c.vec(lay_prefix + ".ln1.b")),
                lay_mod.s1, lay_mod.b1);
            lay_qkv = project(c, lay_norm, lay_prefix + ".attn");
        } else if (variant == Variant::SiamLora) {
            lay_prefix = blk + ".txt";
            lay_mod = has_text ? txt_mod : adaln(c, t_emb, lay_prefix);
            const Mat lay_norm = modulate(
                layer_norm(x_lay, c.vec(lay_prefix + ".ln1.g"), c.vec(lay_prefix + ".ln1.b")),
                lay_mod.s1, lay_mod.b1);
            lay_qkv = project(c, lay_norm, lay_prefix + ".attn");
        }

        Mat q = img_qkv.q, k = img_qkv.k, v = img_qkv.v;
        if (has_text) {
            q = concat(q, txt_qkv.q);
            k = concat(k, txt_qkv.k);
            v = concat(v, txt_qkv.v);
        }
        if (variant == Variant::M3) {
            q = concat(q, lay_qkv.q);
            k = concat(k, lay_qkv.k);
            v = concat(v, lay_qkv.v);
        }
        const Mat joint = attention(q, k, v, cfg.heads);

        size_t off = 0;
        const Mat o_img = bias_add(matmul(rows(joint, off, off + tz), c.mat(blk + ".img.attn.wo")),
                                   c.vec(blk + ".img.attn.bo"));
        off += tz;
        x_img = gated_add(x_img, o_img, img_mod.g1);
        if (has_text) {
            const Mat o_txt = bias_add(
                matmul(rows(joint, off, off + x_txt.size()), c.mat(blk + ".txt.attn.wo")),
                c.vec(blk + ".txt.attn.bo"));
            off += x_txt.size();
            x_txt = gated_add(x_txt, o_txt, txt_mod.g1);
        }
        if (variant == Variant::M3) {
            const Mat o_lay = bias_add(
                matmul(rows(joint, off, off + x_lay.size()), c.mat(lay_prefix + ".attn.wo")),
                c.vec(lay_prefix + ".attn.bo"));
            x_lay = gated_add(x_lay, o_lay, lay_mod.g1);
        }

        if (variant == Variant::Adapter) {
            const Mat k_l = bias_add(matmul(x_lay, c.mat(blk + ".adp.wk")), c.vec(blk + ".adp.bk"));
            const Mat v_l = bias_add(matmul(x_lay, c.mat(blk + ".adp.wv")), c.vec(blk + ".adp.bv"));
            const Mat cross = attention(img_qkv.q, k_l, v_l, cfg.heads);
            const Mat fused = bias_add(matmul(cross, c.mat(blk + ".adp.wo")), c.vec(blk + ".adp.bo"));
            x_img = add(x_img, fused);
        } else if (variant == Variant::Siam || variant == Variant::SiamLora) {
            Qkv prime;
            if (variant == Variant::Siam) {
                prime = project(c, img_norm, blk + ".prime");
            } else {
                prime.q = lora_out(c, img_norm, blk + ".img.attn.wq", blk + ".img.attn.bq",
                                   blk + ".prime.wq");
                prime.k = lora_out(c, img_norm, blk + ".img.attn.wk", blk + ".img.attn.bk",
                                   blk + ".prime.wk");
                prime.v = lora_out(c, img_norm, blk + ".img.attn.wv", blk + ".img.attn.bv",
                                   blk + ".prime.wv");
            }
            const Mat branch = attention(concat(prime.q, lay_qkv.q), concat(prime.k, lay_qkv.k),
                                         concat(prime.v, lay_qkv.v), cfg.heads);
            const Mat b_img = rows(branch, 0, tz);
            Mat delta;
            if (variant == Variant::Siam)
                delta = matmul(b_img, c.mat(blk + ".delta.w"));
            else
                delta = matmul(matmul(b_img, c.mat(blk + ".delta.lora_a")),
                               c.mat(blk + ".delta.lora_b"));
            x_img = add(x_img, delta);

            const Mat o_lay = bias_add(
                matmul(rows(branch, tz, branch.size()), c.mat(lay_prefix + ".attn.wo")),
                c.vec(lay_prefix + ".attn.bo"));
            x_lay = gated_add(x_lay, o_lay, lay_mod.g1);
        }

        x_img = mlp(c, x_img, img_mod, blk + ".img");
        if (has_text) x_txt = mlp(c, x_txt, txt_mod, blk + ".txt");
        if (variant == Variant::M3 || variant == Variant::Siam)
            x_lay = mlp(c, x_lay, lay_mod, blk + ".lay");
        else if (variant == Variant::SiamLora)
            x_lay = mlp(c, x_lay, lay_mod, blk + ".txt", blk + ".lay.mlp.w1");
    }

    const Mat head = bias_add(
        matmul(layer_norm(x_img, c.vec("final.ln.g"), c.vec("final.ln.b")), c.mat("final.w")),
        c.vec("final.b"));
    Tensor out({static_cast<int64_t>(head.size()), static_cast<int64_t>(head[0].size())});
    for (size_t i = 0; i < head.size(); ++i)
        for (size_t j = 0; j < head[i].size(); ++j)
            out.data[i * head[0].size() + j] = head[i][j];
    return out;
}

}  // namespace naive
