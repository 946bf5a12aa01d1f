#include "efft/vit.hpp"

#include <cmath>
#include <string>

namespace efft {

void ViTConfig::validate() const {
    if (d < 1 || layers < 1 || heads < 1 || image < 1 || patch < 1 || classes < 2 || channels < 1)
        throw ConfigError("vit config: dimensions must be positive (classes >= 2)");
    if (d % heads != 0)
        throw ConfigError("vit config: d=" + std::to_string(d) + " not divisible by heads=" +
                          std::to_string(heads));
    if (image % patch != 0)
        throw ConfigError("vit config: image=" + std::to_string(image) +
                          " not divisible by patch=" + std::to_string(patch));
}

TuningMask TuningMask::all(int n_layers) {
    TuningMask m;
    for (int i = 0; i < n_layers; ++i) m.layers.insert(i);
    m.mhsa = true;
    m.ffn = true;
    return m;
}

bool TuningMask::applies(int layer, WeightRole role) const {
    if (!layers.contains(layer)) return false;
    return is_mhsa_role(role) ? mhsa : ffn;
}

std::string TuningMask::describe() const {
    if (empty()) return "none";
    std::string out;
    for (int l : layers) {
        if (!out.empty()) out += '+';
        out += std::to_string(l);
    }
    out += ':';
    if (mhsa && ffn)
        out += "mhsa+ffn";
    else
        out += mhsa ? "mhsa" : "ffn";
    return out;
}

ViTModel build_vit(const ViTConfig& cfg, Rng& rng) {
    cfg.validate();
    constexpr double kInitStd = 0.02;
    ViTModel m;
    m.cfg = cfg;
    m.patch_embed = randn({cfg.patch_dim(), cfg.d}, kInitStd, rng);
    m.cls_token = randn({1, cfg.d}, kInitStd, rng);
    m.pos_embed = randn({cfg.seq_len(), cfg.d}, kInitStd, rng);
    for (int l = 0; l < cfg.layers; ++l) {
        LayerWeights w;
        w.w_q = randn({cfg.d, cfg.d}, kInitStd, rng);
        w.w_k = randn({cfg.d, cfg.d}, kInitStd, rng);
        w.w_v = randn({cfg.d, cfg.d}, kInitStd, rng);
        w.w_o = randn({cfg.d, cfg.d}, kInitStd, rng);
        w.w_ffn1 = randn({cfg.d, cfg.d_f()}, kInitStd, rng);
        w.w_ffn2 = randn({cfg.d_f(), cfg.d}, kInitStd, rng);
        w.ln1_gain = Tensor({1, cfg.d});
        w.ln1_bias = Tensor({1, cfg.d});
        w.ln2_gain = Tensor({1, cfg.d});
        w.ln2_bias = Tensor({1, cfg.d});
        for (int j = 0; j < cfg.d; ++j) {
            w.ln1_gain(0, j) = 1.0;
            w.ln2_gain(0, j) = 1.0;
        }
        m.layers.push_back(std::move(w));
    }
    m.head_w = randn({cfg.d, cfg.classes}, kInitStd, rng);
    m.head_b = Tensor({1, cfg.classes});
    return m;
}

Tensor patchify(const Tensor& image, int patch) {
    if (image.rank() != 2 && image.rank() != 3)
        throw ShapeError("patchify: expected an [H, W] or [H, W, C] image");
    const int h = image.dim(0), w = image.dim(1);
    const int c = image.rank() == 3 ? image.dim(2) : 1;
    if (patch < 1 || h % patch != 0 || w % patch != 0)
        throw ShapeError("patchify: image dims must be divisible by patch size");
    const int gh = h / patch, gw = w / patch;
    Tensor out({gh * gw, patch * patch * c});
    for (int pr = 0; pr < gh; ++pr) {
        for (int pc = 0; pc < gw; ++pc) {
            const int row = pr * gw + pc;
            int idx = 0;
            for (int r = 0; r < patch; ++r)
                for (int col = 0; col < patch; ++col)
                    for (int ch = 0; ch < c; ++ch) {
                        const std::size_t src =
                            (static_cast<std::size_t>(pr * patch + r) * w + (pc * patch + col)) *
                                c +
                            ch;
                        out(row, idx++) = image[src];
                    }
        }
    }
    return out;
}

std::size_t backbone_param_count(const ViTModel& m) {
    std::size_t n = m.patch_embed.size() + m.cls_token.size() + m.pos_embed.size();
    for (const LayerWeights& w : m.layers)
        n += w.w_q.size() + w.w_k.size() + w.w_v.size() + w.w_o.size() + w.w_ffn1.size() +
             w.w_ffn2.size() + w.ln1_gain.size() + w.ln1_bias.size() + w.ln2_gain.size() +
             w.ln2_bias.size();
    return n;
}

std::size_t head_param_count(const ViTModel& m) {
    return m.head_w.size() + m.head_b.size();
}

namespace {

void hash_tensor(std::uint64_t& h, const Tensor& t) {
    for (std::size_t i = 0; i < t.size(); ++i) {
        std::uint64_t bits;
        static_assert(sizeof(double) == sizeof(std::uint64_t));
        const double v = t[i];
        __builtin_memcpy(&bits, &v, sizeof(bits));
        for (int b = 0; b < 8; ++b) {
            h ^= (bits >> (8 * b)) & 0xFF;
            h *= 0x100000001B3ULL; // FNV-1a prime
        }
    }
}

} // namespace

std::uint64_t backbone_hash(const ViTModel& m) {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    hash_tensor(h, m.patch_embed);
    hash_tensor(h, m.cls_token);
    hash_tensor(h, m.pos_embed);
    for (const LayerWeights& w : m.layers) {
        hash_tensor(h, w.w_q);
        hash_tensor(h, w.w_k);
        hash_tensor(h, w.w_v);
        hash_tensor(h, w.w_o);
        hash_tensor(h, w.w_ffn1);
        hash_tensor(h, w.w_ffn2);
        hash_tensor(h, w.ln1_gain);
        hash_tensor(h, w.ln1_bias);
        hash_tensor(h, w.ln2_gain);
        hash_tensor(h, w.ln2_bias);
    }
    return h;
}

ModelBinding bind_model(Tape& tape, const ViTModel& m, bool head_trainable) {
    ModelBinding b;
    b.patch_embed = tape.leaf(m.patch_embed);
    b.cls_token = tape.leaf(m.cls_token);
    b.pos_embed = tape.leaf(m.pos_embed);
    for (const LayerWeights& w : m.layers) {
        ModelBinding::Layer l;
        l.q = tape.leaf(w.w_q);
        l.k = tape.leaf(w.w_k);
        l.v = tape.leaf(w.w_v);
        l.o = tape.leaf(w.w_o);
        l.ffn1 = tape.leaf(w.w_ffn1);
        l.ffn2 = tape.leaf(w.w_ffn2);
        l.ln1_gain = tape.leaf(w.ln1_gain);
        l.ln1_bias = tape.leaf(w.ln1_bias);
        l.ln2_gain = tape.leaf(w.ln2_gain);
        l.ln2_bias = tape.leaf(w.ln2_bias);
        b.layers.push_back(l);
    }
    b.head_w = tape.leaf(m.head_w, head_trainable);
    b.head_b = tape.leaf(m.head_b, head_trainable);
    return b;
}

namespace {

/// X*W0 plus the factor delta when the mask selects this (layer, role).
int linear_with_delta(Tape& tape, int x, int w, const FactorBinding* fb, const TuningMask& mask,
                      int layer, WeightRole role) {
    const int base = tape.matmul(x, w);
    if (fb && mask.applies(layer, role) && binding_has(*fb, role, layer))
        return tape.add(base, apply_delta_node(tape, *fb, x, role, layer));
    return base;
}

} // namespace

int vit_forward(Tape& tape, const ViTModel& m, const ModelBinding& mb, const Tensor& batch,
                const FactorBinding* factors, const TuningMask& mask) {
    const ViTConfig& cfg = m.cfg;
    if (batch.rank() != 3 || batch.dim(1) != cfg.n_patches() || batch.dim(2) != cfg.patch_dim())
        throw ShapeError("vit_forward: batch must be [B, n_patches, patch_dim]");
    if (factors && factors->d != cfg.d)
        throw ConfigError("vit_forward: factor dimension does not match the model");
    const int b_size = batch.dim(0);
    const int n = cfg.n_patches();
    const int dh = cfg.d_head();
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    const int x_flat = tape.leaf(batch.reshaped({b_size * n, cfg.patch_dim()}));
    const int embedded = tape.matmul(x_flat, mb.patch_embed); // (B*n) x d

    std::vector<int> cls_rows;
    for (int s = 0; s < b_size; ++s) {
        int x = tape.concat_rows({mb.cls_token, tape.slice_rows(embedded, s * n, n)});
        x = tape.add(x, mb.pos_embed); // seq x d
        for (int l = 0; l < cfg.layers; ++l) {
            const ModelBinding::Layer& lw = mb.layers[l];
            const int h1 = tape.layer_norm_rows(x, lw.ln1_gain, lw.ln1_bias);
            const int q = linear_with_delta(tape, h1, lw.q, factors, mask, l, WeightRole::Q);
            const int k = linear_with_delta(tape, h1, lw.k, factors, mask, l, WeightRole::K);
            const int v = linear_with_delta(tape, h1, lw.v, factors, mask, l, WeightRole::VProj);
            const int qt = tape.transpose(q);
            const int kt = tape.transpose(k);
            const int vt = tape.transpose(v);
            std::vector<int> heads_t;
            for (int h = 0; h < cfg.heads; ++h) {
                const int qh = tape.transpose(tape.slice_rows(qt, h * dh, dh));
                const int kht = tape.slice_rows(kt, h * dh, dh); // dh x seq = K_h^T
                const int vh = tape.transpose(tape.slice_rows(vt, h * dh, dh));
                const int scores = tape.scale(tape.matmul(qh, kht), att_scale);
                const int attn = tape.softmax_rows(scores);
                heads_t.push_back(tape.transpose(tape.matmul(attn, vh)));
            }
            const int concat = tape.transpose(tape.concat_rows(heads_t)); // seq x d
            const int o = linear_with_delta(tape, concat, lw.o, factors, mask, l, WeightRole::O);
            x = tape.add(x, o);

            const int h2 = tape.layer_norm_rows(x, lw.ln2_gain, lw.ln2_bias);
            const int f1 = linear_with_delta(tape, h2, lw.ffn1, factors, mask, l, WeightRole::Ffn1);
            const int f2 =
                linear_with_delta(tape, tape.gelu(f1), lw.ffn2, factors, mask, l, WeightRole::Ffn2);
            x = tape.add(x, f2);
        }
        cls_rows.push_back(tape.slice_rows(x, 0, 1));
    }

    const int cls_all = (b_size == 1) ? cls_rows[0] : tape.concat_rows(cls_rows); // B x d
    // Bias broadcast over rows as ones * bias; keeps the bias a plain leaf.
    Tensor ones({b_size, 1});
    for (int i = 0; i < b_size; ++i) ones(i, 0) = 1.0;
    const int bias_rows = tape.matmul(tape.leaf(std::move(ones)), mb.head_b);
    return tape.add(tape.matmul(cls_all, mb.head_w), bias_rows);
}

Tensor vit_logits(const ViTModel& m, const Tensor& batch, const std::optional<Factors>& factors,
                  const TuningMask& mask) {
    Tape tape;
    const ModelBinding mb = bind_model(tape, m, false);
    if (factors) {
        const FactorBinding fb = bind_factors(tape, *factors, false);
        return tape.value(vit_forward(tape, m, mb, batch, &fb, mask));
    }
    return tape.value(vit_forward(tape, m, mb, batch, nullptr, mask));
}

TrainableSet trainable_params(ViTModel& m, const ModelBinding& mb, std::optional<Factors>& factors,
                              const FactorBinding* fb) {
    TrainableSet t;
    t.params.push_back({"head.weight", &m.head_w, true});
    t.params.push_back({"head.bias", &m.head_b, false});
    t.nodes.push_back(mb.head_w);
    t.nodes.push_back(mb.head_b);
    if (factors && fb) {
        std::vector<ParamRef> fp = factor_params(*factors);
        if (fp.size() != fb->param_nodes.size())
            throw ContractError("trainable_params: binding does not match the factor set");
        for (std::size_t i = 0; i < fp.size(); ++i) {
            t.params.push_back(fp[i]);
            t.nodes.push_back(fb->param_nodes[i]);
        }
    }
    return t;
}

} // namespace efft
