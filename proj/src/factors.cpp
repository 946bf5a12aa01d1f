#include "efft/factors.hpp"

#include <algorithm>
#include <cmath>

namespace efft {

namespace {

void check_dims(int d, int r1, int r2) {
    if (d < 1 || r1 < 1 || r2 < 1) throw ShapeError("factor dims must be positive");
}

/// Slot i of a [k, r1, r2] core as an r1 x r2 matrix (contiguous copy).
Tensor core_slot(const Tensor& sigma, int slot) {
    const int r1 = sigma.dim(1), r2 = sigma.dim(2);
    Tensor out({r1, r2});
    const std::size_t off = static_cast<std::size_t>(slot) * r1 * r2;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = sigma[off + i];
    return out;
}

/// s * (U * Sigma_slot) * V^T for a given row block of U.
Tensor slot_matrix(const Tensor& u_block, const Tensor& sigma_slot, const Tensor& v, double s) {
    return scale(matmul(matmul(u_block, sigma_slot), transpose(v)), s);
}

int role_slot(WeightRole role) { return static_cast<int>(role); }

} // namespace

bool is_mhsa_role(WeightRole role) {
    return role == WeightRole::Q || role == WeightRole::K || role == WeightRole::VProj ||
           role == WeightRole::O;
}

const char* role_name(WeightRole role) {
    switch (role) {
    case WeightRole::Q: return "q";
    case WeightRole::K: return "k";
    case WeightRole::VProj: return "v";
    case WeightRole::O: return "o";
    case WeightRole::Ffn1: return "ffn1";
    case WeightRole::Ffn2: return "ffn2";
    }
    throw ContractError("unknown weight role");
}

std::optional<WeightRole> role_from_name(const std::string& name) {
    for (WeightRole r : {WeightRole::Q, WeightRole::K, WeightRole::VProj, WeightRole::O,
                         WeightRole::Ffn1, WeightRole::Ffn2})
        if (name == role_name(r)) return r;
    return std::nullopt;
}

MethodKind kind_of(const Factors& f) {
    return static_cast<MethodKind>(f.index());
}

const char* kind_name(MethodKind k) {
    switch (k) {
    case MethodKind::Efft1: return "efft1";
    case MethodKind::Efft2: return "efft2";
    case MethodKind::Lora: return "lora";
    case MethodKind::FactTt: return "fact_tt";
    }
    throw ContractError("unknown method kind");
}

std::optional<MethodKind> kind_from_name(const std::string& name) {
    if (name == "efft1") return MethodKind::Efft1;
    if (name == "efft2") return MethodKind::Efft2;
    if (name == "lora") return MethodKind::Lora;
    if (name == "fact_tt") return MethodKind::FactTt;
    return std::nullopt;
}

Efft1Factors init_efft1(int d, int r1, int r2, double s, double sigma_std, Rng& rng) {
    check_dims(d, r1, r2);
    if (s <= 0) throw ContractError("init_efft1: scale must be positive");
    Efft1Factors f;
    f.d = d;
    f.r1 = r1;
    f.r2 = r2;
    f.s = s;
    f.sigma = randn({3, r1, r2}, sigma_std, rng);
    f.u = randn({4 * d, r1}, sigma_std, rng);
    f.v = Tensor({d, r2}); // zeroed factor: the delta starts at zero
    return f;
}

Efft2Factors init_efft2(int d, int r1, int r2, double s1, double s2, double sigma_std, Rng& rng) {
    check_dims(d, r1, r2);
    if (s1 <= 0 || s2 <= 0) throw ContractError("init_efft2: scales must be positive");
    Efft2Factors f;
    f.d = d;
    f.r1 = r1;
    f.r2 = r2;
    f.s1 = s1;
    f.s2 = s2;
    f.sigma1 = randn({4, r1, r2}, sigma_std, rng);
    f.u1 = randn({d, r1}, sigma_std, rng);
    f.v1 = Tensor({d, r2});
    f.sigma2 = randn({2, r1, r2}, sigma_std, rng);
    f.u2 = randn({4 * d, r1}, sigma_std, rng);
    f.v2 = Tensor({d, r2});
    return f;
}

LoraFactors init_lora(int d, int layers, int r, double s, double sigma_std, Rng& rng,
                      const std::vector<WeightRole>& roles) {
    check_dims(d, r, r);
    if (layers < 1) throw ShapeError("init_lora: layer count must be positive");
    LoraFactors f;
    f.d = d;
    f.r = r;
    f.layers = layers;
    f.s = s;
    for (int l = 0; l < layers; ++l) {
        for (WeightRole role : roles) {
            const int d_in = (role == WeightRole::Ffn2) ? 4 * d : d;
            const int d_out = (role == WeightRole::Ffn1) ? 4 * d : d;
            LoraEntry e;
            e.layer = l;
            e.role = role;
            e.w_down = randn({d_in, r}, sigma_std, rng);
            e.w_up = Tensor({r, d_out}); // zeroed
            f.entries.push_back(std::move(e));
        }
    }
    return f;
}

FactTtFactors init_fact_tt(int d, int layers, int r1, int r2, double s, double sigma_std,
                           Rng& rng) {
    check_dims(d, r1, r2);
    if (layers < 1) throw ShapeError("init_fact_tt: layer count must be positive");
    FactTtFactors f;
    f.d = d;
    f.layers = layers;
    f.r1 = r1;
    f.r2 = r2;
    f.s = s;
    f.sigma = randn({12 * layers, r1, r2}, sigma_std, rng);
    f.u = randn({d, r1}, sigma_std, rng);
    f.v = Tensor({d, r2});
    return f;
}

Tensor materialize_efft1(const Efft1Factors& f) {
    Tensor out({3, 4 * f.d, f.d});
    for (int slot = 0; slot < 3; ++slot) {
        Tensor m = slot_matrix(f.u, core_slot(f.sigma, slot), f.v, f.s);
        const std::size_t off = static_cast<std::size_t>(slot) * m.size();
        for (std::size_t i = 0; i < m.size(); ++i) out[off + i] = m[i];
    }
    return out;
}

std::pair<Tensor, Tensor> materialize_efft2(const Efft2Factors& f) {
    Tensor d1({4, f.d, f.d});
    for (int slot = 0; slot < 4; ++slot) {
        Tensor m = slot_matrix(f.u1, core_slot(f.sigma1, slot), f.v1, f.s1);
        const std::size_t off = static_cast<std::size_t>(slot) * m.size();
        for (std::size_t i = 0; i < m.size(); ++i) d1[off + i] = m[i];
    }
    Tensor d2({2, 4 * f.d, f.d});
    for (int slot = 0; slot < 2; ++slot) {
        Tensor m = slot_matrix(f.u2, core_slot(f.sigma2, slot), f.v2, f.s2);
        const std::size_t off = static_cast<std::size_t>(slot) * m.size();
        for (std::size_t i = 0; i < m.size(); ++i) d2[off + i] = m[i];
    }
    return {std::move(d1), std::move(d2)};
}

Tensor materialize_fact_tt_slot(const FactTtFactors& f, int slot) {
    if (slot < 0 || slot >= 12 * f.layers)
        throw ContractError("materialize_fact_tt_slot: slot out of range");
    return slot_matrix(f.u, core_slot(f.sigma, slot), f.v, f.s);
}

namespace {

Tensor delta_efft1(const Efft1Factors& f, WeightRole role) {
    switch (role) {
    case WeightRole::Q:
    case WeightRole::K:
    case WeightRole::VProj:
    case WeightRole::O: {
        Tensor u_block = slice_rows(f.u, role_slot(role) * f.d, f.d);
        return slot_matrix(u_block, core_slot(f.sigma, 0), f.v, f.s);
    }
    case WeightRole::Ffn1:
        return transpose(slot_matrix(f.u, core_slot(f.sigma, 1), f.v, f.s));
    case WeightRole::Ffn2:
        return slot_matrix(f.u, core_slot(f.sigma, 2), f.v, f.s);
    }
    throw ContractError("delta_for: unknown role");
}

Tensor delta_efft2(const Efft2Factors& f, WeightRole role) {
    if (is_mhsa_role(role))
        return slot_matrix(f.u1, core_slot(f.sigma1, role_slot(role)), f.v1, f.s1);
    if (role == WeightRole::Ffn1)
        return transpose(slot_matrix(f.u2, core_slot(f.sigma2, 0), f.v2, f.s2));
    return slot_matrix(f.u2, core_slot(f.sigma2, 1), f.v2, f.s2);
}

const LoraEntry* find_lora(const LoraFactors& f, WeightRole role, int layer) {
    for (const LoraEntry& e : f.entries)
        if (e.layer == layer && e.role == role) return &e;
    return nullptr;
}

int fact_tt_base(const FactTtFactors& f, int layer) {
    if (layer < 0 || layer >= f.layers) throw ContractError("fact_tt: layer out of range");
    return 12 * layer;
}

Tensor delta_fact_tt(const FactTtFactors& f, WeightRole role, int layer) {
    const int base = fact_tt_base(f, layer);
    if (is_mhsa_role(role)) return materialize_fact_tt_slot(f, base + role_slot(role));
    if (role == WeightRole::Ffn1) {
        // Four d x d column blocks side by side -> d x 4d.
        Tensor out({f.d, 4 * f.d});
        for (int c = 0; c < 4; ++c) {
            Tensor blk = materialize_fact_tt_slot(f, base + 4 + c);
            for (int i = 0; i < f.d; ++i)
                for (int j = 0; j < f.d; ++j) out(i, c * f.d + j) = blk(i, j);
        }
        return out;
    }
    // FFN2: four d x d row blocks stacked -> 4d x d.
    Tensor out({4 * f.d, f.d});
    for (int c = 0; c < 4; ++c) {
        Tensor blk = materialize_fact_tt_slot(f, base + 8 + c);
        for (int i = 0; i < f.d; ++i)
            for (int j = 0; j < f.d; ++j) out(c * f.d + i, j) = blk(i, j);
    }
    return out;
}

} // namespace

Tensor delta_for(const Factors& f, WeightRole role, int layer) {
    if (const auto* e1 = std::get_if<Efft1Factors>(&f)) return delta_efft1(*e1, role);
    if (const auto* e2 = std::get_if<Efft2Factors>(&f)) return delta_efft2(*e2, role);
    if (const auto* lo = std::get_if<LoraFactors>(&f)) {
        const LoraEntry* e = find_lora(*lo, role, layer);
        if (!e) throw ContractError("delta_for: LoRA does not tune this (role, layer)");
        return scale(matmul(e->w_down, e->w_up), lo->s);
    }
    return delta_fact_tt(std::get<FactTtFactors>(f), role, layer);
}

bool has_role(const Factors& f, WeightRole role, int layer) {
    if (const auto* lo = std::get_if<LoraFactors>(&f)) return find_lora(*lo, role, layer) != nullptr;
    if (const auto* ft = std::get_if<FactTtFactors>(&f))
        return layer >= 0 && layer < ft->layers;
    (void)role;
    return true; // EFFT deltas are shared across all layers
}

Tensor apply_delta(const Tensor& x, const Factors& f, WeightRole role, int layer) {
    Tape tape;
    FactorBinding fb = bind_factors(tape, f, /*trainable=*/false);
    const int xid = tape.leaf(x);
    const int out = apply_delta_node(tape, fb, xid, role, layer);
    return tape.value(out);
}

std::size_t count_params(const Factors& f) {
    std::size_t n = 0;
    for (const ParamRef& p : factor_params(const_cast<Factors&>(f))) n += p.tensor->size();
    return n;
}

std::vector<ParamRef> factor_params(Factors& f) {
    std::vector<ParamRef> out;
    if (auto* e1 = std::get_if<Efft1Factors>(&f)) {
        out.push_back({"efft1.sigma", &e1->sigma, true});
        out.push_back({"efft1.u", &e1->u, true});
        out.push_back({"efft1.v", &e1->v, true});
    } else if (auto* e2 = std::get_if<Efft2Factors>(&f)) {
        out.push_back({"efft2.sigma1", &e2->sigma1, true});
        out.push_back({"efft2.u1", &e2->u1, true});
        out.push_back({"efft2.v1", &e2->v1, true});
        out.push_back({"efft2.sigma2", &e2->sigma2, true});
        out.push_back({"efft2.u2", &e2->u2, true});
        out.push_back({"efft2.v2", &e2->v2, true});
    } else if (auto* lo = std::get_if<LoraFactors>(&f)) {
        for (std::size_t i = 0; i < lo->entries.size(); ++i) {
            LoraEntry& e = lo->entries[i];
            const std::string base = "lora." + std::to_string(e.layer) + "." + role_name(e.role);
            out.push_back({base + ".down", &e.w_down, true});
            out.push_back({base + ".up", &e.w_up, true});
        }
    } else {
        auto& ft = std::get<FactTtFactors>(f);
        out.push_back({"fact_tt.sigma", &ft.sigma, true});
        out.push_back({"fact_tt.u", &ft.u, true});
        out.push_back({"fact_tt.v", &ft.v, true});
    }
    return out;
}

FactorBinding bind_factors(Tape& tape, const Factors& f, bool trainable) {
    FactorBinding fb;
    fb.kind = kind_of(f);
    if (const auto* e1 = std::get_if<Efft1Factors>(&f)) {
        fb.d = e1->d;
        fb.r1 = e1->r1;
        fb.r2 = e1->r2;
        fb.s = e1->s;
        fb.sigma_a = tape.leaf(e1->sigma.reshaped({3 * e1->r1, e1->r2}), trainable);
        fb.u_a = tape.leaf(e1->u, trainable);
        fb.v_a = tape.leaf(e1->v, trainable);
        fb.param_nodes = {fb.sigma_a, fb.u_a, fb.v_a};
    } else if (const auto* e2 = std::get_if<Efft2Factors>(&f)) {
        fb.d = e2->d;
        fb.r1 = e2->r1;
        fb.r2 = e2->r2;
        fb.s = e2->s1;
        fb.s2 = e2->s2;
        fb.sigma_a = tape.leaf(e2->sigma1.reshaped({4 * e2->r1, e2->r2}), trainable);
        fb.u_a = tape.leaf(e2->u1, trainable);
        fb.v_a = tape.leaf(e2->v1, trainable);
        fb.sigma_b = tape.leaf(e2->sigma2.reshaped({2 * e2->r1, e2->r2}), trainable);
        fb.u_b = tape.leaf(e2->u2, trainable);
        fb.v_b = tape.leaf(e2->v2, trainable);
        fb.param_nodes = {fb.sigma_a, fb.u_a, fb.v_a, fb.sigma_b, fb.u_b, fb.v_b};
    } else if (const auto* lo = std::get_if<LoraFactors>(&f)) {
        fb.d = lo->d;
        fb.r1 = lo->r;
        fb.r2 = lo->r;
        fb.s = lo->s;
        fb.layers = lo->layers;
        fb.lora = lo;
        for (const LoraEntry& e : lo->entries) {
            const int down = tape.leaf(e.w_down, trainable);
            const int up = tape.leaf(e.w_up, trainable);
            fb.lora_nodes.emplace_back(down, up);
            fb.param_nodes.push_back(down);
            fb.param_nodes.push_back(up);
        }
    } else {
        const auto& ft = std::get<FactTtFactors>(f);
        fb.d = ft.d;
        fb.r1 = ft.r1;
        fb.r2 = ft.r2;
        fb.s = ft.s;
        fb.layers = ft.layers;
        fb.sigma_a = tape.leaf(ft.sigma.reshaped({12 * ft.layers * ft.r1, ft.r2}), trainable);
        fb.u_a = tape.leaf(ft.u, trainable);
        fb.v_a = tape.leaf(ft.v, trainable);
        fb.param_nodes = {fb.sigma_a, fb.u_a, fb.v_a};
    }
    return fb;
}

bool binding_has(const FactorBinding& fb, WeightRole role, int layer) {
    if (fb.kind == MethodKind::Lora) {
        for (std::size_t i = 0; i < fb.lora->entries.size(); ++i) {
            const LoraEntry& e = fb.lora->entries[i];
            if (e.layer == layer && e.role == role) return true;
        }
        return false;
    }
    if (fb.kind == MethodKind::FactTt) return layer >= 0 && layer < fb.layers;
    (void)role;
    return true;
}

namespace {

/// s * (((x * u_block) * core) * v^T) on the tape.
int low_rank_apply(Tape& tape, int x, int u_block, int core, int v, double s) {
    const int xu = tape.matmul(x, u_block);
    const int xus = tape.matmul(xu, core);
    const int out = tape.matmul(xus, tape.transpose(v));
    return tape.scale(out, s);
}

/// Slot `slot` of a core bound as a [k*r1, r2] leaf.
int core_slot_node(Tape& tape, int sigma, int r1, int slot) {
    return tape.slice_rows(sigma, slot * r1, r1);
}

} // namespace

int apply_delta_node(Tape& tape, const FactorBinding& fb, int x, WeightRole role, int layer) {
    switch (fb.kind) {
    case MethodKind::Efft1: {
        if (is_mhsa_role(role)) {
            const int u_block = tape.slice_rows(fb.u_a, role_slot(role) * fb.d, fb.d);
            return low_rank_apply(tape, x, u_block, core_slot_node(tape, fb.sigma_a, fb.r1, 0),
                                  fb.v_a, fb.s);
        }
        if (role == WeightRole::Ffn1) {
            // x * delta^T path: s * (((x * V) * Sigma1^T) * U^T).
            const int xv = tape.matmul(x, fb.v_a);
            const int core_t = tape.transpose(core_slot_node(tape, fb.sigma_a, fb.r1, 1));
            const int mid = tape.matmul(xv, core_t);
            return tape.scale(tape.matmul(mid, tape.transpose(fb.u_a)), fb.s);
        }
        return low_rank_apply(tape, x, fb.u_a, core_slot_node(tape, fb.sigma_a, fb.r1, 2),
                              fb.v_a, fb.s);
    }
    case MethodKind::Efft2: {
        if (is_mhsa_role(role))
            return low_rank_apply(tape, x, fb.u_a,
                                  core_slot_node(tape, fb.sigma_a, fb.r1, role_slot(role)),
                                  fb.v_a, fb.s);
        if (role == WeightRole::Ffn1) {
            const int xv = tape.matmul(x, fb.v_b);
            const int core_t = tape.transpose(core_slot_node(tape, fb.sigma_b, fb.r1, 0));
            const int mid = tape.matmul(xv, core_t);
            return tape.scale(tape.matmul(mid, tape.transpose(fb.u_b)), fb.s2);
        }
        return low_rank_apply(tape, x, fb.u_b, core_slot_node(tape, fb.sigma_b, fb.r1, 1),
                              fb.v_b, fb.s2);
    }
    case MethodKind::Lora: {
        for (std::size_t i = 0; i < fb.lora->entries.size(); ++i) {
            const LoraEntry& e = fb.lora->entries[i];
            if (e.layer == layer && e.role == role) {
                const auto [down, up] = fb.lora_nodes[i];
                return tape.scale(tape.matmul(tape.matmul(x, down), up), fb.s);
            }
        }
        throw ContractError("apply_delta: LoRA does not tune this (role, layer)");
    }
    case MethodKind::FactTt: {
        if (layer < 0 || layer >= fb.layers)
            throw ContractError("apply_delta: layer out of range");
        const int base = 12 * layer;
        if (is_mhsa_role(role))
            return low_rank_apply(
                tape, x, fb.u_a,
                core_slot_node(tape, fb.sigma_a, fb.r1, base + role_slot(role)), fb.v_a, fb.s);
        if (role == WeightRole::Ffn1) {
            // Column blocks of the d x 4d delta, assembled via transposes.
            std::vector<int> blocks_t;
            for (int c = 0; c < 4; ++c) {
                const int blk = low_rank_apply(
                    tape, x, fb.u_a, core_slot_node(tape, fb.sigma_a, fb.r1, base + 4 + c),
                    fb.v_a, fb.s);
                blocks_t.push_back(tape.transpose(blk));
            }
            return tape.transpose(tape.concat_rows(blocks_t));
        }
        // FFN2: x is n x 4d; sum the four row-block contributions.
        const int xt = tape.transpose(x);
        int acc = -1;
        for (int c = 0; c < 4; ++c) {
            const int xc = tape.transpose(tape.slice_rows(xt, c * fb.d, fb.d));
            const int blk = low_rank_apply(
                tape, xc, fb.u_a, core_slot_node(tape, fb.sigma_a, fb.r1, base + 8 + c),
                fb.v_a, fb.s);
            acc = (acc < 0) ? blk : tape.add(acc, blk);
        }
        return acc;
    }
    }
    throw ContractError("apply_delta: unknown method kind");
}

} // namespace efft
