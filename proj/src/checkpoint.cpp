#include "efft/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace efft {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'E', 'F', 'F', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

void write_u32_le(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32_le(std::istream& in, const char* what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw IoError(std::string("checkpoint: truncated while reading ") + what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f64_le(std::ostream& out, const Tensor& t) {
    for (std::size_t i = 0; i < t.size(); ++i) {
        std::uint64_t bits;
        const double v = t[i];
        std::memcpy(&bits, &v, 8);
        unsigned char b[8];
        for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(bits >> (8 * k));
        out.write(reinterpret_cast<const char*>(b), 8);
    }
}

void read_f64_le(std::istream& in, Tensor& t, const std::string& name) {
    for (std::size_t i = 0; i < t.size(); ++i) {
        unsigned char b[8];
        if (!in.read(reinterpret_cast<char*>(b), 8))
            throw IoError("checkpoint: truncated payload in tensor " + name);
        std::uint64_t bits = 0;
        for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(b[k]) << (8 * k);
        double v;
        std::memcpy(&v, &bits, 8);
        t[i] = v;
    }
}

std::vector<std::pair<std::string, const Tensor*>> model_tensors(const ViTModel& m) {
    std::vector<std::pair<std::string, const Tensor*>> out;
    out.emplace_back("model.patch_embed", &m.patch_embed);
    out.emplace_back("model.cls_token", &m.cls_token);
    out.emplace_back("model.pos_embed", &m.pos_embed);
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const std::string p = "model.layer" + std::to_string(l) + ".";
        const LayerWeights& w = m.layers[l];
        out.emplace_back(p + "w_q", &w.w_q);
        out.emplace_back(p + "w_k", &w.w_k);
        out.emplace_back(p + "w_v", &w.w_v);
        out.emplace_back(p + "w_o", &w.w_o);
        out.emplace_back(p + "w_ffn1", &w.w_ffn1);
        out.emplace_back(p + "w_ffn2", &w.w_ffn2);
        out.emplace_back(p + "ln1_gain", &w.ln1_gain);
        out.emplace_back(p + "ln1_bias", &w.ln1_bias);
        out.emplace_back(p + "ln2_gain", &w.ln2_gain);
        out.emplace_back(p + "ln2_bias", &w.ln2_bias);
    }
    out.emplace_back("model.head_w", &m.head_w);
    out.emplace_back("model.head_b", &m.head_b);
    return out;
}

std::vector<std::pair<std::string, Tensor*>> model_tensors_mut(ViTModel& m) {
    std::vector<std::pair<std::string, Tensor*>> out;
    for (auto& [name, t] : model_tensors(m)) out.emplace_back(name, const_cast<Tensor*>(t));
    return out;
}

} // namespace

void save_checkpoint(const std::string& path, const ViTModel& model,
                     const std::optional<Factors>& factors, const TuningMask& mask,
                     std::uint64_t seed, const RunReport* report) {
    json header;
    header["version"] = kVersion;
    header["seed"] = seed;
    header["mask"] = {{"layers", std::vector<int>(mask.layers.begin(), mask.layers.end())},
                      {"mhsa", mask.mhsa},
                      {"ffn", mask.ffn}};
    const ViTConfig& c = model.cfg;
    header["model"] = {{"d", c.d},         {"layers", c.layers},   {"heads", c.heads},
                       {"image", c.image}, {"patch", c.patch},     {"classes", c.classes},
                       {"channels", c.channels}};

    std::vector<std::pair<std::string, const Tensor*>> tensors = model_tensors(model);
    if (factors) {
        const MethodKind kind = kind_of(*factors);
        header["kind"] = kind_name(kind);
        if (const auto* e1 = std::get_if<Efft1Factors>(&*factors)) {
            header["r1"] = e1->r1;
            header["r2"] = e1->r2;
            header["s"] = e1->s;
        } else if (const auto* e2 = std::get_if<Efft2Factors>(&*factors)) {
            header["r1"] = e2->r1;
            header["r2"] = e2->r2;
            header["s"] = e2->s1;
            header["s2"] = e2->s2;
        } else if (const auto* lo = std::get_if<LoraFactors>(&*factors)) {
            header["r1"] = lo->r;
            header["r2"] = lo->r;
            header["s"] = lo->s;
            json entries = json::array();
            for (const LoraEntry& e : lo->entries)
                entries.push_back({{"layer", e.layer}, {"role", role_name(e.role)}});
            header["lora_entries"] = entries;
        } else {
            const auto& ft = std::get<FactTtFactors>(*factors);
            header["r1"] = ft.r1;
            header["r2"] = ft.r2;
            header["s"] = ft.s;
        }
        for (const ParamRef& p : factor_params(const_cast<Factors&>(*factors)))
            tensors.emplace_back("factors." + p.name, p.tensor);
    } else {
        header["kind"] = "linear";
    }

    if (report) {
        // wall-clock stays out: checkpoints must be byte-identical across runs
        header["report"] = {{"final_train_acc", report->final_train_acc},
                            {"final_val_acc", report->final_val_acc},
                            {"steps", report->steps},
                            {"diverged", report->diverged},
                            {"params", report->param_count}};
    }

    json manifest = json::array();
    for (const auto& [name, t] : tensors)
        manifest.push_back({{"name", name}, {"shape", t->shape()}});
    header["tensors"] = manifest;

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("checkpoint: cannot write " + path);
    out.write(kMagic, 8);
    write_u32_le(out, kVersion);
    const std::string header_text = header.dump();
    write_u32_le(out, static_cast<std::uint32_t>(header_text.size()));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& [name, t] : tensors) write_f64_le(out, *t);
    if (!out) throw IoError("checkpoint: write failure on " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("checkpoint: cannot open " + path);
    char magic[8];
    if (!in.read(magic, 8)) throw IoError("checkpoint: truncated magic in " + path);
    if (std::memcmp(magic, kMagic, 8) != 0) throw IoError("checkpoint: bad magic in " + path);
    const std::uint32_t version = read_u32_le(in, "version");
    if (version != kVersion)
        throw IoError("checkpoint: unsupported version " + std::to_string(version));
    const std::uint32_t header_len = read_u32_le(in, "header length");
    std::string header_text(header_len, '\0');
    if (!in.read(header_text.data(), header_len))
        throw IoError("checkpoint: truncated header in " + path);

    json header;
    try {
        header = json::parse(header_text);
    } catch (const json::exception& e) {
        throw IoError(std::string("checkpoint: malformed header JSON: ") + e.what());
    }

    Checkpoint ck;
    const json& jm = header.at("model");
    ck.model.cfg.d = jm.at("d");
    ck.model.cfg.layers = jm.at("layers");
    ck.model.cfg.heads = jm.at("heads");
    ck.model.cfg.image = jm.at("image");
    ck.model.cfg.patch = jm.at("patch");
    ck.model.cfg.classes = jm.at("classes");
    ck.model.cfg.channels = jm.at("channels");
    ck.model.cfg.validate();
    ck.seed = header.at("seed");
    const json& jmask = header.at("mask");
    for (int l : jmask.at("layers")) ck.mask.layers.insert(l);
    ck.mask.mhsa = jmask.at("mhsa");
    ck.mask.ffn = jmask.at("ffn");

    // Shape the model/factor tensors, then fill from the manifest by name.
    const ViTConfig& c = ck.model.cfg;
    ck.model.patch_embed = Tensor({c.patch_dim(), c.d});
    ck.model.cls_token = Tensor({1, c.d});
    ck.model.pos_embed = Tensor({c.seq_len(), c.d});
    for (int l = 0; l < c.layers; ++l) {
        LayerWeights w;
        w.w_q = Tensor({c.d, c.d});
        w.w_k = Tensor({c.d, c.d});
        w.w_v = Tensor({c.d, c.d});
        w.w_o = Tensor({c.d, c.d});
        w.w_ffn1 = Tensor({c.d, c.d_f()});
        w.w_ffn2 = Tensor({c.d_f(), c.d});
        w.ln1_gain = Tensor({1, c.d});
        w.ln1_bias = Tensor({1, c.d});
        w.ln2_gain = Tensor({1, c.d});
        w.ln2_bias = Tensor({1, c.d});
        ck.model.layers.push_back(std::move(w));
    }
    ck.model.head_w = Tensor({c.d, c.classes});
    ck.model.head_b = Tensor({1, c.classes});

    const std::string kind = header.at("kind");
    if (kind != "linear") {
        const auto mk = kind_from_name(kind);
        if (!mk) throw IoError("checkpoint: unknown method kind '" + kind + "'");
        const int r1 = header.at("r1"), r2 = header.at("r2");
        const double s = header.at("s");
        switch (*mk) {
        case MethodKind::Efft1: {
            Efft1Factors f;
            f.d = c.d;
            f.r1 = r1;
            f.r2 = r2;
            f.s = s;
            f.sigma = Tensor({3, r1, r2});
            f.u = Tensor({4 * c.d, r1});
            f.v = Tensor({c.d, r2});
            ck.factors = std::move(f);
            break;
        }
        case MethodKind::Efft2: {
            Efft2Factors f;
            f.d = c.d;
            f.r1 = r1;
            f.r2 = r2;
            f.s1 = s;
            f.s2 = header.at("s2");
            f.sigma1 = Tensor({4, r1, r2});
            f.u1 = Tensor({c.d, r1});
            f.v1 = Tensor({c.d, r2});
            f.sigma2 = Tensor({2, r1, r2});
            f.u2 = Tensor({4 * c.d, r1});
            f.v2 = Tensor({c.d, r2});
            ck.factors = std::move(f);
            break;
        }
        case MethodKind::Lora: {
            LoraFactors f;
            f.d = c.d;
            f.r = r1;
            f.layers = c.layers;
            f.s = s;
            for (const json& je : header.at("lora_entries")) {
                const auto role = role_from_name(je.at("role"));
                if (!role) throw IoError("checkpoint: unknown lora role");
                LoraEntry e;
                e.layer = je.at("layer");
                e.role = *role;
                const int d_in = (*role == WeightRole::Ffn2) ? 4 * c.d : c.d;
                const int d_out = (*role == WeightRole::Ffn1) ? 4 * c.d : c.d;
                e.w_down = Tensor({d_in, r1});
                e.w_up = Tensor({r1, d_out});
                f.entries.push_back(std::move(e));
            }
            ck.factors = std::move(f);
            break;
        }
        case MethodKind::FactTt: {
            FactTtFactors f;
            f.d = c.d;
            f.layers = c.layers;
            f.r1 = r1;
            f.r2 = r2;
            f.s = s;
            f.sigma = Tensor({12 * c.layers, r1, r2});
            f.u = Tensor({c.d, r1});
            f.v = Tensor({c.d, r2});
            ck.factors = std::move(f);
            break;
        }
        }
    }

    std::map<std::string, Tensor*> by_name;
    for (auto& [name, t] : model_tensors_mut(ck.model)) by_name[name] = t;
    if (ck.factors)
        for (const ParamRef& p : factor_params(*ck.factors))
            by_name["factors." + p.name] = p.tensor;

    for (const json& je : header.at("tensors")) {
        const std::string name = je.at("name");
        const std::vector<int> shape = je.at("shape");
        const auto it = by_name.find(name);
        if (it == by_name.end()) throw IoError("checkpoint: unexpected tensor '" + name + "'");
        if (it->second->shape() != shape)
            throw IoError("checkpoint: shape mismatch for tensor '" + name + "'");
        read_f64_le(in, *it->second, name);
        by_name.erase(it);
    }
    if (!by_name.empty())
        throw IoError("checkpoint: missing tensor '" + by_name.begin()->first + "'");
    char extra;
    if (in.read(&extra, 1)) throw IoError("checkpoint: trailing bytes in " + path);
    return ck;
}

} // namespace efft
