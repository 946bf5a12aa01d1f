#include "efft/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace efft {

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

struct RawEntry {
    std::string value;
    int line = 0;
};

using Section = std::map<std::string, RawEntry>;

[[noreturn]] void fail(const std::string& origin, int line, const std::string& msg) {
    throw ConfigError(origin + ":" + std::to_string(line) + ": " + msg);
}

double parse_double(const std::string& origin, const std::string& key, const RawEntry& e) {
    try {
        std::size_t used = 0;
        const double v = std::stod(e.value, &used);
        if (used != e.value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        fail(origin, e.line, "invalid number for '" + key + "': " + e.value);
    }
}

long long parse_int(const std::string& origin, const std::string& key, const RawEntry& e) {
    long long v = 0;
    const auto* begin = e.value.data();
    const auto* end = begin + e.value.size();
    const auto res = std::from_chars(begin, end, v);
    if (res.ec != std::errc{} || res.ptr != end)
        fail(origin, e.line, "invalid integer for '" + key + "': " + e.value);
    return v;
}

std::uint64_t parse_u64(const std::string& origin, const std::string& key, const RawEntry& e) {
    std::uint64_t v = 0;
    const auto* begin = e.value.data();
    const auto* end = begin + e.value.size();
    const auto res = std::from_chars(begin, end, v);
    if (res.ec != std::errc{} || res.ptr != end)
        fail(origin, e.line, "invalid unsigned integer for '" + key + "': " + e.value);
    return v;
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

std::set<int> parse_layer_set(const std::string& text, int n_layers) {
    std::set<int> out;
    if (trim(text) == "all") {
        for (int i = 0; i < n_layers; ++i) out.insert(i);
        return out;
    }
    if (trim(text) == "none" || trim(text).empty()) return out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        const auto dash = item.find('-');
        int lo, hi;
        try {
            if (dash == std::string::npos) {
                lo = hi = std::stoi(item);
            } else {
                lo = std::stoi(item.substr(0, dash));
                hi = std::stoi(item.substr(dash + 1));
            }
        } catch (const std::exception&) {
            throw ConfigError("mask: invalid layer entry '" + item + "'");
        }
        if (lo > hi || lo < 0 || hi >= n_layers)
            throw ConfigError("mask: layer range '" + item + "' outside [0, " +
                              std::to_string(n_layers - 1) + "]");
        for (int i = lo; i <= hi; ++i) out.insert(i);
    }
    return out;
}

TuningMask ExperimentConfig::resolve_mask() const {
    TuningMask m;
    m.layers = parse_layer_set(mask.layers, model.layers);
    if (mask.blocks == "both" || mask.blocks == "mhsa,ffn") {
        m.mhsa = m.ffn = true;
    } else if (mask.blocks == "mhsa") {
        m.mhsa = true;
    } else if (mask.blocks == "ffn") {
        m.ffn = true;
    } else if (mask.blocks == "none") {
        m.layers.clear();
    } else {
        throw ConfigError("mask: unknown blocks value '" + mask.blocks + "'");
    }
    return m;
}

void ExperimentConfig::validate() const {
    model.validate();
    train.validate();
    if (method.kind != "linear") {
        if (!kind_from_name(method.kind))
            throw ConfigError("method: unknown kind '" + method.kind + "'");
        if (method.r1 < 1 || method.r2 < 1)
            throw ConfigError("method: ranks must be >= 1");
        if (method.s <= 0) throw ConfigError("method: scale must be positive");
    }
    if (data.source == "synthetic") {
        if (data.synth.n_classes != model.classes)
            throw ConfigError("data: classes must match model classes");
        if (data.synth.image != model.image)
            throw ConfigError("data: image size must match model image size");
        if (data.synth.samples_per_class < 1)
            throw ConfigError("data: per_class must be >= 1");
        if (data.synth.noise_std < 0) throw ConfigError("data: noise_std must be >= 0");
    } else if (data.source == "idx") {
        if (data.images.empty() || data.labels.empty())
            throw ConfigError("data: idx source requires images and labels paths");
        if (data.max_samples < 0) throw ConfigError("data: max_samples must be >= 0");
    } else {
        throw ConfigError("data: unknown source '" + data.source + "'");
    }
    resolve_mask(); // bounds-checks the layer list
}

bool operator==(const SyntheticSpec& a, const SyntheticSpec& b) {
    return a.n_classes == b.n_classes && a.samples_per_class == b.samples_per_class &&
           a.image == b.image && a.noise_std == b.noise_std && a.seed == b.seed;
}

bool operator==(const ViTConfig& a, const ViTConfig& b) {
    return a.d == b.d && a.layers == b.layers && a.heads == b.heads && a.image == b.image &&
           a.patch == b.patch && a.classes == b.classes && a.channels == b.channels;
}

bool operator==(const TrainHyper& a, const TrainHyper& b) {
    return a.lr == b.lr && a.batch_size == b.batch_size && a.epochs == b.epochs &&
           a.beta1 == b.beta1 && a.beta2 == b.beta2 && a.eps == b.eps &&
           a.weight_decay == b.weight_decay && a.seed == b.seed && a.max_steps == b.max_steps &&
           a.val_fraction == b.val_fraction;
}

bool ExperimentConfig::operator==(const ExperimentConfig& o) const {
    return model == o.model && method == o.method && train == o.train && data == o.data &&
           mask == o.mask;
}

ExperimentConfig parse_config(std::istream& in, const std::string& origin) {
    std::map<std::string, Section> sections;
    std::string line;
    std::string current;
    int lineno = 0;
    static const std::map<std::string, std::set<std::string>> kKnown = {
        {"model", {"d", "layers", "heads", "image", "patch", "classes"}},
        {"method", {"kind", "r1", "r2", "s"}},
        {"train",
         {"lr", "batch", "epochs", "weight_decay", "beta1", "beta2", "eps", "seed", "max_steps",
          "val_fraction"}},
        {"data",
         {"source", "classes", "per_class", "image", "noise_std", "seed", "images", "labels",
          "max_samples"}},
        {"mask", {"layers", "blocks"}},
    };

    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t.front() == '[') {
            if (t.back() != ']') fail(origin, lineno, "malformed section header");
            current = trim(t.substr(1, t.size() - 2));
            if (!kKnown.contains(current)) fail(origin, lineno, "unknown section '" + current + "'");
            continue;
        }
        const auto eq = t.find('=');
        if (eq == std::string::npos) fail(origin, lineno, "expected 'key = value'");
        if (current.empty()) fail(origin, lineno, "key outside any [section]");
        const std::string key = trim(t.substr(0, eq));
        const std::string value = trim(t.substr(eq + 1));
        if (!kKnown.at(current).contains(key))
            fail(origin, lineno, "unknown key '" + key + "' in [" + current + "]");
        if (sections[current].contains(key))
            fail(origin, lineno, "duplicate key '" + key + "' in [" + current + "]");
        sections[current][key] = {value, lineno};
    }

    ExperimentConfig cfg;
    auto get = [&](const std::string& sec, const std::string& key) -> const RawEntry* {
        const auto s = sections.find(sec);
        if (s == sections.end()) return nullptr;
        const auto k = s->second.find(key);
        return k == s->second.end() ? nullptr : &k->second;
    };
    auto set_int = [&](const std::string& sec, const std::string& key, int& target) {
        if (const RawEntry* e = get(sec, key)) target = static_cast<int>(parse_int(origin, key, *e));
    };
    auto set_double = [&](const std::string& sec, const std::string& key, double& target) {
        if (const RawEntry* e = get(sec, key)) target = parse_double(origin, key, *e);
    };
    auto set_string = [&](const std::string& sec, const std::string& key, std::string& target) {
        if (const RawEntry* e = get(sec, key)) target = e->value;
    };

    set_int("model", "d", cfg.model.d);
    set_int("model", "layers", cfg.model.layers);
    set_int("model", "heads", cfg.model.heads);
    set_int("model", "image", cfg.model.image);
    set_int("model", "patch", cfg.model.patch);
    set_int("model", "classes", cfg.model.classes);

    set_string("method", "kind", cfg.method.kind);
    set_int("method", "r1", cfg.method.r1);
    set_int("method", "r2", cfg.method.r2);
    set_double("method", "s", cfg.method.s);

    set_double("train", "lr", cfg.train.lr);
    set_int("train", "batch", cfg.train.batch_size);
    set_int("train", "epochs", cfg.train.epochs);
    set_double("train", "weight_decay", cfg.train.weight_decay);
    set_double("train", "beta1", cfg.train.beta1);
    set_double("train", "beta2", cfg.train.beta2);
    set_double("train", "eps", cfg.train.eps);
    if (const RawEntry* e = get("train", "seed")) cfg.train.seed = parse_u64(origin, "seed", *e);
    set_int("train", "max_steps", cfg.train.max_steps);
    set_double("train", "val_fraction", cfg.train.val_fraction);

    // Synthetic geometry follows the model unless stated explicitly.
    cfg.data.synth.n_classes = cfg.model.classes;
    cfg.data.synth.image = cfg.model.image;
    set_string("data", "source", cfg.data.source);
    set_int("data", "classes", cfg.data.synth.n_classes);
    set_int("data", "per_class", cfg.data.synth.samples_per_class);
    set_int("data", "image", cfg.data.synth.image);
    set_double("data", "noise_std", cfg.data.synth.noise_std);
    if (const RawEntry* e = get("data", "seed")) {
        cfg.data.synth.seed = parse_u64(origin, "seed", *e);
        cfg.data.synth_seed_set = true;
    }
    set_string("data", "images", cfg.data.images);
    set_string("data", "labels", cfg.data.labels);
    set_int("data", "max_samples", cfg.data.max_samples);

    set_string("mask", "layers", cfg.mask.layers);
    set_string("mask", "blocks", cfg.mask.blocks);

    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("config: cannot open " + path);
    return parse_config(in, path);
}

void save_config(const ExperimentConfig& cfg, std::ostream& out) {
    out << "[model]\n";
    out << "d = " << cfg.model.d << "\n";
    out << "layers = " << cfg.model.layers << "\n";
    out << "heads = " << cfg.model.heads << "\n";
    out << "image = " << cfg.model.image << "\n";
    out << "patch = " << cfg.model.patch << "\n";
    out << "classes = " << cfg.model.classes << "\n\n";

    out << "[method]\n";
    out << "kind = " << cfg.method.kind << "\n";
    out << "r1 = " << cfg.method.r1 << "\n";
    out << "r2 = " << cfg.method.r2 << "\n";
    out << "s = " << fmt_double(cfg.method.s) << "\n\n";

    out << "[train]\n";
    out << "lr = " << fmt_double(cfg.train.lr) << "\n";
    out << "batch = " << cfg.train.batch_size << "\n";
    out << "epochs = " << cfg.train.epochs << "\n";
    out << "weight_decay = " << fmt_double(cfg.train.weight_decay) << "\n";
    out << "beta1 = " << fmt_double(cfg.train.beta1) << "\n";
    out << "beta2 = " << fmt_double(cfg.train.beta2) << "\n";
    out << "eps = " << fmt_double(cfg.train.eps) << "\n";
    out << "seed = " << cfg.train.seed << "\n";
    out << "max_steps = " << cfg.train.max_steps << "\n";
    out << "val_fraction = " << fmt_double(cfg.train.val_fraction) << "\n\n";

    out << "[data]\n";
    out << "source = " << cfg.data.source << "\n";
    if (cfg.data.source == "synthetic") {
        out << "classes = " << cfg.data.synth.n_classes << "\n";
        out << "per_class = " << cfg.data.synth.samples_per_class << "\n";
        out << "image = " << cfg.data.synth.image << "\n";
        out << "noise_std = " << fmt_double(cfg.data.synth.noise_std) << "\n";
        if (cfg.data.synth_seed_set) out << "seed = " << cfg.data.synth.seed << "\n";
    } else {
        out << "images = " << cfg.data.images << "\n";
        out << "labels = " << cfg.data.labels << "\n";
        out << "max_samples = " << cfg.data.max_samples << "\n";
    }
    out << "\n[mask]\n";
    out << "layers = " << cfg.mask.layers << "\n";
    out << "blocks = " << cfg.mask.blocks << "\n";
}

} // namespace efft
