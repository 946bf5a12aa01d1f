#include "efft/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "efft/analysis.hpp"
#include "efft/checkpoint.hpp"
#include "efft/config.hpp"
#include "efft/dataset.hpp"
#include "efft/report.hpp"

namespace efft {

namespace {

// Stream tags hung off the master --seed.
constexpr std::uint64_t kSeedModel = 0x01;
constexpr std::uint64_t kSeedFactors = 0x02;
constexpr std::uint64_t kSeedData = 0x03;
constexpr std::uint64_t kSeedBaseline = 0x04;

struct SeedFlag {
    bool given = false;
    std::uint64_t value = 0;
    std::uint64_t or_default(std::uint64_t fallback) const { return given ? value : fallback; }
};

std::string fmt(const char* f, double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

Dataset cli_dataset(const ExperimentConfig& cfg, std::uint64_t master_seed) {
    if (cfg.data.source == "synthetic") {
        SyntheticSpec spec = cfg.data.synth;
        if (!cfg.data.synth_seed_set) spec.seed = Rng::derive(master_seed, kSeedData);
        Rng rng(spec.seed);
        return gen_synthetic(spec, rng);
    }
    Dataset data = load_idx(cfg.data.images, cfg.data.labels, cfg.data.max_samples);
    if (data.image_h != cfg.model.image || data.image_w != cfg.model.image)
        throw ConfigError("dataset images are " + std::to_string(data.image_h) + "x" +
                          std::to_string(data.image_w) + " but the model expects " +
                          std::to_string(cfg.model.image));
    if (data.n_classes > cfg.model.classes)
        throw ConfigError("dataset has more classes than the model head");
    data.n_classes = cfg.model.classes;
    return data;
}

std::optional<Factors> cli_factors(const ExperimentConfig& cfg, std::uint64_t master_seed) {
    if (cfg.is_linear_probe()) return std::nullopt;
    const MethodKind kind = *kind_from_name(cfg.method.kind);
    Rng rng(Rng::derive(master_seed, kSeedFactors));
    return make_factors(kind, cfg.model.d, cfg.model.layers, cfg.method.r1, cfg.method.r2,
                        cfg.method.s, rng);
}

std::vector<double> parse_double_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(std::stod(item));
    return out;
}

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(std::stoi(item));
    return out;
}

const Tensor& pick_factor_matrix(const Factors& f, const std::string& which) {
    if (const auto* e1 = std::get_if<Efft1Factors>(&f)) {
        if (which == "u") return e1->u;
        if (which == "v") return e1->v;
        throw ContractError("similarity: efft1 factor matrices are 'u' and 'v'");
    }
    if (const auto* e2 = std::get_if<Efft2Factors>(&f)) {
        if (which == "u1" || which == "u") return e2->u1;
        if (which == "v1" || which == "v") return e2->v1;
        if (which == "u2") return e2->u2;
        if (which == "v2") return e2->v2;
        throw ContractError("similarity: efft2 factor matrices are u1/v1/u2/v2");
    }
    if (const auto* ft = std::get_if<FactTtFactors>(&f)) {
        if (which == "u") return ft->u;
        if (which == "v") return ft->v;
        throw ContractError("similarity: fact_tt factor matrices are 'u' and 'v'");
    }
    throw ContractError("similarity: this checkpoint has no shared factor matrices");
}

int run_train(const std::string& config_path, const std::string& out_path,
              SeedFlag seed_flag, const std::string& report_path,
              const std::string& curve_path, std::ostream& out, std::ostream& err) {
    ExperimentConfig cfg = load_config(config_path);
    const std::uint64_t master = seed_flag.or_default(cfg.train.seed);
    TrainHyper hyper = cfg.train;
    hyper.seed = master;

    const Dataset data = cli_dataset(cfg, master);
    Rng model_rng(Rng::derive(master, kSeedModel));
    ViTModel model = build_vit(cfg.model, model_rng);
    std::optional<Factors> factors = cli_factors(cfg, master);
    const TuningMask mask = cfg.resolve_mask();

    RunReport report = train(model, factors, mask, data, hyper);
    save_checkpoint(out_path, model, factors, mask, master, &report);

    const std::string rpath = report_path.empty() ? out_path + ".report.csv" : report_path;
    std::ofstream rout(rpath);
    if (!rout) throw IoError("cannot write report " + rpath);
    write_report_csv(rout, {report});
    if (!curve_path.empty()) {
        std::ofstream cout_file(curve_path);
        if (!cout_file) throw IoError("cannot write curve " + curve_path);
        write_curve_csv(cout_file, report);
    }

    out << "method=" << report.method << " steps=" << report.steps
        << " train_acc=" << fmt("%.6f", report.final_train_acc)
        << " val_acc=" << fmt("%.6f", report.final_val_acc) << " params=" << report.param_count
        << " diverged=" << (report.diverged ? 1 : 0) << "\n";
    out << "checkpoint=" << out_path << " report=" << rpath << "\n";
    err << "wall_ms=" << fmt("%.1f", report.wall_ms) << "\n";
    return 0;
}

int run_eval(const std::string& config_path, const std::string& ckpt_path,
             SeedFlag seed_flag, std::ostream& out) {
    ExperimentConfig cfg = load_config(config_path);
    const std::uint64_t master = seed_flag.or_default(cfg.train.seed);
    Checkpoint ck = load_checkpoint(ckpt_path);
    const Dataset data = cli_dataset(cfg, master);
    std::vector<Tensor> patches;
    for (const Tensor& img : data.images) patches.push_back(patchify(img, ck.model.cfg.patch));
    const double acc =
        evaluate(ck.model, ck.factors, ck.mask, patches, data.labels, cfg.train.batch_size);
    out << "accuracy " << fmt("%.6f", acc) << "\n";
    return 0;
}

int run_sweep(const std::string& config_path, const std::string& out_path,
              const std::string& scales_text, const std::string& ranks_text,
              SeedFlag seed_flag, std::ostream& out) {
    ExperimentConfig cfg = load_config(config_path);
    if (cfg.is_linear_probe()) throw ConfigError("sweep: method.kind must name a factor method");
    const std::uint64_t master = seed_flag.or_default(cfg.train.seed);
    TrainHyper hyper = cfg.train;
    hyper.seed = master;
    const Dataset data = cli_dataset(cfg, master);
    Rng model_rng(Rng::derive(master, kSeedModel));
    const ViTModel pristine = build_vit(cfg.model, model_rng);

    const SweepResult result =
        sweep(pristine, data, *kind_from_name(cfg.method.kind), parse_double_list(scales_text),
              parse_int_list(ranks_text), hyper, cfg.resolve_mask());

    std::ofstream csv(out_path);
    if (!csv) throw IoError("cannot write " + out_path);
    write_sweep_csv(csv, result);
    const SweepCell& best = result.cells[static_cast<std::size_t>(result.best)];
    out << "best s=" << fmt("%g", best.s) << " r=" << best.rank
        << " val_acc=" << fmt("%.6f", best.report.final_val_acc)
        << " params=" << best.report.param_count << "\n";
    out << "grid=" << out_path << "\n";
    return 0;
}

int run_ablate(const std::string& config_path, const std::string& out_path,
               const std::string& layers_text, const std::string& blocks_text,
               SeedFlag seed_flag, std::ostream& out) {
    ExperimentConfig cfg = load_config(config_path);
    if (cfg.is_linear_probe()) throw ConfigError("ablate: method.kind must name a factor method");
    const std::uint64_t master = seed_flag.or_default(cfg.train.seed);
    TrainHyper hyper = cfg.train;
    hyper.seed = master;
    const Dataset data = cli_dataset(cfg, master);
    Rng model_rng(Rng::derive(master, kSeedModel));
    const ViTModel pristine = build_vit(cfg.model, model_rng);

    std::vector<std::vector<int>> layer_sets;
    std::stringstream ss(layers_text);
    std::string group;
    while (std::getline(ss, group, ';')) {
        if (group.empty()) continue;
        std::set<int> set = parse_layer_set(group, cfg.model.layers);
        if (!set.empty()) layer_sets.emplace_back(set.begin(), set.end());
    }
    if (layer_sets.empty()) throw ConfigError("ablate: no usable layer sets");
    std::vector<std::string> blocks;
    std::stringstream bs(blocks_text);
    while (std::getline(bs, group, ';'))
        if (!group.empty()) blocks.push_back(group);

    const AblationResult result =
        ablation_run(pristine, data, *kind_from_name(cfg.method.kind), cfg.method.r1,
                     cfg.method.r2, cfg.method.s, layer_sets, blocks, hyper);
    std::ofstream csv(out_path);
    if (!csv) throw IoError("cannot write " + out_path);
    write_ablation_csv(csv, result);
    out << "baseline val_acc=" << fmt("%.6f", result.baseline.final_val_acc) << " cells="
        << result.cells.size() << "\n";
    out << "table=" << out_path << "\n";
    return 0;
}

int run_similarity(const std::vector<std::string>& ckpts, int i, int j, const std::string& matrix,
                   bool adjust, int baseline_seeds, const std::string& grid_path,
                   SeedFlag seed_flag, std::ostream& out) {
    const Checkpoint a = load_checkpoint(ckpts[0]);
    const Checkpoint b = load_checkpoint(ckpts[1]);
    if (!a.factors || !b.factors)
        throw ContractError("similarity: both checkpoints need factor sets");
    const Tensor& ma = pick_factor_matrix(*a.factors, matrix);
    const Tensor& mb = pick_factor_matrix(*b.factors, matrix);
    Rng rng(Rng::derive(seed_flag.or_default(a.seed), kSeedBaseline));
    double value;
    if (adjust) {
        value = adjusted_similarity(ma, mb, i, j, baseline_seeds, rng);
    } else {
        value = subspace_similarity(ma, mb, i, j);
    }
    if (!grid_path.empty()) {
        const SimilarityGrid grid = similarity_grid(ma, mb, i, j, adjust, baseline_seeds, rng,
                                                    ckpts[0] + ":" + matrix,
                                                    ckpts[1] + ":" + matrix);
        std::ofstream gout(grid_path);
        if (!gout) throw IoError("cannot write " + grid_path);
        write_similarity_grid_csv(gout, grid);
    }
    out << fmt("%.4f", value) << "\n";
    return 0;
}

int run_count_params(const std::string& config_path, bool include_head, std::ostream& out) {
    ExperimentConfig cfg = load_config(config_path);
    std::size_t count = 0;
    if (!cfg.is_linear_probe()) {
        Rng rng(0);
        const Factors f = make_factors(*kind_from_name(cfg.method.kind), cfg.model.d,
                                       cfg.model.layers, cfg.method.r1, cfg.method.r2,
                                       cfg.method.s, rng);
        count = count_params(f);
    }
    if (include_head)
        count += static_cast<std::size_t>(cfg.model.d) * cfg.model.classes + cfg.model.classes;
    out << count << "\n";
    return 0;
}

int run_gen_data(const std::string& spec_path, const std::string& out_dir,
                 SeedFlag seed_flag, std::ostream& out) {
    ExperimentConfig cfg = load_config(spec_path);
    if (cfg.data.source != "synthetic")
        throw ConfigError("gen-data: the spec must use a synthetic data source");
    SyntheticSpec spec = cfg.data.synth;
    if (seed_flag.given) spec.seed = seed_flag.value;
    Rng rng(spec.seed);
    const Dataset data = gen_synthetic(spec, rng);
    std::filesystem::create_directories(out_dir);
    const std::string images = out_dir + "/images-idx3-ubyte";
    const std::string labels = out_dir + "/labels-idx1-ubyte";
    save_idx(data, images, labels);
    out << "images=" << images << "\n";
    out << "labels=" << labels << "\n";
    out << "samples=" << data.size() << " classes=" << data.n_classes << "\n";
    return 0;
}

} // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"EFFT: tensor-train factorized fine-tuning on a toy ViT"};
    app.require_subcommand(1);

    std::string config_path, out_path, report_path, curve_path;
    std::uint64_t seed_value = 0;
    bool seed_given = false;
    auto add_seed = [&](CLI::App* cmd) {
        cmd->add_option("--seed", seed_value, "Master seed for every random stream")
            ->each([&](const std::string&) { seed_given = true; });
    };

    CLI::App* train_cmd = app.add_subcommand("train", "Fine-tune and write a checkpoint");
    train_cmd->add_option("-c,--config", config_path, "Experiment config file")->required();
    train_cmd->add_option("-o,--out", out_path, "Checkpoint output path")->required();
    train_cmd->add_option("--report", report_path, "Report CSV path (default <out>.report.csv)");
    train_cmd->add_option("--curve", curve_path, "Per-epoch curve CSV path");
    add_seed(train_cmd);

    std::string ckpt_path;
    CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on the configured data");
    eval_cmd->add_option("-c,--config", config_path, "Experiment config file")->required();
    eval_cmd->add_option("--ckpt", ckpt_path, "Checkpoint path")->required();
    add_seed(eval_cmd);

    std::string scales_text = "0.1,1,10,100";
    std::string ranks_text = "8,16,32";
    CLI::App* sweep_cmd = app.add_subcommand("sweep", "Grid over scales and ranks");
    sweep_cmd->add_option("-c,--config", config_path, "Experiment config file")->required();
    sweep_cmd->add_option("-o,--out", out_path, "Grid CSV output path")->required();
    sweep_cmd->add_option("--scales", scales_text, "Comma list of scales");
    sweep_cmd->add_option("--ranks", ranks_text, "Comma list of ranks");
    add_seed(sweep_cmd);

    std::string layers_text = "0-2;2-4;5-8;9-11";
    std::string blocks_text = "mhsa;ffn;both";
    CLI::App* ablate_cmd = app.add_subcommand("ablate", "Layer/block ablation table");
    ablate_cmd->add_option("-c,--config", config_path, "Experiment config file")->required();
    ablate_cmd->add_option("-o,--out", out_path, "Table CSV output path")->required();
    ablate_cmd->add_option("--layers", layers_text, "Semicolon-separated layer sets");
    ablate_cmd->add_option("--blocks", blocks_text, "Semicolon list from mhsa/ffn/both");
    add_seed(ablate_cmd);

    std::vector<std::string> sim_ckpts;
    int sim_i = 8, sim_j = 8, baseline_seeds = 10;
    std::string matrix = "u";
    bool adjust = false;
    CLI::App* sim_cmd = app.add_subcommand("similarity", "Subspace similarity of two checkpoints");
    sim_cmd->add_option("--ckpt", sim_ckpts, "Checkpoint (give twice: A then B)")
        ->required()
        ->expected(2);
    sim_cmd->add_option("-i", sim_i, "Top-i left singular vectors of A");
    sim_cmd->add_option("-j", sim_j, "Top-j left singular vectors of B");
    sim_cmd->add_option("--matrix", matrix, "Factor matrix: u, v (efft2: u1/v1/u2/v2)");
    sim_cmd->add_flag("--adjust", adjust, "Subtract the random-Gaussian baseline");
    sim_cmd->add_option("--baseline-seeds", baseline_seeds, "Baseline pairs for --adjust");
    std::string grid_path;
    sim_cmd->add_option("--grid", grid_path, "Write the full (1..i) x (1..j) grid as CSV");
    add_seed(sim_cmd);

    bool include_head = false;
    CLI::App* count_cmd = app.add_subcommand("count-params", "Trainable scalar count");
    count_cmd->add_option("-c,--config", config_path, "Experiment config file")->required();
    count_cmd->add_flag("--include-head", include_head, "Include the classification head");

    std::string spec_path, out_dir;
    CLI::App* gen_cmd = app.add_subcommand("gen-data", "Write a synthetic dataset as IDX files");
    gen_cmd->add_option("--spec", spec_path, "Config file with a synthetic [data] section")
        ->required();
    gen_cmd->add_option("-o,--out", out_dir, "Output directory")->required();
    add_seed(gen_cmd);

    std::vector<const char*> argv;
    argv.push_back("efft");
    for (const std::string& a : args) argv.push_back(a.c_str());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n" << app.help();
        return 1;
    }

    const SeedFlag seed_flag{seed_given, seed_value};
    try {
        if (train_cmd->parsed())
            return run_train(config_path, out_path, seed_flag, report_path, curve_path, out, err);
        if (eval_cmd->parsed()) return run_eval(config_path, ckpt_path, seed_flag, out);
        if (sweep_cmd->parsed())
            return run_sweep(config_path, out_path, scales_text, ranks_text, seed_flag, out);
        if (ablate_cmd->parsed())
            return run_ablate(config_path, out_path, layers_text, blocks_text, seed_flag, out);
        if (sim_cmd->parsed())
            return run_similarity(sim_ckpts, sim_i, sim_j, matrix, adjust, baseline_seeds,
                                  grid_path, seed_flag, out);
        if (count_cmd->parsed()) return run_count_params(config_path, include_head, out);
        if (gen_cmd->parsed()) return run_gen_data(spec_path, out_dir, seed_flag, out);
        err << "error: no subcommand\n" << app.help();
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }
}

int cli_main(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return cli_main(args, std::cout, std::cerr);
}

} // namespace efft
