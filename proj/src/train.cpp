#include "efft/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace efft {

void TrainHyper::validate() const {
    if (lr <= 0) throw ConfigError("train: lr must be positive");
    if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
    if (epochs < 0) throw ConfigError("train: epochs must be >= 0");
    if (val_fraction < 0 || val_fraction >= 1)
        throw ConfigError("train: val_fraction must be in [0, 1)");
    if (max_steps < 0) throw ConfigError("train: max_steps must be >= 0");
}

namespace {

// Seed tags for the independent streams of one run.
constexpr std::uint64_t kTagSplit = 0x51;
constexpr std::uint64_t kTagShuffle = 0x52;

std::vector<Tensor> patchify_all(const Dataset& data, int patch) {
    std::vector<Tensor> out;
    out.reserve(data.images.size());
    for (const Tensor& img : data.images) out.push_back(patchify(img, patch));
    return out;
}

Tensor gather_batch(const std::vector<Tensor>& patches, const std::vector<int>& idx, int from,
                    int count) {
    const int n = patches[0].rows(), pd = patches[0].cols();
    Tensor batch({count, n, pd});
    for (int b = 0; b < count; ++b) {
        const Tensor& p = patches[static_cast<std::size_t>(idx[static_cast<std::size_t>(from + b)])];
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < pd; ++j) batch(b, i, j) = p(i, j);
    }
    return batch;
}

void shuffle_indices(std::vector<int>& idx, Rng& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.next_below(i));
        std::swap(idx[i - 1], idx[j]);
    }
}

int argmax_row(const Tensor& logits, int row) {
    int best = 0;
    for (int j = 1; j < logits.cols(); ++j)
        if (logits(row, j) > logits(row, best)) best = j;
    return best;
}

} // namespace

double evaluate(const ViTModel& m, const std::optional<Factors>& factors, const TuningMask& mask,
                const std::vector<Tensor>& patches, const std::vector<int>& labels,
                int batch_size) {
    if (patches.empty()) throw ContractError("evaluate: empty sample set");
    std::vector<int> idx(patches.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::size_t correct = 0;
    for (std::size_t at = 0; at < patches.size(); at += static_cast<std::size_t>(batch_size)) {
        const int count = static_cast<int>(
            std::min(static_cast<std::size_t>(batch_size), patches.size() - at));
        const Tensor batch = gather_batch(patches, idx, static_cast<int>(at), count);
        const Tensor logits = vit_logits(m, batch, factors, mask);
        for (int b = 0; b < count; ++b)
            if (argmax_row(logits, b) == labels[at + static_cast<std::size_t>(b)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(patches.size());
}

RunReport train(ViTModel& model, std::optional<Factors>& factors, const TuningMask& mask,
                const Dataset& data, const TrainHyper& hyper) {
    hyper.validate();
    if (data.size() == 0) throw ContractError("train: dataset is empty");
    if (data.labels.size() != data.images.size())
        throw ContractError("train: image/label count mismatch");

    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<Tensor> patches = patchify_all(data, model.cfg.patch);

    RunReport report;
    report.method = factors ? kind_name(kind_of(*factors)) : "linear";
    report.d = model.cfg.d;
    report.layers = model.cfg.layers;
    report.mask_desc = mask.describe();
    report.seed = hyper.seed;
    if (factors) {
        if (const auto* e1 = std::get_if<Efft1Factors>(&*factors)) {
            report.r1 = e1->r1;
            report.r2 = e1->r2;
            report.s = e1->s;
        } else if (const auto* e2 = std::get_if<Efft2Factors>(&*factors)) {
            report.r1 = e2->r1;
            report.r2 = e2->r2;
            report.s = e2->s1;
        } else if (const auto* lo = std::get_if<LoraFactors>(&*factors)) {
            report.r1 = lo->r;
            report.r2 = lo->r;
            report.s = lo->s;
        } else {
            const auto& ft = std::get<FactTtFactors>(*factors);
            report.r1 = ft.r1;
            report.r2 = ft.r2;
            report.s = ft.s;
        }
        report.param_count = head_param_count(model) + count_params(*factors);
    } else {
        report.param_count = head_param_count(model);
    }

    // Seed-deterministic holdout split.
    std::vector<int> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t n_val = 0;
    if (hyper.val_fraction > 0) {
        Rng split_rng(Rng::derive(hyper.seed, kTagSplit));
        shuffle_indices(order, split_rng);
        n_val = static_cast<std::size_t>(std::floor(hyper.val_fraction *
                                                    static_cast<double>(data.size())));
    }
    std::vector<int> train_idx(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_val));
    std::vector<int> val_idx(order.end() - static_cast<std::ptrdiff_t>(n_val), order.end());
    std::vector<int> train_labels, val_labels;
    for (int i : train_idx) train_labels.push_back(data.labels[static_cast<std::size_t>(i)]);
    for (int i : val_idx) val_labels.push_back(data.labels[static_cast<std::size_t>(i)]);
    std::vector<Tensor> train_patches, val_patches;
    for (int i : train_idx) train_patches.push_back(patches[static_cast<std::size_t>(i)]);
    for (int i : val_idx) val_patches.push_back(patches[static_cast<std::size_t>(i)]);

    // Register optimizer slots once; tape leaves re-bind every step.
    AdamWConfig ocfg{hyper.lr, hyper.beta1, hyper.beta2, hyper.eps, hyper.weight_decay};
    std::vector<ParamRef> slots;
    {
        Tape probe;
        const ModelBinding mb = bind_model(probe, model, true);
        if (factors) {
            const FactorBinding fb = bind_factors(probe, *factors, true);
            slots = trainable_params(model, mb, factors, &fb).params;
        } else {
            slots = trainable_params(model, mb, factors, nullptr).params;
        }
    }
    AdamW opt(slots, ocfg);

    Rng shuffle_rng(Rng::derive(hyper.seed, kTagShuffle));
    std::vector<int> batch_order(train_patches.size());
    std::iota(batch_order.begin(), batch_order.end(), 0);

    int steps = 0;
    bool stop = false;
    for (int epoch = 0; epoch < hyper.epochs && !stop; ++epoch) {
        shuffle_indices(batch_order, shuffle_rng);
        double loss_sum = 0.0;
        int n_batches = 0;
        for (std::size_t at = 0; at < batch_order.size() && !stop;
             at += static_cast<std::size_t>(hyper.batch_size)) {
            const int count = static_cast<int>(std::min(
                static_cast<std::size_t>(hyper.batch_size), batch_order.size() - at));
            const Tensor batch = gather_batch(train_patches, batch_order,
                                              static_cast<int>(at), count);
            std::vector<int> labels;
            for (int b = 0; b < count; ++b)
                labels.push_back(
                    train_labels[static_cast<std::size_t>(batch_order[at + static_cast<std::size_t>(b)])]);

            Tape tape;
            const ModelBinding mb = bind_model(tape, model, true);
            FactorBinding fb;
            TrainableSet ts;
            int logits;
            if (factors) {
                fb = bind_factors(tape, *factors, true);
                ts = trainable_params(model, mb, factors, &fb);
                logits = vit_forward(tape, model, mb, batch, &fb, mask);
            } else {
                ts = trainable_params(model, mb, factors, nullptr);
                logits = vit_forward(tape, model, mb, batch, nullptr, mask);
            }
            const int loss = tape.cross_entropy_logits(logits, labels);
            const double loss_value = tape.value(loss)(0, 0);
            if (!std::isfinite(loss_value) || loss_value > kDivergenceLossLimit) {
                report.diverged = true;
                stop = true;
                break;
            }
            loss_sum += loss_value;
            ++n_batches;

            const auto grads = tape.backward(loss);
            std::vector<const Tensor*> aligned;
            for (int node : ts.nodes) aligned.push_back(&grads.at(node));
            opt.step(aligned);
            ++steps;
            if (hyper.max_steps > 0 && steps >= hyper.max_steps) stop = true;
        }
        if (n_batches > 0) {
            report.epoch_loss.push_back(loss_sum / n_batches);
            report.epoch_train_acc.push_back(
                evaluate(model, factors, mask, train_patches, train_labels, hyper.batch_size));
        }
    }

    report.steps = steps;
    report.final_train_acc =
        evaluate(model, factors, mask, train_patches, train_labels, hyper.batch_size);
    report.final_val_acc =
        val_patches.empty()
            ? report.final_train_acc
            : evaluate(model, factors, mask, val_patches, val_labels, hyper.batch_size);
    report.wall_ms = std::chrono::duration<double, std::milli>(
                         std::chrono::steady_clock::now() - t0)
                         .count();
    return report;
}

Factors make_factors(MethodKind kind, int d, int layers, int r1, int r2, double s, Rng& rng) {
    switch (kind) {
    case MethodKind::Efft1: return init_efft1(d, r1, r2, s, kFactorInitStd, rng);
    case MethodKind::Efft2: return init_efft2(d, r1, r2, s, s, kFactorInitStd, rng);
    case MethodKind::Lora: return init_lora(d, layers, r1, s, kFactorInitStd, rng);
    case MethodKind::FactTt: return init_fact_tt(d, layers, r1, r2, s, kFactorInitStd, rng);
    }
    throw ContractError("make_factors: unknown method kind");
}

SweepResult sweep(const ViTModel& pristine, const Dataset& data, MethodKind kind,
                  const std::vector<double>& scales, const std::vector<int>& ranks,
                  const TrainHyper& hyper, const TuningMask& mask) {
    if (scales.empty() || ranks.empty()) throw ContractError("sweep: empty grid");
    SweepResult result;
    int cell_index = 0;
    for (double s : scales) {
        for (int r : ranks) {
            SweepCell cell;
            cell.s = s;
            cell.rank = r;
            TrainHyper cell_hyper = hyper;
            cell_hyper.seed = Rng::derive(hyper.seed, 0x1000 + static_cast<std::uint64_t>(cell_index));
            ViTModel model = pristine;
            Rng frng(Rng::derive(cell_hyper.seed, 0xFAC7));
            std::optional<Factors> factors =
                make_factors(kind, model.cfg.d, model.cfg.layers, r, r, s, frng);
            try {
                cell.report = train(model, factors, mask, data, cell_hyper);
                cell.usable = !cell.report.diverged;
            } catch (const NumericError&) {
                cell.usable = false; // exploded mid-step; never selectable
            }
            result.cells.push_back(std::move(cell));
            ++cell_index;
        }
    }
    for (std::size_t i = 0; i < result.cells.size(); ++i) {
        const SweepCell& c = result.cells[i];
        if (!c.usable) continue;
        if (result.best < 0) {
            result.best = static_cast<int>(i);
            continue;
        }
        const SweepCell& b = result.cells[static_cast<std::size_t>(result.best)];
        const double ca = c.report.final_val_acc, ba = b.report.final_val_acc;
        if (ca > ba ||
            (ca == ba && (c.report.param_count < b.report.param_count ||
                          (c.report.param_count == b.report.param_count && c.s < b.s))))
            result.best = static_cast<int>(i);
    }
    if (result.best < 0) throw Error("sweep: every cell diverged");
    return result;
}

AblationResult ablation_run(const ViTModel& pristine, const Dataset& data, MethodKind kind, int r1,
                            int r2, double s, const std::vector<std::vector<int>>& layer_sets,
                            const std::vector<std::string>& block_choices,
                            const TrainHyper& hyper) {
    for (const auto& set : layer_sets)
        for (int l : set)
            if (l < 0 || l >= pristine.cfg.layers)
                throw ContractError("ablation: layer index out of range");

    auto run_cell = [&](const TuningMask& mask) {
        ViTModel model = pristine;
        Rng frng(Rng::derive(hyper.seed, 0xFAC7)); // identical init across cells
        std::optional<Factors> factors =
            make_factors(kind, model.cfg.d, model.cfg.layers, r1, r2, s, frng);
        return train(model, factors, mask, data, hyper);
    };

    AblationResult result;
    result.baseline = run_cell(TuningMask::all(pristine.cfg.layers));

    for (const auto& set : layer_sets) {
        for (const std::string& blocks : block_choices) {
            TuningMask mask;
            mask.layers.insert(set.begin(), set.end());
            if (blocks == "mhsa") {
                mask.mhsa = true;
            } else if (blocks == "ffn") {
                mask.ffn = true;
            } else if (blocks == "both") {
                mask.mhsa = mask.ffn = true;
            } else {
                throw ContractError("ablation: unknown block choice '" + blocks + "'");
            }
            AblationCell cell;
            cell.layer_set = set;
            cell.blocks = blocks;
            cell.report = run_cell(mask);
            cell.delta_pp =
                100.0 * (cell.report.final_val_acc - result.baseline.final_val_acc);
            result.cells.push_back(std::move(cell));
        }
    }
    return result;
}

} // namespace efft
