#include "efft/report.hpp"

#include <cstdio>
#include <ostream>

namespace efft {

namespace {

std::string fmt(const char* f, double v) {
    char buf[48];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

std::string layer_set_text(const std::vector<int>& layers) {
    std::string out;
    for (int l : layers) {
        if (!out.empty()) out += '+';
        out += std::to_string(l);
    }
    return out.empty() ? "none" : out;
}

} // namespace

std::string report_csv_row(const RunReport& r) {
    std::string row = r.method;
    row += ',' + std::to_string(r.d);
    row += ',' + std::to_string(r.layers);
    row += ',' + std::to_string(r.r1);
    row += ',' + std::to_string(r.r2);
    row += ',' + fmt("%.17g", r.s);
    row += ',' + r.mask_desc;
    row += ',' + std::to_string(r.seed);
    row += ',' + std::to_string(r.param_count);
    row += ',' + fmt("%.6f", r.final_train_acc);
    row += ',' + fmt("%.6f", r.final_val_acc);
    row += ',' + std::to_string(r.steps);
    row += ',' + fmt("%.3f", r.wall_ms);
    return row;
}

void write_report_csv(std::ostream& out, const std::vector<RunReport>& reports) {
    out << kReportCsvHeader << '\n';
    for (const RunReport& r : reports) out << report_csv_row(r) << '\n';
}

void write_curve_csv(std::ostream& out, const RunReport& r) {
    out << "epoch,train_loss,train_acc\n";
    for (std::size_t e = 0; e < r.epoch_loss.size(); ++e)
        out << e << ',' << fmt("%.9f", r.epoch_loss[e]) << ','
            << fmt("%.6f", r.epoch_train_acc[e]) << '\n';
}

void write_sweep_csv(std::ostream& out, const SweepResult& sweep) {
    out << kReportCsvHeader << '\n';
    for (const SweepCell& c : sweep.cells) {
        if (c.usable) {
            out << report_csv_row(c.report) << '\n';
        } else {
            RunReport r = c.report;
            r.method = r.method.empty() ? "(aborted)" : r.method + "(aborted)";
            out << report_csv_row(r) << '\n';
        }
    }
}

void write_ablation_csv(std::ostream& out, const AblationResult& ablation) {
    out << "layers,blocks,val_acc,delta_pp\n";
    out << "all,both," << fmt("%.6f", ablation.baseline.final_val_acc) << ",0.00\n";
    for (const AblationCell& c : ablation.cells)
        out << layer_set_text(c.layer_set) << ',' << c.blocks << ','
            << fmt("%.6f", c.report.final_val_acc) << ',' << fmt("%.2f", c.delta_pp) << '\n';
}

} // namespace efft
