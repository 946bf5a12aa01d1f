#pragma once

#include <iosfwd>

#include "efft/train.hpp"

namespace efft {

/// One row per run/cell. wall_ms is the last column so determinism checks
/// can strip exactly one field.
inline constexpr const char* kReportCsvHeader =
    "method,d,L,r1,r2,s,mask,seed,params,train_acc,val_acc,steps,wall_ms";

std::string report_csv_row(const RunReport& r);
void write_report_csv(std::ostream& out, const std::vector<RunReport>& reports);
void write_curve_csv(std::ostream& out, const RunReport& r);
void write_sweep_csv(std::ostream& out, const SweepResult& sweep);
void write_ablation_csv(std::ostream& out, const AblationResult& ablation);

} // namespace efft
