#pragma once

#include <string>
#include <vector>

#include "kd/train.hpp"

namespace kd {

// One line of an experiment report: a (label, seed) result with the final
// loss-term breakdown. Aggregate rows use seed = "mean" / "std".
struct ReportRow {
    std::string label;
    std::string seed;
    double top1 = 0.0;
    double topk = 0.0;
    EpochTerms terms;
    double runtime_seconds = 0.0;  // JSON summary only; kept out of the CSV
                                   // so reruns stay byte-identical
};

// printf %.17g form of a double: 17 significant digits, enough for every
// emitted value to parse back bit-exactly.
std::string format_g17(double v);

std::string iso_utc_now();

// All CSV writers emit "# generated <timestamp>" as the first line; every
// later byte is a pure function of the data.
void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& metrics);
void write_terms_csv(const std::string& path, const std::vector<EpochTerms>& terms);
void write_trace_csv(const std::string& path, const WeightTrace& trace);
void write_report_csv(const std::string& path, const std::vector<ReportRow>& rows);

// Across-seed mean and sample standard deviation (n-1 denominator; 0 when a
// single seed) of top1/topk and each loss term.
ReportRow aggregate_mean(const std::vector<ReportRow>& rows, const std::string& label);
ReportRow aggregate_std(const std::vector<ReportRow>& rows, const std::string& label);

} // namespace kd
