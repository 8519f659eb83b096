#include "kd/report.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>

#include "kd/error.hpp"

namespace kd {

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream os(path);
    if (!os) throw Error("cannot open output file: " + path);
    return os;
}

void finish_out(std::ofstream& os, const std::string& path) {
    os.flush();
    if (!os) throw Error("write failure on output file: " + path);
}

double mean_of(const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) acc += x;
    return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double acc = 0.0;
    for (double x : v) acc += (x - m) * (x - m);
    return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

} // namespace

std::string format_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string iso_utc_now() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& metrics) {
    std::ofstream os = open_out(path);
    os << "# generated " << iso_utc_now() << "\n";
    os << "epoch,split,top1,topk,mean_loss,clamp_events\n";
    for (const MetricsRecord& m : metrics) {
        os << m.epoch << "," << m.split << "," << format_g17(m.top1) << ","
           << format_g17(m.topk) << "," << format_g17(m.mean_loss) << "," << m.clamp_events
           << "\n";
    }
    finish_out(os, path);
}

void write_terms_csv(const std::string& path, const std::vector<EpochTerms>& terms) {
    std::ofstream os = open_out(path);
    os << "# generated " << iso_utc_now() << "\n";
    os << "epoch,ce,soft,distributed,kd,weighted,total\n";
    for (const EpochTerms& t : terms) {
        os << t.epoch << "," << format_g17(t.ce) << "," << format_g17(t.soft) << ","
           << format_g17(t.distributed) << "," << format_g17(t.kd) << ","
           << format_g17(t.weighted) << "," << format_g17(t.total) << "\n";
    }
    finish_out(os, path);
}

void write_trace_csv(const std::string& path, const WeightTrace& trace) {
    std::ofstream os = open_out(path);
    os << "# generated " << iso_utc_now() << "\n";
    os << "epoch,sample_id,s_t,v_t,batch_mean_st";
    for (WeightStrategy s : kSmoothingStrategies) os << ",w_" << strategy_name(s);
    os << "\n";
    for (const WeightTracePoint& p : trace.points) {
        os << p.epoch << "," << p.sample_id << "," << format_g17(p.s_t) << ","
           << format_g17(p.v_t) << "," << format_g17(p.batch_mean_st);
        for (double w : p.w) os << "," << format_g17(w);
        os << "\n";
    }
    finish_out(os, path);
}

void write_report_csv(const std::string& path, const std::vector<ReportRow>& rows) {
    std::ofstream os = open_out(path);
    os << "# generated " << iso_utc_now() << "\n";
    os << "label,seed,top1,topk,term_ce,term_soft,term_distributed,term_kd,term_weighted,"
          "term_total\n";
    for (const ReportRow& r : rows) {
        os << r.label << "," << r.seed << "," << format_g17(r.top1) << ","
           << format_g17(r.topk) << "," << format_g17(r.terms.ce) << ","
           << format_g17(r.terms.soft) << "," << format_g17(r.terms.distributed) << ","
           << format_g17(r.terms.kd) << "," << format_g17(r.terms.weighted) << ","
           << format_g17(r.terms.total) << "\n";
    }
    finish_out(os, path);
}

namespace {

ReportRow aggregate_with(const std::vector<ReportRow>& rows, const std::string& label,
                         const std::string& seed_tag, double (*reduce)(const std::vector<double>&)) {
    if (rows.empty()) throw InvalidInputError("aggregate: no rows");
    ReportRow out;
    out.label = label;
    out.seed = seed_tag;
    const auto collect = [&](auto field) {
        std::vector<double> values;
        values.reserve(rows.size());
        for (const ReportRow& r : rows) values.push_back(field(r));
        return reduce(values);
    };
    out.top1 = collect([](const ReportRow& r) { return r.top1; });
    out.topk = collect([](const ReportRow& r) { return r.topk; });
    out.terms.ce = collect([](const ReportRow& r) { return r.terms.ce; });
    out.terms.soft = collect([](const ReportRow& r) { return r.terms.soft; });
    out.terms.distributed = collect([](const ReportRow& r) { return r.terms.distributed; });
    out.terms.kd = collect([](const ReportRow& r) { return r.terms.kd; });
    out.terms.weighted = collect([](const ReportRow& r) { return r.terms.weighted; });
    out.terms.total = collect([](const ReportRow& r) { return r.terms.total; });
    out.runtime_seconds = collect([](const ReportRow& r) { return r.runtime_seconds; });
    return out;
}

} // namespace

ReportRow aggregate_mean(const std::vector<ReportRow>& rows, const std::string& label) {
    return aggregate_with(rows, label, "mean", &mean_of);
}

ReportRow aggregate_std(const std::vector<ReportRow>& rows, const std::string& label) {
    return aggregate_with(rows, label, "std", &sample_std);
}

} // namespace kd
