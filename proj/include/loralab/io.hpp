#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>

#include "loralab/error.hpp"
#include "loralab/theory.hpp"
#include "loralab/training.hpp"

namespace loralab {

// Shortest round-trip decimal form; identical bytes for identical doubles.
inline std::string fmt(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::string fmt(std::uint64_t v) { return std::to_string(v); }
inline std::string fmt(int v) { return std::to_string(v); }

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open " + path.string() + " for writing");
    out << content;
    if (!out) throw io_error("write failed for " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

// ---- CSV schemas (documented in the README; pinned by golden tests) ----

// Timing varies run to run, so the wall_ms column is written as 0: a fixed
// seed must reproduce every output file byte for byte. Measured epoch times
// go to the console instead.
inline std::string run_record_csv(const RunRecord& record) {
    std::string out = "epoch,train_loss,test_loss,train_acc,test_acc,ece,wall_ms\n";
    for (const EpochRow& row : record.rows) {
        out += fmt(row.epoch) + ',' + fmt(row.train_loss) + ',' + fmt(row.test_loss) + ',' +
               fmt(row.train_acc) + ',' + fmt(row.test_acc) + ',' + fmt(row.ece) + ",0\n";
    }
    return out;
}

inline std::string sweep_csv(const GapSweepRecord& record) {
    std::string out = "p,seed,train_loss,test_loss,gap,train_acc,test_acc,ece,diverged\n";
    for (const SweepRow& row : record.rows) {
        out += fmt(row.p) + ',' + fmt(row.seed) + ',' + fmt(row.train_loss) + ',' +
               fmt(row.test_loss) + ',' + fmt(row.gap) + ',' + fmt(row.train_acc) + ',' +
               fmt(row.test_acc) + ',' + fmt(row.ece) + ',' + (row.diverged ? "1" : "0") + '\n';
    }
    return out;
}

inline std::string jensen_csv(const std::vector<JensenReport>& reports) {
    std::string out = "trial,domain,ensemble_loss,mean_instance_loss,gap\n";
    for (const JensenReport& report : reports)
        for (std::size_t t = 0; t < report.rows.size(); ++t) {
            const JensenRow& row = report.rows[t];
            out += fmt(static_cast<int>(t)) + ',' + to_string(report.domain) + ',' +
                   fmt(row.ensemble_loss) + ',' + fmt(row.mean_instance_loss) + ',' +
                   fmt(row.gap) + '\n';
        }
    return out;
}

inline std::string stability_csv(const std::vector<StabilityReport>& reports) {
    std::string out = "lambda,index,perturbation,beta_bound\n";
    for (const StabilityReport& report : reports)
        for (const StabilitySample& s : report.samples)
            out += fmt(report.lambda) + ',' + fmt(s.index) + ',' + fmt(s.perturbation) + ',' +
                   fmt(report.beta_bound) + '\n';
    return out;
}

inline std::string mcnorm_csv(const std::vector<McNormReport>& reports) {
    std::string out = "p,draws,mc_estimate,closed_form,rel_error,standard_error\n";
    for (const McNormReport& r : reports)
        out += fmt(r.p) + ',' + fmt(static_cast<std::uint64_t>(r.draws)) + ',' +
               fmt(r.mc_estimate) + ',' + fmt(r.closed_form) + ',' + fmt(r.rel_error) + ',' +
               fmt(r.standard_error) + '\n';
    return out;
}

}  // namespace loralab
