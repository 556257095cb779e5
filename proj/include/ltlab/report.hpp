#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace ltlab {

/// Mean and population standard deviation over per-seed values.
struct Aggregate {
    double mean = 0.0;
    double stddev = 0.0;
    std::size_t n = 0;
};
Aggregate aggregate(const std::vector<double>& values);

struct MethodRow {
    std::string method;
    std::string la;
    Aggregate train_fdr, test_fdr, many, medium, few, average;
};

/// Fixed row order used in the summary table.
std::vector<std::pair<std::string, std::string>> report_row_order();

/// Scans `run_dir` for <preset>_<la>/aggregate.json files; throws with the
/// list of expected artifacts when nothing is found.
std::vector<MethodRow> collect_rows(const std::filesystem::path& run_dir);

std::string rows_to_markdown(const std::vector<MethodRow>& rows);
std::string rows_to_csv(const std::vector<MethodRow>& rows);

/// Full-precision decimal formatting (17 significant digits).
std::string format_full(double v);

}  // namespace ltlab
