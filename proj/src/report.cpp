#include "ltlab/report.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "ltlab/error.hpp"

namespace ltlab {

Aggregate aggregate(const std::vector<double>& values) {
    Aggregate agg;
    agg.n = values.size();
    if (values.empty()) return agg;
    double sum = 0.0;
    for (double v : values) sum += v;
    agg.mean = sum / static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - agg.mean) * (v - agg.mean);
    agg.stddev = std::sqrt(var / static_cast<double>(values.size()));
    return agg;
}

std::vector<std::pair<std::string, std::string>> report_row_order() {
    // Fixed ablation ordering: CE, CB, WD (x LA), WB, WD&ETF (x LA), WD&FR&ETF (x LA),
    // then the restricted-WD variants.
    std::vector<std::pair<std::string, std::string>> order;
    order.emplace_back("ce", "none");
    order.emplace_back("cb", "none");
    for (const char* la : {"none", "add", "mult"}) order.emplace_back("wd", la);
    order.emplace_back("wb", "none");
    order.emplace_back("wb_renorm", "none");
    for (const char* la : {"none", "add", "mult"}) order.emplace_back("wd_etf", la);
    for (const char* la : {"none", "add", "mult"}) order.emplace_back("wd_fr_etf", la);
    for (const char* la : {"none", "add", "mult"}) order.emplace_back("wd_wo_bn", la);
    for (const char* la : {"none", "add", "mult"}) order.emplace_back("wd_fixed_bn", la);
    return order;
}

std::vector<MethodRow> collect_rows(const std::filesystem::path& run_dir) {
    std::vector<MethodRow> rows;
    std::vector<std::string> missing;
    for (const auto& [method, la] : report_row_order()) {
        const std::filesystem::path agg_path =
            run_dir / (method + "_" + la) / "aggregate.json";
        if (!std::filesystem::exists(agg_path)) {
            missing.push_back(agg_path.string());
            continue;
        }
        std::ifstream in(agg_path);
        nlohmann::json j = nlohmann::json::parse(in);
        auto read = [&](const std::string& key) {
            Aggregate a;
            a.mean = j.at(key).at("mean").get<double>();
            a.stddev = j.at(key).at("stddev").get<double>();
            a.n = j.at(key).at("n").get<std::size_t>();
            return a;
        };
        rows.push_back({method, la, read("train_fdr"), read("test_fdr"), read("many"),
                        read("medium"), read("few"), read("average")});
    }
    if (rows.empty()) {
        std::string msg = "no run artifacts found; expected any of:";
        for (const std::string& m : missing) msg += "\n  " + m;
        throw Error(msg);
    }
    return rows;
}

namespace {

std::string mean_std(const Aggregate& a, int precision = 4) {
    std::ostringstream out;
    out.precision(precision);
    out << a.mean << " ± " << a.stddev;
    return out.str();
}

}  // namespace

std::string rows_to_markdown(const std::vector<MethodRow>& rows) {
    std::ostringstream out;
    out << "| Method | LA | FDR train | FDR test | Many | Medium | Few | Average |\n";
    out << "|---|---|---|---|---|---|---|---|\n";
    for (const MethodRow& r : rows) {
        out << "| " << r.method << " | " << r.la << " | " << mean_std(r.train_fdr)
            << " | " << mean_std(r.test_fdr) << " | " << mean_std(r.many) << " | "
            << mean_std(r.medium) << " | " << mean_std(r.few) << " | "
            << mean_std(r.average) << " |\n";
    }
    return out.str();
}

std::string rows_to_csv(const std::vector<MethodRow>& rows) {
    std::ostringstream out;
    out << "method,la,train_fdr_mean,train_fdr_std,test_fdr_mean,test_fdr_std,"
           "many_mean,many_std,medium_mean,medium_std,few_mean,few_std,"
           "average_mean,average_std,seeds\n";
    for (const MethodRow& r : rows) {
        out << r.method << "," << r.la << "," << format_full(r.train_fdr.mean) << ","
            << format_full(r.train_fdr.stddev) << "," << format_full(r.test_fdr.mean)
            << "," << format_full(r.test_fdr.stddev) << "," << format_full(r.many.mean)
            << "," << format_full(r.many.stddev) << "," << format_full(r.medium.mean)
            << "," << format_full(r.medium.stddev) << "," << format_full(r.few.mean)
            << "," << format_full(r.few.stddev) << "," << format_full(r.average.mean)
            << "," << format_full(r.average.stddev) << "," << r.average.n << "\n";
    }
    return out.str();
}

std::string format_full(double v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
}

}  // namespace ltlab
