#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ltlab/config.hpp"
#include "ltlab/report.hpp"

using namespace ltlab;
namespace fs = std::filesystem;

namespace {

const fs::path kWorkDir = fs::temp_directory_path() / "ltlab_cli_test";

int run_cli(const std::string& args) {
    const std::string cmd =
        std::string(LTLAB_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

fs::path write_config(const std::string& name, const nlohmann::json& j) {
    fs::create_directories(kWorkDir);
    const fs::path path = kWorkDir / name;
    std::ofstream out(path);
    out << j.dump(2);
    return path;
}

nlohmann::json base_config(const fs::path& out_dir) {
    return {
        {"dataset",
         {{"kind", "synthetic"},
          {"classes", 3},
          {"head_count", 100},
          {"imbalance", 100.0},
          {"dim", 6},
          {"separation", 6.0},
          {"cov_scale", 1.0},
          {"val_per_class", 10},
          {"test_per_class", 20},
          {"data_seed", 5}}},
        {"model", {{"arch", "mlp"}, {"blocks", 1}, {"width", 6}}},
        {"method",
         {{"preset", "ce"},
          {"la", "none"},
          {"stage1", {{"lr0", 0.05}, {"epochs", 2}, {"batch_size", 16}}}}},
        {"seeds", {1, 2}},
        {"output_dir", out_dir.string()},
    };
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("config schema rejects unknown keys and bad values") {
    nlohmann::json good = base_config(kWorkDir / "out");
    CHECK_NOTHROW(parse_experiment_config(good));

    nlohmann::json bad = good;
    bad["dataset"]["typo_key"] = 1;
    CHECK_THROWS_AS(parse_experiment_config(bad), ConfigError);

    nlohmann::json bad2 = good;
    bad2["method"]["preset"] = "not_a_preset";
    CHECK_THROWS_AS(parse_experiment_config(bad2), ConfigError);

    nlohmann::json bad3 = good;
    bad3["method"]["stage1"]["momentum"] = 1.5;
    CHECK_THROWS_AS(parse_experiment_config(bad3), ConfigError);

    nlohmann::json bad4 = good;
    bad4["seeds"] = nlohmann::json::array();
    CHECK_THROWS_AS(parse_experiment_config(bad4), ConfigError);
}

TEST_CASE("prepare_data: synthetic profile and grouping") {
    nlohmann::json j = base_config(kWorkDir / "out");
    const ExperimentConfig config = parse_experiment_config(j);
    const PreparedData data = prepare_data(config.dataset);
    CHECK(data.splits.train.class_counts == std::vector<std::size_t>{100, 10, 1});
    CHECK(data.splits.val.class_counts == std::vector<std::size_t>{10, 10, 10});
    CHECK(data.groups.group_of.size() == 3);
}

TEST_CASE("cli synth: determinism, force flag, manifest counts") {
    fs::remove_all(kWorkDir / "synth_a");
    fs::remove_all(kWorkDir / "synth_b");
    const fs::path config = write_config("synth.json", base_config(kWorkDir / "run"));

    CHECK(run_cli("synth --config " + config.string() + " --out " +
                  (kWorkDir / "synth_a").string()) == 0);
    // Refuses to overwrite without --force.
    CHECK(run_cli("synth --config " + config.string() + " --out " +
                  (kWorkDir / "synth_a").string()) != 0);
    CHECK(run_cli("synth --config " + config.string() + " --out " +
                  (kWorkDir / "synth_b").string()) == 0);

    CHECK(slurp(kWorkDir / "synth_a" / "train.ltmx") ==
          slurp(kWorkDir / "synth_b" / "train.ltmx"));
    CHECK(slurp(kWorkDir / "synth_a" / "manifest.json") ==
          slurp(kWorkDir / "synth_b" / "manifest.json"));

    std::ifstream in(kWorkDir / "synth_a" / "manifest.json");
    const nlohmann::json manifest = nlohmann::json::parse(in);
    CHECK(manifest.at("train_counts") == nlohmann::json({100, 10, 1}));

    // rho = 1 gives balanced manifest counts.
    nlohmann::json balanced = base_config(kWorkDir / "run");
    balanced["dataset"]["imbalance"] = 1.0;
    const fs::path bconfig = write_config("synth_balanced.json", balanced);
    fs::remove_all(kWorkDir / "synth_c");
    CHECK(run_cli("synth --config " + bconfig.string() + " --out " +
                  (kWorkDir / "synth_c").string()) == 0);
    std::ifstream bin(kWorkDir / "synth_c" / "manifest.json");
    const nlohmann::json bmanifest = nlohmann::json::parse(bin);
    CHECK(bmanifest.at("train_counts") == nlohmann::json({100, 100, 100}));
}

TEST_CASE("cli train: smoke run, artifacts, aggregate, byte determinism") {
    const fs::path out = kWorkDir / "train_run";
    fs::remove_all(out);
    const fs::path config = write_config("train.json", base_config(out));

    CHECK(run_cli("train --config " + config.string()) == 0);
    const fs::path method_dir = out / "ce_none";
    CHECK(fs::exists(method_dir / "seed1" / "checkpoint.ckpt.bin"));
    CHECK(fs::exists(method_dir / "seed1" / "report.json"));
    CHECK(fs::exists(method_dir / "seed1" / "runlog.jsonl"));
    CHECK(fs::exists(method_dir / "aggregate.json"));

    const std::string report_before = slurp(method_dir / "seed1" / "report.json");
    const std::string ckpt_before = slurp(method_dir / "seed1" / "checkpoint.ckpt.bin");
    const std::string agg_before = slurp(method_dir / "aggregate.json");

    // Without --force the rerun is refused; with it, outputs are identical.
    CHECK(run_cli("train --config " + config.string()) != 0);
    CHECK(run_cli("train --config " + config.string() + " --force") == 0);
    CHECK(slurp(method_dir / "seed1" / "report.json") == report_before);
    CHECK(slurp(method_dir / "seed1" / "checkpoint.ckpt.bin") == ckpt_before);
    CHECK(slurp(method_dir / "aggregate.json") == agg_before);

    // Invalid preset: usage error (exit 1).
    nlohmann::json bad = base_config(out);
    bad["method"]["preset"] = "bogus";
    const fs::path bad_config = write_config("train_bad.json", bad);
    CHECK(run_cli("train --config " + bad_config.string() + " --force") == 1);
}

TEST_CASE("cli metrics bundle") {
    const fs::path out = kWorkDir / "train_run";  // from the previous case
    const fs::path data_dir = kWorkDir / "metrics_data";
    fs::remove_all(data_dir);
    const fs::path config = write_config("metrics.json", base_config(out));
    REQUIRE(run_cli("synth --config " + config.string() + " --out " +
                    data_dir.string()) == 0);

    const fs::path bundle = kWorkDir / "metrics_out";
    fs::remove_all(bundle);
    CHECK(run_cli("metrics --checkpoint " +
                  (out / "ce_none" / "seed1" / "checkpoint").string() + " --data " +
                  (data_dir / "train").string() + " --out " + bundle.string()) == 0);
    CHECK(fs::exists(bundle / "summary.json"));
    CHECK(fs::exists(bundle / "cosine.csv"));
    CHECK(fs::exists(bundle / "norms.csv"));
    CHECK(fs::exists(bundle / "probe_fdr.csv"));
}

TEST_CASE("cli verify: lemma1 passes, theorem1 distinguishes not-applicable") {
    const fs::path out = kWorkDir / "verify_out";
    fs::remove_all(out);
    CHECK(run_cli("verify lemma1 --out " + out.string()) == 0);
    CHECK(fs::exists(out / "lemma1.csv"));

    // A freshly trained CE checkpoint has no ETF head: premises fail and the
    // exit code is the dedicated not-applicable value 3.
    const fs::path train_out = kWorkDir / "train_run";
    const fs::path data_dir = kWorkDir / "metrics_data";
    const int code = run_cli(
        "verify theorem1 --checkpoint " +
        (train_out / "ce_none" / "seed1" / "checkpoint").string() + " --data " +
        (data_dir / "train").string() + " --out " + out.string() + " --force");
    CHECK(code == 3);
    CHECK(fs::exists(out / "theorem1.json"));
}

TEST_CASE("cli verify theorem2 emits the sweep table") {
    const fs::path out = kWorkDir / "verify_th2";
    fs::remove_all(out);
    CHECK(run_cli("verify theorem2 --classes 10 --dim 16 --rho 20 --rho 40 "
                  "--lambda 0.1 --out " +
                  out.string()) == 0);
    CHECK(fs::exists(out / "theorem2_sweep.csv"));
    CHECK(fs::exists(out / "theorem2.json"));
    const std::string csv = slurp(out / "theorem2_sweep.csv");
    CHECK(csv.find("rho,classes,nbar_over_n,max_residual") == 0);
}

TEST_CASE("cli report: error on empty directory, table after runs") {
    const fs::path empty = kWorkDir / "empty_run";
    fs::create_directories(empty);
    CHECK(run_cli("report --run " + empty.string()) == 2);

    const fs::path out = kWorkDir / "train_run";
    CHECK(run_cli("report --run " + out.string() + " --force") == 0);
    CHECK(fs::exists(out / "table.md"));
    CHECK(fs::exists(out / "table.csv"));
    const std::string table = slurp(out / "table.md");
    CHECK(table.find("| ce | none |") != std::string::npos);
}

TEST_CASE("worker fan-out reproduces the single-worker bytes") {
    const fs::path out1 = kWorkDir / "train_w1";
    const fs::path out2 = kWorkDir / "train_w2";
    fs::remove_all(out1);
    fs::remove_all(out2);
    nlohmann::json j = base_config(out1);
    const fs::path c1 = write_config("train_w1.json", j);
    j["output_dir"] = out2.string();
    const fs::path c2 = write_config("train_w2.json", j);

    CHECK(run_cli("train --config " + c1.string() + " --workers 1") == 0);
    CHECK(run_cli("train --config " + c2.string() + " --workers 2") == 0);
    CHECK(slurp(out1 / "ce_none" / "aggregate.json") ==
          slurp(out2 / "ce_none" / "aggregate.json"));
    CHECK(slurp(out1 / "ce_none" / "seed2" / "checkpoint.ckpt.bin") ==
          slurp(out2 / "ce_none" / "seed2" / "checkpoint.ckpt.bin"));
}

TEST_CASE("report row order follows the ablation-table order") {
    const auto order = report_row_order();
    REQUIRE(order.size() >= 10);
    CHECK(order[0] == std::pair<std::string, std::string>{"ce", "none"});
    CHECK(order[1] == std::pair<std::string, std::string>{"cb", "none"});
    CHECK(order[2].first == "wd");
    // WD & ETF rows precede WD & FR & ETF rows; restricted-WD variants last.
    std::size_t etf = 0, fr_etf = 0, wo_bn = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        if (order[i].first == "wd_etf" && etf == 0) etf = i;
        if (order[i].first == "wd_fr_etf" && fr_etf == 0) fr_etf = i;
        if (order[i].first == "wd_wo_bn" && wo_bn == 0) wo_bn = i;
    }
    CHECK(etf < fr_etf);
    CHECK(fr_etf < wo_bn);
}

TEST_CASE("aggregate math") {
    const Aggregate a = aggregate({1.0, 2.0, 3.0, 4.0});
    CHECK(a.mean == doctest::Approx(2.5));
    CHECK(a.stddev == doctest::Approx(std::sqrt(1.25)));
    CHECK(a.n == 4);
}
