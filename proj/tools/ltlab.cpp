// Command-line laboratory for long-tailed training experiments: dataset
// synthesis, method presets, feature diagnostics, and numerical checks of
// the balancing theorems.

#include <CLI11.hpp>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "ltlab/config.hpp"
#include "ltlab/matrix_io.hpp"
#include "ltlab/metrics.hpp"
#include "ltlab/report.hpp"
#include "ltlab/theory.hpp"
#include "ltlab/trainer.hpp"

namespace fs = std::filesystem;
using namespace ltlab;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitNotApplicable = 3;

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw Error("cannot open " + path.string());
    out << text;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    write_text(path, j.dump(2) + "\n");
}

void require_writable(const fs::path& path, bool force) {
    if (fs::exists(path) && !force) {
        throw ConfigError("refusing to overwrite " + path.string() +
                          " (pass --force to allow)");
    }
}

std::string la_suffix(LaConfig::Kind kind) {
    switch (kind) {
        case LaConfig::Kind::None:
            return "none";
        case LaConfig::Kind::Additive:
            return "add";
        case LaConfig::Kind::Multiplicative:
            return "mult";
    }
    return "none";
}

int cmd_synth(const std::string& config_path, const std::string& out_override,
              bool force) {
    const ExperimentConfig config = load_experiment_config(config_path);
    const fs::path out_dir =
        out_override.empty() ? fs::path(config.output_dir) / "data" : fs::path(out_override);
    require_writable(out_dir / "manifest.json", force);
    fs::create_directories(out_dir);

    const PreparedData data = prepare_data(config.dataset);
    save_labeled_set(out_dir / "train", data.splits.train);
    save_labeled_set(out_dir / "val", data.splits.val);
    save_labeled_set(out_dir / "test", data.splits.test);

    nlohmann::json manifest;
    manifest["classes"] = data.splits.train.num_classes();
    manifest["dim"] = data.splits.train.dim();
    manifest["train_counts"] = data.splits.train.class_counts;
    manifest["val_counts"] = data.splits.val.class_counts;
    manifest["test_counts"] = data.splits.test.class_counts;
    manifest["group_many_min"] = data.groups.thresholds.many_min;
    manifest["group_few_max"] = data.groups.thresholds.few_max;
    manifest["files"] = {"train.ltmx", "train.json", "val.ltmx", "val.json",
                         "test.ltmx", "test.json"};
    write_json(out_dir / "manifest.json", manifest);
    std::cout << "wrote dataset to " << out_dir << "\n";
    return kExitOk;
}

struct SeedOutcome {
    std::uint64_t seed;
    RunArtifacts artifacts;
};

void write_seed_artifacts(const fs::path& dir, const SeedOutcome& outcome) {
    fs::create_directories(dir);
    save_checkpoint((dir / "checkpoint").string(), outcome.artifacts.net);

    nlohmann::json report = outcome.artifacts.report.to_json();
    report["seed"] = outcome.seed;
    report["applied_la"] = {{"kind", la_suffix(outcome.artifacts.applied_la.kind)},
                            {"param", outcome.artifacts.applied_la.param}};
    if (outcome.artifacts.chosen_fixed_gamma) {
        report["chosen_fixed_gamma"] = *outcome.artifacts.chosen_fixed_gamma;
    }
    write_json(dir / "report.json", report);

    std::ostringstream log;
    for (std::size_t s = 0; s < outcome.artifacts.stage_logs.size(); ++s) {
        for (const EpochLog& e : outcome.artifacts.stage_logs[s].epochs) {
            nlohmann::json line;
            line["stage"] = s;
            line["epoch"] = e.epoch;
            line["lr"] = e.lr;
            line["train_loss"] = e.train_loss;
            line["train_acc"] = e.train_acc;
            line["wall_ms"] = e.wall_ms;
            log << line.dump() << "\n";
        }
    }
    write_text(dir / "runlog.jsonl", log.str());

    if (outcome.artifacts.la_search) {
        write_text(dir / "la_search.csv", outcome.artifacts.la_search->to_csv());
    }
}

int cmd_train(const std::string& config_path, const std::vector<std::uint64_t>& seeds,
              const std::string& out_override, bool force, std::size_t workers) {
    ExperimentConfig config = load_experiment_config(config_path);
    if (!seeds.empty()) config.seeds = seeds;
    const fs::path out_root =
        out_override.empty() ? fs::path(config.output_dir) : fs::path(out_override);
    const std::string method_dir_name =
        config.method.preset + "_" + la_suffix(config.method.la);
    const fs::path method_dir = out_root / method_dir_name;
    require_writable(method_dir / "aggregate.json", force);
    fs::create_directories(method_dir);

    const PreparedData data = prepare_data(config.dataset);
    const NetSpec net_spec =
        config.net_spec(data.splits.train.dim(), data.splits.train.num_classes());
    const MethodPreset preset =
        make_preset(config.method.preset, config.method.params, config.method.la);
    const std::vector<SgdConfig> sgd = {config.method.stage1, config.method.stage2};

    std::vector<SeedOutcome> outcomes(config.seeds.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        while (true) {
            const std::size_t i = next.fetch_add(1);
            if (i >= config.seeds.size()) return;
            RngStream rng(config.seeds[i]);
            outcomes[i] = {config.seeds[i],
                           run_preset(preset, net_spec, data.splits, data.groups, sgd, rng)};
        }
    };
    if (workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < std::min(workers, config.seeds.size()); ++w)
            pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    // Per-seed artifacts and the mean +/- std aggregate, written in seed order.
    std::vector<double> train_fdr, test_fdr, many, medium, few, average;
    for (const SeedOutcome& outcome : outcomes) {
        write_seed_artifacts(method_dir / ("seed" + std::to_string(outcome.seed)),
                             outcome);
        train_fdr.push_back(outcome.artifacts.report.train_fdr.value_or(0.0));
        test_fdr.push_back(outcome.artifacts.report.test_fdr.value_or(0.0));
        many.push_back(outcome.artifacts.report.many);
        medium.push_back(outcome.artifacts.report.medium);
        few.push_back(outcome.artifacts.report.few);
        average.push_back(outcome.artifacts.report.average);
    }
    auto agg_json = [](const std::vector<double>& v) {
        const Aggregate a = aggregate(v);
        return nlohmann::json{{"mean", a.mean}, {"stddev", a.stddev}, {"n", a.n}};
    };
    nlohmann::json agg;
    agg["method"] = config.method.preset;
    agg["la"] = la_suffix(config.method.la);
    agg["seeds"] = config.seeds;
    agg["train_fdr"] = agg_json(train_fdr);
    agg["test_fdr"] = agg_json(test_fdr);
    agg["many"] = agg_json(many);
    agg["medium"] = agg_json(medium);
    agg["few"] = agg_json(few);
    agg["average"] = agg_json(average);
    write_json(method_dir / "aggregate.json", agg);
    std::cout << "wrote " << (method_dir / "aggregate.json") << "\n";
    return kExitOk;
}

int cmd_metrics(const std::string& checkpoint_stem, const std::string& data_stem,
                const std::string& out_dir_str, std::size_t probes,
                std::uint64_t seed, bool force) {
    const Network net = load_checkpoint(checkpoint_stem);
    const LabeledSet data = load_labeled_set(data_stem);
    const fs::path out_dir(out_dir_str);
    require_writable(out_dir / "summary.json", force);
    fs::create_directories(out_dir);

    const Matrix features = eval_features(net, data.x);
    const std::size_t classes = net.spec.classes;

    const double fdr_value = fdr(features, data.y, classes);
    RngStream cos_rng = RngStream(seed).substream(1);
    const CosineMatrix cos = cosine_matrix(features, data.y, classes, 10000, cos_rng);
    const std::vector<double> norms = mean_norms(features, data.y, classes);
    RngStream probe_rng = RngStream(seed).substream(2);
    const ProbeFdrSeries probe =
        random_probe_fdr(features, data.y, classes, probes, probe_rng);

    std::ostringstream cos_csv;
    for (std::size_t a = 0; a < classes; ++a) {
        for (std::size_t b = 0; b < classes; ++b) {
            if (b > 0) cos_csv << ",";
            cos_csv << format_full(cos.mean_cos(a, b));
        }
        cos_csv << "\n";
    }
    write_text(out_dir / "cosine.csv", cos_csv.str());

    std::ostringstream norms_csv;
    norms_csv << "class,mean_feature_norm\n";
    for (std::size_t k = 0; k < classes; ++k)
        norms_csv << k << "," << format_full(norms[k]) << "\n";
    write_text(out_dir / "norms.csv", norms_csv.str());

    std::ostringstream probe_csv;
    probe_csv << "probes,fdr,defined\n";
    for (std::size_t i = 0; i < probe.values.size(); ++i)
        probe_csv << i << "," << format_full(probe.values[i]) << ","
                  << (probe.defined[i] ? 1 : 0) << "\n";
    write_text(out_dir / "probe_fdr.csv", probe_csv.str());

    nlohmann::json summary;
    summary["fdr"] = fdr_value;
    summary["mean_offdiag_cos"] = mean_offdiag(cos);
    summary["zero_norm_excluded"] = cos.zero_norm_excluded;
    try {
        const BnStats bn = bn_stats(net);
        summary["bn"] = {{"gamma_mean", bn.gamma_mean},
                         {"gamma_std", bn.gamma_std},
                         {"beta_mean", bn.beta_mean},
                         {"beta_std", bn.beta_std},
                         {"parameter_count", bn.parameter_count}};
    } catch (const DimensionError&) {
        summary["bn"] = nullptr;  // model without BN layers
    }
    write_json(out_dir / "summary.json", summary);
    std::cout << "wrote metrics bundle to " << out_dir << "\n";
    return kExitOk;
}

int cmd_verify_lemma1(const std::string& out_dir_str, bool force) {
    const fs::path out_dir(out_dir_str);
    require_writable(out_dir / "lemma1.csv", force);
    fs::create_directories(out_dir);
    std::ostringstream csv;
    csv << "rho,classes,closed,direct,rel_err\n";
    double worst = 0.0;
    for (double rho : {2.0, 10.0, 100.0, 1000.0}) {
        for (std::size_t c : {2, 3, 10, 50, 100}) {
            const double closed = amhm_ratio(rho, c);
            const double direct = amhm_ratio_direct(rho, c);
            const double rel = std::fabs(closed - direct) / direct;
            worst = std::max(worst, rel);
            csv << format_full(rho) << "," << c << "," << format_full(closed) << ","
                << format_full(direct) << "," << format_full(rel) << "\n";
        }
    }
    write_text(out_dir / "lemma1.csv", csv.str());
    std::cout << "lemma1 worst relative error: " << worst << "\n";
    return worst <= 1e-12 ? kExitOk : kExitRuntime;
}

int cmd_verify_theorem1(const std::string& checkpoint_stem, const std::string& data_stem,
                        const std::string& out_dir_str, std::size_t max_pairs,
                        std::uint64_t seed, bool force) {
    const Network net = load_checkpoint(checkpoint_stem);
    const LabeledSet data = load_labeled_set(data_stem);
    const fs::path out_dir(out_dir_str);
    require_writable(out_dir / "theorem1.json", force);
    fs::create_directories(out_dir);

    RngStream rng(seed);
    const TheoremReport report = check_theorem1(net, data, max_pairs, &rng);
    write_json(out_dir / "theorem1.json", report.to_json());
    if (!report.applicable) {
        std::cout << "theorem1: premises not satisfied (not applicable)\n";
        return kExitNotApplicable;
    }
    std::cout << "theorem1: " << (report.holds ? "holds" : "VIOLATED") << "\n";
    return report.holds ? kExitOk : kExitRuntime;
}

int cmd_verify_theorem2(std::size_t classes, std::size_t dim,
                        const std::vector<double>& rhos, double lambda, double c0,
                        double gamma0, double offset_norm, std::uint64_t seed,
                        const std::string& out_dir_str, bool force) {
    const fs::path out_dir(out_dir_str);
    require_writable(out_dir / "theorem2.json", force);
    fs::create_directories(out_dir);

    NcSynthConfig base;
    base.classes = classes;
    base.dim = dim;
    base.c0 = c0;
    base.gamma0 = gamma0;
    if (offset_norm > 0.0) {
        RngStream offset_rng = RngStream(seed).substream(7);
        std::vector<double> v(dim);
        for (double& x : v) x = offset_rng.normal();
        const double n = norm2(v);
        for (double& x : v) x *= offset_norm / n;
        base.offset = v;
    }

    RngStream rng(seed);
    const std::vector<Theorem2Cell> cells = theorem2_sweep(base, rhos, lambda, rng);
    std::ostringstream csv;
    csv << "rho,classes,nbar_over_n,max_residual,offset_term,excess_scaled,"
           "max_wnorm_scaled,grad_norm,iterations\n";
    for (const Theorem2Cell& cell : cells) {
        csv << format_full(cell.rho) << "," << cell.classes << ","
            << format_full(cell.nbar_over_n) << "," << format_full(cell.max_residual)
            << "," << format_full(cell.offset_term) << ","
            << format_full(cell.excess_scaled) << ","
            << format_full(cell.max_wnorm_scaled) << "," << format_full(cell.grad_norm)
            << "," << cell.iterations << "\n";
    }
    write_text(out_dir / "theorem2_sweep.csv", csv.str());

    // Single-cell report at the last rho.
    NcSynthConfig last = base;
    last.rho = rhos.back();
    RngStream report_rng = rng.substream(0);
    const NcSynth synth = nc_synth(last, report_rng);
    const TheoremReport report =
        check_theorem2(synth.means, synth.counts, lambda);
    write_json(out_dir / "theorem2.json", report.to_json());
    if (!report.applicable) {
        std::cout << "theorem2: premises not satisfied (not applicable)\n";
        return kExitNotApplicable;
    }
    std::cout << "theorem2: " << (report.holds ? "holds" : "VIOLATED") << "\n";
    return report.holds ? kExitOk : kExitRuntime;
}

int cmd_report(const std::string& run_dir, const std::string& out_dir_str, bool force) {
    const std::vector<MethodRow> rows = collect_rows(run_dir);
    const fs::path out_dir = out_dir_str.empty() ? fs::path(run_dir) : fs::path(out_dir_str);
    require_writable(out_dir / "table.md", force);
    fs::create_directories(out_dir);
    write_text(out_dir / "table.md", rows_to_markdown(rows));
    write_text(out_dir / "table.csv", rows_to_csv(rows));
    std::cout << rows_to_markdown(rows);
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ltlab: long-tailed training laboratory"};
    app.require_subcommand(1);

    std::string config_path, out_dir, checkpoint_stem, data_stem, run_dir;
    bool force = false;
    std::size_t workers = 1;
    std::vector<std::uint64_t> seeds;
    std::uint64_t seed = 1;
    std::size_t probes = 3, max_pairs = 0;
    std::size_t classes = 50, dim = 64;
    std::vector<double> rhos = {50.0, 100.0, 200.0};
    double lambda = 0.1, c0 = 1.0, gamma0 = 0.0, offset_norm = 0.0;

    auto* synth = app.add_subcommand("synth", "generate dataset files");
    synth->add_option("--config", config_path)->required();
    synth->add_option("--out", out_dir);
    synth->add_flag("--force", force);

    auto* train = app.add_subcommand("train", "run a method preset");
    train->add_option("--config", config_path)->required();
    train->add_option("--seed", seeds, "override config seeds");
    train->add_option("--out", out_dir);
    train->add_option("--workers", workers);
    train->add_flag("--force", force);

    auto* metrics = app.add_subcommand("metrics", "feature diagnostics bundle");
    metrics->add_option("--checkpoint", checkpoint_stem)->required();
    metrics->add_option("--data", data_stem)->required();
    metrics->add_option("--out", out_dir)->required();
    metrics->add_option("--probes", probes);
    metrics->add_option("--seed", seed);
    metrics->add_flag("--force", force);

    auto* verify = app.add_subcommand("verify", "numerical theorem checks");
    verify->require_subcommand(1);
    auto* v_lemma1 = verify->add_subcommand("lemma1", "closed form vs direct sum");
    v_lemma1->add_option("--out", out_dir)->required();
    v_lemma1->add_flag("--force", force);
    auto* v_th1 = verify->add_subcommand("theorem1", "cone-effect bound");
    v_th1->add_option("--checkpoint", checkpoint_stem)->required();
    v_th1->add_option("--data", data_stem)->required();
    v_th1->add_option("--out", out_dir)->required();
    v_th1->add_option("--max-pairs", max_pairs, "0 = exhaustive");
    v_th1->add_option("--seed", seed);
    v_th1->add_flag("--force", force);
    auto* v_th2 = verify->add_subcommand("theorem2", "stationary-point residuals");
    v_th2->add_option("--classes", classes);
    v_th2->add_option("--dim", dim);
    v_th2->add_option("--rho", rhos);
    v_th2->add_option("--lambda", lambda);
    v_th2->add_option("--c0", c0);
    v_th2->add_option("--gamma0", gamma0);
    v_th2->add_option("--offset-norm", offset_norm);
    v_th2->add_option("--seed", seed);
    v_th2->add_option("--out", out_dir)->required();
    v_th2->add_flag("--force", force);

    auto* report = app.add_subcommand("report", "summary table from run artifacts");
    report->add_option("--run", run_dir)->required();
    report->add_option("--out", out_dir);
    report->add_flag("--force", force);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (synth->parsed()) return cmd_synth(config_path, out_dir, force);
        if (train->parsed()) return cmd_train(config_path, seeds, out_dir, force, workers);
        if (metrics->parsed()) {
            return cmd_metrics(checkpoint_stem, data_stem, out_dir, probes, seed, force);
        }
        if (verify->parsed()) {
            if (v_lemma1->parsed()) return cmd_verify_lemma1(out_dir, force);
            if (v_th1->parsed()) {
                return cmd_verify_theorem1(checkpoint_stem, data_stem, out_dir,
                                           max_pairs, seed, force);
            }
            if (v_th2->parsed()) {
                return cmd_verify_theorem2(classes, dim, rhos, lambda, c0, gamma0,
                                           offset_norm, seed, out_dir, force);
            }
        }
        if (report->parsed()) return cmd_report(run_dir, out_dir, force);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitUsage;
}
