#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ltlab/classifier.hpp"
#include "ltlab/dataset.hpp"
#include "ltlab/losses.hpp"
#include "ltlab/network.hpp"

namespace ltlab {

/// lr0 * (1 + cos(pi t / T)) / 2 — the cosine schedule from lr0 down to 0.
double cosine_lr(double lr0, std::size_t t, std::size_t total);

struct SgdConfig {
    double lr0 = 0.05;
    double momentum = 0.9;
    std::size_t batch_size = 32;
    std::size_t epochs = 40;
    std::uint64_t seed = 0;  ///< keys the shuffle substream
};

enum class TrainScope { WholeModel, HeadOnly, ExtractorOnly };
enum class LossKind { Ce, Cb };
enum class HeadPolicy { Learned, EtfFixed };

struct StageSpec {
    TrainScope scope = TrainScope::WholeModel;
    LossKind loss = LossKind::Ce;
    double lambda_wd = 0.0;
    WdSubset wd_subset = WdSubset::All;
    double zeta_fr = 0.0;
    std::optional<std::vector<double>> maxnorm_caps;  ///< per-class head caps
    std::optional<double> fixed_gamma;  ///< fixes BN gamma, freezes beta at 0
    HeadPolicy head_policy = HeadPolicy::Learned;
    std::uint64_t etf_seed = 1;
    double etf_energy = 1.0;
    EtfBasis etf_basis = EtfBasis::GaussianQr;
    bool renormalize_head_before = false;  ///< one-time renormalize-to-1
};

struct EpochLog {
    std::size_t epoch;
    double lr;
    double train_loss;  ///< full objective (data loss + penalties)
    double train_acc;   ///< each sample's correctness when presented
    double wall_ms;
    std::vector<std::uint8_t> correctness;  ///< indexed by sample id
};

struct StageResult {
    std::vector<EpochLog> epochs;
};

/// Mini-batch SGD with momentum over one stage. Head-only stages freeze the
/// extractor and its running statistics, training the head on features
/// computed once in eval mode. MaxNorm caps, when present, are applied to
/// the head after every step.
StageResult train_stage(Network& net, const LabeledSet& train, const StageSpec& stage,
                        const SgdConfig& sgd, RngStream& rng);

struct EvalReport {
    std::vector<double> per_class_acc;
    double many = 0.0, medium = 0.0, few = 0.0;
    double average = 0.0;  ///< unweighted mean of per-class accuracies
    std::optional<double> train_fdr;
    std::optional<double> test_fdr;

    nlohmann::json to_json() const;
};

/// Eval-mode accuracy report; argmax ties break toward the lowest class
/// index. An additive LA config adjusts logits at prediction time; a
/// multiplicative config rescales a copy of the head.
EvalReport evaluate(const Network& net, const LabeledSet& test,
                    const GroupAssignment& groups, LaConfig la = {},
                    const ClassPriors* priors = nullptr);

struct MethodPreset {
    std::string name;
    std::vector<StageSpec> stages;
    LaConfig::Kind post_hoc = LaConfig::Kind::None;
    std::vector<double> fixed_gamma_grid;  ///< non-empty => search fixed BN gamma
};

/// Desk-scale hyperparameters shared by the preset builders.
struct PresetParams {
    double lambda1 = 0.01;   ///< stage-1 weight decay
    double lambda2 = 0.1;    ///< stage-2 weight decay
    double zeta = 0.01;      ///< feature regularization
    double maxnorm_eta = 1.0;
    std::uint64_t etf_seed = 1;
    double etf_energy = 1.0;
    EtfBasis etf_basis = EtfBasis::GaussianQr;
    std::vector<double> fixed_gamma_grid = {0.02, 0.05, 0.10, 0.20};
};

/// Known presets: ce, cb, wd, wb, wb_renorm, wd_etf, wd_fr_etf, wd_wo_bn,
/// wd_fixed_bn. Throws ConfigError for anything else.
MethodPreset make_preset(const std::string& name, const PresetParams& params = {},
                         LaConfig::Kind post_hoc = LaConfig::Kind::None);

std::vector<std::string> preset_names();

struct RunArtifacts {
    Network net;
    EvalReport report;
    std::vector<StageResult> stage_logs;
    LaConfig applied_la;
    std::optional<GridSearchResult> la_search;
    std::optional<double> chosen_fixed_gamma;
};

/// Executes the preset's stages in order on a freshly initialized network,
/// grid-searches the post-hoc LA on the validation split when configured,
/// and evaluates on the balanced test split (with train/test FDR filled in).
RunArtifacts run_preset(const MethodPreset& preset, const NetSpec& net_spec,
                        const SynthSplits& data, const GroupAssignment& groups,
                        const std::vector<SgdConfig>& sgd_per_stage, RngStream& rng);

}  // namespace ltlab
