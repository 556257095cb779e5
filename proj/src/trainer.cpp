#include "ltlab/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

#include "ltlab/metrics.hpp"

namespace ltlab {

double cosine_lr(double lr0, std::size_t t, std::size_t total) {
    if (total == 0) throw DimensionError("cosine_lr: total must be > 0");
    if (t > total) throw DimensionError("cosine_lr: t out of range");
    const double x = static_cast<double>(t) / static_cast<double>(total);
    return lr0 * (1.0 + std::cos(std::numbers::pi * x)) / 2.0;
}

namespace {

double now_ms() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double, std::milli>(clock::now().time_since_epoch())
        .count();
}

void apply_stage_policy(Network& net, const StageSpec& stage) {
    if (stage.head_policy == HeadPolicy::EtfFixed) {
        const Matrix etf =
            make_etf({net.feature_dim(), net.spec.classes, stage.etf_energy,
                      stage.etf_seed, stage.etf_basis});
        net.head.weight = etf.transposed();
        if (net.head.has_bias()) net.head.bias.assign(net.head.bias.size(), 0.0);
        net.head.trainable = false;
    } else {
        net.head.trainable = stage.scope != TrainScope::ExtractorOnly;
    }
    if (stage.renormalize_head_before) {
        net.head.weight =
            renormalize_columns(net.head.weight.transposed(), 1.0).transposed();
    }

    const bool blocks_trainable = stage.scope != TrainScope::HeadOnly;
    auto configure_bn = [&](BatchNormLayer& bn) {
        if (stage.fixed_gamma) {
            bn.fix_gamma(*stage.fixed_gamma);
            bn.beta.assign(bn.beta.size(), 0.0);
            bn.beta_trainable = false;
        } else {
            bn.gamma_trainable = blocks_trainable;
            bn.beta_trainable = blocks_trainable;
        }
    };
    for (MlpBlock& b : net.mlp_blocks) {
        b.linear.trainable = blocks_trainable;
        configure_bn(b.bn);
    }
    for (ResidualBlock& b : net.residual_blocks) {
        b.linear1.trainable = blocks_trainable;
        b.linear2.trainable = blocks_trainable;
        configure_bn(b.bn1);
        configure_bn(b.bn2);
    }
    if (stage.scope == TrainScope::HeadOnly) {
        net.head.trainable = stage.head_policy != HeadPolicy::EtfFixed;
    }
    net.bump_version();
}

LossResult data_loss(const Matrix& logits, std::span<const int> y,
                     const StageSpec& stage, const ClassWeights& cb_weights) {
    if (stage.loss == LossKind::Cb) return cb_loss(logits, y, cb_weights);
    return ce_loss(logits, y);
}

void project_head(Network& net, const std::vector<double>& caps) {
    net.head.weight =
        maxnorm_project(net.head.weight.transposed(), caps).transposed();
    net.bump_version();
}

struct MomentumState {
    std::vector<std::vector<double>> velocity;

    void ensure_like(const std::vector<std::vector<double>>& grads) {
        if (velocity.empty()) {
            velocity.resize(grads.size());
            for (std::size_t p = 0; p < grads.size(); ++p)
                velocity[p].assign(grads[p].size(), 0.0);
        }
    }
};

/// v = mu v + g; w -= lr v, applied to trainable parameters only.
void sgd_step(std::vector<ParamView>& params,
              const std::vector<std::vector<double>>& grads, MomentumState& momentum,
              double mu, double lr) {
    momentum.ensure_like(grads);
    for (std::size_t p = 0; p < params.size(); ++p) {
        if (!params[p].trainable) continue;
        auto& v = momentum.velocity[p];
        auto& w = *params[p].data;
        for (std::size_t i = 0; i < w.size(); ++i) {
            v[i] = mu * v[i] + grads[p][i];
            w[i] -= lr * v[i];
        }
    }
}

Matrix gather_rows(const Matrix& x, std::span<const std::size_t> idx) {
    Matrix out(idx.size(), x.cols());
    for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t j = 0; j < x.cols(); ++j) out(r, j) = x(idx[r], j);
    return out;
}

StageResult train_stage_head_only(Network& net, const LabeledSet& train,
                                  const StageSpec& stage, const SgdConfig& sgd,
                                  RngStream& rng) {
    // Extractor and running stats are frozen: features are a constant.
    const Matrix features = eval_features(net, train.x);
    const ClassWeights cb_weights = ClassWeights::harmonic(train.class_counts);
    RngStream shuffle_rng = rng.substream(sgd.seed);

    const std::size_t n = train.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    Matrix velocity_w(net.head.weight.rows(), net.head.weight.cols());
    std::vector<double> velocity_b(net.head.bias.size(), 0.0);

    StageResult result;
    for (std::size_t epoch = 0; epoch < sgd.epochs; ++epoch) {
        const double start = now_ms();
        const double lr = cosine_lr(sgd.lr0, epoch, sgd.epochs);
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t batches = 0, correct = 0;
        std::vector<std::uint8_t> bitmap(n, 0);

        for (std::size_t start_i = 0; start_i < n; start_i += sgd.batch_size) {
            const std::size_t end_i = std::min(start_i + sgd.batch_size, n);
            std::vector<std::size_t> idx(order.begin() + start_i, order.begin() + end_i);
            Matrix batch_features = gather_rows(features, idx);
            std::vector<int> batch_y(idx.size());
            for (std::size_t r = 0; r < idx.size(); ++r) batch_y[r] = train.y[idx[r]];

            const Matrix logits = head_logits(net.head, batch_features);
            LossResult loss = data_loss(logits, batch_y, stage, cb_weights);
            for (std::size_t r = 0; r < idx.size(); ++r) {
                const bool ok = argmax_row(logits.row(r)) ==
                                static_cast<std::size_t>(batch_y[r]);
                bitmap[idx[r]] = ok ? 1 : 0;
                correct += ok ? 1 : 0;
            }

            HeadGradients hg = head_backward(net.head, batch_features, loss.dlogits);
            double objective = loss.value;
            if (stage.lambda_wd > 0.0 && net.head.trainable) {
                double sq = 0.0;
                for (std::size_t i = 0; i < net.head.weight.size(); ++i) {
                    const double w = net.head.weight.raw()[i];
                    sq += w * w;
                    hg.dweight.raw()[i] += stage.lambda_wd * w;
                }
                for (std::size_t i = 0; i < net.head.bias.size(); ++i) {
                    const double b = net.head.bias[i];
                    sq += b * b;
                    hg.dbias[i] += stage.lambda_wd * b;
                }
                objective += 0.5 * stage.lambda_wd * sq;
            }
            if (!std::isfinite(objective)) {
                throw TrainingError("train_stage: NaN loss at epoch " +
                                    std::to_string(epoch) + " batch " +
                                    std::to_string(batches) + " lr " +
                                    std::to_string(lr));
            }
            loss_sum += objective;
            ++batches;

            if (net.head.trainable) {
                for (std::size_t i = 0; i < net.head.weight.size(); ++i) {
                    velocity_w.raw()[i] =
                        sgd.momentum * velocity_w.raw()[i] + hg.dweight.raw()[i];
                    net.head.weight.raw()[i] -= lr * velocity_w.raw()[i];
                }
                for (std::size_t i = 0; i < net.head.bias.size(); ++i) {
                    velocity_b[i] = sgd.momentum * velocity_b[i] + hg.dbias[i];
                    net.head.bias[i] -= lr * velocity_b[i];
                }
                net.bump_version();
                if (stage.maxnorm_caps) project_head(net, *stage.maxnorm_caps);
            }
        }
        result.epochs.push_back({epoch, lr, loss_sum / static_cast<double>(batches),
                                 static_cast<double>(correct) / static_cast<double>(n),
                                 now_ms() - start, std::move(bitmap)});
    }
    return result;
}

}  // namespace

StageResult train_stage(Network& net, const LabeledSet& train, const StageSpec& stage,
                        const SgdConfig& sgd, RngStream& rng) {
    train.validate();
    apply_stage_policy(net, stage);
    if (stage.maxnorm_caps && stage.maxnorm_caps->size() != net.spec.classes) {
        throw DimensionError("train_stage: maxnorm cap count mismatch");
    }
    if (stage.scope == TrainScope::HeadOnly) {
        return train_stage_head_only(net, train, stage, sgd, rng);
    }

    const ClassWeights cb_weights = ClassWeights::harmonic(train.class_counts);
    RngStream shuffle_rng = rng.substream(sgd.seed);
    const std::size_t n = train.size();
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    MomentumState momentum;
    StageResult result;
    for (std::size_t epoch = 0; epoch < sgd.epochs; ++epoch) {
        const double start = now_ms();
        const double lr = cosine_lr(sgd.lr0, epoch, sgd.epochs);
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t batches = 0, correct = 0;
        std::vector<std::uint8_t> bitmap(n, 0);

        std::size_t start_i = 0;
        while (start_i < n) {
            std::size_t end_i = std::min(start_i + sgd.batch_size, n);
            // BN cannot normalize a single-sample batch: fold a trailing
            // singleton into this batch instead of dropping it.
            const bool has_bn = !net.mlp_blocks.empty() || !net.residual_blocks.empty();
            if (has_bn && n - end_i == 1) end_i = n;
            if (has_bn && end_i - start_i < 2) {
                throw TrainingError("train_stage: batch size 1 with batch norm");
            }
            std::vector<std::size_t> idx(order.begin() + start_i, order.begin() + end_i);
            start_i = end_i;
            Matrix batch_x = gather_rows(train.x, idx);
            std::vector<int> batch_y(idx.size());
            for (std::size_t r = 0; r < idx.size(); ++r) batch_y[r] = train.y[idx[r]];

            ForwardResult fwd = forward(net, batch_x, BnMode::Train);
            LossResult loss = data_loss(fwd.logits, batch_y, stage, cb_weights);
            for (std::size_t r = 0; r < idx.size(); ++r) {
                const bool ok = argmax_row(fwd.logits.row(r)) ==
                                static_cast<std::size_t>(batch_y[r]);
                bitmap[idx[r]] = ok ? 1 : 0;
                correct += ok ? 1 : 0;
            }

            double objective = loss.value;
            Matrix extra_dfeatures;
            const Matrix* extra = nullptr;
            if (stage.zeta_fr > 0.0) {
                FrResult fr = fr_penalty(fwd.features, stage.zeta_fr);
                objective += fr.value;
                extra_dfeatures = std::move(fr.dfeatures);
                extra = &extra_dfeatures;
            }
            Gradients grads = backward(net, fwd.cache, loss.dlogits, extra);
            auto params = net.params();
            if (stage.lambda_wd > 0.0) {
                objective +=
                    wd_penalty(params, stage.lambda_wd, stage.wd_subset, &grads.by_param);
            }
            if (!std::isfinite(objective)) {
                throw TrainingError("train_stage: NaN loss at epoch " +
                                    std::to_string(epoch) + " batch " +
                                    std::to_string(batches) + " lr " +
                                    std::to_string(lr));
            }
            loss_sum += objective;
            ++batches;

            sgd_step(params, grads.by_param, momentum, sgd.momentum, lr);
            net.bump_version();
            if (stage.maxnorm_caps && net.head.trainable) {
                project_head(net, *stage.maxnorm_caps);
            }
        }
        if (batches == 0) {
            throw TrainingError("train_stage: no usable batches (batch size 1?)");
        }
        result.epochs.push_back({epoch, lr, loss_sum / static_cast<double>(batches),
                                 static_cast<double>(correct) / static_cast<double>(n),
                                 now_ms() - start, std::move(bitmap)});
    }
    return result;
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json j;
    j["per_class_acc"] = per_class_acc;
    j["many"] = many;
    j["medium"] = medium;
    j["few"] = few;
    j["average"] = average;
    if (train_fdr) j["train_fdr"] = *train_fdr;
    if (test_fdr) j["test_fdr"] = *test_fdr;
    return j;
}

EvalReport evaluate(const Network& net, const LabeledSet& test,
                    const GroupAssignment& groups, LaConfig la,
                    const ClassPriors* priors) {
    test.validate();
    if (la.kind != LaConfig::Kind::None && priors == nullptr) {
        throw DimensionError("evaluate: LA requires class priors");
    }
    Matrix logits;
    if (la.kind == LaConfig::Kind::Multiplicative) {
        Network adjusted = net;
        adjusted.head.weight =
            multiplicative_la(net.head.weight.transposed(), *priors, la.param)
                .transposed();
        logits = eval_logits(adjusted, test.x);
    } else {
        logits = eval_logits(net, test.x);
        if (la.kind == LaConfig::Kind::Additive) {
            logits = additive_la(logits, *priors, la.param);
        }
    }

    const std::size_t classes = net.spec.classes;
    std::vector<std::size_t> correct(classes, 0), total(classes, 0);
    for (std::size_t i = 0; i < test.size(); ++i) {
        const auto k = static_cast<std::size_t>(test.y[i]);
        ++total[k];
        if (argmax_row(logits.row(i)) == k) ++correct[k];
    }

    EvalReport report;
    report.per_class_acc.resize(classes, 0.0);
    double sum = 0.0;
    std::size_t present = 0;
    double gsum[3] = {0, 0, 0};
    std::size_t gcount[3] = {0, 0, 0};
    for (std::size_t k = 0; k < classes; ++k) {
        if (total[k] == 0) continue;
        const double acc =
            static_cast<double>(correct[k]) / static_cast<double>(total[k]);
        report.per_class_acc[k] = acc;
        sum += acc;
        ++present;
        const auto g = static_cast<std::size_t>(groups.group_of[k]);
        gsum[g] += acc;
        ++gcount[g];
    }
    report.average = present == 0 ? 0.0 : sum / static_cast<double>(present);
    report.many = gcount[0] ? gsum[0] / static_cast<double>(gcount[0]) : 0.0;
    report.medium = gcount[1] ? gsum[1] / static_cast<double>(gcount[1]) : 0.0;
    report.few = gcount[2] ? gsum[2] / static_cast<double>(gcount[2]) : 0.0;
    return report;
}

MethodPreset make_preset(const std::string& name, const PresetParams& params,
                         LaConfig::Kind post_hoc) {
    MethodPreset preset;
    preset.name = name;
    preset.post_hoc = post_hoc;

    StageSpec whole_ce;
    whole_ce.scope = TrainScope::WholeModel;
    whole_ce.loss = LossKind::Ce;

    if (name == "ce") {
        preset.stages = {whole_ce};
    } else if (name == "cb") {
        StageSpec s = whole_ce;
        s.loss = LossKind::Cb;
        preset.stages = {s};
    } else if (name == "wd") {
        StageSpec s = whole_ce;
        s.lambda_wd = params.lambda1;
        preset.stages = {s};
    } else if (name == "wb" || name == "wb_renorm") {
        StageSpec s1 = whole_ce;
        s1.lambda_wd = params.lambda1;
        StageSpec s2;
        s2.scope = TrainScope::HeadOnly;
        s2.loss = LossKind::Cb;
        s2.lambda_wd = params.lambda2;
        if (name == "wb") {
            s2.maxnorm_caps = std::vector<double>();  // filled per-run (needs C)
        } else {
            s2.renormalize_head_before = true;
        }
        preset.stages = {s1, s2};
    } else if (name == "wd_etf" || name == "wd_fr_etf") {
        StageSpec s = whole_ce;
        s.scope = TrainScope::ExtractorOnly;
        s.lambda_wd = params.lambda1;
        s.head_policy = HeadPolicy::EtfFixed;
        s.etf_seed = params.etf_seed;
        s.etf_energy = params.etf_energy;
        s.etf_basis = params.etf_basis;
        if (name == "wd_fr_etf") s.zeta_fr = params.zeta;
        preset.stages = {s};
    } else if (name == "wd_wo_bn") {
        StageSpec s = whole_ce;
        s.lambda_wd = params.lambda1;
        s.wd_subset = WdSubset::LinearOnly;
        preset.stages = {s};
    } else if (name == "wd_fixed_bn") {
        StageSpec s = whole_ce;
        s.lambda_wd = params.lambda1;
        s.wd_subset = WdSubset::LinearOnly;
        s.fixed_gamma = params.fixed_gamma_grid.empty() ? 0.05
                                                        : params.fixed_gamma_grid.front();
        preset.stages = {s};
        preset.fixed_gamma_grid = params.fixed_gamma_grid;
    } else {
        throw ConfigError("unknown preset: " + name);
    }

    // MaxNorm caps default to eta for every class; the run fills the size in.
    for (StageSpec& s : preset.stages) {
        if (s.maxnorm_caps && s.maxnorm_caps->empty()) {
            s.maxnorm_caps = std::vector<double>{params.maxnorm_eta};
        }
    }
    return preset;
}

std::vector<std::string> preset_names() {
    return {"ce", "cb", "wd", "wb", "wb_renorm", "wd_etf", "wd_fr_etf",
            "wd_wo_bn", "wd_fixed_bn"};
}

namespace {

RunArtifacts run_stages_once(const MethodPreset& preset, const NetSpec& net_spec,
                             const SynthSplits& data,
                             const std::vector<SgdConfig>& sgd_per_stage,
                             RngStream& rng, std::optional<double> fixed_gamma) {
    RunArtifacts artifacts;
    RngStream init_rng = rng.substream(0);
    artifacts.net = init_network(net_spec, init_rng);
    for (std::size_t s = 0; s < preset.stages.size(); ++s) {
        StageSpec stage = preset.stages[s];
        if (fixed_gamma && stage.fixed_gamma) stage.fixed_gamma = fixed_gamma;
        if (stage.maxnorm_caps && stage.maxnorm_caps->size() != net_spec.classes) {
            stage.maxnorm_caps =
                std::vector<double>(net_spec.classes, stage.maxnorm_caps->front());
        }
        const SgdConfig& sgd =
            s < sgd_per_stage.size() ? sgd_per_stage[s] : sgd_per_stage.back();
        RngStream stage_rng = rng.substream(10 + s);
        artifacts.stage_logs.push_back(
            train_stage(artifacts.net, data.train, stage, sgd, stage_rng));
    }
    return artifacts;
}

}  // namespace

RunArtifacts run_preset(const MethodPreset& preset, const NetSpec& net_spec,
                        const SynthSplits& data, const GroupAssignment& groups,
                        const std::vector<SgdConfig>& sgd_per_stage, RngStream& rng) {
    if (preset.stages.empty()) throw ConfigError("run_preset: preset has no stages");
    if (sgd_per_stage.empty()) throw ConfigError("run_preset: missing SGD config");

    RunArtifacts artifacts;
    if (!preset.fixed_gamma_grid.empty()) {
        // Train once per candidate gamma, keep the best validation average
        // (ties toward the smaller gamma). Every candidate sees identical
        // substreams, so the comparison is deterministic.
        bool first = true;
        double best_val = 0.0;
        for (double gamma : preset.fixed_gamma_grid) {
            RngStream candidate_rng = rng;  // value copy: identical streams
            RunArtifacts candidate = run_stages_once(preset, net_spec, data,
                                                     sgd_per_stage, candidate_rng, gamma);
            const double val_avg =
                evaluate(candidate.net, data.val, groups).average;
            if (first || val_avg > best_val) {
                best_val = val_avg;
                artifacts = std::move(candidate);
                artifacts.chosen_fixed_gamma = gamma;
                first = false;
            }
        }
    } else {
        artifacts = run_stages_once(preset, net_spec, data, sgd_per_stage, rng,
                                    std::nullopt);
    }

    const ClassPriors priors = ClassPriors::from_counts(data.train.class_counts);
    if (preset.post_hoc != LaConfig::Kind::None) {
        const std::vector<double> grid = default_la_grid(preset.post_hoc);
        artifacts.la_search =
            grid_search_la(artifacts.net, data.val, priors, preset.post_hoc, grid, groups);
        artifacts.applied_la = {preset.post_hoc, artifacts.la_search->best_param};
        if (preset.post_hoc == LaConfig::Kind::Multiplicative) {
            // Multiplicative LA rewrites the head weights post-hoc.
            artifacts.net.head.weight =
                multiplicative_la(artifacts.net.head.weight.transposed(), priors,
                                  artifacts.applied_la.param)
                    .transposed();
            artifacts.net.bump_version();
        }
    }

    const LaConfig eval_la = artifacts.applied_la.kind == LaConfig::Kind::Additive
                                 ? artifacts.applied_la
                                 : LaConfig{};
    artifacts.report = evaluate(artifacts.net, data.test, groups, eval_la, &priors);
    artifacts.report.train_fdr =
        fdr(eval_features(artifacts.net, data.train.x), data.train.y, net_spec.classes);
    artifacts.report.test_fdr =
        fdr(eval_features(artifacts.net, data.test.x), data.test.y, net_spec.classes);
    return artifacts;
}

}  // namespace ltlab
