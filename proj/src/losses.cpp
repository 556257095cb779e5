#include "ltlab/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "ltlab/dataset.hpp"

namespace ltlab {

namespace {

/// Shared weighted-CE core: loss = (1/N) sum_i w_i * ce_i.
LossResult weighted_ce(const Matrix& logits, std::span<const int> y,
                       std::span<const double> sample_weights) {
    const std::size_t n = logits.rows(), c = logits.cols();
    if (y.size() != n) throw DimensionError("ce_loss: label count mismatch");
    LossResult result{0.0, Matrix(n, c)};
    for (std::size_t i = 0; i < n; ++i) {
        const int yi = y[i];
        if (yi < 0 || static_cast<std::size_t>(yi) >= c) {
            throw DimensionError("ce_loss: label " + std::to_string(yi) +
                                 " out of range");
        }
        double max_logit = logits(i, 0);
        for (std::size_t j = 1; j < c; ++j) max_logit = std::max(max_logit, logits(i, j));
        double denom = 0.0;
        for (std::size_t j = 0; j < c; ++j) denom += std::exp(logits(i, j) - max_logit);
        const double log_denom = std::log(denom);
        const double wi = sample_weights.empty() ? 1.0 : sample_weights[i];
        result.value += wi * (log_denom - (logits(i, yi) - max_logit));
        const double scale = wi / static_cast<double>(n);
        for (std::size_t j = 0; j < c; ++j) {
            const double p = std::exp(logits(i, j) - max_logit) / denom;
            result.dlogits(i, j) =
                scale * (p - (static_cast<std::size_t>(yi) == j ? 1.0 : 0.0));
        }
    }
    result.value /= static_cast<double>(n);
    return result;
}

}  // namespace

LossResult ce_loss(const Matrix& logits, std::span<const int> y) {
    return weighted_ce(logits, y, {});
}

ClassWeights ClassWeights::balanced(std::size_t classes) {
    return {std::vector<double>(classes, 1.0)};
}

ClassWeights ClassWeights::harmonic(std::span<const std::size_t> counts) {
    const double nbar = harmonic_mean(counts);
    ClassWeights w;
    w.w.reserve(counts.size());
    for (std::size_t n : counts) w.w.push_back(nbar / static_cast<double>(n));
    return w;
}

ClassWeights ClassWeights::effective_number(double beta,
                                            std::span<const std::size_t> counts) {
    if (!(beta >= 0.0) || beta >= 1.0) {
        throw DimensionError("effective_number: beta must be in [0,1)");
    }
    ClassWeights w;
    double sum = 0.0;
    for (std::size_t n : counts) {
        const double eff = (1.0 - std::pow(beta, static_cast<double>(n))) / (1.0 - beta);
        w.w.push_back(1.0 / eff);
        sum += w.w.back();
    }
    // Normalize to sum C, matching the harmonic variant's scale.
    const double scale = static_cast<double>(counts.size()) / sum;
    for (double& v : w.w) v *= scale;
    return w;
}

LossResult cb_loss(const Matrix& logits, std::span<const int> y,
                   const ClassWeights& weights) {
    if (weights.w.size() != logits.cols()) {
        throw DimensionError("cb_loss: weight count mismatch");
    }
    std::vector<double> per_sample(y.size());
    for (std::size_t i = 0; i < y.size(); ++i)
        per_sample[i] = weights.w[static_cast<std::size_t>(y[i])];
    return weighted_ce(logits, y, per_sample);
}

bool wd_applies(const ParamView& p, WdSubset subset) {
    switch (subset) {
        case WdSubset::All:
            return true;
        case WdSubset::LinearOnly:
            return p.kind == ParamKind::LinearWeight || p.kind == ParamKind::LinearBias;
        case WdSubset::ExcludeBn:
            return p.kind != ParamKind::BnGamma && p.kind != ParamKind::BnBeta;
    }
    return false;
}

double wd_penalty(const std::vector<ParamView>& params, double lambda, WdSubset subset,
                  std::vector<std::vector<double>>* grad_accum) {
    if (lambda < 0.0) throw DimensionError("wd_penalty: lambda must be >= 0");
    if (grad_accum != nullptr && grad_accum->size() != params.size()) {
        throw DimensionError("wd_penalty: gradient accumulator size mismatch");
    }
    double penalty = 0.0;
    for (std::size_t p = 0; p < params.size(); ++p) {
        if (!params[p].trainable || !wd_applies(params[p], subset)) continue;
        const std::vector<double>& values = *params[p].data;
        for (std::size_t i = 0; i < values.size(); ++i) {
            penalty += values[i] * values[i];
            if (grad_accum != nullptr) (*grad_accum)[p][i] += lambda * values[i];
        }
    }
    return 0.5 * lambda * penalty;
}

FrResult fr_penalty(const Matrix& features, double zeta) {
    if (zeta < 0.0) throw DimensionError("fr_penalty: zeta must be >= 0");
    const double n = static_cast<double>(features.rows());
    FrResult result{0.0, features};
    double sq = 0.0;
    for (double v : features.raw()) sq += v * v;
    result.value = 0.5 * zeta * sq / n;
    result.dfeatures *= zeta / n;
    return result;
}

Matrix maxnorm_project(const Matrix& w, std::span<const double> caps) {
    if (caps.size() != w.cols()) {
        throw DimensionError("maxnorm_project: cap count mismatch");
    }
    Matrix out = w;
    for (std::size_t k = 0; k < w.cols(); ++k) {
        if (!(caps[k] > 0.0)) throw DimensionError("maxnorm_project: caps must be > 0");
        auto column_norm = [&] {
            double sq = 0.0;
            for (std::size_t i = 0; i < w.rows(); ++i) sq += out(i, k) * out(i, k);
            return std::sqrt(sq);
        };
        // Rescaling can land one ulp above the cap; repeat until the
        // projected column passes its own test so projection is idempotent.
        for (double norm = column_norm(); norm > caps[k]; norm = column_norm()) {
            const double scale = caps[k] / norm;
            for (std::size_t i = 0; i < w.rows(); ++i) out(i, k) *= scale;
        }
    }
    return out;
}

Matrix renormalize_columns(const Matrix& w, double target) {
    Matrix out = w;
    for (std::size_t k = 0; k < w.cols(); ++k) {
        double sq = 0.0;
        for (std::size_t i = 0; i < w.rows(); ++i) sq += w(i, k) * w(i, k);
        if (sq == 0.0) {
            throw DimensionError("renormalize_columns: zero column " + std::to_string(k));
        }
        const double scale = target / std::sqrt(sq);
        for (std::size_t i = 0; i < w.rows(); ++i) out(i, k) *= scale;
    }
    return out;
}

}  // namespace ltlab
