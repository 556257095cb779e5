#pragma once

#include <span>
#include <vector>

#include "ltlab/matrix.hpp"
#include "ltlab/network.hpp"

namespace ltlab {

struct LossResult {
    double value;
    Matrix dlogits;
};

/// Mean of -log softmax(logits)[y] with max-subtraction stabilization.
/// dlogits = (softmax - onehot) / N.
LossResult ce_loss(const Matrix& logits, std::span<const int> y);

/// Per-class loss multipliers. The harmonic variant is the class-balanced
/// weighting with beta = 1: w_k = harmonic_mean(counts) / counts[k].
struct ClassWeights {
    std::vector<double> w;

    static ClassWeights balanced(std::size_t classes);
    static ClassWeights harmonic(std::span<const std::size_t> counts);
    /// Effective-number weighting (1-beta)/(1-beta^n_k), normalized to sum
    /// to C; approaches the harmonic variant as beta -> 1.
    static ClassWeights effective_number(double beta, std::span<const std::size_t> counts);
};

/// Class-balanced CE: per-sample CE scaled by w[y_i], averaged over the
/// batch. Equals ce_loss exactly when all weights are 1.
LossResult cb_loss(const Matrix& logits, std::span<const int> y,
                   const ClassWeights& weights);

/// Which parameters weight decay touches.
enum class WdSubset {
    All,         ///< every trainable parameter
    LinearOnly,  ///< linear weights and biases only
    ExcludeBn,   ///< everything except BN gamma/beta
};

bool wd_applies(const ParamView& p, WdSubset subset);

/// (lambda/2) * sum ||w||^2 over trainable parameters in the subset;
/// adds lambda*w into grad_accum (aligned with params order).
double wd_penalty(const std::vector<ParamView>& params, double lambda, WdSubset subset,
                  std::vector<std::vector<double>>* grad_accum = nullptr);

struct FrResult {
    double value;
    Matrix dfeatures;
};

/// Feature regularizer (zeta/2) * (1/N) * sum_i ||g(x_i)||^2;
/// dfeatures = (zeta/N) * features.
FrResult fr_penalty(const Matrix& features, double zeta);

/// Column-wise max-norm projection w_k <- min(1, eta_k/||w_k||) w_k on a
/// d x C matrix. Columns inside their ball are returned bit-exactly.
Matrix maxnorm_project(const Matrix& w, std::span<const double> caps);

/// Scales every column of a d x C matrix to the given norm; throws on a
/// zero column.
Matrix renormalize_columns(const Matrix& w, double target);

}  // namespace ltlab
