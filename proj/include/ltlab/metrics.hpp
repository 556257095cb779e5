#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "ltlab/dataset.hpp"
#include "ltlab/matrix.hpp"
#include "ltlab/network.hpp"
#include "ltlab/rng.hpp"

namespace ltlab {

/// Per-class feature summary. The global mean is the unweighted mean of the
/// class means (not the pooled data mean), which matters under imbalance.
struct FeatureStats {
    Matrix class_means;               ///< C x d
    std::vector<double> global_mean;  ///< length d
    std::vector<double> mean_norms;   ///< ||mu_k|| per class
    std::vector<std::size_t> counts;
};

FeatureStats feature_stats(const Matrix& features, std::span<const int> labels,
                           std::size_t classes);

/// Relative conditioning guard used when no jitter is given:
/// 1e-8 * trace(S_W) / d.
double default_fdr_jitter(const Matrix& s_w);

/// Fisher's discriminant ratio trace(S_W^-1 S_B) with
///   S_B = sum_k n_k (mu_k - mu)(mu_k - mu)^T,  mu = mean of class means,
///   S_W = sum_k sum_i (x_i - mu_k)(x_i - mu_k)^T.
/// jitter < 0 selects the default relative jitter.
double fdr(const Matrix& features, std::span<const int> labels, std::size_t classes,
           double jitter = -1.0);

struct CosineMatrix {
    Matrix mean_cos;                        ///< C x C; NaN where undefined
    std::vector<std::size_t> pair_counts;   ///< row-major C*C pair counts used
    std::size_t zero_norm_excluded = 0;
};

/// Mean pairwise cosine similarity between features of class j and class k
/// (same-class cells exclude self-pairs). Cells with more than
/// max_pairs_per_cell pairs are uniformly subsampled.
CosineMatrix cosine_matrix(const Matrix& features, std::span<const int> labels,
                           std::size_t classes, std::size_t max_pairs_per_cell,
                           RngStream& rng);

/// Mean off-diagonal entry of a cosine matrix (defined cells only).
double mean_offdiag(const CosineMatrix& cm);

std::vector<double> mean_norms(const Matrix& features, std::span<const int> labels,
                               std::size_t classes);

struct BnStats {
    double gamma_mean = 0.0, gamma_std = 0.0;
    double beta_mean = 0.0, beta_std = 0.0;
    std::size_t parameter_count = 0;  ///< gamma entries pooled over BN layers
};

/// Mean/std (population) pooled over every BN layer in the model.
BnStats bn_stats(const Network& net);

struct ForgettingRecord {
    std::vector<std::size_t> per_sample;  ///< correct -> incorrect transitions
    std::vector<double> per_class_mean;
    double many = 0.0, medium = 0.0, few = 0.0;
};

/// history[e][i] = 1 iff sample i was classified correctly at epoch e.
ForgettingRecord forgetting_scores(const std::vector<std::vector<std::uint8_t>>& history,
                                   std::span<const int> labels, std::size_t classes,
                                   const GroupAssignment* groups = nullptr);

struct ProbeFdrSeries {
    std::vector<double> values;       ///< values[0] = FDR before any probe
    std::vector<bool> defined;        ///< false where activations died
};

/// FDR before and after each of `probes` fresh random linear+ReLU layers
/// (d x d weights and bias uniform in [-1/sqrt(d), +1/sqrt(d)]).
ProbeFdrSeries random_probe_fdr(const Matrix& features, std::span<const int> labels,
                                std::size_t classes, std::size_t probes,
                                RngStream& rng, double jitter = -1.0);

/// Applies one probe layer: relu(x W^T + b). Exposed for tests.
Matrix apply_probe_layer(const Matrix& x, const Matrix& weight,
                         std::span<const double> bias);

}  // namespace ltlab
