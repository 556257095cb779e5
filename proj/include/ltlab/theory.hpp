#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ltlab/classifier.hpp"
#include "ltlab/dataset.hpp"
#include "ltlab/matrix.hpp"
#include "ltlab/network.hpp"

namespace ltlab {

struct PremiseCheck {
    std::string name;
    double value;
    double threshold;
    std::string relation;  ///< "<", "<=", ">", ">="
    bool satisfied;
};

struct TheoremReport {
    std::string theorem;
    std::vector<PremiseCheck> premises;
    std::map<std::string, double> measured;
    double bound = 0.0;
    bool applicable = false;  ///< all premises satisfied
    bool holds = false;       ///< applicable and the conclusion verified

    nlohmann::json to_json() const;
};

struct ConeBoundInput {
    std::size_t classes;        ///< C
    double epsilon;             ///< max per-sample CE feature-gradient norm
    double feature_norm_bound;  ///< L, max feature norm
};

struct ConeBoundResult {
    std::vector<PremiseCheck> premises;
    bool applicable = false;
    double delta = 0.0;
    double bound = 0.0;  ///< 2 delta sqrt(1 - delta^2)
};

/// delta = (1/L)((C-1)/C) log((C-1)(1-eps)/eps); premises are eps < 1/C,
/// L <= 2 sqrt(2) log(C-1) and delta in (1/sqrt(2), 1].
ConeBoundResult evaluate_cone_bound(const ConeBoundInput& input);

/// Throwing variant: names the violated inequality.
struct ConeBound {
    double delta;
    double bound;
};
ConeBound cone_bound(const ConeBoundInput& input);

/// Verifies the cone-effect bound on a trained network with an ETF head:
/// measures eps and L from the data, checks the premises, then checks
/// cos(g(x_i), g(x_j)) <= bound + slack over inter-class pairs (exhaustive
/// when max_pairs = 0 or the pair count fits, else uniformly subsampled).
TheoremReport check_theorem1(const Network& net, const LabeledSet& data,
                             std::size_t max_pairs = 0, RngStream* rng = nullptr,
                             double etf_tol = 1e-6, double slack = 1e-9);

/// Closed form of the harmonic-to-total count ratio for the exponential
/// profile: rho C (rho^(1/(C-1)) - 1)^2 / (rho^(C/(C-1)) - 1)^2, with the
/// balanced limit 1/C at rho = 1.
double amhm_ratio(double rho, std::size_t classes);

/// Same quantity evaluated directly from real-valued per-class counts.
double amhm_ratio_direct(double rho, std::size_t classes);

/// Synthetic neural-collapse configuration: class means on ETF directions
/// with norm profile c0 * P(Y=k)^(-gamma0), so gamma0 > 0 gives tail
/// classes the larger means (the direction observed after WD training).
struct NcSynthConfig {
    std::size_t classes = 10;
    std::size_t dim = 16;
    double rho = 100.0;
    double c0 = 1.0;
    double gamma0 = 0.0;
    std::optional<std::vector<double>> offset;  ///< adds a fixed vector to all means
    bool real_valued_counts = true;   ///< unrounded N_k (head count 1)
    std::size_t head_count = 100;     ///< N_1 when counts are rounded
};

struct NcSynth {
    Matrix means;                ///< d x C, column k = mu_k
    std::vector<double> counts;  ///< real-valued N_k
    ClassPriors priors;
};

NcSynth nc_synth(const NcSynthConfig& config, RngStream& rng);

struct StationaryPoint {
    Matrix w_star;  ///< d x C
    double grad_norm;
    std::size_t iterations;
    double objective;
};

/// Minimizes the convex second-stage objective
///   F(W) = (1/N) sum_i cb(W^T x_i, y_i) + (lambda/2) ||W||_F^2
/// for features pinned at the class means (exact within-class collapse), in
/// which case every class contributes weight nbar/N. Full-batch gradient
/// descent with backtracking line search until ||grad||_F <= tol.
StationaryPoint minimize_head_objective(const Matrix& means,
                                        std::span<const double> counts, double lambda,
                                        double tol = 1e-10,
                                        std::size_t max_iterations = 200000);

/// Checks how close the stationary point lands to (nbar/(lambda N)) mu_k per
/// class, and the inequality residual <= (nbar/(lambda N))||mu|| +
/// big_o_constant/(lambda rho C)^2.
TheoremReport check_theorem2(const Matrix& means, std::span<const double> counts,
                             double lambda, double tol = 1e-10,
                             double big_o_constant = 60.0);

struct Theorem2Cell {
    double rho;
    std::size_t classes;
    double nbar_over_n;
    double max_residual;
    double offset_term;      ///< (nbar/(lambda N)) ||mu||
    double excess_scaled;    ///< (max_residual - offset_term) * (lambda rho C)^2
    double max_wnorm_scaled; ///< max_k ||w_k*|| * lambda rho C
    double grad_norm;
    std::size_t iterations;
};

/// One row per rho value at fixed class count and lambda.
std::vector<Theorem2Cell> theorem2_sweep(const NcSynthConfig& base,
                                         std::span<const double> rhos, double lambda,
                                         RngStream& rng, double tol = 1e-10);

struct ImplicitLaFit {
    std::vector<double> norm_ratio;     ///< ||w_k*|| / ||mu_k||
    std::vector<double> alignment_cos;  ///< cos(w_k*, mu_k)
    double fitted_exponent;             ///< slope of log||w_k*|| vs log P(Y=k)
    double fitted_intercept;
};

/// Log-log regression of the stationary head norms against the priors,
/// quantifying the multiplicative-LA equivalence.
ImplicitLaFit implicit_la_equivalence(const Matrix& w_star, const Matrix& means,
                                      const ClassPriors& priors);

}  // namespace ltlab
