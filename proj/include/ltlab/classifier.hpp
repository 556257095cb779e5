#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ltlab/dataset.hpp"
#include "ltlab/matrix.hpp"
#include "ltlab/network.hpp"

namespace ltlab {

/// Basis for the orthonormal factor U. The Gaussian-QR draw gives a
/// "generic" frame; the axis-aligned variant (U = first C columns of the
/// identity) keeps each column's mass on its own coordinate, which matters
/// when the incoming features are non-negative (post-ReLU): a feature can
/// align with an axis-aligned column up to cosine (C-1)/sqrt(C(C-1)),
/// whereas a generic column's positive part may be far smaller.
enum class EtfBasis { GaussianQr, AxisAligned };

struct EtfSpec {
    std::size_t dim = 0;      ///< feature dimension d, must be >= classes
    std::size_t classes = 0;  ///< C
    double energy = 1.0;      ///< E_W > 0; column norms are sqrt(energy)
    std::uint64_t seed = 0;   ///< seed for the orthonormal basis U
    EtfBasis basis = EtfBasis::GaussianQr;
};

/// Simplex equiangular tight frame, d x C:
///   W = sqrt(E_W * C/(C-1)) * U * (I - 11^T / C)
/// with U the Q factor of a seeded Gaussian matrix (diagonal of R kept
/// positive, so the result is deterministic). Columns have norm sqrt(E_W)
/// and pairwise cosine -1/(C-1).
Matrix make_etf(const EtfSpec& spec);

/// Same construction but drawing the Gaussian directly from `rng`.
Matrix make_etf(std::size_t dim, std::size_t classes, double energy, RngStream& rng);

struct ClassPriors {
    std::vector<double> p;  ///< strictly positive, sums to 1

    static ClassPriors from_counts(std::span<const std::size_t> counts);
    static ClassPriors from_real_counts(std::span<const double> counts);
    void validate() const;
};

/// Post-hoc multiplicative adjustment of a d x C weight matrix:
/// column k becomes priors_k^(-gamma) * w_k / ||w_k||.
Matrix multiplicative_la(const Matrix& w, const ClassPriors& priors, double gamma);

/// Additive adjustment of logits: z'_k = z_k - tau * log priors_k.
Matrix additive_la(const Matrix& logits, const ClassPriors& priors, double tau);

struct LaConfig {
    enum class Kind { None, Additive, Multiplicative };
    Kind kind = Kind::None;
    double param = 0.0;  ///< tau (additive) or gamma (multiplicative)
};

//// Default search grids: tau in {1.00, 1.05, ..., 2.00}, gamma in
/// {0.00, 0.05, ..., 1.00}.
std::vector<double> default_la_grid(LaConfig::Kind kind);

struct GridPoint {
    double param;
    double many, medium, few, average;
};

struct GridSearchResult {
    double best_param = 0.0;
    double best_average = 0.0;
    std::vector<GridPoint> table;

    std::string to_csv() const;
};

/// Evaluates mean per-class validation accuracy for every grid value and
/// returns the maximizer (ties broken toward the smaller parameter).
GridSearchResult grid_search_la(const Network& net, const LabeledSet& val,
                                const ClassPriors& priors, LaConfig::Kind kind,
                                std::span<const double> grid,
                                const GroupAssignment& groups);

/// Argmax with ties broken toward the lowest class index.
std::size_t argmax_row(std::span<const double> row);

}  // namespace ltlab
