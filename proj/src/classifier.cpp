#include "ltlab/classifier.hpp"

#include <cmath>
#include <sstream>

#include "ltlab/losses.hpp"

namespace ltlab {

namespace {

Matrix etf_scaled_centering(const Matrix& u, std::size_t dim, std::size_t classes,
                            double energy) {
    const double c = static_cast<double>(classes);
    const double scale = std::sqrt(energy * c / (c - 1.0));
    // W = scale * U (I - 11^T/C): subtract the row mean of U per column.
    Matrix w(dim, classes);
    for (std::size_t i = 0; i < dim; ++i) {
        double row_mean = 0.0;
        for (std::size_t k = 0; k < classes; ++k) row_mean += u(i, k);
        row_mean /= c;
        for (std::size_t k = 0; k < classes; ++k)
            w(i, k) = scale * (u(i, k) - row_mean);
    }
    return w;
}

}  // namespace

Matrix make_etf(std::size_t dim, std::size_t classes, double energy, RngStream& rng) {
    if (classes < 2) throw DimensionError("make_etf: need at least 2 classes");
    if (classes > dim) {
        throw DimensionError("make_etf: classes " + std::to_string(classes) +
                             " exceeds feature dim " + std::to_string(dim));
    }
    if (!(energy > 0.0)) throw DimensionError("make_etf: energy must be > 0");

    // Orthonormal columns via modified Gram-Schmidt with one
    // re-orthogonalization pass; pivots (the column norms) are positive by
    // construction, which fixes the sign convention.
    Matrix u = sample_gaussian(rng, dim, classes, 0.0, 1.0);
    for (std::size_t k = 0; k < classes; ++k) {
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t j = 0; j < k; ++j) {
                double proj = 0.0;
                for (std::size_t i = 0; i < dim; ++i) proj += u(i, j) * u(i, k);
                for (std::size_t i = 0; i < dim; ++i) u(i, k) -= proj * u(i, j);
            }
        }
        double norm_sq = 0.0;
        for (std::size_t i = 0; i < dim; ++i) norm_sq += u(i, k) * u(i, k);
        const double norm = std::sqrt(norm_sq);
        if (!(norm > 1e-12)) {
            throw SingularMatrixError("make_etf: rank-deficient Gaussian draw", k);
        }
        for (std::size_t i = 0; i < dim; ++i) u(i, k) /= norm;
    }

    return etf_scaled_centering(u, dim, classes, energy);
}

Matrix make_etf(const EtfSpec& spec) {
    if (spec.basis == EtfBasis::AxisAligned) {
        if (spec.classes < 2) throw DimensionError("make_etf: need at least 2 classes");
        if (spec.classes > spec.dim) {
            throw DimensionError("make_etf: classes exceed feature dim");
        }
        if (!(spec.energy > 0.0)) throw DimensionError("make_etf: energy must be > 0");
        Matrix u(spec.dim, spec.classes);
        for (std::size_t k = 0; k < spec.classes; ++k) u(k, k) = 1.0;
        return etf_scaled_centering(u, spec.dim, spec.classes, spec.energy);
    }
    RngStream rng(spec.seed);
    return make_etf(spec.dim, spec.classes, spec.energy, rng);
}

ClassPriors ClassPriors::from_counts(std::span<const std::size_t> counts) {
    std::vector<double> real(counts.begin(), counts.end());
    return from_real_counts(real);
}

ClassPriors ClassPriors::from_real_counts(std::span<const double> counts) {
    double total = 0.0;
    for (double n : counts) {
        if (!(n > 0.0)) throw DimensionError("ClassPriors: counts must be positive");
        total += n;
    }
    ClassPriors priors;
    priors.p.reserve(counts.size());
    for (double n : counts) priors.p.push_back(n / total);
    return priors;
}

void ClassPriors::validate() const {
    double sum = 0.0;
    for (double v : p) {
        if (!(v > 0.0)) throw DimensionError("ClassPriors: entries must be > 0");
        sum += v;
    }
    if (std::fabs(sum - 1.0) > 1e-12) {
        throw DimensionError("ClassPriors: entries must sum to 1");
    }
}

Matrix multiplicative_la(const Matrix& w, const ClassPriors& priors, double gamma) {
    if (priors.p.size() != w.cols()) {
        throw DimensionError("multiplicative_la: prior count mismatch");
    }
    if (gamma < 0.0) throw DimensionError("multiplicative_la: gamma must be >= 0");
    priors.validate();
    Matrix out = w;
    for (std::size_t k = 0; k < w.cols(); ++k) {
        double sq = 0.0;
        for (std::size_t i = 0; i < w.rows(); ++i) sq += w(i, k) * w(i, k);
        if (sq == 0.0) {
            throw DimensionError("multiplicative_la: zero column " + std::to_string(k));
        }
        const double scale = std::pow(priors.p[k], -gamma) / std::sqrt(sq);
        for (std::size_t i = 0; i < w.rows(); ++i) out(i, k) *= scale;
    }
    return out;
}

Matrix additive_la(const Matrix& logits, const ClassPriors& priors, double tau) {
    if (priors.p.size() != logits.cols()) {
        throw DimensionError("additive_la: prior count mismatch");
    }
    if (tau < 0.0) throw DimensionError("additive_la: tau must be >= 0");
    priors.validate();
    Matrix out = logits;
    for (std::size_t i = 0; i < logits.rows(); ++i)
        for (std::size_t k = 0; k < logits.cols(); ++k)
            out(i, k) -= tau * std::log(priors.p[k]);
    return out;
}

std::vector<double> default_la_grid(LaConfig::Kind kind) {
    std::vector<double> grid;
    if (kind == LaConfig::Kind::Additive) {
        for (int i = 0; i <= 20; ++i) grid.push_back(1.0 + 0.05 * i);
    } else if (kind == LaConfig::Kind::Multiplicative) {
        for (int i = 0; i <= 20; ++i) grid.push_back(0.05 * i);
    }
    return grid;
}

std::size_t argmax_row(std::span<const double> row) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < row.size(); ++j)
        if (row[j] > row[best]) best = j;
    return best;
}

namespace {

struct GroupedAccuracy {
    double many, medium, few, average;
};

GroupedAccuracy grouped_accuracy(const Matrix& logits, std::span<const int> y,
                                 std::size_t classes, const GroupAssignment& groups) {
    std::vector<std::size_t> correct(classes, 0), total(classes, 0);
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const auto pred = argmax_row(logits.row(i));
        ++total[static_cast<std::size_t>(y[i])];
        if (pred == static_cast<std::size_t>(y[i]))
            ++correct[static_cast<std::size_t>(y[i])];
    }
    double sums[3] = {0, 0, 0};
    std::size_t counts[3] = {0, 0, 0};
    double avg = 0.0;
    std::size_t present = 0;
    for (std::size_t k = 0; k < classes; ++k) {
        if (total[k] == 0) continue;
        const double acc =
            static_cast<double>(correct[k]) / static_cast<double>(total[k]);
        avg += acc;
        ++present;
        const auto g = static_cast<std::size_t>(groups.group_of[k]);
        sums[g] += acc;
        ++counts[g];
    }
    auto mean_or_zero = [](double s, std::size_t n) {
        return n == 0 ? 0.0 : s / static_cast<double>(n);
    };
    return {mean_or_zero(sums[0], counts[0]), mean_or_zero(sums[1], counts[1]),
            mean_or_zero(sums[2], counts[2]),
            present == 0 ? 0.0 : avg / static_cast<double>(present)};
}

}  // namespace

GridSearchResult grid_search_la(const Network& net, const LabeledSet& val,
                                const ClassPriors& priors, LaConfig::Kind kind,
                                std::span<const double> grid,
                                const GroupAssignment& groups) {
    if (grid.empty()) throw DimensionError("grid_search_la: empty grid");
    const std::size_t classes = net.spec.classes;
    const Matrix features = eval_features(net, val.x);
    const Matrix base_logits = head_logits(net.head, features);

    // For the multiplicative kind, gamma only rescales rows of the
    // unit-normalized logits, so normalize once up front.
    Matrix unit_logits;
    if (kind == LaConfig::Kind::Multiplicative) {
        LinearLayer unit_head = net.head;
        unit_head.weight =
            renormalize_columns(net.head.weight.transposed(), 1.0).transposed();
        unit_logits = head_logits(unit_head, features);
    }

    GridSearchResult result;
    bool first = true;
    for (double param : grid) {
        Matrix adjusted;
        switch (kind) {
            case LaConfig::Kind::None:
                adjusted = base_logits;
                break;
            case LaConfig::Kind::Additive:
                adjusted = additive_la(base_logits, priors, param);
                break;
            case LaConfig::Kind::Multiplicative: {
                adjusted = unit_logits;
                for (std::size_t k = 0; k < classes; ++k) {
                    const double scale = std::pow(priors.p[k], -param);
                    for (std::size_t i = 0; i < adjusted.rows(); ++i)
                        adjusted(i, k) *= scale;
                }
                break;
            }
        }
        const GroupedAccuracy acc = grouped_accuracy(adjusted, val.y, classes, groups);
        result.table.push_back({param, acc.many, acc.medium, acc.few, acc.average});
        if (first || acc.average > result.best_average) {
            result.best_average = acc.average;
            result.best_param = param;
            first = false;
        }
    }
    return result;
}

std::string GridSearchResult::to_csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "parameter,many,medium,few,average\n";
    for (const GridPoint& p : table) {
        out << p.param << "," << p.many << "," << p.medium << "," << p.few << ","
            << p.average << "\n";
    }
    return out.str();
}

}  // namespace ltlab
