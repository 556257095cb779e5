#include "ltlab/metrics.hpp"

#include <cmath>
#include <limits>
#include <set>
#include <string>

namespace ltlab {

FeatureStats feature_stats(const Matrix& features, std::span<const int> labels,
                           std::size_t classes) {
    const std::size_t n = features.rows(), d = features.cols();
    if (labels.size() != n) throw DimensionError("feature_stats: label count mismatch");
    FeatureStats stats;
    stats.class_means = Matrix(classes, d);
    stats.counts.assign(classes, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(labels[i]);
        if (k >= classes) throw DimensionError("feature_stats: label out of range");
        ++stats.counts[k];
        for (std::size_t j = 0; j < d; ++j) stats.class_means(k, j) += features(i, j);
    }
    std::size_t present = 0;
    stats.global_mean.assign(d, 0.0);
    for (std::size_t k = 0; k < classes; ++k) {
        if (stats.counts[k] == 0) continue;
        ++present;
        for (std::size_t j = 0; j < d; ++j) {
            stats.class_means(k, j) /= static_cast<double>(stats.counts[k]);
            stats.global_mean[j] += stats.class_means(k, j);
        }
    }
    if (present == 0) throw DimensionError("feature_stats: no samples");
    for (double& v : stats.global_mean) v /= static_cast<double>(present);
    stats.mean_norms.resize(classes);
    for (std::size_t k = 0; k < classes; ++k)
        stats.mean_norms[k] = stats.counts[k] == 0 ? 0.0 : norm2(stats.class_means.row(k));
    return stats;
}

double default_fdr_jitter(const Matrix& s_w) {
    double trace = 0.0;
    for (std::size_t i = 0; i < s_w.rows(); ++i) trace += s_w(i, i);
    return 1e-8 * trace / static_cast<double>(s_w.rows());
}

double fdr(const Matrix& features, std::span<const int> labels, std::size_t classes,
           double jitter) {
    const std::size_t n = features.rows(), d = features.cols();
    const FeatureStats stats = feature_stats(features, labels, classes);
    std::size_t present = 0;
    for (std::size_t c : stats.counts) present += (c > 0) ? 1 : 0;
    if (present < 2) throw DimensionError("fdr: need at least 2 classes present");
    if (n <= present) throw DimensionError("fdr: need more samples than classes");

    Matrix s_b(d, d), s_w(d, d);
    std::vector<double> diff(d);
    for (std::size_t k = 0; k < classes; ++k) {
        if (stats.counts[k] == 0) continue;
        for (std::size_t j = 0; j < d; ++j)
            diff[j] = stats.class_means(k, j) - stats.global_mean[j];
        const double nk = static_cast<double>(stats.counts[k]);
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b) s_b(a, b) += nk * diff[a] * diff[b];
    }
    for (std::size_t i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(labels[i]);
        for (std::size_t j = 0; j < d; ++j)
            diff[j] = features(i, j) - stats.class_means(k, j);
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b) s_w(a, b) += diff[a] * diff[b];
    }

    if (jitter < 0.0) jitter = default_fdr_jitter(s_w);
    Matrix x;
    try {
        x = solve_spd(s_w, s_b, jitter);
    } catch (const SingularMatrixError& e) {
        throw SingularMatrixError(
            std::string("fdr: within-class scatter singular beyond jitter ") +
                std::to_string(jitter) + "; increase jitter (" + e.what() + ")",
            e.pivot());
    }
    double trace = 0.0;
    for (std::size_t i = 0; i < d; ++i) trace += x(i, i);
    return trace;
}

CosineMatrix cosine_matrix(const Matrix& features, std::span<const int> labels,
                           std::size_t classes, std::size_t max_pairs_per_cell,
                           RngStream& rng) {
    const std::size_t n = features.rows();
    if (labels.size() != n) throw DimensionError("cosine_matrix: label count mismatch");
    if (max_pairs_per_cell == 0) {
        throw DimensionError("cosine_matrix: max_pairs_per_cell must be > 0");
    }

    // Unit-normalize once; zero-norm features are excluded from every cell.
    std::vector<std::vector<std::size_t>> by_class(classes);
    Matrix unit = features;
    std::size_t excluded = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double norm = norm2(features.row(i));
        if (norm == 0.0) {
            ++excluded;
            continue;
        }
        for (std::size_t j = 0; j < features.cols(); ++j) unit(i, j) /= norm;
        by_class[static_cast<std::size_t>(labels[i])].push_back(i);
    }

    const double nan = std::numeric_limits<double>::quiet_NaN();
    CosineMatrix out;
    out.mean_cos = Matrix(classes, classes, nan);
    out.pair_counts.assign(classes * classes, 0);
    out.zero_norm_excluded = excluded;

    for (std::size_t a = 0; a < classes; ++a) {
        for (std::size_t b = a; b < classes; ++b) {
            const auto& ia = by_class[a];
            const auto& ib = by_class[b];
            const std::size_t total_pairs =
                a == b ? ia.size() * (ia.size() - 1) / 2 : ia.size() * ib.size();
            if (total_pairs == 0) continue;  // undefined cell stays NaN

            double sum = 0.0;
            std::size_t used = 0;
            if (total_pairs <= max_pairs_per_cell) {
                if (a == b) {
                    for (std::size_t p = 0; p < ia.size(); ++p)
                        for (std::size_t q = p + 1; q < ia.size(); ++q) {
                            sum += dot(unit.row(ia[p]), unit.row(ia[q]));
                            ++used;
                        }
                } else {
                    for (std::size_t p : ia)
                        for (std::size_t q : ib) {
                            sum += dot(unit.row(p), unit.row(q));
                            ++used;
                        }
                }
            } else {
                // Uniform subsample of distinct pairs.
                std::set<std::pair<std::size_t, std::size_t>> seen;
                while (used < max_pairs_per_cell) {
                    std::size_t p, q;
                    if (a == b) {
                        p = rng.uniform_index(ia.size());
                        q = rng.uniform_index(ia.size());
                        if (p == q) continue;
                        if (p > q) std::swap(p, q);
                    } else {
                        p = rng.uniform_index(ia.size());
                        q = rng.uniform_index(ib.size());
                    }
                    if (!seen.insert({p, q}).second) continue;
                    const std::size_t ip = ia[p];
                    const std::size_t iq = a == b ? ia[q] : ib[q];
                    sum += dot(unit.row(ip), unit.row(iq));
                    ++used;
                }
            }
            const double mean = sum / static_cast<double>(used);
            out.mean_cos(a, b) = mean;
            out.mean_cos(b, a) = mean;
            out.pair_counts[a * classes + b] = used;
            out.pair_counts[b * classes + a] = used;
        }
    }
    return out;
}

double mean_offdiag(const CosineMatrix& cm) {
    const std::size_t c = cm.mean_cos.rows();
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t a = 0; a < c; ++a)
        for (std::size_t b = 0; b < c; ++b) {
            if (a == b || std::isnan(cm.mean_cos(a, b))) continue;
            sum += cm.mean_cos(a, b);
            ++count;
        }
    return count == 0 ? std::numeric_limits<double>::quiet_NaN()
                      : sum / static_cast<double>(count);
}

std::vector<double> mean_norms(const Matrix& features, std::span<const int> labels,
                               std::size_t classes) {
    return feature_stats(features, labels, classes).mean_norms;
}

BnStats bn_stats(const Network& net) {
    std::vector<const BatchNormLayer*> layers;
    for (const MlpBlock& b : net.mlp_blocks) layers.push_back(&b.bn);
    for (const ResidualBlock& b : net.residual_blocks) {
        layers.push_back(&b.bn1);
        layers.push_back(&b.bn2);
    }
    if (layers.empty()) throw DimensionError("bn_stats: model has no BN layers");

    BnStats stats;
    double gsum = 0.0, bsum = 0.0;
    for (const auto* bn : layers) {
        stats.parameter_count += bn->gamma.size();
        for (double v : bn->gamma) gsum += v;
        for (double v : bn->beta) bsum += v;
    }
    const double n = static_cast<double>(stats.parameter_count);
    stats.gamma_mean = gsum / n;
    stats.beta_mean = bsum / n;
    double gvar = 0.0, bvar = 0.0;
    for (const auto* bn : layers) {
        for (double v : bn->gamma) gvar += (v - stats.gamma_mean) * (v - stats.gamma_mean);
        for (double v : bn->beta) bvar += (v - stats.beta_mean) * (v - stats.beta_mean);
    }
    stats.gamma_std = std::sqrt(gvar / n);
    stats.beta_std = std::sqrt(bvar / n);
    return stats;
}

ForgettingRecord forgetting_scores(const std::vector<std::vector<std::uint8_t>>& history,
                                   std::span<const int> labels, std::size_t classes,
                                   const GroupAssignment* groups) {
    if (history.size() < 2) {
        throw DimensionError("forgetting_scores: need at least 2 epochs");
    }
    const std::size_t n = history.front().size();
    for (const auto& epoch : history) {
        if (epoch.size() != n) {
            throw DimensionError("forgetting_scores: ragged history");
        }
    }
    if (labels.size() != n) {
        throw DimensionError("forgetting_scores: label count mismatch");
    }

    ForgettingRecord record;
    record.per_sample.assign(n, 0);
    for (std::size_t e = 0; e + 1 < history.size(); ++e)
        for (std::size_t i = 0; i < n; ++i)
            if (history[e][i] != 0 && history[e + 1][i] == 0) ++record.per_sample[i];

    std::vector<double> sums(classes, 0.0);
    std::vector<std::size_t> counts(classes, 0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(labels[i]);
        sums[k] += static_cast<double>(record.per_sample[i]);
        ++counts[k];
    }
    record.per_class_mean.assign(classes, 0.0);
    for (std::size_t k = 0; k < classes; ++k)
        if (counts[k] > 0) record.per_class_mean[k] = sums[k] / static_cast<double>(counts[k]);

    if (groups != nullptr) {
        double gsum[3] = {0, 0, 0};
        std::size_t gcount[3] = {0, 0, 0};
        for (std::size_t k = 0; k < classes; ++k) {
            if (counts[k] == 0) continue;
            const auto g = static_cast<std::size_t>(groups->group_of[k]);
            gsum[g] += record.per_class_mean[k];
            ++gcount[g];
        }
        record.many = gcount[0] ? gsum[0] / static_cast<double>(gcount[0]) : 0.0;
        record.medium = gcount[1] ? gsum[1] / static_cast<double>(gcount[1]) : 0.0;
        record.few = gcount[2] ? gsum[2] / static_cast<double>(gcount[2]) : 0.0;
    }
    return record;
}

Matrix apply_probe_layer(const Matrix& x, const Matrix& weight,
                         std::span<const double> bias) {
    Matrix y = matmul(x, weight.transposed());
    for (std::size_t i = 0; i < y.rows(); ++i)
        for (std::size_t j = 0; j < y.cols(); ++j) {
            y(i, j) += bias[j];
            if (y(i, j) < 0.0) y(i, j) = 0.0;
        }
    return y;
}

ProbeFdrSeries random_probe_fdr(const Matrix& features, std::span<const int> labels,
                                std::size_t classes, std::size_t probes,
                                RngStream& rng, double jitter) {
    if (probes < 1) throw DimensionError("random_probe_fdr: probes must be >= 1");
    const std::size_t d = features.cols();
    const double bound = 1.0 / std::sqrt(static_cast<double>(d));

    ProbeFdrSeries series;
    series.values.push_back(fdr(features, labels, classes, jitter));
    series.defined.push_back(true);

    Matrix current = features;
    for (std::size_t p = 0; p < probes; ++p) {
        Matrix weight(d, d);
        for (double& v : weight.raw()) v = rng.uniform(-bound, bound);
        std::vector<double> bias(d);
        for (double& v : bias) v = rng.uniform(-bound, bound);
        current = apply_probe_layer(current, weight, bias);

        if (current.max_abs() == 0.0) {
            // Every activation died; FDR is undefined at this depth.
            series.values.push_back(std::numeric_limits<double>::quiet_NaN());
            series.defined.push_back(false);
            continue;
        }
        series.values.push_back(fdr(current, labels, classes, jitter));
        series.defined.push_back(true);
    }
    return series;
}

}  // namespace ltlab
