#include "ltlab/theory.hpp"

#include <cmath>
#include <numbers>

#include "ltlab/losses.hpp"
#include "ltlab/metrics.hpp"

namespace ltlab {

nlohmann::json TheoremReport::to_json() const {
    nlohmann::json j;
    j["theorem"] = theorem;
    j["applicable"] = applicable;
    j["holds"] = holds;
    j["bound"] = bound;
    j["premises"] = nlohmann::json::array();
    for (const PremiseCheck& p : premises) {
        j["premises"].push_back({{"name", p.name},
                                 {"value", p.value},
                                 {"threshold", p.threshold},
                                 {"relation", p.relation},
                                 {"satisfied", p.satisfied}});
    }
    j["measured"] = measured;
    return j;
}

ConeBoundResult evaluate_cone_bound(const ConeBoundInput& input) {
    ConeBoundResult result;
    const double c = static_cast<double>(input.classes);
    const double eps = input.epsilon;
    const double l = input.feature_norm_bound;

    auto premise = [&](const std::string& name, double value, double threshold,
                       const std::string& relation, bool ok) {
        result.premises.push_back({name, value, threshold, relation, ok});
        return ok;
    };

    bool ok = premise("classes >= 2", c, 2.0, ">=", input.classes >= 2);
    ok &= premise("epsilon < 1/C", eps, 1.0 / c, "<", eps > 0.0 && eps < 1.0 / c);
    const double l_cap = 2.0 * std::numbers::sqrt2 * std::log(c - 1.0);
    ok &= premise("L <= 2*sqrt(2)*log(C-1)", l, l_cap, "<=", l > 0.0 && l <= l_cap);

    if (ok) {
        result.delta =
            (1.0 / l) * ((c - 1.0) / c) * std::log((c - 1.0) * (1.0 - eps) / eps);
        ok &= premise("delta > 1/sqrt(2)", result.delta, 1.0 / std::numbers::sqrt2, ">",
                      result.delta > 1.0 / std::numbers::sqrt2);
        ok &= premise("delta <= 1", result.delta, 1.0, "<=", result.delta <= 1.0);
        if (ok) {
            result.bound =
                2.0 * result.delta * std::sqrt(1.0 - result.delta * result.delta);
        }
    }
    result.applicable = ok;
    return result;
}

ConeBound cone_bound(const ConeBoundInput& input) {
    const ConeBoundResult result = evaluate_cone_bound(input);
    if (!result.applicable) {
        for (const PremiseCheck& p : result.premises) {
            if (!p.satisfied) {
                throw Error("cone_bound: premise violated: " + p.name + " (value " +
                            std::to_string(p.value) + ", threshold " +
                            std::to_string(p.threshold) + ")");
            }
        }
    }
    return {result.delta, result.bound};
}

namespace {

/// Max-abs deviation of head^T head from the simplex ETF Gram matrix with
/// the head's own column energy.
double etf_gram_deviation(const Matrix& w_cols, double* energy_out) {
    const std::size_t c = w_cols.cols();
    const Matrix gram = matmul(w_cols.transposed(), w_cols);
    double energy = 0.0;
    for (std::size_t k = 0; k < c; ++k) energy += gram(k, k);
    energy /= static_cast<double>(c);
    if (energy_out != nullptr) *energy_out = energy;
    const double off = -energy / (static_cast<double>(c) - 1.0);
    double dev = 0.0;
    for (std::size_t a = 0; a < c; ++a)
        for (std::size_t b = 0; b < c; ++b) {
            const double want = a == b ? energy : off;
            dev = std::max(dev, std::fabs(gram(a, b) - want));
        }
    return dev;
}

}  // namespace

TheoremReport check_theorem1(const Network& net, const LabeledSet& data,
                             std::size_t max_pairs, RngStream* rng, double etf_tol,
                             double slack) {
    data.validate();
    TheoremReport report;
    report.theorem = "theorem1-cone-bound";
    const std::size_t classes = net.spec.classes;

    // The head must be a (bias-free) ETF for the bound to apply.
    double head_energy = 0.0;
    const double gram_dev =
        etf_gram_deviation(net.head.weight.transposed(), &head_energy);
    double bias_norm = 0.0;
    if (net.head.has_bias()) bias_norm = norm2(net.head.bias);
    report.premises.push_back(
        {"head is ETF (gram deviation)", gram_dev, etf_tol, "<=", gram_dev <= etf_tol});
    // The bound's derivation takes unit-norm ETF columns (E_W = 1).
    report.premises.push_back({"head column energy is 1",
                               std::fabs(head_energy - 1.0), etf_tol, "<=",
                               std::fabs(head_energy - 1.0) <= etf_tol});
    report.premises.push_back(
        {"head bias is zero", bias_norm, 0.0, "<=", bias_norm <= 0.0});
    report.measured["head_energy"] = head_energy;

    // Per-sample CE gradients at the features, via the network backward pass
    // (per-sample loss, so dlogits rows are softmax minus one-hot).
    Network& mutable_net = const_cast<Network&>(net);
    ForwardResult fwd = forward(mutable_net, data.x, BnMode::Eval);
    const std::size_t n = data.size();
    Matrix dlogits(n, classes);
    for (std::size_t i = 0; i < n; ++i) {
        double max_logit = fwd.logits(i, 0);
        for (std::size_t j = 1; j < classes; ++j)
            max_logit = std::max(max_logit, fwd.logits(i, j));
        double denom = 0.0;
        for (std::size_t j = 0; j < classes; ++j)
            denom += std::exp(fwd.logits(i, j) - max_logit);
        for (std::size_t j = 0; j < classes; ++j) {
            const double p = std::exp(fwd.logits(i, j) - max_logit) / denom;
            dlogits(i, j) =
                p - (static_cast<std::size_t>(data.y[i]) == j ? 1.0 : 0.0);
        }
    }
    const Gradients grads = backward(net, fwd.cache, dlogits);

    double epsilon = 0.0, feature_norm_bound = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        epsilon = std::max(epsilon, norm2(grads.dfeatures.row(i)));
        feature_norm_bound = std::max(feature_norm_bound, norm2(fwd.features.row(i)));
    }
    report.measured["epsilon"] = epsilon;
    report.measured["feature_norm_bound"] = feature_norm_bound;

    const ConeBoundResult cone =
        evaluate_cone_bound({classes, epsilon, feature_norm_bound});
    for (const PremiseCheck& p : cone.premises) report.premises.push_back(p);
    report.applicable = cone.applicable;
    for (const PremiseCheck& p : report.premises) report.applicable &= p.satisfied;
    if (!report.applicable) {
        report.holds = false;  // not applicable: no violation claimed
        return report;
    }
    report.measured["delta"] = cone.delta;
    report.bound = cone.bound;

    // Inter-class cosine check.
    std::vector<std::size_t> usable;
    std::size_t zero_norm = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (norm2(fwd.features.row(i)) == 0.0) {
            ++zero_norm;
        } else {
            usable.push_back(i);
        }
    }
    report.measured["zero_norm_features"] = static_cast<double>(zero_norm);

    Matrix unit = fwd.features;
    for (std::size_t i : usable) {
        const double norm = norm2(unit.row(i));
        for (std::size_t j = 0; j < unit.cols(); ++j) unit(i, j) /= norm;
    }

    double max_cos = -1.0;
    std::size_t checked = 0;
    std::size_t total_pairs = 0;
    for (std::size_t a = 0; a < usable.size(); ++a)
        for (std::size_t b = a + 1; b < usable.size(); ++b)
            if (data.y[usable[a]] != data.y[usable[b]]) ++total_pairs;

    if (max_pairs == 0 || total_pairs <= max_pairs) {
        for (std::size_t a = 0; a < usable.size(); ++a) {
            for (std::size_t b = a + 1; b < usable.size(); ++b) {
                if (data.y[usable[a]] == data.y[usable[b]]) continue;
                max_cos =
                    std::max(max_cos, dot(unit.row(usable[a]), unit.row(usable[b])));
                ++checked;
            }
        }
    } else {
        if (rng == nullptr) {
            throw DimensionError("check_theorem1: subsampling needs an rng");
        }
        while (checked < max_pairs) {
            const std::size_t a = usable[rng->uniform_index(usable.size())];
            const std::size_t b = usable[rng->uniform_index(usable.size())];
            if (a == b || data.y[a] == data.y[b]) continue;
            max_cos = std::max(max_cos, dot(unit.row(a), unit.row(b)));
            ++checked;
        }
    }
    report.measured["inter_class_pairs_checked"] = static_cast<double>(checked);
    report.measured["max_inter_class_cos"] = checked == 0 ? -1.0 : max_cos;
    // Vacuously true when there are no inter-class pairs.
    report.holds = checked == 0 || max_cos <= report.bound + slack;
    return report;
}

double amhm_ratio(double rho, std::size_t classes) {
    if (!(rho >= 1.0)) throw DimensionError("amhm_ratio: rho must be >= 1");
    if (classes < 2) throw DimensionError("amhm_ratio: classes must be >= 2");
    const double c = static_cast<double>(classes);
    if (rho == 1.0) return 1.0 / c;  // balanced limit
    const double r1 = std::pow(rho, 1.0 / (c - 1.0)) - 1.0;
    const double rc = std::pow(rho, c / (c - 1.0)) - 1.0;
    return rho * c * r1 * r1 / (rc * rc);
}

double amhm_ratio_direct(double rho, std::size_t classes) {
    if (!(rho >= 1.0)) throw DimensionError("amhm_ratio_direct: rho must be >= 1");
    if (classes < 2) throw DimensionError("amhm_ratio_direct: classes must be >= 2");
    const double c = static_cast<double>(classes);
    double inv_sum = 0.0, total = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
        const double nk = std::pow(rho, -static_cast<double>(k) / (c - 1.0));
        inv_sum += 1.0 / nk;
        total += nk;
    }
    const double nbar = c / inv_sum;
    return nbar / total;
}

NcSynth nc_synth(const NcSynthConfig& config, RngStream& rng) {
    if (config.classes < 2) throw DimensionError("nc_synth: classes must be >= 2");
    if (config.classes > config.dim) {
        throw DimensionError("nc_synth: classes must not exceed dim");
    }
    if (!(config.rho >= 1.0)) throw DimensionError("nc_synth: rho must be >= 1");
    if (!(config.c0 > 0.0)) throw DimensionError("nc_synth: c0 must be > 0");

    NcSynth synth;
    const double c = static_cast<double>(config.classes);
    synth.counts.resize(config.classes);
    if (config.real_valued_counts) {
        for (std::size_t k = 0; k < config.classes; ++k)
            synth.counts[k] = std::pow(config.rho, -static_cast<double>(k) / (c - 1.0));
    } else {
        LongTailProfile profile{config.classes, config.head_count, config.rho};
        const auto sizes = class_sizes(profile);
        for (std::size_t k = 0; k < config.classes; ++k)
            synth.counts[k] = static_cast<double>(sizes[k]);
    }
    synth.priors = ClassPriors::from_real_counts(synth.counts);

    const Matrix etf = make_etf(config.dim, config.classes, 1.0, rng);
    synth.means = Matrix(config.dim, config.classes);
    for (std::size_t k = 0; k < config.classes; ++k) {
        const double norm =
            config.c0 * std::pow(synth.priors.p[k], -config.gamma0);
        for (std::size_t i = 0; i < config.dim; ++i)
            synth.means(i, k) = norm * etf(i, k);
    }
    if (config.offset) {
        if (config.offset->size() != config.dim) {
            throw DimensionError("nc_synth: offset dimension mismatch");
        }
        for (std::size_t k = 0; k < config.classes; ++k)
            for (std::size_t i = 0; i < config.dim; ++i)
                synth.means(i, k) += (*config.offset)[i];
    }
    return synth;
}

namespace {

struct HeadObjective {
    const Matrix& means;  // d x C
    double class_weight;  // nbar / N
    double lambda;

    double value(const Matrix& w) const {
        const std::size_t c = means.cols();
        const Matrix logits = matmul(w.transposed(), means);  // C x C; (l, j)
        double loss = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            double max_logit = logits(0, j);
            for (std::size_t l = 1; l < c; ++l)
                max_logit = std::max(max_logit, logits(l, j));
            double denom = 0.0;
            for (std::size_t l = 0; l < c; ++l)
                denom += std::exp(logits(l, j) - max_logit);
            loss += std::log(denom) - (logits(j, j) - max_logit);
        }
        double sq = 0.0;
        for (double v : w.raw()) sq += v * v;
        return class_weight * loss + 0.5 * lambda * sq;
    }

    Matrix gradient(const Matrix& w) const {
        const std::size_t c = means.cols();
        Matrix p = matmul(w.transposed(), means);  // logits, then softmax in place
        for (std::size_t j = 0; j < c; ++j) {
            double max_logit = p(0, j);
            for (std::size_t l = 1; l < c; ++l) max_logit = std::max(max_logit, p(l, j));
            double denom = 0.0;
            for (std::size_t l = 0; l < c; ++l) {
                p(l, j) = std::exp(p(l, j) - max_logit);
                denom += p(l, j);
            }
            for (std::size_t l = 0; l < c; ++l) p(l, j) /= denom;
            p(j, j) -= 1.0;
        }
        Matrix grad = matmul(means, p.transposed());
        grad *= class_weight;
        for (std::size_t i = 0; i < grad.size(); ++i)
            grad.raw()[i] += lambda * w.raw()[i];
        return grad;
    }
};

}  // namespace

StationaryPoint minimize_head_objective(const Matrix& means,
                                        std::span<const double> counts, double lambda,
                                        double tol, std::size_t max_iterations) {
    const std::size_t c = means.cols();
    if (counts.size() != c) {
        throw DimensionError("minimize_head_objective: count size mismatch");
    }
    if (!(lambda > 0.0)) {
        throw DimensionError("minimize_head_objective: lambda must be > 0");
    }
    double inv_sum = 0.0, total = 0.0;
    for (double n : counts) {
        if (!(n > 0.0)) {
            throw DimensionError("minimize_head_objective: counts must be positive");
        }
        inv_sum += 1.0 / n;
        total += n;
    }
    const double nbar = static_cast<double>(c) / inv_sum;
    const double class_weight = nbar / total;
    const HeadObjective objective{means, class_weight, lambda};

    // Smoothness bound: the softmax Hessian has eigenvalues <= 1/2, so
    // L <= lambda + (weight/2) * sigma_max(M)^2 <= lambda + (weight/2)*||M||_F^2.
    // A fixed step of 1/L contracts toward the optimum even once objective
    // decreases fall below double resolution, where Armijo cannot certify
    // progress any more.
    double means_fro2 = 0.0;
    for (double v : means.raw()) means_fro2 += v * v;
    const double safe_step = 1.0 / (lambda + 0.5 * class_weight * means_fro2);

    // Warm start at the theorem's candidate point.
    Matrix w = (nbar / (total * lambda)) * means;
    double f = objective.value(w);
    double step = std::max(1.0 / lambda, safe_step);
    StationaryPoint point;
    for (std::size_t it = 0; it < max_iterations; ++it) {
        const Matrix grad = objective.gradient(w);
        const double grad_norm = grad.frobenius_norm();
        if (grad_norm <= tol) {
            point.w_star = w;
            point.grad_norm = grad_norm;
            point.iterations = it;
            point.objective = f;
            return point;
        }
        const double gg = grad_norm * grad_norm;
        bool accepted = false;
        for (double t = step; t > safe_step; t *= 0.5) {
            Matrix trial = w;
            for (std::size_t i = 0; i < trial.size(); ++i)
                trial.raw()[i] -= t * grad.raw()[i];
            const double ft = objective.value(trial);
            if (ft <= f - 1e-4 * t * gg) {
                w = std::move(trial);
                f = ft;
                step = t * 2.0;
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            for (std::size_t i = 0; i < w.size(); ++i)
                w.raw()[i] -= safe_step * grad.raw()[i];
            f = objective.value(w);
            step = safe_step * 2.0;
        }
    }
    throw TrainingError("minimize_head_objective: no convergence in " +
                        std::to_string(max_iterations) + " iterations; gradient norm " +
                        std::to_string(objective.gradient(w).frobenius_norm()));
}

TheoremReport check_theorem2(const Matrix& means, std::span<const double> counts,
                             double lambda, double tol, double big_o_constant) {
    TheoremReport report;
    report.theorem = "theorem2-implicit-la";
    const std::size_t c = means.cols();
    const std::size_t d = means.rows();

    report.premises.push_back(
        {"classes >= 2", static_cast<double>(c), 2.0, ">=", c >= 2});
    report.premises.push_back({"lambda > 0", lambda, 0.0, ">", lambda > 0.0});
    report.applicable = c >= 2 && lambda > 0.0;
    if (!report.applicable) return report;

    const StationaryPoint point = minimize_head_objective(means, counts, lambda, tol);

    double inv_sum = 0.0, total = 0.0, min_count = counts[0], max_count = counts[0];
    for (double n : counts) {
        inv_sum += 1.0 / n;
        total += n;
        min_count = std::min(min_count, n);
        max_count = std::max(max_count, n);
    }
    const double nbar = static_cast<double>(c) / inv_sum;
    const double scale = nbar / (lambda * total);
    const double rho = max_count / min_count;

    std::vector<double> mu(d, 0.0);
    for (std::size_t k = 0; k < c; ++k)
        for (std::size_t i = 0; i < d; ++i) mu[i] += means(i, k);
    for (double& v : mu) v /= static_cast<double>(c);
    const double mu_norm = norm2(mu);

    double max_residual = 0.0, max_wnorm = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
        double res_sq = 0.0, w_sq = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            const double diff = point.w_star(i, k) - scale * means(i, k);
            res_sq += diff * diff;
            w_sq += point.w_star(i, k) * point.w_star(i, k);
        }
        max_residual = std::max(max_residual, std::sqrt(res_sq));
        max_wnorm = std::max(max_wnorm, std::sqrt(w_sq));
        report.measured["residual_class_" + std::to_string(k)] = std::sqrt(res_sq);
    }

    const double lrc = lambda * rho * static_cast<double>(c);
    report.measured["nbar_over_n"] = nbar / total;
    report.measured["rho"] = rho;
    report.measured["max_residual"] = max_residual;
    report.measured["offset_term"] = scale * mu_norm;
    report.measured["excess_scaled"] = (max_residual - scale * mu_norm) * lrc * lrc;
    report.measured["max_wnorm_scaled"] = max_wnorm * lrc;
    report.measured["grad_norm"] = point.grad_norm;
    report.measured["iterations"] = static_cast<double>(point.iterations);

    report.bound = scale * mu_norm + big_o_constant / (lrc * lrc);
    report.holds = max_residual <= report.bound;
    return report;
}

std::vector<Theorem2Cell> theorem2_sweep(const NcSynthConfig& base,
                                         std::span<const double> rhos, double lambda,
                                         RngStream& rng, double tol) {
    // One ETF draw shared across the sweep so only rho varies.
    RngStream etf_rng = rng.substream(0);
    std::vector<Theorem2Cell> cells;
    for (double rho : rhos) {
        NcSynthConfig config = base;
        config.rho = rho;
        RngStream cell_rng = etf_rng;  // identical means geometry per cell
        const NcSynth synth = nc_synth(config, cell_rng);
        const StationaryPoint point =
            minimize_head_objective(synth.means, synth.counts, lambda, tol);

        double inv_sum = 0.0, total = 0.0;
        for (double n : synth.counts) {
            inv_sum += 1.0 / n;
            total += n;
        }
        const double nbar = static_cast<double>(config.classes) / inv_sum;
        const double scale = nbar / (lambda * total);

        std::vector<double> mu(config.dim, 0.0);
        for (std::size_t k = 0; k < config.classes; ++k)
            for (std::size_t i = 0; i < config.dim; ++i) mu[i] += synth.means(i, k);
        for (double& v : mu) v /= static_cast<double>(config.classes);

        double max_residual = 0.0, max_wnorm = 0.0;
        for (std::size_t k = 0; k < config.classes; ++k) {
            double res_sq = 0.0, w_sq = 0.0;
            for (std::size_t i = 0; i < config.dim; ++i) {
                const double diff =
                    point.w_star(i, k) - scale * synth.means(i, k);
                res_sq += diff * diff;
                w_sq += point.w_star(i, k) * point.w_star(i, k);
            }
            max_residual = std::max(max_residual, std::sqrt(res_sq));
            max_wnorm = std::max(max_wnorm, std::sqrt(w_sq));
        }
        const double lrc = lambda * rho * static_cast<double>(config.classes);
        cells.push_back({rho, config.classes, nbar / total, max_residual,
                         scale * norm2(mu), (max_residual - scale * norm2(mu)) * lrc * lrc,
                         max_wnorm * lrc, point.grad_norm, point.iterations});
    }
    return cells;
}

ImplicitLaFit implicit_la_equivalence(const Matrix& w_star, const Matrix& means,
                                      const ClassPriors& priors) {
    const std::size_t c = means.cols();
    const std::size_t d = means.rows();
    if (w_star.rows() != d || w_star.cols() != c || priors.p.size() != c) {
        throw DimensionError("implicit_la_equivalence: shape mismatch");
    }
    ImplicitLaFit fit;
    fit.norm_ratio.resize(c);
    fit.alignment_cos.resize(c);

    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
        double w_sq = 0.0, m_sq = 0.0, inner = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            w_sq += w_star(i, k) * w_star(i, k);
            m_sq += means(i, k) * means(i, k);
            inner += w_star(i, k) * means(i, k);
        }
        const double w_norm = std::sqrt(w_sq), m_norm = std::sqrt(m_sq);
        fit.norm_ratio[k] = m_norm == 0.0 ? 0.0 : w_norm / m_norm;
        fit.alignment_cos[k] =
            (w_norm == 0.0 || m_norm == 0.0) ? 0.0 : inner / (w_norm * m_norm);
        const double x = std::log(priors.p[k]);
        const double y = std::log(std::max(w_norm, 1e-300));
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double n = static_cast<double>(c);
    const double denom = n * sxx - sx * sx;
    fit.fitted_exponent = denom == 0.0 ? 0.0 : (n * sxy - sx * sy) / denom;
    fit.fitted_intercept = (sy - fit.fitted_exponent * sx) / n;
    return fit;
}

}  // namespace ltlab
