#include "ltlab/config.hpp"

#include <fstream>
#include <set>

namespace ltlab {

namespace {

void require_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                  const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (const auto& [key, value] : j.items()) {
        if (!allowed.contains(key)) {
            throw ConfigError(where + ": unknown key \"" + key + "\"");
        }
    }
}

template <typename T>
T get_or(const nlohmann::json& j, const std::string& key, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("bad value for \"" + key + "\": " + e.what());
    }
}

LaConfig::Kind parse_la(const std::string& s) {
    if (s == "none") return LaConfig::Kind::None;
    if (s == "add" || s == "additive") return LaConfig::Kind::Additive;
    if (s == "mult" || s == "multiplicative") return LaConfig::Kind::Multiplicative;
    throw ConfigError("unknown la kind \"" + s + "\" (none|add|mult)");
}

SgdConfig parse_sgd(const nlohmann::json& j, const std::string& where,
                    SgdConfig defaults) {
    require_keys(j, {"lr0", "momentum", "batch_size", "epochs", "seed"}, where);
    SgdConfig sgd = defaults;
    sgd.lr0 = get_or(j, "lr0", sgd.lr0);
    sgd.momentum = get_or(j, "momentum", sgd.momentum);
    sgd.batch_size = get_or(j, "batch_size", sgd.batch_size);
    sgd.epochs = get_or(j, "epochs", sgd.epochs);
    sgd.seed = get_or(j, "seed", sgd.seed);
    if (!(sgd.lr0 > 0.0)) throw ConfigError(where + ": lr0 must be > 0");
    if (sgd.momentum < 0.0 || sgd.momentum >= 1.0) {
        throw ConfigError(where + ": momentum must be in [0,1)");
    }
    if (sgd.batch_size == 0) throw ConfigError(where + ": batch_size must be > 0");
    return sgd;
}

}  // namespace

NetSpec ExperimentConfig::net_spec(std::size_t input_dim, std::size_t classes) const {
    NetSpec spec;
    spec.input_dim = input_dim;
    spec.width = model.width;
    spec.blocks = model.blocks;
    spec.classes = classes;
    spec.arch = model.arch;
    spec.head_bias = model.head_bias;
    return spec;
}

ExperimentConfig parse_experiment_config(const nlohmann::json& j) {
    require_keys(j, {"dataset", "model", "method", "seeds", "output_dir"}, "config");
    ExperimentConfig config;

    if (j.contains("dataset")) {
        const auto& d = j.at("dataset");
        require_keys(d,
                     {"kind", "classes", "head_count", "imbalance", "dim", "separation",
                      "cov_scale", "val_per_class", "test_per_class", "data_seed",
                      "train_images", "train_labels", "test_images", "test_labels",
                      "group_many_min", "group_few_max"},
                     "dataset");
        const std::string kind = get_or<std::string>(d, "kind", "synthetic");
        if (kind == "synthetic") {
            config.dataset.kind = DatasetConfig::Kind::Synthetic;
        } else if (kind == "idx") {
            config.dataset.kind = DatasetConfig::Kind::Idx;
        } else {
            throw ConfigError("dataset.kind must be synthetic or idx");
        }
        config.dataset.profile.classes =
            get_or(d, "classes", config.dataset.profile.classes);
        config.dataset.profile.head_count =
            get_or(d, "head_count", config.dataset.profile.head_count);
        config.dataset.profile.imbalance =
            get_or(d, "imbalance", config.dataset.profile.imbalance);
        config.dataset.dim = get_or(d, "dim", config.dataset.dim);
        config.dataset.separation = get_or(d, "separation", config.dataset.separation);
        config.dataset.cov_scale = get_or(d, "cov_scale", config.dataset.cov_scale);
        config.dataset.val_per_class =
            get_or(d, "val_per_class", config.dataset.val_per_class);
        config.dataset.test_per_class =
            get_or(d, "test_per_class", config.dataset.test_per_class);
        config.dataset.data_seed = get_or(d, "data_seed", config.dataset.data_seed);
        config.dataset.train_images = get_or<std::string>(d, "train_images", "");
        config.dataset.train_labels = get_or<std::string>(d, "train_labels", "");
        config.dataset.test_images = get_or<std::string>(d, "test_images", "");
        config.dataset.test_labels = get_or<std::string>(d, "test_labels", "");
        if (d.contains("group_many_min") != d.contains("group_few_max")) {
            throw ConfigError("dataset: group thresholds must be given together");
        }
        if (d.contains("group_many_min")) {
            config.dataset.thresholds =
                GroupThresholds{get_or<std::size_t>(d, "group_many_min", 0),
                                get_or<std::size_t>(d, "group_few_max", 0)};
        }
    }

    if (j.contains("model")) {
        const auto& m = j.at("model");
        require_keys(m, {"arch", "blocks", "width", "head_bias"}, "model");
        const std::string arch = get_or<std::string>(m, "arch", "mlp");
        if (arch == "mlp") {
            config.model.arch = Arch::Mlp;
        } else if (arch == "residual" || arch == "resblock") {
            config.model.arch = Arch::Residual;
        } else {
            throw ConfigError("model.arch must be mlp or residual");
        }
        config.model.blocks = get_or(m, "blocks", config.model.blocks);
        config.model.width = get_or(m, "width", config.model.width);
        config.model.head_bias = get_or(m, "head_bias", config.model.head_bias);
    }

    if (j.contains("method")) {
        const auto& m = j.at("method");
        require_keys(m,
                     {"preset", "la", "lambda1", "lambda2", "zeta", "maxnorm_eta",
                      "etf_seed", "etf_energy", "etf_basis", "fixed_gamma_grid", "stage1", "stage2"},
                     "method");
        config.method.preset = get_or<std::string>(m, "preset", config.method.preset);
        config.method.la = parse_la(get_or<std::string>(m, "la", "none"));
        config.method.params.lambda1 =
            get_or(m, "lambda1", config.method.params.lambda1);
        config.method.params.lambda2 =
            get_or(m, "lambda2", config.method.params.lambda2);
        config.method.params.zeta = get_or(m, "zeta", config.method.params.zeta);
        config.method.params.maxnorm_eta =
            get_or(m, "maxnorm_eta", config.method.params.maxnorm_eta);
        config.method.params.etf_seed =
            get_or(m, "etf_seed", config.method.params.etf_seed);
        config.method.params.etf_energy =
            get_or(m, "etf_energy", config.method.params.etf_energy);
        const std::string basis = get_or<std::string>(m, "etf_basis", "qr");
        if (basis == "qr") {
            config.method.params.etf_basis = EtfBasis::GaussianQr;
        } else if (basis == "axis") {
            config.method.params.etf_basis = EtfBasis::AxisAligned;
        } else {
            throw ConfigError("method.etf_basis must be qr or axis");
        }
        config.method.params.fixed_gamma_grid = get_or<std::vector<double>>(
            m, "fixed_gamma_grid", config.method.params.fixed_gamma_grid);
        if (m.contains("stage1")) {
            config.method.stage1 = parse_sgd(m.at("stage1"), "method.stage1",
                                             config.method.stage1);
        }
        if (m.contains("stage2")) {
            config.method.stage2 = parse_sgd(m.at("stage2"), "method.stage2",
                                             config.method.stage2);
        }
        // Fail fast on unknown preset names.
        make_preset(config.method.preset, config.method.params, config.method.la);
    }

    config.seeds = get_or<std::vector<std::uint64_t>>(j, "seeds", config.seeds);
    if (config.seeds.empty()) throw ConfigError("seeds must not be empty");
    config.output_dir = get_or<std::string>(j, "output_dir", config.output_dir);
    return config;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config parse error in " + path.string() + ": " + e.what());
    }
    return parse_experiment_config(j);
}

PreparedData prepare_data(const DatasetConfig& config) {
    PreparedData data;
    if (config.kind == DatasetConfig::Kind::Synthetic) {
        RngStream rng(config.data_seed);
        data.splits =
            synth_gaussian_lt(config.profile, config.dim, config.separation,
                              config.cov_scale, rng, config.val_per_class,
                              config.test_per_class);
    } else {
        if (config.train_images.empty() || config.train_labels.empty() ||
            config.test_images.empty() || config.test_labels.empty()) {
            throw ConfigError("idx dataset needs train/test image and label paths");
        }
        LabeledSet full_train = load_idx(config.train_images, config.train_labels);
        data.splits.test = load_idx(config.test_images, config.test_labels);

        // Carve the balanced validation split out of the balanced source
        // first, then cut the remainder down to the long-tail profile, so
        // the head class can use every non-validation sample.
        RngStream rng(config.data_seed);
        RngStream val_rng = rng.substream(0);
        RngStream lt_rng = rng.substream(1);
        const std::size_t classes = full_train.num_classes();
        std::vector<std::vector<std::size_t>> by_class(classes);
        for (std::size_t i = 0; i < full_train.size(); ++i)
            by_class[static_cast<std::size_t>(full_train.y[i])].push_back(i);
        std::vector<std::size_t> val_idx, rest_idx;
        for (std::size_t k = 0; k < classes; ++k) {
            auto& pool = by_class[k];
            if (pool.size() <= config.val_per_class) {
                throw ConfigError("class " + std::to_string(k) +
                                  " too small for the validation split");
            }
            for (std::size_t i = 0; i < config.val_per_class; ++i) {
                const std::size_t j = i + val_rng.uniform_index(pool.size() - i);
                std::swap(pool[i], pool[j]);
                val_idx.push_back(pool[i]);
            }
            rest_idx.insert(rest_idx.end(), pool.begin() + config.val_per_class,
                            pool.end());
        }
        auto take = [&](const std::vector<std::size_t>& idx) {
            LabeledSet out;
            out.x = Matrix(idx.size(), full_train.dim());
            out.y.reserve(idx.size());
            for (std::size_t r = 0; r < idx.size(); ++r) {
                for (std::size_t j = 0; j < full_train.dim(); ++j)
                    out.x(r, j) = full_train.x(idx[r], j);
                out.y.push_back(full_train.y[idx[r]]);
            }
            out.class_counts = LabeledSet::counts_from_labels(out.y, classes);
            return out;
        };
        data.splits.val = take(val_idx);
        data.splits.train =
            subsample_longtailed(take(rest_idx), config.profile, lt_rng);
    }

    const auto& counts = data.splits.train.class_counts;
    const GroupThresholds thresholds =
        config.thresholds ? *config.thresholds : GroupThresholds::tertiles(counts);
    data.groups = assign_groups(counts, thresholds);
    return data;
}

}  // namespace ltlab
