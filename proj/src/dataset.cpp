#include "ltlab/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "ltlab/matrix_io.hpp"

namespace ltlab {

namespace {

double round_half_to_even(double x) {
    const double f = std::floor(x);
    const double frac = x - f;
    if (frac > 0.5) return f + 1.0;
    if (frac < 0.5) return f;
    return std::fmod(f, 2.0) == 0.0 ? f : f + 1.0;
}

}  // namespace

void LongTailProfile::validate() const {
    if (classes < 2) throw DimensionError("LongTailProfile: classes must be >= 2");
    if (head_count < 1) throw DimensionError("LongTailProfile: head_count must be >= 1");
    if (!(imbalance >= 1.0)) {
        throw DimensionError("LongTailProfile: imbalance must be >= 1");
    }
}

std::vector<std::size_t> class_sizes(const LongTailProfile& profile) {
    profile.validate();
    const double c1 = static_cast<double>(profile.classes - 1);
    std::vector<std::size_t> counts(profile.classes);
    for (std::size_t k = 0; k < profile.classes; ++k) {
        const double ideal = static_cast<double>(profile.head_count) *
                             std::pow(profile.imbalance, -static_cast<double>(k) / c1);
        counts[k] = static_cast<std::size_t>(std::max(1.0, round_half_to_even(ideal)));
    }
    // Guard against rounding inversions; the ideal sequence is monotone.
    for (std::size_t k = 1; k < counts.size(); ++k)
        counts[k] = std::min(counts[k], counts[k - 1]);
    return counts;
}

double harmonic_mean(std::span<const std::size_t> counts) {
    if (counts.empty()) throw DimensionError("harmonic_mean: empty counts");
    double inv_sum = 0.0;
    for (std::size_t n : counts) {
        if (n < 1) throw DimensionError("harmonic_mean: counts must be >= 1");
        inv_sum += 1.0 / static_cast<double>(n);
    }
    return static_cast<double>(counts.size()) / inv_sum;
}

void LabeledSet::validate() const {
    if (x.rows() != y.size()) throw DimensionError("LabeledSet: x rows != label count");
    const std::size_t classes = class_counts.size();
    std::vector<std::size_t> seen(classes, 0);
    for (int label : y) {
        if (label < 0 || static_cast<std::size_t>(label) >= classes) {
            throw DimensionError("LabeledSet: label " + std::to_string(label) +
                                 " out of range [0," + std::to_string(classes) + ")");
        }
        ++seen[static_cast<std::size_t>(label)];
    }
    if (seen != class_counts) {
        throw DimensionError("LabeledSet: class_counts inconsistent with labels");
    }
}

std::vector<std::size_t> LabeledSet::counts_from_labels(std::span<const int> y,
                                                        std::size_t classes) {
    std::vector<std::size_t> counts(classes, 0);
    for (int label : y) {
        if (label < 0 || static_cast<std::size_t>(label) >= classes) {
            throw DimensionError("label out of range");
        }
        ++counts[static_cast<std::size_t>(label)];
    }
    return counts;
}

GroupThresholds GroupThresholds::tertiles(std::span<const std::size_t> counts) {
    const std::size_t c = counts.size();
    if (c < 3) return {0, 0};
    const std::size_t third = c / 3;
    // Counts are non-increasing: classes [0, third) become Many and
    // classes [c - third, c) become Few.
    return {counts[third], counts[c - third - 1]};
}

std::vector<std::size_t> GroupAssignment::classes_in(Group g) const {
    std::vector<std::size_t> out;
    for (std::size_t k = 0; k < group_of.size(); ++k)
        if (group_of[k] == g) out.push_back(k);
    return out;
}

GroupAssignment assign_groups(std::span<const std::size_t> counts,
                              GroupThresholds thresholds) {
    if (thresholds.many_min + 1 < thresholds.few_max) {
        throw DimensionError("assign_groups: thresholds out of order");
    }
    GroupAssignment out;
    out.thresholds = thresholds;
    out.group_of.reserve(counts.size());
    for (std::size_t n : counts) {
        if (n > thresholds.many_min) {
            out.group_of.push_back(Group::Many);
        } else if (n < thresholds.few_max) {
            out.group_of.push_back(Group::Few);
        } else {
            out.group_of.push_back(Group::Medium);
        }
    }
    return out;
}

namespace {

/// Class means drawn on the sphere of radius `separation`.
Matrix draw_class_means(std::size_t classes, std::size_t dim, double separation,
                        RngStream& rng) {
    Matrix means(classes, dim);
    for (std::size_t k = 0; k < classes; ++k) {
        double n2 = 0.0;
        do {
            for (std::size_t j = 0; j < dim; ++j) means(k, j) = rng.normal();
            n2 = norm2(means.row(k));
        } while (n2 == 0.0);
        for (std::size_t j = 0; j < dim; ++j) means(k, j) *= separation / n2;
    }
    return means;
}

LabeledSet sample_blobs(const Matrix& means, std::span<const std::size_t> counts,
                        double cov_scale, RngStream& rng) {
    const std::size_t classes = means.rows();
    const std::size_t dim = means.cols();
    const std::size_t total = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
    LabeledSet set;
    set.x = Matrix(total, dim);
    set.y.reserve(total);
    set.class_counts.assign(counts.begin(), counts.end());
    std::size_t row = 0;
    for (std::size_t k = 0; k < classes; ++k) {
        for (std::size_t i = 0; i < counts[k]; ++i, ++row) {
            for (std::size_t j = 0; j < dim; ++j)
                set.x(row, j) = means(k, j) + cov_scale * rng.normal();
            set.y.push_back(static_cast<int>(k));
        }
    }
    return set;
}

}  // namespace

SynthSplits synth_gaussian_lt(const LongTailProfile& profile, std::size_t dim,
                              double separation, double cov_scale, RngStream& rng,
                              std::size_t val_per_class, std::size_t test_per_class) {
    profile.validate();
    if (!(separation > 0.0)) {
        throw DimensionError("synth_gaussian_lt: separation must be > 0");
    }
    if (cov_scale < 0.0) {
        throw DimensionError("synth_gaussian_lt: cov_scale must be >= 0");
    }
    RngStream means_rng = rng.substream(0);
    RngStream train_rng = rng.substream(1);
    RngStream val_rng = rng.substream(2);
    RngStream test_rng = rng.substream(3);

    const Matrix means = draw_class_means(profile.classes, dim, separation, means_rng);
    const std::vector<std::size_t> train_counts = class_sizes(profile);
    const std::vector<std::size_t> val_counts(profile.classes, val_per_class);
    const std::vector<std::size_t> test_counts(profile.classes, test_per_class);

    SynthSplits splits;
    splits.train = sample_blobs(means, train_counts, cov_scale, train_rng);
    splits.val = sample_blobs(means, val_counts, cov_scale, val_rng);
    splits.test = sample_blobs(means, test_counts, cov_scale, test_rng);
    return splits;
}

LabeledSet subsample_longtailed(const LabeledSet& balanced,
                                const LongTailProfile& profile, RngStream& rng) {
    balanced.validate();
    if (balanced.num_classes() != profile.classes) {
        throw DimensionError("subsample_longtailed: class count mismatch");
    }
    const std::vector<std::size_t> target = class_sizes(profile);
    std::vector<std::vector<std::size_t>> by_class(profile.classes);
    for (std::size_t i = 0; i < balanced.size(); ++i)
        by_class[static_cast<std::size_t>(balanced.y[i])].push_back(i);

    std::vector<std::size_t> chosen;
    for (std::size_t k = 0; k < profile.classes; ++k) {
        auto& pool = by_class[k];
        if (pool.size() < target[k]) {
            throw DimensionError("subsample_longtailed: class " + std::to_string(k) +
                                 " has " + std::to_string(pool.size()) +
                                 " samples, needs " + std::to_string(target[k]));
        }
        // Partial Fisher-Yates: first target[k] entries become the sample.
        for (std::size_t i = 0; i < target[k]; ++i) {
            const std::size_t j = i + rng.uniform_index(pool.size() - i);
            std::swap(pool[i], pool[j]);
            chosen.push_back(pool[i]);
        }
    }

    LabeledSet out;
    out.x = Matrix(chosen.size(), balanced.dim());
    out.y.reserve(chosen.size());
    out.class_counts = target;
    for (std::size_t r = 0; r < chosen.size(); ++r) {
        for (std::size_t j = 0; j < balanced.dim(); ++j)
            out.x(r, j) = balanced.x(chosen[r], j);
        out.y.push_back(balanced.y[chosen[r]]);
    }
    return out;
}

namespace {

std::uint32_t read_u32_be(std::istream& in, std::size_t offset, const char* what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) {
        throw FormatError(std::string("idx: truncated ") + what, offset);
    }
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

void write_u32_be(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace

LabeledSet load_idx(const std::filesystem::path& images_path,
                    const std::filesystem::path& labels_path) {
    std::ifstream img(images_path, std::ios::binary);
    if (!img) throw Error("cannot open " + images_path.string());
    const std::uint32_t img_magic = read_u32_be(img, 0, "image magic");
    if (img_magic != 0x00000803u) {
        throw FormatError("idx: bad image magic 0x" + std::to_string(img_magic), 0);
    }
    const std::uint32_t n = read_u32_be(img, 4, "image count");
    const std::uint32_t rows = read_u32_be(img, 8, "image rows");
    const std::uint32_t cols = read_u32_be(img, 12, "image cols");
    const std::size_t pixels = static_cast<std::size_t>(rows) * cols;

    LabeledSet set;
    set.x = Matrix(n, pixels);
    std::vector<unsigned char> buf(pixels);
    for (std::uint32_t i = 0; i < n; ++i) {
        if (!img.read(reinterpret_cast<char*>(buf.data()),
                      static_cast<std::streamsize>(pixels))) {
            throw FormatError("idx: truncated image payload",
                              16 + static_cast<std::size_t>(i) * pixels);
        }
        for (std::size_t j = 0; j < pixels; ++j)
            set.x(i, j) = static_cast<double>(buf[j]) / 255.0;
    }

    std::ifstream lbl(labels_path, std::ios::binary);
    if (!lbl) throw Error("cannot open " + labels_path.string());
    const std::uint32_t lbl_magic = read_u32_be(lbl, 0, "label magic");
    if (lbl_magic != 0x00000801u) {
        throw FormatError("idx: bad label magic 0x" + std::to_string(lbl_magic), 0);
    }
    const std::uint32_t ln = read_u32_be(lbl, 4, "label count");
    if (ln != n) {
        throw FormatError("idx: label count " + std::to_string(ln) +
                              " != image count " + std::to_string(n),
                          4);
    }
    std::vector<unsigned char> labels(ln);
    if (!lbl.read(reinterpret_cast<char*>(labels.data()),
                  static_cast<std::streamsize>(ln))) {
        throw FormatError("idx: truncated label payload", 8);
    }
    int max_label = 0;
    set.y.reserve(ln);
    for (unsigned char l : labels) {
        set.y.push_back(static_cast<int>(l));
        max_label = std::max(max_label, static_cast<int>(l));
    }
    set.class_counts =
        LabeledSet::counts_from_labels(set.y, static_cast<std::size_t>(max_label) + 1);
    return set;
}

void write_idx(const LabeledSet& set, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path) {
    std::ofstream img(images_path, std::ios::binary);
    if (!img) throw Error("cannot open " + images_path.string());
    write_u32_be(img, 0x00000803u);
    write_u32_be(img, static_cast<std::uint32_t>(set.size()));
    write_u32_be(img, 1u);
    write_u32_be(img, static_cast<std::uint32_t>(set.dim()));
    std::vector<unsigned char> buf(set.dim());
    for (std::size_t i = 0; i < set.size(); ++i) {
        for (std::size_t j = 0; j < set.dim(); ++j) {
            const double v = set.x(i, j) * 255.0;
            buf[j] = static_cast<unsigned char>(std::lround(v));
        }
        img.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size()));
    }

    std::ofstream lbl(labels_path, std::ios::binary);
    if (!lbl) throw Error("cannot open " + labels_path.string());
    write_u32_be(lbl, 0x00000801u);
    write_u32_be(lbl, static_cast<std::uint32_t>(set.size()));
    for (int y : set.y) lbl.put(static_cast<char>(static_cast<unsigned char>(y)));
}

void save_labeled_set(const std::filesystem::path& stem, const LabeledSet& set) {
    save_matrix(stem.string() + ".ltmx", set.x);
    nlohmann::json side;
    side["labels"] = set.y;
    side["class_counts"] = set.class_counts;
    std::ofstream out(stem.string() + ".json");
    if (!out) throw Error("cannot open " + stem.string() + ".json");
    out << side.dump(2) << "\n";
}

LabeledSet load_labeled_set(const std::filesystem::path& stem) {
    LabeledSet set;
    set.x = load_matrix(stem.string() + ".ltmx");
    std::ifstream in(stem.string() + ".json");
    if (!in) throw Error("cannot open " + stem.string() + ".json");
    nlohmann::json side = nlohmann::json::parse(in);
    set.y = side.at("labels").get<std::vector<int>>();
    set.class_counts = side.at("class_counts").get<std::vector<std::size_t>>();
    set.validate();
    return set;
}

}  // namespace ltlab
