#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ltlab/matrix.hpp"
#include "ltlab/rng.hpp"

namespace ltlab {

/// Exponential long-tail profile: class k (0-based) receives
/// round(head_count * imbalance^(-k/(classes-1))) samples, floored at 1.
struct LongTailProfile {
    std::size_t classes = 2;     ///< C >= 2
    std::size_t head_count = 1;  ///< N_1 >= 1
    double imbalance = 1.0;      ///< rho >= 1

    void validate() const;
};

/// Per-class sample counts for a profile. Rounding is half-to-even; the
/// result is non-increasing and ends at max(1, round(head_count/imbalance)).
std::vector<std::size_t> class_sizes(const LongTailProfile& profile);

/// Harmonic mean C / sum(1/n_k); all counts must be >= 1.
double harmonic_mean(std::span<const std::size_t> counts);

struct LabeledSet {
    Matrix x;                               ///< N x p inputs
    std::vector<int> y;                     ///< labels in [0, C)
    std::vector<std::size_t> class_counts;  ///< length C, sums to N

    std::size_t size() const { return y.size(); }
    std::size_t dim() const { return x.cols(); }
    std::size_t num_classes() const { return class_counts.size(); }

    /// Checks label range and count consistency; throws DimensionError.
    void validate() const;

    /// Recomputes class_counts from y given the class count.
    static std::vector<std::size_t> counts_from_labels(std::span<const int> y,
                                                       std::size_t classes);
};

enum class Group { Many, Medium, Few };

struct GroupThresholds {
    std::size_t many_min = 0;  ///< count > many_min  => Many
    std::size_t few_max = 0;   ///< count < few_max   => Few

    /// Standard absolute thresholds for CIFAR10-LT (1000, 200) and
    /// CIFAR100-LT (100, 20) class sizes.
    static GroupThresholds cifar10_lt() { return {1000, 200}; }
    static GroupThresholds cifar100_lt() { return {100, 20}; }

    /// Rank-based fallback for synthetic profiles: splits the (sorted,
    /// non-increasing) counts into thirds by class index.
    static GroupThresholds tertiles(std::span<const std::size_t> counts);
};

struct GroupAssignment {
    GroupThresholds thresholds;
    std::vector<Group> group_of;  ///< length C

    std::vector<std::size_t> classes_in(Group g) const;
};

GroupAssignment assign_groups(std::span<const std::size_t> counts,
                              GroupThresholds thresholds);

struct SynthSplits {
    LabeledSet train;
    LabeledSet val;
    LabeledSet test;
};

/// Synthetic Gaussian-blob long-tailed task. Class means are drawn uniformly
/// on the sphere of radius `separation`; samples add isotropic N(0, cov_scale^2)
/// noise. Train follows the profile, val and test are class-balanced.
SynthSplits synth_gaussian_lt(const LongTailProfile& profile, std::size_t dim,
                              double separation, double cov_scale, RngStream& rng,
                              std::size_t val_per_class = 20,
                              std::size_t test_per_class = 50);

/// Uniform without-replacement subsample of a balanced set down to the
/// profile's per-class counts. Throws if a class has too few source samples.
LabeledSet subsample_longtailed(const LabeledSet& balanced,
                                const LongTailProfile& profile, RngStream& rng);

/// IDX readers (big-endian magic 0x803 for images, 0x801 for labels).
/// Pixels are scaled to [0,1].
LabeledSet load_idx(const std::filesystem::path& images_path,
                    const std::filesystem::path& labels_path);

/// Inverse of load_idx for byte-valued data (x entries must be k/255).
void write_idx(const LabeledSet& set, const std::filesystem::path& images_path,
               const std::filesystem::path& labels_path);

/// LabeledSet on disk: <stem>.ltmx (binary matrix) + <stem>.json sidecar with
/// labels and class counts.
void save_labeled_set(const std::filesystem::path& stem, const LabeledSet& set);
LabeledSet load_labeled_set(const std::filesystem::path& stem);

}  // namespace ltlab
