#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "evsearch/corpus.hpp"
#include "evsearch/knn_decision.hpp"

namespace evsearch {

/// Dense row-major matrix, just enough for batches and linear maps.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
    std::vector<double>& data() noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    static Matrix from_rows(const std::vector<std::vector<double>>& rows);

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Paired image/text embeddings. Row i of each matrix belongs to sample i;
/// samples sharing a target are positives for each other.
struct UniclBatch {
    Matrix image;
    Matrix text;
    std::vector<std::int64_t> targets;
    double temperature = 1.0;

    // Throws on empty or mismatched shapes, non-finite entries, or a
    // non-positive temperature.
    void validate() const;
};

// S[i][j] = dot(image_i, text_j) / temperature.
Matrix similarity_matrix(const UniclBatch& batch);

struct LossValue {
    double loss = 0.0;
    Matrix grad_image;
    Matrix grad_text;
};

// Label-aware symmetric contrastive loss
//   L     = (L_i2t + L_t2i) / 2
//   L_i2t = (1/n) sum_i -(1/|P(i)|) sum_{j in P(i)} log softmax_row_i(S)_j
//   L_t2i = the same over columns of S,
// with P(i) = { j : target_j == target_i }. Returns exact analytic gradients
// with respect to both embedding matrices.
LossValue unicl_loss(const UniclBatch& batch);

struct GradientCheck {
    double max_relative_error = 0.0;
    double max_abs_analytic = 0.0;
    std::size_t components = 0;
};

// Five-point central differences (step epsilon) on every embedding
// component against unicl_loss's gradients. Relative error uses max(|analytic|, |numeric|, 1e-8) as the
// denominator. The perturbed losses are evaluated in extended precision.
GradientCheck finite_diff_check(const UniclBatch& batch, double epsilon = 1e-5);

// Random batch with unit-length rows. Targets are drawn from
// {0, .., max(1, n/2)} unless `distinct_targets`, which makes every sample
// its own class.
UniclBatch random_batch(std::mt19937_64& rng, std::size_t n, std::size_t dimension, double temperature,
                        bool distinct_targets = false);

/// Gaussian clusters with one text feature per cluster.
///
/// Cluster c is centred at (separation / sqrt 2) * e_c, so any two centres
/// are `separation` apart; image samples add isotropic noise of scale
/// `noise`. The text feature of cluster c is e_c. Requires
/// clusters <= dimension.
struct ClusterSpec {
    std::size_t clusters = 3;
    std::size_t dimension = 8;
    double separation = 4.0;
    double noise = 1.0;
};

class SyntheticClusters {
public:
    explicit SyntheticClusters(ClusterSpec spec);

    const ClusterSpec& spec() const noexcept { return spec_; }
    const std::vector<double>& center(std::size_t cluster) const { return centers_[cluster]; }
    const std::vector<double>& text_feature(std::size_t cluster) const { return text_features_[cluster]; }
    std::vector<double> sample(std::size_t cluster, std::mt19937_64& rng) const;

    // per_cluster records from every cluster, interleaved by cluster, labelled
    // "c0", "c1", ... with ids prefix + running number.
    Corpus sample_corpus(std::size_t total, std::mt19937_64& rng, const std::string& prefix) const;

private:
    ClusterSpec spec_;
    std::vector<std::vector<double>> centers_;
    std::vector<std::vector<double>> text_features_;
};

std::string cluster_label(std::size_t cluster);

struct TrainConfig {
    std::size_t steps = 500;
    double learning_rate = 0.05;
    std::uint64_t seed = 0;
    std::size_t per_cluster_batch = 2;
    double temperature = 1.0;
    double weight_decay = 0.0;
    std::size_t embedding_dimension = 0;  // 0 = same as the feature dimension
};

struct TrainStep {
    std::size_t step;
    double loss;
    double smoothed;  // running minimum of an exponential moving average
};

struct TrainResult {
    Matrix image_map;  // embedding_dimension x feature dimension
    Matrix text_map;
    std::vector<TrainStep> trace;
};

// Plain gradient descent on two linear towers. Each step draws
// per_cluster_batch image samples from every cluster, pairs each with its
// cluster's text feature, and uses the cluster index as target.
TrainResult toy_train(const ClusterSpec& spec, const TrainConfig& config);

std::vector<double> apply_map(const Matrix& map, std::span<const double> feature);

// Text-tower anchors of every cluster, labelled like sample_corpus.
ClassifierHead trained_head(const TrainResult& result, const SyntheticClusters& clusters,
                            double temperature = 1.0);

// Embeds every record of `features` with the image tower.
Corpus embed_corpus(const TrainResult& result, const Corpus& features);

// Rows of both maps as records "image_map/<r>" and "text_map/<r>".
Corpus maps_corpus(const TrainResult& result);

// "step\tloss" lines.
std::string loss_trace_text(const std::vector<TrainStep>& trace);

}  // namespace evsearch
