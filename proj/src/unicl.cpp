#include "evsearch/unicl.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "evsearch/error.hpp"
#include "evsearch/json_codec.hpp"

namespace evsearch {

Matrix Matrix::from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) return Matrix();
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != m.cols()) throw invalid_input("ragged matrix rows");
        std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
    }
    return m;
}

void UniclBatch::validate() const {
    if (image.rows() == 0 || image.cols() == 0) throw invalid_input("batch needs n >= 1 and d >= 1");
    if (text.rows() != image.rows() || text.cols() != image.cols()) {
        throw invalid_input("image and text embedding shapes differ");
    }
    if (targets.size() != image.rows()) throw invalid_input("targets length differs from batch size");
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw invalid_input("temperature must be a positive finite number");
    }
    for (double v : image.data()) {
        if (!std::isfinite(v)) throw invalid_input("image embeddings must be finite");
    }
    for (double v : text.data()) {
        if (!std::isfinite(v)) throw invalid_input("text embeddings must be finite");
    }
}

namespace {

// Loss for row-major n x d embeddings in scalar type T. Shared by the double
// path and the extended-precision finite-difference check.
template <typename T>
T contrastive_loss(const std::vector<T>& image, const std::vector<T>& text,
                   const std::vector<std::int64_t>& targets, std::size_t n, std::size_t d, T temperature) {
    std::vector<T> s(n * n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            T sum = 0;
            for (std::size_t c = 0; c < d; ++c) sum += image[i * d + c] * text[j * d + c];
            s[i * n + j] = sum / temperature;
        }
    }
    auto lse = [&](bool by_row, std::size_t line) {
        T m = -std::numeric_limits<T>::infinity();
        for (std::size_t k = 0; k < n; ++k) m = std::max(m, by_row ? s[line * n + k] : s[k * n + line]);
        T total = 0;
        for (std::size_t k = 0; k < n; ++k) total += std::exp((by_row ? s[line * n + k] : s[k * n + line]) - m);
        return m + std::log(total);
    };
    T i2t = 0;
    T t2i = 0;
    for (std::size_t a = 0; a < n; ++a) {
        const T row_lse = lse(true, a);
        const T col_lse = lse(false, a);
        T row_sum = 0;
        T col_sum = 0;
        std::size_t positives = 0;
        for (std::size_t b = 0; b < n; ++b) {
            if (targets[b] != targets[a]) continue;
            ++positives;
            row_sum += row_lse - s[a * n + b];
            col_sum += col_lse - s[b * n + a];
        }
        i2t += row_sum / static_cast<T>(positives);
        t2i += col_sum / static_cast<T>(positives);
    }
    return (i2t + t2i) / (2 * static_cast<T>(n));
}

}  // namespace

Matrix similarity_matrix(const UniclBatch& batch) {
    batch.validate();
    const std::size_t n = batch.image.rows();
    Matrix s(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            s(i, j) = dot(batch.image.row(i), batch.text.row(j)) / batch.temperature;
        }
    }
    return s;
}

LossValue unicl_loss(const UniclBatch& batch) {
    const Matrix s = similarity_matrix(batch);
    const std::size_t n = s.rows();
    const std::size_t d = batch.image.cols();
    const double tau = batch.temperature;

    std::vector<std::size_t> positives(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) positives[i] += batch.targets[i] == batch.targets[j] ? 1 : 0;
    }

    // Max-shifted log-sum-exp per row and per column.
    std::vector<double> row_lse(n);
    std::vector<double> col_lse(n);
    for (std::size_t a = 0; a < n; ++a) {
        double row_max = s(a, 0);
        double col_max = s(0, a);
        for (std::size_t k = 1; k < n; ++k) {
            row_max = std::max(row_max, s(a, k));
            col_max = std::max(col_max, s(k, a));
        }
        double row_total = 0.0;
        double col_total = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            row_total += std::exp(s(a, k) - row_max);
            col_total += std::exp(s(k, a) - col_max);
        }
        row_lse[a] = row_max + std::log(row_total);
        col_lse[a] = col_max + std::log(col_total);
    }

    double i2t = 0.0;
    double t2i = 0.0;
    Matrix grad_s(n, n);
    const double half_over_n = 0.5 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        double row_sum = 0.0;
        double col_sum = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const bool positive = batch.targets[i] == batch.targets[j];
            if (positive) {
                row_sum += row_lse[i] - s(i, j);
                col_sum += col_lse[i] - s(j, i);
            }
            const double p_row = std::exp(s(i, j) - row_lse[i]);
            const double p_col = std::exp(s(i, j) - col_lse[j]);
            const double target_row = positive ? 1.0 / static_cast<double>(positives[i]) : 0.0;
            const double target_col = positive ? 1.0 / static_cast<double>(positives[j]) : 0.0;
            grad_s(i, j) = half_over_n * ((p_row - target_row) + (p_col - target_col));
        }
        i2t += row_sum / static_cast<double>(positives[i]);
        t2i += col_sum / static_cast<double>(positives[i]);
    }

    LossValue value;
    value.loss = (i2t + t2i) * half_over_n;
    value.grad_image = Matrix(n, d);
    value.grad_text = Matrix(n, d);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const double g = grad_s(i, j) / tau;
            if (g == 0.0) continue;
            for (std::size_t c = 0; c < d; ++c) {
                value.grad_image(i, c) += g * batch.text(j, c);
                value.grad_text(j, c) += g * batch.image(i, c);
            }
        }
    }
    return value;
}

GradientCheck finite_diff_check(const UniclBatch& batch, double epsilon) {
    batch.validate();
    if (!(epsilon > 0.0)) throw invalid_input("epsilon must be positive");
    const LossValue analytic = unicl_loss(batch);
    const std::size_t n = batch.image.rows();
    const std::size_t d = batch.image.cols();

    using Wide = long double;
    std::vector<Wide> image(batch.image.data().begin(), batch.image.data().end());
    std::vector<Wide> text(batch.text.data().begin(), batch.text.data().end());
    const Wide tau = batch.temperature;
    const Wide eps = epsilon;

    GradientCheck check;
    auto probe = [&](std::vector<Wide>& values, const Matrix& grads) {
        for (std::size_t idx = 0; idx < values.size(); ++idx) {
            const Wide original = values[idx];
            auto at = [&](Wide offset) {
                values[idx] = original + offset;
                return contrastive_loss(image, text, batch.targets, n, d, tau);
            };
            const Wide numeric_wide = (at(-2 * eps) - 8 * at(-eps) + 8 * at(eps) - at(2 * eps)) / (12 * eps);
            values[idx] = original;
            const double numeric = static_cast<double>(numeric_wide);
            const double exact = grads.data()[idx];
            const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-8});
            check.max_relative_error = std::max(check.max_relative_error, std::abs(exact - numeric) / denom);
            check.max_abs_analytic = std::max(check.max_abs_analytic, std::abs(exact));
            ++check.components;
        }
    };
    probe(image, analytic.grad_image);
    probe(text, analytic.grad_text);
    return check;
}

std::string cluster_label(std::size_t cluster) { return "c" + std::to_string(cluster); }

UniclBatch random_batch(std::mt19937_64& rng, std::size_t n, std::size_t dimension, double temperature,
                        bool distinct_targets) {
    if (n == 0 || dimension == 0) throw invalid_input("batch needs at least one sample and one dimension");
    std::normal_distribution<double> normal(0.0, 1.0);
    auto unit_rows = [&] {
        Matrix m(n, dimension);
        for (std::size_t r = 0; r < n; ++r) {
            double norm = 0.0;
            do {
                norm = 0.0;
                for (double& x : m.row(r)) {
                    x = normal(rng);
                    norm += x * x;
                }
            } while (norm == 0.0);
            norm = std::sqrt(norm);
            for (double& x : m.row(r)) x /= norm;
        }
        return m;
    };
    UniclBatch batch;
    batch.image = unit_rows();
    batch.text = unit_rows();
    batch.temperature = temperature;
    std::uniform_int_distribution<std::int64_t> label(0, static_cast<std::int64_t>(std::max<std::size_t>(1, n / 2)));
    for (std::size_t i = 0; i < n; ++i) {
        batch.targets.push_back(distinct_targets ? static_cast<std::int64_t>(i) : label(rng));
    }
    return batch;
}

SyntheticClusters::SyntheticClusters(ClusterSpec spec) : spec_(spec) {
    if (spec_.clusters == 0 || spec_.dimension == 0) throw invalid_input("clusters and dimension must be positive");
    if (spec_.clusters > spec_.dimension) throw invalid_input("need at least as many dimensions as clusters");
    if (!(spec_.noise >= 0.0) || !std::isfinite(spec_.separation)) throw invalid_input("bad cluster geometry");
    const double offset = spec_.separation / std::sqrt(2.0);
    for (std::size_t c = 0; c < spec_.clusters; ++c) {
        std::vector<double> center(spec_.dimension, 0.0);
        center[c] = offset;
        centers_.push_back(std::move(center));
        std::vector<double> text(spec_.dimension, 0.0);
        text[c] = 1.0;
        text_features_.push_back(std::move(text));
    }
}

std::vector<double> SyntheticClusters::sample(std::size_t cluster, std::mt19937_64& rng) const {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> out = centers_.at(cluster);
    for (double& v : out) v += spec_.noise * gauss(rng);
    return out;
}

Corpus SyntheticClusters::sample_corpus(std::size_t total, std::mt19937_64& rng,
                                        const std::string& prefix) const {
    std::vector<EmbeddingRecord> records;
    records.reserve(total);
    for (std::size_t i = 0; i < total; ++i) {
        const std::size_t cluster = i % spec_.clusters;
        EmbeddingRecord record;
        record.id = prefix + std::to_string(i);
        record.vector = sample(cluster, rng);
        record.label = cluster_label(cluster);
        records.push_back(std::move(record));
    }
    return Corpus(spec_.dimension, std::move(records), prefix);
}

std::vector<double> apply_map(const Matrix& map, std::span<const double> feature) {
    if (feature.size() != map.cols()) throw invalid_input("feature dimension does not match the map");
    std::vector<double> out(map.rows());
    for (std::size_t r = 0; r < map.rows(); ++r) out[r] = dot(map.row(r), feature);
    return out;
}

TrainResult toy_train(const ClusterSpec& spec, const TrainConfig& config) {
    if (config.steps == 0) throw invalid_input("steps must be positive");
    if (!(config.learning_rate > 0.0)) throw invalid_input("learning rate must be positive");
    if (config.per_cluster_batch == 0) throw invalid_input("per-cluster batch size must be positive");
    const SyntheticClusters clusters(spec);
    const std::size_t d = spec.dimension;
    const std::size_t p = config.embedding_dimension == 0 ? d : config.embedding_dimension;
    const std::size_t batch_size = spec.clusters * config.per_cluster_batch;

    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> init(0.0, 1.0 / std::sqrt(static_cast<double>(d)));
    TrainResult result;
    result.image_map = Matrix(p, d);
    result.text_map = Matrix(p, d);
    for (double& w : result.image_map.data()) w = init(rng);
    for (double& w : result.text_map.data()) w = init(rng);

    Matrix image_features(batch_size, d);
    Matrix text_features(batch_size, d);
    UniclBatch batch;
    batch.temperature = config.temperature;
    batch.targets.resize(batch_size);
    double ema = 0.0;
    double smoothed = 0.0;

    for (std::size_t step = 0; step < config.steps; ++step) {
        for (std::size_t c = 0, row = 0; c < spec.clusters; ++c) {
            for (std::size_t m = 0; m < config.per_cluster_batch; ++m, ++row) {
                const auto image = clusters.sample(c, rng);
                std::copy(image.begin(), image.end(), image_features.row(row).begin());
                const auto& text = clusters.text_feature(c);
                std::copy(text.begin(), text.end(), text_features.row(row).begin());
                batch.targets[row] = static_cast<std::int64_t>(c);
            }
        }
        batch.image = Matrix(batch_size, p);
        batch.text = Matrix(batch_size, p);
        for (std::size_t row = 0; row < batch_size; ++row) {
            const auto x = apply_map(result.image_map, image_features.row(row));
            const auto y = apply_map(result.text_map, text_features.row(row));
            std::copy(x.begin(), x.end(), batch.image.row(row).begin());
            std::copy(y.begin(), y.end(), batch.text.row(row).begin());
        }

        const LossValue value = unicl_loss(batch);
        if (!std::isfinite(value.loss)) {
            throw invalid_input("non-finite loss at step " + std::to_string(step));
        }
        ema = step == 0 ? value.loss : 0.9 * ema + 0.1 * value.loss;
        smoothed = step == 0 ? ema : std::min(smoothed, ema);
        result.trace.push_back({step, value.loss, smoothed});

        // dW = dE^T F for E = F W^T.
        auto descend = [&](Matrix& map, const Matrix& grad_embed, const Matrix& features) {
            for (std::size_t r = 0; r < p; ++r) {
                for (std::size_t c = 0; c < d; ++c) {
                    double g = config.weight_decay * map(r, c);
                    for (std::size_t b = 0; b < batch_size; ++b) g += grad_embed(b, r) * features(b, c);
                    map(r, c) -= config.learning_rate * g;
                }
            }
        };
        descend(result.image_map, value.grad_image, image_features);
        descend(result.text_map, value.grad_text, text_features);
    }
    return result;
}

ClassifierHead trained_head(const TrainResult& result, const SyntheticClusters& clusters, double temperature) {
    std::vector<std::string> classes;
    std::vector<std::vector<double>> anchors;
    for (std::size_t c = 0; c < clusters.spec().clusters; ++c) {
        classes.push_back(cluster_label(c));
        anchors.push_back(apply_map(result.text_map, clusters.text_feature(c)));
    }
    return ClassifierHead(std::move(classes), std::move(anchors), temperature, "toy-text-anchors");
}

Corpus embed_corpus(const TrainResult& result, const Corpus& features) {
    std::vector<EmbeddingRecord> records = features.records();
    for (auto& record : records) record.vector = apply_map(result.image_map, record.vector);
    return Corpus(result.image_map.rows(), std::move(records), features.name());
}

Corpus maps_corpus(const TrainResult& result) {
    std::vector<EmbeddingRecord> records;
    auto add = [&](const Matrix& map, const std::string& prefix) {
        for (std::size_t r = 0; r < map.rows(); ++r) {
            EmbeddingRecord record;
            record.id = prefix + "/" + std::to_string(r);
            record.vector.assign(map.row(r).begin(), map.row(r).end());
            records.push_back(std::move(record));
        }
    };
    add(result.image_map, "image_map");
    add(result.text_map, "text_map");
    return Corpus(result.image_map.cols(), std::move(records), "toy-maps");
}

std::string loss_trace_text(const std::vector<TrainStep>& trace) {
    std::string out;
    for (const auto& step : trace) {
        out += std::to_string(step.step);
        out.push_back('\t');
        out += format_real(step.loss);
        out.push_back('\n');
    }
    return out;
}

}  // namespace evsearch
