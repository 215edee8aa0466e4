#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "evsearch/corpus.hpp"

namespace evsearch::test_support {

// Labelled 2D-ish records around three class centres, with demographic
// attributes, months and a split tag (every fifth record is a test record).
inline Corpus clinical_corpus(std::size_t n = 60, std::uint64_t seed = 17, const std::string& prefix = "p") {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.6);
    const std::vector<std::vector<double>> centres = {{2, 0, 0, 1}, {0, 2, 0, 1}, {0, 0, 2, 1}};
    std::vector<EmbeddingRecord> records;
    for (std::size_t i = 0; i < n; ++i) {
        EmbeddingRecord r;
        r.id = prefix + std::to_string(i);
        const std::size_t c = i % 3;
        for (double x : centres[c]) r.vector.push_back(x + noise(rng));
        r.label = "L" + std::to_string(c);
        r.attributes["gender"] = i % 2 ? "F" : "M";
        r.attributes["age_years"] = std::to_string(5 + (i * 7) % 90);
        r.split = i % 5 == 0 ? Split::test : Split::database;
        r.target_months = static_cast<std::int64_t>(c * 4 + i % 3);
        records.push_back(std::move(r));
    }
    return Corpus(4, std::move(records), "clinical");
}

// Slice records for `volumes` volumes of 3 to 5 slices. Odd volumes are
// tumour-positive; stages alternate between T1 and T2.
inline Corpus volume_corpus(std::size_t volumes = 12, std::uint64_t seed = 23) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.4);
    std::vector<EmbeddingRecord> records;
    for (std::size_t v = 0; v < volumes; ++v) {
        const bool tumor = v % 2 == 1;
        const std::string stage = v % 4 == 1 ? "T1" : "T2";
        const std::size_t slices = 3 + v % 3;
        for (std::size_t s = 0; s < slices; ++s) {
            EmbeddingRecord r;
            r.id = "vol" + std::to_string(v) + "/s" + std::to_string(s);
            r.vector = {tumor ? 1.5 : -1.5, stage == "T1" ? 1.0 : -1.0, 0.0};
            for (double& x : r.vector) x += noise(rng);
            r.volume_id = "vol" + std::to_string(v);
            r.slice_index = static_cast<std::int64_t>(s);
            r.attributes["tumor_flag"] = tumor ? "true" : "false";
            if (tumor) r.attributes["tumor_stage"] = stage;
            records.push_back(std::move(r));
        }
    }
    return Corpus(3, std::move(records), "volumes");
}

}  // namespace evsearch::test_support
