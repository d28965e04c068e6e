#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "cw/dataio.hpp"
#include "cw/rng.hpp"

namespace cwtest {

// Two Gaussian blobs, negatives at -sep/2 and positives at +sep/2 on every
// axis.
inline cw::DatasetTable blob_table(std::int64_t n_neg, std::int64_t n_pos, std::int64_t d,
                                   double separation, std::uint64_t seed, double noise = 1.0) {
    cw::DatasetTable t;
    for (std::int64_t c = 0; c < d; ++c) t.feature_names.push_back("f" + std::to_string(c));
    cw::RngStream rng(seed, cw::Stream::init);
    auto emit = [&](std::int64_t count, int label, double center) {
        for (std::int64_t i = 0; i < count; ++i) {
            t.labels.push_back(label);
            for (std::int64_t c = 0; c < d; ++c)
                t.features.push_back(center + noise * rng.normal());
        }
    };
    emit(n_neg, 0, -separation / 2.0);
    emit(n_pos, 1, separation / 2.0);
    return t;
}

// Interleave rows so class order is not block-structured.
inline cw::DatasetTable shuffled(const cw::DatasetTable& t, std::uint64_t seed) {
    std::vector<std::int64_t> order(static_cast<std::size_t>(t.rows()));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<std::int64_t>(i);
    cw::RngStream rng(seed, cw::Stream::shuffle);
    rng.shuffle(order);
    return t.subset(order);
}

// Punch MCAR holes into a copy of the table; returns the mask of cells
// removed (true = removed).
inline std::pair<cw::DatasetTable, std::vector<char>> with_missing(const cw::DatasetTable& t,
                                                                   double fraction,
                                                                   std::uint64_t seed) {
    cw::DatasetTable out = t;
    std::vector<char> removed(out.features.size(), 0);
    cw::RngStream rng(seed, cw::Stream::resample);
    for (std::size_t i = 0; i < out.features.size(); ++i) {
        if (rng.uniform() < fraction) {
            out.features[i] = std::numeric_limits<double>::quiet_NaN();
            removed[i] = 1;
        }
    }
    // keep at least one observed value per column
    const std::int64_t d = out.cols();
    for (std::int64_t c = 0; c < d; ++c) {
        bool any = false;
        for (std::int64_t r = 0; r < out.rows(); ++r)
            if (!cw::DatasetTable::missing(out.cell(r, c))) any = true;
        if (!any) {
            out.cell(0, c) = t.cell(0, c);
            removed[static_cast<std::size_t>(c)] = 0;
        }
    }
    return {out, removed};
}

// A miniature file in the APS distribution layout: license preamble, header
// row starting with "class", neg/pos labels, "na" missing cells.
inline void write_mini_aps(const std::string& path) {
    std::ofstream f(path);
    f << "Some license text above the data.\n";
    f << "More preamble, with, commas\n";
    f << "\n";
    f << "class,aa_000,ab_000,ac_000\n";
    f << "neg,1,2,3\n";
    f << "neg,4,na,6\n";
    f << "pos,7,8,NA\n";
    f << "neg,10,11,12\n";
    f << "pos,na,14,15\n";
}

inline void write_mini_secom(const std::string& features_path, const std::string& labels_path) {
    std::ofstream f(features_path);
    f << "1.5 2.5 NaN\n";
    f << "3.0 NaN 4.0\n";
    f << "5.0 6.0 7.0\n";
    f << "8.0 9.0 10.0\n";
    std::ofstream l(labels_path);
    l << "-1 \"19/07/2008 11:55:00\"\n";
    l << "1 \"19/07/2008 12:32:00\"\n";
    l << "-1 \"19/07/2008 13:17:00\"\n";
    l << "-1 \"19/07/2008 14:43:00\"\n";
}

// Exhaustive k-NN oracle: direct squared distances, stable (dist, index)
// sort.
inline std::vector<std::int64_t> knn_oracle(const std::vector<double>& refs, std::int64_t n,
                                            std::int64_t d, const double* query, std::int64_t k,
                                            std::int64_t exclude = -1) {
    std::vector<std::pair<double, std::int64_t>> ranked;
    for (std::int64_t r = 0; r < n; ++r) {
        if (r == exclude) continue;
        double dist = 0.0;
        for (std::int64_t c = 0; c < d; ++c) {
            const double dv = refs[static_cast<std::size_t>(r * d + c)] - query[c];
            dist += dv * dv;
        }
        ranked.emplace_back(dist, r);
    }
    std::sort(ranked.begin(), ranked.end());
    std::vector<std::int64_t> out;
    for (std::int64_t i = 0; i < k; ++i) out.push_back(ranked[static_cast<std::size_t>(i)].second);
    return out;
}

}  // namespace cwtest
