// SPDX-License-Identifier: Apache-2.0
//
// Rank (SROCC) and linear (PLCC) correlation between ground-truth and
// predicted quality scores. Computed in double throughout.
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "radn/common.hpp"

namespace radn {

struct EvalSeries {
    std::vector<double> ground_truth;
    std::vector<double> predicted;
    std::vector<std::string> ids;  // optional, parallel to the score lists

    std::size_t size() const { return ground_truth.size(); }
};

// 1-based ranks; tied values receive the mean of the ranks they span.
inline std::vector<double> rank(const std::vector<double>& values) {
    if (values.empty()) throw DataError("rank of empty list");
    const std::size_t n = values.size();
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[idx[j + 1]] == values[idx[i]]) ++j;
        const double avg = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t t = i; t <= j; ++t) ranks[idx[t]] = avg;
        i = j + 1;
    }
    return ranks;
}

inline double plcc(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw DataError("plcc: length mismatch");
    const std::size_t n = a.size();
    if (n < 2) throw DataError("plcc requires at least 2 points");
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double num = 0, va = 0, vb = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        num += da * db;
        va += da * da;
        vb += db * db;
    }
    if (va == 0.0 || vb == 0.0)
        throw DataError("plcc undefined: a score list is constant (zero variance)");
    return num / (std::sqrt(va) * std::sqrt(vb));
}

inline double plcc(const EvalSeries& s) { return plcc(s.ground_truth, s.predicted); }

inline bool has_ties(const std::vector<double>& v) {
    std::vector<double> s = v;
    std::sort(s.begin(), s.end());
    return std::adjacent_find(s.begin(), s.end()) != s.end();
}

// Spearman rank correlation. The 1 - 6*sum(d^2)/(N(N^2-1)) shortcut is exact
// only without ties, so tied inputs fall back to Pearson on the ranks.
inline double srocc(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw DataError("srocc: length mismatch");
    const std::size_t n = a.size();
    if (n < 2) throw DataError("srocc requires at least 2 points");
    const auto all_equal = [](const std::vector<double>& v) {
        return std::adjacent_find(v.begin(), v.end(), std::not_equal_to<>()) == v.end();
    };
    if (all_equal(a) || all_equal(b))
        throw DataError("srocc undefined: a score list is constant (all ranks tied)");
    const auto ra = rank(a);
    const auto rb = rank(b);
    if (has_ties(a) || has_ties(b)) return plcc(ra, rb);
    double d2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = ra[i] - rb[i];
        d2 += d * d;
    }
    const double dn = static_cast<double>(n);
    return 1.0 - 6.0 * d2 / (dn * (dn * dn - 1.0));
}

inline double srocc(const EvalSeries& s) { return srocc(s.ground_truth, s.predicted); }

}  // namespace radn
