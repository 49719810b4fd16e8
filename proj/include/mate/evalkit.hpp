#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <string>
#include <vector>

#include "mate/data.hpp"
#include "mate/errors.hpp"
#include "mate/net.hpp"

namespace mate {

/// One feature vector per sample; for ensembles the per-model features are
/// concatenated in model order.
inline std::vector<std::vector<double>> extract_features(const checkpoint& ckpt, const std::vector<sample>& samples) {
    if (ckpt.models.empty()) throw data_error("extract_features: checkpoint holds no models");
    std::vector<std::vector<double>> features;
    features.reserve(samples.size());
    for (const auto& s : samples) {
        std::vector<double> f;
        for (const auto& model : ckpt.models) {
            std::vector<double> part = encode(model, s.x);
            f.insert(f.end(), part.begin(), part.end());
        }
        features.push_back(std::move(f));
    }
    return features;
}

inline std::vector<std::vector<double>> extract_features(const model_params& params,
                                                         const std::vector<sample>& samples) {
    checkpoint ckpt;
    ckpt.models.push_back(params);
    return extract_features(ckpt, samples);
}

/// Gallery ordered by ascending Euclidean distance to the query, after
/// removing entries that share both the query's camera and its global
/// identity (the standard cross-camera evaluation protocol). Distance ties
/// break towards the smaller gallery id.
struct ranked_list {
    std::int64_t query_id = 0;
    std::vector<std::int64_t> gallery_ids;
    std::vector<bool> relevant;

    /// 1-based rank of the first relevant entry, 0 when none exists.
    int first_relevant_rank() const {
        for (std::size_t i = 0; i < relevant.size(); ++i)
            if (relevant[i]) return static_cast<int>(i) + 1;
        return 0;
    }

    bool has_relevant() const { return first_relevant_rank() != 0; }
};

struct eval_result {
    std::vector<double> cmc; // cmc[k-1] = rank-(k) accuracy
    double map = 0.0;
    int queries = 0; // evaluated
    int skipped = 0; // queries with no admissible relevant gallery entry

    double rank_k(int k) const { return cmc.at(static_cast<std::size_t>(k - 1)); }
};

inline double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw numeric_error("distance: feature dimension mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

inline ranked_list rank(const sample& query, const std::vector<sample>& gallery,
                        const std::vector<double>& query_feature,
                        const std::vector<std::vector<double>>& gallery_features) {
    if (!query.global_id) throw data_error("rank: query sample " + std::to_string(query.id) + " has no global_id");
    struct entry {
        double dist;
        std::int64_t id;
        bool relevant;
    };
    std::vector<entry> entries;
    for (std::size_t i = 0; i < gallery.size(); ++i) {
        const sample& g = gallery[i];
        if (!g.global_id) throw data_error("rank: gallery sample " + std::to_string(g.id) + " has no global_id");
        bool same_identity = *g.global_id == *query.global_id;
        if (same_identity && g.camera == query.camera) continue; // same-camera same-identity junk
        entries.push_back({squared_distance(query_feature, gallery_features[i]), g.id, same_identity});
    }
    if (entries.empty()) throw data_error("rank: gallery empty after protocol filtering");
    std::sort(entries.begin(), entries.end(), [](const entry& a, const entry& b) {
        if (a.dist != b.dist) return a.dist < b.dist;
        return a.id < b.id;
    });
    ranked_list out;
    out.query_id = query.id;
    out.gallery_ids.reserve(entries.size());
    out.relevant.reserve(entries.size());
    for (const auto& e : entries) {
        out.gallery_ids.push_back(e.id);
        out.relevant.push_back(e.relevant);
    }
    return out;
}

/// Cumulative matching characteristic: cmc[k-1] is the fraction of queries
/// whose first relevant gallery entry appears within the top k.
inline std::vector<double> cmc(const std::vector<ranked_list>& lists, int max_rank) {
    if (max_rank < 1) throw config_error("cmc: max rank must be >= 1");
    std::vector<double> curve(static_cast<std::size_t>(max_rank), 0.0);
    if (lists.empty()) return curve;
    for (const auto& list : lists) {
        int first = list.first_relevant_rank();
        if (first == 0) continue;
        for (int k = first; k <= max_rank; ++k) curve[static_cast<std::size_t>(k - 1)] += 1.0;
    }
    for (double& v : curve) v /= static_cast<double>(lists.size());
    return curve;
}

/// Mean average precision: per query, the mean over its relevant entries
/// (the i-th relevant entry sitting at 1-based rank r contributes i/r).
inline double mean_ap(const std::vector<ranked_list>& lists) {
    if (lists.empty()) throw data_error("mean_ap: no ranked lists");
    double total = 0.0;
    for (const auto& list : lists) {
        double ap = 0.0;
        int hits = 0;
        for (std::size_t i = 0; i < list.relevant.size(); ++i) {
            if (!list.relevant[i]) continue;
            hits += 1;
            ap += static_cast<double>(hits) / static_cast<double>(i + 1);
        }
        if (hits == 0) throw data_error("mean_ap: query " + std::to_string(list.query_id) + " has no relevant entry");
        total += ap / static_cast<double>(hits);
    }
    return total / static_cast<double>(lists.size());
}

/// Full retrieval evaluation of a checkpoint over the dataset's test
/// split. Queries with no admissible relevant gallery entry are skipped
/// and counted. Features are compared with plain Euclidean distance;
/// normalize_features rescales each vector to unit length first.
inline eval_result evaluate_retrieval(const checkpoint& ckpt, const ics_dataset& ds, int max_rank = 20,
                                      bool normalize_features = false) {
    if (ds.query.empty() || ds.gallery.empty()) throw data_error("evaluate: dataset has an empty test split");
    std::vector<std::vector<double>> query_features = extract_features(ckpt, ds.query);
    std::vector<std::vector<double>> gallery_features = extract_features(ckpt, ds.gallery);
    if (normalize_features) {
        auto normalize = [](std::vector<double>& f) {
            double norm = std::sqrt(std::inner_product(f.begin(), f.end(), f.begin(), 0.0));
            if (norm > 0.0)
                for (double& v : f) v /= norm;
        };
        for (auto& f : query_features) normalize(f);
        for (auto& f : gallery_features) normalize(f);
    }
    std::vector<ranked_list> lists;
    eval_result result;
    for (std::size_t i = 0; i < ds.query.size(); ++i) {
        ranked_list list = rank(ds.query[i], ds.gallery, query_features[i], gallery_features);
        if (!list.has_relevant()) {
            result.skipped += 1;
            continue;
        }
        lists.push_back(std::move(list));
    }
    if (lists.empty()) throw data_error("evaluate: every query was skipped (no cross-camera matches in the gallery)");
    result.queries = static_cast<int>(lists.size());
    result.cmc = cmc(lists, max_rank);
    result.map = mean_ap(lists);
    return result;
}

/// CSV embedding dump: id, camera, global_id, then feature components at
/// round-trip precision. Replaces plot inputs; reloadable by any CSV reader.
inline void dump_embeddings(const std::vector<sample>& samples, const std::vector<std::vector<double>>& features,
                            std::ostream& os) {
    if (samples.size() != features.size()) throw data_error("dump_embeddings: samples/features size mismatch");
    std::size_t dim = features.empty() ? 0 : features.front().size();
    os << "id,camera,global_id";
    for (std::size_t i = 0; i < dim; ++i) os << ",f" << i;
    os << '\n';
    char buf[64];
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const sample& s = samples[i];
        os << s.id << ',' << s.camera << ',';
        if (s.global_id) os << *s.global_id;
        for (double v : features[i]) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            os << ',' << buf;
        }
        os << '\n';
    }
}

inline void dump_embeddings(const std::vector<sample>& samples, const std::vector<std::vector<double>>& features,
                            const std::string& path) {
    std::ofstream os(path);
    if (!os) throw data_error("cannot open for writing: " + path);
    dump_embeddings(samples, features, os);
    if (!os) throw data_error("write failure: " + path);
}

} // namespace mate
