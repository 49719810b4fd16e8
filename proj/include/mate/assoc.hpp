#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "mate/data.hpp"
#include "mate/errors.hpp"
#include "mate/matrix.hpp"
#include "mate/net.hpp"
#include "mate/objective.hpp"

namespace mate {

/// Row k holds the averaged class distribution that camera q's head
/// assigns to all images of identity k from camera p.
struct prediction_matrix {
    int source_camera = 0; // p
    int target_camera = 0; // q
    matrix probs;          // N_p x N_q, rows sum to 1
};

/// A cyclically matched identity pair across one camera pair, stored with
/// camera_a < camera_b, plus its association degree (the product of the
/// two directional matching probabilities).
struct association_pair {
    int camera_a = 0;
    int ident_a = 0;
    int camera_b = 0;
    int ident_b = 0;
    double degree = 0.0;

    auto key() const { return std::tuple{camera_a, ident_a, camera_b, ident_b}; }
    bool operator==(const association_pair& other) const { return key() == other.key(); }
    bool operator<(const association_pair& other) const { return key() < other.key(); }
};

struct curriculum_schedule {
    double tau_lower = 0.5;
    double tau_upper = 0.95;
    int rounds = 10;

    void validate() const {
        if (!(tau_lower >= 0.0 && tau_lower <= tau_upper && tau_upper <= 1.0))
            throw config_error("curriculum: need 0 <= tau_lower <= tau_upper <= 1");
        if (rounds < 1) throw config_error("curriculum: rounds must be >= 1");
    }
};

/// Round-annealed acceptance threshold, linear from tau_lower at round 0
/// towards 1 and clamped at tau_upper. A single-round schedule stays at
/// tau_lower.
inline double curriculum_threshold(const curriculum_schedule& sched, int round) {
    sched.validate();
    if (round < 0 || round >= sched.rounds)
        throw config_error("curriculum: round " + std::to_string(round) + " outside 0.." +
                           std::to_string(sched.rounds - 1));
    if (sched.rounds == 1) return sched.tau_lower;
    double tau = sched.tau_lower +
                 static_cast<double>(round) / static_cast<double>(sched.rounds - 1) * (1.0 - sched.tau_lower);
    return std::min(sched.tau_upper, tau);
}

/// Cross-camera prediction: mean over identity k's images in camera p of
/// the class distribution predicted by camera q's head.
inline prediction_matrix cross_camera_prediction(const model_params& params, const ics_dataset& ds, int p, int q) {
    if (p == q) throw config_error("cross_camera_prediction: source and target cameras must differ");
    prediction_matrix pm;
    pm.source_camera = p;
    pm.target_camera = q;
    pm.probs = matrix(ds.label_space(p), ds.label_space(q));
    std::vector<int> image_counts(static_cast<std::size_t>(ds.label_space(p)), 0);
    for (const auto& s : ds.camera_train(p)) {
        std::vector<double> probs = head_probs(params, q, encode(params, s.x));
        for (int l = 0; l < pm.probs.cols; ++l) pm.probs(s.label - 1, l) += probs[static_cast<std::size_t>(l)];
        image_counts[static_cast<std::size_t>(s.label - 1)] += 1;
    }
    for (int k = 0; k < pm.probs.rows; ++k) {
        int count = image_counts[static_cast<std::size_t>(k)];
        // dataset invariant: every identity has at least one image
        for (int l = 0; l < pm.probs.cols; ++l) pm.probs(k, l) /= static_cast<double>(count);
    }
    return pm;
}

/// Maximum-likelihood nomination from row k (1-based); ties resolve to the
/// smallest index. Returns the 1-based candidate identity and its probability.
inline std::pair<int, double> nominate(const prediction_matrix& m, int k) {
    if (k < 1 || k > m.probs.rows) throw config_error("nominate: identity index out of range");
    int best = 0;
    double best_prob = m.probs(k - 1, 0);
    for (int l = 1; l < m.probs.cols; ++l) {
        if (m.probs(k - 1, l) > best_prob) {
            best = l;
            best_prob = m.probs(k - 1, l);
        }
    }
    return {best + 1, best_prob};
}

/// Back-and-forth nomination with the cyclic constraint: identity k in the
/// source camera nominates l*, l* nominates back, and the pair survives
/// only when it returns to k. The degree is the product of the two
/// directional probabilities.
inline std::optional<std::pair<int, double>> cyclic_pair(const prediction_matrix& m_pq, const prediction_matrix& m_qp,
                                                         int k) {
    auto [l_star, forward_prob] = nominate(m_pq, k);
    auto [t_star, backward_prob] = nominate(m_qp, l_star);
    if (t_star != k) return std::nullopt;
    return std::pair<int, double>{l_star, forward_prob * backward_prob};
}

struct association_result {
    std::vector<association_pair> pairs; // sorted by (camera_a, ident_a, camera_b)
    multilabel_map multilabels;          // every identity, singletons included
};

/// Runs curriculum cyclic association over every camera pair with frozen
/// parameters, keeps pairs whose degree strictly exceeds tau, and builds
/// the multi-label annotation: each surviving pair adds the partner's
/// label to all images of both identities.
inline association_result associate_all(const model_params& params, const ics_dataset& ds, double tau) {
    association_result result;
    result.multilabels = singleton_multilabels(ds);
    for (int p = 1; p <= ds.cameras; ++p) {
        for (int q = p + 1; q <= ds.cameras; ++q) {
            prediction_matrix m_pq = cross_camera_prediction(params, ds, p, q);
            prediction_matrix m_qp = cross_camera_prediction(params, ds, q, p);
            for (int k = 1; k <= ds.label_space(p); ++k) {
                auto match = cyclic_pair(m_pq, m_qp, k);
                if (!match || !(match->second > tau)) continue;
                result.pairs.push_back({p, k, q, match->first, match->second});
            }
        }
    }
    auto add_label = [&](identity_key owner, identity_key extra) {
        auto& set = result.multilabels.at(owner);
        set.labels.push_back(extra);
        std::sort(set.labels.begin(), set.labels.end());
    };
    for (const auto& pair : result.pairs) {
        add_label({pair.camera_a, pair.ident_a}, {pair.camera_b, pair.ident_b});
        add_label({pair.camera_b, pair.ident_b}, {pair.camera_a, pair.ident_a});
    }
    for (const auto& [key, set] : result.multilabels) set.validate(ds.cameras);
    return result;
}

/// A surviving chain of argmax nominations around an ordered camera cycle.
/// identities[i] lives in cameras[i]; degree is the product of the link
/// probabilities around the cycle.
struct cyclic_tuple {
    std::vector<int> cameras;
    std::vector<int> identities;
    double degree = 0.0;
};

/// Generalizes the two-camera cyclic constraint to an ordered cycle of
/// 2..4 cameras: nominations are chained around the cycle and a tuple
/// survives only when the final nomination returns to the starting
/// identity. With a two-camera cycle this coincides exactly with
/// associate_all restricted to that pair.
inline std::vector<cyclic_tuple> k_cycle_associate(const model_params& params, const ics_dataset& ds,
                                                   const std::vector<int>& camera_cycle, double tau) {
    const int length = static_cast<int>(camera_cycle.size());
    if (length < 2 || length > 4) throw config_error("k_cycle_associate: cycle length must be 2, 3, or 4");
    std::set<int> distinct(camera_cycle.begin(), camera_cycle.end());
    if (static_cast<int>(distinct.size()) != length)
        throw config_error("k_cycle_associate: duplicate cameras in cycle");
    for (int cam : camera_cycle)
        if (cam < 1 || cam > ds.cameras) throw config_error("k_cycle_associate: camera index out of range");

    std::vector<prediction_matrix> links;
    links.reserve(static_cast<std::size_t>(length));
    for (int i = 0; i < length; ++i) {
        int from = camera_cycle[static_cast<std::size_t>(i)];
        int to = camera_cycle[static_cast<std::size_t>((i + 1) % length)];
        links.push_back(cross_camera_prediction(params, ds, from, to));
    }

    std::vector<cyclic_tuple> tuples;
    int start_camera = camera_cycle.front();
    for (int k = 1; k <= ds.label_space(start_camera); ++k) {
        cyclic_tuple t;
        t.cameras = camera_cycle;
        t.identities = {k};
        t.degree = 1.0;
        int current = k;
        for (int i = 0; i < length; ++i) {
            auto [next, prob] = nominate(links[static_cast<std::size_t>(i)], current);
            t.degree *= prob;
            current = next;
            if (i + 1 < length) t.identities.push_back(next);
        }
        if (current != k) continue; // cycle does not close
        if (!(t.degree > tau)) continue;
        tuples.push_back(std::move(t));
    }
    return tuples;
}

struct association_report {
    std::int64_t ground_truth_pairs = 0;
    std::int64_t predicted_pairs = 0;
    std::int64_t correct_pairs = 0;
    double precision = 1.0; // 1 by convention when nothing was predicted
    double recall = 1.0;    // 1 by convention when no ground truth exists

    void finalize() {
        precision = predicted_pairs == 0 ? 1.0 : static_cast<double>(correct_pairs) / predicted_pairs;
        recall = ground_truth_pairs == 0 ? 1.0 : static_cast<double>(correct_pairs) / ground_truth_pairs;
    }
};

namespace detail {

/// Per-camera map from hidden global identity to intra-camera label,
/// derived from training samples. Requires global_id everywhere.
inline std::vector<std::map<std::int64_t, int>> global_label_maps(const ics_dataset& ds) {
    std::vector<std::map<std::int64_t, int>> maps(static_cast<std::size_t>(ds.cameras));
    for (int p = 1; p <= ds.cameras; ++p) {
        for (const auto& s : ds.camera_train(p)) {
            if (!s.global_id)
                throw data_error("association metrics need global_id on every training sample (sample " +
                                 std::to_string(s.id) + " has none)");
            maps[static_cast<std::size_t>(p - 1)][*s.global_id] = s.label;
        }
    }
    return maps;
}

} // namespace detail

/// Precision/recall of predicted pairs against the hidden ground truth:
/// a true pair is a (camera p identity, camera q identity) sharing one
/// global identity.
inline association_report association_metrics(const std::vector<association_pair>& pairs, const ics_dataset& ds) {
    auto maps = detail::global_label_maps(ds);
    association_report report;
    std::set<std::tuple<int, int, int, int>> truth;
    for (int p = 1; p <= ds.cameras; ++p) {
        for (int q = p + 1; q <= ds.cameras; ++q) {
            for (const auto& [global, label_p] : maps[static_cast<std::size_t>(p - 1)]) {
                auto it = maps[static_cast<std::size_t>(q - 1)].find(global);
                if (it != maps[static_cast<std::size_t>(q - 1)].end())
                    truth.insert({p, label_p, q, it->second});
            }
        }
    }
    report.ground_truth_pairs = static_cast<std::int64_t>(truth.size());
    report.predicted_pairs = static_cast<std::int64_t>(pairs.size());
    for (const auto& pair : pairs)
        if (truth.count({pair.camera_a, pair.ident_a, pair.camera_b, pair.ident_b})) report.correct_pairs += 1;
    report.finalize();
    return report;
}

/// Same report for cyclic tuples: a tuple is correct when all its member
/// identities share one global identity; ground truth counts the global
/// identities visible in every camera of the cycle.
inline association_report tuple_metrics(const std::vector<cyclic_tuple>& tuples, const std::vector<int>& camera_cycle,
                                        const ics_dataset& ds) {
    auto maps = detail::global_label_maps(ds);
    association_report report;
    report.predicted_pairs = static_cast<std::int64_t>(tuples.size());
    for (const auto& t : tuples) {
        bool correct = true;
        std::int64_t shared_global = 0;
        for (std::size_t i = 0; i < t.cameras.size() && correct; ++i) {
            const auto& cam_map = maps[static_cast<std::size_t>(t.cameras[i] - 1)];
            std::int64_t found = -1;
            for (const auto& [global, label] : cam_map) {
                if (label == t.identities[i]) {
                    found = global;
                    break;
                }
            }
            if (found < 0 || (i > 0 && found != shared_global)) correct = false;
            if (i == 0) shared_global = found;
        }
        if (correct) report.correct_pairs += 1;
    }
    for (const auto& [global, label] : maps[static_cast<std::size_t>(camera_cycle.front() - 1)]) {
        bool everywhere = true;
        for (int cam : camera_cycle)
            if (!maps[static_cast<std::size_t>(cam - 1)].count(global)) everywhere = false;
        if (everywhere) report.ground_truth_pairs += 1;
    }
    report.finalize();
    return report;
}

} // namespace mate
