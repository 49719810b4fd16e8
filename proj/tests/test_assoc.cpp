#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "mate/assoc.hpp"
#include "mate/data.hpp"
#include "mate/net.hpp"
#include "mate/rng.hpp"
#include "oracles.hpp"

namespace {

using mate::association_pair;
using mate::curriculum_schedule;
using mate::ics_dataset;
using mate::matrix;
using mate::model_params;
using mate::prediction_matrix;

model_params identity_model(int dim) {
    model_params params;
    mate::dense_layer layer;
    layer.weight = matrix(dim, dim);
    for (int i = 0; i < dim; ++i) layer.weight(i, i) = 1.0;
    layer.bias.assign(static_cast<std::size_t>(dim), 0.0);
    params.encoder.push_back(std::move(layer));
    return params;
}

prediction_matrix make_pm(int p, int q, std::vector<std::vector<double>> rows) {
    prediction_matrix m;
    m.source_camera = p;
    m.target_camera = q;
    m.probs = matrix(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()));
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c)
            m.probs(static_cast<int>(r), static_cast<int>(c)) = rows[r][c];
    return m;
}

/// Noise-free dataset plus a saturated model that classifies it perfectly.
/// perms[p-1][g-1] is the intra-camera label camera p assigns to global
/// identity g; every camera observes every global identity through the
/// standard basis vector e_g, and camera heads are scaled indicator
/// matrices, so every cross-camera prediction row is an exact one-hot.
struct perfect_setup {
    ics_dataset ds;
    model_params params;
};

perfect_setup make_perfect(const std::vector<std::vector<int>>& perms) {
    const int cameras = static_cast<int>(perms.size());
    const int globals = static_cast<int>(perms[0].size());
    perfect_setup s;
    s.ds.cameras = cameras;
    s.ds.label_space_sizes.assign(static_cast<std::size_t>(cameras), globals);
    s.ds.train.resize(static_cast<std::size_t>(cameras));
    std::int64_t id = 0;
    for (int p = 1; p <= cameras; ++p) {
        for (int g = 1; g <= globals; ++g) {
            mate::sample obs;
            obs.id = id++;
            obs.camera = p;
            obs.label = perms[static_cast<std::size_t>(p - 1)][static_cast<std::size_t>(g - 1)];
            obs.global_id = g;
            obs.x.assign(static_cast<std::size_t>(globals), 0.0);
            obs.x[static_cast<std::size_t>(g - 1)] = 1.0;
            s.ds.train[static_cast<std::size_t>(p - 1)].push_back(std::move(obs));
        }
    }
    s.ds.validate();
    s.params = identity_model(globals);
    for (int p = 1; p <= cameras; ++p) {
        matrix head(globals, globals);
        for (int g = 1; g <= globals; ++g)
            head(perms[static_cast<std::size_t>(p - 1)][static_cast<std::size_t>(g - 1)] - 1, g - 1) = 1000.0;
        s.params.heads.push_back(std::move(head));
    }
    return s;
}

struct random_setup {
    ics_dataset ds;
    model_params params;
};

random_setup make_random(std::uint64_t seed) {
    mate::synth_config cfg;
    cfg.cameras = 3;
    cfg.identities = 4;
    cfg.reappear_fraction = 1.0;
    cfg.samples_per_identity = 2;
    cfg.latent_dim = 4;
    cfg.input_dim = 6;
    cfg.seed = seed;
    random_setup s;
    s.ds = mate::generate_synthetic(cfg);
    s.params = mate::init_params(mate::net_config{6, {8}, 5}, s.ds.label_space_sizes, seed + 1);
    return s;
}

std::set<std::tuple<int, int, int, int>> pair_keys(const std::vector<association_pair>& pairs) {
    std::set<std::tuple<int, int, int, int>> out;
    for (const auto& p : pairs) out.insert(p.key());
    return out;
}

// ---------------------------------------------------------------------------
// Curriculum schedule.
// ---------------------------------------------------------------------------

TEST(assoc, curriculum_matches_closed_form) {
    curriculum_schedule sched{0.5, 0.95, 10};
    EXPECT_NEAR(mate::curriculum_threshold(sched, 0), 0.5, 1e-9);
    EXPECT_NEAR(mate::curriculum_threshold(sched, 5), 0.5 + 5.0 / 9.0 * 0.5, 1e-9);
    EXPECT_NEAR(mate::curriculum_threshold(sched, 9), 0.95, 1e-9);
}

TEST(assoc, curriculum_single_round_stays_at_lower) {
    curriculum_schedule sched{0.4, 0.9, 1};
    EXPECT_DOUBLE_EQ(mate::curriculum_threshold(sched, 0), 0.4);
}

TEST(assoc, curriculum_monotone_and_clamped) {
    curriculum_schedule sched{0.3, 0.8, 12};
    double prev = 0.0;
    for (int r = 0; r < 12; ++r) {
        double tau = mate::curriculum_threshold(sched, r);
        EXPECT_GE(tau, prev - 1e-15);
        EXPECT_LE(tau, 0.8 + 1e-15);
        prev = tau;
    }
    EXPECT_DOUBLE_EQ(mate::curriculum_threshold(sched, 11), 0.8); // clamp active
}

TEST(assoc, curriculum_validation) {
    curriculum_schedule sched{0.5, 0.95, 10};
    EXPECT_THROW(mate::curriculum_threshold(sched, -1), mate::config_error);
    EXPECT_THROW(mate::curriculum_threshold(sched, 10), mate::config_error);
    EXPECT_THROW((curriculum_schedule{0.9, 0.5, 10}).validate(), mate::config_error);
    EXPECT_THROW((curriculum_schedule{0.5, 1.5, 10}).validate(), mate::config_error);
    EXPECT_THROW((curriculum_schedule{-0.1, 0.5, 10}).validate(), mate::config_error);
    EXPECT_THROW((curriculum_schedule{0.5, 0.95, 0}).validate(), mate::config_error);
}

// ---------------------------------------------------------------------------
// Cross-camera prediction.
// ---------------------------------------------------------------------------

TEST(assoc, prediction_averages_image_distributions) {
    // Identity 1 in camera 1 has two images whose camera-2 distributions are
    // [0.7, 0.3] and [0.5, 0.5]; its row must average to [0.6, 0.4].
    ics_dataset ds;
    ds.cameras = 2;
    ds.label_space_sizes = {2, 2};
    ds.train.resize(2);
    auto add = [&](std::int64_t id, int camera, int label, std::vector<double> x) {
        mate::sample s;
        s.id = id;
        s.camera = camera;
        s.label = label;
        s.global_id = label;
        s.x = std::move(x);
        ds.train[static_cast<std::size_t>(camera - 1)].push_back(std::move(s));
    };
    add(0, 1, 1, {std::log(0.7), std::log(0.3)});
    add(1, 1, 1, {std::log(0.5), std::log(0.5)});
    add(2, 1, 2, {std::log(0.1), std::log(0.9)});
    add(3, 2, 1, {0.0, 0.0});
    add(4, 2, 2, {0.0, 0.0});
    ds.validate();

    model_params params = identity_model(2);
    params.heads.push_back(identity_model(2).encoder[0].weight); // unused (camera 1)
    params.heads.push_back(identity_model(2).encoder[0].weight); // logits = feature
    prediction_matrix pm = mate::cross_camera_prediction(params, ds, 1, 2);
    EXPECT_EQ(pm.source_camera, 1);
    EXPECT_EQ(pm.target_camera, 2);
    ASSERT_EQ(pm.probs.rows, 2);
    ASSERT_EQ(pm.probs.cols, 2);
    EXPECT_NEAR(pm.probs(0, 0), 0.6, 1e-12);
    EXPECT_NEAR(pm.probs(0, 1), 0.4, 1e-12);
    EXPECT_NEAR(pm.probs(1, 0), 0.1, 1e-12);
    EXPECT_NEAR(pm.probs(1, 1), 0.9, 1e-12);
}

TEST(assoc, prediction_rows_sum_to_one) {
    random_setup s = make_random(3);
    for (int p = 1; p <= 3; ++p)
        for (int q = 1; q <= 3; ++q) {
            if (p == q) continue;
            prediction_matrix pm = mate::cross_camera_prediction(s.params, s.ds, p, q);
            for (int k = 0; k < pm.probs.rows; ++k) {
                double sum = 0.0;
                for (int l = 0; l < pm.probs.cols; ++l) {
                    sum += pm.probs(k, l);
                    EXPECT_GE(pm.probs(k, l), 0.0);
                }
                EXPECT_NEAR(sum, 1.0, 1e-6);
            }
        }
}

TEST(assoc, prediction_matches_per_image_oracle) {
    random_setup s = make_random(4);
    prediction_matrix pm = mate::cross_camera_prediction(s.params, s.ds, 2, 3);
    auto want = oracle::mean_prediction(s.params, s.ds, 2, 3);
    for (int k = 0; k < pm.probs.rows; ++k)
        for (int l = 0; l < pm.probs.cols; ++l)
            EXPECT_NEAR(pm.probs(k, l), want[static_cast<std::size_t>(k)][static_cast<std::size_t>(l)], 1e-12);
}

TEST(assoc, prediction_rejects_equal_cameras) {
    random_setup s = make_random(5);
    EXPECT_THROW(mate::cross_camera_prediction(s.params, s.ds, 2, 2), mate::config_error);
}

// ---------------------------------------------------------------------------
// Nomination and the two-camera cycle.
// ---------------------------------------------------------------------------

TEST(assoc, nominate_takes_argmax) {
    auto m = make_pm(1, 2, {{0.2, 0.5, 0.3}});
    auto [l, prob] = mate::nominate(m, 1);
    EXPECT_EQ(l, 2);
    EXPECT_DOUBLE_EQ(prob, 0.5);
}

TEST(assoc, nominate_breaks_ties_to_smallest_index) {
    auto m = make_pm(1, 2, {{0.5, 0.5}});
    auto [l, prob] = mate::nominate(m, 1);
    EXPECT_EQ(l, 1);
    EXPECT_DOUBLE_EQ(prob, 0.5);
}

TEST(assoc, nominate_matches_scan_oracle) {
    mate::rng r(77);
    for (int trial = 0; trial < 30; ++trial) {
        int cols = 2 + static_cast<int>(r.uniform_index(6));
        std::vector<double> row(static_cast<std::size_t>(cols));
        for (auto& v : row) v = r.uniform();
        auto m = make_pm(1, 2, {row});
        auto [l, prob] = mate::nominate(m, 1);
        int want = oracle::argmax_smallest(row) + 1;
        EXPECT_EQ(l, want);
        EXPECT_DOUBLE_EQ(prob, row[static_cast<std::size_t>(want - 1)]);
    }
}

TEST(assoc, nominate_rejects_bad_identity_index) {
    auto m = make_pm(1, 2, {{0.5, 0.5}});
    EXPECT_THROW(mate::nominate(m, 0), mate::config_error);
    EXPECT_THROW(mate::nominate(m, 2), mate::config_error);
}

TEST(assoc, cyclic_pair_hand_example) {
    auto m_pq = make_pm(1, 2, {{0.9, 0.1}, {0.2, 0.8}});
    auto m_qp = make_pm(2, 1, {{0.85, 0.15}, {0.3, 0.7}});

    auto first = mate::cyclic_pair(m_pq, m_qp, 1);
    ASSERT_TRUE(first.has_value());
    EXPECT_EQ(first->first, 1);
    EXPECT_NEAR(first->second, 0.765, 1e-12); // 0.9 * 0.85

    auto second = mate::cyclic_pair(m_pq, m_qp, 2);
    ASSERT_TRUE(second.has_value());
    EXPECT_EQ(second->first, 2);
    EXPECT_NEAR(second->second, 0.56, 1e-12); // 0.8 * 0.7
}

TEST(assoc, cyclic_pair_direction_symmetry) {
    auto m_pq = make_pm(1, 2, {{0.9, 0.1}, {0.2, 0.8}});
    auto m_qp = make_pm(2, 1, {{0.85, 0.15}, {0.3, 0.7}});
    for (int k = 1; k <= 2; ++k) {
        auto forward = mate::cyclic_pair(m_pq, m_qp, k);
        ASSERT_TRUE(forward.has_value());
        auto backward = mate::cyclic_pair(m_qp, m_pq, forward->first);
        ASSERT_TRUE(backward.has_value());
        EXPECT_EQ(backward->first, k);
        EXPECT_NEAR(backward->second, forward->second, 1e-15);
    }
}

TEST(assoc, cyclic_pair_rejects_broken_cycle) {
    // Both source identities nominate target 1, but target 1 points back
    // to source 1 only; identity 2's cycle does not close.
    auto m_pq = make_pm(1, 2, {{0.9, 0.1}, {0.8, 0.2}});
    auto m_qp = make_pm(2, 1, {{0.7, 0.3}, {0.4, 0.6}});
    EXPECT_TRUE(mate::cyclic_pair(m_pq, m_qp, 1).has_value());
    EXPECT_FALSE(mate::cyclic_pair(m_pq, m_qp, 2).has_value());
}

// ---------------------------------------------------------------------------
// Full pairwise association.
// ---------------------------------------------------------------------------

TEST(assoc, perfect_predictions_get_degree_one) {
    perfect_setup s = make_perfect({{1, 2}, {2, 1}});
    auto result = mate::associate_all(s.params, s.ds, 0.5);
    ASSERT_EQ(result.pairs.size(), 2u);
    EXPECT_EQ(result.pairs[0].key(), (std::tuple{1, 1, 2, 2}));
    EXPECT_EQ(result.pairs[1].key(), (std::tuple{1, 2, 2, 1}));
    for (const auto& p : result.pairs) EXPECT_DOUBLE_EQ(p.degree, 1.0);

    // every identity now carries its partner's label
    for (const auto& [key, set] : result.multilabels) EXPECT_EQ(set.cardinality(), 2u);
}

TEST(assoc, threshold_one_rejects_even_perfect_pairs) {
    perfect_setup s = make_perfect({{1, 2}, {2, 1}});
    auto result = mate::associate_all(s.params, s.ds, 1.0);
    EXPECT_TRUE(result.pairs.empty());
    for (const auto& [key, set] : result.multilabels) EXPECT_EQ(set.cardinality(), 1u);
}

TEST(assoc, matches_brute_force_oracle) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        random_setup s = make_random(seed);
        for (double tau : {0.0, 0.02, 0.05, 0.08, 0.2}) {
            auto got = mate::associate_all(s.params, s.ds, tau);
            auto want = oracle::brute_force_pairs(s.params, s.ds, tau);
            ASSERT_EQ(got.pairs.size(), want.size()) << "seed " << seed << " tau " << tau;
            std::map<std::tuple<int, int, int, int>, double> want_degrees;
            for (const auto& w : want) want_degrees[{w.key.camera_a, w.key.ident_a, w.key.camera_b, w.key.ident_b}] =
                w.degree;
            for (const auto& g : got.pairs) {
                auto it = want_degrees.find(g.key());
                ASSERT_NE(it, want_degrees.end());
                EXPECT_NEAR(g.degree, it->second, 1e-12);
            }
        }
    }
}

TEST(assoc, pairs_nest_as_threshold_rises) {
    random_setup s = make_random(6);
    std::vector<double> taus = {0.0, 0.01, 0.03, 0.06, 0.1, 0.5};
    std::vector<std::set<std::tuple<int, int, int, int>>> sets;
    for (double tau : taus) sets.push_back(pair_keys(mate::associate_all(s.params, s.ds, tau).pairs));
    for (std::size_t i = 1; i < sets.size(); ++i) {
        EXPECT_LE(sets[i].size(), sets[i - 1].size());
        for (const auto& key : sets[i]) EXPECT_TRUE(sets[i - 1].count(key)) << "higher threshold grew the pair set";
    }
}

TEST(assoc, multilabels_stay_valid_after_association) {
    random_setup s = make_random(7);
    auto result = mate::associate_all(s.params, s.ds, 0.0);
    EXPECT_FALSE(result.pairs.empty()); // threshold 0 keeps every closed cycle
    for (const auto& [key, set] : result.multilabels) {
        set.validate(s.ds.cameras);
        EXPECT_EQ(set.owner_camera, key.first);
        EXPECT_EQ(set.owner_label, key.second);
        EXPECT_TRUE(std::is_sorted(set.labels.begin(), set.labels.end()));
    }
}

// ---------------------------------------------------------------------------
// k-camera cycles.
// ---------------------------------------------------------------------------

TEST(assoc, two_cycle_equals_pairwise_association) {
    random_setup s = make_random(8);
    for (double tau : {0.0, 0.05}) {
        auto full = mate::associate_all(s.params, s.ds, tau);
        for (int p = 1; p <= 3; ++p)
            for (int q = p + 1; q <= 3; ++q) {
                auto tuples = mate::k_cycle_associate(s.params, s.ds, {p, q}, tau);
                std::set<std::tuple<int, int, int, int>> from_tuples;
                for (const auto& t : tuples) {
                    ASSERT_EQ(t.cameras.size(), 2u);
                    from_tuples.insert({t.cameras[0], t.identities[0], t.cameras[1], t.identities[1]});
                }
                std::set<std::tuple<int, int, int, int>> from_pairs;
                for (const auto& pr : full.pairs)
                    if (pr.camera_a == p && pr.camera_b == q) from_pairs.insert(pr.key());
                EXPECT_EQ(from_tuples, from_pairs) << "pair (" << p << "," << q << ") tau " << tau;
            }
    }
}

TEST(assoc, three_cycle_on_perfect_permutations) {
    perfect_setup s = make_perfect({{1, 2}, {2, 1}, {1, 2}});
    auto tuples = mate::k_cycle_associate(s.params, s.ds, {1, 2, 3}, 0.5);
    ASSERT_EQ(tuples.size(), 2u);
    for (const auto& t : tuples) {
        EXPECT_DOUBLE_EQ(t.degree, 1.0);
        ASSERT_EQ(t.identities.size(), 3u);
    }
    // global 1: labels (1, 2, 1); global 2: labels (2, 1, 2)
    EXPECT_EQ(tuples[0].identities, (std::vector<int>{1, 2, 1}));
    EXPECT_EQ(tuples[1].identities, (std::vector<int>{2, 1, 2}));

    auto report = mate::tuple_metrics(tuples, {1, 2, 3}, s.ds);
    EXPECT_EQ(report.predicted_pairs, 2);
    EXPECT_EQ(report.correct_pairs, 2);
    EXPECT_EQ(report.ground_truth_pairs, 2);
    EXPECT_DOUBLE_EQ(report.precision, 1.0);
    EXPECT_DOUBLE_EQ(report.recall, 1.0);
}

TEST(assoc, cycle_validation) {
    random_setup s = make_random(9);
    EXPECT_THROW(mate::k_cycle_associate(s.params, s.ds, {1}, 0.5), mate::config_error);
    EXPECT_THROW(mate::k_cycle_associate(s.params, s.ds, {1, 2, 3, 1}, 0.5), mate::config_error);
    EXPECT_THROW(mate::k_cycle_associate(s.params, s.ds, {1, 2, 7}, 0.5), mate::config_error);
    EXPECT_THROW(mate::k_cycle_associate(s.params, s.ds, {1, 2, 2}, 0.5), mate::config_error);
}

// ---------------------------------------------------------------------------
// Metrics.
// ---------------------------------------------------------------------------

TEST(assoc, report_arithmetic) {
    mate::association_report report;
    report.predicted_pairs = 2;
    report.correct_pairs = 1;
    report.ground_truth_pairs = 4;
    report.finalize();
    EXPECT_DOUBLE_EQ(report.precision, 0.5);
    EXPECT_DOUBLE_EQ(report.recall, 0.25);
}

TEST(assoc, report_conventions_for_empty_counts) {
    mate::association_report nothing_predicted;
    nothing_predicted.ground_truth_pairs = 5;
    nothing_predicted.finalize();
    EXPECT_DOUBLE_EQ(nothing_predicted.precision, 1.0);
    EXPECT_DOUBLE_EQ(nothing_predicted.recall, 0.0);

    mate::association_report no_truth;
    no_truth.predicted_pairs = 3;
    no_truth.finalize();
    EXPECT_DOUBLE_EQ(no_truth.precision, 0.0);
    EXPECT_DOUBLE_EQ(no_truth.recall, 1.0);
}

TEST(assoc, metrics_against_hand_built_truth) {
    // Two cameras sharing globals 1..4 with identical labelling: 4 true
    // pairs. Two predictions, one of them right.
    perfect_setup s = make_perfect({{1, 2, 3, 4}, {1, 2, 3, 4}});
    std::vector<association_pair> predicted = {{1, 1, 2, 1, 0.9}, {1, 2, 2, 3, 0.8}};
    auto report = mate::association_metrics(predicted, s.ds);
    EXPECT_EQ(report.ground_truth_pairs, 4);
    EXPECT_EQ(report.predicted_pairs, 2);
    EXPECT_EQ(report.correct_pairs, 1);
    EXPECT_DOUBLE_EQ(report.precision, 0.5);
    EXPECT_DOUBLE_EQ(report.recall, 0.25);
}

TEST(assoc, metrics_with_partial_overlap) {
    // camera 1 sees globals {1,2}, camera 2 sees {2,3}: one true pair.
    ics_dataset ds;
    ds.cameras = 2;
    ds.label_space_sizes = {2, 2};
    ds.train.resize(2);
    auto add = [&](std::int64_t id, int camera, int label, std::int64_t global) {
        mate::sample s;
        s.id = id;
        s.camera = camera;
        s.label = label;
        s.global_id = global;
        s.x = {static_cast<double>(id)};
        ds.train[static_cast<std::size_t>(camera - 1)].push_back(std::move(s));
    };
    add(0, 1, 1, 1);
    add(1, 1, 2, 2);
    add(2, 2, 1, 2);
    add(3, 2, 2, 3);
    ds.validate();

    auto report = mate::association_metrics({{1, 2, 2, 1, 0.7}}, ds);
    EXPECT_EQ(report.ground_truth_pairs, 1);
    EXPECT_EQ(report.correct_pairs, 1);
    EXPECT_DOUBLE_EQ(report.precision, 1.0);
    EXPECT_DOUBLE_EQ(report.recall, 1.0);

    auto wrong = mate::association_metrics({{1, 1, 2, 2, 0.7}}, ds);
    EXPECT_EQ(wrong.correct_pairs, 0);
    EXPECT_DOUBLE_EQ(wrong.precision, 0.0);
    EXPECT_DOUBLE_EQ(wrong.recall, 0.0);
}

TEST(assoc, metrics_require_global_ids) {
    perfect_setup s = make_perfect({{1, 2}, {1, 2}});
    s.ds.train[0][0].global_id.reset();
    EXPECT_THROW(mate::association_metrics({}, s.ds), mate::data_error);
}

TEST(assoc, perfect_association_scores_perfectly) {
    perfect_setup s = make_perfect({{1, 2, 3}, {3, 1, 2}, {2, 3, 1}});
    auto result = mate::associate_all(s.params, s.ds, 0.5);
    EXPECT_EQ(result.pairs.size(), 9u); // 3 camera pairs x 3 identities
    auto report = mate::association_metrics(result.pairs, s.ds);
    EXPECT_DOUBLE_EQ(report.precision, 1.0);
    EXPECT_DOUBLE_EQ(report.recall, 1.0);
    for (const auto& [key, set] : result.multilabels) EXPECT_EQ(set.cardinality(), 3u);
}

} // namespace
