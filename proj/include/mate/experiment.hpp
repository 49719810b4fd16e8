#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "mate/assoc.hpp"
#include "mate/data.hpp"
#include "mate/errors.hpp"
#include "mate/evalkit.hpp"
#include "mate/trainer.hpp"

namespace mate {

// ---------------------------------------------------------------------------
// Benchmark: a mode x seed grid on one synthetic data profile, reporting
// retrieval quality per cell plus per-mode means. The default data profile
// (4 cameras, 50 identities, 60% cross-camera reappearance, 8 images per
// identity) is the one the desk-scale comparisons are specified on.
// ---------------------------------------------------------------------------

inline synth_config benchmark_data_profile() {
    synth_config data;
    data.cameras = 4;
    data.identities = 50;
    data.reappear_fraction = 0.6;
    data.samples_per_identity = 8;
    data.camera_transform_scale = 0.4;
    data.noise_sigma = 0.15;
    return data;
}

struct benchmark_config {
    synth_config data = benchmark_data_profile();
    train_config trainer = desk_profile();
    std::vector<train_mode> modes = {train_mode::mcst, train_mode::epcs, train_mode::pcmt, train_mode::mate};
    std::vector<std::uint64_t> seeds = {4, 5, 11};
    int max_rank = 20;

    void validate() const {
        data.validate();
        trainer.validate();
        if (modes.empty()) throw config_error("benchmark: no modes selected");
        if (seeds.empty()) throw config_error("benchmark: no seeds given");
    }
};

struct benchmark_cell {
    train_mode mode = train_mode::mate;
    std::uint64_t seed = 0;
    double rank1 = 0.0;
    double rank10 = 0.0;
    double rank20 = 0.0;
    double map = 0.0;
    train_log log;
};

struct benchmark_table {
    std::vector<benchmark_cell> cells; // seed-major, mode order as configured

    const benchmark_cell& cell(train_mode mode, std::uint64_t seed) const {
        for (const auto& c : cells)
            if (c.mode == mode && c.seed == seed) return c;
        throw config_error("benchmark: no cell for mode " + to_string(mode) + " seed " + std::to_string(seed));
    }

    std::vector<double> seed_values(train_mode mode, double benchmark_cell::* field) const {
        std::vector<double> out;
        for (const auto& c : cells)
            if (c.mode == mode) out.push_back(c.*field);
        if (out.empty()) throw config_error("benchmark: mode " + to_string(mode) + " not in table");
        return out;
    }

    double mean(train_mode mode, double benchmark_cell::* field) const {
        auto vals = seed_values(mode, field);
        double sum = 0.0;
        for (double v : vals) sum += v;
        return sum / static_cast<double>(vals.size());
    }

    double mean_rank1(train_mode mode) const { return mean(mode, &benchmark_cell::rank1); }
    double mean_map(train_mode mode) const { return mean(mode, &benchmark_cell::map); }
};

/// Runs every (seed, mode) cell: fresh synthetic dataset per seed, one
/// training run per mode on it, retrieval evaluation on the held-out
/// query/gallery split.
inline benchmark_table run_benchmark(const benchmark_config& cfg) {
    cfg.validate();
    benchmark_table table;
    for (std::uint64_t seed : cfg.seeds) {
        synth_config data_cfg = cfg.data;
        data_cfg.seed = seed;
        ics_dataset ds = generate_synthetic(data_cfg);
        for (train_mode mode : cfg.modes) {
            train_config tc = cfg.trainer;
            tc.mode = mode;
            tc.seed = seed;
            train_result run = train(ds, tc);
            eval_result ev = evaluate_retrieval(run.ckpt, ds, cfg.max_rank);
            benchmark_cell cell;
            cell.mode = mode;
            cell.seed = seed;
            cell.rank1 = ev.rank_k(1);
            cell.rank10 = ev.rank_k(std::min(10, cfg.max_rank));
            cell.rank20 = ev.rank_k(std::min(20, cfg.max_rank));
            cell.map = ev.map;
            cell.log = std::move(run.log);
            table.cells.push_back(std::move(cell));
        }
    }
    return table;
}

inline void write_benchmark_csv(const benchmark_config& cfg, const benchmark_table& table, std::ostream& os) {
    os << "mode,seed,R1,R10,R20,mAP\n";
    for (const auto& c : table.cells)
        os << to_string(c.mode) << ',' << c.seed << ',' << detail::format_double(c.rank1) << ','
           << detail::format_double(c.rank10) << ',' << detail::format_double(c.rank20) << ','
           << detail::format_double(c.map) << '\n';
    for (train_mode mode : cfg.modes)
        os << to_string(mode) << ",mean," << detail::format_double(table.mean(mode, &benchmark_cell::rank1)) << ','
           << detail::format_double(table.mean(mode, &benchmark_cell::rank10)) << ','
           << detail::format_double(table.mean(mode, &benchmark_cell::rank20)) << ','
           << detail::format_double(table.mean(mode, &benchmark_cell::map)) << '\n';
}

// ---------------------------------------------------------------------------
// Association-scope study: retrain with the cyclic consistency check
// widened from camera pairs to k-camera cycles (all ascending camera
// subsets of the requested size), tracking how tuple precision decays as
// the cycle gets longer.
// ---------------------------------------------------------------------------

struct scope_config {
    synth_config data = benchmark_data_profile();
    train_config trainer = desk_profile();
    std::vector<int> cycle_lengths = {2, 3, 4};
    int max_rank = 20;
    std::uint64_t seed = 4; // applied to both the dataset and the trainer

    void validate() const {
        data.validate();
        trainer.validate();
        if (cycle_lengths.empty()) throw config_error("scope: no cycle lengths given");
        for (int c : cycle_lengths) {
            if (c < 2 || c > 4) throw config_error("scope: cycle length must be in [2, 4]");
            if (c > data.cameras)
                throw config_error("scope: cycle length " + std::to_string(c) + " exceeds camera count " +
                                   std::to_string(data.cameras));
        }
    }
};

struct scope_round_stats {
    int round = 0;
    double tau = 0.0;
    std::int64_t predicted = 0;
    std::int64_t correct = 0;
    std::int64_t ground_truth = 0;
    double precision = 1.0;
    double recall = 1.0;
};

struct scope_cell {
    int cycle_length = 2;
    std::vector<scope_round_stats> rounds;
    double rank1 = 0.0;
    double map = 0.0;

    double final_precision() const {
        if (rounds.empty()) throw config_error("scope: no association rounds recorded");
        return rounds.back().precision;
    }
};

namespace detail {

/// All size-c subsets of {1..M}, each in ascending order, enumerated
/// lexicographically.
inline std::vector<std::vector<int>> camera_subsets(int cameras, int size) {
    std::vector<std::vector<int>> out;
    std::vector<int> pick(static_cast<std::size_t>(size));
    for (int i = 0; i < size; ++i) pick[static_cast<std::size_t>(i)] = i + 1;
    while (true) {
        out.push_back(pick);
        int i = size - 1;
        while (i >= 0 && pick[static_cast<std::size_t>(i)] == cameras - (size - 1 - i)) --i;
        if (i < 0) break;
        ++pick[static_cast<std::size_t>(i)];
        for (int j = i + 1; j < size; ++j)
            pick[static_cast<std::size_t>(j)] = pick[static_cast<std::size_t>(j - 1)] + 1;
    }
    return out;
}

/// Folds surviving tuples into per-identity multi-label sets. Every tuple
/// member adopts the labels of its co-members; when two tuples disagree
/// about an identity's label in some camera, the higher-degree tuple wins
/// the slot (ties keep enumeration order).
inline multilabel_map tuples_to_multilabels(const ics_dataset& ds, std::vector<cyclic_tuple> tuples) {
    std::stable_sort(tuples.begin(), tuples.end(),
                     [](const cyclic_tuple& a, const cyclic_tuple& b) { return a.degree > b.degree; });
    multilabel_map out = singleton_multilabels(ds);
    for (const auto& tuple : tuples) {
        for (std::size_t i = 0; i < tuple.cameras.size(); ++i) {
            identity_key member{tuple.cameras[i], tuple.identities[i]};
            auto& set = out.at(member);
            for (std::size_t j = 0; j < tuple.cameras.size(); ++j) {
                if (j == i) continue;
                bool slot_taken = false;
                for (const auto& [cam, label] : set.labels)
                    if (cam == tuple.cameras[j]) slot_taken = true;
                if (!slot_taken) set.labels.emplace_back(tuple.cameras[j], tuple.identities[j]);
            }
        }
    }
    for (auto& [key, set] : out) {
        std::sort(set.labels.begin(), set.labels.end());
        set.validate(ds.cameras);
    }
    return out;
}

} // namespace detail

/// One full training run per requested cycle length. Cycle length 2
/// reproduces the standard pairwise association exactly, so its per-round
/// statistics match a plain training run with the same seed.
inline std::vector<scope_cell> run_scope_experiment(const scope_config& cfg) {
    cfg.validate();
    synth_config data_cfg = cfg.data;
    data_cfg.seed = cfg.seed;
    ics_dataset ds = generate_synthetic(data_cfg);
    curriculum_schedule schedule{cfg.trainer.tau_lower, cfg.trainer.tau_upper, cfg.trainer.rounds};

    std::vector<scope_cell> cells;
    for (int c : cfg.cycle_lengths) {
        auto subsets = detail::camera_subsets(ds.cameras, c);
        scope_cell cell;
        cell.cycle_length = c;

        train_config tc = cfg.trainer;
        tc.mode = train_mode::mate;
        tc.seed = cfg.seed;
        checkpoint ckpt = build_baseline(ds, tc);
        rng sampler_stream = rng(tc.seed).substream(stream::sampler);

        auto associate = [&](int round, const model_params& params, multilabel_map& multilabels,
                             std::vector<log_row>& rows) {
            double tau = curriculum_threshold(schedule, round);
            std::vector<cyclic_tuple> all_tuples;
            scope_round_stats stats;
            stats.round = round;
            stats.tau = tau;
            for (const auto& cycle : subsets) {
                auto tuples = k_cycle_associate(params, ds, cycle, tau);
                association_report report = tuple_metrics(tuples, cycle, ds);
                stats.predicted += report.predicted_pairs;
                stats.correct += report.correct_pairs;
                stats.ground_truth += report.ground_truth_pairs;
                all_tuples.insert(all_tuples.end(), tuples.begin(), tuples.end());
            }
            stats.precision =
                stats.predicted == 0 ? 1.0 : static_cast<double>(stats.correct) / static_cast<double>(stats.predicted);
            stats.recall = stats.ground_truth == 0
                               ? 1.0
                               : static_cast<double>(stats.correct) / static_cast<double>(stats.ground_truth);
            cell.rounds.push_back(stats);
            multilabels = detail::tuples_to_multilabels(ds, all_tuples);

            log_row row;
            row.type = log_row::kind::association;
            row.round = round;
            row.tau = tau;
            row.report.predicted_pairs = stats.predicted;
            row.report.correct_pairs = stats.correct;
            row.report.ground_truth_pairs = stats.ground_truth;
            row.report.precision = stats.precision;
            row.report.recall = stats.recall;
            row.has_truth = true;
            rows.push_back(row);
        };

        detail::run_training_loop(ckpt.models[0], ds, tc, tc.lambda, sampler_stream, associate, true);
        eval_result ev = evaluate_retrieval(ckpt, ds, cfg.max_rank);
        cell.rank1 = ev.rank_k(1);
        cell.map = ev.map;
        cells.push_back(std::move(cell));
    }
    return cells;
}

inline void write_scope_csv(const std::vector<scope_cell>& cells, std::ostream& os) {
    os << "cycle_length,record,round,tau,predicted,correct,ground_truth,precision,recall,rank1,map\n";
    for (const auto& cell : cells) {
        for (const auto& r : cell.rounds)
            os << cell.cycle_length << ",round," << r.round << ',' << detail::format_double(r.tau) << ','
               << r.predicted << ',' << r.correct << ',' << r.ground_truth << ','
               << detail::format_double(r.precision) << ',' << detail::format_double(r.recall) << ",,\n";
        os << cell.cycle_length << ",final,,,,,,"
           << detail::format_double(cell.final_precision()) << ",," << detail::format_double(cell.rank1) << ','
           << detail::format_double(cell.map) << '\n';
    }
}

} // namespace mate
