#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "mate/assoc.hpp"
#include "mate/data.hpp"
#include "mate/errors.hpp"
#include "mate/net.hpp"
#include "mate/objective.hpp"
#include "mate/rng.hpp"

namespace mate {

/// Training modes.
///   mate        shared encoder + per-camera heads, curriculum cyclic
///               association, multi-label loss
///   mate_no_ct  mate with the threshold pinned at tau_lower (no annealing)
///   pcmt        per-camera multi-task only (mate minus association)
///   mcst        all label spaces merged into one joint classification head
///   epcs        one independent model per camera, features concatenated
///               at test time
enum class train_mode { mate, mate_no_ct, pcmt, mcst, epcs };

inline std::string to_string(train_mode mode) {
    switch (mode) {
        case train_mode::mate: return "mate";
        case train_mode::mate_no_ct: return "mate-no-ct";
        case train_mode::pcmt: return "pcmt";
        case train_mode::mcst: return "mcst";
        case train_mode::epcs: return "epcs";
    }
    throw config_error("unknown train mode");
}

inline train_mode mode_from_string(const std::string& name) {
    if (name == "mate") return train_mode::mate;
    if (name == "mate-no-ct" || name == "mate_no_ct") return train_mode::mate_no_ct;
    if (name == "pcmt") return train_mode::pcmt;
    if (name == "mcst") return train_mode::mcst;
    if (name == "epcs") return train_mode::epcs;
    throw config_error("unknown train mode '" + name + "' (expected mate|mate-no-ct|pcmt|mcst|epcs)");
}

struct train_config {
    train_mode mode = train_mode::mate;
    int rounds = 10;
    int epochs_per_round = 20;
    int final_round_epochs = 50;
    double lambda = 0.5;
    double tau_lower = 0.5;
    double tau_upper = 0.95;
    int identities_per_camera = 2;
    int images_per_identity = 4;
    double lr_encoder = 0.005;
    double lr_heads = 0.05;
    double momentum = 0.0;
    std::vector<int> hidden_dims = {64};
    int feature_dim = 32;
    std::uint64_t seed = 1;

    curriculum_schedule schedule() const { return {tau_lower, tau_upper, rounds}; }

    optim_state optimizer() const {
        optim_state opt;
        opt.lr_encoder = lr_encoder;
        opt.lr_heads = lr_heads;
        opt.momentum = momentum;
        return opt;
    }

    void validate() const {
        if (rounds < 1 || epochs_per_round < 1 || final_round_epochs < 1)
            throw config_error("train: round/epoch counts must be >= 1");
        if (identities_per_camera < 1 || images_per_identity < 1)
            throw config_error("train: sampler counts must be >= 1");
        validate_loss_weight(lambda);
        schedule().validate();
        optimizer().validate();
        if (feature_dim < 1) throw config_error("train: feature_dim must be >= 1");
    }
};

/// The published training constants: 10 rounds of 20 epochs (50 in the
/// last), lambda 0.5, thresholds 0.5/0.95, learning rates 0.005/0.05.
inline train_config paper_profile() { return train_config{}; }

/// Fast constants for desk-scale synthetic runs: shorter rounds, larger
/// steps, a higher association floor, and a heavier multi-label weight.
/// The step sizes sit below the divergence point of the per-camera
/// baseline on the synthetic benchmark; the floor and weight keep the
/// curriculum's pair pool precise at this scale.
inline train_config desk_profile() {
    train_config cfg;
    cfg.rounds = 12;
    cfg.epochs_per_round = 5;
    cfg.final_round_epochs = 15;
    cfg.lambda = 1.0;
    cfg.tau_lower = 0.65;
    cfg.lr_encoder = 0.05;
    cfg.lr_heads = 0.3;
    return cfg;
}

inline train_config profile_by_name(const std::string& name) {
    if (name == "desk") return desk_profile();
    if (name == "paper") return paper_profile();
    throw config_error("unknown profile '" + name + "' (expected desk|paper)");
}

/// Camera-balanced mini-batch sampler. Per camera: identities_per_camera
/// identities, then images_per_identity images each, so every batch holds
/// exactly M * identities_per_camera * images_per_identity samples.
/// Draws are without replacement while the pool suffices; a deficit is
/// filled by uniform redraws from the same pool.
class balanced_sampler {
public:
    balanced_sampler(const ics_dataset& ds, int identities_per_camera, int images_per_identity)
        : ds_(&ds), identities_per_camera_(identities_per_camera), images_per_identity_(images_per_identity) {
        groups_.resize(static_cast<std::size_t>(ds.cameras));
        for (int p = 1; p <= ds.cameras; ++p) {
            auto& cam_groups = groups_[static_cast<std::size_t>(p - 1)];
            cam_groups.resize(static_cast<std::size_t>(ds.label_space(p)));
            const auto& coll = ds.camera_train(p);
            for (std::size_t i = 0; i < coll.size(); ++i)
                cam_groups[static_cast<std::size_t>(coll[i].label - 1)].push_back(i);
        }
    }

    int batch_size() const { return ds_->cameras * identities_per_camera_ * images_per_identity_; }

    mini_batch next(rng& stream) const {
        std::vector<sample> drawn;
        drawn.reserve(static_cast<std::size_t>(batch_size()));
        for (int p = 1; p <= ds_->cameras; ++p) {
            const auto& cam_groups = groups_[static_cast<std::size_t>(p - 1)];
            std::vector<int> identity_draws =
                draw_with_fill(static_cast<int>(cam_groups.size()), identities_per_camera_, stream);
            for (int ident : identity_draws) {
                const auto& group = cam_groups[static_cast<std::size_t>(ident)];
                std::vector<int> image_draws = draw_with_fill(static_cast<int>(group.size()), images_per_identity_, stream);
                for (int idx : image_draws)
                    drawn.push_back(ds_->camera_train(p)[group[static_cast<std::size_t>(idx)]]);
            }
        }
        return mini_batch::from_samples(std::move(drawn));
    }

private:
    // count draws from [0, n): distinct while possible, deficit refilled
    // uniformly (so one short identity yields exactly one duplicate).
    static std::vector<int> draw_with_fill(int n, int count, rng& stream) {
        std::vector<int> out;
        if (n >= count) {
            out = stream.sample_without_replacement(n, count);
        } else {
            out = stream.sample_without_replacement(n, n);
            while (static_cast<int>(out.size()) < count)
                out.push_back(static_cast<int>(stream.uniform_index(static_cast<std::uint64_t>(n))));
        }
        return out;
    }

    const ics_dataset* ds_;
    int identities_per_camera_;
    int images_per_identity_;
    std::vector<std::vector<std::vector<std::size_t>>> groups_; // camera -> identity -> sample indices
};

/// One camera-balanced batch; convenience wrapper over balanced_sampler.
inline mini_batch balanced_minibatch(const ics_dataset& ds, const train_config& cfg, rng& stream) {
    return balanced_sampler(ds, cfg.identities_per_camera, cfg.images_per_identity).next(stream);
}

struct log_row {
    enum class kind { association, epoch };
    kind type = kind::epoch;
    int round = 0;
    int epoch = -1; // round-local, -1 for association rows
    double tau = 0.0;
    double loss_total = 0.0;
    double loss_mt = 0.0;
    double loss_ml = 0.0;
    association_report report;
    bool has_truth = false; // ground-truth pair metrics available
};

struct train_log {
    train_mode mode = train_mode::mate;
    std::uint64_t seed = 0;
    std::vector<log_row> rows; // association row of a round precedes its epochs
    double wall_seconds = 0.0; // informational; never serialized

    std::vector<log_row> association_rows() const {
        std::vector<log_row> out;
        for (const auto& row : rows)
            if (row.type == log_row::kind::association) out.push_back(row);
        return out;
    }
};

struct train_result {
    checkpoint ckpt;
    train_log log;
};

/// Initial (untrained) model construction per mode. mcst gets a single
/// joint head over all label spaces, epcs one full model per camera,
/// everything else a shared encoder with per-camera heads.
inline checkpoint build_baseline(const ics_dataset& ds, const train_config& cfg) {
    if (ds.total_train() == 0) throw data_error("train: dataset has no training samples");
    int input_dim = 0;
    for (const auto& coll : ds.train)
        if (!coll.empty()) {
            input_dim = static_cast<int>(coll.front().x.size());
            break;
        }
    net_config net{input_dim, cfg.hidden_dims, cfg.feature_dim};
    checkpoint ckpt;
    switch (cfg.mode) {
        case train_mode::mcst: {
            int joint = 0;
            for (int n : ds.label_space_sizes) joint += n;
            ckpt.models.push_back(init_params(net, {joint}, cfg.seed));
            break;
        }
        case train_mode::epcs: {
            for (int p = 1; p <= ds.cameras; ++p) {
                std::uint64_t model_seed =
                    rng(cfg.seed).substream(stream::per_camera_model, static_cast<std::uint64_t>(p)).seed();
                ckpt.models.push_back(init_params(net, {ds.label_space(p)}, model_seed));
            }
            break;
        }
        default:
            ckpt.models.push_back(init_params(net, ds.label_space_sizes, cfg.seed));
            break;
    }
    return ckpt;
}

namespace detail {

inline void check_batch_balance(const mini_batch& batch, const ics_dataset& ds, const train_config& cfg) {
    int expected = cfg.identities_per_camera * cfg.images_per_identity;
    if (batch.cameras_present() != ds.cameras) throw numeric_error("sampler: batch missing a camera");
    for (const auto& [camera, count] : batch.per_camera_counts)
        if (count != expected) throw numeric_error("sampler: unbalanced batch composition");
}

/// Joint-label remap for mcst: every (camera, label) becomes a distinct
/// class of one merged head, and the batch is presented as a single
/// virtual camera.
inline mini_batch remap_to_joint(const mini_batch& batch, const std::vector<int>& offsets) {
    std::vector<sample> remapped = batch.samples;
    for (auto& s : remapped) {
        s.label = offsets[static_cast<std::size_t>(s.camera - 1)] + s.label;
        s.camera = 1;
    }
    return mini_batch::from_samples(std::move(remapped));
}

/// Single-camera view for epcs: camera p's training data presented as a
/// standalone one-camera dataset.
inline ics_dataset camera_view(const ics_dataset& ds, int p) {
    ics_dataset view;
    view.cameras = 1;
    view.label_space_sizes = {ds.label_space(p)};
    view.train.resize(1);
    view.train[0] = ds.camera_train(p);
    for (auto& s : view.train[0]) s.camera = 1;
    return view;
}

struct loop_result {
    std::vector<log_row> rows;
};

/// The shared round/epoch/batch loop. `associate` is invoked with the
/// round index before the round's epochs and returns the multilabel map
/// to train with (or nothing, for modes that never associate).
template <typename AssocFn>
loop_result run_training_loop(model_params& params, const ics_dataset& ds, const train_config& cfg,
                              double effective_lambda, rng& sampler_stream, AssocFn&& associate,
                              bool enforce_balance) {
    balanced_sampler sampler(ds, cfg.identities_per_camera, cfg.images_per_identity);
    const std::size_t total = ds.total_train();
    const int batches_per_epoch =
        static_cast<int>((total + static_cast<std::size_t>(sampler.batch_size()) - 1) /
                         static_cast<std::size_t>(sampler.batch_size()));
    multilabel_map multilabels = singleton_multilabels(ds);
    optim_state opt = cfg.optimizer();
    loop_result result;
    for (int r = 0; r < cfg.rounds; ++r) {
        associate(r, params, multilabels, result.rows);
        int epochs = r + 1 == cfg.rounds ? cfg.final_round_epochs : cfg.epochs_per_round;
        for (int e = 0; e < epochs; ++e) {
            double sum_total = 0.0, sum_mt = 0.0, sum_ml = 0.0;
            for (int t = 0; t < batches_per_epoch; ++t) {
                mini_batch batch = sampler.next(sampler_stream);
                if (enforce_balance) check_batch_balance(batch, ds, cfg);
                batch_result fb = forward_backward(params, batch, multilabels, effective_lambda);
                if (!std::isfinite(fb.loss))
                    throw numeric_error("non-finite loss at round " + std::to_string(r) + " epoch " +
                                        std::to_string(e) + " batch " + std::to_string(t));
                sgd_step(params, fb.grads, opt);
                sum_total += fb.loss;
                sum_mt += fb.loss_mt;
                sum_ml += fb.loss_ml;
            }
            log_row row;
            row.type = log_row::kind::epoch;
            row.round = r;
            row.epoch = e;
            row.loss_total = sum_total / batches_per_epoch;
            row.loss_mt = sum_mt / batches_per_epoch;
            row.loss_ml = sum_ml / batches_per_epoch;
            result.rows.push_back(row);
        }
    }
    return result;
}

} // namespace detail

/// Trains one model per the configured mode. Deterministic given
/// (dataset, config): every random draw comes from substreams of
/// cfg.seed. Association (when the mode does it) always runs on frozen
/// start-of-round parameters, before the round's first epoch.
inline train_result train(const ics_dataset& ds, const train_config& cfg) {
    cfg.validate();
    if (ds.total_train() == 0) throw data_error("train: dataset has no training samples");
    auto t0 = std::chrono::steady_clock::now();
    train_result result;
    result.log.mode = cfg.mode;
    result.log.seed = cfg.seed;
    result.ckpt = build_baseline(ds, cfg);
    rng root(cfg.seed);

    const bool associates = cfg.mode == train_mode::mate || cfg.mode == train_mode::mate_no_ct;
    const double effective_lambda = associates ? cfg.lambda : 0.0;
    const bool have_truth = ds.train_has_global_ids();
    curriculum_schedule schedule = cfg.schedule();

    auto no_association = [](int, const model_params&, multilabel_map&, std::vector<log_row>&) {};

    switch (cfg.mode) {
        case train_mode::mate:
        case train_mode::mate_no_ct:
        case train_mode::pcmt: {
            auto associate = [&](int round, const model_params& params, multilabel_map& multilabels,
                                 std::vector<log_row>& rows) {
                if (!associates) return;
                double tau = cfg.mode == train_mode::mate_no_ct ? cfg.tau_lower : curriculum_threshold(schedule, round);
                association_result assoc = associate_all(params, ds, tau);
                multilabels = std::move(assoc.multilabels);
                log_row row;
                row.type = log_row::kind::association;
                row.round = round;
                row.tau = tau;
                if (have_truth) {
                    row.report = association_metrics(assoc.pairs, ds);
                    row.has_truth = true;
                } else {
                    row.report.predicted_pairs = static_cast<std::int64_t>(assoc.pairs.size());
                }
                rows.push_back(row);
            };
            rng sampler_stream = root.substream(stream::sampler);
            auto loop = detail::run_training_loop(result.ckpt.models[0], ds, cfg, effective_lambda, sampler_stream,
                                                  associate, true);
            result.log.rows = std::move(loop.rows);
            break;
        }
        case train_mode::mcst: {
            std::vector<int> offsets(static_cast<std::size_t>(ds.cameras), 0);
            for (int p = 2; p <= ds.cameras; ++p)
                offsets[static_cast<std::size_t>(p - 1)] =
                    offsets[static_cast<std::size_t>(p - 2)] + ds.label_space(p - 1);
            // Train on the joint single-task relabelling but keep the
            // camera-balanced batch composition for a fair comparison.
            balanced_sampler sampler(ds, cfg.identities_per_camera, cfg.images_per_identity);
            const int batches_per_epoch =
                static_cast<int>((ds.total_train() + static_cast<std::size_t>(sampler.batch_size()) - 1) /
                                 static_cast<std::size_t>(sampler.batch_size()));
            multilabel_map joint_singletons;
            {
                int joint = 0;
                for (int n : ds.label_space_sizes) joint += n;
                for (int j = 1; j <= joint; ++j) {
                    multi_label_set y;
                    y.owner_camera = 1;
                    y.owner_label = j;
                    y.labels = {{1, j}};
                    joint_singletons[{1, j}] = std::move(y);
                }
            }
            optim_state opt = cfg.optimizer();
            rng sampler_stream = root.substream(stream::sampler);
            model_params& params = result.ckpt.models[0];
            for (int r = 0; r < cfg.rounds; ++r) {
                int epochs = r + 1 == cfg.rounds ? cfg.final_round_epochs : cfg.epochs_per_round;
                for (int e = 0; e < epochs; ++e) {
                    double sum_total = 0.0, sum_mt = 0.0;
                    for (int t = 0; t < batches_per_epoch; ++t) {
                        mini_batch batch = sampler.next(sampler_stream);
                        detail::check_batch_balance(batch, ds, cfg);
                        mini_batch joint = detail::remap_to_joint(batch, offsets);
                        batch_result fb = forward_backward(params, joint, joint_singletons, 0.0);
                        if (!std::isfinite(fb.loss))
                            throw numeric_error("non-finite loss at round " + std::to_string(r) + " epoch " +
                                                std::to_string(e) + " batch " + std::to_string(t));
                        sgd_step(params, fb.grads, opt);
                        sum_total += fb.loss;
                        sum_mt += fb.loss_mt;
                    }
                    log_row row;
                    row.type = log_row::kind::epoch;
                    row.round = r;
                    row.epoch = e;
                    row.loss_total = sum_total / batches_per_epoch;
                    row.loss_mt = sum_mt / batches_per_epoch;
                    row.loss_ml = 0.0;
                    result.log.rows.push_back(row);
                }
            }
            break;
        }
        case train_mode::epcs: {
            // One independent run per camera; epoch rows carry the mean of
            // the per-camera epoch losses so the log keeps one row per epoch.
            std::vector<std::vector<log_row>> per_camera_rows;
            for (int p = 1; p <= ds.cameras; ++p) {
                ics_dataset view = detail::camera_view(ds, p);
                rng sampler_stream = root.substream(stream::sampler, static_cast<std::uint64_t>(p));
                auto loop = detail::run_training_loop(result.ckpt.models[static_cast<std::size_t>(p - 1)], view, cfg,
                                                      0.0, sampler_stream, no_association, false);
                per_camera_rows.push_back(std::move(loop.rows));
            }
            for (std::size_t i = 0; i < per_camera_rows.front().size(); ++i) {
                log_row row = per_camera_rows.front()[i];
                for (std::size_t p = 1; p < per_camera_rows.size(); ++p) {
                    row.loss_total += per_camera_rows[p][i].loss_total;
                    row.loss_mt += per_camera_rows[p][i].loss_mt;
                }
                row.loss_total /= static_cast<double>(per_camera_rows.size());
                row.loss_mt /= static_cast<double>(per_camera_rows.size());
                result.log.rows.push_back(row);
            }
            break;
        }
    }

    result.log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return result;
}

// ---------------------------------------------------------------------------
// Train log CSV. Fixed columns; association rows leave the loss columns
// empty and vice versa. Truth-dependent fields stay empty when the
// dataset carries no hidden global identities. Doubles are written at
// round-trip precision so identical runs produce byte-identical files.
// ---------------------------------------------------------------------------

inline constexpr const char* train_log_csv_header =
    "record,round,epoch,tau,loss_total,loss_mt,loss_ml,"
    "predicted_pairs,correct_pairs,ground_truth_pairs,precision,recall";

namespace detail {

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace detail

inline void write_train_log_csv(const train_log& log, std::ostream& os) {
    os << train_log_csv_header << '\n';
    for (const auto& row : log.rows) {
        if (row.type == log_row::kind::association) {
            os << "assoc," << row.round << ",," << detail::format_double(row.tau) << ",,,,"
               << row.report.predicted_pairs << ',';
            if (row.has_truth) {
                os << row.report.correct_pairs << ',' << row.report.ground_truth_pairs << ','
                   << detail::format_double(row.report.precision) << ',' << detail::format_double(row.report.recall);
            } else {
                os << ",,,";
            }
            os << '\n';
        } else {
            os << "epoch," << row.round << ',' << row.epoch << ",," << detail::format_double(row.loss_total) << ','
               << detail::format_double(row.loss_mt) << ',' << detail::format_double(row.loss_ml) << ",,,,,\n";
        }
    }
}

inline void write_train_log_csv(const train_log& log, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw data_error("cannot open for writing: " + path);
    write_train_log_csv(log, os);
    if (!os) throw data_error("write failure: " + path);
}

/// Re-reads a train-log CSV (as written above) into rows; used by the
/// association-statistics command.
inline std::vector<log_row> parse_train_log_csv(std::istream& is) {
    std::vector<log_row> rows;
    std::string line;
    if (!std::getline(is, line)) throw data_error("train log: empty file");
    if (line != train_log_csv_header) throw data_error("train log: unexpected header line");
    std::size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        fields.resize(12);
        log_row row;
        auto to_int = [&](const std::string& s) { return std::stoll(s); };
        auto to_double = [&](const std::string& s) { return std::stod(s); };
        try {
            row.round = static_cast<int>(to_int(fields[1]));
            if (fields[0] == "assoc") {
                row.type = log_row::kind::association;
                row.tau = to_double(fields[3]);
                row.report.predicted_pairs = to_int(fields[7]);
                if (!fields[8].empty()) {
                    row.has_truth = true;
                    row.report.correct_pairs = to_int(fields[8]);
                    row.report.ground_truth_pairs = to_int(fields[9]);
                    row.report.precision = to_double(fields[10]);
                    row.report.recall = to_double(fields[11]);
                }
            } else if (fields[0] == "epoch") {
                row.type = log_row::kind::epoch;
                row.epoch = static_cast<int>(to_int(fields[2]));
                row.loss_total = to_double(fields[4]);
                row.loss_mt = to_double(fields[5]);
                row.loss_ml = to_double(fields[6]);
            } else {
                throw data_error("unknown record type '" + fields[0] + "'");
            }
        } catch (const std::exception& e) {
            throw data_error("train log line " + std::to_string(line_no) + ": " + e.what());
        }
        rows.push_back(row);
    }
    return rows;
}

/// Per-round association statistics CSV (threshold, pair counts, quality).
inline void write_association_stats_csv(const std::vector<log_row>& rows, std::ostream& os) {
    os << "round,tau,predicted_pairs,correct_pairs,ground_truth_pairs,precision,recall\n";
    for (const auto& row : rows) {
        if (row.type != log_row::kind::association) continue;
        os << row.round << ',' << detail::format_double(row.tau) << ',' << row.report.predicted_pairs << ',';
        if (row.has_truth) {
            os << row.report.correct_pairs << ',' << row.report.ground_truth_pairs << ','
               << detail::format_double(row.report.precision) << ',' << detail::format_double(row.report.recall);
        } else {
            os << ",,,";
        }
        os << '\n';
    }
}

} // namespace mate
